#![allow(dead_code)]

use std::path::PathBuf;

use interdictor::kinematics::RobotModel;
use interdictor::simulator::Scenario;

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn model() -> RobotModel {
    RobotModel::load(repo_root().join("models/dreamer_upper_body.toml")).unwrap()
}

pub fn scenario(name: &str) -> Scenario {
    Scenario::load(repo_root().join("scenarios").join(format!("{name}.toml"))).unwrap()
}

/// Minimal scenario text: `body` holds the top-level keys (including
/// `duration`) and object tables; a small robot section is appended.
pub fn scenario_text(body: &str) -> String {
    format!(
        r#"
name = "t"
seed = 1
{body}
[robot]
model = "{}"
roadmap_budget = 50
"#,
        repo_root().join("models/dreamer_upper_body.toml").display()
    )
}
