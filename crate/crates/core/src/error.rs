use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("certain collision; conditional belief undefined")]
    CertainCollision,
    #[error("no imminent pair")]
    NoImminentPair,
    #[error("joint {joint} outside limits: {value} not in [{lo}, {hi}]")]
    JointLimit { joint: usize, value: f64, lo: f64, hi: f64 },
    #[error("invalid robot model: {0}")]
    InvalidModel(String),
    #[error("projection infeasible here")]
    ProjectionInfeasible,
    #[error("goal unreachable")]
    GoalUnreachable,
    #[error("no roadmap path")]
    NoRoadmapPath,
    #[error("roadmap file: {0}")]
    RoadmapFormat(String),
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("at step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
