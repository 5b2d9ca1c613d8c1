//! Revolute-tree robot model with capsule links.
//!
//! Configurations are expressed in generalized coordinates: joints coupled to
//! another joint by a ratio do not get their own coordinate.

use std::hash::Hasher;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Isometry3, Matrix3, Matrix6, Translation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Capsule, Point3};

/// Relative numerical-rank tolerance.
pub const RANK_TOL: f64 = 1e-8;
pub const MAX_CORRECTION_ITERS: usize = 20;
const CORRECTION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    #[serde(default)]
    pub parent: Option<String>,
    /// Offset from the parent joint frame.
    #[serde(default)]
    pub origin: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
    pub axis: [f64; 3],
    pub limits: [f64; 2],
    #[serde(default)]
    pub coupled_to: Option<String>,
    #[serde(default = "one")]
    pub ratio: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub name: String,
    pub joint: String,
    pub a: [f64; 3],
    pub b: [f64; 3],
    pub radius: f64,
    pub mass: f64,
    pub com: [f64; 3],
    /// `[ixx, iyy, izz, ixy, ixz, iyz]` about the COM in the joint frame.
    pub inertia: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndEffectorSpec {
    pub link: String,
    pub point: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workspace {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Workspace {
    /// Whether the whole capsule lies inside the box.
    pub fn contains(&self, c: &Capsule) -> bool {
        (0..3).all(|k| {
            let lo = c.seg.a[k].min(c.seg.b[k]) - c.radius;
            let hi = c.seg.a[k].max(c.seg.b[k]) + c.radius;
            lo >= self.min[k] && hi <= self.max[k]
        })
    }
}

/// On-disk robot description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub workspace: Workspace,
    pub end_effector: EndEffectorSpec,
    /// Default posture in generalized coordinates.
    pub home: Vec<f64>,
    pub joints: Vec<JointSpec>,
    pub links: Vec<LinkSpec>,
}

#[derive(Debug, Clone)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub origin: Isometry3<f64>,
    pub axis: Vector3<f64>,
    pub limits: [f64; 2],
    pub coord: usize,
    pub ratio: f64,
    /// Root-to-self chain of joint indices.
    pub chain: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Link {
    pub name: String,
    pub joint: usize,
    pub a: Point3,
    pub b: Point3,
    pub radius: f64,
    pub mass: f64,
    pub com: Point3,
    pub inertia: Matrix3<f64>,
    pub parent_link: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RobotModel {
    pub spec: ModelSpec,
    pub joints: Vec<Joint>,
    pub links: Vec<Link>,
    pub ee_link: usize,
    pub ee_point: Point3,
    pub home: DVector<f64>,
    n_coords: usize,
    adjacent: Vec<Vec<bool>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub ee_goal: Point3,
    pub epsilon: f64,
}

impl TaskSpec {
    pub fn new(ee_goal: Point3, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() || !ee_goal.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("task needs a finite goal and epsilon > 0".into()));
        }
        Ok(Self { ee_goal, epsilon })
    }
}

#[derive(Debug, Clone)]
pub struct FkResult {
    /// World pose of each joint frame after its rotation.
    pub frames: Vec<Isometry3<f64>>,
    pub capsules: Vec<Capsule>,
    pub ee: Point3,
}

fn v3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::new(a[0], a[1], a[2])
}

impl RobotModel {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ModelSpec = toml::from_str(text)?;
        Self::from_spec(spec)
    }

    pub fn from_spec(spec: ModelSpec) -> Result<Self> {
        let bad = |m: String| Error::InvalidModel(m);
        let find_joint = |name: &str, before: usize| {
            spec.joints[..before]
                .iter()
                .position(|j| j.name == name)
                .ok_or_else(|| bad(format!("joint '{name}' must be declared before use")))
        };
        if spec.joints.is_empty() || spec.links.is_empty() {
            return Err(bad("model needs joints and links".into()));
        }

        let mut joints: Vec<Joint> = Vec::with_capacity(spec.joints.len());
        let mut n_coords = 0;
        for (i, js) in spec.joints.iter().enumerate() {
            if spec.joints[..i].iter().any(|o| o.name == js.name) {
                return Err(bad(format!("duplicate joint '{}'", js.name)));
            }
            let parent = js.parent.as_deref().map(|p| find_joint(p, i)).transpose()?;
            let axis = v3(js.axis);
            if !(axis.norm() > 0.0) || !axis.iter().all(|x| x.is_finite()) {
                return Err(bad(format!("joint '{}' has a degenerate axis", js.name)));
            }
            if !(js.limits[0] < js.limits[1]) {
                return Err(bad(format!("joint '{}' needs lo < hi", js.name)));
            }
            let (coord, ratio) = match js.coupled_to.as_deref() {
                Some(master) => {
                    let m = find_joint(master, i)?;
                    if spec.joints[m].coupled_to.is_some() {
                        return Err(bad(format!("joint '{}' couples to a coupled joint", js.name)));
                    }
                    if !js.ratio.is_finite() || js.ratio == 0.0 {
                        return Err(bad(format!("joint '{}' has an invalid ratio", js.name)));
                    }
                    (joints[m].coord, js.ratio)
                }
                None => {
                    n_coords += 1;
                    (n_coords - 1, 1.0)
                }
            };
            let mut chain = parent.map(|p| joints[p].chain.clone()).unwrap_or_default();
            chain.push(i);
            joints.push(Joint {
                name: js.name.clone(),
                parent,
                origin: Isometry3::from_parts(
                    Translation3::from(v3(js.origin)),
                    UnitQuaternion::from_euler_angles(js.rpy[0], js.rpy[1], js.rpy[2]),
                ),
                axis: axis.normalize(),
                limits: js.limits,
                coord,
                ratio,
                chain,
            });
        }

        let n_joints = joints.len();
        let mut links: Vec<Link> = Vec::with_capacity(spec.links.len());
        for ls in &spec.links {
            let joint = find_joint(&ls.joint, n_joints)?;
            if !(ls.radius > 0.0) || !(ls.mass >= 0.0) {
                return Err(bad(format!("link '{}' needs radius > 0 and mass >= 0", ls.name)));
            }
            if links.iter().any(|l| l.name == ls.name) {
                return Err(bad(format!("duplicate link '{}'", ls.name)));
            }
            let i = ls.inertia;
            let inertia = Matrix3::new(i[0], i[3], i[4], i[3], i[1], i[5], i[4], i[5], i[2]);
            links.push(Link {
                name: ls.name.clone(),
                joint,
                a: v3(ls.a),
                b: v3(ls.b),
                radius: ls.radius,
                mass: ls.mass,
                com: v3(ls.com),
                inertia,
                parent_link: None,
            });
        }
        // Nearest link carried by a strict ancestor joint, or a sibling on the same joint.
        for l in 0..links.len() {
            let jl = links[l].joint;
            let chain = &joints[jl].chain;
            let mut parent = links[..l].iter().position(|o| o.joint == jl);
            if parent.is_none() {
                for &anc in chain.iter().rev().skip(1) {
                    if let Some(p) = links.iter().position(|o| o.joint == anc) {
                        parent = Some(p);
                        break;
                    }
                }
            }
            links[l].parent_link = parent;
        }
        let nl = links.len();
        let mut adjacent = vec![vec![false; nl]; nl];
        for l in 0..nl {
            adjacent[l][l] = true;
            if let Some(p) = links[l].parent_link {
                adjacent[l][p] = true;
                adjacent[p][l] = true;
            }
        }

        let ee_link = links
            .iter()
            .position(|l| l.name == spec.end_effector.link)
            .ok_or_else(|| bad(format!("unknown end-effector link '{}'", spec.end_effector.link)))?;
        if spec.home.len() != n_coords {
            return Err(bad(format!("home has {} entries, model has {n_coords} coordinates", spec.home.len())));
        }
        let ws = spec.workspace;
        if !(0..3).all(|k| ws.min[k] < ws.max[k]) {
            return Err(bad("workspace needs min < max".into()));
        }
        let model = Self {
            ee_point: v3(spec.end_effector.point),
            home: DVector::from_vec(spec.home.clone()),
            spec,
            joints,
            links,
            ee_link,
            n_coords,
            adjacent,
        };
        model.check_limits(&model.home)?;
        Ok(model)
    }

    /// Number of generalized coordinates `N_j`.
    pub fn dof(&self) -> usize {
        self.n_coords
    }

    /// Number of links `N_l`.
    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.adjacent[a][b]
    }

    /// Largest physical joint displacement of a coordinate change.
    pub fn max_joint_delta(&self, dq: &DVector<f64>) -> f64 {
        self.joints.iter().map(|j| (j.ratio * dq[j.coord]).abs()).fold(0.0, f64::max)
    }

    /// Physical joint angles.
    pub fn joint_angles(&self, q: &DVector<f64>) -> Vec<f64> {
        self.joints.iter().map(|j| j.ratio * q[j.coord]).collect()
    }

    /// Coordinate bounds implied by every joint mapped to it.
    pub fn coord_limits(&self) -> Vec<[f64; 2]> {
        let mut out = vec![[f64::NEG_INFINITY, f64::INFINITY]; self.n_coords];
        for j in &self.joints {
            let (a, b) = (j.limits[0] / j.ratio, j.limits[1] / j.ratio);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let c = &mut out[j.coord];
            c[0] = c[0].max(lo);
            c[1] = c[1].min(hi);
        }
        out
    }

    pub fn check_limits(&self, q: &DVector<f64>) -> Result<()> {
        if q.len() != self.n_coords {
            return Err(Error::InvalidInput(format!(
                "configuration has {} entries, expected {}",
                q.len(),
                self.n_coords
            )));
        }
        for (idx, (j, v)) in self.joints.iter().zip(self.joint_angles(q)).enumerate() {
            if !v.is_finite() || v < j.limits[0] || v > j.limits[1] {
                return Err(Error::JointLimit {
                    joint: idx,
                    value: v,
                    lo: j.limits[0],
                    hi: j.limits[1],
                });
            }
        }
        Ok(())
    }

    /// FNV-1a over the canonical model description.
    pub fn hash(&self) -> u64 {
        let canon = serde_json::to_string(&self.spec).expect("model spec serializes");
        let mut h = fnv::FnvHasher::default();
        h.write(canon.as_bytes());
        h.finish()
    }

    pub fn home_task(&self, epsilon: f64) -> Result<TaskSpec> {
        TaskSpec::new(forward_kinematics(self, &self.home)?.ee, epsilon)
    }
}

/// Frames without limit checks; used inside iterative solvers.
pub fn frames_unchecked(model: &RobotModel, q: &DVector<f64>) -> Vec<Isometry3<f64>> {
    let angles = model.joint_angles(q);
    let mut frames: Vec<Isometry3<f64>> = Vec::with_capacity(model.joints.len());
    for (j, theta) in model.joints.iter().zip(angles) {
        let base = j.parent.map(|p| frames[p]).unwrap_or_else(Isometry3::identity);
        let rot = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_unchecked(j.axis), theta);
        frames.push(base * j.origin * Isometry3::from_parts(Translation3::identity(), rot));
    }
    frames
}

fn capsules_from(model: &RobotModel, frames: &[Isometry3<f64>]) -> Vec<Capsule> {
    model
        .links
        .iter()
        .map(|l| {
            let f = &frames[l.joint];
            Capsule::new(
                (f * nalgebra::Point3::from(l.a)).coords,
                (f * nalgebra::Point3::from(l.b)).coords,
                l.radius,
            )
        })
        .collect()
}

fn ee_unchecked(model: &RobotModel, frames: &[Isometry3<f64>]) -> Point3 {
    (frames[model.links[model.ee_link].joint] * nalgebra::Point3::from(model.ee_point)).coords
}

pub fn fk_unchecked(model: &RobotModel, q: &DVector<f64>) -> FkResult {
    let frames = frames_unchecked(model, q);
    let capsules = capsules_from(model, &frames);
    let ee = ee_unchecked(model, &frames);
    FkResult { frames, capsules, ee }
}

pub fn forward_kinematics(model: &RobotModel, q: &DVector<f64>) -> Result<FkResult> {
    model.check_limits(q)?;
    Ok(fk_unchecked(model, q))
}

fn jacobian_from(model: &RobotModel, frames: &[Isometry3<f64>], link: usize, world_point: &Point3) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(3, model.dof());
    for &ji in &model.joints[model.links[link].joint].chain {
        let j = &model.joints[ji];
        let f = &frames[ji];
        let axis = f.rotation * j.axis;
        let col = axis.cross(&(world_point - f.translation.vector)) * j.ratio;
        let mut c = jac.column_mut(j.coord);
        c += col;
    }
    jac
}

/// Linear-velocity Jacobian (3 x N_j) of a point fixed in `link`, given in link-local coordinates.
pub fn jacobian(model: &RobotModel, q: &DVector<f64>, link: usize, local_point: &Point3) -> Result<DMatrix<f64>> {
    model.check_limits(q)?;
    if link >= model.n_links() {
        return Err(Error::InvalidInput(format!("no link {link}")));
    }
    let frames = frames_unchecked(model, q);
    let p = (frames[model.links[link].joint] * nalgebra::Point3::from(*local_point)).coords;
    Ok(jacobian_from(model, &frames, link, &p))
}

fn ee_jacobian_unchecked(model: &RobotModel, q: &DVector<f64>) -> DMatrix<f64> {
    let frames = frames_unchecked(model, q);
    let p = ee_unchecked(model, &frames);
    jacobian_from(model, &frames, model.ee_link, &p)
}

pub fn ee_jacobian(model: &RobotModel, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    model.check_limits(q)?;
    Ok(ee_jacobian_unchecked(model, q))
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Spatial inertia about the world origin, acting on `(omega, v_origin)`.
fn spatial_inertia(mass: f64, com: &Point3, inertia_com: &Matrix3<f64>) -> Matrix6<f64> {
    let c = skew(com);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&(inertia_com + c.transpose() * c * mass));
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(c * mass));
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(c.transpose() * mass));
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Matrix3::identity() * mass));
    out
}

/// Composite-rigid-body joint-space mass matrix in generalized coordinates.
pub fn mass_matrix(model: &RobotModel, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    model.check_limits(q)?;
    Ok(mass_matrix_unchecked(model, q))
}

fn mass_matrix_unchecked(model: &RobotModel, q: &DVector<f64>) -> DMatrix<f64> {
    let frames = frames_unchecked(model, q);
    let nj = model.joints.len();

    let mut composite = vec![Matrix6::zeros(); nj];
    for l in &model.links {
        let f = &frames[l.joint];
        let r = f.rotation.to_rotation_matrix();
        let com = (f * nalgebra::Point3::from(l.com)).coords;
        let inertia = r.matrix() * l.inertia * r.matrix().transpose();
        let s = spatial_inertia(l.mass, &com, &inertia);
        for &anc in &model.joints[l.joint].chain {
            composite[anc] += s;
        }
    }
    let motion: Vec<Vector6<f64>> = model
        .joints
        .iter()
        .zip(&frames)
        .map(|(j, f)| {
            let a = f.rotation * j.axis;
            let o = f.translation.vector;
            let lin = o.cross(&a);
            Vector6::new(a.x, a.y, a.z, lin.x, lin.y, lin.z)
        })
        .collect();

    let mut full = DMatrix::zeros(nj, nj);
    for i in 0..nj {
        let f = composite[i] * motion[i];
        for &j in &model.joints[i].chain {
            let v = motion[j].dot(&f);
            full[(i, j)] = v;
            full[(j, i)] = v;
        }
    }
    let mut g = DMatrix::zeros(nj, model.dof());
    for (i, j) in model.joints.iter().enumerate() {
        g[(i, j.coord)] = j.ratio;
    }
    let a = g.transpose() * full * &g;
    (&a + a.transpose()) * 0.5
}

fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = RANK_TOL * smax.max(f64::MIN_POSITIVE);
    svd.pseudo_inverse(tol).expect("svd with vectors")
}

/// Numerical rank with the relative [`RANK_TOL`] convention.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if smax <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * smax).count()
}

/// Dynamically consistent null-space projector `I - A^-1 J^T (J A^-1 J^T)^+ J`.
pub fn dynamic_null_projector(a: &DMatrix<f64>, j1: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let a_inv = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidModel("mass matrix is not positive definite".into()))?
        .inverse();
    let lambda_inv = j1 * &a_inv * j1.transpose();
    let n = a.nrows();
    Ok(DMatrix::identity(n, n) - &a_inv * j1.transpose() * pinv(&lambda_inv) * j1)
}

/// Orthonormal motion basis (N_j x r) of the end-effector-constrained manifold at `q`.
pub fn constrained_null_basis(model: &RobotModel, q: &DVector<f64>, _task: &TaskSpec) -> Result<DMatrix<f64>> {
    model.check_limits(q)?;
    null_basis_unchecked(model, q)
}

fn null_basis_unchecked(model: &RobotModel, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    // The range of N1 A^-1 N1^T is exactly null(J1), so the basis is taken
    // from J1 alone; this stays accurate when A is badly conditioned.
    let j1 = ee_jacobian_unchecked(model, q);
    let n = model.dof();
    let r = numerical_rank(&j1);
    let eig = (j1.transpose() * &j1).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]).then(x.cmp(&y)));
    let j_pinv = pinv(&j1);
    let mut basis = DMatrix::zeros(n, n - r);
    for (c, &k) in order.iter().take(n - r).enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        v -= &j_pinv * (&j1 * &v);
        for p in 0..c {
            let u = basis.column(p);
            v -= u * u.dot(&v);
        }
        let norm = v.norm();
        if !(norm > 0.0) {
            return Err(Error::ProjectionInfeasible);
        }
        v /= norm;
        let lead = v.iter().cloned().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            v = -v;
        }
        basis.set_column(c, &v);
    }
    Ok(basis)
}

/// Component of `dq` in the constrained motion basis.
pub fn null_project(basis: &DMatrix<f64>, dq: &DVector<f64>) -> DVector<f64> {
    basis * (basis.transpose() * dq)
}

/// Projects `dq` onto the constrained manifold through `q`.
///
/// The linear projection is followed by chord-Newton steps using the
/// pseudo-inverse of the task Jacobian at `q`, pulling the end-effector back
/// to `FK_ee(q)`. Corrections stay orthogonal to the basis so the map is idempotent.
pub fn project_displacement(model: &RobotModel, q: &DVector<f64>, dq: &DVector<f64>, task: &TaskSpec) -> Result<DVector<f64>> {
    if dq.len() != model.dof() || !dq.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidInput("displacement must be finite with N_j entries".into()));
    }
    if q.len() != model.dof() {
        return Err(Error::InvalidInput("configuration has the wrong length".into()));
    }
    let basis = null_basis_unchecked(model, q)?;
    let j_pinv = pinv(&ee_jacobian_unchecked(model, q));
    let x0 = fk_unchecked(model, q).ee;
    let mut d = null_project(&basis, dq);
    let mut err = f64::INFINITY;
    for _ in 0..MAX_CORRECTION_ITERS {
        let drift = fk_unchecked(model, &(q + &d)).ee - x0;
        err = drift.norm();
        if !err.is_finite() {
            return Err(Error::ProjectionInfeasible);
        }
        if err <= CORRECTION_TOL {
            break;
        }
        d -= &j_pinv * DVector::from_column_slice(drift.as_slice());
    }
    if err > task.epsilon / 10.0 {
        let drift = (fk_unchecked(model, &(q + &d)).ee - x0).norm();
        if drift > task.epsilon / 10.0 {
            return Err(Error::ProjectionInfeasible);
        }
    }
    Ok(d)
}

/// Joint limits, self-collision between non-adjacent links, workspace box,
/// and optionally the end-effector task.
pub fn is_feasible(model: &RobotModel, q: &DVector<f64>, task_constrained: bool, task: &TaskSpec) -> bool {
    if model.check_limits(q).is_err() {
        return false;
    }
    let fk = fk_unchecked(model, q);
    if task_constrained && (fk.ee - task.ee_goal).norm() > task.epsilon {
        return false;
    }
    if !fk.capsules.iter().all(|c| model.spec.workspace.contains(c)) {
        return false;
    }
    let n = fk.capsules.len();
    for a in 0..n {
        for b in a + 1..n {
            if !model.adjacent(a, b) && fk.capsules[a].clearance(&fk.capsules[b]) <= 0.0 {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const PLANAR: &str = r#"
name = "planar"
home = [0.0, 0.0, 0.0]
[workspace]
min = [-5.0, -5.0, -5.0]
max = [5.0, 5.0, 5.0]
[end_effector]
link = "l3"
point = [1.0, 0.0, 0.0]
[[joints]]
name = "j1"
axis = [0.0, 0.0, 1.0]
limits = [-3.0, 3.0]
[[joints]]
name = "j2"
parent = "j1"
origin = [1.0, 0.0, 0.0]
axis = [0.0, 0.0, 1.0]
limits = [-3.0, 3.0]
[[joints]]
name = "j3"
parent = "j2"
origin = [1.0, 0.0, 0.0]
axis = [0.0, 0.0, 1.0]
limits = [-3.0, 3.0]
[[links]]
name = "l1"
joint = "j1"
a = [0.0, 0.0, 0.0]
b = [1.0, 0.0, 0.0]
radius = 0.05
mass = 1.0
com = [0.5, 0.0, 0.0]
inertia = [0.01, 0.08, 0.08, 0.0, 0.0, 0.0]
[[links]]
name = "l2"
joint = "j2"
a = [0.0, 0.0, 0.0]
b = [1.0, 0.0, 0.0]
radius = 0.05
mass = 1.0
com = [0.5, 0.0, 0.0]
inertia = [0.01, 0.08, 0.08, 0.0, 0.0, 0.0]
[[links]]
name = "l3"
joint = "j3"
a = [0.0, 0.0, 0.0]
b = [1.0, 0.0, 0.0]
radius = 0.05
mass = 1.0
com = [0.5, 0.0, 0.0]
inertia = [0.01, 0.08, 0.08, 0.0, 0.0, 0.0]
"#;

    fn dreamer() -> RobotModel {
        RobotModel::load(concat!(env!("CARGO_MANIFEST_DIR"), "/../../models/dreamer_upper_body.toml")).unwrap()
    }

    fn random_q(model: &RobotModel, rng: &mut ChaCha8Rng, shrink: f64) -> DVector<f64> {
        let lim = model.coord_limits();
        DVector::from_iterator(
            model.dof(),
            lim.iter().map(|l| {
                let mid = 0.5 * (l[0] + l[1]);
                let half = 0.5 * (l[1] - l[0]) * shrink;
                rng.random_range(mid - half..mid + half)
            }),
        )
    }

    fn pendulum(inertia_zz: f64) -> RobotModel {
        RobotModel::from_toml(&format!(
            r#"
name = "pendulum"
home = [0.0]
[workspace]
min = [-5.0, -5.0, -5.0]
max = [5.0, 5.0, 5.0]
[end_effector]
link = "bob"
point = [2.0, 0.0, 0.0]
[[joints]]
name = "j"
axis = [0.0, 0.0, 1.0]
limits = [-3.0, 3.0]
[[links]]
name = "bob"
joint = "j"
a = [0.0, 0.0, 0.0]
b = [2.0, 0.0, 0.0]
radius = 0.05
mass = 3.0
com = [2.0, 0.0, 0.0]
inertia = [0.0, 0.0, {inertia_zz}, 0.0, 0.0, 0.0]
"#
        ))
        .unwrap()
    }

    #[test]
    fn quarter_turn_tip() {
        let m = pendulum(0.0);
        let fk = forward_kinematics(&m, &DVector::from_element(1, std::f64::consts::FRAC_PI_2)).unwrap();
        assert!((fk.ee - Vector3::new(0.0, 2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn limits_are_reported() {
        let m = pendulum(0.0);
        match forward_kinematics(&m, &DVector::from_element(1, 3.5)) {
            Err(Error::JointLimit { joint, .. }) => assert_eq!(joint, 0),
            other => panic!("{other:?}"),
        }
    }

    // Independent chain of homogeneous 4x4 matrices built from Rodrigues' formula.
    fn matrix_chain_tip(model: &RobotModel, q: &DVector<f64>) -> Vector3<f64> {
        let angles = model.joint_angles(q);
        let mut mats: Vec<Matrix4<f64>> = Vec::new();
        for (j, th) in model.joints.iter().zip(angles) {
            let js = &model.spec.joints[mats.len()];
            let origin = {
                let (r, p, y) = (js.rpy[0], js.rpy[1], js.rpy[2]);
                let rx = Matrix3::new(1., 0., 0., 0., r.cos(), -r.sin(), 0., r.sin(), r.cos());
                let ry = Matrix3::new(p.cos(), 0., p.sin(), 0., 1., 0., -p.sin(), 0., p.cos());
                let rz = Matrix3::new(y.cos(), -y.sin(), 0., y.sin(), y.cos(), 0., 0., 0., 1.);
                let mut t = Matrix4::identity();
                t.fixed_view_mut::<3, 3>(0, 0).copy_from(&(rz * ry * rx));
                t.fixed_view_mut::<3, 1>(0, 3).copy_from(&v3(js.origin));
                t
            };
            let k = skew(&j.axis);
            let rot = Matrix3::identity() + k * th.sin() + k * k * (1.0 - th.cos());
            let mut r4 = Matrix4::identity();
            r4.fixed_view_mut::<3, 3>(0, 0).copy_from(&rot);
            let base = j.parent.map(|p| mats[p]).unwrap_or_else(Matrix4::identity);
            mats.push(base * origin * r4);
        }
        let t = mats[model.links[model.ee_link].joint];
        let p = t * nalgebra::Vector4::new(model.ee_point.x, model.ee_point.y, model.ee_point.z, 1.0);
        Vector3::new(p.x, p.y, p.z)
    }

    #[test]
    fn fk_matches_matrix_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for m in [dreamer(), RobotModel::from_toml(PLANAR).unwrap()] {
            for _ in 0..50 {
                let q = random_q(&m, &mut rng, 1.0);
                let fk = forward_kinematics(&m, &q).unwrap();
                assert!((fk.ee - matrix_chain_tip(&m, &q)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn planar_jacobian_at_zero() {
        let m = RobotModel::from_toml(PLANAR).unwrap();
        let j = ee_jacobian(&m, &DVector::zeros(3)).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[0., 0., 0., 3., 2., 1., 0., 0., 0.]);
        assert!((j - expected).norm() < 1e-12);
        // Point on the second link ignores the third joint.
        let j2 = jacobian(&m, &DVector::zeros(3), 1, &Vector3::new(1.0, 0.0, 0.0)).unwrap();
        assert!((j2 - DMatrix::from_row_slice(3, 3, &[0., 0., 0., 2., 1., 0., 0., 0., 0.])).norm() < 1e-12);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let m = dreamer();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let q = random_q(&m, &mut rng, 0.9);
            let j = ee_jacobian(&m, &q).unwrap();
            let dq = DVector::from_iterator(m.dof(), (0..m.dof()).map(|_| rng.random_range(-1e-6..1e-6)));
            let diff = fk_unchecked(&m, &(&q + &dq)).ee - fk_unchecked(&m, &(&q - &dq)).ee;
            let lin = &j * &dq * 2.0;
            assert!((DVector::from_column_slice(diff.as_slice()) - lin).norm() <= 1e-6);
        }
    }

    #[test]
    fn pendulum_mass_matrix() {
        let q = DVector::from_element(1, 0.4);
        let a = mass_matrix(&pendulum(0.0), &q).unwrap();
        assert!((a[(0, 0)] - 12.0).abs() < 1e-12);
        let a = mass_matrix(&pendulum(0.5), &q).unwrap();
        assert!((a[(0, 0)] - 12.5).abs() < 1e-12);
    }

    fn kinetic_energy_oracle(m: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>) -> f64 {
        let frames = frames_unchecked(m, q);
        let mut ke = 0.0;
        for (li, l) in m.links.iter().enumerate() {
            let f = &frames[l.joint];
            let com = (f * nalgebra::Point3::from(l.com)).coords;
            let jv = jacobian_from(m, &frames, li, &com);
            let mut jw = DMatrix::zeros(3, m.dof());
            for &ji in &m.joints[l.joint].chain {
                let j = &m.joints[ji];
                let mut c = jw.column_mut(j.coord);
                c += frames[ji].rotation * j.axis * j.ratio;
            }
            let v = &jv * qd;
            let w = &jw * qd;
            let r = f.rotation.to_rotation_matrix();
            let iw = r.matrix() * l.inertia * r.matrix().transpose();
            let w3 = Vector3::new(w[0], w[1], w[2]);
            ke += 0.5 * l.mass * v.norm_squared() + 0.5 * w3.dot(&(iw * w3));
        }
        ke
    }

    #[test]
    fn mass_matrix_energy_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for m in [dreamer(), RobotModel::from_toml(PLANAR).unwrap()] {
            for _ in 0..100 {
                let q = random_q(&m, &mut rng, 1.0);
                let qd = DVector::from_iterator(m.dof(), (0..m.dof()).map(|_| rng.random_range(-2.0..2.0)));
                let a = mass_matrix(&m, &q).unwrap();
                assert!((&a - a.transpose()).norm() <= 1e-12);
                assert!(a.clone().symmetric_eigen().eigenvalues.min() > 0.0);
                let ke = 0.5 * qd.dot(&(&a * &qd));
                assert!((ke - kinetic_energy_oracle(&m, &q, &qd)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn basis_dimensions() {
        let planar = RobotModel::from_toml(PLANAR).unwrap();
        let q = DVector::from_vec(vec![0.3, 0.7, -0.4]);
        let task = planar.home_task(0.01).unwrap();
        assert_eq!(constrained_null_basis(&planar, &q, &task).unwrap().ncols(), 1);
        // Stretched planar arm: rank(J) = 1.
        let b = constrained_null_basis(&planar, &DVector::zeros(3), &task).unwrap();
        assert_eq!(b.ncols(), 2);

        let m = dreamer();
        let task = m.home_task(0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let q = random_q(&m, &mut rng, 0.9);
            let j1 = ee_jacobian(&m, &q).unwrap();
            let basis = constrained_null_basis(&m, &q, &task).unwrap();
            assert_eq!(basis.ncols() + numerical_rank(&j1), m.dof());
            assert!((&j1 * &basis).norm() <= 1e-8);
            let gram = basis.transpose() * &basis;
            assert!((gram - DMatrix::identity(basis.ncols(), basis.ncols())).norm() <= 1e-10);
            let n1 = dynamic_null_projector(&mass_matrix(&m, &q).unwrap(), &j1).unwrap();
            assert!((&n1 * &n1 - &n1).norm() <= 1e-8);
        }
    }

    #[test]
    fn projection_properties() {
        let m = dreamer();
        let task = m.home_task(0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..30 {
            let q = random_q(&m, &mut rng, 0.8);
            let mut dq = DVector::from_iterator(m.dof(), (0..m.dof()).map(|_| rng.random_range(-1.0..1.0)));
            dq *= 0.05 / dq.norm();
            let p = project_displacement(&m, &q, &dq, &task).unwrap();
            let moved = (fk_unchecked(&m, &(&q + &p)).ee - fk_unchecked(&m, &q).ee).norm();
            assert!(moved <= 1e-4, "{moved}");
            let pp = project_displacement(&m, &q, &p, &task).unwrap();
            assert!((&pp - &p).norm() <= 1e-10);

            let basis = constrained_null_basis(&m, &q, &task).unwrap();
            let lin = null_project(&basis, &dq);
            assert!((ee_jacobian(&m, &q).unwrap() * lin).norm() <= 1e-8 * dq.norm());

            let j1 = ee_jacobian(&m, &q).unwrap();
            let task_dir = j1.transpose() * DVector::from_vec(vec![0.3, -0.2, 0.5]);
            assert!(null_project(&basis, &task_dir).norm() <= 1e-8 * task_dir.norm());
        }
    }

    #[test]
    fn feasibility_examples() {
        let m = dreamer();
        let task = m.home_task(0.01).unwrap();
        assert!(is_feasible(&m, &m.home, false, &task));
        assert!(is_feasible(&m, &m.home, true, &task));
        let mut q = m.home.clone();
        q[0] = m.coord_limits()[0][1] + 0.1;
        assert!(!is_feasible(&m, &q, false, &task));
        let off = TaskSpec::new(task.ee_goal + Vector3::new(0.05, 0.0, 0.0), 0.01).unwrap();
        assert!(!is_feasible(&m, &m.home, true, &off));
    }

    #[test]
    fn coupled_joints_share_a_coordinate() {
        let m = dreamer();
        assert_eq!(m.joints.len(), m.dof() + 1);
        let a = m.joint_angles(&m.home);
        assert_eq!(a[1] * m.joints[2].ratio, a[2]);
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let m = dreamer();
        assert_eq!(m.hash(), dreamer().hash());
        let mut spec = m.spec.clone();
        spec.links[0].radius += 0.01;
        assert_ne!(RobotModel::from_spec(spec).unwrap().hash(), m.hash());
    }

    #[test]
    fn invalid_models_are_rejected() {
        let bad = PLANAR.replace("limits = [-3.0, 3.0]\n[[joints]]\nname = \"j2\"", "limits = [3.0, -3.0]\n[[joints]]\nname = \"j2\"");
        assert!(matches!(RobotModel::from_toml(&bad), Err(Error::InvalidModel(_))));
        let bad = PLANAR.replace("parent = \"j2\"", "parent = \"j9\"");
        assert!(matches!(RobotModel::from_toml(&bad), Err(Error::InvalidModel(_))));
        let bad = PLANAR.replacen("radius = 0.05", "radius = 0.0", 1);
        assert!(matches!(RobotModel::from_toml(&bad), Err(Error::InvalidModel(_))));
    }
}
