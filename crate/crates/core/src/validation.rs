//! Brute-force reference oracles.
//!
//! Sampling runs in fixed-size batches, each with its own ChaCha stream
//! derived from the configured seed, so results do not depend on the number
//! of worker threads.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_segment_distance, GaussianBelief, Point3};
use crate::kinematics::{fk_unchecked, is_feasible, RobotModel, TaskSpec};
use crate::planning::solve_goal;
use crate::tracking::{dynamics_for, KalmanConfig};

/// Smallest sample count accepted by the probability oracles.
pub const MIN_SAMPLES: usize = 10_000;
const BATCH: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub samples: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            samples: 100_000,
            seed: 0,
            tolerance: 0.005,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < MIN_SAMPLES {
            return Err(Error::InvalidInput(format!(
                "oracles need at least {MIN_SAMPLES} samples, got {}",
                self.samples
            )));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::InvalidInput("tolerance must be non-negative".into()));
        }
        Ok(())
    }

    fn batches(&self) -> Vec<(u64, usize)> {
        let n = self.samples.div_ceil(BATCH);
        (0..n)
            .map(|b| (b as u64, BATCH.min(self.samples - b * BATCH)))
            .collect()
    }

    fn rng(&self, batch: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(batch);
        rng
    }
}

/// Monte Carlo estimate of a probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    /// Binomial standard error.
    pub stderr: f64,
    pub samples: usize,
}

impl McEstimate {
    fn from_hits(hits: usize, n: usize) -> Self {
        let p = hits as f64 / n as f64;
        Self {
            estimate: p,
            stderr: (p * (1.0 - p) / n as f64).sqrt(),
            samples: n,
        }
    }

    /// Whether `value` lies within `max(3·stderr, tolerance)` of the estimate.
    pub fn agrees_with(&self, value: f64, tolerance: f64) -> bool {
        (self.estimate - value).abs() <= (3.0 * self.stderr).max(tolerance)
    }
}

/// Symmetric square root of a PSD matrix, clipping negative eigenvalues.
fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return m.clone();
    }
    let e = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let s = e.eigenvalues.map(|l| l.max(0.0).sqrt());
    &e.eigenvectors * DMatrix::from_diagonal(&s) * e.eigenvectors.transpose()
}

fn gaussian(rng: &mut ChaCha8Rng, mean: &DVector<f64>, sqrt: &DMatrix<f64>) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    mean + sqrt * z
}

/// Probability that independent draws of `bi` and `bj` lie within `ri + rj`.
pub fn mc_instantaneous(bi: &GaussianBelief, bj: &GaussianBelief, ri: f64, rj: f64, cfg: &OracleConfig) -> Result<McEstimate> {
    cfg.validate()?;
    if bi.dim() != bj.dim() || bi.dim() == 0 {
        return Err(Error::InvalidInput(format!("belief dimensions {} and {} differ", bi.dim(), bj.dim())));
    }
    let w = ri + rj;
    let (si, sj) = (sqrt_psd(&bi.cov), sqrt_psd(&bj.cov));
    let hits: usize = cfg
        .batches()
        .into_par_iter()
        .map(|(b, n)| {
            let mut rng = cfg.rng(b);
            (0..n)
                .filter(|_| {
                    let xi = gaussian(&mut rng, &bi.mean, &si);
                    let xj = gaussian(&mut rng, &bj.mean, &sj);
                    (xi - xj).norm() <= w
                })
                .count()
        })
        .sum();
    Ok(McEstimate::from_hits(hits, cfg.samples))
}

/// First-passage series from simulated trajectory pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSeries {
    /// `p_ac[k]`: fraction of pairs whose first contact happened at step `k + 1` or earlier.
    pub p_ac: Vec<f64>,
    pub stderr: Vec<f64>,
    pub samples: usize,
}

/// Simulates pairs under the constant-velocity model with process noise and
/// records when each pair first comes within `r_i + r_j`.
///
/// `states` are position+velocity beliefs of dimension 2 or 6.
pub fn mc_first_passage(
    states: [&GaussianBelief; 2],
    radii: [f64; 2],
    kcfg: &KalmanConfig,
    steps: usize,
    cfg: &OracleConfig,
) -> Result<McSeries> {
    cfg.validate()?;
    let [bi, bj] = states;
    if bi.dim() != bj.dim() {
        return Err(Error::InvalidInput(format!("belief dimensions {} and {} differ", bi.dim(), bj.dim())));
    }
    let (a, w) = dynamics_for(bi.dim(), kcfg)?;
    let d = bi.dim() / 2;
    let sqrt_w = sqrt_psd(&w);
    let (si, sj) = (sqrt_psd(&bi.cov), sqrt_psd(&bj.cov));
    let zero = DVector::zeros(bi.dim());
    let reach = radii[0] + radii[1];
    let first = cfg
        .batches()
        .into_par_iter()
        .map(|(b, n)| {
            let mut rng = cfg.rng(b);
            let mut counts = vec![0usize; steps];
            for _ in 0..n {
                let mut xi = gaussian(&mut rng, &bi.mean, &si);
                let mut xj = gaussian(&mut rng, &bj.mean, &sj);
                for slot in counts.iter_mut() {
                    xi = &a * &xi + gaussian(&mut rng, &zero, &sqrt_w);
                    xj = &a * &xj + gaussian(&mut rng, &zero, &sqrt_w);
                    if (xi.rows(0, d) - xj.rows(0, d)).norm() <= reach {
                        *slot += 1;
                        break;
                    }
                }
            }
            counts
        })
        .reduce(
            || vec![0usize; steps],
            |mut x, y| {
                x.iter_mut().zip(y).for_each(|(a, b)| *a += b);
                x
            },
        );
    let mut hits = 0;
    let mut p_ac = Vec::with_capacity(steps);
    let mut stderr = Vec::with_capacity(steps);
    for c in first {
        hits += c;
        let e = McEstimate::from_hits(hits, cfg.samples);
        p_ac.push(e.estimate);
        stderr.push(e.stderr);
    }
    Ok(McSeries {
        p_ac,
        stderr,
        samples: cfg.samples,
    })
}

/// Uniform voxel grid anchored at `min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub min: Point3,
    pub cell: f64,
}

impl ScanGrid {
    /// The grid whose cells coincide with the leaves of an octree.
    pub fn for_octree(center: Point3, half_width: f64, depth: u8) -> Self {
        Self {
            min: center - Point3::repeat(half_width),
            cell: 2.0 * half_width / f64::from(1u32 << depth),
        }
    }

    fn center(&self, k: (i64, i64, i64)) -> Point3 {
        self.min + Point3::new(k.0 as f64 + 0.5, k.1 as f64 + 0.5, k.2 as f64 + 0.5) * self.cell
    }

    fn key(&self, p: &Point3) -> (i64, i64, i64) {
        let k = (p - self.min) / self.cell;
        (k.x.floor() as i64, k.y.floor() as i64, k.z.floor() as i64)
    }

    /// Cells whose circumscribed sphere meets the capsule.
    pub fn voxelize(&self, a: &Point3, b: &Point3, radius: f64, out: &mut BTreeSet<(i64, i64, i64)>) {
        let reach = radius + self.cell * 3f64.sqrt() / 2.0;
        let lo = self.key(&(a.inf(b) - Point3::repeat(reach)));
        let hi = self.key(&(a.sup(b) + Point3::repeat(reach)));
        let seg = crate::geometry::Segment::new(*a, *b);
        for x in lo.0..=hi.0 {
            for y in lo.1..=hi.1 {
                for z in lo.2..=hi.2 {
                    let k = (x, y, z);
                    if point_segment_distance(&self.center(k), &seg) <= reach {
                        out.insert(k);
                    }
                }
            }
        }
    }

    /// Grows every cell set by one cell in each direction, diagonals included.
    pub fn dilate(cells: &BTreeSet<(i64, i64, i64)>) -> BTreeSet<(i64, i64, i64)> {
        let mut out = BTreeSet::new();
        for &(x, y, z) in cells {
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        out.insert((x + dx, y + dy, z + dz));
                    }
                }
            }
        }
        out
    }
}

/// Per-link occupancy of `budget` random feasible configurations.
///
/// With a task, each sample is first pulled onto the end-effector goal and
/// kept only if it then satisfies the task. Sampling stops after
/// `100 * budget` attempts even if fewer configurations were found.
pub fn dense_reachability_scan(
    model: &RobotModel,
    task: Option<&TaskSpec>,
    grid: &ScanGrid,
    budget: usize,
    seed: u64,
) -> Result<Vec<BTreeSet<(i64, i64, i64)>>> {
    if !(grid.cell > 0.0) {
        return Err(Error::InvalidInput("grid cell must be positive".into()));
    }
    let n_links = model.n_links();
    if budget == 0 {
        return Ok(vec![BTreeSet::new(); n_links]);
    }
    let per_batch = 256usize;
    let n_batches = budget.div_ceil(per_batch);
    let limits = model.coord_limits();
    let cfg = OracleConfig {
        samples: budget,
        seed,
        tolerance: 0.0,
    };
    let free_task = task.copied().unwrap_or(TaskSpec {
        ee_goal: Point3::zeros(),
        epsilon: f64::INFINITY,
    });
    let batches: Vec<Vec<BTreeSet<(i64, i64, i64)>>> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let want = per_batch.min(budget - b * per_batch);
            let mut rng = cfg.rng(b as u64);
            let mut sets = vec![BTreeSet::new(); n_links];
            let mut found = 0;
            for _ in 0..want * 100 {
                if found == want {
                    break;
                }
                let mut q = DVector::from_iterator(model.dof(), limits.iter().map(|l| rng.random_range(l[0]..=l[1])));
                if let Some(t) = task {
                    match solve_goal(model, &q, t) {
                        Ok(p) => q = p,
                        Err(_) => continue,
                    }
                }
                if !is_feasible(model, &q, task.is_some(), &free_task) {
                    continue;
                }
                found += 1;
                for (l, c) in fk_unchecked(model, &q).capsules.iter().enumerate() {
                    grid.voxelize(&c.seg.a, &c.seg.b, c.radius, &mut sets[l]);
                }
            }
            sets
        })
        .collect();
    let mut out = vec![BTreeSet::new(); n_links];
    for sets in batches {
        for (acc, s) in out.iter_mut().zip(sets) {
            acc.extend(s);
        }
    }
    Ok(out)
}

/// Occupancy of a single configuration's capsules.
pub fn voxelize_configuration(model: &RobotModel, q: &DVector<f64>, grid: &ScanGrid) -> Vec<BTreeSet<(i64, i64, i64)>> {
    fk_unchecked(model, q)
        .capsules
        .iter()
        .map(|c| {
            let mut s = BTreeSet::new();
            grid.voxelize(&c.seg.a, &c.seg.b, c.radius, &mut s);
            s
        })
        .collect()
}
