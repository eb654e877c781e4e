//! Closed-form concentration quantities for prototype centroids and Monte
//! Carlo checks of the concentration, interior-recovery and separation
//! guarantees, plus the prototype stationarity property.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::block_centers;
use crate::tensor::Matrix;

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// `4σ·sqrt((d + ln(2K/δ)) / s_k)`.
pub fn epsilon_k(sigma: f64, d: usize, k: usize, delta: f64, s_k: usize) -> Result<f64> {
    check_delta(delta)?;
    if s_k == 0 || k == 0 {
        return Err(Error::InvalidArgument("need s_k >= 1 and K >= 1".into()));
    }
    Ok(4.0 * sigma * ((d as f64 + (2.0 * k as f64 / delta).ln()) / s_k as f64).sqrt())
}

/// Smallest per-cluster sample count with `ε_k ≤ Δ/β`:
/// `ceil(16σ²β²/Δ² · (d + ln(2K/δ)))`, at least 1.
pub fn sample_complexity(sigma: f64, beta: f64, min_sep: f64, d: usize, k: usize, delta: f64) -> Result<usize> {
    check_delta(delta)?;
    if !(min_sep > 0.0) || !(beta > 0.0) || k == 0 {
        return Err(Error::InvalidArgument(format!("need Δ > 0, β > 0, K >= 1; got Δ = {min_sep}, β = {beta}")));
    }
    let bound = 16.0 * sigma * sigma * beta * beta / (min_sep * min_sep) * (d as f64 + (2.0 * k as f64 / delta).ln());
    Ok((bound.ceil() as usize).max(1))
}

/// Cardinality bound `5^d` of a half-net on the unit sphere in `d` dimensions.
pub fn net_size_bound(d: u32) -> Result<u64> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be >= 1".into()));
    }
    5u64.checked_pow(d).ok_or_else(|| Error::InvalidArgument(format!("5^{d} does not fit in 64 bits")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseModel {
    /// `N(0, σ²I)`.
    Gaussian,
    /// Independent coordinates uniform on `[-σ, σ]`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremParams {
    pub d: usize,
    pub k: usize,
    /// Sub-Gaussian parameter used in the bounds.
    pub sigma: f64,
    pub delta: f64,
    pub beta: f64,
    /// `K x d` cluster centers.
    pub centers: Matrix<f64>,
    /// Samples per cluster.
    pub samples: Vec<usize>,
    pub noise: NoiseModel,
    /// Multiplier on `sigma` when drawing points; the bounds keep using
    /// `sigma`. Values above 1 give a negative control.
    pub noise_scale: f64,
}

impl TheoremParams {
    /// Centers on a regular polygon (or simplex) with minimum separation
    /// `min_sep`, and `sample_complexity` points per cluster.
    pub fn regular(d: usize, k: usize, sigma: f64, min_sep: f64, delta: f64, beta: f64) -> Result<Self> {
        if d == 0 || k == 0 {
            return Err(Error::InvalidArgument("need d >= 1 and K >= 1".into()));
        }
        let s = sample_complexity(sigma, beta, min_sep, d, k, delta)?;
        let p = Self {
            d,
            k,
            sigma,
            delta,
            beta,
            centers: block_centers(k, d, min_sep),
            samples: vec![s; k],
            noise: NoiseModel::Gaussian,
            noise_scale: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn min_sep(&self) -> f64 {
        let mut best = f64::INFINITY;
        for a in 0..self.k {
            for b in a + 1..self.k {
                best = best.min(dist(self.centers.row(a), self.centers.row(b)));
            }
        }
        best
    }

    pub fn validate(&self) -> Result<()> {
        check_delta(self.delta)?;
        if self.centers.shape() != (self.k, self.d) || self.samples.len() != self.k {
            return Err(Error::InvalidArgument(format!(
                "centers {:?} and {} sample counts do not match K = {}, d = {}",
                self.centers.shape(),
                self.samples.len(),
                self.k,
                self.d
            )));
        }
        if self.k > 1 && !(self.min_sep() > 0.0) {
            return Err(Error::InvalidArgument("cluster centers must be distinct".into()));
        }
        if !(self.sigma >= 0.0) || !(self.noise_scale >= 0.0) {
            return Err(Error::InvalidArgument("sigma and noise_scale must be >= 0".into()));
        }
        if !(self.beta > 2.0) {
            return Err(Error::InvalidArgument(format!("beta must exceed 2, got {}", self.beta)));
        }
        if self.samples.contains(&0) {
            return Err(Error::InvalidArgument("every cluster needs at least one sample".into()));
        }
        Ok(())
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub seed: u64,
    /// `||ỹ_k − μ_k||` for the assignment-weighted mean `ỹ_k`.
    pub deviations: Vec<f64>,
    pub bounds: Vec<f64>,
    pub bound_holds: Vec<bool>,
    /// Deviation of the unit-normalized mean; reported, not asserted.
    pub normalized_deviations: Vec<f64>,
    pub interior_points: usize,
    pub interior_correct: usize,
    pub min_separation: f64,
}

impl TrialOutcome {
    pub fn all_bounds_hold(&self) -> bool {
        self.bound_holds.iter().all(|&b| b)
    }

    pub fn interior_fraction(&self) -> f64 {
        if self.interior_points == 0 {
            1.0
        } else {
            self.interior_correct as f64 / self.interior_points as f64
        }
    }
}

/// Draws `s_k` points around each center, forms the per-cluster means
/// under the true memberships, and checks the deviation bound, the
/// nearest-centroid assignment of interior points, and centroid separation.
pub fn run_concentration_trial(p: &TheoremParams, seed: u64) -> Result<TrialOutcome> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = p.sigma * p.noise_scale;
    // offsets from the center; the centroid is the center plus their mean
    let mut offsets: Vec<Vec<Vec<f64>>> = Vec::with_capacity(p.k);
    for c in 0..p.k {
        let cluster = (0..p.samples[c])
            .map(|_| {
                (0..p.d)
                    .map(|_| {
                        let e = match p.noise {
                            NoiseModel::Gaussian => {
                                let v: f64 = StandardNormal.sample(&mut rng);
                                v
                            }
                            NoiseModel::Uniform => rng.random_range(-1.0..=1.0),
                        };
                        scale * e
                    })
                    .collect()
            })
            .collect();
        offsets.push(cluster);
    }
    let points: Vec<Vec<Vec<f64>>> = offsets
        .iter()
        .enumerate()
        .map(|(c, cl)| cl.iter().map(|e| e.iter().zip(p.centers.row(c)).map(|(a, m)| a + m).collect()).collect())
        .collect();

    let mut centroids = Vec::with_capacity(p.k);
    let (mut deviations, mut bounds, mut holds, mut normalized) = (vec![], vec![], vec![], vec![]);
    for (c, cluster) in offsets.iter().enumerate() {
        let n = cluster.len() as f64;
        let mut shift = vec![0.0; p.d];
        for e in cluster {
            for (a, &v) in shift.iter_mut().zip(e) {
                *a += v;
            }
        }
        let mu = p.centers.row(c);
        let m: Vec<f64> = mu.iter().zip(&shift).map(|(&u, &s)| u + s / n).collect();
        let dev = dist(&m, mu);
        let eps = epsilon_k(p.sigma, p.d, p.k, p.delta, p.samples[c])?;
        let norm = m.iter().map(|v| v * v).sum::<f64>().sqrt();
        let unit: Vec<f64> = m.iter().map(|v| if norm > 0.0 { v / norm } else { 0.0 }).collect();
        deviations.push(dev);
        bounds.push(eps);
        holds.push(dev <= eps);
        normalized.push(dist(&unit, mu));
        centroids.push(m);
    }

    let min_sep = p.min_sep();
    let (mut interior, mut correct) = (0usize, 0usize);
    for (c, cluster) in points.iter().enumerate() {
        let radius = min_sep / 2.0 - bounds[c];
        for z in cluster {
            if dist(z, p.centers.row(c)) >= radius {
                continue;
            }
            interior += 1;
            let nearest = (0..p.k)
                .min_by(|&a, &b| dist(z, &centroids[a]).total_cmp(&dist(z, &centroids[b])))
                .expect("K >= 1");
            if nearest == c {
                correct += 1;
            }
        }
    }
    let mut min_separation = f64::INFINITY;
    for a in 0..p.k {
        for b in a + 1..p.k {
            min_separation = min_separation.min(dist(&centroids[a], &centroids[b]));
        }
    }
    Ok(TrialOutcome {
        seed,
        deviations,
        bounds,
        bound_holds: holds,
        normalized_deviations: normalized,
        interior_points: interior,
        interior_correct: correct,
        min_separation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub params: TheoremParams,
    pub trials: usize,
    pub base_seed: u64,
    /// Fraction of trials where some cluster exceeded its bound.
    pub concentration_violation_rate: f64,
    /// `δ + 2·sqrt(δ(1−δ)/trials)`.
    pub violation_threshold: f64,
    /// Among trials where every bound held: trials with a misassigned
    /// interior point.
    pub interior_failures: usize,
    /// Among trials where every bound held: trials with centroid separation
    /// below `(1 − 2/β)Δ`.
    pub separation_failures: usize,
    pub separation_floor: f64,
    pub pass: bool,
    pub outcomes: Vec<TrialOutcome>,
}

/// Runs `trials` independent trials with seeds `base_seed + t`.
pub fn validate_theorem(p: &TheoremParams, trials: usize, base_seed: u64) -> Result<TheoremReport> {
    if trials < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 trials, got {trials}")));
    }
    p.validate()?;
    let outcomes: Vec<TrialOutcome> = (0..trials)
        .into_par_iter()
        .map(|t| run_concentration_trial(p, base_seed.wrapping_add(t as u64)))
        .collect::<Result<_>>()?;
    let violations = outcomes.iter().filter(|o| !o.all_bounds_hold()).count();
    let rate = violations as f64 / trials as f64;
    let threshold = p.delta + 2.0 * (p.delta * (1.0 - p.delta) / trials as f64).sqrt();
    let floor = (1.0 - 2.0 / p.beta) * p.min_sep();
    let holding = || outcomes.iter().filter(|o| o.all_bounds_hold());
    let interior_failures = holding().filter(|o| o.interior_correct != o.interior_points).count();
    let separation_failures = holding().filter(|o| o.min_separation < floor).count();
    Ok(TheoremReport {
        params: p.clone(),
        trials,
        base_seed,
        concentration_violation_rate: rate,
        violation_threshold: threshold,
        interior_failures,
        separation_failures,
        separation_floor: floor,
        pass: rate <= threshold && interior_failures == 0 && separation_failures == 0,
        outcomes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StationarityConfig {
    pub trials: usize,
    pub d: usize,
    pub k: usize,
    pub points: usize,
    pub lr: f64,
    pub max_iters: usize,
}

impl Default for StationarityConfig {
    fn default() -> Self {
        Self { trials: 20, d: 5, k: 3, points: 30, lr: 0.5, max_iters: 2000 }
    }
}

const STATIONARY_COS: f64 = 1.0 - 1e-6;
const DEGENERATE_NORM: f64 = 1e-12;

/// Projected gradient descent on `−Σ_i q_ik z_iᵀ ỹ_k` over unit vectors:
/// `ỹ_k ← normalize(ỹ_k + lr·m_k)` with `m_k = Σ_i q_ik z_i`. Returns the
/// final prototypes and, per prototype, the cosine to `m_k` (`None` when
/// `m_k` vanishes).
pub fn stationary_prototypes(
    z: &Matrix<f64>,
    assign: &[usize],
    init: &Matrix<f64>,
    lr: f64,
    iters: usize,
) -> Result<(Matrix<f64>, Vec<Option<f64>>)> {
    let (k, d) = init.shape();
    if z.cols() != d || assign.len() != z.rows() {
        return Err(Error::InvalidArgument("points, assignments and prototypes disagree in shape".into()));
    }
    let mut m = Matrix::zeros(k, d);
    for (i, &c) in assign.iter().enumerate() {
        if c >= k {
            return Err(Error::InvalidArgument(format!("point {i} assigned to {c} >= {k}")));
        }
        for (a, &v) in m.row_mut(c).iter_mut().zip(z.row(i)) {
            *a += v;
        }
    }
    let mut y = init.clone();
    let mut cosines = Vec::with_capacity(k);
    for c in 0..k {
        let mk = m.row(c).to_vec();
        let mnorm = mk.iter().map(|v| v * v).sum::<f64>().sqrt();
        if mnorm < DEGENERATE_NORM {
            cosines.push(None);
            continue;
        }
        let row = y.row_mut(c);
        for _ in 0..iters {
            let prev = row.to_vec();
            for (a, &v) in row.iter_mut().zip(&mk) {
                *a += lr * v;
            }
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > 0.0) {
                return Err(Error::Training(format!("prototype {c} collapsed during projection")));
            }
            row.iter_mut().for_each(|a| *a /= n);
            if row.iter().zip(&prev).all(|(a, b)| (a - b).abs() <= 1e-15) {
                break;
            }
        }
        cosines.push(Some(row.iter().zip(&mk).map(|(a, b)| a * b).sum::<f64>() / mnorm));
    }
    Ok((y, cosines))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationarityReport {
    pub config: StationarityConfig,
    pub seed: u64,
    /// Trials in which every non-degenerate prototype reached the cosine
    /// threshold.
    pub converged: usize,
    /// Prototypes skipped because their assigned points summed to zero.
    pub degenerate: usize,
    pub min_cosine: f64,
    pub pass: bool,
}

/// Random unit points, random assignments covering every prototype, random
/// unit initial prototypes; trial `t` uses seed `seed + t`.
pub fn validate_stationarity(cfg: &StationarityConfig, seed: u64) -> Result<StationarityReport> {
    if cfg.trials < 10 {
        return Err(Error::InvalidArgument(format!("need at least 10 trials, got {}", cfg.trials)));
    }
    if cfg.k == 0 || cfg.d == 0 || cfg.points < cfg.k {
        return Err(Error::InvalidArgument("need d >= 1 and points >= K >= 1".into()));
    }
    let results: Vec<Vec<Option<f64>>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(t as u64));
            let mut unit_rows = |rows: usize| {
                let raw = Matrix::from_fn(rows, cfg.d, |_, _| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    v
                });
                crate::tensor::row_l2_normalize(&raw)
            };
            let z = unit_rows(cfg.points)?;
            let init = unit_rows(cfg.k)?;
            let assign: Vec<usize> =
                (0..cfg.points).map(|i| if i < cfg.k { i } else { rng.random_range(0..cfg.k) }).collect();
            let (_, cos) = stationary_prototypes(&z, &assign, &init, cfg.lr, cfg.max_iters)?;
            Ok(cos)
        })
        .collect::<Result<_>>()?;
    let mut converged = 0;
    let mut degenerate = 0;
    let mut min_cosine = f64::INFINITY;
    for cos in &results {
        degenerate += cos.iter().filter(|c| c.is_none()).count();
        let vals: Vec<f64> = cos.iter().flatten().copied().collect();
        if vals.iter().all(|&c| c >= STATIONARY_COS) {
            converged += 1;
        }
        min_cosine = vals.into_iter().fold(min_cosine, f64::min);
    }
    Ok(StationarityReport { config: *cfg, seed, converged, degenerate, min_cosine, pass: converged == cfg.trials })
}
