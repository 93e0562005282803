//! One-dimensional Gaussian mixture models of χ.
//!
//! Fitting is plain expectation-maximization seeded k-means++-style on the
//! sample quantiles. Component standard deviations are clamped at
//! [`SIGMA_FLOOR`] so that a component sitting on a point mass stays finite.
//! Model order is picked by AIC with ω_J = 3J free parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Smallest allowed component standard deviation, in χ units.
pub const SIGMA_FLOOR: f64 = 1e-4;
pub const DEFAULT_MAX_ITER: usize = 500;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_RESTARTS: usize = 5;
/// Mixture order used for every REM entry unless selection is requested.
pub const DEFAULT_COMPONENTS: usize = 5;
/// Points in the evaluation grid used when a KS distance involves a model CDF.
pub const KS_GRID_POINTS: usize = 4096;

const WEIGHT_SUM_TOL: f64 = 1e-12;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
/// Cap on quantile points fed to the seeding step.
const SEED_QUANTILES: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
}

impl GmmModel {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, stddevs: Vec<f64>) -> Result<Self> {
        let m = GmmModel {
            weights,
            means,
            stddevs,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn single(mean: f64, stddev: f64) -> Result<Self> {
        GmmModel::new(vec![1.0], vec![mean], vec![stddev])
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.weights.len();
        if j == 0 {
            return Err(Error::InvalidInput("mixture has no components".into()));
        }
        if self.means.len() != j || self.stddevs.len() != j {
            return Err(Error::InvalidInput(format!(
                "mixture arrays disagree: {} weights, {} means, {} stddevs",
                j,
                self.means.len(),
                self.stddevs.len()
            )));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("mixture weight negative or non-finite".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidInput(format!(
                "mixture weights sum to {sum}, not 1"
            )));
        }
        if self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidInput("mixture mean non-finite".into()));
        }
        if let Some(s) = self
            .stddevs
            .iter()
            .find(|s| !(s.is_finite() && **s >= SIGMA_FLOOR))
        {
            return Err(Error::InvalidInput(format!(
                "mixture stddev {s} below the floor {SIGMA_FLOOR}"
            )));
        }
        Ok(())
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        let term = |c: usize| self.weights[c].ln() + ln_normal(x, self.means[c], self.stddevs[c]);
        let max = (0..self.components()).map(term).fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + (0..self.components())
            .map(|c| (term(c) - max).exp())
            .sum::<f64>()
            .ln()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    /// `Σ w_j Φ((t − μ_j)/σ_j)`.
    pub fn cdf(&self, t: f64) -> f64 {
        let v: f64 = self
            .weights
            .iter()
            .zip(&self.means)
            .zip(&self.stddevs)
            .map(|((w, m), s)| w * std_normal_cdf((t - m) / s))
            .sum();
        v.clamp(0.0, 1.0)
    }

    pub fn log_likelihood(&self, samples: &[f64]) -> f64 {
        samples.iter().map(|&x| self.ln_pdf(x)).sum()
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }

    pub fn max_stddev(&self) -> f64 {
        self.stddevs.iter().cloned().fold(0.0, f64::max)
    }

    /// Components reordered by ascending mean.
    pub fn sorted_by_mean(&self) -> GmmModel {
        let mut idx: Vec<usize> = (0..self.components()).collect();
        idx.sort_by(|&a, &b| self.means[a].total_cmp(&self.means[b]));
        GmmModel {
            weights: idx.iter().map(|&i| self.weights[i]).collect(),
            means: idx.iter().map(|&i| self.means[i]).collect(),
            stddevs: idx.iter().map(|&i| self.stddevs[i]).collect(),
        }
    }
}

pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

fn ln_normal(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

/// Result of one mixture fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: GmmModel,
    pub log_likelihood: f64,
    pub aic: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FitReport {
    pub fn from_model(model: GmmModel, log_likelihood: f64, iterations: usize, converged: bool) -> Self {
        let aic = aic_value(model.components(), log_likelihood);
        FitReport {
            model,
            log_likelihood,
            aic,
            iterations,
            converged,
        }
    }

    /// Model validity plus `aic = 3J − 2 ln L̂` to within 1e-9.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let want = aic_value(self.model.components(), self.log_likelihood);
        if (self.aic - want).abs() > 1e-9 * want.abs().max(1.0) {
            return Err(Error::InvalidInput(format!(
                "aic {} disagrees with 3J - 2 ln L = {want}",
                self.aic
            )));
        }
        Ok(())
    }
}

fn aic_value(components: usize, log_likelihood: f64) -> f64 {
    3.0 * components as f64 - 2.0 * log_likelihood
}

/// `ω_J − 2 ln L̂` with ω_J = 3J.
pub fn aic(report: &FitReport) -> f64 {
    aic_value(report.model.components(), report.log_likelihood)
}

/// Fits a `components`-component mixture by EM.
pub fn em_fit(
    samples: &[f64],
    components: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<FitReport> {
    em_fit_traced(samples, components, seed, max_iter, tol).map(|(r, _)| r)
}

/// Like [`em_fit`], also returning the log-likelihood at the start of every
/// iteration followed by the log-likelihood of the returned model.
pub fn em_fit_traced(
    samples: &[f64],
    components: usize,
    seed: u64,
    max_iter: usize,
    tol: f64,
) -> Result<(FitReport, Vec<f64>)> {
    let n = samples.len();
    let need = 2 * components.max(1);
    if components == 0 || n < need {
        return Err(Error::TooFewSamples {
            got: n,
            components,
            need,
        });
    }
    if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidInput(format!("sample {i} is not finite")));
    }

    let mut model = seed_model(samples, components, seed);
    let j = components;
    let mut resp = vec![0.0f64; n * j];
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut prev_ll = f64::NEG_INFINITY;

    while iterations < max_iter {
        let ll = e_step(samples, &model, &mut resp);
        history.push(ll);
        iterations += 1;
        if prev_ll.is_finite() && ((ll - prev_ll) / prev_ll.abs().max(f64::MIN_POSITIVE)).abs() < tol {
            converged = true;
            break;
        }
        prev_ll = ll;
        m_step(samples, &resp, &mut model);
    }
    let final_ll = if converged {
        *history.last().unwrap()
    } else {
        let ll = e_step(samples, &model, &mut resp);
        history.push(ll);
        ll
    };
    Ok((
        FitReport::from_model(model, final_ll, iterations, converged),
        history,
    ))
}

/// Fills responsibilities row-major (sample × component) and returns the
/// log-likelihood of `model`.
fn e_step(samples: &[f64], model: &GmmModel, resp: &mut [f64]) -> f64 {
    let j = model.components();
    let ln_w: Vec<f64> = model.weights.iter().map(|w| w.ln()).collect();
    let mut ll = 0.0;
    for (x, row) in samples.iter().zip(resp.chunks_exact_mut(j)) {
        let mut max = f64::NEG_INFINITY;
        for c in 0..j {
            let v = ln_w[c] + ln_normal(*x, model.means[c], model.stddevs[c]);
            row[c] = v;
            max = max.max(v);
        }
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
        ll += max + s.ln();
    }
    ll
}

fn m_step(samples: &[f64], resp: &[f64], model: &mut GmmModel) {
    let j = model.components();
    let n = samples.len() as f64;
    let mut nk = vec![0.0; j];
    let mut sx = vec![0.0; j];
    for (x, row) in samples.iter().zip(resp.chunks_exact(j)) {
        for c in 0..j {
            nk[c] += row[c];
            sx[c] += row[c] * x;
        }
    }
    let means: Vec<f64> = (0..j)
        .map(|c| if nk[c] > 0.0 { sx[c] / nk[c] } else { model.means[c] })
        .collect();
    let mut sq = vec![0.0; j];
    for (x, row) in samples.iter().zip(resp.chunks_exact(j)) {
        for c in 0..j {
            let d = x - means[c];
            sq[c] += row[c] * d * d;
        }
    }
    for c in 0..j {
        if nk[c] > 0.0 {
            model.means[c] = means[c];
            model.stddevs[c] = (sq[c] / nk[c]).sqrt().max(SIGMA_FLOOR);
        }
        model.weights[c] = nk[c] / n;
    }
    normalize(&mut model.weights);
}

fn normalize(w: &mut [f64]) {
    let s: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= s;
    }
}

/// k-means++ seeding over sample quantiles, refined by a few Lloyd passes.
fn seed_model(samples: &[f64], j: usize, seed: u64) -> GmmModel {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = sorted.len().min(SEED_QUANTILES);
    let points: Vec<f64> = (0..q)
        .map(|i| {
            let pos = ((i as f64 + 0.5) / q as f64 * sorted.len() as f64) as usize;
            sorted[pos.min(sorted.len() - 1)]
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = vec![points[rng.random_range(0..q)]];
    while centers.len() < j {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| {
                centers
                    .iter()
                    .map(|c| (p - c) * (p - c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = q - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.random_range(0..q)
        };
        centers.push(points[pick]);
    }

    let mut assign = vec![0usize; q];
    for _ in 0..20 {
        for (a, p) in assign.iter_mut().zip(&points) {
            *a = (0..j)
                .min_by(|&x, &y| (p - centers[x]).abs().total_cmp(&(p - centers[y]).abs()))
                .unwrap();
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let (s, k) = points
                .iter()
                .zip(&assign)
                .filter(|(_, a)| **a == c)
                .fold((0.0, 0usize), |(s, k), (p, _)| (s + p, k + 1));
            if k > 0 {
                *center = s / k as f64;
            }
        }
    }

    let spread = {
        let mean = points.iter().sum::<f64>() / q as f64;
        (points.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / q as f64).sqrt()
    };
    let mut weights = Vec::with_capacity(j);
    let mut stddevs = Vec::with_capacity(j);
    for c in 0..j {
        let members: Vec<f64> = points
            .iter()
            .zip(&assign)
            .filter(|(_, a)| **a == c)
            .map(|(p, _)| *p)
            .collect();
        let k = members.len();
        let sd = if k > 1 {
            (members.iter().map(|p| (p - centers[c]).powi(2)).sum::<f64>() / k as f64).sqrt()
        } else {
            spread / j as f64
        };
        weights.push((k.max(1)) as f64);
        stddevs.push(sd.max(SIGMA_FLOOR));
    }
    normalize(&mut weights);
    GmmModel {
        weights,
        means: centers,
        stddevs,
    }
}

/// Fits J = 1..=`max_components`, keeping the best-likelihood restart per J,
/// and returns the fit with the lowest AIC (ties go to the smaller J).
pub fn select_components(
    samples: &[f64],
    max_components: usize,
    seed: u64,
    restarts: usize,
) -> Result<FitReport> {
    select_components_with(samples, max_components, seed, restarts, DEFAULT_MAX_ITER, DEFAULT_TOL)
}

pub fn select_components_with(
    samples: &[f64],
    max_components: usize,
    seed: u64,
    restarts: usize,
    max_iter: usize,
    tol: f64,
) -> Result<FitReport> {
    let per_j = best_per_order(samples, max_components, seed, restarts, max_iter, tol)?;
    let mut best: Option<FitReport> = None;
    for r in per_j {
        if best.as_ref().is_none_or(|b| r.aic < b.aic) {
            best = Some(r);
        }
    }
    Ok(best.expect("at least one order"))
}

/// Best-likelihood fit for each J in 1..=`max_components`, in order of J.
pub fn best_per_order(
    samples: &[f64],
    max_components: usize,
    seed: u64,
    restarts: usize,
    max_iter: usize,
    tol: f64,
) -> Result<Vec<FitReport>> {
    if max_components == 0 {
        return Err(Error::InvalidInput("max_components must be at least 1".into()));
    }
    let restarts = restarts.max(1);
    let jobs: Vec<(usize, usize)> = (1..=max_components)
        .flat_map(|j| (0..restarts).map(move |r| (j, r)))
        .collect();
    let fits: Vec<Result<FitReport>> = jobs
        .par_iter()
        .map(|&(j, r)| em_fit(samples, j, derive_seed(seed, j, r), max_iter, tol))
        .collect();
    let mut out: Vec<FitReport> = Vec::with_capacity(max_components);
    for ((j, _), fit) in jobs.into_iter().zip(fits) {
        let fit = fit?;
        if out.len() < j {
            out.push(fit);
        } else if fit.log_likelihood > out[j - 1].log_likelihood {
            out[j - 1] = fit;
        }
    }
    Ok(out)
}

pub fn derive_seed(seed: u64, j: usize, restart: usize) -> u64 {
    seed ^ (j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (restart as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Variance handling for the mean-only reference model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BaselineVariance {
    /// Maximum-likelihood variance of the sample (the J = 1 fit).
    Fitted,
    /// A fixed standard deviation supplied by the caller.
    Fixed(f64),
}

/// Single Gaussian centred on the sample mean: the reference that stores only
/// an average value per entry.
pub fn mean_only_baseline(samples: &[f64], variance: BaselineVariance) -> Result<FitReport> {
    if samples.is_empty() {
        return Err(Error::TooFewSamples {
            got: 0,
            components: 1,
            need: 1,
        });
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = match variance {
        BaselineVariance::Fitted => {
            (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
        }
        BaselineVariance::Fixed(s) => s,
    }
    .max(SIGMA_FLOOR);
    let model = GmmModel::single(mean, sd)?;
    let ll = model.log_likelihood(samples);
    Ok(FitReport::from_model(model, ll, 0, true))
}

/// `n` i.i.d. draws: component by weight, then a Gaussian draw.
pub fn sample(model: &GmmModel, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(model, n, &mut rng)
}

pub fn sample_with<R: Rng + ?Sized>(model: &GmmModel, n: usize, rng: &mut R) -> Vec<f64> {
    let mut cum = Vec::with_capacity(model.components());
    let mut acc = 0.0;
    for w in &model.weights {
        acc += w;
        cum.push(acc);
    }
    let last = model.components() - 1;
    (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            let c = cum.partition_point(|&c| c <= u).min(last);
            let z: f64 = StandardNormal.sample(rng);
            model.means[c] + model.stddevs[c] * z
        })
        .collect()
}

/// Either an empirical distribution (sorted samples) or a mixture model.
#[derive(Debug, Clone, PartialEq)]
pub enum CdfSource {
    Empirical(Vec<f64>),
    Model(GmmModel),
}

impl CdfSource {
    pub fn empirical(samples: &[f64]) -> Self {
        let mut v = samples.to_vec();
        v.sort_by(f64::total_cmp);
        CdfSource::Empirical(v)
    }

    /// Wraps samples already in ascending order.
    pub fn empirical_sorted(sorted: Vec<f64>) -> Self {
        debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
        CdfSource::Empirical(sorted)
    }

    pub fn cdf(&self, t: f64) -> f64 {
        match self {
            CdfSource::Empirical(v) => empirical_cdf(v, t),
            CdfSource::Model(m) => m.cdf(t),
        }
    }

    fn support(&self) -> (f64, f64) {
        match self {
            CdfSource::Empirical(v) => (v[0], v[v.len() - 1]),
            CdfSource::Model(m) => (
                m.means.iter().cloned().fold(f64::INFINITY, f64::min),
                m.means.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            ),
        }
    }
}

fn empirical_cdf(sorted: &[f64], t: f64) -> f64 {
    sorted.partition_point(|&x| x <= t) as f64 / sorted.len() as f64
}

/// `sup_z |F_a(z) − F_b(z)|`.
///
/// Exact over the merged jump points when both sides are empirical; otherwise
/// the sup over a [`KS_GRID_POINTS`]-point grid spanning both supports widened
/// by three of the largest model standard deviations.
pub fn ks_distance(a: &CdfSource, b: &CdfSource) -> f64 {
    match (a, b) {
        (CdfSource::Empirical(x), CdfSource::Empirical(y)) => ks_two_sample(x, y),
        _ => {
            let sigma = [a, b]
                .iter()
                .filter_map(|s| match s {
                    CdfSource::Model(m) => Some(m.max_stddev()),
                    CdfSource::Empirical(_) => None,
                })
                .fold(0.0, f64::max);
            let (la, ha) = a.support();
            let (lb, hb) = b.support();
            let lo = la.min(lb) - 3.0 * sigma;
            let hi = ha.max(hb) + 3.0 * sigma;
            let step = (hi - lo) / (KS_GRID_POINTS - 1) as f64;
            (0..KS_GRID_POINTS)
                .map(|i| {
                    let t = lo + step * i as f64;
                    (a.cdf(t) - b.cdf(t)).abs()
                })
                .fold(0.0, f64::max)
        }
    }
}

/// Exact two-sample statistic over sorted inputs.
fn ks_two_sample(x: &[f64], y: &[f64]) -> f64 {
    let (n, m) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let z = x[i].min(y[j]);
        while i < x.len() && x[i] <= z {
            i += 1;
        }
        while j < y.len() && y[j] <= z {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_comp() -> GmmModel {
        GmmModel::new(vec![0.5, 0.5], vec![-2.0, 2.0], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn model_validation() {
        assert!(GmmModel::new(vec![], vec![], vec![]).is_err());
        assert!(GmmModel::new(vec![0.5, 0.6], vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(GmmModel::new(vec![1.0], vec![0.0], vec![1e-5]).is_err());
        assert!(GmmModel::new(vec![-0.5, 1.5], vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(GmmModel::new(vec![1.0], vec![0.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn aic_formula() {
        let m = GmmModel::new(vec![0.2; 5], vec![0.0, 1.0, 2.0, 3.0, 4.0], vec![1.0; 5]).unwrap();
        let r = FitReport::from_model(m, -10_000.0, 1, true);
        assert_eq!(aic(&r), 20_015.0);
        let r = FitReport::from_model(GmmModel::single(0.0, 1.0).unwrap(), 0.0, 1, true);
        assert_eq!(aic(&r), 3.0);
        r.validate().unwrap();
    }

    #[test]
    fn point_mass_collapses_to_floor() {
        let samples = vec![3.25; 100];
        let r = em_fit(&samples, 1, 0, 500, 1e-6).unwrap();
        assert_eq!(r.model.weights, vec![1.0]);
        assert!((r.model.means[0] - 3.25).abs() < 1e-12);
        assert_eq!(r.model.stddevs[0], SIGMA_FLOOR);
        r.validate().unwrap();
        // Several components on a point mass stay finite as well.
        let r = em_fit(&samples, 3, 7, 500, 1e-6).unwrap();
        assert!(r.log_likelihood.is_finite());
        r.validate().unwrap();
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            em_fit(&[1.0, 2.0, 3.0], 2, 0, 10, 1e-6),
            Err(Error::TooFewSamples { need: 4, .. })
        ));
        assert!(em_fit(&[1.0, 2.0], 0, 0, 10, 1e-6).is_err());
    }

    #[test]
    fn recovers_two_well_separated_components() {
        let truth = two_comp();
        let data = sample(&truth, 50_000, 42);
        let fit = em_fit(&data, 2, 1, 500, 1e-6).unwrap().model.sorted_by_mean();
        for c in 0..2 {
            assert!((fit.weights[c] - 0.5).abs() < 0.05);
            assert!((fit.means[c] - truth.means[c]).abs() < 0.05);
            assert!((fit.stddevs[c] - 0.5).abs() < 0.05);
        }
    }

    #[test]
    fn five_component_fit_reaches_generating_likelihood() {
        let truth = GmmModel::new(
            vec![0.35, 0.25, 0.2, 0.12, 0.08],
            vec![27.5, 26.6, 25.4, 24.2, 22.8],
            vec![0.25, 0.35, 0.4, 0.5, 0.6],
        )
        .unwrap();
        let data = sample(&truth, 25_600, 9);
        let ll_truth = truth.log_likelihood(&data);
        let fit = em_fit(&data, 5, 3, 500, 1e-6).unwrap();
        assert!(
            fit.log_likelihood >= ll_truth - 0.005 * ll_truth.abs(),
            "{} vs {}",
            fit.log_likelihood,
            ll_truth
        );
    }

    #[test]
    fn em_is_deterministic_per_seed() {
        let data = sample(&two_comp(), 2_000, 5);
        let a = em_fit(&data, 3, 11, 200, 1e-8).unwrap();
        let b = em_fit(&data, 3, 11, 200, 1e-8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn log_likelihood_never_decreases() {
        for seed in 0..20 {
            let data = sample(&two_comp(), 1_000, seed);
            let (_, hist) = em_fit_traced(&data, 4, seed, 300, 1e-10).unwrap();
            for w in hist.windows(2) {
                assert!(w[1] >= w[0] - 1e-8, "seed {seed}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn baseline_worse_than_mixture_on_bimodal_data() {
        let data = sample(&two_comp(), 5_000, 8);
        let base = mean_only_baseline(&data, BaselineVariance::Fitted).unwrap();
        let fixed = mean_only_baseline(&data, BaselineVariance::Fixed(1.0)).unwrap();
        let best = select_components(&data, 4, 1, 2).unwrap();
        assert!(best.aic < base.aic);
        assert!(best.aic < fixed.aic);
        assert_eq!(best.model.components(), 2);
    }

    #[test]
    fn cdf_symmetry_and_limits() {
        let m = GmmModel::single(1.5, 0.3).unwrap();
        assert!((m.cdf(1.5) - 0.5).abs() < 1e-15);
        assert_eq!(m.cdf(f64::NEG_INFINITY), 0.0);
        assert_eq!(m.cdf(f64::INFINITY), 1.0);
        assert!(m.cdf(1.5 - 10.0 * 0.3) < 1e-12);
    }

    #[test]
    fn cdf_matches_sampled_empirical_cdf() {
        let m = GmmModel::new(vec![0.2, 0.5, 0.3], vec![-1.0, 0.5, 3.0], vec![0.4, 0.8, 0.3]).unwrap();
        let mut draws = sample(&m, 1_000_000, 17);
        draws.sort_by(f64::total_cmp);
        let mut worst: f64 = 0.0;
        for i in 0..1000 {
            let t = -3.0 + 7.0 * i as f64 / 999.0;
            worst = worst.max((m.cdf(t) - empirical_cdf(&draws, t)).abs());
        }
        assert!(worst < 0.005, "{worst}");
    }

    #[test]
    fn sampling_moments_and_proportions() {
        let std = GmmModel::single(0.0, 1.0).unwrap();
        let d = sample(&std, 1_000_000, 1);
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        assert!(mean.abs() < 0.005);
        assert_eq!(sample(&std, 10, 99), sample(&std, 10, 99));

        let m = GmmModel::new(vec![0.3, 0.7], vec![-50.0, 50.0], vec![1.0, 1.0]).unwrap();
        let d = sample(&m, 1_000_000, 2);
        let left = d.iter().filter(|&&x| x < 0.0).count() as f64 / d.len() as f64;
        assert!((left - 0.3).abs() < 0.01);
    }

    #[test]
    fn ks_identities() {
        let a = CdfSource::empirical(&[0.3, 1.0, 2.0]);
        assert_eq!(ks_distance(&a, &a), 0.0);
        let x = CdfSource::empirical(&[0.0]);
        let y = CdfSource::empirical(&[1.0]);
        assert_eq!(ks_distance(&x, &y), 1.0);
        let m = CdfSource::Model(two_comp());
        assert!(ks_distance(&m, &m) < 1e-15);
    }

    #[test]
    fn ks_handles_ties() {
        let a = CdfSource::empirical(&[1.0, 1.0, 2.0, 2.0]);
        let b = CdfSource::empirical(&[1.0, 2.0]);
        assert_eq!(ks_distance(&a, &b), 0.0);
        let c = CdfSource::empirical(&[1.0, 1.0, 1.0, 2.0]);
        assert!((ks_distance(&a, &c) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn ks_model_vs_samples_is_small_for_own_draws() {
        let m = two_comp();
        let d = CdfSource::empirical(&sample(&m, 20_000, 4));
        let v = ks_distance(&d, &CdfSource::Model(m));
        assert!(v < 0.015, "{v}");
    }

    fn model_strategy() -> impl Strategy<Value = GmmModel> {
        (1usize..5).prop_flat_map(|j| {
            (
                proptest::collection::vec(0.05..1.0f64, j),
                proptest::collection::vec(-5.0..5.0f64, j),
                proptest::collection::vec(0.05..2.0f64, j),
            )
                .prop_map(|(mut w, m, s)| {
                    normalize(&mut w);
                    GmmModel { weights: w, means: m, stddevs: s }
                })
        })
    }

    proptest! {
        #[test]
        fn permuting_components_changes_nothing(m in model_strategy(), t in -8.0..8.0f64, rot in 0usize..5) {
            let j = m.components();
            let idx: Vec<usize> = (0..j).map(|i| (i + rot) % j).collect();
            let p = GmmModel {
                weights: idx.iter().map(|&i| m.weights[i]).collect(),
                means: idx.iter().map(|&i| m.means[i]).collect(),
                stddevs: idx.iter().map(|&i| m.stddevs[i]).collect(),
            };
            prop_assert!((m.cdf(t) - p.cdf(t)).abs() < 1e-12);
            prop_assert!((m.ln_pdf(t) - p.ln_pdf(t)).abs() < 1e-10);
            let a = FitReport::from_model(m.clone(), -12.5, 1, true);
            let b = FitReport::from_model(p, -12.5, 1, true);
            prop_assert_eq!(aic(&a), aic(&b));
        }

        #[test]
        fn cdf_monotone(m in model_strategy(), a in -10.0..10.0f64, b in -10.0..10.0f64) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(m.cdf(lo) <= m.cdf(hi));
        }

        #[test]
        fn ks_symmetric(x in proptest::collection::vec(-3.0..3.0f64, 1..50),
                        y in proptest::collection::vec(-3.0..3.0f64, 1..50),
                        m in model_strategy()) {
            let a = CdfSource::empirical(&x);
            let b = CdfSource::empirical(&y);
            let mm = CdfSource::Model(m);
            prop_assert_eq!(ks_distance(&a, &b), ks_distance(&b, &a));
            prop_assert_eq!(ks_distance(&a, &mm), ks_distance(&mm, &a));
            let d = ks_distance(&a, &b);
            prop_assert!((0.0..=1.0).contains(&d));
        }

        #[test]
        fn gmm_json_roundtrip(m in model_strategy()) {
            let s = serde_json::to_string(&m).unwrap();
            let back: GmmModel = serde_json::from_str(&s).unwrap();
            prop_assert_eq!(m, back);
        }
    }
}
