//! Maximum likelihood fitting, confidence intervals, model comparison, and
//! secondary attack rate prediction.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::data::PairDataset;
use crate::error::{Error, Result};
use crate::hazard::HazardFamily;
use crate::likelihood::{numeric_hessian, LikelihoodModel, ModelSpec, ParamLayout, ParamSet, LN_GAMMA_INT, LN_LAMBDA0};
use crate::optimize::{maximize, Settings};

/// 0.95 quantile of the chi-square distribution with one degree of freedom.
pub const CHI2_1_95: f64 = 3.841459;
/// 0.975 quantile of the standard normal distribution.
pub const Z_975: f64 = 1.959964;

/// Profile bracket limit, in Wald standard errors.
const MAX_BRACKET_SE: f64 = 10.0;

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Number of partitions for parallel likelihood evaluation.
    pub partitions: usize,
    /// Compute profile-likelihood intervals.
    pub lr_intervals: bool,
    /// Compute likelihood-ratio p-values for regression coefficients.
    pub lr_pvalues: bool,
    /// Start from an exponential/exponential pre-fit.
    pub warm_start: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { max_iter: 500, partitions: 1, lr_intervals: true, lr_pvalues: true, warm_start: true }
    }
}

impl FitOptions {
    /// Point estimates and Wald intervals only.
    pub fn quick() -> Self {
        FitOptions { lr_intervals: false, lr_pvalues: false, ..Self::default() }
    }

    fn settings(&self) -> Settings {
        Settings { max_iter: self.max_iter, ..Settings::default() }
    }
}

/// A confidence interval; an endpoint is `None` when unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl Interval {
    pub fn bounded(lo: f64, hi: f64) -> Self {
        Interval { lo: Some(lo), hi: Some(hi) }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo.is_none_or(|lo| lo <= v) && self.hi.is_none_or(|hi| v <= hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub estimate: f64,
    pub se: Option<f64>,
    pub wald: Option<Interval>,
    pub lr: Option<Interval>,
    pub p_wald: Option<f64>,
    pub p_lr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub spec: ModelSpec,
    pub layout: ParamLayout,
    pub theta_hat: ParamSet,
    pub loglik: f64,
    /// Inverse observed information, in layout order.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub aic: f64,
    pub converged: bool,
    pub iterations: usize,
    pub max_gradient: f64,
    pub n_events: usize,
    pub n_rows: usize,
    pub estimates: Vec<Estimate>,
}

impl FitResult {
    /// A fit made from known parameter values, e.g. published estimates.
    pub fn from_params(
        spec: ModelSpec,
        layout: ParamLayout,
        theta_hat: ParamSet,
        loglik: f64,
        covariance: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let theta = theta_hat.to_layout_vec(&layout)?;
        let k = theta.len();
        let estimates = layout
            .names()
            .into_iter()
            .zip(&theta)
            .enumerate()
            .map(|(i, (name, &estimate))| {
                let se = covariance.as_ref().map(|c| c[i][i]).filter(|v| *v > 0.0).map(f64::sqrt);
                let wald = se.map(|s| Interval::bounded(estimate - Z_975 * s, estimate + Z_975 * s));
                Estimate { name, estimate, se, wald, lr: None, p_wald: None, p_lr: None }
            })
            .collect();
        Ok(FitResult {
            spec,
            layout,
            theta_hat,
            loglik,
            covariance,
            aic: 2.0 * k as f64 - 2.0 * loglik,
            converged: true,
            iterations: 0,
            max_gradient: 0.0,
            n_events: 0,
            n_rows: 0,
            estimates,
        })
    }

    pub fn names(&self) -> Vec<String> {
        self.layout.names()
    }

    pub fn n_params(&self) -> usize {
        self.layout.len()
    }

    pub fn estimate(&self, name: &str) -> Option<&Estimate> {
        self.estimates.iter().find(|e| e.name == name)
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.layout.index_of(name).ok_or_else(|| Error::domain(format!("model has no parameter `{name}`")))
    }

    fn theta(&self) -> Vec<f64> {
        self.theta_hat.to_vec()
    }

    fn variance(&self, k: usize) -> Option<f64> {
        self.covariance.as_ref().map(|c| c[k][k]).filter(|v| v.is_finite() && *v > 0.0)
    }
}

fn check_rank(model: &LikelihoodModel) -> Result<()> {
    let (names, rows) = model.design_rows();
    let p = names.len();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for (j, name) in names.iter().enumerate() {
        let mut v: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for q in &basis {
            let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 || norm <= 1e-8 * norm0 {
            dependent.push(name.clone());
        } else {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    debug_assert!(basis.len() + dependent.len() == p);
    if dependent.is_empty() {
        Ok(())
    } else {
        Err(Error::RankDeficient(dependent))
    }
}

/// Maximum likelihood fit.
pub fn fit_mle(dataset: &PairDataset, spec: &ModelSpec, options: &FitOptions) -> Result<FitResult> {
    let model = LikelihoodModel::new(dataset, spec)?.with_partitions(options.partitions);
    if model.n_events() == 0 {
        return Err(Error::domain("dataset contains no events"));
    }
    check_rank(&model)?;

    let layout = model.layout().clone();
    let crude = (model.n_events() as f64 / model.person_time()).ln();
    let mut start = vec![0.0; layout.len()];
    for name in [LN_LAMBDA0, crate::likelihood::LN_MU0] {
        if let Some(k) = layout.index_of(name) {
            start[k] = crude;
        }
    }

    let exponential = ModelSpec { formula: spec.formula.clone(), ..ModelSpec::exponential() };
    if options.warm_start && exponential != *spec {
        let pre = LikelihoodModel::new(dataset, &exponential)?.with_partitions(options.partitions);
        let pre_layout = pre.layout().clone();
        let pre_start: Vec<f64> =
            pre_layout.names().iter().map(|n| start[layout.index_of(n).expect("shared parameter")]).collect();
        match maximize(|t| pre.loglik_vec(t), &pre_start, None, options.settings()) {
            Ok(opt) => {
                for (name, v) in pre_layout.names().iter().zip(&opt.x) {
                    start[layout.index_of(name).expect("shared parameter")] = *v;
                }
            }
            Err(e) => warn!("exponential pre-fit failed ({e}); starting from crude rates"),
        }
    }

    let opt = maximize(|t| model.loglik_vec(t), &start, None, options.settings())?;
    let theta = opt.x;
    let covariance = numeric_hessian(|t| model.loglik_vec(t), &theta).ok().and_then(|h| {
        let n = theta.len();
        let neg = DMatrix::from_fn(n, n, |i, j| -h[i][j]);
        let inv = neg.clone().cholesky().map(|c| c.inverse()).or_else(|| neg.try_inverse())?;
        Some((0..n).map(|i| (0..n).map(|j| 0.5 * (inv[(i, j)] + inv[(j, i)])).collect()).collect::<Vec<Vec<f64>>>())
    });
    if !opt.converged {
        warn!("optimizer did not converge after {} iterations", opt.iterations);
    }

    let k = theta.len();
    let mut fit = FitResult {
        spec: spec.clone(),
        theta_hat: ParamSet::from_vec(&layout, &theta),
        layout,
        loglik: opt.value,
        covariance,
        aic: 2.0 * k as f64 - 2.0 * opt.value,
        converged: opt.converged,
        iterations: opt.iterations,
        max_gradient: opt.gradient.iter().fold(0.0, |m, g| m.max(g.abs())),
        n_events: model.n_events(),
        n_rows: model.n_rows(),
        estimates: Vec::new(),
    };

    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut estimates = Vec::with_capacity(k);
    for (i, name) in fit.names().into_iter().enumerate() {
        let se = fit.variance(i).map(f64::sqrt);
        let wald = wald_ci(&fit, &name).ok().map(|(lo, hi)| Interval::bounded(lo, hi));
        let p_wald = se.map(|s| 2.0 * (1.0 - normal.cdf((theta[i] / s).abs())));
        let lr = if options.lr_intervals && fit.converged {
            Some(profile_interval(&model, &fit, i, options)?)
        } else {
            None
        };
        let p_lr = if options.lr_pvalues && fit.converged && i < fit.layout.beta.len() {
            lr_test_at(&model, &fit, i, 0.0, options).ok()
        } else {
            None
        };
        estimates.push(Estimate { name, estimate: theta[i], se, wald, lr, p_wald, p_lr });
    }
    fit.estimates = estimates;
    Ok(fit)
}

/// Wald interval `θ̂_k ± z·se_k` at the 95% level.
pub fn wald_ci(fit: &FitResult, param: &str) -> Result<(f64, f64)> {
    let k = fit.index(param)?;
    let var = fit
        .variance(k)
        .ok_or_else(|| Error::domain(format!("variance of `{param}` is not positive")))?;
    let theta = fit.theta()[k];
    let half = Z_975 * var.sqrt();
    Ok((theta - half, theta + half))
}

/// Profile-likelihood 95% interval for one parameter.
pub fn lr_ci(fit: &FitResult, param: &str, dataset: &PairDataset) -> Result<Interval> {
    let k = fit.index(param)?;
    let model = LikelihoodModel::new(dataset, &fit.spec)?;
    profile_interval(&model, fit, k, &FitOptions::default())
}

/// Likelihood-ratio p-value for `param = value`.
pub fn lr_pvalue(fit: &FitResult, param: &str, value: f64, dataset: &PairDataset) -> Result<f64> {
    let k = fit.index(param)?;
    let model = LikelihoodModel::new(dataset, &fit.spec)?;
    lr_test_at(&model, fit, k, value, &FitOptions::default())
}

/// Wald p-value for `param = 0`.
pub fn wald_pvalue(fit: &FitResult, param: &str) -> Result<f64> {
    let k = fit.index(param)?;
    let se = fit
        .variance(k)
        .ok_or_else(|| Error::domain(format!("variance of `{param}` is not positive")))?
        .sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(2.0 * (1.0 - normal.cdf((fit.theta()[k] / se).abs())))
}

pub fn aic(fit: &FitResult) -> f64 {
    2.0 * fit.n_params() as f64 - 2.0 * fit.loglik
}

fn lr_test_at(model: &LikelihoodModel, fit: &FitResult, k: usize, value: f64, options: &FitOptions) -> Result<f64> {
    let profile = Profile::new(model, fit, k, options);
    let dev = profile.deviance(value)?.max(0.0);
    let chi2 = ChiSquared::new(1.0).expect("chi-square with one degree of freedom");
    Ok(1.0 - chi2.cdf(dev))
}

/// Profile log-likelihood for one coordinate, warm-started from the
/// conditional mean of the other coordinates under the fitted covariance.
struct Profile<'a> {
    model: &'a LikelihoodModel,
    k: usize,
    theta: Vec<f64>,
    loglik: f64,
    slope: Vec<f64>,
    inv_hessian: Option<DMatrix<f64>>,
    settings: Settings,
}

impl<'a> Profile<'a> {
    fn new(model: &'a LikelihoodModel, fit: &FitResult, k: usize, options: &FitOptions) -> Self {
        let theta = fit.theta();
        let n = theta.len();
        let others: Vec<usize> = (0..n).filter(|&j| j != k).collect();
        let (slope, inv_hessian) = match &fit.covariance {
            Some(c) if c[k][k] > 0.0 => {
                let slope = others.iter().map(|&j| c[j][k] / c[k][k]).collect();
                let m = others.len();
                let cond = DMatrix::from_fn(m, m, |a, b| {
                    let (i, j) = (others[a], others[b]);
                    c[i][j] - c[i][k] * c[k][j] / c[k][k]
                });
                let pd = m == 0 || cond.clone().cholesky().is_some();
                (slope, pd.then_some(cond))
            }
            _ => (vec![0.0; others.len()], None),
        };
        Profile { model, k, theta, loglik: fit.loglik, slope, inv_hessian, settings: options.settings() }
    }

    fn full(&self, value: f64, rest: &[f64]) -> Vec<f64> {
        let mut t = Vec::with_capacity(rest.len() + 1);
        t.extend_from_slice(&rest[..self.k]);
        t.push(value);
        t.extend_from_slice(&rest[self.k..]);
        t
    }

    fn maximum(&self, value: f64) -> Result<f64> {
        let shift = value - self.theta[self.k];
        let start: Vec<f64> = (0..self.theta.len())
            .filter(|&j| j != self.k)
            .zip(&self.slope)
            .map(|(j, s)| self.theta[j] + s * shift)
            .collect();
        let f = |rest: &[f64]| self.model.loglik_vec(&self.full(value, rest));
        let start = if f(&start).is_ok_and(f64::is_finite) {
            start
        } else {
            (0..self.theta.len()).filter(|&j| j != self.k).map(|j| self.theta[j]).collect()
        };
        let opt = maximize(f, &start, self.inv_hessian.clone(), self.settings)?;
        if !opt.converged {
            warn!("profile fit at {value} did not fully converge");
        }
        Ok(opt.value)
    }

    fn deviance(&self, value: f64) -> Result<f64> {
        Ok(2.0 * (self.loglik - self.maximum(value)?))
    }
}

fn profile_interval(model: &LikelihoodModel, fit: &FitResult, k: usize, options: &FitOptions) -> Result<Interval> {
    let profile = Profile::new(model, fit, k, options);
    let theta_k = fit.theta()[k];
    let se = fit.variance(k).map(f64::sqrt).unwrap_or(1.0);
    let name = &fit.names()[k];
    let mut ends = [None, None];
    for (slot, dir) in [(0, -1.0), (1, 1.0)] {
        ends[slot] = profile_endpoint(&profile, theta_k, dir, se)?;
        if ends[slot].is_none() {
            warn!(
                "{} LR endpoint for `{name}` is unbounded within {MAX_BRACKET_SE} standard errors",
                if dir < 0.0 { "lower" } else { "upper" }
            );
        }
    }
    Ok(Interval { lo: ends[0], hi: ends[1] })
}

/// Root of `deviance(v) = χ²` on one side of the estimate: bracket outward
/// from the Wald endpoint, then shrink the bracket with Illinois-modified
/// false position until it is narrower than 1e-4 or the deviance matches.
fn profile_endpoint(profile: &Profile, theta_k: f64, dir: f64, se: f64) -> Result<Option<f64>> {
    let g = |v: f64| -> Result<f64> {
        match profile.deviance(v) {
            Ok(d) => Ok(d - CHI2_1_95),
            Err(Error::NonFinite(_)) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    };
    let (mut a, mut ga) = (theta_k, -CHI2_1_95);
    let mut mult = Z_975;
    let (mut b, mut gb);
    loop {
        b = theta_k + dir * mult * se;
        gb = g(b)?;
        if gb >= 0.0 {
            break;
        }
        (a, ga) = (b, gb);
        if mult >= MAX_BRACKET_SE {
            return Ok(None);
        }
        mult = (mult * 1.5).min(MAX_BRACKET_SE);
    }
    if !gb.is_finite() {
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            let gm = g(m)?;
            if gm.is_finite() {
                if gm >= 0.0 {
                    (b, gb) = (m, gm);
                } else {
                    (a, ga) = (m, gm);
                }
                if gb.is_finite() {
                    break;
                }
            } else {
                (b, gb) = (m, gm);
            }
        }
    }
    let mut side = 0i8;
    for _ in 0..100 {
        if (b - a).abs() < 1e-4 && gb.abs().min(ga.abs()) < 1e-3 {
            break;
        }
        let m = if gb.is_finite() { (a * gb - b * ga) / (gb - ga) } else { 0.5 * (a + b) };
        let gm = g(m)?;
        if gm.abs() < 1e-6 {
            return Ok(Some(m));
        }
        if gm < 0.0 {
            (a, ga) = (m, gm);
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        } else {
            (b, gb) = (m, gm);
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        }
    }
    let root = if gb.is_finite() && gb != ga { (a * gb - b * ga) / (gb - ga) } else { 0.5 * (a + b) };
    Ok(Some(root))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAic {
    pub term: String,
    pub aic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub formula: Vec<String>,
    pub aic: f64,
    pub candidates: Vec<CandidateAic>,
    pub dropped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub spec: ModelSpec,
    pub fit: FitResult,
    pub trace: Vec<SelectionStep>,
}

/// Backward elimination by AIC. Protected terms and baseline/shape
/// parameters are never dropped. Ties within 1e-9 go to the term listed
/// earliest.
pub fn backward_select(
    dataset: &PairDataset,
    spec: &ModelSpec,
    protected: &[String],
    options: &FitOptions,
) -> Result<Selection> {
    let quick = FitOptions { lr_intervals: false, lr_pvalues: false, ..*options };
    let mut current = spec.clone();
    let mut current_fit = fit_mle(dataset, &current, &quick)?;
    let mut trace = Vec::new();
    loop {
        let mut candidates = Vec::new();
        let mut best: Option<(usize, f64)> = None;
        for (i, term) in current.formula.iter().enumerate() {
            if protected.contains(term) {
                continue;
            }
            let mut reduced = current.clone();
            reduced.formula.remove(i);
            let aic = match fit_mle(dataset, &reduced, &quick) {
                Ok(f) if f.converged => Some(f.aic),
                Ok(_) => {
                    warn!("skipping candidate without `{term}`: fit did not converge");
                    None
                }
                Err(e) => {
                    warn!("skipping candidate without `{term}`: {e}");
                    None
                }
            };
            if let Some(a) = aic {
                if best.is_none_or(|(_, b)| a < b - 1e-9) {
                    best = Some((i, a));
                }
            }
            candidates.push(CandidateAic { term: term.clone(), aic });
        }
        let drop = best.filter(|&(_, a)| a < current_fit.aic);
        trace.push(SelectionStep {
            formula: current.formula.clone(),
            aic: current_fit.aic,
            candidates,
            dropped: drop.map(|(i, _)| current.formula[i].clone()),
        });
        match drop {
            Some((i, _)) => {
                current.formula.remove(i);
                current_fit = fit_mle(dataset, &current, &quick)?;
            }
            None => break,
        }
    }
    let fit = if options.lr_intervals || options.lr_pvalues {
        fit_mle(dataset, &current, options)?
    } else {
        current_fit
    };
    Ok(Selection { spec: current, fit, trace })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SarPrediction {
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Probability that a source with the given term values infects a
/// susceptible housemate over an infectious period `iota`, with a Wald
/// interval transformed from the log cumulative hazard scale.
///
/// `profile` maps formula terms to values; terms not listed are zero.
pub fn predict_sar(fit: &FitResult, profile: &BTreeMap<String, f64>, iota: f64) -> Result<SarPrediction> {
    if !(iota > 0.0) {
        return Err(Error::domain(format!("infectious period must be positive, got {iota}")));
    }
    for name in profile.keys() {
        if !fit.layout.beta.contains(name) {
            return Err(Error::UnknownCovariate(name.clone()));
        }
    }
    let k_lambda = fit.index(LN_LAMBDA0).map_err(|_| Error::domain("fit has no internal transmission model"))?;
    let family = fit.spec.internal;
    let theta = fit.theta();
    let n = theta.len();

    let mut x = vec![0.0; n];
    for (i, name) in fit.layout.beta.iter().enumerate() {
        x[i] = profile.get(name).copied().unwrap_or(0.0);
    }
    x[k_lambda] = 1.0;
    let eta: f64 = x.iter().zip(&theta).map(|(a, b)| a * b).sum();
    let k_gamma = fit.layout.index_of(LN_GAMMA_INT);
    let ln_gamma = k_gamma.map_or(0.0, |k| theta[k]);

    let ln_cum = |eta: f64, ln_gamma: f64| -> f64 { ln_cumulative_hazard(family, eta, ln_gamma, iota) };
    let sar = |ln_h: f64| -> f64 { -(-ln_h.exp()).exp_m1() };
    let centre = ln_cum(eta, ln_gamma);
    let estimate = sar(centre);

    let Some(cov) = &fit.covariance else {
        return Ok(SarPrediction { estimate, lo: f64::NAN, hi: f64::NAN });
    };
    // gradient of ln H(ι) with respect to θ
    let d_eta = {
        let h = 1e-6;
        (ln_cum(eta + h, ln_gamma) - ln_cum(eta - h, ln_gamma)) / (2.0 * h)
    };
    let mut grad: Vec<f64> = x.iter().map(|xi| xi * d_eta).collect();
    if let Some(k) = k_gamma {
        let h = 1e-6;
        grad[k] = (ln_cum(eta, ln_gamma + h) - ln_cum(eta, ln_gamma - h)) / (2.0 * h);
    }
    let var: f64 = (0..n).map(|i| (0..n).map(|j| grad[i] * cov[i][j] * grad[j]).sum::<f64>()).sum();
    let se = var.max(0.0).sqrt();
    Ok(SarPrediction { estimate, lo: sar(centre - Z_975 * se), hi: sar(centre + Z_975 * se) })
}

fn ln_cumulative_hazard(family: HazardFamily, eta: f64, ln_gamma: f64, t: f64) -> f64 {
    let gamma = ln_gamma.exp();
    match family {
        HazardFamily::Exponential => eta + t.ln(),
        HazardFamily::Weibull => gamma * (eta + t.ln()),
        HazardFamily::LogLogistic => (gamma * (eta + t.ln())).exp().ln_1p().ln(),
    }
}

/// Parameter estimates of a fit as a name → value map.
pub fn estimates_map(fit: &FitResult) -> BTreeMap<String, f64> {
    fit.names().into_iter().zip(fit.theta()).collect()
}
