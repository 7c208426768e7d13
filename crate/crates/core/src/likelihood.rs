//! Pairwise log-likelihood for combined internal and external transmission.
//!
//! Each row's rate is `exp(β·x + (1 - ζ) ln λ0 + ζ ln μ0)`. Internal rows use
//! the internal family and shape, external rows the external ones. A subject
//! contributes minus the cumulative hazard accumulated over all of its rows
//! and, if its infection is observed, the log of the total hazard summed over
//! its event rows. With who-infected-whom observed there is exactly one event
//! row, so the same computation gives the per-row likelihood.

use std::collections::BTreeMap;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Outcome, PairDataset, PairRow};
use crate::error::{Error, Result};
use crate::hazard::HazardFamily;

pub const LN_LAMBDA0: &str = "ln_lambda0";
pub const LN_GAMMA_INT: &str = "ln_gamma_int";
pub const LN_MU0: &str = "ln_mu0";
pub const LN_GAMMA_EXT: &str = "ln_gamma_ext";

/// Families for the internal and external models plus the covariate terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub internal: HazardFamily,
    pub external: HazardFamily,
    pub formula: Vec<String>,
}

impl ModelSpec {
    pub fn new(internal: HazardFamily, external: HazardFamily) -> Self {
        ModelSpec { internal, external, formula: Vec::new() }
    }

    pub fn exponential() -> Self {
        Self::new(HazardFamily::Exponential, HazardFamily::Exponential)
    }

    pub fn with_formula<S: AsRef<str>>(mut self, terms: &[S]) -> Self {
        self.formula = terms.iter().map(|t| t.as_ref().to_string()).collect();
        self
    }
}

/// Which parameters a model carries, and in what order.
///
/// The order is: regression coefficients in formula order, then
/// `ln_lambda0`, `ln_gamma_int`, `ln_mu0`, `ln_gamma_ext`. Internal (or
/// external) parameters are present only when the dataset has internal (or
/// external) rows; shapes only for families that have one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub beta: Vec<String>,
    pub internal: Option<HazardFamily>,
    pub external: Option<HazardFamily>,
}

impl ParamLayout {
    pub fn for_dataset(spec: &ModelSpec, dataset: &PairDataset) -> Self {
        ParamLayout {
            beta: spec.formula.clone(),
            internal: dataset.has_internal().then_some(spec.internal),
            external: dataset.has_external().then_some(spec.external),
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = self.beta.clone();
        if let Some(f) = self.internal {
            names.push(LN_LAMBDA0.into());
            if f.has_shape() {
                names.push(LN_GAMMA_INT.into());
            }
        }
        if let Some(f) = self.external {
            names.push(LN_MU0.into());
            if f.has_shape() {
                names.push(LN_GAMMA_EXT.into());
            }
        }
        names
    }

    pub fn len(&self) -> usize {
        self.names().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names().iter().position(|n| n == name)
    }

    fn slots(&self) -> Slots {
        let mut k = self.beta.len();
        let mut next = |present: bool| {
            present.then(|| {
                k += 1;
                k - 1
            })
        };
        let lambda0 = next(self.internal.is_some());
        let gamma_int = next(self.internal.is_some_and(HazardFamily::has_shape));
        let mu0 = next(self.external.is_some());
        let gamma_ext = next(self.external.is_some_and(HazardFamily::has_shape));
        Slots { n_beta: self.beta.len(), lambda0, gamma_int, mu0, gamma_ext }
    }
}

#[derive(Debug, Clone, Copy)]
struct Slots {
    n_beta: usize,
    lambda0: Option<usize>,
    gamma_int: Option<usize>,
    mu0: Option<usize>,
    gamma_ext: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedValue {
    pub name: String,
    pub value: f64,
}

/// The full parameter vector θ on the log scale.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    pub beta: Vec<NamedValue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ln_lambda0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ln_gamma_int: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ln_mu0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ln_gamma_ext: Option<f64>,
}

impl ParamSet {
    pub fn from_vec(layout: &ParamLayout, theta: &[f64]) -> Self {
        let s = layout.slots();
        let beta = layout
            .beta
            .iter()
            .zip(theta)
            .map(|(name, &value)| NamedValue { name: name.clone(), value })
            .collect();
        ParamSet {
            beta,
            ln_lambda0: s.lambda0.map(|k| theta[k]),
            ln_gamma_int: s.gamma_int.map(|k| theta[k]),
            ln_mu0: s.mu0.map(|k| theta[k]),
            ln_gamma_ext: s.gamma_ext.map(|k| theta[k]),
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.entries().into_iter().map(|(n, _)| n).collect()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.entries().into_iter().map(|(_, v)| v).collect()
    }

    fn entries(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self.beta.iter().map(|b| (b.name.clone(), b.value)).collect();
        let named = [
            (LN_LAMBDA0, self.ln_lambda0),
            (LN_GAMMA_INT, self.ln_gamma_int),
            (LN_MU0, self.ln_mu0),
            (LN_GAMMA_EXT, self.ln_gamma_ext),
        ];
        out.extend(named.into_iter().filter_map(|(n, v)| v.map(|v| (n.to_string(), v))));
        out
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            LN_LAMBDA0 => self.ln_lambda0,
            LN_GAMMA_INT => self.ln_gamma_int,
            LN_MU0 => self.ln_mu0,
            LN_GAMMA_EXT => self.ln_gamma_ext,
            _ => self.beta.iter().find(|b| b.name == name).map(|b| b.value),
        }
    }

    /// Values in layout order; missing entries are an error.
    pub fn to_layout_vec(&self, layout: &ParamLayout) -> Result<Vec<f64>> {
        layout
            .names()
            .iter()
            .map(|n| self.get(n).ok_or_else(|| Error::domain(format!("parameter `{n}` is missing"))))
            .collect()
    }

    fn beta_values(&self) -> Vec<f64> {
        self.beta.iter().map(|b| b.value).collect()
    }
}

/// Rate of a pair over a segment with covariates `x` (aligned with
/// `params.beta`).
pub fn pair_rate(params: &ParamSet, x: &[f64], zeta: bool) -> f64 {
    let base = if zeta { params.ln_mu0.unwrap_or(0.0) } else { params.ln_lambda0.unwrap_or(0.0) };
    let eta: f64 = params.beta.iter().zip(x).map(|(b, x)| b.value * x).sum::<f64>() + base;
    eta.exp()
}

/// Family, log baseline, and shape for one side of the model.
#[derive(Debug, Clone, Copy)]
struct Side {
    family: HazardFamily,
    ln_base: f64,
    shape: f64,
}

impl Side {
    #[inline]
    fn increment(&self, eta: f64, start: f64, stop: f64) -> f64 {
        if matches!(self.family, HazardFamily::Exponential)
            || (matches!(self.family, HazardFamily::Weibull) && self.shape == 1.0)
        {
            eta.exp() * (stop - start)
        } else {
            self.family.cumulative_hazard_ln_rate(eta, self.shape, stop)
                - self.family.cumulative_hazard_ln_rate(eta, self.shape, start)
        }
    }
}

/// Minus the cumulative-hazard increment of a row, and its hazard at the
/// event time when the row carries an event.
#[inline]
fn row_terms<'a>(
    side: &Side,
    beta: &[f64],
    segments: impl Iterator<Item = (f64, f64, &'a [f64])>,
    event: Option<f64>,
    ids: (u32, u32),
) -> Result<(f64, Option<f64>)> {
    let mut neg_cum = 0.0;
    let mut last_eta = side.ln_base;
    for (start, stop, x) in segments {
        let eta = side.ln_base + beta.iter().zip(x).map(|(b, x)| b * x).sum::<f64>();
        neg_cum -= side.increment(eta, start, stop);
        last_eta = eta;
    }
    let hazard = match event {
        None => None,
        Some(t) => {
            if t <= 0.0 && side.family.has_shape() && side.shape < 1.0 {
                return Err(Error::Evaluation {
                    source_id: ids.0,
                    subject_id: ids.1,
                    reason: "event at local time 0 with shape < 1 has infinite log hazard".into(),
                });
            }
            Some(side.family.hazard_ln_rate(last_eta, side.shape, t))
        }
    };
    Ok((neg_cum, hazard))
}

fn side_for(params: &ParamSet, spec: &ModelSpec, zeta: bool) -> Side {
    if zeta {
        Side {
            family: spec.external,
            ln_base: params.ln_mu0.unwrap_or(0.0),
            shape: params.ln_gamma_ext.map_or(1.0, f64::exp),
        }
    } else {
        Side {
            family: spec.internal,
            ln_base: params.ln_lambda0.unwrap_or(0.0),
            shape: params.ln_gamma_int.map_or(1.0, f64::exp),
        }
    }
}

fn row_segments(row: &PairRow) -> impl Iterator<Item = (f64, f64, &[f64])> {
    row.segments.iter().map(|s| (s.start, s.stop, s.x.as_slice()))
}

/// Log-likelihood contribution of one row when who-infected-whom is known.
/// Segment covariates are aligned with `params.beta`.
pub fn loglik_row_observed(row: &PairRow, params: &ParamSet, spec: &ModelSpec) -> Result<f64> {
    let event = match row.outcome {
        Outcome::Censored => None,
        Outcome::EventKnown => row.event_time,
        Outcome::EventCandidate => {
            return Err(Error::domain(format!(
                "pair ({}, {}) is an event candidate; use the unobserved likelihood",
                row.source, row.subject
            )))
        }
    };
    let side = side_for(params, spec, row.zeta());
    let (neg_cum, hazard) =
        row_terms(&side, &params.beta_values(), row_segments(row), event, (row.source, row.subject))?;
    Ok(neg_cum + hazard.map_or(0.0, f64::ln))
}

/// Total hazard of infectious contact with one subject at its infection
/// time, summed over its candidate rows.
pub fn total_hazard_at_event(candidates: &[&PairRow], params: &ParamSet, spec: &ModelSpec) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::domain("total hazard requested for an empty candidate set"));
    }
    let beta = params.beta_values();
    let mut total = 0.0;
    for row in candidates {
        let t = row.event_time.ok_or_else(|| {
            Error::domain(format!("pair ({}, {}) has no event time", row.source, row.subject))
        })?;
        let side = side_for(params, spec, row.zeta());
        let (_, h) = row_terms(&side, &beta, row_segments(row), Some(t), (row.source, row.subject))?;
        total += h.unwrap_or(0.0);
    }
    Ok(total)
}

/// Log-likelihood contribution of one subject from all of its rows when
/// who-infected-whom is not observed.
pub fn loglik_individual_unobserved(rows: &[&PairRow], params: &ParamSet, spec: &ModelSpec) -> Result<f64> {
    let beta = params.beta_values();
    let mut ll = 0.0;
    let mut total_hazard = 0.0;
    let mut infected = false;
    for row in rows {
        let side = side_for(params, spec, row.zeta());
        let event = row.outcome.is_event().then_some(row.event_time).flatten();
        let (neg_cum, h) = row_terms(&side, &beta, row_segments(row), event, (row.source, row.subject))?;
        ll += neg_cum;
        if let Some(h) = h {
            infected = true;
            total_hazard += h;
        }
    }
    if infected {
        if !(total_hazard > 0.0) {
            return Ok(f64::NEG_INFINITY);
        }
        ll += total_hazard.ln();
    }
    Ok(ll)
}

#[derive(Debug, Clone)]
struct RowRec {
    zeta: bool,
    segments: Range<usize>,
    event: Option<f64>,
    source: u32,
    subject: u32,
}

/// A dataset prepared for repeated likelihood evaluation under one model.
///
/// Rows are grouped by subject; the sum over subjects can be split into
/// contiguous partitions evaluated in parallel and reduced in partition
/// order, so a fixed partition count gives bit-identical results.
#[derive(Debug, Clone)]
pub struct LikelihoodModel {
    spec: ModelSpec,
    layout: ParamLayout,
    slots: Slots,
    starts: Vec<f64>,
    stops: Vec<f64>,
    xs: Vec<f64>,
    rows: Vec<RowRec>,
    subjects: Vec<Range<usize>>,
    partitions: usize,
    n_events: usize,
    person_time: f64,
}

impl LikelihoodModel {
    pub fn new(dataset: &PairDataset, spec: &ModelSpec) -> Result<Self> {
        let cols: Vec<usize> = spec
            .formula
            .iter()
            .map(|t| dataset.column_index(t).ok_or_else(|| Error::UnknownCovariate(t.clone())))
            .collect::<Result<_>>()?;
        let layout = ParamLayout::for_dataset(spec, dataset);
        let slots = layout.slots();

        let mut by_subject: BTreeMap<u32, Vec<&PairRow>> = BTreeMap::new();
        for row in &dataset.rows {
            by_subject.entry(row.subject).or_default().push(row);
        }

        let mut starts = Vec::new();
        let mut stops = Vec::new();
        let mut xs = Vec::new();
        let mut rows = Vec::with_capacity(dataset.rows.len());
        let mut subjects = Vec::with_capacity(by_subject.len());
        let mut n_events = 0;
        for group in by_subject.values() {
            let first = rows.len();
            let mut outcomes = (false, false);
            for row in group {
                let seg_first = starts.len();
                for s in &row.segments {
                    starts.push(s.start);
                    stops.push(s.stop);
                    xs.extend(cols.iter().map(|&k| s.x[k]));
                }
                match row.outcome {
                    Outcome::EventKnown => outcomes.0 = true,
                    Outcome::EventCandidate => outcomes.1 = true,
                    Outcome::Censored => {}
                }
                rows.push(RowRec {
                    zeta: row.zeta(),
                    segments: seg_first..starts.len(),
                    event: row.outcome.is_event().then_some(row.event_time).flatten(),
                    source: row.source,
                    subject: row.subject,
                });
            }
            let n_known = group.iter().filter(|r| r.outcome == Outcome::EventKnown).count();
            if n_known > 1 || (outcomes.0 && outcomes.1) {
                return Err(Error::inconsistent(format!(
                    "subject {} has more than one known infector",
                    group[0].subject
                )));
            }
            if outcomes.0 || outcomes.1 {
                n_events += 1;
            }
            subjects.push(first..rows.len());
        }
        Ok(LikelihoodModel {
            spec: spec.clone(),
            layout,
            slots,
            starts,
            stops,
            xs,
            rows,
            subjects,
            partitions: 1,
            n_events,
            person_time: dataset.person_time(),
        })
    }

    /// Evaluate the subject sum in `n` contiguous partitions.
    pub fn with_partitions(mut self, n: usize) -> Self {
        self.partitions = n.max(1);
        self
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn n_params(&self) -> usize {
        self.layout.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_events(&self) -> usize {
        self.n_events
    }

    pub fn person_time(&self) -> f64 {
        self.person_time
    }

    pub fn loglik(&self, params: &ParamSet) -> Result<f64> {
        self.loglik_vec(&params.to_layout_vec(&self.layout)?)
    }

    /// Log-likelihood at a parameter vector in layout order.
    pub fn loglik_vec(&self, theta: &[f64]) -> Result<f64> {
        if theta.len() != self.layout.len() {
            return Err(Error::domain(format!(
                "expected {} parameters, got {}",
                self.layout.len(),
                theta.len()
            )));
        }
        let s = self.slots;
        let beta = &theta[..s.n_beta];
        let internal = Side {
            family: self.spec.internal,
            ln_base: s.lambda0.map_or(0.0, |k| theta[k]),
            shape: s.gamma_int.map_or(1.0, |k| theta[k].exp()),
        };
        let external = Side {
            family: self.spec.external,
            ln_base: s.mu0.map_or(0.0, |k| theta[k]),
            shape: s.gamma_ext.map_or(1.0, |k| theta[k].exp()),
        };
        let eval = |range: Range<usize>| -> Result<f64> {
            let mut acc = 0.0;
            for subject in &self.subjects[range] {
                acc += self.subject_loglik(subject.clone(), beta, &internal, &external)?;
            }
            Ok(acc)
        };
        let n = self.subjects.len();
        if self.partitions <= 1 || n < 2 {
            return eval(0..n);
        }
        let chunk = n.div_ceil(self.partitions);
        let parts: Vec<Result<f64>> = (0..self.partitions)
            .into_par_iter()
            .map(|p| eval((p * chunk).min(n)..((p + 1) * chunk).min(n)))
            .collect();
        parts.into_iter().try_fold(0.0, |acc, p| Ok(acc + p?))
    }

    #[inline]
    fn subject_loglik(&self, rows: Range<usize>, beta: &[f64], internal: &Side, external: &Side) -> Result<f64> {
        let p = beta.len();
        let mut ll = 0.0;
        let mut total_hazard = 0.0;
        let mut infected = false;
        for row in &self.rows[rows] {
            let side = if row.zeta { external } else { internal };
            let segs = row
                .segments
                .clone()
                .map(|k| (self.starts[k], self.stops[k], &self.xs[k * p..(k + 1) * p]));
            let (neg_cum, h) = row_terms(side, beta, segs, row.event, (row.source, row.subject))?;
            ll += neg_cum;
            if let Some(h) = h {
                infected = true;
                total_hazard += h;
            }
        }
        if infected {
            if !(total_hazard > 0.0) {
                return Ok(f64::NEG_INFINITY);
            }
            ll += total_hazard.ln();
        }
        Ok(ll)
    }

    /// Stacked design rows `[x, 1 - ζ, ζ]` (intercepts only where present),
    /// one per segment, with the column names.
    pub(crate) fn design_rows(&self) -> (Vec<String>, Vec<Vec<f64>>) {
        let p = self.slots.n_beta;
        let mut names = self.layout.beta.clone();
        if self.slots.lambda0.is_some() {
            names.push(LN_LAMBDA0.into());
        }
        if self.slots.mu0.is_some() {
            names.push(LN_MU0.into());
        }
        let mut out = Vec::with_capacity(self.starts.len());
        for row in &self.rows {
            for k in row.segments.clone() {
                let mut v = self.xs[k * p..(k + 1) * p].to_vec();
                if self.slots.lambda0.is_some() {
                    v.push(if row.zeta { 0.0 } else { 1.0 });
                }
                if self.slots.mu0.is_some() {
                    v.push(if row.zeta { 1.0 } else { 0.0 });
                }
                out.push(v);
            }
        }
        (names, out)
    }
}

/// Log-likelihood of a whole dataset.
pub fn loglik_total(dataset: &PairDataset, params: &ParamSet, spec: &ModelSpec) -> Result<f64> {
    if dataset.rows.is_empty() {
        return Ok(0.0);
    }
    LikelihoodModel::new(dataset, spec)?.loglik(params)
}

/// Central-difference step for coordinate `k`.
pub fn fd_step(theta_k: f64) -> f64 {
    1e-5 * theta_k.abs().max(1.0)
}

fn finite_at(f: &impl Fn(&[f64]) -> Result<f64>, theta: &[f64]) -> Result<f64> {
    let v = f(theta)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("{theta:?}")))
    }
}

/// Central finite-difference gradient.
pub fn numeric_gradient(f: impl Fn(&[f64]) -> Result<f64>, theta: &[f64]) -> Result<Vec<f64>> {
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for k in 0..theta.len() {
        let h = fd_step(theta[k]);
        probe[k] = theta[k] + h;
        let up = finite_at(&f, &probe)?;
        probe[k] = theta[k] - h;
        let down = finite_at(&f, &probe)?;
        probe[k] = theta[k];
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Central finite-difference Hessian, symmetrized as `(H + Hᵀ) / 2`.
pub fn numeric_hessian(f: impl Fn(&[f64]) -> Result<f64>, theta: &[f64]) -> Result<Vec<Vec<f64>>> {
    let n = theta.len();
    let f0 = finite_at(&f, theta)?;
    let steps: Vec<f64> = theta.iter().map(|&t| fd_step(t)).collect();
    let mut probe = theta.to_vec();
    let mut h = vec![vec![0.0; n]; n];
    for i in 0..n {
        probe[i] = theta[i] + steps[i];
        let up = finite_at(&f, &probe)?;
        probe[i] = theta[i] - steps[i];
        let down = finite_at(&f, &probe)?;
        probe[i] = theta[i];
        h[i][i] = (up - 2.0 * f0 + down) / (steps[i] * steps[i]);
        for j in 0..i {
            let mut corner = |si: f64, sj: f64| {
                probe[i] = theta[i] + si * steps[i];
                probe[j] = theta[j] + sj * steps[j];
                let v = finite_at(&f, &probe);
                probe[i] = theta[i];
                probe[j] = theta[j];
                v
            };
            let pp = corner(1.0, 1.0)?;
            let pm = corner(1.0, -1.0)?;
            let mp = corner(-1.0, 1.0)?;
            let mm = corner(-1.0, -1.0)?;
            h[i][j] = (pp - pm - mp + mm) / (4.0 * steps[i] * steps[j]);
            h[j][i] = h[i][j];
        }
    }
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (h[i][j] + h[j][i]);
            h[i][j] = v;
            h[j][i] = v;
        }
    }
    Ok(h)
}

pub fn gradient(dataset: &PairDataset, params: &ParamSet, spec: &ModelSpec) -> Result<Vec<f64>> {
    let model = LikelihoodModel::new(dataset, spec)?;
    let theta = params.to_layout_vec(model.layout())?;
    numeric_gradient(|t| model.loglik_vec(t), &theta)
}

pub fn hessian(dataset: &PairDataset, params: &ParamSet, spec: &ModelSpec) -> Result<Vec<Vec<f64>>> {
    let model = LikelihoodModel::new(dataset, spec)?;
    let theta = params.to_layout_vec(model.layout())?;
    numeric_hessian(|t| model.loglik_vec(t), &theta)
}
