//! Household epidemic simulation and the replicate-study harness.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use log::info;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    build_design_matrix, build_pair_rows, ContactStructure, CovariatePath, ExtractOptions, Individual,
    InfectionRecord, Infector, PairDataset, Population, StudyDesign, Term, WiwMode, EXTERNAL,
};
use crate::error::{Error, Result};
use crate::estimation::{fit_mle, FitOptions, Interval};
use crate::hazard::{HazardFamily, RateShape};
use crate::likelihood::{ModelSpec, LN_GAMMA_INT, LN_LAMBDA0, LN_MU0};

/// True transmission parameters of a simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub beta_inf: f64,
    pub beta_sus: f64,
    pub ln_lambda0: f64,
    pub ln_mu0: f64,
    pub shape_int: f64,
    pub shape_ext: f64,
}

impl Default for Truth {
    fn default() -> Self {
        Truth { beta_inf: 0.0, beta_sus: 0.0, ln_lambda0: 0.0, ln_mu0: 0.0, shape_int: 1.0, shape_ext: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_households: usize,
    pub household_size: usize,
    pub internal: HazardFamily,
    pub external: HazardFamily,
    pub truth: Truth,
    /// Name of the Bernoulli covariate.
    pub covariate: String,
    pub covariate_p: f64,
    pub infectious_period: f64,
    pub latent_period: f64,
    /// Stop once this many people are infected.
    pub max_infections: Option<usize>,
    /// Stop at this calendar time.
    pub max_time: Option<f64>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_households: 100,
            household_size: 6,
            internal: HazardFamily::Exponential,
            external: HazardFamily::Exponential,
            truth: Truth::default(),
            covariate: "x".into(),
            covariate_p: 0.5,
            infectious_period: 1.0,
            latent_period: 0.0,
            max_infections: Some(150),
            max_time: None,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_households == 0 || self.household_size == 0 {
            return Err(Error::domain("household count and size must be positive"));
        }
        if self.max_infections.is_none() && self.max_time.is_none() {
            return Err(Error::domain("a stop rule (max infections or max time) is required"));
        }
        if self.max_infections == Some(0) || self.max_time.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::domain("stop rule must be positive"));
        }
        if !(self.infectious_period > 0.0) || !(self.latent_period >= 0.0) {
            return Err(Error::domain("infectious period must be positive and latent period non-negative"));
        }
        if !(0.0..=1.0).contains(&self.covariate_p) {
            return Err(Error::domain("covariate probability must lie in [0, 1]"));
        }
        RateShape::new(1.0, self.truth.shape_int)?;
        RateShape::new(1.0, self.truth.shape_ext)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub population: Population,
    pub infections: Vec<InfectionRecord>,
    pub contacts: ContactStructure,
    pub truth: Truth,
    /// Calendar time at which observation stopped.
    pub end_time: f64,
    /// False when the stop rule never fired.
    pub complete: bool,
}

#[derive(Debug, Clone, Copy)]
struct Contact {
    time: f64,
    source: u32,
    subject: u32,
}

impl PartialEq for Contact {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Contact {}

impl PartialOrd for Contact {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Contact {
    // reversed so that BinaryHeap pops the earliest contact
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.subject.cmp(&self.subject))
            .then_with(|| other.source.cmp(&self.source))
    }
}

fn uniform_open(rng: &mut impl Rng) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Simulate one epidemic in disjoint, fully connected households.
pub fn simulate(config: &SimConfig) -> Result<SimOutcome> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let truth = config.truth;
    let n = config.n_households * config.household_size;
    let size = config.household_size;
    let household = |id: u32| (id as usize - 1) / size + 1;

    let x: Vec<f64> = (0..n).map(|_| f64::from(u8::from(rng.random_bool(config.covariate_p)))).collect();
    let xi = |id: u32| x[id as usize - 1];

    let mut queue = BinaryHeap::new();
    for id in 1..=n as u32 {
        let rate = (truth.beta_sus * xi(id) + truth.ln_mu0).exp();
        let t = config.external.sample_time(RateShape { rate, shape: truth.shape_ext }, uniform_open(&mut rng))?;
        queue.push(Contact { time: t, source: EXTERNAL, subject: id });
    }

    let mut infection_time = vec![f64::INFINITY; n];
    let mut infections = Vec::new();
    let mut end_time = config.max_time.unwrap_or(f64::INFINITY);
    let mut complete = false;
    while let Some(c) = queue.pop() {
        if config.max_time.is_some_and(|m| c.time > m) {
            complete = true;
            break;
        }
        let j = c.subject as usize - 1;
        if infection_time[j].is_finite() {
            continue;
        }
        infection_time[j] = c.time;
        infections.push(InfectionRecord { subject: c.subject, infector: Infector::from_id(c.source), time: c.time });

        let onset = c.time + config.latent_period;
        let h = household(c.subject);
        let first = ((h - 1) * size + 1) as u32;
        for k in first..first + size as u32 {
            if k == c.subject || infection_time[k as usize - 1].is_finite() {
                continue;
            }
            let rate = (truth.beta_inf * xi(c.subject) + truth.beta_sus * xi(k) + truth.ln_lambda0).exp();
            let tau =
                config.internal.sample_time(RateShape { rate, shape: truth.shape_int }, uniform_open(&mut rng))?;
            if tau <= config.infectious_period {
                queue.push(Contact { time: onset + tau, source: c.subject, subject: k });
            }
        }

        if config.max_infections.is_some_and(|m| infections.len() >= m) {
            end_time = c.time;
            complete = true;
            break;
        }
    }
    if !complete {
        end_time = match config.max_time {
            Some(m) => m,
            None => infections.last().map_or(0.0, |r| r.time),
        };
    }

    let individuals = (1..=n as u32)
        .map(|id| {
            Individual::new(id, household(id) as u32)
                .infected_at(infection_time[id as usize - 1])
                .with_periods(config.latent_period, config.infectious_period)
                .with_covariate(config.covariate.clone(), CovariatePath::constant(xi(id)))
        })
        .collect();
    Ok(SimOutcome {
        population: Population::new(individuals)?,
        infections,
        contacts: ContactStructure::households(),
        truth,
        end_time,
        complete,
    })
}

/// Draw `(β_inf, β_sus)` independently from Uniform(-1, 1).
pub fn draw_truth(rng: &mut impl Rng) -> (f64, f64) {
    (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

/// Pair rows of a simulated epidemic under one design, with `<x>_inf` and
/// `<x>_sus` columns.
pub fn analysis_dataset(outcome: &SimOutcome, covariate: &str, design: StudyDesign, wiw: WiwMode) -> Result<PairDataset> {
    let raw = build_pair_rows(
        &outcome.population,
        &outcome.contacts,
        &outcome.infections,
        &ExtractOptions::new(design, wiw, outcome.end_time),
        &[covariate.to_string()],
    )?;
    build_design_matrix(&raw, &[Term::inf(covariate), Term::sus(covariate)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub sim: SimConfig,
    pub designs: Vec<StudyDesign>,
    pub wiw: Vec<WiwMode>,
    pub n_replicates: usize,
    /// Redraw `(β_inf, β_sus)` for every replicate.
    pub draw_truth: bool,
    pub seed: u64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            sim: SimConfig::default(),
            designs: vec![
                StudyDesign::CompleteCohort,
                StudyDesign::ContactTracingDelayedEntry,
                StudyDesign::ContactTracingNoDelayedEntry,
                StudyDesign::IgnoreExternal,
            ],
            wiw: vec![WiwMode::Observed, WiwMode::Unobserved],
            n_replicates: 200,
            draw_truth: true,
            seed: 1,
        }
    }
}

/// One parameter estimate from one analysis of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    pub design: StudyDesign,
    pub wiw: WiwMode,
    pub parameter: String,
    pub truth: f64,
    pub estimate: Option<f64>,
    pub wald: Option<Interval>,
    pub lr: Option<Interval>,
    pub converged: bool,
    pub complete: bool,
}

/// One cell of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub design: StudyDesign,
    pub wiw: WiwMode,
    pub parameter: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub records: Vec<ReplicateRecord>,
    pub summary: Vec<SummaryRow>,
}

impl StudyResult {
    pub fn metric(&self, design: StudyDesign, wiw: WiwMode, parameter: &str, metric: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|r| r.design == design && r.wiw == wiw && r.parameter == parameter && r.metric == metric)
            .map(|r| r.value)
    }
}

pub const METRICS: [&str; 7] = ["n", "n_nonconverged", "n_incomplete", "mean_bias", "mse", "wald_coverage", "lr_coverage"];

/// Per-replicate seeds drawn from a ChaCha stream of the master seed.
pub fn replicate_seeds(master: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..n).map(|_| rng.next_u64()).collect()
}

fn truth_values(sim: &SimConfig, truth: &Truth, covariate: &str) -> BTreeMap<String, f64> {
    let mut t = BTreeMap::from([
        (format!("{covariate}_inf"), truth.beta_inf),
        (format!("{covariate}_sus"), truth.beta_sus),
        (LN_LAMBDA0.to_string(), truth.ln_lambda0),
        (LN_MU0.to_string(), truth.ln_mu0),
    ]);
    if sim.internal.has_shape() {
        t.insert(LN_GAMMA_INT.to_string(), truth.shape_int.ln());
    }
    t
}

fn run_replicate(config: &StudyConfig, replicate: usize, seed: u64, options: &FitOptions) -> Result<Vec<ReplicateRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sim = config.sim.clone();
    if config.draw_truth {
        let (bi, bs) = draw_truth(&mut rng);
        sim.truth.beta_inf = bi;
        sim.truth.beta_sus = bs;
    }
    sim.seed = rng.next_u64();
    let outcome = simulate(&sim)?;
    let truth = truth_values(&sim, &sim.truth, &sim.covariate);
    let spec = ModelSpec::new(sim.internal, HazardFamily::Exponential)
        .with_formula(&[format!("{}_inf", sim.covariate), format!("{}_sus", sim.covariate)]);

    let mut records = Vec::new();
    for &design in &config.designs {
        for &wiw in &config.wiw {
            let dataset = analysis_dataset(&outcome, &sim.covariate, design, wiw)?;
            let fit = fit_mle(&dataset, &spec, options);
            if let Err(e) = &fit {
                log::warn!("replicate {replicate} ({}, {}): {e}", design.name(), wiw.name());
            }
            let fit = fit.ok();
            for (parameter, &value) in &truth {
                if parameter == LN_MU0 && !design.includes_external() {
                    continue;
                }
                let est = fit.as_ref().and_then(|f| f.estimate(parameter));
                records.push(ReplicateRecord {
                    replicate,
                    seed,
                    design,
                    wiw,
                    parameter: parameter.clone(),
                    truth: value,
                    estimate: est.map(|e| e.estimate),
                    wald: est.and_then(|e| e.wald),
                    lr: est.and_then(|e| e.lr),
                    converged: fit.as_ref().is_some_and(|f| f.converged),
                    complete: outcome.complete,
                });
            }
        }
    }
    Ok(records)
}

/// Simulate `n_replicates` epidemics and analyze each under every design
/// and who-infected-whom mode. Replicates run in parallel; results do not
/// depend on the number of workers.
pub fn replicate_study(config: &StudyConfig, options: &FitOptions) -> Result<StudyResult> {
    if config.n_replicates == 0 {
        return Err(Error::domain("at least one replicate is required"));
    }
    config.sim.validate()?;
    let seeds = replicate_seeds(config.seed, config.n_replicates);
    let per_rep: Vec<Result<Vec<ReplicateRecord>>> = seeds
        .par_iter()
        .enumerate()
        .map(|(r, &seed)| {
            let out = run_replicate(config, r, seed, options);
            info!("replicate {} of {} done", r + 1, config.n_replicates);
            out
        })
        .collect();
    let mut records = Vec::new();
    for r in per_rep {
        records.extend(r?);
    }
    let summary = summarize(config, &records);
    Ok(StudyResult { records, summary })
}

/// Bias, MSE, and coverage over converged fits, per design, mode, and
/// parameter. A missing interval counts as not covering.
pub fn summarize(config: &StudyConfig, records: &[ReplicateRecord]) -> Vec<SummaryRow> {
    let mut parameters: Vec<String> = Vec::new();
    for r in records {
        if !parameters.contains(&r.parameter) {
            parameters.push(r.parameter.clone());
        }
    }
    let mut out = Vec::new();
    for &design in &config.designs {
        for &wiw in &config.wiw {
            for parameter in &parameters {
                let cell: Vec<&ReplicateRecord> = records
                    .iter()
                    .filter(|r| r.design == design && r.wiw == wiw && &r.parameter == parameter)
                    .collect();
                if cell.is_empty() {
                    continue;
                }
                let used: Vec<&&ReplicateRecord> = cell.iter().filter(|r| r.converged && r.estimate.is_some()).collect();
                let m = used.len() as f64;
                let err = |r: &ReplicateRecord| r.estimate.unwrap_or(f64::NAN) - r.truth;
                let mean_bias = used.iter().map(|r| err(r)).sum::<f64>() / m;
                let mse = used.iter().map(|r| err(r).powi(2)).sum::<f64>() / m;
                let cover = |iv: Option<Interval>, t: f64| iv.is_some_and(|iv| iv.contains(t));
                let wald = used.iter().filter(|r| cover(r.wald, r.truth)).count() as f64 / m;
                let lr = used.iter().filter(|r| cover(r.lr, r.truth)).count() as f64 / m;
                let values = [
                    m,
                    (cell.len() - used.len()) as f64,
                    cell.iter().filter(|r| !r.complete).count() as f64,
                    mean_bias,
                    mse,
                    wald,
                    lr,
                ];
                for (metric, value) in METRICS.iter().zip(values) {
                    out.push(SummaryRow { design, wiw, parameter: parameter.clone(), metric: metric.to_string(), value });
                }
            }
        }
    }
    out
}
