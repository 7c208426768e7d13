//! Epidemic data model: individuals, contact structure, exposure and
//! infectious sets, and the pair-level risk-interval datasets built from
//! them.

mod design;
mod pairs;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use design::{build_design_matrix, Term, TermKind};
pub use pairs::{build_pair_rows, ExtractOptions};

/// Source id of the external pseudo-source.
pub const EXTERNAL: u32 = 0;

/// A covariate that is piecewise constant in calendar time.
///
/// The value at time `t` is the value set by the last change at or before
/// `t`, so a risk segment `(a, b]` carries the value in force at `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariatePath {
    initial: f64,
    changes: Vec<(f64, f64)>,
}

impl CovariatePath {
    pub fn constant(value: f64) -> Self {
        CovariatePath { initial: value, changes: Vec::new() }
    }

    /// `before` until calendar time `at`, `after` from then on.
    pub fn step(before: f64, at: f64, after: f64) -> Self {
        CovariatePath { initial: before, changes: vec![(at, after)] }
    }

    pub fn with_changes(initial: f64, mut changes: Vec<(f64, f64)>) -> Self {
        changes.sort_by(|a, b| a.0.total_cmp(&b.0));
        CovariatePath { initial, changes }
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.changes
            .iter()
            .take_while(|(at, _)| *at <= t)
            .last()
            .map_or(self.initial, |&(_, v)| v)
    }

    pub fn is_constant(&self) -> bool {
        self.changes.is_empty()
    }

    pub fn change_times(&self) -> impl Iterator<Item = f64> + '_ {
        self.changes.iter().map(|&(t, _)| t)
    }

    pub(crate) fn scale_time(&mut self, c: f64) {
        for change in &mut self.changes {
            change.0 *= c;
        }
    }
}

/// One person's natural history and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub id: u32,
    pub group: u32,
    /// Calendar infection time; `f64::INFINITY` when never infected.
    pub infection_time: f64,
    pub latent: f64,
    pub infectious: f64,
    pub covariates: BTreeMap<String, CovariatePath>,
    pub at_risk_external: bool,
    pub entry_time: f64,
}

impl Individual {
    pub fn new(id: u32, group: u32) -> Self {
        Individual {
            id,
            group,
            infection_time: f64::INFINITY,
            latent: 0.0,
            infectious: 1.0,
            covariates: BTreeMap::new(),
            at_risk_external: true,
            entry_time: 0.0,
        }
    }

    pub fn infected_at(mut self, t: f64) -> Self {
        self.infection_time = t;
        self
    }

    pub fn with_periods(mut self, latent: f64, infectious: f64) -> Self {
        self.latent = latent;
        self.infectious = infectious;
        self
    }

    pub fn with_covariate(mut self, name: impl Into<String>, path: CovariatePath) -> Self {
        self.covariates.insert(name.into(), path);
        self
    }

    pub fn is_infected(&self) -> bool {
        self.infection_time.is_finite()
    }

    /// Onset of infectiousness, `t_i + ε_i`.
    pub fn onset(&self) -> f64 {
        self.infection_time + self.latent
    }

    pub fn removal(&self) -> f64 {
        self.onset() + self.infectious
    }

    pub fn covariate_at(&self, name: &str, t: f64) -> Result<f64> {
        self.covariates
            .get(name)
            .map(|p| p.value_at(t))
            .ok_or_else(|| Error::UnknownCovariate(name.to_string()))
    }

    fn validate(&self) -> Result<()> {
        if self.id == EXTERNAL {
            return Err(Error::inconsistent("person id 0 is reserved for the external source"));
        }
        if !(self.infectious > 0.0) || !(self.latent >= 0.0) {
            return Err(Error::inconsistent(format!(
                "person {}: latent period must be >= 0 and infectious period > 0",
                self.id
            )));
        }
        if self.infection_time.is_nan() || self.infection_time == f64::NEG_INFINITY {
            return Err(Error::inconsistent(format!("person {}: invalid infection time", self.id)));
        }
        Ok(())
    }
}

/// A validated set of individuals indexed by id.
#[derive(Debug, Clone, Default)]
pub struct Population {
    individuals: Vec<Individual>,
    index: HashMap<u32, usize>,
}

impl PartialEq for Population {
    fn eq(&self, other: &Self) -> bool {
        self.individuals == other.individuals
    }
}

impl Population {
    pub fn new(individuals: Vec<Individual>) -> Result<Self> {
        let mut index = HashMap::with_capacity(individuals.len());
        for (k, ind) in individuals.iter().enumerate() {
            ind.validate()?;
            if index.insert(ind.id, k).is_some() {
                return Err(Error::inconsistent(format!("duplicate person id {}", ind.id)));
            }
        }
        Ok(Population { individuals, index })
    }

    pub fn get(&self, id: u32) -> Option<&Individual> {
        self.index.get(&id).map(|&k| &self.individuals[k])
    }

    pub(crate) fn require(&self, id: u32) -> Result<&Individual> {
        self.get(id)
            .ok_or_else(|| Error::inconsistent(format!("unknown person id {id}")))
    }

    pub fn individuals(&self) -> &[Individual] {
        &self.individuals
    }

    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    /// Member ids of each group, both in ascending order.
    pub fn groups(&self) -> BTreeMap<u32, Vec<u32>> {
        let mut groups: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for ind in &self.individuals {
            groups.entry(ind.group).or_default().push(ind.id);
        }
        for members in groups.values_mut() {
            members.sort_unstable();
        }
        groups
    }

    /// Covariate names present on every individual, sorted.
    pub fn covariate_names(&self) -> Vec<String> {
        let mut iter = self.individuals.iter();
        let Some(first) = iter.next() else {
            return Vec::new();
        };
        let mut names: BTreeSet<&String> = first.covariates.keys().collect();
        for ind in iter {
            names.retain(|n| ind.covariates.contains_key(*n));
        }
        names.into_iter().cloned().collect()
    }

    /// Multiply every time and duration by `c`.
    pub fn rescale_time(&self, c: f64) -> Population {
        let individuals = self
            .individuals
            .iter()
            .map(|ind| {
                let mut ind = ind.clone();
                ind.infection_time *= c;
                ind.latent *= c;
                ind.infectious *= c;
                ind.entry_time *= c;
                for path in ind.covariates.values_mut() {
                    path.scale_time(c);
                }
                ind
            })
            .collect();
        Population { individuals, index: self.index.clone() }
    }
}

/// Who can make infectious contact with whom.
///
/// Groups are complete graphs with no edges between groups; the external
/// source reaches everyone flagged `at_risk_external`. Individual internal
/// edges can be switched off.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContactStructure {
    excluded: BTreeSet<(u32, u32)>,
}

impl ContactStructure {
    pub fn households() -> Self {
        ContactStructure::default()
    }

    /// Set `C_ij = 0` for the ordered pair.
    pub fn exclude(&mut self, source: u32, subject: u32) {
        self.excluded.insert((source, subject));
    }

    /// `C_ij` for source `i` (0 = external) and subject `j`.
    pub fn contact(&self, population: &Population, source: u32, subject: u32) -> bool {
        let Some(j) = population.get(subject) else {
            return false;
        };
        if source == EXTERNAL {
            return j.at_risk_external;
        }
        if source == subject || self.excluded.contains(&(source, subject)) {
            return false;
        }
        population.get(source).is_some_and(|i| i.group == j.group)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Infector {
    External,
    Person(u32),
    Unknown,
}

impl Infector {
    pub fn from_id(id: u32) -> Self {
        if id == EXTERNAL {
            Infector::External
        } else {
            Infector::Person(id)
        }
    }

    pub fn source_id(self) -> Option<u32> {
        match self {
            Infector::External => Some(EXTERNAL),
            Infector::Person(id) => Some(id),
            Infector::Unknown => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfectionRecord {
    pub subject: u32,
    pub infector: Infector,
    pub time: f64,
}

/// Whether who-infected-whom is available to the analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WiwMode {
    Observed,
    Unobserved,
}

impl WiwMode {
    pub const ALL: [WiwMode; 2] = [WiwMode::Observed, WiwMode::Unobserved];

    pub fn name(self) -> &'static str {
        match self {
            WiwMode::Observed => "observed",
            WiwMode::Unobserved => "unobserved",
        }
    }
}

impl fmt::Display for WiwMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WiwMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "observed" => Ok(WiwMode::Observed),
            "unobserved" => Ok(WiwMode::Unobserved),
            other => Err(Error::schema(format!(
                "unknown wiw mode `{other}` (expected observed or unobserved)"
            ))),
        }
    }
}

/// Which person-time at risk of external infection enters the analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyDesign {
    /// Everyone followed from time zero.
    CompleteCohort,
    /// Households followed from the index case's infection time; earlier
    /// external risk is left-truncated. Households without infection are
    /// excluded.
    ContactTracingDelayedEntry,
    /// Households with at least one infection followed retroactively from
    /// time zero.
    ContactTracingNoDelayedEntry,
    /// External pairs dropped altogether.
    IgnoreExternal,
}

impl StudyDesign {
    pub const ALL: [StudyDesign; 4] = [
        StudyDesign::CompleteCohort,
        StudyDesign::ContactTracingDelayedEntry,
        StudyDesign::ContactTracingNoDelayedEntry,
        StudyDesign::IgnoreExternal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StudyDesign::CompleteCohort => "complete-cohort",
            StudyDesign::ContactTracingDelayedEntry => "ct-delayed-entry",
            StudyDesign::ContactTracingNoDelayedEntry => "ct-no-delayed-entry",
            StudyDesign::IgnoreExternal => "ignore-external",
        }
    }

    pub fn includes_external(self) -> bool {
        !matches!(self, StudyDesign::IgnoreExternal)
    }
}

impl fmt::Display for StudyDesign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StudyDesign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StudyDesign::ALL
            .into_iter()
            .find(|d| d.name() == s.trim())
            .ok_or_else(|| {
                Error::schema(format!(
                    "unknown study design `{}` (expected one of: {})",
                    s.trim(),
                    StudyDesign::ALL.map(|d| d.name()).join(", ")
                ))
            })
    }
}

/// Sources to whom `j` was exposed while susceptible.
pub fn exposure_set(subject: u32, population: &Population, contacts: &ContactStructure) -> Result<BTreeSet<u32>> {
    let j = population.require(subject)?;
    let mut set = BTreeSet::new();
    if contacts.contact(population, EXTERNAL, subject) {
        set.insert(EXTERNAL);
    }
    for i in population.individuals() {
        if i.is_infected() && i.onset() < j.infection_time && contacts.contact(population, i.id, subject) {
            set.insert(i.id);
        }
    }
    Ok(set)
}

/// Sources that could have infected `j`.
///
/// With a known infector the set is that infector alone. Otherwise it holds
/// the external source (if `C_0j`) and every contact infectious at `t_j`.
/// Individuals sharing `j`'s infection time are never included, so
/// co-primary cases cannot be each other's infector.
pub fn infectious_set(
    subject: u32,
    population: &Population,
    contacts: &ContactStructure,
    known: Option<Infector>,
) -> Result<BTreeSet<u32>> {
    let j = population.require(subject)?;
    if !j.is_infected() {
        return Ok(BTreeSet::new());
    }
    if let Some(id) = known.and_then(Infector::source_id) {
        return Ok(BTreeSet::from([id]));
    }
    let set = possible_sources(j, population, contacts);
    if set.is_empty() {
        return Err(Error::inconsistent(format!(
            "person {subject} is infected at {} but has no possible source",
            j.infection_time
        )));
    }
    Ok(set)
}

fn possible_sources(j: &Individual, population: &Population, contacts: &ContactStructure) -> BTreeSet<u32> {
    let t_j = j.infection_time;
    let mut set = BTreeSet::new();
    if contacts.contact(population, EXTERNAL, j.id) {
        set.insert(EXTERNAL);
    }
    for i in population.individuals() {
        if i.is_infected()
            && i.infection_time != t_j
            && i.onset() < t_j
            && t_j <= i.removal()
            && contacts.contact(population, i.id, j.id)
        {
            set.insert(i.id);
        }
    }
    set
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Censored,
    EventKnown,
    EventCandidate,
}

impl Outcome {
    pub fn name(self) -> &'static str {
        match self {
            Outcome::Censored => "censored",
            Outcome::EventKnown => "event_known",
            Outcome::EventCandidate => "event_candidate",
        }
    }

    pub fn is_event(self) -> bool {
        !matches!(self, Outcome::Censored)
    }
}

impl FromStr for Outcome {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "censored" => Ok(Outcome::Censored),
            "event_known" => Ok(Outcome::EventKnown),
            "event_candidate" => Ok(Outcome::EventCandidate),
            other => Err(Error::schema(format!("unknown outcome `{other}`"))),
        }
    }
}

/// A piece of a pair's risk interval on the pair's local clock, with the
/// covariate vector in force over `(start, stop]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub stop: f64,
    pub x: Vec<f64>,
}

/// One ordered pair's risk experience.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRow {
    pub source: u32,
    pub subject: u32,
    /// Calendar time of the local clock's zero.
    pub origin: f64,
    pub segments: Vec<Segment>,
    pub outcome: Outcome,
    /// Local time of the subject's infection, when the row carries an event.
    pub event_time: Option<f64>,
}

impl PairRow {
    /// External pair indicator ζ.
    pub fn zeta(&self) -> bool {
        self.source == EXTERNAL
    }

    pub fn risk_start(&self) -> f64 {
        self.segments.first().map_or(0.0, |s| s.start)
    }

    pub fn risk_stop(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.stop)
    }

    pub fn exposure(&self) -> f64 {
        self.segments.iter().map(|s| s.stop - s.start).sum()
    }

    pub(crate) fn validate(&self, width: usize) -> Result<()> {
        let fail = |msg: &str| {
            Err(Error::inconsistent(format!(
                "pair ({}, {}): {msg}",
                self.source, self.subject
            )))
        };
        if self.segments.is_empty() {
            return fail("no risk segments");
        }
        let mut prev_stop = None;
        for s in &self.segments {
            if !(s.start >= 0.0 && s.start < s.stop) {
                return fail("segment must satisfy 0 <= start < stop");
            }
            if prev_stop.is_some_and(|p| p != s.start) {
                return fail("segments are not contiguous");
            }
            if s.x.len() != width {
                return fail("covariate vector has the wrong length");
            }
            prev_stop = Some(s.stop);
        }
        match (self.outcome.is_event(), self.event_time) {
            (true, Some(t)) if t == self.risk_stop() => Ok(()),
            (true, _) => fail("event time must equal the end of the risk interval"),
            (false, Some(_)) => fail("censored row carries an event time"),
            (false, None) => Ok(()),
        }
    }
}

/// Pair rows whose segment vectors hold raw covariates: the source's values
/// for `covariates` followed by the subject's (source values are zero on
/// external rows).
#[derive(Debug, Clone, PartialEq)]
pub struct RawPairRows {
    pub covariates: Vec<String>,
    pub rows: Vec<PairRow>,
}

/// Pair rows whose segment vectors hold design-matrix columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairDataset {
    pub columns: Vec<String>,
    pub rows: Vec<PairRow>,
}

impl PairDataset {
    pub fn new(columns: Vec<String>, rows: Vec<PairRow>) -> Result<Self> {
        for row in &rows {
            row.validate(columns.len())?;
        }
        Ok(PairDataset { columns, rows })
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn has_internal(&self) -> bool {
        self.rows.iter().any(|r| !r.zeta())
    }

    pub fn has_external(&self) -> bool {
        self.rows.iter().any(PairRow::zeta)
    }

    /// Number of subjects with an observed infection.
    pub fn n_events(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.outcome.is_event())
            .map(|r| r.subject)
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn person_time(&self) -> f64 {
        self.rows.iter().map(PairRow::exposure).sum()
    }

    /// Keep only the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<PairDataset> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| self.column_index(n).ok_or_else(|| Error::UnknownCovariate(n.clone())))
            .collect::<Result<_>>()?;
        let rows = self
            .rows
            .iter()
            .map(|r| PairRow {
                segments: r
                    .segments
                    .iter()
                    .map(|s| Segment {
                        start: s.start,
                        stop: s.stop,
                        x: idx.iter().map(|&k| s.x[k]).collect(),
                    })
                    .collect(),
                ..r.clone()
            })
            .collect();
        Ok(PairDataset { columns: names.to_vec(), rows })
    }

    /// Multiply every time on every row by `c`.
    pub fn rescale_time(&self, c: f64) -> PairDataset {
        let rows = self
            .rows
            .iter()
            .map(|r| PairRow {
                origin: r.origin * c,
                event_time: r.event_time.map(|t| t * c),
                segments: r
                    .segments
                    .iter()
                    .map(|s| Segment { start: s.start * c, stop: s.stop * c, x: s.x.clone() })
                    .collect(),
                ..r.clone()
            })
            .collect();
        PairDataset { columns: self.columns.clone(), rows }
    }
}
