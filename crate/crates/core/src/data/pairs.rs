use std::collections::{BTreeSet, HashMap};

use log::debug;

use super::{
    possible_sources, ContactStructure, Individual, InfectionRecord, Infector, Outcome, PairRow, Population,
    RawPairRows, Segment, StudyDesign, WiwMode, EXTERNAL,
};
use crate::error::{Error, Result};

/// How pair rows are extracted from an epidemic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractOptions {
    pub design: StudyDesign,
    pub wiw: WiwMode,
    /// Calendar stopping time `T`.
    pub followup_end: f64,
    /// When set, each household's follow-up instead ends this long after
    /// its index case's infection time. Only valid for designs that select
    /// households through an index case.
    pub followup_after_index: Option<f64>,
}

impl ExtractOptions {
    pub fn new(design: StudyDesign, wiw: WiwMode, followup_end: f64) -> Self {
        ExtractOptions { design, wiw, followup_end, followup_after_index: None }
    }
}

/// Observation window `(start, end]` for one household.
struct Window {
    start: f64,
    end: f64,
    external: bool,
}

fn household_window(design: StudyDesign, opts: &ExtractOptions, index_time: f64) -> Result<Option<Window>> {
    let end = match opts.followup_after_index {
        Some(d) => {
            if design == StudyDesign::CompleteCohort {
                return Err(Error::domain(
                    "follow-up relative to the index case requires a contact-tracing design",
                ));
            }
            index_time + d
        }
        None => opts.followup_end,
    };
    let has_infection = index_time.is_finite() && index_time <= end;
    let window = match design {
        StudyDesign::CompleteCohort => Some(Window { start: 0.0, end, external: true }),
        StudyDesign::ContactTracingDelayedEntry => {
            has_infection.then_some(Window { start: index_time, end, external: true })
        }
        StudyDesign::ContactTracingNoDelayedEntry => {
            has_infection.then_some(Window { start: 0.0, end, external: true })
        }
        StudyDesign::IgnoreExternal => has_infection.then_some(Window { start: 0.0, end, external: false }),
    };
    Ok(window)
}

/// Build the risk-interval dataset for one study design.
///
/// Internal rows run on the source's infectious-age clock over the part of
/// `(onset_i, removal_i]` in which `j` is susceptible and observed. External
/// rows run on the common calendar clock from the subject's entry. Rows with
/// zero risk time are dropped.
///
/// With who-infected-whom observed, the infector's row carries the event and
/// every other row of `j` is censored at `t_j`. Without it, every row whose
/// source is in `j`'s infectious set is an event candidate. An infection that
/// has no candidate row because the design drops external pairs is treated
/// as censoring of the internal rows.
pub fn build_pair_rows(
    population: &Population,
    contacts: &ContactStructure,
    infections: &[InfectionRecord],
    opts: &ExtractOptions,
    covariates: &[String],
) -> Result<RawPairRows> {
    let mut infectors: HashMap<u32, Infector> = HashMap::with_capacity(infections.len());
    for rec in infections {
        let person = population.require(rec.subject)?;
        if person.infection_time != rec.time {
            return Err(Error::inconsistent(format!(
                "infection record for person {} at {} disagrees with the population ({})",
                rec.subject, rec.time, person.infection_time
            )));
        }
        infectors.insert(rec.subject, rec.infector);
    }
    for ind in population.individuals() {
        for name in covariates {
            if !ind.covariates.contains_key(name) {
                return Err(Error::UnknownCovariate(format!("{name} (missing for person {})", ind.id)));
            }
        }
    }

    let width = covariates.len();
    let mut rows = Vec::new();
    for members in population.groups().values() {
        let people: Vec<&Individual> = members.iter().map(|&id| population.require(id)).collect::<Result<_>>()?;
        let index_time = people.iter().map(|p| p.infection_time).fold(f64::INFINITY, f64::min);
        let Some(window) = household_window(opts.design, opts, index_time)? else {
            continue;
        };
        for j in &people {
            let entry = window.start.max(j.entry_time);
            let observed_infection = j.is_infected() && j.infection_time <= window.end;
            let exit = if observed_infection { j.infection_time } else { window.end };
            if exit <= entry {
                continue;
            }
            let mut subject_rows: Vec<PairRow> = Vec::new();

            if window.external && contacts.contact(population, EXTERNAL, j.id) {
                subject_rows.push(make_row(None, j, 0.0, entry, exit, covariates, width));
            }
            for i in &people {
                if i.id == j.id || !i.is_infected() || i.infection_time > window.end {
                    continue;
                }
                if !contacts.contact(population, i.id, j.id) {
                    continue;
                }
                let start = i.onset().max(entry);
                let stop = i.removal().min(exit);
                if stop > start {
                    subject_rows.push(make_row(Some(i), j, i.onset(), start, stop, covariates, width));
                }
            }

            if observed_infection {
                mark_event(
                    population,
                    contacts,
                    j,
                    &mut subject_rows,
                    opts.wiw,
                    infectors.get(&j.id).copied(),
                    window.external,
                )?;
            }
            rows.extend(subject_rows);
        }
    }
    Ok(RawPairRows { covariates: covariates.to_vec(), rows })
}

fn make_row(
    source: Option<&Individual>,
    subject: &Individual,
    origin: f64,
    start: f64,
    stop: f64,
    covariates: &[String],
    width: usize,
) -> PairRow {
    let mut cuts: BTreeSet<OrderedTime> = BTreeSet::new();
    let people = source.into_iter().chain(std::iter::once(subject));
    for person in people {
        for name in covariates {
            for t in person.covariates[name].change_times() {
                if t > start && t < stop {
                    cuts.insert(OrderedTime(t));
                }
            }
        }
    }
    let mut bounds = Vec::with_capacity(cuts.len() + 2);
    bounds.push(start);
    bounds.extend(cuts.into_iter().map(|t| t.0));
    bounds.push(stop);

    let segments = bounds
        .windows(2)
        .map(|w| {
            let mut x = Vec::with_capacity(2 * width);
            for name in covariates {
                x.push(source.map_or(0.0, |i| i.covariates[name].value_at(w[0])));
            }
            for name in covariates {
                x.push(subject.covariates[name].value_at(w[0]));
            }
            Segment { start: w[0] - origin, stop: w[1] - origin, x }
        })
        .collect();
    PairRow {
        source: source.map_or(EXTERNAL, |i| i.id),
        subject: subject.id,
        origin,
        segments,
        outcome: Outcome::Censored,
        event_time: None,
    }
}

fn mark_event(
    population: &Population,
    contacts: &ContactStructure,
    j: &Individual,
    rows: &mut [PairRow],
    wiw: WiwMode,
    recorded: Option<Infector>,
    external_included: bool,
) -> Result<()> {
    let t_j = j.infection_time;
    let ends_at_event = |row: &PairRow| row.origin + row.risk_stop() == t_j;
    match wiw {
        WiwMode::Observed => {
            let infector = match recorded {
                Some(Infector::Unknown) | None => {
                    return Err(Error::inconsistent(format!(
                        "who-infected-whom is marked observed but person {} has no recorded infector",
                        j.id
                    )))
                }
                Some(v) => v,
            };
            let source = infector.source_id().expect("known infector");
            match rows.iter_mut().find(|r| r.source == source) {
                Some(row) if ends_at_event(row) => {
                    row.outcome = Outcome::EventKnown;
                    row.event_time = Some(row.risk_stop());
                }
                Some(_) => {
                    return Err(Error::inconsistent(format!(
                        "pair ({source}, {}): infection at {t_j} lies outside the risk interval",
                        j.id
                    )))
                }
                None if source == EXTERNAL && !external_included => {}
                None => {
                    return Err(Error::inconsistent(format!(
                        "pair ({source}, {}): recorded infector has no row at risk",
                        j.id
                    )))
                }
            }
        }
        WiwMode::Unobserved => {
            let candidates = possible_sources(j, population, contacts);
            let mut found = false;
            for row in rows.iter_mut() {
                if candidates.contains(&row.source) && ends_at_event(row) {
                    row.outcome = Outcome::EventCandidate;
                    row.event_time = Some(row.risk_stop());
                    found = true;
                }
            }
            if !found {
                if external_included && contacts.contact(population, EXTERNAL, j.id) {
                    return Err(Error::inconsistent(format!(
                        "person {} is infected at {t_j} with no source row at risk",
                        j.id
                    )));
                }
                debug!("person {}: infection has no internal candidate; rows censored", j.id);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrderedTime(f64);

impl Eq for OrderedTime {}

impl PartialOrd for OrderedTime {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrderedTime {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}
