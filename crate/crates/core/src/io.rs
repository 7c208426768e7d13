//! File formats: household and pair-row CSVs, simulation outputs, summary
//! tables, and `key = value` configuration files.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use log::info;

use crate::data::{
    CovariatePath, Individual, InfectionRecord, Infector, Outcome, PairDataset, PairRow, Population, Segment,
    StudyDesign, WiwMode,
};
use crate::error::{Error, Result};
use crate::hazard::HazardFamily;
use crate::simulate::{ReplicateRecord, SimConfig, StudyConfig, SummaryRow};

/// Fixed leading columns of the pair-row CSV.
pub const PAIR_COLUMNS: [&str; 8] =
    ["source_id", "subject_id", "zeta", "origin", "seg_start", "seg_stop", "outcome", "event_time"];

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn parse_f64(field: &str, column: &str, line: u64) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| !v.is_nan())
        .ok_or_else(|| Error::schema(format!("line {line}: column `{column}` has non-numeric value `{field}`")))
}

fn parse_u32(field: &str, column: &str, line: u64) -> Result<u32> {
    field
        .trim()
        .parse::<u32>()
        .map_err(|_| Error::schema(format!("line {line}: column `{column}` must be a non-negative integer, got `{field}`")))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::schema(format!("missing required column `{name}`")))
}

/// Write a design dataset, one line per segment.
pub fn write_pair_rows<W: Write>(writer: W, dataset: &PairDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = PAIR_COLUMNS.to_vec();
    header.extend(dataset.columns.iter().map(String::as_str));
    w.write_record(&header)?;
    for row in &dataset.rows {
        for seg in &row.segments {
            let mut rec = vec![
                row.source.to_string(),
                row.subject.to_string(),
                u8::from(row.zeta()).to_string(),
                row.origin.to_string(),
                seg.start.to_string(),
                seg.stop.to_string(),
                row.outcome.name().to_string(),
                fmt_opt(row.event_time),
            ];
            rec.extend(seg.x.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a pair-row CSV. Consecutive lines with the same source and subject
/// are segments of one row.
pub fn read_pair_rows<R: Read>(reader: R) -> Result<PairDataset> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = r.headers()?.clone();
    for (k, name) in PAIR_COLUMNS.iter().enumerate() {
        if headers.get(k) != Some(*name) {
            return Err(Error::schema(format!("pair-row column {} must be `{name}`", k + 1)));
        }
    }
    let columns: Vec<String> = headers.iter().skip(PAIR_COLUMNS.len()).map(str::to_string).collect();
    let mut rows: Vec<PairRow> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let source = parse_u32(&rec[0], "source_id", line)?;
        let subject = parse_u32(&rec[1], "subject_id", line)?;
        let zeta = match rec[2].trim() {
            "0" => false,
            "1" => true,
            other => return Err(Error::schema(format!("line {line}: zeta must be 0 or 1, got `{other}`"))),
        };
        if zeta != (source == 0) {
            return Err(Error::schema(format!("line {line}: zeta must be 1 exactly when source_id is 0")));
        }
        let origin = parse_f64(&rec[3], "origin", line)?;
        let start = parse_f64(&rec[4], "seg_start", line)?;
        let stop = parse_f64(&rec[5], "seg_stop", line)?;
        let outcome: Outcome = rec[6]
            .parse()
            .map_err(|_| Error::schema(format!("line {line}: unknown outcome `{}`", &rec[6])))?;
        let event_time = match rec[7].trim() {
            "" => None,
            s => Some(parse_f64(s, "event_time", line)?),
        };
        let x = (PAIR_COLUMNS.len()..rec.len())
            .map(|k| parse_f64(&rec[k], &headers[k], line))
            .collect::<Result<Vec<f64>>>()?;
        let segment = Segment { start, stop, x };
        match rows.last_mut() {
            Some(last) if last.source == source && last.subject == subject => {
                if last.outcome != outcome || last.event_time != event_time || last.origin != origin {
                    return Err(Error::schema(format!(
                        "line {line}: segments of pair ({source}, {subject}) disagree on outcome, event time, or origin"
                    )));
                }
                last.segments.push(segment);
            }
            _ => rows.push(PairRow { source, subject, origin, segments: vec![segment], outcome, event_time }),
        }
    }
    PairDataset::new(columns, rows).map_err(|e| Error::schema(e.to_string()))
}

pub fn read_pair_rows_file(path: &Path) -> Result<PairDataset> {
    read_pair_rows(fs::File::open(path)?)
}

pub fn write_pair_rows_file(path: &Path, dataset: &PairDataset) -> Result<()> {
    write_pair_rows(fs::File::create(path)?, dataset)
}

/// Natural-history assumptions for household surveillance data, in days.
#[derive(Debug, Clone, PartialEq)]
pub struct NaturalHistoryConfig {
    pub incubation_days: f64,
    pub latent_days: f64,
    pub infectious_days: f64,
    pub followup_days: f64,
    /// Binary covariates that switch on a fixed delay after the index
    /// case's symptom onset.
    pub td_covariates: Vec<String>,
    pub td_start_after_index_onset_days: f64,
}

impl Default for NaturalHistoryConfig {
    fn default() -> Self {
        NaturalHistoryConfig {
            incubation_days: 2.0,
            latent_days: 0.0,
            infectious_days: 6.0,
            followup_days: 14.0,
            td_covariates: Vec::new(),
            td_start_after_index_onset_days: 1.0,
        }
    }
}

impl NaturalHistoryConfig {
    pub fn from_key_values(kv: &mut KeyValues) -> Result<Self> {
        let d = Self::default();
        let cfg = NaturalHistoryConfig {
            incubation_days: kv.f64_or("incubation_days", d.incubation_days)?,
            latent_days: kv.f64_or("latent_days", d.latent_days)?,
            infectious_days: kv.f64_or("infectious_days", d.infectious_days)?,
            followup_days: kv.f64_or("followup_days", d.followup_days)?,
            td_covariates: kv.list_or("td_covariates", vec![])?,
            td_start_after_index_onset_days: kv.f64_or("td_start_after_index_onset_days", d.td_start_after_index_onset_days)?,
        };
        for (key, v) in [
            ("incubation_days", cfg.incubation_days),
            ("latent_days", cfg.latent_days),
            ("followup_days", cfg.followup_days),
            ("td_start_after_index_onset_days", cfg.td_start_after_index_onset_days),
        ] {
            if !(v >= 0.0) {
                return Err(kv.error_at(key, "must be non-negative"));
            }
        }
        if !(cfg.infectious_days > 0.0) {
            return Err(kv.error_at("infectious_days", "must be positive"));
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut kv = KeyValues::from_file(path)?;
        let cfg = Self::from_key_values(&mut kv)?;
        kv.finish()?;
        Ok(cfg)
    }
}

/// Household surveillance data converted to the analysis time scale.
#[derive(Debug, Clone)]
pub struct HouseholdData {
    pub population: Population,
    pub infections: Vec<InfectionRecord>,
    pub covariates: Vec<String>,
    pub excluded_households: Vec<u32>,
    /// Calendar day corresponding to analysis time 0.
    pub origin_day: f64,
    /// Whether every infection carries its infector.
    pub infectors_known: bool,
}

struct HouseholdLine {
    line: u64,
    household: u32,
    person: u32,
    onset_day: Option<f64>,
    infector: Option<u32>,
    values: Vec<Option<f64>>,
    starts: Vec<Option<f64>>,
}

/// Parse a household CSV.
///
/// Required columns are `household_id`, `person_id`, and `onset_day` (empty
/// when never ill). An optional `infector_id` column records the infector
/// (0 for external). A column `<name>_start_day` makes covariate `<name>`
/// time-dependent: it is 0 before that day and takes the listed value from
/// then on. Every other column is a numeric covariate. Households with a
/// missing covariate value are excluded.
///
/// Infection time is onset day minus the incubation period; the analysis
/// clock starts at the earliest infection time.
pub fn parse_household_csv<R: Read>(reader: R, nh: &NaturalHistoryConfig) -> Result<HouseholdData> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = r.headers()?.clone();
    let c_household = column(&headers, "household_id")?;
    let c_person = column(&headers, "person_id")?;
    let c_onset = column(&headers, "onset_day")?;
    let c_infector = headers.iter().position(|h| h == "infector_id");
    let fixed: BTreeSet<usize> = [Some(c_household), Some(c_person), Some(c_onset), c_infector].into_iter().flatten().collect();

    let mut covariates = Vec::new();
    let mut value_cols = Vec::new();
    let mut start_cols = Vec::new();
    for (k, h) in headers.iter().enumerate() {
        if fixed.contains(&k) || h.ends_with("_start_day") {
            continue;
        }
        if headers.iter().filter(|o| *o == h).count() > 1 {
            return Err(Error::schema(format!("duplicate column `{h}`")));
        }
        covariates.push(h.to_string());
        value_cols.push(k);
        start_cols.push(headers.iter().position(|o| o == format!("{h}_start_day")));
    }
    for h in headers.iter() {
        if let Some(base) = h.strip_suffix("_start_day") {
            if !covariates.iter().any(|c| c == base) {
                return Err(Error::schema(format!("column `{h}` has no matching covariate column `{base}`")));
            }
        }
    }
    for name in &nh.td_covariates {
        if !covariates.contains(name) {
            return Err(Error::UnknownCovariate(name.clone()));
        }
    }

    let mut lines = Vec::new();
    let mut seen = HashMap::new();
    for rec in r.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let household = parse_u32(&rec[c_household], "household_id", line)?;
        let person = parse_u32(&rec[c_person], "person_id", line)?;
        if person == 0 {
            return Err(Error::schema(format!("line {line}: person_id 0 is reserved for the external source")));
        }
        if let Some(prev) = seen.insert(person, line) {
            return Err(Error::schema(format!("line {line}: person_id {person} already used on line {prev}")));
        }
        let onset_day = match rec[c_onset].trim() {
            "" => None,
            s => {
                let d = parse_f64(s, "onset_day", line)?;
                if d < 0.0 {
                    return Err(Error::schema(format!("line {line}: onset_day must be non-negative")));
                }
                Some(d)
            }
        };
        let infector = match c_infector.map(|c| rec[c].trim()) {
            None | Some("") => None,
            Some(s) => Some(parse_u32(s, "infector_id", line)?),
        };
        let mut values = Vec::with_capacity(value_cols.len());
        let mut starts = Vec::with_capacity(value_cols.len());
        for (k, &c) in value_cols.iter().enumerate() {
            values.push(match rec[c].trim() {
                "" => None,
                s => Some(parse_f64(s, &headers[c], line)?),
            });
            starts.push(match start_cols[k].map(|sc| rec[sc].trim()) {
                None | Some("") => None,
                Some(s) => Some(parse_f64(s, &headers[start_cols[k].unwrap()], line)?),
            });
        }
        lines.push(HouseholdLine { line, household, person, onset_day, infector, values, starts });
    }

    let incomplete: BTreeSet<u32> =
        lines.iter().filter(|l| l.values.iter().any(Option::is_none)).map(|l| l.household).collect();
    if !incomplete.is_empty() {
        info!("excluded {} household(s) with missing covariate values", incomplete.len());
    }
    lines.retain(|l| !incomplete.contains(&l.household));

    let origin_day = lines
        .iter()
        .filter_map(|l| l.onset_day)
        .map(|d| d - nh.incubation_days)
        .fold(f64::INFINITY, f64::min);
    let origin_day = if origin_day.is_finite() { origin_day } else { 0.0 };

    let mut index_onset: BTreeMap<u32, f64> = BTreeMap::new();
    for l in &lines {
        if let Some(d) = l.onset_day {
            let e = index_onset.entry(l.household).or_insert(d);
            *e = e.min(d);
        }
    }

    let mut individuals = Vec::with_capacity(lines.len());
    let mut infections = Vec::new();
    let mut infectors_known = true;
    for l in &lines {
        let mut ind = Individual::new(l.person, l.household).with_periods(nh.latent_days, nh.infectious_days);
        if let Some(d) = l.onset_day {
            let t = d - nh.incubation_days - origin_day;
            ind = ind.infected_at(t);
            let infector = l.infector.map_or(Infector::Unknown, Infector::from_id);
            infectors_known &= infector != Infector::Unknown;
            infections.push(InfectionRecord { subject: l.person, infector, time: t });
        } else if l.infector.is_some() {
            return Err(Error::schema(format!("line {}: infector_id given for a person with no onset", l.line)));
        }
        for (k, name) in covariates.iter().enumerate() {
            let v = l.values[k].expect("complete case");
            let start_day = match l.starts[k] {
                Some(s) => Some(s),
                None if nh.td_covariates.contains(name) => {
                    index_onset.get(&l.household).map(|d| d + nh.td_start_after_index_onset_days)
                }
                None => None,
            };
            let path = match start_day {
                Some(s) if v != 0.0 => CovariatePath::step(0.0, s - origin_day, v),
                Some(_) => CovariatePath::constant(0.0),
                None if nh.td_covariates.contains(name) && v != 0.0 => CovariatePath::constant(0.0),
                None => CovariatePath::constant(v),
            };
            ind = ind.with_covariate(name.clone(), path);
        }
        individuals.push(ind);
    }
    infections.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.subject.cmp(&b.subject)));
    Ok(HouseholdData {
        population: Population::new(individuals).map_err(|e| Error::schema(e.to_string()))?,
        infections,
        covariates,
        excluded_households: incomplete.into_iter().collect(),
        origin_day,
        infectors_known: infectors_known && !lines.is_empty(),
    })
}

pub fn read_household_csv(path: &Path, nh: &NaturalHistoryConfig) -> Result<HouseholdData> {
    parse_household_csv(fs::File::open(path)?, nh)
}

/// Population table: one line per person with constant covariates.
pub fn write_population<W: Write>(writer: W, population: &Population) -> Result<()> {
    let names = population.covariate_names();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["person_id", "household_id", "infection_time", "latent", "infectious"];
    header.extend(names.iter().map(String::as_str));
    w.write_record(&header)?;
    for p in population.individuals() {
        let mut rec = vec![
            p.id.to_string(),
            p.group.to_string(),
            if p.is_infected() { p.infection_time.to_string() } else { String::new() },
            p.latent.to_string(),
            p.infectious.to_string(),
        ];
        for n in &names {
            rec.push(p.covariate_at(n, 0.0)?.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Infection records: subject, infector (0 external, empty unknown), time.
pub fn write_infections<W: Write>(writer: W, infections: &[InfectionRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["subject_id", "infector_id", "time"])?;
    for r in infections {
        let infector = r.infector.source_id().map(|s| s.to_string()).unwrap_or_default();
        w.write_record([r.subject.to_string(), infector, r.time.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(writer: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["design", "wiw", "parameter", "metric", "value"])?;
    for r in rows {
        w.write_record([r.design.name(), r.wiw.name(), &r.parameter, &r.metric, &r.value.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_replicates<W: Write>(writer: W, records: &[ReplicateRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "replicate", "seed", "design", "wiw", "parameter", "truth", "estimate", "wald_lo", "wald_hi", "lr_lo", "lr_hi",
        "converged", "complete",
    ])?;
    for r in records {
        let ends = |iv: Option<crate::estimation::Interval>| {
            (fmt_opt(iv.and_then(|i| i.lo)), fmt_opt(iv.and_then(|i| i.hi)))
        };
        let (wl, wh) = ends(r.wald);
        let (ll, lh) = ends(r.lr);
        w.write_record([
            r.replicate.to_string(),
            r.seed.to_string(),
            r.design.name().to_string(),
            r.wiw.name().to_string(),
            r.parameter.clone(),
            r.truth.to_string(),
            fmt_opt(r.estimate),
            wl,
            wh,
            ll,
            lh,
            r.converged.to_string(),
            r.complete.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parsed `key = value` file. Lines starting with `#` and blank lines are
/// ignored. Values are consumed by typed accessors; [`KeyValues::finish`]
/// rejects keys nobody consumed.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    path: String,
    entries: BTreeMap<String, (usize, String)>,
    lines: BTreeMap<String, usize>,
}

impl KeyValues {
    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.trim();
            if s.is_empty() || s.starts_with('#') {
                continue;
            }
            let Some((k, v)) = s.split_once('=') else {
                return Err(Error::Config { path: path.into(), line, message: format!("expected `key = value`, got `{s}`") });
            };
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config { path: path.into(), line, message: "empty key".into() });
            }
            if let Some((prev, _)) = entries.insert(key.clone(), (line, v.trim().to_string())) {
                return Err(Error::Config { path: path.into(), line, message: format!("`{key}` already set on line {prev}") });
            }
        }
        let lines = entries.iter().map(|(k, (l, _))| (k.clone(), *l)).collect();
        Ok(KeyValues { path: path.into(), entries, lines })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn error_at(&self, key: &str, message: &str) -> Error {
        let line = self.lines.get(key).copied().unwrap_or(0);
        Error::Config { path: self.path.clone(), line, message: format!("`{key}` {message}") }
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &str, what: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, v)) => v.parse::<T>().map(Some).map_err(|_| Error::Config {
                path: self.path.clone(),
                line,
                message: format!("`{key}` must be {what}, got `{v}`"),
            }),
        }
    }

    pub fn f64_or(&mut self, key: &str, default: f64) -> Result<f64> {
        Ok(self.parsed::<f64>(key, "a number")?.unwrap_or(default))
    }

    pub fn opt_f64(&mut self, key: &str) -> Result<Option<f64>> {
        self.parsed(key, "a number")
    }

    pub fn usize_or(&mut self, key: &str, default: usize) -> Result<usize> {
        Ok(self.parsed::<usize>(key, "a non-negative integer")?.unwrap_or(default))
    }

    pub fn opt_usize(&mut self, key: &str) -> Result<Option<usize>> {
        self.parsed(key, "a non-negative integer")
    }

    pub fn u64_or(&mut self, key: &str, default: u64) -> Result<u64> {
        Ok(self.parsed::<u64>(key, "a non-negative integer")?.unwrap_or(default))
    }

    pub fn bool_or(&mut self, key: &str, default: bool) -> Result<bool> {
        Ok(self.parsed::<bool>(key, "true or false")?.unwrap_or(default))
    }

    pub fn string_or(&mut self, key: &str, default: &str) -> String {
        self.take(key).map_or_else(|| default.to_string(), |(_, v)| v)
    }

    pub fn family_or(&mut self, key: &str, default: HazardFamily) -> Result<HazardFamily> {
        Ok(self.parsed::<HazardFamily>(key, "exponential, weibull, or loglogistic")?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn list_or(&mut self, key: &str, default: Vec<String>) -> Result<Vec<String>> {
        Ok(match self.take(key) {
            None => default,
            Some((_, v)) => v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
        })
    }

    pub fn parsed_list<T: std::str::FromStr>(&mut self, key: &str, default: Vec<T>, what: &str) -> Result<Vec<T>> {
        let Some((line, v)) = self.take(key) else { return Ok(default) };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<T>().map_err(|_| Error::Config {
                    path: self.path.clone(),
                    line,
                    message: format!("`{key}`: `{s}` is not {what}"),
                })
            })
            .collect()
    }

    /// Fail on keys that were never consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, (line, _))) => Err(Error::Config { path: self.path, line, message: format!("unknown key `{key}`") }),
        }
    }
}

/// Simulation settings from a config file; missing keys keep defaults.
pub fn sim_config_from(kv: &mut KeyValues) -> Result<SimConfig> {
    let d = SimConfig::default();
    let has_time = kv.entries.contains_key("max_time");
    let cfg = SimConfig {
        n_households: kv.usize_or("n_households", d.n_households)?,
        household_size: kv.usize_or("household_size", d.household_size)?,
        internal: kv.family_or("internal_family", d.internal)?,
        external: kv.family_or("external_family", d.external)?,
        truth: crate::simulate::Truth {
            beta_inf: kv.f64_or("beta_inf", d.truth.beta_inf)?,
            beta_sus: kv.f64_or("beta_sus", d.truth.beta_sus)?,
            ln_lambda0: kv.f64_or("ln_lambda0", d.truth.ln_lambda0)?,
            ln_mu0: kv.f64_or("ln_mu0", d.truth.ln_mu0)?,
            shape_int: kv.f64_or("shape_int", d.truth.shape_int)?,
            shape_ext: kv.f64_or("shape_ext", d.truth.shape_ext)?,
        },
        covariate: kv.string_or("covariate", &d.covariate),
        covariate_p: kv.f64_or("covariate_p", d.covariate_p)?,
        infectious_period: kv.f64_or("infectious_period", d.infectious_period)?,
        latent_period: kv.f64_or("latent_period", d.latent_period)?,
        max_infections: match kv.opt_usize("max_infections")? {
            Some(0) => None,
            Some(n) => Some(n),
            None if has_time => None,
            None => d.max_infections,
        },
        max_time: kv.opt_f64("max_time")?,
        seed: kv.u64_or("seed", d.seed)?,
    };
    cfg.validate().map_err(|e| Error::Config { path: kv.path.clone(), line: 0, message: e.to_string() })?;
    Ok(cfg)
}

/// Replicate-study settings: simulation keys plus `designs`, `wiw`,
/// `n_replicates`, and `draw_truth`.
pub fn study_config_from(kv: &mut KeyValues) -> Result<StudyConfig> {
    let d = StudyConfig::default();
    let sim = sim_config_from(kv)?;
    let designs = kv.parsed_list::<StudyDesign>("designs", d.designs.clone(), "a study design")?;
    let wiw = kv.parsed_list::<WiwMode>("wiw", d.wiw.clone(), "observed or unobserved")?;
    let n_replicates = kv.usize_or("n_replicates", d.n_replicates)?;
    let draw_truth = kv.bool_or("draw_truth", d.draw_truth)?;
    if n_replicates == 0 {
        return Err(kv.error_at("n_replicates", "must be at least 1"));
    }
    Ok(StudyConfig { seed: sim.seed, sim, designs, wiw, n_replicates, draw_truth })
}
