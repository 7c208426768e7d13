use std::fmt;
use std::str::FromStr;

use log::warn;

use super::{PairDataset, PairRow, RawPairRows, Segment};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TermKind {
    /// Covariate of the source (`<name>_inf`); zero on external rows.
    Infectiousness,
    /// Covariate of the subject (`<name>_sus`).
    Susceptibility,
    /// 1 when source and subject share the covariate value (`same_<name>`);
    /// zero on external rows.
    Shared,
}

/// One design-matrix column, optionally interacted with ζ (`<term>:zeta`).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Term {
    pub kind: TermKind,
    pub covariate: String,
    pub zeta_interaction: bool,
}

impl Term {
    pub fn inf(covariate: impl Into<String>) -> Self {
        Term { kind: TermKind::Infectiousness, covariate: covariate.into(), zeta_interaction: false }
    }

    pub fn sus(covariate: impl Into<String>) -> Self {
        Term { kind: TermKind::Susceptibility, covariate: covariate.into(), zeta_interaction: false }
    }

    pub fn with_zeta(mut self) -> Self {
        self.zeta_interaction = true;
        self
    }

    pub fn name(&self) -> String {
        self.to_string()
    }

    fn value(&self, src: f64, sub: f64, zeta: bool) -> f64 {
        let base = match self.kind {
            TermKind::Infectiousness if zeta => 0.0,
            TermKind::Infectiousness => src,
            TermKind::Susceptibility => sub,
            TermKind::Shared if zeta => 0.0,
            TermKind::Shared => f64::from(u8::from(src == sub)),
        };
        if self.zeta_interaction {
            if zeta {
                base
            } else {
                0.0
            }
        } else {
            base
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            TermKind::Infectiousness => write!(f, "{}_inf", self.covariate)?,
            TermKind::Susceptibility => write!(f, "{}_sus", self.covariate)?,
            TermKind::Shared => write!(f, "same_{}", self.covariate)?,
        }
        if self.zeta_interaction {
            f.write_str(":zeta")?;
        }
        Ok(())
    }
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (body, zeta) = if let Some(b) = s.strip_suffix(":zeta") {
            (b, true)
        } else if let Some(b) = s.strip_prefix("zeta:") {
            (b, true)
        } else {
            (s, false)
        };
        let (kind, covariate) = if let Some(c) = body.strip_suffix("_inf") {
            (TermKind::Infectiousness, c)
        } else if let Some(c) = body.strip_suffix("_sus") {
            (TermKind::Susceptibility, c)
        } else if let Some(c) = body.strip_prefix("same_") {
            (TermKind::Shared, c)
        } else {
            return Err(Error::schema(format!(
                "formula term `{s}` must look like <covariate>_inf, <covariate>_sus, or same_<covariate>, \
                 optionally followed by :zeta"
            )));
        };
        if covariate.is_empty() {
            return Err(Error::schema(format!("formula term `{s}` names no covariate")));
        }
        Ok(Term { kind, covariate: covariate.to_string(), zeta_interaction: zeta })
    }
}

/// Expand raw per-person covariates into design-matrix columns.
pub fn build_design_matrix(raw: &RawPairRows, terms: &[Term]) -> Result<PairDataset> {
    let width = raw.covariates.len();
    let index: Vec<usize> = terms
        .iter()
        .map(|t| {
            raw.covariates
                .iter()
                .position(|c| *c == t.covariate)
                .ok_or_else(|| Error::UnknownCovariate(t.covariate.clone()))
        })
        .collect::<Result<_>>()?;

    let rows: Vec<PairRow> = raw
        .rows
        .iter()
        .map(|row| {
            let zeta = row.zeta();
            let segments = row
                .segments
                .iter()
                .map(|seg| Segment {
                    start: seg.start,
                    stop: seg.stop,
                    x: terms
                        .iter()
                        .zip(&index)
                        .map(|(t, &k)| t.value(seg.x[k], seg.x[width + k], zeta))
                        .collect(),
                })
                .collect();
            PairRow { segments, ..row.clone() }
        })
        .collect();

    let columns: Vec<String> = terms.iter().map(Term::name).collect();
    warn_degenerate_columns(&columns, &rows);
    PairDataset::new(columns, rows)
}

fn warn_degenerate_columns(columns: &[String], rows: &[PairRow]) {
    let column = |k: usize| rows.iter().flat_map(move |r| r.segments.iter().map(move |s| s.x[k]));
    for a in 0..columns.len() {
        if column(a).all(|v| v == 0.0) {
            warn!("design column `{}` is identically zero", columns[a]);
            continue;
        }
        for b in (a + 1)..columns.len() {
            if column(a).eq(column(b)) {
                warn!("design columns `{}` and `{}` are identical", columns[a], columns[b]);
            }
        }
    }
}
