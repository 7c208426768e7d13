//! Pairwise survival models for infectious disease transmission data.

pub mod data;
pub mod error;
pub mod estimation;
pub mod hazard;
pub mod io;
pub mod likelihood;
pub mod optimize;
pub mod simulate;

pub use data::{
    build_design_matrix, build_pair_rows, ContactStructure, CovariatePath, ExtractOptions, Individual, InfectionRecord,
    Infector, Outcome, PairDataset, PairRow, Population, Segment, StudyDesign, Term, WiwMode, EXTERNAL,
};
pub use error::{Error, Result};
pub use estimation::{fit_mle, FitOptions, FitResult, Interval};
pub use hazard::{HazardFamily, RateShape};
pub use likelihood::{LikelihoodModel, ModelSpec, ParamLayout, ParamSet};
pub use simulate::{replicate_study, simulate, SimConfig, SimOutcome, StudyConfig, StudyResult, Truth};
