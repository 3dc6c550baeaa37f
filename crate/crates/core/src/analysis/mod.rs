//! Measurement: representation similarity, correlation, accuracy tables and
//! the annotation cost model.

pub mod cka;
pub mod cost;
pub mod eval;
pub mod stats;

pub use cka::{cka_accuracy_correlation, linear_cka, stratified_pairs, CkaCorrelation};
pub use cost::{annotation_cost, CostParams, DEFAULT_SOURCE_COST_CENTS};
pub use eval::{domain_accuracies, gap_table, relative_gain, zero_shot_eval, EvalTable};
pub use stats::{pearson, spearman};
