//! Comparison identifiers minimizing the same simulation error: CMA-ES,
//! multi-start least squares, and entropy search with the nested Monte Carlo
//! acquisition.

mod cma_es;
mod entropy_search;
mod least_squares;

pub use cma_es::{identify_cma_es, CmaEs};
pub use entropy_search::{identify_entropy_search, EntropySearch};
pub use least_squares::{identify_least_squares, LeastSquaresOptions};

use crate::dynamics::ModelParams;
use crate::objective::TraceEntry;

/// Best model found by a point-estimate identifier and its evaluation trace.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub theta: ModelParams,
    pub error: f64,
    pub trace: Vec<TraceEntry>,
}
