//! Temporal validation: metrics, the streaming harness and model comparison.

mod compare;
mod harness;
mod metrics;
mod png;

pub use compare::{compare_models, Comparison, REPORT_COLUMNS};
pub use harness::{
    carried_state, evaluate_stream, evaluate_unrolled, score_predictions, stream_predictions, unrolled_predictions,
    EvalReport,
};
pub use metrics::{auroc, mean_bce};
pub use png::write_risk_png;
