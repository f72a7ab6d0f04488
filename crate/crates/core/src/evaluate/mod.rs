//! Rolling-origin evaluation, relative accuracy indices and rank tests.

mod archive;
mod metrics;
mod report;
mod stats;

pub use archive::{
    build_archive, rolling_origin, train_window_count, ForecastArchive, ReconciledSet, Reconciler,
    TagOptions,
};
pub use metrics::{avg_rel_rmse, rel_rmse, rmse};
pub use report::{evaluate, EvaluationReport};
pub use stats::{
    friedman_test, nemenyi, nemenyi_q, rank_rows, FriedmanResult, NemenyiResult, MAX_NEMENYI_METHODS,
};
