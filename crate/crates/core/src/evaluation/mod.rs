//! Metrics, seeded splits, k-fold cross-validation and grid search.

mod metrics;
mod search;
mod split;

pub use metrics::{
    average_ranks, compute_metrics, mae, mse, plcc, r2, rmse, srcc, MetricError, MetricsReport, Side,
};
pub use search::{cross_validate, grid_candidates, grid_search, CvResult, EvalError, GridResult, GridRow};
pub use split::{kfold_split, train_test_split, SplitError, SplitPlan};
