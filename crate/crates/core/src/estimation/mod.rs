//! MAP and maximum likelihood fitting, starting values and intervals.

mod fit;
pub mod optimizer;
mod tsls;

pub use fit::{
    credible_intervals, map_fit, nam_mle, normal_intervals, FitConfig, FitResult, Interval, Objective,
};
pub use tsls::{init_2sls, stable_bounds};
