//! Biggins martingale tracking, L^p error estimation, and the L log L toolbox.

mod functions;
mod llogl;
mod track;

pub use functions::{exp_1, log_a, log_plus};
pub use llogl::{
    centered_functional, eb_check, hfk_partial_sums, liu_conditions, liu_conditions_mc, Condition, LlogLReport, Quantity,
    SeriesSetup, SeriesTerm, TailTrend, Verdict,
};
pub use track::{
    biggins_track, cauchy_distance, degeneracy_probe, lp_error, lp_root_with_bootstrap, martingale_increment_test,
    normalised_observable, IncrementReport, LpErrorReport, LpMoment, MartingaleTrack, BOOTSTRAP_RESAMPLES,
    INCREMENT_ROUNDING_FLOOR, MIN_REPLICATES,
};
