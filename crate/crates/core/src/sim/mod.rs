//! Channels, Monte-Carlo error-rate estimation and SNR search.

pub mod channel;
pub mod montecarlo;
pub mod snr;

pub use channel::{
    awgn_llr, awgn_llr_from_noise, bsc_output, ebn0_to_snr_db, sigma_to_db, snr_to_ebn0_db,
    snr_to_sigma, standard_normal, trial_rng, ChannelKind, SnrMetric,
};
pub use montecarlo::{parse_grid, run_montecarlo, run_point, wilson, PointResult, SimResult, StopRule};
pub use snr::{bler_crossing, crossing_db, find_bler_crossing, Crossing};
