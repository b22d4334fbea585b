//! Per-cycle least-squares extraction, Fisher-information sensitivities,
//! bias scans and cross-talk.

mod channels;
mod crosstalk;
mod fit;
mod scan;

pub use channels::{cycle_start, fit_trace, ChannelSeries, CHANNEL_HEADER};
pub use crosstalk::{crosstalk, suppression_factor, Crosstalk, CrosstalkOptions};
pub use fit::{
    dc_sensitivity, fisher_information, fit_cycle, normalised_condition, per_root_hz,
    sensitivities, FitResult, LinearFitter,
};
pub use scan::{
    bias_scan, golden_section, BiasScan, Optimum, ScanOptions, SensitivityReport, NORMALISED_HEADER,
};
