//! The pulsed measurement cycle, steady-state settling, signature
//! generation and the continuously pumped reference schemes.

mod reference;
mod run;
mod schedule;
mod signatures;

pub use reference::{
    cw_polarisation, cw_responses, run_cw_scc, run_serf_reference, serf_cell, serf_closed_form,
    CwOptions, CwResponses,
};
pub use run::{
    balance_spin_exchange, cycles_in, initial_state, mean_alkali_polarisation, relative_rms_change,
    run_cycles, run_protocol, settle, settle_from, MeasuredCycle, ProtocolRun, RunOptions, Settled,
};
pub use schedule::{PulseSchedule, PumpMode, Settle, DEFAULT_SAMPLE_RATE, RESPONSE_TOLERANCE};
pub use signatures::{
    config_hash, generate_signatures, symmetry_map, SignatureMeta, SignatureOptions, SignatureSet,
    DEGENERACY_THRESHOLD, LINEARITY_LIMIT, SIGNATURE_HEADER,
};
