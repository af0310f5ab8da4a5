//! The two-node system and its simulation.

mod feedforward;
mod fringe;
mod ident;
mod model;
mod sim;
mod snspd;
mod stepper;

pub use feedforward::{apply_feedforward, feedforward_phase, length_from_roundtrip};
pub use fringe::{run_fringe, sweep_setpoints, unwrapped_offsets, FringeReport, FringeSweep};
pub use ident::{default_injection, global_residuals, run_identification, Identification};
pub use model::{
    build_system, ArmModel, DarkPeriods, FeedforwardSpec, LoopId, MidpointModel, NodeModel, SnspdSpec, Steps,
    SystemModel,
};
pub use sim::{simulate, LoopStats, LoopUnlock, SimOutput, Simulator};
pub use snspd::{
    expected_counts, snspd_global_demod, snspd_global_demod_with, window_phases, BeatDemod, GlobalDemod,
    DEFAULT_DEMOD_LOWPASS, DEFAULT_SNR_THRESHOLD,
};
