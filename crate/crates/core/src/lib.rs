//! Simulation and analysis of cascaded optical phase-synchronization loops
//! linking two remote nodes through a midpoint.

pub mod control;
pub mod dsp;
pub mod error;
pub mod io;
pub mod noise;
pub mod phase;
pub mod planner;
pub mod plant;
pub mod scenario;
pub mod series;

pub use error::{Error, Result};
pub use series::{TimeSeries, Unit};

// Compiles and runs the book's listings as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/getting-started.md")]
    mod getting_started {}
    #[doc = include_str!("../../../book/src/frequency-plan.md")]
    mod frequency_plan {}
    #[doc = include_str!("../../../book/src/noise.md")]
    mod noise {}
    #[doc = include_str!("../../../book/src/loops.md")]
    mod loops {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
}
