//! Simulation and learning pipeline for handover-aware pacing queue
//! management of real-time video over sparse LEO constellations.

pub mod orbital;
pub mod netsim;
pub mod rtc;
pub mod policy;
pub mod harness;
