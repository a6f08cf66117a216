//! Wait-free queues built from objects of consensus number two, with a
//! deterministic step-level simulator and a linearizability checker.
//!
//! The queues are step machines ([`step::StepMachine`]) that perform one
//! shared-object access per step. The same machines run under the
//! simulator ([`sim_scheduler`]) against [`memory::SimMemory`] and on real
//! threads ([`native`]) against [`memory::NativeMemory`].

pub mod base_objects;
pub mod growable;
pub mod history;
pub mod lin_check;
pub mod memory;
pub mod native;
pub mod queue_core;
pub mod sim_scheduler;
pub mod state_space;
pub mod step;
pub mod suite;
pub mod two_enqueuer;

pub use base_objects::{Word, BOTTOM};
pub use history::{History, OpId, Role};
pub use lin_check::{check, Verdict};
pub use sim_scheduler::{Algorithm, RunConfig, Schedule};
pub use step::{Op, Ret};
