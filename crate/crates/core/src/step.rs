//! Queue operations decomposed into single shared-object steps.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::base_objects::{ObjectError, Word, BOTTOM};
use crate::memory::{Access, SharedMemory};

/// A queue operation as invoked by a process.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Op {
    Enq(Word),
    Deq,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Enq(x) => write!(f, "enq({})", WordDisplay(*x)),
            Op::Deq => write!(f, "deq"),
        }
    }
}

/// Renders `⊥` as `bot`.
pub struct WordDisplay(pub Word);

impl fmt::Display for WordDisplay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == BOTTOM {
            f.write_str("bot")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// What an operation returned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ret {
    Ok,
    /// A dequeued item, or `BOTTOM` for an empty queue.
    Value(Word),
}

/// Per-operation counters reported on completion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct OpStats {
    /// Shared steps taken by the operation.
    pub steps: u32,
    /// Dequeue loop bodies that ran to the end without returning.
    pub failed_iterations: u32,
    /// Item index won through `itemTaken` by a dequeue that returned an item.
    pub claimed: Option<u32>,
    /// Agenda slot won by a two-enqueuer enqueue.
    pub agenda_index: Option<u32>,
    /// Virtual-enqueuer iterations replayed by a two-enqueuer enqueue.
    pub replay_iterations: u32,
    /// Agenda slots proposed to by a two-enqueuer enqueue.
    pub slot_attempts: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Completion {
    pub ret: Ret,
    pub stats: OpStats,
}

/// One resumption of a step machine: exactly one shared access, and the
/// operation's completion if that access was its last.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Step {
    pub access: Access,
    pub completion: Option<Completion>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum StepError {
    #[error(transparent)]
    Object(#[from] ObjectError),
    #[error("no operation is pending")]
    Idle,
    #[error("an operation is already pending")]
    Busy,
    #[error("protocol violation: {0}")]
    Protocol(String),
}

/// An in-progress operation of one logical process.
pub trait StepMachine {
    /// Starts `op`. Fails if another operation is pending or the process's
    /// role cannot perform `op`.
    fn invoke(&mut self, op: Op) -> Result<(), StepError>;

    fn is_busy(&self) -> bool;

    /// Takes exactly one shared step of the pending operation.
    fn step<M: SharedMemory + ?Sized>(&mut self, mem: &M) -> Result<Step, StepError>;

    /// Invokes `op` and steps it to completion without interruption.
    fn run<M: SharedMemory + ?Sized>(&mut self, mem: &M, op: Op) -> Result<Completion, StepError> {
        self.invoke(op)?;
        loop {
            if let Some(done) = self.step(mem)?.completion {
                return Ok(done);
            }
        }
    }
}

pub(crate) fn finished(access: Access, ret: Ret, stats: OpStats) -> Step {
    Step { access, completion: Some(Completion { ret, stats }) }
}

pub(crate) fn continuing(access: Access) -> Step {
    Step { access, completion: None }
}
