//! Atomic base objects: registers, fetch-and-add, swap and consensus.
//!
//! Every object here has the sequential step semantics of its type, given by
//! [`transition`]. The native types wrap machine atomics with sequentially
//! consistent ordering; the simulated backend in [`crate::memory`] applies the
//! same transition function under the control of a scheduler.

use std::sync::atomic::{AtomicI64, Ordering::SeqCst};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// An opaque machine word: item, item index, boolean or counter.
pub type Word = i64;

/// The reserved "no value" marker. Distinct from every item and from `0`.
pub const BOTTOM: Word = Word::MIN;

pub const FALSE: Word = 0;
pub const TRUE: Word = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ObjectKind {
    Register,
    FetchAdd,
    Swap,
    Consensus,
}

/// One method call on a base object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Read,
    Write(Word),
    FetchAdd(Word),
    Swap(Word),
    Decide(Word),
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Read => "read",
            Method::Write(_) => "write",
            Method::FetchAdd(_) => "f&a",
            Method::Swap(_) => "swap",
            Method::Decide(_) => "decide",
        }
    }

    pub fn arg(&self) -> Option<Word> {
        match *self {
            Method::Read => None,
            Method::Write(x) | Method::FetchAdd(x) | Method::Swap(x) | Method::Decide(x) => Some(x),
        }
    }

    pub fn from_parts(name: &str, arg: Option<Word>) -> Option<Method> {
        Some(match (name, arg) {
            ("read", None) => Method::Read,
            ("write", Some(x)) => Method::Write(x),
            ("f&a", Some(x)) => Method::FetchAdd(x),
            ("swap", Some(x)) => Method::Swap(x),
            ("decide", Some(x)) => Method::Decide(x),
            _ => return None,
        })
    }

    fn supported_by(&self, kind: ObjectKind) -> bool {
        matches!(
            (kind, self),
            (ObjectKind::Register, Method::Read | Method::Write(_))
                | (ObjectKind::FetchAdd, Method::FetchAdd(_))
                | (ObjectKind::Swap, Method::Swap(_))
                | (ObjectKind::Consensus, Method::Decide(_))
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ObjectError {
    #[error("decide(⊥) is not a valid proposal")]
    BottomProposal,
    #[error("method {method} is not defined on a {kind:?} object")]
    KindMismatch { kind: ObjectKind, method: &'static str },
    #[error("a third process proposed to a two-process consensus object")]
    ThirdProposer,
    #[error("process id {0} is not 0 or 1")]
    InvalidPid(usize),
}

/// The sequential transition of a base object of `kind` in state `state`:
/// returns `(response, next_state)`.
pub fn transition(kind: ObjectKind, state: Word, method: Method) -> Result<(Word, Word), ObjectError> {
    if !method.supported_by(kind) {
        return Err(ObjectError::KindMismatch { kind, method: method.name() });
    }
    Ok(match method {
        Method::Read => (state, state),
        // Writes answer Ok; there is no Ok word, so the response slot holds the written value.
        Method::Write(x) => (x, x),
        Method::FetchAdd(x) => (state, state.wrapping_add(x)),
        Method::Swap(x) => (state, x),
        Method::Decide(x) => {
            if x == BOTTOM {
                return Err(ObjectError::BottomProposal);
            }
            if state == BOTTOM {
                (x, x)
            } else {
                (state, state)
            }
        }
    })
}

/// A read/write register.
#[derive(Debug)]
pub struct Register(AtomicI64);

impl Register {
    pub fn new(init: Word) -> Self {
        Register(AtomicI64::new(init))
    }

    pub fn read(&self) -> Word {
        self.0.load(SeqCst)
    }

    pub fn write(&self, x: Word) {
        self.0.store(x, SeqCst)
    }
}

/// A fetch-and-add counter.
#[derive(Debug)]
pub struct FetchAdd(AtomicI64);

impl FetchAdd {
    pub fn new(init: Word) -> Self {
        FetchAdd(AtomicI64::new(init))
    }

    /// Adds `x` and returns the previous value.
    pub fn fetch_add(&self, x: Word) -> Word {
        self.0.fetch_add(x, SeqCst)
    }
}

#[derive(Debug)]
pub struct SwapObject(AtomicI64);

impl SwapObject {
    pub fn new(init: Word) -> Self {
        SwapObject(AtomicI64::new(init))
    }

    pub fn swap(&self, x: Word) -> Word {
        self.0.swap(x, SeqCst)
    }
}

/// A consensus object. The first `decide` wins and every call returns the
/// winning proposal.
#[derive(Debug)]
pub struct ConsensusObject(AtomicI64);

impl Default for ConsensusObject {
    fn default() -> Self {
        ConsensusObject(AtomicI64::new(BOTTOM))
    }
}

impl ConsensusObject {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn decide(&self, x: Word) -> Result<Word, ObjectError> {
        if x == BOTTOM {
            return Err(ObjectError::BottomProposal);
        }
        match self.0.compare_exchange(BOTTOM, x, SeqCst, SeqCst) {
            Ok(_) => Ok(x),
            Err(decided) => Ok(decided),
        }
    }
}

/// Two-process consensus built from two registers and a fetch-and-add
/// object: publish the proposal, then the process that draws `0` from
/// `winner` wins and the other adopts the winner's published proposal.
pub fn two_process_consensus_from_fa(
    proposals: &[Register; 2],
    winner: &FetchAdd,
    x: Word,
    pid: usize,
) -> Result<Word, ObjectError> {
    if pid > 1 {
        return Err(ObjectError::InvalidPid(pid));
    }
    if x == BOTTOM {
        return Err(ObjectError::BottomProposal);
    }
    proposals[pid].write(x);
    match winner.fetch_add(1) {
        0 => Ok(x),
        1 => Ok(proposals[1 - pid].read()),
        _ => Err(ObjectError::ThirdProposer),
    }
}
