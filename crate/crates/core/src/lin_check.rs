//! Linearizability checking of queue histories.
//!
//! [`check`] searches for a linearization depth-first, linearizing any
//! operation whose real-time predecessors are already placed and memoizing
//! failed `(linearized set, queue contents)` pairs. [`LinMonitor`] performs
//! the same check incrementally, event by event, for state-space
//! exploration. [`paper_order`] builds the specific order used in the
//! correctness argument for the one-enqueuer queue.

use std::collections::{BTreeSet, HashMap, HashSet};

use serde::Serialize;
use thiserror::Error;

use crate::base_objects::{Method, Word, BOTTOM};
use crate::history::{EventKind, EventLine, History, OpId, OpRecord, Role};
use crate::memory::{ConsensusCell, ObjId};
use crate::step::{Op, Ret};

mod paper_order;

pub use paper_order::{annotate_semd, paper_order, OpAnnotation, OrderPoint, PaperOrderError};

/// Largest number of operations [`check`] accepts.
pub const MAX_OPS: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum IntervalKind {
    Enq(Word),
    Deq,
}

/// One completed operation: its real-time interval and its result.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OperationInterval {
    pub id: OpId,
    pub kind: IntervalKind,
    pub invoke: u64,
    pub respond: u64,
    /// Dequeued item, or `BOTTOM`. Unused for enqueues.
    pub ret: Word,
    /// For a dequeue, the enqueue whose item it returned, when known.
    pub matched: Option<OpId>,
}

impl OperationInterval {
    pub fn precedes(&self, other: &OperationInterval) -> bool {
        self.respond < other.invoke
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum CheckError {
    #[error("{0} has no response; extend the run until every operation finishes")]
    Incomplete(OpId),
    #[error("history has {0} operations, more than the supported {MAX_OPS}")]
    TooLarge(usize),
    #[error("malformed history: {0}")]
    Malformed(String),
}

/// Completed-operation intervals of `history`, with matches from step
/// instrumentation where the history has it.
pub fn intervals(history: &History) -> Result<Vec<OperationInterval>, CheckError> {
    let ops = history.ops();
    let matches: HashMap<OpId, OpId> = match_ops(history).into_iter().map(|(e, d)| (d, e)).collect();
    ops.iter()
        .map(|o| {
            let respond = o.respond.ok_or(CheckError::Incomplete(o.id))?;
            let events = history.events();
            let (kind, ret) = match (o.op, o.ret) {
                (Op::Enq(x), Some(Ret::Ok)) => (IntervalKind::Enq(x), BOTTOM),
                (Op::Deq, Some(Ret::Value(v))) => (IntervalKind::Deq, v),
                _ => return Err(CheckError::Malformed(format!("{} has a mismatched response", o.id))),
            };
            Ok(OperationInterval {
                id: o.id,
                kind,
                invoke: events[o.invoke].t,
                respond: events[respond].t,
                ret,
                matched: matches.get(&o.id).copied(),
            })
        })
        .collect()
}

/// A sequential object to linearize against. States hold operation indexes
/// into the slice being checked so matches can be compared by identity.
pub trait SequentialSpec {
    type State: Clone + Eq + std::hash::Hash;

    fn init(&self) -> Self::State;

    /// Applies `ops[index]` to `state`; `None` if its result is illegal there.
    fn apply(&self, state: &Self::State, ops: &[OperationInterval], index: usize) -> Option<Self::State>;
}

fn removal_legal(candidate: &OperationInterval, front: &OperationInterval) -> bool {
    match (candidate.matched, front.kind) {
        (Some(id), _) => id == front.id,
        (None, IntervalKind::Enq(x)) => x == candidate.ret,
        (None, IntervalKind::Deq) => false,
    }
}

/// FIFO queue: `deq` on an empty queue returns ⊥.
#[derive(Clone, Copy, Debug, Default)]
pub struct QueueSpec;

impl SequentialSpec for QueueSpec {
    type State = Vec<u8>;

    fn init(&self) -> Self::State {
        Vec::new()
    }

    fn apply(&self, state: &Self::State, ops: &[OperationInterval], index: usize) -> Option<Self::State> {
        let op = &ops[index];
        match op.kind {
            IntervalKind::Enq(_) => {
                let mut next = state.clone();
                next.push(index as u8);
                Some(next)
            }
            IntervalKind::Deq if op.ret == BOTTOM => state.is_empty().then(|| state.clone()),
            IntervalKind::Deq => {
                let front = *state.first()?;
                removal_legal(op, &ops[front as usize]).then(|| state[1..].to_vec())
            }
        }
    }
}

/// LIFO stack over the same operation shapes: `Enq` pushes, `Deq` pops.
#[derive(Clone, Copy, Debug, Default)]
pub struct StackSpec;

impl SequentialSpec for StackSpec {
    type State = Vec<u8>;

    fn init(&self) -> Self::State {
        Vec::new()
    }

    fn apply(&self, state: &Self::State, ops: &[OperationInterval], index: usize) -> Option<Self::State> {
        let op = &ops[index];
        match op.kind {
            IntervalKind::Enq(_) => {
                let mut next = state.clone();
                next.push(index as u8);
                Some(next)
            }
            IntervalKind::Deq if op.ret == BOTTOM => state.is_empty().then(|| state.clone()),
            IntervalKind::Deq => {
                let top = *state.last()?;
                removal_legal(op, &ops[top as usize]).then(|| state[..state.len() - 1].to_vec())
            }
        }
    }
}

/// The outcome of a check.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Verdict {
    pub linearizable: bool,
    /// A valid linearization, when one exists.
    pub witness: Option<Vec<OpId>>,
    /// A non-linearizable sub-history that stays linearizable when any
    /// one of its enqueue/dequeue units is removed.
    pub violation: Option<History>,
}

#[derive(Serialize)]
struct VerdictJson {
    linearizable: bool,
    witness: Vec<u32>,
    violation: Vec<EventLine>,
}

impl Verdict {
    pub fn to_json(&self) -> String {
        let v = VerdictJson {
            linearizable: self.linearizable,
            witness: self.witness.iter().flatten().map(|id| id.0).collect(),
            violation: self.violation.iter().flat_map(|h| h.events().iter().map(EventLine::from)).collect(),
        };
        serde_json::to_string(&v).expect("verdict serializes")
    }
}

/// Checks a complete history against the queue specification.
pub fn check(history: &History) -> Result<Verdict, CheckError> {
    let ops = intervals(history)?;
    if ops.len() > MAX_OPS {
        return Err(CheckError::TooLarge(ops.len()));
    }
    if let Some(order) = linearize(&QueueSpec, &ops) {
        return Ok(Verdict { linearizable: true, witness: Some(order), violation: None });
    }
    let kept = minimize(&ops);
    Ok(Verdict { linearizable: false, witness: None, violation: Some(history.restrict(&kept)) })
}

/// Whether some linearization of `ops` exists.
pub fn is_linearizable<S: SequentialSpec>(spec: &S, ops: &[OperationInterval]) -> bool {
    linearize(spec, ops).is_some()
}

/// Searches for a linearization; returns it in order.
pub fn linearize<S: SequentialSpec>(spec: &S, ops: &[OperationInterval]) -> Option<Vec<OpId>> {
    assert!(ops.len() <= MAX_OPS, "too many operations");
    // preds[i]: operations that respond before ops[i] is invoked.
    let preds: Vec<u128> = ops
        .iter()
        .map(|o| {
            ops.iter().enumerate().filter(|(_, p)| p.precedes(o)).fold(0u128, |m, (i, _)| m | (1 << i))
        })
        .collect();
    let full = if ops.len() == 128 { u128::MAX } else { (1u128 << ops.len()) - 1 };
    let mut search = Search { spec, ops, preds: &preds, full, seen: HashSet::new(), order: Vec::new() };
    search
        .go(0, spec.init())
        .then(|| search.order.iter().map(|&i| ops[i].id).collect())
}

struct Search<'a, S: SequentialSpec> {
    spec: &'a S,
    ops: &'a [OperationInterval],
    preds: &'a [u128],
    full: u128,
    seen: HashSet<(u128, S::State)>,
    order: Vec<usize>,
}

impl<S: SequentialSpec> Search<'_, S> {
    fn go(&mut self, done: u128, state: S::State) -> bool {
        if done == self.full {
            return true;
        }
        for i in 0..self.ops.len() {
            let bit = 1u128 << i;
            if done & bit != 0 || self.preds[i] & !done != 0 {
                continue;
            }
            let Some(next) = self.spec.apply(&state, self.ops, i) else { continue };
            if !self.seen.insert((done | bit, next.clone())) {
                continue;
            }
            self.order.push(i);
            if self.go(done | bit, next) {
                return true;
            }
            self.order.pop();
        }
        false
    }
}

/// Greedily drops enqueue/dequeue units while the rest stays non-linearizable.
fn minimize(ops: &[OperationInterval]) -> Vec<OpId> {
    let mut units: Vec<Vec<usize>> = Vec::new();
    let mut unit_of = vec![usize::MAX; ops.len()];
    for (i, o) in ops.iter().enumerate() {
        if let IntervalKind::Enq(_) = o.kind {
            unit_of[i] = units.len();
            units.push(vec![i]);
        }
    }
    for (i, o) in ops.iter().enumerate() {
        if o.kind != IntervalKind::Deq {
            continue;
        }
        let owner = ops.iter().position(|e| match (o.matched, e.kind) {
            (Some(id), _) => e.id == id,
            (None, IntervalKind::Enq(x)) => o.ret != BOTTOM && x == o.ret,
            _ => false,
        });
        match owner {
            Some(e) => units[unit_of[e]].push(i),
            None => units.push(vec![i]),
        }
    }
    let mut keep = vec![true; units.len()];
    let subset = |keep: &[bool]| -> Vec<OperationInterval> {
        let mut idx: Vec<usize> =
            units.iter().zip(keep).filter(|(_, k)| **k).flat_map(|(u, _)| u.iter().copied()).collect();
        idx.sort_unstable();
        idx.into_iter().map(|i| ops[i]).collect()
    };
    for u in 0..units.len() {
        keep[u] = false;
        if is_linearizable(&QueueSpec, &subset(&keep)) {
            keep[u] = true;
        }
    }
    subset(&keep).iter().map(|o| o.id).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum WitnessError {
    #[error("witness is not a permutation of the history's operations")]
    NotPermutation,
    #[error("{later} is placed after {earlier} but precedes it in real time")]
    Precedence { earlier: OpId, later: OpId },
    #[error("{0} returns a value the sequential queue does not allow at that point")]
    IllegalReturn(OpId),
}

/// Verifies that `order` is a linearization of `ops`.
pub fn check_witness(ops: &[OperationInterval], order: &[OpId]) -> Result<(), WitnessError> {
    let mut pos = HashMap::new();
    for (p, id) in order.iter().enumerate() {
        if pos.insert(*id, p).is_some() {
            return Err(WitnessError::NotPermutation);
        }
    }
    if pos.len() != ops.len() || ops.iter().any(|o| !pos.contains_key(&o.id)) {
        return Err(WitnessError::NotPermutation);
    }
    for a in ops {
        for b in ops {
            if a.precedes(b) && pos[&a.id] > pos[&b.id] {
                return Err(WitnessError::Precedence { earlier: b.id, later: a.id });
            }
        }
    }
    let index: HashMap<OpId, usize> = ops.iter().enumerate().map(|(i, o)| (o.id, i)).collect();
    let mut state = QueueSpec.init();
    for id in order {
        state = QueueSpec.apply(&state, ops, index[id]).ok_or(WitnessError::IllegalReturn(*id))?;
    }
    Ok(())
}

/// Pairs `(enq, deq)` where the dequeue returned the enqueue's item, read
/// from the step instrumentation of a simulated history.
///
/// Item index `k` belongs to the enqueue that wrote `item[k]` (one
/// enqueuer), or to the enqueue whose token won agenda slot `k` (two
/// enqueuers). A dequeue claims `k` when its `itemTaken[k]` fetch-and-add
/// returns 0; a single-dequeuer dequeue claims the cell it read an item from.
pub fn match_ops(history: &History) -> Vec<(OpId, OpId)> {
    let ops = history.ops();
    let mut owner: HashMap<u32, OpId> = HashMap::new();
    let mut agenda_owner: HashMap<u32, OpId> = HashMap::new();
    let mut claims: Vec<(u32, OpId)> = Vec::new();
    for o in &ops {
        let mut claim = None;
        let mut fallback = None;
        for (_, a) in o.accesses(history) {
            match (o.role, a.obj, a.method) {
                (Role::Enqueuer, ObjId::Item(k), Method::Write(_)) => {
                    owner.entry(k).or_insert(o.id);
                }
                (Role::Enqueuer, ObjId::Consensus(ConsensusCell::AgendaSlot(k)), Method::Decide(v)) if a.ret == v => {
                    agenda_owner.entry(k).or_insert(o.id);
                }
                (Role::Enqueuer, ObjId::Winner(ConsensusCell::AgendaSlot(k)), _) if a.ret == 0 => {
                    agenda_owner.entry(k).or_insert(o.id);
                }
                (Role::Dequeuer, ObjId::ItemTaken(k), _) if a.ret == 0 => claim = Some(k),
                (Role::Dequeuer, ObjId::Item(k), Method::Read) if a.ret != BOTTOM => fallback = Some(k),
                _ => {}
            }
        }
        let returned_item = matches!(o.ret, Some(Ret::Value(v)) if v != BOTTOM);
        if let Some(k) = claim.or(fallback).filter(|_| returned_item) {
            claims.push((k, o.id));
        }
    }
    claims
        .into_iter()
        .filter_map(|(k, d)| agenda_owner.get(&k).or_else(|| owner.get(&k)).map(|&e| (e, d)))
        .collect()
}

/// Event-by-event linearizability monitor.
///
/// Tracks every reachable `(queue contents, early-linearized pending
/// operations)` configuration. A pending dequeue linearized early carries
/// the value it must eventually return. On a response, the configuration
/// set is closed under linearizing pending operations until the responding
/// one is placed; the history so far is linearizable iff the set is
/// non-empty. Processes are identified by pid, so the state is independent
/// of how a prefix numbered its operations.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LinMonitor {
    pending: Vec<Option<Op>>,
    configs: BTreeSet<MonitorConfig>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct MonitorConfig {
    queue: Vec<Word>,
    /// Per pid: `Some(promised return)` when the pending op is already linearized.
    placed: Vec<Option<Word>>,
}

impl LinMonitor {
    pub fn new(processes: usize) -> Self {
        let config = MonitorConfig { queue: Vec::new(), placed: vec![None; processes] };
        LinMonitor { pending: vec![None; processes], configs: BTreeSet::from([config]) }
    }

    pub fn is_linearizable(&self) -> bool {
        !self.configs.is_empty()
    }

    pub fn configurations(&self) -> usize {
        self.configs.len()
    }

    pub fn invoke(&mut self, pid: usize, op: Op) {
        self.pending[pid] = Some(op);
    }

    pub fn respond(&mut self, pid: usize, ret: Ret) {
        let want = match ret {
            Ret::Ok => Word::MIN + 1,
            Ret::Value(v) => v,
        };
        let mut out = BTreeSet::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<MonitorConfig> = self.configs.iter().cloned().collect();
        while let Some(c) = stack.pop() {
            if !seen.insert(c.clone()) {
                continue;
            }
            if let Some(promise) = c.placed[pid] {
                if promise == want {
                    let mut done = c;
                    done.placed[pid] = None;
                    out.insert(done);
                }
                continue;
            }
            for (p, op) in self.pending.iter().enumerate() {
                let Some(op) = op else { continue };
                if c.placed[p].is_some() {
                    continue;
                }
                let mut next = c.clone();
                next.placed[p] = Some(match op {
                    Op::Enq(x) => {
                        next.queue.push(*x);
                        Word::MIN + 1
                    }
                    Op::Deq if next.queue.is_empty() => BOTTOM,
                    Op::Deq => next.queue.remove(0),
                });
                stack.push(next);
            }
        }
        self.configs = out;
        self.pending[pid] = None;
    }

    /// Feeds every invoke and respond event of `history`.
    pub fn observe(&mut self, history: &History) {
        for e in history.events() {
            match e.kind {
                EventKind::Invoke => self.invoke(e.pid, e.op),
                EventKind::Respond(r) => self.respond(e.pid, r),
                EventKind::Step(_) => {}
            }
        }
    }
}

/// Reconstructs an operation table entry by id.
pub fn op_record(history: &History, id: OpId) -> Option<OpRecord> {
    history.ops().into_iter().nth(id.0 as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn iv(id: u32, kind: IntervalKind, invoke: u64, respond: u64, ret: Word) -> OperationInterval {
        OperationInterval { id: OpId(id), kind, invoke, respond, ret, matched: None }
    }

    #[test]
    fn sequential_enq_then_deq() {
        let ops = [iv(0, IntervalKind::Enq(1), 0, 1, BOTTOM), iv(1, IntervalKind::Deq, 2, 3, 1)];
        assert_eq!(linearize(&QueueSpec, &ops), Some(vec![OpId(0), OpId(1)]));
    }

    #[test]
    fn empty_after_enq_is_not_linearizable() {
        let ops = [iv(0, IntervalKind::Enq(1), 0, 1, BOTTOM), iv(1, IntervalKind::Deq, 2, 3, BOTTOM)];
        assert!(!is_linearizable(&QueueSpec, &ops));
    }

    #[test]
    fn concurrent_empty_deq_goes_before_enq() {
        let ops = [
            iv(0, IntervalKind::Enq(1), 0, 5, BOTTOM),
            iv(1, IntervalKind::Deq, 1, 3, BOTTOM),
            iv(2, IntervalKind::Deq, 6, 7, 1),
        ];
        assert_eq!(linearize(&QueueSpec, &ops), Some(vec![OpId(1), OpId(0), OpId(2)]));
    }

    #[test]
    fn fifo_order_enforced() {
        let ops = [
            iv(0, IntervalKind::Enq(1), 0, 1, BOTTOM),
            iv(1, IntervalKind::Enq(2), 2, 3, BOTTOM),
            iv(2, IntervalKind::Deq, 4, 5, 2),
        ];
        assert!(!is_linearizable(&QueueSpec, &ops));
        assert!(is_linearizable(&StackSpec, &ops));
    }

    #[test]
    fn identity_matching_distinguishes_duplicates() {
        let mut ops = [
            iv(0, IntervalKind::Enq(7), 0, 1, BOTTOM),
            iv(1, IntervalKind::Enq(7), 2, 3, BOTTOM),
            iv(2, IntervalKind::Deq, 4, 5, 7),
        ];
        assert!(is_linearizable(&QueueSpec, &ops));
        ops[2].matched = Some(OpId(1));
        assert!(!is_linearizable(&QueueSpec, &ops));
    }

    #[test]
    fn witness_checks() {
        let ops = [iv(0, IntervalKind::Enq(1), 0, 1, BOTTOM), iv(1, IntervalKind::Deq, 2, 3, 1)];
        assert_eq!(check_witness(&ops, &[OpId(0), OpId(1)]), Ok(()));
        assert_eq!(
            check_witness(&ops, &[OpId(1), OpId(0)]),
            Err(WitnessError::Precedence { earlier: OpId(1), later: OpId(0) })
        );
        assert_eq!(check_witness(&ops, &[OpId(0)]), Err(WitnessError::NotPermutation));
        let bad = [iv(0, IntervalKind::Enq(1), 0, 5, BOTTOM), iv(1, IntervalKind::Deq, 1, 3, 1)];
        assert_eq!(check_witness(&bad, &[OpId(1), OpId(0)]), Err(WitnessError::IllegalReturn(OpId(1))));
    }

    #[test]
    fn monitor_matches_simple_cases() {
        let mut m = LinMonitor::new(2);
        m.invoke(0, Op::Enq(1));
        m.invoke(1, Op::Deq);
        m.respond(1, Ret::Value(BOTTOM));
        assert!(m.is_linearizable());
        m.respond(0, Ret::Ok);
        m.invoke(1, Op::Deq);
        m.respond(1, Ret::Value(BOTTOM));
        assert!(!m.is_linearizable());
    }

    #[test]
    fn verdict_json_shape() {
        let v = Verdict { linearizable: true, witness: Some(vec![OpId(1), OpId(0)]), violation: None };
        assert_eq!(v.to_json(), r#"{"linearizable":true,"witness":[1,0],"violation":[]}"#);
    }
}
