//! Exhaustive exploration with state merging.
//!
//! Two schedule prefixes that reach the same memory, the same process
//! states and the same observable summary have identical sets of
//! continuations, so the subtree below is explored once and its schedule
//! count reused. The summary holds exactly what the offline checks read
//! from a history: the order of invocations, responses and (optionally)
//! each dequeue's latest tail allocation, plus per-operation facts such as
//! the `itemIndex` cells touched and the index claimed. Every schedule is
//! still accounted for; one representative schedule is kept per distinct
//! complete summary.
//!
//! Properties that hold step by step (claims, cell ownership, loop bounds,
//! idempotent writes, consensus agreement) are checked on every transition.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::{Hash, Hasher};

use crate::base_objects::{Method, Word, BOTTOM};
use crate::history::{EventKind, OpId, Role};
use crate::memory::{ConsensusCell, ObjId};
use crate::queue_core::invariants::Violation;
use crate::queue_core::{deq_bound, Location, DEQ_MAX_FAILED_ITERATIONS, SEMD_ENQ_BOUND};
use crate::sim_scheduler::{Algorithm, Execution, RunConfig, Schedule, SimError};
use crate::step::Ret;
use crate::two_enqueuer::temd_enq_bound;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExhaustiveOptions {
    pub max_total_steps: usize,
    /// Keep each dequeue's latest tail allocation in the summary, so the
    /// representatives also cover every distinct constructed order.
    pub order_points: bool,
}

impl ExhaustiveOptions {
    pub fn new(max_total_steps: usize) -> Self {
        ExhaustiveOptions { max_total_steps, order_points: false }
    }

    pub fn with_order_points(mut self) -> Self {
        self.order_points = true;
        self
    }
}

/// A transition-level property failure and the schedule that reached it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepViolation {
    pub schedule: Schedule,
    pub violation: Violation,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ExhaustiveOutcome {
    /// Complete schedules covered.
    pub schedules: u128,
    /// Distinct states expanded.
    pub states: usize,
    /// One schedule per distinct observable history.
    pub representatives: Vec<Schedule>,
    pub max_failed_iterations: u32,
    pub max_enq_steps: u32,
    pub max_deq_steps: u32,
    /// The first property failure found; exploration stops there.
    pub violation: Option<StepViolation>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum Mark {
    Invoke(u8),
    Respond(u8, Ret),
    Alloc(u8),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
struct Facts {
    index_writes: Vec<Location>,
    owns: Option<u32>,
    active: Vec<Location>,
    last_read: Option<Location>,
    claim: Option<u32>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
struct Summary {
    marks: Vec<Mark>,
    facts: Vec<Facts>,
    current: Vec<Option<u32>>,
}

/// Bookkeeping for transition checks that is not part of the history summary.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
struct Ghost {
    last_index: Option<Location>,
    decided: BTreeMap<ConsensusCell, Word>,
    proposals: BTreeMap<(ConsensusCell, u8), Word>,
}

struct Explorer<'c> {
    exec: Execution<'c>,
    options: ExhaustiveOptions,
    summary: Summary,
    ghost: Ghost,
    memo: HashMap<u128, u128>,
    leaves: HashSet<u128>,
    out: ExhaustiveOutcome,
    enq_bound: u32,
    deq_bound: u32,
}

/// Explores every complete schedule of `config`.
pub fn explore_exhaustive(config: &RunConfig, options: ExhaustiveOptions) -> Result<ExhaustiveOutcome, SimError> {
    let (enq_bound, deq_bound) = match config.algorithm {
        Algorithm::Sesd => (1, 1),
        Algorithm::Semd => (SEMD_ENQ_BOUND, deq_bound(1)),
        Algorithm::Temd => (temd_enq_bound(config.total_enqs() as u32, config.consensus), deq_bound(2)),
    };
    let mut ex = Explorer {
        exec: Execution::new(config),
        options,
        summary: Summary { current: vec![None; config.process_count()], ..Summary::default() },
        ghost: Ghost::default(),
        memo: HashMap::new(),
        leaves: HashSet::new(),
        out: ExhaustiveOutcome::default(),
        enq_bound,
        deq_bound,
    };
    let schedules = ex.dfs()?;
    ex.out.states = ex.memo.len();
    if ex.out.violation.is_none() {
        ex.out.schedules = schedules;
    }
    Ok(ex.out)
}

fn fingerprint<T: Hash>(value: &T) -> u128 {
    let mut lo = DefaultHasher::new();
    value.hash(&mut lo);
    let mut hi = DefaultHasher::new();
    0x9e37_79b9_7f4a_7c15u64.hash(&mut hi);
    value.hash(&mut hi);
    (u128::from(hi.finish()) << 64) | u128::from(lo.finish())
}

impl Explorer<'_> {
    fn state_key(&self) -> u128 {
        struct State<'a, 'c>(&'a Explorer<'c>);
        impl Hash for State<'_, '_> {
            fn hash<H: Hasher>(&self, h: &mut H) {
                self.0.exec.hash_state(h);
                self.0.summary.hash(h);
                self.0.ghost.hash(h);
            }
        }
        fingerprint(&State(self))
    }

    fn dfs(&mut self) -> Result<u128, SimError> {
        let key = self.state_key();
        if let Some(&count) = self.memo.get(&key) {
            return Ok(count);
        }
        let mut total = 0u128;
        let mut any = false;
        for pid in 0..self.exec.config().process_count() {
            if !self.exec.is_runnable(pid) {
                continue;
            }
            any = true;
            if self.exec.schedule().len() >= self.options.max_total_steps {
                return Err(SimError::StepBoundExceeded(self.options.max_total_steps));
            }
            let cp = self.exec.save(pid);
            let saved = (self.summary.clone(), self.ghost.clone());
            let before = self.exec.history().len();
            self.exec.step(pid)?;
            if let Err(violation) = self.observe(pid, before) {
                let schedule = Schedule::from_steps(self.exec.schedule().to_vec());
                self.out.violation = Some(StepViolation { schedule, violation });
                return Ok(0);
            }
            total += self.dfs()?;
            self.exec.restore(cp);
            (self.summary, self.ghost) = saved;
            if self.out.violation.is_some() {
                return Ok(0);
            }
        }
        if !any {
            total = 1;
            if self.leaves.insert(fingerprint(&self.summary)) {
                self.out.representatives.push(Schedule::from_steps(self.exec.schedule().to_vec()));
            }
        }
        self.memo.insert(key, total);
        Ok(total)
    }

    /// Updates the summary with the events of the last slot and checks them.
    fn observe(&mut self, pid: usize, from: usize) -> Result<(), Violation> {
        let config = self.exec.config();
        let events = self.exec.history().events()[from..].to_vec();
        for e in events {
            match e.kind {
                EventKind::Invoke => {
                    self.summary.current[pid] = Some(self.summary.facts.len() as u32);
                    self.summary.facts.push(Facts::default());
                    self.summary.marks.push(Mark::Invoke(pid as u8));
                }
                EventKind::Step(a) => {
                    let op = self.summary.current[pid].expect("step of an invoked op");
                    match e.role {
                        Role::Enqueuer => self.enq_step(pid, op, a.obj, a.method, a.ret)?,
                        Role::Dequeuer => self.deq_step(pid, op, a.obj, a.method, a.ret)?,
                    }
                }
                EventKind::Respond(ret) => {
                    let op = self.summary.current[pid].take().expect("response of an invoked op");
                    if let Ret::Value(v) = ret {
                        let distinct = config.enqueuers.iter().flatten().filter(|&&x| x == v).count() == 1;
                        if let Some(first) = self.op_of_response(v).filter(|_| v != BOTTOM && distinct) {
                            return Err(Violation::DuplicateReturn { value: v, first, second: OpId(op) });
                        }
                    }
                    self.summary.marks.push(Mark::Respond(pid as u8, ret));
                    let stats = self.exec.completions().last().expect("completion recorded").completion.stats;
                    let (max, bound) = match e.role {
                        Role::Enqueuer => (&mut self.out.max_enq_steps, self.enq_bound),
                        Role::Dequeuer => (&mut self.out.max_deq_steps, self.deq_bound),
                    };
                    *max = (*max).max(stats.steps);
                    if stats.steps > bound {
                        return Err(Violation::StepBound { op: OpId(op), steps: stats.steps, bound });
                    }
                    self.out.max_failed_iterations = self.out.max_failed_iterations.max(stats.failed_iterations);
                    if stats.failed_iterations > DEQ_MAX_FAILED_ITERATIONS {
                        return Err(Violation::TooManyFailedIterations {
                            op: OpId(op),
                            failed: stats.failed_iterations,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn op_of_response(&self, v: Word) -> Option<OpId> {
        let mut pending: HashMap<u8, u32> = HashMap::new();
        let mut id = 0;
        for m in &self.summary.marks {
            match *m {
                Mark::Invoke(p) => {
                    pending.insert(p, id);
                    id += 1;
                }
                Mark::Respond(p, Ret::Value(w)) if w == v => return pending.get(&p).map(|&i| OpId(i)),
                _ => {}
            }
        }
        None
    }

    fn enq_step(&mut self, pid: usize, op: u32, obj: ObjId, method: Method, ret: Word) -> Result<(), Violation> {
        let algorithm = self.exec.config().algorithm;
        let prior = || self.exec.memory().last_change().map(|(_, prev)| prev).unwrap_or(BOTTOM);
        match (obj, method) {
            (ObjId::Item(k), Method::Write(x)) => {
                let prev = prior();
                if prev != BOTTOM && prev != x {
                    return Err(Violation::ConflictingWrite { obj, first: prev, second: x });
                }
                if algorithm != Algorithm::Temd {
                    self.summary.facts[op as usize].owns.get_or_insert(k);
                }
            }
            (ObjId::ItemIndex(i, j), Method::Write(x)) => {
                let prev = prior();
                let loc = Location::new(i, j);
                if prev == 0 {
                    let next_ok = match self.ghost.last_index {
                        None => loc == Location::new(0, 0),
                        Some(p) if loc <= p => {
                            return Err(Violation::IndexOrder { op: OpId(op), prev: p, next: loc });
                        }
                        Some(p) => loc == Location::new(p.row, p.col + 1) || loc == Location::new(p.row + 1, 0),
                    };
                    if !next_ok {
                        let prev = self.ghost.last_index.unwrap_or(Location::new(0, 0));
                        return Err(Violation::RowGap { op: OpId(op), prev, next: loc });
                    }
                    self.ghost.last_index = Some(loc);
                } else if prev != x {
                    return Err(Violation::ConflictingWrite { obj, first: prev, second: x });
                }
                if self.options.order_points {
                    self.summary.facts[op as usize].index_writes.push(loc);
                }
            }
            (ObjId::Row | ObjId::RowOf(_), Method::Write(r)) => {
                let prev = prior();
                if r != prev + 1 {
                    return Err(Violation::RowOrder { op: OpId(op), prev, next: r });
                }
            }
            (ObjId::Consensus(cell), Method::Decide(_)) => {
                self.decide(cell, ret)?;
                if let ConsensusCell::AgendaSlot(k) = cell {
                    self.claim_slot(op, k);
                }
            }
            (ObjId::Proposal(cell, id), Method::Write(x)) => {
                self.ghost.proposals.insert((cell, id), x);
            }
            (ObjId::Winner(cell), Method::FetchAdd(_)) if ret == 0 => {
                let own = self.ghost.proposals[&(cell, pid as u8)];
                self.decide(cell, own)?;
                if let ConsensusCell::AgendaSlot(k) = cell {
                    self.claim_slot(op, k);
                }
            }
            (ObjId::Proposal(cell, _), Method::Read) => self.decide(cell, ret)?,
            _ => {}
        }
        Ok(())
    }

    fn claim_slot(&mut self, op: u32, k: u32) {
        if !self.summary.facts.iter().any(|f| f.owns == Some(k)) {
            self.summary.facts[op as usize].owns = Some(k);
        }
    }

    fn decide(&mut self, cell: ConsensusCell, value: Word) -> Result<(), Violation> {
        let first = *self.ghost.decided.entry(cell).or_insert(value);
        if first != value {
            return Err(Violation::Disagreement { obj: ObjId::Consensus(cell), first, second: value });
        }
        Ok(())
    }

    fn deq_step(&mut self, pid: usize, op: u32, obj: ObjId, method: Method, ret: Word) -> Result<(), Violation> {
        let algorithm = self.exec.config().algorithm;
        match (obj, method) {
            (ObjId::Tail(_), Method::FetchAdd(_)) if self.options.order_points => {
                let p = pid as u8;
                if let Some(pos) = self.summary.marks.iter().rposition(|m| *m == Mark::Alloc(p)) {
                    let invoked = self.summary.marks.iter().rposition(|m| *m == Mark::Invoke(p));
                    if invoked < Some(pos) {
                        self.summary.marks.remove(pos);
                    }
                }
                self.summary.marks.push(Mark::Alloc(p));
            }
            (ObjId::DeqActive(i, j), Method::Write(_)) => {
                let loc = Location::new(i, j);
                if let Some(first) = self.summary.facts.iter().position(|f| f.active.contains(&loc)) {
                    return Err(Violation::SharedIndexRead { loc, first: OpId(first as u32), second: OpId(op) });
                }
                self.summary.facts[op as usize].active.push(loc);
            }
            (ObjId::ItemIndex(i, j), Method::Read) => {
                let loc = Location::new(i, j);
                if self.summary.facts[op as usize].active.last() != Some(&loc) {
                    let first = self.summary.facts.iter().position(|f| f.active.contains(&loc)).unwrap_or(0);
                    return Err(Violation::SharedIndexRead { loc, first: OpId(first as u32), second: OpId(op) });
                }
                self.summary.facts[op as usize].last_read = Some(loc);
            }
            (ObjId::ItemTaken(k), Method::FetchAdd(_)) if ret == 0 => {
                if let Some(first) = self.summary.facts.iter().position(|f| f.claim == Some(k)) {
                    return Err(Violation::DoubleClaim { k, first: OpId(first as u32), second: OpId(op) });
                }
                self.summary.facts[op as usize].claim = Some(k);
            }
            (ObjId::Item(k), Method::Read) => {
                if algorithm == Algorithm::Sesd {
                    if ret != BOTTOM {
                        self.summary.facts[op as usize].claim = Some(k);
                    }
                } else if ret == BOTTOM {
                    return Err(Violation::LostItem { op: OpId(op), k });
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use std::ops::ControlFlow;

    use super::*;
    use crate::sim_scheduler::explore;

    fn naive_count(config: &RunConfig) -> u128 {
        let stats = explore(config, 1000, |_| ControlFlow::Continue(())).unwrap();
        u128::from(stats.schedules)
    }

    #[test]
    fn counts_match_naive_enumeration() {
        for config in [
            RunConfig::uniform(Algorithm::Sesd, 1, 2, 1, 2).unwrap(),
            RunConfig::uniform(Algorithm::Semd, 1, 1, 2, 1).unwrap(),
            RunConfig::uniform(Algorithm::Semd, 1, 2, 1, 2).unwrap(),
        ] {
            let out = explore_exhaustive(&config, ExhaustiveOptions::new(1000).with_order_points()).unwrap();
            assert_eq!(out.violation, None);
            assert_eq!(out.schedules, naive_count(&config), "{config:?}");
            assert!(out.states > 0 && !out.representatives.is_empty());
        }
    }

    #[test]
    fn temd_small_config_is_clean() {
        let config = RunConfig::uniform(Algorithm::Temd, 2, 1, 1, 1).unwrap();
        let out = explore_exhaustive(&config, ExhaustiveOptions::new(1000)).unwrap();
        assert_eq!(out.violation, None);
        assert!(out.schedules > 0);
    }
}
