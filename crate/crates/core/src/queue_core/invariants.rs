//! Audits of one-enqueuer histories against the properties the
//! correctness argument relies on.

use std::collections::HashMap;
use std::fmt;

use crate::base_objects::{Method, Word, BOTTOM};
use crate::history::{History, OpId, Role};
use crate::memory::ObjId;
use crate::step::WordDisplay;

use super::{deq_bound, Location, DEQ_MAX_FAILED_ITERATIONS, SEMD_ENQ_BOUND};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    TooManyFailedIterations { op: OpId, failed: u32 },
    StepBound { op: OpId, steps: u32, bound: u32 },
    DoubleClaim { k: u32, first: OpId, second: OpId },
    SharedIndexRead { loc: Location, first: OpId, second: OpId },
    ReadGap { missing: Location },
    LostItem { op: OpId, k: u32 },
    DuplicateReturn { value: Word, first: OpId, second: OpId },
    WrongItem { op: OpId, k: u32, expected: Word, got: Word },
    IndexOrder { op: OpId, prev: Location, next: Location },
    RowGap { op: OpId, prev: Location, next: Location },
    RowOrder { op: OpId, prev: Word, next: Word },
    ConflictingWrite { obj: ObjId, first: Word, second: Word },
    Disagreement { obj: ObjId, first: Word, second: Word },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::TooManyFailedIterations { op, failed } => {
                write!(f, "{op} ran {failed} loop bodies without returning")
            }
            Violation::StepBound { op, steps, bound } => write!(f, "{op} took {steps} steps, bound is {bound}"),
            Violation::DoubleClaim { k, first, second } => {
                write!(f, "item index {k} claimed by both {first} and {second}")
            }
            Violation::SharedIndexRead { loc, first, second } => {
                write!(f, "itemIndex{loc} read by both {first} and {second}")
            }
            Violation::ReadGap { missing } => write!(f, "itemIndex{missing} skipped while later cells in its row were read"),
            Violation::LostItem { op, k } => write!(f, "{op} claimed index {k} but item[{k}] is empty"),
            Violation::DuplicateReturn { value, first, second } => {
                write!(f, "{first} and {second} both returned {value}")
            }
            Violation::WrongItem { op, k, expected, got } => write!(
                f,
                "{op} read {} from item[{k}], which holds {}",
                WordDisplay(*got),
                WordDisplay(*expected)
            ),
            Violation::IndexOrder { op, prev, next } => {
                write!(f, "{op} wrote itemIndex{next} after itemIndex{prev}")
            }
            Violation::RowGap { op, prev, next } => {
                write!(f, "{op} skipped cells between itemIndex{prev} and itemIndex{next}")
            }
            Violation::RowOrder { op, prev, next } => write!(f, "{op} moved row from {prev} to {next}"),
            Violation::ConflictingWrite { obj, first, second } => write!(
                f,
                "{obj} written with {} and later {}",
                WordDisplay(*first),
                WordDisplay(*second)
            ),
            Violation::Disagreement { obj, first, second } => {
                write!(f, "{obj} decided both {} and {}", WordDisplay(*first), WordDisplay(*second))
            }
        }
    }
}

/// Maxima observed and every violation found.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Audit {
    pub max_failed_iterations: u32,
    pub max_enq_steps: u32,
    pub max_deq_steps: u32,
    pub violations: Vec<Violation>,
}

impl Audit {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn merge(&mut self, other: Audit) {
        self.max_failed_iterations = self.max_failed_iterations.max(other.max_failed_iterations);
        self.max_enq_steps = self.max_enq_steps.max(other.max_enq_steps);
        self.max_deq_steps = self.max_deq_steps.max(other.max_deq_steps);
        self.violations.extend(other.violations);
    }
}

/// Audits a one-enqueuer multi-dequeuer history.
pub fn audit_semd(history: &History) -> Audit {
    let mut audit = Audit::default();
    audit_dequeues(history, 1, &mut audit);
    let mut index_writes = Vec::new();
    let mut prev_row = 0;
    for o in history.ops().iter().filter(|o| o.role == Role::Enqueuer) {
        let steps = o.steps.len() as u32;
        audit.max_enq_steps = audit.max_enq_steps.max(steps);
        if o.respond.is_some() && steps > SEMD_ENQ_BOUND {
            audit.violations.push(Violation::StepBound { op: o.id, steps, bound: SEMD_ENQ_BOUND });
        }
        for (_, a) in o.accesses(history) {
            match (a.obj, a.method) {
                (ObjId::ItemIndex(i, j), Method::Write(_)) => index_writes.push((o.id, Location::new(i, j))),
                (ObjId::Row, Method::Write(r)) => {
                    if r != prev_row + 1 {
                        audit.violations.push(Violation::RowOrder { op: o.id, prev: prev_row, next: r });
                    }
                    prev_row = r;
                }
                _ => {}
            }
        }
    }
    audit_index_writes(index_writes, &mut audit);
    audit
}

/// Dequeue-side checks shared by both multi-dequeuer queues. `row_reads`
/// is the number of steps a dequeue spends reading the row.
pub(crate) fn audit_dequeues(history: &History, row_reads: u32, audit: &mut Audit) {
    let mut claims: HashMap<u32, OpId> = HashMap::new();
    let mut readers: HashMap<Location, OpId> = HashMap::new();
    let mut items: HashMap<u32, Word> = HashMap::new();
    let bound = deq_bound(row_reads);
    let ops = history.ops();
    let mut claimed_by: HashMap<OpId, u32> = HashMap::new();
    for e in history.events() {
        let crate::history::EventKind::Step(a) = e.kind else { continue };
        if let (ObjId::Item(k), Method::Write(x)) = (a.obj, a.method) {
            items.entry(k).or_insert(x);
        }
    }
    for o in ops.iter().filter(|o| o.role == Role::Dequeuer) {
        let steps = o.steps.len() as u32;
        audit.max_deq_steps = audit.max_deq_steps.max(steps);
        if o.respond.is_some() && steps > bound {
            audit.violations.push(Violation::StepBound { op: o.id, steps, bound });
        }
        let mut failed = 0;
        for (_, a) in o.accesses(history) {
            match (a.obj, a.method) {
                (ObjId::ItemIndex(i, j), Method::Read) => {
                    let loc = Location::new(i, j);
                    if let Some(&first) = readers.get(&loc) {
                        audit.violations.push(Violation::SharedIndexRead { loc, first, second: o.id });
                    } else {
                        readers.insert(loc, o.id);
                    }
                }
                (ObjId::ItemTaken(k), Method::FetchAdd(_)) if a.ret == 0 => {
                    if let Some(&first) = claims.get(&k) {
                        audit.violations.push(Violation::DoubleClaim { k, first, second: o.id });
                    } else {
                        claims.insert(k, o.id);
                    }
                    claimed_by.insert(o.id, k);
                }
                (ObjId::ItemTaken(_), Method::FetchAdd(_)) => failed += 1,
                (ObjId::Item(k), Method::Read) => {
                    if a.ret == BOTTOM {
                        audit.violations.push(Violation::LostItem { op: o.id, k });
                    } else if let Some(&x) = items.get(&k).filter(|&&x| x != a.ret) {
                        audit.violations.push(Violation::WrongItem { op: o.id, k, expected: x, got: a.ret });
                    }
                }
                _ => {}
            }
        }
        audit.max_failed_iterations = audit.max_failed_iterations.max(failed);
        if failed > DEQ_MAX_FAILED_ITERATIONS {
            audit.violations.push(Violation::TooManyFailedIterations { op: o.id, failed });
        }
    }
    if ops.iter().all(|o| o.respond.is_some()) {
        audit_read_prefix(readers.keys().copied(), audit);
    }
}

/// In every row, the cells read by dequeues form a prefix of the columns.
fn audit_read_prefix(read: impl IntoIterator<Item = Location>, audit: &mut Audit) {
    let mut per_row: HashMap<u32, Vec<u32>> = HashMap::new();
    for loc in read {
        per_row.entry(loc.row).or_default().push(loc.col);
    }
    let mut rows: Vec<_> = per_row.into_iter().collect();
    rows.sort();
    for (row, mut cols) in rows {
        cols.sort_unstable();
        if let Some(col) = (0..).zip(&cols).find(|&(want, &got)| want != got).map(|(want, _)| want) {
            audit.violations.push(Violation::ReadGap { missing: Location::new(row, col) });
        }
    }
}

/// Checks that `itemIndex` cells are first written in the virtual
/// enqueuer's order: left to right within a row, and a new row always
/// starting at column 0 right after the previous write.
pub(crate) fn audit_index_writes(writes: impl IntoIterator<Item = (OpId, Location)>, audit: &mut Audit) {
    let mut prev: Option<Location> = None;
    for (op, next) in writes {
        let expected = match prev {
            None => next == Location::new(0, 0),
            Some(p) if next <= p => {
                audit.violations.push(Violation::IndexOrder { op, prev: p, next });
                prev = Some(next);
                continue;
            }
            Some(p) => {
                next == Location::new(p.row, p.col + 1) || next == Location::new(p.row + 1, 0)
            }
        };
        if !expected {
            let p = prev.unwrap_or(Location::new(0, 0));
            audit.violations.push(Violation::RowGap { op, prev: p, next });
        }
        prev = Some(next);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::history::EventKind;
    use crate::memory::Access;
    use crate::step::{Op, Ret};

    fn step(h: &mut History, pid: usize, role: Role, op: Op, obj: ObjId, method: Method, ret: Word) {
        h.push(pid, role, op, EventKind::Step(Access { obj, method, ret }));
    }

    #[test]
    fn detects_double_claim_and_shared_read() {
        let mut h = History::new();
        for pid in [1, 2] {
            h.push(pid, Role::Dequeuer, Op::Deq, EventKind::Invoke);
        }
        for pid in [1, 2] {
            step(&mut h, pid, Role::Dequeuer, Op::Deq, ObjId::ItemIndex(0, 0), Method::Read, 1);
            step(&mut h, pid, Role::Dequeuer, Op::Deq, ObjId::ItemTaken(1), Method::FetchAdd(1), 0);
        }
        let mut audit = Audit::default();
        audit_dequeues(&h, 1, &mut audit);
        assert!(audit.violations.contains(&Violation::SharedIndexRead {
            loc: Location::new(0, 0),
            first: OpId(0),
            second: OpId(1)
        }));
        assert!(audit.violations.contains(&Violation::DoubleClaim { k: 1, first: OpId(0), second: OpId(1) }));
    }

    #[test]
    fn counts_failed_iterations() {
        let mut h = History::new();
        h.push(0, Role::Dequeuer, Op::Deq, EventKind::Invoke);
        for _ in 0..3 {
            step(&mut h, 0, Role::Dequeuer, Op::Deq, ObjId::ItemTaken(1), Method::FetchAdd(1), 1);
        }
        h.push(0, Role::Dequeuer, Op::Deq, EventKind::Respond(Ret::Value(BOTTOM)));
        let mut audit = Audit::default();
        audit_dequeues(&h, 1, &mut audit);
        assert_eq!(audit.max_failed_iterations, 3);
        assert!(audit.violations.contains(&Violation::TooManyFailedIterations { op: OpId(0), failed: 3 }));
    }

    #[test]
    fn index_write_order() {
        let op = OpId(0);
        let mut audit = Audit::default();
        let ok = [(0, 0), (0, 1), (1, 0), (1, 1), (1, 2), (2, 0)];
        audit_index_writes(ok.iter().map(|&(r, c)| (op, Location::new(r, c))), &mut audit);
        assert!(audit.is_clean());
        audit_index_writes([(op, Location::new(0, 0)), (op, Location::new(0, 2))], &mut audit);
        audit_index_writes([(op, Location::new(0, 1)), (op, Location::new(0, 0))], &mut audit);
        assert!(matches!(audit.violations[0], Violation::RowGap { .. }));
        assert!(audit.violations.iter().any(|v| matches!(v, Violation::IndexOrder { .. })));
    }

    #[test]
    fn read_cells_form_a_prefix_of_each_row() {
        let mut audit = Audit::default();
        audit_read_prefix([(0, 0), (0, 1), (1, 0)].map(|(r, c)| Location::new(r, c)), &mut audit);
        assert!(audit.is_clean());
        audit_read_prefix([(0, 0), (1, 1)].map(|(r, c)| Location::new(r, c)), &mut audit);
        assert_eq!(audit.violations, vec![Violation::ReadGap { missing: Location::new(1, 0) }]);
    }
}
