//! Audits of two-enqueuer histories: the dequeue-side properties of the
//! one-enqueuer queue, plus agreement between the two replaying enqueuers.

use std::collections::{HashMap, HashSet};

use crate::base_objects::{Method, Word};
use crate::history::{EventKind, History, Role};
use crate::memory::{ConsensusCell, ObjId};
use crate::queue_core::invariants::{audit_dequeues, audit_index_writes, Audit, Violation};
use crate::queue_core::Location;

use super::{temd_enq_bound, ConsensusMode};

/// Audits a two-enqueuer history in which at most `total_enqs` enqueues
/// are invoked.
pub fn audit_temd(history: &History, total_enqs: u32, mode: ConsensusMode) -> Audit {
    let mut audit = Audit::default();
    audit_dequeues(history, 2, &mut audit);
    let bound = temd_enq_bound(total_enqs, mode);
    let ops = history.ops();
    for o in ops.iter().filter(|o| o.role == Role::Enqueuer) {
        let steps = o.steps.len() as u32;
        audit.max_enq_steps = audit.max_enq_steps.max(steps);
        if o.respond.is_some() && steps > bound {
            audit.violations.push(Violation::StepBound { op: o.id, steps, bound });
        }
    }

    let mut values: HashMap<ObjId, Word> = HashMap::new();
    let mut first_index_writes = Vec::new();
    let mut seen_index: HashSet<Location> = HashSet::new();
    let mut rows: [Word; 2] = [0, 0];
    let mut proposals: HashMap<(ConsensusCell, usize), Word> = HashMap::new();
    let mut decided: HashMap<ConsensusCell, Word> = HashMap::new();
    let op_of: HashMap<usize, _> = ops.iter().flat_map(|o| o.steps.iter().map(move |&s| (s, o.id))).collect();

    let mut decide = |cell: ConsensusCell, value: Word, audit: &mut Audit| {
        let first = *decided.entry(cell).or_insert(value);
        if first != value {
            audit.violations.push(Violation::Disagreement { obj: ObjId::Consensus(cell), first, second: value });
        }
    };

    for (idx, e) in history.events().iter().enumerate() {
        let EventKind::Step(a) = e.kind else { continue };
        match (a.obj, a.method) {
            (ObjId::Item(_) | ObjId::ItemIndex(..), Method::Write(x)) => {
                let first = *values.entry(a.obj).or_insert(x);
                if first != x {
                    audit.violations.push(Violation::ConflictingWrite { obj: a.obj, first, second: x });
                }
                if let ObjId::ItemIndex(i, j) = a.obj {
                    if seen_index.insert(Location::new(i, j)) {
                        first_index_writes.push((op_of[&idx], Location::new(i, j)));
                    }
                }
            }
            (ObjId::RowOf(id), Method::Write(r)) => {
                let prev = rows[id as usize];
                if r != prev + 1 {
                    audit.violations.push(Violation::RowOrder { op: op_of[&idx], prev, next: r });
                }
                rows[id as usize] = r;
            }
            (ObjId::Proposal(cell, id), Method::Write(x)) => {
                proposals.insert((cell, id as usize), x);
            }
            (ObjId::Winner(cell), Method::FetchAdd(_)) if a.ret == 0 => {
                if let Some(&x) = proposals.get(&(cell, e.pid)) {
                    decide(cell, x, &mut audit);
                }
            }
            (ObjId::Proposal(cell, _), Method::Read) => decide(cell, a.ret, &mut audit),
            (ObjId::Consensus(cell), Method::Decide(_)) => decide(cell, a.ret, &mut audit),
            _ => {}
        }
    }
    audit_index_writes(first_index_writes, &mut audit);
    audit
}
