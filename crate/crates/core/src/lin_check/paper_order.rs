//! The order used to prove the one-enqueuer queue linearizable.
//!
//! Every operation gets a location in the `itemIndex` grid and an order
//! point. Operations are sorted by the row of their location, then by
//! order point. Half steps are represented by [`OrderPoint::half`].

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::base_objects::Method;
use crate::history::{History, OpId, Role};
use crate::memory::ObjId;
use crate::queue_core::Location;

use super::match_ops;

/// A point in time, possibly half a step after an event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OrderPoint {
    pub time: u64,
    pub half: bool,
}

impl fmt::Display for OrderPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.half {
            write!(f, "{}.5", self.time)
        } else {
            write!(f, "{}", self.time)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OpAnnotation {
    pub id: OpId,
    pub role: Role,
    pub loc: Location,
    pub orderpt: OrderPoint,
    pub matched: Option<OpId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PaperOrderError {
    #[error("{0} has no response")]
    Incomplete(OpId),
    #[error("{0} never touched itemIndex")]
    MissingLocation(OpId),
    #[error("deqActive{0} was written by more than one dequeue")]
    SharedDeqActive(Location),
    #[error("{0} and {1} have the same row and order point")]
    Tie(OpId, OpId),
}

/// Location and order point of every operation of a complete
/// one-enqueuer history, in operation id order.
pub fn annotate_semd(history: &History) -> Result<Vec<OpAnnotation>, PaperOrderError> {
    let times = history.step_times();
    let at = |idx: usize| times[idx].expect("step index");
    let ops = history.ops();
    let mut partner: HashMap<OpId, OpId> = HashMap::new();
    for (e, d) in match_ops(history) {
        partner.insert(e, d);
        partner.insert(d, e);
    }
    let mut active_writers: HashMap<Location, Vec<OpId>> = HashMap::new();
    for o in ops.iter().filter(|o| o.role == Role::Dequeuer) {
        for (_, a) in o.accesses(history) {
            if let (ObjId::DeqActive(i, j), Method::Write(_)) = (a.obj, a.method) {
                active_writers.entry(Location::new(i, j)).or_default().push(o.id);
            }
        }
    }

    let mut out = Vec::with_capacity(ops.len());
    for o in &ops {
        if o.respond.is_none() {
            return Err(PaperOrderError::Incomplete(o.id));
        }
        let matched = partner.get(&o.id).copied();
        let annotation = match o.role {
            Role::Enqueuer => {
                let writes: Vec<Location> = o
                    .accesses(history)
                    .filter_map(|(_, a)| match (a.obj, a.method) {
                        (ObjId::ItemIndex(i, j), Method::Write(_)) => Some(Location::new(i, j)),
                        _ => None,
                    })
                    .collect();
                let first = *writes.first().ok_or(PaperOrderError::MissingLocation(o.id))?;
                let loc = match writes.get(1) {
                    None => first,
                    Some(&second) => match active_writers.get(&first).map(Vec::as_slice) {
                        Some([d]) if matched == Some(*d) => first,
                        Some([_]) | None => second,
                        Some(_) => return Err(PaperOrderError::SharedDeqActive(first)),
                    },
                };
                let lstart = at(o.steps[0]);
                OpAnnotation { id: o.id, role: o.role, loc, orderpt: OrderPoint { time: lstart, half: false }, matched }
            }
            Role::Dequeuer => {
                let mut loc = None;
                let mut lalloc = None;
                for (idx, a) in o.accesses(history) {
                    match (a.obj, a.method) {
                        (ObjId::ItemIndex(i, j), Method::Read) => loc = Some(Location::new(i, j)),
                        (ObjId::Tail(_), Method::FetchAdd(_)) => lalloc = Some(at(idx)),
                        _ => {}
                    }
                }
                let (Some(loc), Some(lalloc)) = (loc, lalloc) else {
                    return Err(PaperOrderError::MissingLocation(o.id));
                };
                let mut orderpt = OrderPoint { time: lalloc, half: false };
                if let Some(e) = matched {
                    let lstart = at(ops[e.0 as usize].steps[0]);
                    orderpt = orderpt.max(OrderPoint { time: lstart, half: true });
                }
                OpAnnotation { id: o.id, role: o.role, loc, orderpt, matched }
            }
        };
        out.push(annotation);
    }
    Ok(out)
}

/// Operation ids sorted by `(row of location, order point)`.
pub fn paper_order(history: &History) -> Result<Vec<OpId>, PaperOrderError> {
    let mut annotated = annotate_semd(history)?;
    annotated.sort_by_key(|a| (a.loc.row, a.orderpt));
    for w in annotated.windows(2) {
        if (w[0].loc.row, w[0].orderpt) == (w[1].loc.row, w[1].orderpt) {
            return Err(PaperOrderError::Tie(w[0].id, w[1].id));
        }
    }
    Ok(annotated.into_iter().map(|a| a.id).collect())
}
