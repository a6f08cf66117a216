//! The shared address space of the queue algorithms and its two backends.
//!
//! Step machines name every shared object with an [`ObjId`] and issue one
//! [`Method`] call per step through [`SharedMemory::apply`]. [`SimMemory`]
//! serializes the calls in the order a scheduler picks them and can roll
//! back; [`NativeMemory`] maps each family onto lazily grown arrays of
//! machine atomics and is safe to share between threads.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use crate::base_objects::{
    transition, ConsensusObject, FetchAdd, Method, ObjectError, ObjectKind, Register, Word, BOTTOM, FALSE,
};
use crate::growable::{GrowableArray, Grid};

/// A consensus instance used by the two-enqueuer queue.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConsensusCell {
    /// `deqActiveRead[row, col]`
    DeqActiveRead(u32, u32),
    /// Slot `k` (from 1) of the agenda.
    AgendaSlot(u32),
}

/// Address of one shared base object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObjId {
    Item(u32),
    ItemIndex(u32, u32),
    DeqActive(u32, u32),
    ItemTaken(u32),
    /// The single `row` register of the one-enqueuer queue.
    Row,
    /// `row[id]` of the two-enqueuer queue.
    RowOf(u8),
    Tail(u32),
    /// A consensus object used as a primitive.
    Consensus(ConsensusCell),
    /// Proposal register of process `id` in the fetch-and-add consensus construction.
    Proposal(ConsensusCell, u8),
    /// Arbitration counter of the fetch-and-add consensus construction.
    Winner(ConsensusCell),
    /// Item published by enqueuer `id` for its `seq`-th agenda append.
    AgendaLog(u8, u32),
}

impl ObjId {
    pub fn kind(&self) -> ObjectKind {
        match self {
            ObjId::ItemTaken(_) | ObjId::Tail(_) | ObjId::Winner(_) => ObjectKind::FetchAdd,
            ObjId::Consensus(_) => ObjectKind::Consensus,
            _ => ObjectKind::Register,
        }
    }

    pub fn initial(&self) -> Word {
        match self {
            ObjId::Item(_) | ObjId::Consensus(_) | ObjId::Proposal(..) | ObjId::AgendaLog(..) => BOTTOM,
            ObjId::DeqActive(..) => FALSE,
            _ => 0,
        }
    }

    /// Objects the dequeuers can observe.
    pub fn dequeuer_visible(&self) -> bool {
        matches!(
            self,
            ObjId::Item(_)
                | ObjId::ItemIndex(..)
                | ObjId::DeqActive(..)
                | ObjId::ItemTaken(_)
                | ObjId::Row
                | ObjId::RowOf(_)
                | ObjId::Tail(_)
        )
    }
}

impl fmt::Display for ConsensusCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConsensusCell::DeqActiveRead(i, j) => write!(f, "deqActiveRead[{i},{j}]"),
            ConsensusCell::AgendaSlot(k) => write!(f, "agenda.slot[{k}]"),
        }
    }
}

impl fmt::Display for ObjId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjId::Item(k) => write!(f, "item[{k}]"),
            ObjId::ItemIndex(i, j) => write!(f, "itemIndex[{i},{j}]"),
            ObjId::DeqActive(i, j) => write!(f, "deqActive[{i},{j}]"),
            ObjId::ItemTaken(k) => write!(f, "itemTaken[{k}]"),
            ObjId::Row => write!(f, "row"),
            ObjId::RowOf(id) => write!(f, "row[{id}]"),
            ObjId::Tail(i) => write!(f, "tail[{i}]"),
            ObjId::Consensus(c) => write!(f, "{c}"),
            ObjId::Proposal(c, id) => write!(f, "{c}.proposal[{id}]"),
            ObjId::Winner(c) => write!(f, "{c}.winner"),
            ObjId::AgendaLog(id, seq) => write!(f, "agenda.log[{id},{seq}]"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("unrecognized object name `{0}`")]
pub struct ParseObjIdError(String);

fn parse_indexes(s: &str, name: &str) -> Option<Vec<u32>> {
    let inner = s.strip_prefix(name)?.strip_prefix('[')?.strip_suffix(']')?;
    inner.split(',').map(|p| p.trim().parse().ok()).collect()
}

fn parse_cell(s: &str) -> Option<ConsensusCell> {
    if let Some(ix) = parse_indexes(s, "deqActiveRead") {
        if let [i, j] = ix[..] {
            return Some(ConsensusCell::DeqActiveRead(i, j));
        }
    }
    match parse_indexes(s, "agenda.slot")?[..] {
        [k] => Some(ConsensusCell::AgendaSlot(k)),
        _ => None,
    }
}

impl FromStr for ObjId {
    type Err = ParseObjIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseObjIdError(s.to_owned());
        if s == "row" {
            return Ok(ObjId::Row);
        }
        if let Some(cell) = s.strip_suffix(".winner") {
            return parse_cell(cell).map(ObjId::Winner).ok_or_else(err);
        }
        if let Some((cell, rest)) = s.split_once(".proposal") {
            let id = match parse_indexes(rest, "").ok_or_else(err)?[..] {
                [id] => u8::try_from(id).map_err(|_| err())?,
                _ => return Err(err()),
            };
            return parse_cell(cell).map(|c| ObjId::Proposal(c, id)).ok_or_else(err);
        }
        if let Some(cell) = parse_cell(s) {
            return Ok(ObjId::Consensus(cell));
        }
        let (name, _) = s.split_once('[').ok_or_else(err)?;
        let ix = parse_indexes(s, name).ok_or_else(err)?;
        let small = |v: u32| u8::try_from(v).map_err(|_| err());
        Ok(match (name, &ix[..]) {
            ("item", &[k]) => ObjId::Item(k),
            ("itemIndex", &[i, j]) => ObjId::ItemIndex(i, j),
            ("deqActive", &[i, j]) => ObjId::DeqActive(i, j),
            ("itemTaken", &[k]) => ObjId::ItemTaken(k),
            ("row", &[id]) => ObjId::RowOf(small(id)?),
            ("tail", &[i]) => ObjId::Tail(i),
            ("agenda.log", &[id, seq]) => ObjId::AgendaLog(small(id)?, seq),
            _ => return Err(err()),
        })
    }
}

/// One completed shared step: the object, the call, and what it returned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Access {
    pub obj: ObjId,
    pub method: Method,
    pub ret: Word,
}

/// A memory holding every shared object of an algorithm.
pub trait SharedMemory {
    /// Performs one atomic method call.
    fn apply(&self, obj: ObjId, method: Method) -> Result<Word, ObjectError>;

    fn access(&self, obj: ObjId, method: Method) -> Result<Access, ObjectError> {
        self.apply(obj, method).map(|ret| Access { obj, method, ret })
    }
}

impl<M: SharedMemory + ?Sized> SharedMemory for &M {
    fn apply(&self, obj: ObjId, method: Method) -> Result<Word, ObjectError> {
        (**self).apply(obj, method)
    }
}

impl<M: SharedMemory + ?Sized> SharedMemory for std::sync::Arc<M> {
    fn apply(&self, obj: ObjId, method: Method) -> Result<Word, ObjectError> {
        (**self).apply(obj, method)
    }
}

/// Scheduler-driven memory. Only touched cells are stored; the rest read as
/// their initial value. Every change is journaled so exploration can undo.
#[derive(Clone, Debug, Default)]
pub struct SimMemory {
    inner: RefCell<SimInner>,
}

#[derive(Clone, Debug, Default)]
struct SimInner {
    cells: BTreeMap<ObjId, Word>,
    journal: Vec<(ObjId, Option<Word>)>,
}

/// A position in the [`SimMemory`] undo journal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mark(usize);

impl SimMemory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Current value without taking a step.
    pub fn peek(&self, obj: ObjId) -> Word {
        self.inner.borrow().cells.get(&obj).copied().unwrap_or_else(|| obj.initial())
    }

    /// Whether any step has modified (or rewritten) `obj`.
    pub fn touched(&self, obj: ObjId) -> bool {
        self.inner.borrow().cells.contains_key(&obj)
    }

    pub fn mark(&self) -> Mark {
        Mark(self.inner.borrow().journal.len())
    }

    pub fn rollback(&mut self, mark: Mark) {
        let inner = self.inner.get_mut();
        while inner.journal.len() > mark.0 {
            let (obj, prev) = inner.journal.pop().expect("journal underflow");
            match prev {
                Some(v) => inner.cells.insert(obj, v),
                None => inner.cells.remove(&obj),
            };
        }
    }

    /// The cell changed by the most recent non-read step and its value
    /// before that step.
    pub fn last_change(&self) -> Option<(ObjId, Word)> {
        self.inner.borrow().journal.last().map(|&(obj, prev)| (obj, prev.unwrap_or_else(|| obj.initial())))
    }

    /// Drops the undo journal, keeping the current contents.
    pub fn forget_journal(&mut self) {
        self.inner.get_mut().journal.clear();
    }

    /// Visits touched cells in address order.
    pub fn for_each_cell(&self, mut f: impl FnMut(ObjId, Word)) {
        for (&obj, &v) in &self.inner.borrow().cells {
            f(obj, v)
        }
    }

    pub fn hash_contents<H: Hasher>(&self, state: &mut H) {
        self.inner.borrow().cells.hash(state)
    }
}

impl SharedMemory for SimMemory {
    fn apply(&self, obj: ObjId, method: Method) -> Result<Word, ObjectError> {
        let mut inner = self.inner.borrow_mut();
        let prev = inner.cells.get(&obj).copied();
        let (ret, next) = transition(obj.kind(), prev.unwrap_or_else(|| obj.initial()), method)?;
        // Reads leave no trace; everything else marks the cell as touched.
        if method != Method::Read {
            inner.cells.insert(obj, next);
            inner.journal.push((obj, prev));
        }
        Ok(ret)
    }
}

/// Machine-atomic memory for real threads.
#[derive(Debug)]
pub struct NativeMemory {
    item: GrowableArray<Register>,
    item_index: Grid<Register>,
    deq_active: Grid<Register>,
    item_taken: GrowableArray<FetchAdd>,
    row: Register,
    rows: [Register; 2],
    tail: GrowableArray<FetchAdd>,
    dar: Grid<ConsensusObject>,
    dar_proposals: [Grid<Register>; 2],
    dar_winner: Grid<FetchAdd>,
    slot: GrowableArray<ConsensusObject>,
    slot_proposals: [GrowableArray<Register>; 2],
    slot_winner: GrowableArray<FetchAdd>,
    agenda_log: [GrowableArray<Register>; 2],
}

impl Default for NativeMemory {
    fn default() -> Self {
        let reg = |init: Word| move || Register::new(init);
        NativeMemory {
            item: GrowableArray::new(reg(BOTTOM)),
            item_index: Grid::new(reg(0)),
            deq_active: Grid::new(reg(FALSE)),
            item_taken: GrowableArray::new(|| FetchAdd::new(0)),
            row: Register::new(0),
            rows: [Register::new(0), Register::new(0)],
            tail: GrowableArray::new(|| FetchAdd::new(0)),
            dar: Grid::new(ConsensusObject::new),
            dar_proposals: [Grid::new(reg(BOTTOM)), Grid::new(reg(BOTTOM))],
            dar_winner: Grid::new(|| FetchAdd::new(0)),
            slot: GrowableArray::new(ConsensusObject::new),
            slot_proposals: [GrowableArray::new(reg(BOTTOM)), GrowableArray::new(reg(BOTTOM))],
            slot_winner: GrowableArray::new(|| FetchAdd::new(0)),
            agenda_log: [GrowableArray::new(reg(BOTTOM)), GrowableArray::new(reg(BOTTOM))],
        }
    }
}

impl NativeMemory {
    pub fn new() -> Self {
        Self::default()
    }
}

enum NativeObj<'a> {
    Register(&'a Register),
    FetchAdd(&'a FetchAdd),
    Consensus(&'a ConsensusObject),
}

fn side(id: u8) -> Result<usize, ObjectError> {
    match id {
        0 | 1 => Ok(id as usize),
        other => Err(ObjectError::InvalidPid(other as usize)),
    }
}

impl NativeMemory {
    fn resolve(&self, obj: ObjId) -> Result<NativeObj<'_>, ObjectError> {
        use ConsensusCell::*;
        let u = |v: u32| v as usize;
        Ok(match obj {
            ObjId::Item(k) => NativeObj::Register(self.item.get(u(k))),
            ObjId::ItemIndex(i, j) => NativeObj::Register(self.item_index.get(u(i), u(j))),
            ObjId::DeqActive(i, j) => NativeObj::Register(self.deq_active.get(u(i), u(j))),
            ObjId::ItemTaken(k) => NativeObj::FetchAdd(self.item_taken.get(u(k))),
            ObjId::Row => NativeObj::Register(&self.row),
            ObjId::RowOf(id) => NativeObj::Register(&self.rows[side(id)?]),
            ObjId::Tail(i) => NativeObj::FetchAdd(self.tail.get(u(i))),
            ObjId::Consensus(DeqActiveRead(i, j)) => NativeObj::Consensus(self.dar.get(u(i), u(j))),
            ObjId::Consensus(AgendaSlot(k)) => NativeObj::Consensus(self.slot.get(u(k))),
            ObjId::Proposal(DeqActiveRead(i, j), id) => {
                NativeObj::Register(self.dar_proposals[side(id)?].get(u(i), u(j)))
            }
            ObjId::Proposal(AgendaSlot(k), id) => NativeObj::Register(self.slot_proposals[side(id)?].get(u(k))),
            ObjId::Winner(DeqActiveRead(i, j)) => NativeObj::FetchAdd(self.dar_winner.get(u(i), u(j))),
            ObjId::Winner(AgendaSlot(k)) => NativeObj::FetchAdd(self.slot_winner.get(u(k))),
            ObjId::AgendaLog(id, seq) => NativeObj::Register(self.agenda_log[side(id)?].get(u(seq))),
        })
    }
}

impl SharedMemory for NativeMemory {
    fn apply(&self, obj: ObjId, method: Method) -> Result<Word, ObjectError> {
        let mismatch = |kind| ObjectError::KindMismatch { kind, method: method.name() };
        match (self.resolve(obj)?, method) {
            (NativeObj::Register(r), Method::Read) => Ok(r.read()),
            (NativeObj::Register(r), Method::Write(x)) => {
                r.write(x);
                Ok(x)
            }
            (NativeObj::FetchAdd(f), Method::FetchAdd(x)) => Ok(f.fetch_add(x)),
            (NativeObj::Consensus(c), Method::Decide(x)) => c.decide(x),
            (NativeObj::Register(_), _) => Err(mismatch(ObjectKind::Register)),
            (NativeObj::FetchAdd(_), _) => Err(mismatch(ObjectKind::FetchAdd)),
            (NativeObj::Consensus(_), _) => Err(mismatch(ObjectKind::Consensus)),
        }
    }
}
