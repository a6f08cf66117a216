//! The single-enqueuer queues as step machines.
//!
//! [`SesdEnqueuer`]/[`SesdDequeuer`] are the folklore one-producer
//! one-consumer array queue. [`SemdEnqueuer`]/[`Dequeuer`] are the
//! single-enqueuer multi-dequeuer queue: dequeuers reserve cells of a
//! two-dimensional `itemIndex` array with per-row fetch-and-add counters,
//! flag them in `deqActive`, and claim item indexes through `itemTaken`. An
//! enqueuer that finds its cell flagged assumes it was overtaken and repeats
//! the index at the start of the next row before advancing `row`.
//!
//! Enqueuer-local and dequeuer-local variables are process-private and cost
//! no steps. The [`Dequeuer`] is shared with the two-enqueuer queue, which
//! only differs in how the starting row is read.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::base_objects::{Method, Word, BOTTOM, TRUE};
use crate::memory::{ObjId, SharedMemory};
use crate::step::{continuing, finished, Op, OpStats, Ret, Step, StepError, StepMachine};

pub mod invariants;

/// A cell `(row, col)` of `itemIndex`, ordered lexicographically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Location {
    pub row: u32,
    pub col: u32,
}

impl Location {
    pub fn new(row: u32, col: u32) -> Self {
        Location { row, col }
    }

    pub fn lex_cmp(&self, other: &Location) -> Ordering {
        self.cmp(other)
    }
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

fn expect_enq(op: Op) -> Result<Word, StepError> {
    match op {
        Op::Enq(x) if x == BOTTOM => Err(StepError::Protocol("cannot enqueue ⊥".into())),
        Op::Enq(x) => Ok(x),
        Op::Deq => Err(StepError::Protocol("enqueuer cannot dequeue".into())),
    }
}

/// Enqueuer of the one-producer one-consumer queue: one write per enq.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct SesdEnqueuer {
    head: u32,
    pending: Option<Word>,
}

impl SesdEnqueuer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn head(&self) -> u32 {
        self.head
    }
}

impl StepMachine for SesdEnqueuer {
    fn invoke(&mut self, op: Op) -> Result<(), StepError> {
        if self.pending.is_some() {
            return Err(StepError::Busy);
        }
        self.pending = Some(expect_enq(op)?);
        Ok(())
    }

    fn is_busy(&self) -> bool {
        self.pending.is_some()
    }

    fn step<M: SharedMemory + ?Sized>(&mut self, mem: &M) -> Result<Step, StepError> {
        let x = self.pending.take().ok_or(StepError::Idle)?;
        let access = mem.access(ObjId::Item(self.head), Method::Write(x))?;
        self.head += 1;
        Ok(finished(access, Ret::Ok, OpStats { steps: 1, ..OpStats::default() }))
    }
}

/// Dequeuer of the one-producer one-consumer queue: one read per deq.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct SesdDequeuer {
    tail: u32,
    pending: bool,
}

impl SesdDequeuer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tail(&self) -> u32 {
        self.tail
    }
}

impl StepMachine for SesdDequeuer {
    fn invoke(&mut self, op: Op) -> Result<(), StepError> {
        if self.pending {
            return Err(StepError::Busy);
        }
        if op != Op::Deq {
            return Err(StepError::Protocol("dequeuer cannot enqueue".into()));
        }
        self.pending = true;
        Ok(())
    }

    fn is_busy(&self) -> bool {
        self.pending
    }

    fn step<M: SharedMemory + ?Sized>(&mut self, mem: &M) -> Result<Step, StepError> {
        if !self.pending {
            return Err(StepError::Idle);
        }
        self.pending = false;
        let access = mem.access(ObjId::Item(self.tail), Method::Read)?;
        let mut stats = OpStats { steps: 1, ..OpStats::default() };
        if access.ret != BOTTOM {
            stats.claimed = Some(self.tail);
            self.tail += 1;
        }
        Ok(finished(access, Ret::Value(access.ret), stats))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum EnqPc {
    WriteItem,
    WriteIndex,
    ReadActive,
    WriteNextRow,
    WriteRow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct EnqOp {
    pc: EnqPc,
    x: Word,
    steps: u32,
}

/// The single enqueuer of the multi-dequeuer queue.
///
/// It is the only writer of `row`, so it keeps a private copy instead of
/// reading the register back.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct SemdEnqueuer {
    enq_count: u32,
    head: u32,
    row: u32,
    pending: Option<EnqOp>,
}

impl SemdEnqueuer {
    pub fn new() -> Self {
        Self::default()
    }

    /// `(row, head)`: where the next index will be written.
    pub fn position(&self) -> Location {
        Location::new(self.row, self.head)
    }

    pub fn enq_count(&self) -> u32 {
        self.enq_count
    }
}

impl StepMachine for SemdEnqueuer {
    fn invoke(&mut self, op: Op) -> Result<(), StepError> {
        if self.pending.is_some() {
            return Err(StepError::Busy);
        }
        let x = expect_enq(op)?;
        self.pending = Some(EnqOp { pc: EnqPc::WriteItem, x, steps: 0 });
        Ok(())
    }

    fn is_busy(&self) -> bool {
        self.pending.is_some()
    }

    fn step<M: SharedMemory + ?Sized>(&mut self, mem: &M) -> Result<Step, StepError> {
        let mut op = self.pending.ok_or(StepError::Idle)?;
        op.steps += 1;
        let done = |access, steps| finished(access, Ret::Ok, OpStats { steps, ..OpStats::default() });
        let step = match op.pc {
            EnqPc::WriteItem => {
                self.enq_count += 1;
                op.pc = EnqPc::WriteIndex;
                continuing(mem.access(ObjId::Item(self.enq_count), Method::Write(op.x))?)
            }
            EnqPc::WriteIndex => {
                op.pc = EnqPc::ReadActive;
                let index = Word::from(self.enq_count);
                continuing(mem.access(ObjId::ItemIndex(self.row, self.head), Method::Write(index))?)
            }
            EnqPc::ReadActive => {
                let access = mem.access(ObjId::DeqActive(self.row, self.head), Method::Read)?;
                if access.ret == TRUE {
                    op.pc = EnqPc::WriteNextRow;
                    continuing(access)
                } else {
                    self.head += 1;
                    self.pending = None;
                    return Ok(done(access, op.steps));
                }
            }
            EnqPc::WriteNextRow => {
                op.pc = EnqPc::WriteRow;
                let index = Word::from(self.enq_count);
                let access = mem.access(ObjId::ItemIndex(self.row + 1, 0), Method::Write(index))?;
                self.head = 1;
                continuing(access)
            }
            EnqPc::WriteRow => {
                self.row += 1;
                self.pending = None;
                let access = mem.access(ObjId::Row, Method::Write(Word::from(self.row)))?;
                return Ok(done(access, op.steps));
            }
        };
        self.pending = Some(op);
        Ok(step)
    }
}

/// How a dequeuer learns the row to work in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RowSource {
    /// Read the single `row` register.
    Single,
    /// Read `row[0]` then `row[1]` and take the maximum.
    MaxOfPair,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum DeqPc {
    ReadRow,
    ReadRow0,
    ReadRow1 { row0: u32 },
    Alloc,
    MarkActive,
    ReadIndex,
    Claim { k: u32 },
    ReadItem { k: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct DeqOp {
    pc: DeqPc,
    i: u32,
    j: u32,
    steps: u32,
    failed: u32,
}

/// A dequeuer of the multi-dequeuer queues.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Dequeuer {
    rows: RowSource,
    pending: Option<DeqOp>,
}

impl Dequeuer {
    pub fn new(rows: RowSource) -> Self {
        Dequeuer { rows, pending: None }
    }
}

fn word_to_index(w: Word) -> Result<u32, StepError> {
    u32::try_from(w).map_err(|_| StepError::Protocol(format!("{w} is not an index")))
}

impl StepMachine for Dequeuer {
    fn invoke(&mut self, op: Op) -> Result<(), StepError> {
        if self.pending.is_some() {
            return Err(StepError::Busy);
        }
        if op != Op::Deq {
            return Err(StepError::Protocol("dequeuer cannot enqueue".into()));
        }
        let pc = match self.rows {
            RowSource::Single => DeqPc::ReadRow,
            RowSource::MaxOfPair => DeqPc::ReadRow0,
        };
        self.pending = Some(DeqOp { pc, i: 0, j: 0, steps: 0, failed: 0 });
        Ok(())
    }

    fn is_busy(&self) -> bool {
        self.pending.is_some()
    }

    fn step<M: SharedMemory + ?Sized>(&mut self, mem: &M) -> Result<Step, StepError> {
        let mut op = self.pending.ok_or(StepError::Idle)?;
        op.steps += 1;
        let stats = |op: &DeqOp, claimed| OpStats {
            steps: op.steps,
            failed_iterations: op.failed,
            claimed,
            ..OpStats::default()
        };
        let access = match op.pc {
            DeqPc::ReadRow => {
                let a = mem.access(ObjId::Row, Method::Read)?;
                op.i = word_to_index(a.ret)?;
                op.pc = DeqPc::Alloc;
                a
            }
            DeqPc::ReadRow0 => {
                let a = mem.access(ObjId::RowOf(0), Method::Read)?;
                op.pc = DeqPc::ReadRow1 { row0: word_to_index(a.ret)? };
                a
            }
            DeqPc::ReadRow1 { row0 } => {
                let a = mem.access(ObjId::RowOf(1), Method::Read)?;
                op.i = row0.max(word_to_index(a.ret)?);
                op.pc = DeqPc::Alloc;
                a
            }
            DeqPc::Alloc => {
                let a = mem.access(ObjId::Tail(op.i), Method::FetchAdd(1))?;
                op.j = word_to_index(a.ret)?;
                op.pc = DeqPc::MarkActive;
                a
            }
            DeqPc::MarkActive => {
                op.pc = DeqPc::ReadIndex;
                mem.access(ObjId::DeqActive(op.i, op.j), Method::Write(TRUE))?
            }
            DeqPc::ReadIndex => {
                let a = mem.access(ObjId::ItemIndex(op.i, op.j), Method::Read)?;
                if a.ret == 0 {
                    self.pending = None;
                    return Ok(finished(a, Ret::Value(BOTTOM), stats(&op, None)));
                }
                op.pc = DeqPc::Claim { k: word_to_index(a.ret)? };
                a
            }
            DeqPc::Claim { k } => {
                let a = mem.access(ObjId::ItemTaken(k), Method::FetchAdd(1))?;
                if a.ret == 0 {
                    op.pc = DeqPc::ReadItem { k };
                } else {
                    op.failed += 1;
                    op.pc = DeqPc::Alloc;
                }
                a
            }
            DeqPc::ReadItem { k } => {
                let a = mem.access(ObjId::Item(k), Method::Read)?;
                self.pending = None;
                return Ok(finished(a, Ret::Value(a.ret), stats(&op, Some(k))));
            }
        };
        self.pending = Some(op);
        Ok(continuing(access))
    }
}

/// Worst-case shared steps of a one-enqueuer enq: three, plus two when overtaken.
pub const SEMD_ENQ_BOUND: u32 = 5;

/// Shared steps of one dequeue loop body that does not return.
pub const DEQ_FAILED_ITERATION_STEPS: u32 = 4;

/// Most loop bodies a dequeue can run to the end without returning.
pub const DEQ_MAX_FAILED_ITERATIONS: u32 = 2;

/// Worst-case shared steps of a dequeue, given the steps spent reading the row.
pub const fn deq_bound(row_reads: u32) -> u32 {
    // Final iteration: f&a tail, write deqActive, read itemIndex, f&a itemTaken, read item.
    row_reads + DEQ_MAX_FAILED_ITERATIONS * DEQ_FAILED_ITERATION_STEPS + 5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base_objects::FALSE;
    use crate::memory::{SimMemory, SharedMemory};

    fn ret_value(c: crate::step::Completion) -> Word {
        match c.ret {
            Ret::Value(v) => v,
            Ret::Ok => panic!("not a dequeue"),
        }
    }

    #[test]
    fn sesd_sequential_fifo() {
        let mem = SimMemory::new();
        let mut e = SesdEnqueuer::new();
        let mut d = SesdDequeuer::new();
        assert_eq!(ret_value(d.run(&mem, Op::Deq).unwrap()), BOTTOM);
        e.run(&mem, Op::Enq(10)).unwrap();
        assert_eq!(mem.peek(ObjId::Item(0)), 10);
        assert_eq!(e.head(), 1);
        e.run(&mem, Op::Enq(20)).unwrap();
        assert_eq!(mem.peek(ObjId::Item(1)), 20);
        assert_eq!(ret_value(d.run(&mem, Op::Deq).unwrap()), 10);
        assert_eq!(ret_value(d.run(&mem, Op::Deq).unwrap()), 20);
        assert_eq!(ret_value(d.run(&mem, Op::Deq).unwrap()), BOTTOM);
        assert_eq!(d.tail(), 2);
    }

    #[test]
    fn sesd_step_counts() {
        let mem = SimMemory::new();
        let mut e = SesdEnqueuer::new();
        let mut d = SesdDequeuer::new();
        assert_eq!(e.run(&mem, Op::Enq(1)).unwrap().stats.steps, 1);
        assert_eq!(d.run(&mem, Op::Deq).unwrap().stats.steps, 1);
    }

    #[test]
    fn role_errors() {
        let mem = SimMemory::new();
        let mut e = SemdEnqueuer::new();
        assert!(matches!(e.invoke(Op::Deq), Err(StepError::Protocol(_))));
        assert!(matches!(e.invoke(Op::Enq(BOTTOM)), Err(StepError::Protocol(_))));
        assert_eq!(e.step(&mem), Err(StepError::Idle));
        e.invoke(Op::Enq(1)).unwrap();
        assert_eq!(e.invoke(Op::Enq(2)), Err(StepError::Busy));
        let mut d = Dequeuer::new(RowSource::Single);
        assert!(matches!(d.invoke(Op::Enq(1)), Err(StepError::Protocol(_))));
    }

    #[test]
    fn semd_quiescent_enq() {
        let mem = SimMemory::new();
        let mut e = SemdEnqueuer::new();
        let done = e.run(&mem, Op::Enq(7)).unwrap();
        assert_eq!(done.stats.steps, 3);
        assert_eq!(mem.peek(ObjId::ItemIndex(0, 0)), 1);
        assert_eq!(mem.peek(ObjId::Item(1)), 7);
        assert_eq!(e.position(), Location::new(0, 1));
        assert_eq!(mem.peek(ObjId::Row), 0);
        e.run(&mem, Op::Enq(8)).unwrap();
        assert_eq!(mem.peek(ObjId::ItemIndex(0, 1)), 2);
    }

    #[test]
    fn semd_enq_after_empty_deq_moves_to_next_row() {
        let mem = SimMemory::new();
        let mut d = Dequeuer::new(RowSource::Single);
        let done = d.run(&mem, Op::Deq).unwrap();
        assert_eq!(done.ret, Ret::Value(BOTTOM));
        assert_eq!(done.stats.steps, 4);
        assert_eq!(mem.peek(ObjId::DeqActive(0, 0)), TRUE);

        let mut e = SemdEnqueuer::new();
        let done = e.run(&mem, Op::Enq(7)).unwrap();
        assert_eq!(done.stats.steps, 5);
        assert_eq!(mem.peek(ObjId::ItemIndex(0, 0)), 1);
        assert_eq!(mem.peek(ObjId::ItemIndex(1, 0)), 1);
        assert_eq!(mem.peek(ObjId::Row), 1);
        assert_eq!(e.position(), Location::new(1, 1));

        let done = d.run(&mem, Op::Deq).unwrap();
        assert_eq!(done.ret, Ret::Value(7));
        assert_eq!(done.stats.steps, 6);
        assert_eq!(done.stats.claimed, Some(1));
    }

    /// Dequeuer D reserves (0,0) and stalls; the enqueuer overtakes into row 1;
    /// D wins the item; a later dequeue loses the duplicate index and retries.
    #[test]
    fn overtake_then_win() {
        let mem = SimMemory::new();
        let mut d = Dequeuer::new(RowSource::Single);
        d.invoke(Op::Deq).unwrap();
        for _ in 0..3 {
            // read row, f&a tail[0], write deqActive[0,0]
            assert!(d.step(&mem).unwrap().completion.is_none());
        }
        let mut e = SemdEnqueuer::new();
        e.run(&mem, Op::Enq(42)).unwrap();
        assert_eq!(mem.peek(ObjId::ItemIndex(1, 0)), 1);
        assert_eq!(mem.peek(ObjId::Row), 1);

        let mut last = None;
        while last.is_none() {
            last = d.step(&mem).unwrap().completion;
        }
        assert_eq!(last.unwrap().ret, Ret::Value(42));

        let mut d2 = Dequeuer::new(RowSource::Single);
        let done = d2.run(&mem, Op::Deq).unwrap();
        assert_eq!(done.ret, Ret::Value(BOTTOM));
        assert_eq!(done.stats.failed_iterations, 1);
        assert_eq!(mem.peek(ObjId::ItemTaken(1)), 2);
        assert_eq!(mem.peek(ObjId::DeqActive(1, 1)), TRUE);
        assert_eq!(mem.peek(ObjId::DeqActive(0, 1)), FALSE);
    }

    #[test]
    fn dequeuer_reads_max_of_row_pair() {
        let mem = SimMemory::new();
        mem.apply(ObjId::RowOf(0), Method::Write(2)).unwrap();
        mem.apply(ObjId::RowOf(1), Method::Write(1)).unwrap();
        let mut d = Dequeuer::new(RowSource::MaxOfPair);
        let done = d.run(&mem, Op::Deq).unwrap();
        assert_eq!(done.stats.steps, 5);
        assert_eq!(mem.peek(ObjId::Tail(2)), 1);
    }

    #[test]
    fn bounds() {
        assert_eq!(deq_bound(1), 14);
        assert_eq!(deq_bound(2), 15);
    }
}
