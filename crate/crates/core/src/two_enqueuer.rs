//! The two-enqueuer multi-dequeuer queue.
//!
//! Both real enqueuers drive one virtual single-enqueuer trajectory. An enq
//! first appends its item to a two-process [`AgendaProcess`] log, which
//! assigns it the agenda index `k`; it then replays the virtual enqueuer's
//! steps for every agenda entry up to `k` that it has not yet replayed.
//! Writes to dequeuer-visible objects are idempotent (both enqueuers write
//! the same values), and the one branching read of `deqActive` is agreed on
//! through a per-cell consensus object so both follow the same branch.
//!
//! Consensus comes either from a primitive consensus object or from the
//! two-process construction over registers and fetch-and-add
//! ([`ConsensusMode`]).

use serde::{Deserialize, Serialize};

use crate::base_objects::{Method, ObjectError, Word, BOTTOM, FALSE, TRUE};
use crate::memory::{Access, ConsensusCell, ObjId, SharedMemory};
use crate::queue_core::Location;
use crate::step::{continuing, finished, Op, OpStats, Ret, Step, StepError, StepMachine};

pub mod invariants;

/// How consensus objects are realized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConsensusMode {
    /// One `decide` step on a consensus base object.
    Primitive,
    /// Publish, arbitrate with fetch-and-add, and adopt the winner's proposal.
    #[default]
    FromFetchAdd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum ConsensusPc {
    Propose,
    Arbitrate,
    Adopt,
}

/// One process's participation in one consensus instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConsensusRun {
    cell: ConsensusCell,
    value: Word,
    pc: ConsensusPc,
}

impl ConsensusRun {
    pub fn new(cell: ConsensusCell, value: Word) -> Self {
        ConsensusRun { cell, value, pc: ConsensusPc::Propose }
    }

    /// One step; yields the decided value once known.
    pub fn step<M: SharedMemory + ?Sized>(
        &mut self,
        mem: &M,
        mode: ConsensusMode,
        id: u8,
    ) -> Result<(Access, Option<Word>), ObjectError> {
        if self.value == BOTTOM {
            return Err(ObjectError::BottomProposal);
        }
        match (mode, self.pc) {
            (ConsensusMode::Primitive, _) => {
                let a = mem.access(ObjId::Consensus(self.cell), Method::Decide(self.value))?;
                Ok((a, Some(a.ret)))
            }
            (ConsensusMode::FromFetchAdd, ConsensusPc::Propose) => {
                self.pc = ConsensusPc::Arbitrate;
                let a = mem.access(ObjId::Proposal(self.cell, id), Method::Write(self.value))?;
                Ok((a, None))
            }
            (ConsensusMode::FromFetchAdd, ConsensusPc::Arbitrate) => {
                let a = mem.access(ObjId::Winner(self.cell), Method::FetchAdd(1))?;
                match a.ret {
                    0 => Ok((a, Some(self.value))),
                    1 => {
                        self.pc = ConsensusPc::Adopt;
                        Ok((a, None))
                    }
                    _ => Err(ObjectError::ThirdProposer),
                }
            }
            (ConsensusMode::FromFetchAdd, ConsensusPc::Adopt) => {
                let a = mem.access(ObjId::Proposal(self.cell, 1 - id), Method::Read)?;
                Ok((a, Some(a.ret)))
            }
        }
    }
}

/// Agenda tokens name an append by its process and per-process sequence number.
pub fn agenda_token(id: u8, seq: u32) -> Word {
    (Word::from(seq) << 1) | Word::from(id)
}

pub fn agenda_token_parts(token: Word) -> (u8, u32) {
    ((token & 1) as u8, (token >> 1) as u32)
}

/// The sequential agenda: an append-only log indexed from 1.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AgendaSeq {
    items: Vec<Word>,
}

impl AgendaSeq {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn append(&mut self, x: Word) -> u32 {
        self.items.push(x);
        self.items.len() as u32
    }

    pub fn get(&self, k: u32) -> Option<Word> {
        self.items.get((k as usize).checked_sub(1)?).copied()
    }

    pub fn len(&self) -> u32 {
        self.items.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum AppendPc {
    Publish,
    Propose(ConsensusRun),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct AppendOp {
    pc: AppendPc,
    x: Word,
    token: Word,
    attempts: u32,
}

/// One of the two processes sharing a wait-free agenda.
///
/// Slot `k` is a consensus instance over append tokens. An appender walks
/// the slots in order, proposing its token to each undecided one, and
/// learns every decided slot it passes; its append returns the first slot
/// its own token wins. Items are published in per-process log registers
/// so `get` can read them back.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct AgendaProcess {
    id: u8,
    mode: ConsensusMode,
    seq: u32,
    decided: Vec<Word>,
    pending: Option<AppendOp>,
}

/// Progress of an agenda append.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AppendStep {
    Pending,
    Done { index: u32, attempts: u32 },
}

impl AgendaProcess {
    pub fn new(id: u8, mode: ConsensusMode) -> Self {
        assert!(id < 2, "agenda processes are numbered 0 and 1");
        AgendaProcess { id, mode, seq: 0, decided: Vec::new(), pending: None }
    }

    pub fn id(&self) -> u8 {
        self.id
    }

    /// Slots whose decision this process has learned, from slot 1.
    pub fn known(&self) -> &[Word] {
        &self.decided
    }

    pub fn begin_append(&mut self, x: Word) -> Result<(), StepError> {
        if self.pending.is_some() {
            return Err(StepError::Busy);
        }
        if x == BOTTOM {
            return Err(StepError::Protocol("cannot append ⊥".into()));
        }
        let token = agenda_token(self.id, self.seq);
        self.pending = Some(AppendOp { pc: AppendPc::Publish, x, token, attempts: 0 });
        Ok(())
    }

    pub fn is_appending(&self) -> bool {
        self.pending.is_some()
    }

    pub fn step_append<M: SharedMemory + ?Sized>(&mut self, mem: &M) -> Result<(Access, AppendStep), StepError> {
        let mut op = self.pending.ok_or(StepError::Idle)?;
        let next_slot = |decided: &[Word]| ConsensusCell::AgendaSlot(decided.len() as u32 + 1);
        let (access, progress) = match op.pc {
            AppendPc::Publish => {
                let a = mem.access(ObjId::AgendaLog(self.id, self.seq), Method::Write(op.x))?;
                op.pc = AppendPc::Propose(ConsensusRun::new(next_slot(&self.decided), op.token));
                op.attempts = 1;
                (a, AppendStep::Pending)
            }
            AppendPc::Propose(mut run) => {
                let (a, decided) = run.step(mem, self.mode, self.id)?;
                op.pc = AppendPc::Propose(run);
                match decided {
                    None => (a, AppendStep::Pending),
                    Some(token) => {
                        self.decided.push(token);
                        if token == op.token {
                            self.seq += 1;
                            self.pending = None;
                            let index = self.decided.len() as u32;
                            return Ok((a, AppendStep::Done { index, attempts: op.attempts }));
                        }
                        op.attempts += 1;
                        op.pc = AppendPc::Propose(ConsensusRun::new(next_slot(&self.decided), op.token));
                        (a, AppendStep::Pending)
                    }
                }
            }
        };
        self.pending = Some(op);
        Ok((access, progress))
    }

    /// Reads the item of slot `k`: one shared read of the publishing log register.
    pub fn get<M: SharedMemory + ?Sized>(&self, mem: &M, k: u32) -> Result<Access, StepError> {
        let token = (k as usize)
            .checked_sub(1)
            .and_then(|i| self.decided.get(i))
            .copied()
            .ok_or_else(|| StepError::Protocol(format!("agenda slot {k} is not known to process {}", self.id)))?;
        let (id, seq) = agenda_token_parts(token);
        Ok(mem.access(ObjId::AgendaLog(id, seq), Method::Read)?)
    }

    /// Appends `x` without interruption and returns its index.
    pub fn append<M: SharedMemory + ?Sized>(&mut self, mem: &M, x: Word) -> Result<u32, StepError> {
        self.begin_append(x)?;
        loop {
            if let (_, AppendStep::Done { index, .. }) = self.step_append(mem)? {
                return Ok(index);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
enum EnqPc {
    Append,
    GetItem,
    WriteItem { x: Word },
    WriteIndex,
    ReadActive,
    Decide(ConsensusRun),
    WriteNextRow,
    WriteRow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
struct EnqOp {
    pc: EnqPc,
    k: u32,
    steps: u32,
    replays: u32,
    attempts: u32,
}

/// Enqueuer `id` of the two-enqueuer queue.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TemdEnqueuer {
    agenda: AgendaProcess,
    enq_count: u32,
    head: u32,
    row: u32,
    pending: Option<EnqOp>,
}

impl TemdEnqueuer {
    pub fn new(id: u8, mode: ConsensusMode) -> Self {
        TemdEnqueuer { agenda: AgendaProcess::new(id, mode), enq_count: 0, head: 0, row: 0, pending: None }
    }

    pub fn id(&self) -> u8 {
        self.agenda.id
    }

    pub fn position(&self) -> Location {
        Location::new(self.row, self.head)
    }

    pub fn enq_count(&self) -> u32 {
        self.enq_count
    }

    fn mode(&self) -> ConsensusMode {
        self.agenda.mode
    }

    /// Ends one virtual iteration: either completes the op or starts the next.
    fn end_iteration(&mut self, mut op: EnqOp, access: Access) -> Step {
        if self.enq_count < op.k {
            op.pc = EnqPc::GetItem;
            self.pending = Some(op);
            return continuing(access);
        }
        self.pending = None;
        let stats = OpStats {
            steps: op.steps,
            agenda_index: Some(op.k),
            replay_iterations: op.replays,
            slot_attempts: op.attempts,
            ..OpStats::default()
        };
        finished(access, Ret::Ok, stats)
    }
}

impl StepMachine for TemdEnqueuer {
    fn invoke(&mut self, op: Op) -> Result<(), StepError> {
        if self.pending.is_some() {
            return Err(StepError::Busy);
        }
        match op {
            Op::Enq(x) => self.agenda.begin_append(x)?,
            Op::Deq => return Err(StepError::Protocol("enqueuer cannot dequeue".into())),
        }
        self.pending = Some(EnqOp { pc: EnqPc::Append, k: 0, steps: 0, replays: 0, attempts: 0 });
        Ok(())
    }

    fn is_busy(&self) -> bool {
        self.pending.is_some()
    }

    fn step<M: SharedMemory + ?Sized>(&mut self, mem: &M) -> Result<Step, StepError> {
        let mut op = self.pending.ok_or(StepError::Idle)?;
        op.steps += 1;
        let id = self.id();
        let access = match op.pc {
            EnqPc::Append => {
                let (a, progress) = self.agenda.step_append(mem)?;
                if let AppendStep::Done { index, attempts } = progress {
                    op.k = index;
                    op.attempts = attempts;
                    if self.enq_count >= index {
                        return Err(StepError::Protocol(format!(
                            "agenda index {index} already replayed by enqueuer {id}"
                        )));
                    }
                    op.pc = EnqPc::GetItem;
                }
                a
            }
            EnqPc::GetItem => {
                self.enq_count += 1;
                op.replays += 1;
                let a = self.agenda.get(mem, self.enq_count)?;
                op.pc = EnqPc::WriteItem { x: a.ret };
                a
            }
            EnqPc::WriteItem { x } => {
                op.pc = EnqPc::WriteIndex;
                mem.access(ObjId::Item(self.enq_count), Method::Write(x))?
            }
            EnqPc::WriteIndex => {
                op.pc = EnqPc::ReadActive;
                let index = Word::from(self.enq_count);
                mem.access(ObjId::ItemIndex(self.row, self.head), Method::Write(index))?
            }
            EnqPc::ReadActive => {
                let a = mem.access(ObjId::DeqActive(self.row, self.head), Method::Read)?;
                let cell = ConsensusCell::DeqActiveRead(self.row, self.head);
                op.pc = EnqPc::Decide(ConsensusRun::new(cell, a.ret));
                a
            }
            EnqPc::Decide(mut run) => {
                let (a, decided) = run.step(mem, self.mode(), id)?;
                match decided {
                    None => op.pc = EnqPc::Decide(run),
                    Some(TRUE) => op.pc = EnqPc::WriteNextRow,
                    Some(FALSE) => {
                        self.head += 1;
                        return Ok(self.end_iteration(op, a));
                    }
                    Some(other) => {
                        return Err(StepError::Protocol(format!("deqActiveRead decided non-boolean {other}")))
                    }
                }
                a
            }
            EnqPc::WriteNextRow => {
                op.pc = EnqPc::WriteRow;
                let index = Word::from(self.enq_count);
                let a = mem.access(ObjId::ItemIndex(self.row + 1, 0), Method::Write(index))?;
                self.head = 1;
                a
            }
            EnqPc::WriteRow => {
                self.row += 1;
                let a = mem.access(ObjId::RowOf(id), Method::Write(Word::from(self.row)))?;
                return Ok(self.end_iteration(op, a));
            }
        };
        self.pending = Some(op);
        Ok(continuing(access))
    }
}

/// Worst-case shared steps of a two-enqueuer enq when at most `total_enqs`
/// enqueues are ever invoked.
pub fn temd_enq_bound(total_enqs: u32, mode: ConsensusMode) -> u32 {
    let decide = match mode {
        ConsensusMode::Primitive => 1,
        ConsensusMode::FromFetchAdd => 3,
    };
    // publish + one decide per slot attempt + per replayed entry:
    // get, item, itemIndex, deqActive, decide, itemIndex, row
    1 + total_enqs * decide + total_enqs * (6 + decide)
}
