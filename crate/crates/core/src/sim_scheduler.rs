//! Deterministic execution of queue processes under explicit schedules.
//!
//! A schedule is a sequence of process ids. Each slot resumes the named
//! process for exactly one shared step; an idle process with operations
//! left invokes its next one in the same slot, and the step that completes
//! an operation also records its response. A process with nothing left to
//! do consumes its slot as a no-op.

use std::ops::ControlFlow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::base_objects::{Word, BOTTOM};
use crate::history::{EventKind, History, OpId, Role};
use crate::memory::{Mark, SimMemory};
use crate::queue_core::{Dequeuer, RowSource, SemdEnqueuer, SesdDequeuer, SesdEnqueuer};
use crate::step::{Completion, Op, Step, StepError, StepMachine};
use crate::two_enqueuer::{ConsensusMode, TemdEnqueuer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// One enqueuer, one dequeuer.
    Sesd,
    /// One enqueuer, any number of dequeuers.
    Semd,
    /// Two enqueuers, any number of dequeuers.
    Temd,
}

impl Algorithm {
    pub fn max_enqueuers(self) -> usize {
        match self {
            Algorithm::Sesd | Algorithm::Semd => 1,
            Algorithm::Temd => 2,
        }
    }

    pub fn max_dequeuers(self) -> Option<usize> {
        match self {
            Algorithm::Sesd => Some(1),
            _ => None,
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Algorithm::Sesd => "sesd",
            Algorithm::Semd => "semd",
            Algorithm::Temd => "temd",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("{algorithm} supports at most {max} enqueuer(s), got {got}")]
    TooManyEnqueuers { algorithm: Algorithm, max: usize, got: usize },
    #[error("{algorithm} supports at most {max} dequeuer(s), got {got}")]
    TooManyDequeuers { algorithm: Algorithm, max: usize, got: usize },
    #[error("⊥ cannot be enqueued")]
    BottomItem,
}

/// Processes and their operations. Enqueuers take pids `0..e`, dequeuers follow.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    #[serde(default)]
    pub consensus: ConsensusMode,
    /// Items each enqueuer enqueues, in order.
    pub enqueuers: Vec<Vec<Word>>,
    /// Number of dequeues each dequeuer performs.
    pub dequeuers: Vec<u32>,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, enqueuers: Vec<Vec<Word>>, dequeuers: Vec<u32>) -> Result<Self, ConfigError> {
        let config = RunConfig { algorithm, consensus: ConsensusMode::default(), enqueuers, dequeuers };
        config.validate()?;
        Ok(config)
    }

    /// `enqueuers` processes with `enq_ops` enqueues each (items `1, 2, ...`,
    /// all distinct) and `dequeuers` processes with `deq_ops` dequeues each.
    pub fn uniform(
        algorithm: Algorithm,
        enqueuers: usize,
        enq_ops: usize,
        dequeuers: usize,
        deq_ops: u32,
    ) -> Result<Self, ConfigError> {
        let items = (0..enqueuers)
            .map(|e| (0..enq_ops).map(|k| (e * enq_ops + k + 1) as Word).collect())
            .collect();
        Self::new(algorithm, items, vec![deq_ops; dequeuers])
    }

    /// Like [`RunConfig::uniform`] but every enqueued item is `1`.
    pub fn uniform_duplicates(
        algorithm: Algorithm,
        enqueuers: usize,
        enq_ops: usize,
        dequeuers: usize,
        deq_ops: u32,
    ) -> Result<Self, ConfigError> {
        Self::new(algorithm, vec![vec![1; enq_ops]; enqueuers], vec![deq_ops; dequeuers])
    }

    pub fn with_consensus(mut self, mode: ConsensusMode) -> Self {
        self.consensus = mode;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let max = self.algorithm.max_enqueuers();
        if self.enqueuers.len() > max {
            return Err(ConfigError::TooManyEnqueuers { algorithm: self.algorithm, max, got: self.enqueuers.len() });
        }
        if let Some(max) = self.algorithm.max_dequeuers() {
            if self.dequeuers.len() > max {
                return Err(ConfigError::TooManyDequeuers {
                    algorithm: self.algorithm,
                    max,
                    got: self.dequeuers.len(),
                });
            }
        }
        if self.enqueuers.iter().flatten().any(|&x| x == BOTTOM) {
            return Err(ConfigError::BottomItem);
        }
        Ok(())
    }

    pub fn process_count(&self) -> usize {
        self.enqueuers.len() + self.dequeuers.len()
    }

    pub fn role(&self, pid: usize) -> Role {
        if pid < self.enqueuers.len() {
            Role::Enqueuer
        } else {
            Role::Dequeuer
        }
    }

    pub fn op_count(&self, pid: usize) -> usize {
        match self.role(pid) {
            Role::Enqueuer => self.enqueuers[pid].len(),
            Role::Dequeuer => self.dequeuers[pid - self.enqueuers.len()] as usize,
        }
    }

    pub fn op(&self, pid: usize, n: usize) -> Op {
        match self.role(pid) {
            Role::Enqueuer => Op::Enq(self.enqueuers[pid][n]),
            Role::Dequeuer => Op::Deq,
        }
    }

    pub fn total_enqs(&self) -> usize {
        self.enqueuers.iter().map(Vec::len).sum()
    }

    pub fn total_ops(&self) -> usize {
        (0..self.process_count()).map(|p| self.op_count(p)).sum()
    }

    fn new_process(&self, pid: usize) -> Process {
        Process::new(self.algorithm, self.role(pid), pid, self.consensus)
    }
}

/// The step machine of one simulated process.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Process {
    SesdEnq(SesdEnqueuer),
    SesdDeq(SesdDequeuer),
    SemdEnq(SemdEnqueuer),
    Deq(Dequeuer),
    TemdEnq(TemdEnqueuer),
}

impl Process {
    /// A fresh machine for process `pid`; two-enqueuer enqueuers are numbered by pid.
    pub fn new(algorithm: Algorithm, role: Role, pid: usize, consensus: ConsensusMode) -> Process {
        match (algorithm, role) {
            (Algorithm::Sesd, Role::Enqueuer) => Process::SesdEnq(SesdEnqueuer::new()),
            (Algorithm::Sesd, Role::Dequeuer) => Process::SesdDeq(SesdDequeuer::new()),
            (Algorithm::Semd, Role::Enqueuer) => Process::SemdEnq(SemdEnqueuer::new()),
            (Algorithm::Semd, Role::Dequeuer) => Process::Deq(Dequeuer::new(RowSource::Single)),
            (Algorithm::Temd, Role::Enqueuer) => Process::TemdEnq(TemdEnqueuer::new(pid as u8, consensus)),
            (Algorithm::Temd, Role::Dequeuer) => Process::Deq(Dequeuer::new(RowSource::MaxOfPair)),
        }
    }
}

macro_rules! delegate {
    ($self:ident, $p:ident => $e:expr) => {
        match $self {
            Process::SesdEnq($p) => $e,
            Process::SesdDeq($p) => $e,
            Process::SemdEnq($p) => $e,
            Process::Deq($p) => $e,
            Process::TemdEnq($p) => $e,
        }
    };
}

impl StepMachine for Process {
    fn invoke(&mut self, op: Op) -> Result<(), StepError> {
        delegate!(self, p => p.invoke(op))
    }

    fn is_busy(&self) -> bool {
        delegate!(self, p => p.is_busy())
    }

    fn step<M: crate::memory::SharedMemory + ?Sized>(&mut self, mem: &M) -> Result<Step, StepError> {
        delegate!(self, p => p.step(mem))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ScheduleError {
    #[error("slot {slot} names process {pid}, but only {count} processes exist")]
    UnknownProcess { slot: usize, pid: usize, count: usize },
}

/// A finite sequence of process ids, checked against a configuration.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Schedule(Vec<usize>);

impl Schedule {
    pub fn new(config: &RunConfig, steps: Vec<usize>) -> Result<Self, ScheduleError> {
        let count = config.process_count();
        if let Some((slot, &pid)) = steps.iter().enumerate().find(|(_, &p)| p >= count) {
            return Err(ScheduleError::UnknownProcess { slot, pid, count });
        }
        Ok(Schedule(steps))
    }

    pub(crate) fn from_steps(steps: Vec<usize>) -> Self {
        Schedule(steps)
    }

    pub fn steps(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("process {pid}: {source}")]
    Step { pid: usize, source: StepError },
    #[error("an execution exceeded {0} steps")]
    StepBoundExceeded(usize),
}

/// A completed operation with its counters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompletionRecord {
    pub op: OpId,
    pub pid: usize,
    pub completion: Completion,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct ProcSlot {
    machine: Process,
    next_op: u32,
    current: Option<(OpId, Op)>,
}

/// What one schedule slot did.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotOutcome {
    NoOp,
    Stepped(Step),
}

/// Undo information for one slot, see [`Execution::save`].
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pid: usize,
    slot: ProcSlot,
    mark: Mark,
    history_len: usize,
    schedule_len: usize,
    completions_len: usize,
    invoked: u32,
}

/// An execution in progress.
#[derive(Clone, Debug)]
pub struct Execution<'c> {
    config: &'c RunConfig,
    memory: SimMemory,
    procs: Vec<ProcSlot>,
    history: History,
    schedule: Vec<usize>,
    completions: Vec<CompletionRecord>,
    invoked: u32,
}

impl<'c> Execution<'c> {
    pub fn new(config: &'c RunConfig) -> Self {
        let procs = (0..config.process_count())
            .map(|pid| ProcSlot { machine: config.new_process(pid), next_op: 0, current: None })
            .collect();
        Execution {
            config,
            memory: SimMemory::new(),
            procs,
            history: History::new(),
            schedule: Vec::new(),
            completions: Vec::new(),
            invoked: 0,
        }
    }

    pub fn config(&self) -> &'c RunConfig {
        self.config
    }

    pub fn memory(&self) -> &SimMemory {
        &self.memory
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn into_history(self) -> History {
        self.history
    }

    /// Pids of the shared steps taken so far.
    pub fn schedule(&self) -> &[usize] {
        &self.schedule
    }

    pub fn completions(&self) -> &[CompletionRecord] {
        &self.completions
    }

    pub fn process(&self, pid: usize) -> &Process {
        &self.procs[pid].machine
    }

    /// Whether `pid` would take a step if scheduled.
    pub fn is_runnable(&self, pid: usize) -> bool {
        let slot = &self.procs[pid];
        slot.machine.is_busy() || (slot.next_op as usize) < self.config.op_count(pid)
    }

    pub fn runnable(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.procs.len()).filter(|&pid| self.is_runnable(pid))
    }

    pub fn is_finished(&self) -> bool {
        self.runnable().next().is_none()
    }

    /// Runs one schedule slot for `pid`.
    pub fn step(&mut self, pid: usize) -> Result<SlotOutcome, SimError> {
        let role = self.config.role(pid);
        let slot = &mut self.procs[pid];
        let wrap = |source| SimError::Step { pid, source };
        if !slot.machine.is_busy() {
            let n = slot.next_op as usize;
            if n >= self.config.op_count(pid) {
                return Ok(SlotOutcome::NoOp);
            }
            let op = self.config.op(pid, n);
            slot.machine.invoke(op).map_err(wrap)?;
            slot.next_op += 1;
            slot.current = Some((OpId(self.invoked), op));
            self.invoked += 1;
            self.history.push(pid, role, op, EventKind::Invoke);
        }
        let (id, op) = slot.current.expect("busy process has a current op");
        let step = slot.machine.step(&self.memory).map_err(wrap)?;
        self.schedule.push(pid);
        self.history.push(pid, role, op, EventKind::Step(step.access));
        if let Some(done) = step.completion {
            slot.current = None;
            self.history.push(pid, role, op, EventKind::Respond(done.ret));
            self.completions.push(CompletionRecord { op: id, pid, completion: done });
        }
        Ok(SlotOutcome::Stepped(step))
    }

    /// Captures what [`Execution::step`] on `pid` may change.
    pub fn save(&self, pid: usize) -> Checkpoint {
        Checkpoint {
            pid,
            slot: self.procs[pid].clone(),
            mark: self.memory.mark(),
            history_len: self.history.len(),
            schedule_len: self.schedule.len(),
            completions_len: self.completions.len(),
            invoked: self.invoked,
        }
    }

    pub fn restore(&mut self, cp: Checkpoint) {
        self.procs[cp.pid] = cp.slot;
        self.memory.rollback(cp.mark);
        self.history.truncate(cp.history_len);
        self.schedule.truncate(cp.schedule_len);
        self.completions.truncate(cp.completions_len);
        self.invoked = cp.invoked;
    }

    pub(crate) fn hash_state<H: std::hash::Hasher>(&self, state: &mut H) {
        use std::hash::Hash;
        self.memory.hash_contents(state);
        self.procs.hash(state);
    }
}

/// Executes `schedule` from the initial state.
pub fn run(config: &RunConfig, schedule: &Schedule) -> Result<History, SimError> {
    Ok(execute(config, schedule)?.into_history())
}

/// Like [`run`] but keeps the whole final execution.
pub fn execute<'c>(config: &'c RunConfig, schedule: &Schedule) -> Result<Execution<'c>, SimError> {
    let mut exec = Execution::new(config);
    for &pid in schedule.steps() {
        exec.step(pid)?;
    }
    Ok(exec)
}

/// Totals of an exhaustive exploration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExploreStats {
    pub schedules: u64,
    pub longest: usize,
    pub stopped: bool,
}

/// Depth-first enumeration of every complete schedule. Only runnable
/// processes are scheduled, so no schedule differs from another just by
/// no-op slots. The visitor sees each completed execution once.
pub fn explore<F>(config: &RunConfig, max_total_steps: usize, mut visit: F) -> Result<ExploreStats, SimError>
where
    F: FnMut(&Execution<'_>) -> ControlFlow<()>,
{
    let mut exec = Execution::new(config);
    let mut stats = ExploreStats::default();
    let _ = dfs(&mut exec, max_total_steps, &mut visit, &mut stats)?;
    Ok(stats)
}

fn dfs<F>(
    exec: &mut Execution<'_>,
    max: usize,
    visit: &mut F,
    stats: &mut ExploreStats,
) -> Result<ControlFlow<()>, SimError>
where
    F: FnMut(&Execution<'_>) -> ControlFlow<()>,
{
    let mut any = false;
    for pid in 0..exec.procs.len() {
        if !exec.is_runnable(pid) {
            continue;
        }
        any = true;
        if exec.schedule.len() >= max {
            return Err(SimError::StepBoundExceeded(max));
        }
        let cp = exec.save(pid);
        exec.step(pid)?;
        let flow = dfs(exec, max, visit, stats)?;
        exec.restore(cp);
        if flow.is_break() {
            return Ok(flow);
        }
    }
    if !any {
        stats.schedules += 1;
        stats.longest = stats.longest.max(exec.schedule.len());
        let flow = visit(exec);
        stats.stopped = flow.is_break();
        return Ok(flow);
    }
    Ok(ControlFlow::Continue(()))
}

/// Every complete schedule of `config`, in depth-first order.
pub fn enumerate_schedules(
    config: &RunConfig,
    max_total_steps: usize,
) -> Result<impl Iterator<Item = Schedule>, SimError> {
    let mut out = Vec::new();
    explore(config, max_total_steps, |exec| {
        out.push(Schedule(exec.schedule().to_vec()));
        ControlFlow::Continue(())
    })?;
    Ok(out.into_iter())
}

/// Runs `config` to completion, picking uniformly among runnable processes
/// at every slot with a generator seeded by `seed`.
pub fn random_execution(config: &RunConfig, seed: u64) -> Result<Execution<'_>, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut exec = Execution::new(config);
    let mut runnable = Vec::with_capacity(config.process_count());
    loop {
        runnable.clear();
        runnable.extend(exec.runnable());
        if runnable.is_empty() {
            return Ok(exec);
        }
        let pid = runnable[rng.random_range(0..runnable.len())];
        exec.step(pid)?;
    }
}

pub fn random_schedule(config: &RunConfig, seed: u64) -> Result<Schedule, SimError> {
    Ok(Schedule(random_execution(config, seed)?.schedule().to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::step::Ret;

    fn responses(h: &History) -> Vec<(usize, Ret)> {
        h.events()
            .iter()
            .filter_map(|e| match e.kind {
                EventKind::Respond(r) => Some((e.pid, r)),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn config_limits() {
        assert!(matches!(
            RunConfig::uniform(Algorithm::Semd, 2, 1, 1, 1),
            Err(ConfigError::TooManyEnqueuers { max: 1, got: 2, .. })
        ));
        assert!(matches!(
            RunConfig::uniform(Algorithm::Sesd, 1, 1, 2, 1),
            Err(ConfigError::TooManyDequeuers { max: 1, got: 2, .. })
        ));
        assert!(RunConfig::uniform(Algorithm::Temd, 2, 1, 3, 1).is_ok());
        assert_eq!(RunConfig::new(Algorithm::Semd, vec![vec![BOTTOM]], vec![]), Err(ConfigError::BottomItem));
    }

    #[test]
    fn schedule_validation() {
        let c = RunConfig::uniform(Algorithm::Sesd, 1, 1, 1, 1).unwrap();
        assert!(Schedule::new(&c, vec![0, 1, 1]).is_ok());
        assert_eq!(
            Schedule::new(&c, vec![0, 2]),
            Err(ScheduleError::UnknownProcess { slot: 1, pid: 2, count: 2 })
        );
    }

    #[test]
    fn sequential_sesd() {
        let c = RunConfig::uniform(Algorithm::Sesd, 1, 1, 1, 1).unwrap();
        let h = run(&c, &Schedule::new(&c, vec![0, 1]).unwrap()).unwrap();
        assert_eq!(responses(&h), vec![(0, Ret::Ok), (1, Ret::Value(1))]);
    }

    #[test]
    fn dequeuer_only_semd_returns_bottom() {
        let c = RunConfig::uniform(Algorithm::Semd, 0, 0, 1, 1).unwrap();
        let h = run(&c, &Schedule::new(&c, vec![0; 10]).unwrap()).unwrap();
        assert_eq!(responses(&h), vec![(0, Ret::Value(BOTTOM))]);
        assert_eq!(h.step_count(OpId(0)), Ok(4));
    }

    #[test]
    fn finished_processes_take_no_op_slots() {
        let c = RunConfig::uniform(Algorithm::Sesd, 1, 1, 1, 1).unwrap();
        let h1 = run(&c, &Schedule::new(&c, vec![0, 0, 0, 1, 1]).unwrap()).unwrap();
        let h2 = run(&c, &Schedule::new(&c, vec![0, 1]).unwrap()).unwrap();
        assert_eq!(h1, h2);
    }

    #[test]
    fn runs_are_deterministic() {
        let c = RunConfig::uniform(Algorithm::Temd, 2, 1, 2, 1).unwrap();
        let s = random_schedule(&c, 9).unwrap();
        assert_eq!(run(&c, &s).unwrap().to_jsonl(), run(&c, &s).unwrap().to_jsonl());
        assert_eq!(random_schedule(&c, 9).unwrap(), s);
    }

    #[test]
    fn two_single_step_processes_have_two_schedules() {
        let c = RunConfig::uniform(Algorithm::Sesd, 1, 1, 1, 1).unwrap();
        let all: Vec<_> = enumerate_schedules(&c, 10).unwrap().collect();
        assert_eq!(all.len(), 2);
    }

    #[test]
    fn interleaving_count_is_binomial() {
        // enq: 1 step each; deq: 1 step each.
        let c = RunConfig::uniform(Algorithm::Sesd, 1, 3, 1, 2).unwrap();
        assert_eq!(enumerate_schedules(&c, 10).unwrap().count(), 10); // C(5, 2)
    }

    #[test]
    fn step_bound_is_enforced() {
        let c = RunConfig::uniform(Algorithm::Sesd, 1, 3, 1, 2).unwrap();
        assert_eq!(explore(&c, 4, |_| ControlFlow::Continue(())).unwrap_err(), SimError::StepBoundExceeded(4));
    }

    #[test]
    fn random_schedules_complete() {
        let c = RunConfig::uniform(Algorithm::Semd, 1, 3, 3, 2).unwrap();
        for seed in 0..50 {
            let exec = random_execution(&c, seed).unwrap();
            assert!(exec.is_finished());
            assert_eq!(exec.completions().len(), c.total_ops());
            assert!(exec.history().is_complete());
        }
    }

    #[test]
    fn restore_undoes_a_step() {
        let c = RunConfig::uniform(Algorithm::Semd, 1, 1, 1, 1).unwrap();
        let mut exec = Execution::new(&c);
        exec.step(1).unwrap();
        let before = exec.history().clone();
        let cp = exec.save(0);
        exec.step(0).unwrap();
        exec.restore(cp);
        assert_eq!(exec.history(), &before);
        exec.step(0).unwrap();
        assert_eq!(exec.history().len(), before.len() + 2);
    }
}
