//! The queues on real threads, and windowed stress checking.
//!
//! A stress run proceeds in windows. In each window every thread performs
//! a few operations concurrently, stamping invocations and responses from
//! one global ticket counter. After all threads join, the queue is drained
//! sequentially until a dequeue returns ⊥, so every window starts and ends
//! with an empty queue and can be checked on its own.

use std::collections::HashSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Barrier};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::base_objects::{Word, BOTTOM};
use crate::history::{EventKind, History, Role};
use crate::lin_check::{check, CheckError, Verdict};
use crate::memory::NativeMemory;
use crate::sim_scheduler::{Algorithm, Process};
use crate::step::{Completion, Op, Ret, StepError, StepMachine};
use crate::two_enqueuer::ConsensusMode;

/// One process of a queue shared through a [`NativeMemory`].
#[derive(Debug)]
pub struct Handle {
    pid: usize,
    role: Role,
    machine: Process,
    memory: Arc<NativeMemory>,
}

impl Handle {
    pub fn pid(&self) -> usize {
        self.pid
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// Runs one operation to completion.
    pub fn call(&mut self, op: Op) -> Result<Completion, StepError> {
        self.machine.run(&*self.memory, op)
    }

    pub fn enq(&mut self, x: Word) -> Result<(), StepError> {
        self.call(Op::Enq(x)).map(|_| ())
    }

    /// The dequeued item, or `None` when the queue was empty.
    pub fn deq(&mut self) -> Result<Option<Word>, StepError> {
        match self.call(Op::Deq)?.ret {
            Ret::Value(v) if v != BOTTOM => Ok(Some(v)),
            _ => Ok(None),
        }
    }
}

/// Handles for a fresh queue: enqueuers first, then dequeuers.
///
/// # Panics
/// If the algorithm does not support that many enqueuers or dequeuers.
pub fn handles(algorithm: Algorithm, enqueuers: usize, dequeuers: usize, consensus: ConsensusMode) -> Vec<Handle> {
    assert!(enqueuers <= algorithm.max_enqueuers(), "too many enqueuers for {algorithm}");
    assert!(algorithm.max_dequeuers().is_none_or(|m| dequeuers <= m), "too many dequeuers for {algorithm}");
    let memory = Arc::new(NativeMemory::new());
    (0..enqueuers + dequeuers)
        .map(|pid| {
            let role = if pid < enqueuers { Role::Enqueuer } else { Role::Dequeuer };
            Handle { pid, role, machine: Process::new(algorithm, role, pid, consensus), memory: Arc::clone(&memory) }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StressOptions {
    pub algorithm: Algorithm,
    pub consensus: ConsensusMode,
    pub enqueuers: usize,
    pub dequeuers: usize,
    pub ops_per_thread: usize,
    /// Operations per thread in one window.
    pub window: usize,
    /// Stop starting new windows after this long.
    pub duration: Option<Duration>,
    pub seed: u64,
}

/// A window whose history is not linearizable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BadWindow {
    pub index: usize,
    pub history: History,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StressReport {
    pub windows: usize,
    pub operations: usize,
    pub drained: usize,
    pub max_failed_iterations: u32,
    pub max_enq_steps: u32,
    pub max_deq_steps: u32,
    pub bad_windows: Vec<BadWindow>,
    /// Dequeued items that were never enqueued or were dequeued twice.
    pub conservation_failures: Vec<Word>,
}

#[derive(Debug, thiserror::Error)]
pub enum StressError {
    #[error("process {pid}: {source}")]
    Step { pid: usize, source: StepError },
    #[error("a stress worker thread panicked")]
    Panic,
    #[error(transparent)]
    Check(#[from] CheckError),
}

struct Record {
    pid: usize,
    role: Role,
    op: Op,
    invoke: u64,
    respond: u64,
    completion: Completion,
}

fn item(enqueuer: usize, n: usize) -> Word {
    (enqueuer as Word) * 1_000_000_000 + n as Word + 1
}

/// Runs a windowed stress test and checks every window.
pub fn stress(options: &StressOptions) -> Result<StressReport, StressError> {
    let started = Instant::now();
    let mut handles = handles(options.algorithm, options.enqueuers, options.dequeuers, options.consensus);
    let ticket = AtomicU64::new(0);
    let window = options.window.max(1);
    let mut report = StressReport::default();
    let mut done = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut enqueued = HashSet::new();
    let mut dequeued = HashSet::new();
    while done < options.ops_per_thread {
        if options.duration.is_some_and(|d| started.elapsed() >= d) {
            break;
        }
        let count = window.min(options.ops_per_thread - done);
        let barrier = Barrier::new(handles.len());
        let seeds: Vec<u64> = handles.iter().map(|_| rng.random()).collect();
        let results: Vec<Result<Vec<Record>, StressError>> = std::thread::scope(|s| {
            let workers: Vec<_> = handles
                .iter_mut()
                .zip(seeds)
                .map(|(h, seed)| {
                    let (barrier, ticket) = (&barrier, &ticket);
                    s.spawn(move || run_window(h, done, count, seed, barrier, ticket))
                })
                .collect();
            workers.into_iter().map(|w| w.join().unwrap_or(Err(StressError::Panic))).collect()
        });
        let mut records = Vec::new();
        for r in results {
            records.extend(r?);
        }
        let drainer = handles.iter_mut().find(|h| h.role == Role::Dequeuer).expect("a dequeuer");
        loop {
            let invoke = ticket.fetch_add(1, Ordering::SeqCst);
            let completion = drainer.call(Op::Deq).map_err(|source| StressError::Step { pid: drainer.pid, source })?;
            let respond = ticket.fetch_add(1, Ordering::SeqCst);
            let empty = completion.ret == Ret::Value(BOTTOM);
            records.push(Record { pid: drainer.pid, role: Role::Dequeuer, op: Op::Deq, invoke, respond, completion });
            report.drained += 1;
            if empty {
                break;
            }
        }
        for r in &records {
            match (r.op, r.completion.ret) {
                (Op::Enq(x), _) => {
                    enqueued.insert(x);
                }
                (Op::Deq, Ret::Value(v)) if v != BOTTOM => {
                    if !dequeued.insert(v) {
                        report.conservation_failures.push(v);
                    }
                }
                _ => {}
            }
        }
        for r in &records {
            let stats = r.completion.stats;
            report.max_failed_iterations = report.max_failed_iterations.max(stats.failed_iterations);
            let max = match r.role {
                Role::Enqueuer => &mut report.max_enq_steps,
                Role::Dequeuer => &mut report.max_deq_steps,
            };
            *max = (*max).max(stats.steps);
        }
        report.operations += records.len();
        let history = window_history(&records);
        let verdict = check(&history)?;
        if !verdict.linearizable {
            report.bad_windows.push(BadWindow { index: report.windows, history, verdict });
        }
        report.windows += 1;
        done += count;
    }
    report.conservation_failures.extend(dequeued.difference(&enqueued));
    Ok(report)
}

fn run_window(
    h: &mut Handle,
    start: usize,
    count: usize,
    seed: u64,
    barrier: &Barrier,
    ticket: &AtomicU64,
) -> Result<Vec<Record>, StressError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    barrier.wait();
    for n in start..start + count {
        for _ in 0..rng.random_range(0..64) {
            std::hint::spin_loop();
        }
        if rng.random_ratio(1, 8) {
            std::thread::yield_now();
        }
        let op = match h.role {
            Role::Enqueuer => Op::Enq(item(h.pid, n)),
            Role::Dequeuer => Op::Deq,
        };
        let invoke = ticket.fetch_add(1, Ordering::SeqCst);
        let completion = h.call(op).map_err(|source| StressError::Step { pid: h.pid, source })?;
        let respond = ticket.fetch_add(1, Ordering::SeqCst);
        out.push(Record { pid: h.pid, role: h.role, op, invoke, respond, completion });
    }
    Ok(out)
}

/// Invocations and responses ordered by ticket.
fn window_history(records: &[Record]) -> History {
    let mut events: Vec<(u64, usize, bool)> = Vec::with_capacity(records.len() * 2);
    for (i, r) in records.iter().enumerate() {
        events.push((r.invoke, i, false));
        events.push((r.respond, i, true));
    }
    events.sort_unstable();
    let mut h = History::new();
    for (_, i, respond) in events {
        let r = &records[i];
        let kind = if respond { EventKind::Respond(r.completion.ret) } else { EventKind::Invoke };
        h.push(r.pid, r.role, r.op, kind);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_fifo_through_handles() {
        for alg in [Algorithm::Sesd, Algorithm::Semd, Algorithm::Temd] {
            let mut hs = handles(alg, 1, 1, ConsensusMode::default());
            let (enq, deq) = hs.split_at_mut(1);
            for x in 1..=20 {
                enq[0].enq(x).unwrap();
            }
            let got: Vec<_> = (0..21).map(|_| deq[0].deq().unwrap()).collect();
            let mut want: Vec<_> = (1..=20).map(Some).collect();
            want.push(None);
            assert_eq!(got, want, "{alg}");
        }
    }

    #[test]
    fn small_stress_is_clean() {
        let options = StressOptions {
            algorithm: Algorithm::Semd,
            consensus: ConsensusMode::default(),
            enqueuers: 1,
            dequeuers: 2,
            ops_per_thread: 40,
            window: 4,
            duration: None,
            seed: 7,
        };
        let report = stress(&options).unwrap();
        assert_eq!(report.windows, 10);
        assert!(report.bad_windows.is_empty());
        assert!(report.conservation_failures.is_empty());
        assert!(report.operations >= 120);
    }
}
