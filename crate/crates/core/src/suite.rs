//! Verification suites over simulated runs, and the trace file format.
//!
//! A trace file is JSON lines: a header `{"config":..,"schedule":[..]}`
//! followed by the history's events. Replaying the header reproduces the
//! events byte for byte.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::base_objects::BOTTOM;
use crate::history::{History, HistoryError, Role};
use crate::lin_check::{annotate_semd, check, check_witness, intervals, match_ops, paper_order, CheckError};
use crate::queue_core::invariants::{audit_semd, Audit};
use crate::queue_core::{deq_bound, SEMD_ENQ_BOUND};
use crate::sim_scheduler::{random_execution, run, Algorithm, RunConfig, Schedule, ScheduleError, SimError};
use crate::state_space::{explore_exhaustive, ExhaustiveOptions};
use crate::two_enqueuer::invariants::audit_temd;
use crate::two_enqueuer::temd_enq_bound;

/// A configuration, a schedule, and the history it produces.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trace {
    pub config: RunConfig,
    pub schedule: Schedule,
    pub history: History,
}

#[derive(Serialize, Deserialize)]
struct TraceHeader {
    config: RunConfig,
    schedule: Vec<usize>,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace is empty")]
    Empty,
    #[error("bad trace header: {0}")]
    Header(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl Trace {
    /// Runs `schedule` and records the result.
    pub fn record(config: &RunConfig, schedule: Schedule) -> Result<Trace, SimError> {
        let history = run(config, &schedule)?;
        Ok(Trace { config: config.clone(), schedule, history })
    }

    pub fn to_jsonl(&self) -> String {
        let header = TraceHeader { config: self.config.clone(), schedule: self.schedule.steps().to_vec() };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        out.push_str(&self.history.to_jsonl());
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Trace, TraceError> {
        let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
        if first.trim().is_empty() {
            return Err(TraceError::Empty);
        }
        let header: TraceHeader = serde_json::from_str(first).map_err(|e| TraceError::Header(e.to_string()))?;
        header.config.validate().map_err(|e| TraceError::Header(e.to_string()))?;
        let schedule = Schedule::new(&header.config, header.schedule)?;
        let history = History::from_jsonl(rest)?;
        Ok(Trace { config: header.config, schedule, history })
    }

    /// Re-executes the schedule.
    pub fn replay(&self) -> Result<History, SimError> {
        run(&self.config, &self.schedule)
    }

    /// Whether re-execution reproduces the recorded events byte for byte.
    pub fn replays_identically(&self) -> Result<bool, SimError> {
        Ok(self.replay()?.to_jsonl() == self.history.to_jsonl())
    }
}

/// Worst-case shared steps of one enqueue and one dequeue under `config`.
pub fn step_bounds(config: &RunConfig) -> (u32, u32) {
    match config.algorithm {
        Algorithm::Sesd => (1, 1),
        Algorithm::Semd => (SEMD_ENQ_BOUND, deq_bound(1)),
        Algorithm::Temd => (temd_enq_bound(config.total_enqs() as u32, config.consensus), deq_bound(2)),
    }
}

/// A step budget no complete schedule of `config` can exceed.
pub fn step_budget(config: &RunConfig) -> usize {
    let (enq, deq) = step_bounds(config);
    config.total_enqs() * enq as usize + config.dequeuers.iter().map(|&n| n as usize).sum::<usize>() * deq as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FindingKind {
    /// The history has no linearization.
    NotLinearizable,
    /// The constructed order is not a valid linearization.
    PaperOrder,
    /// A property audit failed.
    Invariant,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Finding {
    pub kind: FindingKind,
    pub message: String,
    pub trace: Trace,
}

/// Totals of a suite run. Wall time is reported separately by callers.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SuiteReport {
    /// Complete schedules covered.
    pub schedules: u128,
    /// Distinct states expanded by exhaustive exploration.
    pub states: usize,
    /// Histories passed through the checker.
    pub histories_checked: usize,
    pub paper_orders_checked: usize,
    pub max_failed_iterations: u32,
    pub max_enq_steps: u32,
    pub max_deq_steps: u32,
    pub enq_step_bound: u32,
    pub deq_step_bound: u32,
    #[serde(skip)]
    pub findings: Vec<Finding>,
    /// Up to the requested number of passing traces.
    #[serde(skip)]
    pub samples: Vec<Trace>,
}

impl SuiteReport {
    pub fn violations(&self) -> usize {
        self.findings.len()
    }

    fn absorb(&mut self, audit: &Audit) {
        self.max_failed_iterations = self.max_failed_iterations.max(audit.max_failed_iterations);
        self.max_enq_steps = self.max_enq_steps.max(audit.max_enq_steps);
        self.max_deq_steps = self.max_deq_steps.max(audit.max_deq_steps);
    }
}

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Check(#[from] CheckError),
}

/// Checks one recorded run; returns what failed.
pub fn check_trace(trace: &Trace) -> Result<(Audit, Vec<(FindingKind, String)>, bool), CheckError> {
    let history = &trace.history;
    let mut problems = Vec::new();
    let audit = match trace.config.algorithm {
        Algorithm::Temd => audit_temd(history, trace.config.total_enqs() as u32, trace.config.consensus),
        Algorithm::Semd => audit_semd(history),
        Algorithm::Sesd => Audit::default(),
    };
    for v in &audit.violations {
        problems.push((FindingKind::Invariant, v.to_string()));
    }
    let verdict = check(history)?;
    if !verdict.linearizable {
        problems.push((FindingKind::NotLinearizable, "no linearization exists".to_owned()));
    }
    let mut ordered = false;
    if trace.config.algorithm == Algorithm::Semd {
        ordered = true;
        if let Some(p) = paper_order_problem(history)? {
            problems.push((FindingKind::PaperOrder, p));
        }
    }
    Ok((audit, problems, ordered))
}

/// Why the constructed order fails on a one-enqueuer history, if it does:
/// it must be total, be a valid linearization, and match pairs must share
/// a location with the dequeue not preceding the enqueue. A dequeue that
/// finds the queue empty must come after every enqueue at an earlier
/// location has been matched.
pub fn paper_order_problem(history: &History) -> Result<Option<String>, CheckError> {
    let order = match paper_order(history) {
        Ok(o) => o,
        Err(e) => return Ok(Some(e.to_string())),
    };
    let ops = intervals(history)?;
    if let Err(e) = check_witness(&ops, &order) {
        return Ok(Some(format!("constructed order rejected: {e}")));
    }
    let annotations = annotate_semd(history).expect("annotated above");
    for (e, d) in match_ops(history) {
        let (ae, ad) = (&annotations[e.0 as usize], &annotations[d.0 as usize]);
        if ae.loc != ad.loc {
            return Ok(Some(format!("{e} at {} matches {d} at {}", ae.loc, ad.loc)));
        }
        if ops[d.0 as usize].precedes(&ops[e.0 as usize]) {
            return Ok(Some(format!("{d} precedes its matching {e}")));
        }
    }
    let empty = annotations.iter().filter(|a| a.role == Role::Dequeuer && ops[a.id.0 as usize].ret == BOTTOM);
    for d in empty {
        let lost = annotations.iter().find(|e| e.role == Role::Enqueuer && e.loc < d.loc && e.matched.is_none());
        if let Some(e) = lost {
            return Ok(Some(format!("{} returned empty at {} but {} at {} is never dequeued", d.id, d.loc, e.id, e.loc)));
        }
    }
    Ok(None)
}

fn record_findings(report: &mut SuiteReport, trace: Trace, sample: usize) -> Result<(), CheckError> {
    let (audit, problems, ordered) = check_trace(&trace)?;
    report.absorb(&audit);
    report.histories_checked += 1;
    report.paper_orders_checked += usize::from(ordered);
    if problems.is_empty() {
        if report.samples.len() < sample {
            report.samples.push(trace);
        }
    } else {
        for (kind, message) in problems {
            report.findings.push(Finding { kind, message, trace: trace.clone() });
        }
    }
    Ok(())
}

/// Every complete schedule of `config`. Properties of single steps are
/// checked on all of them; the checker, the constructed order and the
/// history audits run once per distinct observable history.
pub fn verify_exhaustive(config: &RunConfig, sample: usize) -> Result<SuiteReport, SuiteError> {
    let mut options = ExhaustiveOptions::new(step_budget(config));
    if config.algorithm == Algorithm::Semd {
        options = options.with_order_points();
    }
    let outcome = explore_exhaustive(config, options)?;
    let (enq_step_bound, deq_step_bound) = step_bounds(config);
    let mut report = SuiteReport {
        schedules: outcome.schedules,
        states: outcome.states,
        max_failed_iterations: outcome.max_failed_iterations,
        max_enq_steps: outcome.max_enq_steps,
        max_deq_steps: outcome.max_deq_steps,
        enq_step_bound,
        deq_step_bound,
        ..SuiteReport::default()
    };
    if let Some(v) = outcome.violation {
        let trace = Trace::record(config, v.schedule)?;
        report.findings.push(Finding { kind: FindingKind::Invariant, message: v.violation.to_string(), trace });
    }
    for schedule in outcome.representatives {
        record_findings(&mut report, Trace::record(config, schedule)?, sample)?;
    }
    Ok(report)
}

/// `count` random schedules; run `i` uses seed `seed + i`.
pub fn verify_random(config: &RunConfig, seed: u64, count: u64, sample: usize) -> Result<SuiteReport, SuiteError> {
    let (enq_step_bound, deq_step_bound) = step_bounds(config);
    let mut report = SuiteReport { enq_step_bound, deq_step_bound, ..SuiteReport::default() };
    for i in 0..count {
        let exec = random_execution(config, seed.wrapping_add(i))?;
        let schedule = Schedule::new(config, exec.schedule().to_vec()).expect("generated schedule is valid");
        let trace = Trace { config: config.clone(), schedule, history: exec.into_history() };
        record_findings(&mut report, trace, sample)?;
        report.schedules += 1;
    }
    Ok(report)
}
