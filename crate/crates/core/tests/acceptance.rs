//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common2::base_objects::Method;
use common2::history::{EventKind, Role};
use common2::lin_check::check;
use common2::memory::ObjId;
use common2::native::{stress, StressOptions};
use common2::queue_core::DEQ_MAX_FAILED_ITERATIONS;
use common2::sim_scheduler::{random_execution, Algorithm, RunConfig, Schedule};
use common2::state_space::{explore_exhaustive, ExhaustiveOptions};
use common2::suite::{check_trace, step_budget, verify_random, FindingKind, SuiteReport, Trace};
use common2::two_enqueuer::ConsensusMode;

const SEMD_LIMIT: Duration = Duration::from_secs(5 * 60);
const TEMD_LIMIT: Duration = Duration::from_secs(10 * 60);
const NATIVE_LIMIT: Duration = Duration::from_secs(5 * 60);
const RANDOM_SEMD_SCHEDULES: u64 = 100_000;
const RANDOM_TEMD_SCHEDULES: u64 = 20_000;
const SYNTHETIC_HISTORIES: usize = 10_000;
const NATIVE_OPS_PER_THREAD: usize = 2_000;
const SAMPLED_TRACES: usize = 100;

/// Everything learned from one exhaustively explored configuration.
#[derive(Default)]
struct Exhaustive {
    label: String,
    schedules: u128,
    histories: usize,
    elapsed: Duration,
    step_violation: Option<String>,
    not_linearizable: usize,
    paper_checked: usize,
    paper_failures: Vec<String>,
    invariant_failures: Vec<String>,
    max_failed_iterations: u32,
    claims: usize,
    oracle_compared: usize,
    oracle_disagreements: usize,
    oracle_elapsed: Duration,
    shared_writes: usize,
    row_writes: usize,
    samples: Vec<Trace>,
}

fn explore(label: &str, config: RunConfig) -> Exhaustive {
    let started = Instant::now();
    let mut options = ExhaustiveOptions::new(step_budget(&config));
    if config.algorithm == Algorithm::Semd {
        options = options.with_order_points();
    }
    let outcome = explore_exhaustive(&config, options).expect("exploration runs");
    let mut e = Exhaustive {
        label: label.to_owned(),
        schedules: outcome.schedules,
        histories: outcome.representatives.len(),
        step_violation: outcome.violation.map(|v| v.violation.to_string()),
        max_failed_iterations: outcome.max_failed_iterations,
        ..Exhaustive::default()
    };
    let stride = (outcome.representatives.len() / (SAMPLED_TRACES / 4)).max(1);
    let quota = SAMPLED_TRACES / 4;
    let mut oracle_time = Duration::ZERO;
    for (i, schedule) in outcome.representatives.into_iter().enumerate() {
        let trace = Trace::record(&config, schedule).expect("representative replays");
        let (audit, problems, ordered) = check_trace(&trace).expect("complete history");
        e.max_failed_iterations = e.max_failed_iterations.max(audit.max_failed_iterations);
        e.paper_checked += usize::from(ordered);
        for (kind, message) in problems.iter().cloned() {
            match kind {
                FindingKind::NotLinearizable => e.not_linearizable += 1,
                FindingKind::PaperOrder => e.paper_failures.push(message),
                FindingKind::Invariant => e.invariant_failures.push(message),
            }
        }
        let linearizable = !problems.iter().any(|(k, _)| *k == FindingKind::NotLinearizable);
        count_effects(&trace, &mut e);

        let t = Instant::now();
        if trace.history.ops().len() <= 6 {
            e.oracle_compared += 1;
            if common::oracle_linearizable(&trace.history) != linearizable {
                e.oracle_disagreements += 1;
            }
        }
        oracle_time += t.elapsed();
        if i % stride == 0 && e.samples.len() < quota {
            e.samples.push(trace);
        }
    }
    e.oracle_elapsed = oracle_time;
    e.elapsed = started.elapsed() - oracle_time;
    e
}

/// Counts claims, locations written by both enqueuers, and row writes.
fn count_effects(trace: &Trace, e: &mut Exhaustive) {
    let mut writers: HashMap<ObjId, u8> = HashMap::new();
    for ev in trace.history.events() {
        let EventKind::Step(a) = ev.kind else { continue };
        match (ev.role, a.obj, a.method) {
            (Role::Dequeuer, ObjId::ItemTaken(_), Method::FetchAdd(_)) if a.ret == 0 => e.claims += 1,
            (Role::Enqueuer, ObjId::Item(_) | ObjId::ItemIndex(..), Method::Write(_)) => {
                *writers.entry(a.obj).or_default() |= 1 << ev.pid;
            }
            (Role::Enqueuer, ObjId::RowOf(_), Method::Write(_)) => e.row_writes += 1,
            _ => {}
        }
    }
    if writers.values().any(|&m| m == 0b11) {
        e.shared_writes += 1;
    }
}

struct Corpus {
    semd: Vec<Exhaustive>,
    temd: Vec<Exhaustive>,
    random: Vec<(String, SuiteReport)>,
}

fn build_corpus() -> Corpus {
    let semd = vec![
        explore("(1x2 enq, 2x1 deq)", RunConfig::uniform(Algorithm::Semd, 1, 2, 2, 1).unwrap()),
        explore("(1x1 enq, 2x2 deq)", RunConfig::uniform(Algorithm::Semd, 1, 1, 2, 2).unwrap()),
    ];
    let temd = vec![
        explore("(2x1 enq, 1x2 deq)", RunConfig::uniform(Algorithm::Temd, 2, 1, 1, 2).unwrap()),
        explore("(2x1 enq, 2x1 deq)", RunConfig::uniform(Algorithm::Temd, 2, 1, 2, 1).unwrap()),
        explore(
            "primitive consensus (2x1 enq, 1x2 deq)",
            RunConfig::uniform(Algorithm::Temd, 2, 1, 1, 2).unwrap().with_consensus(ConsensusMode::Primitive),
        ),
    ];
    let random = [
        ("semd (1x4 enq, 3x2 deq)", RunConfig::uniform(Algorithm::Semd, 1, 4, 3, 2).unwrap(), RANDOM_SEMD_SCHEDULES),
        ("temd (2x2 enq, 3x2 deq)", RunConfig::uniform(Algorithm::Temd, 2, 2, 3, 2).unwrap(), RANDOM_TEMD_SCHEDULES / 2),
        (
            "temd primitive (2x2 enq, 3x2 deq)",
            RunConfig::uniform(Algorithm::Temd, 2, 2, 3, 2).unwrap().with_consensus(ConsensusMode::Primitive),
            RANDOM_TEMD_SCHEDULES / 2,
        ),
    ]
    .into_iter()
    .map(|(label, config, n)| (label.to_owned(), verify_random(&config, 0xc0ffee, n, 0).expect("random suite runs")))
    .collect();
    Corpus { semd, temd, random }
}

struct Line {
    passed: bool,
    detail: String,
}

fn line(passed: bool, detail: String) -> Line {
    Line { passed, detail }
}

fn exhaustive_linearizability(runs: &[Exhaustive], random: &[&(String, SuiteReport)], limit: Duration) -> Line {
    let mut passed = true;
    let mut parts = Vec::new();
    for (label, r) in random {
        let bad = r.findings.iter().filter(|f| f.kind == FindingKind::NotLinearizable).count();
        passed &= bad == 0;
        parts.push(format!("random {label} {} schedules, {bad} not linearizable", r.schedules));
    }
    for r in runs {
        let ok = r.step_violation.is_none() && r.not_linearizable == 0 && r.elapsed < limit && r.histories > 0;
        passed &= ok;
        parts.push(format!(
            "{} {} schedules, {} distinct histories, {} not linearizable{}, {:.1}s (limit {}s)",
            r.label,
            r.schedules,
            r.histories,
            r.not_linearizable,
            r.step_violation.as_ref().map(|v| format!(", step violation: {v}")).unwrap_or_default(),
            r.elapsed.as_secs_f64(),
            limit.as_secs()
        ));
    }
    line(passed, parts.join("; "))
}

fn criterion_3(c: &Corpus) -> Line {
    let exhaustive = c.semd.iter().chain(&c.temd);
    let mut max = 0;
    let mut failed = 0;
    for r in exhaustive {
        max = max.max(r.max_failed_iterations);
        failed += r.step_violation.iter().filter(|v| v.contains("loop bodies")).count();
        failed += r.invariant_failures.iter().filter(|v| v.contains("loop bodies")).count();
    }
    let mut random = 0;
    for (_, r) in &c.random {
        max = max.max(r.max_failed_iterations);
        random += r.schedules;
        failed += r.findings.iter().filter(|f| f.message.contains("loop bodies")).count();
    }
    line(
        failed == 0 && max <= DEQ_MAX_FAILED_ITERATIONS && random >= 100_000,
        format!(
            "max non-returning loop iterations {max} (bound {DEQ_MAX_FAILED_ITERATIONS}) over the exhaustive corpus and {random} random schedules; {failed} violations"
        ),
    )
}

fn criterion_4(c: &Corpus) -> Line {
    let is_uniqueness = |m: &str| m.contains("claimed by both") || m.contains("both returned");
    let mut violations = 0;
    let mut claims = 0;
    for r in c.semd.iter().chain(&c.temd) {
        violations += r.step_violation.iter().filter(|v| is_uniqueness(v)).count();
        violations += r.invariant_failures.iter().filter(|v| is_uniqueness(v)).count();
        claims += r.claims;
    }
    for (_, r) in &c.random {
        violations += r.findings.iter().filter(|f| is_uniqueness(&f.message)).count();
    }
    line(
        violations == 0 && claims > 0,
        format!("{claims} successful claims in distinct exhaustive histories plus random corpus; {violations} double claims or duplicate returns"),
    )
}

fn criterion_5(c: &Corpus) -> Line {
    let mut passed = true;
    let mut parts = Vec::new();
    for r in &c.semd {
        let ok = r.paper_checked == r.histories && r.paper_failures.is_empty();
        passed &= ok;
        parts.push(format!(
            "{} constructed order accepted on {}/{} distinct histories{}",
            r.label,
            r.paper_checked - r.paper_failures.len(),
            r.histories,
            r.paper_failures.first().map(|f| format!(" (first failure: {f})")).unwrap_or_default()
        ));
    }
    let random = &c.random[0].1;
    let random_failures = random.findings.iter().filter(|f| f.kind == FindingKind::PaperOrder).count();
    passed &= random_failures == 0;
    parts.push(format!("random semd {}/{}", random.paper_orders_checked - random_failures, random.paper_orders_checked));
    line(passed, parts.join("; "))
}

fn criterion_6(c: &Corpus) -> Line {
    let compared: usize = c.semd.iter().chain(&c.temd).map(|r| r.oracle_compared).sum();
    let disagreements: usize = c.semd.iter().chain(&c.temd).map(|r| r.oracle_disagreements).sum();
    let histories: usize = c.semd.iter().chain(&c.temd).map(|r| r.histories).sum();

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut synthetic_disagreements = 0;
    let mut synthetic_rejected = 0;
    for _ in 0..SYNTHETIC_HISTORIES / 2 {
        let h = common::synthetic_history(&mut rng, 6);
        let ours = check(&h).expect("complete").linearizable;
        synthetic_rejected += usize::from(!ours);
        if ours != common::oracle_linearizable(&h) {
            synthetic_disagreements += 1;
        }
    }
    let configs = [
        RunConfig::uniform(Algorithm::Semd, 1, 2, 2, 1).unwrap(),
        RunConfig::uniform(Algorithm::Semd, 1, 3, 3, 1).unwrap(),
        RunConfig::uniform(Algorithm::Temd, 2, 1, 2, 1).unwrap(),
        RunConfig::uniform(Algorithm::Temd, 2, 2, 1, 2).unwrap(),
    ];
    let mut mutants = 0;
    let mut mutants_accepted = 0;
    let mut seed = 0;
    while mutants < SYNTHETIC_HISTORIES / 2 {
        let config = &configs[seed as usize % configs.len()];
        let h = random_execution(config, seed).expect("runs").into_history();
        seed += 1;
        let Some(m) = common::corrupt_return(&mut rng, &h) else { continue };
        mutants += 1;
        let ours = check(&m).expect("complete").linearizable;
        let oracle = common::oracle_linearizable(&m);
        if ours != oracle {
            synthetic_disagreements += 1;
        }
        if ours || oracle {
            mutants_accepted += 1;
        }
    }
    line(
        disagreements == 0 && compared == histories && synthetic_disagreements == 0 && mutants_accepted == 0,
        format!(
            "oracle agrees on {}/{compared} exhaustive histories (all {histories} have <= 6 ops); {} synthetic histories ({synthetic_rejected} non-linearizable) and {mutants} mutants: {synthetic_disagreements} disagreements, {mutants_accepted} mutants accepted",
            compared - disagreements,
            SYNTHETIC_HISTORIES / 2
        ),
    )
}

fn criterion_7(c: &Corpus) -> Line {
    let is_idempotence = |m: &str| m.contains("written with") || m.contains("moved row") || m.contains("decided both");
    let mut violations = 0;
    let mut shared = 0;
    let mut rows = 0;
    let mut histories = 0;
    for r in &c.temd {
        violations += r.step_violation.iter().filter(|v| is_idempotence(v)).count();
        violations += r.invariant_failures.iter().filter(|v| is_idempotence(v)).count();
        shared += r.shared_writes;
        rows += r.row_writes;
        histories += r.histories;
    }
    for (_, r) in c.random.iter().skip(1) {
        violations += r.findings.iter().filter(|f| is_idempotence(&f.message)).count();
    }
    line(
        violations == 0 && shared > 0 && rows > 0,
        format!(
            "{shared}/{histories} distinct temd histories have locations written by both enqueuers, {rows} row[id] writes; {violations} conflicting writes or non-increasing rows"
        ),
    )
}

fn criterion_8() -> Line {
    let mut passed = true;
    let mut parts = Vec::new();
    for (label, algorithm, enqueuers) in [("semd 1+4", Algorithm::Semd, 1), ("temd 2+4", Algorithm::Temd, 2)] {
        let started = Instant::now();
        let report = stress(&StressOptions {
            algorithm,
            consensus: ConsensusMode::default(),
            enqueuers,
            dequeuers: 4,
            ops_per_thread: NATIVE_OPS_PER_THREAD,
            window: 2,
            duration: None,
            seed: 8,
        })
        .expect("stress runs");
        let elapsed = started.elapsed();
        let ok = report.bad_windows.is_empty()
            && report.conservation_failures.is_empty()
            && report.operations >= 10_000
            && elapsed < NATIVE_LIMIT;
        passed &= ok;
        parts.push(format!(
            "{label}: {} ops in {} windows, {} non-linearizable, {} conservation failures, {:.1}s",
            report.operations,
            report.windows,
            report.bad_windows.len(),
            report.conservation_failures.len(),
            elapsed.as_secs_f64()
        ));
    }
    line(passed, parts.join("; "))
}

fn criterion_9(c: &Corpus) -> Line {
    let stored: Vec<&Trace> = c.random.iter().flat_map(|(_, r)| r.findings.iter().map(|f| &f.trace)).collect();
    let samples: Vec<&Trace> = c.semd.iter().chain(&c.temd).flat_map(|r| &r.samples).collect();
    let mut identical = 0;
    for t in stored.iter().chain(&samples) {
        let text = t.to_jsonl();
        let parsed = Trace::from_jsonl(&text).expect("trace parses");
        if parsed.replays_identically().expect("replays") && parsed.to_jsonl() == text {
            identical += 1;
        }
    }
    // A trace whose recorded history was altered must not replay identically.
    let config = RunConfig::uniform(Algorithm::Semd, 1, 1, 1, 1).unwrap();
    let honest = Trace::record(&config, Schedule::new(&config, vec![0, 0, 0, 1, 1, 1, 1, 1, 1]).unwrap()).unwrap();
    let forged = Trace::from_jsonl(&honest.to_jsonl().replace(r#""kind":"respond","op":"deq","obj":null,"method":null,"args":[],"ret":1"#, r#""kind":"respond","op":"deq","obj":null,"method":null,"args":[],"ret":"bot""#)).unwrap();
    let forged_detected = forged.history != honest.history && !forged.replays_identically().unwrap();
    let total = stored.len() + samples.len();
    line(
        identical == total && samples.len() >= SAMPLED_TRACES && forged_detected,
        format!(
            "{identical}/{total} traces replay byte-identically ({} stored counterexamples, {} sampled passing traces); altered trace detected: {forged_detected}",
            stored.len(),
            samples.len()
        ),
    )
}

fn main() -> ExitCode {
    let corpus = build_corpus();
    let oracle_secs: f64 = corpus.semd.iter().chain(&corpus.temd).map(|r| r.oracle_elapsed.as_secs_f64()).sum();
    let random_semd: Vec<_> = corpus.random.iter().take(1).collect();
    let random_temd: Vec<_> = corpus.random.iter().skip(1).collect();
    let lines = [
        ("semd exhaustive linearizability", exhaustive_linearizability(&corpus.semd, &random_semd, SEMD_LIMIT)),
        ("temd exhaustive linearizability", exhaustive_linearizability(&corpus.temd, &random_temd, TEMD_LIMIT)),
        ("loop body runs at most twice", criterion_3(&corpus)),
        ("claim uniqueness", criterion_4(&corpus)),
        ("constructed order is a linearization", criterion_5(&corpus)),
        ("checker agrees with brute-force oracle", criterion_6(&corpus)),
        ("two-enqueuer idempotence", criterion_7(&corpus)),
        ("native stress", criterion_8()),
        ("replay determinism", criterion_9(&corpus)),
    ];
    let mut all = true;
    for (i, (name, l)) in lines.iter().enumerate() {
        all &= l.passed;
        println!("criterion {} {}: {}: {}", i + 1, if l.passed { "PASS" } else { "FAIL" }, name, l.detail);
    }
    println!("(oracle comparisons took {oracle_secs:.1}s, excluded from criteria 1-2 timings)");
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
