use std::time::{Duration, Instant};

use serde_json::json;

use common2::native::{stress as run_stress, StressError, StressOptions};
use common2::sim_scheduler::Algorithm;

use crate::artifacts::{append_line, write_addressed};
use crate::{Failure, StressArgs};

pub fn run(args: &StressArgs) -> Result<bool, Failure> {
    let algorithm = Algorithm::from(args.algorithm);
    if algorithm == Algorithm::Sesd {
        return Err(Failure::Usage("stress-native supports semd and temd".into()));
    }
    let enqueuers = args.enqueuers.unwrap_or(algorithm.max_enqueuers());
    if enqueuers == 0 || enqueuers > algorithm.max_enqueuers() {
        return Err(Failure::Usage(format!(
            "{algorithm} needs between 1 and {} enqueuer(s), got {enqueuers}",
            algorithm.max_enqueuers()
        )));
    }
    if args.dequeuers == 0 {
        return Err(Failure::Usage("at least one dequeuer is required".into()));
    }
    let options = StressOptions {
        algorithm,
        consensus: args.consensus.into(),
        enqueuers,
        dequeuers: args.dequeuers,
        ops_per_thread: args.ops_per_thread,
        window: args.window,
        duration: args.duration_secs.map(Duration::from_secs),
        seed: args.seed,
    };

    let started = Instant::now();
    let report = match run_stress(&options) {
        Ok(r) => r,
        Err(StressError::Panic) => return Err(anyhow::anyhow!("a worker thread panicked").into()),
        Err(e) => return Err(anyhow::Error::new(e).into()),
    };
    let elapsed = started.elapsed();

    let mut windows = Vec::new();
    for w in &report.bad_windows {
        let path = write_addressed(&args.out.join("windows"), &w.history.to_jsonl())?;
        windows.push(json!({ "window": w.index, "path": path, "verdict": serde_json::from_str::<serde_json::Value>(&w.verdict.to_json()).unwrap_or_default() }));
    }
    let violations = report.bad_windows.len() + report.conservation_failures.len();
    let line = json!({
        "command": "stress-native",
        "algorithm": algorithm,
        "consensus": options.consensus,
        "enqueuers": enqueuers,
        "dequeuers": args.dequeuers,
        "ops_per_thread": args.ops_per_thread,
        "window": args.window,
        "seed": args.seed,
        "windows": report.windows,
        "operations": report.operations,
        "drained": report.drained,
        "max_failed_iterations": report.max_failed_iterations,
        "max_enq_steps": report.max_enq_steps,
        "max_deq_steps": report.max_deq_steps,
        "bad_windows": windows,
        "conservation_failures": report.conservation_failures,
        "violations": violations,
    });
    append_line(&args.out.join("stress.jsonl"), &line)?;

    println!(
        "{algorithm} native: {} threads, {} windows, {} operations, {} non-linearizable windows, {} conservation failures",
        enqueuers + args.dequeuers,
        report.windows,
        report.operations,
        report.bad_windows.len(),
        report.conservation_failures.len()
    );
    println!(
        "max steps enq {} deq {}, max failed loop iterations {}",
        report.max_enq_steps, report.max_deq_steps, report.max_failed_iterations
    );
    eprintln!("wall time {:.3}s", elapsed.as_secs_f64());
    Ok(violations == 0)
}
