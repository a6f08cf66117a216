use std::time::Instant;

use anyhow::Context;
use serde_json::json;

use common2::sim_scheduler::{Algorithm, RunConfig};
use common2::suite::{verify_exhaustive, verify_random};

use crate::artifacts::{append_line, write_addressed};
use crate::{Failure, Mode, VerifyArgs};

pub fn run(args: &VerifyArgs) -> Result<bool, Failure> {
    let algorithm = Algorithm::from(args.algorithm);
    let config = RunConfig::uniform(algorithm, args.enqueuers, args.enq_ops, args.dequeuers, args.deq_ops)
        .map_err(|e| Failure::Usage(e.to_string()))?
        .with_consensus(args.consensus.into());
    if args.enqueuers == 0 && args.dequeuers == 0 {
        return Err(Failure::Usage("at least one process is required".into()));
    }

    let started = Instant::now();
    let report = match args.mode {
        Mode::Exhaustive => verify_exhaustive(&config, args.sample),
        Mode::Random => verify_random(&config, args.seed, args.max_schedules, args.sample),
    }
    .context("simulation failed")?;
    let elapsed = started.elapsed();

    let mut counterexamples = Vec::new();
    for f in &report.findings {
        let path = write_addressed(&args.out.join("counterexamples"), &f.trace.to_jsonl())?;
        counterexamples.push(json!({ "kind": f.kind, "message": f.message, "path": path }));
    }
    let mut samples = Vec::new();
    for t in &report.samples {
        samples.push(write_addressed(&args.out.join("passing"), &t.to_jsonl())?);
    }
    let mode = match args.mode {
        Mode::Exhaustive => "exhaustive",
        Mode::Random => "random",
    };
    let line = json!({
        "command": "verify",
        "config": config,
        "mode": mode,
        "seed": args.seed,
        "report": report,
        "violations": report.violations(),
        "counterexamples": counterexamples,
        "samples": samples,
    });
    append_line(&args.out.join("report.jsonl"), &line)?;

    println!(
        "{algorithm} {mode}: {} schedules, {} histories checked, {} violations",
        report.schedules,
        report.histories_checked,
        report.violations()
    );
    println!(
        "max steps enq {}/{} deq {}/{}, max failed loop iterations {}",
        report.max_enq_steps,
        report.enq_step_bound,
        report.max_deq_steps,
        report.deq_step_bound,
        report.max_failed_iterations
    );
    for c in &counterexamples {
        println!("violation ({}): {} -> {}", c["kind"], c["message"], c["path"]);
    }
    eprintln!("wall time {:.3}s", elapsed.as_secs_f64());
    Ok(report.violations() == 0)
}
