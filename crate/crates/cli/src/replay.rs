use std::fs;

use anyhow::Context;

use common2::history::{EventKind, History};
use common2::lin_check::{annotate_semd, paper_order};
use common2::sim_scheduler::Algorithm;
use common2::step::{Ret, WordDisplay};
use common2::suite::{check_trace, Trace};

use crate::{Failure, ReplayArgs};

pub fn run(args: &ReplayArgs) -> Result<bool, Failure> {
    let text = fs::read_to_string(&args.trace).with_context(|| format!("reading {}", args.trace.display()))?;
    let trace = Trace::from_jsonl(&text).map_err(|e| Failure::Usage(format!("{}: {e}", args.trace.display())))?;
    let replayed = trace.replay().context("re-executing the schedule")?;

    print_events(&replayed);
    if let Some(n) = first_difference(&trace.history, &replayed) {
        println!("determinism bug: replay diverges from the stored history at event {n}");
        return Ok(false);
    }
    println!("replay identical: {} events", replayed.len());

    if args.annotate {
        if trace.config.algorithm == Algorithm::Semd {
            print_annotations(&replayed);
        } else {
            println!("annotations are defined for semd traces only");
        }
    }

    let (_, problems, _) = check_trace(&trace).context("checking the history")?;
    if problems.is_empty() {
        println!("verdict: linearizable, all properties hold");
    }
    for (kind, message) in &problems {
        println!("verdict: {kind:?}: {message}");
    }
    Ok(problems.is_empty())
}

fn print_events(h: &History) {
    for e in h.events() {
        let detail = match e.kind {
            EventKind::Invoke => "invoke".to_owned(),
            EventKind::Step(a) => {
                let arg = a.method.arg().map(|w| format!("({})", WordDisplay(w))).unwrap_or_default();
                format!("  {}.{}{arg} -> {}", a.obj, a.method.name(), WordDisplay(a.ret))
            }
            EventKind::Respond(Ret::Ok) => "respond ok".to_owned(),
            EventKind::Respond(Ret::Value(v)) => format!("respond {}", WordDisplay(v)),
        };
        println!("{:>4}  p{} {:<8} {:<7} {detail}", e.t, e.pid, format!("{:?}", e.role).to_lowercase(), e.op.to_string());
    }
}

fn first_difference(a: &History, b: &History) -> Option<usize> {
    let (la, lb) = (a.to_jsonl(), b.to_jsonl());
    if la == lb {
        return None;
    }
    Some(la.lines().zip(lb.lines()).position(|(x, y)| x != y).unwrap_or(la.lines().count().min(lb.lines().count())))
}

fn print_annotations(h: &History) {
    match annotate_semd(h) {
        Ok(annotations) => {
            let ops = h.ops();
            for a in annotations {
                let matched = a.matched.map(|m| format!(" matches {m}")).unwrap_or_default();
                println!("{} {:<7} loc={} orderpt={}{matched}", a.id, ops[a.id.0 as usize].op.to_string(), a.loc, a.orderpt);
            }
        }
        Err(e) => println!("cannot annotate: {e}"),
    }
    match paper_order(h) {
        Ok(order) => {
            let ids: Vec<String> = order.iter().map(ToString::to_string).collect();
            println!("constructed order: {}", ids.join(" < "));
        }
        Err(e) => println!("constructed order undefined: {e}"),
    }
}
