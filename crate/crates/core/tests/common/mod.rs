#![allow(dead_code)]

use std::collections::VecDeque;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use common2::history::{EventKind, History, Role};
use common2::step::{Op, Ret};
use common2::{Word, BOTTOM};

/// One completed operation as the oracle sees it.
#[derive(Clone, Copy, Debug)]
struct Span {
    op: Op,
    invoke: usize,
    respond: usize,
    ret: Word,
}

fn spans(h: &History) -> Vec<Span> {
    let mut open: Vec<Option<(Op, usize)>> = Vec::new();
    let mut out = Vec::new();
    for (i, e) in h.events().iter().enumerate() {
        if open.len() <= e.pid {
            open.resize(e.pid + 1, None);
        }
        match e.kind {
            EventKind::Invoke => open[e.pid] = Some((e.op, i)),
            EventKind::Respond(r) => {
                let (op, invoke) = open[e.pid].take().expect("response without invocation");
                let ret = match r {
                    Ret::Ok => BOTTOM,
                    Ret::Value(v) => v,
                };
                out.push(Span { op, invoke, respond: i, ret });
            }
            EventKind::Step(_) => {}
        }
    }
    assert!(open.iter().all(Option::is_none), "oracle needs a complete history");
    out
}

fn legal(order: &[usize], ops: &[Span]) -> bool {
    for (a, &x) in order.iter().enumerate() {
        for &y in &order[a + 1..] {
            if ops[y].respond < ops[x].invoke {
                return false;
            }
        }
    }
    let mut q = VecDeque::new();
    for &i in order {
        match ops[i].op {
            Op::Enq(x) => q.push_back(x),
            Op::Deq => {
                let got = q.pop_front().unwrap_or(BOTTOM);
                if got != ops[i].ret {
                    return false;
                }
            }
        }
    }
    true
}

fn permutations(n: usize, prefix: &mut Vec<usize>, used: &mut Vec<bool>, f: &mut dyn FnMut(&[usize]) -> bool) -> bool {
    if prefix.len() == n {
        return f(prefix);
    }
    for i in 0..n {
        if !used[i] {
            used[i] = true;
            prefix.push(i);
            if permutations(n, prefix, used, f) {
                return true;
            }
            prefix.pop();
            used[i] = false;
        }
    }
    false
}

/// Brute force: tries every permutation of the operations. Items are
/// matched by value, so histories must enqueue distinct items.
pub fn oracle_linearizable(h: &History) -> bool {
    let ops = spans(h);
    let n = ops.len();
    permutations(n, &mut Vec::new(), &mut vec![false; n], &mut |order| legal(order, &ops))
}

/// A random complete history of invocations and responses, one process
/// per operation, with distinct enqueued items and arbitrary returns.
pub fn synthetic_history<R: Rng>(rng: &mut R, max_ops: usize) -> History {
    let n = rng.random_range(1..=max_ops);
    let mut items: Vec<Word> = Vec::new();
    let mut ops = Vec::new();
    for _ in 0..n {
        if rng.random_bool(0.5) {
            let x = items.len() as Word + 1;
            items.push(x);
            ops.push(Op::Enq(x));
        } else {
            ops.push(Op::Deq);
        }
    }
    let rets: Vec<Ret> = ops
        .iter()
        .map(|op| match op {
            Op::Enq(_) => Ret::Ok,
            Op::Deq if items.is_empty() || rng.random_bool(0.3) => Ret::Value(BOTTOM),
            Op::Deq => Ret::Value(items[rng.random_range(0..items.len())]),
        })
        .collect();
    let mut slots: Vec<(usize, bool)> = (0..n).flat_map(|i| [(i, false), (i, true)]).collect();
    slots.shuffle(rng);
    // Put every invocation before its response.
    for i in 0..n {
        let a = slots.iter().position(|&s| s == (i, false)).unwrap();
        let b = slots.iter().position(|&s| s == (i, true)).unwrap();
        if a > b {
            slots.swap(a, b);
        }
    }
    let mut h = History::new();
    for (i, respond) in slots {
        let role = if matches!(ops[i], Op::Enq(_)) { Role::Enqueuer } else { Role::Dequeuer };
        let kind = if respond { EventKind::Respond(rets[i]) } else { EventKind::Invoke };
        h.push(i, role, ops[i], kind);
    }
    h
}

/// Corrupts one dequeue's return so no linearization can exist: either a
/// value nobody enqueued, or an item another dequeue already returned.
/// Step events are dropped, so matching falls back to values.
pub fn corrupt_return<R: Rng>(rng: &mut R, h: &History) -> Option<History> {
    let events: Vec<_> = h.events().iter().copied().filter(|e| !matches!(e.kind, EventKind::Step(_))).collect();
    let deq_responses: Vec<usize> = events
        .iter()
        .enumerate()
        .filter(|(_, e)| e.op == Op::Deq && matches!(e.kind, EventKind::Respond(_)))
        .map(|(i, _)| i)
        .collect();
    let &target = deq_responses.choose(rng)?;
    let returned: Vec<Word> = deq_responses
        .iter()
        .filter(|&&i| i != target)
        .filter_map(|&i| match events[i].kind {
            EventKind::Respond(Ret::Value(v)) if v != BOTTOM => Some(v),
            _ => None,
        })
        .collect();
    let bogus = if !returned.is_empty() && rng.random_bool(0.5) {
        returned[rng.random_range(0..returned.len())]
    } else {
        9_999
    };
    let mut events = events;
    events[target].kind = EventKind::Respond(Ret::Value(bogus));
    Some(History::from_events(events))
}

/// Invocations and responses only.
pub fn without_steps(h: &History) -> History {
    History::from_events(h.events().iter().copied().filter(|e| !matches!(e.kind, EventKind::Step(_))))
}
