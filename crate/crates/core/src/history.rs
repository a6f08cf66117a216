//! Execution histories: invocations, shared steps and responses.
//!
//! Events carry a strictly increasing sequence number `t`. The time of a
//! shared step in the sense of the correctness argument, i.e. the number of
//! steps taken before it, is available separately through
//! [`History::step_times`].

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::base_objects::{Method, Word, BOTTOM};
use crate::memory::{Access, ObjId};
use crate::step::{Op, Ret};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Enqueuer,
    Dequeuer,
}

/// An operation instance, numbered by invocation order within its history.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OpId(pub u32);

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "op{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EventKind {
    Invoke,
    Step(Access),
    Respond(Ret),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub t: u64,
    pub pid: usize,
    pub role: Role,
    pub op: Op,
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum HistoryError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("event {index}: {message}")]
    Malformed { index: usize, message: String },
    #[error("{0} not found")]
    UnknownOp(OpId),
    #[error("{0} has not completed")]
    Incomplete(OpId),
}

/// One operation instance reconstructed from a history.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpRecord {
    pub id: OpId,
    pub pid: usize,
    pub role: Role,
    pub op: Op,
    /// Event index of the invocation.
    pub invoke: usize,
    /// Event index of the response, if any.
    pub respond: Option<usize>,
    pub ret: Option<Ret>,
    /// Event indexes of the operation's shared steps.
    pub steps: Vec<usize>,
}

impl OpRecord {
    pub fn accesses<'h>(&'h self, history: &'h History) -> impl Iterator<Item = (usize, Access)> + 'h {
        self.steps.iter().map(move |&i| match history.events[i].kind {
            EventKind::Step(a) => (i, a),
            _ => unreachable!("step index points at a non-step event"),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct History {
    events: Vec<Event>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn push(&mut self, pid: usize, role: Role, op: Op, kind: EventKind) {
        let t = self.events.len() as u64;
        self.events.push(Event { t, pid, role, op, kind });
    }

    pub(crate) fn truncate(&mut self, len: usize) {
        self.events.truncate(len)
    }

    /// Builds a history from events, renumbering `t` by position.
    pub fn from_events(events: impl IntoIterator<Item = Event>) -> Self {
        let mut h = History::new();
        for e in events {
            h.push(e.pid, e.role, e.op, e.kind);
        }
        h
    }

    /// Step time of every step event (steps taken before it); `None` for
    /// invocations and responses.
    pub fn step_times(&self) -> Vec<Option<u64>> {
        let mut n = 0;
        self.events
            .iter()
            .map(|e| match e.kind {
                EventKind::Step(_) => {
                    n += 1;
                    Some(n - 1)
                }
                _ => None,
            })
            .collect()
    }

    /// Operation instances in invocation order.
    pub fn ops(&self) -> Vec<OpRecord> {
        let mut ops: Vec<OpRecord> = Vec::new();
        let mut current: Vec<Option<usize>> = Vec::new();
        for (index, e) in self.events.iter().enumerate() {
            if current.len() <= e.pid {
                current.resize(e.pid + 1, None);
            }
            match e.kind {
                EventKind::Invoke => {
                    current[e.pid] = Some(ops.len());
                    ops.push(OpRecord {
                        id: OpId(ops.len() as u32),
                        pid: e.pid,
                        role: e.role,
                        op: e.op,
                        invoke: index,
                        respond: None,
                        ret: None,
                        steps: Vec::new(),
                    });
                }
                EventKind::Step(_) => {
                    if let Some(o) = current[e.pid] {
                        ops[o].steps.push(index);
                    }
                }
                EventKind::Respond(ret) => {
                    if let Some(o) = current[e.pid].take() {
                        ops[o].respond = Some(index);
                        ops[o].ret = Some(ret);
                    }
                }
            }
        }
        ops
    }

    pub fn is_complete(&self) -> bool {
        self.ops().iter().all(|o| o.respond.is_some())
    }

    /// Checks per-process alternation: invoke, steps, respond; one pending
    /// operation at a time; `t` strictly increasing.
    pub fn validate(&self) -> Result<(), HistoryError> {
        let mut pending: Vec<Option<Op>> = Vec::new();
        let mut roles: Vec<Option<Role>> = Vec::new();
        let mut last_t = None;
        for (index, e) in self.events.iter().enumerate() {
            let bad = |message: &str| Err(HistoryError::Malformed { index, message: message.into() });
            if last_t.is_some_and(|t| e.t <= t) {
                return bad("times must strictly increase");
            }
            last_t = Some(e.t);
            if pending.len() <= e.pid {
                pending.resize(e.pid + 1, None);
                roles.resize(e.pid + 1, None);
            }
            match roles[e.pid] {
                Some(r) if r != e.role => return bad("process changed role"),
                _ => roles[e.pid] = Some(e.role),
            }
            match (e.kind, pending[e.pid]) {
                (EventKind::Invoke, None) => pending[e.pid] = Some(e.op),
                (EventKind::Invoke, Some(_)) => return bad("invoke while an operation is pending"),
                (_, None) => return bad("step or respond without a pending operation"),
                (_, Some(op)) if op != e.op => return bad("event names a different operation"),
                (EventKind::Step(_), Some(_)) => {}
                (EventKind::Respond(_), Some(_)) => pending[e.pid] = None,
            }
        }
        Ok(())
    }

    /// Shared steps taken by a completed operation.
    pub fn step_count(&self, id: OpId) -> Result<u32, HistoryError> {
        let ops = self.ops();
        let op = ops.get(id.0 as usize).ok_or(HistoryError::UnknownOp(id))?;
        if op.respond.is_none() {
            return Err(HistoryError::Incomplete(id));
        }
        Ok(op.steps.len() as u32)
    }

    /// Sub-history of the given operations' events.
    pub fn restrict(&self, keep: &[OpId]) -> History {
        let ops = self.ops();
        let mut mask = vec![false; self.events.len()];
        for id in keep {
            if let Some(op) = ops.get(id.0 as usize) {
                mask[op.invoke] = true;
                op.steps.iter().for_each(|&s| mask[s] = true);
                if let Some(r) = op.respond {
                    mask[r] = true;
                }
            }
        }
        History {
            events: self.events.iter().zip(mask).filter(|(_, m)| *m).map(|(e, _)| *e).collect(),
        }
    }

    /// The pid sequence of the shared steps.
    pub fn schedule(&self) -> Vec<usize> {
        self.events.iter().filter(|e| matches!(e.kind, EventKind::Step(_))).map(|e| e.pid).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(&EventLine::from(e)).expect("event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<History, HistoryError> {
        let mut events = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| HistoryError::Parse { line: n + 1, message };
            let raw: EventLine = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
            events.push(raw.into_event().map_err(parse_err)?);
        }
        Ok(History { events })
    }
}

/// A word in JSON: a number, or `"bot"` for ⊥, or `"ok"`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WordJson {
    Num(i64),
    Sym(String),
}

impl WordJson {
    pub fn word(w: Word) -> Self {
        if w == BOTTOM {
            WordJson::Sym("bot".into())
        } else {
            WordJson::Num(w)
        }
    }

    fn ok() -> Self {
        WordJson::Sym("ok".into())
    }

    fn to_word(&self) -> Result<Word, String> {
        match self {
            WordJson::Num(n) => Ok(*n),
            WordJson::Sym(s) if s == "bot" => Ok(BOTTOM),
            WordJson::Sym(s) => Err(format!("expected a word, found `{s}`")),
        }
    }
}

/// The serialized form of one event. Field order is the line format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLine {
    pub t: u64,
    pub pid: usize,
    pub role: Role,
    pub kind: String,
    pub op: String,
    pub obj: Option<String>,
    pub method: Option<String>,
    pub args: Vec<WordJson>,
    pub ret: Option<WordJson>,
}

impl From<&Event> for EventLine {
    fn from(e: &Event) -> Self {
        let (kind, obj, method, args, ret) = match e.kind {
            EventKind::Invoke => ("invoke", None, None, vec![], None),
            EventKind::Step(a) => {
                let ret = match a.method {
                    Method::Write(_) => WordJson::ok(),
                    _ => WordJson::word(a.ret),
                };
                let args = a.method.arg().into_iter().map(WordJson::word).collect();
                ("step", Some(a.obj.to_string()), Some(a.method.name().to_owned()), args, Some(ret))
            }
            EventKind::Respond(Ret::Ok) => ("respond", None, None, vec![], Some(WordJson::ok())),
            EventKind::Respond(Ret::Value(v)) => ("respond", None, None, vec![], Some(WordJson::word(v))),
        };
        EventLine {
            t: e.t,
            pid: e.pid,
            role: e.role,
            kind: kind.to_owned(),
            op: e.op.to_string(),
            obj,
            method,
            args,
            ret,
        }
    }
}

fn parse_op(s: &str) -> Result<Op, String> {
    if s == "deq" {
        return Ok(Op::Deq);
    }
    let inner = s
        .strip_prefix("enq(")
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| format!("bad op `{s}`"))?;
    if inner == "bot" {
        return Ok(Op::Enq(BOTTOM));
    }
    inner.parse().map(Op::Enq).map_err(|_| format!("bad op `{s}`"))
}

impl EventLine {
    pub fn into_event(self) -> Result<Event, String> {
        let op = parse_op(&self.op)?;
        let kind = match self.kind.as_str() {
            "invoke" => EventKind::Invoke,
            "step" => {
                let obj: ObjId = self.obj.as_deref().ok_or("step without obj")?.parse().map_err(|e| format!("{e}"))?;
                let arg = match &self.args[..] {
                    [] => None,
                    [a] => Some(a.to_word()?),
                    _ => return Err("too many args".into()),
                };
                let name = self.method.as_deref().ok_or("step without method")?;
                let method = Method::from_parts(name, arg).ok_or_else(|| format!("bad method `{name}`"))?;
                let ret = match (method, self.ret.as_ref().ok_or("step without ret")?) {
                    (Method::Write(x), WordJson::Sym(s)) if s == "ok" => x,
                    (_, r) => r.to_word()?,
                };
                EventKind::Step(Access { obj, method, ret })
            }
            "respond" => match self.ret.ok_or("respond without ret")? {
                WordJson::Sym(s) if s == "ok" => EventKind::Respond(Ret::Ok),
                r => EventKind::Respond(Ret::Value(r.to_word()?)),
            },
            other => return Err(format!("bad kind `{other}`")),
        };
        Ok(Event { t: self.t, pid: self.pid, role: self.role, op, kind })
    }
}
