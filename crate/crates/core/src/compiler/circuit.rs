// Copyright 2026 qubitctl Contributors
// SPDX-License-Identifier: Apache-2.0

//! Circuit language.
//!
//! A circuit is either a JSON array of statements or one statement object per
//! line. Statement shapes:
//!
//! ```text
//! {"gate": "X90", "qubit": "Q0"}            {"gate": "CZ", "qubits": ["Q0", "Q1"]}
//! {"pulse": "Q0.drive", "freq": 3.55e9, "phase": 0.0, "amp": 0.5, "env": "x90", "length": 256}
//! {"virtual_z": "Q0", "phase": 1.5708}
//! {"measure": "Q0", "result": "m0"}
//! {"if": "m0", "equals": 1, "then": [...], "else": [...]}
//! {"barrier": ["Q0", "Q1"]}                 {"barrier": []}   (all qubits)
//! {"delay": 100, "qubits": ["Q1"]}
//! ```
//!
//! `length` is optional on raw pulses; `equals` defaults to 1 and `else` to
//! an empty block. Phases are radians, frequencies Hz, delays qclk ticks.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::value::RawValue;
use serde_json::Value;

use super::{CompileError, Diagnostic, Pos};

#[derive(Debug, Clone, PartialEq)]
pub struct CircuitProgram {
    pub statements: Vec<Statement>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Statement {
    pub pos: Pos,
    pub kind: StmtKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StmtKind {
    Gate {
        name: String,
        qubits: Vec<String>,
    },
    RawPulse {
        dest: String,
        freq: f64,
        phase: f64,
        amp: f64,
        env: String,
        length: Option<u32>,
    },
    VirtualZ {
        qubit: String,
        phase: f64,
    },
    Measure {
        qubit: String,
        result: String,
    },
    IfElse {
        result: String,
        expected: i32,
        then_body: Vec<Statement>,
        else_body: Vec<Statement>,
    },
    Barrier {
        qubits: Vec<String>,
    },
    Delay {
        qubits: Vec<String>,
        ticks: u64,
    },
}

struct Parser<'s> {
    src: &'s str,
    diags: Vec<Diagnostic>,
}

impl<'s> Parser<'s> {
    fn pos_of(&self, offset: usize) -> Pos {
        let before = &self.src[..offset.min(self.src.len())];
        let line = before.matches('\n').count() + 1;
        let line_start = before.rfind('\n').map_or(0, |i| i + 1);
        Pos {
            line,
            column: before[line_start..].chars().count() + 1,
        }
    }

    fn offset_of(&self, raw: &RawValue) -> usize {
        raw.get().as_ptr() as usize - self.src.as_ptr() as usize
    }

    fn err(&mut self, pos: Pos, message: impl Into<String>) {
        self.diags.push(Diagnostic {
            pos,
            message: message.into(),
        });
    }

    fn json_error(&mut self, base: usize, e: &serde_json::Error) {
        // serde_json positions are relative to the parsed slice.
        let base_pos = self.pos_of(base);
        let pos = if e.line() <= 1 {
            Pos {
                line: base_pos.line,
                column: base_pos.column + e.column().saturating_sub(1),
            }
        } else {
            Pos {
                line: base_pos.line + e.line() - 1,
                column: e.column(),
            }
        };
        let msg = e.to_string();
        let msg = msg.split(" at line ").next().unwrap_or(&msg).to_string();
        self.err(pos, format!("malformed JSON: {msg}"));
    }

    fn block(&mut self, raws: Vec<&'s RawValue>) -> Vec<Statement> {
        raws.into_iter().filter_map(|r| self.statement(r)).collect()
    }

    fn statement(&mut self, raw: &'s RawValue) -> Option<Statement> {
        let pos = self.pos_of(self.offset_of(raw));
        let fields: BTreeMap<String, &'s RawValue> = match serde_json::from_str(raw.get()) {
            Ok(f) => f,
            Err(_) => {
                self.err(pos, "statement must be a JSON object");
                return None;
            }
        };
        let mut st = StmtReader {
            p: self,
            pos,
            fields,
            used: BTreeSet::new(),
            ok: true,
        };
        let kind = st.kind()?;
        let kind = match kind {
            "gate" => {
                let name = st.string("gate");
                let qubits = st.qubits();
                StmtKind::Gate {
                    name: name?,
                    qubits: qubits?,
                }
            }
            "pulse" => {
                let dest = st.string("pulse");
                let freq = st.number("freq");
                let phase = st.number("phase");
                let amp = st.number("amp");
                let env = st.string("env");
                let length = st.opt_uint("length").map(|l| l.map(|l| l as u32));
                StmtKind::RawPulse {
                    dest: dest?,
                    freq: freq?,
                    phase: phase?,
                    amp: amp?,
                    env: env?,
                    length: length?,
                }
            }
            "virtual_z" => {
                let qubit = st.string("virtual_z");
                let phase = st.number("phase");
                StmtKind::VirtualZ {
                    qubit: qubit?,
                    phase: phase?,
                }
            }
            "measure" => {
                let qubit = st.string("measure");
                let result = st.string("result");
                StmtKind::Measure {
                    qubit: qubit?,
                    result: result?,
                }
            }
            "if" => {
                let result = st.string("if");
                let expected = st.opt_int("equals").map(|v| v.unwrap_or(1));
                let then_body = st.block("then", true);
                let else_body = st.block("else", false);
                StmtKind::IfElse {
                    result: result?,
                    expected: expected?,
                    then_body: then_body?,
                    else_body: else_body?,
                }
            }
            "barrier" => StmtKind::Barrier {
                qubits: st.string_list("barrier")?,
            },
            "delay" => {
                let ticks = st.uint("delay");
                let qubits = st.string_list("qubits");
                StmtKind::Delay {
                    ticks: ticks?,
                    qubits: qubits?,
                }
            }
            _ => unreachable!(),
        };
        st.finish()?;
        Some(Statement { pos, kind })
    }
}

const KINDS: [&str; 7] = ["gate", "pulse", "virtual_z", "measure", "if", "barrier", "delay"];

struct StmtReader<'p, 's> {
    p: &'p mut Parser<'s>,
    pos: Pos,
    fields: BTreeMap<String, &'s RawValue>,
    used: BTreeSet<String>,
    ok: bool,
}

impl<'p, 's> StmtReader<'p, 's> {
    fn fail<T>(&mut self, message: String) -> Option<T> {
        self.ok = false;
        self.p.err(self.pos, message);
        None
    }

    fn kind(&mut self) -> Option<&'static str> {
        let found: Vec<_> = KINDS
            .iter()
            .copied()
            .filter(|k| self.fields.contains_key(*k))
            .collect();
        match found.as_slice() {
            [k] => Some(k),
            [] => {
                let keys: Vec<_> = self.fields.keys().cloned().collect();
                self.fail(format!("unknown statement kind (keys: {})", keys.join(", ")))
            }
            many => self.fail(format!("ambiguous statement with keys {}", many.join(", "))),
        }
    }

    fn value(&mut self, key: &str) -> Option<Value> {
        self.used.insert(key.to_string());
        let raw = self.fields.get(key).copied()?;
        serde_json::from_str(raw.get()).ok()
    }

    fn required(&mut self, key: &str) -> Option<Value> {
        match self.value(key) {
            Some(v) => Some(v),
            None => self.fail(format!("missing field \"{key}\"")),
        }
    }

    fn string(&mut self, key: &str) -> Option<String> {
        match self.required(key)? {
            Value::String(s) if !s.is_empty() => Some(s),
            other => self.fail(format!("field \"{key}\" must be a nonempty string, got {other}")),
        }
    }

    fn number(&mut self, key: &str) -> Option<f64> {
        match self.required(key)? {
            Value::Number(n) => n.as_f64(),
            other => self.fail(format!("field \"{key}\" must be a number, got {other}")),
        }
    }

    fn uint(&mut self, key: &str) -> Option<u64> {
        let v = self.required(key)?;
        self.as_uint(key, v)
    }

    fn as_uint(&mut self, key: &str, v: Value) -> Option<u64> {
        match v.as_u64() {
            Some(n) => Some(n),
            None => self.fail(format!(
                "field \"{key}\" must be a nonnegative integer, got {v}"
            )),
        }
    }

    fn opt_uint(&mut self, key: &str) -> Option<Option<u64>> {
        match self.value(key) {
            None => Some(None),
            Some(v) => self.as_uint(key, v).map(Some),
        }
    }

    fn opt_int(&mut self, key: &str) -> Option<Option<i32>> {
        match self.value(key) {
            None => Some(None),
            Some(v) => match v.as_i64().and_then(|n| i32::try_from(n).ok()) {
                Some(n) => Some(Some(n)),
                None => self.fail(format!("field \"{key}\" must be a 32-bit integer, got {v}")),
            },
        }
    }

    fn string_list(&mut self, key: &str) -> Option<Vec<String>> {
        match self.required(key)? {
            Value::Array(items) => {
                let mut out = Vec::new();
                for item in items {
                    match item {
                        Value::String(s) if !s.is_empty() => out.push(s),
                        other => {
                            return self.fail(format!(
                                "field \"{key}\" must list qubit names, got {other}"
                            ))
                        }
                    }
                }
                Some(out)
            }
            other => self.fail(format!("field \"{key}\" must be an array, got {other}")),
        }
    }

    fn qubits(&mut self) -> Option<Vec<String>> {
        match (self.fields.contains_key("qubit"), self.fields.contains_key("qubits")) {
            (true, false) => self.string("qubit").map(|q| vec![q]),
            (false, true) => {
                let qs = self.string_list("qubits")?;
                if qs.is_empty() {
                    return self.fail("gate needs at least one qubit".into());
                }
                Some(qs)
            }
            _ => self.fail("gate needs exactly one of \"qubit\" or \"qubits\"".into()),
        }
    }

    fn block(&mut self, key: &str, required: bool) -> Option<Vec<Statement>> {
        self.used.insert(key.to_string());
        let Some(raw) = self.fields.get(key).copied() else {
            return if required {
                self.fail(format!("missing field \"{key}\""))
            } else {
                Some(Vec::new())
            };
        };
        match serde_json::from_str::<Vec<&'s RawValue>>(raw.get()) {
            Ok(items) => {
                let before = self.p.diags.len();
                let body = self.p.block(items);
                if self.p.diags.len() != before {
                    self.ok = false;
                }
                Some(body)
            }
            Err(_) => self.fail(format!("field \"{key}\" must be an array of statements")),
        }
    }

    fn finish(mut self) -> Option<()> {
        let extra: Vec<_> = self
            .fields
            .keys()
            .filter(|k| !self.used.contains(*k))
            .cloned()
            .collect();
        if !extra.is_empty() {
            self.fail::<()>(format!("unexpected field(s): {}", extra.join(", ")));
        }
        self.ok.then_some(())
    }
}

/// Reports `if` statements whose result is not produced earlier in an
/// enclosing scope. A result measured inside an arm is local to that arm.
fn check_results(stmts: &[Statement], known: &mut Vec<String>, diags: &mut Vec<Diagnostic>) {
    for s in stmts {
        match &s.kind {
            StmtKind::Measure { result, .. } => known.push(result.clone()),
            StmtKind::IfElse {
                result,
                then_body,
                else_body,
                ..
            } => {
                if !known.contains(result) {
                    diags.push(Diagnostic {
                        pos: s.pos,
                        message: format!("undefined result \"{result}\""),
                    });
                }
                for body in [then_body, else_body] {
                    let mut scope = known.clone();
                    check_results(body, &mut scope, diags);
                }
            }
            _ => {}
        }
    }
}

pub fn parse_circuit(text: &str) -> Result<CircuitProgram, CompileError> {
    let mut p = Parser {
        src: text,
        diags: Vec::new(),
    };
    let trimmed = text.trim_start();
    let statements = if trimmed.starts_with('[') {
        match serde_json::from_str::<Vec<&RawValue>>(text) {
            Ok(items) => p.block(items),
            Err(e) => {
                p.json_error(0, &e);
                Vec::new()
            }
        }
    } else {
        let mut out = Vec::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let body = line.trim();
            if !body.is_empty() && !body.starts_with("//") {
                let lead = line.len() - line.trim_start().len();
                let slice = &text[offset + lead..offset + lead + body.len()];
                match serde_json::from_str::<&RawValue>(slice) {
                    Ok(raw) => out.extend(p.statement(raw)),
                    Err(e) => p.json_error(offset + lead, &e),
                }
            }
            offset += line.len();
        }
        out
    };
    let mut diags = p.diags;
    check_results(&statements, &mut Vec::new(), &mut diags);
    if diags.is_empty() {
        Ok(CircuitProgram { statements })
    } else {
        diags.sort_by_key(|d| d.pos);
        Err(CompileError::Parse(diags))
    }
}
