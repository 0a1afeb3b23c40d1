//! Text formats: `.pseq` pulse programs and `.spin` spin systems.
//!
//! Both are line oriented, `#` starts a comment, and parsing never panics:
//! every problem becomes a [`Diagnostic`] with a line, a column and a code.
//!
//! Pulse programs:
//!
//! ```text
//! t1mode pe                    # or conventional (default)
//! phase 1 = 02
//! phase 2 = 8(0)               # n(q) repeats quadrant q n times
//! delay tm = 0.25              # named delay binding
//! p 90 ph1
//! d0                           # the incremented t1 slot
//! d 0.001 noJ                  # shift-only free precession
//! d tm
//! mix 0.25 purge zqf chirp=26000,0.016,1100 g1=4 slices=64 mode=ideal ph4
//! purge
//! acq 256 0.001 ph=R
//! ```
//!
//! Spin systems (indices are 1-based; `*` addresses every spin):
//!
//! ```text
//! spins 2
//! coupling weak                # or strong
//! shift 1 -150
//! J 1 2 10
//! t2 * 0.3
//! rho * 0.5
//! sigma 1 2 -0.05
//! ```

use std::fmt;

use crate::relax::{ChirpSpec, FilterMode, MixingSpec, RelaxationMatrix, ZqFilterSpec};
use crate::sequence::{DelaySlot, PhaseTable, PulseEvent, PulseProgram, SequenceKind};
use crate::spin::{CouplingModel, SpinSystem, MAX_SPINS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DiagCode {
    InvalidUtf8,
    Syntax,
    UnknownStatement,
    BadNumber,
    InvalidValue,
    InvalidPhaseTable,
    UndefinedPhaseTable,
    DuplicateDefinition,
    NoAcquire,
    MultipleAcquire,
    UnboundDelay,
    MissingSpins,
    IndexOutOfRange,
    DuplicateEntry,
    SelfCoupling,
    Invalid,
}

impl DiagCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagCode::InvalidUtf8 => "E001",
            DiagCode::Syntax => "E002",
            DiagCode::UnknownStatement => "E003",
            DiagCode::BadNumber => "E004",
            DiagCode::InvalidValue => "E005",
            DiagCode::InvalidPhaseTable => "E006",
            DiagCode::UndefinedPhaseTable => "E007",
            DiagCode::DuplicateDefinition => "E008",
            DiagCode::NoAcquire => "E009",
            DiagCode::MultipleAcquire => "E010",
            DiagCode::UnboundDelay => "E011",
            DiagCode::MissingSpins => "E012",
            DiagCode::IndexOutOfRange => "E013",
            DiagCode::DuplicateEntry => "E014",
            DiagCode::SelfCoupling => "E015",
            DiagCode::Invalid => "E016",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Diagnostic {
    /// 1-based; 0 when the problem concerns the whole file.
    pub line: usize,
    pub column: usize,
    pub code: DiagCode,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: [{}] {}", self.line, self.column, self.code.as_str(), self.message)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseError {
    pub diagnostics: Vec<Diagnostic>,
}

impl ParseError {
    pub fn has(&self, code: DiagCode) -> bool {
        self.diagnostics.iter().any(|d| d.code == code)
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.diagnostics.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ParseError {}

/// Longest accepted acquisition.
const MAX_ACQ_POINTS: usize = 1 << 20;

#[derive(Clone, Copy, Debug)]
struct Tok<'a> {
    text: &'a str,
    col: usize,
}

fn tokens(line: &str) -> Vec<Tok<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    let mut col = 0;
    let mut start_col = 0;
    for (i, ch) in line.char_indices() {
        col += 1;
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Tok { text: &line[s..i], col: start_col });
            }
        } else if start.is_none() {
            start = Some(i);
            start_col = col;
        }
    }
    if let Some(s) = start {
        out.push(Tok { text: &line[s..], col: start_col });
    }
    out
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
}

struct Diags {
    list: Vec<Diagnostic>,
}

impl Diags {
    fn push(&mut self, line: usize, column: usize, code: DiagCode, message: impl Into<String>) {
        self.list.push(Diagnostic {
            line,
            column,
            code,
            message: message.into(),
        });
    }

    fn number(&mut self, line: usize, t: Tok<'_>, what: &str) -> Option<f64> {
        match t.text.parse::<f64>() {
            Ok(v) if v.is_finite() => Some(v),
            _ => {
                self.push(line, t.col, DiagCode::BadNumber, format!("{what}: '{}' is not a finite number", t.text));
                None
            }
        }
    }

    fn duration(&mut self, line: usize, t: Tok<'_>, what: &str) -> Option<f64> {
        let v = self.number(line, t, what)?;
        if v < 0.0 {
            self.push(line, t.col, DiagCode::InvalidValue, format!("{what} must be >= 0"));
            return None;
        }
        Some(v)
    }

    fn count(&mut self, line: usize, t: Tok<'_>, what: &str) -> Option<usize> {
        match t.text.parse::<usize>() {
            Ok(v) => Some(v),
            Err(_) => {
                self.push(line, t.col, DiagCode::BadNumber, format!("{what}: '{}' is not a count", t.text));
                None
            }
        }
    }
}

fn is_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Expand `digits` and `n(q)` groups, e.g. `4(0) 4(2)` or `02201331`.
/// Whitespace separates a repeat count from preceding plain digits.
pub fn parse_phase_digits(text: &str) -> Result<Vec<u8>, String> {
    let mut out: Vec<u8> = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && chars[i].is_ascii_digit() {
            i += 1;
        }
        if i < chars.len() && chars[i] == '(' {
            // the digits before '(' are a repeat count
            if start == i {
                return Err("'(' without a repeat count".into());
            }
            let n: String = chars[start..i].iter().collect();
            let n: usize = n.parse().map_err(|_| format!("bad repeat count '{n}'"))?;
            let q = chars.get(i + 1).and_then(|c| c.to_digit(10));
            if chars.get(i + 2) != Some(&')') {
                return Err("expected n(q) with a single quadrant digit".into());
            }
            let q = q.ok_or("expected a quadrant digit inside ( )")?;
            if q > 3 {
                return Err(format!("quadrant {q} outside 0..3"));
            }
            if n == 0 || out.len() + n > 8 {
                return Err("phase tables hold 1 to 8 entries".into());
            }
            out.extend(std::iter::repeat(q as u8).take(n));
            i += 3;
        } else if start == i {
            return Err(format!("unexpected '{}'", chars[i]));
        } else {
            for c in &chars[start..i] {
                let q = c.to_digit(10).expect("ascii digit");
                if q > 3 {
                    return Err(format!("quadrant {q} outside 0..3"));
                }
                if out.len() == 8 {
                    return Err("phase tables hold 1 to 8 entries".into());
                }
                out.push(q as u8);
            }
        }
    }
    if out.is_empty() {
        return Err("empty phase table".into());
    }
    Ok(out)
}

/// Canonical spelling: runs of four or more become `n(q)`.
pub fn format_phase_digits(q: &[u8]) -> String {
    let mut s = String::new();
    let mut i = 0;
    while i < q.len() {
        let mut j = i;
        while j < q.len() && q[j] == q[i] {
            j += 1;
        }
        let run = j - i;
        if run >= 4 {
            if !s.is_empty() {
                s.push(' ');
            }
            s.push_str(&format!("{run}({})", q[i]));
        } else {
            if s.ends_with(')') {
                s.push(' ');
            }
            for _ in 0..run {
                s.push(char::from(b'0' + q[i]));
            }
        }
        i = j;
    }
    s
}

/// A phase reference waiting for its table.
struct PendingRef {
    event: usize,
    name: String,
    line: usize,
    col: usize,
}

struct DelayRef {
    name: String,
    line: usize,
    col: usize,
}

#[derive(Clone, Copy, PartialEq)]
enum RefSlot {
    Pulse,
    Mixing,
    Receiver,
}

/// Parse a `.pseq` pulse program from raw bytes.
pub fn parse_program_bytes(bytes: &[u8]) -> Result<PulseProgram, ParseError> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse_program(text),
        Err(e) => Err(ParseError {
            diagnostics: vec![Diagnostic {
                line: 0,
                column: 0,
                code: DiagCode::InvalidUtf8,
                message: format!("input is not UTF-8: {e}"),
            }],
        }),
    }
}

pub fn parse_program(text: &str) -> Result<PulseProgram, ParseError> {
    let mut d = Diags { list: Vec::new() };
    let mut kind: Option<(SequenceKind, usize)> = None;
    let mut tables: Vec<PhaseTable> = Vec::new();
    let mut table_lines: Vec<usize> = Vec::new();
    let mut delays: Vec<(String, f64)> = Vec::new();
    let mut events: Vec<PulseEvent> = Vec::new();
    let mut refs: Vec<(PendingRef, RefSlot)> = Vec::new();
    let mut delay_refs: Vec<DelayRef> = Vec::new();
    let mut acquires: Vec<usize> = Vec::new();

    for (ln0, raw_line) in text.lines().enumerate() {
        let ln = ln0 + 1;
        let toks = tokens(strip_comment(raw_line));
        let Some(head) = toks.first().copied() else { continue };
        let args = &toks[1..];
        let phase_ref = |t: Tok<'_>, d: &mut Diags| -> Option<String> {
            match t.text.strip_prefix("ph") {
                Some(name) if is_name(name) => Some(name.to_string()),
                _ => {
                    d.push(ln, t.col, DiagCode::Syntax, format!("expected ph<name>, found '{}'", t.text));
                    None
                }
            }
        };
        match head.text {
            "t1mode" => {
                if args.len() != 1 {
                    d.push(ln, head.col, DiagCode::Syntax, "usage: t1mode conventional|pe");
                    continue;
                }
                let k = match args[0].text {
                    "conventional" => SequenceKind::Conventional,
                    "pe" => SequenceKind::PerfectEcho,
                    other => {
                        d.push(ln, args[0].col, DiagCode::InvalidValue, format!("unknown t1mode '{other}'"));
                        continue;
                    }
                };
                if let Some((_, prev)) = kind {
                    d.push(ln, head.col, DiagCode::DuplicateDefinition, format!("t1mode already set on line {prev}"));
                } else {
                    kind = Some((k, ln));
                }
            }
            "phase" => {
                if args.len() < 3 || args[1].text != "=" {
                    d.push(ln, head.col, DiagCode::Syntax, "usage: phase <name> = <digits or n(q) groups>");
                    continue;
                }
                let name = args[0].text;
                if !is_name(name) {
                    d.push(ln, args[0].col, DiagCode::Syntax, format!("bad phase table name '{name}'"));
                    continue;
                }
                let body: Vec<&str> = args[2..].iter().map(|t| t.text).collect();
                let quadrants = match parse_phase_digits(&body.join(" ")) {
                    Ok(q) => q,
                    Err(m) => {
                        d.push(ln, args[2].col, DiagCode::InvalidPhaseTable, m);
                        continue;
                    }
                };
                if let Some(i) = tables.iter().position(|t| t.name() == name) {
                    d.push(
                        ln,
                        args[0].col,
                        DiagCode::DuplicateDefinition,
                        format!("phase table {name} already defined on line {}", table_lines[i]),
                    );
                    continue;
                }
                match PhaseTable::new(name, quadrants) {
                    Ok(t) => {
                        tables.push(t);
                        table_lines.push(ln);
                    }
                    Err(e) => d.push(ln, args[2].col, DiagCode::InvalidPhaseTable, e.to_string()),
                }
            }
            "delay" => {
                if args.len() != 3 || args[1].text != "=" {
                    d.push(ln, head.col, DiagCode::Syntax, "usage: delay <name> = <seconds>");
                    continue;
                }
                let name = args[0].text;
                if !is_name(name) || name == "d0" || name.parse::<f64>().is_ok() {
                    d.push(ln, args[0].col, DiagCode::Syntax, format!("bad delay name '{name}'"));
                    continue;
                }
                let Some(v) = d.duration(ln, args[2], "delay") else { continue };
                if delays.iter().any(|(n, _)| n == name) {
                    d.push(ln, args[0].col, DiagCode::DuplicateDefinition, format!("delay {name} already bound"));
                    continue;
                }
                delays.push((name.to_string(), v));
            }
            "p" => {
                if args.len() != 2 {
                    d.push(ln, head.col, DiagCode::Syntax, "usage: p <flip_deg> ph<name>");
                    continue;
                }
                let flip = d.number(ln, args[0], "flip angle");
                let name = phase_ref(args[1], &mut d);
                if let (Some(flip_deg), Some(name)) = (flip, name) {
                    refs.push((
                        PendingRef {
                            event: events.len(),
                            name,
                            line: ln,
                            col: args[1].col,
                        },
                        RefSlot::Pulse,
                    ));
                    events.push(PulseEvent::HardPulse { flip_deg, phase: 0 });
                }
            }
            "d0" | "d" => {
                let (slot_tok, rest) = if head.text == "d0" {
                    (None, args)
                } else if let Some((first, rest)) = args.split_first() {
                    (Some(*first), rest)
                } else {
                    d.push(ln, head.col, DiagCode::Syntax, "usage: d <name|seconds> [noJ]");
                    continue;
                };
                let couplings = match rest {
                    [] => true,
                    [t] if t.text == "noJ" => false,
                    [t, ..] => {
                        d.push(ln, t.col, DiagCode::Syntax, format!("unexpected '{}' (only noJ allowed)", t.text));
                        continue;
                    }
                };
                let slot = match slot_tok {
                    None => DelaySlot::D0,
                    Some(t) if t.text == "d0" => DelaySlot::D0,
                    Some(t) if t.text.starts_with(|c: char| c.is_ascii_digit() || c == '.' || c == '-' || c == '+') => {
                        let Some(v) = d.duration(ln, t, "delay") else { continue };
                        DelaySlot::Fixed(v)
                    }
                    Some(t) if is_name(t.text) => {
                        delay_refs.push(DelayRef {
                            name: t.text.to_string(),
                            line: ln,
                            col: t.col,
                        });
                        DelaySlot::Named(t.text.to_string())
                    }
                    Some(t) => {
                        d.push(ln, t.col, DiagCode::Syntax, format!("bad delay '{}'", t.text));
                        continue;
                    }
                };
                events.push(PulseEvent::Delay { slot, couplings });
            }
            "purge" => {
                if let Some(t) = args.first() {
                    d.push(ln, t.col, DiagCode::Syntax, "purge takes no arguments");
                    continue;
                }
                events.push(PulseEvent::Purge);
            }
            "mix" => {
                if let Some((spec, phase)) = parse_mix(ln, head, args, &mut d) {
                    if let Some((name, col)) = phase {
                        refs.push((
                            PendingRef {
                                event: events.len(),
                                name,
                                line: ln,
                                col,
                            },
                            RefSlot::Mixing,
                        ));
                    }
                    events.push(PulseEvent::Mixing { spec, phase: None });
                }
            }
            "acq" => {
                if args.len() != 3 {
                    d.push(ln, head.col, DiagCode::Syntax, "usage: acq <n> <dwell> ph=<name>");
                    continue;
                }
                let n = d.count(ln, args[0], "points");
                let dwell = d.number(ln, args[1], "dwell");
                let rx = match args[2].text.strip_prefix("ph=") {
                    Some(name) if is_name(name) => Some(name.to_string()),
                    _ => {
                        d.push(ln, args[2].col, DiagCode::Syntax, format!("expected ph=<name>, found '{}'", args[2].text));
                        None
                    }
                };
                let (Some(n), Some(dwell), Some(rx)) = (n, dwell, rx) else { continue };
                if n == 0 || n > MAX_ACQ_POINTS {
                    d.push(ln, args[0].col, DiagCode::InvalidValue, format!("points must be in 1..={MAX_ACQ_POINTS}"));
                    continue;
                }
                if dwell <= 0.0 {
                    d.push(ln, args[1].col, DiagCode::InvalidValue, "dwell must be > 0");
                    continue;
                }
                acquires.push(ln);
                refs.push((
                    PendingRef {
                        event: events.len(),
                        name: rx,
                        line: ln,
                        col: args[2].col,
                    },
                    RefSlot::Receiver,
                ));
                events.push(PulseEvent::Acquire {
                    n_points: n,
                    dwell,
                    receiver: 0,
                });
            }
            other => d.push(ln, head.col, DiagCode::UnknownStatement, format!("unknown statement '{other}'")),
        }
    }

    match acquires.len() {
        0 => d.push(0, 0, DiagCode::NoAcquire, "no acquire statement"),
        1 => {
            let last_is_acq = matches!(events.last(), Some(PulseEvent::Acquire { .. }));
            if !last_is_acq {
                d.push(acquires[0], 1, DiagCode::Invalid, "acquire must be the last event");
            }
        }
        _ => {
            for &ln in &acquires[1..] {
                d.push(ln, 1, DiagCode::MultipleAcquire, format!("second acquire (first on line {})", acquires[0]));
            }
        }
    }

    for (r, slot) in &refs {
        let Some(idx) = tables.iter().position(|t| t.name() == r.name) else {
            d.push(r.line, r.col, DiagCode::UndefinedPhaseTable, format!("undefined phase table {}", r.name));
            continue;
        };
        match (&mut events[r.event], slot) {
            (PulseEvent::HardPulse { phase, .. }, RefSlot::Pulse) => *phase = idx,
            (PulseEvent::Mixing { phase, .. }, RefSlot::Mixing) => *phase = Some(idx),
            (PulseEvent::Acquire { receiver, .. }, RefSlot::Receiver) => *receiver = idx,
            _ => unreachable!("reference recorded against its own event"),
        }
    }
    for r in &delay_refs {
        if !delays.iter().any(|(n, _)| *n == r.name) {
            d.push(r.line, r.col, DiagCode::UnboundDelay, format!("unbound delay {}", r.name));
        }
    }

    if !d.list.is_empty() {
        return Err(ParseError { diagnostics: d.list });
    }
    let program = PulseProgram {
        kind: kind.map(|k| k.0).unwrap_or_default(),
        phase_tables: tables,
        delays,
        events,
    };
    if let Err(e) = program.validate() {
        return Err(ParseError {
            diagnostics: vec![Diagnostic {
                line: 0,
                column: 0,
                code: DiagCode::Invalid,
                message: e.to_string(),
            }],
        });
    }
    Ok(program)
}

type MixParse = (MixingSpec, Option<(String, usize)>);

fn parse_mix(ln: usize, head: Tok<'_>, args: &[Tok<'_>], d: &mut Diags) -> Option<MixParse> {
    let Some((tau_tok, rest)) = args.split_first() else {
        d.push(ln, head.col, DiagCode::Syntax, "usage: mix <tau_m> [purge] [zqf chirp=<sw>,<dur>,<rf> g1=<g>] [ph<name>]");
        return None;
    };
    let tau = d.duration(ln, *tau_tok, "mixing time")?;
    let mut spec = MixingSpec::new(tau);
    let mut phase = None;
    let mut filter: Option<(usize, Option<ChirpSpec>, Option<f64>)> = None;
    let mut slices = None;
    let mut mode = FilterMode::IdealSlices;
    let mut smooth = None;
    let mut fphase = 0u8;
    let mut ok = true;
    for t in rest {
        let (key, val) = match t.text.split_once('=') {
            Some((k, v)) => (k, Some(v)),
            None => (t.text, None),
        };
        match (key, val) {
            ("purge", None) => spec.purge = true,
            ("zqf", None) => filter = Some((t.col, None, None)),
            (k, None) if k.starts_with("ph") && is_name(&k[2..]) => phase = Some((k[2..].to_string(), t.col)),
            ("chirp" | "g1" | "slices" | "mode" | "smooth" | "phase", Some(_)) if filter.is_none() => {
                d.push(ln, t.col, DiagCode::Syntax, format!("'{key}' needs a preceding zqf"));
                ok = false;
            }
            ("chirp", Some(v)) => {
                let parts: Vec<&str> = v.split(',').collect();
                let nums: Vec<Option<f64>> = parts
                    .iter()
                    .map(|p| p.parse::<f64>().ok().filter(|x| x.is_finite()))
                    .collect();
                match nums.as_slice() {
                    [Some(sw), Some(dur), Some(rf)] => {
                        if let Some(f) = filter.as_mut() {
                            f.1 = Some(ChirpSpec::new(*sw, *dur, *rf));
                        }
                    }
                    _ => {
                        d.push(ln, t.col, DiagCode::BadNumber, "chirp=<sweep Hz>,<duration s>,<rf Hz>");
                        ok = false;
                    }
                }
            }
            ("g1", Some(v)) => match v.parse::<f64>() {
                Ok(g) if g.is_finite() => {
                    if let Some(f) = filter.as_mut() {
                        f.2 = Some(g);
                    }
                }
                _ => {
                    d.push(ln, t.col, DiagCode::BadNumber, format!("bad g1 '{v}'"));
                    ok = false;
                }
            },
            ("slices", Some(v)) => match v.parse::<usize>() {
                Ok(n) if (1..=1 << 16).contains(&n) => slices = Some(n),
                _ => {
                    d.push(ln, t.col, DiagCode::InvalidValue, format!("bad slice count '{v}'"));
                    ok = false;
                }
            },
            ("mode", Some("ideal")) => mode = FilterMode::IdealSlices,
            ("mode", Some("full")) => mode = FilterMode::FullChirp,
            ("smooth", Some(v)) => match v.parse::<f64>() {
                Ok(s) if s.is_finite() => smooth = Some(s),
                _ => {
                    d.push(ln, t.col, DiagCode::BadNumber, format!("bad smoothing '{v}'"));
                    ok = false;
                }
            },
            ("phase", Some(v)) => match v.parse::<u8>() {
                Ok(q) if q < 4 => fphase = q,
                _ => {
                    d.push(ln, t.col, DiagCode::InvalidValue, format!("bad filter phase '{v}'"));
                    ok = false;
                }
            },
            _ => {
                d.push(ln, t.col, DiagCode::Syntax, format!("unexpected '{}' in mix", t.text));
                ok = false;
            }
        }
    }
    if let Some((col, chirp, g1)) = filter {
        match (chirp, g1) {
            (Some(mut chirp), Some(g1)) => {
                if let Some(n) = slices {
                    chirp.n_slices = n;
                }
                if let Some(s) = smooth {
                    chirp.smoothing_fraction = s;
                }
                spec.zq_filter = Some(ZqFilterSpec {
                    chirp,
                    gradient_g1: g1,
                    mode,
                    phase: fphase,
                });
            }
            _ => {
                d.push(ln, col, DiagCode::Syntax, "zqf needs chirp=<sw>,<dur>,<rf> and g1=<g>");
                ok = false;
            }
        }
    }
    if !ok {
        return None;
    }
    if let Err(e) = spec.validate() {
        d.push(ln, head.col, DiagCode::InvalidValue, e.to_string());
        return None;
    }
    Some((spec, phase))
}

/// Canonical text. Mixing relaxation overrides are not representable and
/// are dropped (the sample's matrix applies).
pub fn serialize_program(p: &PulseProgram) -> String {
    let mut s = String::new();
    let kind = match p.kind {
        SequenceKind::Conventional => "conventional",
        SequenceKind::PerfectEcho => "pe",
    };
    s.push_str(&format!("t1mode {kind}\n"));
    for t in &p.phase_tables {
        s.push_str(&format!("phase {} = {}\n", t.name(), format_phase_digits(t.quadrants())));
    }
    for (n, v) in &p.delays {
        s.push_str(&format!("delay {n} = {v}\n"));
    }
    let name = |i: usize| p.phase_tables.get(i).map_or("?", |t| t.name());
    for e in &p.events {
        match e {
            PulseEvent::HardPulse { flip_deg, phase } => s.push_str(&format!("p {flip_deg} ph{}\n", name(*phase))),
            PulseEvent::Delay { slot, couplings } => {
                let body = match slot {
                    DelaySlot::D0 => "d0".to_string(),
                    DelaySlot::Fixed(v) => format!("d {v}"),
                    DelaySlot::Named(n) => format!("d {n}"),
                };
                s.push_str(&body);
                if !couplings {
                    s.push_str(" noJ");
                }
                s.push('\n');
            }
            PulseEvent::Purge => s.push_str("purge\n"),
            PulseEvent::Mixing { spec, phase } => {
                s.push_str(&format!("mix {}", spec.tau_m));
                if spec.purge {
                    s.push_str(" purge");
                }
                if let Some(f) = &spec.zq_filter {
                    let c = &f.chirp;
                    s.push_str(&format!(
                        " zqf chirp={},{},{} g1={} slices={} mode={} smooth={}",
                        c.sweep_width,
                        c.duration,
                        c.rf_field,
                        f.gradient_g1,
                        c.n_slices,
                        match f.mode {
                            FilterMode::IdealSlices => "ideal",
                            FilterMode::FullChirp => "full",
                        },
                        c.smoothing_fraction
                    ));
                    if f.phase != 0 {
                        s.push_str(&format!(" phase={}", f.phase));
                    }
                }
                if let Some(t) = phase {
                    s.push_str(&format!(" ph{}", name(*t)));
                }
                s.push('\n');
            }
            PulseEvent::Acquire {
                n_points,
                dwell,
                receiver,
            } => s.push_str(&format!("acq {n_points} {dwell} ph={}\n", name(*receiver))),
        }
    }
    s
}

/// Parse a `.spin` file into a system and its relaxation matrix.
pub fn parse_spin_system(text: &str) -> Result<(SpinSystem, RelaxationMatrix), ParseError> {
    let mut d = Diags { list: Vec::new() };
    let mut n: Option<usize> = None;
    let mut model = CouplingModel::Weak;
    let mut shifts: Vec<Option<f64>> = Vec::new();
    let mut t2: Vec<Option<f64>> = Vec::new();
    let mut rho: Vec<Option<f64>> = Vec::new();
    let mut j: Vec<Vec<Option<f64>>> = Vec::new();
    let mut sigma: Vec<Vec<Option<f64>>> = Vec::new();

    for (ln0, raw_line) in text.lines().enumerate() {
        let ln = ln0 + 1;
        let toks = tokens(strip_comment(raw_line));
        let Some(head) = toks.first().copied() else { continue };
        let args = &toks[1..];
        if head.text == "spins" {
            if args.len() != 1 {
                d.push(ln, head.col, DiagCode::Syntax, "usage: spins <N>");
                continue;
            }
            if n.is_some() {
                d.push(ln, head.col, DiagCode::DuplicateEntry, "spin count given twice");
                continue;
            }
            let Some(v) = d.count(ln, args[0], "spin count") else { continue };
            if !(1..=MAX_SPINS).contains(&v) {
                d.push(ln, args[0].col, DiagCode::InvalidValue, format!("spin count must be in 1..={MAX_SPINS}"));
                continue;
            }
            n = Some(v);
            shifts = vec![None; v];
            t2 = vec![None; v];
            rho = vec![None; v];
            j = vec![vec![None; v]; v];
            sigma = vec![vec![None; v]; v];
            continue;
        }
        if head.text == "coupling" {
            match args {
                [t] if t.text == "weak" => model = CouplingModel::Weak,
                [t] if t.text == "strong" => model = CouplingModel::Strong,
                _ => d.push(ln, head.col, DiagCode::Syntax, "usage: coupling weak|strong"),
            }
            continue;
        }
        let known = matches!(head.text, "shift" | "t2" | "rho" | "J" | "sigma");
        if !known {
            d.push(ln, head.col, DiagCode::UnknownStatement, format!("unknown key '{}'", head.text));
            continue;
        }
        let Some(nspins) = n else {
            d.push(ln, head.col, DiagCode::MissingSpins, "'spins N' must come first");
            continue;
        };
        // index parsing: 1-based, '*' = all for per-spin keys
        let index = |t: Tok<'_>, d: &mut Diags, star: bool| -> Option<Vec<usize>> {
            if star && t.text == "*" {
                return Some((0..nspins).collect());
            }
            match t.text.parse::<usize>() {
                Ok(i) if (1..=nspins).contains(&i) => Some(vec![i - 1]),
                Ok(i) => {
                    d.push(ln, t.col, DiagCode::IndexOutOfRange, format!("spin index {i} outside 1..={nspins}"));
                    None
                }
                Err(_) => {
                    d.push(ln, t.col, DiagCode::BadNumber, format!("bad spin index '{}'", t.text));
                    None
                }
            }
        };
        match head.text {
            "shift" | "t2" | "rho" => {
                if args.len() != 2 {
                    d.push(ln, head.col, DiagCode::Syntax, format!("usage: {} <i> <value>", head.text));
                    continue;
                }
                let idx = index(args[0], &mut d, true);
                let v = if head.text == "t2" && args[1].text == "inf" {
                    Some(f64::INFINITY)
                } else {
                    d.number(ln, args[1], head.text)
                };
                let (Some(idx), Some(v)) = (idx, v) else { continue };
                if head.text == "t2" && v <= 0.0 {
                    d.push(ln, args[1].col, DiagCode::InvalidValue, "t2 must be > 0");
                    continue;
                }
                if head.text == "rho" && v < 0.0 {
                    d.push(ln, args[1].col, DiagCode::InvalidValue, "rho must be >= 0");
                    continue;
                }
                let target = match head.text {
                    "shift" => &mut shifts,
                    "t2" => &mut t2,
                    _ => &mut rho,
                };
                for i in idx {
                    if target[i].is_some() {
                        d.push(ln, head.col, DiagCode::DuplicateEntry, format!("{} for spin {} given twice", head.text, i + 1));
                    } else {
                        target[i] = Some(v);
                    }
                }
            }
            _ => {
                if args.len() != 3 {
                    d.push(ln, head.col, DiagCode::Syntax, format!("usage: {} <i> <j> <value>", head.text));
                    continue;
                }
                let a = index(args[0], &mut d, false);
                let b = index(args[1], &mut d, false);
                let v = d.number(ln, args[2], head.text);
                let (Some(a), Some(b), Some(v)) = (a, b, v) else { continue };
                let (a, b) = (a[0], b[0]);
                if a == b {
                    let what = if head.text == "J" { "self-coupling" } else { "self cross-relaxation" };
                    d.push(ln, args[1].col, DiagCode::SelfCoupling, format!("{what} on spin {}", a + 1));
                    continue;
                }
                let m = if head.text == "J" { &mut j } else { &mut sigma };
                if m[a][b].is_some() {
                    d.push(ln, head.col, DiagCode::DuplicateEntry, format!("{} {} {} given twice", head.text, a + 1, b + 1));
                    continue;
                }
                m[a][b] = Some(v);
                m[b][a] = Some(v);
            }
        }
    }
    let Some(nspins) = n else {
        d.push(0, 0, DiagCode::MissingSpins, "missing 'spins N'");
        return Err(ParseError { diagnostics: d.list });
    };
    if !d.list.is_empty() {
        return Err(ParseError { diagnostics: d.list });
    }
    let fill = |v: &[Option<f64>], dflt: f64| v.iter().map(|x| x.unwrap_or(dflt)).collect::<Vec<_>>();
    let fill2 = |m: &[Vec<Option<f64>>]| m.iter().map(|r| fill(r, 0.0)).collect::<Vec<_>>();
    let sys = SpinSystem::new(fill(&shifts, 0.0), fill2(&j), fill(&t2, f64::INFINITY), model);
    let r = RelaxationMatrix::new(fill(&rho, 0.0), fill2(&sigma));
    match (sys, r) {
        (Ok(s), Ok(r)) => {
            debug_assert_eq!(s.n_spins(), nspins);
            Ok((s, r))
        }
        (Err(e), _) | (_, Err(e)) => Err(ParseError {
            diagnostics: vec![Diagnostic {
                line: 0,
                column: 0,
                code: DiagCode::Invalid,
                message: e.to_string(),
            }],
        }),
    }
}

/// Canonical `.spin` text.
pub fn serialize_spin_system(sys: &SpinSystem, r: &RelaxationMatrix) -> String {
    let n = sys.n_spins();
    let mut s = format!("spins {n}\n");
    if sys.coupling_model() == CouplingModel::Strong {
        s.push_str("coupling strong\n");
    }
    for i in 0..n {
        s.push_str(&format!("shift {} {}\n", i + 1, sys.shift(i)));
    }
    for i in 0..n {
        for k in (i + 1)..n {
            if sys.coupling(i, k) != 0.0 {
                s.push_str(&format!("J {} {} {}\n", i + 1, k + 1, sys.coupling(i, k)));
            }
        }
    }
    for (i, t) in sys.t2().iter().enumerate() {
        if t.is_finite() {
            s.push_str(&format!("t2 {} {}\n", i + 1, t));
        }
    }
    for i in 0..n {
        if r.auto_rate(i) != 0.0 {
            s.push_str(&format!("rho {} {}\n", i + 1, r.auto_rate(i)));
        }
    }
    for i in 0..n {
        for k in (i + 1)..n {
            if r.cross_rate(i, k) != 0.0 {
                s.push_str(&format!("sigma {} {} {}\n", i + 1, k + 1, r.cross_rate(i, k)));
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::{build_noesy_zqf, build_pe_noesy_zqf};
    use proptest::prelude::*;

    fn codes(e: &ParseError) -> Vec<DiagCode> {
        e.diagnostics.iter().map(|d| d.code).collect()
    }

    #[test]
    fn phase_digit_forms() {
        assert_eq!(parse_phase_digits("02201331").unwrap(), vec![0, 2, 2, 0, 1, 3, 3, 1]);
        assert_eq!(parse_phase_digits("8(0)").unwrap(), vec![0; 8]);
        assert_eq!(parse_phase_digits("4(0)4(2)").unwrap(), vec![0, 0, 0, 0, 2, 2, 2, 2]);
        assert_eq!(parse_phase_digits("2(1)13").unwrap(), vec![1, 1, 1, 3]);
        for bad in ["", "9(0)", "(0)", "2(4)", "123456789", "3(0", "x", "4"] {
            assert!(parse_phase_digits(bad).is_err(), "{bad}");
        }
        assert_eq!(format_phase_digits(&[0; 8]), "8(0)");
        assert_eq!(format_phase_digits(&[0, 0, 0, 0, 2, 2, 2, 2]), "4(0) 4(2)");
        assert_eq!(format_phase_digits(&[0, 3, 3, 3, 3]), "0 4(3)");
        assert_eq!(parse_phase_digits("0 4(3)").unwrap(), vec![0, 3, 3, 3, 3]);
        assert_eq!(format_phase_digits(&[1, 1, 3, 3]), "1133");
    }

    #[test]
    fn parses_a_small_program() {
        let text = "# test\nphase 1 = 02\nphase R = 02\ndelay tm = 0.1\np 90 ph1\nd0\nd tm noJ\nd 1e-3\nmix 0.2 purge\nacq 128 0.001 ph=R\n";
        let p = parse_program(text).unwrap();
        assert_eq!(p.kind, SequenceKind::Conventional);
        assert_eq!(p.events.len(), 6);
        assert_eq!(
            p.events[2],
            PulseEvent::Delay {
                slot: DelaySlot::Named("tm".into()),
                couplings: false
            }
        );
    }

    #[test]
    fn distinct_codes() {
        let e = parse_program("").unwrap_err();
        assert_eq!(codes(&e), vec![DiagCode::NoAcquire]);
        assert!(e.to_string().contains("no acquire statement"));

        let e = parse_program("phase R = 0\np 90 ph7\nacq 8 0.001 ph=R\n").unwrap_err();
        assert_eq!(codes(&e), vec![DiagCode::UndefinedPhaseTable]);
        assert_eq!((e.diagnostics[0].line, e.diagnostics[0].column), (2, 6));

        let e = parse_program("phase R = 0\nacq 8 0.001 ph=R\nacq 8 0.001 ph=R\n").unwrap_err();
        assert!(e.has(DiagCode::MultipleAcquire));

        let e = parse_program("phase R = 0\nd tau\nacq 8 0.001 ph=R\n").unwrap_err();
        assert_eq!(codes(&e), vec![DiagCode::UnboundDelay]);

        let e = parse_program("phase R = 0\nwobble 3\nacq 8 0.001 ph=R\n").unwrap_err();
        assert_eq!(codes(&e), vec![DiagCode::UnknownStatement]);

        let e = parse_program("phase R = 0\np ninety phR\nacq 8 0.001 ph=R\n").unwrap_err();
        assert_eq!(codes(&e), vec![DiagCode::BadNumber]);
        assert_eq!(e.diagnostics[0].column, 3);

        let e = parse_program("phase R = 012\nacq 8 0.001 ph=R\n").unwrap_err();
        assert!(e.has(DiagCode::InvalidPhaseTable));

        let e = parse_program("phase R = 0\nmix 0.01 zqf chirp=26000,0.016,1100 g1=4\nacq 8 0.001 ph=R\n").unwrap_err();
        assert!(e.has(DiagCode::InvalidValue));
    }

    #[test]
    fn builtins_round_trip() {
        let mix = MixingSpec::new(0.25).with_filter(ZqFilterSpec::standard());
        for p in [build_noesy_zqf(mix.clone()), build_pe_noesy_zqf(mix)] {
            let text = serialize_program(&p);
            let q = parse_program(&text).unwrap();
            assert_eq!(p, q);
            assert_eq!(serialize_program(&q), text);
        }
        let pe = serialize_program(&build_pe_noesy_zqf(MixingSpec::new(0.1)));
        for n in ["1", "2", "3", "4", "5", "6"] {
            assert!(pe.contains(&format!("phase {n} = ")), "{n}");
        }
        assert!(pe.contains("phase 2 = 8(0)"));
    }

    #[test]
    fn spin_files() {
        let (s, r) = parse_spin_system("spins 2\nshift 1 5\nshift 2 15\nJ 1 2 10\nt2 * 0.3\nrho * 0.5\nsigma 1 2 -0.05\n").unwrap();
        assert_eq!(s.couplings(), &[vec![0.0, 10.0], vec![10.0, 0.0]]);
        assert_eq!(s.t2(), &[0.3, 0.3]);
        assert_eq!(r.cross_rate(1, 0), -0.05);
        let text = serialize_spin_system(&s, &r);
        let (s2, r2) = parse_spin_system(&text).unwrap();
        assert_eq!((s, r), (s2, r2));

        let e = parse_spin_system("spins 2\nJ 1 1 5\n").unwrap_err();
        assert_eq!(codes(&e), vec![DiagCode::SelfCoupling]);
        assert!(e.to_string().contains("self-coupling"));
        let e = parse_spin_system("spins 2\nshift 3 5\n").unwrap_err();
        assert_eq!(codes(&e), vec![DiagCode::IndexOutOfRange]);
        let e = parse_spin_system("spins 2\nJ 1 2 5\nJ 2 1 6\n").unwrap_err();
        assert_eq!(codes(&e), vec![DiagCode::DuplicateEntry]);
        let e = parse_spin_system("shift 1 5\n").unwrap_err();
        assert!(e.has(DiagCode::MissingSpins));
    }

    proptest! {
        #[test]
        fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..400)) {
            let _ = parse_program_bytes(&bytes);
            if let Ok(t) = std::str::from_utf8(&bytes) {
                let _ = parse_spin_system(t);
            }
        }

        #[test]
        fn phase_tables_round_trip(q in proptest::collection::vec(0u8..4, 1..=8)) {
            prop_assume!(matches!(q.len(), 1 | 2 | 4 | 8));
            let text = format!("phase A = {}\nacq 4 0.001 ph=A\n", format_phase_digits(&q));
            let p = parse_program(&text).unwrap();
            prop_assert_eq!(p.phase_tables[0].quadrants(), &q[..]);
        }
    }
}
