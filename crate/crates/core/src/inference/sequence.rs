//! Parser for the signal-token output sequence
//! `o_i [Obj] r_k o_j [Obj] t_s t_e`, repeated once per relation.

use serde::{Deserialize, Serialize};

use crate::model::{normalize_predicate, Label, Quintuple, Span};

pub const SIGNAL_TOKEN: &str = "[Obj]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceClause {
    pub quintuple: Quintuple,
    /// Token indices of the subject and object `[Obj]` markers.
    pub triggers: [usize; 2],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParsedSequence {
    pub clauses: Vec<SequenceClause>,
    pub warnings: Vec<String>,
}

impl ParsedSequence {
    pub fn trigger_positions(&self) -> Vec<usize> {
        self.clauses.iter().flat_map(|c| c.triggers).collect()
    }
}

/// Whitespace tokenization with `[Obj]` always split into its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    text.replace(SIGNAL_TOKEN, &format!(" {SIGNAL_TOKEN} ")).split_whitespace().map(str::to_string).collect()
}

fn is_number(tok: &str) -> bool {
    tok.starts_with(|c: char| c.is_ascii_digit() || matches!(c, '-' | '+' | '.')) && tok.parse::<f64>().is_ok()
}

/// Two consecutive numeric tokens; a lone number belongs to a label
/// (`person 2`).
fn is_time_pair(toks: &[String], i: usize) -> bool {
    i + 1 < toks.len() && is_number(&toks[i]) && is_number(&toks[i + 1])
}

/// Splits the tokens between the two markers into predicate and object.
fn split_tail(tokens: &[String], known: &[Label]) -> Option<(String, Label)> {
    if tokens.len() < 2 {
        return None;
    }
    for cut in 1..tokens.len() {
        if let Ok(l) = Label::parse(&tokens[cut..].join(" ")) {
            if known.iter().any(|k| k.compatible(&l)) {
                return Some((normalize_predicate(&tokens[..cut].join(" ")), l));
            }
        }
    }
    let indexed = tokens.len() >= 3 && tokens[tokens.len() - 1].chars().all(|c| c.is_ascii_digit());
    let cut = tokens.len() - if indexed { 2 } else { 1 };
    Some((normalize_predicate(&tokens[..cut].join(" ")), Label::parse(&tokens[cut..].join(" ")).ok()?))
}

/// Parses concatenated clauses. Malformed clauses are skipped with a warning
/// and parsing resumes after the clause's time pair.
pub fn parse_output_sequence(text: &str, known: &[Label]) -> ParsedSequence {
    let toks = tokenize(text);
    let mut out = ParsedSequence::default();
    let mut i = 0;
    while i < toks.len() {
        let start = i;
        // subject up to the first marker
        let mut j = i;
        while j < toks.len() && toks[j] != SIGNAL_TOKEN && !is_time_pair(&toks, j) {
            j += 1;
        }
        if j >= toks.len() {
            out.warnings.push(format!("trailing tokens without clause: {:?}", toks[start..].join(" ")));
            break;
        }
        if toks[j] != SIGNAL_TOKEN || j == start {
            out.warnings.push(format!("clause at token {start} has no subject marker"));
            i = skip_past_times(&toks, j);
            continue;
        }
        let first = j;
        let mut k = first + 1;
        while k < toks.len() && toks[k] != SIGNAL_TOKEN && !is_time_pair(&toks, k) {
            k += 1;
        }
        if k >= toks.len() || toks[k] != SIGNAL_TOKEN {
            out.warnings.push(format!("clause at token {start} is missing its second {SIGNAL_TOKEN}"));
            i = skip_past_times(&toks, k);
            continue;
        }
        let second = k;
        let times = (toks.get(second + 1), toks.get(second + 2));
        let (Some(ts), Some(te)) = times else {
            out.warnings.push(format!("clause at token {start} is missing its time span"));
            break;
        };
        let (Ok(ts), Ok(te)) = (ts.parse::<f64>(), te.parse::<f64>()) else {
            out.warnings.push(format!("clause at token {start} has a non-numeric time span"));
            i = second + 1;
            continue;
        };
        i = second + 3;
        let subject = Label::parse(&toks[start..first].join(" ")).ok();
        let tail = split_tail(&toks[first + 1..second], known);
        let (Some(subject), Some((predicate, object))) = (subject, tail) else {
            out.warnings.push(format!("clause at token {start} needs a predicate and an object"));
            continue;
        };
        let (span, repairs) = Span::repaired(ts, te);
        if !repairs.is_empty() {
            out.warnings.push(format!("clause at token {start}: time span repaired {repairs:?}"));
        }
        let rank = Some(out.clauses.len() as u32);
        out.clauses.push(SequenceClause {
            quintuple: Quintuple { subject, predicate, object, span, rank },
            triggers: [first, second],
        });
    }
    out
}

/// Index just past the next pair of consecutive numbers at or after `from`.
fn skip_past_times(toks: &[String], from: usize) -> usize {
    let mut i = from;
    while i + 1 < toks.len() {
        if is_number(&toks[i]) && is_number(&toks[i + 1]) {
            return i + 2;
        }
        i += 1;
    }
    toks.len()
}
