//! Lenient parsers for the per-stage outputs of chained inference.
//!
//! Every stage output is a sequence of parenthesized, comma-separated tuples.
//! Prose before the first tuple of a line is skipped, and anything after a
//! tuple that is not a separator starts free-form commentary running to the
//! end of the line (stage 2 explanations such as `(a, b) - because ...`).
//! Malformed tuples are dropped with a warning; nothing here fails.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::model::{normalize_predicate, Label, Quintuple, Span, SpanRepair};

/// One stage-1 entry: free-text description plus the assigned label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectEntry {
    pub description: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: Label,
    pub predicate: String,
    pub object: Label,
}

impl Triplet {
    pub fn render(&self) -> String {
        format!("({}, {}, {})", self.subject, self.predicate, self.object)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub items: Vec<T>,
    pub warnings: Vec<String>,
}

impl<T> Default for Parsed<T> {
    fn default() -> Self {
        Self { items: Vec::new(), warnings: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StageOutput {
    Objects(Vec<ObjectEntry>),
    Pairs(Vec<(Label, Label)>),
    Triplets(Vec<Triplet>),
    Quintuples(Vec<Quintuple>),
}

impl StageOutput {
    pub fn len(&self) -> usize {
        match self {
            StageOutput::Objects(v) => v.len(),
            StageOutput::Pairs(v) => v.len(),
            StageOutput::Triplets(v) => v.len(),
            StageOutput::Quintuples(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("stage must be 1..=4, got {0}")]
pub struct BadStage(pub u8);

/// Parses the output of stage `stage` (1..=4).
pub fn parse_stage(stage: u8, text: &str) -> Result<(StageOutput, Vec<String>), BadStage> {
    Ok(match stage {
        1 => {
            let p = parse_objects(text);
            (StageOutput::Objects(p.items), p.warnings)
        }
        2 => {
            let p = parse_pairs(text);
            (StageOutput::Pairs(p.items), p.warnings)
        }
        3 => {
            let p = parse_triplets(text, &[]);
            (StageOutput::Triplets(p.items), p.warnings)
        }
        4 => {
            let p = parse_quintuples(text, &[]);
            (StageOutput::Quintuples(p.items), p.warnings)
        }
        n => return Err(BadStage(n)),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct RawTuple {
    pub fields: Vec<String>,
    pub raw: String,
}

/// Scans `text` for top-level parenthesized tuples.
pub(crate) fn scan_tuples(text: &str, warnings: &mut Vec<String>) -> Vec<RawTuple> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let mut tuple_on_line = false;
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            tuple_on_line = false;
            i += 1;
        } else if c == '(' {
            let mut depth = 0usize;
            let mut j = i;
            while j < chars.len() {
                match chars[j] {
                    '(' => depth += 1,
                    ')' => {
                        depth -= 1;
                        if depth == 0 {
                            break;
                        }
                    }
                    _ => {}
                }
                j += 1;
            }
            if j >= chars.len() {
                let frag: String = chars[i..].iter().take(40).collect();
                warnings.push(format!("unterminated tuple starting at {frag:?}"));
                break;
            }
            let inner = &chars[i + 1..j];
            out.push(RawTuple { fields: split_fields(inner), raw: chars[i..=j].iter().collect() });
            tuple_on_line = true;
            i = j + 1;
        } else if c.is_whitespace() || matches!(c, ',' | ';' | '.') {
            i += 1;
        } else if tuple_on_line {
            while i < chars.len() && chars[i] != '\n' {
                i += 1;
            }
        } else {
            while i < chars.len() && chars[i] != '\n' && chars[i] != '(' {
                i += 1;
            }
        }
    }
    out
}

fn split_fields(inner: &[char]) -> Vec<String> {
    let mut fields = Vec::new();
    let mut depth = 0usize;
    let mut cur = String::new();
    for &c in inner {
        match c {
            '(' => {
                depth += 1;
                cur.push(c);
            }
            ')' => {
                depth = depth.saturating_sub(1);
                cur.push(c);
            }
            ',' if depth == 0 => fields.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    fields.push(cur);
    fields.into_iter().map(|f| f.split_whitespace().collect::<Vec<_>>().join(" ")).collect()
}

fn label(raw: &str, tuple: &RawTuple, warnings: &mut Vec<String>) -> Option<Label> {
    let cleaned = raw.trim().trim_matches(|c: char| matches!(c, '"' | '\'' | '`' | '*'));
    match Label::parse(cleaned) {
        Ok(l) => Some(l),
        Err(_) => {
            warnings.push(format!("empty label in {}", tuple.raw));
            None
        }
    }
}

fn block_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?is)description\s*:\s*(.*?)\s*category\s*:[ \t]*([^\n]*)").expect("valid regex"))
}

/// Stage 1. Accepts `(description, label)` tuples and the
/// `Description: ... Category: ...` block form.
pub fn parse_objects(text: &str) -> Parsed<ObjectEntry> {
    let mut out = Parsed::default();
    if text.to_lowercase().contains("category") && block_regex().is_match(text) {
        for cap in block_regex().captures_iter(text) {
            let description = cap[1].split_whitespace().collect::<Vec<_>>().join(" ");
            let raw_label = cap[2].trim().trim_end_matches(['.', ',', ';']);
            match Label::parse(raw_label) {
                Ok(label) => out.items.push(ObjectEntry { description, label }),
                Err(_) => out.warnings.push(format!("object with empty category: {description:?}")),
            }
        }
    } else {
        for t in scan_tuples(text, &mut out.warnings) {
            let Some((last, rest)) = t.fields.split_last() else { continue };
            if rest.is_empty() {
                out.warnings.push(format!("object tuple without description: {}", t.raw));
            }
            if let Some(label) = label(last, &t, &mut out.warnings) {
                out.items.push(ObjectEntry { description: rest.join(", "), label });
            }
        }
    }
    if out.items.is_empty() {
        out.warnings.push("stage 1: no objects parsed".into());
    }
    out
}

/// Stage 2: `(object_i, object_j)` pairs.
pub fn parse_pairs(text: &str) -> Parsed<(Label, Label)> {
    let mut out = Parsed::default();
    for t in scan_tuples(text, &mut out.warnings) {
        if t.fields.len() != 2 {
            out.warnings.push(format!("expected 2 fields, got {}: {}", t.fields.len(), t.raw));
            continue;
        }
        let a = label(&t.fields[0], &t, &mut out.warnings);
        let b = label(&t.fields[1], &t, &mut out.warnings);
        if let (Some(a), Some(b)) = (a, b) {
            out.items.push((a, b));
        }
    }
    if out.items.is_empty() {
        out.warnings.push("stage 2: no pairs parsed".into());
    }
    out
}

/// Splits the `relation_k object_j` field of the two-field variant. The
/// longest suffix naming a known label wins; otherwise the last word is taken
/// as the object.
fn split_relation_object(
    field: &str,
    known: &[Label],
    tuple: &RawTuple,
    warnings: &mut Vec<String>,
) -> Option<(String, Label)> {
    let words: Vec<&str> = field.split_whitespace().collect();
    if words.len() < 2 {
        warnings.push(format!("cannot split relation and object in {}", tuple.raw));
        return None;
    }
    for cut in 1..words.len() {
        let candidate = words[cut..].join(" ");
        if let Ok(l) = Label::parse(&candidate) {
            if known.iter().any(|k| k.compatible(&l)) {
                return Some((normalize_predicate(&words[..cut].join(" ")), l));
            }
        }
    }
    if !known.is_empty() {
        warnings.push(format!("object in {} matches no known label; using last word", tuple.raw));
    }
    let l = Label::parse(words[words.len() - 1]).ok()?;
    Some((normalize_predicate(&words[..words.len() - 1].join(" ")), l))
}

fn triplet_from(fields: &[String], known: &[Label], t: &RawTuple, w: &mut Vec<String>) -> Option<Triplet> {
    match fields.len() {
        3 => {
            let predicate = normalize_predicate(&fields[1]);
            if predicate.is_empty() {
                w.push(format!("empty predicate in {}", t.raw));
                return None;
            }
            let subject = label(&fields[0], t, w)?;
            let object = label(&fields[2], t, w)?;
            Some(Triplet { subject, predicate, object })
        }
        2 => {
            let subject = label(&fields[0], t, w)?;
            let (predicate, object) = split_relation_object(&fields[1], known, t, w)?;
            Some(Triplet { subject, predicate, object })
        }
        n => {
            w.push(format!("expected 3 fields, got {n}: {}", t.raw));
            None
        }
    }
}

/// Stage 3: `(subject, relation, object)` or `(subject, relation object)`.
/// `known` labels (typically from stage 1) disambiguate the second form.
pub fn parse_triplets(text: &str, known: &[Label]) -> Parsed<Triplet> {
    let mut out = Parsed::default();
    for t in scan_tuples(text, &mut out.warnings) {
        if let Some(tr) = triplet_from(&t.fields, known, &t, &mut out.warnings) {
            out.items.push(tr);
        }
    }
    if out.items.is_empty() {
        out.warnings.push("stage 3: no triplets parsed".into());
    }
    out
}

fn number_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?").expect("valid regex"))
}

/// Last number in a field such as `start time: 0.2`.
fn time_value(field: &str) -> Option<f64> {
    number_regex().find_iter(field).last().and_then(|m| m.as_str().parse().ok())
}

/// Stage 4 and final output: a triplet followed by start and end fractions.
pub fn parse_quintuples(text: &str, known: &[Label]) -> Parsed<Quintuple> {
    let mut out = Parsed::default();
    for t in scan_tuples(text, &mut out.warnings) {
        let n = t.fields.len();
        if n < 4 {
            out.warnings.push(format!("expected 5 fields, got {n}: {}", t.raw));
            continue;
        }
        let (Some(start), Some(end)) = (time_value(&t.fields[n - 2]), time_value(&t.fields[n - 1])) else {
            out.warnings.push(format!("missing start/end time in {}", t.raw));
            continue;
        };
        let Some(tr) = triplet_from(&t.fields[..n - 2], known, &t, &mut out.warnings) else {
            continue;
        };
        let (span, repairs) = Span::repaired(start, end);
        for r in repairs {
            let what = match r {
                SpanRepair::Clamped => "clamped to [0, 1]",
                SpanRepair::Swapped => "start after end, swapped",
                SpanRepair::NotFinite => "non-finite time replaced by 0",
            };
            out.warnings.push(format!("time span {what} in {}", t.raw));
        }
        out.items.push(Quintuple {
            subject: tr.subject,
            predicate: tr.predicate,
            object: tr.object,
            span,
            rank: Some(out.items.len() as u32),
        });
    }
    if out.items.is_empty() {
        out.warnings.push("stage 4: no quintuples parsed".into());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::prompt::{split_sections, EXAMPLES};
    use proptest::prelude::*;

    fn l(s: &str) -> Label {
        Label::parse(s).unwrap()
    }

    #[test]
    fn quintuple_line() {
        let p = parse_quintuples("(Person 1, running toward, Person 2, 0.2, 0.8)", &[]);
        assert!(p.warnings.is_empty());
        let q = &p.items[0];
        assert_eq!(q.subject, l("person-1"));
        assert_eq!(q.predicate, "running toward");
        assert_eq!(q.object, l("person 2"));
        assert_eq!((q.span.start(), q.span.end()), (0.2, 0.8));
    }

    #[test]
    fn empty_text_warns() {
        let (out, w) = parse_stage(4, "").unwrap();
        assert!(out.is_empty());
        assert_eq!(w.len(), 1);
        assert!(parse_stage(0, "").is_err());
    }

    #[test]
    fn example_two_pairs() {
        let s = split_sections(EXAMPLES[1]);
        let p = parse_pairs(s.stages[1].as_deref().unwrap());
        assert_eq!(p.items.len(), 6);
        assert!(p.warnings.is_empty(), "{:?}", p.warnings);
    }

    #[test]
    fn example_one_commentary_with_parens() {
        let s = split_sections(EXAMPLES[0]);
        let p = parse_pairs(s.stages[1].as_deref().unwrap());
        assert_eq!(p.items.len(), 4);
        assert!(p.warnings.is_empty(), "{:?}", p.warnings);
        let o = parse_objects(s.stages[0].as_deref().unwrap());
        let cats: Vec<_> = o.items.iter().map(|e| e.label.category.as_str()).collect();
        assert_eq!(cats, ["person", "person", "field", "ground"]);
    }

    #[test]
    fn stage_four_with_time_prefixes() {
        let s = split_sections(EXAMPLES[0]);
        let p = parse_quintuples(s.stages[3].as_deref().unwrap(), &[]);
        assert_eq!(p.items.len(), 4);
        assert!(p.warnings.is_empty(), "{:?}", p.warnings);
        assert_eq!(p.items[1].span.end(), 0.9);
    }

    #[test]
    fn tuple_form_objects() {
        let p = parse_objects("(A tall man, wearing a hat, Person), (a red mug, Cup)");
        assert_eq!(p.items.len(), 2);
        assert_eq!(p.items[0].description, "A tall man, wearing a hat");
        assert_eq!(p.items[1].label, l("cup"));
    }

    #[test]
    fn two_field_triplet_variant() {
        let known = [l("person"), l("railroad track")];
        let p = parse_triplets("(Person 1, walking alongside Railroad Track)", &known);
        assert!(p.warnings.is_empty());
        assert_eq!(p.items[0].predicate, "walking alongside");
        assert_eq!(p.items[0].object, l("railroad track"));
        let p = parse_triplets("(person, holding cup)", &[]);
        assert_eq!(p.items[0].predicate, "holding");
        assert_eq!(p.items[0].object, l("cup"));
        let p = parse_quintuples("(person, holding cup, 0.1, 0.7)", &[]);
        assert_eq!(p.items.len(), 1);
    }

    #[test]
    fn out_of_range_times_clamped_with_warning() {
        let p = parse_quintuples("(a, on, b, 1.4, -0.2)", &[]);
        let q = &p.items[0];
        assert_eq!((q.span.start(), q.span.end()), (0.0, 1.0));
        // both ends clamped, then swapped
        assert_eq!(p.warnings.len(), 3);
    }

    #[test]
    fn garbage_tuples_skipped() {
        let p = parse_triplets("(a, b) (x, on, y) (unterminated", &[]);
        assert_eq!(p.items.len(), 1);
        assert!(p.warnings.iter().any(|w| w.contains("unterminated")));
        let p = parse_triplets("(a, b, c, d)", &[]);
        assert!(p.items.is_empty());
        assert_eq!(p.warnings.len(), 2);
    }

    proptest! {
        #[test]
        fn never_panics(s in "\\PC{0,200}", stage in 1u8..=4) {
            let _ = parse_stage(stage, &s).unwrap();
        }

        #[test]
        fn never_panics_on_tuple_soup(s in "[(),.:a-z0-9 \\n-]{0,120}", stage in 1u8..=4) {
            let _ = parse_stage(stage, &s).unwrap();
        }

        #[test]
        fn render_is_fixed_point(
            subj in "[a-z]{1,8}( [a-z]{1,6})?", pred in "[a-z]{1,8}( [a-z]{1,6})?",
            obj in "[a-z]{1,8}", idx in proptest::option::of(1u32..20),
            a in 0.0f64..1.0, b in 0.0f64..1.0,
        ) {
            let idx = idx.map(|i| format!(" {i}")).unwrap_or_default();
            let text = format!("({subj}{idx}, {pred}, {obj}, {a}, {b})");
            let first = parse_quintuples(&text, &[]).items;
            prop_assert_eq!(first.len(), 1);
            let rendered: String = first.iter().map(Quintuple::render).collect::<Vec<_>>().join(" ");
            let second = parse_quintuples(&rendered, &[]).items;
            prop_assert_eq!(first, second);
        }
    }
}
