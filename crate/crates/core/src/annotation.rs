//! Gloss-interval annotation tables, mention ordering and vocabulary pairing.
//!
//! Annotation files are exported interval tables with a required header:
//!
//! ```text
//! gloss,variation,signer,start_ms,end_ms,condition,session
//! cell,v1,student,1000,1500,dialogue,s1
//! ```
//!
//! ELAN tab-delimited exports convert to this layout by mapping the gloss
//! tier's annotation value to `gloss`, the participant to `signer`, the begin
//! and end times (milliseconds) to `start_ms`/`end_ms`, and filling
//! `variation`, `condition` and `session` per recording.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::interval::Interval;

pub const ANNOTATION_HEADER: &str = "gloss,variation,signer,start_ms,end_ms,condition,session";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Condition {
    Dialogue,
    Vocabulary,
    Monologue,
    Interpreter,
}

impl Condition {
    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Dialogue => "dialogue",
            Condition::Vocabulary => "vocabulary",
            Condition::Monologue => "monologue",
            Condition::Interpreter => "interpreter",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown condition `{0}`")]
pub struct UnknownCondition(pub String);

impl FromStr for Condition {
    type Err = UnknownCondition;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dialogue" => Ok(Condition::Dialogue),
            "vocabulary" => Ok(Condition::Vocabulary),
            "monologue" => Ok(Condition::Monologue),
            "interpreter" => Ok(Condition::Interpreter),
            other => Err(UnknownCondition(other.to_owned())),
        }
    }
}

/// One annotated sign token.
#[derive(Debug, Clone, PartialEq)]
pub struct SignInstance {
    pub gloss: String,
    pub variation: String,
    pub signer: String,
    pub interval: Interval,
    pub condition: Condition,
    pub session: String,
}

impl SignInstance {
    pub fn duration_s(&self) -> f64 {
        self.interval.duration_s()
    }

    /// Total order used wherever output must not depend on input order.
    fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.signer
            .cmp(&other.signer)
            .then_with(|| self.gloss.cmp(&other.gloss))
            .then_with(|| self.session.cmp(&other.session))
            .then_with(|| self.interval.start_ms().total_cmp(&other.interval.start_ms()))
            .then_with(|| self.interval.end_ms().total_cmp(&other.interval.end_ms()))
            .then_with(|| self.variation.cmp(&other.variation))
            .then_with(|| self.condition.cmp(&other.condition))
    }

    fn write_row<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            self.gloss,
            self.variation,
            self.signer,
            self.interval.start_ms(),
            self.interval.end_ms(),
            self.condition,
            self.session
        )
    }
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("read failed: {0}")]
    Io(#[from] io::Error),
    #[error("missing header row `{ANNOTATION_HEADER}`")]
    MissingHeader,
    #[error("line {line}: unexpected header `{found}`")]
    BadHeader { line: usize, found: String },
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: end {end_ms} ms does not follow start {start_ms} ms")]
    EmptyInterval { line: usize, start_ms: f64, end_ms: f64 },
    #[error("line {line}: unknown condition `{label}`")]
    UnknownCondition { line: usize, label: String },
}

impl AnnotationError {
    pub fn line(&self) -> Option<usize> {
        match self {
            AnnotationError::Io(_) | AnnotationError::MissingHeader => None,
            AnnotationError::BadHeader { line, .. }
            | AnnotationError::MalformedRow { line, .. }
            | AnnotationError::EmptyInterval { line, .. }
            | AnnotationError::UnknownCondition { line, .. } => Some(*line),
        }
    }
}

/// Two intervals of one signer in one session that overlap in time.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapWarning {
    pub signer: String,
    pub session: String,
    /// 0-based positions in the parsed instance list.
    pub first: usize,
    pub second: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationSet {
    pub instances: Vec<SignInstance>,
    pub warnings: Vec<OverlapWarning>,
}

pub fn parse_annotations<R: BufRead>(reader: R) -> Result<AnnotationSet, AnnotationError> {
    let mut instances = Vec::new();
    let mut seen_header = false;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        if !seen_header {
            if line.trim() != ANNOTATION_HEADER {
                return Err(AnnotationError::BadHeader { line: line_no, found: line.to_owned() });
            }
            seen_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(AnnotationError::MalformedRow {
                line: line_no,
                reason: format!("expected 7 fields, found {}", fields.len()),
            });
        }
        let time = |s: &str, what: &str| {
            s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| AnnotationError::MalformedRow {
                line: line_no,
                reason: format!("{what} `{s}` is not a number"),
            })
        };
        let start_ms = time(fields[3], "start_ms")?;
        let end_ms = time(fields[4], "end_ms")?;
        let interval =
            Interval::new(start_ms, end_ms).map_err(|_| AnnotationError::EmptyInterval { line: line_no, start_ms, end_ms })?;
        let condition = fields[5]
            .parse::<Condition>()
            .map_err(|e| AnnotationError::UnknownCondition { line: line_no, label: e.0 })?;
        if fields[0].is_empty() || fields[2].is_empty() {
            return Err(AnnotationError::MalformedRow { line: line_no, reason: "gloss and signer are required".into() });
        }
        instances.push(SignInstance {
            gloss: fields[0].to_owned(),
            variation: fields[1].to_owned(),
            signer: fields[2].to_owned(),
            interval,
            condition,
            session: fields[6].to_owned(),
        });
    }
    if !seen_header {
        return Err(AnnotationError::MissingHeader);
    }
    let warnings = overlap_warnings(&instances);
    Ok(AnnotationSet { instances, warnings })
}

fn overlap_warnings(instances: &[SignInstance]) -> Vec<OverlapWarning> {
    let mut by_track: BTreeMap<(&str, &str), Vec<usize>> = BTreeMap::new();
    for (i, inst) in instances.iter().enumerate() {
        by_track.entry((&inst.signer, &inst.session)).or_default().push(i);
    }
    let mut warnings = Vec::new();
    for ((signer, session), mut idx) in by_track {
        idx.sort_by(|&a, &b| instances[a].interval.start_ms().total_cmp(&instances[b].interval.start_ms()));
        // Track the interval reaching furthest so nested overlaps are caught.
        let mut reach: Option<usize> = None;
        for &i in &idx {
            if let Some(r) = reach {
                if instances[i].interval.start_ms() < instances[r].interval.end_ms() {
                    warnings.push(OverlapWarning {
                        signer: signer.to_owned(),
                        session: session.to_owned(),
                        first: r.min(i),
                        second: r.max(i),
                    });
                }
                if instances[i].interval.end_ms() > instances[r].interval.end_ms() {
                    reach = Some(i);
                }
            } else {
                reach = Some(i);
            }
        }
    }
    warnings
}

pub fn write_annotations<W: Write>(instances: &[SignInstance], mut w: W) -> io::Result<()> {
    writeln!(w, "{ANNOTATION_HEADER}")?;
    for inst in instances {
        inst.write_row(&mut w)?;
    }
    Ok(())
}

/// Whether variation labels split mention sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroupingMode {
    /// Group by base term; variations share one sequence.
    #[default]
    BaseTerm,
    /// Each (gloss, variation) is its own sequence.
    StrictVariation,
}

/// Same-gloss tokens of one signer in one session, in production order.
#[derive(Debug, Clone, PartialEq)]
pub struct MentionSequence {
    pub signer: String,
    pub gloss: String,
    pub session: String,
    /// Set only under [`GroupingMode::StrictVariation`].
    pub variation: Option<String>,
    pub tokens: Vec<SignInstance>,
}

impl MentionSequence {
    /// `(mention_index, token)` with 1-based indices.
    pub fn indexed(&self) -> impl Iterator<Item = (u32, &SignInstance)> {
        self.tokens.iter().enumerate().map(|(i, t)| (i as u32 + 1, t))
    }
}

type MentionKey = (String, String, String, Option<String>);

fn mention_key(inst: &SignInstance, mode: GroupingMode) -> MentionKey {
    let variation = match mode {
        GroupingMode::BaseTerm => None,
        GroupingMode::StrictVariation => Some(inst.variation.clone()),
    };
    (inst.signer.clone(), inst.gloss.clone(), inst.session.clone(), variation)
}

fn grouped_positions(instances: &[SignInstance], mode: GroupingMode) -> BTreeMap<MentionKey, Vec<usize>> {
    let mut groups: BTreeMap<MentionKey, Vec<usize>> = BTreeMap::new();
    for (i, inst) in instances.iter().enumerate() {
        groups.entry(mention_key(inst, mode)).or_default().push(i);
    }
    for positions in groups.values_mut() {
        // Stable: equal (start, end) keep input order.
        positions.sort_by(|&a, &b| {
            let (ia, ib) = (&instances[a].interval, &instances[b].interval);
            ia.start_ms().total_cmp(&ib.start_ms()).then_with(|| ia.end_ms().total_cmp(&ib.end_ms()))
        });
    }
    groups
}

/// Per-key mention sequences with at least `min_tokens` tokens, sorted by key.
pub fn mention_sequences(instances: &[SignInstance], min_tokens: usize, mode: GroupingMode) -> Vec<MentionSequence> {
    grouped_positions(instances, mode)
        .into_iter()
        .filter(|(_, positions)| positions.len() >= min_tokens)
        .map(|((signer, gloss, session, variation), positions)| MentionSequence {
            signer,
            gloss,
            session,
            variation,
            tokens: positions.into_iter().map(|i| instances[i].clone()).collect(),
        })
        .collect()
}

/// Mention index of every instance, aligned with the input slice.
pub fn mention_indices(instances: &[SignInstance], mode: GroupingMode) -> Vec<u32> {
    let mut out = vec![0; instances.len()];
    for positions in grouped_positions(instances, mode).values() {
        for (rank, &i) in positions.iter().enumerate() {
            out[i] = rank as u32 + 1;
        }
    }
    out
}

/// A dialogue token and the vocabulary production it is compared against.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselinePair {
    pub dialogue_token: SignInstance,
    pub vocab_token: SignInstance,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BaselineMatch {
    pub pairs: Vec<BaselinePair>,
    /// Dialogue glosses without a vocabulary production, sorted.
    pub unmatched: Vec<String>,
}

/// Pair each dialogue token with the earliest vocabulary production of its gloss.
///
/// Entries of `vocab` whose condition is not `Vocabulary` are ignored. Output
/// is sorted, so the result does not depend on input order.
pub fn match_vocab_baseline(dialogue: &[SignInstance], vocab: &[SignInstance]) -> BaselineMatch {
    let mut baselines: BTreeMap<&str, &SignInstance> = BTreeMap::new();
    for v in vocab.iter().filter(|v| v.condition == Condition::Vocabulary) {
        baselines
            .entry(&v.gloss)
            .and_modify(|cur| {
                let earlier = v
                    .interval
                    .start_ms()
                    .total_cmp(&cur.interval.start_ms())
                    .then_with(|| v.canonical_cmp(cur));
                if earlier == Ordering::Less {
                    *cur = v;
                }
            })
            .or_insert(v);
    }

    let mut tokens: Vec<&SignInstance> = dialogue.iter().collect();
    tokens.sort_by(|a, b| a.canonical_cmp(b));

    let mut pairs = Vec::new();
    let mut unmatched = BTreeSet::new();
    for token in tokens {
        match baselines.get(token.gloss.as_str()) {
            Some(vocab_token) => pairs.push(BaselinePair {
                dialogue_token: token.clone(),
                vocab_token: (*vocab_token).clone(),
            }),
            None => {
                unmatched.insert(token.gloss.clone());
            }
        }
    }
    BaselineMatch { pairs, unmatched: unmatched.into_iter().collect() }
}
