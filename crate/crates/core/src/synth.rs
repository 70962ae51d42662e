//! Seeded synthetic sessions with closed-form ground truth.
//!
//! Every joint of a token travels along a straight segment with a
//! half-cosine speed profile, `p(u) = base + a * dir * (1 - cos(pi u)) / 2`
//! for `u` in `[0, 1]`. Sampled at 100 Hz with frames on both token
//! boundaries, path length and spatial extent both equal the amplitude
//! `a`, and the mean height is `base_up + a * dir_up / 2`. Amplitude
//! decays geometrically with mention index; gloss identity is carried by
//! the per-joint directions. After each token the joints return to rest
//! along the same segment before the next slot begins.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::annotation::{Condition, SignInstance};
use crate::entrain::EmbeddingToken;
use crate::interval::Interval;
use crate::kinemetrics::Point3;
use crate::skeleton::{Frame, JointGroup, JointId, Keypoint, KeypointSequence, SequenceMeta, Side, SourceKind, JOINT_COUNT};

pub const FRAME_RATE: f64 = 100.0;
const FRAME_MS: f64 = 10.0;
pub const SLOT_MS: f64 = 1000.0;
/// Offset of a token's start inside its slot.
pub const LEAD_MS: f64 = 100.0;
const VOCAB_DURATIONS_MS: [f64; 4] = [640.0, 720.0, 800.0, 880.0];

pub const SIGNER_A: &str = "A";
pub const SIGNER_B: &str = "B";
pub const DIALOGUE_SESSION: &str = "dialogue";
pub const VOCAB_SESSION: &str = "vocab";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub glosses: usize,
    pub mentions: usize,
    /// Fractional amplitude loss per repeated mention.
    pub reduction_rate: f64,
    /// Fraction of the remaining gap to signer A that B closes per mention.
    pub entrain_coupling: f64,
    /// Left-side joints sit at the origin inside tokens from this mention on.
    pub weak_drop_mention: Option<u32>,
    /// Dialogue token duration as a fraction of the citation duration.
    pub duration_ratio: f64,
    pub embedding_dim: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            glosses: 6,
            mentions: 6,
            reduction_rate: 0.1,
            entrain_coupling: 0.5,
            weak_drop_mention: Some(3),
            duration_ratio: 0.75,
            embedding_dim: 16,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("{0}")]
    Invalid(String),
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Invalid(m.to_owned()));
        if self.glosses == 0 || self.mentions == 0 {
            return bad("glosses and mentions must be positive");
        }
        if !(0.0..1.0).contains(&self.reduction_rate) {
            return bad("reduction_rate must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.entrain_coupling) {
            return bad("entrain_coupling must lie in [0, 1]");
        }
        if !(self.duration_ratio > 0.0 && self.duration_ratio <= 1.0) {
            return bad("duration_ratio must lie in (0, 1]");
        }
        if let Some(m) = self.weak_drop_mention {
            if m == 0 || m as usize > self.mentions {
                return bad("weak_drop_mention must be a mention index of the session");
            }
        }
        if self.embedding_dim < 2 {
            return bad("embedding_dim must be at least 2");
        }
        Ok(())
    }

    pub fn gloss_name(&self, g: usize) -> String {
        format!("G{:02}", g + 1)
    }

    /// Citation-form duration of gloss `g`.
    pub fn vocab_duration_ms(&self, g: usize) -> f64 {
        VOCAB_DURATIONS_MS[g % VOCAB_DURATIONS_MS.len()]
    }

    /// Dialogue duration of gloss `g`, rounded to whole frames.
    pub fn dialogue_duration_ms(&self, g: usize) -> f64 {
        ((self.vocab_duration_ms(g) * self.duration_ratio / FRAME_MS).round() * FRAME_MS).max(2.0 * FRAME_MS)
    }

    /// Amplitude multiplier at a 1-based mention.
    pub fn amplitude_factor(&self, mention: u32) -> f64 {
        (1.0 - self.reduction_rate).powi(mention as i32 - 1)
    }

    fn weak_dropped(&self, mention: u32) -> bool {
        self.weak_drop_mention.is_some_and(|m| mention >= m)
    }
}

impl fmt::Display for SynthSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "glosses={} mentions={} reduction_rate={} entrain_coupling={} weak_drop_mention={} duration_ratio={} embedding_dim={} seed={}",
            self.glosses,
            self.mentions,
            self.reduction_rate,
            self.entrain_coupling,
            self.weak_drop_mention.map_or("none".to_owned(), |m| m.to_string()),
            self.duration_ratio,
            self.embedding_dim,
            self.seed
        )
    }
}

/// One signer's recording of one session.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub signer: String,
    pub session: String,
    pub condition: Condition,
    pub sequence: KeypointSequence,
}

/// Expected group metrics of one token.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRow {
    pub signer: String,
    pub session: String,
    pub condition: Condition,
    pub gloss: String,
    pub mention_index: u32,
    pub start_ms: f64,
    pub end_ms: f64,
    pub group: JointGroup,
    pub spatial_extent: f64,
    pub path_length: f64,
    pub avg_velocity: f64,
    pub duration_s: f64,
    pub mean_vertical: f64,
}

pub const TRUTH_HEADER: &str = "signer,session,condition,gloss,mention_index,start_ms,end_ms,group,spatial_extent,path_length,avg_velocity,duration_s,mean_vertical";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSession {
    pub spec: SynthSpec,
    pub recordings: Vec<Recording>,
    pub annotations: Vec<SignInstance>,
    pub embeddings: Vec<EmbeddingToken>,
    pub truth: Vec<TruthRow>,
}

struct Token {
    gloss: usize,
    mention: u32,
    interval: Interval,
    amplitude_factor: f64,
    dropped: bool,
    slot_end_ms: f64,
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.1 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

struct Motion {
    amplitude: Vec<f64>,
    /// `[gloss][joint]`
    direction: Vec<Vec<Point3>>,
    /// `[signer][joint]`
    base: Vec<Vec<Point3>>,
}

fn draw_motion(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Motion {
    let amplitude = (0..spec.glosses).map(|_| rng.gen_range(0.08..0.3)).collect();
    let direction = (0..spec.glosses)
        .map(|_| {
            (0..JOINT_COUNT)
                .map(|_| {
                    let v = unit_vector(rng, 3);
                    [v[0], v[1], v[2]]
                })
                .collect()
        })
        .collect();
    let base = (0..2)
        .map(|_| {
            JointId::all()
                .map(|j| {
                    let side_x = match j.side() {
                        Side::Right => -0.25,
                        Side::Left => 0.25,
                    };
                    [side_x + rng.gen_range(-0.1..0.1), 1.2 + rng.gen_range(-0.2..0.2), 0.3 + rng.gen_range(-0.1..0.1)]
                })
                .collect()
        })
        .collect();
    Motion { amplitude, direction, base }
}

/// Fraction of the stroke covered at `t`: rises over the token, then
/// falls back to rest by the end of the token's slot.
fn stroke(tok: &Token, t: f64) -> f64 {
    let (start, end) = (tok.interval.start_ms(), tok.interval.end_ms());
    if t <= end {
        let u = (t - start) / (end - start);
        (1.0 - (std::f64::consts::PI * u).cos()) / 2.0
    } else {
        let v = (t - end) / (tok.slot_end_ms - end);
        (1.0 + (std::f64::consts::PI * v).cos()) / 2.0
    }
}

fn position(motion: &Motion, signer: usize, joint: usize, token: Option<(&Token, f64)>) -> Point3 {
    let base = motion.base[signer][joint];
    let Some((tok, t)) = token else { return base };
    if tok.dropped && JointId::from_index(joint).expect("joint index").side() == Side::Left {
        return if t <= tok.interval.end_ms() { [0.0; 3] } else { base };
    }
    let s = stroke(tok, t);
    let a = motion.amplitude[tok.gloss] * tok.amplitude_factor;
    let d = motion.direction[tok.gloss][joint];
    [base[0] + a * d[0] * s, base[1] + a * d[1] * s, base[2] + a * d[2] * s]
}

fn render(motion: &Motion, signer: usize, name: &str, session: &str, tokens: &[Token], slots: usize) -> KeypointSequence {
    let total_frames = (slots as f64 * SLOT_MS / FRAME_MS) as usize;
    let mut frames = Vec::with_capacity(total_frames + 1);
    let mut current = 0usize;
    for i in 0..=total_frames {
        let t = i as f64 * FRAME_MS;
        while current < tokens.len() && tokens[current].slot_end_ms < t {
            current += 1;
        }
        let active = tokens.get(current).filter(|tok| tok.interval.start_ms() <= t).map(|tok| (tok, t));
        let mut frame = Frame::new(t);
        for j in JointId::all() {
            let p = position(motion, signer, j.index(), active);
            frame.set(j, Keypoint::new3(p[0], p[1], p[2]));
        }
        frames.push(frame);
    }
    let mut meta = SequenceMeta::new(FRAME_RATE, SourceKind::Mocap3d);
    meta.unit_label = "m".to_owned();
    meta.signer = Some(name.to_owned());
    meta.session = Some(session.to_owned());
    KeypointSequence::new(meta, frames).expect("generated frames are valid")
}

fn truth_rows(motion: &Motion, signer: usize, name: &str, session: &str, condition: Condition, tokens: &[Token], spec: &SynthSpec) -> Vec<TruthRow> {
    let mut rows = Vec::new();
    for tok in tokens {
        for group in JointGroup::TABLE_ORDER {
            let members = group.members();
            let n = members.len() as f64;
            let (mut extent, mut vertical) = (0.0, 0.0);
            for j in &members {
                if tok.dropped && group.side == Side::Left {
                    continue;
                }
                let a = motion.amplitude[tok.gloss] * tok.amplitude_factor;
                extent += a;
                vertical += motion.base[signer][j.index()][1] + a * motion.direction[tok.gloss][j.index()][1] / 2.0;
            }
            let duration_s = tok.interval.duration_s();
            rows.push(TruthRow {
                signer: name.to_owned(),
                session: session.to_owned(),
                condition,
                gloss: spec.gloss_name(tok.gloss),
                mention_index: tok.mention,
                start_ms: tok.interval.start_ms(),
                end_ms: tok.interval.end_ms(),
                group,
                spatial_extent: extent / n,
                path_length: extent / n,
                avg_velocity: extent / n / duration_s,
                duration_s,
                mean_vertical: vertical / n,
            });
        }
    }
    rows
}

fn slot_interval(slot: usize, duration_ms: f64) -> Interval {
    let start = slot as f64 * SLOT_MS + LEAD_MS;
    Interval::new(start, start + duration_ms).expect("positive duration")
}

fn slot_end(slot: usize) -> f64 {
    (slot + 1) as f64 * SLOT_MS
}

/// Build both signers' dialogue and citation recordings for `spec`.
///
/// Dialogue slots run mention-major: every gloss's first mention, then
/// every second mention, and so on.
pub fn generate_session(spec: &SynthSpec) -> Result<SynthSession, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let motion = draw_motion(spec, &mut rng);

    let dialogue: Vec<Token> = (0..spec.mentions)
        .flat_map(|k| (0..spec.glosses).map(move |g| (k, g)))
        .enumerate()
        .map(|(slot, (k, g))| {
            let mention = k as u32 + 1;
            Token {
                gloss: g,
                mention,
                interval: slot_interval(slot, spec.dialogue_duration_ms(g)),
                amplitude_factor: spec.amplitude_factor(mention),
                dropped: spec.weak_dropped(mention),
                slot_end_ms: slot_end(slot),
            }
        })
        .collect();
    let vocab: Vec<Token> = (0..spec.glosses)
        .map(|g| Token {
            gloss: g,
            mention: 1,
            interval: slot_interval(g, spec.vocab_duration_ms(g)),
            amplitude_factor: 1.0,
            dropped: false,
            slot_end_ms: slot_end(g),
        })
        .collect();

    let mut recordings = Vec::new();
    let mut annotations = Vec::new();
    let mut truth = Vec::new();
    for (s, name) in [SIGNER_A, SIGNER_B].into_iter().enumerate() {
        for (session, condition, tokens, slots) in [
            (DIALOGUE_SESSION, Condition::Dialogue, &dialogue, spec.glosses * spec.mentions),
            (VOCAB_SESSION, Condition::Vocabulary, &vocab, spec.glosses),
        ] {
            recordings.push(Recording {
                signer: name.to_owned(),
                session: session.to_owned(),
                condition,
                sequence: render(&motion, s, name, session, tokens, slots),
            });
            annotations.extend(tokens.iter().map(|tok| SignInstance {
                gloss: spec.gloss_name(tok.gloss),
                variation: spec.gloss_name(tok.gloss),
                signer: name.to_owned(),
                interval: tok.interval,
                condition,
                session: session.to_owned(),
            }));
            truth.extend(truth_rows(&motion, s, name, session, condition, tokens, spec));
        }
    }

    let mut embeddings = Vec::new();
    for g in 0..spec.glosses {
        let target = unit_vector(&mut rng, spec.embedding_dim);
        let mut b = unit_vector(&mut rng, spec.embedding_dim);
        let gloss_tokens: Vec<&Token> = dialogue.iter().filter(|t| t.gloss == g).collect();
        for tok in gloss_tokens {
            if tok.mention > 1 {
                b = normalized(b.iter().zip(&target).map(|(bi, ai)| bi + spec.entrain_coupling * (ai - bi)).collect());
            }
            for (signer, vector) in [(SIGNER_A, target.clone()), (SIGNER_B, b.clone())] {
                embeddings.push(EmbeddingToken {
                    gloss: spec.gloss_name(g),
                    signer: signer.to_owned(),
                    mention_index: tok.mention,
                    interval: tok.interval,
                    vector,
                });
            }
        }
    }
    embeddings.sort_by(|x, y| (&x.signer, &x.gloss, x.mention_index).cmp(&(&y.signer, &y.gloss, y.mention_index)));

    Ok(SynthSession { spec: spec.clone(), recordings, annotations, embeddings, truth })
}

pub fn write_truth<W: std::io::Write>(rows: &[TruthRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{TRUTH_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.signer,
            r.session,
            r.condition,
            r.gloss,
            r.mention_index,
            r.start_ms,
            r.end_ms,
            r.group.label(),
            r.spatial_extent,
            r.path_length,
            r.avg_velocity,
            r.duration_s,
            r.mean_vertical
        )?;
    }
    Ok(())
}
