//! Embedding-based entrainment between two signers.
//!
//! Tokens are externally produced sign embeddings, one per production.
//! For each gloss both signers repeat, the report contrasts first and last
//! productions across signers, tracks each signer's similarity to the
//! other's first production, measures within-signer stability, and places
//! every token on the axis joining the two signers' mean embeddings.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::interval::Interval;
use crate::stats::ls_slope;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EntrainError {
    #[error("no vectors to pool")]
    Empty,
    #[error("vector dimension {found} differs from {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("mean vector is zero; cannot normalize")]
    ZeroMean,
    #[error("cosine undefined for a zero vector")]
    ZeroVector,
    #[error("need at least {needed} tokens for signer {signer}, got {got}")]
    InsufficientTokens { signer: String, needed: usize, got: usize },
    #[error("signer means coincide; projection axis undefined")]
    DegenerateAxis,
}

/// One production's embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingToken {
    pub gloss: String,
    pub signer: String,
    pub mention_index: u32,
    pub interval: Interval,
    pub vector: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_dim(a: &[f64], b: &[f64]) -> Result<(), EntrainError> {
    if a.len() == b.len() {
        Ok(())
    } else {
        Err(EntrainError::DimensionMismatch { expected: a.len(), found: b.len() })
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, EntrainError> {
    check_dim(a, b)?;
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(EntrainError::ZeroVector);
    }
    Ok(dot(a, b) / (na * nb))
}

/// Mean of the frame vectors, scaled to unit length.
pub fn pool_normalize(frames: &[Vec<f64>]) -> Result<Vec<f64>, EntrainError> {
    let first = frames.first().ok_or(EntrainError::Empty)?;
    let mut mean = vec![0.0; first.len()];
    for f in frames {
        check_dim(first, f)?;
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    let n = norm(&mean);
    if n == 0.0 || !n.is_finite() {
        return Err(EntrainError::ZeroMean);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

/// Which reading of the first-versus-last contrast to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DeltaCosMode {
    /// `cos(last_a, last_b) - cos(first_a, first_b)`.
    #[default]
    CrossSigner,
    /// `cos(first_a, last_a) - cos(first_a, first_a)`; never positive.
    Literal,
}

fn require(tokens: &[Vec<f64>], needed: usize, signer: &str) -> Result<(), EntrainError> {
    if tokens.len() < needed {
        Err(EntrainError::InsufficientTokens { signer: signer.to_owned(), needed, got: tokens.len() })
    } else {
        Ok(())
    }
}

/// Change in cross-signer similarity from the first to the last production.
///
/// Both sequences are in mention order and need at least two tokens.
pub fn delta_cos(tokens_a: &[Vec<f64>], tokens_b: &[Vec<f64>], mode: DeltaCosMode) -> Result<f64, EntrainError> {
    require(tokens_a, 2, "A")?;
    require(tokens_b, 2, "B")?;
    let (first_a, last_a) = (&tokens_a[0], &tokens_a[tokens_a.len() - 1]);
    match mode {
        DeltaCosMode::CrossSigner => {
            let (first_b, last_b) = (&tokens_b[0], &tokens_b[tokens_b.len() - 1]);
            Ok(cosine(last_a, last_b)? - cosine(first_a, first_b)?)
        }
        DeltaCosMode::Literal => Ok(cosine(first_a, last_a)? - cosine(first_a, first_a)?),
    }
}

/// Least-squares slope of `cos(a_i, b_1)` over `i = 1..T_a`.
pub fn cross_slope(tokens_a: &[Vec<f64>], tokens_b: &[Vec<f64>]) -> Result<f64, EntrainError> {
    require(tokens_a, 2, "A")?;
    require(tokens_b, 1, "B")?;
    let anchor = &tokens_b[0];
    let ys = tokens_a.iter().map(|a| cosine(a, anchor)).collect::<Result<Vec<_>, _>>()?;
    let xs: Vec<f64> = (1..=ys.len()).map(|i| i as f64).collect();
    Ok(ls_slope(&xs, &ys).expect("at least two distinct x values"))
}

/// Cosine between a signer's first and last production.
pub fn self_similarity(tokens: &[Vec<f64>]) -> Result<f64, EntrainError> {
    require(tokens, 2, "self")?;
    cosine(&tokens[0], &tokens[tokens.len() - 1])
}

/// Position of `x` on the axis from `mu_a` (-1) to `mu_b` (+1).
///
/// Points beyond either mean fall outside `[-1, 1]`.
pub fn projection_similarity(x: &[f64], mu_a: &[f64], mu_b: &[f64]) -> Result<f64, EntrainError> {
    check_dim(mu_a, x)?;
    check_dim(mu_a, mu_b)?;
    let axis: Vec<f64> = mu_b.iter().zip(mu_a).map(|(b, a)| b - a).collect();
    let len2 = dot(&axis, &axis);
    if len2 == 0.0 {
        return Err(EntrainError::DegenerateAxis);
    }
    let offset: Vec<f64> = x.iter().zip(mu_a).map(|(x, a)| x - a).collect();
    Ok(2.0 * dot(&offset, &axis) / len2 - 1.0)
}

fn mean_vector(vectors: &[&Vec<f64>]) -> Vec<f64> {
    let mut mean = vec![0.0; vectors[0].len()];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v.iter()) {
            *m += x;
        }
    }
    let n = vectors.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Which tokens a signer's mean embedding is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MeanScope {
    /// The signer's tokens of the gloss being analysed.
    #[default]
    PerGloss,
    /// All of the signer's tokens.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EntrainConfig {
    pub delta_mode: DeltaCosMode,
    pub mean_scope: MeanScope,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionPoint {
    pub signer: String,
    pub mention_index: u32,
    pub sim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlossEntrainment {
    pub gloss: String,
    pub tokens_a: usize,
    pub tokens_b: usize,
    pub delta_cos: f64,
    pub slope_a_to_b: f64,
    pub slope_b_to_a: f64,
    pub selfsim_a: f64,
    pub selfsim_b: f64,
    /// Empty when the two means coincide.
    pub projection: Vec<ProjectionPoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntrainmentReport {
    /// Signer whose mean sits at -1 on the projection axis.
    pub signer_a: String,
    /// Signer whose mean sits at +1.
    pub signer_b: String,
    pub glosses: Vec<GlossEntrainment>,
    /// Glosses skipped because a signer had fewer than two tokens.
    pub skipped: Vec<String>,
}

/// Entrainment metrics for every gloss both signers produce at least twice.
pub fn entrainment_report(
    tokens: &[EmbeddingToken],
    signer_a: &str,
    signer_b: &str,
    config: &EntrainConfig,
) -> Result<EntrainmentReport, EntrainError> {
    if let Some(first) = tokens.first() {
        for t in tokens {
            check_dim(&first.vector, &t.vector)?;
        }
    }
    let mut by_gloss: BTreeMap<&str, (Vec<&EmbeddingToken>, Vec<&EmbeddingToken>)> = BTreeMap::new();
    for t in tokens {
        let entry = by_gloss.entry(&t.gloss).or_default();
        if t.signer == signer_a {
            entry.0.push(t);
        } else if t.signer == signer_b {
            entry.1.push(t);
        }
    }
    let global_mean = |signer: &str| {
        let vs: Vec<&Vec<f64>> = tokens.iter().filter(|t| t.signer == signer).map(|t| &t.vector).collect();
        (!vs.is_empty()).then(|| mean_vector(&vs))
    };
    let globals = (global_mean(signer_a), global_mean(signer_b));

    let mut glosses = Vec::new();
    let mut skipped = Vec::new();
    for (gloss, (mut a, mut b)) in by_gloss {
        if a.len() < 2 || b.len() < 2 {
            skipped.push(gloss.to_owned());
            continue;
        }
        a.sort_by_key(|t| t.mention_index);
        b.sort_by_key(|t| t.mention_index);
        let va: Vec<Vec<f64>> = a.iter().map(|t| t.vector.clone()).collect();
        let vb: Vec<Vec<f64>> = b.iter().map(|t| t.vector.clone()).collect();

        let (mu_a, mu_b) = match config.mean_scope {
            MeanScope::PerGloss => (mean_vector(&va.iter().collect::<Vec<_>>()), mean_vector(&vb.iter().collect::<Vec<_>>())),
            MeanScope::Global => (
                globals.0.clone().expect("signer has tokens"),
                globals.1.clone().expect("signer has tokens"),
            ),
        };
        let projection = a
            .iter()
            .chain(b.iter())
            .map(|t| {
                projection_similarity(&t.vector, &mu_a, &mu_b).map(|sim| ProjectionPoint {
                    signer: t.signer.clone(),
                    mention_index: t.mention_index,
                    sim,
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .or_else(|e| if e == EntrainError::DegenerateAxis { Ok(Vec::new()) } else { Err(e) })?;

        glosses.push(GlossEntrainment {
            gloss: gloss.to_owned(),
            tokens_a: va.len(),
            tokens_b: vb.len(),
            delta_cos: delta_cos(&va, &vb, config.delta_mode)?,
            slope_a_to_b: cross_slope(&va, &vb)?,
            slope_b_to_a: cross_slope(&vb, &va)?,
            selfsim_a: self_similarity(&va)?,
            selfsim_b: self_similarity(&vb)?,
            projection,
        });
    }
    Ok(EntrainmentReport { signer_a: signer_a.to_owned(), signer_b: signer_b.to_owned(), glosses, skipped })
}

pub const ENTRAINMENT_HEADER: &str =
    "gloss,signer_a,signer_b,tokens_a,tokens_b,delta_cos,slope_a_to_b,slope_b_to_a,selfsim_a,selfsim_b";
pub const PROJECTION_HEADER: &str = "gloss,signer,mention_index,sim";

pub fn write_entrainment<W: Write>(report: &EntrainmentReport, mut w: W) -> io::Result<()> {
    writeln!(w, "{ENTRAINMENT_HEADER}")?;
    for g in &report.glosses {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            g.gloss,
            report.signer_a,
            report.signer_b,
            g.tokens_a,
            g.tokens_b,
            g.delta_cos,
            g.slope_a_to_b,
            g.slope_b_to_a,
            g.selfsim_a,
            g.selfsim_b
        )?;
    }
    Ok(())
}

pub fn write_projection<W: Write>(report: &EntrainmentReport, mut w: W) -> io::Result<()> {
    writeln!(w, "{PROJECTION_HEADER}")?;
    for g in &report.glosses {
        for p in &g.projection {
            writeln!(w, "{},{},{},{}", g.gloss, p.signer, p.mention_index, p.sim)?;
        }
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum EmbeddingFileError {
    #[error("read failed: {0}")]
    Io(#[from] io::Error),
    #[error("missing `#dim=<d>` header")]
    MissingDim,
    #[error("line {line}: {reason}")]
    Row { line: usize, reason: String },
}

impl EmbeddingFileError {
    pub fn line(&self) -> Option<usize> {
        match self {
            EmbeddingFileError::Row { line, .. } => Some(*line),
            _ => None,
        }
    }
}

/// Parse `#dim=<d>` then `gloss,signer,mention_index,start_ms,end_ms,v1,...,vd` rows.
pub fn parse_embedding_tokens<R: BufRead>(reader: R) -> Result<(usize, Vec<EmbeddingToken>), EmbeddingFileError> {
    let mut dim = None;
    let mut tokens = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: String| EmbeddingFileError::Row { line: line_no, reason };
        if let Some(header) = line.strip_prefix('#') {
            if let Some(("dim", value)) = header.split_once('=') {
                let d: usize = value.trim().parse().map_err(|_| err(format!("bad dim `{value}`")))?;
                if d == 0 {
                    return Err(err("dim must be positive".into()));
                }
                dim = Some(d);
            }
            continue;
        }
        let d = dim.ok_or(EmbeddingFileError::MissingDim)?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 + d {
            return Err(err(format!("expected {} fields for dim {d}, found {}", 5 + d, f.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| err(format!("bad number `{s}`")));
        let start = num(f[3])?;
        let end = num(f[4])?;
        let interval = Interval::new(start, end).map_err(|e| err(e.to_string()))?;
        let vector = f[5..].iter().map(|s| num(s)).collect::<Result<Vec<_>, _>>()?;
        tokens.push(EmbeddingToken {
            gloss: f[0].trim().to_owned(),
            signer: f[1].trim().to_owned(),
            mention_index: f[2].trim().parse().map_err(|_| err(format!("bad mention index `{}`", f[2])))?,
            interval,
            vector,
        });
    }
    Ok((dim.ok_or(EmbeddingFileError::MissingDim)?, tokens))
}

pub fn write_embedding_tokens<W: Write>(tokens: &[EmbeddingToken], dim: usize, mut w: W) -> io::Result<()> {
    writeln!(w, "#dim={dim}")?;
    for t in tokens {
        write!(w, "{},{},{},{},{}", t.gloss, t.signer, t.mention_index, t.interval.start_ms(), t.interval.end_ms())?;
        for v in &t.vector {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
