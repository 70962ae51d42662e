//! Continuous sign spotting: slide fixed windows over a recording, rank
//! them by cosine similarity to a query embedding and score the ranking
//! against the query gloss's annotated intervals.

use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::entrain::cosine;
use crate::interval::Interval;
use crate::kinemetrics::{fill_gaps, Point3};
use crate::skeleton::{GroupKind, JointGroup, JointId, KeypointSequence, Side};

pub const DEFAULT_WINDOW_MS: f64 = 500.0;
pub const DEFAULT_STRIDE_MS: f64 = 500.0;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.3;
pub const DEFAULT_KS: [usize; 2] = [10, 50];
pub const DEFAULT_RESAMPLE: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpotError {
    #[error("recording of {total_ms} ms is shorter than one {width_ms} ms window")]
    EmptyCorpus { total_ms: f64, width_ms: f64 },
    #[error("window width and stride must be positive and finite")]
    BadWindowParams,
    #[error("no windows to rank")]
    NoWindows,
    #[error("no queries")]
    NoQueries,
    #[error("query embedding has dimension {query}, windows have {window}")]
    DimensionMismatch { query: usize, window: usize },
    #[error("query embedding is a zero vector")]
    ZeroQuery,
    #[error("no frames inside {0}")]
    EmptySlice(Interval),
    #[error("k must be positive")]
    ZeroK,
}

/// Fixed-width spans starting at `0, stride, 2*stride, ...`; a trailing
/// partial span is dropped.
pub fn make_windows(total_ms: f64, width_ms: f64, stride_ms: f64) -> Result<Vec<Interval>, SpotError> {
    let ok = |v: f64| v.is_finite() && v > 0.0;
    if !ok(width_ms) || !ok(stride_ms) || !total_ms.is_finite() {
        return Err(SpotError::BadWindowParams);
    }
    if total_ms < width_ms {
        return Err(SpotError::EmptyCorpus { total_ms, width_ms });
    }
    let count = ((total_ms - width_ms) / stride_ms).floor() as usize + 1;
    Ok((0..count)
        .map(|i| {
            let start = i as f64 * stride_ms;
            Interval::new(start, start + width_ms).expect("positive width")
        })
        .collect())
}

/// Temporal intersection over union; 0 for disjoint spans.
pub fn interval_iou(a: &Interval, b: &Interval) -> f64 {
    let inter = a.intersection_ms(b);
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.length_ms() + b.length_ms() - inter)
}

/// Parameters of the kinematic baseline embedder.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedParams {
    pub resample: usize,
    pub joints: Vec<JointId>,
    pub confidence_floor: f64,
}

impl Default for EmbedParams {
    fn default() -> Self {
        let joints = [Side::Left, Side::Right]
            .into_iter()
            .flat_map(|side| {
                [GroupKind::Hand, GroupKind::Fingers].into_iter().flat_map(move |kind| JointGroup::new(kind, side).members())
            })
            .collect();
        EmbedParams { resample: DEFAULT_RESAMPLE, joints, confidence_floor: 0.5 }
    }
}

/// Output of the kinematic embedder.
#[derive(Debug, Clone, PartialEq)]
pub enum Embedding {
    Vector(Vec<f64>),
    /// Nothing moved inside the span; such windows are never ranked.
    Stationary,
}

impl Embedding {
    pub fn vector(&self) -> Option<&[f64]> {
        match self {
            Embedding::Vector(v) => Some(v),
            Embedding::Stationary => None,
        }
    }
}

fn lerp(a: Point3, b: Point3, w: f64) -> Point3 {
    [a[0] + (b[0] - a[0]) * w, a[1] + (b[1] - a[1]) * w, a[2] + (b[2] - a[2]) * w]
}

/// Linear resampling of `traj` (sampled at `times`) to `n` evenly spaced instants.
fn resample(times: &[f64], traj: &[Point3], n: usize) -> Vec<Point3> {
    let (t0, t1) = (times[0], times[times.len() - 1]);
    (0..n)
        .map(|j| {
            let t = if n == 1 { t0 } else { t0 + (t1 - t0) * j as f64 / (n - 1) as f64 };
            let hi = times.partition_point(|&x| x < t).min(times.len() - 1);
            if hi == 0 || times[hi] == t {
                return traj[hi];
            }
            let lo = hi - 1;
            lerp(traj[lo], traj[hi], (t - times[lo]) / (times[hi] - times[lo]))
        })
        .collect()
}

/// Deterministic motion descriptor of `seq` over `interval`.
///
/// Each selected joint is resampled to `params.resample` instants and
/// expressed relative to its first position; the concatenation is
/// scaled to unit length. Joints absent from the span contribute zeros.
pub fn kinematic_embed(seq: &KeypointSequence, interval: &Interval, params: &EmbedParams) -> Result<Embedding, SpotError> {
    let slice = seq.slice(interval);
    if slice.is_empty() {
        return Err(SpotError::EmptySlice(*interval));
    }
    let times: Vec<f64> = slice.frames().iter().map(|f| f.time_ms).collect();
    let n = params.resample.max(1);
    let mut out = Vec::with_capacity(params.joints.len() * n * 3);
    for &joint in &params.joints {
        let samples: Vec<Option<Point3>> = slice
            .frames()
            .iter()
            .map(|f| {
                f.get(joint)
                    .filter(|kp| kp.confidence.is_none_or(|c| c >= params.confidence_floor))
                    .map(|kp| kp.position())
            })
            .collect();
        match fill_gaps(&times, &samples) {
            Some(traj) => {
                let pts = resample(&times, &traj, n);
                let origin = pts[0];
                for p in pts {
                    out.extend([p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]]);
                }
            }
            None => out.extend(std::iter::repeat_n(0.0, n * 3)),
        }
    }
    let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Ok(Embedding::Stationary);
    }
    out.iter_mut().for_each(|v| *v /= norm);
    Ok(Embedding::Vector(out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub interval: Interval,
    pub embedding: Embedding,
}

/// Slide windows over the whole recording and embed each one.
pub fn embed_windows(seq: &KeypointSequence, width_ms: f64, stride_ms: f64, params: &EmbedParams) -> Result<Vec<Window>, SpotError> {
    let total = seq.last_time_ms().unwrap_or(0.0);
    let spans = make_windows(total, width_ms, stride_ms)?;
    spans
        .into_par_iter()
        .map(|interval| {
            let embedding = match kinematic_embed(seq, &interval, params) {
                Ok(e) => e,
                Err(SpotError::EmptySlice(_)) => Embedding::Stationary,
                Err(e) => return Err(e),
            };
            Ok(Window { interval, embedding })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreParams {
    pub ks: Vec<usize>,
    pub iou_threshold: f64,
}

impl Default for ScoreParams {
    fn default() -> Self {
        ScoreParams { ks: DEFAULT_KS.to_vec(), iou_threshold: DEFAULT_IOU_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedWindow {
    /// 1-based.
    pub rank: usize,
    pub interval: Interval,
    pub similarity: f64,
    pub best_iou: f64,
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KScore {
    pub k: usize,
    /// Matched windows among the top `k`, divided by `k`.
    pub recall: f64,
    /// Truth intervals hit by some top-`k` window, divided by the truth count.
    pub truth_recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryScore {
    pub ranked: Vec<RankedWindow>,
    pub at_k: Vec<KScore>,
    /// Mean of `1/rank` over matched windows; 0 when none match.
    pub mrr: f64,
    pub truth_count: usize,
}

impl QueryScore {
    pub fn matched(&self) -> impl Iterator<Item = &RankedWindow> {
        self.ranked.iter().filter(|r| r.matched)
    }

    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.at_k.iter().find(|s| s.k == k).map(|s| s.recall)
    }
}

/// Rank windows by cosine to `query` and score them against `truth`.
///
/// Ties in similarity go to the earlier window. Stationary windows are
/// left out of the ranking.
pub fn rank_and_score(query: &[f64], windows: &[Window], truth: &[Interval], params: &ScoreParams) -> Result<QueryScore, SpotError> {
    if windows.is_empty() {
        return Err(SpotError::NoWindows);
    }
    if params.ks.contains(&0) {
        return Err(SpotError::ZeroK);
    }
    if query.iter().all(|&v| v == 0.0) {
        return Err(SpotError::ZeroQuery);
    }
    let mut scored = Vec::with_capacity(windows.len());
    for w in windows {
        let Some(v) = w.embedding.vector() else { continue };
        if v.len() != query.len() {
            return Err(SpotError::DimensionMismatch { query: query.len(), window: v.len() });
        }
        let sim = cosine(query, v).unwrap_or(0.0);
        scored.push((w.interval, sim));
    }
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.start_ms().total_cmp(&b.0.start_ms())));

    let ranked: Vec<RankedWindow> = scored
        .into_iter()
        .enumerate()
        .map(|(i, (interval, similarity))| {
            let best_iou = truth.iter().map(|t| interval_iou(&interval, t)).fold(0.0, f64::max);
            RankedWindow { rank: i + 1, interval, similarity, best_iou, matched: best_iou >= params.iou_threshold }
        })
        .collect();

    let at_k = params
        .ks
        .iter()
        .map(|&k| {
            let top = &ranked[..k.min(ranked.len())];
            let hits = top.iter().filter(|r| r.matched).count();
            let found = truth
                .iter()
                .filter(|t| top.iter().any(|r| interval_iou(&r.interval, t) >= params.iou_threshold))
                .count();
            KScore {
                k,
                recall: hits as f64 / k as f64,
                truth_recall: if truth.is_empty() { 0.0 } else { found as f64 / truth.len() as f64 },
            }
        })
        .collect();

    let reciprocal: Vec<f64> = ranked.iter().filter(|r| r.matched).map(|r| 1.0 / r.rank as f64).collect();
    let mrr = if reciprocal.is_empty() { 0.0 } else { reciprocal.iter().sum::<f64>() / reciprocal.len() as f64 };
    Ok(QueryScore { ranked, at_k, mrr, truth_count: truth.len() })
}

/// How per-window reciprocal ranks are combined across queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MrrPooling {
    /// Average each query's MRR.
    #[default]
    PerQuery,
    /// Average `1/rank` over every matched window of every query.
    Pooled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryReport {
    pub gloss: String,
    pub signer: String,
    pub score: QueryScore,
}

/// One row of the retrieval table.
#[derive(Debug, Clone, PartialEq)]
pub struct SpottingRow {
    pub input: String,
    pub model: String,
    pub queries: usize,
    pub mrr: f64,
    /// Mean recall per k, in the order of the score parameters.
    pub recall: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpottingReport {
    pub input: String,
    pub model: String,
    pub queries: Vec<QueryReport>,
}

impl SpottingReport {
    pub fn summary(&self, pooling: MrrPooling) -> Result<SpottingRow, SpotError> {
        if self.queries.is_empty() {
            return Err(SpotError::NoQueries);
        }
        let n = self.queries.len() as f64;
        let mrr = match pooling {
            MrrPooling::PerQuery => self.queries.iter().map(|q| q.score.mrr).sum::<f64>() / n,
            MrrPooling::Pooled => {
                let rr: Vec<f64> =
                    self.queries.iter().flat_map(|q| q.score.matched().map(|r| 1.0 / r.rank as f64)).collect();
                if rr.is_empty() {
                    0.0
                } else {
                    rr.iter().sum::<f64>() / rr.len() as f64
                }
            }
        };
        let ks: Vec<usize> = self.queries[0].score.at_k.iter().map(|s| s.k).collect();
        let recall = ks
            .iter()
            .map(|&k| (k, self.queries.iter().map(|q| q.score.recall_at(k).unwrap_or(0.0)).sum::<f64>() / n))
            .collect();
        Ok(SpottingRow { input: self.input.clone(), model: self.model.clone(), queries: self.queries.len(), mrr, recall })
    }
}

pub fn write_spotting_table<W: Write>(rows: &[SpottingRow], ks: &[usize], mut w: W) -> io::Result<()> {
    write!(w, "input,model,mrr")?;
    for k in ks {
        write!(w, ",r@{k}")?;
    }
    writeln!(w)?;
    for row in rows {
        write!(w, "{},{},{:.4}", row.input, row.model, row.mrr)?;
        for k in ks {
            let v = row.recall.iter().find(|(rk, _)| rk == k).map_or(f64::NAN, |(_, v)| *v);
            write!(w, ",{v:.4}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Per-query scores, with the conventional recall alongside the top-k ratio.
pub fn write_query_scores<W: Write>(report: &SpottingReport, mut w: W) -> io::Result<()> {
    let ks: Vec<usize> = report.queries.first().map(|q| q.score.at_k.iter().map(|s| s.k).collect()).unwrap_or_default();
    write!(w, "input,model,gloss,signer,truths,matched,mrr")?;
    for k in &ks {
        write!(w, ",r@{k}")?;
    }
    for k in &ks {
        write!(w, ",truth_recall@{k}")?;
    }
    writeln!(w)?;
    for q in &report.queries {
        write!(
            w,
            "{},{},{},{},{},{},{}",
            report.input,
            report.model,
            q.gloss,
            q.signer,
            q.score.truth_count,
            q.score.matched().count(),
            q.score.mrr
        )?;
        for s in &q.score.at_k {
            write!(w, ",{}", s.recall)?;
        }
        for s in &q.score.at_k {
            write!(w, ",{}", s.truth_recall)?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Full rankings, one row per (query, window).
pub fn write_rankings<W: Write>(report: &SpottingReport, mut w: W) -> io::Result<()> {
    writeln!(w, "gloss,signer,rank,start_ms,end_ms,similarity,best_iou,matched")?;
    for q in &report.queries {
        for r in &q.score.ranked {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                q.gloss,
                q.signer,
                r.rank,
                r.interval.start_ms(),
                r.interval.end_ms(),
                r.similarity,
                r.best_iou,
                u8::from(r.matched)
            )?;
        }
    }
    Ok(())
}
