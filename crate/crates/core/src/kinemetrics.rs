//! Articulatory metrics for one sign token over one joint group.
//!
//! All five metrics are computed on the frames inside the token's interval:
//! bounding-box diagonal (spatial extent), polyline length (path length),
//! path length over duration (average velocity), interval length
//! (duration) and mean height (vertical position).

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::annotation::{Condition, SignInstance};
use crate::interval::Interval;
use crate::skeleton::{JointGroup, JointId, KeypointSequence, Side, UpAxis};

pub type Point3 = [f64; 3];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("metric undefined for an empty trajectory")]
    EmptyTrajectory,
    #[error("duration must be positive, got {0} s")]
    NonPositiveDuration(f64),
    #[error("interval {interval} not covered by keypoints spanning {first_ms}..{last_ms} ms")]
    NotCovered { interval: Interval, first_ms: f64, last_ms: f64 },
    #[error("no member joint of {group} has a usable frame in {interval}")]
    AllJointsAbsent { group: JointGroup, interval: Interval },
    #[error("joint {joint}: {gaps} of {frames} frames are gaps, above the {max_ratio} limit")]
    GapRatioExceeded { joint: JointId, gaps: usize, frames: usize, max_ratio: f64 },
}

fn distance(a: &Point3, b: &Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Diagonal of the axis-aligned bounding box of `traj`.
pub fn spatial_extent(traj: &[Point3]) -> Result<f64, MetricError> {
    let first = traj.first().ok_or(MetricError::EmptyTrajectory)?;
    let (lo, hi) = traj.iter().fold((*first, *first), |(mut lo, mut hi), p| {
        for d in 0..3 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
        (lo, hi)
    });
    Ok(distance(&lo, &hi))
}

/// Sum of distances between consecutive positions.
pub fn path_length(traj: &[Point3]) -> Result<f64, MetricError> {
    if traj.is_empty() {
        return Err(MetricError::EmptyTrajectory);
    }
    Ok(traj.windows(2).map(|w| distance(&w[0], &w[1])).sum())
}

pub fn average_velocity(traj: &[Point3], duration_s: f64) -> Result<f64, MetricError> {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(duration_s > 0.0) {
        return Err(MetricError::NonPositiveDuration(duration_s));
    }
    Ok(path_length(traj)? / duration_s)
}

/// Mean height, sign-corrected so that larger is higher.
pub fn mean_vertical(traj: &[Point3], up_axis: UpAxis) -> Result<f64, MetricError> {
    if traj.is_empty() {
        return Err(MetricError::EmptyTrajectory);
    }
    Ok(traj.iter().map(|p| up_axis.height(p)).sum::<f64>() / traj.len() as f64)
}

/// How group metrics combine member joints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Metrics per member joint, then the unweighted mean.
    #[default]
    PerJointMean,
    /// Metrics of the frame-wise mean position of the members.
    MeanTrajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricConfig {
    /// Keypoints below this confidence are treated as gaps.
    pub confidence_floor: f64,
    /// Tokens whose gap share exceeds this are rejected.
    pub max_gap_ratio: f64,
    pub aggregation: Aggregation,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self { confidence_floor: 0.5, max_gap_ratio: 0.25, aggregation: Aggregation::PerJointMean }
    }
}

/// Dominant hand per signer, right unless overridden.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HandDominance {
    overrides: BTreeMap<String, Side>,
}

impl HandDominance {
    pub fn set(&mut self, signer: impl Into<String>, side: Side) {
        self.overrides.insert(signer.into(), side);
    }

    pub fn side_for(&self, signer: &str) -> Side {
        self.overrides.get(signer).copied().unwrap_or(Side::Right)
    }

    /// Group whose vertical position measures sign lowering.
    pub fn lowering_group(&self, signer: &str) -> JointGroup {
        JointGroup::hand(self.side_for(signer))
    }

    pub fn overrides(&self) -> impl Iterator<Item = (&str, Side)> {
        self.overrides.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Linear fill of gaps by time; leading and trailing gaps take the nearest valid sample.
///
/// Returns `None` when no sample is valid.
pub fn fill_gaps(times: &[f64], samples: &[Option<Point3>]) -> Option<Vec<Point3>> {
    let valid: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].is_some()).collect();
    let (&first, &last) = (valid.first()?, valid.last()?);
    let mut out = Vec::with_capacity(samples.len());
    let mut next = 0;
    for i in 0..samples.len() {
        if let Some(p) = samples[i] {
            out.push(p);
            continue;
        }
        if i < first {
            out.push(samples[first].unwrap());
        } else if i > last {
            out.push(samples[last].unwrap());
        } else {
            while valid[next] < i {
                next += 1;
            }
            let (a, b) = (valid[next - 1], valid[next]);
            let (pa, pb) = (samples[a].unwrap(), samples[b].unwrap());
            let w = (times[i] - times[a]) / (times[b] - times[a]);
            out.push([0, 1, 2].map(|d| pa[d] + w * (pb[d] - pa[d])));
        }
    }
    Some(out)
}

/// A joint's gap-filled trajectory over the frames of `seq`.
///
/// `Ok(None)` means the joint never appears above the confidence floor.
pub fn joint_trajectory(seq: &KeypointSequence, joint: JointId, config: &MetricConfig) -> Result<Option<Vec<Point3>>, MetricError> {
    let frames = seq.frames();
    let times: Vec<f64> = frames.iter().map(|f| f.time_ms).collect();
    let samples: Vec<Option<Point3>> = frames
        .iter()
        .map(|f| {
            f.get(joint)
                .filter(|kp| kp.confidence.is_none_or(|c| c >= config.confidence_floor))
                .map(|kp| kp.position())
        })
        .collect();
    let gaps = samples.iter().filter(|s| s.is_none()).count();
    if gaps == samples.len() {
        return Ok(None);
    }
    if gaps as f64 > config.max_gap_ratio * samples.len() as f64 {
        return Err(MetricError::GapRatioExceeded {
            joint,
            gaps,
            frames: samples.len(),
            max_ratio: config.max_gap_ratio,
        });
    }
    Ok(fill_gaps(&times, &samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    SpatialExtent,
    PathLength,
    AvgVelocity,
    Duration,
    MeanVertical,
}

impl Metric {
    pub const ALL: [Metric; 5] =
        [Metric::SpatialExtent, Metric::PathLength, Metric::AvgVelocity, Metric::Duration, Metric::MeanVertical];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::SpatialExtent => "spatial_extent",
            Metric::PathLength => "path_length",
            Metric::AvgVelocity => "avg_velocity",
            Metric::Duration => "duration_s",
            Metric::MeanVertical => "mean_vertical",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| format!("unknown metric `{s}`"))
    }
}

/// The five metrics of one token over one joint group.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRecord {
    pub instance: SignInstance,
    pub mention_index: u32,
    pub group: JointGroup,
    pub spatial_extent: f64,
    pub path_length: f64,
    pub avg_velocity: f64,
    pub duration_s: f64,
    pub mean_vertical: f64,
}

impl MetricRecord {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::SpatialExtent => self.spatial_extent,
            Metric::PathLength => self.path_length,
            Metric::AvgVelocity => self.avg_velocity,
            Metric::Duration => self.duration_s,
            Metric::MeanVertical => self.mean_vertical,
        }
    }
}

struct JointMetrics {
    extent: f64,
    path: f64,
    vertical: f64,
}

fn trajectory_metrics(traj: &[Point3], up: UpAxis) -> Result<JointMetrics, MetricError> {
    Ok(JointMetrics {
        extent: spatial_extent(traj)?,
        path: path_length(traj)?,
        vertical: mean_vertical(traj, up)?,
    })
}

/// Metrics of `instance` over `group`, read from `seq`.
///
/// The sequence must span the interval to within one frame period at each end.
pub fn compute_record(
    seq: &KeypointSequence,
    instance: &SignInstance,
    mention_index: u32,
    group: JointGroup,
    config: &MetricConfig,
) -> Result<MetricRecord, MetricError> {
    let interval = instance.interval;
    let period = 1000.0 / seq.meta().frame_rate;
    let not_covered = || MetricError::NotCovered {
        interval,
        first_ms: seq.first_time_ms().unwrap_or(f64::NAN),
        last_ms: seq.last_time_ms().unwrap_or(f64::NAN),
    };
    let (first, last) = match (seq.first_time_ms(), seq.last_time_ms()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(not_covered()),
    };
    if first > interval.start_ms() + period || last < interval.end_ms() - period {
        return Err(not_covered());
    }
    let slice = seq.slice(&interval);
    if slice.is_empty() {
        return Err(not_covered());
    }

    let mut tracks = Vec::new();
    for joint in group.members() {
        if let Some(traj) = joint_trajectory(&slice, joint, config)? {
            tracks.push(traj);
        }
    }
    if tracks.is_empty() {
        return Err(MetricError::AllJointsAbsent { group, interval });
    }

    let up = seq.up_axis();
    let metrics = match config.aggregation {
        Aggregation::PerJointMean => {
            let per_joint = tracks.iter().map(|t| trajectory_metrics(t, up)).collect::<Result<Vec<_>, _>>()?;
            let n = per_joint.len() as f64;
            JointMetrics {
                extent: per_joint.iter().map(|m| m.extent).sum::<f64>() / n,
                path: per_joint.iter().map(|m| m.path).sum::<f64>() / n,
                vertical: per_joint.iter().map(|m| m.vertical).sum::<f64>() / n,
            }
        }
        Aggregation::MeanTrajectory => {
            let n = tracks.len() as f64;
            let mean: Vec<Point3> = (0..slice.len())
                .map(|i| [0, 1, 2].map(|d| tracks.iter().map(|t| t[i][d]).sum::<f64>() / n))
                .collect();
            trajectory_metrics(&mean, up)?
        }
    };

    let duration_s = interval.duration_s();
    Ok(MetricRecord {
        instance: instance.clone(),
        mention_index,
        group,
        spatial_extent: metrics.extent,
        path_length: metrics.path,
        avg_velocity: metrics.path / duration_s,
        duration_s,
        mean_vertical: metrics.vertical,
    })
}

pub const METRIC_TABLE_HEADER: &str =
    "gloss,variation,signer,condition,session,mention_index,group,spatial_extent,path_length,avg_velocity,duration_s,mean_vertical";

pub fn write_metric_table<W: Write>(records: &[MetricRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "{METRIC_TABLE_HEADER}")?;
    for r in records {
        let i = &r.instance;
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            i.gloss,
            i.variation,
            i.signer,
            i.condition,
            i.session,
            r.mention_index,
            r.group,
            r.spatial_extent,
            r.path_length,
            r.avg_velocity,
            r.duration_s,
            r.mean_vertical
        )?;
    }
    Ok(())
}

/// One row of a metric table, before it is joined back to its annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub gloss: String,
    pub variation: String,
    pub signer: String,
    pub condition: Condition,
    pub session: String,
    pub mention_index: u32,
    pub group: JointGroup,
    pub values: [f64; 5],
}

impl MetricRow {
    /// Attach the annotation the row was computed from.
    pub fn into_record(self, instance: SignInstance) -> MetricRecord {
        let [spatial_extent, path_length, avg_velocity, duration_s, mean_vertical] = self.values;
        MetricRecord {
            instance,
            mention_index: self.mention_index,
            group: self.group,
            spatial_extent,
            path_length,
            avg_velocity,
            duration_s,
            mean_vertical,
        }
    }
}

#[derive(Debug, Error)]
pub enum MetricTableError {
    #[error("read failed: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Row { line: usize, reason: String },
}

pub fn read_metric_table<R: BufRead>(reader: R) -> Result<Vec<MetricRow>, MetricTableError> {
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| MetricTableError::Row { line: line_no, reason };
        if !seen_header {
            if line != METRIC_TABLE_HEADER {
                return Err(err(format!("expected header `{METRIC_TABLE_HEADER}`")));
            }
            seen_header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 12 {
            return Err(err(format!("expected 12 fields, found {}", f.len())));
        }
        let mut values = [0.0; 5];
        for (k, v) in values.iter_mut().enumerate() {
            *v = f[7 + k].parse().map_err(|_| err(format!("bad number `{}`", f[7 + k])))?;
        }
        rows.push(MetricRow {
            gloss: f[0].to_owned(),
            variation: f[1].to_owned(),
            signer: f[2].to_owned(),
            condition: f[3].parse().map_err(|e: crate::annotation::UnknownCondition| err(e.to_string()))?,
            session: f[4].to_owned(),
            mention_index: f[5].parse().map_err(|_| err(format!("bad mention index `{}`", f[5])))?,
            group: f[6].parse().map_err(|e: crate::skeleton::UnknownGroup| err(e.to_string()))?,
            values,
        });
    }
    Ok(rows)
}
