//! Canonical joint model, keypoint files and pose-landmark mapping.
//!
//! The canonical skeleton has 46 joints, 23 per side: shoulder-to-wrist
//! chain (`Arm`, `ForeArm`, `Hand`) plus twenty finger and thumb joints.
//! Motion-capture exports use these names directly; 2D pose estimator
//! output is brought onto them through a [`LandmarkMapping`].
//!
//! Keypoint file layout (UTF-8, line oriented):
//!
//! ```text
//! #frame_rate=120
//! #source_kind=mocap3d
//! #up_axis=+y
//! #unit_label=millimeters
//! #signer=A
//! time_ms,joint,x,y,z,confidence
//! 0,RightHand,12.5,900.25,4,
//! ```
//!
//! `z` is empty for `pose2d` sources and `confidence` is empty when the
//! source does not report one.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::interval::{Interval, InvalidInterval};

pub const JOINT_COUNT: usize = 46;
const JOINTS_PER_SIDE: usize = 23;

const JOINT_NAMES: [&str; JOINT_COUNT] = [
    "RightArm",
    "RightForeArm",
    "RightHand",
    "RightHandMiddle1",
    "RightHandMiddle2",
    "RightHandMiddle3",
    "RightHandMiddle4",
    "RightHandRing",
    "RightHandRing1",
    "RightHandRing2",
    "RightHandRing4",
    "RightHandPinky",
    "RightHandPinky1",
    "RightHandPinky2",
    "RightHandPinky4",
    "RightHandIndex",
    "RightHandIndex1",
    "RightHandIndex2",
    "RightHandIndex4",
    "RightHandThumb1",
    "RightHandThumb2",
    "RightHandThumb3",
    "RightHandThumb4",
    "LeftArm",
    "LeftForeArm",
    "LeftHand",
    "LeftHandMiddle1",
    "LeftHandMiddle2",
    "LeftHandMiddle3",
    "LeftHandMiddle4",
    "LeftHandRing",
    "LeftHandRing1",
    "LeftHandRing2",
    "LeftHandRing4",
    "LeftHandPinky",
    "LeftHandPinky1",
    "LeftHandPinky2",
    "LeftHandPinky4",
    "LeftHandIndex",
    "LeftHandIndex1",
    "LeftHandIndex2",
    "LeftHandIndex4",
    "LeftHandThumb1",
    "LeftHandThumb2",
    "LeftHandThumb3",
    "LeftHandThumb4",
];

/// Bundled landmark-to-joint table for MediaPipe Holistic output.
pub const DEFAULT_LANDMARK_MAPPING: &str = include_str!("../assets/landmark_mapping.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Right,
    Left,
}

impl Side {
    pub fn short(self) -> &'static str {
        match self {
            Side::Right => "R",
            Side::Left => "L",
        }
    }
}

/// One of the 46 canonical joints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JointId(u8);

impl JointId {
    pub const RIGHT_ARM: JointId = JointId(0);
    pub const RIGHT_FOREARM: JointId = JointId(1);
    pub const RIGHT_HAND: JointId = JointId(2);
    pub const LEFT_ARM: JointId = JointId(23);
    pub const LEFT_FOREARM: JointId = JointId(24);
    pub const LEFT_HAND: JointId = JointId(25);

    pub fn from_index(index: usize) -> Option<JointId> {
        (index < JOINT_COUNT).then_some(JointId(index as u8))
    }

    pub fn from_name(name: &str) -> Option<JointId> {
        JOINT_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| JointId(i as u8))
    }

    pub fn all() -> impl Iterator<Item = JointId> {
        (0..JOINT_COUNT).map(|i| JointId(i as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        JOINT_NAMES[self.index()]
    }

    pub fn side(self) -> Side {
        if self.index() < JOINTS_PER_SIDE {
            Side::Right
        } else {
            Side::Left
        }
    }

    /// The group this joint belongs to. Every canonical joint has one.
    pub fn group(self) -> JointGroup {
        let kind = match self.index() % JOINTS_PER_SIDE {
            0 => GroupKind::Arm,
            1 => GroupKind::Forearm,
            2 => GroupKind::Hand,
            _ => GroupKind::Fingers,
        };
        JointGroup::new(kind, self.side())
    }
}

impl fmt::Display for JointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroupKind {
    Fingers,
    Hand,
    Forearm,
    Arm,
}

impl GroupKind {
    fn label(self) -> &'static str {
        match self {
            GroupKind::Fingers => "Fingers",
            GroupKind::Hand => "Hand",
            GroupKind::Forearm => "Forearm",
            GroupKind::Arm => "Arm",
        }
    }
}

/// A labelled set of joints whose metrics are reported together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JointGroup {
    pub kind: GroupKind,
    pub side: Side,
}

impl JointGroup {
    /// Row order of the relative-change table.
    pub const TABLE_ORDER: [JointGroup; 8] = [
        JointGroup::new(GroupKind::Fingers, Side::Left),
        JointGroup::new(GroupKind::Fingers, Side::Right),
        JointGroup::new(GroupKind::Hand, Side::Left),
        JointGroup::new(GroupKind::Hand, Side::Right),
        JointGroup::new(GroupKind::Forearm, Side::Left),
        JointGroup::new(GroupKind::Forearm, Side::Right),
        JointGroup::new(GroupKind::Arm, Side::Left),
        JointGroup::new(GroupKind::Arm, Side::Right),
    ];

    pub const fn new(kind: GroupKind, side: Side) -> Self {
        Self { kind, side }
    }

    pub fn hand(side: Side) -> Self {
        Self::new(GroupKind::Hand, side)
    }

    /// Member joints in canonical order.
    pub fn members(&self) -> Vec<JointId> {
        let offset = match self.side {
            Side::Right => 0,
            Side::Left => JOINTS_PER_SIDE,
        };
        let range = match self.kind {
            GroupKind::Arm => 0..1,
            GroupKind::Forearm => 1..2,
            GroupKind::Hand => 2..3,
            GroupKind::Fingers => 3..JOINTS_PER_SIDE,
        };
        range.map(|i| JointId((offset + i) as u8)).collect()
    }

    /// Label such as `Fingers (L)`.
    pub fn label(&self) -> String {
        format!("{} ({})", self.kind.label(), self.side.short())
    }
}

impl fmt::Display for JointGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown joint group `{0}`")]
pub struct UnknownGroup(pub String);

impl FromStr for JointGroup {
    type Err = UnknownGroup;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        JointGroup::TABLE_ORDER
            .iter()
            .copied()
            .find(|g| g.label() == s)
            .ok_or_else(|| UnknownGroup(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SourceKind {
    Mocap3d,
    Pose2d,
}

impl SourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Mocap3d => "mocap3d",
            SourceKind::Pose2d => "pose2d",
        }
    }

    fn from_label(s: &str) -> Option<Self> {
        match s {
            "mocap3d" => Some(SourceKind::Mocap3d),
            "pose2d" => Some(SourceKind::Pose2d),
            _ => None,
        }
    }

    pub fn default_up_axis(self) -> UpAxis {
        match self {
            SourceKind::Mocap3d => UpAxis::PosY,
            SourceKind::Pose2d => UpAxis::NegY,
        }
    }
}

/// Which coordinate points up. Image coordinates grow downward (`-y`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UpAxis {
    PosY,
    NegY,
    PosZ,
}

impl UpAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            UpAxis::PosY => "+y",
            UpAxis::NegY => "-y",
            UpAxis::PosZ => "+z",
        }
    }

    fn from_label(s: &str) -> Option<Self> {
        match s {
            "+y" | "y" => Some(UpAxis::PosY),
            "-y" | "\u{2212}y" => Some(UpAxis::NegY),
            "+z" | "z" => Some(UpAxis::PosZ),
            _ => None,
        }
    }

    /// Height of `p` with larger meaning higher.
    pub fn height(self, p: &[f64; 3]) -> f64 {
        match self {
            UpAxis::PosY => p[1],
            UpAxis::NegY => -p[1],
            UpAxis::PosZ => p[2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub z: Option<f64>,
    pub confidence: Option<f64>,
}

impl Keypoint {
    pub fn new3(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z: Some(z), confidence: None }
    }

    pub fn new2(x: f64, y: f64) -> Self {
        Self { x, y, z: None, confidence: None }
    }

    pub fn with_confidence(mut self, confidence: f64) -> Self {
        self.confidence = Some(confidence);
        self
    }

    /// Position with a missing z read as 0.
    pub fn position(&self) -> [f64; 3] {
        [self.x, self.y, self.z.unwrap_or(0.0)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub time_ms: f64,
    keypoints: [Option<Keypoint>; JOINT_COUNT],
}

impl Frame {
    pub fn new(time_ms: f64) -> Self {
        Self { time_ms, keypoints: [None; JOINT_COUNT] }
    }

    pub fn get(&self, joint: JointId) -> Option<&Keypoint> {
        self.keypoints[joint.index()].as_ref()
    }

    pub fn set(&mut self, joint: JointId, keypoint: Keypoint) {
        self.keypoints[joint.index()] = Some(keypoint);
    }

    pub fn remove(&mut self, joint: JointId) -> Option<Keypoint> {
        self.keypoints[joint.index()].take()
    }

    /// Present joints in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (JointId, &Keypoint)> {
        self.keypoints
            .iter()
            .enumerate()
            .filter_map(|(i, kp)| kp.as_ref().map(|kp| (JointId(i as u8), kp)))
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.iter().all(Option::is_none)
    }
}

/// Header metadata of a keypoint sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceMeta {
    pub frame_rate: f64,
    pub source_kind: SourceKind,
    pub up_axis: UpAxis,
    pub unit_label: String,
    pub signer: Option<String>,
    pub session: Option<String>,
}

impl SequenceMeta {
    pub fn new(frame_rate: f64, source_kind: SourceKind) -> Self {
        Self {
            frame_rate,
            source_kind,
            up_axis: source_kind.default_up_axis(),
            unit_label: "unknown".to_owned(),
            signer: None,
            session: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SequenceError {
    #[error("frame rate must be positive, got {0}")]
    FrameRate(f64),
    #[error("timestamps must be strictly increasing: frame {index} at {found} ms follows {previous} ms")]
    NonMonotone { index: usize, previous: f64, found: f64 },
    #[error("frame {index}: joint {joint} has {found} coordinates in a {kind} sequence")]
    Dimensionality { index: usize, joint: JointId, kind: &'static str, found: &'static str },
    #[error("frame {index}: joint {joint} confidence {value} outside [0, 1]")]
    Confidence { index: usize, joint: JointId, value: f64 },
}

/// Time-ordered joint positions for one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSequence {
    meta: SequenceMeta,
    frames: Vec<Frame>,
}

impl KeypointSequence {
    pub fn new(meta: SequenceMeta, frames: Vec<Frame>) -> Result<Self, SequenceError> {
        if !(meta.frame_rate > 0.0 && meta.frame_rate.is_finite()) {
            return Err(SequenceError::FrameRate(meta.frame_rate));
        }
        for (index, pair) in frames.windows(2).enumerate() {
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(pair[1].time_ms > pair[0].time_ms) {
                return Err(SequenceError::NonMonotone {
                    index: index + 1,
                    previous: pair[0].time_ms,
                    found: pair[1].time_ms,
                });
            }
        }
        let wants_z = meta.source_kind == SourceKind::Mocap3d;
        for (index, frame) in frames.iter().enumerate() {
            for (joint, kp) in frame.iter() {
                if kp.z.is_some() != wants_z {
                    return Err(SequenceError::Dimensionality {
                        index,
                        joint,
                        kind: meta.source_kind.as_str(),
                        found: if kp.z.is_some() { "3D" } else { "2D" },
                    });
                }
                if let Some(c) = kp.confidence {
                    if !(0.0..=1.0).contains(&c) {
                        return Err(SequenceError::Confidence { index, joint, value: c });
                    }
                }
            }
        }
        Ok(Self { meta, frames })
    }

    pub fn meta(&self) -> &SequenceMeta {
        &self.meta
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn up_axis(&self) -> UpAxis {
        self.meta.up_axis
    }

    pub fn first_time_ms(&self) -> Option<f64> {
        self.frames.first().map(|f| f.time_ms)
    }

    pub fn last_time_ms(&self) -> Option<f64> {
        self.frames.last().map(|f| f.time_ms)
    }

    /// Frames with `interval.start <= t <= interval.end`, metadata kept.
    pub fn slice(&self, interval: &Interval) -> KeypointSequence {
        let lo = self.frames.partition_point(|f| f.time_ms < interval.start_ms());
        let hi = self.frames.partition_point(|f| f.time_ms <= interval.end_ms());
        KeypointSequence {
            meta: self.meta.clone(),
            frames: self.frames[lo..hi.max(lo)].to_vec(),
        }
    }

    /// Like [`slice`](Self::slice) but takes raw bounds and rejects inverted ones.
    pub fn slice_interval(&self, start_ms: f64, end_ms: f64) -> Result<KeypointSequence, InvalidInterval> {
        Ok(self.slice(&Interval::new(start_ms, end_ms)?))
    }

    /// Same frames in reverse time order, timestamps mirrored so they stay increasing.
    pub fn reversed(&self) -> KeypointSequence {
        let last = self.last_time_ms().unwrap_or(0.0);
        let first = self.first_time_ms().unwrap_or(0.0);
        let frames = self
            .frames
            .iter()
            .rev()
            .map(|f| Frame { time_ms: first + last - f.time_ms, keypoints: f.keypoints })
            .collect();
        KeypointSequence { meta: self.meta.clone(), frames }
    }

    /// Write in the keypoint file format.
    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        let m = &self.meta;
        writeln!(w, "#frame_rate={}", m.frame_rate)?;
        writeln!(w, "#source_kind={}", m.source_kind.as_str())?;
        writeln!(w, "#up_axis={}", m.up_axis.as_str())?;
        writeln!(w, "#unit_label={}", m.unit_label)?;
        if let Some(signer) = &m.signer {
            writeln!(w, "#signer={signer}")?;
        }
        if let Some(session) = &m.session {
            writeln!(w, "#session={session}")?;
        }
        writeln!(w, "{KEYPOINT_COLUMNS}")?;
        for frame in &self.frames {
            for (joint, kp) in frame.iter() {
                write!(w, "{},{},{},{},", frame.time_ms, joint, kp.x, kp.y)?;
                if let Some(z) = kp.z {
                    write!(w, "{z}")?;
                }
                w.write_all(b",")?;
                if let Some(c) = kp.confidence {
                    write!(w, "{c}")?;
                }
                w.write_all(b"\n")?;
            }
        }
        Ok(())
    }

    pub fn to_file_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("keypoint output is UTF-8")
    }
}

pub const KEYPOINT_COLUMNS: &str = "time_ms,joint,x,y,z,confidence";

#[derive(Debug, Error)]
pub enum KeypointParseError {
    #[error("read failed: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: malformed header: {reason}")]
    MalformedHeader { line: usize, reason: String },
    #[error("missing required header `#{0}=`")]
    MissingHeader(&'static str),
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: timestamp {found} ms precedes {previous} ms")]
    NonMonotone { line: usize, previous: f64, found: f64 },
    #[error("line {line}: unknown joint `{name}`")]
    UnknownJoint { line: usize, name: String },
    #[error("line {line}: {found} row in a {expected} file")]
    MixedDimensionality { line: usize, expected: &'static str, found: &'static str },
    #[error("line {line}: joint {joint} repeated within one frame")]
    DuplicateJoint { line: usize, joint: String },
}

impl KeypointParseError {
    /// 1-based line number the error refers to, if any.
    pub fn line(&self) -> Option<usize> {
        match self {
            KeypointParseError::Io(_) | KeypointParseError::MissingHeader(_) => None,
            KeypointParseError::MalformedHeader { line, .. }
            | KeypointParseError::MalformedRow { line, .. }
            | KeypointParseError::NonMonotone { line, .. }
            | KeypointParseError::UnknownJoint { line, .. }
            | KeypointParseError::MixedDimensionality { line, .. }
            | KeypointParseError::DuplicateJoint { line, .. } => Some(*line),
        }
    }
}

fn parse_f64(field: &str, what: &str, line: usize) -> Result<f64, KeypointParseError> {
    field
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| KeypointParseError::MalformedRow {
            line,
            reason: format!("{what} `{field}` is not a finite number"),
        })
}

/// Parse a keypoint file.
///
/// Only `#frame_rate` is mandatory. `source_kind` is inferred from the first
/// body row when absent and `up_axis` then follows the source default.
/// Unknown header keys are ignored.
pub fn parse_keypoint_file<R: BufRead>(reader: R) -> Result<KeypointSequence, KeypointParseError> {
    let mut frame_rate = None;
    let mut source_kind = None;
    let mut up_axis = None;
    let mut unit_label = None;
    let mut signer = None;
    let mut session = None;

    let mut frames: Vec<Frame> = Vec::new();
    let mut in_body = false;

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            if in_body {
                return Err(KeypointParseError::MalformedHeader {
                    line: line_no,
                    reason: "header after body rows".into(),
                });
            }
            let (key, value) = header.split_once('=').ok_or_else(|| KeypointParseError::MalformedHeader {
                line: line_no,
                reason: format!("expected `#key=value`, got `{line}`"),
            })?;
            let value = value.trim();
            let bad = |reason: String| KeypointParseError::MalformedHeader { line: line_no, reason };
            match key.trim() {
                "frame_rate" => {
                    let rate = value
                        .parse::<f64>()
                        .ok()
                        .filter(|r| *r > 0.0 && r.is_finite())
                        .ok_or_else(|| bad(format!("frame_rate `{value}` is not a positive number")))?;
                    frame_rate = Some(rate);
                }
                "source_kind" => {
                    source_kind = Some(
                        SourceKind::from_label(value).ok_or_else(|| bad(format!("unknown source_kind `{value}`")))?,
                    );
                }
                "up_axis" => {
                    up_axis = Some(UpAxis::from_label(value).ok_or_else(|| bad(format!("unknown up_axis `{value}`")))?);
                }
                "unit_label" => unit_label = Some(value.to_owned()),
                "signer" => signer = Some(value.to_owned()),
                "session" => session = Some(value.to_owned()),
                _ => {}
            }
            continue;
        }
        if !in_body && line.trim() == KEYPOINT_COLUMNS {
            in_body = true;
            continue;
        }
        in_body = true;

        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(KeypointParseError::MalformedRow {
                line: line_no,
                reason: format!("expected 6 fields, found {}", fields.len()),
            });
        }
        let time_ms = parse_f64(fields[0], "time_ms", line_no)?;
        let joint = JointId::from_name(fields[1].trim()).ok_or_else(|| KeypointParseError::UnknownJoint {
            line: line_no,
            name: fields[1].trim().to_owned(),
        })?;
        let x = parse_f64(fields[2], "x", line_no)?;
        let y = parse_f64(fields[3], "y", line_no)?;
        let z = match fields[4].trim() {
            "" => None,
            s => Some(parse_f64(s, "z", line_no)?),
        };
        let confidence = match fields[5].trim() {
            "" => None,
            s => {
                let c = parse_f64(s, "confidence", line_no)?;
                if !(0.0..=1.0).contains(&c) {
                    return Err(KeypointParseError::MalformedRow {
                        line: line_no,
                        reason: format!("confidence {c} outside [0, 1]"),
                    });
                }
                Some(c)
            }
        };

        let row_kind = if z.is_some() { SourceKind::Mocap3d } else { SourceKind::Pose2d };
        let kind = *source_kind.get_or_insert(row_kind);
        if kind != row_kind {
            return Err(KeypointParseError::MixedDimensionality {
                line: line_no,
                expected: kind.as_str(),
                found: row_kind.as_str(),
            });
        }

        match frames.last_mut() {
            Some(frame) if frame.time_ms == time_ms => {
                if frame.get(joint).is_some() {
                    return Err(KeypointParseError::DuplicateJoint { line: line_no, joint: joint.name().to_owned() });
                }
                frame.set(joint, Keypoint { x, y, z, confidence });
            }
            Some(frame) if time_ms < frame.time_ms => {
                return Err(KeypointParseError::NonMonotone { line: line_no, previous: frame.time_ms, found: time_ms });
            }
            _ => {
                let mut frame = Frame::new(time_ms);
                frame.set(joint, Keypoint { x, y, z, confidence });
                frames.push(frame);
            }
        }
    }

    let frame_rate = frame_rate.ok_or(KeypointParseError::MissingHeader("frame_rate"))?;
    let source_kind = source_kind.unwrap_or(SourceKind::Mocap3d);
    let meta = SequenceMeta {
        frame_rate,
        source_kind,
        up_axis: up_axis.unwrap_or_else(|| source_kind.default_up_axis()),
        unit_label: unit_label.unwrap_or_else(|| "unknown".to_owned()),
        signer,
        session,
    };
    // Rows were validated individually above; the sequence invariants hold.
    Ok(KeypointSequence { meta, frames })
}

pub fn parse_keypoint_str(text: &str) -> Result<KeypointSequence, KeypointParseError> {
    parse_keypoint_file(text.as_bytes())
}

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("read failed: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: malformed mapping row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: landmark `{key}` mapped twice")]
    DuplicateLandmark { line: usize, key: String },
    #[error("line {line}: joint {joint} is the target of more than one landmark")]
    DuplicateJoint { line: usize, joint: String },
    #[error("incomplete landmark mapping: no landmark for {}", .missing.join(", "))]
    Incomplete { missing: Vec<String> },
}

/// Landmark key (e.g. `pose_12`, `right_hand_9`) to canonical joint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LandmarkMapping {
    entries: BTreeMap<String, JointId>,
}

impl Default for LandmarkMapping {
    fn default() -> Self {
        parse_landmark_mapping(DEFAULT_LANDMARK_MAPPING.as_bytes()).expect("bundled mapping is valid")
    }
}

impl LandmarkMapping {
    /// Build from pairs. Rejects duplicate keys and joints, but not gaps;
    /// completeness is checked where the mapping is applied.
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self, MappingError>
    where
        I: IntoIterator<Item = (S, JointId)>,
        S: Into<String>,
    {
        let mut entries = BTreeMap::new();
        let mut targets = BTreeSet::new();
        for (i, (key, joint)) in pairs.into_iter().enumerate() {
            let key = key.into();
            if !targets.insert(joint) {
                return Err(MappingError::DuplicateJoint { line: i + 1, joint: joint.name().to_owned() });
            }
            if entries.insert(key.clone(), joint).is_some() {
                return Err(MappingError::DuplicateLandmark { line: i + 1, key });
            }
        }
        Ok(Self { entries })
    }

    pub fn get(&self, landmark: &str) -> Option<JointId> {
        self.entries.get(landmark).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, JointId)> {
        self.entries.iter().map(|(k, j)| (k.as_str(), *j))
    }

    /// Canonical joints without a landmark.
    pub fn missing_joints(&self) -> Vec<JointId> {
        let covered: BTreeSet<JointId> = self.entries.values().copied().collect();
        JointId::all().filter(|j| !covered.contains(j)).collect()
    }

    pub fn ensure_complete(&self) -> Result<(), MappingError> {
        let missing = self.missing_joints();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(MappingError::Incomplete { missing: missing.iter().map(|j| j.name().to_owned()).collect() })
        }
    }

    /// Joint to landmark key.
    pub fn inverse(&self) -> BTreeMap<JointId, &str> {
        self.entries.iter().map(|(k, j)| (*j, k.as_str())).collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "landmark_key,joint_name")?;
        let mut rows: Vec<_> = self.iter().collect();
        rows.sort_by_key(|(_, j)| *j);
        for (key, joint) in rows {
            writeln!(w, "{key},{joint}")?;
        }
        Ok(())
    }
}

/// Parse a two-column `landmark_key,joint_name` file. A header row is optional.
pub fn parse_landmark_mapping<R: BufRead>(reader: R) -> Result<LandmarkMapping, MappingError> {
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line == "landmark_key,joint_name" {
            continue;
        }
        let (key, name) = line.split_once(',').ok_or_else(|| MappingError::MalformedRow {
            line: line_no,
            reason: "expected two comma-separated columns".into(),
        })?;
        let joint = JointId::from_name(name.trim()).ok_or_else(|| MappingError::MalformedRow {
            line: line_no,
            reason: format!("unknown joint `{}`", name.trim()),
        })?;
        pairs.push((line_no, key.trim().to_owned(), joint));
    }
    let mut entries = BTreeMap::new();
    let mut targets = BTreeSet::new();
    for (line, key, joint) in pairs {
        if !targets.insert(joint) {
            return Err(MappingError::DuplicateJoint { line, joint: joint.name().to_owned() });
        }
        if entries.insert(key.clone(), joint).is_some() {
            return Err(MappingError::DuplicateLandmark { line, key });
        }
    }
    Ok(LandmarkMapping { entries })
}

/// One 2D landmark as reported by a pose estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub x: f64,
    pub y: f64,
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkFrame {
    pub time_ms: f64,
    pub landmarks: BTreeMap<String, Landmark>,
}

/// Raw estimator output keyed by landmark names, before joint mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSequence {
    pub frame_rate: f64,
    pub unit_label: String,
    pub signer: Option<String>,
    pub session: Option<String>,
    pub frames: Vec<LandmarkFrame>,
}

#[derive(Debug, Error)]
pub enum PoseMappingError {
    #[error(transparent)]
    Mapping(#[from] MappingError),
    #[error(transparent)]
    Sequence(#[from] SequenceError),
}

/// Rename mapped landmarks to canonical joints; everything else is dropped.
///
/// The result is a `pose2d` sequence with `-y` up, since estimator output is
/// in image coordinates.
pub fn map_pose_landmarks(raw: &LandmarkSequence, mapping: &LandmarkMapping) -> Result<KeypointSequence, PoseMappingError> {
    mapping.ensure_complete()?;
    let frames = raw
        .frames
        .iter()
        .map(|lf| {
            let mut frame = Frame::new(lf.time_ms);
            for (key, lm) in &lf.landmarks {
                if let Some(joint) = mapping.get(key) {
                    frame.set(joint, Keypoint { x: lm.x, y: lm.y, z: None, confidence: lm.confidence });
                }
            }
            frame
        })
        .collect();
    let meta = SequenceMeta {
        frame_rate: raw.frame_rate,
        source_kind: SourceKind::Pose2d,
        up_axis: UpAxis::NegY,
        unit_label: raw.unit_label.clone(),
        signer: raw.signer.clone(),
        session: raw.session.clone(),
    };
    Ok(KeypointSequence::new(meta, frames)?)
}

pub const LANDMARK_COLUMNS: &str = "time_ms,landmark,x,y,confidence";

/// Parse a raw landmark file: `#frame_rate=`, optional `#unit_label=`,
/// `#signer=`, `#session=` headers, then `time_ms,landmark,x,y,confidence`
/// rows grouped by non-decreasing time.
pub fn parse_landmark_file<R: BufRead>(reader: R) -> Result<LandmarkSequence, KeypointParseError> {
    let mut seq = LandmarkSequence {
        frame_rate: f64::NAN,
        unit_label: "normalized-image".to_owned(),
        signer: None,
        session: None,
        frames: Vec::new(),
    };
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim() == LANDMARK_COLUMNS {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            let (key, value) = header.split_once('=').ok_or_else(|| KeypointParseError::MalformedHeader {
                line: line_no,
                reason: format!("expected `#key=value`, got `{line}`"),
            })?;
            let value = value.trim();
            match key.trim() {
                "frame_rate" => {
                    seq.frame_rate = value.parse::<f64>().ok().filter(|r| *r > 0.0).ok_or_else(|| {
                        KeypointParseError::MalformedHeader { line: line_no, reason: format!("bad frame_rate `{value}`") }
                    })?
                }
                "unit_label" => seq.unit_label = value.to_owned(),
                "signer" => seq.signer = Some(value.to_owned()),
                "session" => seq.session = Some(value.to_owned()),
                _ => {}
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(KeypointParseError::MalformedRow {
                line: line_no,
                reason: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let time_ms = parse_f64(fields[0], "time_ms", line_no)?;
        let landmark = Landmark {
            x: parse_f64(fields[2], "x", line_no)?,
            y: parse_f64(fields[3], "y", line_no)?,
            confidence: match fields[4].trim() {
                "" => None,
                s => Some(parse_f64(s, "confidence", line_no)?),
            },
        };
        match seq.frames.last_mut() {
            Some(frame) if frame.time_ms == time_ms => {
                frame.landmarks.insert(fields[1].trim().to_owned(), landmark);
            }
            Some(frame) if time_ms < frame.time_ms => {
                return Err(KeypointParseError::NonMonotone { line: line_no, previous: frame.time_ms, found: time_ms });
            }
            _ => {
                let mut landmarks = BTreeMap::new();
                landmarks.insert(fields[1].trim().to_owned(), landmark);
                seq.frames.push(LandmarkFrame { time_ms, landmarks });
            }
        }
    }
    if seq.frame_rate.is_nan() {
        return Err(KeypointParseError::MissingHeader("frame_rate"));
    }
    Ok(seq)
}
