//! Batch front end: each subcommand reads files, runs one analysis and
//! writes fixed-name tables into an output directory.
//!
//! Settings come from an optional `key=value` file (`--config`), with
//! command-line flags taking precedence. Every file written starts with a
//! `#config_digest=<sha256>` line covering the settings and input contents.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::annotation::{match_vocab_baseline, mention_indices, parse_annotations, write_annotations, Condition, GroupingMode, SignInstance};
use crate::config::{ConfigError, RunConfig};
use crate::entrain::{
    entrainment_report, parse_embedding_tokens, write_embedding_tokens, write_entrainment, write_projection, DeltaCosMode,
    EmbeddingToken, EntrainConfig, MeanScope,
};
use crate::kinemetrics::{compute_record, read_metric_table, write_metric_table, Aggregation, HandDominance, MetricConfig, MetricRecord};
use crate::reduction::{
    compare_with_vocab, read_reduction_tables, render_reduction_grid, repeated_mention_correlations, vocab_delta_series,
    write_reduction_tables, PairedTest, Pooling, ReductionConfig, ReductionTable,
};
use crate::skeleton::{parse_keypoint_file, parse_landmark_file, parse_landmark_mapping, map_pose_landmarks, JointGroup, KeypointSequence, LandmarkMapping, Side};
use crate::spotter::{
    embed_windows, kinematic_embed, rank_and_score, write_query_scores, write_rankings, write_spotting_table, EmbedParams, Embedding,
    MrrPooling, QueryReport, ScoreParams, SpottingReport, SpottingRow, Window,
};
use crate::stats::significance_stars;
use crate::synth::{generate_session, write_truth, SynthSpec};

#[derive(Debug, Parser)]
#[command(name = "signkin", version, about = "Kinematic reduction, entrainment and sign-spotting analysis")]
pub struct Cli {
    /// `key=value` settings file; flags override its entries.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic two-signer session with ground truth.
    Synth(SynthArgs),
    /// Convert a raw pose-landmark file to the canonical keypoint format.
    Ingest(IngestArgs),
    /// Per-token, per-group kinematic metrics.
    Metrics(MetricsArgs),
    /// Vocabulary deltas and repeated-mention correlation tables.
    Reduce(ReduceArgs),
    /// Embedding entrainment between two signers.
    Entrain(EntrainArgs),
    /// Sliding-window sign spotting.
    Spot(SpotArgs),
    /// Human-readable summary of earlier outputs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub glosses: Option<String>,
    #[arg(long)]
    pub mentions: Option<String>,
    #[arg(long)]
    pub reduction_rate: Option<String>,
    #[arg(long)]
    pub entrain_coupling: Option<String>,
    /// Mention index, or `none`.
    #[arg(long)]
    pub weak_drop_mention: Option<String>,
    #[arg(long)]
    pub duration_ratio: Option<String>,
    #[arg(long)]
    pub embedding_dim: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub landmarks: Option<String>,
    /// Landmark-to-joint CSV; the bundled mapping when absent.
    #[arg(long)]
    pub mapping: Option<String>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub annotations: Option<String>,
    /// Comma-separated keypoint files, each carrying `#signer` and `#session`.
    #[arg(long)]
    pub keypoints: Option<String>,
    #[arg(long)]
    pub confidence_floor: Option<String>,
    #[arg(long)]
    pub max_gap_ratio: Option<String>,
    /// `per_joint_mean` or `mean_trajectory`.
    #[arg(long)]
    pub aggregation: Option<String>,
    /// Treat each gloss variation as its own sign.
    #[arg(long)]
    pub strict_variation: bool,
}

#[derive(Debug, Args)]
pub struct ReduceArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub annotations: Option<String>,
    #[arg(long)]
    pub metrics: Option<String>,
    #[arg(long)]
    pub strict_variation: bool,
    /// Add each sequence's first mention at 0% to the pooled pairs.
    #[arg(long)]
    pub include_first_mention: bool,
    /// Average per-gloss coefficients instead of pooling pairs.
    #[arg(long)]
    pub per_gloss: bool,
    /// Paired t-test instead of the signed-rank test.
    #[arg(long)]
    pub paired_t: bool,
    #[arg(long)]
    pub min_tokens: Option<String>,
    #[arg(long)]
    pub tie_tolerance: Option<String>,
    /// `signer:left|right` pairs, comma-separated.
    #[arg(long)]
    pub dominant_hand: Option<String>,
}

#[derive(Debug, Args)]
pub struct EntrainArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub embeddings: Option<String>,
    #[arg(long)]
    pub signer_a: Option<String>,
    #[arg(long)]
    pub signer_b: Option<String>,
    /// Within-signer first-versus-last contrast instead of the cross-signer one.
    #[arg(long)]
    pub literal_delta_cos: bool,
    /// Signer means over all glosses instead of per gloss.
    #[arg(long)]
    pub global_mean: bool,
}

#[derive(Debug, Args)]
pub struct SpotArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub annotations: Option<String>,
    #[arg(long)]
    pub keypoints: Option<String>,
    /// Embedding token file of queries; requires `--window-embeddings`.
    #[arg(long)]
    pub query_embeddings: Option<String>,
    /// Embedding token file whose intervals are window spans.
    #[arg(long)]
    pub window_embeddings: Option<String>,
    #[arg(long)]
    pub window_ms: Option<String>,
    #[arg(long)]
    pub stride_ms: Option<String>,
    #[arg(long)]
    pub iou_threshold: Option<String>,
    /// Comma-separated cutoffs.
    #[arg(long)]
    pub ks: Option<String>,
    #[arg(long)]
    pub resample: Option<String>,
    #[arg(long)]
    pub confidence_floor: Option<String>,
    /// Average reciprocal ranks over all matched windows of all queries.
    #[arg(long)]
    pub pooled_mrr: bool,
    #[arg(long)]
    pub model: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub reduction: Option<String>,
    #[arg(long)]
    pub spotting: Option<String>,
    #[arg(long)]
    pub entrainment: Option<String>,
    #[arg(long)]
    pub vocab_comparison: Option<String>,
}

/// Machine-readable failure.
#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
    pub file: Option<PathBuf>,
    pub line: Option<usize>,
}

impl CliError {
    fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError { kind, message: message.into(), file: None, line: None }
    }

    fn in_file(mut self, file: &Path, line: Option<usize>) -> Self {
        self.file = Some(file.to_owned());
        self.line = line;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({
            "status": "error",
            "kind": self.kind,
            "message": self.message,
            "file": self.file.as_ref().map(|p| p.display().to_string()),
            "line": self.line,
        })
        .to_string()
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError { kind: "config", line: e.line(), message: e.to_string(), file: None }
    }
}

fn io_error(path: &Path, e: io::Error) -> CliError {
    CliError::new("io", e.to_string()).in_file(path, None)
}

/// Effective settings of one command plus the inputs it has read.
struct Run {
    settings: RunConfig,
    path_keys: &'static [&'static str],
    inputs: Vec<(String, Vec<u8>)>,
    out_dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Run {
    fn new(
        file: &RunConfig,
        defaults: &[(&str, &str)],
        path_keys: &'static [&'static str],
        flags: Vec<(&str, Option<String>)>,
        out_dir: &Path,
    ) -> Result<Self, CliError> {
        let mut settings = file.restricted(defaults);
        for (k, v) in flags {
            if let Some(v) = v {
                settings.set(k, v);
            }
        }
        let run = Run { settings, path_keys, inputs: Vec::new(), out_dir: out_dir.to_owned(), written: Vec::new() };
        for key in path_keys {
            for p in run.paths(key)? {
                if !p.exists() {
                    return Err(CliError::new("missing_input", format!("{key}: {} does not exist", p.display())).in_file(&p, None));
                }
            }
        }
        Ok(run)
    }

    fn paths(&self, key: &str) -> Result<Vec<PathBuf>, CliError> {
        Ok(self.settings.list::<String>(key)?.into_iter().map(PathBuf::from).collect())
    }

    fn path(&self, key: &str) -> Result<Option<PathBuf>, CliError> {
        Ok(self.paths(key)?.into_iter().next())
    }

    fn required_path(&self, key: &str) -> Result<PathBuf, CliError> {
        self.path(key)?.ok_or_else(|| CliError::new("config", format!("`{key}` is required")))
    }

    fn read(&mut self, key: &str, path: &Path) -> Result<Vec<u8>, CliError> {
        let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
        self.inputs.push((key.to_owned(), bytes.clone()));
        Ok(bytes)
    }

    fn digest(&self) -> String {
        self.settings.digest(self.path_keys, &self.inputs)
    }

    fn write(&mut self, name: &str, body: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> Result<(), CliError> {
        fs::create_dir_all(&self.out_dir).map_err(|e| io_error(&self.out_dir, e))?;
        let mut buf = format!("#config_digest={}\n", self.digest()).into_bytes();
        body(&mut buf).expect("writing to memory");
        let path = self.out_dir.join(name);
        fs::write(&path, buf).map_err(|e| io_error(&path, e))?;
        self.written.push(path);
        Ok(())
    }
}

fn parse_error(path: &Path, line: Option<usize>, message: impl std::fmt::Display) -> CliError {
    CliError::new("parse", message.to_string()).in_file(path, line)
}

fn load_annotations(run: &mut Run) -> Result<Vec<SignInstance>, CliError> {
    let path = run.required_path("annotations")?;
    let bytes = run.read("annotations", &path)?;
    parse_annotations(&bytes[..]).map(|s| s.instances).map_err(|e| parse_error(&path, e.line(), e))
}

fn load_keypoints(run: &mut Run) -> Result<BTreeMap<(String, String), KeypointSequence>, CliError> {
    let mut out = BTreeMap::new();
    for path in run.paths("keypoints")? {
        let bytes = run.read("keypoints", &path)?;
        let seq = parse_keypoint_file(BufReader::new(&bytes[..])).map_err(|e| parse_error(&path, e.line(), e))?;
        let (Some(signer), Some(session)) = (seq.meta().signer.clone(), seq.meta().session.clone()) else {
            return Err(parse_error(&path, None, "keypoint file needs #signer and #session headers"));
        };
        if out.insert((signer.clone(), session.clone()), seq).is_some() {
            return Err(parse_error(&path, None, format!("second recording for {signer}/{session}")));
        }
    }
    if out.is_empty() {
        return Err(CliError::new("config", "`keypoints` is required"));
    }
    Ok(out)
}

fn grouping(run: &Run) -> Result<GroupingMode, CliError> {
    Ok(if run.settings.flag("strict_variation")? { GroupingMode::StrictVariation } else { GroupingMode::BaseTerm })
}

fn flag(b: bool) -> Option<String> {
    b.then(|| "true".to_owned())
}

pub fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let file = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            RunConfig::parse(&text).map_err(|e| {
                let line = e.line();
                CliError::from(e).in_file(p, line)
            })?
        }
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Synth(a) => synth(&file, a),
        Command::Ingest(a) => ingest(&file, a),
        Command::Metrics(a) => metrics(&file, a),
        Command::Reduce(a) => reduce(&file, a),
        Command::Entrain(a) => entrain(&file, a),
        Command::Spot(a) => spot(&file, a),
        Command::Report(a) => report(&file, a),
    }
}

/// Parse `args`, run, and report; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(paths) => {
            let stdout = io::stdout();
            let mut out = stdout.lock();
            for p in paths {
                let _ = writeln!(out, "wrote {}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            1
        }
    }
}

const SYNTH_DEFAULTS: &[(&str, &str)] = &[
    ("glosses", "6"),
    ("mentions", "6"),
    ("reduction_rate", "0.1"),
    ("entrain_coupling", "0.5"),
    ("weak_drop_mention", "3"),
    ("duration_ratio", "0.75"),
    ("embedding_dim", "16"),
    ("seed", "7"),
];

fn synth(file: &RunConfig, a: SynthArgs) -> Result<Vec<PathBuf>, CliError> {
    let flags = vec![
        ("glosses", a.glosses),
        ("mentions", a.mentions),
        ("reduction_rate", a.reduction_rate),
        ("entrain_coupling", a.entrain_coupling),
        ("weak_drop_mention", a.weak_drop_mention),
        ("duration_ratio", a.duration_ratio),
        ("embedding_dim", a.embedding_dim),
        ("seed", a.seed),
    ];
    let mut run = Run::new(file, SYNTH_DEFAULTS, &[], flags, &a.out_dir)?;
    let s = &run.settings;
    let spec = SynthSpec {
        glosses: s.parse_value("glosses")?,
        mentions: s.parse_value("mentions")?,
        reduction_rate: s.parse_value("reduction_rate")?,
        entrain_coupling: s.parse_value("entrain_coupling")?,
        weak_drop_mention: s.optional("weak_drop_mention")?,
        duration_ratio: s.parse_value("duration_ratio")?,
        embedding_dim: s.parse_value("embedding_dim")?,
        seed: s.parse_value("seed")?,
    };
    let session = generate_session(&spec).map_err(|e| CliError::new("config", e.to_string()))?;

    for rec in &session.recordings {
        let name = format!("keypoints_{}_{}.csv", rec.signer, rec.session);
        run.write(&name, |w| rec.sequence.write_to(w))?;
    }
    run.write("annotations.csv", |w| write_annotations(&session.annotations, w))?;
    run.write("embeddings.csv", |w| write_embedding_tokens(&session.embeddings, spec.embedding_dim, w))?;
    run.write("truth.csv", |w| write_truth(&session.truth, w))?;
    let text = run.settings.to_text();
    run.write("synth.cfg", |w| w.write_all(text.as_bytes()))?;
    Ok(run.written)
}

fn ingest(file: &RunConfig, a: IngestArgs) -> Result<Vec<PathBuf>, CliError> {
    let flags = vec![("landmarks", a.landmarks), ("mapping", a.mapping)];
    let mut run = Run::new(file, &[("landmarks", ""), ("mapping", "")], &["landmarks", "mapping"], flags, &a.out_dir)?;
    let mapping = match run.path("mapping")? {
        Some(p) => {
            let bytes = run.read("mapping", &p)?;
            parse_landmark_mapping(&bytes[..]).map_err(|e| parse_error(&p, None, e))?
        }
        None => LandmarkMapping::default(),
    };
    let path = run.required_path("landmarks")?;
    let bytes = run.read("landmarks", &path)?;
    let raw = parse_landmark_file(&bytes[..]).map_err(|e| parse_error(&path, e.line(), e))?;
    let seq = map_pose_landmarks(&raw, &mapping).map_err(|e| parse_error(&path, None, e))?;
    run.write("keypoints.csv", |w| seq.write_to(w))?;
    Ok(run.written)
}

const METRICS_DEFAULTS: &[(&str, &str)] = &[
    ("annotations", ""),
    ("keypoints", ""),
    ("confidence_floor", "0.5"),
    ("max_gap_ratio", "0.25"),
    ("aggregation", "per_joint_mean"),
    ("strict_variation", "false"),
];

fn metrics(file: &RunConfig, a: MetricsArgs) -> Result<Vec<PathBuf>, CliError> {
    let flags = vec![
        ("annotations", a.annotations),
        ("keypoints", a.keypoints),
        ("confidence_floor", a.confidence_floor),
        ("max_gap_ratio", a.max_gap_ratio),
        ("aggregation", a.aggregation),
        ("strict_variation", flag(a.strict_variation)),
    ];
    let mut run = Run::new(file, METRICS_DEFAULTS, &["annotations", "keypoints"], flags, &a.out_dir)?;
    let config = MetricConfig {
        confidence_floor: run.settings.parse_value("confidence_floor")?,
        max_gap_ratio: run.settings.parse_value("max_gap_ratio")?,
        aggregation: run.settings.choice(
            "aggregation",
            &[("per_joint_mean", Aggregation::PerJointMean), ("mean_trajectory", Aggregation::MeanTrajectory)],
        )?,
    };
    let mode = grouping(&run)?;
    let instances = load_annotations(&mut run)?;
    let recordings = load_keypoints(&mut run)?;
    let mentions = mention_indices(&instances, mode);

    let per_token: Vec<(Vec<MetricRecord>, Vec<String>)> = instances
        .par_iter()
        .zip(mentions.par_iter())
        .map(|(inst, &mention)| {
            let mut records = Vec::new();
            let mut warnings = Vec::new();
            let warn = |group: &str, reason: String| {
                format!(
                    "{},{},{},{},{},{},\"{}\"",
                    inst.signer,
                    inst.session,
                    inst.gloss,
                    inst.interval.start_ms(),
                    inst.interval.end_ms(),
                    group,
                    reason.replace('"', "'")
                )
            };
            let Some(seq) = recordings.get(&(inst.signer.clone(), inst.session.clone())) else {
                warnings.push(warn("-", "no keypoint recording for this signer and session".to_owned()));
                return (records, warnings);
            };
            for group in JointGroup::TABLE_ORDER {
                match compute_record(seq, inst, mention, group, &config) {
                    Ok(r) => records.push(r),
                    Err(e) => warnings.push(warn(&group.label(), e.to_string())),
                }
            }
            (records, warnings)
        })
        .collect();
    let (records, warnings): (Vec<MetricRecord>, Vec<String>) =
        per_token.into_iter().fold((Vec::new(), Vec::new()), |(mut r, mut w), (rr, ww)| {
            r.extend(rr);
            w.extend(ww);
            (r, w)
        });

    run.write("metrics.csv", |w| write_metric_table(&records, w))?;
    run.write("metric_warnings.csv", |w| {
        writeln!(w, "signer,session,gloss,start_ms,end_ms,group,reason")?;
        warnings.iter().try_for_each(|l| writeln!(w, "{l}"))
    })?;
    Ok(run.written)
}

const REDUCE_DEFAULTS: &[(&str, &str)] = &[
    ("annotations", ""),
    ("metrics", ""),
    ("strict_variation", "false"),
    ("include_first_mention", "false"),
    ("per_gloss", "false"),
    ("paired_t", "false"),
    ("min_tokens", "2"),
    ("tie_tolerance", "1e-9"),
    ("dominant_hand", ""),
];

fn parse_dominance(run: &Run) -> Result<HandDominance, CliError> {
    let mut d = HandDominance::default();
    for item in run.settings.list::<String>("dominant_hand")? {
        let side = match item.split_once(':') {
            Some((signer, "left")) => (signer, Side::Left),
            Some((signer, "right")) => (signer, Side::Right),
            _ => return Err(CliError::new("config", format!("dominant_hand entry `{item}` is not signer:left|right"))),
        };
        d.set(side.0, side.1);
    }
    Ok(d)
}

fn join_metric_rows(run: &mut Run, instances: &[SignInstance], mode: GroupingMode) -> Result<Vec<MetricRecord>, CliError> {
    let path = run.required_path("metrics")?;
    let bytes = run.read("metrics", &path)?;
    let rows = read_metric_table(&bytes[..]).map_err(|e| {
        let line = match &e {
            crate::kinemetrics::MetricTableError::Row { line, .. } => Some(*line),
            _ => None,
        };
        parse_error(&path, line, e)
    })?;
    let mentions = mention_indices(instances, mode);
    let key = |gloss: &str, variation: &str, signer: &str, condition: Condition, session: &str, mention: u32| {
        let variation = if mode == GroupingMode::StrictVariation { variation.to_owned() } else { String::new() };
        (signer.to_owned(), session.to_owned(), condition, gloss.to_owned(), variation, mention)
    };
    let by_key: BTreeMap<_, &SignInstance> = instances
        .iter()
        .zip(&mentions)
        .map(|(i, &m)| (key(&i.gloss, &i.variation, &i.signer, i.condition, &i.session, m), i))
        .collect();
    rows.into_iter()
        .map(|row| {
            let k = key(&row.gloss, &row.variation, &row.signer, row.condition, &row.session, row.mention_index);
            let inst = by_key.get(&k).ok_or_else(|| {
                parse_error(
                    &path,
                    None,
                    format!(
                        "metric row {}/{}/{} mention {} has no matching annotation",
                        row.signer, row.session, row.gloss, row.mention_index
                    ),
                )
            })?;
            Ok(row.into_record((*inst).clone()))
        })
        .collect()
}

fn reduce(file: &RunConfig, a: ReduceArgs) -> Result<Vec<PathBuf>, CliError> {
    let flags = vec![
        ("annotations", a.annotations),
        ("metrics", a.metrics),
        ("strict_variation", flag(a.strict_variation)),
        ("include_first_mention", flag(a.include_first_mention)),
        ("per_gloss", flag(a.per_gloss)),
        ("paired_t", flag(a.paired_t)),
        ("min_tokens", a.min_tokens),
        ("tie_tolerance", a.tie_tolerance),
        ("dominant_hand", a.dominant_hand),
    ];
    let mut run = Run::new(file, REDUCE_DEFAULTS, &["annotations", "metrics"], flags, &a.out_dir)?;
    let s = &run.settings;
    let config = ReductionConfig {
        min_tokens: s.parse_value("min_tokens")?,
        include_first_mention: s.flag("include_first_mention")?,
        pooling: if s.flag("per_gloss")? { Pooling::PerGloss } else { Pooling::Pooled },
        tie_tolerance: s.parse_value("tie_tolerance")?,
    };
    let test = if s.flag("paired_t")? { PairedTest::PairedT } else { PairedTest::SignedRank };
    let dominance = parse_dominance(&run)?;
    let mode = grouping(&run)?;
    let instances = load_annotations(&mut run)?;
    let records = join_metric_rows(&mut run, &instances, mode)?;

    let mut by_signer: BTreeMap<&str, Vec<MetricRecord>> = BTreeMap::new();
    for r in &records {
        by_signer.entry(r.instance.signer.as_str()).or_default().push(r.clone());
    }
    let mut tables: Vec<(String, ReductionTable)> = Vec::new();
    for (signer, recs) in &by_signer {
        for condition in [Condition::Dialogue, Condition::Monologue, Condition::Interpreter] {
            if recs.iter().any(|r| r.instance.condition == condition) {
                tables.push((signer.to_string(), repeated_mention_correlations(recs, condition, &config)));
            }
        }
    }

    let (vocab, spoken): (Vec<SignInstance>, Vec<SignInstance>) =
        instances.iter().cloned().partition(|i| i.condition == Condition::Vocabulary);
    let baseline = match_vocab_baseline(&spoken, &vocab);
    let deltas = vocab_delta_series(&records, &baseline.pairs);
    let comparisons = compare_with_vocab(&records, &baseline.pairs, test);

    run.write("reduction.csv", |w| write_reduction_tables(&tables, w))?;
    run.write("delta_series.csv", |w| {
        writeln!(w, "signer,session,gloss,group,metric,mention_index,delta")?;
        for s in &deltas.series {
            for (k, d) in &s.points {
                writeln!(w, "{},{},{},{},{},{k},{d}", s.signer, s.session, s.gloss, s.group.label(), s.metric)?;
            }
        }
        Ok(())
    })?;
    run.write("delta_means.csv", |w| {
        writeln!(w, "signer,group,metric,mention_index,mean,std_error,n")?;
        for m in &deltas.means {
            for p in &m.points {
                writeln!(w, "{},{},{},{},{},{},{}", m.signer, m.group.label(), m.metric, p.mention_index, p.mean, p.std_error, p.n)?;
            }
        }
        Ok(())
    })?;
    run.write("vocab_comparison.csv", |w| {
        writeln!(w, "signer,group,metric,dominant_hand,tokens,glosses,mean_percent_reduction,test,p_value")?;
        for c in &comparisons {
            let dominant = u8::from(c.group == dominance.lowering_group(&c.signer));
            let p = c.p_value.as_ref().map(|p| p.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{dominant},{},{},{},{},{p}",
                c.signer,
                c.group.label(),
                c.metric,
                c.tokens,
                c.gloss_pairs.len(),
                c.mean_percent_reduction,
                c.test.as_str()
            )?;
        }
        Ok(())
    })?;
    run.write("reduce_warnings.txt", |w| {
        for g in &baseline.unmatched {
            writeln!(w, "no vocabulary baseline for gloss {g}")?;
        }
        deltas.warnings.iter().try_for_each(|m| writeln!(w, "{m}"))
    })?;
    Ok(run.written)
}

fn load_embeddings(run: &mut Run, key: &str) -> Result<Option<Vec<EmbeddingToken>>, CliError> {
    let Some(path) = run.path(key)? else { return Ok(None) };
    let bytes = run.read(key, &path)?;
    let (_, tokens) = parse_embedding_tokens(&bytes[..]).map_err(|e| parse_error(&path, e.line(), e))?;
    Ok(Some(tokens))
}

fn entrain(file: &RunConfig, a: EntrainArgs) -> Result<Vec<PathBuf>, CliError> {
    let flags = vec![
        ("embeddings", a.embeddings),
        ("signer_a", a.signer_a),
        ("signer_b", a.signer_b),
        ("literal_delta_cos", flag(a.literal_delta_cos)),
        ("global_mean", flag(a.global_mean)),
    ];
    let defaults =
        [("embeddings", ""), ("signer_a", ""), ("signer_b", ""), ("literal_delta_cos", "false"), ("global_mean", "false")];
    let mut run = Run::new(file, &defaults, &["embeddings"], flags, &a.out_dir)?;
    let config = EntrainConfig {
        delta_mode: if run.settings.flag("literal_delta_cos")? { DeltaCosMode::Literal } else { DeltaCosMode::CrossSigner },
        mean_scope: if run.settings.flag("global_mean")? { MeanScope::Global } else { MeanScope::PerGloss },
    };
    let tokens = load_embeddings(&mut run, "embeddings")?.ok_or_else(|| CliError::new("config", "`embeddings` is required"))?;
    let mut signers: Vec<&str> = tokens.iter().map(|t| t.signer.as_str()).collect();
    signers.sort_unstable();
    signers.dedup();
    let pick = |key: &str, idx: usize| -> Result<String, CliError> {
        match run.settings.get(key) {
            Some(s) if !s.is_empty() => Ok(s.to_owned()),
            _ if signers.len() == 2 => Ok(signers[idx].to_owned()),
            _ => Err(CliError::new("config", format!("`{key}` is required when the file has {} signers", signers.len()))),
        }
    };
    let (sa, sb) = (pick("signer_a", 0)?, pick("signer_b", 1)?);
    let report = entrainment_report(&tokens, &sa, &sb, &config).map_err(|e| CliError::new("analysis", e.to_string()))?;
    run.write("entrainment.csv", |w| write_entrainment(&report, w))?;
    run.write("projection.csv", |w| write_projection(&report, w))?;
    Ok(run.written)
}

const SPOT_DEFAULTS: &[(&str, &str)] = &[
    ("annotations", ""),
    ("keypoints", ""),
    ("query_embeddings", ""),
    ("window_embeddings", ""),
    ("window_ms", "500"),
    ("stride_ms", "500"),
    ("iou_threshold", "0.3"),
    ("ks", "10,50"),
    ("resample", "16"),
    ("confidence_floor", "0.5"),
    ("pooled_mrr", "false"),
    ("model", ""),
];

fn spot(file: &RunConfig, a: SpotArgs) -> Result<Vec<PathBuf>, CliError> {
    let flags = vec![
        ("annotations", a.annotations),
        ("keypoints", a.keypoints),
        ("query_embeddings", a.query_embeddings),
        ("window_embeddings", a.window_embeddings),
        ("window_ms", a.window_ms),
        ("stride_ms", a.stride_ms),
        ("iou_threshold", a.iou_threshold),
        ("ks", a.ks),
        ("resample", a.resample),
        ("confidence_floor", a.confidence_floor),
        ("pooled_mrr", flag(a.pooled_mrr)),
        ("model", a.model),
    ];
    let mut run = Run::new(
        file,
        SPOT_DEFAULTS,
        &["annotations", "keypoints", "query_embeddings", "window_embeddings"],
        flags,
        &a.out_dir,
    )?;
    let s = &run.settings;
    let score = ScoreParams { ks: s.list("ks")?, iou_threshold: s.parse_value("iou_threshold")? };
    if score.ks.is_empty() {
        return Err(CliError::new("config", "`ks` must list at least one cutoff"));
    }
    let (width, stride): (f64, f64) = (s.parse_value("window_ms")?, s.parse_value("stride_ms")?);
    let embed = EmbedParams {
        resample: s.parse_value("resample")?,
        confidence_floor: s.parse_value("confidence_floor")?,
        ..EmbedParams::default()
    };
    let pooling = if s.flag("pooled_mrr")? { MrrPooling::Pooled } else { MrrPooling::PerQuery };
    let model_label = s.get("model").unwrap_or("").to_owned();
    let external = run.path("window_embeddings")?.is_some() || run.path("query_embeddings")?.is_some();
    let instances = load_annotations(&mut run)?;
    let analysis = |e: crate::spotter::SpotError| CliError::new(if e == crate::spotter::SpotError::NoQueries { "no_queries" } else { "analysis" }, e.to_string());

    let mut reports = Vec::new();
    if external {
        let queries = load_embeddings(&mut run, "query_embeddings")?.unwrap_or_default();
        let windows = load_embeddings(&mut run, "window_embeddings")?
            .ok_or_else(|| CliError::new("config", "`window_embeddings` is required with `query_embeddings`"))?;
        let model = if model_label.is_empty() { "external".to_owned() } else { model_label };
        let mut by_signer: BTreeMap<String, Vec<Window>> = BTreeMap::new();
        for t in windows {
            by_signer
                .entry(t.signer)
                .or_default()
                .push(Window { interval: t.interval, embedding: Embedding::Vector(t.vector) });
        }
        for (signer, mut wins) in by_signer {
            wins.sort_by(|x, y| x.interval.start_ms().total_cmp(&y.interval.start_ms()));
            let mut qs = Vec::new();
            for q in &queries {
                let truth: Vec<_> = instances
                    .iter()
                    .filter(|i| i.signer == signer && i.gloss == q.gloss && i.condition != Condition::Vocabulary)
                    .map(|i| i.interval)
                    .collect();
                let score = rank_and_score(&q.vector, &wins, &truth, &score).map_err(analysis)?;
                qs.push(QueryReport { gloss: q.gloss.clone(), signer: q.signer.clone(), score });
            }
            reports.push(SpottingReport { input: signer, model: model.clone(), queries: qs });
        }
    } else {
        let recordings = load_keypoints(&mut run)?;
        let model = if model_label.is_empty() { "kinematic".to_owned() } else { model_label };
        let mut searched: Vec<(String, String)> = instances
            .iter()
            .filter(|i| i.condition != Condition::Vocabulary)
            .map(|i| (i.signer.clone(), i.session.clone()))
            .filter(|k| recordings.contains_key(k))
            .collect();
        searched.sort();
        searched.dedup();
        for (signer, session) in searched {
            let seq = &recordings[&(signer.clone(), session.clone())];
            let windows = embed_windows(seq, width, stride, &embed).map_err(analysis)?;
            let queries: Vec<&SignInstance> = instances
                .iter()
                .filter(|i| i.signer == signer && i.condition == Condition::Vocabulary)
                .filter(|i| recordings.contains_key(&(i.signer.clone(), i.session.clone())))
                .collect();
            let mut qs = Vec::new();
            for q in queries {
                let qseq = &recordings[&(q.signer.clone(), q.session.clone())];
                let Embedding::Vector(qv) = kinematic_embed(qseq, &q.interval, &embed).map_err(analysis)? else {
                    continue;
                };
                let truth: Vec<_> = instances
                    .iter()
                    .filter(|i| i.signer == signer && i.session == session && i.gloss == q.gloss)
                    .map(|i| i.interval)
                    .collect();
                let score = rank_and_score(&qv, &windows, &truth, &score).map_err(analysis)?;
                qs.push(QueryReport { gloss: q.gloss.clone(), signer: q.signer.clone(), score });
            }
            reports.push(SpottingReport { input: format!("{signer}/{session}"), model: model.clone(), queries: qs });
        }
    }
    reports.retain(|r| !r.queries.is_empty());
    if reports.is_empty() {
        return Err(analysis(crate::spotter::SpotError::NoQueries));
    }
    let rows: Vec<SpottingRow> = reports.iter().map(|r| r.summary(pooling)).collect::<Result<_, _>>().map_err(analysis)?;
    let ks = score.ks.clone();
    run.write("spotting.csv", |w| write_spotting_table(&rows, &ks, w))?;
    run.write("spotting_queries.csv", |w| reports.iter().enumerate().try_for_each(|(i, r)| {
        let mut buf = Vec::new();
        write_query_scores(r, &mut buf)?;
        let text = String::from_utf8(buf).expect("utf-8");
        let body = if i == 0 { text.as_str() } else { text.split_once('\n').map_or("", |x| x.1) };
        w.write_all(body.as_bytes())
    }))?;
    run.write("spotting_rankings.csv", |w| reports.iter().enumerate().try_for_each(|(i, r)| {
        let mut buf = Vec::new();
        write_rankings(r, &mut buf)?;
        let text = String::from_utf8(buf).expect("utf-8");
        if i == 0 {
            w.write_all(b"input,")?;
            let (head, rest) = text.split_once('\n').unwrap_or((&text, ""));
            writeln!(w, "{head}")?;
            rest.lines().try_for_each(|l| writeln!(w, "{},{l}", r.input))
        } else {
            text.lines().skip(1).try_for_each(|l| writeln!(w, "{},{l}", r.input))
        }
    }))?;
    Ok(run.written)
}

/// Data rows of a table file, skipping `#` lines and the header.
fn table_rows(text: &str) -> Vec<Vec<&str>> {
    text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()).skip(1).map(|l| l.split(',').collect()).collect()
}

fn header_of(text: &str) -> Vec<&str> {
    text.lines().find(|l| !l.starts_with('#')).map(|l| l.split(',').collect()).unwrap_or_default()
}

fn aligned(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r.iter().enumerate().map(|(i, s)| format!("{s:<w$}", w = widths[i])).collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn report(file: &RunConfig, a: ReportArgs) -> Result<Vec<PathBuf>, CliError> {
    let flags = vec![
        ("reduction", a.reduction),
        ("spotting", a.spotting),
        ("entrainment", a.entrainment),
        ("vocab_comparison", a.vocab_comparison),
    ];
    let keys: &'static [&'static str] = &["reduction", "spotting", "entrainment", "vocab_comparison"];
    let defaults: Vec<(&str, &str)> = keys.iter().map(|k| (*k, "")).collect();
    let mut run = Run::new(file, &defaults, keys, flags, &a.out_dir)?;
    let mut text = String::new();

    if let Some(path) = run.path("reduction")? {
        let bytes = run.read("reduction", &path)?;
        let tables = read_reduction_tables(&bytes[..]).map_err(|e| {
            let line = match &e {
                crate::reduction::ReductionTableError::Row { line, .. } if *line > 0 => Some(*line),
                _ => None,
            };
            parse_error(&path, line, e)
        })?;
        let _ = writeln!(text, "Relative change across repeated mentions (Spearman rho; * p<.05, ** p<.01, *** p<.001)");
        let mut signers: Vec<&str> = tables.iter().map(|(s, _)| s.as_str()).collect();
        signers.dedup();
        for signer in signers {
            let ts: Vec<&ReductionTable> = tables.iter().filter(|(s, _)| s == signer).map(|(_, t)| t).collect();
            let _ = writeln!(text, "\nSigner {signer}");
            text.push_str(&render_reduction_grid(&ts));
        }
    }
    if let Some(path) = run.path("vocab_comparison")? {
        let bytes = run.read("vocab_comparison", &path)?;
        let body = String::from_utf8_lossy(&bytes).into_owned();
        let mut rows = vec![["signer", "group", "metric", "reduction %", "p"].map(String::from).to_vec()];
        for r in table_rows(&body).into_iter().filter(|r| r.len() == 9 && r[3] == "1") {
            let p: Option<f64> = r[8].parse().ok();
            let pct: f64 = r[6].parse().unwrap_or(f64::NAN);
            rows.push(vec![
                r[0].to_owned(),
                r[1].to_owned(),
                r[2].to_owned(),
                format!("{pct:.1}"),
                p.map_or("-".to_owned(), |p| format!("{p:.4}{}", significance_stars(p))),
            ]);
        }
        let _ = writeln!(text, "\nDialogue versus citation form (dominant hand and duration)");
        text.push_str(&aligned(&rows));
    }
    if let Some(path) = run.path("spotting")? {
        let bytes = run.read("spotting", &path)?;
        let body = String::from_utf8_lossy(&bytes).into_owned();
        let mut rows = vec![header_of(&body).into_iter().map(String::from).collect::<Vec<_>>()];
        rows.extend(table_rows(&body).into_iter().map(|r| r.into_iter().map(String::from).collect()));
        let _ = writeln!(text, "\nRetrieval performance");
        text.push_str(&aligned(&rows));
    }
    if let Some(path) = run.path("entrainment")? {
        let bytes = run.read("entrainment", &path)?;
        let body = String::from_utf8_lossy(&bytes).into_owned();
        let mut rows = vec![["gloss", "delta_cos", "slope a->b", "slope b->a", "selfsim a", "selfsim b"].map(String::from).to_vec()];
        let fmt = |s: &str| s.parse::<f64>().map_or(s.to_owned(), |v| format!("{v:+.3}"));
        for r in table_rows(&body).into_iter().filter(|r| r.len() == 10) {
            rows.push(vec![r[0].to_owned(), fmt(r[5]), fmt(r[6]), fmt(r[7]), fmt(r[8]), fmt(r[9])]);
        }
        let _ = writeln!(text, "\nEntrainment");
        text.push_str(&aligned(&rows));
    }
    if text.is_empty() {
        return Err(CliError::new("config", "report needs at least one of reduction, vocab_comparison, spotting, entrainment"));
    }
    run.write("report.txt", |w| w.write_all(text.as_bytes()))?;
    Ok(run.written)
}
