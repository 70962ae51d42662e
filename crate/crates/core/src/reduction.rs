//! Vocabulary-baseline deltas and repeated-mention relative-change tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use crate::annotation::{BaselinePair, Condition, SignInstance};
use crate::kinemetrics::{Metric, MetricRecord};
use crate::skeleton::JointGroup;
use crate::stats::{
    paired_t_test, percent_change, significance_stars, signed_rank_test, spearman_with_tolerance, ChangeDirection,
    CorrelationResult, PValueMethod, StatsError,
};

/// Identity of a token independent of its metric records.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct TokenKey {
    signer: String,
    gloss: String,
    session: String,
    condition: Condition,
    variation: String,
    start_bits: u64,
    end_bits: u64,
}

impl TokenKey {
    fn of(inst: &SignInstance) -> Self {
        Self {
            signer: inst.signer.clone(),
            gloss: inst.gloss.clone(),
            session: inst.session.clone(),
            condition: inst.condition,
            variation: inst.variation.clone(),
            start_bits: inst.interval.start_ms().to_bits(),
            end_bits: inst.interval.end_ms().to_bits(),
        }
    }
}

/// Dialogue-minus-vocabulary differences of one metric across mentions.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSeries {
    pub signer: String,
    pub session: String,
    pub gloss: String,
    pub group: JointGroup,
    pub metric: Metric,
    /// `(mention_index, delta)`, mention indices strictly increasing.
    pub points: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanPoint {
    pub mention_index: u32,
    pub mean: f64,
    /// Sample standard error; 0 when only one gloss contributes.
    pub std_error: f64,
    pub n: usize,
}

/// Mean delta per mention across all glosses of one signer.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanDeltaSeries {
    pub signer: String,
    pub group: JointGroup,
    pub metric: Metric,
    pub points: Vec<MeanPoint>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeltaAnalysis {
    pub series: Vec<DeltaSeries>,
    pub means: Vec<MeanDeltaSeries>,
    pub warnings: Vec<String>,
}

fn index_records(records: &[MetricRecord]) -> BTreeMap<(TokenKey, JointGroup), &MetricRecord> {
    records.iter().map(|r| ((TokenKey::of(&r.instance), r.group), r)).collect()
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

type SeriesKey = (String, String, String, JointGroup, Metric);

/// Per-mention differences between dialogue tokens and their vocabulary baselines.
///
/// Negative deltas mean the dialogue production is smaller, shorter or
/// lower than the citation form.
pub fn vocab_delta_series(records: &[MetricRecord], pairs: &[BaselinePair]) -> DeltaAnalysis {
    let index = index_records(records);
    let mut series: BTreeMap<SeriesKey, Vec<(u32, f64)>> = BTreeMap::new();
    let mut missing = 0usize;

    for pair in pairs {
        let dkey = TokenKey::of(&pair.dialogue_token);
        let vkey = TokenKey::of(&pair.vocab_token);
        for group in JointGroup::TABLE_ORDER {
            let (Some(d), Some(v)) = (index.get(&(dkey.clone(), group)), index.get(&(vkey.clone(), group))) else {
                if index.contains_key(&(dkey.clone(), group)) {
                    missing += 1;
                }
                continue;
            };
            for metric in Metric::ALL {
                series
                    .entry((d.instance.signer.clone(), d.instance.session.clone(), d.instance.gloss.clone(), group, metric))
                    .or_default()
                    .push((d.mention_index, d.get(metric) - v.get(metric)));
            }
        }
    }

    let mut warnings = Vec::new();
    if pairs.is_empty() {
        warnings.push("no dialogue gloss has a vocabulary baseline".to_owned());
    }
    if missing > 0 {
        warnings.push(format!("{missing} dialogue records had no vocabulary record for the same group"));
    }

    let series: Vec<DeltaSeries> = series
        .into_iter()
        .map(|((signer, session, gloss, group, metric), mut points)| {
            points.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
            points.dedup_by_key(|p| p.0);
            DeltaSeries { signer, session, gloss, group, metric, points }
        })
        .collect();

    let mut pooled: BTreeMap<(String, JointGroup, Metric), BTreeMap<u32, Vec<f64>>> = BTreeMap::new();
    for s in &series {
        let by_mention = pooled.entry((s.signer.clone(), s.group, s.metric)).or_default();
        for (k, d) in &s.points {
            by_mention.entry(*k).or_default().push(*d);
        }
    }
    let means = pooled
        .into_iter()
        .map(|((signer, group, metric), by_mention)| MeanDeltaSeries {
            signer,
            group,
            metric,
            points: by_mention
                .into_iter()
                .map(|(mention_index, values)| {
                    let (mean, std_error) = mean_and_se(&values);
                    MeanPoint { mention_index, mean, std_error, n: values.len() }
                })
                .collect(),
        })
        .collect();

    DeltaAnalysis { series, means, warnings }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairedTest {
    #[default]
    SignedRank,
    PairedT,
}

impl PairedTest {
    pub fn as_str(self) -> &'static str {
        match self {
            PairedTest::SignedRank => "wilcoxon_signed_rank",
            PairedTest::PairedT => "paired_t",
        }
    }
}

/// Dialogue versus vocabulary for one signer, group and metric.
#[derive(Debug, Clone, PartialEq)]
pub struct VocabComparison {
    pub signer: String,
    pub group: JointGroup,
    pub metric: Metric,
    /// Dialogue tokens compared.
    pub tokens: usize,
    /// Mean over tokens of the percent reduction from the vocabulary value.
    pub mean_percent_reduction: f64,
    /// Per-gloss `(vocabulary, mean dialogue)` values fed to the test.
    pub gloss_pairs: Vec<(String, f64, f64)>,
    pub test: PairedTest,
    pub p_value: Result<f64, StatsError>,
}

/// Percent reduction relative to vocabulary and a paired test over glosses.
pub fn compare_with_vocab(records: &[MetricRecord], pairs: &[BaselinePair], test: PairedTest) -> Vec<VocabComparison> {
    let index = index_records(records);
    type Acc = (Vec<f64>, BTreeMap<String, (f64, Vec<f64>)>);
    let mut acc: BTreeMap<(String, JointGroup, Metric), Acc> = BTreeMap::new();

    for pair in pairs {
        let dkey = TokenKey::of(&pair.dialogue_token);
        let vkey = TokenKey::of(&pair.vocab_token);
        for group in JointGroup::TABLE_ORDER {
            let (Some(d), Some(v)) = (index.get(&(dkey.clone(), group)), index.get(&(vkey.clone(), group))) else {
                continue;
            };
            for metric in Metric::ALL {
                let entry = acc.entry((d.instance.signer.clone(), group, metric)).or_default();
                let (dv, vv) = (d.get(metric), v.get(metric));
                if let Ok(pct) = percent_change(vv, dv, ChangeDirection::Reduction) {
                    entry.0.push(pct);
                }
                entry.1.entry(d.instance.gloss.clone()).or_insert_with(|| (vv, Vec::new())).1.push(dv);
            }
        }
    }

    acc.into_iter()
        .map(|((signer, group, metric), (pcts, glosses))| {
            let gloss_pairs: Vec<(String, f64, f64)> = glosses
                .into_iter()
                .map(|(g, (v, ds))| {
                    let mean = ds.iter().sum::<f64>() / ds.len() as f64;
                    (g, v, mean)
                })
                .collect();
            let tuples: Vec<(f64, f64)> = gloss_pairs.iter().map(|(_, v, d)| (*v, *d)).collect();
            let p_value = match test {
                PairedTest::SignedRank => signed_rank_test(&tuples).map(|r| r.p_value),
                PairedTest::PairedT => paired_t_test(&tuples),
            };
            let mean_percent_reduction =
                if pcts.is_empty() { f64::NAN } else { pcts.iter().sum::<f64>() / pcts.len() as f64 };
            VocabComparison { signer, group, metric, tokens: pcts.len(), mean_percent_reduction, gloss_pairs, test, p_value }
        })
        .collect()
}

/// A column of the relative-change table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ReductionColumn {
    SpatialReduction,
    PathReduction,
    VelocityIncrease,
}

impl ReductionColumn {
    pub const ALL: [ReductionColumn; 3] =
        [ReductionColumn::SpatialReduction, ReductionColumn::PathReduction, ReductionColumn::VelocityIncrease];

    pub fn metric(self) -> Metric {
        match self {
            ReductionColumn::SpatialReduction => Metric::SpatialExtent,
            ReductionColumn::PathReduction => Metric::PathLength,
            ReductionColumn::VelocityIncrease => Metric::AvgVelocity,
        }
    }

    pub fn direction(self) -> ChangeDirection {
        match self {
            ReductionColumn::VelocityIncrease => ChangeDirection::Increase,
            _ => ChangeDirection::Reduction,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ReductionColumn::SpatialReduction => "spatial_reduction",
            ReductionColumn::PathReduction => "path_reduction",
            ReductionColumn::VelocityIncrease => "velocity_increase",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            ReductionColumn::SpatialReduction => "Spatial Reduction",
            ReductionColumn::PathReduction => "Path Reduction",
            ReductionColumn::VelocityIncrease => "Velocity Increase",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    /// One Spearman test over all glosses' `(mention, change)` pairs.
    #[default]
    Pooled,
    /// Mean of per-gloss Spearman coefficients.
    PerGloss,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReductionConfig {
    pub min_tokens: usize,
    /// Add `(first mention, 0%)` to the pool.
    pub include_first_mention: bool,
    pub pooling: Pooling,
    /// Percent changes closer than this rank as ties.
    pub tie_tolerance: f64,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        Self { min_tokens: 2, include_first_mention: false, pooling: Pooling::Pooled, tie_tolerance: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellValue {
    Correlation { result: CorrelationResult, mean_change: f64 },
    MeanRho { rho: f64, glosses: usize, mean_change: f64 },
    /// Enough pairs but no rank variance.
    Degenerate { n: usize, mean_change: f64 },
    /// Fewer than three pooled pairs.
    Unavailable { n: usize },
}

impl CellValue {
    pub fn rho(&self) -> Option<f64> {
        match self {
            CellValue::Correlation { result, .. } => Some(result.rho),
            CellValue::MeanRho { rho, .. } => Some(*rho),
            _ => None,
        }
    }

    pub fn p_value(&self) -> Option<f64> {
        match self {
            CellValue::Correlation { result, .. } => Some(result.p_value),
            _ => None,
        }
    }

    /// Mean pooled percent change, when any pair exists.
    pub fn mean_change(&self) -> Option<f64> {
        match self {
            CellValue::Correlation { mean_change, .. }
            | CellValue::MeanRho { mean_change, .. }
            | CellValue::Degenerate { mean_change, .. } => Some(*mean_change),
            CellValue::Unavailable { .. } => None,
        }
    }

    pub fn status(&self) -> &'static str {
        match self {
            CellValue::Correlation { .. } => "ok",
            CellValue::MeanRho { .. } => "per_gloss",
            CellValue::Degenerate { .. } => "degenerate",
            CellValue::Unavailable { .. } => "unavailable",
        }
    }

    pub fn is_computable(&self) -> bool {
        matches!(self, CellValue::Correlation { .. } | CellValue::MeanRho { .. })
    }

    /// Grid text such as `+0.66***`.
    pub fn render(&self) -> String {
        match self {
            CellValue::Correlation { result, .. } => {
                format!("{:+.2}{}", result.rho, significance_stars(result.p_value))
            }
            CellValue::MeanRho { rho, .. } => format!("{rho:+.2}~"),
            CellValue::Degenerate { .. } => "0var".to_owned(),
            CellValue::Unavailable { .. } => "(-)".to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableCell {
    pub group: JointGroup,
    pub column: ReductionColumn,
    pub value: CellValue,
}

/// Relative-change correlations for one condition, rows in display order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionTable {
    pub condition: Condition,
    pub cells: Vec<TableCell>,
    /// Group-independent duration reduction.
    pub duration: CellValue,
}

impl ReductionTable {
    pub fn cell(&self, group: JointGroup, column: ReductionColumn) -> &CellValue {
        &self
            .cells
            .iter()
            .find(|c| c.group == group && c.column == column)
            .expect("table holds every group and column")
            .value
    }
}

/// Percent changes of each token relative to the earliest mention, per sequence.
fn change_sequences<'a, I>(records: I, metric: Metric, direction: ChangeDirection, config: &ReductionConfig) -> Vec<Vec<(f64, f64)>>
where
    I: Iterator<Item = &'a MetricRecord>,
{
    let mut sequences: BTreeMap<(String, String, String), Vec<&MetricRecord>> = BTreeMap::new();
    for r in records {
        let i = &r.instance;
        sequences.entry((i.signer.clone(), i.session.clone(), i.gloss.clone())).or_default().push(r);
    }
    let mut out = Vec::new();
    for mut seq in sequences.into_values() {
        if seq.len() < config.min_tokens {
            continue;
        }
        seq.sort_by_key(|r| r.mention_index);
        let first = seq[0];
        if first.get(metric) == 0.0 {
            continue;
        }
        let mut pairs = Vec::new();
        if config.include_first_mention {
            pairs.push((first.mention_index as f64, 0.0));
        }
        for r in &seq[1..] {
            let pct = percent_change(first.get(metric), r.get(metric), direction).expect("baseline checked non-zero");
            pairs.push((r.mention_index as f64, pct));
        }
        out.push(pairs);
    }
    out
}

fn cell_from_sequences(sequences: &[Vec<(f64, f64)>], config: &ReductionConfig) -> CellValue {
    let pooled: Vec<(f64, f64)> = sequences.iter().flatten().copied().collect();
    let n = pooled.len();
    if n < 3 {
        return CellValue::Unavailable { n };
    }
    let mean_change = pooled.iter().map(|p| p.1).sum::<f64>() / n as f64;
    match config.pooling {
        Pooling::Pooled => {
            let (xs, ys): (Vec<f64>, Vec<f64>) = pooled.into_iter().unzip();
            match spearman_with_tolerance(&xs, &ys, config.tie_tolerance) {
                Ok(result) => CellValue::Correlation { result, mean_change },
                Err(_) => CellValue::Degenerate { n, mean_change },
            }
        }
        Pooling::PerGloss => {
            let rhos: Vec<f64> = sequences
                .iter()
                .filter_map(|s| {
                    let (xs, ys): (Vec<f64>, Vec<f64>) = s.iter().copied().unzip();
                    spearman_with_tolerance(&xs, &ys, config.tie_tolerance).ok().map(|r| r.rho)
                })
                .collect();
            if rhos.is_empty() {
                CellValue::Degenerate { n, mean_change }
            } else {
                let rho = rhos.iter().sum::<f64>() / rhos.len() as f64;
                CellValue::MeanRho { rho, glosses: rhos.len(), mean_change }
            }
        }
    }
}

/// Spearman correlation between mention index and percent change, per joint group.
///
/// Only records of `condition` are used. Each sequence is normalized by its
/// earliest mention, so glosses with different magnitudes pool on a common
/// scale. Callers analysing several signers should pass one signer at a time.
pub fn repeated_mention_correlations(
    records: &[MetricRecord],
    condition: Condition,
    config: &ReductionConfig,
) -> ReductionTable {
    let in_condition = || records.iter().filter(|r| r.instance.condition == condition);
    let mut cells = Vec::with_capacity(24);
    for group in JointGroup::TABLE_ORDER {
        for column in ReductionColumn::ALL {
            let seqs = change_sequences(
                in_condition().filter(|r| r.group == group),
                column.metric(),
                column.direction(),
                config,
            );
            cells.push(TableCell { group, column, value: cell_from_sequences(&seqs, config) });
        }
    }

    // Duration does not depend on the group: keep one record per token.
    let mut seen = std::collections::BTreeSet::new();
    let per_token: Vec<&MetricRecord> = in_condition().filter(|r| seen.insert(TokenKey::of(&r.instance))).collect();
    let seqs = change_sequences(per_token.into_iter(), Metric::Duration, ChangeDirection::Reduction, config);
    let duration = cell_from_sequences(&seqs, config);

    ReductionTable { condition, cells, duration }
}

pub const REDUCTION_TABLE_HEADER: &str = "signer,condition,group,column,status,rho,p_value,n,method,mean_change";

fn write_cell_row<W: Write>(w: &mut W, signer: &str, condition: Condition, group: &str, column: &str, v: &CellValue) -> io::Result<()> {
    let (rho, p, n, method) = match v {
        CellValue::Correlation { result, .. } => (
            result.rho.to_string(),
            result.p_value.to_string(),
            result.n,
            result.method.as_str(),
        ),
        CellValue::MeanRho { rho, glosses, .. } => (rho.to_string(), String::new(), *glosses, "per_gloss_mean"),
        CellValue::Degenerate { n, .. } => (String::new(), String::new(), *n, ""),
        CellValue::Unavailable { n } => (String::new(), String::new(), *n, ""),
    };
    let mean = v.mean_change().map(|m| m.to_string()).unwrap_or_default();
    writeln!(w, "{signer},{condition},{group},{column},{},{rho},{p},{n},{method},{mean}", v.status())
}

/// Machine-readable form of labelled tables; duration rows use group `-`.
pub fn write_reduction_tables<W: Write>(tables: &[(String, ReductionTable)], mut w: W) -> io::Result<()> {
    writeln!(w, "{REDUCTION_TABLE_HEADER}")?;
    for (signer, table) in tables {
        for c in &table.cells {
            write_cell_row(&mut w, signer, table.condition, &c.group.label(), c.column.as_str(), &c.value)?;
        }
        write_cell_row(&mut w, signer, table.condition, "-", "duration_reduction", &table.duration)?;
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum ReductionTableError {
    #[error("read failed: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {reason}")]
    Row { line: usize, reason: String },
}

fn parse_cell(f: &[&str]) -> Result<CellValue, String> {
    let num = |s: &str| s.parse::<f64>().map_err(|_| format!("bad number `{s}`"));
    let n: usize = f[7].parse().map_err(|_| format!("bad count `{}`", f[7]))?;
    let mean = || num(f[9]);
    Ok(match f[4] {
        "ok" => {
            let method = PValueMethod::from_label(f[8]).ok_or_else(|| format!("unknown method `{}`", f[8]))?;
            CellValue::Correlation {
                result: CorrelationResult { rho: num(f[5])?, p_value: num(f[6])?, n, method },
                mean_change: mean()?,
            }
        }
        "per_gloss" => CellValue::MeanRho { rho: num(f[5])?, glosses: n, mean_change: mean()? },
        "degenerate" => CellValue::Degenerate { n, mean_change: mean()? },
        "unavailable" => CellValue::Unavailable { n },
        other => return Err(format!("unknown status `{other}`")),
    })
}

/// Inverse of [`write_reduction_tables`]; `#` lines are skipped.
pub fn read_reduction_tables<R: BufRead>(reader: R) -> Result<Vec<(String, ReductionTable)>, ReductionTableError> {
    type Partial = (Vec<TableCell>, Option<CellValue>);
    let mut tables: Vec<((String, Condition), Partial)> = Vec::new();
    let mut seen_header = false;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| ReductionTableError::Row { line: line_no, reason };
        if !seen_header {
            if line != REDUCTION_TABLE_HEADER {
                return Err(err(format!("expected header `{REDUCTION_TABLE_HEADER}`")));
            }
            seen_header = true;
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(err(format!("expected 10 fields, found {}", f.len())));
        }
        let condition: Condition = f[1].parse().map_err(|_| err(format!("unknown condition `{}`", f[1])))?;
        let key = (f[0].to_owned(), condition);
        let pos = match tables.iter().position(|(k, _)| *k == key) {
            Some(p) => p,
            None => {
                tables.push((key, (Vec::new(), None)));
                tables.len() - 1
            }
        };
        let value = parse_cell(&f).map_err(err)?;
        let entry = &mut tables[pos].1;
        if f[2] == "-" {
            entry.1 = Some(value);
        } else {
            let group: JointGroup = f[2].parse().map_err(|_| err(format!("unknown group `{}`", f[2])))?;
            let column = ReductionColumn::ALL
                .into_iter()
                .find(|c| c.as_str() == f[3])
                .ok_or_else(|| err(format!("unknown column `{}`", f[3])))?;
            entry.0.push(TableCell { group, column, value });
        }
    }
    tables
        .into_iter()
        .map(|((signer, condition), (cells, duration))| {
            let complete = JointGroup::TABLE_ORDER
                .iter()
                .all(|g| ReductionColumn::ALL.iter().all(|c| cells.iter().any(|x| x.group == *g && x.column == *c)));
            match (complete, duration) {
                (true, Some(duration)) => Ok((signer, ReductionTable { condition, cells, duration })),
                _ => Err(ReductionTableError::Row { line: 0, reason: format!("table for {signer}/{condition} is incomplete") }),
            }
        })
        .collect()
}

/// Text grid: one row per joint group, one sub-column per condition under
/// each metric column. Interpreter values are parenthesized.
pub fn render_reduction_grid(tables: &[&ReductionTable]) -> String {
    const W: usize = 11;
    let mut out = String::new();
    let _ = write!(out, "{:<13}", "Joint");
    let span = (W * tables.len()).max(W + 8);
    let cell_w = span / tables.len().max(1);
    for column in ReductionColumn::ALL {
        let _ = write!(out, "| {:<span$}", column.title());
    }
    out.push('\n');
    let _ = write!(out, "{:<13}", "");
    for _ in ReductionColumn::ALL {
        out.push_str("| ");
        for t in tables {
            let _ = write!(out, "{:<cell_w$}", t.condition.as_str());
        }
    }
    out.push('\n');
    let wrap = |t: &ReductionTable, s: String| {
        if t.condition == Condition::Interpreter && s != "(-)" {
            format!("({s})")
        } else {
            s
        }
    };
    for group in JointGroup::TABLE_ORDER {
        let _ = write!(out, "{:<13}", group.label());
        for column in ReductionColumn::ALL {
            out.push_str("| ");
            for t in tables {
                let _ = write!(out, "{:<cell_w$}", wrap(t, t.cell(group, column).render()));
            }
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<13}", "Duration");
    out.push_str("| ");
    for t in tables {
        let _ = write!(out, "{:<cell_w$}", wrap(t, t.duration.render()));
    }
    out.push('\n');
    out
}
