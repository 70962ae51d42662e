//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use signkin::annotation::{match_vocab_baseline, mention_indices, Condition, GroupingMode, SignInstance};
use signkin::entrain::{cross_slope, delta_cos, projection_similarity, DeltaCosMode};
use signkin::interval::Interval;
use signkin::kinemetrics::{
    average_velocity, compute_record, mean_vertical, path_length, spatial_extent, MetricConfig, MetricRecord, Point3,
};
use signkin::reduction::{
    compare_with_vocab, repeated_mention_correlations, vocab_delta_series, PairedTest, ReductionColumn, ReductionConfig,
};
use signkin::skeleton::{GroupKind, JointGroup, Side, UpAxis};
use signkin::spotter::{
    embed_windows, kinematic_embed, make_windows, rank_and_score, EmbedParams, ScoreParams, Window, DEFAULT_KS,
    DEFAULT_STRIDE_MS, DEFAULT_WINDOW_MS,
};
use signkin::stats::{average_ranks, signed_rank_test, spearman, PValueMethod};
use signkin::synth::{generate_session, SynthSession, SynthSpec, SIGNER_A, SIGNER_B};

type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close_rel(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

fn within(elapsed: Duration, limit_s: f64, what: &str) -> Check {
    ensure(elapsed.as_secs_f64() < limit_s, || format!("{what} took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64()))
}

fn random_trajectory(rng: &mut ChaCha8Rng, three_d: bool) -> Vec<Point3> {
    let n = rng.gen_range(3..=200);
    (0..n)
        .map(|_| {
            let z = if three_d { rng.gen_range(-2.0..2.0) } else { 0.0 };
            [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), z]
        })
        .collect()
}

fn oracle_extent(traj: &[Point3]) -> f64 {
    (0..3)
        .map(|d| {
            let vals: Vec<f64> = traj.iter().map(|p| p[d]).sorted_by(f64::total_cmp).collect();
            (vals[vals.len() - 1] - vals[0]).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

fn oracle_path(traj: &[Point3]) -> f64 {
    let mut total = 0.0;
    for i in 1..traj.len() {
        let (a, b) = (traj[i - 1], traj[i]);
        total += ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2) + (b[2] - a[2]).powi(2)).sqrt();
    }
    total
}

fn kinematics_oracle() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..1000 {
        let three_d = case % 2 == 0;
        let traj = random_trajectory(&mut rng, three_d);
        let duration = rng.gen_range(0.05..3.0);
        let up = if three_d { UpAxis::PosY } else { UpAxis::NegY };
        let sign = if three_d { 1.0 } else { -1.0 };
        let mv = traj.iter().map(|p| sign * p[1]).sum::<f64>() / traj.len() as f64;
        let got = [
            spatial_extent(&traj).unwrap(),
            path_length(&traj).unwrap(),
            average_velocity(&traj, duration).unwrap(),
            mean_vertical(&traj, up).unwrap(),
        ];
        let want = [oracle_extent(&traj), oracle_path(&traj), oracle_path(&traj) / duration, mv];
        for (g, w) in got.iter().zip(&want) {
            ensure(close_rel(*g, *w, 1e-9), || format!("case {case}: {g} vs oracle {w}"))?;
        }
    }
    within(started.elapsed(), 5.0, "1000 trajectories")
}

fn metric_invariants() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..500 {
        let traj = random_trajectory(&mut rng, true);
        let offset = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
        let s = rng.gen_range(0.1..10.0);
        let duration = rng.gen_range(0.05..3.0);
        let moved: Vec<Point3> = traj.iter().map(|p| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]]).collect();
        let scaled: Vec<Point3> = traj.iter().map(|p| p.map(|c| c * s)).collect();
        let reversed: Vec<Point3> = traj.iter().rev().copied().collect();

        let (e, p) = (spatial_extent(&traj).unwrap(), path_length(&traj).unwrap());
        let v = average_velocity(&traj, duration).unwrap();
        let mv = mean_vertical(&traj, UpAxis::PosY).unwrap();
        let checks = [
            ("translated extent", spatial_extent(&moved).unwrap(), e),
            ("translated path", path_length(&moved).unwrap(), p),
            ("translated velocity", average_velocity(&moved, duration).unwrap(), v),
            ("translated vertical", mean_vertical(&moved, UpAxis::PosY).unwrap(), mv + offset[1]),
            ("scaled extent", spatial_extent(&scaled).unwrap(), s * e),
            ("scaled path", path_length(&scaled).unwrap(), s * p),
            ("reversed extent", spatial_extent(&reversed).unwrap(), e),
            ("reversed path", path_length(&reversed).unwrap(), p),
            ("velocity times duration", v * duration, p),
        ];
        for (name, got, want) in checks {
            ensure(close_rel(got, want, 1e-9), || format!("case {case}: {name} {got} vs {want}"))?;
        }
    }
    Ok(())
}

/// Doubled average ranks, which are always integers.
fn doubled_ranks(values: &[f64]) -> Vec<i64> {
    values
        .iter()
        .map(|v| {
            let less = values.iter().filter(|w| *w < v).count() as i64;
            let equal = values.iter().filter(|w| *w == v).count() as i64;
            2 * less + equal + 1
        })
        .collect()
}

fn int_cov(a: &[i64], b: &[i64]) -> i64 {
    let n = a.len() as i64;
    n * a.iter().zip(b).map(|(x, y)| x * y).sum::<i64>() - a.iter().sum::<i64>() * b.iter().sum::<i64>()
}

fn spearman_exactness() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut checked = 0;
    for n in 3..=7usize {
        for case in 0..60 {
            let tied = case % 2 == 1;
            let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
                (0..n).map(|_| if tied { rng.gen_range(0..3) as f64 } else { rng.gen_range(-10.0..10.0) }).collect()
            };
            let (x, y) = (draw(&mut rng), draw(&mut rng));
            let (a, b) = (doubled_ranks(&x), doubled_ranks(&y));
            let (caa, cbb) = (int_cov(&a, &a), int_cov(&b, &b));
            if caa == 0 || cbb == 0 {
                ensure(spearman(&x, &y).is_err(), || format!("n={n}: constant input accepted"))?;
                continue;
            }
            let observed = int_cov(&a, &b);
            let rho = observed as f64 / ((caa as f64) * (cbb as f64)).sqrt();
            let mut hits = 0usize;
            let mut total = 0usize;
            for perm in (0..n).permutations(n) {
                let pb: Vec<i64> = perm.iter().map(|&i| b[i]).collect();
                total += 1;
                if int_cov(&a, &pb).abs() >= observed.abs() {
                    hits += 1;
                }
            }
            let p = hits as f64 / total as f64;
            let got = spearman(&x, &y).map_err(|e| format!("n={n}: {e}"))?;
            ensure(got.method == PValueMethod::ExactPermutation, || format!("n={n}: method {:?}", got.method))?;
            ensure((got.rho - rho).abs() <= 1e-12, || format!("n={n}: rho {} vs oracle {rho}", got.rho))?;
            ensure(got.p_value == p, || format!("n={n}: p {} vs oracle {hits}/{total}", got.p_value))?;

            let ranks = average_ranks(&x, 0.0);
            for (r, d) in ranks.iter().zip(&a) {
                ensure((r - *d as f64 / 2.0).abs() <= 1e-12, || format!("n={n}: rank {r} vs {}", *d as f64 / 2.0))?;
            }
            checked += 1;
        }
    }
    // Ties beyond the exact range still follow the average-rank formula.
    for _ in 0..100 {
        let n = rng.gen_range(9..40);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..4) as f64).collect();
        let (a, b) = (doubled_ranks(&x), doubled_ranks(&y));
        let (caa, cbb) = (int_cov(&a, &a), int_cov(&b, &b));
        if caa == 0 || cbb == 0 {
            continue;
        }
        let rho = int_cov(&a, &b) as f64 / ((caa as f64) * (cbb as f64)).sqrt();
        let got = spearman(&x, &y).unwrap();
        ensure((got.rho - rho).abs() <= 1e-12, || format!("tied n={n}: rho {} vs {rho}", got.rho))?;
    }
    ensure(checked > 200, || format!("only {checked} exact cases"))?;
    within(started.elapsed(), 30.0, "permutation enumeration")
}

/// Metric records for every annotated token over `groups`.
fn session_records(session: &SynthSession, groups: &[JointGroup]) -> Vec<MetricRecord> {
    let mentions = mention_indices(&session.annotations, GroupingMode::BaseTerm);
    let config = MetricConfig::default();
    let mut out = Vec::new();
    for (inst, &m) in session.annotations.iter().zip(&mentions) {
        let rec = session
            .recordings
            .iter()
            .find(|r| r.signer == inst.signer && r.session == inst.session)
            .expect("recording for every annotation");
        for &group in groups {
            out.push(compute_record(&rec.sequence, inst, m, group, &config).expect("synth token is measurable"));
        }
    }
    out
}

fn reduction_pipeline() -> Check {
    let started = Instant::now();
    let spec = SynthSpec {
        glosses: 5,
        mentions: 6,
        reduction_rate: 0.1,
        weak_drop_mention: Some(3),
        ..SynthSpec::default()
    };
    let session = generate_session(&spec).map_err(|e| e.to_string())?;
    let records = session_records(&session, &JointGroup::TABLE_ORDER);
    let columns = [ReductionColumn::SpatialReduction, ReductionColumn::PathReduction];
    let kinds = [GroupKind::Fingers, GroupKind::Hand, GroupKind::Forearm, GroupKind::Arm];

    for signer in [SIGNER_A, SIGNER_B] {
        let mine: Vec<MetricRecord> = records.iter().filter(|r| r.instance.signer == signer).cloned().collect();
        let table = repeated_mention_correlations(&mine, Condition::Dialogue, &ReductionConfig::default());
        for kind in kinds {
            let right = JointGroup { kind, side: Side::Right };
            let left = JointGroup { kind, side: Side::Left };
            for column in columns {
                let cell = table.cell(right, column);
                let rho = cell.rho().ok_or_else(|| format!("{signer} {right} {column:?}: {}", cell.status()))?;
                ensure((rho - 1.0).abs() <= 1e-12, || format!("{signer} {right} {column:?}: rho {rho}"))?;
                let p = cell.p_value().unwrap_or(1.0);
                ensure(p < 0.05, || format!("{signer} {right} {column:?}: p {p}"))?;

                // Each gloss alone is small enough for the exact permutation test.
                let mut per_gloss: BTreeMap<&str, Vec<(u32, f64)>> = BTreeMap::new();
                for r in mine.iter().filter(|r| r.group == right && r.instance.condition == Condition::Dialogue) {
                    per_gloss.entry(&r.instance.gloss).or_default().push((r.mention_index, r.get(column.metric())));
                }
                for (gloss, mut seq) in per_gloss {
                    seq.sort_by_key(|s| s.0);
                    let first = seq[0].1;
                    let xs: Vec<f64> = seq[1..].iter().map(|s| s.0 as f64).collect();
                    let ys: Vec<f64> = seq[1..].iter().map(|s| 100.0 * (first - s.1) / first).collect();
                    let r = spearman(&xs, &ys).map_err(|e| e.to_string())?;
                    ensure(
                        r.method == PValueMethod::ExactPermutation && r.rho == 1.0 && r.p_value < 0.05,
                        || format!("{signer} {gloss} {right}: {r:?}"),
                    )?;
                }

                let lcell = table.cell(left, column);
                ensure(lcell.is_computable(), || format!("{signer} {left} {column:?}: {}", lcell.status()))?;
                let (lm, rm) = (lcell.mean_change().unwrap(), cell.mean_change().unwrap());
                ensure(lm > rm, || format!("{signer} {kind:?} {column:?}: left {lm} not above right {rm}"))?;
            }
        }
    }
    within(started.elapsed(), 10.0, "reduction pipeline")
}

fn duration_contract() -> Check {
    let spec = SynthSpec { glosses: 6, duration_ratio: 0.75, ..SynthSpec::default() };
    let session = generate_session(&spec).map_err(|e| e.to_string())?;
    let group = JointGroup::hand(Side::Right);
    let records = session_records(&session, &[group]);
    for signer in [SIGNER_A, SIGNER_B] {
        let mine: Vec<SignInstance> = session.annotations.iter().filter(|a| a.signer == signer).cloned().collect();
        let (dialogue, vocab): (Vec<SignInstance>, Vec<SignInstance>) =
            mine.into_iter().partition(|a| a.condition == Condition::Dialogue);
        let matched = match_vocab_baseline(&dialogue, &vocab);
        ensure(matched.unmatched.is_empty(), || format!("{signer}: unmatched {:?}", matched.unmatched))?;
        let vocab_s: BTreeMap<&str, f64> = vocab.iter().map(|v| (v.gloss.as_str(), v.duration_s())).collect();

        let analysis = vocab_delta_series(&records, &matched.pairs);
        let mut reductions = Vec::new();
        for s in analysis.series.iter().filter(|s| s.metric == signkin::kinemetrics::Metric::Duration) {
            for (_, delta) in &s.points {
                reductions.push(-100.0 * delta / vocab_s[s.gloss.as_str()]);
            }
        }
        ensure(!reductions.is_empty(), || format!("{signer}: no duration deltas"))?;
        let mean = reductions.iter().sum::<f64>() / reductions.len() as f64;
        ensure((mean - 25.0).abs() <= 1e-6, || format!("{signer}: delta-series reduction {mean}%"))?;

        let cmp = compare_with_vocab(&records, &matched.pairs, PairedTest::SignedRank);
        let d = cmp
            .iter()
            .find(|c| c.metric == signkin::kinemetrics::Metric::Duration)
            .ok_or_else(|| format!("{signer}: no duration comparison"))?;
        ensure((d.mean_percent_reduction - 25.0).abs() <= 1e-6, || format!("{signer}: {}%", d.mean_percent_reduction))?;
        ensure(d.gloss_pairs.len() >= 6, || format!("{signer}: {} glosses", d.gloss_pairs.len()))?;
        let pairs: Vec<(f64, f64)> = d.gloss_pairs.iter().map(|(_, v, m)| (*v, *m)).collect();
        let p = signed_rank_test(&pairs).map_err(|e| e.to_string())?.p_value;
        ensure(p < 0.05, || format!("{signer}: signed-rank p {p}"))?;
    }
    Ok(())
}

fn gloss_vectors(session: &SynthSession, signer: &str, gloss: &str) -> Vec<Vec<f64>> {
    let mut toks: Vec<_> = session.embeddings.iter().filter(|t| t.signer == signer && t.gloss == gloss).collect();
    toks.sort_by_key(|t| t.mention_index);
    toks.into_iter().map(|t| t.vector.clone()).collect()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn entrainment_formulas() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for case in 0..200 {
        let dim = rng.gen_range(2..32);
        let mut v = || (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
        let (mu_a, mu_b) = (v(), v());
        let mid: Vec<f64> = mu_a.iter().zip(&mu_b).map(|(a, b)| (a + b) / 2.0).collect();
        for (x, want) in [(&mu_a, -1.0), (&mu_b, 1.0), (&mid, 0.0)] {
            let got = projection_similarity(x, &mu_a, &mu_b).map_err(|e| e.to_string())?;
            ensure((got - want).abs() <= 1e-9, || format!("case {case}: projection {got}, expected {want}"))?;
        }
    }

    let full = generate_session(&SynthSpec { entrain_coupling: 1.0, ..SynthSpec::default() }).map_err(|e| e.to_string())?;
    let half = generate_session(&SynthSpec { entrain_coupling: 0.5, ..SynthSpec::default() }).map_err(|e| e.to_string())?;
    for g in 0..full.spec.glosses {
        let gloss = full.spec.gloss_name(g);
        let (a, b) = (gloss_vectors(&full, SIGNER_A, &gloss), gloss_vectors(&full, SIGNER_B, &gloss));
        let got = delta_cos(&a, &b, DeltaCosMode::CrossSigner).map_err(|e| e.to_string())?;
        let want = 1.0 - cos(&a[0], &b[0]);
        ensure((got - want).abs() <= 1e-9, || format!("{gloss}: delta_cos {got} vs {want}"))?;

        let (a, b) = (gloss_vectors(&half, SIGNER_A, &gloss), gloss_vectors(&half, SIGNER_B, &gloss));
        let converging = cross_slope(&b, &a).map_err(|e| e.to_string())?;
        ensure(converging > 0.0, || format!("{gloss}: converging slope {converging}"))?;
        let constant = cross_slope(&a, &b).map_err(|e| e.to_string())?;
        ensure(constant.abs() <= 1e-12, || format!("{gloss}: constant slope {constant}"))?;
    }
    Ok(())
}

fn iou(a: &Interval, b: &Interval) -> f64 {
    let inter = (a.end_ms().min(b.end_ms()) - a.start_ms().max(b.start_ms())).max(0.0);
    let union = a.end_ms().max(b.end_ms()) - a.start_ms().min(b.start_ms());
    inter / union
}

struct Brute {
    mrr: f64,
    recall: Vec<f64>,
    matched: usize,
    best_iou: f64,
}

fn brute_force(query: &[f64], windows: &[Window], truth: &[Interval], ks: &[usize], threshold: f64) -> Brute {
    let mut scored: Vec<(f64, f64, Interval)> = windows
        .iter()
        .filter_map(|w| w.embedding.vector().map(|v| (cos(query, v), w.interval.start_ms(), w.interval)))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)));
    let mut ranks = Vec::new();
    let mut best_iou: f64 = 0.0;
    for (i, (_, _, w)) in scored.iter().enumerate() {
        let best = truth.iter().map(|t| iou(w, t)).fold(0.0, f64::max);
        best_iou = best_iou.max(best);
        if best >= threshold {
            ranks.push(i + 1);
        }
    }
    let mrr = if ranks.is_empty() { 0.0 } else { ranks.iter().map(|r| 1.0 / *r as f64).sum::<f64>() / ranks.len() as f64 };
    let recall = ks.iter().map(|&k| ranks.iter().filter(|&&r| r <= k).count() as f64 / k as f64).collect();
    Brute { mrr, recall, matched: ranks.len(), best_iou }
}

fn spotting_gating() -> Check {
    let params = ScoreParams::default();
    ensure(params.ks == vec![10, 50] && DEFAULT_KS == [10, 50], || format!("default ks {:?}", params.ks))?;
    ensure(params.iou_threshold == 0.3, || format!("default IoU {}", params.iou_threshold))?;
    ensure(DEFAULT_WINDOW_MS == 500.0 && DEFAULT_STRIDE_MS == 500.0, || "default window".to_owned())?;

    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..200 {
        let width = rng.gen_range(50..2000) as f64;
        let stride = rng.gen_range(10..1000) as f64;
        let total = width + rng.gen_range(0.0..200_000.0);
        let windows = make_windows(total, width, stride).map_err(|e| e.to_string())?;
        let want = ((total - width) / stride).floor() as usize + 1;
        ensure(windows.len() == want, || format!("total {total} width {width} stride {stride}: {} windows", windows.len()))?;
    }

    let session = generate_session(&SynthSpec::default()).map_err(|e| e.to_string())?;
    let embed = EmbedParams::default();
    let mut planted = 0;
    for signer in [SIGNER_A, SIGNER_B] {
        let rec = |cond: Condition| session.recordings.iter().find(|r| r.signer == signer && r.condition == cond).unwrap();
        let (dialogue, vocab) = (rec(Condition::Dialogue), rec(Condition::Vocabulary));
        let windows = embed_windows(&dialogue.sequence, DEFAULT_WINDOW_MS, DEFAULT_STRIDE_MS, &embed).map_err(|e| e.to_string())?;
        for q in session.annotations.iter().filter(|a| a.signer == signer && a.condition == Condition::Vocabulary) {
            let query = kinematic_embed(&vocab.sequence, &q.interval, &embed).map_err(|e| e.to_string())?;
            let query = query.vector().ok_or("stationary query")?.to_vec();
            let truth: Vec<Interval> = session
                .annotations
                .iter()
                .filter(|a| a.signer == signer && a.condition == Condition::Dialogue && a.gloss == q.gloss)
                .map(|a| a.interval)
                .collect();

            let got = rank_and_score(&query, &windows, &truth, &params).map_err(|e| e.to_string())?;
            let want = brute_force(&query, &windows, &truth, &params.ks, params.iou_threshold);
            ensure(got.mrr == want.mrr, || format!("{signer} {}: mrr {} vs {}", q.gloss, got.mrr, want.mrr))?;
            for (k, r) in params.ks.iter().zip(&want.recall) {
                let g = got.recall_at(*k).unwrap();
                ensure(g == *r, || format!("{signer} {}: r@{k} {g} vs {r}", q.gloss))?;
            }
            planted += want.matched;

            // Replace each truth by a 29%-of-window span inside its best window.
            let gated: Vec<Interval> = truth
                .iter()
                .map(|t| {
                    let w = windows.iter().max_by(|a, b| iou(&a.interval, t).total_cmp(&iou(&b.interval, t))).unwrap();
                    let start = w.interval.start_ms() + 100.0;
                    Interval::new(start, start + 0.29 * DEFAULT_WINDOW_MS).unwrap()
                })
                .collect();
            let got = rank_and_score(&query, &windows, &gated, &params).map_err(|e| e.to_string())?;
            let want = brute_force(&query, &windows, &gated, &params.ks, params.iou_threshold);
            ensure((want.best_iou - 0.29).abs() < 1e-12, || format!("gated best IoU {}", want.best_iou))?;
            ensure(got.mrr == 0.0 && want.mrr == 0.0, || format!("{signer} {}: gated mrr {}", q.gloss, got.mrr))?;
            for k in &params.ks {
                ensure(got.recall_at(*k) == Some(0.0), || format!("{signer} {}: gated r@{k}", q.gloss))?;
            }
        }
    }
    ensure(planted > 0, || "no planted match was retrieved".to_owned())
}

fn signkin(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_signkin")).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("signkin {}: {}", args[0], String::from_utf8_lossy(&out.stderr)))
}

fn run_pipeline(root: &Path) -> Result<(), String> {
    let d = |name: &str| root.join(name).to_string_lossy().into_owned();
    let f = |dir: &str, file: &str| root.join(dir).join(file).to_string_lossy().into_owned();
    let keypoints = ["A_dialogue", "A_vocab", "B_dialogue", "B_vocab"]
        .iter()
        .map(|s| f("synth", &format!("keypoints_{s}.csv")))
        .join(",");
    signkin(&["synth", "--out-dir", &d("synth")])?;
    signkin(&["metrics", "--out-dir", &d("metrics"), "--annotations", &f("synth", "annotations.csv"), "--keypoints", &keypoints])?;
    signkin(&["reduce", "--out-dir", &d("reduce"), "--annotations", &f("synth", "annotations.csv"), "--metrics", &f("metrics", "metrics.csv")])?;
    signkin(&["entrain", "--out-dir", &d("entrain"), "--embeddings", &f("synth", "embeddings.csv")])?;
    signkin(&["spot", "--out-dir", &d("spot"), "--annotations", &f("synth", "annotations.csv"), "--keypoints", &keypoints])?;
    signkin(&[
        "report",
        "--out-dir",
        &d("report"),
        "--reduction",
        &f("reduce", "reduction.csv"),
        "--spotting",
        &f("spot", "spotting.csv"),
        "--entrainment",
        &f("entrain", "entrainment.csv"),
        "--vocab-comparison",
        &f("reduce", "vocab_comparison.csv"),
    ])
}

fn output_files(root: &Path) -> Vec<PathBuf> {
    let mut files = Vec::new();
    for dir in std::fs::read_dir(root).unwrap() {
        for f in std::fs::read_dir(dir.unwrap().path()).unwrap() {
            files.push(f.unwrap().path().strip_prefix(root).unwrap().to_path_buf());
        }
    }
    files.sort();
    files
}

fn full_cli_run() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (first, second) = (tmp.path().join("first"), tmp.path().join("second"));
    let started = Instant::now();
    run_pipeline(&first)?;
    within(started.elapsed(), 30.0, "full pipeline")?;
    run_pipeline(&second)?;

    let report = std::fs::read_to_string(first.join("report/report.txt")).map_err(|e| e.to_string())?;
    for title in ["Spatial Reduction", "Path Reduction", "Velocity Increase"] {
        ensure(report.contains(title), || format!("grid lacks column {title}"))?;
    }
    for signer in [SIGNER_A, SIGNER_B] {
        let block = report.split(&format!("Signer {signer}\n")).nth(1).ok_or(format!("no grid for {signer}"))?;
        for group in JointGroup::TABLE_ORDER {
            let row = block
                .lines()
                .find(|l| l.starts_with(&group.label()))
                .ok_or_else(|| format!("{signer}: no row {group}"))?;
            let cells = row.split('|').skip(1).filter(|c| !c.trim().is_empty()).count();
            ensure(cells == 3, || format!("{signer} {group}: {cells} cells in `{row}`"))?;
        }
    }
    let spotting = std::fs::read_to_string(first.join("spot/spotting.csv")).map_err(|e| e.to_string())?;
    ensure(spotting.lines().nth(1) == Some("input,model,mrr,r@10,r@50"), || format!("spotting header: {spotting}"))?;
    ensure(report.contains("mrr") && report.contains("r@10") && report.contains("r@50"), || "no retrieval table".to_owned())?;

    let (a, b) = (output_files(&first), output_files(&second));
    ensure(a == b, || "re-run produced a different file set".to_owned())?;
    ensure(a.len() >= 20, || format!("only {} outputs", a.len()))?;
    for rel in &a {
        let (x, y) = (std::fs::read(first.join(rel)).unwrap(), std::fs::read(second.join(rel)).unwrap());
        ensure(x == y, || format!("{} differs between runs", rel.display()))?;
    }
    Ok(())
}

type Criterion = (&'static str, fn() -> Check);

fn main() {
    let criteria: [Criterion; 8] = [
        ("kinematics oracle equivalence", kinematics_oracle),
        ("metric invariants", metric_invariants),
        ("spearman exactness", spearman_exactness),
        ("reduction pipeline end-to-end", reduction_pipeline),
        ("duration contract", duration_contract),
        ("entrainment formulas", entrainment_formulas),
        ("spotting determinism and gating", spotting_gating),
        ("full cli run", full_cli_run),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        match check() {
            Ok(()) => println!("PASS {name} ({:.2} s)", started.elapsed().as_secs_f64()),
            Err(e) => {
                failed += 1;
                println!("FAIL {name}: {e}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
