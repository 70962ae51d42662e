use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use signkin::interval::Interval;
use signkin::skeleton::{Frame, JointId, Keypoint, KeypointSequence, SequenceMeta, SourceKind};
use signkin::spotter::{
    interval_iou, kinematic_embed, make_windows, rank_and_score, EmbedParams, Embedding, ScoreParams, SpotError, Window,
};

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn grid(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Window> {
    (0..count)
        .map(|i| Window {
            interval: Interval::new(i as f64 * 500.0, i as f64 * 500.0 + 500.0).unwrap(),
            embedding: Embedding::Vector(unit((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())),
        })
        .collect()
}

/// Full ranking by brute force; returns 1-based ranks of matched windows.
fn matched_ranks(query: &[f64], windows: &[Window], truth: &[Interval], key: impl Fn(f64) -> f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..windows.len()).filter(|&i| windows[i].embedding.vector().is_some()).collect();
    order.sort_by(|&a, &b| {
        let (sa, sb) = (key(cos(query, windows[a].embedding.vector().unwrap())), key(cos(query, windows[b].embedding.vector().unwrap())));
        sb.total_cmp(&sa).then(windows[a].interval.start_ms().total_cmp(&windows[b].interval.start_ms()))
    });
    order
        .iter()
        .enumerate()
        .filter(|(_, &w)| {
            truth.iter().any(|t| {
                let (a, b) = (&windows[w].interval, t);
                let inter = (a.end_ms().min(b.end_ms()) - a.start_ms().max(b.start_ms())).max(0.0);
                inter / (a.end_ms().max(b.end_ms()) - a.start_ms().min(b.start_ms())) >= 0.3
            })
        })
        .map(|(r, _)| r + 1)
        .collect()
}

#[test]
fn forty_windows_three_matches_agree_with_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let params = ScoreParams { ks: vec![1, 5, 10, 50], iou_threshold: 0.3 };
    for _ in 0..50 {
        let windows = grid(40, 12, &mut rng);
        let truth: Vec<Interval> = [5usize, 17, 33]
            .iter()
            .map(|&i| {
                let s = i as f64 * 500.0 + rng.gen_range(-100.0..100.0);
                Interval::new(s, s + 500.0).unwrap()
            })
            .collect();
        let query = unit((0..12).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let score = rank_and_score(&query, &windows, &truth, &params).unwrap();
        let ranks = matched_ranks(&query, &windows, &truth, |s| s);

        assert_eq!(score.matched().map(|r| r.rank).collect::<Vec<_>>(), ranks);
        let mrr = ranks.iter().map(|r| 1.0 / *r as f64).sum::<f64>() / ranks.len() as f64;
        assert_eq!(score.mrr, mrr);
        for &k in &params.ks {
            let hits = ranks.iter().filter(|&&r| r <= k).count();
            assert_eq!(score.recall_at(k), Some(hits as f64 / k as f64));
        }
        // k beyond the window count divides all matches by k.
        assert_eq!(score.recall_at(50), Some(ranks.len() as f64 / 50.0));

        // Ranking survives order-preserving transforms of the score.
        assert_eq!(matched_ranks(&query, &windows, &truth, |s| (3.0 * s).exp() - 7.0), ranks);
        assert_eq!(matched_ranks(&query, &windows, &truth, |s| s.powi(3) + s), ranks);
    }
}

#[test]
fn planted_exact_copy_ranks_first() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let windows = grid(100, 8, &mut rng);
    let query = windows[42].embedding.vector().unwrap().to_vec();
    let truth = [windows[42].interval];
    let score = rank_and_score(&query, &windows, &truth, &ScoreParams::default()).unwrap();
    assert_eq!(score.ranked[0].interval, windows[42].interval);
    assert_eq!(score.mrr, 1.0);
    assert_eq!(score.recall_at(10), Some(0.1));
    assert_eq!(score.at_k[0].truth_recall, 1.0);

    let short = [Interval::new(42.0 * 500.0 + 200.0, 42.0 * 500.0 + 300.0).unwrap()];
    let gated = rank_and_score(&query, &windows, &short, &ScoreParams::default()).unwrap();
    assert_eq!(gated.mrr, 0.0);
    assert_eq!(gated.recall_at(10), Some(0.0));
}

#[test]
fn mismatched_dimensions_and_empty_input_fail() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let windows = grid(3, 4, &mut rng);
    let p = ScoreParams::default();
    assert!(matches!(rank_and_score(&[1.0, 0.0], &windows, &[], &p), Err(SpotError::DimensionMismatch { .. })));
    assert!(matches!(rank_and_score(&[1.0; 4], &[], &[], &p), Err(SpotError::NoWindows)));
    assert!(make_windows(400.0, 500.0, 500.0).is_err());
}

proptest! {
    #[test]
    fn low_window_below_k_keeps_recall(seed in any::<u64>(), k in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut windows = grid(30, 6, &mut rng);
        let truth = vec![windows[3].interval, windows[11].interval, windows[20].interval];
        let query = unit((0..6).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let params = ScoreParams { ks: vec![k], iou_threshold: 0.3 };
        let before = rank_and_score(&query, &windows, &truth, &params).unwrap();

        // The antipode of the query ranks last and overlaps no truth.
        windows.push(Window {
            interval: Interval::new(90_000.0, 90_500.0).unwrap(),
            embedding: Embedding::Vector(query.iter().map(|x| -x).collect()),
        });
        let after = rank_and_score(&query, &windows, &truth, &params).unwrap();
        prop_assert_eq!(after.recall_at(k), before.recall_at(k));
        prop_assert_eq!(after.mrr, before.mrr);

        // A copy of the query ranks first and can only push matches down.
        windows.push(Window { interval: Interval::new(95_000.0, 95_500.0).unwrap(), embedding: Embedding::Vector(query.clone()) });
        let top = rank_and_score(&query, &windows, &truth, &params).unwrap();
        prop_assert!(top.recall_at(k) <= before.recall_at(k));
        prop_assert!(top.mrr <= before.mrr);
    }

    #[test]
    fn window_count_follows_floor_rule(total in 1.0f64..100_000.0, width in 1.0f64..5_000.0, stride in 1.0f64..5_000.0) {
        match make_windows(total, width, stride) {
            Ok(ws) => {
                prop_assert_eq!(ws.len(), ((total - width) / stride).floor() as usize + 1);
                for (i, w) in ws.iter().enumerate() {
                    prop_assert_eq!(w.start_ms(), i as f64 * stride);
                    prop_assert!(w.end_ms() <= total + 1e-9);
                }
            }
            Err(_) => prop_assert!(total < width),
        }
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in 0.0f64..100.0, la in 0.1f64..50.0, b in 0.0f64..100.0, lb in 0.1f64..50.0) {
        let (x, y) = (Interval::new(a, a + la).unwrap(), Interval::new(b, b + lb).unwrap());
        let v = interval_iou(&x, &y);
        prop_assert_eq!(v, interval_iou(&y, &x));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(interval_iou(&x, &x), 1.0);
    }
}

fn random_motion(rng: &mut ChaCha8Rng, joints: &[JointId], frames: usize) -> KeypointSequence {
    let frames = (0..frames)
        .map(|i| {
            let mut f = Frame::new(i as f64 * 10.0);
            for &j in joints {
                f.set(j, Keypoint::new3(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
            }
            f
        })
        .collect();
    KeypointSequence::new(SequenceMeta::new(100.0, SourceKind::Mocap3d), frames).unwrap()
}

/// Slice, resample at evenly spaced instants, centre on the first sample, flatten, normalize.
fn embed_oracle(seq: &KeypointSequence, iv: &Interval, joints: &[JointId], n: usize) -> Vec<f64> {
    let frames: Vec<&Frame> = seq.frames().iter().filter(|f| iv.start_ms() <= f.time_ms && f.time_ms <= iv.end_ms()).collect();
    let (t0, t1) = (frames[0].time_ms, frames[frames.len() - 1].time_ms);
    let mut out = Vec::new();
    for &j in joints {
        let at = |t: f64| -> [f64; 3] {
            for w in frames.windows(2) {
                if w[0].time_ms <= t && t <= w[1].time_ms {
                    let (a, b) = (w[0].get(j).unwrap().position(), w[1].get(j).unwrap().position());
                    let u = (t - w[0].time_ms) / (w[1].time_ms - w[0].time_ms);
                    return [0, 1, 2].map(|d| a[d] + (b[d] - a[d]) * u);
                }
            }
            frames[0].get(j).unwrap().position()
        };
        let pts: Vec<[f64; 3]> = (0..n).map(|k| at(t0 + (t1 - t0) * k as f64 / (n - 1) as f64)).collect();
        for p in &pts {
            out.extend((0..3).map(|d| p[d] - pts[0][d]));
        }
    }
    unit(out)
}

#[test]
fn embedding_matches_independent_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let params = EmbedParams::default();
    for _ in 0..30 {
        let seq = random_motion(&mut rng, &params.joints, 120);
        let s = rng.gen_range(0.0..600.0);
        let iv = Interval::new(s, s + rng.gen_range(30.0..500.0)).unwrap();
        let got = kinematic_embed(&seq, &iv, &params).unwrap();
        let want = embed_oracle(&seq, &iv, &params.joints, params.resample);
        let got = got.vector().unwrap();
        assert_eq!(got.len(), 42 * 16 * 3);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn translated_copy_and_stationary_span() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let params = EmbedParams::default();
    let seq = random_motion(&mut rng, &params.joints, 60);
    let shifted_frames: Vec<Frame> = seq
        .frames()
        .iter()
        .map(|f| {
            let mut g = Frame::new(f.time_ms);
            for (j, kp) in f.iter() {
                g.set(j, Keypoint::new3(kp.x + 3.0, kp.y - 1.0, kp.z.unwrap() + 0.5));
            }
            g
        })
        .collect();
    let shifted = KeypointSequence::new(seq.meta().clone(), shifted_frames).unwrap();
    let iv = Interval::new(0.0, 400.0).unwrap();
    let (a, b) = (kinematic_embed(&seq, &iv, &params).unwrap(), kinematic_embed(&shifted, &iv, &params).unwrap());
    assert!((cos(a.vector().unwrap(), b.vector().unwrap()) - 1.0).abs() < 1e-9);

    let still: Vec<Frame> = (0..20)
        .map(|i| {
            let mut f = Frame::new(i as f64 * 10.0);
            f.set(JointId::RIGHT_HAND, Keypoint::new3(1.0, 2.0, 3.0));
            f
        })
        .collect();
    let still = KeypointSequence::new(SequenceMeta::new(100.0, SourceKind::Mocap3d), still).unwrap();
    assert_eq!(kinematic_embed(&still, &Interval::new(0.0, 150.0).unwrap(), &params).unwrap(), Embedding::Stationary);
}
