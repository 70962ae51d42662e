//! Rank and regression statistics: Spearman correlation with exact or
//! t-approximated p-values, percent change, least-squares slope, and paired
//! tests (Wilcoxon signed-rank, paired t).

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

/// Largest sample size whose Spearman p-value is computed by full permutation.
pub const EXACT_PERMUTATION_MAX_N: usize = 8;
/// Largest count of non-zero differences with an exact signed-rank distribution.
pub const EXACT_SIGNED_RANK_MAX_N: usize = 12;

const COMPARE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("change relative to a zero baseline is undefined")]
    ZeroBaseline,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error("need at least {needed} non-zero differences, got {got}")]
    InsufficientData { needed: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChangeDirection {
    Reduction,
    Increase,
}

/// Percent change from `first` to `current`, positive in the named direction.
pub fn percent_change(first: f64, current: f64, direction: ChangeDirection) -> Result<f64, StatsError> {
    if first == 0.0 {
        return Err(StatsError::ZeroBaseline);
    }
    Ok(match direction {
        ChangeDirection::Reduction => 100.0 * (first - current) / first,
        ChangeDirection::Increase => 100.0 * (current - first) / first,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PValueMethod {
    ExactPermutation,
    TApprox,
}

impl PValueMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            PValueMethod::ExactPermutation => "exact_permutation",
            PValueMethod::TApprox => "t_approx",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "exact_permutation" => Some(PValueMethod::ExactPermutation),
            "t_approx" => Some(PValueMethod::TApprox),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationResult {
    pub rho: f64,
    pub p_value: f64,
    pub n: usize,
    pub method: PValueMethod,
}

/// 1-based ranks with ties sharing their average rank.
///
/// Values within `tie_tolerance` of the first value of a run of sorted
/// values count as tied; `0.0` means exact equality.
pub fn average_ranks(values: &[f64], tie_tolerance: f64) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let anchor = values[order[start]];
        let mut end = start + 1;
        while end < order.len() && values[order[end]] - anchor <= tie_tolerance {
            end += 1;
        }
        // Positions start..end hold ranks start+1..=end.
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn centered(values: &[f64]) -> Vec<f64> {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| v - mean).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<CorrelationResult, StatsError> {
    spearman_with_tolerance(x, y, 0.0)
}

/// Spearman correlation where values closer than `tie_tolerance` rank as ties.
///
/// Two-tailed p: full permutation for `n <= 8`, otherwise the t
/// approximation with `n - 2` degrees of freedom.
pub fn spearman_with_tolerance(x: &[f64], y: &[f64], tie_tolerance: f64) -> Result<CorrelationResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooFewSamples { needed: 3, got: n });
    }
    let rx = centered(&average_ranks(x, tie_tolerance));
    let ry = centered(&average_ranks(y, tie_tolerance));
    let (sxx, syy) = (dot(&rx, &rx), dot(&ry, &ry));
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Degenerate("zero variance in a rank vector"));
    }
    let sxy = dot(&rx, &ry);
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);

    if n <= EXACT_PERMUTATION_MAX_N {
        let p_value = exact_permutation_p(&rx, &ry, sxy);
        return Ok(CorrelationResult { rho, p_value, n, method: PValueMethod::ExactPermutation });
    }
    let p_value = if rho.abs() >= 1.0 {
        0.0
    } else {
        let df = (n - 2) as f64;
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0)
    };
    Ok(CorrelationResult { rho, p_value, n, method: PValueMethod::TApprox })
}

/// Share of orderings of `ry` whose |covariance| with `rx` reaches the observed one.
fn exact_permutation_p(rx: &[f64], ry: &[f64], observed: f64) -> f64 {
    let threshold = observed.abs() - COMPARE_EPS * observed.abs().max(1.0);
    let mut perm = ry.to_vec();
    let n = perm.len();
    let mut hits = 0u64;
    let mut total = 0u64;
    let mut visit = |p: &[f64]| {
        total += 1;
        if dot(rx, p).abs() >= threshold {
            hits += 1;
        }
    };
    // Heap's algorithm, iterative.
    let mut c = vec![0usize; n];
    visit(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            visit(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    hits as f64 / total as f64
}

/// Ordinary least-squares slope of `ys` on `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(StatsError::TooFewSamples { needed: 2, got: xs.len() });
    }
    let cx = centered(xs);
    let sxx = dot(&cx, &cx);
    if sxx == 0.0 {
        return Err(StatsError::Degenerate("all x values equal"));
    }
    Ok(dot(&cx, &centered(ys)) / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignedRankMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedRankResult {
    /// Sum of ranks of positive differences `a - b`.
    pub w_plus: f64,
    /// Non-zero differences used.
    pub n: usize,
    pub p_value: f64,
    pub method: SignedRankMethod,
}

/// Two-tailed Wilcoxon signed-rank test on `a - b`; zero differences are dropped.
pub fn signed_rank_test(pairs: &[(f64, f64)]) -> Result<SignedRankResult, StatsError> {
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n < 5 {
        return Err(StatsError::InsufficientData { needed: 5, got: n });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs, 0.0);
    let w_plus: f64 = ranks.iter().zip(&diffs).filter(|(_, d)| **d > 0.0).map(|(r, _)| r).sum();
    let mean = ranks.iter().sum::<f64>() / 2.0;
    let observed = (w_plus - mean).abs();

    if n <= EXACT_SIGNED_RANK_MAX_N {
        let threshold = observed - COMPARE_EPS;
        let total = 1u32 << n;
        let hits = (0..total)
            .filter(|mask| {
                let w: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
                (w - mean).abs() >= threshold
            })
            .count();
        return Ok(SignedRankResult {
            w_plus,
            n,
            p_value: hits as f64 / total as f64,
            method: SignedRankMethod::Exact,
        });
    }

    let nf = n as f64;
    let mut ties = abs.clone();
    ties.sort_by(f64::total_cmp);
    let tie_term: f64 = ties
        .chunk_by(|a, b| a == b)
        .map(|run| {
            let t = run.len() as f64;
            t * t * t - t
        })
        .sum();
    let variance = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let z = (observed - 0.5).max(0.0) / variance.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p_value = (2.0 * (1.0 - normal.cdf(z))).clamp(0.0, 1.0);
    Ok(SignedRankResult { w_plus, n, p_value, method: SignedRankMethod::NormalApprox })
}

/// Two-tailed paired t-test on `a - b`.
pub fn paired_t_test(pairs: &[(f64, f64)]) -> Result<f64, StatsError> {
    let n = pairs.len();
    if n < 2 {
        return Err(StatsError::TooFewSamples { needed: 2, got: n });
    }
    let diffs: Vec<f64> = pairs.iter().map(|(a, b)| a - b).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return Err(StatsError::Degenerate("constant differences"));
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("df > 0");
    Ok((2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0))
}

/// `*`, `**`, `***` for p below .05, .01, .001.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percent_change_examples() {
        assert_eq!(percent_change(10.0, 5.0, ChangeDirection::Reduction).unwrap(), 50.0);
        assert_eq!(percent_change(10.0, 10.0, ChangeDirection::Reduction).unwrap(), 0.0);
        assert_eq!(percent_change(10.0, 10.0, ChangeDirection::Increase).unwrap(), 0.0);
        assert_eq!(percent_change(4.0, 5.0, ChangeDirection::Increase).unwrap(), 25.0);
        assert_eq!(percent_change(0.0, 5.0, ChangeDirection::Increase), Err(StatsError::ZeroBaseline));
    }

    #[test]
    fn perfect_monotone() {
        let r = spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap();
        assert_eq!(r.rho, 1.0);
        let r = spearman(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]).unwrap();
        assert_eq!(r.rho, -1.0);
        assert_eq!(r.method, PValueMethod::ExactPermutation);
    }

    #[test]
    fn five_point_exact_p() {
        // Two of 120 orderings reach |rho| = 1.
        let r = spearman(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 4.0, 8.0, 16.0, 32.0]).unwrap();
        assert_eq!(r.rho, 1.0);
        assert!((r.p_value - 2.0 / 120.0).abs() < 1e-15);
    }

    #[test]
    fn spearman_errors() {
        assert_eq!(spearman(&[1.0, 2.0], &[1.0]), Err(StatsError::LengthMismatch(2, 1)));
        assert_eq!(spearman(&[1.0, 2.0], &[1.0, 2.0]), Err(StatsError::TooFewSamples { needed: 3, got: 2 }));
        assert!(matches!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), Err(StatsError::Degenerate(_))));
    }

    #[test]
    fn large_n_uses_t_approximation() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| (v * 1.7).sin()).collect();
        let r = spearman(&x, &y).unwrap();
        assert_eq!(r.method, PValueMethod::TApprox);
        assert!((0.0..=1.0).contains(&r.p_value));
        let perfect = spearman(&x, &x).unwrap();
        assert_eq!(perfect.p_value, 0.0);
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0], 0.0), vec![2.0, 3.5, 3.5, 1.0]);
        assert_eq!(average_ranks(&[1.0, 1.0 + 1e-12, 2.0], 1e-9), vec![1.5, 1.5, 3.0]);
        assert_eq!(average_ranks(&[1.0, 1.0 + 1e-12, 2.0], 0.0), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn slope_examples() {
        assert_eq!(ls_slope(&[1.0, 2.0, 3.0], &[0.0, 0.5, 1.0]).unwrap(), 0.5);
        assert_eq!(ls_slope(&[1.0, 2.0, 3.0], &[4.0, 4.0, 4.0]).unwrap(), 0.0);
        assert!(matches!(ls_slope(&[2.0, 2.0], &[1.0, 3.0]), Err(StatsError::Degenerate(_))));
    }

    #[test]
    fn signed_rank_examples() {
        let zeros = [(1.0, 1.0); 8];
        assert!(matches!(signed_rank_test(&zeros), Err(StatsError::InsufficientData { .. })));
        let pairs: Vec<(f64, f64)> = (1..=6).map(|i| (10.0 + i as f64, 10.0)).collect();
        let r = signed_rank_test(&pairs).unwrap();
        assert_eq!(r.method, SignedRankMethod::Exact);
        assert_eq!(r.w_plus, 21.0);
        assert_eq!(r.p_value, 2.0 / 64.0);
    }

    #[test]
    fn signed_rank_normal_branch() {
        let pairs: Vec<(f64, f64)> = (1..=20).map(|i| (i as f64 * 1.5, i as f64 - 3.0)).collect();
        let r = signed_rank_test(&pairs).unwrap();
        assert_eq!(r.method, SignedRankMethod::NormalApprox);
        assert!(r.p_value < 0.001);
    }

    #[test]
    fn paired_t() {
        let pairs = [(1.0, 0.5), (2.0, 1.4), (3.0, 2.2), (4.0, 3.7), (5.0, 4.1)];
        let p = paired_t_test(&pairs).unwrap();
        assert!(p < 0.01, "{p}");
        assert!(paired_t_test(&[(1.0, 0.0), (2.0, 1.0)]).is_err());
    }

    #[test]
    fn stars() {
        assert_eq!(significance_stars(0.0005), "***");
        assert_eq!(significance_stars(0.005), "**");
        assert_eq!(significance_stars(0.03), "*");
        assert_eq!(significance_stars(0.05), "");
    }
}
