use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
    pub plcc: f64,
    pub srcc: f64,
}

#[derive(Debug, Clone, Copy, Error, PartialEq, Eq)]
pub enum Side {
    #[error("truth")]
    Truth,
    #[error("prediction")]
    Prediction,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {truth} truths, {pred} predictions")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("metrics need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite value in {0} vector")]
    NonFinite(Side),
    #[error("{metric} undefined: {side} vector is constant")]
    Constant { metric: &'static str, side: Side },
}

fn check(y: &[f64], yhat: &[f64]) -> Result<(), MetricError> {
    if y.len() != yhat.len() {
        return Err(MetricError::LengthMismatch {
            truth: y.len(),
            pred: yhat.len(),
        });
    }
    if y.len() < 2 {
        return Err(MetricError::TooFewSamples(y.len()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite(Side::Truth));
    }
    if yhat.iter().any(|v| !v.is_finite()) {
        return Err(MetricError::NonFinite(Side::Prediction));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    check(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    mse(y, yhat).map(f64::sqrt)
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    check(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// Coefficient of determination, `1 - SS_res / SS_tot`; negative for models
/// worse than the mean.
pub fn r2(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    check(y, yhat)?;
    if is_constant(y) {
        return Err(MetricError::Constant {
            metric: "r2",
            side: Side::Truth,
        });
    }
    let m = mean(y);
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    let ss_tot: f64 = y.iter().map(|a| (a - m) * (a - m)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

fn require_varying(metric: &'static str, y: &[f64], yhat: &[f64]) -> Result<(), MetricError> {
    if is_constant(y) {
        return Err(MetricError::Constant {
            metric,
            side: Side::Truth,
        });
    }
    if is_constant(yhat) {
        return Err(MetricError::Constant {
            metric,
            side: Side::Prediction,
        });
    }
    Ok(())
}

/// Pearson linear correlation coefficient.
pub fn plcc(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    check(y, yhat)?;
    require_varying("plcc", y, yhat)?;
    Ok(pearson(y, yhat))
}

/// 1-based ranks; tied values share the average of the ranks they span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn srcc(y: &[f64], yhat: &[f64]) -> Result<f64, MetricError> {
    check(y, yhat)?;
    require_varying("srcc", y, yhat)?;
    Ok(pearson(&average_ranks(y), &average_ranks(yhat)))
}

pub fn compute_metrics(y: &[f64], yhat: &[f64]) -> Result<MetricsReport, MetricError> {
    let mse = mse(y, yhat)?;
    Ok(MetricsReport {
        mse,
        rmse: mse.sqrt(),
        mae: mae(y, yhat)?,
        r2: r2(y, yhat)?,
        plcc: plcc(y, yhat)?,
        srcc: srcc(y, yhat)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute-force reference: pairwise rank counting and textbook formulas.
    fn oracle(y: &[f64], p: &[f64]) -> [f64; 6] {
        let n = y.len() as f64;
        let mut se = 0.0;
        let mut ae = 0.0;
        for i in 0..y.len() {
            se += (y[i] - p[i]).powi(2);
            ae += (y[i] - p[i]).abs();
        }
        let ybar = y.iter().sum::<f64>() / n;
        let tot: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
        let corr = |a: &[f64], b: &[f64]| {
            let ma = a.iter().sum::<f64>() / n;
            let mb = b.iter().sum::<f64>() / n;
            let mut num = 0.0;
            let mut da = 0.0;
            let mut db = 0.0;
            for i in 0..a.len() {
                num += (a[i] - ma) * (b[i] - mb);
                da += (a[i] - ma).powi(2);
                db += (b[i] - mb).powi(2);
            }
            num / (da * db).sqrt()
        };
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|&x| {
                    let below = v.iter().filter(|&&u| u < x).count() as f64;
                    let equal = v.iter().filter(|&&u| u == x).count() as f64;
                    below + (equal + 1.0) / 2.0
                })
                .collect()
        };
        [
            se / n,
            (se / n).sqrt(),
            ae / n,
            1.0 - se / tot,
            corr(y, p),
            corr(&rank(y), &rank(p)),
        ]
    }

    #[test]
    fn perfect_prediction() {
        let y = [0.1, 0.5, 0.9];
        let m = compute_metrics(&y, &y).unwrap();
        assert_eq!((m.mse, m.rmse, m.mae), (0.0, 0.0, 0.0));
        assert_eq!(m.r2, 1.0);
        assert!((m.plcc - 1.0).abs() < 1e-15);
        assert!((m.srcc - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mean_predictor() {
        let (y, p) = ([1.0, 2.0, 3.0], [2.0, 2.0, 2.0]);
        assert!((mse(&y, &p).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((mae(&y, &p).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r2(&y, &p).unwrap(), 0.0);
        assert_eq!(
            plcc(&y, &p),
            Err(MetricError::Constant {
                metric: "plcc",
                side: Side::Prediction
            })
        );
        assert!(compute_metrics(&y, &p).is_err());
    }

    #[test]
    fn constant_truth_names_truth() {
        let err = r2(&[1.0, 1.0], &[0.0, 2.0]).unwrap_err();
        assert_eq!(
            err,
            MetricError::Constant {
                metric: "r2",
                side: Side::Truth
            }
        );
        assert!(err.to_string().contains("truth"));
    }

    #[test]
    fn rank_preserving_map() {
        let (y, p) = ([1.0, 2.0, 3.0], [10.0, 100.0, 1000.0]);
        assert!((srcc(&y, &p).unwrap() - 1.0).abs() < 1e-15);
        assert!(plcc(&y, &p).unwrap() < 1.0);
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn input_errors() {
        assert!(matches!(mse(&[1.0], &[1.0]), Err(MetricError::TooFewSamples(1))));
        assert!(matches!(mse(&[1.0, 2.0], &[1.0]), Err(MetricError::LengthMismatch { .. })));
        assert!(matches!(
            mse(&[1.0, f64::NAN], &[1.0, 2.0]),
            Err(MetricError::NonFinite(Side::Truth))
        ));
    }

    #[test]
    fn matches_brute_force_oracle_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for case in 0..100 {
            let n = rng.random_range(2..60);
            let y: Vec<f64> = (0..n).map(|_| (rng.random_range(0..20) as f64) / 19.0).collect();
            let p: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            if is_constant(&y) {
                continue;
            }
            let m = compute_metrics(&y, &p).unwrap();
            let o = oracle(&y, &p);
            let got = [m.mse, m.rmse, m.mae, m.r2, m.plcc, m.srcc];
            for (g, e) in got.iter().zip(o) {
                assert!((g - e).abs() < 1e-9, "case {case}: {got:?} vs {o:?}");
            }
            assert!(m.rmse >= m.mae);
        }
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec(0.0f64..1.0, n),
                prop::collection::vec(-5.0f64..5.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn report_invariants((y, p) in pair()) {
            prop_assume!(!is_constant(&y) && !is_constant(&p));
            let m = compute_metrics(&y, &p).unwrap();
            prop_assert_eq!(m.rmse, m.mse.sqrt());
            prop_assert!(m.rmse >= m.mae * (1.0 - 1e-12));
            prop_assert!(m.r2 <= 1.0);
            prop_assert!((-1.0..=1.0).contains(&m.plcc));
            prop_assert!((-1.0..=1.0).contains(&m.srcc));
        }

        #[test]
        fn plcc_is_affine_invariant((y, p) in pair(), a in 0.1f64..10.0, b in -3.0f64..3.0) {
            prop_assume!(!is_constant(&y) && !is_constant(&p));
            let q: Vec<f64> = p.iter().map(|v| a * v + b).collect();
            prop_assert!((plcc(&y, &p).unwrap() - plcc(&y, &q).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn srcc_is_monotone_invariant((y, p) in pair()) {
            prop_assume!(!is_constant(&y) && !is_constant(&p));
            let q: Vec<f64> = p.iter().map(|v| v.exp() + v * v * v).collect();
            prop_assert!((srcc(&y, &p).unwrap() - srcc(&y, &q).unwrap()).abs() < 1e-12);
        }
    }
}
