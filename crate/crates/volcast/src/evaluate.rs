//! Raw-volume-scale metrics: RMSE, MAE, normalized negative log-likelihood,
//! interval width, relative errors, quartile-conditioned reports, and the
//! cross-model comparison table.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("prediction set is empty")]
    EmptySet,
    #[error("per-instance likelihoods missing")]
    MissingLikelihood,
    #[error("predictive standard deviations missing")]
    MissingSd,
    #[error("true volume must be positive for relative metrics")]
    ZeroTrueVolume,
    #[error("field lengths disagree: {0}")]
    LengthMismatch(String),
}

/// Per-instance predictions for one model on the test split.
///
/// `v_true` and `v_hat` live on the raw-volume scale. `sd_y` and `nll_y` are
/// on the deseasonalized scale; the metrics apply the change of variables
/// through the per-instance seasonal factor `a` (sd scales by `a`, the NLL
/// shifts by `ln a`).
#[derive(Debug, Clone, Default)]
pub struct PredictionSet {
    pub v_true: Vec<f64>,
    pub v_hat: Vec<f64>,
    pub sd_y: Option<Vec<f64>>,
    pub nll_y: Option<Vec<f64>>,
    pub a: Vec<f64>,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.v_true.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_true.is_empty()
    }

    fn check(&self) -> Result<(), EvaluateError> {
        if self.is_empty() {
            return Err(EvaluateError::EmptySet);
        }
        let n = self.len();
        if self.v_hat.len() != n || self.a.len() != n {
            return Err(EvaluateError::LengthMismatch("v_hat/a".into()));
        }
        if let Some(sd) = &self.sd_y {
            if sd.len() != n {
                return Err(EvaluateError::LengthMismatch("sd_y".into()));
            }
        }
        if let Some(nll) = &self.nll_y {
            if nll.len() != n {
                return Err(EvaluateError::LengthMismatch("nll_y".into()));
            }
        }
        Ok(())
    }
}

pub fn rmse(pred: &PredictionSet) -> Result<f64, EvaluateError> {
    pred.check()?;
    let n = pred.len() as f64;
    let sse: f64 = pred
        .v_true
        .iter()
        .zip(pred.v_hat.iter())
        .map(|(v, vh)| (v - vh) * (v - vh))
        .sum();
    Ok((sse / n).sqrt())
}

pub fn mae(pred: &PredictionSet) -> Result<f64, EvaluateError> {
    pred.check()?;
    let n = pred.len() as f64;
    let sae: f64 = pred.v_true.iter().zip(pred.v_hat.iter()).map(|(v, vh)| (v - vh).abs()).sum();
    Ok(sae / n)
}

/// Mean raw-volume negative log-likelihood: each instance's deseasonalized
/// NLL plus ln a.
pub fn nnll(pred: &PredictionSet) -> Result<f64, EvaluateError> {
    pred.check()?;
    let nll = pred.nll_y.as_ref().ok_or(EvaluateError::MissingLikelihood)?;
    let total: f64 = nll.iter().zip(pred.a.iter()).map(|(l, a)| l + a.ln()).sum();
    Ok(total / pred.len() as f64)
}

/// Interval width: mean raw-volume predictive standard deviation (the
/// deseasonalized sd scaled by a).
pub fn iw(pred: &PredictionSet) -> Result<f64, EvaluateError> {
    pred.check()?;
    let sd = pred.sd_y.as_ref().ok_or(EvaluateError::MissingSd)?;
    let total: f64 = sd.iter().zip(pred.a.iter()).map(|(s, a)| s * a).sum();
    Ok(total / pred.len() as f64)
}

/// Relative RMSE and MAPE.
pub fn rel_metrics(pred: &PredictionSet) -> Result<(f64, f64), EvaluateError> {
    pred.check()?;
    if pred.v_true.iter().any(|&v| v <= 0.0) {
        return Err(EvaluateError::ZeroTrueVolume);
    }
    let n = pred.len() as f64;
    let mut sq = 0.0;
    let mut ab = 0.0;
    for (v, vh) in pred.v_true.iter().zip(pred.v_hat.iter()) {
        let rel = (v - vh) / v;
        sq += rel * rel;
        ab += rel.abs();
    }
    Ok(((sq / n).sqrt(), ab / n))
}

/// Metrics of one model; NNLL and IW absent for point-only models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
    pub nnll: Option<f64>,
    pub iw: Option<f64>,
}

pub fn metrics_report(model: &str, pred: &PredictionSet) -> Result<MetricsReport, EvaluateError> {
    Ok(MetricsReport {
        model: model.to_string(),
        n: pred.len(),
        rmse: rmse(pred)?,
        mae: mae(pred)?,
        nnll: if pred.nll_y.is_some() { Some(nnll(pred)?) } else { None },
        iw: if pred.sd_y.is_some() { Some(iw(pred)?) } else { None },
    })
}

/// Per-quartile absolute and relative errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartileRow {
    pub quartile: usize,
    pub n: usize,
    pub rmse: f64,
    pub rel_rmse: f64,
    pub mae: f64,
    pub mape: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuartileReport {
    pub model: String,
    pub rows: Vec<QuartileRow>,
}

/// Assign each instance to a quartile of the empirical v_true distribution
/// (boundaries at the ceil(n k/4)-th order statistics, ties to the lower
/// quartile) and compute the four error metrics within each group.
pub fn quartile_report(model: &str, pred: &PredictionSet) -> Result<QuartileReport, EvaluateError> {
    pred.check()?;
    let n = pred.len();
    if n < 4 {
        return Err(EvaluateError::EmptySet);
    }
    let mut sorted = pred.v_true.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let boundary = |k: usize| -> f64 {
        let idx = (n * k).div_ceil(4) - 1;
        sorted[idx]
    };
    let (b1, b2, b3) = (boundary(1), boundary(2), boundary(3));
    let group_of = |v: f64| -> usize {
        if v <= b1 {
            0
        } else if v <= b2 {
            1
        } else if v <= b3 {
            2
        } else {
            3
        }
    };

    let mut rows = Vec::with_capacity(4);
    for g in 0..4 {
        let idx: Vec<usize> = (0..n).filter(|&i| group_of(pred.v_true[i]) == g).collect();
        let sub = PredictionSet {
            v_true: idx.iter().map(|&i| pred.v_true[i]).collect(),
            v_hat: idx.iter().map(|&i| pred.v_hat[i]).collect(),
            sd_y: None,
            nll_y: None,
            a: idx.iter().map(|&i| pred.a[i]).collect(),
        };
        if sub.is_empty() {
            rows.push(QuartileRow { quartile: g + 1, n: 0, rmse: f64::NAN, rel_rmse: f64::NAN, mae: f64::NAN, mape: f64::NAN });
            continue;
        }
        let (rel_rmse, mape) = rel_metrics(&sub)?;
        rows.push(QuartileRow {
            quartile: g + 1,
            n: sub.len(),
            rmse: rmse(&sub)?,
            rel_rmse,
            mae: mae(&sub)?,
            mape,
        });
    }
    Ok(QuartileReport { model: model.to_string(), rows })
}

/// Direction of a metric for ranking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    LowerBetter,
    HigherBetter,
}

/// One comparison row: metric name, per-model values (None = NA), and the
/// winner flags (ties all marked).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: String,
    pub values: Vec<Option<f64>>,
    pub best: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub models: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

/// Rank models per metric; models missing a metric are excluded from that
/// metric's ranking.
pub fn compare(reports: &[MetricsReport], directions: &[(&str, Direction)]) -> ComparisonTable {
    assert!(reports.len() >= 2, "comparison needs at least two models");
    let models: Vec<String> = reports.iter().map(|r| r.model.clone()).collect();
    let value_of = |r: &MetricsReport, metric: &str| -> Option<f64> {
        match metric {
            "rmse" => Some(r.rmse),
            "mae" => Some(r.mae),
            "nnll" => r.nnll,
            "iw" => r.iw,
            _ => None,
        }
    };
    let rows = directions
        .iter()
        .map(|(metric, dir)| {
            let values: Vec<Option<f64>> = reports.iter().map(|r| value_of(r, metric)).collect();
            let best_value = values
                .iter()
                .flatten()
                .cloned()
                .fold(None::<f64>, |acc, v| match (acc, dir) {
                    (None, _) => Some(v),
                    (Some(b), Direction::LowerBetter) => Some(b.min(v)),
                    (Some(b), Direction::HigherBetter) => Some(b.max(v)),
                });
            let best = values
                .iter()
                .map(|v| match (v, best_value) {
                    (Some(v), Some(b)) => *v == b,
                    _ => false,
                })
                .collect();
            ComparisonRow { metric: metric.to_string(), values, best }
        })
        .collect();
    ComparisonTable { models, rows }
}

/// `model,metric,value,quartile` rows; overall metrics leave quartile empty.
pub fn write_report_csv<W: std::io::Write>(
    mut w: W,
    reports: &[MetricsReport],
    quartiles: &[QuartileReport],
) -> std::io::Result<()> {
    writeln!(w, "model,metric,value,quartile")?;
    for r in reports {
        writeln!(w, "{},rmse,{},", r.model, r.rmse)?;
        writeln!(w, "{},mae,{},", r.model, r.mae)?;
        match r.nnll {
            Some(v) => writeln!(w, "{},nnll,{},", r.model, v)?,
            None => writeln!(w, "{},nnll,NA,", r.model)?,
        }
        match r.iw {
            Some(v) => writeln!(w, "{},iw,{},", r.model, v)?,
            None => writeln!(w, "{},iw,NA,", r.model)?,
        }
    }
    for q in quartiles {
        for row in &q.rows {
            writeln!(w, "{},rmse,{},Q{}", q.model, row.rmse, row.quartile)?;
            writeln!(w, "{},rel_rmse,{},Q{}", q.model, row.rel_rmse, row.quartile)?;
            writeln!(w, "{},mae,{},Q{}", q.model, row.mae, row.quartile)?;
            writeln!(w, "{},mape,{},Q{}", q.model, row.mape, row.quartile)?;
        }
    }
    Ok(())
}

/// Markdown comparison table; best entries bolded, NA for missing metrics.
pub fn write_comparison_markdown<W: std::io::Write>(mut w: W, table: &ComparisonTable) -> std::io::Result<()> {
    write!(w, "| metric |")?;
    for m in &table.models {
        write!(w, " {m} |")?;
    }
    writeln!(w)?;
    write!(w, "|---|")?;
    for _ in &table.models {
        write!(w, "---|")?;
    }
    writeln!(w)?;
    for row in &table.rows {
        write!(w, "| {} |", row.metric)?;
        for (v, best) in row.values.iter().zip(row.best.iter()) {
            match v {
                None => write!(w, " NA |")?,
                Some(v) if *best => write!(w, " **{v:.4}** |")?,
                Some(v) => write!(w, " {v:.4} |")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// CSV variant of the comparison table.
pub fn write_comparison_csv<W: std::io::Write>(mut w: W, table: &ComparisonTable) -> std::io::Result<()> {
    write!(w, "metric")?;
    for m in &table.models {
        write!(w, ",{m},{m}_best")?;
    }
    writeln!(w)?;
    for row in &table.rows {
        write!(w, "{}", row.metric)?;
        for (v, best) in row.values.iter().zip(row.best.iter()) {
            match v {
                None => write!(w, ",NA,")?,
                Some(v) => write!(w, ",{v},{}", if *best { 1 } else { 0 })?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Plot-band rows: `t,v_true,mean,lo,hi,gate_1..gate_S` with the band at
/// mean +- 2 sd, left-truncated at zero. Gate columns are empty when the
/// model has no gate.
pub fn write_plot_csv<W: std::io::Write>(
    mut w: W,
    t: &[i64],
    pred: &PredictionSet,
    gates: Option<&[Vec<f64>]>,
    n_sources: usize,
) -> std::io::Result<()> {
    write!(w, "t,v_true,mean,lo,hi")?;
    for s in 1..=n_sources {
        write!(w, ",gate_{s}")?;
    }
    writeln!(w)?;
    let sd = pred.sd_y.as_ref();
    for i in 0..pred.len() {
        let sd_v = sd.map(|s| s[i] * pred.a[i]).unwrap_or(f64::NAN);
        let (lo, hi) = if sd_v.is_finite() {
            ((pred.v_hat[i] - 2.0 * sd_v).max(0.0), pred.v_hat[i] + 2.0 * sd_v)
        } else {
            (f64::NAN, f64::NAN)
        };
        write!(w, "{},{},{},{},{}", t[i], pred.v_true[i], pred.v_hat[i], lo, hi)?;
        for s in 0..n_sources {
            match gates {
                Some(g) => write!(w, ",{}", g[i][s])?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(v_true: Vec<f64>, v_hat: Vec<f64>) -> PredictionSet {
        let a = vec![1.0; v_true.len()];
        PredictionSet { v_true, v_hat, sd_y: None, nll_y: None, a }
    }

    #[test]
    fn rmse_mae_hand_values() {
        let perfect = set(vec![1.0, 2.0], vec![1.0, 2.0]);
        assert_eq!(rmse(&perfect).unwrap(), 0.0);
        assert_eq!(mae(&perfect).unwrap(), 0.0);

        let p = set(vec![1.0, 2.0], vec![2.0, 4.0]);
        assert!((rmse(&p).unwrap() - 2.5f64.sqrt()).abs() < 1e-12);
        assert!((mae(&p).unwrap() - 1.5).abs() < 1e-12);

        // Constant shift of size c on perfect predictions: both metrics = |c|.
        let shifted = set(vec![1.0, 2.0, 3.0], vec![1.7, 2.7, 3.7]);
        assert!((rmse(&shifted).unwrap() - 0.7).abs() < 1e-12);
        assert!((mae(&shifted).unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn nnll_change_of_variables() {
        let mut p = set(vec![1.0], vec![1.0]);
        p.nll_y = Some(vec![0.918_938_533_204_672_7]);
        assert!((nnll(&p).unwrap() - 0.918_938_533_204_672_7).abs() < 1e-15);

        p.a = vec![2.0];
        assert!((nnll(&p).unwrap() - (0.918_938_533_204_672_7 + 2f64.ln())).abs() < 1e-15);

        // Duplicating an instance leaves the mean unchanged.
        let mut two = set(vec![1.0, 1.0], vec![1.0, 1.0]);
        two.nll_y = Some(vec![0.5, 0.5]);
        assert!((nnll(&two).unwrap() - 0.5).abs() < 1e-15);

        let missing = set(vec![1.0], vec![1.0]);
        assert!(matches!(nnll(&missing), Err(EvaluateError::MissingLikelihood)));
    }

    #[test]
    fn iw_scaling() {
        let mut p = set(vec![1.0, 1.0], vec![1.0, 1.0]);
        p.sd_y = Some(vec![0.0, 0.0]);
        assert_eq!(iw(&p).unwrap(), 0.0);

        p.sd_y = Some(vec![1.0, 3.0]);
        p.a = vec![2.0, 2.0];
        assert!((iw(&p).unwrap() - 4.0).abs() < 1e-15);

        p.sd_y = Some(vec![3.0, 9.0]);
        assert!((iw(&p).unwrap() - 12.0).abs() < 1e-15);
    }

    #[test]
    fn relative_metrics_hand_values() {
        let perfect = set(vec![1.0, 2.0], vec![1.0, 2.0]);
        assert_eq!(rel_metrics(&perfect).unwrap(), (0.0, 0.0));

        let p = set(vec![1.0], vec![2.0]);
        assert_eq!(rel_metrics(&p).unwrap(), (1.0, 1.0));

        let p = set(vec![2.0, 4.0], vec![1.0, 2.0]);
        let (rr, mape) = rel_metrics(&p).unwrap();
        assert!((rr - 0.5).abs() < 1e-15);
        assert!((mape - 0.5).abs() < 1e-15);

        let zero = set(vec![0.0], vec![1.0]);
        assert!(matches!(rel_metrics(&zero), Err(EvaluateError::ZeroTrueVolume)));
    }

    #[test]
    fn metrics_match_brute_force_and_permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.random_range(2..50);
            let v_true: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..10.0)).collect();
            let v_hat: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..10.0)).collect();
            let p = set(v_true.clone(), v_hat.clone());

            let mut sse = 0.0;
            let mut sae = 0.0;
            for i in 0..n {
                sse += (v_true[i] - v_hat[i]).powi(2);
                sae += (v_true[i] - v_hat[i]).abs();
            }
            let r = rmse(&p).unwrap();
            assert!((r * r - sse / n as f64).abs() <= 1e-12 * (sse / n as f64));
            assert!((mae(&p).unwrap() - sae / n as f64).abs() <= 1e-12);

            // Permutation invariance.
            let mut idx: Vec<usize> = (0..n).collect();
            idx.reverse();
            let perm = set(
                idx.iter().map(|&i| v_true[i]).collect(),
                idx.iter().map(|&i| v_hat[i]).collect(),
            );
            assert!((rmse(&perm).unwrap() - r).abs() < 1e-12);
        }
    }

    #[test]
    fn quartile_partition_and_perfect_predictions() {
        let v: Vec<f64> = (1..=8).map(|i| i as f64).collect();
        let p = set(v.clone(), v);
        let rep = quartile_report("m", &p).unwrap();
        for row in &rep.rows {
            assert_eq!(row.n, 2);
            assert_eq!(row.rmse, 0.0);
            assert_eq!(row.mape, 0.0);
        }
    }

    #[test]
    fn quartile_weighted_mae_recovers_overall() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 103;
        let v_true: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..20.0)).collect();
        let v_hat: Vec<f64> = v_true.iter().map(|v| v * rng.random_range(0.8..1.2)).collect();
        let p = set(v_true, v_hat);
        let rep = quartile_report("m", &p).unwrap();
        let total_n: usize = rep.rows.iter().map(|r| r.n).sum();
        assert_eq!(total_n, n);
        let weighted: f64 = rep.rows.iter().map(|r| r.mae * r.n as f64).sum::<f64>() / n as f64;
        let overall = mae(&p).unwrap();
        assert!((weighted - overall).abs() <= 1e-12 * overall.max(1.0));
    }

    #[test]
    fn quartile_multiplicative_noise_rank_ordering() {
        // v_hat = v*exp(eps): absolute RMSE grows with the quartile while the
        // relative error stays flat; assert the Q4 > Q1 rank ordering.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 4000;
        let v_true: Vec<f64> = (0..n).map(|_| (rng.random_range(-1.5f64..1.5)).exp() * 5.0).collect();
        let v_hat: Vec<f64> = v_true
            .iter()
            .map(|v| v * (rng.random_range(-0.2f64..0.2)).exp())
            .collect();
        let p = set(v_true, v_hat);
        let rep = quartile_report("m", &p).unwrap();
        assert!(rep.rows[3].rmse > rep.rows[0].rmse);
    }

    #[test]
    fn comparison_marks_best_and_handles_na() {
        let a = MetricsReport { model: "a".into(), n: 10, rmse: 1.0, mae: 0.5, nnll: Some(2.0), iw: Some(3.0) };
        let b = MetricsReport { model: "b".into(), n: 10, rmse: 2.0, mae: 0.9, nnll: None, iw: None };
        let dirs = [
            ("rmse", Direction::LowerBetter),
            ("mae", Direction::LowerBetter),
            ("nnll", Direction::LowerBetter),
            ("iw", Direction::LowerBetter),
        ];
        let table = compare(&[a.clone(), b.clone()], &dirs);
        // Model a dominates every metric it reports; b never wins nnll/iw.
        for row in &table.rows {
            assert!(row.best[0]);
            assert!(!row.best[1]);
        }

        // Ties both marked.
        let c = MetricsReport { model: "c".into(), n: 10, rmse: 1.0, mae: 0.5, nnll: None, iw: None };
        let table = compare(&[a, c], &[("rmse", Direction::LowerBetter)]);
        assert!(table.rows[0].best.iter().all(|&x| x));
    }
}
