//! Masked evaluation metrics: MAE, RMSE, and MAPE, per horizon and
//! aggregated, emitted as JSON lines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One metrics row. `horizon` is `None` for the aggregate over all horizons.
/// A slice whose mask selects nothing is reported with absent metric values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsSlice {
    pub horizon: Option<usize>,
    pub mae: Option<f64>,
    pub rmse: Option<f64>,
    /// Percent.
    pub mape: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_horizon: Vec<MetricsSlice>,
    pub aggregate: MetricsSlice,
    pub wall_seconds: f64,
}

impl MetricsReport {
    /// One JSON object per horizon plus one for the aggregate.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for slice in &self.per_horizon {
            out.push_str(&serde_json::to_string(slice).unwrap());
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&self.aggregate).unwrap());
        out.push('\n');
        out
    }

    pub fn slice_for(&self, horizon: usize) -> Option<&MetricsSlice> {
        self.per_horizon
            .iter()
            .find(|s| s.horizon == Some(horizon))
    }
}

fn slice_metrics(
    pred: &[f64],
    truth: &[f64],
    mask: &[f64],
    horizon: Option<usize>,
) -> MetricsSlice {
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut ape_sum = 0.0;
    let mut count = 0usize;
    for i in 0..pred.len() {
        if mask[i] == 0.0 {
            continue;
        }
        let d = pred[i] - truth[i];
        abs_sum += d.abs();
        sq_sum += d * d;
        ape_sum += (d / truth[i]).abs();
        count += 1;
    }
    if count == 0 {
        return MetricsSlice {
            horizon,
            mae: None,
            rmse: None,
            mape: None,
            count: 0,
        };
    }
    let n = count as f64;
    MetricsSlice {
        horizon,
        mae: Some(abs_sum / n),
        rmse: Some((sq_sum / n).sqrt()),
        mape: Some(100.0 * ape_sum / n),
        count,
    }
}

/// Compute masked MAE / RMSE / MAPE per horizon and in aggregate. Inputs are
/// flat `[..., Q, 1]` arrays of equal length; `output_len` is Q. The mask
/// must be nonzero only where `truth` is nonzero, so MAPE is well defined.
pub fn evaluate_metrics(
    pred: &[f64],
    truth: &[f64],
    mask: &[f64],
    output_len: usize,
) -> Result<MetricsReport> {
    if pred.len() != truth.len() || pred.len() != mask.len() {
        return Err(Error::Dimension(format!(
            "metric inputs differ in length: {} / {} / {}",
            pred.len(),
            truth.len(),
            mask.len()
        )));
    }
    if output_len == 0 || pred.len() % output_len != 0 {
        return Err(Error::Dimension(format!(
            "length {} is not a multiple of output_len {}",
            pred.len(),
            output_len
        )));
    }
    for i in 0..truth.len() {
        if mask[i] != 0.0 && truth[i] == 0.0 {
            return Err(Error::Data(format!(
                "mask selects a zero ground-truth entry at flat index {i}"
            )));
        }
    }
    let start = std::time::Instant::now();
    let mut per_horizon = Vec::with_capacity(output_len);
    for h in 0..output_len {
        let gather = |src: &[f64]| -> Vec<f64> {
            src.iter()
                .skip(h)
                .step_by(output_len)
                .copied()
                .collect()
        };
        per_horizon.push(slice_metrics(
            &gather(pred),
            &gather(truth),
            &gather(mask),
            Some(h + 1),
        ));
    }
    let aggregate = slice_metrics(pred, truth, mask, None);
    let report = MetricsReport {
        per_horizon,
        aggregate,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    for slice in report.per_horizon.iter().chain([&report.aggregate]) {
        if let (Some(mae), Some(rmse)) = (slice.mae, slice.rmse) {
            if mae > rmse + 1e-12 {
                return Err(Error::Numeric(format!(
                    "MAE {mae} exceeds RMSE {rmse} on horizon {:?}",
                    slice.horizon
                )));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_example() {
        let report = evaluate_metrics(&[3.0, 5.0], &[1.0, 2.0], &[1.0, 1.0], 1).unwrap();
        let agg = &report.aggregate;
        assert_eq!(agg.mae.unwrap(), 2.5);
        assert_eq!(agg.rmse.unwrap(), 6.5f64.sqrt());
        assert_eq!(agg.mape.unwrap(), 175.0);
        assert_eq!(agg.count, 2);
    }

    #[test]
    fn perfect_prediction_is_all_zero() {
        let t = [1.0, 2.0, 3.0];
        let report = evaluate_metrics(&t, &t, &[1.0; 3], 3).unwrap();
        let agg = &report.aggregate;
        assert_eq!(agg.mae.unwrap(), 0.0);
        assert_eq!(agg.rmse.unwrap(), 0.0);
        assert_eq!(agg.mape.unwrap(), 0.0);
    }

    #[test]
    fn all_masked_slice_is_absent_not_zero() {
        // horizon 2 fully masked out
        let pred = [1.0, 9.0, 2.0, 9.0];
        let truth = [1.5, 0.0, 2.5, 0.0];
        let mask = [1.0, 0.0, 1.0, 0.0];
        let report = evaluate_metrics(&pred, &truth, &mask, 2).unwrap();
        let h2 = report.slice_for(2).unwrap();
        assert!(h2.mae.is_none() && h2.rmse.is_none() && h2.mape.is_none());
        assert_eq!(h2.count, 0);
        let h1 = report.slice_for(1).unwrap();
        assert_eq!(h1.mae.unwrap(), 0.5);
    }

    #[test]
    fn matches_flat_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = 4;
        let n = 12 * q;
        let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let truth: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..5.0)).collect();
        let mask: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.8) { 1.0 } else { 0.0 }).collect();
        let report = evaluate_metrics(&pred, &truth, &mask, q).unwrap();
        let (mut abs, mut sq, mut ape, mut cnt) = (0.0, 0.0, 0.0, 0usize);
        for i in 0..n {
            if mask[i] != 0.0 {
                abs += (pred[i] - truth[i]).abs();
                sq += (pred[i] - truth[i]).powi(2);
                ape += ((pred[i] - truth[i]) / truth[i]).abs();
                cnt += 1;
            }
        }
        let agg = &report.aggregate;
        assert!((agg.mae.unwrap() - abs / cnt as f64).abs() <= 1e-10);
        assert!((agg.rmse.unwrap() - (sq / cnt as f64).sqrt()).abs() <= 1e-10);
        assert!((agg.mape.unwrap() - 100.0 * ape / cnt as f64).abs() <= 1e-10);
        assert_eq!(agg.count, cnt);
    }

    #[test]
    fn mae_never_exceeds_rmse_on_fuzzed_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let q = rng.gen_range(1..5);
            let n = q * rng.gen_range(1..20);
            let pred: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let truth: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..10.0)).collect();
            let mask: Vec<f64> = (0..n).map(|_| if rng.gen_bool(0.7) { 1.0 } else { 0.0 }).collect();
            let report = evaluate_metrics(&pred, &truth, &mask, q).unwrap();
            for slice in report.per_horizon.iter().chain([&report.aggregate]) {
                if let (Some(mae), Some(rmse)) = (slice.mae, slice.rmse) {
                    assert!(mae <= rmse + 1e-12);
                }
            }
        }
    }

    #[test]
    fn mask_on_zero_truth_rejected() {
        let err = evaluate_metrics(&[1.0], &[0.0], &[1.0], 1).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }

    #[test]
    fn json_lines_has_one_object_per_horizon_plus_aggregate() {
        let pred = [1.0, 2.0, 3.0, 4.0];
        let truth = [1.0, 2.0, 3.0, 4.0];
        let mask = [1.0; 4];
        let report = evaluate_metrics(&pred, &truth, &mask, 2).unwrap();
        let rendered = report.to_json_lines();
        let lines: Vec<&str> = rendered.trim_end().lines().collect();
        assert_eq!(lines.len(), 3);
        let first: MetricsSlice = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first.horizon, Some(1));
        let last: MetricsSlice = serde_json::from_str(lines[2]).unwrap();
        assert_eq!(last.horizon, None);
    }
}
