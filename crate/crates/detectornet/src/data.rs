//! Data pipeline: CSV loading and writing, distance-kernel adjacency,
//! sliding-window sample construction with a chronological split, synthetic
//! toy data, and the historical-average baseline.

use std::fmt::Write as _;
use std::path::Path;

use chrono::{NaiveDateTime, Timelike};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// A uniformly sampled multi-detector series: `values` is T x N in row-major
/// time order. Missing readings are recorded as 0 and masked downstream.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSeries {
    pub node_ids: Vec<String>,
    pub start: NaiveDateTime,
    pub interval_seconds: i64,
    /// T x N, row major.
    pub values: Vec<f64>,
    pub n_steps: usize,
}

impl DetectorSeries {
    pub fn n_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn timestamp(&self, step: usize) -> NaiveDateTime {
        self.start + chrono::Duration::seconds(self.interval_seconds * step as i64)
    }

    /// Fraction of the day elapsed at a given step, in [0, 1).
    pub fn time_of_day(&self, step: usize) -> f64 {
        let t = self.timestamp(step);
        t.num_seconds_from_midnight() as f64 / 86_400.0
    }
}

/// Parse a `timestamp,<id1>,<id2>,...` CSV with ISO-8601 timestamps and a
/// constant sampling interval.
pub fn load_series_csv(path: &Path) -> Result<DetectorSeries> {
    let text = std::fs::read_to_string(path)?;
    parse_series_csv(&text)
}

pub fn parse_series_csv(text: &str) -> Result<DetectorSeries> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Format("series file is empty".into()))?;
    let mut cols = header.split(',');
    let first = cols.next().unwrap_or("");
    if first != "timestamp" {
        return Err(Error::Format(format!(
            "line 1: first header column must be 'timestamp', got '{first}'"
        )));
    }
    let node_ids: Vec<String> = cols.map(|c| c.to_string()).collect();
    if node_ids.is_empty() {
        return Err(Error::Format("line 1: no node columns in header".into()));
    }

    let n = node_ids.len();
    let mut values = Vec::new();
    let mut timestamps: Vec<NaiveDateTime> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let ts_text = fields.next().unwrap();
        let ts = NaiveDateTime::parse_from_str(ts_text, TIMESTAMP_FORMAT).map_err(|_| {
            Error::Format(format!("line {line_no}: bad timestamp '{ts_text}'"))
        })?;
        if let Some(prev) = timestamps.last() {
            if ts <= *prev {
                return Err(Error::Format(format!(
                    "line {line_no}: timestamp {ts} is not after {prev}"
                )));
            }
        }
        timestamps.push(ts);
        let mut count = 0usize;
        for field in fields {
            let v: f64 = field.parse().map_err(|_| {
                Error::Format(format!("line {line_no}: unparsable value '{field}'"))
            })?;
            if !v.is_finite() {
                return Err(Error::Format(format!(
                    "line {line_no}: non-finite value '{field}'"
                )));
            }
            values.push(v);
            count += 1;
        }
        if count != n {
            return Err(Error::Format(format!(
                "line {line_no}: expected {n} values, found {count}"
            )));
        }
    }
    if timestamps.len() < 2 {
        return Err(Error::Format(
            "series needs at least 2 rows to establish the interval".into(),
        ));
    }
    let interval = (timestamps[1] - timestamps[0]).num_seconds();
    for (i, pair) in timestamps.windows(2).enumerate() {
        if (pair[1] - pair[0]).num_seconds() != interval {
            return Err(Error::Format(format!(
                "line {}: timestamp gap (expected {}s interval)",
                i + 3,
                interval
            )));
        }
    }
    Ok(DetectorSeries {
        node_ids,
        start: timestamps[0],
        interval_seconds: interval,
        values,
        n_steps: timestamps.len(),
    })
}

/// Write the canonical form read back by `load_series_csv`; loading then
/// writing a canonical file reproduces it byte-for-byte.
pub fn write_series_csv(series: &DetectorSeries, path: &Path) -> Result<()> {
    std::fs::write(path, render_series_csv(series))?;
    Ok(())
}

pub fn render_series_csv(series: &DetectorSeries) -> String {
    let mut out = String::from("timestamp");
    for id in &series.node_ids {
        out.push(',');
        out.push_str(id);
    }
    out.push('\n');
    let n = series.n_nodes();
    for t in 0..series.n_steps {
        let _ = write!(out, "{}", series.timestamp(t).format(TIMESTAMP_FORMAT));
        for j in 0..n {
            let _ = write!(out, ",{}", series.values[t * n + j]);
        }
        out.push('\n');
    }
    out
}

/// Build an N x N weighted adjacency from `from,to,distance` rows through a
/// Gaussian kernel: `A_ij = exp(-(d/sigma)^2)` where it clears `threshold`,
/// else 0. When `sigma` is `None` the standard deviation of the listed
/// distances is used.
pub fn load_adjacency_csv(
    path: &Path,
    n_nodes: usize,
    sigma: Option<f64>,
    threshold: f64,
) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    parse_adjacency_csv(&text, n_nodes, sigma, threshold)
}

pub fn parse_adjacency_csv(
    text: &str,
    n_nodes: usize,
    sigma: Option<f64>,
    threshold: f64,
) -> Result<Vec<f64>> {
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if idx == 0 || line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Format(format!(
                "line {line_no}: expected 'from,to,distance', got '{line}'"
            )));
        }
        let parse_id = |s: &str| -> Result<usize> {
            let id: usize = s
                .parse()
                .map_err(|_| Error::Format(format!("line {line_no}: bad node id '{s}'")))?;
            if id >= n_nodes {
                return Err(Error::Format(format!(
                    "line {line_no}: unknown node id {id} (graph has {n_nodes} nodes)"
                )));
            }
            Ok(id)
        };
        let from = parse_id(fields[0])?;
        let to = parse_id(fields[1])?;
        let dist: f64 = fields[2].parse().map_err(|_| {
            Error::Format(format!("line {line_no}: bad distance '{}'", fields[2]))
        })?;
        if !dist.is_finite() || dist < 0.0 {
            return Err(Error::Format(format!(
                "line {line_no}: distance must be finite and non-negative"
            )));
        }
        edges.push((from, to, dist));
    }
    let sigma = match sigma {
        Some(s) => {
            if s <= 0.0 {
                return Err(Error::Config(format!("sigma must be positive, got {s}")));
            }
            s
        }
        None => {
            let mean = edges.iter().map(|e| e.2).sum::<f64>() / edges.len().max(1) as f64;
            let var = edges.iter().map(|e| (e.2 - mean).powi(2)).sum::<f64>()
                / edges.len().max(1) as f64;
            let s = var.sqrt();
            if s <= 0.0 {
                1.0
            } else {
                s
            }
        }
    };
    let mut a = vec![0.0; n_nodes * n_nodes];
    for (from, to, dist) in edges {
        let w = (-(dist * dist) / (sigma * sigma)).exp();
        if w >= threshold {
            a[from * n_nodes + to] = w;
        }
    }
    Ok(a)
}

/// Windowed samples ready for training. Inputs are z-scored with train-split
/// statistics; targets stay raw, with the mask false exactly where the raw
/// target is 0.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub n_samples: usize,
    pub n_nodes: usize,
    pub input_len: usize,
    pub input_width: usize,
    pub output_len: usize,
    /// n_samples x N x P x D, normalized.
    pub inputs: Vec<f64>,
    /// n_samples x N x Q x 1, raw scale.
    pub targets: Vec<f64>,
    /// Same shape as targets; 1 where the raw target is nonzero.
    pub masks: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl SampleBatch {
    pub fn is_empty(&self) -> bool {
        self.n_samples == 0
    }

    fn sample_stride_in(&self) -> usize {
        self.n_nodes * self.input_len * self.input_width
    }

    fn sample_stride_out(&self) -> usize {
        self.n_nodes * self.output_len
    }

    /// Gather the listed samples as a `[B, N, P, D]` tensor.
    pub fn input_tensor(&self, indices: &[usize]) -> Result<Tensor> {
        let stride = self.sample_stride_in();
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            data.extend_from_slice(&self.inputs[i * stride..(i + 1) * stride]);
        }
        Tensor::from_vec(
            &[indices.len(), self.n_nodes, self.input_len, self.input_width],
            data,
        )
    }

    /// Gather raw targets as `[B, N, Q, 1]`.
    pub fn target_tensor(&self, indices: &[usize]) -> Result<Tensor> {
        self.gather_out(&self.targets, indices)
    }

    /// Gather masks as `[B, N, Q, 1]`.
    pub fn mask_tensor(&self, indices: &[usize]) -> Result<Tensor> {
        self.gather_out(&self.masks, indices)
    }

    fn gather_out(&self, source: &[f64], indices: &[usize]) -> Result<Tensor> {
        let stride = self.sample_stride_out();
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            data.extend_from_slice(&source[i * stride..(i + 1) * stride]);
        }
        Tensor::from_vec(&[indices.len(), self.n_nodes, self.output_len, 1], data)
    }

    /// Normalize a raw-scale tensor with this batch's statistics.
    pub fn normalize(&self, raw: &Tensor) -> Result<Tensor> {
        raw.add(&Tensor::scalar(-self.mean))?.scale(1.0 / self.std)
    }

    /// Map normalized predictions back to the raw scale.
    pub fn denormalize(&self, normalized: &Tensor) -> Result<Tensor> {
        normalized.scale(self.std)?.add(&Tensor::scalar(self.mean))
    }
}

/// Slide windows of P inputs and Q targets (stride 1) over the series, split
/// them chronologically by the given ratios, and z-score the value channel
/// with statistics from the train split only. `input_width` 2 appends a
/// time-of-day fraction channel.
pub fn make_windows(
    series: &DetectorSeries,
    input_len: usize,
    output_len: usize,
    input_width: usize,
    split: (f64, f64, f64),
) -> Result<(SampleBatch, SampleBatch, SampleBatch)> {
    if input_width != 1 && input_width != 2 {
        return Err(Error::Config(format!(
            "input_width must be 1 or 2, got {input_width}"
        )));
    }
    let t = series.n_steps;
    if t < input_len + output_len {
        return Err(Error::Data(format!(
            "series has {t} steps, need at least P+Q = {}",
            input_len + output_len
        )));
    }
    if (split.0 + split.1 + split.2 - 1.0).abs() > 1e-9 || split.0 <= 0.0 {
        return Err(Error::Config(format!(
            "split ratios must be positive and sum to 1, got {split:?}"
        )));
    }
    let total = t - input_len - output_len + 1;
    let n_train = ((total as f64) * split.0).round() as usize;
    let n_val = ((total as f64) * split.1).round() as usize;
    let n_train = n_train.clamp(1, total);
    let n_val = n_val.min(total - n_train);
    let n_test = total - n_train - n_val;

    // Train statistics come from the value channel of train input windows,
    // i.e. series steps [0, n_train - 1 + P).
    let n = series.n_nodes();
    let train_steps = n_train - 1 + input_len;
    let train_region = &series.values[..train_steps * n];
    let mean = train_region.iter().sum::<f64>() / train_region.len() as f64;
    let var = train_region
        .iter()
        .map(|v| (v - mean).powi(2))
        .sum::<f64>()
        / train_region.len() as f64;
    let std = if var.sqrt() > 0.0 { var.sqrt() } else { 1.0 };

    let build = |offset: usize, count: usize| -> SampleBatch {
        let mut inputs = Vec::with_capacity(count * n * input_len * input_width);
        let mut targets = Vec::with_capacity(count * n * output_len);
        let mut masks = Vec::with_capacity(count * n * output_len);
        for s in 0..count {
            let t0 = offset + s;
            for node in 0..n {
                for step in 0..input_len {
                    let raw = series.values[(t0 + step) * n + node];
                    inputs.push((raw - mean) / std);
                    if input_width == 2 {
                        inputs.push(series.time_of_day(t0 + step));
                    }
                }
                for step in 0..output_len {
                    let raw = series.values[(t0 + input_len + step) * n + node];
                    targets.push(raw);
                    masks.push(if raw != 0.0 { 1.0 } else { 0.0 });
                }
            }
        }
        SampleBatch {
            n_samples: count,
            n_nodes: n,
            input_len,
            input_width,
            output_len,
            inputs,
            targets,
            masks,
            mean,
            std,
        }
    };

    Ok((
        build(0, n_train),
        build(n_train, n_val),
        build(n_train + n_val, n_test),
    ))
}

/// Knobs for the synthetic toy dataset.
#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub base: f64,
    pub amplitude: f64,
    /// Strength of the lagged neighbor coupling.
    pub coupling: f64,
    /// Coupling lag in steps.
    pub lag: usize,
    pub noise: f64,
    pub samples_per_day: usize,
    pub interval_seconds: i64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            base: 40.0,
            amplitude: 10.0,
            coupling: 0.6,
            lag: 3,
            noise: 0.5,
            samples_per_day: 288,
            interval_seconds: 300,
        }
    }
}

/// Ring-graph toy dataset: each node carries a daily sinusoid plus a lagged
/// copy of its clockwise neighbor's sinusoid and seeded Gaussian noise.
pub fn synthesize_dataset(
    n_nodes: usize,
    n_steps: usize,
    seed: u64,
) -> Result<(DetectorSeries, Vec<f64>)> {
    synthesize_dataset_with(n_nodes, n_steps, seed, &SynthOptions::default())
}

pub fn synthesize_dataset_with(
    n_nodes: usize,
    n_steps: usize,
    seed: u64,
    opts: &SynthOptions,
) -> Result<(DetectorSeries, Vec<f64>)> {
    if n_nodes < 2 {
        return Err(Error::Config(format!(
            "synthetic dataset needs at least 2 nodes, got {n_nodes}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = std::f64::consts::TAU / opts.samples_per_day as f64;
    let phase = |node: usize| std::f64::consts::TAU * node as f64 / n_nodes as f64;
    let signal = |node: usize, step: f64| (omega * step + phase(node)).sin();
    let mut values = vec![0.0; n_steps * n_nodes];
    for t in 0..n_steps {
        for i in 0..n_nodes {
            let neighbor = (i + 1) % n_nodes;
            let lagged = t as f64 - opts.lag as f64;
            let noise: f64 = StandardNormal.sample(&mut rng);
            values[t * n_nodes + i] = opts.base
                + opts.amplitude * signal(i, t as f64)
                + opts.coupling * opts.amplitude * signal(neighbor, lagged)
                + opts.noise * noise;
        }
    }
    let mut adjacency = vec![0.0; n_nodes * n_nodes];
    for i in 0..n_nodes {
        let next = (i + 1) % n_nodes;
        adjacency[i * n_nodes + next] = 1.0;
        adjacency[next * n_nodes + i] = 1.0;
    }
    let series = DetectorSeries {
        node_ids: (0..n_nodes).map(|i| i.to_string()).collect(),
        start: NaiveDateTime::parse_from_str("2022-01-01T00:00:00", TIMESTAMP_FORMAT).unwrap(),
        interval_seconds: opts.interval_seconds,
        values,
        n_steps,
    };
    Ok((series, adjacency))
}

/// Historical-average baseline: predict the raw-scale mean of each node's
/// input window for every horizon. Output shape matches the batch targets.
pub fn historical_average(batch: &SampleBatch) -> Vec<f64> {
    let (n, p, d, q) = (
        batch.n_nodes,
        batch.input_len,
        batch.input_width,
        batch.output_len,
    );
    let mut out = Vec::with_capacity(batch.n_samples * n * q);
    for s in 0..batch.n_samples {
        for node in 0..n {
            let base = (s * n + node) * p * d;
            let mut sum = 0.0;
            for step in 0..p {
                let normalized = batch.inputs[base + step * d];
                sum += normalized * batch.std + batch.mean;
            }
            let mean = sum / p as f64;
            for _ in 0..q {
                out.push(mean);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use tempfile::tempdir;

    fn toy_series_text() -> &'static str {
        "timestamp,a,b\n2022-01-01T00:00:00,1,2\n2022-01-01T00:05:00,3,4\n2022-01-01T00:10:00,5,6\n"
    }

    #[test]
    fn parses_three_row_two_node_file() {
        let s = parse_series_csv(toy_series_text()).unwrap();
        assert_eq!(s.node_ids, vec!["a", "b"]);
        assert_eq!(s.n_steps, 3);
        assert_eq!(s.interval_seconds, 300);
        assert_eq!(s.values, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn timestamp_gap_names_the_row() {
        let text = "timestamp,a\n2022-01-01T00:00:00,1\n2022-01-01T00:05:00,2\n2022-01-01T00:15:00,3\n";
        let err = parse_series_csv(text).unwrap_err();
        match err {
            Error::Format(msg) => assert!(msg.contains("line 4"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn ragged_row_and_bad_float_name_lines() {
        let ragged = "timestamp,a,b\n2022-01-01T00:00:00,1\n";
        match parse_series_csv(ragged).unwrap_err() {
            Error::Format(msg) => assert!(msg.contains("line 2"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let bad = "timestamp,a\n2022-01-01T00:00:00,x\n";
        match parse_series_csv(bad).unwrap_err() {
            Error::Format(msg) => assert!(msg.contains("line 2") && msg.contains('x'), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_monotone_timestamps_rejected() {
        let text = "timestamp,a\n2022-01-01T00:05:00,1\n2022-01-01T00:00:00,2\n";
        assert!(matches!(parse_series_csv(text).unwrap_err(), Error::Format(_)));
    }

    #[test]
    fn series_roundtrip_byte_exact() {
        let s = parse_series_csv(toy_series_text()).unwrap();
        assert_eq!(render_series_csv(&s), toy_series_text());
        let dir = tempdir().unwrap();
        let path = dir.path().join("series.csv");
        write_series_csv(&s, &path).unwrap();
        let loaded = load_series_csv(&path).unwrap();
        assert_eq!(loaded, s);
    }

    #[test]
    fn large_shape_loads() {
        // dataset-scale geometry: many rows, hundreds of columns
        let (n, t) = (207, 500);
        let mut text = String::from("timestamp");
        for i in 0..n {
            text.push_str(&format!(",{i}"));
        }
        text.push('\n');
        let start = NaiveDateTime::parse_from_str("2022-01-01T00:00:00", TIMESTAMP_FORMAT).unwrap();
        for step in 0..t {
            let ts = start + chrono::Duration::seconds(300 * step as i64);
            text.push_str(&ts.format(TIMESTAMP_FORMAT).to_string());
            for i in 0..n {
                text.push_str(&format!(",{}", (step + i) % 7));
            }
            text.push('\n');
        }
        let s = parse_series_csv(&text).unwrap();
        assert_eq!(s.n_nodes(), 207);
        assert_eq!(s.n_steps, 500);
    }

    #[test]
    fn adjacency_zero_distance_is_weight_one() {
        let text = "from,to,distance\n0,1,0\n";
        let a = parse_adjacency_csv(text, 2, Some(1.0), 0.0).unwrap();
        assert_eq!(a, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn adjacency_threshold_one_keeps_only_zero_distance() {
        let text = "from,to,distance\n0,1,0\n1,2,3.5\n2,0,1.0\n";
        let a = parse_adjacency_csv(text, 3, Some(2.0), 1.0).unwrap();
        let mut expect = vec![0.0; 9];
        expect[1] = 1.0;
        assert_eq!(a, expect);
    }

    #[test]
    fn adjacency_matches_hand_kernel() {
        let text = "from,to,distance\n0,1,1\n1,2,2\n2,3,3\n3,0,4\n";
        let sigma = 2.0;
        let a = parse_adjacency_csv(text, 4, Some(sigma), 0.0).unwrap();
        let w = |d: f64| (-(d * d) / (sigma * sigma)).exp();
        let mut expect = vec![0.0; 16];
        expect[1] = w(1.0);
        expect[6] = w(2.0);
        expect[11] = w(3.0);
        expect[12] = w(4.0);
        for (got, want) in a.iter().zip(&expect) {
            assert!((got - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn adjacency_default_sigma_is_distance_std() {
        let text = "from,to,distance\n0,1,1\n1,0,3\n";
        let a = parse_adjacency_csv(text, 2, None, 0.0).unwrap();
        // distances {1, 3}: mean 2, population std 1
        assert!((a[1] - (-1.0f64).exp()).abs() <= 1e-12);
        assert!((a[2] - (-9.0f64).exp()).abs() <= 1e-12);
    }

    #[test]
    fn adjacency_unknown_id_rejected() {
        let text = "from,to,distance\n0,5,1\n";
        match parse_adjacency_csv(text, 2, Some(1.0), 0.0).unwrap_err() {
            Error::Format(msg) => assert!(msg.contains('5'), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    fn counting_series(t: usize, n: usize) -> DetectorSeries {
        DetectorSeries {
            node_ids: (0..n).map(|i| i.to_string()).collect(),
            start: NaiveDateTime::parse_from_str("2022-01-01T00:00:00", TIMESTAMP_FORMAT).unwrap(),
            interval_seconds: 300,
            values: (0..t * n).map(|v| v as f64).collect(),
            n_steps: t,
        }
    }

    #[test]
    fn window_count_t26_is_three() {
        let s = counting_series(26, 2);
        let (train, val, test) = make_windows(&s, 12, 12, 1, (0.7, 0.1, 0.2)).unwrap();
        assert_eq!(train.n_samples + val.n_samples + test.n_samples, 3);
        assert_eq!(train.n_samples, 2);
    }

    #[test]
    fn too_short_series_is_data_error() {
        let s = counting_series(10, 1);
        assert!(matches!(
            make_windows(&s, 12, 12, 1, (0.7, 0.1, 0.2)).unwrap_err(),
            Error::Data(_)
        ));
    }

    #[test]
    fn constant_series_normalizes_to_zero_targets_stay_raw() {
        let mut s = counting_series(30, 2);
        s.values = vec![5.0; 60];
        let (train, _, _) = make_windows(&s, 3, 3, 1, (0.7, 0.1, 0.2)).unwrap();
        assert!(train.inputs.iter().all(|v| *v == 0.0));
        assert!(train.targets.iter().all(|v| *v == 5.0));
        assert!(train.masks.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn windows_match_direct_slicing_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (t, n, p, q) = (40, 3, 6, 3);
        let mut s = counting_series(t, n);
        s.values = (0..t * n).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let (train, val, test) = make_windows(&s, p, q, 1, (0.7, 0.1, 0.2)).unwrap();
        let batches = [(&train, 0usize), (&val, train.n_samples), (&test, train.n_samples + val.n_samples)];
        for (batch, offset) in batches {
            for w in 0..batch.n_samples {
                let t0 = offset + w;
                for node in 0..n {
                    for step in 0..p {
                        let raw = s.values[(t0 + step) * n + node];
                        let want = (raw - batch.mean) / batch.std;
                        let got = batch.inputs[(w * n + node) * p + step];
                        assert!((got - want).abs() <= 1e-12);
                    }
                    for step in 0..q {
                        let raw = s.values[(t0 + p + step) * n + node];
                        let got = batch.targets[(w * n + node) * q + step];
                        assert_eq!(got, raw);
                        let mask = batch.masks[(w * n + node) * q + step];
                        assert_eq!(mask, if raw != 0.0 { 1.0 } else { 0.0 });
                    }
                }
            }
        }
    }

    #[test]
    fn no_leak_from_test_region_into_train_stats() {
        let mut s = counting_series(40, 2);
        let (train_a, _, _) = make_windows(&s, 6, 3, 1, (0.7, 0.1, 0.2)).unwrap();
        // mutate the tail (test region) and re-window
        let len = s.values.len();
        for v in &mut s.values[len - 10..] {
            *v = 1e6;
        }
        let (train_b, _, _) = make_windows(&s, 6, 3, 1, (0.7, 0.1, 0.2)).unwrap();
        assert_eq!(train_a.mean, train_b.mean);
        assert_eq!(train_a.std, train_b.std);
        assert_eq!(train_a.inputs, train_b.inputs);
    }

    #[test]
    fn time_of_day_channel_appended() {
        let s = counting_series(30, 1);
        let (train, _, _) = make_windows(&s, 3, 3, 2, (0.7, 0.1, 0.2)).unwrap();
        assert_eq!(train.input_width, 2);
        // first window, first node: steps 0,1,2 at 5-minute spacing
        for step in 0..3 {
            let frac = train.inputs[step * 2 + 1];
            assert!((frac - (step as f64 * 300.0) / 86_400.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn synth_is_deterministic() {
        let (a, adj_a) = synthesize_dataset(5, 100, 7).unwrap();
        let (b, adj_b) = synthesize_dataset(5, 100, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(adj_a, adj_b);
        let (c, _) = synthesize_dataset(5, 100, 8).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn synth_zero_noise_is_periodic() {
        let opts = SynthOptions {
            noise: 0.0,
            ..SynthOptions::default()
        };
        let (s, _) = synthesize_dataset_with(4, 600, 1, &opts).unwrap();
        let n = s.n_nodes();
        let period = opts.samples_per_day;
        for t in 0..s.n_steps - period {
            for i in 0..n {
                let a = s.values[t * n + i];
                let b = s.values[(t + period) * n + i];
                assert!((a - b).abs() <= 1e-9, "t={t} node={i}");
            }
        }
    }

    #[test]
    fn synth_coupling_peaks_at_configured_lag() {
        let opts = SynthOptions {
            noise: 0.0,
            ..SynthOptions::default()
        };
        let lag = opts.lag;
        let (s, _) = synthesize_dataset_with(8, 2000, 3, &opts).unwrap();
        let n = s.n_nodes();
        // correlation between node 0 at time t and node 1 at time t - delta
        let corr = |delta: usize| -> f64 {
            let t_max = s.n_steps - lag - 1;
            let xs: Vec<f64> = (lag..t_max).map(|t| s.values[t * n]).collect();
            let ys: Vec<f64> = (lag..t_max).map(|t| s.values[(t - delta) * n + 1]).collect();
            let mx = xs.iter().sum::<f64>() / xs.len() as f64;
            let my = ys.iter().sum::<f64>() / ys.len() as f64;
            let mut num = 0.0;
            let mut dx = 0.0;
            let mut dy = 0.0;
            for (x, y) in xs.iter().zip(&ys) {
                num += (x - mx) * (y - my);
                dx += (x - mx).powi(2);
                dy += (y - my).powi(2);
            }
            num / (dx.sqrt() * dy.sqrt())
        };
        assert!(
            corr(lag) > corr(0),
            "lagged correlation {} not above zero-lag {}",
            corr(lag),
            corr(0)
        );
    }

    #[test]
    fn ha_constant_window_predicts_the_constant() {
        let mut s = counting_series(30, 2);
        s.values = vec![5.0; 60];
        let (train, _, _) = make_windows(&s, 3, 3, 1, (0.7, 0.1, 0.2)).unwrap();
        let preds = historical_average(&train);
        assert!(preds.iter().all(|v| (*v - 5.0).abs() <= 1e-12));
    }

    #[test]
    fn ha_mean_of_one_through_twelve_is_six_point_five() {
        let mut s = counting_series(26, 1);
        s.values = (0..26).map(|v| (v % 12 + 1) as f64).collect();
        let (train, _, _) = make_windows(&s, 12, 12, 1, (0.7, 0.1, 0.2)).unwrap();
        let preds = historical_average(&train);
        // first window covers values 1..=12
        for h in 0..12 {
            assert!((preds[h] - 6.5).abs() <= 1e-12);
        }
    }

    #[test]
    fn ha_matches_mean_oracle_on_random_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = counting_series(40, 3);
        s.values = (0..120).map(|_| rng.gen_range(1.0..10.0)).collect();
        let (train, _, _) = make_windows(&s, 6, 3, 2, (0.7, 0.1, 0.2)).unwrap();
        let preds = historical_average(&train);
        let n = 3;
        for w in 0..train.n_samples {
            for node in 0..n {
                let mut sum = 0.0;
                for step in 0..6 {
                    sum += s.values[(w + step) * n + node];
                }
                let want = sum / 6.0;
                for h in 0..3 {
                    let got = preds[(w * n + node) * 3 + h];
                    assert!((got - want).abs() <= 1e-9, "w={w} node={node} h={h}");
                }
            }
        }
    }

    #[test]
    fn batch_tensor_gather_shapes() {
        let s = counting_series(30, 2);
        let (train, _, _) = make_windows(&s, 3, 3, 2, (0.7, 0.1, 0.2)).unwrap();
        let idx: Vec<usize> = (0..train.n_samples.min(4)).collect();
        let x = train.input_tensor(&idx).unwrap();
        assert_eq!(x.shape(), vec![idx.len(), 2, 3, 2]);
        let y = train.target_tensor(&idx).unwrap();
        assert_eq!(y.shape(), vec![idx.len(), 2, 3, 1]);
        let m = train.mask_tensor(&idx).unwrap();
        assert_eq!(m.shape(), y.shape());
    }
}
