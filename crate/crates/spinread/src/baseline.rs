//! Conventional classifiers: optimized thresholding and sliding-Haar
//! wavelet edge detection.

use crate::error::{Error, Result};
use crate::trace::{Label, LabeledDataset, Trace};

pub const THRESHOLD_GRID: usize = 512;
pub const WAVELET_SCALE_GRID: usize = 32;
pub const WAVELET_THRESHOLD_GRID: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Above,
    Below,
}

/// What `optimize_threshold` maximizes on the training set.
///
/// `Accuracy` is the fraction of correct decisions. `Visibility` is the
/// Youden statistic (true-positive rate minus false-positive rate), the
/// objective used when the threshold is tuned for readout contrast rather
/// than raw accuracy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdObjective {
    Accuracy,
    Visibility,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ThresholdClassifier {
    pub threshold: f64,
    pub polarity: Polarity,
    /// Boxcar pre-filter width in samples; 1 disables the filter.
    pub boxcar_width: usize,
}

impl ThresholdClassifier {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            polarity: Polarity::Above,
            boxcar_width: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WaveletClassifier {
    /// Haar half-window support in samples.
    pub scale: usize,
    pub coeff_threshold: f64,
}

fn boxcar(samples: &[f64], width: usize) -> Vec<f64> {
    if width <= 1 || samples.len() < width {
        return samples.to_vec();
    }
    let mut out = Vec::with_capacity(samples.len() - width + 1);
    let mut acc: f64 = samples[..width].iter().sum();
    out.push(acc / width as f64);
    for i in width..samples.len() {
        acc += samples[i] - samples[i - width];
        out.push(acc / width as f64);
    }
    out
}

/// Decision statistic for thresholding: the extremal (boxcar-filtered)
/// sample in the configured polarity.
fn threshold_statistic(c: &ThresholdClassifier, trace: &Trace) -> f64 {
    let filtered = boxcar(trace.samples(), c.boxcar_width);
    match c.polarity {
        Polarity::Above => filtered.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        Polarity::Below => -filtered.iter().cloned().fold(f64::INFINITY, f64::min),
    }
}

fn signed_threshold(c: &ThresholdClassifier) -> f64 {
    match c.polarity {
        Polarity::Above => c.threshold,
        Polarity::Below => -c.threshold,
    }
}

/// Event iff any (filtered) sample crosses the threshold.
pub fn classify_threshold(c: &ThresholdClassifier, trace: &Trace) -> Label {
    if threshold_statistic(c, trace) >= signed_threshold(c) {
        Label::Event
    } else {
        Label::NoEvent
    }
}

/// Grid-search the threshold that maximizes the objective on `train`.
/// The grid is `THRESHOLD_GRID` points spanning the data range; ties are
/// broken toward the larger threshold.
pub fn optimize_threshold(
    train: &LabeledDataset,
    objective: ThresholdObjective,
    boxcar_width: usize,
) -> Result<ThresholdClassifier> {
    let n_event = train.count_label(Label::Event);
    if train.is_empty() || n_event == 0 || n_event == train.len() {
        return Err(Error::invalid(
            "threshold optimization needs both labels present",
        ));
    }
    let template = ThresholdClassifier {
        threshold: 0.0,
        polarity: Polarity::Above,
        boxcar_width,
    };
    let stats: Vec<f64> = train
        .traces
        .iter()
        .map(|t| threshold_statistic(&template, t))
        .collect();
    let lo = stats.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = stats.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let n_noevent = train.len() - n_event;

    let mut best_thr = lo;
    let mut best_score = f64::NEG_INFINITY;
    for j in 0..THRESHOLD_GRID {
        let thr = lo + (hi - lo) * j as f64 / (THRESHOLD_GRID - 1) as f64;
        let mut tp = 0usize;
        let mut fp = 0usize;
        for (s, l) in stats.iter().zip(&train.labels) {
            if *s >= thr {
                match l {
                    Label::Event => tp += 1,
                    Label::NoEvent => fp += 1,
                }
            }
        }
        let score = match objective {
            ThresholdObjective::Accuracy => {
                (tp + (n_noevent - fp)) as f64 / train.len() as f64
            }
            ThresholdObjective::Visibility => {
                tp as f64 / n_event as f64 - fp as f64 / n_noevent as f64
            }
        };
        if score >= best_score {
            best_score = score;
            best_thr = thr;
        }
    }
    Ok(ThresholdClassifier {
        threshold: best_thr,
        polarity: Polarity::Above,
        boxcar_width,
    })
}

/// Sliding Haar detail coefficients at the given scale:
/// `mean(samples[i..i+scale]) - mean(samples[i+scale..i+2*scale])` for
/// each valid window position. Output length is `len - 2*scale + 1`.
pub fn haar_detail(trace: &Trace, scale: usize) -> Result<Vec<f64>> {
    if scale == 0 {
        return Err(Error::invalid("scale must be >= 1"));
    }
    let n = trace.len();
    if 2 * scale > n {
        return Err(Error::invalid(format!(
            "2*scale ({}) exceeds trace length ({n})",
            2 * scale
        )));
    }
    let s = trace.samples();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &v in s {
        acc += v;
        prefix.push(acc);
    }
    let window = |a: usize, b: usize| (prefix[b] - prefix[a]) / scale as f64;
    Ok((0..=n - 2 * scale)
        .map(|i| window(i, i + scale) - window(i + scale, i + 2 * scale))
        .collect())
}

fn max_abs_detail(trace: &Trace, scale: usize) -> Result<f64> {
    Ok(haar_detail(trace, scale)?
        .iter()
        .fold(0.0f64, |m, c| m.max(c.abs())))
}

/// Event iff the largest Haar detail magnitude reaches the coefficient
/// threshold.
pub fn classify_wavelet(c: &WaveletClassifier, trace: &Trace) -> Result<Label> {
    Ok(if max_abs_detail(trace, c.scale)? >= c.coeff_threshold {
        Label::Event
    } else {
        Label::NoEvent
    })
}

/// Joint grid search over (scale, coefficient threshold) maximizing train
/// accuracy. Scales are `WAVELET_SCALE_GRID` log-spaced supports up to a
/// quarter of the trace length; thresholds are `WAVELET_THRESHOLD_GRID`
/// points spanning the observed coefficient range at each scale. Ties go
/// to the larger threshold, then the larger scale.
pub fn optimize_wavelet(train: &LabeledDataset) -> Result<WaveletClassifier> {
    let n_event = train.count_label(Label::Event);
    if train.is_empty() || n_event == 0 || n_event == train.len() {
        return Err(Error::invalid(
            "wavelet optimization needs both labels present",
        ));
    }
    let len = train.traces[0].len();
    let max_scale = (len / 4).max(1);
    let mut scales: Vec<usize> = (0..WAVELET_SCALE_GRID)
        .map(|k| {
            let f = k as f64 / (WAVELET_SCALE_GRID - 1) as f64;
            ((max_scale as f64).powf(f)).round() as usize
        })
        .collect();
    scales.dedup();

    let mut best: Option<(f64, WaveletClassifier)> = None;
    for &scale in &scales {
        let stats: Result<Vec<f64>> = train
            .traces
            .iter()
            .map(|t| max_abs_detail(t, scale))
            .collect();
        let stats = stats?;
        let hi = stats.iter().cloned().fold(0.0f64, f64::max);
        for j in 0..WAVELET_THRESHOLD_GRID {
            let thr = hi * (j + 1) as f64 / WAVELET_THRESHOLD_GRID as f64;
            let correct = stats
                .iter()
                .zip(&train.labels)
                .filter(|(s, l)| {
                    let pred = if **s >= thr { Label::Event } else { Label::NoEvent };
                    pred == **l
                })
                .count();
            let acc = correct as f64 / train.len() as f64;
            if best.as_ref().map(|(b, _)| acc >= *b).unwrap_or(true) {
                best = Some((
                    acc,
                    WaveletClassifier {
                        scale,
                        coeff_threshold: thr,
                    },
                ));
            }
        }
    }
    Ok(best.expect("grid is non-empty").1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::add_gaussian;
    use crate::rng::Rng;

    fn trace(v: Vec<f64>) -> Trace {
        Trace::new(v, 1.0).unwrap()
    }

    fn step_trace(pos: usize, len: usize) -> Trace {
        let mut v = vec![0.0; len];
        for s in v.iter_mut().skip(pos) {
            *s = 1.0;
        }
        trace(v)
    }

    #[test]
    fn threshold_trivial_decisions() {
        let c = ThresholdClassifier::new(0.5);
        assert_eq!(classify_threshold(&c, &trace(vec![0.0; 480])), Label::NoEvent);
        let mut v = vec![0.0; 480];
        v[17] = 1.0;
        assert_eq!(classify_threshold(&c, &trace(v)), Label::Event);
    }

    #[test]
    fn threshold_is_monotone() {
        let t = step_trace(100, 480);
        let mut prev = Label::Event;
        for k in 0..40 {
            let c = ThresholdClassifier::new(-1.0 + 0.1 * k as f64);
            let now = classify_threshold(&c, &t);
            assert!(!(prev == Label::NoEvent && now == Label::Event));
            prev = now;
        }
    }

    fn separable_dataset(n_per_class: usize, seed: u64) -> LabeledDataset {
        let mut traces = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n_per_class {
            traces.push(step_trace(10 + i % 100, 480));
            labels.push(Label::Event);
            traces.push(trace(vec![0.0; 480]));
            labels.push(Label::NoEvent);
        }
        LabeledDataset::new(traces, labels, seed).unwrap()
    }

    #[test]
    fn optimize_threshold_on_separable_data() {
        let ds = separable_dataset(50, 0);
        let c = optimize_threshold(&ds, ThresholdObjective::Accuracy, 1).unwrap();
        assert!(c.threshold > 0.0 && c.threshold <= 1.0, "thr {}", c.threshold);
        let correct = ds
            .traces
            .iter()
            .zip(&ds.labels)
            .filter(|(t, l)| classify_threshold(&c, t) == **l)
            .count();
        assert_eq!(correct, ds.len());
    }

    #[test]
    fn optimize_threshold_matches_exhaustive_grid_oracle() {
        // noisy 200-trace set; the returned threshold must beat or match
        // every grid candidate on training accuracy
        let mut rng = Rng::new(21);
        let mut traces = Vec::new();
        let mut labels = Vec::new();
        for i in 0..100 {
            let base = step_trace(30 + i, 480);
            traces.push(add_gaussian(&base, 0.8, &mut rng).unwrap());
            labels.push(Label::Event);
            traces.push(add_gaussian(&trace(vec![0.0; 480]), 0.8, &mut rng).unwrap());
            labels.push(Label::NoEvent);
        }
        let ds = LabeledDataset::new(traces, labels, 0).unwrap();
        let c = optimize_threshold(&ds, ThresholdObjective::Accuracy, 1).unwrap();
        let acc = |thr: f64| {
            let cc = ThresholdClassifier::new(thr);
            ds.traces
                .iter()
                .zip(&ds.labels)
                .filter(|(t, l)| classify_threshold(&cc, t) == **l)
                .count()
        };
        let chosen = acc(c.threshold);
        let stats: Vec<f64> = ds
            .traces
            .iter()
            .map(|t| t.samples().iter().cloned().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let lo = stats.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = stats.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for j in 0..THRESHOLD_GRID {
            let thr = lo + (hi - lo) * j as f64 / (THRESHOLD_GRID - 1) as f64;
            assert!(acc(thr) <= chosen, "grid candidate {thr} beats optimum");
        }
    }

    #[test]
    fn optimize_threshold_rejects_single_label() {
        let traces = vec![trace(vec![0.0; 8]); 4];
        let labels = vec![Label::NoEvent; 4];
        let ds = LabeledDataset::new(traces, labels, 0).unwrap();
        assert!(optimize_threshold(&ds, ThresholdObjective::Accuracy, 1).is_err());
    }

    #[test]
    fn haar_flat_is_zero_and_offset_invariant() {
        let flat = trace(vec![3.7; 64]);
        let coeffs = haar_detail(&flat, 8).unwrap();
        assert_eq!(coeffs.len(), 64 - 16 + 1);
        assert!(coeffs.iter().all(|c| c.abs() < 1e-12));

        let t = step_trace(20, 64);
        let shifted = t.map_samples(|s| s + 5.0);
        let a = haar_detail(&t, 4).unwrap();
        let b = haar_detail(&shifted, 4).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn haar_step_response_is_unit() {
        let t = step_trace(30, 480);
        for scale in [2usize, 8, 16] {
            let coeffs = haar_detail(&t, scale).unwrap();
            let peak = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
            assert!((peak - 1.0).abs() < 1e-12, "scale {scale} peak {peak}");
            // extremum sits where the window is centered on the edge
            let idx = coeffs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .unwrap()
                .0;
            assert_eq!(idx + scale, 30);
        }
    }

    #[test]
    fn haar_noise_std_matches_formula() {
        // std of the detail coefficient of white noise is sigma*sqrt(2/s)
        let mut rng = Rng::new(5);
        let sigma = 0.7;
        for scale in [4usize, 16] {
            let mut sum_sq = 0.0;
            let mut count = 0usize;
            for _ in 0..300 {
                let t = add_gaussian(&trace(vec![0.0; 480]), sigma, &mut rng).unwrap();
                // stride by 2*scale so the sampled coefficients are independent
                let coeffs = haar_detail(&t, scale).unwrap();
                for c in coeffs.iter().step_by(2 * scale) {
                    sum_sq += c * c;
                    count += 1;
                }
            }
            let std = (sum_sq / count as f64).sqrt();
            let expected = sigma * (2.0 / scale as f64).sqrt();
            assert!(
                (std - expected).abs() / expected < 0.05,
                "scale {scale}: std {std} vs {expected}"
            );
        }
    }

    #[test]
    fn haar_scale_errors() {
        let t = trace(vec![0.0; 10]);
        assert!(haar_detail(&t, 0).is_err());
        assert!(haar_detail(&t, 6).is_err());
        assert!(haar_detail(&t, 5).is_ok());
    }

    #[test]
    fn wavelet_trivial_decisions() {
        let c = WaveletClassifier {
            scale: 8,
            coeff_threshold: 0.5,
        };
        assert_eq!(
            classify_wavelet(&c, &trace(vec![0.0; 480])).unwrap(),
            Label::NoEvent
        );
        assert_eq!(
            classify_wavelet(&c, &step_trace(100, 480)).unwrap(),
            Label::Event
        );
    }

    #[test]
    fn optimize_wavelet_separates_clean_data() {
        let ds = separable_dataset(40, 1);
        let c = optimize_wavelet(&ds).unwrap();
        let correct = ds
            .traces
            .iter()
            .zip(&ds.labels)
            .filter(|(t, l)| classify_wavelet(&c, t).unwrap() == **l)
            .count();
        assert_eq!(correct, ds.len());
    }
}
