//! End-to-end experiments: dataset protocol, noise-robustness sweeps, the
//! spike-noise scenario and the T1 spin-relaxation experiment.

use crate::baseline::{
    classify_threshold, classify_wavelet, optimize_threshold, optimize_wavelet,
    ThresholdClassifier, ThresholdObjective, WaveletClassifier,
};
use crate::dnn::{self, DnnConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::expfit::{binomial_sigma, fit_exponential, FitResult};
use crate::noise::NoiseSpec;
use crate::rng::Rng;
use crate::sim::{gen_event_trace, gen_noevent_trace, gen_spin_trace, SpinReadoutConfig, TunnelConfig};
use crate::trace::{split_dataset, standardize, Label, LabeledDataset, Trace};

pub const DEFAULT_N_PER_CLASS: usize = 2000;
/// Train fraction of the 2800/1200 protocol.
pub const TRAIN_FRACTION: f64 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Dnn,
    Threshold,
    Wavelet,
}

impl ClassifierKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClassifierKind::Dnn => "dnn",
            ClassifierKind::Threshold => "threshold",
            ClassifierKind::Wavelet => "wavelet",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    Gaussian,
    Drift,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub noise_kind: NoiseKind,
    pub levels: Vec<f64>,
    pub n_per_class: usize,
    pub classifiers: Vec<ClassifierKind>,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            noise_kind: NoiseKind::Gaussian,
            levels: vec![0.1, 0.5, 1.0, 1.5, 2.0],
            n_per_class: DEFAULT_N_PER_CLASS,
            classifiers: vec![
                ClassifierKind::Dnn,
                ClassifierKind::Wavelet,
                ClassifierKind::Threshold,
            ],
            seed: 0,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::invalid("sweep needs at least one noise level"));
        }
        if self.levels.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::invalid("noise levels must be finite and >= 0"));
        }
        if self.classifiers.is_empty() {
            return Err(Error::invalid("sweep needs at least one classifier"));
        }
        if self.n_per_class == 0 {
            return Err(Error::invalid("n_per_class must be >= 1"));
        }
        Ok(())
    }

    /// Composite noise at one sweep level. Drift sweeps carry an extra
    /// Gaussian level of 0.1, imitating the residual sensor noise.
    pub fn noise_at(&self, level: f64) -> NoiseSpec {
        match self.noise_kind {
            NoiseKind::Gaussian => NoiseSpec {
                gaussian_level: level,
                ..NoiseSpec::default()
            },
            NoiseKind::Drift => NoiseSpec {
                drift_level: level,
                gaussian_level: 0.1,
                ..NoiseSpec::default()
            },
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Confusion {
    pub true_event: usize,
    pub false_noevent: usize,
    pub false_event: usize,
    pub true_noevent: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.true_event + self.false_noevent + self.false_event + self.true_noevent
    }

    pub fn accuracy(&self) -> f64 {
        (self.true_event + self.true_noevent) as f64 / self.total() as f64
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct AccuracyRow {
    pub classifier: ClassifierKind,
    pub level: f64,
    pub accuracy: f64,
    pub eval_count: usize,
    pub confusion: Confusion,
}

#[derive(Clone, Debug, Default, serde::Serialize, serde::Deserialize)]
pub struct AccuracyReport {
    pub rows: Vec<AccuracyRow>,
    /// Optimized baseline parameters per level, for audit.
    pub fitted: Vec<FittedParams>,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct FittedParams {
    pub level: f64,
    pub threshold: Option<ThresholdClassifier>,
    pub wavelet: Option<WaveletClassifier>,
    pub dnn_best_loss: Option<f64>,
}

impl AccuracyReport {
    pub fn accuracy_of(&self, classifier: ClassifierKind, level: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.classifier == classifier && r.level == level)
            .map(|r| r.accuracy)
    }
}

/// Generated charging-line dataset plus the no-event population mean it
/// was standardized against.
pub struct BuiltDataset {
    pub dataset: LabeledDataset,
    pub baseline_mean: f64,
}

/// Simulate `n_per_class` event and no-event traces, inject noise,
/// standardize against the no-event population mean, shuffle.
pub fn build_training_dataset(
    cfg: &TunnelConfig,
    noise: &NoiseSpec,
    n_per_class: usize,
    rng: &mut Rng,
) -> Result<BuiltDataset> {
    cfg.validate()?;
    noise.validate()?;
    let mut raw: Vec<(Trace, Label)> = Vec::with_capacity(2 * n_per_class);
    for _ in 0..n_per_class {
        let t = gen_event_trace(cfg, rng)?;
        raw.push((noise.apply(&t, rng)?, Label::Event));
    }
    let mut baseline_sum = 0.0f64;
    let mut baseline_count = 0usize;
    for _ in 0..n_per_class {
        let t = gen_noevent_trace(cfg, rng)?;
        let noisy = noise.apply(&t, rng)?;
        baseline_sum += noisy.samples().iter().sum::<f64>();
        baseline_count += noisy.len();
        raw.push((noisy, Label::NoEvent));
    }
    let baseline_mean = if baseline_count > 0 {
        baseline_sum / baseline_count as f64
    } else {
        0.0
    };

    let mut order: Vec<usize> = (0..raw.len()).collect();
    rng.shuffle(&mut order);
    let mut traces = Vec::with_capacity(raw.len());
    let mut labels = Vec::with_capacity(raw.len());
    for i in order {
        traces.push(standardize(&raw[i].0, baseline_mean)?);
        labels.push(raw[i].1);
    }
    Ok(BuiltDataset {
        dataset: LabeledDataset::new(traces, labels, rng.seed())?,
        baseline_mean,
    })
}

/// A bundle of classifiers fitted on one training condition.
pub struct TrainedClassifiers {
    pub dnn: Option<dnn::TrainReport>,
    pub threshold: Option<ThresholdClassifier>,
    pub wavelet: Option<WaveletClassifier>,
    pub baseline_mean: f64,
}

impl TrainedClassifiers {
    pub fn classify(&self, kind: ClassifierKind, trace: &Trace) -> Result<Label> {
        match kind {
            ClassifierKind::Dnn => {
                let report = self
                    .dnn
                    .as_ref()
                    .ok_or_else(|| Error::invalid("DNN was not trained"))?;
                Ok(dnn::forward(&report.model, trace)?.label)
            }
            ClassifierKind::Threshold => {
                let c = self
                    .threshold
                    .as_ref()
                    .ok_or_else(|| Error::invalid("threshold was not optimized"))?;
                Ok(classify_threshold(c, trace))
            }
            ClassifierKind::Wavelet => {
                let c = self
                    .wavelet
                    .as_ref()
                    .ok_or_else(|| Error::invalid("wavelet was not optimized"))?;
                classify_wavelet(c, trace)
            }
        }
    }
}

pub fn fit_classifiers(
    train: &LabeledDataset,
    kinds: &[ClassifierKind],
    dnn_cfg: &DnnConfig,
    train_cfg: &TrainConfig,
    threshold_objective: ThresholdObjective,
    baseline_mean: f64,
) -> Result<TrainedClassifiers> {
    let mut out = TrainedClassifiers {
        dnn: None,
        threshold: None,
        wavelet: None,
        baseline_mean,
    };
    for kind in kinds {
        match kind {
            ClassifierKind::Dnn => {
                out.dnn = Some(dnn::train(train, dnn_cfg, train_cfg)?);
            }
            ClassifierKind::Threshold => {
                out.threshold = Some(optimize_threshold(train, threshold_objective, 1)?);
            }
            ClassifierKind::Wavelet => {
                out.wavelet = Some(optimize_wavelet(train)?);
            }
        }
    }
    Ok(out)
}

pub fn evaluate(
    trained: &TrainedClassifiers,
    kind: ClassifierKind,
    eval: &LabeledDataset,
) -> Result<Confusion> {
    let mut c = Confusion::default();
    for (trace, label) in eval.traces.iter().zip(&eval.labels) {
        let pred = trained.classify(kind, trace)?;
        match (label, pred) {
            (Label::Event, Label::Event) => c.true_event += 1,
            (Label::Event, Label::NoEvent) => c.false_noevent += 1,
            (Label::NoEvent, Label::Event) => c.false_event += 1,
            (Label::NoEvent, Label::NoEvent) => c.true_noevent += 1,
        }
    }
    Ok(c)
}

fn run_cell(
    tunnel: &TunnelConfig,
    noise: &NoiseSpec,
    n_per_class: usize,
    classifiers: &[ClassifierKind],
    dnn_cfg: &DnnConfig,
    train_cfg: &TrainConfig,
    level: f64,
    rng: &mut Rng,
    report: &mut AccuracyReport,
) -> Result<()> {
    let built = build_training_dataset(tunnel, noise, n_per_class, rng)?;
    let total = built.dataset.len();
    let n_train = (total as f64 * TRAIN_FRACTION).round() as usize;
    let (train, eval) = split_dataset(&built.dataset, n_train, total - n_train, rng)?;
    let mut dnn_cfg = dnn_cfg.clone();
    dnn_cfg.input_len = tunnel.n_samples();
    let trained = fit_classifiers(
        &train,
        classifiers,
        &dnn_cfg,
        train_cfg,
        ThresholdObjective::Accuracy,
        built.baseline_mean,
    )?;
    for &kind in classifiers {
        let confusion = evaluate(&trained, kind, &eval)?;
        report.rows.push(AccuracyRow {
            classifier: kind,
            level,
            accuracy: confusion.accuracy(),
            eval_count: confusion.total(),
            confusion,
        });
    }
    report.fitted.push(FittedParams {
        level,
        threshold: trained.threshold.clone(),
        wavelet: trained.wavelet.clone(),
        dnn_best_loss: trained.dnn.as_ref().map(|r| r.best_loss),
    });
    Ok(())
}

/// Accuracy sweep over noise levels. Per level: simulate a fresh dataset,
/// split it 70/30, fit every requested classifier on the train split and
/// evaluate on the held-out split. Each level uses the rng stream derived
/// from its index, so single-level runs reproduce sweep cells exactly.
pub fn run_sweep(
    spec: &SweepSpec,
    tunnel: &TunnelConfig,
    dnn_cfg: &DnnConfig,
    train_cfg: &TrainConfig,
) -> Result<AccuracyReport> {
    spec.validate()?;
    let master = Rng::new(spec.seed);
    let mut report = AccuracyReport::default();
    for (li, &level) in spec.levels.iter().enumerate() {
        let mut rng = master.derive(li as u64);
        let noise = spec.noise_at(level);
        let mut cell_train_cfg = train_cfg.clone();
        cell_train_cfg.seed = train_cfg.seed.wrapping_add(li as u64);
        run_cell(
            tunnel,
            &noise,
            spec.n_per_class,
            &spec.classifiers,
            dnn_cfg,
            &cell_train_cfg,
            level,
            &mut rng,
            &mut report,
        )?;
    }
    Ok(report)
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpikeScenarioSpec {
    pub spike_rate_per_trace: f64,
    pub spike_amp: f64,
    pub spike_width_samples: usize,
    /// Residual Gaussian noise applied alongside the spikes.
    pub gaussian_level: f64,
    pub n_per_class: usize,
    pub classifiers: Vec<ClassifierKind>,
    pub seed: u64,
}

impl Default for SpikeScenarioSpec {
    fn default() -> Self {
        Self {
            spike_rate_per_trace: 2.0,
            spike_amp: 1.2,
            spike_width_samples: 3,
            gaussian_level: 0.1,
            n_per_class: DEFAULT_N_PER_CLASS,
            classifiers: vec![ClassifierKind::Dnn, ClassifierKind::Threshold],
            seed: 0,
        }
    }
}

/// Spike-noise scenario: spikes plus residual Gaussian noise on both
/// classes, reported like a one-level sweep.
pub fn run_spike_scenario(
    spec: &SpikeScenarioSpec,
    tunnel: &TunnelConfig,
    dnn_cfg: &DnnConfig,
    train_cfg: &TrainConfig,
) -> Result<AccuracyReport> {
    if spec.classifiers.is_empty() {
        return Err(Error::invalid("spike scenario needs at least one classifier"));
    }
    let noise = NoiseSpec {
        gaussian_level: spec.gaussian_level,
        spike_rate_per_trace: spec.spike_rate_per_trace,
        spike_amp: spec.spike_amp,
        spike_width_samples: spec.spike_width_samples,
        ..NoiseSpec::default()
    };
    let mut rng = Rng::new(spec.seed).derive(0);
    let mut report = AccuracyReport::default();
    run_cell(
        tunnel,
        &noise,
        spec.n_per_class,
        &spec.classifiers,
        dnn_cfg,
        train_cfg,
        spec.spike_rate_per_trace,
        &mut rng,
        &mut report,
    )?;
    Ok(report)
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct T1ExperimentSpec {
    pub t_wait_list: Vec<f64>,
    pub shots_per_point: usize,
    pub spin_cfg: SpinReadoutConfig,
    pub noise: NoiseSpec,
    pub classifiers: Vec<ClassifierKind>,
    pub threshold_objective: ThresholdObjective,
    pub seed: u64,
}

impl Default for T1ExperimentSpec {
    fn default() -> Self {
        Self {
            t_wait_list: Self::default_t_wait_list(),
            shots_per_point: 2000,
            spin_cfg: SpinReadoutConfig::default(),
            noise: NoiseSpec::default(),
            classifiers: vec![ClassifierKind::Dnn, ClassifierKind::Threshold],
            threshold_objective: ThresholdObjective::Accuracy,
            seed: 0,
        }
    }
}

impl T1ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.t_wait_list.len() < 4 {
            return Err(Error::invalid("T1 experiment needs >= 4 wait points"));
        }
        if self.t_wait_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("t_wait_list must be strictly increasing"));
        }
        if self.shots_per_point == 0 {
            return Err(Error::invalid("shots_per_point must be >= 1"));
        }
        if self.classifiers.is_empty() {
            return Err(Error::invalid("T1 experiment needs at least one classifier"));
        }
        self.spin_cfg.validate()?;
        self.noise.validate()
    }

    /// Default wait grid: 12 points from 0 to 300 us, denser early.
    pub fn default_t_wait_list() -> Vec<f64> {
        vec![
            0.0, 10.0, 22.0, 36.0, 52.0, 72.0, 96.0, 126.0, 162.0, 204.0, 250.0, 300.0,
        ]
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct DecayCurve {
    pub classifier: ClassifierKind,
    pub t_wait_us: Vec<f64>,
    pub p_down: Vec<f64>,
    pub sigma_p: Vec<f64>,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct T1Outcome {
    pub curves: Vec<DecayCurve>,
    pub fits: Vec<(ClassifierKind, std::result::Result<FitResult, String>)>,
}

/// T1 relaxation experiment. Classifiers are first trained/optimized on a
/// charging-line dataset under the same noise spec (derived stream 0);
/// spin shots are then generated per wait point (derived streams 1..),
/// classified, and each classifier's decay curve is fitted.
pub fn run_t1_experiment(
    spec: &T1ExperimentSpec,
    dnn_cfg: &DnnConfig,
    train_cfg: &TrainConfig,
) -> Result<T1Outcome> {
    spec.validate()?;
    let master = Rng::new(spec.seed);
    let tunnel = &spec.spin_cfg.tunnel;

    let mut train_rng = master.derive(0);
    let built = build_training_dataset(tunnel, &spec.noise, DEFAULT_N_PER_CLASS, &mut train_rng)?;
    let total = built.dataset.len();
    let n_train = (total as f64 * TRAIN_FRACTION).round() as usize;
    let (train, _eval) = split_dataset(&built.dataset, n_train, total - n_train, &mut train_rng)?;
    let mut dnn_cfg = dnn_cfg.clone();
    dnn_cfg.input_len = tunnel.n_samples();
    let trained = fit_classifiers(
        &train,
        &spec.classifiers,
        &dnn_cfg,
        train_cfg,
        spec.threshold_objective,
        built.baseline_mean,
    )?;

    let mut counts: Vec<Vec<usize>> = vec![vec![0; spec.t_wait_list.len()]; spec.classifiers.len()];
    for (wi, &t_wait) in spec.t_wait_list.iter().enumerate() {
        let mut rng = master.derive(1 + wi as u64);
        let cfg = SpinReadoutConfig {
            t_wait_us: t_wait,
            ..spec.spin_cfg.clone()
        };
        for _ in 0..spec.shots_per_point {
            let (raw, _truth) = gen_spin_trace(&cfg, &mut rng)?;
            let noisy = spec.noise.apply(&raw, &mut rng)?;
            let trace = standardize(&noisy, trained.baseline_mean)?;
            for (ci, &kind) in spec.classifiers.iter().enumerate() {
                if trained.classify(kind, &trace)? == Label::Event {
                    counts[ci][wi] += 1;
                }
            }
        }
    }

    let mut curves = Vec::new();
    let mut fits = Vec::new();
    for (ci, &kind) in spec.classifiers.iter().enumerate() {
        let p_down: Vec<f64> = counts[ci]
            .iter()
            .map(|&k| k as f64 / spec.shots_per_point as f64)
            .collect();
        let sigma_p: Vec<f64> = p_down
            .iter()
            .map(|&p| binomial_sigma(p, spec.shots_per_point))
            .collect();
        let fit = fit_exponential(&spec.t_wait_list, &p_down, &sigma_p)
            .map_err(|e| e.to_string());
        curves.push(DecayCurve {
            classifier: kind,
            t_wait_us: spec.t_wait_list.clone(),
            p_down,
            sigma_p,
        });
        fits.push((kind, fit));
    }
    Ok(T1Outcome { curves, fits })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn built_dataset_has_expected_shape() {
        let mut rng = Rng::new(1);
        let built = build_training_dataset(
            &TunnelConfig::default(),
            &NoiseSpec::default(),
            50,
            &mut rng,
        )
        .unwrap();
        assert_eq!(built.dataset.len(), 100);
        assert_eq!(built.dataset.count_label(Label::Event), 50);
        assert!(built.baseline_mean.abs() < 1e-12); // clean baseline is 0
    }

    #[test]
    fn noevent_population_mean_near_zero_after_standardization() {
        let mut rng = Rng::new(2);
        let noise = NoiseSpec {
            gaussian_level: 0.1,
            ..NoiseSpec::default()
        };
        let built =
            build_training_dataset(&TunnelConfig::default(), &noise, 2000, &mut rng).unwrap();
        let mut sum = 0.0;
        let mut count = 0usize;
        for (t, l) in built.dataset.traces.iter().zip(&built.dataset.labels) {
            if *l == Label::NoEvent {
                sum += t.samples().iter().sum::<f64>();
                count += t.len();
            }
        }
        let grand_mean = sum / count as f64;
        assert!(grand_mean.abs() < 0.01, "grand mean {grand_mean}");
    }

    #[test]
    fn sweep_is_reproducible_and_accuracy_sane() {
        let spec = SweepSpec {
            noise_kind: NoiseKind::Gaussian,
            levels: vec![0.1],
            n_per_class: 100,
            classifiers: vec![ClassifierKind::Threshold, ClassifierKind::Wavelet],
            seed: 5,
        };
        let tunnel = TunnelConfig::default();
        let dnn_cfg = DnnConfig::default();
        let train_cfg = TrainConfig::default();
        let a = run_sweep(&spec, &tunnel, &dnn_cfg, &train_cfg).unwrap();
        let b = run_sweep(&spec, &tunnel, &dnn_cfg, &train_cfg).unwrap();
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.accuracy, rb.accuracy);
            assert_eq!(ra.confusion, rb.confusion);
        }
        for row in &a.rows {
            assert_eq!(row.eval_count, 60);
            assert_eq!(row.confusion.total(), row.eval_count);
            assert!(row.accuracy >= 0.95, "{:?} {}", row.classifier, row.accuracy);
        }
    }

    #[test]
    fn empty_classifier_set_rejected() {
        let spec = SweepSpec {
            noise_kind: NoiseKind::Gaussian,
            levels: vec![0.1],
            n_per_class: 10,
            classifiers: vec![],
            seed: 0,
        };
        assert!(run_sweep(
            &spec,
            &TunnelConfig::default(),
            &DnnConfig::default(),
            &TrainConfig::default()
        )
        .is_err());
    }

    #[test]
    fn t1_round_trip_with_threshold_only() {
        // fast smoke check of the whole pipeline at low noise with the
        // cheap classifier; the full two-classifier run lives in the
        // acceptance suite
        let spec = T1ExperimentSpec {
            t_wait_list: T1ExperimentSpec::default_t_wait_list(),
            shots_per_point: 400,
            spin_cfg: SpinReadoutConfig {
                t1_us: 68.0,
                p_down_init: 0.65,
                ..SpinReadoutConfig::default()
            },
            noise: NoiseSpec {
                gaussian_level: 0.1,
                ..NoiseSpec::default()
            },
            classifiers: vec![ClassifierKind::Threshold],
            threshold_objective: ThresholdObjective::Accuracy,
            seed: 9,
        };
        let out = run_t1_experiment(&spec, &DnnConfig::default(), &TrainConfig::default()).unwrap();
        let fit = out.fits[0].1.as_ref().expect("fit should converge");
        assert!(
            (fit.t1_us - 68.0).abs() < 3.0 * fit.sigma_t1.max(5.0),
            "T1 {} +- {}",
            fit.t1_us,
            fit.sigma_t1
        );
        for curve in &out.curves {
            assert!(curve.p_down.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }
}
