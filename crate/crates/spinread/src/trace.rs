//! Core domain types: traces, labels, labeled datasets, standardization.
//!
//! Amplitudes are dimensionless with the charge-event step normalized to
//! 1.0; all noise levels elsewhere in the crate are relative to that unit.

use crate::error::{Error, Result};
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_TRACE_LEN: usize = 480;
pub const DEFAULT_DT_US: f64 = 1.0;

/// A fixed-length sampled sensor voltage sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    samples: Vec<f64>,
    dt_us: f64,
}

impl Trace {
    pub fn new(samples: Vec<f64>, dt_us: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("trace must contain at least one sample"));
        }
        if !dt_us.is_finite() || dt_us <= 0.0 {
            return Err(Error::invalid(format!("dt_us must be positive, got {dt_us}")));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("trace samples must be finite"));
        }
        Ok(Self { samples, dt_us })
    }

    pub fn zeros(len: usize, dt_us: f64) -> Result<Self> {
        Self::new(vec![0.0; len], dt_us)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn dt_us(&self) -> f64 {
        self.dt_us
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    pub fn rms(&self) -> f64 {
        (self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    /// Samplewise sum of two equal-length traces.
    pub fn add(&self, other: &Trace) -> Result<Trace> {
        if self.len() != other.len() {
            return Err(Error::SizeMismatch(format!(
                "trace lengths differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a + b)
            .collect();
        Trace::new(samples, self.dt_us)
    }

    pub(crate) fn map_samples(&self, f: impl FnMut(f64) -> f64) -> Trace {
        Trace {
            samples: self.samples.iter().copied().map(f).collect(),
            dt_us: self.dt_us,
        }
    }
}

/// The two readout outcomes. `Event` marks a charge transition
/// (spin-down); `NoEvent` its absence (spin-up).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Event,
    NoEvent,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Event => "event",
            Label::NoEvent => "noevent",
        }
    }

    pub fn parse(s: &str) -> Result<Label> {
        match s {
            "event" => Ok(Label::Event),
            "noevent" => Ok(Label::NoEvent),
            other => Err(Error::invalid(format!("unknown label {other:?}"))),
        }
    }
}

/// Traces paired with labels, plus the seed used to generate them.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub traces: Vec<Trace>,
    pub labels: Vec<Label>,
    pub seed: u64,
}

impl LabeledDataset {
    pub fn new(traces: Vec<Trace>, labels: Vec<Label>, seed: u64) -> Result<Self> {
        if traces.len() != labels.len() {
            return Err(Error::SizeMismatch(format!(
                "{} traces vs {} labels",
                traces.len(),
                labels.len()
            )));
        }
        Ok(Self { traces, labels, seed })
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.labels.iter().filter(|l| **l == label).count()
    }

    fn select(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            traces: indices.iter().map(|&i| self.traces[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            seed: self.seed,
        }
    }
}

/// Stratified shuffled split into disjoint train/eval partitions.
///
/// Per-class counts are allocated proportionally (largest-remainder
/// rounding), so label proportions in each part track the source within
/// one trace per class.
pub fn split_dataset(
    ds: &LabeledDataset,
    n_train: usize,
    n_eval: usize,
    rng: &mut Rng,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if n_train + n_eval != ds.len() {
        return Err(Error::SizeMismatch(format!(
            "split {n_train}+{n_eval} != dataset size {}",
            ds.len()
        )));
    }
    if ds.is_empty() {
        return Err(Error::invalid("cannot split an empty dataset"));
    }

    let mut event_idx: Vec<usize> = Vec::new();
    let mut noevent_idx: Vec<usize> = Vec::new();
    for (i, l) in ds.labels.iter().enumerate() {
        match l {
            Label::Event => event_idx.push(i),
            Label::NoEvent => noevent_idx.push(i),
        }
    }
    rng.shuffle(&mut event_idx);
    rng.shuffle(&mut noevent_idx);

    // largest-remainder allocation of the train quota across classes
    let total = ds.len() as f64;
    let exact_event = n_train as f64 * event_idx.len() as f64 / total;
    let mut train_event = exact_event.floor() as usize;
    let mut train_noevent = n_train - train_event;
    if train_noevent > noevent_idx.len() {
        train_event += train_noevent - noevent_idx.len();
        train_noevent = noevent_idx.len();
    } else if train_event < event_idx.len()
        && exact_event - exact_event.floor() >= 0.5
        && train_noevent > 0
    {
        train_event += 1;
        train_noevent -= 1;
    }
    if train_event > event_idx.len() {
        return Err(Error::SizeMismatch(
            "train quota exceeds class population".into(),
        ));
    }

    let mut train_idx: Vec<usize> = event_idx[..train_event]
        .iter()
        .chain(&noevent_idx[..train_noevent])
        .copied()
        .collect();
    let mut eval_idx: Vec<usize> = event_idx[train_event..]
        .iter()
        .chain(&noevent_idx[train_noevent..])
        .copied()
        .collect();
    rng.shuffle(&mut train_idx);
    rng.shuffle(&mut eval_idx);

    Ok((ds.select(&train_idx), ds.select(&eval_idx)))
}

/// Shift every sample down by `baseline_mean`, zeroing the no-event
/// baseline.
pub fn standardize(trace: &Trace, baseline_mean: f64) -> Result<Trace> {
    if !baseline_mean.is_finite() {
        return Err(Error::invalid("baseline mean must be finite"));
    }
    Ok(trace.map_samples(|s| s - baseline_mean))
}
