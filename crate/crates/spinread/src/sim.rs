//! Synthetic charge-sensor trace generation.
//!
//! Charge tunneling is modeled as a two-state continuous-time Markov
//! chain: dwell times in the baseline and event levels are exponential
//! with a common mean tunnel time. Continuous switching times are drawn
//! first and then discretized onto the sample grid by sample-and-hold.
//!
//! The energy-selective spin-readout scenario reuses the same tunnel
//! process but emits a single blip: only a spin-down electron can tunnel
//! off, and after it tunnels back in no further transitions occur.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::trace::{Label, Trace};

/// Rejection retry cap for event-containing traces.
const EVENT_RETRY_CAP: usize = 1000;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TunnelConfig {
    /// Mean tunnel time to the lead, microseconds.
    pub tau_tunnel_us: f64,
    /// Total trace length, microseconds.
    pub trace_len_us: f64,
    /// Sample period, microseconds.
    pub dt_us: f64,
    /// Event step amplitude (unit by convention).
    pub amp_event: f64,
}

impl Default for TunnelConfig {
    fn default() -> Self {
        Self {
            tau_tunnel_us: 33.0,
            trace_len_us: 480.0,
            dt_us: 1.0,
            amp_event: 1.0,
        }
    }
}

impl TunnelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_tunnel_us > 0.0) {
            return Err(Error::invalid("tau_tunnel_us must be positive"));
        }
        if !(self.dt_us > 0.0) || !(self.trace_len_us >= self.dt_us) {
            return Err(Error::invalid("require trace_len_us >= dt_us > 0"));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.trace_len_us / self.dt_us).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpinReadoutConfig {
    /// Spin relaxation time, microseconds. May be infinite.
    pub t1_us: f64,
    /// Wait time before readout, microseconds.
    pub t_wait_us: f64,
    /// Spin-down probability at zero wait time.
    pub p_down_init: f64,
    /// Whether a down spin may relax mid-readout before tunneling out.
    pub relax_during_readout: bool,
    pub tunnel: TunnelConfig,
}

impl Default for SpinReadoutConfig {
    fn default() -> Self {
        Self {
            t1_us: 68.0,
            t_wait_us: 0.0,
            p_down_init: 1.0,
            relax_during_readout: true,
            tunnel: TunnelConfig::default(),
        }
    }
}

impl SpinReadoutConfig {
    pub fn validate(&self) -> Result<()> {
        self.tunnel.validate()?;
        if !(self.t1_us > 0.0) {
            return Err(Error::invalid("t1_us must be positive"));
        }
        if !(self.t_wait_us >= 0.0) {
            return Err(Error::invalid("t_wait_us must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.p_down_init) {
            return Err(Error::invalid("p_down_init must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Discretize a piecewise-constant level sequence. `edges` are the switch
/// times; the level flips between 0 and `amp` at each edge.
fn sample_and_hold(edges: &[f64], cfg: &TunnelConfig) -> Trace {
    let n = cfg.n_samples();
    let mut samples = vec![0.0; n];
    for (k, s) in samples.iter_mut().enumerate() {
        let t = k as f64 * cfg.dt_us;
        let flips = edges.partition_point(|&e| e <= t);
        if flips % 2 == 1 {
            *s = cfg.amp_event;
        }
    }
    Trace::new(samples, cfg.dt_us).expect("n_samples >= 1 for a valid config")
}

/// One unconditioned telegraph realization. Returns the trace and whether
/// a rising edge fell inside the trace window.
pub fn gen_telegraph_trace(cfg: &TunnelConfig, rng: &mut Rng) -> Result<(Trace, bool)> {
    cfg.validate()?;
    let mut edges = Vec::new();
    let mut t = 0.0;
    loop {
        t += rng.exponential(cfg.tau_tunnel_us);
        if t >= cfg.trace_len_us {
            break;
        }
        edges.push(t);
    }
    let has_event = edges.first().is_some();
    Ok((sample_and_hold(&edges, cfg), has_event))
}

/// Event-class trace: telegraph switching conditioned (by rejection) on a
/// step that registers on the sample grid. A dwell shorter than the sample
/// period can fall between grid points; such draws are rejected too, so
/// every returned trace contains at least one sample at the event level.
pub fn gen_event_trace(cfg: &TunnelConfig, rng: &mut Rng) -> Result<Trace> {
    cfg.validate()?;
    for _ in 0..EVENT_RETRY_CAP {
        let (trace, _) = gen_telegraph_trace(cfg, rng)?;
        if trace.samples().iter().any(|&s| s == cfg.amp_event) {
            return Ok(trace);
        }
    }
    Err(Error::RetryCapExceeded {
        cap: EVENT_RETRY_CAP,
    })
}

/// No-event-class trace: flat baseline (noise is injected separately).
pub fn gen_noevent_trace(cfg: &TunnelConfig, _rng: &mut Rng) -> Result<Trace> {
    cfg.validate()?;
    Trace::zeros(cfg.n_samples(), cfg.dt_us)
}

/// Single-shot spin readout trace under energy-selective readout.
///
/// The spin is down at the start of the readout window with probability
/// `p_down_init * exp(-t_wait/t1)`. A down spin tunnels off after an
/// exponential delay, producing one blip (it tunnels back in as spin-up
/// and stays). With `relax_during_readout`, relaxation competes with the
/// tunnel-out and suppresses the blip when it wins. The label is the
/// ground truth of what the trace shows: `Event` iff the blip registers
/// on the sample grid (a blip shorter than the sample period leaves the
/// trace identical to a no-event trace and is labeled accordingly).
pub fn gen_spin_trace(cfg: &SpinReadoutConfig, rng: &mut Rng) -> Result<(Trace, Label)> {
    cfg.validate()?;
    let tun = &cfg.tunnel;
    let p_down = if cfg.t1_us.is_finite() {
        cfg.p_down_init * (-cfg.t_wait_us / cfg.t1_us).exp()
    } else {
        cfg.p_down_init
    };

    let flat = || Trace::zeros(tun.n_samples(), tun.dt_us);
    if rng.uniform() >= p_down {
        return Ok((flat()?, Label::NoEvent));
    }

    let t_out = rng.exponential(tun.tau_tunnel_us);
    if cfg.relax_during_readout && cfg.t1_us.is_finite() {
        let t_relax = rng.exponential(cfg.t1_us);
        if t_relax < t_out {
            return Ok((flat()?, Label::NoEvent));
        }
    }
    if t_out >= tun.trace_len_us {
        return Ok((flat()?, Label::NoEvent));
    }
    let t_back = t_out + rng.exponential(tun.tau_tunnel_us);
    let edges = if t_back < tun.trace_len_us {
        vec![t_out, t_back]
    } else {
        vec![t_out]
    };
    let trace = sample_and_hold(&edges, tun);
    let label = if trace.samples().iter().any(|&s| s == tun.amp_event) {
        Label::Event
    } else {
        Label::NoEvent
    };
    Ok((trace, label))
}
