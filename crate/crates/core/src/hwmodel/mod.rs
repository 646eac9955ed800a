//! Analytical throughput, resource and energy model of a shift-based
//! convolution array against a multiply-accumulate baseline.

mod report;
mod resources;

pub use report::{compare, layers_from_spec, ComparisonReport, ConvLayerDesc, LayerPerf, PerfReport};
pub use resources::{ResourceEntry, ResourceTable, TablePower};

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, NbqError, Result};

pub const DEFAULT_DSP_BUDGET: u64 = 2520;
pub const DEFAULT_B_COMPUTE: u32 = 16;
/// Default `P_m : P_n` aspect of the parallelism lattice.
pub const DEFAULT_ASPECT: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayMode {
    /// Shift-and-add processing elements.
    Svpe,
    /// Multiply-accumulate processing elements.
    Vpe,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HwConfig {
    pub k: usize,
    pub pm: usize,
    pub pn: usize,
    pub freq_hz: f64,
    pub bandwidth_bps: f64,
    pub b_compute: u32,
    pub b_weight: u32,
    pub mode: ArrayMode,
    pub dsp_budget: u64,
}

impl HwConfig {
    pub fn svpe(n: u32, k: usize, pm: usize, pn: usize, freq_hz: f64, bandwidth_bps: f64) -> Self {
        Self {
            k,
            pm,
            pn,
            freq_hz,
            bandwidth_bps,
            b_compute: DEFAULT_B_COMPUTE,
            b_weight: n,
            mode: ArrayMode::Svpe,
            dsp_budget: DEFAULT_DSP_BUDGET,
        }
    }

    pub fn vpe(k: usize, pm: usize, pn: usize, freq_hz: f64, bandwidth_bps: f64) -> Self {
        Self { mode: ArrayMode::Vpe, ..Self::svpe(DEFAULT_B_COMPUTE, k, pm, pn, freq_hz, bandwidth_bps) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.pm == 0 || self.pn == 0 || self.b_compute == 0 || self.b_weight == 0 || self.dsp_budget == 0 {
            return arg_err("hardware sizes, bit widths and the DSP budget must be positive");
        }
        if !(self.freq_hz > 0.0 && self.freq_hz.is_finite()) {
            return arg_err("frequency must be positive and finite");
        }
        if !(self.bandwidth_bps > 0.0) || self.bandwidth_bps.is_nan() {
            return arg_err("bandwidth must be positive");
        }
        if self.mode == ArrayMode::Vpe && self.b_weight != self.b_compute {
            return arg_err(format!(
                "a multiply-accumulate array carries {}-bit weights, got {}",
                self.b_compute, self.b_weight
            ));
        }
        Ok(())
    }

    pub fn within_budget(&self) -> bool {
        dsp_count(self) <= self.dsp_budget
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvShape {
    pub width: usize,
    pub height: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvShape {
    pub fn new(width: usize, height: usize, in_channels: usize, out_channels: usize) -> Result<Self> {
        let s = Self { width, height, in_channels, out_channels };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return arg_err(format!("conv shape {self:?} has a zero extent"));
        }
        Ok(())
    }
}

/// VPE: `(k² + k)·P_n·P_m`; SVPE: `k·P_n·P_m`.
pub fn dsp_count(cfg: &HwConfig) -> u64 {
    let k = cfg.k as u64;
    let per = match cfg.mode {
        ArrayMode::Vpe => k * k + k,
        ArrayMode::Svpe => k,
    };
    per * (cfg.pm * cfg.pn) as u64
}

/// `H·W·⌈M/P_m⌉·⌈N/P_n⌉ / Freq`.
pub fn t_compute(cfg: &HwConfig, s: &ConvShape) -> f64 {
    let tiles = s.in_channels.div_ceil(cfg.pm) * s.out_channels.div_ceil(cfg.pn);
    (s.height * s.width * tiles) as f64 / cfg.freq_hz
}

/// `(M·N·k² + k·W·M) / Bandwidth`.
pub fn t_transfer(cfg: &HwConfig, s: &ConvShape) -> f64 {
    let (m, n, k, w) = (s.in_channels as f64, s.out_channels as f64, cfg.k as f64, s.width as f64);
    (m * n * k * k + k * w * m) / cfg.bandwidth_bps
}

/// `P_m·P_n / min(N, M) · b_compute · Freq`.
pub fn bandwidth_min(cfg: &HwConfig, s: &ConvShape) -> f64 {
    let lo = s.in_channels.min(s.out_channels) as f64;
    (cfg.pm * cfg.pn) as f64 / lo * cfg.b_compute as f64 * cfg.freq_hz
}

/// Bandwidth at which `t_transfer` equals the continuous `t_compute`
/// (`H·W·M·N / (P_m·P_n·Freq)`).
pub fn bandwidth_balanced(cfg: &HwConfig, s: &ConvShape) -> f64 {
    let (m, n, k, w, h) = (s.in_channels as f64, s.out_channels as f64, cfg.k as f64, s.width as f64, s.height as f64);
    (m * n * k * k + k * w * m) * (cfg.pm * cfg.pn) as f64 * cfg.freq_hz / (h * w * m * n)
}

/// Line-buffer fill: all weights plus the first `k` input rows,
/// `M·N·k²·b_weight / Bandwidth + W·M·k·b_compute / Bandwidth`.
pub fn t_init(cfg: &HwConfig, s: &ConvShape) -> f64 {
    let (m, n, k, w) = (s.in_channels as f64, s.out_channels as f64, cfg.k as f64, s.width as f64);
    m * n * k * k * cfg.b_weight as f64 / cfg.bandwidth_bps + w * m * k / cfg.bandwidth_bps * cfg.b_compute as f64
}

/// `H·W·M·N·k²·2`.
pub fn ops_count(s: &ConvShape, k: usize) -> u64 {
    (s.height * s.width * s.in_channels * s.out_channels * k * k * 2) as u64
}

pub fn t_total(cfg: &HwConfig, s: &ConvShape) -> f64 {
    t_compute(cfg, s) + t_init(cfg, s)
}

/// `OPs / T_total`, built from the component times.
pub fn perf_eff(cfg: &HwConfig, s: &ConvShape) -> f64 {
    ops_count(s, cfg.k) as f64 / t_total(cfg, s)
}

/// The closed form
/// `32·Freq·P_m·P_n·H·W·N·k² / (16·H·W·N + n·M·N·k² + 16·W·M·k)`,
/// which assumes 16-bit compute, continuous channel division and the link
/// bandwidth of [`closed_form_bandwidth`].
pub fn perf_eff_closed(cfg: &HwConfig, s: &ConvShape) -> Result<f64> {
    if cfg.b_compute != 16 {
        return Err(NbqError::Unsupported(format!("closed-form Perf_eff needs 16-bit compute, got {}", cfg.b_compute)));
    }
    let (m, n, k, w, h) = (s.in_channels as f64, s.out_channels as f64, cfg.k as f64, s.width as f64, s.height as f64);
    let p = (cfg.pm * cfg.pn) as f64;
    let bits = cfg.b_weight as f64;
    Ok(32.0 * cfg.freq_hz * p * h * w * n * k * k / (16.0 * h * w * n + bits * m * n * k * k + 16.0 * w * m * k))
}

/// Bandwidth under which [`perf_eff`] reduces to [`perf_eff_closed`]:
/// `b_compute·P_m·P_n·Freq / M`, which is [`bandwidth_min`] whenever `M ≤ N`.
pub fn closed_form_bandwidth(cfg: &HwConfig, s: &ConvShape) -> f64 {
    cfg.b_compute as f64 * (cfg.pm * cfg.pn) as f64 * cfg.freq_hz / s.in_channels as f64
}

/// Relative gap between the two Perf_eff paths at the closed-form bandwidth.
/// Zero up to rounding when `P_m | M` and `P_n | N`.
pub fn closed_form_divergence(cfg: &HwConfig, s: &ConvShape) -> Result<f64> {
    let closed = perf_eff_closed(cfg, s)?;
    let at = HwConfig { bandwidth_bps: closed_form_bandwidth(cfg, s), ..*cfg };
    Ok((perf_eff(&at, s) - closed).abs() / closed)
}

/// Candidate `(P_m, P_n)`: powers of two `P_m` with `P_n = max(1, P_m / aspect)`.
pub fn lattice(aspect: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..40).map(move |a| {
        let pm = 1usize << a;
        (pm, (pm / aspect.max(1)).max(1))
    })
}

/// Largest lattice point whose DSP use fits the budget.
pub fn max_parallelism(dsp_budget: u64, k: usize, mode: ArrayMode) -> Result<(usize, usize)> {
    max_parallelism_with(dsp_budget, k, mode, DEFAULT_ASPECT)
}

pub fn max_parallelism_with(dsp_budget: u64, k: usize, mode: ArrayMode, aspect: usize) -> Result<(usize, usize)> {
    if k == 0 || aspect == 0 {
        return arg_err("filter size and aspect must be positive");
    }
    let fits = |&(pm, pn): &(usize, usize)| {
        let cfg = HwConfig { pm, pn, k, mode, ..HwConfig::vpe(k, 1, 1, 1.0, 1.0) };
        dsp_count(&cfg) <= dsp_budget
    };
    lattice(aspect)
        .take_while(fits)
        .last()
        .ok_or_else(|| NbqError::Argument(format!("DSP budget {dsp_budget} fits no array with k = {k}")))
}
