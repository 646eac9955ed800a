//! Per-network reports and the side-by-side SVPE/VPE table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    bandwidth_min, dsp_count, ops_count, perf_eff, perf_eff_closed, t_compute, t_init, t_total, t_transfer, ArrayMode,
    ConvShape, HwConfig, ResourceTable,
};
use crate::error::Result;
use crate::netzoo::{LayerSpec, NetworkSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLayerDesc {
    pub name: String,
    pub shape: ConvShape,
    pub k: usize,
}

/// Conv layers of a spec with the input extents each one sees.
pub fn layers_from_spec(spec: &NetworkSpec) -> Result<Vec<ConvLayerDesc>> {
    let shapes = spec.shapes()?;
    let mut out = Vec::new();
    let mut cur = spec.input;
    for (l, next) in spec.layers.iter().zip(shapes) {
        if let LayerSpec::ConvQuantized { k, out_channels, .. } = *l {
            out.push(ConvLayerDesc {
                name: format!("conv{}", out.len() + 1),
                shape: ConvShape::new(cur[2], cur[1], cur[0], out_channels)?,
                k,
            });
        }
        cur = next;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerPerf {
    pub name: String,
    pub shape: ConvShape,
    pub k: usize,
    pub t_compute: f64,
    pub t_transfer: f64,
    pub t_init: f64,
    pub t_total: f64,
    pub ops: u64,
    pub perf_eff: f64,
    /// `None` when the closed form does not apply (compute width ≠ 16).
    pub perf_eff_closed: Option<f64>,
    pub dsp: u64,
    pub bandwidth_min: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfReport {
    pub config: HwConfig,
    pub dsp: u64,
    pub within_budget: bool,
    pub layers: Vec<LayerPerf>,
    pub total_ops: u64,
    pub total_time: f64,
    /// Total operations over total time.
    pub perf_eff: f64,
    /// Unweighted mean of the per-layer values.
    pub mean_layer_perf_eff: f64,
    /// Total operations over the time each layer would take at its closed-form
    /// rate; `None` when any layer lacks one.
    pub perf_eff_closed: Option<f64>,
    pub power_w: f64,
    pub energy_j: f64,
}

impl PerfReport {
    pub fn build(cfg: &HwConfig, layers: &[ConvLayerDesc], table: &ResourceTable) -> Result<Self> {
        cfg.validate()?;
        let power_w = table.get(cfg.mode, cfg.b_weight)?.power.total;
        let dsp = dsp_count(cfg);
        let per: Vec<LayerPerf> = layers
            .iter()
            .map(|l| {
                l.shape.validate()?;
                let c = HwConfig { k: l.k, ..*cfg };
                Ok(LayerPerf {
                    name: l.name.clone(),
                    shape: l.shape,
                    k: l.k,
                    t_compute: t_compute(&c, &l.shape),
                    t_transfer: t_transfer(&c, &l.shape),
                    t_init: t_init(&c, &l.shape),
                    t_total: t_total(&c, &l.shape),
                    ops: ops_count(&l.shape, l.k),
                    perf_eff: perf_eff(&c, &l.shape),
                    perf_eff_closed: perf_eff_closed(&c, &l.shape).ok(),
                    dsp,
                    bandwidth_min: bandwidth_min(&c, &l.shape),
                })
            })
            .collect::<Result<_>>()?;
        let total_ops = per.iter().map(|l| l.ops).sum();
        let total_time: f64 = per.iter().map(|l| l.t_total).sum();
        let closed_time: Option<f64> = per.iter().map(|l| l.perf_eff_closed.map(|p| l.ops as f64 / p)).sum();
        let mean = if per.is_empty() { 0.0 } else { per.iter().map(|l| l.perf_eff).sum::<f64>() / per.len() as f64 };
        Ok(Self {
            config: *cfg,
            dsp,
            within_budget: cfg.within_budget(),
            layers: per,
            total_ops,
            total_time,
            perf_eff: if total_time > 0.0 { total_ops as f64 / total_time } else { 0.0 },
            mean_layer_perf_eff: mean,
            perf_eff_closed: closed_time.filter(|&t| t > 0.0).map(|t| total_ops as f64 / t),
            power_w,
            energy_j: power_w * total_time,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub svpe: PerfReport,
    pub vpe: PerfReport,
    /// SVPE over VPE effective performance.
    pub speedup: f64,
    /// The same ratio at closed-form rates.
    pub speedup_closed: Option<f64>,
    /// Mean tabulated SVPE power over VPE power.
    pub power_ratio: f64,
    pub energy_ratio: f64,
}

pub fn compare(svpe: &HwConfig, vpe: &HwConfig, layers: &[ConvLayerDesc], table: &ResourceTable) -> Result<ComparisonReport> {
    let s = PerfReport::build(svpe, layers, table)?;
    let v = PerfReport::build(vpe, layers, table)?;
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    Ok(ComparisonReport {
        speedup: ratio(s.perf_eff, v.perf_eff),
        speedup_closed: s.perf_eff_closed.zip(v.perf_eff_closed).map(|(a, b)| ratio(a, b)),
        power_ratio: table.power_ratio()?,
        energy_ratio: ratio(s.energy_j, v.energy_j),
        svpe: s,
        vpe: v,
    })
}

impl ComparisonReport {
    /// Aligned text table, one row per quantity, one column per design.
    pub fn to_text(&self) -> String {
        let label = |r: &PerfReport| match r.config.mode {
            ArrayMode::Svpe => format!("SVPE n={}", r.config.b_weight),
            ArrayMode::Vpe => format!("VPE n={}", r.config.b_weight),
        };
        let mut rows: Vec<(String, String, String)> = Vec::new();
        let mut row = |name: &str, f: &dyn Fn(&PerfReport) -> String| {
            rows.push((name.to_string(), f(&self.svpe), f(&self.vpe)));
        };
        row("Freq (MHz)", &|r| format!("{:.0}", r.config.freq_hz / 1e6));
        row("(P_m, P_n)", &|r| format!("({}, {})", r.config.pm, r.config.pn));
        row("DSP", &|r| format!("{}", r.dsp));
        for i in 0..self.svpe.layers.len() {
            let name = format!("{} (GOP/s)", self.svpe.layers[i].name);
            row(&name, &|r| format!("{:.1}", r.layers[i].perf_eff / 1e9));
        }
        row("network (GOP/s)", &|r| format!("{:.1}", r.perf_eff / 1e9));
        row("layer mean (GOP/s)", &|r| format!("{:.1}", r.mean_layer_perf_eff / 1e9));
        row("closed form (GOP/s)", &|r| r.perf_eff_closed.map_or("-".into(), |p| format!("{:.1}", p / 1e9)));
        row("Power (W)", &|r| format!("{:.2}", r.power_w));
        row("Energy (mJ)", &|r| format!("{:.4}", r.energy_j * 1e3));
        row("DSP efficiency (GOP/s/DSP)", &|r| format!("{:.3}", r.perf_eff / 1e9 / r.dsp as f64));
        row("Energy efficiency (GOP/s/W)", &|r| format!("{:.2}", r.perf_eff / 1e9 / r.power_w));
        let heads = (String::new(), label(&self.svpe), label(&self.vpe));
        let w0 = rows.iter().map(|r| r.0.len()).chain([heads.0.len()]).max().unwrap_or(0);
        let w1 = rows.iter().map(|r| r.1.len()).chain([heads.1.len()]).max().unwrap_or(0);
        let w2 = rows.iter().map(|r| r.2.len()).chain([heads.2.len()]).max().unwrap_or(0);
        let mut out = String::new();
        for (a, b, c) in std::iter::once(&heads).chain(&rows) {
            let _ = writeln!(out, "{a:<w0$}  {b:>w1$}  {c:>w2$}");
        }
        let closed = self.speedup_closed.map_or("-".into(), |v| format!("{v:.4}"));
        let _ = writeln!(
            out,
            "speedup {:.4}  closed-form speedup {closed}  power ratio {:.4}  energy ratio {:.4}",
            self.speedup, self.power_ratio, self.energy_ratio
        );
        out
    }
}
