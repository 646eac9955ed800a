//! Per-element resource and power figures of the reference ZCU102 designs.

use serde::{Deserialize, Serialize};

use super::ArrayMode;
use crate::error::{arg_err, NbqError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TablePower {
    pub signal: f64,
    pub logic: f64,
    pub dsps: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceEntry {
    pub mode: ArrayMode,
    pub n: u32,
    /// Watts.
    pub power: TablePower,
    pub luts: u32,
    pub ffs: u32,
    pub dsps: u32,
    /// `(P_m, P_n)` of the measured design.
    pub parallelism: (usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceTable {
    pub entries: Vec<ResourceEntry>,
}

impl Default for ResourceTable {
    fn default() -> Self {
        let svpe = |n, signal, logic, dsps, total, luts, ffs| ResourceEntry {
            mode: ArrayMode::Svpe,
            n,
            power: TablePower { signal, logic, dsps, total },
            luts,
            ffs,
            dsps: 3,
            parallelism: (32, 8),
        };
        Self {
            entries: vec![
                svpe(1, 1.94, 1.03, 0.08, 3.05, 353, 220),
                svpe(2, 2.31, 1.33, 0.09, 3.73, 280, 226),
                svpe(3, 2.61, 1.55, 0.09, 4.25, 307, 232),
                svpe(4, 2.53, 1.63, 0.08, 4.24, 334, 238),
                svpe(5, 2.13, 1.62, 0.06, 3.81, 346, 244),
                ResourceEntry {
                    mode: ArrayMode::Vpe,
                    n: 16,
                    power: TablePower { signal: 4.88, logic: 0.25, dsps: 0.40, total: 5.53 },
                    luts: 41,
                    ffs: 213,
                    dsps: 12,
                    parallelism: (16, 4),
                },
            ],
        }
    }
}

impl ResourceTable {
    pub fn from_json(text: &str) -> Result<Self> {
        let t: Self = serde_json::from_str(text)?;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            let p = e.power;
            if [p.signal, p.logic, p.dsps, p.total].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return arg_err(format!("{:?} n = {}: powers must be finite and non-negative", e.mode, e.n));
            }
        }
        for (i, a) in self.entries.iter().enumerate() {
            if self.entries[..i].iter().any(|b| b.mode == a.mode && b.n == a.n) {
                return arg_err(format!("duplicate resource entry for {:?} n = {}", a.mode, a.n));
            }
        }
        Ok(())
    }

    pub fn get(&self, mode: ArrayMode, n: u32) -> Result<&ResourceEntry> {
        self.entries
            .iter()
            .find(|e| e.mode == mode && e.n == n)
            .ok_or_else(|| NbqError::Argument(format!("no resource entry for {mode:?} with n = {n}")))
    }

    pub fn mean_total_power(&self, mode: ArrayMode) -> Result<f64> {
        let p: Vec<f64> = self.entries.iter().filter(|e| e.mode == mode).map(|e| e.power.total).collect();
        if p.is_empty() {
            return arg_err(format!("no resource entries for {mode:?}"));
        }
        Ok(p.iter().sum::<f64>() / p.len() as f64)
    }

    /// Mean SVPE total power over the tabulated widths divided by the VPE power.
    pub fn power_ratio(&self) -> Result<f64> {
        Ok(self.mean_total_power(ArrayMode::Svpe)? / self.mean_total_power(ArrayMode::Vpe)?)
    }
}
