//! Run configuration: one TOML file, dotted-key overrides, a content hash.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nbq_core::hwmodel::{ArrayMode, HwConfig, DEFAULT_B_COMPUTE, DEFAULT_DSP_BUDGET};
use nbq_core::netzoo::WeightInit;
use nbq_core::qat::{AlphaSchedule, Cost, LrSchedule, Optimizer, TrainConfig, WeightMode};
use nbq_core::quantizer::QuantSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub kind: DatasetKind,
    pub dir: PathBuf,
    /// Total training samples kept, split evenly over classes. All if absent.
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
    pub subset_seed: u64,
    /// Zero border added to MNIST digits (28 → 32 with 2).
    pub pad: usize,
    /// Random crop and flip; CIFAR only.
    pub augment: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Mnist,
            dir: PathBuf::from("data/mnist"),
            train_subset: None,
            test_subset: None,
            subset_seed: 0,
            pad: 2,
            augment: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub classes: usize,
    pub multiplier: f64,
    /// JSON network spec replacing the reference architecture.
    pub spec_path: Option<PathBuf>,
    pub init: WeightInit,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self { classes: 10, multiplier: 0.25, spec_path: None, init: WeightInit::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantConfig {
    pub n: u8,
    pub alpha: f64,
    /// Straight-through scale of the activation quantizer; derived from `n` if absent.
    pub lambda: Option<f64>,
    pub scale: f64,
    pub activation_quant: bool,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self { n: 3, alpha: 0.5, lambda: None, scale: 1.0, activation_quant: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub cost: Cost,
    pub weight_decay: f64,
    pub lr_schedule: LrSchedule,
    pub alpha_schedule: AlphaSchedule,
    /// `reconstruct` (the default) or `full_precision`.
    pub mode: WeightMode,
    /// Batches used to re-estimate BN statistics under snapped weights.
    pub recalibrate_batches: usize,
    pub recalibrate_batch: usize,
    /// Evaluate on the test set after every epoch rather than only the last.
    pub eval_every_epoch: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch: 50,
            lr: 0.01,
            optimizer: Optimizer::adam(),
            cost: Cost::SoftmaxXent,
            weight_decay: 0.0,
            lr_schedule: LrSchedule::Cosine { final_fraction: 0.05 },
            alpha_schedule: AlphaSchedule::Constant,
            mode: WeightMode::Reconstruct,
            recalibrate_batches: 20,
            recalibrate_batch: 100,
            eval_every_epoch: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HwSection {
    pub k: usize,
    pub freq_hz: f64,
    /// Off-chip link, bits per second.
    pub bandwidth_bps: f64,
    pub b_compute: u32,
    /// SVPE weight width; the quantizer's `n` if absent.
    pub n: Option<u32>,
    pub dsp_budget: u64,
    /// `(P_m, P_n)`; the largest fitting lattice point if absent.
    pub svpe_parallelism: Option<(usize, usize)>,
    pub vpe_parallelism: Option<(usize, usize)>,
    /// `[W, H, M, N]` of the single-layer comparison.
    pub reference_shape: [usize; 4],
    pub resource_table: Option<PathBuf>,
}

impl Default for HwSection {
    fn default() -> Self {
        Self {
            k: 3,
            freq_hz: 2e8,
            bandwidth_bps: 1.536e11,
            b_compute: DEFAULT_B_COMPUTE,
            n: None,
            dsp_budget: DEFAULT_DSP_BUDGET,
            svpe_parallelism: None,
            vpe_parallelism: None,
            reference_shape: [32, 32, 3, 128],
            resource_table: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub network: NetConfig,
    pub quant: QuantConfig,
    pub train: TrainSection,
    pub hw: HwSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            network: NetConfig::default(),
            quant: QuantConfig::default(),
            train: TrainSection::default(),
            hw: HwSection::default(),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match wrapped.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Sets `a.b.c = value` inside a TOML table, creating tables on the way.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> CliResult<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not KEY=VALUE")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override key {key:?} is malformed")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override {key:?} descends into a non-table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    /// Parses TOML text, applies overrides in order, then validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> CliResult<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| CliError::Config(format!("bad config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("bad config: {}", e.message())))?;
        cfg.validate().map_err(|e| match e {
            CliError::Core(c) => CliError::Config(c.to_string()),
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        self.quant_spec()?;
        self.train_config()?;
        if self.network.classes < 2 {
            return bad("network.classes must be at least 2".into());
        }
        if !(self.network.multiplier > 0.0 && self.network.multiplier <= 1.0) {
            return bad(format!("network.multiplier {} outside (0, 1]", self.network.multiplier));
        }
        if self.train.recalibrate_batch < 2 {
            return bad("train.recalibrate_batch must be at least 2".into());
        }
        if self.data.augment && self.data.kind == DatasetKind::Mnist {
            return bad("data.augment applies to cifar10 only".into());
        }
        self.svpe_config()?;
        self.vpe_config()?;
        Ok(())
    }

    pub fn quant_spec(&self) -> CliResult<QuantSpec> {
        let q = &self.quant;
        let mut spec = QuantSpec::new(q.n)?.with_alpha(q.alpha)?.with_scale(q.scale)?;
        if let Some(l) = q.lambda {
            spec = spec.with_lambda(l)?;
        }
        Ok(spec)
    }

    pub fn train_config(&self) -> CliResult<TrainConfig> {
        let t = &self.train;
        let mut c = TrainConfig::new(self.quant_spec()?);
        c.lr = t.lr;
        c.batch = t.batch;
        c.optimizer = t.optimizer;
        c.epochs = t.epochs;
        c.seed = self.seed;
        c.activation_quant = self.quant.activation_quant;
        c.mode = t.mode;
        c.cost = t.cost;
        c.weight_decay = t.weight_decay;
        c.lr_schedule = t.lr_schedule;
        c.alpha_schedule = t.alpha_schedule;
        c.validate()?;
        Ok(c)
    }

    /// α = 1 without activation quantization trains exactly like full precision.
    pub fn full_precision_equivalent(&self) -> bool {
        self.train.mode == WeightMode::FullPrecision
            || (self.quant.alpha == 1.0 && self.train.alpha_schedule == AlphaSchedule::Constant && !self.quant.activation_quant)
    }

    fn parallelism(&self, mode: ArrayMode, given: Option<(usize, usize)>) -> CliResult<(usize, usize)> {
        match given {
            Some(p) => Ok(p),
            None => Ok(nbq_core::hwmodel::max_parallelism(self.hw.dsp_budget, self.hw.k, mode)?),
        }
    }

    pub fn svpe_config(&self) -> CliResult<HwConfig> {
        let h = &self.hw;
        let (pm, pn) = self.parallelism(ArrayMode::Svpe, h.svpe_parallelism)?;
        let n = h.n.unwrap_or(self.quant.n as u32);
        let cfg = HwConfig { b_compute: h.b_compute, dsp_budget: h.dsp_budget, ..HwConfig::svpe(n, h.k, pm, pn, h.freq_hz, h.bandwidth_bps) };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn vpe_config(&self) -> CliResult<HwConfig> {
        let h = &self.hw;
        let (pm, pn) = self.parallelism(ArrayMode::Vpe, h.vpe_parallelism)?;
        let cfg = HwConfig {
            b_compute: h.b_compute,
            b_weight: h.b_compute,
            dsp_budget: h.dsp_budget,
            ..HwConfig::vpe(h.k, pm, pn, h.freq_hz, h.bandwidth_bps)
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON form, ignoring where outputs go.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&RunConfig { out: PathBuf::new(), ..self.clone() }).expect("config serializes");
        let digest = Sha256::digest(&json);
        let mut s = String::with_capacity(64);
        for b in digest {
            let _ = write!(s, "{b:02x}");
        }
        s
    }
}
