//! One function per subcommand. Each writes its artifacts under the run's
//! output directory and returns a short human summary.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nbq_core::datasets::{LabeledSet, Split};
use nbq_core::hwmodel::{compare, layers_from_spec, ComparisonReport, ConvLayerDesc, ConvShape, ResourceTable};
use nbq_core::qat::{accuracy, freeze, Checkpoint, EpochMetrics, FrozenNetwork};
use nbq_core::quantizer::{sampling_loss_table, Density};
use nbq_core::shift::SvpeEngine;
use nbq_core::Tensor;
use serde::Serialize;

use crate::config::{DatasetKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::pipeline::{load_data, network_spec, train_run, RunMeta};

const EVAL_CHUNK: usize = 100;
/// Default width of the `gaussian` preset.
pub const DEFAULT_SIGMA: f64 = 0.5;

fn out_dir(cfg: &RunConfig) -> CliResult<&Path> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::Io(format!("cannot create {}: {e}", cfg.out.display())))?;
    Ok(&cfg.out)
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

/// `1.52%` style top-1 error.
pub fn format_test_error(accuracy: f64) -> String {
    format!("{:.2}%", 100.0 * (1.0 - accuracy))
}

#[derive(Serialize)]
struct Stamped<'a, T> {
    config_hash: &'a str,
    #[serde(flatten)]
    body: T,
}

fn metrics_row(m: &EpochMetrics) -> [String; 4] {
    [
        m.epoch.to_string(),
        format!("{:.6}", m.train_loss),
        m.test_error.map(|e| format!("{e:.6}")).unwrap_or_default(),
        format!("{:.6e}", m.max_gap),
    ]
}

pub fn cmd_train(cfg: &RunConfig) -> CliResult<String> {
    let dir = out_dir(cfg)?.to_path_buf();
    let data = load_data(cfg)?;
    let log_path = dir.join("metrics.csv");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| CliError::Io(format!("cannot create {}: {e}", log_path.display())))?);
    writeln!(log, "# config_hash={}", cfg.hash())?;
    if cfg.full_precision_equivalent() {
        writeln!(log, "# full-precision-equivalent")?;
    }
    log.flush()?;
    let mut csv = csv::Writer::from_writer(log);
    csv.write_record(["epoch", "train_loss", "test_error", "max_gap"])?;
    csv.flush()?;
    let mut io_err = None;
    let outcome = train_run(cfg, &data, |m| {
        if io_err.is_none() {
            if let Err(e) = csv.write_record(metrics_row(m)).and_then(|_| Ok(csv.flush()?)) {
                io_err = Some(e);
            }
        }
    });
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let outcome = outcome?;
    csv.flush()?;
    let epoch = outcome.trainer.epoch;
    let final_ck = outcome.checkpoint(&outcome.net, epoch)?;
    write_file(&dir.join("final.nbqc"), &final_ck.to_bytes()?)?;
    let best_ck = match &outcome.best {
        Some((e, net)) => outcome.checkpoint(net, *e)?,
        None => final_ck,
    };
    write_file(&dir.join("best.nbqc"), &best_ck.to_bytes()?)?;
    let mut s = String::new();
    let _ = writeln!(s, "config {}", cfg.hash());
    let _ = writeln!(s, "trained {epoch} epochs on {} samples", data.train.len());
    let _ = writeln!(s, "Test error: {} ({} test images)", format_test_error(outcome.test_accuracy), data.test.len());
    let _ = write!(s, "wrote {}, final.nbqc, best.nbqc", log_path.display());
    Ok(s)
}

pub fn cmd_freeze(cfg: &RunConfig, checkpoint: &Path) -> CliResult<String> {
    let ck = Checkpoint::from_bytes(&read_file(checkpoint)?)?;
    let meta = RunMeta::from_checkpoint(&ck)?;
    let (frozen, report) = freeze(&ck.net, &meta.network_spec)?;
    let dir = out_dir(cfg)?;
    write_file(&dir.join("model.nbqf"), &frozen.to_bytes()?)?;
    write_json(&dir.join("freeze_report.json"), &Stamped { config_hash: &meta.config_hash, body: &report })?;
    Ok(format!(
        "froze {} quantized weights at n = {} (max residual {:.3e}); wrote model.nbqf and freeze_report.json",
        report.quantized_params,
        report.n,
        report.max_residual()
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EvalPath {
    Real,
    Shift,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub path: EvalPath,
    pub samples: usize,
    pub real_accuracy: Option<f64>,
    pub shift_accuracy: Option<f64>,
    /// Fraction of samples both paths label identically.
    pub agreement: Option<f64>,
}

fn predict_chunked(x: &Tensor, f: impl Fn(&Tensor) -> nbq_core::Result<Vec<usize>>) -> CliResult<Vec<usize>> {
    let n = x.shape()[0];
    let idx: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(n);
    for chunk in idx.chunks(EVAL_CHUNK) {
        out.extend(f(&x.select_rows(chunk)?)?);
    }
    Ok(out)
}

pub fn evaluate_frozen(model: &FrozenNetwork, set: &LabeledSet, path: EvalPath, pm: usize, pn: usize) -> CliResult<EvalReport> {
    if set.is_empty() {
        return Err(CliError::Config("evaluation set is empty".into()));
    }
    let real = match path {
        EvalPath::Shift => None,
        _ => Some(predict_chunked(&set.images, |x| model.predict_real(x))?),
    };
    let shift = match path {
        EvalPath::Real => None,
        _ => {
            let engine = SvpeEngine::new(model, pm, pn)?;
            Some(predict_chunked(&set.images, |x| engine.predict(x))?)
        }
    };
    let agreement = match (&real, &shift) {
        (Some(a), Some(b)) => Some(accuracy(a, b)),
        _ => None,
    };
    Ok(EvalReport {
        path,
        samples: set.len(),
        real_accuracy: real.map(|p| accuracy(&p, &set.labels)),
        shift_accuracy: shift.map(|p| accuracy(&p, &set.labels)),
        agreement,
    })
}

fn test_set(cfg: &RunConfig) -> CliResult<LabeledSet> {
    let d = &cfg.data;
    match d.kind {
        DatasetKind::Mnist => {
            let set = nbq_core::datasets::load_mnist(&d.dir, Split::Test, d.pad)
                .map_err(|e| CliError::Io(format!("cannot read MNIST test data under {}: {e}", d.dir.display())))?;
            match d.test_subset {
                Some(t) => Ok(nbq_core::datasets::subset(&set, t.div_ceil(set.classes), d.subset_seed ^ 1)?),
                None => Ok(set),
            }
        }
        DatasetKind::Cifar10 => Ok(load_data(cfg)?.test),
    }
}

pub fn cmd_eval(cfg: &RunConfig, model: &Path, path: EvalPath) -> CliResult<String> {
    let frozen = FrozenNetwork::from_bytes(&read_file(model)?)?;
    let set = test_set(cfg)?;
    let hw = cfg.svpe_config()?;
    let report = evaluate_frozen(&frozen, &set, path, hw.pm, hw.pn)?;
    let hash = cfg.hash();
    write_json(&out_dir(cfg)?.join("eval.json"), &Stamped { config_hash: &hash, body: &report })?;
    let mut s = String::new();
    let _ = writeln!(s, "config {hash}");
    let _ = writeln!(s, "{} test images", report.samples);
    if let Some(a) = report.real_accuracy {
        let _ = writeln!(s, "real  path: accuracy {:.4}, Test error: {}", a, format_test_error(a));
    }
    if let Some(a) = report.shift_accuracy {
        let _ = writeln!(s, "shift path: accuracy {:.4}, Test error: {}", a, format_test_error(a));
    }
    if let Some(a) = report.agreement {
        let _ = writeln!(s, "agreement: {:.4}", a);
    }
    Ok(s.trim_end().to_string())
}

#[derive(Clone, Debug, Serialize)]
pub struct HwReport {
    /// The single reference layer from the run config.
    pub reference: ComparisonReport,
    /// Every conv layer of the configured network.
    pub network: ComparisonReport,
}

pub fn input_shape(cfg: &RunConfig) -> [usize; 3] {
    match cfg.data.kind {
        DatasetKind::Mnist => [1, 28 + 2 * cfg.data.pad, 28 + 2 * cfg.data.pad],
        DatasetKind::Cifar10 => [3, 32, 32],
    }
}

pub fn hw_report(cfg: &RunConfig) -> CliResult<HwReport> {
    let table = match &cfg.hw.resource_table {
        Some(p) => ResourceTable::from_json(&String::from_utf8_lossy(&read_file(p)?))?,
        None => ResourceTable::default(),
    };
    let (svpe, vpe) = (cfg.svpe_config()?, cfg.vpe_config()?);
    let [w, h, m, n] = cfg.hw.reference_shape;
    let reference = [ConvLayerDesc { name: "reference".into(), shape: ConvShape::new(w, h, m, n)?, k: cfg.hw.k }];
    let spec = network_spec(cfg, input_shape(cfg))?;
    let layers = layers_from_spec(&spec)?;
    Ok(HwReport { reference: compare(&svpe, &vpe, &reference, &table)?, network: compare(&svpe, &vpe, &layers, &table)? })
}

pub fn cmd_hwreport(cfg: &RunConfig) -> CliResult<String> {
    let report = hw_report(cfg)?;
    let hash = cfg.hash();
    let dir = out_dir(cfg)?;
    write_json(&dir.join("hwreport.json"), &Stamped { config_hash: &hash, body: &report })?;
    let text = format!(
        "# config_hash={hash}\n\nreference layer\n{}\nnetwork\n{}",
        report.reference.to_text(),
        report.network.to_text()
    );
    write_file(&dir.join("hwreport.txt"), text.as_bytes())?;
    Ok(text.trim_end().to_string())
}

/// `uniform`, `gaussian` or `gaussian:SIGMA`.
pub fn parse_density(preset: &str) -> CliResult<Density> {
    match preset.split_once(':') {
        None if preset == "uniform" => Ok(Density::uniform()),
        None if preset == "gaussian" => Ok(Density::truncated_gaussian(DEFAULT_SIGMA)?),
        Some(("gaussian", s)) => {
            let sigma: f64 = s.parse().map_err(|_| CliError::Config(format!("bad gaussian width {s:?}")))?;
            Ok(Density::truncated_gaussian(sigma).map_err(|e| CliError::Config(e.to_string()))?)
        }
        _ => Err(CliError::Config(format!("unknown density preset {preset:?}; use uniform, gaussian or gaussian:SIGMA"))),
    }
}

pub fn cmd_sampling_loss(cfg: &RunConfig, preset: &str, nmax: u32) -> CliResult<String> {
    let phi = parse_density(preset)?;
    if nmax < 1 {
        return Err(CliError::Config("--nmax must be at least 1".into()));
    }
    let rows = sampling_loss_table(&phi, nmax)?;
    let hash = cfg.hash();
    let path: PathBuf = out_dir(cfg)?.join("sampling_loss.csv");
    let mut text = format!("# config_hash={hash}\n# density={}\n", phi.name());
    let mut table = String::new();
    let _ = writeln!(table, "{:>3}  {:>14}  {:>14}", "n", "phi", "L");
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["n", "phi", "l"])?;
    for (n, p, l) in &rows {
        let ls = l.map(|v| format!("{v:.6e}")).unwrap_or_default();
        csv.write_record([n.to_string(), format!("{p:.12e}"), l.map(|v| format!("{v:.12e}")).unwrap_or_default()])?;
        let _ = writeln!(table, "{n:>3}  {p:>14.6e}  {:>14}", if ls.is_empty() { "-".into() } else { ls });
    }
    text.push_str(&String::from_utf8(csv.into_inner().map_err(|e| CliError::Io(e.to_string()))?).expect("csv is utf-8"));
    write_file(&path, text.as_bytes())?;
    Ok(format!("density {}\n{}", phi.name(), table.trim_end()))
}
