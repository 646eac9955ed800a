//! Data loading, network construction and the training loop shared by the
//! subcommands and the acceptance tests.

use nbq_core::datasets::{self, AugmentPolicy, LabeledSet, Split};
use nbq_core::netzoo::NetworkSpec;
use nbq_core::qat::{evaluate, recalibrate_bn, Checkpoint, EpochMetrics, Network, Trainer, WeightMode};
use nbq_core::NbqError;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetKind, RunConfig};
use crate::error::{CliError, CliResult};

pub struct Data {
    pub train: LabeledSet,
    pub test: LabeledSet,
}

fn missing(e: NbqError, cfg: &RunConfig) -> CliError {
    match e {
        NbqError::Io(io) => CliError::Io(format!(
            "cannot read {:?} data under {}: {io} (datasets are never downloaded; set data.dir)",
            cfg.data.kind,
            cfg.data.dir.display()
        )),
        other => other.into(),
    }
}

fn trim(set: LabeledSet, total: Option<usize>, seed: u64) -> CliResult<LabeledSet> {
    match total {
        None => Ok(set),
        Some(t) => Ok(datasets::subset(&set, t.div_ceil(set.classes), seed)?),
    }
}

pub fn load_data(cfg: &RunConfig) -> CliResult<Data> {
    let d = &cfg.data;
    let (train, test) = match d.kind {
        DatasetKind::Mnist => (
            datasets::load_mnist(&d.dir, Split::Train, d.pad).map_err(|e| missing(e, cfg))?,
            datasets::load_mnist(&d.dir, Split::Test, d.pad).map_err(|e| missing(e, cfg))?,
        ),
        DatasetKind::Cifar10 => datasets::load_cifar10(&d.dir).map_err(|e| missing(e, cfg))?,
    };
    if train.classes != cfg.network.classes {
        return Err(CliError::Config(format!("dataset has {} classes, network.classes is {}", train.classes, cfg.network.classes)));
    }
    Ok(Data { train: trim(train, d.train_subset, d.subset_seed)?, test: trim(test, d.test_subset, d.subset_seed ^ 1)? })
}

pub fn network_spec(cfg: &RunConfig, input: [usize; 3]) -> CliResult<NetworkSpec> {
    let n = &cfg.network;
    let spec = match &n.spec_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(format!("cannot read {}: {e}", p.display())))?;
            NetworkSpec::from_json(&text)?
        }
        None => NetworkSpec::nbqnn_with_input(n.classes, n.multiplier, input)?,
    };
    if spec.input != input {
        return Err(CliError::Config(format!("network input {:?} does not match data {:?}", spec.input, input)));
    }
    Ok(spec)
}

pub fn build_network(cfg: &RunConfig, spec: &NetworkSpec) -> CliResult<Network> {
    Ok(spec.build(cfg.quant_spec()?, cfg.quant.activation_quant, cfg.network.init, cfg.seed)?)
}

/// What a checkpoint carries besides tensors.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_hash: String,
    pub config: RunConfig,
    pub network_spec: String,
}

impl RunMeta {
    pub fn from_checkpoint(ck: &Checkpoint) -> CliResult<Self> {
        serde_json::from_str(&ck.config_json).map_err(|e| CliError::Io(format!("checkpoint carries no run metadata: {e}")))
    }
}

/// Re-estimates BN statistics under snapped weights, the way the frozen model
/// will see them. A no-op for runs equivalent to full precision.
/// Returns whether the network changed.
pub fn finish(cfg: &RunConfig, net: &mut Network, train: &LabeledSet) -> CliResult<bool> {
    if cfg.full_precision_equivalent() || cfg.train.recalibrate_batches == 0 {
        return Ok(false);
    }
    net.mode = WeightMode::Quantized;
    let idx: Vec<usize> = (0..train.len()).collect();
    let take = (cfg.train.recalibrate_batch * cfg.train.recalibrate_batches).min(train.len());
    let x = train.images.select_rows(&idx[..take])?;
    recalibrate_bn(net, &x, cfg.train.recalibrate_batch, cfg.train.recalibrate_batches)?;
    Ok(true)
}

pub struct TrainOutcome {
    pub spec: NetworkSpec,
    pub meta: RunMeta,
    /// Network after the last epoch, finished.
    pub net: Network,
    pub trainer: Trainer,
    /// Finished copy of the epoch with the lowest test error.
    pub best: Option<(usize, Network)>,
    pub history: Vec<EpochMetrics>,
    /// Accuracy of the finished network on the test set.
    pub test_accuracy: f64,
}

impl TrainOutcome {
    pub fn checkpoint(&self, net: &Network, epoch: usize) -> CliResult<Checkpoint> {
        Ok(Checkpoint {
            net: net.clone(),
            opt: self.trainer.opt.clone(),
            seed: self.meta.config.seed,
            epoch,
            config_json: serde_json::to_string(&self.meta)?,
            history: self.history.clone(),
        })
    }
}

/// Runs all configured epochs. `on_epoch` sees each metrics row as soon as it
/// exists; a non-finite cost surfaces as [`CliError::Diverged`] carrying the
/// last finite row.
pub fn train_run(cfg: &RunConfig, data: &Data, mut on_epoch: impl FnMut(&EpochMetrics)) -> CliResult<TrainOutcome> {
    let spec = network_spec(cfg, data.train.sample_shape())?;
    let mut net = build_network(cfg, &spec)?;
    let mut trainer = Trainer::new(cfg.train_config()?)?;
    let meta = RunMeta { config_hash: cfg.hash(), config: cfg.clone(), network_spec: spec.to_json()? };
    let policy = if cfg.data.augment { AugmentPolicy::CIFAR } else { AugmentPolicy::OFF };
    let mut aug = |b: &mut nbq_core::Tensor, rng: &mut _| datasets::augment(b, policy, rng);
    let mut history: Vec<EpochMetrics> = Vec::new();
    let mut best: Option<(f64, usize, Network)> = None;
    let epochs = cfg.train.epochs;
    while trainer.epoch < epochs {
        let augment: Option<&mut nbq_core::qat::Augment<'_>> = if policy.is_off() { None } else { Some(&mut aug) };
        let loss = match trainer.run_epoch(&mut net, &data.train.images, &data.train.labels, augment) {
            Ok(l) => l,
            Err(NbqError::Divergence(reason)) => {
                let last = history.last().map(|m| format!("{m:?}")).unwrap_or_else(|| "none".into());
                return Err(CliError::Diverged { reason, last });
            }
            Err(e) => return Err(e.into()),
        };
        let last_epoch = trainer.epoch == epochs;
        let test_error = if cfg.train.eval_every_epoch || last_epoch {
            Some(1.0 - evaluate(&net, &data.test.images, &data.test.labels)?)
        } else {
            None
        };
        let m = EpochMetrics { epoch: trainer.epoch, train_loss: loss, test_error, max_gap: net.max_gap() };
        on_epoch(&m);
        if let Some(err) = test_error {
            if best.as_ref().is_none_or(|(e, ..)| err < *e) {
                best = Some((err, m.epoch, net.clone()));
            }
        }
        history.push(m);
    }
    trainer.history = history.clone();
    let best = match best {
        Some((_, epoch, mut b)) if epoch != trainer.epoch => {
            finish(cfg, &mut b, &data.train)?;
            Some((epoch, b))
        }
        _ => None,
    };
    let last_error = history.last().and_then(|m| m.test_error);
    let test_accuracy = match (finish(cfg, &mut net, &data.train)?, last_error) {
        (false, Some(err)) => 1.0 - err,
        _ => evaluate(&net, &data.test.images, &data.test.labels)?,
    };
    Ok(TrainOutcome { spec, meta, net, trainer, best, history, test_accuracy })
}
