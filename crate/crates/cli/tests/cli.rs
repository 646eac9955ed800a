//! End-to-end runs of the `nbq` binary on a small synthetic digit set.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn idx_images(images: &[Vec<u8>], side: usize) -> Vec<u8> {
    let mut out = vec![0, 0, 8, 3];
    for d in [images.len(), side, side] {
        out.extend((d as u32).to_be_bytes());
    }
    for img in images {
        out.extend(img);
    }
    out
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 8, 1];
    out.extend((labels.len() as u32).to_be_bytes());
    out.extend(labels);
    out
}

/// Ten classes of 28×28 images, each a bright bar at a class-specific row
/// plus a little per-sample jitter.
fn write_digits(dir: &Path, train: usize, test: usize) {
    let make = |count: usize, salt: usize| {
        let mut imgs = Vec::new();
        let mut labels = Vec::new();
        for s in 0..count {
            let label = s % 10;
            let mut img = vec![0u8; 28 * 28];
            let row = 2 + label * 2 + (s + salt) % 2;
            for x in 4..24 {
                img[row * 28 + x] = 255;
                img[(row + 1) * 28 + x] = ((s * 37 + x * 11 + salt) % 200) as u8;
            }
            imgs.push(img);
            labels.push(label as u8);
        }
        (imgs, labels)
    };
    let (ti, tl) = make(train, 0);
    let (ei, el) = make(test, 1);
    std::fs::write(dir.join("train-images-idx3-ubyte"), idx_images(&ti, 28)).unwrap();
    std::fs::write(dir.join("train-labels-idx1-ubyte"), idx_labels(&tl)).unwrap();
    std::fs::write(dir.join("t10k-images-idx3-ubyte"), idx_images(&ei, 28)).unwrap();
    std::fs::write(dir.join("t10k-labels-idx1-ubyte"), idx_labels(&el)).unwrap();
}

struct Fixture {
    tmp: TempDir,
    data: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let tmp = TempDir::new().unwrap();
        let data = tmp.path().join("mnist");
        std::fs::create_dir(&data).unwrap();
        write_digits(&data, 100, 40);
        Self { tmp, data }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.tmp.path().join(name)
    }

    fn run(&self, out: &str, args: &[&str]) -> Output {
        self.run_late(out, args, &[])
    }

    /// Fixture defaults go after `args` (clap keeps only the last group of a
    /// global flag), and `late` after the defaults.
    fn run_late(&self, out: &str, args: &[&str], late: &[&str]) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_nbq"));
        cmd.args(args)
            .arg("--out")
            .arg(self.out(out))
            .arg("--override")
            .arg(format!("data.dir={:?}", self.data.display().to_string()))
            .args(["--override", "train.epochs=1", "--override", "train.recalibrate_batches=2", "--override", "network.multiplier=0.125"]);
        cmd.args(late).output().unwrap()
    }
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

#[test]
fn train_freeze_eval_pipeline() {
    let f = Fixture::new();
    let text = ok(f.run("a", &["train", "--seed", "3"]));
    assert!(text.contains("Test error:"), "{text}");
    let dir = f.out("a");
    for name in ["metrics.csv", "final.nbqc", "best.nbqc"] {
        assert!(dir.join(name).is_file(), "{name} missing");
    }
    let log = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert!(lines[0].starts_with("# config_hash="));
    assert_eq!(lines[1], "epoch,train_loss,test_error,max_gap");
    assert_eq!(lines.len(), 3);
    assert!(!log.contains("full-precision-equivalent"));

    ok(f.run("b", &["train", "--seed", "3"]));
    assert_eq!(log, std::fs::read_to_string(f.out("b").join("metrics.csv")).unwrap());

    let ck = dir.join("final.nbqc");
    ok(f.run("a", &["freeze", ck.to_str().unwrap()]));
    let first = std::fs::read(dir.join("model.nbqf")).unwrap();
    let report = std::fs::read_to_string(dir.join("freeze_report.json")).unwrap();
    ok(f.run("a", &["freeze", ck.to_str().unwrap()]));
    assert_eq!(first, std::fs::read(dir.join("model.nbqf")).unwrap());
    assert_eq!(report, std::fs::read_to_string(dir.join("freeze_report.json")).unwrap());
    let json: serde_json::Value = serde_json::from_str(&report).unwrap();
    let total: u64 = json["layers"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|l| l["histogram"].as_array().unwrap().iter().map(|p| p[1].as_u64().unwrap()))
        .sum();
    assert_eq!(total, json["quantized_params"].as_u64().unwrap());
    assert!(json["config_hash"].as_str().unwrap().len() == 64);

    let model = dir.join("model.nbqf");
    let text = ok(f.run("a", &["eval", model.to_str().unwrap()]));
    assert!(text.contains("agreement:"), "{text}");
    assert!(text.contains("real  path") && text.contains("shift path"));
    let pct = text.lines().find(|l| l.contains("Test error:")).unwrap().rsplit(' ').next().unwrap();
    assert!(pct.ends_with('%') && pct.trim_end_matches('%').parse::<f64>().is_ok(), "{pct}");

    let empty = f.run("a", &["eval", model.to_str().unwrap(), "--path", "real", "--override", "data.test_subset=0"]);
    assert_eq!(empty.status.code(), Some(2));
    let bad = f.run("a", &["eval", dir.join("metrics.csv").to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(4));
}

#[test]
fn alpha_one_is_flagged() {
    let f = Fixture::new();
    ok(f.run("fp", &["train", "--override", "quant.alpha=1.0"]));
    let log = std::fs::read_to_string(f.out("fp").join("metrics.csv")).unwrap();
    assert_eq!(log.lines().nth(1), Some("# full-precision-equivalent"));
}

#[test]
fn config_and_io_errors_map_to_exit_codes() {
    let f = Fixture::new();
    assert_eq!(f.run("x", &["train", "--override", "quant.n=0"]).status.code(), Some(2));
    assert_eq!(f.run("x", &["train", "--override", "nonsense.key=1"]).status.code(), Some(2));
    assert_eq!(f.run_late("x", &["train"], &["--override", "data.dir=\"/nonexistent/nbq\""]).status.code(), Some(4));
    let cfg = f.out("cfg.toml");
    std::fs::write(&cfg, "[quant]\nalpha = \"half\"\n").unwrap();
    assert_eq!(f.run("x", &["hwreport", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(f.run("x", &["hwreport", "--config", "/nonexistent/nbq.toml"]).status.code(), Some(4));
}

#[test]
fn divergence_exits_with_three() {
    let f = Fixture::new();
    let o = f.run("d", &["train", "--override", "train.lr=1e308", "--override", "train.optimizer={kind=\"sgd\", momentum=0.0}"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("last finite"));
}

#[test]
fn hwreport_json_matches_table() {
    let f = Fixture::new();
    let text = ok(f.run("hw", &["hwreport"]));
    assert!(text.contains("DSP"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(f.out("hw").join("hwreport.json")).unwrap()).unwrap();
    let r = &json["reference"];
    assert_eq!(r["svpe"]["dsp"], 768);
    assert_eq!(r["vpe"]["dsp"], 768);
    let closed = r["speedup_closed"].as_f64().unwrap();
    assert!((closed - 4.085).abs() < 0.01, "{closed}");
    let table = std::fs::read_to_string(f.out("hw").join("hwreport.txt")).unwrap();
    assert!(table.contains(&format!("closed-form speedup {closed:.4}")));
    let net = &json["network"]["svpe"];
    let layers = net["layers"].as_array().unwrap();
    let ops: u64 = layers.iter().map(|l| l["ops"].as_u64().unwrap()).sum();
    assert_eq!(ops, net["total_ops"].as_u64().unwrap());
    let mean = layers.iter().map(|l| l["perf_eff"].as_f64().unwrap()).sum::<f64>() / layers.len() as f64;
    assert!((mean - net["mean_layer_perf_eff"].as_f64().unwrap()).abs() <= 1e-9 * mean);
    for (i, l) in layers.iter().enumerate() {
        let row = format!("conv{} (GOP/s)", i + 1);
        let line = table.lines().find(|t| t.starts_with(&row)).unwrap();
        assert!(line.contains(&format!("{:.1}", l["perf_eff"].as_f64().unwrap() / 1e9)), "{line}");
    }
}

#[test]
fn sampling_loss_tables() {
    let f = Fixture::new();
    let text = ok(f.run("sl", &["sampling-loss", "--density", "uniform", "--nmax", "5"]));
    let phis: Vec<&str> = text.lines().skip(2).map(|l| l.split_whitespace().nth(1).unwrap()).collect();
    assert_eq!(phis.len(), 5);
    assert!(phis.iter().all(|p| *p == phis[0]));
    let one = ok(f.run("sl", &["sampling-loss", "--density", "gaussian", "--nmax", "1"]));
    assert_eq!(one.lines().count(), 3);
    let csv = std::fs::read_to_string(f.out("sl").join("sampling_loss.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 2);
    let g = ok(f.run("sl", &["sampling-loss", "--density", "gaussian", "--nmax", "4"]));
    let l4: f64 = g.lines().last().unwrap().split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!(l4 != 0.0 && l4.abs() < 7.8e-3, "{l4}");
    assert_eq!(f.run("sl", &["sampling-loss", "--density", "cauchy"]).status.code(), Some(2));
}
