use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use warn::config::load_config;
use warn::dataset::{TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS};
use warn::idx::{write_idx, IdxArray};
use warn_core::attention::GateMode;
use warn_core::init::Rng64;

/// Random-blob stand-ins for MNIST digits, enough for the generator.
fn write_digits(dir: &Path, n: usize, images: &str, labels: &str, seed: u64) {
    let mut rng = Rng64::new(seed);
    let mut px = vec![0u8; n * 28 * 28];
    for (i, img) in px.chunks_mut(28 * 28).enumerate() {
        let (cy, cx) = (8 + (i % 3) * 4, 8 + (i % 5) * 3);
        for y in cy..cy + 8 {
            for x in cx..cx + 6 {
                img[y * 28 + x] = 128 + (rng.below(128) as u8);
            }
        }
    }
    write_idx(&dir.join(images), &IdxArray { dims: vec![n, 28, 28], data: px }).unwrap();
    let lb = (0..n).map(|i| (i % 10) as u8).collect();
    write_idx(&dir.join(labels), &IdxArray { dims: vec![n], data: lb }).unwrap();
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        let mnist = root.join("mnist");
        std::fs::create_dir_all(&mnist).unwrap();
        write_digits(&mnist, 40, TRAIN_IMAGES, TRAIN_LABELS, 1);
        write_digits(&mnist, 20, TEST_IMAGES, TEST_LABELS, 2);
        let config = root.join("run.toml");
        let text = format!(
            r#"[data]
mnist_dir = "{mnist}"
cache_dir = "{cache}"
train = 24
val = 8
test = 10
distractors = 2

[model]
channels = [2, 2, 2, 2, 2]
fc_hidden = 4

[attention]
enabled = true
depth = 2
width = 2

[train]
epochs = 2
batch = 8

[output]
dir = "{out}"
"#,
            mnist = mnist.display(),
            cache = root.join("cache").display(),
            out = root.join("run").display(),
        );
        std::fs::write(&config, text).unwrap();
        Fixture { _tmp: tmp, root, config }
    }

    fn warn(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_warn")).args(args).current_dir(&self.root).output().unwrap()
    }

    fn with_config(&self, cmd: &str, extra: &[&str]) -> Output {
        let mut args = vec![cmd, "--config", self.config.to_str().unwrap()];
        args.extend_from_slice(extra);
        self.warn(&args)
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), stderr(o));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn train_applies_overrides_and_writes_snapshot() {
    let f = Fixture::new();
    ok(&f.with_config("train", &["--set", "train.epochs=1"]));
    let snap = f.path("run/config.toml");
    let cfg = load_config(Some(&snap), &[]).unwrap();
    assert_eq!(cfg.train.epochs, 1);
    for file in ["metrics.csv", "timing.csv", "best.ckpt"] {
        assert!(f.path("run").join(file).is_file(), "{}", file);
    }
    let metrics = std::fs::read_to_string(f.path("run/metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
}

#[test]
fn bad_config_exits_2_naming_the_key() {
    let f = Fixture::new();
    let o = f.with_config("train", &["--set", "train.lr=-1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.lr"), "{}", stderr(&o));

    let o = f.with_config("train", &["--set", "train.epoch=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("train.epoch"), "{}", stderr(&o));

    let o = f.warn(&["train", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_failures_exit_1() {
    let f = Fixture::new();
    let o = f.with_config("train", &["--set", "data.mnist_dir=\"missing\""]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("missing"), "{}", stderr(&o));

    let o = f.with_config("eval", &["--checkpoint", "nope.ckpt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope.ckpt"), "{}", stderr(&o));
}

#[test]
fn eval_matches_in_process_accuracy() {
    let f = Fixture::new();
    ok(&f.with_config("train", &[]));
    let ck = f.path("run/best.ckpt");
    let out = ok(&f.with_config("eval", &["--checkpoint", ck.to_str().unwrap(), "--gates", "net-only"]));
    let cfg = load_config(Some(&f.config), &[]).unwrap();
    let t = warn::cli::eval(&cfg, &ck, false, GateMode::NetOnly).unwrap();
    let line = out.lines().find(|l| l.starts_with("accuracy")).unwrap();
    assert!(line.starts_with(&format!("accuracy {:.6} ", t.accuracy())), "{} vs {}", line, t.accuracy());
    assert!(line.ends_with(&format!("samples {}", t.count)));
}

#[test]
fn ablation_grid_sizes() {
    let f = Fixture::new();
    let o = f.with_config("ablate", &["--set", "ablation.depth=[]"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ablation"));

    let set = [
        "--set", "train.epochs=1",
        "--set", "ablation.depth=[1, 2]",
        "--set", "ablation.width=[1]",
        "--set", "ablation.gates=[true, false]",
        "--set", "ablation.mask=[\"softmax\"]",
        "--set", "ablation.reg=[true]",
    ];
    ok(&f.with_config("ablate", &set));
    let mut r = csv::Reader::from_path(f.path("run/ablation.csv")).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), warn::run::ABLATION_HEADER);
    assert_eq!(r.records().count(), 4);
    assert!(f.path("run/ad2-aw1-nogates-softmax-reg/best.ckpt").is_file());
}

#[test]
fn export_masks_writes_every_head() {
    let f = Fixture::new();
    ok(&f.with_config("train", &["--set", "train.epochs=1"]));
    let images = f.path("one.idx");
    let px = (0..2 * 40 * 40).map(|i| (i % 251) as u8).collect();
    write_idx(&images, &IdxArray { dims: vec![2, 40, 40], data: px }).unwrap();
    let ck = f.path("run/best.ckpt");
    let args = |ck: &str| {
        vec!["export-masks", "--checkpoint", ck, "--images", images.to_str().unwrap(), "--out", "masks", "--limit", "1"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>()
    };
    let a = args(ck.to_str().unwrap());
    ok(&f.warn(&a.iter().map(String::as_str).collect::<Vec<_>>()));
    let mut names: Vec<String> = std::fs::read_dir(f.path("masks"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 8);
    assert!(names.contains(&"img0_module1_head1_overlay.pgm".to_string()));
    let pgm = std::fs::read(f.path("masks/img0_module0_head0_overlay.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n40 40\n255\n"));
    assert_eq!(pgm.len(), b"P5\n40 40\n255\n".len() + 1600);

    let a = args("absent.ckpt");
    let o = f.warn(&a.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_at_training_clutter_equals_eval() {
    let f = Fixture::new();
    ok(&f.with_config("train", &["--set", "train.epochs=1"]));
    let ck = f.path("run/best.ckpt");
    let ck = ck.to_str().unwrap();
    let out = ok(&f.with_config("eval", &["--checkpoint", ck]));
    let acc = out.lines().find(|l| l.starts_with("accuracy")).unwrap().split(' ').nth(1).unwrap().to_string();
    ok(&f.with_config("sweep", &["--checkpoint", ck, "--set", "sweep.distractors=[0, 2]"]));
    let mut r = csv::Reader::from_path(f.path("run/sweep.csv")).unwrap();
    let rows: Vec<(String, String)> = r.records().map(|r| {
        let r = r.unwrap();
        (r[0].to_string(), r[1].to_string())
    }).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1], ("2".to_string(), acc));
}

#[test]
fn grad_check_passes() {
    let f = Fixture::new();
    let out = ok(&f.warn(&["grad-check", "--seed", "3"]));
    assert!(out.contains("max relative error"), "{}", out);
}
