//! High-level commands shared by the CLI and the tests: dataset assembly,
//! a full training run with its files, the ablation grid, the distractor
//! sweep and attention-mask export.

use std::path::{Path, PathBuf};
use std::time::Instant;

use warn_core::attention::GateMode;
use warn_core::batch::ImageSet;
use warn_core::clutter::{ClutterSource, DatasetSpec, Split};
use warn_core::models::{Ctx, ForwardOutput, Model};
use warn_core::train::{evaluate, fit, EpochMetrics, Tally};
use warn_core::{Graph, ParamStore};

use crate::checkpoint::{self, Manifest};
use crate::cifar::load_cifar10;
use crate::config::{AblationSection, DataKind, MaskKind, RunConfig};
use crate::dataset::{load_mnist, load_or_generate};
use crate::error::{Result, WarnError};
use crate::metrics::MetricsWriter;
use crate::pgm;

pub const BEST_CHECKPOINT: &str = "best.ckpt";

pub struct Data {
    pub train: ImageSet<f32>,
    pub val: ImageSet<f32>,
    pub test: ImageSet<f32>,
    /// Digit source, kept for regenerating test sets with other `D`.
    pub source: Option<ClutterSource>,
}

pub fn load_data(cfg: &RunConfig) -> Result<Data> {
    match cfg.data.kind {
        DataKind::Clutter => {
            let source = load_mnist(&cfg.data.mnist_dir)?;
            let spec = cfg.data.spec();
            let cache = cfg.data.cache_dir.as_deref();
            let split = |s| load_or_generate(&source, &spec, s, cache).map(|d| d.image_set());
            Ok(Data {
                train: split(Split::Train)?,
                val: split(Split::Val)?,
                test: split(Split::Test)?,
                source: Some(source),
            })
        }
        DataKind::Cifar10 => {
            let c = load_cifar10(&cfg.data.cifar_dir)?;
            let take = |set: &ImageSet<f32>, from: usize, n: usize, key: &str| {
                if from + n > set.len() {
                    return Err(WarnError::config(key, format!("only {} images available", set.len().saturating_sub(from))));
                }
                Ok(set.subset(&(from..from + n).collect::<Vec<_>>()))
            };
            // validation images are held out from the end of the training batches
            let val_from = c.train.len().saturating_sub(cfg.data.val);
            Ok(Data {
                train: take(&c.train, 0, cfg.data.train.min(val_from), "data.train")?,
                val: take(&c.train, val_from, cfg.data.val, "data.val")?,
                test: take(&c.test, 0, cfg.data.test, "data.test")?,
                source: None,
            })
        }
    }
}

pub struct RunOutcome {
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub test: Tally,
    pub model: Model,
    /// Parameters at the best validation epoch.
    pub store: ParamStore<f32>,
}

/// Trains with `cfg`, evaluates the best-validation parameters on the test
/// split, and when `out` is given writes `config.toml`, `metrics.csv`,
/// `timing.csv` and `best.ckpt` there. A diverging run stops with an error;
/// the checkpoint of its best epoch so far stays on disk.
pub fn train_run(cfg: &RunConfig, data: &Data, out: Option<&Path>) -> Result<RunOutcome> {
    cfg.validate()?;
    let arch = cfg.architecture();
    let (model, mut store) = Model::build::<f32>(&arch.model_config(), cfg.train.seed)?;
    let modules = model.settings().map(|s| s.depth);
    let mut writer = match out {
        Some(dir) => {
            cfg.write_snapshot(dir)?;
            Some(MetricsWriter::create(dir, modules)?)
        }
        None => None,
    };
    let mut clock = Instant::now();
    let mut last_epoch = None;
    let mut io_error = None;
    let result = fit(&model, &mut store, &data.train, &data.val, &cfg.train_config(), |m, s, improved| {
        last_epoch = Some(m.epoch);
        let elapsed = clock.elapsed();
        let mut step = || -> Result<()> {
            if let Some(w) = writer.as_mut() {
                w.append(m, elapsed)?;
            }
            if let (Some(dir), true) = (out, improved) {
                let manifest = Manifest {
                    epoch: m.epoch,
                    val_acc: m.val_acc,
                    arch: arch.clone(),
                };
                checkpoint::save(&dir.join(BEST_CHECKPOINT), &manifest, s)?;
            }
            Ok(())
        };
        clock = Instant::now();
        step().map_err(|e| {
            let msg = e.to_string();
            io_error = Some(e);
            warn_core::Error::Config(msg)
        })
    });
    if let Some(e) = io_error {
        return Err(e);
    }
    let fitted = result.map_err(|e| match e {
        warn_core::Error::NonFinite { .. } => {
            let epoch = last_epoch.map_or(0, |e| e + 1);
            let hint = out.map_or(String::new(), |d| format!("; last good checkpoint: {}", d.join(BEST_CHECKPOINT).display()));
            WarnError::Core(warn_core::Error::Contract {
                op: "train",
                detail: format!("loss diverged during epoch {}{}", epoch, hint),
            })
        }
        other => WarnError::Core(other),
    })?;
    let test = evaluate(&model, &fitted.best, &data.test, cfg.train.batch, GateMode::Learned)?;
    Ok(RunOutcome {
        history: fitted.history,
        best_epoch: fitted.best_epoch,
        best_val_acc: fitted.best_val_acc,
        test,
        model,
        store: fitted.best,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub depth: usize,
    pub width: usize,
    pub gates: bool,
    pub mask: MaskKind,
    pub reg: bool,
    pub val_acc: f64,
    pub test_acc: f64,
}

/// All configurations of the grid, in row order.
pub fn ablation_cells(grid: &AblationSection) -> Vec<(usize, usize, bool, MaskKind, bool)> {
    let mut cells = Vec::with_capacity(grid.cells());
    for &d in &grid.depth {
        for &w in &grid.width {
            for &g in &grid.gates {
                for &m in &grid.mask {
                    for &r in &grid.reg {
                        cells.push((d, w, g, m, r));
                    }
                }
            }
        }
    }
    cells
}

pub const ABLATION_HEADER: [&str; 7] = ["depth", "width", "gates", "mask", "reg", "val_acc", "test_acc"];

/// One seeded run per grid cell; `reg = false` sets gamma to zero and
/// `reg = true` uses the configured gamma. Results go to `ablation.csv`
/// in `out` and each run's files to a subdirectory named after its cell.
pub fn ablation_grid(cfg: &RunConfig, data: &Data, out: Option<&Path>) -> Result<Vec<AblationRow>> {
    if cfg.ablation.cells() == 0 {
        return Err(WarnError::config("ablation", "grid is empty"));
    }
    let mut csv = match out {
        Some(dir) => {
            cfg.write_snapshot(dir)?;
            let path = dir.join("ablation.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(ABLATION_HEADER)?;
            Some(w)
        }
        None => None,
    };
    let mut rows = Vec::new();
    for (depth, width, gates, mask, reg) in ablation_cells(&cfg.ablation) {
        let mut c = cfg.clone();
        c.attention.enabled = true;
        c.attention.depth = depth;
        c.attention.width = width;
        c.attention.gates = gates;
        c.attention.mask = mask;
        if !reg {
            c.attention.gamma = 0.0;
        }
        let name = format!(
            "ad{}-aw{}-{}-{}-{}",
            depth,
            width,
            if gates { "gates" } else { "nogates" },
            match mask {
                MaskKind::Softmax => "softmax",
                MaskKind::Sigmoid => "sigmoid",
            },
            if reg { "reg" } else { "noreg" }
        );
        let sub = out.map(|d| d.join(&name));
        let r = train_run(&c, data, sub.as_deref())?;
        let row = AblationRow {
            depth,
            width,
            gates,
            mask,
            reg,
            val_acc: r.best_val_acc,
            test_acc: r.test.accuracy(),
        };
        if let Some(w) = csv.as_mut() {
            w.write_record([
                depth.to_string(),
                width.to_string(),
                gates.to_string(),
                name.split('-').nth(3).unwrap().to_string(),
                reg.to_string(),
                format!("{:.6}", row.val_acc),
                format!("{:.6}", row.test_acc),
            ])?;
            w.flush().map_err(|e| WarnError::io("ablation.csv", e))?;
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Test accuracy for each distractor count, on test sets regenerated with
/// the same seeds so that digit placement is shared across counts.
pub fn robustness_sweep(
    model: &Model,
    store: &ParamStore<f32>,
    source: &ClutterSource,
    spec: &DatasetSpec,
    distractors: &[usize],
    batch: usize,
    cache: Option<&Path>,
) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::with_capacity(distractors.len());
    for &d in distractors {
        let s = DatasetSpec {
            distractors: d,
            ..spec.clone()
        };
        let test = load_or_generate(source, &s, Split::Test, cache)?.image_set::<f32>();
        out.push((d, evaluate(model, store, &test, batch, GateMode::Learned)?.accuracy()));
    }
    Ok(out)
}

pub fn write_sweep_csv(path: &Path, rows: &[(usize, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["distractors", "test_acc"])?;
    for (d, a) in rows {
        w.write_record([d.to_string(), format!("{:.6}", a)])?;
    }
    w.flush().map_err(|e| WarnError::io(path, e))
}

/// Eval-mode forward pass over a whole batch of images.
pub fn infer(model: &Model, store: &ParamStore<f32>, images: &warn_core::Tensor<f32>, mode: GateMode) -> Result<(Graph<f32>, ForwardOutput)> {
    let mut g = Graph::new();
    let bound = store.bind_frozen(&mut g);
    let mut buffers = store.buffers().to_vec();
    let x = g.constant(images.clone());
    let out = model.forward(
        &mut Ctx {
            graph: &mut g,
            bound: &bound,
            buffers: &mut buffers,
            train: false,
        },
        x,
        mode,
    )?;
    Ok((g, out))
}

/// Writes, for every image, module and head, the mask as
/// `img{n}_module{i}_head{k}_mask.pgm` and its 50% blend onto the input as
/// `img{n}_module{i}_head{k}_overlay.pgm`. Module 0 is attached to the
/// deepest tap. Masks are min-max scaled and upsampled to the input size.
pub fn export_masks(model: &Model, store: &ParamStore<f32>, images: &ImageSet<f32>, outdir: &Path) -> Result<Vec<PathBuf>> {
    if model.settings().is_none() {
        return Err(WarnError::config("attention.enabled", "checkpoint has no attention modules"));
    }
    let (c, h, w) = images.image_shape();
    let mut written = Vec::new();
    for n in 0..images.len() {
        let one = images.subset(&[n]);
        let (g, out) = infer(model, store, &one.images, GateMode::Learned)?;
        let pix = one.image(0);
        let mean: Vec<f32> = (0..h * w).map(|p| (0..c).map(|ch| pix[ch * h * w + p]).sum::<f32>() / c as f32).collect();
        let input = pgm::to_gray(&mean);
        for (i, m) in out.modules.iter().enumerate() {
            let masks = g.value(m.masks);
            let s = masks.shape();
            let (k, mh, mw) = (s[1], s[2], s[3]);
            for head in 0..k {
                let vals = &masks.data()[head * mh * mw..(head + 1) * mh * mw];
                let gray = pgm::to_gray(vals);
                let stem = format!("img{}_module{}_head{}", n, i, head);
                let mask_path = outdir.join(format!("{}_mask.pgm", stem));
                pgm::write_p5(&mask_path, mw, mh, &gray)?;
                let up = pgm::resize_nearest(&gray, mh, mw, h, w);
                let overlay_path = outdir.join(format!("{}_overlay.pgm", stem));
                pgm::write_p5(&overlay_path, w, h, &pgm::blend_half(&input, &up))?;
                written.push(mask_path);
                written.push(overlay_path);
            }
        }
    }
    Ok(written)
}
