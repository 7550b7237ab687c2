//! Bodies of the `warn` subcommands, callable in-process.

use std::path::{Path, PathBuf};

use warn_core::attention::GateMode;
use warn_core::batch::ImageSet;
use warn_core::clutter::Split;
use warn_core::gradcheck::{model_grad_check, GradCheckReport};
use warn_core::init::Rng64;
use warn_core::models::{AttentionSettings, BackboneConfig, BaseCnnConfig, Model, ModelConfig};
use warn_core::train::{evaluate, Tally};
use warn_core::{ParamStore, Tensor};

use crate::checkpoint;
use crate::config::{DataKind, RunConfig};
use crate::dataset::{cache_path, load_mnist, load_or_generate};
use crate::error::{Result, WarnError};
use crate::idx::read_idx;
use crate::run::{self, AblationRow, RunOutcome};

pub const GRAD_CHECK_TOL: f64 = 1e-4;

pub fn generate(cfg: &RunConfig) -> Result<Vec<(&'static str, PathBuf)>> {
    if cfg.data.kind != DataKind::Clutter {
        return Err(WarnError::config("data.kind", "only the cluttered dataset is generated"));
    }
    let Some(dir) = cfg.data.cache_dir.as_deref() else {
        return Err(WarnError::config("data.cache_dir", "required for generate"));
    };
    let source = load_mnist(&cfg.data.mnist_dir)?;
    let spec = cfg.data.spec();
    let mut out = Vec::new();
    for split in Split::ALL {
        load_or_generate(&source, &spec, split, Some(dir))?;
        out.push((split.name(), cache_path(dir, &spec, split)));
    }
    cfg.write_snapshot(dir)?;
    Ok(out)
}

pub fn train(cfg: &RunConfig) -> Result<RunOutcome> {
    let data = run::load_data(cfg)?;
    run::train_run(cfg, &data, Some(&cfg.output.dir))
}

/// Evaluates a checkpoint on the test split, or on the validation split
/// when `val` is set.
pub fn eval(cfg: &RunConfig, ck: &Path, val: bool, mode: GateMode) -> Result<Tally> {
    let (model, c) = checkpoint::load(ck)?;
    let data = run::load_data(cfg)?;
    let set = if val { &data.val } else { &data.test };
    Ok(evaluate(&model, &c.store, set, cfg.train.batch, mode)?)
}

pub fn ablate(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    if cfg.ablation.cells() == 0 {
        return Err(WarnError::config("ablation", "grid is empty"));
    }
    let data = run::load_data(cfg)?;
    run::ablation_grid(cfg, &data, Some(&cfg.output.dir))
}

pub fn sweep(cfg: &RunConfig, ck: &Path) -> Result<Vec<(usize, f64)>> {
    if cfg.data.kind != DataKind::Clutter {
        return Err(WarnError::config("data.kind", "the distractor sweep needs the cluttered dataset"));
    }
    if cfg.sweep.distractors.is_empty() {
        return Err(WarnError::config("sweep.distractors", "list is empty"));
    }
    let (model, c) = checkpoint::load(ck)?;
    let source = load_mnist(&cfg.data.mnist_dir)?;
    let rows = run::robustness_sweep(
        &model,
        &c.store,
        &source,
        &cfg.data.spec(),
        &cfg.sweep.distractors,
        cfg.train.batch,
        cfg.data.cache_dir.as_deref(),
    )?;
    cfg.write_snapshot(&cfg.output.dir)?;
    run::write_sweep_csv(&cfg.output.dir.join("sweep.csv"), &rows)?;
    Ok(rows)
}

/// Reads u8 images from an IDX file, scales them to `[0,1]` and exports
/// their masks.
pub fn export_masks(model: &Model, store: &ParamStore<f32>, images: &Path, out: &Path, limit: Option<usize>) -> Result<Vec<PathBuf>> {
    let a = read_idx(images)?;
    let what = images.display().to_string();
    let (n, c, h, w) = match a.dims[..] {
        [n, h, w] => (n, 1, h, w),
        [n, c, h, w] => (n, c, h, w),
        _ => return Err(WarnError::format(what, 3, format!("expected rank 3 or 4, found {}", a.dims.len()))),
    };
    let n = limit.map_or(n, |l| l.min(n));
    let t = a.to_tensor();
    let data = t.data()[..n * c * h * w].to_vec();
    let set = ImageSet::new(Tensor::from_vec(&[n, c, h, w], data)?, vec![0; n])?;
    run::export_masks(model, store, &set, out)
}

/// Gradient check of loss plus weighted head regularizer through a
/// two-module, two-head network on two random 8x8 samples.
pub fn grad_check(seed: u64) -> Result<GradCheckReport> {
    let mut base = BaseCnnConfig::new(3, [2, 3, 3, 4, 4]);
    base.input = (8, 8);
    base.fc_hidden = 5;
    let config = ModelConfig {
        backbone: BackboneConfig::Cnn(base),
        attention: Some(AttentionSettings {
            depth: 2,
            width: 2,
            gamma: 0.5,
            ..AttentionSettings::default()
        }),
    };
    let (model, mut store) = Model::build::<f64>(&config, seed)?;
    // give the zero-initialized global gate a non-trivial operating point
    let mut rng = Rng64::from_parts(&[seed, 2]);
    for id in store.param_ids().collect::<Vec<_>>() {
        if store.params()[id.0].name.starts_with("att.global_gate") {
            for v in store.param_mut(id).data_mut() {
                *v = rng.uniform(-0.5, 0.5);
            }
        }
    }
    let x = Tensor::from_vec(&[2, 1, 8, 8], (0..128).map(|_| rng.uniform(-1.0, 1.0)).collect())?;
    Ok(model_grad_check(&model, &store, &x, &[0, 2], 1e-6)?)
}
