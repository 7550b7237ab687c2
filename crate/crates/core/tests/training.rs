use warn_core::attention::GateMode;
use warn_core::batch::{Augment, ImageSet};
use warn_core::init::Rng64;
use warn_core::models::{AttentionSettings, BackboneConfig, BaseCnnConfig, Ctx, Model, ModelConfig};
use warn_core::train::{evaluate, fit, EpochMetrics, TrainConfig};
use warn_core::{Graph, ParamStore, Tensor};

const SIDE: usize = 16;

/// Two classes: a bright 4x4 square in the top-left or bottom-right
/// quadrant, at a random offset, over uniform noise.
fn toy(n: usize, seed: u64) -> ImageSet<f32> {
    let mut rng = Rng64::new(seed);
    let mut px = vec![0f32; n * SIDE * SIDE];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let img = &mut px[i * SIDE * SIDE..(i + 1) * SIDE * SIDE];
        img.iter_mut().for_each(|v| *v = rng.uniform(0.0, 0.3) as f32);
        let base = if label == 0 { 0 } else { 8 };
        let (oy, ox) = (base + rng.below(5), base + rng.below(5));
        for y in oy..oy + 4 {
            for x in ox..ox + 4 {
                img[y * SIDE + x] = 1.0;
            }
        }
        labels.push(label);
    }
    ImageSet::new(Tensor::from_vec(&[n, 1, SIDE, SIDE], px).unwrap(), labels).unwrap()
}

fn config(attention: Option<AttentionSettings>) -> ModelConfig {
    let mut base = BaseCnnConfig::new(2, [4, 4, 4, 4, 4]);
    base.input = (SIDE, SIDE);
    base.fc_hidden = 8;
    ModelConfig {
        backbone: BackboneConfig::Cnn(base),
        attention,
    }
}

fn attention(width: usize, gamma: f64) -> Option<AttentionSettings> {
    Some(AttentionSettings {
        depth: 2,
        width,
        gamma,
        ..AttentionSettings::default()
    })
}

fn train_cfg(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        lr0: 0.1,
        milestones: vec![epochs * 4 / 5],
        epochs,
        batch: 20,
        seed,
        augment: Augment::None,
        ..TrainConfig::default()
    }
}

fn train(cfg: &ModelConfig, tc: &TrainConfig, data: &ImageSet<f32>, val: &ImageSet<f32>) -> (Model, ParamStore<f32>, Vec<EpochMetrics>) {
    let (model, mut store) = Model::build::<f32>(cfg, tc.seed).unwrap();
    let r = fit(&model, &mut store, data, val, tc, |_, _, _| Ok(())).unwrap();
    (model, store, r.history)
}

#[test]
fn toy_problem_is_overfit() {
    let data = toy(200, 1);
    let val = toy(40, 2);
    let (_, _, history) = train(&config(attention(2, 1e-3)), &train_cfg(50, 3), &data, &val);
    let last = history.last().unwrap();
    assert!(last.train_acc >= 0.95, "train accuracy {}", last.train_acc);
    assert!(history.iter().all(|m| (0.0..=1.0).contains(&m.train_acc) && (0.0..=1.0).contains(&m.val_acc)));
    assert_eq!(history[39].lr, 0.1);
    assert!((history[40].lr - 0.01).abs() < 1e-15);
}

#[test]
fn same_seed_same_trace() {
    let data = toy(60, 4);
    let val = toy(20, 5);
    let cfg = config(attention(2, 1e-3));
    let (_, s1, h1) = train(&cfg, &train_cfg(4, 6), &data, &val);
    let (_, s2, h2) = train(&cfg, &train_cfg(4, 6), &data, &val);
    assert_eq!(h1, h2);
    assert_eq!(s1, s2);
    let (_, _, h3) = train(&cfg, &train_cfg(4, 7), &data, &val);
    assert_ne!(h1, h3);
}

#[test]
fn regularized_run_has_lower_head_overlap() {
    let data = toy(200, 8);
    let val = toy(40, 9);
    let tc = train_cfg(20, 10);
    let overlap = |gamma: f64| {
        let (model, store, _) = train(&config(attention(4, gamma)), &tc, &data, &val);
        evaluate(&model, &store, &data, 50, GateMode::Learned).unwrap().mean_reg()
    };
    let (free, reg) = (overlap(0.0), overlap(1e-3));
    assert!(reg < free, "regularized {} vs free {}", reg, free);
}

#[test]
fn net_only_gates_reproduce_base_accuracy() {
    let data = toy(100, 11);
    let (base, base_store) = Model::build::<f32>(&config(None), 12).unwrap();
    let (aug, aug_store) = Model::build::<f32>(&config(attention(3, 1e-3)), 12).unwrap();
    let a = evaluate(&base, &base_store, &data, 32, GateMode::Learned).unwrap();
    let b = evaluate(&aug, &aug_store, &data, 32, GateMode::NetOnly).unwrap();
    assert_eq!(a.correct, b.correct);
    assert_eq!(a.accuracy(), b.accuracy());
}

fn predictions(model: &Model, store: &ParamStore<f32>, set: &ImageSet<f32>) -> Vec<usize> {
    let mut g = Graph::new();
    let bound = store.bind_frozen(&mut g);
    let mut buffers = store.buffers().to_vec();
    let x = g.constant(set.images.clone());
    let out = model
        .forward(&mut Ctx { graph: &mut g, bound: &bound, buffers: &mut buffers, train: false }, x, GateMode::Learned)
        .unwrap();
    let t = g.value(out.output);
    t.data()
        .chunks(2)
        .map(|r| if r[1] > r[0] { 1 } else { 0 })
        .collect()
}

#[test]
fn accuracy_matches_brute_force_recount() {
    let data = toy(90, 13);
    let (model, store) = Model::build::<f32>(&config(attention(2, 1e-3)), 14).unwrap();
    let pred = predictions(&model, &store, &data);
    let recount = pred.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
    // batch size that does not divide the set
    let t = evaluate(&model, &store, &data, 16, GateMode::Learned).unwrap();
    assert_eq!(t.count, 90);
    assert_eq!(t.correct, recount);

    // relabel with the model's own predictions: a perfect predictor
    let perfect = ImageSet::new(data.images.clone(), pred).unwrap();
    let t = evaluate(&model, &store, &perfect, 16, GateMode::Learned).unwrap();
    assert_eq!(t.accuracy(), 1.0);
}

#[test]
fn evaluation_leaves_the_store_untouched() {
    let data = toy(30, 15);
    let (model, store) = Model::build::<f32>(&config(attention(2, 1e-3)), 16).unwrap();
    let before = store.clone();
    let a = evaluate(&model, &store, &data, 7, GateMode::Learned).unwrap();
    let b = evaluate(&model, &store, &data, 7, GateMode::Learned).unwrap();
    assert_eq!(store, before);
    assert_eq!(a, b);
}

#[test]
fn invalid_schedule_is_rejected() {
    let data = toy(10, 17);
    let (model, mut store) = Model::build::<f32>(&config(None), 0).unwrap();
    let mut tc = train_cfg(2, 0);
    tc.milestones = vec![5, 5];
    assert!(matches!(fit(&model, &mut store, &data, &data, &tc, |_, _, _| Ok(())), Err(warn_core::Error::Config(_))));
    tc.milestones = vec![];
    tc.lr0 = 0.0;
    assert!(fit(&model, &mut store, &data, &data, &tc, |_, _, _| Ok(())).is_err());
}
