//! Times training steps of the baseline and an augmented model on random
//! 40x40 inputs. Usage: `throughput [batch] [c1 c2 c3 c4 c5]`.

use std::time::Instant;

use warn_core::attention::MaskFn;
use warn_core::batch::Batch;
use warn_core::init::Rng64;
use warn_core::models::{AttentionSettings, BackboneConfig, BaseCnnConfig, Model, ModelConfig};
use warn_core::optim::Sgd;
use warn_core::train::{train_step, Tally};
use warn_core::Tensor;

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let batch = args.first().copied().unwrap_or(128);
    let channels = if args.len() == 6 {
        [args[1], args[2], args[3], args[4], args[5]]
    } else {
        warn_core::models::base_cnn::DEFAULT_CHANNELS
    };
    let mut rng = Rng64::new(1);
    let images = Tensor::from_vec(&[batch, 1, 40, 40], (0..batch * 1600).map(|_| rng.uniform(0.0, 1.0) as f32).collect()).unwrap();
    let labels = (0..batch).map(|i| i % 10).collect();
    let b = Batch {
        images,
        labels,
        indices: (0..batch).collect(),
    };
    for attention in [None, Some(AttentionSettings { mask_fn: MaskFn::Softmax, ..Default::default() })] {
        let config = ModelConfig {
            backbone: BackboneConfig::Cnn(BaseCnnConfig::new(10, channels)),
            attention,
        };
        let (model, mut store) = Model::build::<f32>(&config, 0).unwrap();
        let mut opt = Sgd::new(&store, 0.0, 0.0);
        let mut tally = Tally::default();
        train_step(&model, &mut store, &mut opt, &b, 0.01, &mut tally).unwrap();
        let steps = 5;
        let t = Instant::now();
        for _ in 0..steps {
            train_step(&model, &mut store, &mut opt, &b, 0.01, &mut tally).unwrap();
        }
        let per = t.elapsed().as_secs_f64() / steps as f64;
        println!(
            "{:<10} channels {:?} batch {}: {:.3} s/step, {:.0} images/s",
            if config.attention.is_some() { "AD4AW4" } else { "baseline" },
            channels,
            batch,
            per,
            batch as f64 / per
        );
    }
}
