//! Finite-difference check of the loss gradient through the whole pair model.

use c2b_nn::gradcheck::{relative_error, CheckResult};
use c2b_nn::{Tape, Tensor};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, ModelVariant};
use crate::error::Result;
use crate::model::{Model, ModelInputs};

/// Tolerance on the end-to-end relative error.
pub const END_TO_END_TOLERANCE: f64 = 1e-3;
const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-10;
const LAMBDA: f64 = 0.1;

/// A small but complete pair model: default encoder, narrow U-Net.
pub fn check_config() -> ModelConfig {
    ModelConfig {
        unet_widths: [4, 6, 8],
        bottleneck: 8,
        ..ModelConfig::default().with_variant(ModelVariant::Pair)
    }
}

fn loss_value(model: &Model<f64>, inputs: &ModelInputs<f64>, target: &Tensor<f64>) -> Result<f64> {
    let mut tape = Tape::new();
    let out = model.forward(&mut tape, inputs)?;
    let tgt = tape.constant(target.clone());
    let l1 = tape.l1_loss(out.prediction, tgt)?;
    let tv = tape.tv_l1(out.prediction)?;
    let tv = tape.scale(tv, LAMBDA);
    let loss = tape.add(l1, tv)?;
    Ok(tape.value(loss).item())
}

/// Checks `∂loss/∂w` for `samples` randomly chosen encoder weights of a
/// seeded pair model, with loss `l1 + 0.1·tv`.
pub fn end_to_end_check(seed: u64, samples: usize) -> Result<CheckResult> {
    let config = check_config();
    let mut model = Model::<f64>::new(config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let (h, w) = (8, 8);
    let shape = [1, config.t, h, w];
    let coded = Tensor::from_fn(&shape, |_| rng.random_range(0.0..1.0));
    let blurred = Tensor::from_fn(&shape, |_| rng.random_range(0.0..1.0));
    let target = Tensor::from_fn(&[1, config.t, h * config.n, w * config.n], |_| rng.random_range(0.0..1.0));
    let inputs = ModelInputs {
        coded: Some(coded),
        blurred: Some(blurred),
    };

    {
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &inputs)?;
        let tgt = tape.constant(target.clone());
        let l1 = tape.l1_loss(out.prediction, tgt)?;
        let tv = tape.tv_l1(out.prediction)?;
        let tv = tape.scale(tv, LAMBDA);
        let loss = tape.add(l1, tv)?;
        model.params_mut().zero_grad();
        tape.backward_into(loss, model.params_mut())?;
    }

    let weights: Vec<_> = model.encoder_layers().iter().map(|l| l.weight).collect();
    let mut worst = 0.0f64;
    let mut count = 0;
    for (layer, &id) in weights.iter().enumerate() {
        let n = model.params().get(id).value.numel();
        let per_layer = samples / weights.len() + usize::from(layer < samples % weights.len());
        for idx in sample(&mut rng, n, per_layer.min(n)) {
            let analytic = model.params().get(id).grad.data()[idx];
            let base = model.params().get(id).value.data()[idx];
            let mut probe = |v: f64| -> Result<f64> {
                model.params_mut().get_mut(id).value.data_mut()[idx] = v;
                loss_value(&model, &inputs, &target)
            };
            let plus = probe(base + STEP)?;
            let minus = probe(base - STEP)?;
            probe(base)?;
            let numeric = (plus - minus) / (2.0 * STEP);
            let err = relative_error(analytic, numeric, FLOOR);
            worst = if err.is_nan() { f64::NAN } else { worst.max(err) };
            count += 1;
        }
    }
    Ok(CheckResult {
        name: "pair_model_end_to_end".into(),
        samples: count,
        max_rel_error: worst,
        tolerance: END_TO_END_TOLERANCE,
    })
}
