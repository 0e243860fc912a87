//! The optimisation loop: `l1(X̂, X) + λ·tv(X̂)` minimised with Adam.

use c2b_core::{ExposureCode, TiledCode};
use c2b_model::Model;
use c2b_nn::{Adam, Scalar, Tape, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::data::ClipDataset;
use crate::error::{Result, TrainError};
use crate::example::{collate, make_example, TensorExample};

/// Loss terms of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    /// 1-based step number.
    pub step: u64,
    pub epoch: u64,
    /// `l1 + λ·tv`, as optimised.
    pub loss: f32,
    pub l1: f32,
    pub tv: f32,
}

/// Nodes of the training objective on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub loss: Var,
    pub l1: Var,
    pub tv: Var,
}

/// Records `l1(pred, target) + λ·tv(pred)`.
pub fn loss_terms<F: Scalar>(tape: &mut Tape<F>, pred: Var, target: Var, lambda: f64) -> Result<LossVars> {
    let l1 = tape.l1_loss(pred, target)?;
    let tv = tape.tv_l1(pred)?;
    let weighted = tape.scale(tv, lambda);
    let loss = tape.add(l1, weighted)?;
    Ok(LossVars { loss, l1, tv })
}

/// Example order for one epoch: a Fisher-Yates shuffle driven by ChaCha8
/// seeded with the run seed, on stream `epoch`.
pub fn epoch_order(seed: u64, epoch: u64, len: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

/// Patches every clip, simulates observations and converts to tensors.
pub fn prepare_examples(config: &TrainConfig, code: &ExposureCode, dataset: &ClipDataset) -> Result<Vec<TensorExample>> {
    if dataset.is_empty() {
        return Err(TrainError::Data("training set is empty".into()));
    }
    if code.tile_size() != config.model.n || code.len() != config.model.t {
        return Err(TrainError::Config(format!(
            "code is {}x{}x{} but the model expects N = {}, T = {}",
            code.tile_size(),
            code.tile_size(),
            code.len(),
            config.model.n,
            config.model.t
        )));
    }
    let patches = dataset.clone().into_patches(config.patch)?;
    let tiled = TiledCode::new(code, config.patch, config.patch)?;
    patches
        .clips
        .iter()
        .map(|clip| TensorExample::from_example(&make_example(clip, &tiled, config.model.variant)?))
        .collect()
}

/// Model, optimizer and position of a run in progress.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model<f32>,
    pub adam: Adam<f32>,
    /// Optimizer steps already taken.
    pub step: u64,
}

impl TrainState {
    pub fn fresh(config: &TrainConfig) -> Result<Self> {
        let model = Model::new(config.model.clone(), config.seed)?;
        let adam = Adam::for_params(model.params(), config.lr);
        Ok(TrainState { model, adam, step: 0 })
    }
}

pub struct Trainer {
    config: TrainConfig,
    examples: Vec<TensorExample>,
    state: TrainState,
    history: Vec<LossRecord>,
    order: Option<(u64, Vec<usize>)>,
}

impl Trainer {
    pub fn new(config: TrainConfig, code: &ExposureCode, dataset: &ClipDataset) -> Result<Self> {
        config.validate()?;
        let state = TrainState::fresh(&config)?;
        Self::resume(config, code, dataset, state)
    }

    /// Continues from `state`; the remaining batches are exactly those an
    /// uninterrupted run would have seen.
    pub fn resume(config: TrainConfig, code: &ExposureCode, dataset: &ClipDataset, state: TrainState) -> Result<Self> {
        config.validate()?;
        if state.model.config() != &config.model {
            return Err(TrainError::Config("checkpoint model does not match the configuration".into()));
        }
        let examples = prepare_examples(&config, code, dataset)?;
        Ok(Trainer {
            config,
            examples,
            state,
            history: Vec::new(),
            order: None,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn num_examples(&self) -> usize {
        self.examples.len()
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.examples.len().div_ceil(self.config.batch) as u64
    }

    pub fn total_steps(&self) -> u64 {
        let full = self.config.epochs * self.steps_per_epoch();
        self.config.max_steps.map_or(full, |m| m.min(full))
    }

    pub fn steps_done(&self) -> u64 {
        self.state.step
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.total_steps()
    }

    pub fn model(&self) -> &Model<f32> {
        &self.state.model
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    /// Losses of the steps taken by this trainer.
    pub fn history(&self) -> &[LossRecord] {
        &self.history
    }

    pub fn into_state(self) -> (TrainState, Vec<LossRecord>) {
        (self.state, self.history)
    }

    /// Takes one optimizer step on the next batch.
    pub fn step(&mut self) -> Result<LossRecord> {
        let spe = self.steps_per_epoch();
        let epoch = self.state.step / spe;
        let slot = (self.state.step % spe) as usize;
        if self.order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            self.order = Some((epoch, epoch_order(self.config.seed, epoch, self.examples.len())));
        }
        let order = &self.order.as_ref().expect("just set").1;
        let start = slot * self.config.batch;
        let end = (start + self.config.batch).min(order.len());
        let batch: Vec<&TensorExample> = order[start..end].iter().map(|&i| &self.examples[i]).collect();
        let (inputs, target) = collate(&batch)?;

        let model = &mut self.state.model;
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &inputs)?;
        let target = tape.constant(target);
        let LossVars { loss, l1, tv } = loss_terms(&mut tape, out.prediction, target, self.config.lambda)?;

        let record = LossRecord {
            step: self.state.step + 1,
            epoch,
            loss: tape.value(loss).item(),
            l1: tape.value(l1).item(),
            tv: tape.value(tv).item(),
        };
        if !record.loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                step: record.step,
                l1: record.l1 as f64,
                tv: record.tv as f64,
            });
        }
        model.params_mut().zero_grad();
        tape.backward_into(loss, model.params_mut())?;
        self.state.adam.step(model.params_mut())?;
        self.state.step += 1;
        self.history.push(record);
        Ok(record)
    }

    /// Steps until the budget is used, reporting each record to `observe`.
    pub fn run_with(&mut self, mut observe: impl FnMut(&LossRecord)) -> Result<()> {
        while !self.is_done() {
            let r = self.step()?;
            observe(&r);
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_with(|_| {})
    }
}

/// Trains a fresh model to completion.
pub fn train(config: TrainConfig, code: &ExposureCode, dataset: &ClipDataset) -> Result<(Model<f32>, Vec<LossRecord>)> {
    let mut trainer = Trainer::new(config, code, dataset)?;
    trainer.run()?;
    let (state, history) = trainer.into_state();
    Ok((state.model, history))
}

/// The loss history as CSV with header `step,epoch,loss,l1,tv`.
pub fn format_loss_log(history: &[LossRecord]) -> String {
    let mut s = String::from("step,epoch,loss,l1,tv\n");
    for r in history {
        s += &format!("{},{},{:?},{:?},{:?}\n", r.step, r.epoch, r.loss, r.l1, r.tv);
    }
    s
}
