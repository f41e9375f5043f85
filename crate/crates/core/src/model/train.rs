//! Training loop: per-step cloud pick, fresh random mask, forward/backward,
//! AdamW update with cosine learning-rate decay.

use std::f64::consts::PI;

use rand::Rng;

use super::{init_params, loss_and_grads, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::patch::{random_mask, PatchSet};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            lr: 1e-3,
            lr_min: 1e-5,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// Cosine decay from `lr` to `lr_min` over the configured step count.
    pub fn lr_at(&self, step: usize) -> f64 {
        if self.steps <= 1 {
            return self.lr;
        }
        let t = step as f64 / (self.steps - 1) as f64;
        self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + (PI * t).cos())
    }
}

/// Adam moment buffers, shaped like the parameters.
#[derive(Debug, Clone)]
pub struct Adam {
    pub m: ModelParams,
    pub v: ModelParams,
}

impl Adam {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            m: ModelParams::zeros(config),
            v: ModelParams::zeros(config),
        }
    }

    /// One decoupled-weight-decay Adam step. Decay applies to weight
    /// matrices only (biases, norm scales, and the mask token are exempt).
    pub fn step(
        &mut self,
        params: &mut ModelParams,
        grads: &ModelParams,
        cfg: &TrainConfig,
        lr: f64,
        step: usize,
    ) {
        let t = (step + 1) as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        let mut m_list = self.m.tensors_mut();
        let mut v_list = self.v.tensors_mut();
        let g_list = grads.tensors();
        for (slot, (name, p)) in params.tensors_mut().into_iter().enumerate() {
            let g = g_list[slot].1;
            let m = &mut m_list[slot].1;
            let v = &mut v_list[slot].1;
            debug_assert_eq!(name, g_list[slot].0);
            let decay = if name.ends_with(".w") { cfg.weight_decay } else { 0.0 };
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
                v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
                let mhat = m.data[i] / bc1;
                let vhat = v.data[i] / bc2;
                p.data[i] -= lr * (mhat / (vhat.sqrt() + cfg.eps) + decay * p.data[i]);
            }
        }
    }
}

/// Training state: parameters, optimizer moments, step count, loss history.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams,
    pub optimizer: Adam,
    pub step: usize,
    pub seed: u64,
    pub loss_history: Vec<f64>,
}

/// Trains on pre-built patch sets (one per training cloud). Each step picks
/// a cloud uniformly, draws a fresh mask, and applies one optimizer update.
/// Fully deterministic in the seed. `on_step` runs after every update (for
/// periodic checkpoints); aborting with an error stops training.
pub fn train(
    patch_sets: &[PatchSet],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    seed_value: u64,
    mut on_step: impl FnMut(&TrainState) -> Result<()>,
) -> Result<TrainState> {
    if patch_sets.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let params = init_params(model_config, seed_value)?;
    let mut state = TrainState {
        optimizer: Adam::new(model_config),
        params,
        step: 0,
        seed: seed_value,
        loss_history: Vec::with_capacity(train_config.steps),
    };
    for step in 0..train_config.steps {
        let mut pick_rng = seed::rng(seed_value, "train-pick", &[step as u64]);
        let cloud_idx = pick_rng.gen_range(0..patch_sets.len());
        let patches = &patch_sets[cloud_idx];
        let mask = random_mask(
            patches.len(),
            model_config.mask_ratio,
            seed::derive(seed_value, "train-mask", &[step as u64]),
        )?;
        let (loss, grads) = loss_and_grads(&state.params, patches, &mask)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        let lr = train_config.lr_at(step);
        state
            .optimizer
            .step(&mut state.params, &grads, train_config, lr, step);
        state.step = step + 1;
        state.loss_history.push(loss);
        on_step(&state)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::fps;
    use crate::patch::make_patches;
    use crate::synth::{icosphere, sample_surface};

    fn tiny_patches() -> PatchSet {
        let mesh = icosphere(1.0, 2);
        let cloud = sample_surface(&mesh, 600, &mut seed::rng(2, "train-test", &[])).unwrap();
        let centers = fps(&cloud, 24).unwrap();
        make_patches(&cloud, &centers, 8).unwrap()
    }

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            d: 16,
            enc_layers: 1,
            dec_layers: 1,
            heads: 4,
            mlp_ratio: 2,
            k: 8,
            n_centers: 24,
            mask_ratio: 0.4,
            embed_hidden: 32,
        }
    }

    #[test]
    fn zero_steps_returns_initial_params() {
        let patches = vec![tiny_patches()];
        let cfg = tiny_model();
        let tc = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        let state = train(&patches, &cfg, &tc, 9, |_| Ok(())).unwrap();
        assert_eq!(state.params, init_params(&cfg, 9).unwrap());
        assert!(state.loss_history.is_empty());
    }

    #[test]
    fn loss_history_is_reproducible() {
        let patches = vec![tiny_patches()];
        let cfg = tiny_model();
        let tc = TrainConfig {
            steps: 12,
            ..TrainConfig::default()
        };
        let a = train(&patches, &cfg, &tc, 4, |_| Ok(())).unwrap();
        let b = train(&patches, &cfg, &tc, 4, |_| Ok(())).unwrap();
        assert_eq!(a.loss_history, b.loss_history);
        assert_eq!(a.params, b.params);
        assert_eq!(a.loss_history.len(), 12);
    }

    #[test]
    fn short_run_reduces_loss() {
        let patches = vec![tiny_patches()];
        let cfg = tiny_model();
        let tc = TrainConfig {
            steps: 60,
            ..TrainConfig::default()
        };
        let state = train(&patches, &cfg, &tc, 4, |_| Ok(())).unwrap();
        let first: f64 = state.loss_history[..10].iter().sum::<f64>() / 10.0;
        let last: f64 = state.loss_history[50..].iter().sum::<f64>() / 10.0;
        assert!(last < first, "loss did not drop: {first} -> {last}");
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let cfg = tiny_model();
        assert!(matches!(
            train(&[], &cfg, &TrainConfig::default(), 0, |_| Ok(())),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn cosine_schedule_hits_both_ends() {
        let tc = TrainConfig {
            steps: 100,
            ..TrainConfig::default()
        };
        assert!((tc.lr_at(0) - 1e-3).abs() < 1e-12);
        assert!((tc.lr_at(99) - 1e-5).abs() < 1e-12);
        assert!(tc.lr_at(50) < 1e-3 && tc.lr_at(50) > 1e-5);
    }
}
