//! Conditional flow-matching training loop.
//!
//! Draw order per step `s` (substream `s` of the training seed), for each
//! batch element in order: class index, mixture sample (component uniform,
//! then `dim` normals), label-drop uniform, time uniform, `dim` noise
//! normals. Initialization uses substream `u64::MAX`.

use super::{cfm_batch_loss, Adam, Architecture, CfmExample, VelocityNet};
use crate::error::{Error, Result};
use crate::field::Label;
use crate::mixture::ConditionalMixture;
use crate::rng::RandomStream;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Probability of replacing the drawn label by `Label::Null`.
    pub p_drop: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 256,
            steps: 4000,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            p_drop: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::invalid("batch must be positive"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(Error::invalid("moment coefficients must lie in (0, 1)"));
        }
        if !(0.0..1.0).contains(&self.p_drop) {
            return Err(Error::invalid("p_drop must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: VelocityNet,
    /// Batch loss per step.
    pub losses: Vec<f64>,
}

/// Initializes a network from the training seed and trains it.
pub fn train(mix: &ConditionalMixture, arch: Architecture, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if arch.dim != mix.dim() || arch.n_classes != mix.n_classes() {
        return Err(Error::invalid(
            "architecture does not match the mixture dimension or class count",
        ));
    }
    let mut init_stream = RandomStream::new(cfg.seed).substream(u64::MAX);
    let net = VelocityNet::init(arch, &mut init_stream)?;
    train_from(net, mix, cfg)
}

/// Continues training an existing network.
pub fn train_from(
    mut net: VelocityNet,
    mix: &ConditionalMixture,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let root = RandomStream::new(cfg.seed);
    let mut opt = Adam::new(net.params().len(), cfg.lr, cfg.beta1, cfg.beta2);
    let mut losses = Vec::with_capacity(cfg.steps);
    let n_classes = mix.n_classes();
    let dim = mix.dim();
    for step in 0..cfg.steps {
        let mut s = root.substream(step as u64);
        let mut batch = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let class = Label::Class(s.index(n_classes));
            let x0 = mix.sample(class, &mut s)?;
            let label = if s.uniform() < cfg.p_drop {
                Label::Null
            } else {
                class
            };
            let t = s.uniform();
            let eps = s.normal_vec(dim);
            batch.push(CfmExample { x0, eps, t, label });
        }
        let (loss, grad) = cfm_batch_loss(&net, &batch)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        opt.step(net.params_mut(), &grad);
        if !net.params().iter().all(|p| p.is_finite()) {
            return Err(Error::Diverged { step, loss });
        }
        losses.push(loss);
    }
    Ok(TrainOutcome { net, losses })
}
