//! Learned focal-surface light transport: network, loss and training loop.

mod network;
pub mod tape;

pub use network::{
    generate_sv_kernels, model_forward, sam_forward, ModelConfig, ModelParams, SVKernelSet, SCALES,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{ensure_arg, ensure_shape, Result};
use crate::hologram::{is_binary, FocalSurface, PhaseHologram, ReconstructionTarget};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor3;
use network::{check_model_inputs, forward_graph, BoundParams};
use tape::Tape;

pub const DEFAULT_ALPHA0: f64 = 1.0;
pub const DEFAULT_ALPHA1: f64 = 0.5;

/// `α0·mean(M ⊙ (r − r')²) + α1·mean((1 − M) ⊙ (r − r')²)`, both means over
/// every element of `r`. The single-channel mask broadcasts over channels.
pub fn masked_l2_loss(r: &Tensor3, r_target: &Tensor3, mask: &Tensor3, alpha0: f64, alpha1: f64) -> Result<f64> {
    ensure_shape!(r.same_shape(r_target), "image {:?} vs target {:?}", r.shape(), r_target.shape());
    ensure_shape!(
        mask.shape() == (1, r.height(), r.width()),
        "mask {:?} vs image {:?}",
        mask.shape(),
        r.shape()
    );
    ensure_arg!(is_binary(mask), "mask values must be exactly 0 or 1");
    Ok(tape::masked_l2_value(r, r_target, mask, alpha0, alpha1))
}

/// Loss of `F(H, D)` against a target, with gradients for every parameter
/// block and for the hologram phase.
#[derive(Debug, Clone)]
pub struct LossGradients {
    pub loss: f64,
    pub params: Vec<Tensor3>,
    pub hologram: Tensor3,
}

pub fn loss_and_gradients(
    params: &ModelParams,
    hologram: &PhaseHologram,
    surface: &FocalSurface,
    target: &Tensor3,
    mask: &Tensor3,
    alpha0: f64,
    alpha1: f64,
) -> Result<LossGradients> {
    check_model_inputs(params, hologram, surface)?;
    ensure_arg!(is_binary(mask), "mask values must be exactly 0 or 1");
    let config = params.config();
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params);
    let h = tape.leaf(hologram.phase().clone());
    let out = forward_graph(&mut tape, &bound, &config, h, surface)?;
    let loss = tape.masked_l2(out, target, mask, alpha0, alpha1)?;
    let mut grads = tape.backward(loss, None);
    let param_grads = bound
        .vars()
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor3::zeros(t.channels(), t.height(), t.width())))
        .collect();
    let hgrad = grads.take(h).unwrap_or_else(|| Tensor3::zeros(3, hologram.height(), hologram.width()));
    Ok(LossGradients {
        loss: tape.value(loss).as_slice()[0],
        params: param_grads,
        hologram: hgrad,
    })
}

/// Optimizer settings and step-decay learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Learning rate is multiplied by `decay_factor` every `decay_every` epochs.
    pub decay_every: usize,
    pub decay_factor: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    /// Seeds the per-epoch sample order.
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 500,
            adam: AdamConfig::default(),
            decay_every: 50,
            decay_factor: 0.5,
            alpha0: DEFAULT_ALPHA0,
            alpha1: DEFAULT_ALPHA1,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = epoch.checked_div(self.decay_every).unwrap_or(0);
        self.adam.lr * self.decay_factor.powi(decays as i32)
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: ModelParams,
    /// Mean per-sample loss of each epoch, measured before each sample's update.
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch-of-one Adam training over `dataset`.
pub fn train(
    dataset: &[(PhaseHologram, ReconstructionTarget)],
    params: ModelParams,
    schedule: &TrainSchedule,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    ensure_arg!(!dataset.is_empty(), "training set is empty");
    for (h, t) in dataset {
        check_model_inputs(&params, h, &t.surface)?;
        ensure_shape!(t.image.shape() == (3, h.height(), h.width()), "target image shape");
    }

    let mut params = params;
    let mut adam = Adam::new(schedule.adam, params.tensors().iter().map(Tensor3::len));
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_losses = Vec::with_capacity(schedule.epochs);

    for epoch in 0..schedule.epochs {
        adam.set_lr(schedule.lr_at(epoch));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            let (h, t) = &dataset[i];
            let g = loss_and_gradients(&params, h, &t.surface, &t.image, &t.mask, schedule.alpha0, schedule.alpha1)?;
            total += g.loss;
            let grads: Vec<Option<&[f64]>> = g.params.iter().map(|t| Some(t.as_slice())).collect();
            let mut blocks: Vec<&mut [f64]> = params.tensors_mut().iter_mut().map(Tensor3::as_mut_slice).collect();
            adam.step(&mut blocks, &grads);
        }
        let mean = total / dataset.len() as f64;
        on_epoch(epoch, mean);
        epoch_losses.push(mean);
    }
    Ok(TrainReport { params, epoch_losses })
}
