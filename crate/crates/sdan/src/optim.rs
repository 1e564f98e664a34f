//! L1 loss, the Adan optimizer, EMA shadow weights and the training loop.

use crate::autograd::{backward, Var};
use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::model::Sdan;
use crate::tensor::{Elem, Tensor};

/// Mean absolute difference over all elements, as a scalar graph node.
pub fn l1_loss<T: Elem>(pred: &Var<T>, target: &Var<T>) -> Result<Var<T>> {
    let shape = pred.shape();
    if shape != target.shape() {
        return Err(Error::config(format!(
            "l1_loss: shape mismatch {} vs {}",
            shape,
            target.shape()
        )));
    }
    let n = shape.numel() as f64;
    let mut acc = 0.0f64;
    {
        let p = pred.value();
        let t = target.value();
        for (&a, &b) in p.data().iter().zip(t.data()) {
            acc += (a.to_f64() - b.to_f64()).abs();
        }
    }
    let value = Tensor::scalar(T::from_f64(acc / n));
    Ok(Var::apply(
        value,
        vec![pred.clone(), target.clone()],
        Box::new(move |g, parents| {
            let gv = g.data()[0].to_f64() / n;
            let p = parents[0].value();
            let t = parents[1].value();
            let mut gp = Tensor::zeros(p.shape());
            for (out, (&a, &b)) in gp.data_mut().iter_mut().zip(p.data().iter().zip(t.data())) {
                let d = a.to_f64() - b.to_f64();
                let sign = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *out = T::from_f64(sign * gv);
            }
            drop(p);
            drop(t);
            if parents[1].requires_grad() {
                parents[1].accumulate_grad(gp.scale(-1.0));
            }
            parents[0].accumulate_grad(gp);
        }),
    ))
}

/// Adan optimizer state and update.
///
/// With retention factors b1, b2, b3 and gradient g at step t:
///   m <- b1 m + (1-b1) g
///   v <- b2 v + (1-b2) (g - g_prev)
///   n <- b3 n + (1-b3) (g + b2 (g - g_prev))^2
/// each bias-corrected by its (1 - b^t), then
///   theta <- (theta - lr (m^ + b2 v^) / (sqrt(n^) + eps)) / (1 + lr wd).
/// Before step 1 all state is zero and g_prev is defined as g_1.
pub struct Adan<T: Elem> {
    params: Vec<Var<T>>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    beta3: f64,
    eps: f64,
    weight_decay: f64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    nmoment: Vec<Tensor<T>>,
    g_prev: Vec<Option<Tensor<T>>>,
    t: u32,
}

impl<T: Elem> Adan<T> {
    pub fn new(params: Vec<Var<T>>, cfg: &TrainConfig) -> Adan<T> {
        let m = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let v = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let nmoment = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let g_prev = params.iter().map(|_| None).collect();
        Adan {
            params,
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            beta3: cfg.beta3,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            m,
            v,
            nmoment,
            g_prev,
            t: 0,
        }
    }

    pub fn param_scalars(&self) -> u64 {
        self.params.iter().map(|p| p.shape().numel() as u64).sum()
    }

    /// Apply one update from the accumulated gradients. A missing gradient
    /// counts as zero. Returns the number of scalars updated; any non-finite
    /// gradient rejects the whole step before touching state.
    pub fn step(&mut self) -> Result<u64> {
        let grads: Vec<Tensor<T>> = self
            .params
            .iter()
            .map(|p| p.grad().unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        for (i, g) in grads.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::numeric(format!(
                    "adan: non-finite gradient in parameter {i}, step rejected"
                )));
            }
        }

        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let bc3 = 1.0 - self.beta3.powi(self.t as i32);
        let mut touched = 0u64;
        for (i, param) in self.params.iter().enumerate() {
            let g = &grads[i];
            let mut value = param.value_clone();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let nm = self.nmoment[i].data_mut();
            let gp = self.g_prev[i].as_ref();
            for e in 0..value.numel() {
                let gv = g.data()[e].to_f64();
                let gprev = gp.map_or(gv, |t| t.data()[e].to_f64());
                let diff = gv - gprev;
                let mv = self.beta1 * m[e].to_f64() + (1.0 - self.beta1) * gv;
                let vv = self.beta2 * v[e].to_f64() + (1.0 - self.beta2) * diff;
                let upd = gv + self.beta2 * diff;
                let nv = self.beta3 * nm[e].to_f64() + (1.0 - self.beta3) * upd * upd;
                m[e] = T::from_f64(mv);
                v[e] = T::from_f64(vv);
                nm[e] = T::from_f64(nv);
                let m_hat = mv / bc1;
                let v_hat = vv / bc2;
                let n_hat = nv / bc3;
                let theta = value.data()[e].to_f64();
                let stepped =
                    theta - self.lr * (m_hat + self.beta2 * v_hat) / (n_hat.sqrt() + self.eps);
                value.data_mut()[e] = T::from_f64(stepped / (1.0 + self.lr * self.weight_decay));
            }
            touched += value.numel() as u64;
            param.set_value(value)?;
            self.g_prev[i] = Some(g.clone());
        }
        Ok(touched)
    }

    pub fn zero_grads(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }
}

/// Exponential moving average of parameter values.
pub struct Ema<T: Elem> {
    shadow: Vec<Tensor<T>>,
    decay: f64,
}

impl<T: Elem> Ema<T> {
    /// Shadow starts as a copy of the current parameter values.
    pub fn new(params: &[Var<T>], decay: f64) -> Ema<T> {
        Ema { shadow: params.iter().map(|p| p.value_clone()).collect(), decay }
    }

    /// shadow <- decay * shadow + (1 - decay) * params, element-wise.
    pub fn update(&mut self, params: &[Var<T>]) {
        for (s, p) in self.shadow.iter_mut().zip(params) {
            let value = p.value();
            for (sv, &pv) in s.data_mut().iter_mut().zip(value.data()) {
                *sv = T::from_f64(self.decay * sv.to_f64() + (1.0 - self.decay) * pv.to_f64());
            }
        }
    }

    pub fn shadow(&self) -> &[Tensor<T>] {
        &self.shadow
    }

    pub fn named(&self, names: &[(String, Var<T>)]) -> Vec<(String, Tensor<T>)> {
        names
            .iter()
            .zip(&self.shadow)
            .map(|((name, _), tensor)| (name.clone(), tensor.clone()))
            .collect()
    }
}

/// Yields aligned (LR, HR) batches in [0, 1].
pub trait BatchSource {
    fn next_batch(&mut self, batch_size: usize) -> Result<(Tensor<f32>, Tensor<f32>)>;
}

impl BatchSource for crate::data::PatchSampler {
    fn next_batch(&mut self, batch_size: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
        crate::data::PatchSampler::next_batch(self, batch_size)
    }
}

/// A single fixed batch, for overfit smoke runs. Ignores the requested
/// batch size and always returns the same pair.
pub struct FixedBatch {
    pub lr: Tensor<f32>,
    pub hr: Tensor<f32>,
}

impl BatchSource for FixedBatch {
    fn next_batch(&mut self, _batch_size: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
        Ok((self.lr.clone(), self.hr.clone()))
    }
}

/// One progress line: `iter=<i> loss=<f> psnr_val=<f>`.
#[derive(Clone, Debug)]
pub struct ProgressRecord {
    pub iter: usize,
    pub loss: f64,
    pub psnr_val: f64,
}

impl std::fmt::Display for ProgressRecord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "iter={} loss={:.6e} psnr_val={:.4}", self.iter, self.loss, self.psnr_val)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainStatus {
    Completed,
    /// Loss or gradients went non-finite; the checkpoint holds the last
    /// good parameters.
    AbortedNonFinite { at_iter: usize },
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint<f32>,
    pub status: TrainStatus,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Batch PSNR of the clamped prediction against the target on the [0, 1]
/// scale; progress reporting only.
fn batch_psnr(pred: &Tensor<f32>, target: &Tensor<f32>) -> f64 {
    let mut se = 0.0f64;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let d = (p as f64).clamp(0.0, 1.0) - t as f64;
        se += d * d;
    }
    let mse = se / pred.numel() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// The sample -> forward -> L1 -> backward -> Adan -> EMA loop.
///
/// Emits a progress record every `log_interval` iterations (0 disables).
/// Returns the final checkpoint with both raw and EMA weights; on a
/// non-finite loss or gradient the loop stops and the checkpoint holds the
/// parameters from before the failed step.
pub fn train(
    model: &Sdan<f32>,
    source: &mut dyn BatchSource,
    cfg: &TrainConfig,
    log_interval: usize,
    mut on_progress: impl FnMut(&ProgressRecord),
) -> Result<TrainOutcome> {
    cfg.validate(model.config())?;
    let params = model.params().vars();
    let mut opt = Adan::new(params.clone(), cfg);
    let mut ema = Ema::new(&params, cfg.ema_decay);
    let mut status = TrainStatus::Completed;
    let mut initial_loss = f64::NAN;
    let mut final_loss = f64::NAN;

    for iter in 1..=cfg.iterations {
        let (lr_batch, hr_batch) = source.next_batch(cfg.batch_size)?;
        let input = Var::constant(lr_batch);
        let target = Var::constant(hr_batch);
        let pred = model.forward(&input)?;
        let loss = l1_loss(&pred, &target)?;
        let loss_value = loss.value().data()[0] as f64;
        if !loss_value.is_finite() {
            status = TrainStatus::AbortedNonFinite { at_iter: iter };
            break;
        }
        if iter == 1 {
            initial_loss = loss_value;
        }
        final_loss = loss_value;
        let psnr_val = batch_psnr(&pred.value(), &target.value());

        backward(&loss)?;
        let step = opt.step();
        opt.zero_grads();
        if step.is_err() {
            status = TrainStatus::AbortedNonFinite { at_iter: iter };
            break;
        }
        ema.update(&params);

        if log_interval > 0 && iter % log_interval == 0 {
            on_progress(&ProgressRecord { iter, loss: loss_value, psnr_val });
        }
    }

    let entries = model.params().entries();
    let checkpoint = Checkpoint {
        config: *model.config(),
        tensors: model.params().named_tensors(),
        ema: Some(ema.named(entries)),
    };
    Ok(TrainOutcome { checkpoint, status, initial_loss, final_loss })
}
