//! Cross-entropy training with rectified Adam, validation-driven early
//! stopping, and the RUBi bias-reduction criterion.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ModalityBundle, QAExample};
use crate::model::forward::{build_model_forward, Ctx, Mode};
use crate::model::{Model, ModelError, PredictionRecord};
use crate::numerics::{Graph, NumericsError, RngState, Var};
use crate::params::{Binding, GradMap, ParamError, ParamStore};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("non-finite gradient for parameter `{param}`")]
    NonFiniteGradient { param: String },
    #[error("training diverged at iteration {iteration} (loss {loss}); history retained")]
    Diverged {
        iteration: usize,
        loss: f64,
        history: TrainHistory,
    },
    #[error("invalid training setup: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Invalid("learning rate must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0 < b && b < 1.0) {
                return Err(TrainError::Invalid(format!("{name} must be in (0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Validation cadence in iterations (800 is conventional for models
    /// with regional features, 400 otherwise).
    pub val_interval: usize,
    /// Early-stop patience in epochs without validation improvement.
    pub patience_epochs: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub rubi: bool,
    /// Weight of the text-only classifier-head loss.
    pub rubi_lambda: f64,
    /// Cap on the train-accuracy probe subset evaluated each checkpoint.
    pub train_eval_cap: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            val_interval: 400,
            patience_epochs: 3,
            max_epochs: 40,
            seed: 1,
            rubi: false,
            rubi_lambda: 1.0,
            train_eval_cap: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("val_interval", self.val_interval),
            ("patience_epochs", self.patience_epochs),
            ("max_epochs", self.max_epochs),
            ("train_eval_cap", self.train_eval_cap),
        ] {
            if v == 0 {
                return Err(TrainError::Invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// One validation checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointStat {
    pub iteration: usize,
    pub train_acc: f64,
    pub val_acc: f64,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub checkpoints: Vec<CheckpointStat>,
    /// Index into `checkpoints` of the best validation accuracy
    /// (earliest on ties).
    pub best: usize,
    pub iters_per_epoch: usize,
    pub total_iterations: usize,
}

impl TrainHistory {
    pub fn best_stat(&self) -> Option<&CheckpointStat> {
        self.checkpoints.get(self.best)
    }

    /// CSV rows `iteration,train_acc,val_acc,loss`.
    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "iteration,train_acc,val_acc,loss")?;
        for c in &self.checkpoints {
            writeln!(
                w,
                "{},{:.6},{:.6},{:.6}",
                c.iteration, c.train_acc, c.val_acc, c.mean_loss
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `-log softmax(logits)[target]` on plain slices (the tape op handles
/// the differentiable path).
pub fn cross_entropy_value(logits: &[f64], target: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[target]
}

// ── Rectified Adam ─────────────────────────────────────────────────

/// Per-parameter first/second moments plus the shared step count.
#[derive(Debug, Clone, Default)]
pub struct RadamState {
    pub step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl RadamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One rectified-Adam update over every gradient in the map. The
/// variance-rectification term falls back to a momentum-only step while
/// the approximated variance is untrustworthy (rho <= 4).
pub fn radam_step(
    store: &mut ParamStore,
    grads: &GradMap,
    state: &mut RadamState,
    cfg: &OptimizerConfig,
) -> Result<(), TrainError> {
    cfg.validate()?;
    state.step += 1;
    let t = state.step as f64;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let rho_inf = 2.0 / (1.0 - b2) - 1.0;
    let b1t = b1.powf(t);
    let b2t = b2.powf(t);
    let rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
    let rect = if rho_t > 4.0 {
        Some(
            (((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                .sqrt(),
        )
    } else {
        None
    };

    for (name, grad) in grads.iter() {
        if !grad.iter().all(|g| g.is_finite()) {
            return Err(TrainError::NonFiniteGradient { param: name.clone() });
        }
        let tensor = store.get_mut(name)?;
        let n = tensor.numel();
        if grad.len() != n {
            return Err(TrainError::Invalid(format!(
                "gradient for `{name}` has {} values, parameter has {n}",
                grad.len()
            )));
        }
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
        let values = tensor.values_mut();
        for i in 0..n {
            let g = grad[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / (1.0 - b1t);
            let update = match rect {
                Some(r) => {
                    let v_hat = (v[i] / (1.0 - b2t)).sqrt();
                    r * m_hat / (v_hat + cfg.epsilon)
                }
                None => m_hat,
            };
            values[i] -= cfg.learning_rate * update;
            if cfg.weight_decay > 0.0 {
                values[i] -= cfg.learning_rate * cfg.weight_decay * values[i];
            }
        }
    }
    Ok(())
}

// ── Evaluation ─────────────────────────────────────────────────────

/// Accuracy plus the per-question records (retained for analysis).
pub fn evaluate(
    model: &Model,
    examples: &[QAExample],
    bundles: &BTreeMap<String, ModalityBundle>,
) -> Result<(f64, Vec<PredictionRecord>), ModelError> {
    let records = crate::model::predict_batch(model, examples, bundles)?;
    if records.is_empty() {
        return Ok((0.0, records));
    }
    let correct = records.iter().filter(|r| r.correct).count();
    Ok((correct as f64 / records.len() as f64, records))
}

// ── Training loop ──────────────────────────────────────────────────

fn check_disjoint(train: &[QAExample], val: &[QAExample]) -> Result<(), TrainError> {
    let train_ids: BTreeSet<u64> = train.iter().map(|e| e.qid).collect();
    if let Some(shared) = val.iter().find(|e| train_ids.contains(&e.qid)) {
        return Err(TrainError::Invalid(format!(
            "qid {} appears in both train and validation splits",
            shared.qid
        )));
    }
    Ok(())
}

struct BatchOutcome {
    mean_loss: f64,
    grads: GradMap,
}

fn batch_step(
    model: &Model,
    batch: &[&QAExample],
    bundles: &BTreeMap<String, ModalityBundle>,
    drop_rng: &mut RngState,
) -> Result<BatchOutcome, TrainError> {
    let mut g = Graph::new();
    let mut bind = Binding::new();
    let mut losses: Vec<Var> = Vec::with_capacity(batch.len());
    {
        let mut ctx = Ctx::new(&mut g, &mut bind, model, drop_rng, Mode::Train);
        for ex in batch {
            let bundle = ctx
                .model
                .bundle_for(bundles, ex)
                .map_err(TrainError::Model)?;
            let fwd = build_model_forward(&mut ctx, ex, bundle)?;
            let loss = ctx.g.cross_entropy_logits(fwd.aggregate, ex.answer_idx)?;
            losses.push(loss);
        }
    }
    let total = g.mean_scalars(&losses)?;
    let mean_loss = g.scalar_value(total);
    let sink = g.backward(total)?;
    Ok(BatchOutcome {
        mean_loss,
        grads: bind.collect(&sink),
    })
}

impl Model {
    fn bundle_for<'a>(
        &self,
        bundles: &'a BTreeMap<String, ModalityBundle>,
        ex: &QAExample,
    ) -> Result<&'a ModalityBundle, ModelError> {
        bundles.get(&ex.clip_id).ok_or_else(|| ModelError::Inference {
            qid: ex.qid,
            msg: format!("missing bundle for clip `{}`", ex.clip_id),
        })
    }
}

/// Trains until validation accuracy stops improving for
/// `patience_epochs` epochs (checked at each validation point) or
/// `max_epochs` elapse. The model is left holding the parameters of the
/// best validation checkpoint.
pub fn train(
    model: &mut Model,
    train_split: &[QAExample],
    val_split: &[QAExample],
    bundles: &BTreeMap<String, ModalityBundle>,
    tcfg: &TrainConfig,
    ocfg: &OptimizerConfig,
) -> Result<TrainHistory, TrainError> {
    tcfg.validate()?;
    ocfg.validate()?;
    if train_split.is_empty() || val_split.is_empty() {
        return Err(TrainError::Invalid("empty train or validation split".into()));
    }
    check_disjoint(train_split, val_split)?;

    let mut state = RadamState::new();
    let mut history = TrainHistory::default();
    let iters_per_epoch = train_split.len().div_ceil(tcfg.batch_size);
    history.iters_per_epoch = iters_per_epoch;

    // Fixed train-accuracy probe subset.
    let probe: Vec<QAExample> = {
        let mut idx: Vec<usize> = (0..train_split.len()).collect();
        let mut rng = RngState::new(tcfg.seed).fork(0x9807);
        rng.shuffle(&mut idx);
        idx.truncate(tcfg.train_eval_cap);
        idx.sort_unstable();
        idx.into_iter().map(|i| train_split[i].clone()).collect()
    };

    let mut drop_rng = RngState::new(tcfg.seed).fork(0xD80);
    let mut best_params: Option<ParamStore> = None;
    let mut best_iter = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    let mut iteration = 0usize;
    let mut loss_accum = 0.0;
    let mut loss_count = 0usize;

    'epochs: for epoch in 0..tcfg.max_epochs {
        let mut order: Vec<usize> = (0..train_split.len()).collect();
        let mut shuffle_rng = RngState::new(tcfg.seed).fork(1 + epoch as u64);
        shuffle_rng.shuffle(&mut order);

        for chunk in order.chunks(tcfg.batch_size) {
            let batch: Vec<&QAExample> = chunk.iter().map(|i| &train_split[*i]).collect();
            let outcome = batch_step(model, &batch, bundles, &mut drop_rng)?;
            iteration += 1;
            if !outcome.mean_loss.is_finite() {
                history.total_iterations = iteration;
                return Err(TrainError::Diverged {
                    iteration,
                    loss: outcome.mean_loss,
                    history,
                });
            }
            loss_accum += outcome.mean_loss;
            loss_count += 1;
            radam_step(&mut model.params, &outcome.grads, &mut state, ocfg)?;

            let last_iteration =
                epoch + 1 == tcfg.max_epochs && iteration == (epoch + 1) * iters_per_epoch;
            if iteration % tcfg.val_interval == 0 || last_iteration {
                let (train_acc, _) = evaluate(model, &probe, bundles)?;
                let (val_acc, _) = evaluate(model, val_split, bundles)?;
                history.checkpoints.push(CheckpointStat {
                    iteration,
                    train_acc,
                    val_acc,
                    mean_loss: loss_accum / loss_count.max(1) as f64,
                });
                loss_accum = 0.0;
                loss_count = 0;
                if val_acc > best_val {
                    best_val = val_acc;
                    best_iter = iteration;
                    history.best = history.checkpoints.len() - 1;
                    best_params = Some(model.params.clone());
                }
                if iteration.saturating_sub(best_iter) >= tcfg.patience_epochs * iters_per_epoch {
                    break 'epochs;
                }
            }
        }
    }

    history.total_iterations = iteration;
    if let Some(best) = best_params {
        model.params = best;
    }
    Ok(history)
}

// ── RUBi ───────────────────────────────────────────────────────────

/// The RUBi pair: the full model plus a text-only branch whose sigmoid
/// logits mask the full model's outputs during training. The tiny
/// classifier head on top of the text-only logits receives the second
/// loss term; its gradient is blocked from the branch itself.
pub struct RubiModel {
    pub full: Model,
    pub qo: Model,
    pub head: ParamStore,
}

impl RubiModel {
    pub fn new(full: Model, qo: Model) -> Result<Self, TrainError> {
        if !qo.cfg.streams.subtitle || qo.cfg.streams.img || qo.cfg.streams.reg || qo.cfg.streams.vcpt
        {
            return Err(TrainError::Invalid(
                "RUBi text-only branch must consume exactly the subtitle stream".into(),
            ));
        }
        let mut head = ParamStore::new();
        let mut rng = RngState::new(full.cfg.seed ^ 0x20B1_0000_0000_0001);
        head.insert(
            "rubi_head.w",
            crate::numerics::Tensor::uniform(vec![5, 5], -0.4, 0.4, &mut rng),
        )?;
        let mut b = crate::numerics::Tensor::zeros(vec![5]);
        b.requires_grad = true;
        head.insert("rubi_head.b", b)?;
        Ok(RubiModel { full, qo, head })
    }
}

pub(crate) struct RubiLosses {
    pub loss: Var,
    #[cfg_attr(not(test), allow(dead_code))]
    pub masked_logits: Var,
    #[cfg_attr(not(test), allow(dead_code))]
    pub mask: Var,
}

/// Builds the RUBi loss for one example on a shared graph:
/// `CE(full ⊙ sigmoid(qo), target) + lambda * CE(head(detach(qo)), target)`.
pub(crate) fn build_rubi_example(
    g: &mut Graph,
    binds: (&mut Binding, &mut Binding, &mut Binding),
    models: (&Model, &Model, &ParamStore),
    ex: &QAExample,
    bundle: &ModalityBundle,
    lambda: f64,
    rng: &mut RngState,
    mode: Mode,
    force_unit_mask: bool,
) -> Result<RubiLosses, TrainError> {
    let (full_bind, qo_bind, head_bind) = binds;
    let (full, qo, head) = models;

    let full_vars = {
        let mut ctx = Ctx::new(g, full_bind, full, rng, mode);
        build_model_forward(&mut ctx, ex, bundle)?
    };
    let qo_vars = {
        let mut ctx = Ctx::new(g, qo_bind, qo, rng, mode);
        build_model_forward(&mut ctx, ex, bundle)?
    };

    let mask = if force_unit_mask {
        g.constant(&[5], &[1.0; 5])?
    } else {
        g.sigmoid(qo_vars.aggregate)?
    };
    let masked = g.mul(full_vars.aggregate, mask)?;
    let loss_main = g.cross_entropy_logits(masked, ex.answer_idx)?;

    // Gradient blocking: the head sees the text-only logits as constants.
    let qo_detached = {
        let vals = g.value(qo_vars.aggregate).to_vec();
        g.constant(&[5], &vals)?
    };
    let hw = head_bind.bind(g, head, "rubi_head.w")?;
    let hb = head_bind.bind(g, head, "rubi_head.b")?;
    let row = g.stack_rows(&[qo_detached])?;
    let head_out = g.linear(row, hw, hb)?;
    let head_logits = g.row(head_out, 0)?;
    let loss_qo = g.cross_entropy_logits(head_logits, ex.answer_idx)?;

    let scaled_qo = g.scale(loss_qo, lambda)?;
    let loss = g.add(loss_main, scaled_qo)?;
    Ok(RubiLosses {
        loss,
        masked_logits: masked,
        mask,
    })
}

/// Builds one example's RUBi loss on a caller-supplied graph, exposed
/// for verification harnesses. Dropout is off (inference mode).
#[allow(clippy::too_many_arguments)]
pub fn rubi_example_loss(
    g: &mut Graph,
    binds: (&mut Binding, &mut Binding, &mut Binding),
    models: (&Model, &Model, &ParamStore),
    ex: &QAExample,
    bundle: &ModalityBundle,
    lambda: f64,
    rng: &mut RngState,
) -> Result<Var, TrainError> {
    build_rubi_example(g, binds, models, ex, bundle, lambda, rng, Mode::Eval, false)
        .map(|o| o.loss)
}

/// One RUBi batch: returns the mean loss and per-store gradient maps
/// `(full, qo, head)`.
pub fn rubi_train_step(
    rubi: &RubiModel,
    batch: &[&QAExample],
    bundles: &BTreeMap<String, ModalityBundle>,
    lambda: f64,
    drop_rng: &mut RngState,
) -> Result<(f64, GradMap, GradMap, GradMap), TrainError> {
    let mut g = Graph::new();
    let mut full_bind = Binding::new();
    let mut qo_bind = Binding::new();
    let mut head_bind = Binding::new();
    let mut losses = Vec::with_capacity(batch.len());
    for ex in batch {
        let bundle = rubi.full.bundle_for(bundles, ex)?;
        let out = build_rubi_example(
            &mut g,
            (&mut full_bind, &mut qo_bind, &mut head_bind),
            (&rubi.full, &rubi.qo, &rubi.head),
            ex,
            bundle,
            lambda,
            drop_rng,
            Mode::Train,
            false,
        )?;
        losses.push(out.loss);
    }
    let total = g.mean_scalars(&losses)?;
    let mean = g.scalar_value(total);
    let sink = g.backward(total)?;
    Ok((
        mean,
        full_bind.collect(&sink),
        qo_bind.collect(&sink),
        head_bind.collect(&sink),
    ))
}

/// Trains the RUBi pair; early stopping tracks the full model's
/// validation accuracy. Leaves `rubi.full` holding the best parameters.
pub fn train_rubi(
    rubi: &mut RubiModel,
    train_split: &[QAExample],
    val_split: &[QAExample],
    bundles: &BTreeMap<String, ModalityBundle>,
    tcfg: &TrainConfig,
    ocfg: &OptimizerConfig,
) -> Result<TrainHistory, TrainError> {
    tcfg.validate()?;
    ocfg.validate()?;
    if train_split.is_empty() || val_split.is_empty() {
        return Err(TrainError::Invalid("empty train or validation split".into()));
    }
    check_disjoint(train_split, val_split)?;

    let mut full_state = RadamState::new();
    let mut qo_state = RadamState::new();
    let mut head_state = RadamState::new();
    let mut history = TrainHistory::default();
    let iters_per_epoch = train_split.len().div_ceil(tcfg.batch_size);
    history.iters_per_epoch = iters_per_epoch;

    let probe: Vec<QAExample> = {
        let mut idx: Vec<usize> = (0..train_split.len()).collect();
        let mut rng = RngState::new(tcfg.seed).fork(0x9807);
        rng.shuffle(&mut idx);
        idx.truncate(tcfg.train_eval_cap);
        idx.sort_unstable();
        idx.into_iter().map(|i| train_split[i].clone()).collect()
    };

    let mut drop_rng = RngState::new(tcfg.seed).fork(0xD80);
    let mut best_params: Option<ParamStore> = None;
    let mut best_iter = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    let mut iteration = 0usize;
    let mut loss_accum = 0.0;
    let mut loss_count = 0usize;

    'epochs: for epoch in 0..tcfg.max_epochs {
        let mut order: Vec<usize> = (0..train_split.len()).collect();
        let mut shuffle_rng = RngState::new(tcfg.seed).fork(1 + epoch as u64);
        shuffle_rng.shuffle(&mut order);

        for chunk in order.chunks(tcfg.batch_size) {
            let batch: Vec<&QAExample> = chunk.iter().map(|i| &train_split[*i]).collect();
            let (mean, full_grads, qo_grads, head_grads) =
                rubi_train_step(rubi, &batch, bundles, tcfg.rubi_lambda, &mut drop_rng)?;
            iteration += 1;
            if !mean.is_finite() {
                history.total_iterations = iteration;
                return Err(TrainError::Diverged {
                    iteration,
                    loss: mean,
                    history,
                });
            }
            loss_accum += mean;
            loss_count += 1;
            radam_step(&mut rubi.full.params, &full_grads, &mut full_state, ocfg)?;
            radam_step(&mut rubi.qo.params, &qo_grads, &mut qo_state, ocfg)?;
            radam_step(&mut rubi.head, &head_grads, &mut head_state, ocfg)?;

            let last_iteration =
                epoch + 1 == tcfg.max_epochs && iteration == (epoch + 1) * iters_per_epoch;
            if iteration % tcfg.val_interval == 0 || last_iteration {
                let (train_acc, _) = evaluate(&rubi.full, &probe, bundles)?;
                let (val_acc, _) = evaluate(&rubi.full, val_split, bundles)?;
                history.checkpoints.push(CheckpointStat {
                    iteration,
                    train_acc,
                    val_acc,
                    mean_loss: loss_accum / loss_count.max(1) as f64,
                });
                loss_accum = 0.0;
                loss_count = 0;
                if val_acc > best_val {
                    best_val = val_acc;
                    best_iter = iteration;
                    history.best = history.checkpoints.len() - 1;
                    best_params = Some(rubi.full.params.clone());
                }
                if iteration.saturating_sub(best_iter) >= tcfg.patience_epochs * iters_per_epoch {
                    break 'epochs;
                }
            }
        }
    }

    history.total_iterations = iteration;
    if let Some(best) = best_params {
        rubi.full.params = best;
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn cross_entropy_values() {
        let uniform = [0.0; 5];
        assert!((cross_entropy_value(&uniform, 3) - 5.0f64.ln()).abs() < 1e-12);
        let hot = [1000.0, 0.0, 0.0, 0.0, 0.0];
        assert!(cross_entropy_value(&hot, 0) < 1e-6);
        let two = [0.0, 3.0f64.ln()];
        assert!((cross_entropy_value(&two, 0) - 1.3862943611198906).abs() < 1e-10);
    }

    #[test]
    fn radam_zero_gradient_is_fixed_point_at_t1() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.5, -2.0]).unwrap()).unwrap();
        let mut zero = std::collections::BTreeMap::new();
        zero.insert("w".to_string(), vec![0.0, 0.0]);
        let zero = GradMap::from_map(zero);
        let mut state = RadamState::new();
        radam_step(&mut store, &zero, &mut state, &OptimizerConfig::default()).unwrap();
        assert_eq!(store.get("w").unwrap().values(), &[1.5, -2.0]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn radam_converges_on_scalar_quadratic() {
        // f(w) = (w-3)^2, gradient 2(w-3), lr 0.1, 200 steps.
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![0.0]).unwrap()).unwrap();
        let mut state = RadamState::new();
        let cfg = OptimizerConfig { learning_rate: 0.1, ..Default::default() };
        for _ in 0..200 {
            let w = store.get("w").unwrap().values()[0];
            let mut g = std::collections::BTreeMap::new();
            g.insert("w".to_string(), vec![2.0 * (w - 3.0)]);
            radam_step(&mut store, &GradMap::from_map(g), &mut state, &cfg).unwrap();
        }
        let w = store.get("w").unwrap().values()[0];
        assert!((w - 3.0).abs() < 1e-2, "w {w}");
    }

    /// Independent re-implementation of the published update rule,
    /// compared step by step on a 2-d toy.
    #[test]
    fn radam_matches_reference_implementation() {
        let cfg = OptimizerConfig { learning_rate: 0.01, ..Default::default() };
        let grads_per_step = [
            vec![0.5, -1.0],
            vec![0.2, 0.3],
            vec![-0.7, 0.9],
            vec![1.5, -0.4],
            vec![0.05, 0.05],
            vec![-0.2, -0.2],
        ];

        // Reference path.
        let mut w_ref = [0.3f64, -0.6];
        let mut m = [0.0f64; 2];
        let mut v = [0.0f64; 2];
        let rho_inf = 2.0 / (1.0 - cfg.beta2) - 1.0;
        for (step, g) in grads_per_step.iter().enumerate() {
            let t = (step + 1) as f64;
            for i in 0..2 {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            }
            let b1t = cfg.beta1.powf(t);
            let b2t = cfg.beta2.powf(t);
            let rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
            for i in 0..2 {
                let m_hat = m[i] / (1.0 - b1t);
                if rho_t > 4.0 {
                    let v_hat = (v[i] / (1.0 - b2t)).sqrt();
                    let r = (((rho_t - 4.0) * (rho_t - 2.0) * rho_inf)
                        / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                        .sqrt();
                    w_ref[i] -= cfg.learning_rate * r * m_hat / (v_hat + cfg.epsilon);
                } else {
                    w_ref[i] -= cfg.learning_rate * m_hat;
                }
            }
        }

        // Implementation path.
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![0.3, -0.6]).unwrap()).unwrap();
        let mut state = RadamState::new();
        for g in &grads_per_step {
            let mut gm = std::collections::BTreeMap::new();
            gm.insert("w".to_string(), g.clone());
            radam_step(&mut store, &GradMap::from_map(gm), &mut state, &cfg).unwrap();
        }
        let w = store.get("w").unwrap().values();
        for i in 0..2 {
            assert!((w[i] - w_ref[i]).abs() < 1e-12, "{:?} vs {:?}", w, w_ref);
        }
    }

    #[test]
    fn non_finite_gradient_aborts_with_name() {
        let mut store = ParamStore::new();
        store.insert("layer.w", Tensor::vector(vec![1.0]).unwrap()).unwrap();
        let mut g = std::collections::BTreeMap::new();
        g.insert("layer.w".to_string(), vec![f64::NAN]);
        let mut state = RadamState::new();
        match radam_step(&mut store, &GradMap::from_map(g), &mut state, &OptimizerConfig::default()) {
            Err(TrainError::NonFiniteGradient { param }) => assert_eq!(param, "layer.w"),
            other => panic!("expected NonFiniteGradient, got {other:?}"),
        }
    }
}
