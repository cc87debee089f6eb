//! Fine-tuning loop (Adam + STLR + LLRD, optional freezing and
//! distillation), sequential chains, and the parallel expert-averaging
//! pipeline.

use rand::Rng;

use super::domain::SyntheticDomain;
use super::model::{Gradients, LossKind, ToyModel};
use super::{derive_seed, stream_rng, ToyError};
use crate::glob::glob_match;
use crate::merge::{average_experts, MergeSpec};
use crate::par::par_map;
use crate::schedules::{effective_lr, llrd_multipliers, LayerRateMap, StlrConfig};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPSILON: f64 = 1e-8;

/// One fine-tuning phase. Adam runs with default hyperparameters; only the
/// learning rate is shaped, by the slanted triangular schedule and the
/// per-layer decay multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr_max: f64,
    pub cut_frac: f64,
    pub ratio: f64,
    pub llrd_decay: f64,
    /// Name globs for parameters that must not move.
    pub freeze_mask: Vec<String>,
    /// Weight of the KL term against the reference model; 0 disables it.
    pub lwf_weight: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ToyError> {
        if self.batch_size == 0 {
            return Err(ToyError::InvalidConfig {
                field: "batch_size".to_string(),
                reason: "must be positive".to_string(),
            });
        }
        if !(self.lwf_weight.is_finite() && self.lwf_weight >= 0.0) {
            return Err(ToyError::InvalidConfig {
                field: "lwf_weight".to_string(),
                reason: "must be non-negative".to_string(),
            });
        }
        if self.steps > 0 {
            StlrConfig::with_shape(self.lr_max, self.cut_frac, self.ratio, self.steps)?;
        }
        Ok(())
    }

    fn stlr(&self) -> Result<StlrConfig, ToyError> {
        Ok(StlrConfig::with_shape(
            self.lr_max,
            self.cut_frac,
            self.ratio,
            self.steps,
        )?)
    }
}

/// Trained model plus the per-step loss curve.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ToyModel,
    pub losses: Vec<f64>,
}

struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

struct ParamPlan {
    names: Vec<String>,
    frozen: Vec<bool>,
    rates: LayerRateMap,
}

fn build_plan(model: &ToyModel, cfg: &TrainConfig) -> Result<ParamPlan, ToyError> {
    let names = model.param_names();
    let frozen = names
        .iter()
        .map(|n| cfg.freeze_mask.iter().any(|p| glob_match(p, n)))
        .collect();
    let rates = llrd_multipliers(
        &names,
        &model.layer_rule(),
        cfg.llrd_decay,
        model.num_encoder_layers(),
    )?;
    Ok(ParamPlan {
        names,
        frozen,
        rates,
    })
}

/// Runs `cfg.steps` Adam steps of cross-entropy on batches drawn from the
/// domain's train split (plus the optional distillation term against
/// `reference`). Frozen parameters come out bit-identical; the whole run is
/// deterministic given `cfg.seed`.
pub fn train(
    model: &ToyModel,
    domain: &SyntheticDomain,
    cfg: &TrainConfig,
    reference: Option<&ToyModel>,
) -> Result<TrainOutcome, ToyError> {
    cfg.validate()?;
    if model.input_dim() != domain.input_dim || model.num_classes() != domain.num_classes {
        return Err(ToyError::DimensionMismatch {
            context: format!(
                "model ({}, {}) vs domain {:?} ({}, {})",
                model.input_dim(),
                model.num_classes(),
                domain.name,
                domain.input_dim,
                domain.num_classes
            ),
        });
    }
    if cfg.steps == 0 {
        return Ok(TrainOutcome {
            model: model.clone(),
            losses: Vec::new(),
        });
    }

    let stlr = cfg.stlr()?;
    let plan = build_plan(model, cfg)?;
    let mut current = model.clone();
    let mut adam = AdamState {
        m: param_shaped_zeros(&current),
        v: param_shaped_zeros(&current),
    };
    let mut rng = stream_rng(cfg.seed, &format!("train-batches:{}", domain.name));
    let train_set = domain.train_samples();
    let mut losses = Vec::with_capacity(cfg.steps as usize);

    for step in 0..cfg.steps {
        let batch: Vec<&super::domain::Sample> = (0..cfg.batch_size)
            .map(|_| &train_set[rng.gen_range(0..train_set.len())])
            .collect();
        let (loss, grads) =
            current.loss_and_grads(&batch, LossKind::CrossEntropy, reference, cfg.lwf_weight)?;
        if !loss.is_finite() {
            return Err(ToyError::NonFiniteLoss { step, loss });
        }
        losses.push(loss);
        apply_adam_step(&mut current, &mut adam, &grads, step, &stlr, &plan)?;
    }
    Ok(TrainOutcome {
        model: current,
        losses,
    })
}

fn param_shaped_zeros(model: &ToyModel) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for layer in model
        .encoder
        .iter()
        .chain(std::iter::once(&model.output))
    {
        out.push(vec![0.0; layer.weight.len()]);
        out.push(vec![0.0; layer.bias.len()]);
    }
    out
}

fn apply_adam_step(
    model: &mut ToyModel,
    adam: &mut AdamState,
    grads: &Gradients,
    step: u64,
    stlr: &StlrConfig,
    plan: &ParamPlan,
) -> Result<(), ToyError> {
    let t = step as i32 + 1;
    let bias1 = 1.0 - ADAM_BETA1.powi(t);
    let bias2 = 1.0 - ADAM_BETA2.powi(t);

    // Parameter slot order matches param_names(): per layer, weight then bias.
    let num_layers = model.encoder.len() + 1;
    for layer_idx in 0..num_layers {
        for slot_offset in 0..2usize {
            let slot = layer_idx * 2 + slot_offset;
            if plan.frozen[slot] {
                continue;
            }
            let lr = effective_lr(step, &plan.names[slot], stlr, &plan.rates)?;
            let layer = if layer_idx < model.encoder.len() {
                &mut model.encoder[layer_idx]
            } else {
                &mut model.output
            };
            let (values, grad_vec): (&mut [f64], &[f64]) = if slot_offset == 0 {
                (&mut layer.weight, &grads.layers[layer_idx].weight)
            } else {
                (&mut layer.bias, &grads.layers[layer_idx].bias)
            };
            let m = &mut adam.m[slot];
            let v = &mut adam.v[slot];
            for ((value, &g), (mi, vi)) in values
                .iter_mut()
                .zip(grad_vec)
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * g;
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *mi / bias1;
                let v_hat = *vi / bias2;
                *value -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
            }
        }
    }
    Ok(())
}

/// Final model of a sequential chain along with each stage's result.
#[derive(Debug, Clone)]
pub struct ChainOutcome {
    pub model: ToyModel,
    pub stages: Vec<(String, ToyModel)>,
}

/// Folds `train` over the domains in order, retaining intermediate models.
/// Each stage gets its own derived seed.
pub fn sequential_finetune(
    model: &ToyModel,
    domains: &[&SyntheticDomain],
    cfg: &TrainConfig,
    reference: Option<&ToyModel>,
) -> Result<ChainOutcome, ToyError> {
    let mut current = model.clone();
    let mut stages = Vec::with_capacity(domains.len());
    for (i, domain) in domains.iter().enumerate() {
        let stage_cfg = TrainConfig {
            seed: derive_seed(cfg.seed, &format!("stage{i}:{}", domain.name)),
            ..cfg.clone()
        };
        current = train(&current, domain, &stage_cfg, reference)?.model;
        stages.push((domain.name.clone(), current.clone()));
    }
    Ok(ChainOutcome {
        model: current,
        stages,
    })
}

/// The averaged model plus the individual experts it was built from.
#[derive(Debug, Clone)]
pub struct AodeOutcome {
    pub model: ToyModel,
    pub experts: Vec<(String, ToyModel)>,
}

/// Fine-tunes one expert per domain starting from the same pretrained model
/// (in parallel when the `parallel` feature is on; experts are independent,
/// so the results are identical either way), then averages the experts with
/// equal weights.
pub fn aode_pipeline(
    pretrained: &ToyModel,
    domains: &[&SyntheticDomain],
    cfg: &TrainConfig,
    reference: Option<&ToyModel>,
) -> Result<AodeOutcome, ToyError> {
    if domains.is_empty() {
        return Err(ToyError::InvalidConfig {
            field: "domains".to_string(),
            reason: "expert averaging needs at least one domain".to_string(),
        });
    }
    let jobs: Vec<&SyntheticDomain> = domains.to_vec();
    let trained = par_map(jobs, |domain| {
        let expert_cfg = TrainConfig {
            seed: derive_seed(cfg.seed, &format!("expert:{}", domain.name)),
            ..cfg.clone()
        };
        train(pretrained, domain, &expert_cfg, reference)
            .map(|outcome| (domain.name.clone(), outcome.model))
    });
    let mut experts = Vec::with_capacity(trained.len());
    for result in trained {
        experts.push(result?);
    }

    let model = average_models(experts.iter().map(|(_, m)| m))?;
    Ok(AodeOutcome { model, experts })
}

/// Equal-weight average of toy models via their checkpoint forms.
pub fn average_models<'a>(
    models: impl Iterator<Item = &'a ToyModel>,
) -> Result<ToyModel, ToyError> {
    let ckpts: Vec<_> = models.map(ToyModel::to_checkpoint).collect();
    let refs: Vec<&_> = ckpts.iter().collect();
    let merged = average_experts(&refs, &MergeSpec::equal(refs.len()))?;
    ToyModel::from_checkpoint(&merged)
}
