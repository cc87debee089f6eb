//! Experiment pipelines: pretrain, per-domain experts, sequential chains,
//! pairwise average, and the full expert average, each evaluated on every
//! domain and reported next to the geometric mean.

use serde::{Deserialize, Serialize};

use super::domain::{make_domains, DomainsConfig, SyntheticDomain};
use super::model::ToyModel;
use super::train::{aode_pipeline, average_models, sequential_finetune, train, TrainConfig};
use super::{derive_seed, ToyError};
use crate::checkpoint::Checkpoint;
use crate::eval::geometric_mean;
use crate::render;

/// Floor applied to error percentages before the geometric mean; a perfect
/// score would otherwise send the log to minus infinity.
pub const ERROR_CLAMP_PCT: f64 = 0.1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
}

/// One training phase as declared in the experiment config file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr_max: f64,
    #[serde(default = "default_cut_frac")]
    pub cut_frac: f64,
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    #[serde(default = "default_llrd_decay")]
    pub llrd_decay: f64,
    #[serde(default)]
    pub lwf_weight: f64,
    #[serde(default)]
    pub freeze: Vec<String>,
}

fn default_cut_frac() -> f64 {
    crate::schedules::DEFAULT_CUT_FRAC
}

fn default_ratio() -> f64 {
    crate::schedules::DEFAULT_RATIO
}

fn default_llrd_decay() -> f64 {
    1.0
}

impl PhaseConfig {
    fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            batch_size: self.batch_size,
            lr_max: self.lr_max,
            cut_frac: self.cut_frac,
            ratio: self.ratio,
            llrd_decay: self.llrd_decay,
            freeze_mask: self.freeze.clone(),
            lwf_weight: self.lwf_weight,
            seed,
        }
    }
}

/// A row producer in the experiment report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    Pretrained,
    Experts,
    Sequential,
    PairwiseAverage,
    Aode,
}

/// Experiment definition; the JSON schema of the `toy` subcommand's
/// `--config` file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub domains: DomainsConfig,
    pub pretrain: PhaseConfig,
    pub finetune: PhaseConfig,
    pub procedures: Vec<Procedure>,
    #[serde(default)]
    pub sequential_orders: Vec<Vec<String>>,
}

impl ExperimentConfig {
    pub fn from_json(json: &str) -> Result<Self, ToyError> {
        let cfg: Self = serde_json::from_str(json).map_err(|e| ToyError::InvalidConfig {
            field: "config".to_string(),
            reason: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ToyError> {
        self.domains
            .validate(self.model.input_dim, self.model.num_classes)?;
        if self.procedures.is_empty() {
            return Err(ToyError::InvalidConfig {
                field: "procedures".to_string(),
                reason: "at least one procedure required".to_string(),
            });
        }
        if self.procedures.contains(&Procedure::Sequential) && self.sequential_orders.is_empty() {
            return Err(ToyError::InvalidConfig {
                field: "sequential_orders".to_string(),
                reason: "the sequential procedure needs at least one declared order".to_string(),
            });
        }
        if self.procedures.contains(&Procedure::PairwiseAverage) && self.domains.count < 2 {
            return Err(ToyError::InvalidConfig {
                field: "domains.count".to_string(),
                reason: "pairwise_average needs at least two shifted domains".to_string(),
            });
        }
        for order in &self.sequential_orders {
            for name in order {
                let valid = name
                    .strip_prefix("shift")
                    .and_then(|k| k.parse::<usize>().ok())
                    .is_some_and(|k| k >= 1 && k <= self.domains.count);
                if !valid {
                    return Err(ToyError::UnknownDomain { name: name.clone() });
                }
            }
        }
        Ok(())
    }
}

/// One report row: a procedure's error percentage per domain plus the
/// geometric mean over the clamped percentages.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReportRow {
    pub procedure: String,
    pub errors_pct: Vec<f64>,
    pub geometric_mean: f64,
}

/// Full experiment result; serializes to the per-seed report JSON.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentReport {
    pub seed: u64,
    pub domains: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl ExperimentReport {
    pub fn row(&self, procedure: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.procedure == procedure)
    }

    /// Table mirroring the report layout: rows are procedures, columns the
    /// domains plus the geometric mean, three significant figures.
    pub fn render_table(&self) -> String {
        let mut header = vec!["procedure".to_string()];
        header.extend(self.domains.iter().cloned());
        header.push("geo mean".to_string());
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut cells = vec![r.procedure.clone()];
                cells.extend(r.errors_pct.iter().map(|&e| render::sig3(e)));
                cells.push(render::sig3(r.geometric_mean));
                cells
            })
            .collect();
        render::table(&header, &rows)
    }
}

/// Per-domain error percentages and their geometric mean for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainScores {
    pub per_domain: Vec<(String, f64)>,
    pub geometric_mean: f64,
}

/// Test-set classification error in percent on each domain, clamped below at
/// [`ERROR_CLAMP_PCT`] before the geometric mean.
pub fn evaluate_model(
    model: &ToyModel,
    domains: &[&SyntheticDomain],
) -> Result<DomainScores, ToyError> {
    let mut per_domain = Vec::with_capacity(domains.len());
    for domain in domains {
        if domain.input_dim != model.input_dim() || domain.num_classes != model.num_classes() {
            return Err(ToyError::DimensionMismatch {
                context: format!("evaluating on domain {:?}", domain.name),
            });
        }
        let test = domain.test_samples();
        let wrong = test
            .iter()
            .filter(|s| model.predict(&s.x) != s.label)
            .count();
        let pct = 100.0 * wrong as f64 / test.len() as f64;
        per_domain.push((domain.name.clone(), pct.max(ERROR_CLAMP_PCT)));
    }
    let values: Vec<f64> = per_domain.iter().map(|(_, e)| *e).collect();
    let geometric_mean = geometric_mean(&values)?;
    Ok(DomainScores {
        per_domain,
        geometric_mean,
    })
}

/// Report plus the trained models behind each row, as checkpoints keyed by
/// row name.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub artifacts: Vec<(String, Checkpoint)>,
}

/// Executes the full pipeline for one seed: pretrain on the base domain,
/// then produce every declared procedure row. Deterministic: identical
/// (config, seed) pairs yield identical reports and artifacts.
pub fn run_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<ExperimentRun, ToyError> {
    cfg.validate()?;
    let domains = make_domains(
        seed,
        &cfg.domains,
        cfg.model.input_dim,
        cfg.model.num_classes,
    )?;
    let domain_refs: Vec<&SyntheticDomain> = domains.iter().collect();
    let shifted: Vec<&SyntheticDomain> = domains[1..].iter().collect();

    let init = ToyModel::init(
        cfg.model.input_dim,
        &cfg.model.hidden_dims,
        cfg.model.num_classes,
        derive_seed(seed, "init"),
    )?;
    let pretrained = train(
        &init,
        &domains[0],
        &cfg.pretrain.to_train_config(derive_seed(seed, "pretrain")),
        None,
    )?
    .model;

    let ft = |seed: u64| cfg.finetune.to_train_config(seed);
    let reference = if cfg.finetune.lwf_weight > 0.0 {
        Some(&pretrained)
    } else {
        None
    };

    // Experts are shared by three procedures; train them once (in parallel).
    let needs_experts = cfg.procedures.iter().any(|p| {
        matches!(
            p,
            Procedure::Experts | Procedure::PairwiseAverage | Procedure::Aode
        )
    });
    let aode = if needs_experts {
        Some(aode_pipeline(
            &pretrained,
            &shifted,
            &ft(derive_seed(seed, "finetune")),
            reference,
        )?)
    } else {
        None
    };

    let mut rows = Vec::new();
    let mut artifacts = Vec::new();
    let push_row = |name: String,
                        model: &ToyModel,
                        rows: &mut Vec<ReportRow>,
                        artifacts: &mut Vec<(String, Checkpoint)>|
     -> Result<(), ToyError> {
        let scores = evaluate_model(model, &domain_refs)?;
        rows.push(ReportRow {
            procedure: name.clone(),
            errors_pct: scores.per_domain.iter().map(|(_, e)| *e).collect(),
            geometric_mean: scores.geometric_mean,
        });
        let mut ckpt = model.to_checkpoint();
        ckpt.set_metadata("procedure", name.clone());
        ckpt.set_metadata("seed", seed.to_string());
        artifacts.push((name, ckpt));
        Ok(())
    };

    for procedure in &cfg.procedures {
        match procedure {
            Procedure::Pretrained => {
                push_row("pretrained".to_string(), &pretrained, &mut rows, &mut artifacts)?;
            }
            Procedure::Experts => {
                let aode = aode.as_ref().expect("experts trained");
                for (name, expert) in &aode.experts {
                    push_row(format!("expert:{name}"), expert, &mut rows, &mut artifacts)?;
                }
            }
            Procedure::Sequential => {
                for order in &cfg.sequential_orders {
                    let chain_domains: Vec<&SyntheticDomain> = order
                        .iter()
                        .map(|name| {
                            domains
                                .iter()
                                .find(|d| d.name == *name)
                                .ok_or_else(|| ToyError::UnknownDomain { name: name.clone() })
                        })
                        .collect::<Result<_, _>>()?;
                    let label = format!("seq:{}", order.join(">"));
                    let chain = sequential_finetune(
                        &pretrained,
                        &chain_domains,
                        &ft(derive_seed(seed, &label)),
                        reference,
                    )?;
                    push_row(label, &chain.model, &mut rows, &mut artifacts)?;
                }
            }
            Procedure::PairwiseAverage => {
                let aode = aode.as_ref().expect("experts trained");
                let pair = &aode.experts[..2];
                let avg = average_models(pair.iter().map(|(_, m)| m))?;
                let label = format!("avg:{}+{}", pair[0].0, pair[1].0);
                push_row(label, &avg, &mut rows, &mut artifacts)?;
            }
            Procedure::Aode => {
                let aode = aode.as_ref().expect("experts trained");
                push_row("aode".to_string(), &aode.model, &mut rows, &mut artifacts)?;
            }
        }
    }

    Ok(ExperimentRun {
        report: ExperimentReport {
            seed,
            domains: domains.iter().map(|d| d.name.clone()).collect(),
            rows,
        },
        artifacts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            model: ModelConfig {
                input_dim: 4,
                hidden_dims: vec![8, 6, 6],
                num_classes: 3,
            },
            domains: DomainsConfig {
                count: 2,
                separation: 2.0,
                noise: 1.0,
                shift: 1.5,
                scale_factor: 1.1,
                train_samples: 256,
                test_samples: 192,
                label_permutation: false,
            },
            pretrain: PhaseConfig {
                steps: 120,
                batch_size: 16,
                lr_max: 5e-3,
                cut_frac: 0.15,
                ratio: 32.0,
                llrd_decay: 1.0,
                lwf_weight: 0.0,
                freeze: Vec::new(),
            },
            finetune: PhaseConfig {
                steps: 60,
                batch_size: 16,
                lr_max: 2e-3,
                cut_frac: 0.15,
                ratio: 32.0,
                llrd_decay: 0.9,
                lwf_weight: 0.0,
                freeze: Vec::new(),
            },
            procedures: vec![
                Procedure::Pretrained,
                Procedure::Experts,
                Procedure::Sequential,
                Procedure::PairwiseAverage,
                Procedure::Aode,
            ],
            sequential_orders: vec![
                vec!["shift1".to_string(), "shift2".to_string()],
                vec!["shift2".to_string(), "shift1".to_string()],
            ],
        }
    }

    #[test]
    fn report_has_one_row_per_declared_procedure() {
        let cfg = tiny_config();
        let run = run_experiment(&cfg, 0).unwrap();
        let names: Vec<&str> = run.report.rows.iter().map(|r| r.procedure.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "pretrained",
                "expert:shift1",
                "expert:shift2",
                "seq:shift1>shift2",
                "seq:shift2>shift1",
                "avg:shift1+shift2",
                "aode"
            ]
        );
        assert_eq!(run.report.domains, vec!["base", "shift1", "shift2"]);
        for row in &run.report.rows {
            assert_eq!(row.errors_pct.len(), 3);
            assert!(row.geometric_mean >= ERROR_CLAMP_PCT);
        }
        assert_eq!(run.artifacts.len(), run.report.rows.len());
    }

    #[test]
    fn experiment_is_deterministic() {
        let cfg = tiny_config();
        let a = run_experiment(&cfg, 3).unwrap();
        let b = run_experiment(&cfg, 3).unwrap();
        assert_eq!(a.report, b.report);
        let ja = serde_json::to_string(&a.report).unwrap();
        let jb = serde_json::to_string(&b.report).unwrap();
        assert_eq!(ja, jb);
        for ((na, ca), (nb, cb)) in a.artifacts.iter().zip(&b.artifacts) {
            assert_eq!(na, nb);
            assert!(ca.bits_eq(cb));
        }
    }

    #[test]
    fn pretrained_row_matches_direct_evaluation() {
        let cfg = tiny_config();
        let run = run_experiment(&cfg, 1).unwrap();
        let pretrained_row = run.report.row("pretrained").unwrap();
        let ckpt = &run
            .artifacts
            .iter()
            .find(|(n, _)| n == "pretrained")
            .unwrap()
            .1;
        let model = ToyModel::from_checkpoint(ckpt).unwrap();
        let domains = make_domains(1, &cfg.domains, 4, 3).unwrap();
        let refs: Vec<&SyntheticDomain> = domains.iter().collect();
        let scores = evaluate_model(&model, &refs).unwrap();
        assert_eq!(pretrained_row.geometric_mean, scores.geometric_mean);
    }

    #[test]
    fn untrained_model_sits_at_chance() {
        let cfg = tiny_config();
        let domains = make_domains(5, &cfg.domains, 4, 3).unwrap();
        let refs: Vec<&SyntheticDomain> = domains.iter().collect();
        let model = ToyModel::init(4, &[8, 6, 6], 3, 99).unwrap();
        let scores = evaluate_model(&model, &refs).unwrap();
        let chance = 100.0 * (1.0 - 1.0 / 3.0);
        for (name, err) in &scores.per_domain {
            assert!(
                (err - chance).abs() <= 5.0,
                "domain {name}: error {err} vs chance {chance}"
            );
        }
    }

    #[test]
    fn base_trained_model_degrades_on_shifted_domains() {
        let cfg = tiny_config();
        let run = run_experiment(&cfg, 2).unwrap();
        let row = run.report.row("pretrained").unwrap();
        let base_err = row.errors_pct[0];
        for (i, err) in row.errors_pct.iter().enumerate().skip(1) {
            assert!(
                *err > base_err,
                "shifted domain {i} error {err} not above base {base_err}"
            );
        }
    }

    #[test]
    fn config_validation_names_fields() {
        let mut cfg = tiny_config();
        cfg.sequential_orders = vec![vec!["shift9".to_string()]];
        assert!(matches!(
            cfg.validate(),
            Err(ToyError::UnknownDomain { .. })
        ));

        let mut cfg = tiny_config();
        cfg.procedures.clear();
        assert!(matches!(
            cfg.validate(),
            Err(ToyError::InvalidConfig { ref field, .. }) if field == "procedures"
        ));

        let err = ExperimentConfig::from_json("{}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("model"), "error should name the field: {msg}");
    }

    #[test]
    fn evaluate_model_clamps_perfect_scores() {
        // An oracle-like model on a trivially separable domain: train long
        // enough on huge separation to hit zero test error, then check the
        // clamp.
        let cfg = ExperimentConfig {
            domains: DomainsConfig {
                separation: 12.0,
                ..tiny_config().domains
            },
            ..tiny_config()
        };
        let domains = make_domains(7, &cfg.domains, 4, 3).unwrap();
        let init = ToyModel::init(4, &[8, 6, 6], 3, 1).unwrap();
        let trained = train(
            &init,
            &domains[0],
            &cfg.pretrain.to_train_config(11),
            None,
        )
        .unwrap()
        .model;
        let scores = evaluate_model(&trained, &[&domains[0]]).unwrap();
        assert_eq!(scores.per_domain[0].1, ERROR_CLAMP_PCT);
        assert_eq!(scores.geometric_mean, ERROR_CLAMP_PCT);
    }
}
