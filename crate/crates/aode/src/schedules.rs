//! Fine-tuning schedulers: a slanted triangular learning rate over steps and
//! layer-wise learning-rate decay multipliers over named parameters.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::glob::glob_match;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("lr_max must be positive, got {0}")]
    InvalidLrMax(f64),
    #[error("cut_frac must lie in (0, 1), got {0}")]
    InvalidCutFrac(f64),
    #[error("ratio must be greater than 1, got {0}")]
    InvalidRatio(f64),
    #[error("total_steps must be at least 2, got {0}")]
    InvalidTotalSteps(u64),
    #[error("cut_frac {cut_frac} with {total_steps} steps puts the peak before step 1")]
    DegenerateCut { cut_frac: f64, total_steps: u64 },
    #[error("step {step} outside [0, {total_steps}]")]
    StepOutOfRange { step: u64, total_steps: u64 },
    #[error("decay must lie in (0, 1], got {0}")]
    InvalidDecay(f64),
    #[error("num_encoder_layers must be positive")]
    NoEncoderLayers,
    #[error("parameter {name:?} matches no layer rule")]
    UnclassifiedParameter { name: String },
    #[error("rule classifies {name:?} as encoder layer {layer}, but only {layers} layers exist")]
    LayerOutOfRange {
        name: String,
        layer: usize,
        layers: usize,
    },
    #[error("unknown parameter {name:?}")]
    UnknownParameter { name: String },
}

/// Slanted triangular schedule: linear rise from `lr_max / ratio` to `lr_max`
/// at `cut = floor(cut_frac * total_steps)`, then linear descent back to the
/// floor at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StlrConfig {
    pub lr_max: f64,
    pub cut_frac: f64,
    pub ratio: f64,
    pub total_steps: u64,
}

pub const DEFAULT_CUT_FRAC: f64 = 0.15;
pub const DEFAULT_RATIO: f64 = 32.0;

impl StlrConfig {
    pub fn new(lr_max: f64, total_steps: u64) -> Result<Self, ScheduleError> {
        Self::with_shape(lr_max, DEFAULT_CUT_FRAC, DEFAULT_RATIO, total_steps)
    }

    pub fn with_shape(
        lr_max: f64,
        cut_frac: f64,
        ratio: f64,
        total_steps: u64,
    ) -> Result<Self, ScheduleError> {
        let cfg = Self {
            lr_max,
            cut_frac,
            ratio,
            total_steps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ScheduleError> {
        if !(self.lr_max.is_finite() && self.lr_max > 0.0) {
            return Err(ScheduleError::InvalidLrMax(self.lr_max));
        }
        if !(self.cut_frac > 0.0 && self.cut_frac < 1.0) {
            return Err(ScheduleError::InvalidCutFrac(self.cut_frac));
        }
        if !(self.ratio.is_finite() && self.ratio > 1.0) {
            return Err(ScheduleError::InvalidRatio(self.ratio));
        }
        if self.total_steps < 2 {
            return Err(ScheduleError::InvalidTotalSteps(self.total_steps));
        }
        if self.cut() == 0 {
            return Err(ScheduleError::DegenerateCut {
                cut_frac: self.cut_frac,
                total_steps: self.total_steps,
            });
        }
        Ok(())
    }

    /// Step at which the schedule peaks.
    pub fn cut(&self) -> u64 {
        (self.cut_frac * self.total_steps as f64).floor() as u64
    }
}

/// Learning rate at `step`; continuous piecewise-linear with its unique
/// maximum `lr_max` at the cut and exactly `lr_max / ratio` at both ends.
///
/// The descent denominator is `total_steps - cut`. With an integral peak
/// position that equals the textbook `cut * (1/cut_frac - 1)`; when the
/// floor in `cut` truncates, the textbook form runs past zero before the
/// last step, so the true remaining step count is used instead.
pub fn stlr_lr(step: u64, cfg: &StlrConfig) -> Result<f64, ScheduleError> {
    cfg.validate()?;
    if step > cfg.total_steps {
        return Err(ScheduleError::StepOutOfRange {
            step,
            total_steps: cfg.total_steps,
        });
    }
    let cut = cfg.cut();
    let p = if step < cut {
        step as f64 / cut as f64
    } else {
        1.0 - (step - cut) as f64 / (cfg.total_steps - cut) as f64
    };
    Ok(cfg.lr_max * (1.0 + p * (cfg.ratio - 1.0)) / cfg.ratio)
}

/// Classification of one parameter name.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerClass {
    Encoder(usize),
    NonEncoder,
}

/// Ordered list of (name-glob, classification) rules; first match wins.
/// Layer naming is model-specific, so the rule set is data, not code.
#[derive(Debug, Clone, Default)]
pub struct LayerRule {
    rules: Vec<(String, LayerClass)>,
}

impl LayerRule {
    pub fn new(rules: Vec<(String, LayerClass)>) -> Self {
        Self { rules }
    }

    /// Rules for names shaped `<prefix><index>.*`, e.g. `enc.0.weight`, with
    /// a catch-all mapping everything else to non-encoder.
    pub fn indexed_prefix(prefix: &str, num_layers: usize) -> Self {
        let mut rules: Vec<(String, LayerClass)> = (0..num_layers)
            .map(|i| (format!("{prefix}{i}.*"), LayerClass::Encoder(i)))
            .collect();
        rules.push(("*".to_string(), LayerClass::NonEncoder));
        Self { rules }
    }

    pub fn classify(&self, name: &str) -> Option<LayerClass> {
        self.rules
            .iter()
            .find(|(pattern, _)| glob_match(pattern, name))
            .map(|(_, class)| *class)
    }
}

/// Per-parameter learning-rate multipliers. The top encoder layer gets 1.0,
/// each lower layer decays by a constant factor, and non-encoder parameters
/// inherit the lowest encoder layer's multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRateMap {
    multipliers: BTreeMap<String, f64>,
    ladder: Vec<f64>,
    pub decay: f64,
    pub num_encoder_layers: usize,
}

impl LayerRateMap {
    pub fn multiplier(&self, name: &str) -> Result<f64, ScheduleError> {
        self.multipliers
            .get(name)
            .copied()
            .ok_or_else(|| ScheduleError::UnknownParameter {
                name: name.to_string(),
            })
    }

    /// Multiplier ladder indexed by encoder layer, bottom to top.
    pub fn ladder(&self) -> &[f64] {
        &self.ladder
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.multipliers.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.multipliers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multipliers.is_empty()
    }
}

/// Builds the multiplier map for `param_names`. The ladder is produced by
/// repeated multiplication downward from the top layer, so the ratio between
/// adjacent layers is exactly `decay`.
pub fn llrd_multipliers(
    param_names: &[String],
    layer_rule: &LayerRule,
    decay: f64,
    num_encoder_layers: usize,
) -> Result<LayerRateMap, ScheduleError> {
    if !(decay > 0.0 && decay <= 1.0) {
        return Err(ScheduleError::InvalidDecay(decay));
    }
    if num_encoder_layers == 0 {
        return Err(ScheduleError::NoEncoderLayers);
    }

    let mut ladder = vec![0.0f64; num_encoder_layers];
    ladder[num_encoder_layers - 1] = 1.0;
    for i in (0..num_encoder_layers.saturating_sub(1)).rev() {
        ladder[i] = ladder[i + 1] * decay;
    }

    let mut multipliers = BTreeMap::new();
    for name in param_names {
        let class = layer_rule
            .classify(name)
            .ok_or_else(|| ScheduleError::UnclassifiedParameter { name: name.clone() })?;
        let m = match class {
            LayerClass::Encoder(i) => {
                *ladder.get(i).ok_or_else(|| ScheduleError::LayerOutOfRange {
                    name: name.clone(),
                    layer: i,
                    layers: num_encoder_layers,
                })?
            }
            LayerClass::NonEncoder => ladder[0],
        };
        multipliers.insert(name.clone(), m);
    }
    Ok(LayerRateMap {
        multipliers,
        ladder,
        decay,
        num_encoder_layers,
    })
}

/// Per-parameter learning rate at `step`: the STLR value scaled by the
/// parameter's LLRD multiplier.
pub fn effective_lr(
    step: u64,
    param_name: &str,
    cfg: &StlrConfig,
    rates: &LayerRateMap,
) -> Result<f64, ScheduleError> {
    Ok(stlr_lr(step, cfg)? * rates.multiplier(param_name)?)
}

/// "step,lr" CSV covering every step from 0 to `total_steps` inclusive.
pub fn schedule_csv(cfg: &StlrConfig) -> Result<String, ScheduleError> {
    cfg.validate()?;
    let mut out = String::from("step,lr\n");
    for step in 0..=cfg.total_steps {
        out.push_str(&format!("{step},{}\n", stlr_lr(step, cfg)?));
    }
    Ok(out)
}

/// "name,multiplier" CSV in map order.
pub fn multipliers_csv(rates: &LayerRateMap) -> String {
    let mut out = String::from("name,multiplier\n");
    for (name, m) in rates.iter() {
        out.push_str(&format!("{name},{m}\n"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr_max: f64, cut_frac: f64, ratio: f64, t: u64) -> StlrConfig {
        StlrConfig::with_shape(lr_max, cut_frac, ratio, t).unwrap()
    }

    #[test]
    fn stlr_endpoints_and_peak() {
        let c = cfg(3e-4, 0.1, 32.0, 1000);
        assert_eq!(stlr_lr(0, &c).unwrap(), c.lr_max / c.ratio);
        assert_eq!(stlr_lr(c.cut(), &c).unwrap(), c.lr_max);
        let end = stlr_lr(1000, &c).unwrap();
        let floor = c.lr_max / c.ratio;
        assert!((end - floor).abs() <= 1e-12 * floor, "end = {end}");
        // Truncated cut positions keep the floor value and positivity too.
        let odd = cfg(3e-4, 0.15, 32.0, 10);
        assert_eq!(stlr_lr(10, &odd).unwrap(), odd.lr_max / odd.ratio);
        for step in 0..=10 {
            assert!(stlr_lr(step, &odd).unwrap() > 0.0);
        }
    }

    #[test]
    fn stlr_monotone_and_unique_max() {
        let c = cfg(1e-3, 0.15, 32.0, 200);
        let cut = c.cut();
        let values: Vec<f64> = (0..=200).map(|s| stlr_lr(s, &c).unwrap()).collect();
        for s in 1..=200u64 {
            let (prev, curr) = (values[(s - 1) as usize], values[s as usize]);
            if s <= cut {
                assert!(curr > prev, "not rising at {s}");
            } else {
                assert!(curr < prev, "not falling at {s}");
            }
        }
        let max = values.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(max, values[cut as usize]);
    }

    #[test]
    fn stlr_range_and_config_validation() {
        let c = cfg(1e-3, 0.15, 32.0, 100);
        assert!(matches!(
            stlr_lr(101, &c).unwrap_err(),
            ScheduleError::StepOutOfRange { .. }
        ));
        assert!(StlrConfig::with_shape(0.0, 0.15, 32.0, 100).is_err());
        assert!(StlrConfig::with_shape(1e-3, 1.5, 32.0, 100).is_err());
        assert!(StlrConfig::with_shape(1e-3, 0.15, 1.0, 100).is_err());
        assert!(StlrConfig::with_shape(1e-3, 0.15, 32.0, 1).is_err());
        // Peak would land before the first step.
        assert!(matches!(
            StlrConfig::with_shape(1e-3, 0.15, 32.0, 2).unwrap_err(),
            ScheduleError::DegenerateCut { .. }
        ));
    }

    fn toy_names() -> Vec<String> {
        vec![
            "enc.0.weight".into(),
            "enc.0.bias".into(),
            "enc.1.weight".into(),
            "enc.2.weight".into(),
            "out.weight".into(),
            "out.bias".into(),
        ]
    }

    #[test]
    fn llrd_three_layer_ladder() {
        let names = toy_names();
        let rule = LayerRule::indexed_prefix("enc.", 3);
        let rates = llrd_multipliers(&names, &rule, 0.9, 3).unwrap();
        assert_eq!(rates.multiplier("enc.2.weight").unwrap(), 1.0);
        assert_eq!(rates.multiplier("enc.1.weight").unwrap(), 0.9);
        assert_eq!(rates.multiplier("enc.0.weight").unwrap(), 0.9 * 0.9);
        // Non-encoder parameters take the lowest encoder multiplier.
        assert_eq!(rates.multiplier("out.weight").unwrap(), 0.9 * 0.9);
        assert_eq!(rates.multiplier("out.bias").unwrap(), 0.9 * 0.9);
    }

    #[test]
    fn llrd_decay_one_is_uniform() {
        let names = toy_names();
        let rule = LayerRule::indexed_prefix("enc.", 3);
        let rates = llrd_multipliers(&names, &rule, 1.0, 3).unwrap();
        for (_, m) in rates.iter() {
            assert_eq!(m, 1.0);
        }
    }

    #[test]
    fn llrd_deep_ladder_matches_power() {
        let names: Vec<String> = (0..18).map(|i| format!("enc.{i}.weight")).collect();
        let rule = LayerRule::indexed_prefix("enc.", 18);
        let rates = llrd_multipliers(&names, &rule, 0.9, 18).unwrap();
        let bottom = rates.multiplier("enc.0.weight").unwrap();
        assert!((bottom - 0.9f64.powi(17)).abs() < 1e-12);
        assert!((bottom - 0.1668).abs() < 5e-4);
    }

    #[test]
    fn llrd_adjacent_ratio_exact() {
        let rule = LayerRule::indexed_prefix("enc.", 12);
        let names: Vec<String> = (0..12).map(|i| format!("enc.{i}.weight")).collect();
        let rates = llrd_multipliers(&names, &rule, 0.9, 12).unwrap();
        let ladder = rates.ladder();
        for i in 0..11 {
            assert_eq!(ladder[i], ladder[i + 1] * 0.9);
        }
    }

    #[test]
    fn llrd_unclassified_name_is_error() {
        let rule = LayerRule::new(vec![("enc.*".into(), LayerClass::Encoder(0))]);
        let err =
            llrd_multipliers(&["decoder.w".to_string()], &rule, 0.9, 1).unwrap_err();
        match err {
            ScheduleError::UnclassifiedParameter { name } => assert_eq!(name, "decoder.w"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn effective_lr_is_exact_product() {
        let c = cfg(2e-3, 0.15, 32.0, 400);
        let names = toy_names();
        let rule = LayerRule::indexed_prefix("enc.", 3);
        let rates = llrd_multipliers(&names, &rule, 0.9, 3).unwrap();
        assert_eq!(
            effective_lr(c.cut(), "enc.2.weight", &c, &rates).unwrap(),
            c.lr_max
        );
        assert_eq!(
            effective_lr(c.cut(), "enc.0.weight", &c, &rates).unwrap(),
            0.9 * 0.9 * c.lr_max
        );
        for step in [0u64, 7, 60, 399] {
            let lr = stlr_lr(step, &c).unwrap();
            for name in &names {
                assert_eq!(
                    effective_lr(step, name, &c, &rates).unwrap(),
                    lr * rates.multiplier(name).unwrap()
                );
            }
        }
        assert!(matches!(
            effective_lr(0, "nope", &c, &rates).unwrap_err(),
            ScheduleError::UnknownParameter { .. }
        ));
    }

    #[test]
    fn lr_max_scaling_is_exact_for_dyadic_factors() {
        let base = cfg(1e-3, 0.15, 32.0, 300);
        for c in [0.5, 2.0, 4.0, 1024.0] {
            let scaled = cfg(base.lr_max * c, 0.15, 32.0, 300);
            for step in [0u64, 45, 46, 150, 300] {
                assert_eq!(
                    stlr_lr(step, &scaled).unwrap(),
                    stlr_lr(step, &base).unwrap() * c
                );
            }
        }
    }

    #[test]
    fn schedule_csv_shape() {
        let c = cfg(1e-3, 0.15, 32.0, 10);
        let csv = schedule_csv(&c).unwrap();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 12); // header + 11 steps
        assert_eq!(lines[0], "step,lr");
        // cut = floor(0.15 * 10) = 1, so the max sits on the step=1 row.
        let values: Vec<f64> = lines[1..]
            .iter()
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        let argmax = values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(argmax, 1);
    }
}
