//! Weighted linear interpolation of corresponding parameters across expert
//! checkpoints, the combination step that turns per-domain experts into a
//! single model.
//!
//! Element sums are accumulated in extended (double-double) precision over a
//! canonical ordering of the weighted contributions, so the output is
//! bit-reproducible and invariant under joint permutation of the
//! (checkpoint, weight) pairs.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::checkpoint::{
    validate_compat, Checkpoint, CheckpointError, DType, Mismatch, TensorData, TensorRecord,
};
use crate::glob::glob_match;
use crate::par::par_map;

/// Weights must sum to 1 within this tolerance; there is no silent
/// renormalization.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MergeError {
    #[error("no input checkpoints")]
    EmptyInput,
    #[error("expected {inputs} weights, got {weights}")]
    WeightCountMismatch { inputs: usize, weights: usize },
    #[error("weight {index} is {value}, weights must be non-negative and finite")]
    InvalidWeight { index: usize, value: f64 },
    #[error("weights must sum to 1 (got {sum})")]
    WeightSum { sum: f64 },
    #[error("alpha must lie in [0, 1], got {0}")]
    AlphaOutOfRange(f64),
    #[error("base index {base} out of range for {inputs} inputs")]
    BadBaseIndex { base: usize, inputs: usize },
    #[error("incompatible checkpoints: {}", format_mismatches(mismatches))]
    Incompatible { mismatches: Vec<Mismatch> },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

fn format_mismatches(mismatches: &[Mismatch]) -> String {
    mismatches
        .iter()
        .map(|m| format!("{} ({})", m.tensor, m.reason))
        .collect::<Vec<_>>()
        .join(", ")
}

/// How a set of checkpoints is combined.
#[derive(Debug, Clone)]
pub struct MergeSpec {
    /// One non-negative weight per input; must sum to 1.
    pub weights: Vec<f64>,
    /// Tensors matching the glob are averaged; everything else is copied
    /// verbatim from the base checkpoint. `None` averages every tensor.
    pub include: Option<String>,
    /// Index of the checkpoint that supplies excluded tensors and the output
    /// tensor order.
    pub base_index: usize,
}

impl MergeSpec {
    /// Equal weighting over `n` experts, averaging every tensor.
    pub fn equal(n: usize) -> Self {
        Self {
            weights: vec![1.0 / n as f64; n],
            include: None,
            base_index: 0,
        }
    }

    pub fn with_weights(weights: Vec<f64>) -> Self {
        Self {
            weights,
            include: None,
            base_index: 0,
        }
    }

    fn validate(&self, inputs: usize) -> Result<(), MergeError> {
        if inputs == 0 {
            return Err(MergeError::EmptyInput);
        }
        if self.weights.len() != inputs {
            return Err(MergeError::WeightCountMismatch {
                inputs,
                weights: self.weights.len(),
            });
        }
        if let Some((index, &value)) = self
            .weights
            .iter()
            .enumerate()
            .find(|(_, &w)| !(w.is_finite() && w >= 0.0))
        {
            return Err(MergeError::InvalidWeight { index, value });
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(MergeError::WeightSum { sum });
        }
        if self.base_index >= inputs {
            return Err(MergeError::BadBaseIndex {
                base: self.base_index,
                inputs,
            });
        }
        Ok(())
    }

    fn includes(&self, name: &str) -> bool {
        match &self.include {
            Some(pattern) => glob_match(pattern, name),
            None => true,
        }
    }
}

// Error-free transforms (Knuth / Dekker). `two_product` relies on fused
// multiply-add, which Rust guarantees to be correctly rounded.
#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline]
fn two_product(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let err = a.mul_add(b, -p);
    (p, err)
}

/// Weighted sum of one element across experts.
///
/// Zero weights contribute exactly nothing and are dropped. If every
/// surviving value carries the same bit pattern the weighted average is that
/// value by definition (weights sum to 1), and it is returned exactly; this
/// makes one-hot weights and N-identical-input merges reproduce their input
/// bit for bit. Otherwise the weighted contributions are sorted into a
/// canonical order and accumulated in double-double precision with a single
/// final rounding.
fn combine_element(scratch: &mut Vec<(f64, f64)>, pairs: &[(f64, f64)]) -> f64 {
    scratch.clear();
    let mut first_bits: Option<u64> = None;
    let mut all_same = true;
    for &(w, x) in pairs {
        if w == 0.0 {
            continue;
        }
        match first_bits {
            None => first_bits = Some(x.to_bits()),
            Some(b) if b != x.to_bits() => all_same = false,
            _ => {}
        }
        scratch.push(two_product(w, x));
    }
    let Some(bits) = first_bits else { return 0.0 };
    if all_same {
        return f64::from_bits(bits);
    }
    scratch.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for &(p, perr) in scratch.iter() {
        let (s, err) = two_sum(sum, p);
        sum = s;
        comp += err + perr;
    }
    sum + comp
}

fn merge_tensor(
    name: &str,
    records: &[&TensorRecord],
    weights: &[f64],
) -> Result<TensorRecord, MergeError> {
    let len = records[0].len();
    let mut pairs = vec![(0.0f64, 0.0f64); records.len()];
    let mut scratch = Vec::with_capacity(records.len());
    let mut out = Vec::with_capacity(len);
    for i in 0..len {
        for (slot, (&w, r)) in pairs.iter_mut().zip(weights.iter().zip(records)) {
            *slot = (w, r.data().get_f64(i));
        }
        out.push(combine_element(&mut scratch, &pairs));
    }
    // f32 -> f64 is exact, so casting the f64 result back preserves the
    // identity and one-hot fixed points for f32 payloads too.
    let data = match records[0].dtype() {
        DType::F64 => TensorData::F64(out),
        DType::F32 => TensorData::F32(out.into_iter().map(|x| x as f32).collect()),
    };
    Ok(TensorRecord::new(name, records[0].shape().to_vec(), data)?)
}

/// Linear interpolation of corresponding parameters across `ckpts`:
/// `out[i] = sum_k weights[k] * ckpt_k[i]`, accumulated in 64-bit-or-better
/// precision and cast back to the tensor's storage dtype. Tensors excluded by
/// the include filter are copied verbatim from the base checkpoint. Output
/// metadata records the input count and weights.
pub fn average_experts(ckpts: &[&Checkpoint], spec: &MergeSpec) -> Result<Checkpoint, MergeError> {
    spec.validate(ckpts.len())?;
    if ckpts.len() >= 2 {
        let report = validate_compat(ckpts)?;
        if !report.compatible() {
            return Err(MergeError::Incompatible {
                mismatches: report.mismatches,
            });
        }
    }

    let base = ckpts[spec.base_index];
    let jobs: Vec<&TensorRecord> = base.tensors().iter().collect();
    let merged = par_map(jobs, |base_record| -> Result<TensorRecord, MergeError> {
        let name = base_record.name();
        if !spec.includes(name) {
            return Ok(base_record.clone());
        }
        let records: Vec<&TensorRecord> = ckpts
            .iter()
            .map(|c| c.get(name).expect("compat-checked"))
            .collect();
        merge_tensor(name, &records, &spec.weights)
    });

    let mut tensors = Vec::with_capacity(merged.len());
    for record in merged {
        tensors.push(record?);
    }
    let mut out = Checkpoint::new(tensors)?;
    out.set_metadata("merge.num_inputs", ckpts.len().to_string());
    out.set_metadata(
        "merge.weights",
        spec.weights
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    if let Some(pattern) = &spec.include {
        out.set_metadata("merge.include", pattern.clone());
    }
    Ok(out)
}

/// Two-model convenience form: `(1 - alpha) * a + alpha * b`.
pub fn interpolate_pair(
    a: &Checkpoint,
    b: &Checkpoint,
    alpha: f64,
) -> Result<Checkpoint, MergeError> {
    if !(0.0..=1.0).contains(&alpha) || alpha.is_nan() {
        return Err(MergeError::AlphaOutOfRange(alpha));
    }
    average_experts(&[a, b], &MergeSpec::with_weights(vec![1.0 - alpha, alpha]))
}

/// Per-tensor Euclidean distances plus the global distance over all tensors,
/// accumulated in 64-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffNorm {
    pub per_tensor: BTreeMap<String, f64>,
    pub global: f64,
}

/// Euclidean distance between corresponding tensors, a cheap diagnostic for
/// how far two experts drifted apart in parameter space.
pub fn diff_norm(a: &Checkpoint, b: &Checkpoint) -> Result<DiffNorm, MergeError> {
    let report = validate_compat(&[a, b])?;
    if !report.compatible() {
        return Err(MergeError::Incompatible {
            mismatches: report.mismatches,
        });
    }
    let mut per_tensor = BTreeMap::new();
    let mut total = 0.0f64;
    for ta in a.tensors() {
        let tb = b.get(ta.name()).expect("compat-checked");
        let mut sq = 0.0f64;
        for i in 0..ta.len() {
            let d = ta.data().get_f64(i) - tb.data().get_f64(i);
            sq += d * d;
        }
        per_tensor.insert(ta.name().to_string(), sq.sqrt());
        total += sq;
    }
    Ok(DiffNorm {
        per_tensor,
        global: total.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::TensorData;

    fn ckpt_f64(values: &[(&str, Vec<f64>)]) -> Checkpoint {
        Checkpoint::new(
            values
                .iter()
                .map(|(n, v)| {
                    TensorRecord::new(*n, vec![v.len() as u64], TensorData::F64(v.clone()))
                        .unwrap()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn arithmetic_mean_of_two() {
        let a = ckpt_f64(&[("w", vec![1.0, 2.0])]);
        let b = ckpt_f64(&[("w", vec![3.0, 4.0])]);
        let out = average_experts(&[&a, &b], &MergeSpec::equal(2)).unwrap();
        let TensorData::F64(v) = out.get("w").unwrap().data() else {
            panic!("dtype")
        };
        assert_eq!(v, &vec![2.0, 3.0]);
    }

    #[test]
    fn identical_inputs_reproduce_bit_exactly() {
        let a = ckpt_f64(&[("w", vec![1.0, std::f64::consts::PI, -0.125, 1e-300])]);
        for n in [1usize, 2, 3, 5] {
            let inputs: Vec<&Checkpoint> = std::iter::repeat(&a).take(n).collect();
            let out = average_experts(&inputs, &MergeSpec::equal(n)).unwrap();
            assert!(
                out.get("w").unwrap().bits_eq(a.get("w").unwrap()),
                "n = {n}"
            );
        }
    }

    #[test]
    fn one_hot_weights_reproduce_input() {
        let a = ckpt_f64(&[("w", vec![0.1, -7.25])]);
        let b = ckpt_f64(&[("w", vec![9.5, 2.0 / 3.0])]);
        let first = average_experts(&[&a, &b], &MergeSpec::with_weights(vec![1.0, 0.0])).unwrap();
        assert!(first.get("w").unwrap().bits_eq(a.get("w").unwrap()));
        let second = average_experts(&[&a, &b], &MergeSpec::with_weights(vec![0.0, 1.0])).unwrap();
        assert!(second.get("w").unwrap().bits_eq(b.get("w").unwrap()));
    }

    #[test]
    fn weight_sum_enforced() {
        let a = ckpt_f64(&[("w", vec![1.0])]);
        let b = ckpt_f64(&[("w", vec![2.0])]);
        let err =
            average_experts(&[&a, &b], &MergeSpec::with_weights(vec![0.5, 0.6])).unwrap_err();
        assert!(matches!(err, MergeError::WeightSum { .. }));
        let err = average_experts(&[&a, &b], &MergeSpec::with_weights(vec![1.5, -0.5]))
            .unwrap_err();
        assert!(matches!(err, MergeError::InvalidWeight { .. }));
    }

    #[test]
    fn incompatible_inputs_rejected() {
        let a = ckpt_f64(&[("w", vec![1.0, 2.0])]);
        let b = ckpt_f64(&[("w", vec![1.0, 2.0, 3.0])]);
        let err = average_experts(&[&a, &b], &MergeSpec::equal(2)).unwrap_err();
        assert!(matches!(err, MergeError::Incompatible { .. }));
    }

    #[test]
    fn empty_input_rejected() {
        let err = average_experts(&[], &MergeSpec::equal(1)).unwrap_err();
        assert!(matches!(err, MergeError::EmptyInput));
    }

    #[test]
    fn include_filter_copies_excluded_from_base() {
        let a = ckpt_f64(&[("enc.w", vec![0.0]), ("out.w", vec![10.0])]);
        let b = ckpt_f64(&[("enc.w", vec![2.0]), ("out.w", vec![50.0])]);
        let spec = MergeSpec {
            weights: vec![0.5, 0.5],
            include: Some("enc.*".to_string()),
            base_index: 0,
        };
        let out = average_experts(&[&a, &b], &spec).unwrap();
        assert_eq!(out.get("enc.w").unwrap().data().get_f64(0), 1.0);
        assert_eq!(out.get("out.w").unwrap().data().get_f64(0), 10.0);
        assert_eq!(out.metadata().get("merge.include").unwrap(), "enc.*");
    }

    #[test]
    fn interpolate_endpoints_exact() {
        let a = ckpt_f64(&[("w", vec![0.3, -1.75])]);
        let b = ckpt_f64(&[("w", vec![11.0, 0.6])]);
        assert!(interpolate_pair(&a, &b, 0.0)
            .unwrap()
            .get("w")
            .unwrap()
            .bits_eq(a.get("w").unwrap()));
        assert!(interpolate_pair(&a, &b, 1.0)
            .unwrap()
            .get("w")
            .unwrap()
            .bits_eq(b.get("w").unwrap()));
        assert!(interpolate_pair(&a, &b, 1.5).is_err());
        assert!(interpolate_pair(&a, &b, f64::NAN).is_err());
    }

    #[test]
    fn interpolate_linear_form() {
        let a = ckpt_f64(&[("w", vec![0.0, 10.0])]);
        let b = ckpt_f64(&[("w", vec![10.0, 0.0])]);
        let out = interpolate_pair(&a, &b, 0.25).unwrap();
        let TensorData::F64(v) = out.get("w").unwrap().data() else {
            panic!("dtype")
        };
        assert_eq!(v, &vec![2.5, 7.5]);
    }

    #[test]
    fn permutation_invariance_bit_exact() {
        let a = ckpt_f64(&[("w", vec![0.1, 1.0 / 3.0, -2.5])]);
        let b = ckpt_f64(&[("w", vec![0.7, 0.2, 1e10])]);
        let c = ckpt_f64(&[("w", vec![-0.3, 5.5, 1e-10])]);
        let w = vec![0.5, 0.25, 0.25];
        let out1 = average_experts(&[&a, &b, &c], &MergeSpec::with_weights(w.clone())).unwrap();
        let out2 =
            average_experts(&[&c, &a, &b], &MergeSpec::with_weights(vec![w[2], w[0], w[1]]))
                .unwrap();
        assert!(out1.get("w").unwrap().bits_eq(out2.get("w").unwrap()));
    }

    #[test]
    fn diff_norm_pythagorean() {
        let a = ckpt_f64(&[("w", vec![0.0, 0.0])]);
        let b = ckpt_f64(&[("w", vec![3.0, 4.0])]);
        let d = diff_norm(&a, &b).unwrap();
        assert_eq!(d.per_tensor["w"], 5.0);
        assert_eq!(d.global, 5.0);
        let zero = diff_norm(&a, &a).unwrap();
        assert_eq!(zero.global, 0.0);
    }

    #[test]
    fn f32_payloads_average_in_f64() {
        let rec = |v: Vec<f32>| {
            Checkpoint::new(vec![TensorRecord::new(
                "w",
                vec![v.len() as u64],
                TensorData::F32(v),
            )
            .unwrap()])
            .unwrap()
        };
        let a = rec(vec![1.0, 2.0]);
        let b = rec(vec![3.0, 4.0]);
        let out = average_experts(&[&a, &b], &MergeSpec::equal(2)).unwrap();
        let TensorData::F32(v) = out.get("w").unwrap().data() else {
            panic!("dtype")
        };
        assert_eq!(v, &vec![2.0f32, 3.0]);
    }
}
