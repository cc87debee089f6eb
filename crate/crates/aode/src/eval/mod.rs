//! Evaluation stack: text normalization, word error rate, and multi-domain
//! aggregation via the geometric mean.

mod normalize;
mod wer;

pub use normalize::{normalize_text, tokenize, NormalizationConfig};
pub use wer::{corpus_wer, word_error_rate, WerBreakdown};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::render;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("reference is empty; pool empty references at corpus level")]
    EmptyReference,
    #[error("corpus has no utterances")]
    EmptyCorpus,
    #[error("every reference in the corpus is empty")]
    AllReferencesEmpty,
    #[error("geometric mean of an empty list")]
    EmptyGeometricMean,
    #[error("geometric mean requires positive values, got {0}")]
    NonPositiveValue(f64),
    #[error("report has no domains")]
    EmptyReport,
    #[error("invalid normalization config: {0}")]
    InvalidNormalizationConfig(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected \"<utt_id>\\t<transcript>\"")]
    MissingTab { path: String, line: usize },
    #[error("{path}:{line}: duplicate utterance id {id:?}")]
    DuplicateUtteranceId {
        path: String,
        line: usize,
        id: String,
    },
    #[error(
        "utterance ids do not align: missing in hypothesis: [{}]; missing in reference: [{}]",
        missing_in_hyp.join(", "),
        missing_in_ref.join(", ")
    )]
    UnmatchedIds {
        missing_in_hyp: Vec<String>,
        missing_in_ref: Vec<String>,
    },
}

/// exp of the mean of logs, computed in 64-bit. Biased toward no domain in
/// particular, unlike the arithmetic mean over a wide WER spread.
pub fn geometric_mean(values: &[f64]) -> Result<f64, EvalError> {
    if values.is_empty() {
        return Err(EvalError::EmptyGeometricMean);
    }
    let mut log_sum = 0.0f64;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        if !(v > 0.0) || !v.is_finite() {
            return Err(EvalError::NonPositiveValue(v));
        }
        log_sum += v.ln();
        min = min.min(v);
        max = max.max(v);
    }
    if min == max {
        // The mean of identical values is that value; skip the ln/exp round
        // trip so the identity holds exactly.
        return Ok(min);
    }
    // The true mean always lies inside the input range; keep the rounded
    // result there too.
    Ok((log_sum / values.len() as f64).exp().clamp(min, max))
}

/// Per-domain corpus breakdowns plus the geometric mean over the per-domain
/// WER percentages. The mean is undefined (None) when any domain scored an
/// exact zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_domain: BTreeMap<String, WerBreakdown>,
    pub geometric_mean: Option<f64>,
}

/// Assembles a report from per-domain breakdowns.
pub fn eval_report(per_domain: BTreeMap<String, WerBreakdown>) -> Result<EvalReport, EvalError> {
    if per_domain.is_empty() {
        return Err(EvalError::EmptyReport);
    }
    let percentages: Vec<f64> = per_domain.values().map(|b| 100.0 * b.wer()).collect();
    let geometric_mean = if percentages.iter().any(|&p| p == 0.0) {
        None
    } else {
        Some(geometric_mean(&percentages)?)
    };
    Ok(EvalReport {
        per_domain,
        geometric_mean,
    })
}

/// JSON wire form of a [`WerBreakdown`], with the derived rate included.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BreakdownJson {
    pub substitutions: u64,
    pub deletions: u64,
    pub insertions: u64,
    pub ref_len: u64,
    pub wer: f64,
}

impl From<&WerBreakdown> for BreakdownJson {
    fn from(b: &WerBreakdown) -> Self {
        Self {
            substitutions: b.substitutions,
            deletions: b.deletions,
            insertions: b.insertions,
            ref_len: b.ref_len,
            wer: b.wer(),
        }
    }
}

/// Declared JSON schema for evaluation reports: full-precision numbers, with
/// the geometric mean over WER percentages (null when undefined).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportJson {
    pub domains: BTreeMap<String, BreakdownJson>,
    pub geometric_mean: Option<f64>,
}

impl EvalReport {
    pub fn to_json(&self) -> ReportJson {
        ReportJson {
            domains: self
                .per_domain
                .iter()
                .map(|(name, b)| (name.clone(), BreakdownJson::from(b)))
                .collect(),
            geometric_mean: self.geometric_mean,
        }
    }

    /// Human-readable table: WERs as percentages at three significant
    /// figures, domains in map order, geometric mean last.
    pub fn render_table(&self) -> String {
        let mut header = vec!["".to_string()];
        let mut row = vec!["wer %".to_string()];
        for (name, b) in &self.per_domain {
            header.push(name.clone());
            row.push(render::sig3(100.0 * b.wer()));
        }
        header.push("geo mean".to_string());
        row.push(match self.geometric_mean {
            Some(g) => render::sig3(g),
            None => "undefined".to_string(),
        });
        render::table(&header, &[row])
    }
}

/// Reads a transcript file: one utterance per line, `<utt_id>\t<transcript>`,
/// order preserved.
pub fn read_transcripts(path: impl AsRef<Path>) -> Result<Vec<(String, String)>, EvalError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let content = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: display.clone(),
        source,
    })?;
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for (idx, line) in content.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (id, text) = line.split_once('\t').ok_or_else(|| EvalError::MissingTab {
            path: display.clone(),
            line: idx + 1,
        })?;
        if !seen.insert(id.to_string()) {
            return Err(EvalError::DuplicateUtteranceId {
                path: display.clone(),
                line: idx + 1,
                id: id.to_string(),
            });
        }
        out.push((id.to_string(), text.to_string()));
    }
    Ok(out)
}

/// Joins reference and hypothesis transcripts on utterance id, in reference
/// order. Ids present on only one side are an error that lists them.
pub fn join_transcripts(
    refs: &[(String, String)],
    hyps: &[(String, String)],
) -> Result<Vec<(String, String, String)>, EvalError> {
    let hyp_map: BTreeMap<&str, &str> = hyps
        .iter()
        .map(|(id, text)| (id.as_str(), text.as_str()))
        .collect();
    let ref_ids: std::collections::BTreeSet<&str> =
        refs.iter().map(|(id, _)| id.as_str()).collect();
    let missing_in_hyp: Vec<String> = refs
        .iter()
        .filter(|(id, _)| !hyp_map.contains_key(id.as_str()))
        .map(|(id, _)| id.clone())
        .collect();
    let missing_in_ref: Vec<String> = hyps
        .iter()
        .filter(|(id, _)| !ref_ids.contains(id.as_str()))
        .map(|(id, _)| id.clone())
        .collect();
    if !missing_in_hyp.is_empty() || !missing_in_ref.is_empty() {
        return Err(EvalError::UnmatchedIds {
            missing_in_hyp,
            missing_in_ref,
        });
    }
    Ok(refs
        .iter()
        .map(|(id, text)| (id.clone(), text.clone(), hyp_map[id.as_str()].to_string()))
        .collect())
}

/// Normalizes and tokenizes joined transcript pairs into WER input.
pub fn prepare_pairs(
    joined: &[(String, String, String)],
    cfg: &NormalizationConfig,
) -> Vec<(Vec<String>, Vec<String>)> {
    joined
        .iter()
        .map(|(_, ref_text, hyp_text)| {
            (
                tokenize(&normalize_text(ref_text, cfg)),
                tokenize(&normalize_text(hyp_text, cfg)),
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_mean_basics() {
        assert!((geometric_mean(&[4.0, 9.0]).unwrap() - 6.0).abs() < 1e-12);
        let v = 3.7;
        assert_eq!(geometric_mean(&[v, v, v]).unwrap(), v);
        assert!(matches!(
            geometric_mean(&[]).unwrap_err(),
            EvalError::EmptyGeometricMean
        ));
        assert!(matches!(
            geometric_mean(&[1.0, 0.0]).unwrap_err(),
            EvalError::NonPositiveValue(_)
        ));
        assert!(geometric_mean(&[1.0, -2.0]).is_err());
    }

    #[test]
    fn published_rows_reproduce_printed_means() {
        let rows: [(&[f64; 5], f64); 4] = [
            (&[5.47, 28.6, 70.7, 2.15, 4.48], 10.1),
            (&[3.04, 18.2, 45.2, 2.18, 4.86], 7.67),
            (&[4.94, 18.8, 48.5, 3.35, 7.55], 10.3),
            (&[3.41, 15.7, 43.0, 3.39, 7.74], 9.04),
        ];
        for (values, expected) in rows {
            let g = geometric_mean(values).unwrap();
            assert!((g - expected).abs() <= 0.05, "{values:?} -> {g} != {expected}");
        }
    }

    #[test]
    fn report_assembly_and_undefined_mean() {
        let mut per_domain = BTreeMap::new();
        per_domain.insert(
            "a".to_string(),
            WerBreakdown {
                substitutions: 1,
                deletions: 0,
                insertions: 0,
                ref_len: 10,
            },
        );
        per_domain.insert(
            "b".to_string(),
            WerBreakdown {
                substitutions: 0,
                deletions: 2,
                insertions: 0,
                ref_len: 10,
            },
        );
        let report = eval_report(per_domain.clone()).unwrap();
        let expected = geometric_mean(&[10.0, 20.0]).unwrap();
        assert_eq!(report.geometric_mean, Some(expected));

        per_domain.insert(
            "c".to_string(),
            WerBreakdown {
                ref_len: 5,
                ..Default::default()
            },
        );
        let report = eval_report(per_domain).unwrap();
        assert_eq!(report.geometric_mean, None);
        assert!(report.render_table().contains("undefined"));

        assert!(matches!(
            eval_report(BTreeMap::new()).unwrap_err(),
            EvalError::EmptyReport
        ));
    }

    #[test]
    fn single_domain_mean_is_that_wer() {
        let mut per_domain = BTreeMap::new();
        per_domain.insert(
            "only".to_string(),
            WerBreakdown {
                substitutions: 3,
                deletions: 0,
                insertions: 0,
                ref_len: 12,
            },
        );
        let report = eval_report(per_domain).unwrap();
        let got = report.geometric_mean.unwrap();
        assert!((got - 25.0).abs() < 1e-12);
    }

    #[test]
    fn transcript_join_and_errors() {
        let refs = vec![
            ("u1".to_string(), "hello world".to_string()),
            ("u2".to_string(), "second line".to_string()),
        ];
        let hyps = vec![
            ("u2".to_string(), "second lines".to_string()),
            ("u1".to_string(), "hello word".to_string()),
        ];
        let joined = join_transcripts(&refs, &hyps).unwrap();
        assert_eq!(joined[0].0, "u1");
        assert_eq!(joined[0].2, "hello word");

        let short = vec![("u1".to_string(), "hello".to_string())];
        match join_transcripts(&refs, &short).unwrap_err() {
            EvalError::UnmatchedIds {
                missing_in_hyp,
                missing_in_ref,
            } => {
                assert_eq!(missing_in_hyp, vec!["u2"]);
                assert!(missing_in_ref.is_empty());
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn transcript_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ref.tsv");
        std::fs::write(&path, "u1\thello there\nu2\t\nu3\tlast one\n").unwrap();
        let lines = read_transcripts(&path).unwrap();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], ("u2".to_string(), String::new()));

        std::fs::write(&path, "no tab here\n").unwrap();
        assert!(matches!(
            read_transcripts(&path).unwrap_err(),
            EvalError::MissingTab { line: 1, .. }
        ));

        std::fs::write(&path, "u1\ta\nu1\tb\n").unwrap();
        assert!(matches!(
            read_transcripts(&path).unwrap_err(),
            EvalError::DuplicateUtteranceId { .. }
        ));
    }
}
