//! Transcript text normalization applied before WER scoring: lowercasing,
//! punctuation stripping, contraction folding, and hesitation removal.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::EvalError;

const DEFAULT_CONTRACTIONS: &str = include_str!("../../data/contractions.tsv");
const DEFAULT_HESITATIONS: &str = include_str!("../../data/hesitations.txt");

/// Normalization pipeline settings. The default contraction table and
/// hesitation set ship as data files; both can be overridden from a JSON
/// config.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct NormalizationConfig {
    pub lowercase: bool,
    pub strip_punctuation: bool,
    /// Expanded phrase -> contraction, e.g. "do not" -> "don't". Applied
    /// longest match first. Keys must be lowercase multi-word phrases.
    pub contraction_table: BTreeMap<String, String>,
    /// Filler tokens deleted outright. Must be lowercase single tokens.
    pub hesitation_set: BTreeSet<String>,
    pub collapse_whitespace: bool,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        default_config().clone()
    }
}

fn default_config() -> &'static NormalizationConfig {
    static CONFIG: OnceLock<NormalizationConfig> = OnceLock::new();
    CONFIG.get_or_init(|| {
        let contraction_table = DEFAULT_CONTRACTIONS
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                let (expanded, short) = l.split_once('\t').expect("tab-separated data file");
                (expanded.to_string(), short.to_string())
            })
            .collect();
        let hesitation_set = DEFAULT_HESITATIONS
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::to_string)
            .collect();
        let cfg = NormalizationConfig {
            lowercase: true,
            strip_punctuation: true,
            contraction_table,
            hesitation_set,
            collapse_whitespace: true,
        };
        cfg.validate().expect("shipped defaults are valid");
        cfg
    })
}

impl NormalizationConfig {
    /// Identity pipeline: no transformation at all.
    pub fn none() -> Self {
        Self {
            lowercase: false,
            strip_punctuation: false,
            contraction_table: BTreeMap::new(),
            hesitation_set: BTreeSet::new(),
            collapse_whitespace: false,
        }
    }

    pub fn from_json(json: &str) -> Result<Self, EvalError> {
        let cfg: Self = serde_json::from_str(json)
            .map_err(|e| EvalError::InvalidNormalizationConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        for key in self.contraction_table.keys() {
            // Keys are usually multi-word phrases; single words are allowed
            // for pairs like cannot -> can't.
            if key.split_whitespace().count() == 0 {
                return Err(EvalError::InvalidNormalizationConfig(
                    "contraction key is empty".to_string(),
                ));
            }
            if *key != key.to_lowercase() {
                return Err(EvalError::InvalidNormalizationConfig(format!(
                    "contraction key {key:?} is not lowercase"
                )));
            }
        }
        for token in &self.hesitation_set {
            if token.split_whitespace().count() != 1 {
                return Err(EvalError::InvalidNormalizationConfig(format!(
                    "hesitation {token:?} is not a single token"
                )));
            }
            if *token != token.to_lowercase() {
                return Err(EvalError::InvalidNormalizationConfig(format!(
                    "hesitation {token:?} is not lowercase"
                )));
            }
        }
        Ok(())
    }
}

/// Applies the normalization pipeline in order: lowercase, punctuation strip
/// (punctuation becomes a space; apostrophes survive only between letters),
/// whitespace collapse, longest-match-first contraction folding, hesitation
/// deletion, final collapse and trim. Total function; never fails.
///
/// When `collapse_whitespace` is false the token stages still rejoin with
/// single spaces whenever the contraction table or hesitation set is
/// non-empty; with both empty, the original whitespace is left untouched.
pub fn normalize_text(text: &str, cfg: &NormalizationConfig) -> String {
    let mut s = if cfg.lowercase {
        text.to_lowercase()
    } else {
        text.to_string()
    };

    if cfg.strip_punctuation {
        s = strip_punctuation(&s);
    }

    let token_work = !cfg.contraction_table.is_empty() || !cfg.hesitation_set.is_empty();
    if !(token_work || cfg.collapse_whitespace) {
        return s;
    }

    let mut tokens: Vec<&str> = s.split_whitespace().collect();
    if !cfg.contraction_table.is_empty() {
        tokens = fold_contractions(&tokens, &cfg.contraction_table);
    }
    if !cfg.hesitation_set.is_empty() {
        tokens.retain(|t| !cfg.hesitation_set.contains(*t));
    }
    tokens.join(" ")
}

fn strip_punctuation(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            out.push(c);
        } else if (c == '\'' || c == '\u{2019}')
            && i > 0
            && i + 1 < chars.len()
            && chars[i - 1].is_alphabetic()
            && chars[i + 1].is_alphabetic()
        {
            out.push('\'');
        } else if !c.is_whitespace() {
            out.push(' ');
        } else {
            out.push(c);
        }
    }
    out
}

fn fold_contractions<'a>(
    tokens: &[&'a str],
    table: &'a BTreeMap<String, String>,
) -> Vec<&'a str> {
    // Pre-split each key once; longest phrases first so e.g. a 3-word rule
    // beats its 2-word prefix.
    let mut phrases: Vec<(Vec<&str>, &str)> = table
        .iter()
        .map(|(k, v)| (k.split_whitespace().collect(), v.as_str()))
        .collect();
    phrases.sort_by(|a, b| b.0.len().cmp(&a.0.len()));

    let mut out = Vec::with_capacity(tokens.len());
    let mut i = 0;
    'outer: while i < tokens.len() {
        for (phrase, short) in &phrases {
            if tokens[i..].len() >= phrase.len() && tokens[i..i + phrase.len()] == phrase[..] {
                out.push(*short);
                i += phrase.len();
                continue 'outer;
            }
        }
        out.push(tokens[i]);
        i += 1;
    }
    out
}

/// Whitespace tokenization of already-normalized text.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}
