//! Deterministic rule-based observation verifier.
//!
//! Decides whether a speculative observation carries the same payload as the
//! target tool's observation. Both texts are normalized, then the rules run
//! in a fixed order and the first one that fires decides:
//!
//! 1. both texts empty: reject (`similarity-reject`)
//! 2. speculation contains a refusal phrase: reject
//! 3. a multi-digit number of the target is missing from the speculation: reject
//! 4. short target (fewer than `short_answer_len` characters): accept iff the
//!    token sets are identical
//! 5. identical normalized texts: accept
//! 6. one text occurs inside the other on word boundaries: accept
//! 7. content-token coverage of the target at least `coverage_threshold`: accept
//! 8. content-token Jaccard similarity at least `jaccard_threshold`: accept
//!
//! and anything else is rejected.

mod stopwords;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub use stopwords::{REFUSAL_PATTERNS, STOPWORDS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifierConfig {
    pub coverage_threshold: f64,
    pub jaccard_threshold: f64,
    /// Targets shorter than this many characters (after normalization) need an exact token match.
    pub short_answer_len: usize,
    pub stopwords: Vec<String>,
    pub refusal_patterns: Vec<String>,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig {
            coverage_threshold: 0.72,
            jaccard_threshold: 0.55,
            short_answer_len: 5,
            stopwords: STOPWORDS.iter().map(|s| s.to_string()).collect(),
            refusal_patterns: REFUSAL_PATTERNS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl VerifierConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("coverage_threshold", self.coverage_threshold),
            ("jaccard_threshold", self.jaccard_threshold),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::param(name, format!("must be in (0, 1], got {v}")));
            }
        }
        if self.short_answer_len < 1 {
            return Err(Error::param("short_answer_len", "must be at least 1"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: VerifierConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 over the thresholds and word lists, for reproducibility metadata.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!(
            "coverage={};jaccard={};short={}\n",
            self.coverage_threshold, self.jaccard_threshold, self.short_answer_len
        ));
        for w in &self.stopwords {
            h.update(w.as_bytes());
            h.update(b"\n");
        }
        h.update(b"--\n");
        for w in &self.refusal_patterns {
            h.update(w.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    IdenticalNormalized,
    RefusalReject,
    NumericMismatchReject,
    SubstringAccept,
    ShortExactAccept,
    ShortMismatchReject,
    CoverageAccept,
    JaccardAccept,
    SimilarityReject,
}

impl Rule {
    pub fn accepts(self) -> bool {
        matches!(
            self,
            Rule::IdenticalNormalized
                | Rule::SubstringAccept
                | Rule::ShortExactAccept
                | Rule::CoverageAccept
                | Rule::JaccardAccept
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Rule::IdenticalNormalized => "identical-normalized",
            Rule::RefusalReject => "refusal-reject",
            Rule::NumericMismatchReject => "numeric-mismatch-reject",
            Rule::SubstringAccept => "substring-accept",
            Rule::ShortExactAccept => "short-exact-accept",
            Rule::ShortMismatchReject => "short-mismatch-reject",
            Rule::CoverageAccept => "coverage-accept",
            Rule::JaccardAccept => "jaccard-accept",
            Rule::SimilarityReject => "similarity-reject",
        }
    }
}

impl std::fmt::Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub accepted: bool,
    pub rule_fired: Rule,
}

impl Decision {
    fn from_rule(rule: Rule) -> Self {
        Decision {
            accepted: rule.accepts(),
            rule_fired: rule,
        }
    }
}

impl std::fmt::Display for Decision {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.accepted { "accept" } else { "reject" };
        write!(f, "{verdict} ({})", self.rule_fired)
    }
}

/// Lowercases, folds diacritics, turns punctuation into spaces and collapses whitespace.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.nfd().filter(|c| !is_combining_mark(*c)) {
        if c.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.extend(c.to_lowercase());
        } else {
            pending_space = true;
        }
    }
    // Lowercasing can itself produce combining marks (e.g. 'İ'); fold them too.
    if out.chars().any(is_combining_mark) {
        out = out.chars().filter(|c| !is_combining_mark(*c)).collect();
    }
    out
}

/// Maximal runs of two or more ASCII digits, in order of appearance.
pub fn extract_numbers(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut run = String::new();
    for c in text.chars().chain(std::iter::once(' ')) {
        if c.is_ascii_digit() {
            run.push(c);
        } else {
            if run.len() >= 2 {
                out.push(std::mem::take(&mut run));
            }
            run.clear();
        }
    }
    out
}

fn contains_words(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    format!(" {haystack} ").contains(&format!(" {needle} "))
}

pub fn verify(target_obs: &str, spec_obs: &str, config: &VerifierConfig) -> Decision {
    Decision::from_rule(decide(target_obs, spec_obs, config))
}

fn decide(target_obs: &str, spec_obs: &str, config: &VerifierConfig) -> Rule {
    let target = normalize(target_obs);
    let spec = normalize(spec_obs);

    if target.is_empty() && spec.is_empty() {
        return Rule::SimilarityReject;
    }

    if config
        .refusal_patterns
        .iter()
        .map(|p| normalize(p))
        .any(|p| contains_words(&spec, &p))
    {
        return Rule::RefusalReject;
    }

    let spec_numbers: BTreeSet<String> = extract_numbers(&spec).into_iter().collect();
    if extract_numbers(&target).iter().any(|n| !spec_numbers.contains(n)) {
        return Rule::NumericMismatchReject;
    }

    if target.chars().count() < config.short_answer_len {
        let t: BTreeSet<&str> = target.split(' ').filter(|w| !w.is_empty()).collect();
        let s: BTreeSet<&str> = spec.split(' ').filter(|w| !w.is_empty()).collect();
        return if t == s {
            Rule::ShortExactAccept
        } else {
            Rule::ShortMismatchReject
        };
    }

    if target == spec {
        return Rule::IdenticalNormalized;
    }

    if contains_words(&spec, &target) || contains_words(&target, &spec) {
        return Rule::SubstringAccept;
    }

    let stop: BTreeSet<&str> = config.stopwords.iter().map(String::as_str).collect();
    let content = |text: &'_ str| -> BTreeSet<String> {
        text.split(' ')
            .filter(|w| !w.is_empty() && !stop.contains(w))
            .map(str::to_string)
            .collect()
    };
    let t = content(&target);
    let s = content(&spec);
    if t.is_empty() {
        return Rule::SimilarityReject;
    }
    let shared = t.intersection(&s).count() as f64;
    if shared / t.len() as f64 >= config.coverage_threshold {
        return Rule::CoverageAccept;
    }
    let union = t.union(&s).count() as f64;
    if shared / union >= config.jaccard_threshold {
        return Rule::JaccardAccept;
    }
    Rule::SimilarityReject
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(target: &str, spec: &str, accepted: bool, rule: Rule) {
        let d = verify(target, spec, &VerifierConfig::default());
        assert_eq!(d.rule_fired, rule, "target={target:?} spec={spec:?}");
        assert_eq!(d.accepted, accepted);
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize("Café-au-Lait!"), "cafe au lait");
        assert_eq!(normalize(""), "");
        assert_eq!(normalize("Paul  Wendkos "), "paul wendkos");
        assert_eq!(normalize("  ÅNGSTRÖM\t(unit) "), "angstrom unit");
        assert_eq!(normalize("..."), "");
    }

    #[test]
    fn number_extraction() {
        assert_eq!(extract_numbers("born 1 January 1885"), vec!["1885"]);
        assert!(extract_numbers("no digits here").is_empty());
        assert_eq!(extract_numbers("1925 to 1925"), vec!["1925", "1925"]);
        assert_eq!(extract_numbers("x12y345"), vec!["12", "345"]);
    }

    #[test]
    fn decision_examples() {
        check("Paul Wendkos", "paul wendkos.", true, Rule::IdenticalNormalized);
        check("1925", "1911", false, Rule::NumericMismatchReject);
        check("Basil Dearden", "I don't know who directed that", false, Rule::RefusalReject);
        check("yes", "Yes.", true, Rule::ShortExactAccept);
        check("no", "yes", false, Rule::ShortMismatchReject);
        check(
            "thiruvananthapuram india",
            "he is from Thiruvananthapuram, in Kerala, India",
            true,
            Rule::CoverageAccept,
        );
        check("", "", false, Rule::SimilarityReject);
    }

    #[test]
    fn substring_respects_word_boundaries() {
        check("Buenos Aires", "the capital Buenos Aires", true, Rule::SubstringAccept);
        check("india", "indiana", false, Rule::SimilarityReject);
    }

    #[test]
    fn config_validation_and_fingerprint() {
        let cfg = VerifierConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.fingerprint(), VerifierConfig::default().fingerprint());
        let mut other = cfg.clone();
        other.jaccard_threshold = 0.6;
        assert_ne!(cfg.fingerprint(), other.fingerprint());
        other.jaccard_threshold = 0.0;
        assert!(other.validate().is_err());
        let partial = VerifierConfig::from_json(r#"{"coverage_threshold": 0.9}"#).unwrap();
        assert_eq!(partial.coverage_threshold, 0.9);
        assert_eq!(partial.stopwords.len(), STOPWORDS.len());
        assert!(STOPWORDS.len() >= 100);
    }

    #[test]
    fn decision_display() {
        let d = verify("1925", "1911", &VerifierConfig::default());
        assert_eq!(d.to_string(), "reject (numeric-mismatch-reject)");
    }
}
