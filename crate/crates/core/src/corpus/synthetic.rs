//! Desk-scale labeled corpus with planted vulnerability patterns.
//!
//! Every vulnerable function contains one or more copies of a sink statement
//! that is fixed per CWE-ID. Functions are written with whitespace-separated
//! tokens so that token counts are unambiguous, and the severity target is
//!
//! ```text
//! cvss = clamp(10 × planted_tokens / function_tokens, 1.2, 10.0)
//! ```
//!
//! where `planted_tokens` counts the tokens of all planted sink statements and
//! `function_tokens` counts every whitespace-separated token of the function.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, LabelRegistry, VulnRecord};

/// CWE-IDs used for the first labels, most frequent first in C/C++ data.
const KNOWN_CWE_IDS: [&str; 12] = [
    "CWE-119", "CWE-20", "CWE-125", "CWE-787", "CWE-476", "CWE-416", "CWE-190", "CWE-200", "CWE-399", "CWE-264",
    "CWE-362", "CWE-189",
];

const KNOWN_CWE_TYPES: [&str; 6] = ["Base", "Class", "Variant", "Category", "Pillar", "Compound"];

/// Sink statements planted per CWE-ID index.
const SINKS: [&str; 10] = [
    "strcpy ( buf , src ) ;",
    "memcpy ( buf , src , len ) ;",
    "sprintf ( buf , fmt , src ) ;",
    "gets ( buf ) ;",
    "free ( ptr ) ;",
    "strcat ( buf , src ) ;",
    "scanf ( fmt , buf ) ;",
    "alloca ( len ) ;",
    "system ( cmd ) ;",
    "realloc ( ptr , len ) ;",
];

pub const DEFAULT_VOCABULARY: [&str; 20] = [
    "count", "index", "size", "offset", "result", "value", "tmp", "node", "head", "flag", "total", "input", "output",
    "state", "key", "item", "width", "height", "limit", "mask",
];

const VERBS: [&str; 8] = ["parse", "read", "handle", "update", "init", "load", "check", "process"];
const TYPES: [&str; 4] = ["int", "long", "unsigned", "char"];

/// Sink statement planted for CWE-ID index `k`.
pub fn planted_sink(k: usize) -> String {
    match SINKS.get(k) {
        Some(s) => s.to_string(),
        None => format!("sink_{k} ( buf , len ) ;"),
    }
}

fn cwe_id_name(k: usize) -> String {
    KNOWN_CWE_IDS
        .get(k)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("CWE-{}", 1000 + k))
}

fn cwe_type_name(k: usize) -> String {
    KNOWN_CWE_TYPES
        .get(k)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("Type-{k}"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_records: usize,
    pub n_cwe_ids: usize,
    pub n_cwe_types: usize,
    /// Identifiers used in filler statements.
    pub vocabulary: Vec<String>,
    pub seed: u64,
    /// Share of records that are vulnerable.
    pub vulnerable_fraction: f64,
}

impl SyntheticSpec {
    pub fn new(n_records: usize, n_cwe_ids: usize, n_cwe_types: usize, seed: u64) -> Self {
        Self {
            n_records,
            n_cwe_ids,
            n_cwe_types,
            vocabulary: DEFAULT_VOCABULARY.iter().map(|s| s.to_string()).collect(),
            seed,
            vulnerable_fraction: 0.5,
        }
    }

    fn validate(&self) -> Result<(), CorpusError> {
        if !(self.n_cwe_ids >= self.n_cwe_types && self.n_cwe_types >= 1) {
            return Err(CorpusError::BadSpec(format!(
                "need n_cwe_ids >= n_cwe_types >= 1, got {} and {}",
                self.n_cwe_ids, self.n_cwe_types
            )));
        }
        if self.vocabulary.len() < 3 {
            return Err(CorpusError::BadSpec("vocabulary needs at least 3 identifiers".into()));
        }
        if !(0.0..=1.0).contains(&self.vulnerable_fraction) {
            return Err(CorpusError::BadSpec("vulnerable_fraction outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Registry with round-robin ID→Type assignment.
    pub fn registry(&self) -> LabelRegistry {
        let map: BTreeMap<String, String> = (0..self.n_cwe_ids)
            .map(|k| (cwe_id_name(k), cwe_type_name(k % self.n_cwe_types)))
            .collect();
        LabelRegistry::from_map(map)
    }
}

fn filler_statement(rng: &mut ChaCha8Rng, vocab: &[String]) -> String {
    let mut pick = || vocab[rng.random_range(0..vocab.len())].clone();
    let (a, b, c) = (pick(), pick(), pick());
    match rng.random_range(0..5) {
        0 => format!("{a} = {b} + {c} ;"),
        1 => format!("if ( {a} > {b} ) {{ {a} = {c} ; }}"),
        2 => format!("{a} = {b} * 2 ;"),
        3 => format!("for ( i = 0 ; i < {a} ; i ++ ) {b} += i ;"),
        _ => format!("{a} = {b} - {c} ;"),
    }
}

/// One function: signature, shuffled body statements, return, closing brace.
fn render_function(rng: &mut ChaCha8Rng, vocab: &[String], planted: Option<(usize, usize)>) -> (String, usize) {
    let ret = TYPES[rng.random_range(0..TYPES.len())];
    let name = format!(
        "{}_{}",
        VERBS[rng.random_range(0..VERBS.len())],
        vocab[rng.random_range(0..vocab.len())]
    );
    let arg = &vocab[rng.random_range(0..vocab.len())];
    let n_filler = rng.random_range(1..=6usize);
    let mut body: Vec<(String, bool)> = (0..n_filler).map(|_| (filler_statement(rng, vocab), false)).collect();
    if let Some((k, copies)) = planted {
        for _ in 0..copies {
            body.push((planted_sink(k), true));
        }
    }
    body.shuffle(rng);
    let ret_val = &vocab[rng.random_range(0..vocab.len())];

    let mut code = format!("{ret} {name} ( char * buf , int {arg} ) {{\n");
    let mut planted_tokens = 0;
    for (stmt, is_planted) in &body {
        if *is_planted {
            planted_tokens += stmt.split_whitespace().count();
        }
        code.push_str("  ");
        code.push_str(stmt);
        code.push('\n');
    }
    code.push_str(&format!("  return {ret_val} ;\n}}"));
    (code, planted_tokens)
}

/// CVSS target for a function with the given planted-token count.
pub fn density_score(planted_tokens: usize, function_tokens: usize) -> f64 {
    let raw = 10.0 * planted_tokens as f64 / function_tokens.max(1) as f64;
    raw.clamp(1.2, 10.0)
}

/// Deterministic labeled corpus for desk-scale training.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Vec<VulnRecord>, LabelRegistry), CorpusError> {
    spec.validate()?;
    let registry = spec.registry();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let n_vuln = (spec.n_records as f64 * spec.vulnerable_fraction).round() as usize;
    // Slot j < n_vuln is vulnerable with CWE-ID j mod n_cwe_ids.
    let mut slots: Vec<Option<usize>> = (0..spec.n_records)
        .map(|j| (j < n_vuln).then_some(j % spec.n_cwe_ids))
        .collect();
    slots.shuffle(&mut rng);

    let records = slots
        .into_iter()
        .enumerate()
        .map(|(i, slot)| {
            let id = format!("syn-{i:05}");
            match slot {
                None => {
                    let (code, _) = render_function(&mut rng, &spec.vocabulary, None);
                    VulnRecord::clean(id, code)
                }
                Some(k) => {
                    let copies = rng.random_range(1..=4usize);
                    let (code, planted) = render_function(&mut rng, &spec.vocabulary, Some((k, copies)));
                    let total = code.split_whitespace().count();
                    let cwe_id = cwe_id_name(k);
                    let cwe_type = registry.id_to_type[&cwe_id].clone();
                    VulnRecord {
                        id,
                        code,
                        vulnerable: true,
                        cwe_id: Some(cwe_id),
                        cwe_type: Some(cwe_type),
                        cvss: Some(density_score(planted, total)),
                    }
                }
            }
        })
        .collect();
    Ok((records, registry))
}
