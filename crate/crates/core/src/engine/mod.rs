//! Analysis pipeline: extract → detect → localize → classify → score.

mod cwe;
mod localize;
mod repair;
mod report;
mod severity;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cwe::{cwe_url, CweDb, CweEntry};
pub use localize::{localize_lines, token_scores, LocalizeError};
pub use repair::{NoRepair, Repair, RepairProvider, RuleRepair};
pub use report::{
    sarif_level, sort_diagnostics, to_sarif, Description, Diagnostic, LineScore, LineSpan, Prediction, Report,
    SARIF_SCHEMA, SCHEMA_VERSION,
};
pub use severity::{clamp_cvss, severity_band, SeverityBand};

use crate::corpus::LabelRegistry;
use crate::extractor::{extract_functions, SourceFunction};
use crate::model::{forward_classify, forward_detect, forward_regress, Checkpoint, ModelError, TaskSpec};
use crate::par::par_map;
use crate::tokenizer::{SeqMode, TokenizerError, Vocab};

/// File names inside a model directory.
pub const VOCAB_FILE: &str = "vocab.json";
pub const DETECTOR_FILE: &str = "detector.ckpt";
pub const CLASSIFIER_FILE: &str = "classifier.ckpt";
pub const REGRESSOR_FILE: &str = "regressor.ckpt";
/// Optional override of the bundled CWE descriptions.
pub const CWE_DB_FILE: &str = "cwe_db.json";

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("{model} checkpoint was trained with vocab {found}, but the loaded vocab is {expected}")]
    VocabMismatch {
        model: &'static str,
        expected: String,
        found: String,
    },
    #[error("{model} checkpoint holds a {found:?} model, expected {expected:?}")]
    WrongTask {
        model: &'static str,
        expected: TaskSpec,
        found: TaskSpec,
    },
    #[error("threshold must lie in [0, 1], got {0}")]
    Threshold(f64),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Checkpoint { path: PathBuf, source: ModelError },
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineOptions {
    /// Minimum detector probability for a function to be reported.
    pub threshold: f64,
    /// Ranked lines kept per diagnostic (`None` keeps all).
    pub top_k: Option<usize>,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            top_k: Some(10),
        }
    }
}

/// Diagnostics and warnings for one or more inputs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Analysis {
    pub diagnostics: Vec<Diagnostic>,
    pub warnings: Vec<String>,
    /// `file:function` of every function that exceeded an input length.
    pub truncated: Vec<String>,
}

impl Analysis {
    fn extend(&mut self, other: Analysis) {
        self.diagnostics.extend(other.diagnostics);
        self.warnings.extend(other.warnings);
        self.truncated.extend(other.truncated);
    }

    pub fn into_report(self) -> Report {
        Report::new(self.diagnostics, self.warnings)
    }
}

/// Loaded models. Immutable after construction and safe to share across
/// threads.
pub struct Engine {
    vocab: Vocab,
    detector: Checkpoint,
    classifier: Checkpoint,
    regressor: Checkpoint,
    model_hashes: BTreeMap<String, String>,
    cwe: CweDb,
    repair: Box<dyn RepairProvider>,
    options: EngineOptions,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("model_hashes", &self.model_hashes)
            .field("repair", &self.repair.name())
            .field("options", &self.options)
            .finish_non_exhaustive()
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Engine {
    /// Check that the three checkpoints hold the expected tasks and share
    /// `vocab`.
    pub fn new(
        vocab: Vocab,
        detector: Checkpoint,
        classifier: Checkpoint,
        regressor: Checkpoint,
    ) -> Result<Self, EngineError> {
        let vocab_hash = vocab.hash();
        let checks = [
            ("detector", &detector, TaskSpec::Detect),
            ("classifier", &classifier, TaskSpec::Multitask),
            ("regressor", &regressor, TaskSpec::Regress),
        ];
        let mut model_hashes = BTreeMap::new();
        for (model, ck, expected) in checks {
            if ck.header.task != expected {
                return Err(EngineError::WrongTask {
                    model,
                    expected,
                    found: ck.header.task,
                });
            }
            if ck.header.vocab_hash != vocab_hash {
                return Err(EngineError::VocabMismatch {
                    model,
                    expected: vocab_hash,
                    found: ck.header.vocab_hash.clone(),
                });
            }
            model_hashes.insert(model.to_string(), sha256_hex(&ck.to_bytes()));
        }
        model_hashes.insert("vocab".to_string(), vocab_hash);
        Ok(Self {
            vocab,
            detector,
            classifier,
            regressor,
            model_hashes,
            cwe: CweDb::bundled(),
            repair: Box::new(NoRepair),
            options: EngineOptions::default(),
        })
    }

    /// Load `vocab.json` and the three checkpoints from `dir`, plus
    /// `cwe_db.json` when present.
    pub fn load(dir: &Path) -> Result<Self, EngineError> {
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read(&path).map_err(|source| EngineError::Io { path, source })
        };
        let ck = |name: &str| -> Result<Checkpoint, EngineError> {
            Checkpoint::from_bytes(&read(name)?).map_err(|source| EngineError::Checkpoint {
                path: dir.join(name),
                source,
            })
        };
        let vocab_text = String::from_utf8_lossy(&read(VOCAB_FILE)?).into_owned();
        let vocab = Vocab::from_json(&vocab_text)?;
        let mut engine = Self::new(vocab, ck(DETECTOR_FILE)?, ck(CLASSIFIER_FILE)?, ck(REGRESSOR_FILE)?)?;
        let db_path = dir.join(CWE_DB_FILE);
        if db_path.exists() {
            engine.cwe = CweDb::load(&db_path).map_err(|source| EngineError::Io { path: db_path, source })?;
        }
        Ok(engine)
    }

    pub fn with_options(mut self, options: EngineOptions) -> Result<Self, EngineError> {
        if !(0.0..=1.0).contains(&options.threshold) {
            return Err(EngineError::Threshold(options.threshold));
        }
        self.options = options;
        Ok(self)
    }

    pub fn with_repair(mut self, provider: Box<dyn RepairProvider>) -> Self {
        self.repair = provider;
        self
    }

    pub fn with_cwe_db(mut self, db: CweDb) -> Self {
        self.cwe = db;
        self
    }

    pub fn options(&self) -> EngineOptions {
        self.options
    }

    pub fn cwe_db(&self) -> &CweDb {
        &self.cwe
    }

    pub fn registry(&self) -> &LabelRegistry {
        &self.classifier.header.registry
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// SHA-256 of each serialized checkpoint, plus the vocab hash.
    pub fn model_hashes(&self) -> &BTreeMap<String, String> {
        &self.model_hashes
    }

    pub fn repair_provider(&self) -> &str {
        self.repair.name()
    }

    /// Analyze one file's text. `file` is only used for labelling.
    pub fn analyze_source(&self, file: &str, text: &str) -> Analysis {
        let extraction = extract_functions(text);
        let mut out = Analysis {
            warnings: extraction.warnings.iter().map(|w| format!("{file}: {w}")).collect(),
            ..Analysis::default()
        };
        let lines: Vec<&str> = text.split('\n').collect();
        let results = par_map(&extraction.functions, |_, f| self.analyze_function(file, f, &lines));
        for r in results {
            out.extend(r);
        }
        sort_diagnostics(&mut out.diagnostics);
        out
    }

    /// Analyze files concurrently. Unreadable or non-UTF-8 files are errors.
    pub fn analyze_files(&self, paths: &[PathBuf]) -> Result<Analysis, EngineError> {
        let results = par_map(paths, |_, path| -> Result<Analysis, EngineError> {
            let bytes = fs::read(path).map_err(|source| EngineError::Io {
                path: path.clone(),
                source,
            })?;
            let text = String::from_utf8(bytes).map_err(|e| EngineError::Io {
                path: path.clone(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
            })?;
            Ok(self.analyze_source(&path.display().to_string(), &text))
        });
        let mut out = Analysis::default();
        for r in results {
            out.extend(r?);
        }
        sort_diagnostics(&mut out.diagnostics);
        Ok(out)
    }

    fn analyze_function(&self, file: &str, f: &SourceFunction, file_lines: &[&str]) -> Analysis {
        let mut out = Analysis::default();
        let label = format!("{file}:{}", f.name);
        let text = &f.cleaned_text;
        let det_seq = self
            .vocab
            .encode(text, SeqMode::SingleCls, self.detector.params.config.max_seq_len);
        let det = match forward_detect(&self.detector.params, &det_seq) {
            Ok(d) => d,
            Err(e) => {
                out.warnings.push(format!("{label}: detector failed: {e}"));
                return out;
            }
        };
        let mut truncated = det_seq.truncated;
        if det.p_vulnerable < self.options.threshold {
            if truncated {
                out.truncated.push(label);
            }
            return out;
        }
        // Whitespace carries no code; leaving it out keeps blank and
        // comment-only lines from ranking.
        let line_of: Vec<i32> = det_seq
            .ids
            .iter()
            .zip(&det_seq.line_of)
            .map(|(&id, &line)| match self.vocab.token(id) {
                Some(b) if b.iter().all(u8::is_ascii_whitespace) => 0,
                _ => line,
            })
            .collect();
        let ranked = match localize_lines(&det.attention, &line_of, None) {
            Ok(r) => r,
            Err(e) => {
                out.warnings.push(format!("{label}: no lines to rank: {e}"));
                return out;
            }
        };
        let mut line_scores = Vec::with_capacity(ranked.len());
        for (cleaned_line, score) in ranked {
            match f.original_line(cleaned_line as usize) {
                Ok(line) => line_scores.push(LineScore { line, score }),
                Err(e) => out.warnings.push(format!("{label}: {e}")),
            }
        }
        let Some(top) = line_scores.first().map(|s| s.line) else {
            out.warnings.push(format!("{label}: no lines to rank"));
            return out;
        };
        if let Some(k) = self.options.top_k {
            line_scores.truncate(k.max(1));
        }

        let cls_seq = self
            .vocab
            .encode(text, SeqMode::DualCls, self.classifier.params.config.max_seq_len);
        let reg_seq = self
            .vocab
            .encode(text, SeqMode::SingleCls, self.regressor.params.config.max_seq_len);
        truncated |= cls_seq.truncated || reg_seq.truncated;
        let (cls, raw_cvss) = match (
            forward_classify(&self.classifier.params, &cls_seq),
            forward_regress(&self.regressor.params, &reg_seq),
        ) {
            (Ok(c), Ok(r)) => (c, r),
            (Err(e), _) | (_, Err(e)) => {
                out.warnings.push(format!("{label}: model failed: {e}"));
                return out;
            }
        };
        let registry = &self.classifier.header.registry;
        let (id_k, id_p) = argmax(&cls.probs_id);
        let (ty_k, ty_p) = argmax(&cls.probs_type);
        let cwe_id = registry
            .cwe_ids
            .get(id_k)
            .cloned()
            .unwrap_or_else(|| format!("class-{id_k}"));
        let cwe_type = registry
            .cwe_types
            .get(ty_k)
            .cloned()
            .unwrap_or_else(|| format!("class-{ty_k}"));
        let cvss = clamp_cvss(raw_cvss);
        let info = self.cwe.info(&cwe_id);

        let line_text = file_lines.get(top - 1).map_or("", |l| l.trim_end_matches('\r'));
        let repair = match self.repair.suggest(f, top, line_text) {
            Ok(r) => r.filter(|r| f.span.contains_line(r.line)),
            Err(e) => {
                out.warnings
                    .push(format!("{label}: repair provider '{}' failed: {e}", self.repair.name()));
                None
            }
        };
        if truncated {
            out.truncated.push(label);
        }
        out.diagnostics.push(Diagnostic {
            file: file.to_string(),
            function: f.name.clone(),
            function_span: LineSpan {
                start: f.span.start_line,
                end: f.span.end_line,
            },
            lines: LineSpan { start: top, end: top },
            p_vulnerable: det.p_vulnerable,
            line_scores,
            cwe_id: Prediction {
                label: cwe_id,
                confidence: id_p,
            },
            cwe_type: Prediction {
                label: cwe_type,
                confidence: ty_p,
            },
            cvss,
            band: severity_band(cvss),
            description: Description {
                name: info.name,
                summary: info.summary,
                url: info.url,
            },
            repair,
            truncated,
        });
        out
    }
}

/// Index and value of the largest entry, first on ties.
fn argmax(p: &[f64]) -> (usize, f64) {
    p.iter().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |best, (i, &v)| if v > best.1 { (i, v) } else { best },
    )
}
