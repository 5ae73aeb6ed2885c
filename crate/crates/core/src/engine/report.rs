//! Diagnostic records and their JSON, SARIF and text renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::cwe::CweDb;
use super::repair::Repair;
use super::severity::SeverityBand;

/// Version of the diagnostic JSON layout described by
/// `schema/diagnostic.schema.json`.
pub const SCHEMA_VERSION: &str = "vulnhunter-diagnostic/1";
pub const SARIF_SCHEMA: &str = "https://json.schemastore.org/sarif-2.1.0.json";

/// Inclusive 1-based line range in the original file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineSpan {
    pub start: usize,
    pub end: usize,
}

impl LineSpan {
    pub fn contains(&self, line: usize) -> bool {
        (self.start..=self.end).contains(&line)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineScore {
    pub line: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Description {
    pub name: String,
    pub summary: String,
    pub url: String,
}

/// One flagged function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub file: String,
    pub function: String,
    pub function_span: LineSpan,
    /// The top-ranked line.
    pub lines: LineSpan,
    pub p_vulnerable: f64,
    /// Lines ranked by received attention, highest first.
    pub line_scores: Vec<LineScore>,
    pub cwe_id: Prediction,
    pub cwe_type: Prediction,
    /// Clamped to `[0, 10]`.
    pub cvss: f64,
    pub band: SeverityBand,
    pub description: Description,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub repair: Option<Repair>,
    /// The function did not fit the model's input length; only its prefix
    /// was analyzed.
    pub truncated: bool,
}

impl Diagnostic {
    /// Sort key used before emission.
    pub fn order_key(&self) -> (&str, usize, usize, &str) {
        (&self.file, self.lines.start, self.function_span.start, &self.function)
    }
}

pub fn sort_diagnostics(diagnostics: &mut [Diagnostic]) {
    diagnostics.sort_by(|a, b| a.order_key().cmp(&b.order_key()));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: String,
    pub diagnostics: Vec<Diagnostic>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn new(mut diagnostics: Vec<Diagnostic>, warnings: Vec<String>) -> Self {
        sort_diagnostics(&mut diagnostics);
        Self {
            schema_version: SCHEMA_VERSION.to_string(),
            diagnostics,
            warnings,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_sarif(&self, db: &CweDb) -> Value {
        to_sarif(&self.diagnostics, db)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for d in &self.diagnostics {
            let _ = writeln!(
                out,
                "{}:{}: {} {} (cvss {:.1}) in {}: {} [{} {:.2}, p={:.2}]",
                d.file,
                d.lines.start,
                d.band,
                d.cwe_id.label,
                d.cvss,
                d.function,
                d.description.name,
                d.cwe_type.label,
                d.cwe_id.confidence,
                d.p_vulnerable
            );
            let _ = writeln!(out, "    {}", d.description.url);
            if let Some(r) = &d.repair {
                let _ = writeln!(out, "    fix line {}: {}", r.line, r.replacement.trim());
            }
            if d.truncated {
                let _ = writeln!(out, "    note: function truncated to the model input length");
            }
        }
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        let _ = writeln!(out, "{} finding(s)", self.diagnostics.len());
        out
    }
}

pub fn sarif_level(band: SeverityBand) -> &'static str {
    match band {
        SeverityBand::Critical | SeverityBand::High => "error",
        SeverityBand::Medium => "warning",
        SeverityBand::Low => "note",
    }
}

/// SARIF 2.1.0 log with one rule per CWE-ID.
pub fn to_sarif(diagnostics: &[Diagnostic], db: &CweDb) -> Value {
    let mut rules: BTreeMap<&str, Value> = BTreeMap::new();
    for d in diagnostics {
        rules.entry(&d.cwe_id.label).or_insert_with(|| {
            let info = db.info(&d.cwe_id.label);
            json!({
                "id": d.cwe_id.label,
                "name": info.name,
                "shortDescription": {"text": info.name},
                "fullDescription": {"text": info.summary},
                "helpUri": info.url,
            })
        });
    }
    let rule_index: BTreeMap<&str, usize> = rules.keys().enumerate().map(|(i, k)| (*k, i)).collect();
    let results: Vec<Value> = diagnostics
        .iter()
        .map(|d| {
            let mut r = json!({
                "ruleId": d.cwe_id.label,
                "ruleIndex": rule_index[d.cwe_id.label.as_str()],
                "level": sarif_level(d.band),
                "message": {"text": format!(
                    "{} in function '{}' ({} severity, CVSS {:.1})",
                    d.description.name, d.function, d.band, d.cvss
                )},
                "locations": [{
                    "physicalLocation": {
                        "artifactLocation": {"uri": d.file},
                        "region": {"startLine": d.lines.start, "endLine": d.lines.end},
                    },
                    "logicalLocations": [{"name": d.function, "kind": "function"}],
                }],
                "properties": {
                    "cweType": d.cwe_type.label,
                    "cvss": d.cvss,
                    "band": d.band,
                    "pVulnerable": d.p_vulnerable,
                    "truncated": d.truncated,
                },
            });
            if let Some(rep) = &d.repair {
                r["fixes"] = json!([{
                    "description": {"text": "Suggested replacement"},
                    "artifactChanges": [{
                        "artifactLocation": {"uri": d.file},
                        "replacements": [{
                            "deletedRegion": {"startLine": rep.line, "endLine": rep.line},
                            "insertedContent": {"text": rep.replacement},
                        }],
                    }],
                }]);
            }
            r
        })
        .collect();
    json!({
        "$schema": SARIF_SCHEMA,
        "version": "2.1.0",
        "runs": [{
            "tool": {"driver": {
                "name": "vulnhunter",
                "version": crate::VERSION,
                "informationUri": "https://cwe.mitre.org/",
                "rules": rules.into_values().collect::<Vec<_>>(),
            }},
            "results": results,
        }],
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::engine::severity_band;

    pub(crate) fn sample(file: &str, line: usize, cwe: &str, cvss: f64) -> Diagnostic {
        Diagnostic {
            file: file.into(),
            function: "f".into(),
            function_span: LineSpan {
                start: 1,
                end: line + 1,
            },
            lines: LineSpan { start: line, end: line },
            p_vulnerable: 0.9,
            line_scores: vec![LineScore { line, score: 2.0 }],
            cwe_id: Prediction {
                label: cwe.into(),
                confidence: 0.8,
            },
            cwe_type: Prediction {
                label: "Base".into(),
                confidence: 0.7,
            },
            cvss,
            band: severity_band(cvss),
            description: Description {
                name: "n".into(),
                summary: "s".into(),
                url: "u".into(),
            },
            repair: None,
            truncated: false,
        }
    }

    #[test]
    fn ordering_is_by_file_then_line() {
        let r = Report::new(
            vec![
                sample("b.c", 1, "CWE-20", 5.0),
                sample("a.c", 9, "CWE-20", 5.0),
                sample("a.c", 2, "CWE-119", 9.5),
            ],
            vec![],
        );
        let keys: Vec<(String, usize)> = r.diagnostics.iter().map(|d| (d.file.clone(), d.lines.start)).collect();
        assert_eq!(keys, [("a.c".into(), 2), ("a.c".into(), 9), ("b.c".into(), 1)]);
    }

    #[test]
    fn sarif_rules_and_levels() {
        let ds = vec![
            sample("a.c", 3, "CWE-787", 9.5),
            sample("a.c", 5, "CWE-20", 2.0),
            sample("b.c", 1, "CWE-787", 5.0),
        ];
        let s = to_sarif(&ds, &CweDb::bundled());
        assert_eq!(s["version"], "2.1.0");
        let rules = s["runs"][0]["tool"]["driver"]["rules"].as_array().unwrap();
        assert_eq!(rules.len(), 2);
        assert_eq!(rules[0]["id"], "CWE-20");
        let results = s["runs"][0]["results"].as_array().unwrap();
        assert_eq!(results[0]["level"], "error");
        assert_eq!(results[0]["ruleIndex"], 1);
        assert_eq!(results[1]["level"], "note");
        assert_eq!(results[2]["level"], "warning");
        assert_eq!(results[0]["locations"][0]["physicalLocation"]["region"]["startLine"], 3);
    }

    #[test]
    fn text_lists_findings() {
        let t = Report::new(vec![sample("a.c", 3, "CWE-787", 7.0)], vec!["w".into()]).to_text();
        assert!(t.starts_with("a.c:3: High CWE-787 (cvss 7.0)"), "{t}");
        assert!(t.contains("warning: w"));
        assert!(t.ends_with("1 finding(s)\n"));
    }
}
