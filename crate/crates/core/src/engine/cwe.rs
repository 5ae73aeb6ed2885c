//! Offline CWE descriptions.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::LabelRegistry;

const BUNDLED: &str = include_str!("../../data/cwe_db.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CweEntry {
    pub name: String,
    pub cwe_type: String,
    pub summary: String,
    #[serde(default)]
    pub url: String,
}

/// Metadata keyed by CWE-ID. Lookups never fail: unknown ids get a generic
/// entry pointing at the MITRE definition page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CweDb {
    entries: BTreeMap<String, CweEntry>,
}

/// `https://cwe.mitre.org/data/definitions/<n>.html` for `CWE-<n>`, or the
/// CWE search page when the id has no number.
pub fn cwe_url(cwe_id: &str) -> String {
    let digits = cwe_id.trim_start_matches(|c: char| !c.is_ascii_digit());
    if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
        format!("https://cwe.mitre.org/data/definitions/{digits}.html")
    } else {
        "https://cwe.mitre.org/".to_string()
    }
}

impl CweDb {
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED).expect("bundled CWE db parses")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let mut entries: BTreeMap<String, CweEntry> = serde_json::from_str(text)?;
        for (id, e) in &mut entries {
            if e.url.is_empty() {
                e.url = cwe_url(id);
            }
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, cwe_id: &str) -> bool {
        self.entries.contains_key(cwe_id)
    }

    pub fn info(&self, cwe_id: &str) -> CweEntry {
        self.entries.get(cwe_id).cloned().unwrap_or_else(|| CweEntry {
            name: cwe_id.to_string(),
            cwe_type: "Unknown".to_string(),
            summary: "No bundled description for this weakness.".to_string(),
            url: cwe_url(cwe_id),
        })
    }

    /// Registry ids without a bundled entry.
    pub fn missing(&self, registry: &LabelRegistry) -> Vec<String> {
        registry
            .cwe_ids
            .iter()
            .filter(|id| !self.contains(id))
            .cloned()
            .collect()
    }
}

impl Default for CweDb {
    fn default() -> Self {
        Self::bundled()
    }
}
