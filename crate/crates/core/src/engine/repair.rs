//! Pluggable repair suggestions.

use serde::{Deserialize, Serialize};

use crate::extractor::SourceFunction;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Repair {
    /// 1-based file line the replacement applies to.
    pub line: usize,
    /// Full replacement text for that line, without the newline.
    pub replacement: String,
}

/// Suggests a replacement for the top-ranked line of a flagged function.
/// `line_text` is the original text of `line`.
pub trait RepairProvider: Send + Sync {
    fn name(&self) -> &str;

    fn suggest(&self, function: &SourceFunction, line: usize, line_text: &str) -> Result<Option<Repair>, String>;
}

/// Never suggests anything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoRepair;

impl RepairProvider for NoRepair {
    fn name(&self) -> &str {
        "none"
    }

    fn suggest(&self, _: &SourceFunction, _: usize, _: &str) -> Result<Option<Repair>, String> {
        Ok(None)
    }
}

/// Template rewrites of well-known unsafe C calls. Only meant for the
/// synthetic sinks; it matches whitespace-separated tokens.
#[derive(Debug, Default, Clone, Copy)]
pub struct RuleRepair;

const RULES: [(&str, &str); 6] = [
    ("strcpy ( buf , src ) ;", "strncpy ( buf , src , sizeof ( buf ) - 1 ) ;"),
    (
        "strcat ( buf , src ) ;",
        "strncat ( buf , src , sizeof ( buf ) - strlen ( buf ) - 1 ) ;",
    ),
    (
        "sprintf ( buf , fmt , src ) ;",
        "snprintf ( buf , sizeof ( buf ) , fmt , src ) ;",
    ),
    ("gets ( buf ) ;", "fgets ( buf , sizeof ( buf ) , stdin ) ;"),
    ("free ( ptr ) ;", "free ( ptr ) ; ptr = NULL ;"),
    (
        "memcpy ( buf , src , len ) ;",
        "memcpy ( buf , src , len < sizeof ( buf ) ? len : sizeof ( buf ) ) ;",
    ),
];

impl RepairProvider for RuleRepair {
    fn name(&self) -> &str {
        "rules"
    }

    fn suggest(&self, function: &SourceFunction, line: usize, line_text: &str) -> Result<Option<Repair>, String> {
        if !function.span.contains_line(line) {
            return Err(format!("line {line} outside function {}", function.name));
        }
        let normalized = line_text.split_whitespace().collect::<Vec<_>>().join(" ");
        let Some((_, fix)) = RULES.iter().find(|(bad, _)| normalized == *bad) else {
            return Ok(None);
        };
        let indent: String = line_text.chars().take_while(|c| c.is_whitespace()).collect();
        Ok(Some(Repair {
            line,
            replacement: format!("{indent}{fix}"),
        }))
    }
}
