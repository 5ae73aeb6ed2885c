use std::fmt;

use serde::{Deserialize, Serialize};

/// Qualitative CVSS v3.1 severity. The zero-score "None" band is folded into
/// `Low`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SeverityBand {
    Low,
    Medium,
    High,
    Critical,
}

impl SeverityBand {
    pub const ALL: [SeverityBand; 4] = [
        SeverityBand::Low,
        SeverityBand::Medium,
        SeverityBand::High,
        SeverityBand::Critical,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SeverityBand::Low => "Low",
            SeverityBand::Medium => "Medium",
            SeverityBand::High => "High",
            SeverityBand::Critical => "Critical",
        }
    }
}

impl fmt::Display for SeverityBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Clamp a raw score into `[0, 10]`. NaN maps to 0.
pub fn clamp_cvss(score: f64) -> f64 {
    if score.is_nan() {
        0.0
    } else {
        score.clamp(0.0, 10.0)
    }
}

/// Band of a (clamped) score. Bands are half-open so that continuous
/// regressor outputs such as 3.95 fall into exactly one band.
pub fn severity_band(cvss: f64) -> SeverityBand {
    let s = clamp_cvss(cvss);
    if s < 4.0 {
        SeverityBand::Low
    } else if s < 7.0 {
        SeverityBand::Medium
    } else if s < 9.0 {
        SeverityBand::High
    } else {
        SeverityBand::Critical
    }
}
