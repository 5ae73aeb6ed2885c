//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Build for `wasm32-unknown-unknown`, then run
//! `wasm-bindgen --target web --out-dir crates/web/www/pkg` on the output.

use serde_json::json;
use vulnhunter::engine::{clamp_cvss, severity_band};
use vulnhunter::extractor::{extract_functions, strip_comments};
use vulnhunter::moo::min_norm_direction;
use wasm_bindgen::prelude::*;

/// Min-norm convex combination of two gradients given as comma or
/// whitespace separated numbers. Returns JSON `{alpha, norm, d}` or
/// `{error}`.
#[wasm_bindgen]
pub fn min_norm(g1: &str, g2: &str) -> String {
    let parse = |s: &str| -> Result<Vec<f64>, String> {
        s.split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
            .collect()
    };
    let result = (|| -> Result<serde_json::Value, String> {
        let (a, b) = (parse(g1)?, parse(g2)?);
        let (w, d) = min_norm_direction(&a, &b).map_err(|e| e.to_string())?;
        let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(json!({"alpha": w.alpha, "norm": norm, "d": d}))
    })();
    result.unwrap_or_else(|e| json!({"error": e})).to_string()
}

/// Functions found in C/C++ source and the comment-stripped text, as JSON.
#[wasm_bindgen]
pub fn extract(source: &str) -> String {
    let ex = extract_functions(source);
    let functions: Vec<_> = ex
        .functions
        .iter()
        .map(|f| json!({"name": f.name, "start_line": f.span.start_line, "end_line": f.span.end_line}))
        .collect();
    json!({
        "functions": functions,
        "stripped": strip_comments(source).text,
        "warnings": ex.warnings,
    })
    .to_string()
}

/// Severity band name of a CVSS score (clamped to `[0, 10]`).
#[wasm_bindgen]
pub fn band(cvss: f64) -> String {
    severity_band(clamp_cvss(cvss)).as_str().to_string()
}
