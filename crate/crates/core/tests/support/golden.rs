//! Hand-annotated extractor fixtures. Each source file has a sibling
//! `.expected` listing `name start_line end_line` per function.

use std::fs;
use std::path::{Path, PathBuf};

use vulnhunter::extractor::{extract_functions, strip_comments};

use super::strip_oracle::{oracle_lines, oracle_strip};

/// Works from any crate in the workspace.
pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden")
}

pub fn fixtures() -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(golden_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e != "expected"))
        .collect();
    files.sort();
    files
}

pub fn expected(path: &Path) -> Vec<(String, usize, usize)> {
    fs::read_to_string(path.with_extension("expected"))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (f[0].to_string(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

/// Fixtures whose extracted names and spans differ from the annotation.
pub fn span_failures() -> Vec<String> {
    let mut failures = Vec::new();
    for path in fixtures() {
        let src = fs::read_to_string(&path).unwrap();
        let got: Vec<(String, usize, usize)> = extract_functions(&src)
            .functions
            .iter()
            .map(|f| (f.name.clone(), f.span.start_line, f.span.end_line))
            .collect();
        let want = expected(&path);
        if got != want {
            failures.push(format!("{}:\n  want {want:?}\n  got  {got:?}", path.display()));
        }
    }
    failures
}

/// Fixtures where the library stripper disagrees with the oracle on text or
/// offsets.
pub fn strip_failures() -> Vec<String> {
    let mut failures = Vec::new();
    for path in fixtures() {
        let src = fs::read_to_string(&path).unwrap();
        let (clean, map) = oracle_strip(&src);
        let s = strip_comments(&src);
        if s.text != clean {
            failures.push(format!("{}: cleaned text differs", path.display()));
            continue;
        }
        if let Some(k) = (0..map.len()).find(|&k| s.delta.to_original(k) != Some(map[k])) {
            failures.push(format!("{}: cleaned offset {k} maps wrong", path.display()));
        }
    }
    failures
}

/// Every cleaned line of every extracted function mapped back to the file,
/// checked against the oracle's own mapping.
pub fn line_map_failures() -> Vec<String> {
    let mut failures = Vec::new();
    for path in fixtures() {
        let src = fs::read_to_string(&path).unwrap();
        for f in extract_functions(&src).functions {
            let body = &src[f.span.start_byte..f.span.end_byte];
            let want = oracle_lines(body);
            if f.cleaned_text != oracle_strip(body).0 {
                failures.push(format!("{} {}: cleaned text differs", path.display(), f.name));
            }
            for (k, &local) in want.iter().enumerate() {
                let got = f.original_line(k + 1);
                if got != Ok(f.span.start_line + local - 1) {
                    failures.push(format!("{} {} line {}: got {got:?}", path.display(), f.name, k + 1));
                }
            }
            if f.original_line(want.len() + 1).is_ok() {
                failures.push(format!("{} {}: line past the end maps", path.display(), f.name));
            }
        }
    }
    failures
}
