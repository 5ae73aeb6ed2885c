//! Extractor checks against hand-annotated fixtures and an independent
//! character-level comment stripper.

mod support;

use std::fs;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use support::gen_source::random_file;
use support::golden::{fixtures, golden_dir, line_map_failures, span_failures, strip_failures};
use support::strip_oracle::oracle_strip;
use vulnhunter::extractor::{extract_functions, strip_comments};

#[test]
fn oracle_agrees_with_documented_example() {
    let (clean, map) = oracle_strip("a/*x*/b // c\nd");
    assert_eq!(clean, "a b \nd");
    assert_eq!(map, vec![0, 1, 6, 7, 12, 13, 14]);
}

#[test]
fn golden_spans() {
    assert!(fixtures().len() >= 25, "only {} fixtures", fixtures().len());
    let failures = span_failures();
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

#[test]
fn golden_stripping_matches_oracle() {
    let failures = strip_failures();
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

#[test]
fn golden_line_mapping_matches_oracle() {
    let failures = line_map_failures();
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

#[test]
fn seeded_files_strip_to_known_text() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..500 {
        let (src, want) = random_file(&mut rng);
        let s = strip_comments(&src);
        assert_eq!(s.text, want, "{src:?}");
        assert_eq!(oracle_strip(&src).0, want);
        assert!(s.warnings.is_empty());
    }
}

#[test]
fn malformed_fixtures_warn() {
    let dir = golden_dir();
    for name in ["g25_unbalanced.c", "g26_unterminated_comment.c"] {
        let src = fs::read_to_string(dir.join(name)).unwrap();
        assert!(!extract_functions(&src).warnings.is_empty(), "{name}");
    }
}

/// One generated chunk with the text the stripper must produce for it.
fn chunk() -> impl Strategy<Value = (String, String)> {
    let code = "[a-z_][a-z0-9_]{0,6}|[0-9]{1,4}|[-+*=<>;,(){}\\[\\]!&|]|[ \t]{1,3}|\n";
    let text = "[a-zA-Z0-9 {}();*/\"'#]{0,12}";
    prop_oneof![
        4 => code.prop_map(|s: String| (s.clone(), s)),
        1 => text.prop_map(|t: String| {
            let t = t.replace('\n', "");
            (format!("// {t}\n"), "\n".to_string())
        }),
        1 => (text, text).prop_map(|(a, b): (String, String)| {
            let body = format!("{a}\n{b}").replace("*/", "*_");
            (format!("/* {body} */"), " ".to_string())
        }),
        1 => "[a-zA-Z0-9 {}/*']{0,10}".prop_map(|t: String| {
            let lit = format!("\"{t}\"");
            (lit.clone(), lit)
        }),
        1 => "[a-z{}/*\"]".prop_map(|c: String| {
            let lit = format!("'{c}'");
            (lit.clone(), lit)
        }),
        1 => "[a-z{}/*\"()]{0,10}".prop_map(|t: String| {
            let lit = format!("R\"x({t})x\"");
            (lit.clone(), lit)
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn generated_files_strip_to_known_text(parts in prop::collection::vec(chunk(), 1..40)) {
        // A space between chunks keeps `/` from fusing with a following `*`.
        let src: String = parts.iter().map(|(o, _)| format!("{o} ")).collect();
        let want: String = parts.iter().map(|(_, c)| format!("{c} ")).collect();
        let s = strip_comments(&src);
        prop_assert_eq!(&s.text, &want);
        let (clean, map) = oracle_strip(&src);
        prop_assert_eq!(&clean, &want);
        for (k, &o) in map.iter().enumerate() {
            prop_assert_eq!(s.delta.to_original(k), Some(o));
        }
        prop_assert!(s.warnings.is_empty());
    }

    #[test]
    fn extraction_is_total(src in "\\PC{0,400}") {
        let ex = extract_functions(&src);
        let n_lines = src.split('\n').count();
        for f in &ex.functions {
            prop_assert!(f.span.start_line <= f.span.end_line);
            prop_assert!(f.span.end_line <= n_lines);
            prop_assert!(src.is_char_boundary(f.span.start_byte) && src.is_char_boundary(f.span.end_byte));
            prop_assert_eq!(f.cleaned_text.clone(), strip_comments(&src[f.span.start_byte..f.span.end_byte]).text);
        }
        let s = strip_comments(&src);
        prop_assert_eq!(s.delta.to_original(s.text.len()), Some(src.len()));
    }
}

#[test]
fn line_mapping_survives_serialization() {
    let src = "int f(void)\n{\n    /* a\n b */ return 0; // x\n}\n";
    let f = &extract_functions(src).functions[0];
    let back: vulnhunter::extractor::SourceFunction = serde_json::from_str(&serde_json::to_string(f).unwrap()).unwrap();
    for k in 1..=4 {
        assert_eq!(back.original_line(k).unwrap(), f.original_line(k).unwrap());
    }
    assert_eq!(f.original_line(4).unwrap(), 5);
}
