//! Random C-like files built from chunks whose comment-stripped form is known
//! in advance.

use rand::seq::IndexedRandom;
use rand::Rng;

const CODE: [&str; 14] = [
    "x", "count_2", "42", "1'000", "+", "=", ";", "(", ")", "{", "}", "[", "\t", "\n",
];
const TEXT: &[u8] = b"abcXYZ019 {}();*/\"'#";

fn text<R: Rng>(rng: &mut R, alphabet: &[u8], max: usize) -> String {
    let n = rng.random_range(0..=max);
    (0..n).map(|_| *alphabet.choose(rng).unwrap() as char).collect()
}

/// One chunk and the text the stripper must produce for it.
pub fn chunk<R: Rng>(rng: &mut R) -> (String, String) {
    match rng.random_range(0..9) {
        0..=3 => {
            let c = CODE.choose(rng).unwrap().to_string();
            (c.clone(), c)
        }
        4 => (format!("// {}\n", text(rng, TEXT, 12)), "\n".to_string()),
        5 => {
            let body = format!("{}\n{}", text(rng, TEXT, 12), text(rng, TEXT, 12)).replace("*/", "*_");
            (format!("/* {body} */"), " ".to_string())
        }
        6 => {
            let lit = format!("\"{}\"", text(rng, b"abc019 {}/*'", 10));
            (lit.clone(), lit)
        }
        7 => {
            let lit = format!("'{}'", *b"az{}/*\"".choose(rng).unwrap() as char);
            (lit.clone(), lit)
        }
        _ => {
            let lit = format!("R\"x({})x\"", text(rng, b"az{}/*\"()", 10));
            (lit.clone(), lit)
        }
    }
}

/// A file of up to 40 chunks separated by spaces, with its expected cleaned
/// text.
pub fn random_file<R: Rng>(rng: &mut R) -> (String, String) {
    let n = rng.random_range(1..40);
    let mut src = String::new();
    let mut want = String::new();
    for _ in 0..n {
        let (o, c) = chunk(rng);
        src.push_str(&o);
        src.push(' ');
        want.push_str(&c);
        want.push(' ');
    }
    (src, want)
}
