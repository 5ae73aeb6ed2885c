/// Comment stripper written separately from the library lexer. Returns the
/// cleaned text and, for every cleaned byte plus one past the end, the
/// original offset it came from.
pub fn oracle_strip(src: &str) -> (String, Vec<usize>) {
    #[derive(PartialEq)]
    enum St {
        Code,
        Line,
        Block(usize),
        Quote(u8),
        Raw(Vec<u8>),
    }
    let b = src.as_bytes();
    let mut out = Vec::new();
    let mut map = Vec::new();
    let mut st = St::Code;
    let mut i = 0;
    let ident = |c: u8| c.is_ascii_alphanumeric() || c == b'_' || c >= 0x80;
    // Start of the identifier/number run ending just before `i`.
    let run_start = |i: usize| {
        let mut j = i;
        while j > 0 && ident(b[j - 1]) {
            j -= 1;
        }
        j
    };
    while i < b.len() {
        let c = b[i];
        match &st {
            St::Code => {
                if c == b'/' && b.get(i + 1) == Some(&b'/') {
                    st = St::Line;
                    i += 2;
                    continue;
                }
                if c == b'/' && b.get(i + 1) == Some(&b'*') {
                    out.push(b' ');
                    map.push(i);
                    st = St::Block(i);
                    i += 2;
                    continue;
                }
                if c == b'"' {
                    let word = &b[run_start(i)..i];
                    if matches!(word, b"R" | b"LR" | b"uR" | b"UR" | b"u8R") {
                        let close = b[i + 1..].iter().position(|&x| x == b'(');
                        if let Some(k) = close {
                            let mut term = vec![b')'];
                            term.extend_from_slice(&b[i + 1..i + 1 + k]);
                            term.push(b'"');
                            st = St::Raw(term);
                            out.extend_from_slice(&b[i..i + 2 + k]);
                            map.extend(i..i + 2 + k);
                            i += 2 + k;
                            continue;
                        }
                    }
                    st = St::Quote(b'"');
                } else if c == b'\'' {
                    let s = run_start(i);
                    let in_number = s < i && b[s].is_ascii_digit();
                    if !in_number {
                        st = St::Quote(b'\'');
                    }
                }
                out.push(c);
                map.push(i);
                i += 1;
            }
            St::Line => {
                if c == b'\\' && b.get(i + 1) == Some(&b'\n') {
                    i += 2;
                } else if c == b'\\' && b.get(i + 1) == Some(&b'\r') && b.get(i + 2) == Some(&b'\n') {
                    i += 3;
                } else if c == b'\n' {
                    st = St::Code;
                } else {
                    i += 1;
                }
            }
            St::Block(_) => {
                if c == b'*' && b.get(i + 1) == Some(&b'/') {
                    i += 2;
                    st = St::Code;
                } else {
                    i += 1;
                }
            }
            St::Quote(q) => {
                let q = *q;
                let n = if c == b'\\' { 2.min(b.len() - i) } else { 1 };
                out.extend_from_slice(&b[i..i + n]);
                map.extend(i..i + n);
                i += n;
                if c == q || c == b'\n' {
                    st = St::Code;
                }
            }
            St::Raw(term) => {
                if b[i..].starts_with(term) {
                    let n = term.len();
                    out.extend_from_slice(&b[i..i + n]);
                    map.extend(i..i + n);
                    i += n;
                    st = St::Code;
                } else {
                    out.push(c);
                    map.push(i);
                    i += 1;
                }
            }
        }
    }
    map.push(b.len());
    (String::from_utf8(out).unwrap(), map)
}

/// 1-based line of every cleaned line start, mapped through the oracle.
pub fn oracle_lines(src: &str) -> Vec<usize> {
    let (clean, map) = oracle_strip(src);
    let line_of = |o: usize| 1 + src.as_bytes()[..o].iter().filter(|&&c| c == b'\n').count();
    let mut lines = vec![line_of(map[0])];
    for (k, c) in clean.bytes().enumerate() {
        if c == b'\n' {
            lines.push(line_of(map[k + 1]));
        }
    }
    lines
}
