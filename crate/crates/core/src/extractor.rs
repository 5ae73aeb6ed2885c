//! Lexical C/C++ function extraction and comment stripping.
//!
//! Functions are found without parsing: an identifier followed by a
//! parameter list and a balanced brace block at file, namespace or class
//! scope. Comments, string and character literals (including raw strings)
//! and preprocessor directives never count as braces. Templates, macros that
//! expand to braces and K&R definitions are not understood.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ANONYMOUS: &str = "<anonymous>";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExtractError {
    #[error("line {line} outside 1..={max}")]
    LineOutOfRange { line: usize, max: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Ident,
    Number,
    Str,
    Char,
    Punct(u8),
    LineComment,
    BlockComment { terminated: bool },
}

#[derive(Debug, Clone, Copy)]
struct Lexeme {
    kind: Kind,
    start: usize,
    end: usize,
    /// Part of a preprocessor directive.
    directive: bool,
}

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_' || b >= 0x80
}

fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b >= 0x80
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line_start: bool,
    directive: bool,
    out: Vec<Lexeme>,
}

impl<'a> Lexer<'a> {
    fn peek(&self, k: usize) -> Option<u8> {
        self.src.get(self.pos + k).copied()
    }

    fn push(&mut self, kind: Kind, start: usize) {
        self.out.push(Lexeme {
            kind,
            start,
            end: self.pos,
            directive: self.directive,
        });
    }

    /// Quoted literal ending at an unescaped `quote` or, unterminated, before
    /// the newline.
    fn quoted(&mut self, quote: u8) {
        self.pos += 1;
        while let Some(b) = self.peek(0) {
            match b {
                b'\\' => self.pos += 2,
                b'\n' => return,
                _ if b == quote => {
                    self.pos += 1;
                    return;
                }
                _ => self.pos += 1,
            }
        }
        self.pos = self.pos.min(self.src.len());
    }

    /// `R"delim( ... )delim"`, starting at the opening quote.
    fn raw_string(&mut self) {
        let open = self.pos + 1;
        let mut p = open;
        while p < self.src.len() && p - open <= 16 && !matches!(self.src[p], b'(' | b'"' | b'\n' | b' ' | b')' | b'\\')
        {
            p += 1;
        }
        if self.src.get(p) != Some(&b'(') {
            self.quoted(b'"');
            return;
        }
        let mut close = Vec::with_capacity(p - open + 2);
        close.push(b')');
        close.extend_from_slice(&self.src[open..p]);
        close.push(b'"');
        let body = p + 1;
        self.pos = match self.src[body..]
            .windows(close.len())
            .position(|w| w == close.as_slice())
        {
            Some(i) => body + i + close.len(),
            None => self.src.len(),
        };
    }

    fn number(&mut self) {
        while let Some(b) = self.peek(0) {
            let sign =
                matches!(b, b'+' | b'-') && matches!(self.src.get(self.pos - 1), Some(b'e' | b'E' | b'p' | b'P'));
            let separator = b == b'\'' && self.peek(1).is_some_and(|c| c.is_ascii_alphanumeric());
            if is_ident_byte(b) || b == b'.' || sign || separator {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn run(mut self) -> Vec<Lexeme> {
        while let Some(b) = self.peek(0) {
            let start = self.pos;
            match b {
                b'\n' => {
                    self.pos += 1;
                    self.line_start = true;
                    self.directive = false;
                    continue;
                }
                b'\\' if self.peek(1) == Some(b'\n') => {
                    self.pos += 2;
                    continue;
                }
                b'\\' if self.peek(1) == Some(b'\r') && self.peek(2) == Some(b'\n') => {
                    self.pos += 3;
                    continue;
                }
                _ if b.is_ascii_whitespace() => {
                    self.pos += 1;
                    continue;
                }
                b'/' if self.peek(1) == Some(b'/') => {
                    // Ends at the first newline not escaped by a backslash.
                    self.pos += 2;
                    while let Some(c) = self.peek(0) {
                        if c == b'\n' && self.src[self.pos - 1] != b'\\' {
                            break;
                        }
                        self.pos += 1;
                    }
                    self.push(Kind::LineComment, start);
                    continue;
                }
                b'/' if self.peek(1) == Some(b'*') => {
                    let found = self.src[self.pos + 2..].windows(2).position(|w| w == b"*/");
                    self.pos = match found {
                        Some(i) => self.pos + 2 + i + 2,
                        None => self.src.len(),
                    };
                    self.push(
                        Kind::BlockComment {
                            terminated: found.is_some(),
                        },
                        start,
                    );
                    continue;
                }
                b'#' if self.line_start => {
                    self.directive = true;
                    self.pos += 1;
                    self.push(Kind::Punct(b'#'), start);
                }
                b'"' => {
                    self.quoted(b'"');
                    self.push(Kind::Str, start);
                }
                b'\'' => {
                    self.quoted(b'\'');
                    self.push(Kind::Char, start);
                }
                _ if b.is_ascii_digit() || (b == b'.' && self.peek(1).is_some_and(|c| c.is_ascii_digit())) => {
                    self.number();
                    self.push(Kind::Number, start);
                }
                _ if is_ident_start(b) => {
                    while self.peek(0).is_some_and(is_ident_byte) {
                        self.pos += 1;
                    }
                    let word = &self.src[start..self.pos];
                    match (word, self.peek(0)) {
                        (b"R" | b"LR" | b"uR" | b"UR" | b"u8R", Some(b'"')) => {
                            self.raw_string();
                            self.push(Kind::Str, start);
                        }
                        (b"L" | b"u" | b"U" | b"u8", Some(q @ (b'"' | b'\''))) => {
                            self.quoted(q);
                            self.push(if q == b'"' { Kind::Str } else { Kind::Char }, start);
                        }
                        _ => self.push(Kind::Ident, start),
                    }
                }
                _ => {
                    self.pos += 1;
                    self.push(Kind::Punct(b), start);
                }
            }
            self.line_start = false;
        }
        self.out
    }
}

fn lex(src: &[u8]) -> Vec<Lexeme> {
    Lexer {
        src,
        pos: 0,
        line_start: true,
        directive: false,
        out: Vec::new(),
    }
    .run()
}

/// Monotone `(cleaned offset, original offset)` anchors. A cleaned offset
/// maps through the last anchor at or before it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionDelta {
    anchors: Vec<(usize, usize)>,
    cleaned_len: usize,
}

impl PositionDelta {
    pub fn identity(len: usize) -> Self {
        Self {
            anchors: vec![(0, 0)],
            cleaned_len: len,
        }
    }

    pub fn anchors(&self) -> &[(usize, usize)] {
        &self.anchors
    }

    pub fn cleaned_len(&self) -> usize {
        self.cleaned_len
    }

    pub fn is_identity(&self) -> bool {
        self.anchors == [(0, 0)]
    }

    /// Original offset of cleaned offset `o` (`o == cleaned_len` maps the end).
    pub fn to_original(&self, o: usize) -> Option<usize> {
        if o > self.cleaned_len {
            return None;
        }
        let i = self.anchors.partition_point(|&(c, _)| c <= o) - 1;
        let (c, s) = self.anchors[i];
        Some(s + (o - c))
    }

    fn anchor(&mut self, c: usize, s: usize) {
        match self.anchors.last_mut() {
            Some(last) if last.0 == c => last.1 = s,
            _ => self.anchors.push((c, s)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stripped {
    pub text: String,
    pub delta: PositionDelta,
    pub warnings: Vec<String>,
}

/// Remove `//` and `/* */` comments. Line comments keep their newline; block
/// comments become one space. Literal contents are untouched.
pub fn strip_comments(text: &str) -> Stripped {
    let src = text.as_bytes();
    let mut out = String::with_capacity(text.len());
    let mut delta = PositionDelta::identity(0);
    let mut warnings = Vec::new();
    let mut copied = 0;
    for lx in lex(src) {
        let kind = lx.kind;
        if !matches!(kind, Kind::LineComment | Kind::BlockComment { .. }) {
            continue;
        }
        out.push_str(&text[copied..lx.start]);
        let c = out.len();
        match kind {
            Kind::LineComment => delta.anchor(c, lx.end),
            Kind::BlockComment { terminated } => {
                out.push(' ');
                delta.anchor(c, lx.start);
                delta.anchor(c + 1, lx.end);
                if !terminated {
                    warnings.push(format!(
                        "unterminated block comment at line {}; stripped to end of file",
                        line_number(src, lx.start)
                    ));
                }
            }
            _ => unreachable!(),
        }
        copied = lx.end;
    }
    out.push_str(&text[copied..]);
    delta.cleaned_len = out.len();
    Stripped {
        text: out,
        delta,
        warnings,
    }
}

fn line_number(src: &[u8], offset: usize) -> usize {
    1 + src[..offset].iter().filter(|&&b| b == b'\n').count()
}

/// Byte offsets of line starts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineIndex {
    starts: Vec<usize>,
    len: usize,
}

impl LineIndex {
    pub fn new(text: &str) -> Self {
        let mut starts = vec![0];
        starts.extend(
            text.bytes()
                .enumerate()
                .filter(|&(_, b)| b == b'\n')
                .map(|(i, _)| i + 1),
        );
        Self {
            starts,
            len: text.len(),
        }
    }

    pub fn n_lines(&self) -> usize {
        self.starts.len()
    }

    /// 1-based line containing byte `offset`.
    pub fn line_of(&self, offset: usize) -> usize {
        self.starts.partition_point(|&s| s <= offset.min(self.len))
    }

    pub fn line_start(&self, line: usize) -> Option<usize> {
        line.checked_sub(1).and_then(|i| self.starts.get(i).copied())
    }
}

/// Original line of 1-based `cleaned_line`: the line holding the original
/// byte behind the cleaned line's first byte.
pub fn map_line(
    delta: &PositionDelta,
    original: &LineIndex,
    cleaned: &LineIndex,
    cleaned_line: usize,
) -> Result<usize, ExtractError> {
    let start = cleaned.line_start(cleaned_line).ok_or(ExtractError::LineOutOfRange {
        line: cleaned_line,
        max: cleaned.n_lines(),
    })?;
    let o = delta.to_original(start).expect("line start within cleaned text");
    Ok(original.line_of(o))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start_line: usize,
    pub end_line: usize,
    pub start_byte: usize,
    /// Exclusive; just past the closing brace.
    pub end_byte: usize,
}

impl Span {
    pub fn contains_line(&self, line: usize) -> bool {
        (self.start_line..=self.end_line).contains(&line)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFunction {
    pub name: String,
    pub span: Span,
    /// Comment-stripped signature and body.
    pub cleaned_text: String,
    /// Cleaned offsets → offsets relative to `span.start_byte`.
    pub delta: PositionDelta,
    /// Line starts of the original span text.
    original_lines: LineIndex,
    #[serde(skip)]
    cleaned_lines: Option<LineIndex>,
}

impl SourceFunction {
    fn new(name: String, span: Span, original: &str) -> (Self, Vec<String>) {
        let stripped = strip_comments(original);
        let f = Self {
            name,
            span,
            original_lines: LineIndex::new(original),
            cleaned_lines: Some(LineIndex::new(&stripped.text)),
            cleaned_text: stripped.text,
            delta: stripped.delta,
        };
        (f, stripped.warnings)
    }

    /// File line of 1-based line `cleaned_line` of `cleaned_text`.
    pub fn original_line(&self, cleaned_line: usize) -> Result<usize, ExtractError> {
        let rebuilt;
        let cleaned = match &self.cleaned_lines {
            Some(c) => c,
            None => {
                rebuilt = LineIndex::new(&self.cleaned_text);
                &rebuilt
            }
        };
        let local = map_line(&self.delta, &self.original_lines, cleaned, cleaned_line)?;
        Ok(self.span.start_line + local - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extraction {
    pub functions: Vec<SourceFunction>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Scope {
    /// File, namespace, `extern "C"` or class body: definitions may appear.
    Container,
    Function {
        start: usize,
        name: Option<String>,
    },
    Other,
}

enum Opening {
    Function(Option<String>),
    Container,
    Other,
}

/// Parenthesized groups introduced by these words are not parameter lists.
const ATTRIBUTE_WORDS: [&[u8]; 5] = [b"__attribute__", b"__attribute", b"__declspec", b"alignas", b"_Alignas"];
const CONTAINER_KEYWORDS: [&[u8]; 6] = [b"namespace", b"extern", b"class", b"struct", b"union", b"enum"];

/// Decide what a `{` at container scope opens, given the lexeme indices of
/// the statement before it.
fn classify(src: &[u8], lx: &[Lexeme], stmt: &[usize]) -> Opening {
    let text = |i: usize| &src[lx[i].start..lx[i].end];
    let punct = |i: usize, c: u8| lx[i].kind == Kind::Punct(c);
    let mut depth = 0i32;
    let mut first_paren: Option<usize> = None;
    let mut close_paren: Option<usize> = None;
    let mut in_attribute = false;
    let mut k = 0;
    while k < stmt.len() {
        let i = stmt[k];
        if depth == 0 && first_paren.is_none() {
            if lx[i].kind == Kind::Ident && text(i) == b"operator" {
                // Skip the operator symbol, which may itself be `()` or `=`.
                k += 1;
                if k + 1 < stmt.len() && punct(stmt[k], b'(') && punct(stmt[k + 1], b')') {
                    k += 2;
                }
                while k < stmt.len() && !punct(stmt[k], b'(') {
                    k += 1;
                }
                continue;
            }
            if punct(i, b'=') {
                return Opening::Other;
            }
        }
        if punct(i, b'(') {
            if depth == 0 && first_paren.is_none() {
                let attr = k > 0 && lx[stmt[k - 1]].kind == Kind::Ident && ATTRIBUTE_WORDS.contains(&text(stmt[k - 1]));
                if attr {
                    in_attribute = true;
                } else {
                    first_paren = Some(k);
                }
            }
            depth += 1;
        } else if punct(i, b')') {
            depth -= 1;
            if depth == 0 {
                if in_attribute {
                    in_attribute = false;
                } else if close_paren.is_none() && first_paren.is_some() {
                    close_paren = Some(k);
                }
            }
        }
        k += 1;
    }

    let is_container = || {
        stmt.iter()
            .take(first_paren.unwrap_or(stmt.len()))
            .any(|&i| lx[i].kind == Kind::Ident && CONTAINER_KEYWORDS.contains(&text(i)))
    };
    let (Some(fp), Some(cp)) = (first_paren, close_paren) else {
        return if is_container() {
            Opening::Container
        } else {
            Opening::Other
        };
    };
    if fp == 0 {
        return Opening::Other;
    }
    // What may follow the parameter list: qualifiers, a trailing return
    // type, an initializer list, or further parenthesized groups.
    let tail = &stmt[cp + 1..];
    let mut init_list = false;
    let mut n = 0;
    while n < tail.len() {
        let i = tail[n];
        let scope_op = punct(i, b':') && n + 1 < tail.len() && punct(tail[n + 1], b':');
        match lx[i].kind {
            _ if scope_op => n += 1,
            Kind::Punct(b':') => init_list = true,
            _ if init_list => {}
            Kind::Ident | Kind::Number | Kind::Str => {}
            Kind::Punct(b'&' | b'*' | b'-' | b'>' | b'<' | b'(' | b')' | b',' | b'[' | b']') => {}
            _ => return Opening::Other,
        }
        n += 1;
    }
    // `A() : b{1} {`: a brace right after a member name initializes it.
    if init_list {
        let last = *stmt.last().expect("non-empty");
        if lx[last].kind == Kind::Ident || punct(last, b'>') {
            return Opening::Other;
        }
    }
    Opening::Function(name_index(src, lx, stmt, fp).map(|n| full_name(src, lx, stmt, n)))
}

/// `public:` and friends end the statement before them.
fn is_access_label(src: &[u8], lx: &[Lexeme], stmt: &[usize]) -> bool {
    matches!(stmt, [i] if lx[*i].kind == Kind::Ident
        && matches!(&src[lx[*i].start..lx[*i].end], b"public" | b"private" | b"protected"))
}

/// Lexeme index of the identifier naming the function whose parameter list
/// opens at statement position `fp`.
fn name_index(src: &[u8], lx: &[Lexeme], stmt: &[usize], fp: usize) -> Option<usize> {
    let declarator_group = stmt
        .get(fp + 1)
        .is_some_and(|&i| matches!(lx[i].kind, Kind::Punct(b'*' | b'&' | b'^')));
    let before = stmt[fp - 1];
    if lx[before].kind == Kind::Ident && !declarator_group {
        return Some(before);
    }
    // `operator==`, `operator()`: walk back to the keyword.
    let op = stmt[..fp]
        .iter()
        .rposition(|&i| lx[i].kind == Kind::Ident && &src[lx[i].start..lx[i].end] == b"operator");
    if let Some(p) = op.filter(|_| !declarator_group) {
        return Some(stmt[p]);
    }
    // Function returning a function pointer: `int (*f(int))(void)`.
    stmt[fp + 1..]
        .windows(2)
        .find(|w| lx[w[0]].kind == Kind::Ident && lx[w[1]].kind == Kind::Punct(b'('))
        .map(|w| w[0])
}

/// Qualified name (`ns::Class::method`, `~Class`, `operator==`) around
/// lexeme `i`.
fn full_name(src: &[u8], lx: &[Lexeme], stmt: &[usize], i: usize) -> String {
    let text = |i: usize| String::from_utf8_lossy(&src[lx[i].start..lx[i].end]).into_owned();
    let pos = stmt.iter().position(|&j| j == i).unwrap_or(0);
    if text(i) == "operator" {
        let mut name = String::from("operator");
        let mut k = pos + 1;
        if k + 1 < stmt.len() && lx[stmt[k]].kind == Kind::Punct(b'(') && lx[stmt[k + 1]].kind == Kind::Punct(b')') {
            name.push_str("()");
        } else {
            while k < stmt.len() && lx[stmt[k]].kind != Kind::Punct(b'(') {
                if lx[stmt[k]].kind == Kind::Ident {
                    name.push(' ');
                }
                name.push_str(&text(stmt[k]));
                k += 1;
            }
        }
        return name;
    }
    let mut parts = vec![text(i)];
    let mut k = pos;
    loop {
        if k >= 1 && lx[stmt[k - 1]].kind == Kind::Punct(b'~') {
            parts[0].insert(0, '~');
            k -= 1;
        }
        if k >= 3
            && lx[stmt[k - 1]].kind == Kind::Punct(b':')
            && lx[stmt[k - 2]].kind == Kind::Punct(b':')
            && lx[stmt[k - 3]].kind == Kind::Ident
        {
            parts.insert(0, text(stmt[k - 3]));
            k -= 3;
        } else {
            break;
        }
    }
    parts.join("::")
}

/// Find function definitions in `source`. Never fails: unbalanced braces
/// yield the functions closed so far plus warnings.
pub fn extract_functions(source: &str) -> Extraction {
    let src = source.as_bytes();
    let lx = lex(src);
    let lines = LineIndex::new(source);
    let mut functions = Vec::new();
    let mut warnings = Vec::new();
    let mut stack: Vec<Scope> = Vec::new();
    let mut stmt: Vec<usize> = Vec::new();

    let at_container = |stack: &[Scope]| matches!(stack.last(), None | Some(Scope::Container));
    for (i, l) in lx.iter().enumerate() {
        if l.directive || matches!(l.kind, Kind::LineComment | Kind::BlockComment { .. }) {
            continue;
        }
        match l.kind {
            Kind::Punct(b'{') => {
                let scope = if at_container(&stack) {
                    let scope = match classify(src, &lx, &stmt) {
                        Opening::Function(name) => Scope::Function {
                            start: stmt.first().map_or(l.start, |&j| lx[j].start),
                            name,
                        },
                        Opening::Container => Scope::Container,
                        Opening::Other => Scope::Other,
                    };
                    if scope != Scope::Other {
                        stmt.clear();
                    }
                    scope
                } else {
                    Scope::Other
                };
                stack.push(scope);
            }
            Kind::Punct(b'}') => match stack.pop() {
                None => warnings.push(format!("unmatched '}}' at line {}", lines.line_of(l.start))),
                Some(Scope::Function { start, name }) => {
                    let end = l.end;
                    let name = name.unwrap_or_else(|| ANONYMOUS.to_string());
                    let span = Span {
                        start_line: lines.line_of(start),
                        end_line: lines.line_of(end - 1),
                        start_byte: start,
                        end_byte: end,
                    };
                    let (f, w) = SourceFunction::new(name, span, &source[start..end]);
                    warnings.extend(w);
                    functions.push(f);
                    stmt.clear();
                }
                Some(Scope::Container) => stmt.clear(),
                Some(Scope::Other) => {
                    if at_container(&stack) {
                        // `struct s { ... } x;` or an initializer keeps the
                        // statement going until `;`.
                        stmt.push(i);
                    }
                }
            },
            Kind::Punct(b';') if at_container(&stack) => stmt.clear(),
            Kind::Punct(b':') if at_container(&stack) && is_access_label(src, &lx, &stmt) => stmt.clear(),
            _ if at_container(&stack) => stmt.push(i),
            _ => {}
        }
    }
    if !stack.is_empty() {
        let open = stack.iter().filter(|s| matches!(s, Scope::Function { .. })).count();
        warnings.push(format!(
            "unbalanced braces: {} block(s) still open at end of file{}",
            stack.len(),
            if open > 0 {
                format!("; {open} incomplete function(s) dropped")
            } else {
                String::new()
            }
        ));
    }
    for l in &lx {
        if let Kind::BlockComment { terminated: false } = l.kind {
            warnings.push(format!("unterminated block comment at line {}", lines.line_of(l.start)));
        }
    }
    warnings.dedup();
    Extraction { functions, warnings }
}
