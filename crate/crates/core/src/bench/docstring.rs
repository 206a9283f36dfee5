//! Docstring removal for Python source.
//!
//! A small scanner groups physical lines into logical lines (tracking
//! strings, comments, brackets and backslash continuations) and classifies
//! each one. A docstring is a run of string-only statements that opens a
//! module body or the indented body of a `def`/`class` header. Removing the
//! whole run keeps the operation idempotent; a body left empty gets `pass`.
//! Text after an unterminated string is never touched.

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Str,
    Name { text: String, end: usize },
    Op(u8),
    Other,
}

#[derive(Debug)]
struct LogicalLine {
    start: usize,
    end: usize,
    /// byte length of the leading whitespace
    indent_len: usize,
    /// indentation width in columns, tabs to multiples of 8
    indent: usize,
    tokens: Vec<Tok>,
}

impl LogicalLine {
    fn is_blank(&self) -> bool {
        self.tokens.is_empty()
    }

    fn is_string_stmt(&self) -> bool {
        !self.tokens.is_empty() && self.tokens.iter().all(|t| *t == Tok::Str)
    }

    /// `def`/`class` header whose body starts on the next line.
    fn opens_def_suite(&self) -> bool {
        let mut names = self.tokens.iter().filter_map(|t| match t {
            Tok::Name { text, .. } => Some(text.as_str()),
            _ => None,
        });
        let first = match self.tokens.first() {
            Some(Tok::Name { text, .. }) => text.as_str(),
            _ => return false,
        };
        let keyword = if first == "async" {
            names.nth(1)
        } else {
            Some(first)
        };
        matches!(keyword, Some("def" | "class")) && self.tokens.last() == Some(&Tok::Op(b':'))
    }
}

/// Returns the logical lines that scanned cleanly and whether the scan
/// reached the end of the text.
fn logical_lines(src: &str) -> (Vec<LogicalLine>, bool) {
    let b = src.as_bytes();
    let n = b.len();
    let mut lines = Vec::new();
    let mut i = 0;
    while i < n {
        let start = i;
        let mut indent = 0;
        while i < n && matches!(b[i], b' ' | b'\t' | b'\x0c') {
            indent = if b[i] == b'\t' { (indent / 8 + 1) * 8 } else { indent + 1 };
            i += 1;
        }
        let indent_len = i - start;
        let mut tokens = Vec::new();
        let mut depth = 0usize;
        loop {
            if i >= n {
                break;
            }
            let c = b[i];
            match c {
                b'\n' => {
                    i += 1;
                    if depth == 0 {
                        break;
                    }
                }
                b' ' | b'\t' | b'\r' | b'\x0c' => i += 1,
                b'#' => {
                    while i < n && b[i] != b'\n' {
                        i += 1;
                    }
                }
                b'\\' => {
                    if b[i + 1..].starts_with(b"\n") {
                        i += 2;
                    } else if b[i + 1..].starts_with(b"\r\n") {
                        i += 3;
                    } else {
                        tokens.push(Tok::Other);
                        i += 1;
                    }
                }
                b'"' | b'\'' => {
                    if let Some(Tok::Name { text, end }) = tokens.last() {
                        let is_prefix = *end == i
                            && text.len() <= 2
                            && text.bytes().all(|c| b"rRbBuUfF".contains(&c));
                        if is_prefix {
                            tokens.pop();
                        }
                    }
                    match skip_string(b, i) {
                        Some(next) => i = next,
                        None => return (lines, false),
                    }
                    tokens.push(Tok::Str);
                }
                b'(' | b'[' | b'{' => {
                    depth += 1;
                    tokens.push(Tok::Op(c));
                    i += 1;
                }
                b')' | b']' | b'}' => {
                    depth = depth.saturating_sub(1);
                    tokens.push(Tok::Op(c));
                    i += 1;
                }
                c if c == b'_' || c.is_ascii_alphabetic() || c >= 0x80 => {
                    let s = i;
                    while i < n && (b[i] == b'_' || b[i].is_ascii_alphanumeric() || b[i] >= 0x80) {
                        i += 1;
                    }
                    tokens.push(Tok::Name {
                        text: src[s..i].to_string(),
                        end: i,
                    });
                }
                c if c.is_ascii_digit() => {
                    while i < n && (b[i] == b'_' || b[i] == b'.' || b[i].is_ascii_alphanumeric()) {
                        i += 1;
                    }
                    tokens.push(Tok::Other);
                }
                _ => {
                    tokens.push(Tok::Op(c));
                    i += 1;
                }
            }
        }
        lines.push(LogicalLine {
            start,
            end: i,
            indent_len,
            indent,
            tokens,
        });
    }
    (lines, true)
}

/// Index just past the string literal opening at `i`, or `None` when it is
/// unterminated.
fn skip_string(b: &[u8], mut i: usize) -> Option<usize> {
    let quote = b[i];
    let triple = b[i..].starts_with(&[quote; 3]);
    i += if triple { 3 } else { 1 };
    while i < b.len() {
        match b[i] {
            b'\\' => i += 2,
            c if triple && c == quote && b[i..].starts_with(&[quote; 3]) => return Some(i + 3),
            c if !triple && c == quote => return Some(i + 1),
            b'\n' if !triple => return None,
            _ => i += 1,
        }
    }
    None
}

/// A byte range to replace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Edit {
    pub start: usize,
    pub end: usize,
    pub replacement: String,
}

pub(crate) fn docstring_edits(src: &str) -> Vec<Edit> {
    let (lines, complete) = logical_lines(src);
    let stmts: Vec<usize> = (0..lines.len()).filter(|&i| !lines[i].is_blank()).collect();
    let mut edits = Vec::new();

    // Consecutive string statements starting at stmts[from] with the same
    // indentation; returns the position in `stmts` after the run.
    let run_end = |from: usize| {
        let indent = lines[stmts[from]].indent;
        let mut k = from;
        while k < stmts.len() && lines[stmts[k]].is_string_stmt() && lines[stmts[k]].indent == indent {
            k += 1;
        }
        k
    };

    if let Some(&first) = stmts.first() {
        if lines[first].is_string_stmt() && lines[first].indent == 0 {
            for &li in &stmts[..run_end(0)] {
                edits.push(Edit {
                    start: lines[li].start,
                    end: lines[li].end,
                    replacement: String::new(),
                });
            }
        }
    }

    for (pos, &hi) in stmts.iter().enumerate() {
        if !lines[hi].opens_def_suite() {
            continue;
        }
        let Some(&body) = stmts.get(pos + 1) else {
            continue;
        };
        if !(lines[body].is_string_stmt() && lines[body].indent > lines[hi].indent) {
            continue;
        }
        let after = run_end(pos + 1);
        let suite_empty = match stmts.get(after) {
            Some(&next) => lines[next].indent <= lines[hi].indent,
            // the body may continue past an unscannable region
            None if !complete => continue,
            None => true,
        };
        for (n, &li) in stmts[pos + 1..after].iter().enumerate() {
            let line = &lines[li];
            let replacement = if suite_empty && n == 0 {
                let newline = if src[..line.end].ends_with("\r\n") {
                    "\r\n"
                } else if src[..line.end].ends_with('\n') {
                    "\n"
                } else {
                    ""
                };
                format!("{}pass{newline}", &src[line.start..line.start + line.indent_len])
            } else {
                String::new()
            };
            edits.push(Edit {
                start: line.start,
                end: line.end,
                replacement,
            });
        }
    }
    edits.sort_by_key(|e| e.start);
    edits
}

pub(crate) fn apply_edits(src: &str, edits: &[Edit]) -> String {
    let mut out = String::with_capacity(src.len());
    let mut pos = 0;
    for e in edits {
        out.push_str(&src[pos..e.start]);
        out.push_str(&e.replacement);
        pos = e.end;
    }
    out.push_str(&src[pos..]);
    out
}

/// Position of `offset` in the edited text. Offsets inside an edit map to
/// the edit's start.
pub(crate) fn map_offset(edits: &[Edit], offset: usize) -> usize {
    let mut shift: isize = 0;
    for e in edits {
        if e.end <= offset {
            shift += e.replacement.len() as isize - (e.end - e.start) as isize;
        } else if e.start < offset {
            return (e.start as isize + shift) as usize;
        }
    }
    (offset as isize + shift) as usize
}

/// Removes module, class and function docstrings. Everything else is left
/// byte-for-byte as it was.
pub fn strip_docstrings(source: &str) -> String {
    apply_edits(source, &docstring_edits(source))
}
