//! String-aware comment stripping and whitespace normalization.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormalizeIssue {
    UnterminatedComment,
    UnterminatedString,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizeWarning {
    pub issue: NormalizeIssue,
    /// Byte offset of the opening delimiter in the input.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Normalized {
    pub text: String,
    pub warnings: Vec<NormalizeWarning>,
}

impl Normalized {
    pub fn is_clean(&self) -> bool {
        self.warnings.is_empty()
    }
}

/// Remove `//` and `/* */` comments outside string literals, collapse every
/// run of whitespace (including line breaks) outside string literals into a
/// single space and trim both ends. String literals are copied verbatim.
///
/// Malformed input never fails: an unterminated block comment swallows the
/// rest of the input and an unterminated string is kept as-is, each with a
/// warning carrying the byte offset of its opening delimiter.
pub fn normalize_source(code: &str) -> Normalized {
    let bytes = code.as_bytes();
    let mut out = String::with_capacity(code.len());
    let mut warnings = Vec::new();
    let mut pending_space = false;
    let mut i = 0;

    // Pushes a separator only between two non-space pieces of output.
    let flush = |out: &mut String, pending: &mut bool| {
        if *pending && !out.is_empty() {
            out.push(' ');
        }
        *pending = false;
    };

    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                while i < bytes.len() && bytes[i] != b'\n' && bytes[i] != b'\r' {
                    i += 1;
                }
                pending_space = true;
            }
            b'/' if bytes.get(i + 1) == Some(&b'*') => {
                let start = i;
                match code[i + 2..].find("*/") {
                    Some(end) => i = i + 2 + end + 2,
                    None => {
                        warnings.push(NormalizeWarning { issue: NormalizeIssue::UnterminatedComment, offset: start });
                        i = bytes.len();
                    }
                }
                pending_space = true;
            }
            b'"' | b'\'' => {
                let start = i;
                let end = scan_string(bytes, i);
                if end.is_none() {
                    warnings.push(NormalizeWarning { issue: NormalizeIssue::UnterminatedString, offset: start });
                }
                let end = end.unwrap_or(bytes.len());
                flush(&mut out, &mut pending_space);
                out.push_str(&code[start..end]);
                i = end;
            }
            _ => {
                let ch = code[i..].chars().next().expect("index on char boundary");
                if ch.is_whitespace() {
                    pending_space = true;
                } else {
                    flush(&mut out, &mut pending_space);
                    out.push(ch);
                }
                i += ch.len_utf8();
            }
        }
    }
    Normalized { text: out, warnings }
}

/// End offset (exclusive) of the string literal opening at `start`, or
/// `None` when the literal is not closed before the end of input. Escapes
/// are honoured; line breaks do not terminate a literal.
pub(crate) fn scan_string(bytes: &[u8], start: usize) -> Option<usize> {
    let quote = bytes[start];
    let mut i = start + 1;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' => i += 2,
            c if c == quote => return Some(i + 1),
            _ => i += 1,
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_line_comment() {
        assert_eq!(normalize_source("x = 1; // note\n").text, "x = 1;");
    }

    #[test]
    fn strips_block_comment_and_collapses_whitespace() {
        let n = normalize_source("contract A {\r\n  /* multi\n line */ uint  x;\t\n}\n");
        assert_eq!(n.text, "contract A { uint x; }");
        assert!(n.is_clean());
    }

    #[test]
    fn comment_does_not_glue_tokens() {
        assert_eq!(normalize_source("a/*c*/b").text, "a b");
    }

    #[test]
    fn comment_markers_inside_strings_survive() {
        let src = r#"emit Log("// not a comment");"#;
        assert_eq!(normalize_source(src).text, src);
        let src = "s = '/* kept */   as is';";
        assert_eq!(normalize_source(src).text, src);
    }

    #[test]
    fn escaped_quote_does_not_end_string() {
        let src = r#"s = "a \" // still string"; // gone"#;
        assert_eq!(normalize_source(src).text, r#"s = "a \" // still string";"#);
    }

    #[test]
    fn idempotent_on_normalized_text() {
        let once = normalize_source("uint a = b + 1; // c\n /* d */ x").text;
        assert_eq!(normalize_source(&once).text, once);
    }

    #[test]
    fn unterminated_comment_is_reported() {
        let n = normalize_source("uint a; /* open");
        assert_eq!(n.text, "uint a;");
        assert_eq!(n.warnings, vec![NormalizeWarning { issue: NormalizeIssue::UnterminatedComment, offset: 8 }]);
    }

    #[test]
    fn unterminated_string_is_kept() {
        let n = normalize_source("x = \"abc  def");
        assert_eq!(n.text, "x = \"abc  def");
        assert_eq!(n.warnings[0].issue, NormalizeIssue::UnterminatedString);
        assert_eq!(n.warnings[0].offset, 4);
    }

    #[test]
    fn non_ascii_passes_through() {
        assert_eq!(normalize_source("  é\u{a0}ü  ").text, "é ü");
    }
}
