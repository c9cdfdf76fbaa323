//! Maximal-munch Solidity lexer producing lexeme strings.
//!
//! String literals become a single token. Whitespace inside a literal is
//! rewritten as a `\xNN` / `\u{..}` escape so that no token ever contains
//! whitespace; the escaped form lexes back to the same token.

use serde::{Deserialize, Serialize};

use super::normalize::scan_string;

/// Multi-character operators, longest first within each shared prefix.
const OPERATORS: &[&str] = &[
    ">>>=", "<<=", ">>=", ">>>", "**", "==", "!=", "<=", ">=", "&&", "||", "++", "--", "+=", "-=", "*=", "/=",
    "%=", "|=", "&=", "^=", "<<", ">>", "=>", "->", ":=",
];

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub origin: String,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_' || b == b'$'
}

fn is_ident_continue(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'$'
}

fn scan_number(bytes: &[u8], start: usize) -> usize {
    let mut i = start;
    if bytes[i] == b'0'
        && matches!(bytes.get(i + 1), Some(b'x' | b'X'))
        && bytes.get(i + 2).is_some_and(|b| b.is_ascii_hexdigit())
    {
        i += 2;
        while i < bytes.len() && (bytes[i].is_ascii_hexdigit() || bytes[i] == b'_') {
            i += 1;
        }
        return i;
    }
    let digits = |mut i: usize| {
        while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'_') {
            i += 1;
        }
        i
    };
    i = digits(i);
    if bytes.get(i) == Some(&b'.') && bytes.get(i + 1).is_some_and(|b| b.is_ascii_digit()) {
        i = digits(i + 1);
    }
    if matches!(bytes.get(i), Some(b'e' | b'E')) {
        let sign = usize::from(bytes.get(i + 1) == Some(&b'-'));
        if bytes.get(i + 1 + sign).is_some_and(|b| b.is_ascii_digit()) {
            i = digits(i + 1 + sign);
        }
    }
    i
}

fn escape_whitespace(literal: &str) -> String {
    let mut out = String::with_capacity(literal.len());
    for ch in literal.chars() {
        if ch.is_whitespace() {
            let cp = ch as u32;
            if cp < 0x80 {
                out.push_str(&format!("\\x{cp:02x}"));
            } else {
                out.push_str(&format!("\\u{{{cp:x}}}"));
            }
        } else {
            out.push(ch);
        }
    }
    out
}

/// Lex normalized Solidity text. Bytes that start no known lexeme become
/// single-character tokens; nothing is dropped except whitespace.
pub fn tokenize(code: &str) -> Vec<String> {
    let bytes = code.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let start = i;
        if is_ident_start(b) {
            while i < bytes.len() && is_ident_continue(bytes[i]) {
                i += 1;
            }
            tokens.push(code[start..i].to_string());
        } else if b.is_ascii_digit() {
            i = scan_number(bytes, i);
            tokens.push(code[start..i].to_string());
        } else if b == b'"' || b == b'\'' {
            i = scan_string(bytes, i).unwrap_or(bytes.len());
            tokens.push(escape_whitespace(&code[start..i]));
        } else if let Some(op) = OPERATORS.iter().find(|op| bytes[i..].starts_with(op.as_bytes())) {
            i += op.len();
            tokens.push((*op).to_string());
        } else {
            let ch = code[i..].chars().next().expect("char boundary");
            i += ch.len_utf8();
            if !ch.is_whitespace() {
                tokens.push(ch.to_string());
            }
        }
    }
    tokens
}

pub fn tokenize_sequence(code: &str, origin: impl Into<String>) -> TokenSequence {
    TokenSequence { tokens: tokenize(code), origin: origin.into() }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn empty_input() {
        assert!(lex("").is_empty());
        assert!(lex("   ").is_empty());
    }

    #[test]
    fn declaration() {
        assert_eq!(lex("uint256 a = b + 1;"), ["uint256", "a", "=", "b", "+", "1", ";"]);
    }

    #[test]
    fn maximal_munch_operators() {
        assert_eq!(lex("a>=b"), ["a", ">=", "b"]);
        assert_eq!(lex("x>>>=2"), ["x", ">>>=", "2"]);
        assert_eq!(lex("a=>b==c!=d"), ["a", "=>", "b", "==", "c", "!=", "d"]);
        assert_eq!(lex("i++<n&&ok||!f"), ["i", "++", "<", "n", "&&", "ok", "||", "!", "f"]);
        assert_eq!(lex("x=-1"), ["x", "=", "-", "1"]);
    }

    #[test]
    fn member_call_chain() {
        assert_eq!(
            lex("msg.sender.call.value(1)()"),
            ["msg", ".", "sender", ".", "call", ".", "value", "(", "1", ")", "(", ")"]
        );
    }

    #[test]
    fn numbers() {
        assert_eq!(lex("0xFFab 1_000 1.5 1e18 2e-3 3.x"), ["0xFFab", "1_000", "1.5", "1e18", "2e-3", "3", ".", "x"]);
        assert_eq!(lex("0x"), ["0", "x"]);
        assert_eq!(lex("1ether"), ["1", "ether"]);
    }

    #[test]
    fn string_literal_is_one_token() {
        assert_eq!(lex(r#"emit Log("// not a comment");"#), ["emit", "Log", "(", "\"//\\x20not\\x20a\\x20comment\"", ")", ";"]);
        assert_eq!(lex(r#"'a\'b'"#), [r#"'a\'b'"#]);
    }

    #[test]
    fn unknown_bytes_kept() {
        assert_eq!(lex("a ¤ b"), ["a", "¤", "b"]);
        assert_eq!(lex("@#"), ["@", "#"]);
    }

    #[test]
    fn rejoined_tokens_relex_identically() {
        let toks = lex(r#"if (msg.sender.call.value(x)("a b")) { balances[msg.sender] -= 0x1f; }"#);
        assert_eq!(lex(&toks.join(" ")), toks);
    }
}
