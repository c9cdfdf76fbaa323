//! WordPiece subword tokenizer compatible with BERT-family `vocab.txt` files.

use std::collections::HashMap;
use std::path::Path;

use super::{EncodedSequence, PreprocessError};

const MAX_CHARS_PER_WORD: usize = 100;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordPieceTokenizer {
    pieces: Vec<String>,
    id_of: HashMap<String, u32>,
    lowercase: bool,
    pad_id: u32,
    unk_id: u32,
    cls_id: u32,
    sep_id: u32,
}

impl WordPieceTokenizer {
    pub fn from_pieces(pieces: Vec<String>, lowercase: bool) -> Result<Self, PreprocessError> {
        let id_of: HashMap<String, u32> = pieces.iter().enumerate().map(|(i, p)| (p.clone(), i as u32)).collect();
        let special = |name: &str| {
            id_of.get(name).copied().ok_or_else(|| PreprocessError::VocabFormat(format!("vocab lacks {name}")))
        };
        Ok(Self {
            pad_id: special("[PAD]")?,
            unk_id: special("[UNK]")?,
            cls_id: special("[CLS]")?,
            sep_id: special("[SEP]")?,
            pieces,
            id_of,
            lowercase,
        })
    }

    /// Parse a `vocab.txt` (one piece per line, id = line number).
    pub fn from_vocab_text(text: &str, lowercase: bool) -> Result<Self, PreprocessError> {
        let pieces = text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect();
        Self::from_pieces(pieces, lowercase)
    }

    pub fn from_file(path: &Path, lowercase: bool) -> Result<Self, PreprocessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PreprocessError::VocabFormat(format!("{}: {e}", path.display())))?;
        Self::from_vocab_text(&text, lowercase)
    }

    pub fn to_vocab_text(&self) -> String {
        let mut s = self.pieces.join("\n");
        s.push('\n');
        s
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn pad_id(&self) -> u32 {
        self.pad_id
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    fn basic_words(&self, text: &str) -> Vec<String> {
        let mut words = Vec::new();
        let mut cur = String::new();
        for ch in text.chars() {
            if ch.is_whitespace() {
                if !cur.is_empty() {
                    words.push(std::mem::take(&mut cur));
                }
            } else if ch.is_control() || ch == '\u{fffd}' {
                continue;
            } else if ch.is_ascii_punctuation() || (!ch.is_alphanumeric() && !ch.is_ascii()) {
                if !cur.is_empty() {
                    words.push(std::mem::take(&mut cur));
                }
                words.push(ch.to_string());
            } else if self.lowercase {
                cur.extend(ch.to_lowercase());
            } else {
                cur.push(ch);
            }
        }
        if !cur.is_empty() {
            words.push(cur);
        }
        words
    }

    fn word_pieces(&self, word: &str, out: &mut Vec<u32>) {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_CHARS_PER_WORD {
            out.push(self.unk_id);
            return;
        }
        let mark = out.len();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let mut piece: String = chars[start..end].iter().collect();
                if start > 0 {
                    piece.insert_str(0, "##");
                }
                if let Some(&id) = self.id_of.get(&piece) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    out.push(id);
                    start = end;
                }
                None => {
                    out.truncate(mark);
                    out.push(self.unk_id);
                    return;
                }
            }
        }
    }

    /// Subword ids of `text` without special tokens.
    pub fn tokenize_ids(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for word in self.basic_words(text) {
            self.word_pieces(&word, &mut ids);
        }
        ids
    }

    /// `[CLS] pieces… [SEP]` truncated (head kept) and padded to `max_len`.
    pub fn encode(&self, text: &str, max_len: usize) -> EncodedSequence {
        assert!(max_len >= 2, "max_len must leave room for [CLS] and [SEP]");
        let mut ids = Vec::with_capacity(max_len);
        ids.push(self.cls_id);
        let body = self.tokenize_ids(text);
        ids.extend(body.into_iter().take(max_len - 2));
        ids.push(self.sep_id);
        let true_length = ids.len();
        ids.resize(max_len, self.pad_id);
        EncodedSequence { ids, true_length }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok() -> WordPieceTokenizer {
        let pieces = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "function", "with", "##draw", "(", ")", "msg", ".", "sender", "un", "##aff", "##able"];
        WordPieceTokenizer::from_pieces(pieces.iter().map(|s| s.to_string()).collect(), true).unwrap()
    }

    #[test]
    fn greedy_longest_match() {
        let t = tok();
        let ids = t.tokenize_ids("function withdraw() unaffable");
        let pieces: Vec<&str> = ids.iter().map(|&i| t.piece(i).unwrap()).collect();
        assert_eq!(pieces, ["function", "with", "##draw", "(", ")", "un", "##aff", "##able"]);
    }

    #[test]
    fn unknown_word_becomes_single_unk() {
        let t = tok();
        assert_eq!(t.tokenize_ids("withx"), vec![1]);
        assert_eq!(t.tokenize_ids("Msg.Sender"), vec![9, 10, 11]);
    }

    #[test]
    fn encode_adds_specials_and_truncates_head() {
        let t = tok();
        let e = t.encode("msg.sender", 8);
        assert_eq!(e.ids, vec![2, 9, 10, 11, 3, 0, 0, 0]);
        assert_eq!(e.true_length, 5);
        let e = t.encode("msg.sender", 4);
        assert_eq!(e.ids, vec![2, 9, 10, 3]);
        assert_eq!(e.true_length, 4);
    }

    #[test]
    fn requires_special_pieces() {
        assert!(WordPieceTokenizer::from_pieces(vec!["[PAD]".into()], true).is_err());
    }
}
