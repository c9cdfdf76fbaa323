use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::lexer::TokenSequence;
use super::{EncodedSequence, PreprocessError};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

pub const DEFAULT_MAX_SIZE: usize = 20_000;
pub const DEFAULT_MIN_FREQ: u64 = 2;
pub const DEFAULT_MAX_LEN: usize = 512;

/// Lexeme ↔ id mapping built from training-partition tokens.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    lexemes: Vec<String>,
    freqs: Vec<u64>,
    id_of: HashMap<String, u32>,
    max_size: usize,
    min_freq: u64,
}

#[derive(Serialize, Deserialize)]
struct VocabEntry {
    lexeme: String,
    id: u32,
    freq: u64,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    schema_version: u32,
    max_size: usize,
    min_freq: u64,
    entries: Vec<VocabEntry>,
}

impl Vocab {
    const SCHEMA_VERSION: u32 = 1;

    /// Keep lexemes seen at least `min_freq` times, most frequent first
    /// (ties lexicographic), capped at `max_size`; `<pad>` and `<unk>` are
    /// prepended with ids 0 and 1.
    pub fn build<'a, I>(train_sequences: I, max_size: usize, min_freq: u64) -> Self
    where
        I: IntoIterator<Item = &'a TokenSequence>,
    {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for seq in train_sequences {
            for tok in &seq.tokens {
                *counts.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, u64)> = counts.into_iter().filter(|&(_, n)| n >= min_freq).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        kept.truncate(max_size);

        let mut lexemes = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut freqs = vec![0, 0];
        for (lex, n) in kept {
            lexemes.push(lex.to_string());
            freqs.push(n);
        }
        Self::from_parts(lexemes, freqs, max_size, min_freq)
    }

    fn from_parts(lexemes: Vec<String>, freqs: Vec<u64>, max_size: usize, min_freq: u64) -> Self {
        let id_of = lexemes.iter().enumerate().map(|(i, l)| (l.clone(), i as u32)).collect();
        Self { lexemes, freqs, id_of, max_size, min_freq }
    }

    pub fn len(&self) -> usize {
        self.lexemes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn min_freq(&self) -> u64 {
        self.min_freq
    }

    pub fn id(&self, lexeme: &str) -> u32 {
        self.id_of.get(lexeme).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, lexeme: &str) -> Option<u32> {
        self.id_of.get(lexeme).copied()
    }

    pub fn lexeme(&self, id: u32) -> Option<&str> {
        self.lexemes.get(id as usize).map(String::as_str)
    }

    pub fn frequency(&self, id: u32) -> Option<u64> {
        self.freqs.get(id as usize).copied()
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            schema_version: Self::SCHEMA_VERSION,
            max_size: self.max_size,
            min_freq: self.min_freq,
            entries: self
                .lexemes
                .iter()
                .zip(&self.freqs)
                .enumerate()
                .map(|(id, (lexeme, &freq))| VocabEntry { lexeme: lexeme.clone(), id: id as u32, freq })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PreprocessError> {
        let file: VocabFile = serde_json::from_str(text).map_err(|e| PreprocessError::VocabFormat(e.to_string()))?;
        let mut lexemes = Vec::with_capacity(file.entries.len());
        let mut freqs = Vec::with_capacity(file.entries.len());
        for (expected, entry) in file.entries.into_iter().enumerate() {
            if entry.id as usize != expected {
                return Err(PreprocessError::VocabFormat(format!(
                    "ids must be contiguous from 0: found {} at position {expected}",
                    entry.id
                )));
            }
            lexemes.push(entry.lexeme);
            freqs.push(entry.freq);
        }
        if lexemes.get(PAD_ID as usize).map(String::as_str) != Some(PAD_TOKEN)
            || lexemes.get(UNK_ID as usize).map(String::as_str) != Some(UNK_TOKEN)
        {
            return Err(PreprocessError::VocabFormat("missing <pad>/<unk> specials".into()));
        }
        Ok(Self::from_parts(lexemes, freqs, file.max_size, file.min_freq))
    }

    /// Map tokens to ids (unknown → `<unk>`), keep the first `max_len` and
    /// right-pad with `<pad>`.
    pub fn encode(&self, seq: &TokenSequence, max_len: usize) -> EncodedSequence {
        assert!(max_len >= 1, "max_len must be at least 1");
        let true_length = seq.tokens.len().min(max_len);
        let mut ids: Vec<u32> = seq.tokens[..true_length].iter().map(|t| self.id(t)).collect();
        ids.resize(max_len, PAD_ID);
        EncodedSequence { ids, true_length }
    }
}

pub fn build_vocab<'a, I>(train_sequences: I, max_size: usize, min_freq: u64) -> Vocab
where
    I: IntoIterator<Item = &'a TokenSequence>,
{
    Vocab::build(train_sequences, max_size, min_freq)
}

pub fn encode_sequence(seq: &TokenSequence, vocab: &Vocab, max_len: usize) -> EncodedSequence {
    vocab.encode(seq, max_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(tokens: &[&str]) -> TokenSequence {
        TokenSequence { tokens: tokens.iter().map(|s| s.to_string()).collect(), origin: "t".into() }
    }

    #[test]
    fn empty_training_set_has_only_specials() {
        let v = build_vocab(std::iter::empty(), 10, 1);
        assert_eq!(v.len(), 2);
        assert_eq!(v.lexeme(PAD_ID), Some(PAD_TOKEN));
        assert_eq!(v.lexeme(UNK_ID), Some(UNK_TOKEN));
    }

    #[test]
    fn min_freq_filters() {
        let v = build_vocab([&seq(&["a", "a", "b", "a"])], 10, 2);
        assert!(v.get("a").is_some());
        assert!(v.get("b").is_none());
        assert_eq!(v.frequency(v.id("a")), Some(3));
    }

    #[test]
    fn max_size_keeps_most_frequent_with_lexicographic_ties() {
        let s = seq(&["e", "d", "d", "c", "c", "c", "b", "b", "b", "a", "a", "a", "a"]);
        let v = build_vocab([&s], 3, 1);
        assert_eq!(v.len(), 5);
        assert_eq!(v.lexeme(2), Some("a"));
        assert_eq!(v.lexeme(3), Some("b"));
        assert_eq!(v.lexeme(4), Some("c"));
        let tie = build_vocab([&seq(&["z", "y", "x"])], 2, 1);
        assert_eq!((tie.lexeme(2), tie.lexeme(3)), (Some("x"), Some("y")));
    }

    #[test]
    fn encode_pads_truncates_and_maps_unknowns() {
        let v = build_vocab([&seq(&["a", "a", "b"])], 10, 1);
        let e = encode_sequence(&seq(&[]), &v, 4);
        assert_eq!(e.ids, vec![PAD_ID; 4]);
        assert_eq!(e.true_length, 0);

        let e = encode_sequence(&seq(&["a", "zzz", "b"]), &v, 4);
        assert_eq!(e.ids, vec![v.id("a"), UNK_ID, v.id("b"), PAD_ID]);
        assert_eq!(e.true_length, 3);

        let long: Vec<String> = (0..600).map(|i| if i % 2 == 0 { "a" } else { "b" }.to_string()).collect();
        let s = TokenSequence { tokens: long.clone(), origin: String::new() };
        let e = encode_sequence(&s, &v, 512);
        assert_eq!(e.ids.len(), 512);
        assert_eq!(e.true_length, 512);
        let expected: Vec<u32> = long[..512].iter().map(|t| v.id(t)).collect();
        assert_eq!(e.ids, expected);
    }

    #[test]
    fn json_round_trip_preserves_ids() {
        let v = build_vocab([&seq(&["x", "y", "y", "\"a\\x20b\""])], 10, 1);
        let back = Vocab::from_json(&v.to_json()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn rejects_non_contiguous_ids() {
        let bad = r#"{"schema_version":1,"max_size":5,"min_freq":1,"entries":[
            {"lexeme":"<pad>","id":0,"freq":0},{"lexeme":"<unk>","id":2,"freq":0}]}"#;
        assert!(Vocab::from_json(bad).is_err());
    }
}
