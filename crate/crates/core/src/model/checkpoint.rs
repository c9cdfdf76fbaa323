//! Native checkpoint directories: config, weights, tokenizer artefacts and
//! a manifest of file hashes.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::hf::{read_tensors, write_tensors, Tensor};
use super::transformer::{EncoderArch, TransformerNet};
use super::{Backbone, Classifier, InputEncoder, ModelConfig, ModelError, ModelKind, RecurrentNet};
use crate::digest::{combine, sha256_hex};
use crate::nn::Parameters;
use crate::preprocess::{Vocab, WordPieceTokenizer};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "model_config.json";
pub const WEIGHTS_FILE: &str = "weights.safetensors";
pub const LEXER_VOCAB_FILE: &str = "vocab.json";
pub const WORDPIECE_VOCAB_FILE: &str = "vocab.txt";

const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StoredConfig {
    schema_version: u32,
    model: ModelConfig,
    vocab_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    encoder_arch: Option<EncoderArch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lowercase: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub schema_version: u32,
    pub kind: ModelKind,
    /// File name → sha256 of its bytes.
    pub files: BTreeMap<String, String>,
    /// Hash over the sorted `(name, sha256)` pairs.
    pub content_hash: String,
}

impl CheckpointManifest {
    fn new(kind: ModelKind, files: BTreeMap<String, String>) -> Self {
        let content_hash = combine(files.iter().map(|(k, v)| (k.as_str(), v.as_str())));
        Self { schema_version: SCHEMA_VERSION, kind, files, content_hash }
    }
}

fn write_file(dir: &Path, name: &str, bytes: &[u8], files: &mut BTreeMap<String, String>) -> Result<(), ModelError> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| ModelError::io(&path, e))?;
    files.insert(name.to_string(), sha256_hex(bytes));
    Ok(())
}

fn named_tensors<P: Parameters<f32>>(net: &P) -> Vec<(String, Vec<usize>, Vec<f32>)> {
    let mut out = Vec::new();
    net.visit("", &mut |name, shape, data| out.push((name.to_string(), shape.to_vec(), data.to_vec())));
    out
}

/// Write the classifier plus any `extra` files (e.g. optimizer state) into
/// `dir`, replacing an existing checkpoint there.
pub fn save_classifier(clf: &Classifier, dir: &Path, extra: &[(&str, &[u8])]) -> Result<CheckpointManifest, ModelError> {
    std::fs::create_dir_all(dir).map_err(|e| ModelError::io(dir, e))?;
    let mut files = BTreeMap::new();
    let (tensors, encoder_arch) = match &clf.backbone {
        Backbone::Recurrent(n) => (named_tensors(n), None),
        Backbone::Transformer(n) => (named_tensors(n), Some(n.arch.clone())),
    };
    let lowercase = match &clf.encoder {
        InputEncoder::Lexer(v) => {
            write_file(dir, LEXER_VOCAB_FILE, v.to_json().as_bytes(), &mut files)?;
            None
        }
        InputEncoder::WordPiece(t) => {
            write_file(dir, WORDPIECE_VOCAB_FILE, t.to_vocab_text().as_bytes(), &mut files)?;
            Some(t.lowercase())
        }
    };
    let stored = StoredConfig {
        schema_version: SCHEMA_VERSION,
        model: clf.config.clone(),
        vocab_size: clf.encoder.len(),
        encoder_arch,
        lowercase,
    };
    write_file(dir, CONFIG_FILE, serde_json::to_string_pretty(&stored).expect("json").as_bytes(), &mut files)?;
    write_file(dir, WEIGHTS_FILE, &write_tensors(&tensors)?, &mut files)?;
    for (name, bytes) in extra {
        write_file(dir, name, bytes, &mut files)?;
    }
    let manifest = CheckpointManifest::new(clf.kind(), files);
    let path = dir.join(MANIFEST_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("json")).map_err(|e| ModelError::io(&path, e))?;
    Ok(manifest)
}

/// Parse the manifest and verify every listed file against its hash.
pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest, ModelError> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported schema version {}", manifest.schema_version)));
    }
    if CheckpointManifest::new(manifest.kind, manifest.files.clone()).content_hash != manifest.content_hash {
        return Err(ModelError::Checkpoint("manifest content hash does not match its file list".into()));
    }
    for name in manifest.files.keys() {
        read_verified(dir, &manifest, name)?;
    }
    Ok(manifest)
}

/// Bytes of a file listed in the manifest, checked against its hash.
pub fn read_verified(dir: &Path, manifest: &CheckpointManifest, name: &str) -> Result<Vec<u8>, ModelError> {
    let expected = manifest
        .files
        .get(name)
        .ok_or_else(|| ModelError::Checkpoint(format!("`{name}` is not part of the checkpoint")))?;
    let path = dir.join(name);
    let bytes = std::fs::read(&path).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
    if &sha256_hex(&bytes) != expected {
        return Err(ModelError::Checkpoint(format!("{} does not match its recorded hash", path.display())));
    }
    Ok(bytes)
}

fn assign<P: Parameters<f32>>(net: &mut P, tensors: &std::collections::HashMap<String, Tensor>) -> Result<(), ModelError> {
    let mut error = None;
    let mut seen = 0;
    net.visit_mut("", &mut |name, shape, dst| match tensors.get(name) {
        Some(t) if t.shape == shape => {
            dst.copy_from_slice(&t.data);
            seen += 1;
        }
        Some(t) => {
            error.get_or_insert(ModelError::Checkpoint(format!("`{name}` has shape {:?}, expected {shape:?}", t.shape)));
        }
        None => {
            error.get_or_insert(ModelError::Checkpoint(format!("missing tensor `{name}`")));
        }
    });
    if let Some(e) = error {
        return Err(e);
    }
    if seen != tensors.len() {
        return Err(ModelError::Checkpoint(format!("{} unexpected tensors in checkpoint", tensors.len() - seen)));
    }
    Ok(())
}

/// Load a classifier saved by [`save_classifier`].
pub fn load_classifier(dir: &Path) -> Result<(Classifier, CheckpointManifest), ModelError> {
    let manifest = read_manifest(dir)?;
    let cfg_bytes = read_verified(dir, &manifest, CONFIG_FILE)?;
    let stored: StoredConfig = serde_json::from_slice(&cfg_bytes)
        .map_err(|e| ModelError::Checkpoint(format!("{CONFIG_FILE}: {e}")))?;
    if stored.model.kind != manifest.kind {
        return Err(ModelError::Checkpoint("manifest and config disagree on the model kind".into()));
    }
    stored.model.validate()?;
    let tensors = read_tensors(&read_verified(dir, &manifest, WEIGHTS_FILE)?)?;
    let text = |name: &str| -> Result<String, ModelError> {
        String::from_utf8(read_verified(dir, &manifest, name)?)
            .map_err(|e| ModelError::Checkpoint(format!("{name}: {e}")))
    };
    let (encoder, backbone) = match stored.model.kind {
        ModelKind::RecurrentBaseline => {
            let vocab = Vocab::from_json(&text(LEXER_VOCAB_FILE)?).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
            if vocab.len() != stored.vocab_size {
                return Err(ModelError::VocabMismatch(format!(
                    "vocabulary has {} entries, config records {}",
                    vocab.len(),
                    stored.vocab_size
                )));
            }
            let mut net = RecurrentNet::init(&stored.model.recurrent, vocab.len(), stored.model.seed);
            assign(&mut net, &tensors)?;
            (InputEncoder::Lexer(vocab), Backbone::Recurrent(net))
        }
        ModelKind::TransformerFinetune => {
            let arch = stored
                .encoder_arch
                .clone()
                .ok_or_else(|| ModelError::Checkpoint("transformer checkpoint lacks encoder_arch".into()))?;
            let tok = WordPieceTokenizer::from_vocab_text(&text(WORDPIECE_VOCAB_FILE)?, stored.lowercase.unwrap_or(true))
                .map_err(|e| ModelError::Checkpoint(e.to_string()))?;
            if tok.len() > arch.vocab_size {
                return Err(ModelError::VocabMismatch(format!(
                    "tokenizer has {} pieces, encoder embeds {}",
                    tok.len(),
                    arch.vocab_size
                )));
            }
            let mut net = TransformerNet::random(arch, stored.model.transformer.head_dropout, 0);
            assign(&mut net, &tensors)?;
            (InputEncoder::WordPiece(tok), Backbone::Transformer(net))
        }
    };
    Ok((Classifier { config: stored.model, encoder, backbone }, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_recurrent_classifier, RecurrentConfig};
    use crate::preprocess::tokenize_sequence;

    fn classifier() -> Classifier {
        let seq = tokenize_sequence("contract A { function f ( ) public { x = 1 ; } }", "a");
        let cfg = RecurrentConfig { embed_dim: 4, conv_filters: 3, conv_kernel: 3, recurrent_units: 2, attention_dim: 3, dropout: 0.2, max_len: 12 };
        build_recurrent_classifier(&ModelConfig::recurrent(cfg, 5), Vocab::build([&seq], 50, 1)).unwrap()
    }

    #[test]
    fn roundtrip_reproduces_predictions_exactly() {
        let clf = classifier();
        let dir = tempfile::tempdir().unwrap();
        let saved = save_classifier(&clf, dir.path(), &[("notes.txt", b"hello")]).unwrap();
        let (loaded, manifest) = load_classifier(dir.path()).unwrap();
        assert_eq!(saved, manifest);
        assert_eq!(loaded, clf);
        let batch = vec![clf.encode_source("function f ( ) { x = 1 ; }")];
        assert_eq!(loaded.predict_proba(&batch).unwrap(), clf.predict_proba(&batch).unwrap());
        assert_eq!(read_verified(dir.path(), &manifest, "notes.txt").unwrap(), b"hello");
    }

    #[test]
    fn tampered_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_classifier(&classifier(), dir.path(), &[]).unwrap();
        let path = dir.path().join(WEIGHTS_FILE);
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_classifier(dir.path()), Err(ModelError::Checkpoint(m)) if m.contains("hash")));
    }

    #[test]
    fn missing_directory_is_a_checkpoint_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_classifier(&dir.path().join("nope")), Err(ModelError::Checkpoint(_))));
    }
}
