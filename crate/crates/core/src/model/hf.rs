//! Import of Hugging Face style encoder directories (`config.json`,
//! `model.safetensors`, `vocab.txt`) and an exporter producing the same
//! layout.

use std::collections::HashMap;
use std::path::Path;

use half::{bf16, f16};
use safetensors::{Dtype, SafeTensors};
use serde_json::Value;

use super::transformer::{EncoderArch, EncoderFamily, TransformerNet};
use super::ModelError;
use crate::nn::Parameters;
use crate::preprocess::WordPieceTokenizer;

pub const CONFIG_FILE: &str = "config.json";
pub const WEIGHTS_FILE: &str = "model.safetensors";
pub const VOCAB_FILE: &str = "vocab.txt";
const TOKENIZER_CONFIG_FILE: &str = "tokenizer_config.json";

/// Encoder weights, architecture and the tokenizer that goes with them.
pub struct Pretrained {
    pub network: TransformerNet<f32>,
    pub tokenizer: WordPieceTokenizer,
}

pub(crate) struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// Decode every tensor of a safetensors buffer to `f32`.
pub(crate) fn read_tensors(bytes: &[u8]) -> Result<HashMap<String, Tensor>, ModelError> {
    let st = SafeTensors::deserialize(bytes).map_err(|e| ModelError::Checkpoint(format!("safetensors: {e}")))?;
    let mut out = HashMap::new();
    for (name, view) in st.tensors() {
        let raw = view.data();
        let data: Vec<f32> = match view.dtype() {
            Dtype::F32 => raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect(),
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as f32)
                .collect(),
            Dtype::F16 => raw.chunks_exact(2).map(|c| f16::from_le_bytes([c[0], c[1]]).to_f32()).collect(),
            Dtype::BF16 => raw.chunks_exact(2).map(|c| bf16::from_le_bytes([c[0], c[1]]).to_f32()).collect(),
            // Integer buffers such as `position_ids` carry no weights.
            _ => continue,
        };
        out.insert(name, Tensor { shape: view.shape().to_vec(), data });
    }
    Ok(out)
}

/// Serialise named `f32` tensors.
pub(crate) fn write_tensors(tensors: &[(String, Vec<usize>, Vec<f32>)]) -> Result<Vec<u8>, ModelError> {
    let bytes: Vec<Vec<u8>> =
        tensors.iter().map(|(_, _, d)| d.iter().flat_map(|v| v.to_le_bytes()).collect()).collect();
    let views = tensors
        .iter()
        .zip(&bytes)
        .map(|((name, shape, _), b)| {
            safetensors::tensor::TensorView::new(Dtype::F32, shape.clone(), b).map(|v| (name.clone(), v))
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ModelError::Checkpoint(format!("safetensors: {e}")))?;
    safetensors::serialize(views, None).map_err(|e| ModelError::Checkpoint(format!("safetensors: {e}")))
}

fn read_json(path: &Path) -> Result<Value, ModelError> {
    let text = std::fs::read_to_string(path).map_err(|e| ModelError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))
}

fn field(cfg: &Value, keys: &[&str]) -> Option<f64> {
    keys.iter().find_map(|k| cfg.get(*k).and_then(Value::as_f64))
}

fn required(cfg: &Value, keys: &[&str]) -> Result<usize, ModelError> {
    field(cfg, keys)
        .map(|v| v as usize)
        .ok_or_else(|| ModelError::Checkpoint(format!("config.json lacks {}", keys.join("/"))))
}

/// Parse an encoder `config.json`.
pub fn parse_config(cfg: &Value) -> Result<EncoderArch, ModelError> {
    let model_type = cfg.get("model_type").and_then(Value::as_str).unwrap_or("bert");
    let arch = match model_type {
        "distilbert" => EncoderArch {
            family: EncoderFamily::DistilBert,
            vocab_size: required(cfg, &["vocab_size"])?,
            hidden: required(cfg, &["dim", "hidden_size"])?,
            layers: required(cfg, &["n_layers", "num_hidden_layers"])?,
            heads: required(cfg, &["n_heads", "num_attention_heads"])?,
            intermediate: required(cfg, &["hidden_dim", "intermediate_size"])?,
            max_positions: required(cfg, &["max_position_embeddings"])?,
            type_vocab_size: 0,
            layer_norm_eps: 1e-12,
            hidden_dropout: field(cfg, &["dropout"]).unwrap_or(0.1),
        },
        "bert" => EncoderArch {
            family: EncoderFamily::Bert,
            vocab_size: required(cfg, &["vocab_size"])?,
            hidden: required(cfg, &["hidden_size"])?,
            layers: required(cfg, &["num_hidden_layers"])?,
            heads: required(cfg, &["num_attention_heads"])?,
            intermediate: required(cfg, &["intermediate_size"])?,
            max_positions: required(cfg, &["max_position_embeddings"])?,
            type_vocab_size: field(cfg, &["type_vocab_size"]).unwrap_or(2.0) as usize,
            layer_norm_eps: field(cfg, &["layer_norm_eps"]).unwrap_or(1e-12),
            hidden_dropout: field(cfg, &["hidden_dropout_prob"]).unwrap_or(0.1),
        },
        other => return Err(ModelError::Checkpoint(format!("unsupported model_type `{other}`"))),
    };
    if let Some(act) = cfg.get("hidden_act").or_else(|| cfg.get("activation")).and_then(Value::as_str) {
        if act != "gelu" {
            return Err(ModelError::Checkpoint(format!("unsupported activation `{act}`")));
        }
    }
    arch.validate().map_err(ModelError::Checkpoint)?;
    Ok(arch)
}

fn config_json(arch: &EncoderArch) -> Value {
    match arch.family {
        EncoderFamily::DistilBert => serde_json::json!({
            "model_type": "distilbert",
            "vocab_size": arch.vocab_size,
            "dim": arch.hidden,
            "n_layers": arch.layers,
            "n_heads": arch.heads,
            "hidden_dim": arch.intermediate,
            "max_position_embeddings": arch.max_positions,
            "dropout": arch.hidden_dropout,
            "activation": "gelu",
        }),
        EncoderFamily::Bert => serde_json::json!({
            "model_type": "bert",
            "vocab_size": arch.vocab_size,
            "hidden_size": arch.hidden,
            "num_hidden_layers": arch.layers,
            "num_attention_heads": arch.heads,
            "intermediate_size": arch.intermediate,
            "max_position_embeddings": arch.max_positions,
            "type_vocab_size": arch.type_vocab_size,
            "layer_norm_eps": arch.layer_norm_eps,
            "hidden_dropout_prob": arch.hidden_dropout,
            "hidden_act": "gelu",
        }),
    }
}

/// Checkpoint tensor name for an internal parameter name, and whether the
/// stored matrix is `[out, in]` (needs transposing). `None` for parameters
/// with no pretrained counterpart.
fn external_name(family: EncoderFamily, internal: &str) -> Option<(String, bool)> {
    let (stem, leaf) = internal.rsplit_once('.')?;
    let linear = |name: &str| Some((format!("{name}.{leaf}"), leaf == "weight"));
    let plain = |name: &str| Some((format!("{name}.{leaf}"), false));
    let embeddings = match family {
        EncoderFamily::Bert => "bert.embeddings",
        EncoderFamily::DistilBert => "distilbert.embeddings",
    };
    match stem {
        "embeddings.word" => return plain(&format!("{embeddings}.word_embeddings")),
        "embeddings.position" => return plain(&format!("{embeddings}.position_embeddings")),
        "embeddings.token_type" => return plain(&format!("{embeddings}.token_type_embeddings")),
        "embeddings.norm" => return plain(&format!("{embeddings}.LayerNorm")),
        "pooler" => return linear("bert.pooler.dense"),
        "classifier" => return None,
        _ => {}
    }
    let rest = stem.strip_prefix("layer.")?;
    let (index, part) = rest.split_once('.')?;
    match family {
        EncoderFamily::Bert => {
            let base = format!("bert.encoder.layer.{index}");
            match part {
                "attention.query" => linear(&format!("{base}.attention.self.query")),
                "attention.key" => linear(&format!("{base}.attention.self.key")),
                "attention.value" => linear(&format!("{base}.attention.self.value")),
                "attention.output" => linear(&format!("{base}.attention.output.dense")),
                "attention_norm" => plain(&format!("{base}.attention.output.LayerNorm")),
                "ffn_in" => linear(&format!("{base}.intermediate.dense")),
                "ffn_out" => linear(&format!("{base}.output.dense")),
                "output_norm" => plain(&format!("{base}.output.LayerNorm")),
                _ => None,
            }
        }
        EncoderFamily::DistilBert => {
            let base = format!("distilbert.transformer.layer.{index}");
            match part {
                "attention.query" => linear(&format!("{base}.attention.q_lin")),
                "attention.key" => linear(&format!("{base}.attention.k_lin")),
                "attention.value" => linear(&format!("{base}.attention.v_lin")),
                "attention.output" => linear(&format!("{base}.attention.out_lin")),
                "attention_norm" => plain(&format!("{base}.sa_layer_norm")),
                "ffn_in" => linear(&format!("{base}.ffn.lin1")),
                "ffn_out" => linear(&format!("{base}.ffn.lin2")),
                "output_norm" => plain(&format!("{base}.output_layer_norm")),
                _ => None,
            }
        }
    }
}

/// Names under which a tensor may be stored: with or without the model
/// prefix, and with legacy `gamma`/`beta` LayerNorm names.
fn candidates(name: &str) -> Vec<String> {
    let mut names = vec![name.to_string()];
    if let Some((_, rest)) = name.split_once('.') {
        names.push(rest.to_string());
    }
    let legacy: Vec<String> = names
        .iter()
        .filter(|n| n.contains("LayerNorm") || n.contains("layer_norm"))
        .filter_map(|n| {
            n.strip_suffix(".weight")
                .map(|s| format!("{s}.gamma"))
                .or_else(|| n.strip_suffix(".bias").map(|s| format!("{s}.beta")))
        })
        .collect();
    names.extend(legacy);
    names
}

fn transpose(data: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    let mut out = vec![0.0; data.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

fn load_weights(net: &mut TransformerNet<f32>, tensors: &HashMap<String, Tensor>) -> Result<(), ModelError> {
    let family = net.arch.family;
    let mut error = None;
    net.visit_mut("", &mut |internal, shape, dst| {
        if error.is_some() {
            return;
        }
        let Some((name, transposed)) = external_name(family, internal) else { return };
        let Some(t) = candidates(&name).iter().find_map(|n| tensors.get(n)) else {
            error = Some(ModelError::Checkpoint(format!("missing tensor `{name}`")));
            return;
        };
        let expected: Vec<usize> = if transposed { shape.iter().rev().copied().collect() } else { shape.to_vec() };
        // Position tables may be longer than what the model keeps.
        let fits = t.shape == expected || (internal.starts_with("embeddings.position") && t.shape[1..] == expected[1..] && t.shape[0] >= expected[0]);
        if !fits {
            error = Some(ModelError::Checkpoint(format!("`{name}` has shape {:?}, expected {:?}", t.shape, expected)));
            return;
        }
        if transposed {
            dst.copy_from_slice(&transpose(&t.data, shape[1], shape[0]));
        } else {
            dst.copy_from_slice(&t.data[..dst.len()]);
        }
    });
    error.map_or(Ok(()), Err)
}

/// Load an encoder directory. The classification head is randomly
/// initialised (seed 0); callers normally re-seed it.
pub fn load_pretrained(dir: &Path) -> Result<Pretrained, ModelError> {
    let cfg = read_json(&dir.join(CONFIG_FILE))?;
    let arch = parse_config(&cfg)?;
    let lowercase = match read_json(&dir.join(TOKENIZER_CONFIG_FILE)) {
        Ok(t) => t.get("do_lower_case").and_then(Value::as_bool).unwrap_or(true),
        Err(_) => true,
    };
    let vocab_path = dir.join(VOCAB_FILE);
    if !vocab_path.is_file() {
        return Err(ModelError::Checkpoint(format!("{} is missing", vocab_path.display())));
    }
    let tokenizer =
        WordPieceTokenizer::from_file(&vocab_path, lowercase).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
    if tokenizer.len() > arch.vocab_size {
        return Err(ModelError::VocabMismatch(format!(
            "tokenizer has {} pieces, encoder embeds {}",
            tokenizer.len(),
            arch.vocab_size
        )));
    }
    let weights_path = dir.join(WEIGHTS_FILE);
    let bytes = std::fs::read(&weights_path).map_err(|e| ModelError::io(&weights_path, e))?;
    let tensors = read_tensors(&bytes)?;
    let mut network = TransformerNet::random(arch, 0.1, 0);
    load_weights(&mut network, &tensors)?;
    Ok(Pretrained { network, tokenizer })
}

/// Write `net`'s encoder (not its head) and `tokenizer` as an encoder
/// directory readable by [`load_pretrained`].
pub fn export_pretrained(net: &TransformerNet<f32>, tokenizer: &WordPieceTokenizer, dir: &Path) -> Result<(), ModelError> {
    std::fs::create_dir_all(dir).map_err(|e| ModelError::io(dir, e))?;
    let mut tensors = Vec::new();
    net.visit("", &mut |internal, shape, data| {
        if let Some((name, transposed)) = external_name(net.arch.family, internal) {
            if transposed {
                tensors.push((name, vec![shape[1], shape[0]], transpose(data, shape[0], shape[1])));
            } else {
                tensors.push((name, shape.to_vec(), data.to_vec()));
            }
        }
    });
    let write = |name: &str, bytes: &[u8]| {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| ModelError::io(&path, e))
    };
    write(WEIGHTS_FILE, &write_tensors(&tensors)?)?;
    write(CONFIG_FILE, serde_json::to_string_pretty(&config_json(&net.arch)).expect("json").as_bytes())?;
    write(VOCAB_FILE, tokenizer.to_vocab_text().as_bytes())?;
    write(
        TOKENIZER_CONFIG_FILE,
        serde_json::json!({ "do_lower_case": tokenizer.lowercase() }).to_string().as_bytes(),
    )?;
    Ok(())
}
