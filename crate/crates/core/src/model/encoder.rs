//! Transformer encoder in the BERT parameter layout. Used both as the small
//! randomly initialized stand-in and for pretrained checkpoints converted to
//! safetensors.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Tensor, D};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{dropout, Embedding, LayerNorm, Linear};
use super::params::{Init, ParamStore};
use super::{ModelError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub intermediate_size: usize,
    pub max_position: usize,
    pub type_vocab_size: usize,
    pub layer_norm_eps: f64,
}

impl EncoderConfig {
    /// Two layers of width 64.
    pub fn stand_in(vocab_size: usize, max_position: usize) -> Self {
        EncoderConfig {
            vocab_size,
            hidden_size: 64,
            num_layers: 2,
            num_heads: 4,
            intermediate_size: 128,
            max_position,
            type_vocab_size: 2,
            layer_norm_eps: 1e-12,
        }
    }

    /// Reads a Hugging Face style `config.json`.
    pub fn from_hf_json(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Hf {
            vocab_size: usize,
            hidden_size: usize,
            num_hidden_layers: usize,
            num_attention_heads: usize,
            intermediate_size: usize,
            max_position_embeddings: usize,
            #[serde(default = "two")]
            type_vocab_size: usize,
            #[serde(default = "eps")]
            layer_norm_eps: f64,
        }
        fn two() -> usize {
            2
        }
        fn eps() -> f64 {
            1e-12
        }
        let err = |what: String| ModelError::Checkpoint {
            path: path.display().to_string(),
            what,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let hf: Hf = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        Ok(EncoderConfig {
            vocab_size: hf.vocab_size,
            hidden_size: hf.hidden_size,
            num_layers: hf.num_hidden_layers,
            num_heads: hf.num_attention_heads,
            intermediate_size: hf.intermediate_size,
            max_position: hf.max_position_embeddings,
            type_vocab_size: hf.type_vocab_size,
            layer_norm_eps: hf.layer_norm_eps,
        })
    }
}

/// Loads `model.safetensors` from a pretrained directory into `store` under
/// the `encoder.` prefix. Returns the encoder config from `config.json`.
pub fn preset_pretrained(dir: &Path, store: &mut ParamStore) -> Result<EncoderConfig> {
    let config = EncoderConfig::from_hf_json(&dir.join("config.json"))?;
    let weights = dir.join("model.safetensors");
    if !weights.exists() {
        return Err(ModelError::Checkpoint {
            path: weights.display().to_string(),
            what: "missing (convert pytorch_model.bin to safetensors first)".into(),
        });
    }
    let tensors = ParamStore::load_tensors(&weights)?;
    for (name, t) in normalize_names(tensors) {
        store.preset(format!("encoder.{name}"), t);
    }
    Ok(config)
}

fn normalize_names(tensors: HashMap<String, Tensor>) -> Vec<(String, Tensor)> {
    let mut out: Vec<(String, Tensor)> = tensors
        .into_iter()
        .filter_map(|(k, t)| {
            let k = k.strip_prefix("bert.").unwrap_or(&k).to_string();
            if !(k.starts_with("embeddings.") || k.starts_with("encoder.")) {
                return None;
            }
            let k = k.replace(".gamma", ".weight").replace(".beta", ".bias");
            Some((k, t))
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    query: Linear,
    key: Linear,
    value: Linear,
    attn_out: Linear,
    attn_norm: LayerNorm,
    intermediate: Linear,
    output: Linear,
    out_norm: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    word: Embedding,
    position: Embedding,
    token_type: Embedding,
    emb_norm: LayerNorm,
    layers: Vec<EncoderLayer>,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, config: &EncoderConfig) -> Result<Self> {
        let c = config;
        let init = Init::Normal(0.02);
        let h = c.hidden_size;
        let p = "encoder.embeddings";
        let word = Embedding::new(store, &format!("{p}.word_embeddings.weight"), c.vocab_size, h, init)?;
        let position = Embedding::new(store, &format!("{p}.position_embeddings.weight"), c.max_position, h, init)?;
        let token_type = Embedding::new(store, &format!("{p}.token_type_embeddings.weight"), c.type_vocab_size, h, init)?;
        let emb_norm = LayerNorm::new(store, &format!("{p}.LayerNorm"), h, c.layer_norm_eps)?;
        let mut layers = Vec::with_capacity(c.num_layers);
        for i in 0..c.num_layers {
            let p = format!("encoder.encoder.layer.{i}");
            layers.push(EncoderLayer {
                query: Linear::new(store, &format!("{p}.attention.self.query"), h, h, init)?,
                key: Linear::new(store, &format!("{p}.attention.self.key"), h, h, init)?,
                value: Linear::new(store, &format!("{p}.attention.self.value"), h, h, init)?,
                attn_out: Linear::new(store, &format!("{p}.attention.output.dense"), h, h, init)?,
                attn_norm: LayerNorm::new(store, &format!("{p}.attention.output.LayerNorm"), h, c.layer_norm_eps)?,
                intermediate: Linear::new(store, &format!("{p}.intermediate.dense"), h, c.intermediate_size, init)?,
                output: Linear::new(store, &format!("{p}.output.dense"), c.intermediate_size, h, init)?,
                out_norm: LayerNorm::new(store, &format!("{p}.output.LayerNorm"), h, c.layer_norm_eps)?,
            });
        }
        Ok(Encoder {
            config: config.clone(),
            word,
            position,
            token_type,
            emb_norm,
            layers,
        })
    }

    /// `ids`: `batch × time` (u32); `mask`: `batch × time` (f32, 1 for real
    /// tokens). Returns `batch × time × hidden`.
    pub fn forward(
        &self,
        ids: &Tensor,
        mask: &Tensor,
        p_drop: f32,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Tensor> {
        let (b, t) = ids.dims2()?;
        if t > self.config.max_position {
            return Err(ModelError::Config(format!(
                "sequence of {t} tokens exceeds the encoder's {} positions",
                self.config.max_position
            )));
        }
        let positions = Tensor::arange(0u32, t as u32, ids.device())?;
        let types = Tensor::zeros((b, t), DType::U32, ids.device())?;
        let x = self
            .word
            .forward(ids)?
            .broadcast_add(&self.position.forward(&positions)?)?
            .add(&self.token_type.forward(&types)?)?;
        let mut x = dropout(&self.emb_norm.forward(&x)?, p_drop, rng.as_deref_mut())?;
        // Padding keys get a large negative score.
        let bias = ((mask.ones_like()? - mask)? * -10000.0)?.reshape((b, 1, 1, t))?;
        let heads = self.config.num_heads;
        let dh = self.config.hidden_size / heads;
        let split = |y: Tensor| -> Result<Tensor> {
            Ok(y.reshape((b, t, heads, dh))?.transpose(1, 2)?.contiguous()?)
        };
        for layer in &self.layers {
            let q = split(layer.query.forward(&x)?)?;
            let k = split(layer.key.forward(&x)?)?;
            let v = split(layer.value.forward(&x)?)?;
            let scores = (q.matmul(&k.t()?.contiguous()?)? / (dh as f64).sqrt())?.broadcast_add(&bias)?;
            let probs = candle_nn::ops::softmax(&scores, D::Minus1)?;
            let ctx = probs
                .matmul(&v)?
                .transpose(1, 2)?
                .contiguous()?
                .reshape((b, t, self.config.hidden_size))?;
            let attn = dropout(&layer.attn_out.forward(&ctx)?, p_drop, rng.as_deref_mut())?;
            x = layer.attn_norm.forward(&(attn + &x)?)?;
            let ff = layer.output.forward(&layer.intermediate.forward(&x)?.gelu_erf()?)?;
            let ff = dropout(&ff, p_drop, rng.as_deref_mut())?;
            x = layer.out_norm.forward(&(ff + &x)?)?;
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    #[test]
    fn padding_does_not_change_real_positions() {
        let mut store = ParamStore::new(5);
        let enc = Encoder::new(&mut store, &EncoderConfig::stand_in(20, 16)).unwrap();
        let short = Tensor::new(&[[2u32, 5, 7, 3]], &Device::Cpu).unwrap();
        let long = Tensor::new(&[[2u32, 5, 7, 3, 0, 0]], &Device::Cpu).unwrap();
        let m_short = Tensor::ones((1, 4), DType::F32, &Device::Cpu).unwrap();
        let m_long = Tensor::new(&[[1f32, 1.0, 1.0, 1.0, 0.0, 0.0]], &Device::Cpu).unwrap();
        let a = enc.forward(&short, &m_short, 0.0, None).unwrap();
        let b = enc.forward(&long, &m_long, 0.0, None).unwrap().narrow(1, 0, 4).unwrap();
        let diff = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(diff < 1e-5, "{diff}");
    }

    #[test]
    fn pretrained_names_are_normalized() {
        let mut m = HashMap::new();
        let t = Tensor::zeros(1, DType::F32, &Device::Cpu).unwrap();
        m.insert("bert.embeddings.LayerNorm.gamma".to_string(), t.clone());
        m.insert("bert.encoder.layer.0.output.LayerNorm.beta".to_string(), t.clone());
        m.insert("cls.predictions.bias".to_string(), t);
        let names: Vec<String> = normalize_names(m).into_iter().map(|(k, _)| k).collect();
        assert_eq!(names, vec!["embeddings.LayerNorm.weight", "encoder.layer.0.output.LayerNorm.bias"]);
    }
}
