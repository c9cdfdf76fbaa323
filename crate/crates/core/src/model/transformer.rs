//! Post-LayerNorm transformer encoder (BERT / DistilBERT layout) with a
//! classification head on the first position.

use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cross_entropy_grad, Network};
use crate::label::NUM_CLASSES;
use crate::nn::{
    dropout_mask, gelu, gelu_grad, join, softmax_in_place, uniform_std, Embedding, LayerNorm, LayerNormCache, Linear,
    MhaCache, MultiHeadSelfAttention, Parameters, Real,
};

const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderFamily {
    /// Full encoder: token-type embeddings and a tanh pooler.
    Bert,
    /// Distilled encoder: no token types, classification reads the first
    /// hidden state directly.
    DistilBert,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderArch {
    pub family: EncoderFamily,
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub intermediate: usize,
    pub max_positions: usize,
    pub type_vocab_size: usize,
    pub layer_norm_eps: f64,
    pub hidden_dropout: f64,
}

impl EncoderArch {
    pub fn validate(&self) -> Result<(), String> {
        let dims = [self.vocab_size, self.hidden, self.layers, self.heads, self.intermediate, self.max_positions];
        if dims.iter().any(|&d| d == 0) {
            return Err("encoder dimensions must be positive".into());
        }
        if self.hidden % self.heads != 0 {
            return Err(format!("hidden size {} not divisible by {} heads", self.hidden, self.heads));
        }
        if self.family == EncoderFamily::Bert && self.type_vocab_size == 0 {
            return Err("full encoder needs at least one token type".into());
        }
        if !(0.0..1.0).contains(&self.hidden_dropout) {
            return Err("hidden dropout must be in [0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer<R> {
    pub attention: MultiHeadSelfAttention<R>,
    pub attention_norm: LayerNorm<R>,
    pub ffn_in: Linear<R>,
    pub ffn_out: Linear<R>,
    pub output_norm: LayerNorm<R>,
}

impl<R: Real> EncoderLayer<R> {
    fn zeros_like(&self) -> Self {
        Self {
            attention: self.attention.zeros_like(),
            attention_norm: self.attention_norm.zeros_like(),
            ffn_in: Linear::zeros(self.ffn_in.input_dim(), self.ffn_in.output_dim()),
            ffn_out: Linear::zeros(self.ffn_out.input_dim(), self.ffn_out.output_dim()),
            output_norm: self.output_norm.zeros_like(),
        }
    }
}

impl<R: Real> Parameters<R> for EncoderLayer<R> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[R])) {
        self.attention.visit(&join(prefix, "attention"), f);
        self.attention_norm.visit(&join(prefix, "attention_norm"), f);
        self.ffn_in.visit(&join(prefix, "ffn_in"), f);
        self.ffn_out.visit(&join(prefix, "ffn_out"), f);
        self.output_norm.visit(&join(prefix, "output_norm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [R])) {
        self.attention.visit_mut(&join(prefix, "attention"), f);
        self.attention_norm.visit_mut(&join(prefix, "attention_norm"), f);
        self.ffn_in.visit_mut(&join(prefix, "ffn_in"), f);
        self.ffn_out.visit_mut(&join(prefix, "ffn_out"), f);
        self.output_norm.visit_mut(&join(prefix, "output_norm"), f);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerNet<R> {
    pub arch: EncoderArch,
    pub word_embeddings: Embedding<R>,
    pub position_embeddings: Embedding<R>,
    pub token_type_embeddings: Option<Embedding<R>>,
    pub embedding_norm: LayerNorm<R>,
    pub layers: Vec<EncoderLayer<R>>,
    pub pooler: Option<Linear<R>>,
    pub head: Linear<R>,
    pub head_dropout: f64,
}

struct LayerTrace<R> {
    input: Array2<R>,
    attention: MhaCache<R>,
    attention_mask: Option<Array2<R>>,
    attention_norm: LayerNormCache<R>,
    normed: Array2<R>,
    ffn_pre: Array2<R>,
    ffn_act: Array2<R>,
    ffn_mask: Option<Array2<R>>,
    output_norm: LayerNormCache<R>,
}

struct Trace<R> {
    embedding_norm: LayerNormCache<R>,
    embedding_mask: Option<Array2<R>>,
    layers: Vec<LayerTrace<R>>,
    cls: Array1<R>,
    pooled: Array1<R>,
    head_mask: Option<Array1<R>>,
    head_input: Array1<R>,
    probs: [R; NUM_CLASSES],
}

fn matrix_mask<R: Real>(rows: usize, cols: usize, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Array2<R>> {
    dropout_mask::<R, _>(rows * cols, rate, rng).map(|m| m.into_shape_with_order((rows, cols)).expect("sized mask"))
}

impl<R: Real> TransformerNet<R> {
    /// Randomly initialised encoder and head.
    pub fn random(arch: EncoderArch, head_dropout: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = arch.hidden;
        let emb = |rows: usize, rng: &mut ChaCha8Rng| Embedding { w: uniform_std(rows, d, INIT_STD, rng) };
        let word_embeddings = emb(arch.vocab_size, &mut rng);
        let position_embeddings = emb(arch.max_positions, &mut rng);
        let token_type_embeddings =
            (arch.family == EncoderFamily::Bert).then(|| emb(arch.type_vocab_size, &mut rng));
        let layers = (0..arch.layers)
            .map(|_| EncoderLayer {
                attention: MultiHeadSelfAttention {
                    q: Linear::with_std(d, d, INIT_STD, &mut rng),
                    k: Linear::with_std(d, d, INIT_STD, &mut rng),
                    v: Linear::with_std(d, d, INIT_STD, &mut rng),
                    o: Linear::with_std(d, d, INIT_STD, &mut rng),
                    heads: arch.heads,
                },
                attention_norm: LayerNorm::new(d, arch.layer_norm_eps),
                ffn_in: Linear::with_std(d, arch.intermediate, INIT_STD, &mut rng),
                ffn_out: Linear::with_std(arch.intermediate, d, INIT_STD, &mut rng),
                output_norm: LayerNorm::new(d, arch.layer_norm_eps),
            })
            .collect();
        let pooler = (arch.family == EncoderFamily::Bert).then(|| Linear::with_std(d, d, INIT_STD, &mut rng));
        let head = Linear::with_std(d, NUM_CLASSES, INIT_STD, &mut rng);
        Self {
            embedding_norm: LayerNorm::new(d, arch.layer_norm_eps),
            arch,
            word_embeddings,
            position_embeddings,
            token_type_embeddings,
            layers,
            pooler,
            head,
            head_dropout,
        }
    }

    /// Fresh classification head drawn from `seed`, keeping the encoder.
    pub fn reset_head(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.head = Linear::with_std(self.arch.hidden, NUM_CLASSES, INIT_STD, &mut rng);
    }

    fn run(&self, tokens: &[u32], mut rng: Option<&mut ChaCha8Rng>) -> Trace<R> {
        let tokens = &tokens[..tokens.len().min(self.arch.max_positions)];
        let t_len = tokens.len();
        let d = self.arch.hidden;
        let p_hidden = self.arch.hidden_dropout;

        let mut x0 = self.word_embeddings.forward(tokens);
        x0 += &self.position_embeddings.w.slice(s![..t_len, ..]);
        if let Some(tt) = &self.token_type_embeddings {
            x0 += &tt.w.row(0);
        }
        let (mut x, embedding_norm) = self.embedding_norm.forward(x0.view());
        let embedding_mask = matrix_mask(t_len, d, p_hidden, rng.as_deref_mut());
        if let Some(m) = &embedding_mask {
            x *= m;
        }

        let mut layers = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (mut a, attention) = layer.attention.forward(x.view());
            let attention_mask = matrix_mask(t_len, d, p_hidden, rng.as_deref_mut());
            if let Some(m) = &attention_mask {
                a *= m;
            }
            a += &x;
            let (normed, attention_norm) = layer.attention_norm.forward(a.view());
            let ffn_pre = layer.ffn_in.forward(normed.view());
            let ffn_act = ffn_pre.mapv(gelu);
            let mut f = layer.ffn_out.forward(ffn_act.view());
            let ffn_mask = matrix_mask(t_len, d, p_hidden, rng.as_deref_mut());
            if let Some(m) = &ffn_mask {
                f *= m;
            }
            f += &normed;
            let (out, output_norm) = layer.output_norm.forward(f.view());
            layers.push(LayerTrace {
                input: std::mem::replace(&mut x, out),
                attention,
                attention_mask,
                attention_norm,
                normed,
                ffn_pre,
                ffn_act,
                ffn_mask,
                output_norm,
            });
        }

        let cls = x.row(0).to_owned();
        let pooled = match &self.pooler {
            Some(p) => p.forward_vec(cls.view()).mapv(|v| v.tanh()),
            None => cls.clone(),
        };
        let head_mask = dropout_mask(d, self.head_dropout, rng.as_deref_mut());
        let head_input = match &head_mask {
            Some(m) => &pooled * m,
            None => pooled.clone(),
        };
        let logits = self.head.forward_vec(head_input.view());
        let mut probs = [R::zero(); NUM_CLASSES];
        for (p, l) in probs.iter_mut().zip(logits.iter()) {
            *p = *l;
        }
        softmax_in_place(&mut probs);
        Trace { embedding_norm, embedding_mask, layers, cls, pooled, head_mask, head_input, probs }
    }
}

impl<R: Real> Network<R> for TransformerNet<R> {
    fn zeros_like(&self) -> Self {
        let zeros_emb = |e: &Embedding<R>| Embedding { w: Array2::zeros(e.w.raw_dim()) };
        Self {
            arch: self.arch.clone(),
            word_embeddings: zeros_emb(&self.word_embeddings),
            position_embeddings: zeros_emb(&self.position_embeddings),
            token_type_embeddings: self.token_type_embeddings.as_ref().map(zeros_emb),
            embedding_norm: self.embedding_norm.zeros_like(),
            layers: self.layers.iter().map(EncoderLayer::zeros_like).collect(),
            pooler: self.pooler.as_ref().map(|p| Linear::zeros(p.input_dim(), p.output_dim())),
            head: Linear::zeros(self.head.input_dim(), self.head.output_dim()),
            head_dropout: self.head_dropout,
        }
    }

    fn vocab_size(&self) -> usize {
        self.arch.vocab_size
    }

    fn probabilities(&self, tokens: &[u32]) -> [R; NUM_CLASSES] {
        self.run(tokens, None).probs
    }

    fn loss_and_grad(
        &self,
        tokens: &[u32],
        target: usize,
        weight: R,
        rng: Option<&mut ChaCha8Rng>,
        grad: &mut Self,
    ) -> (R, [R; NUM_CLASSES]) {
        let tokens = &tokens[..tokens.len().min(self.arch.max_positions)];
        let tr = self.run(tokens, rng);
        let (loss, dlogits) = cross_entropy_grad(&tr.probs, target, weight);

        let mut dhead_in = self.head.backward_vec(tr.head_input.view(), dlogits.view(), &mut grad.head);
        if let Some(m) = &tr.head_mask {
            dhead_in *= m;
        }
        let dcls = match (&self.pooler, grad.pooler.as_mut()) {
            (Some(p), Some(gp)) => {
                let dpre: Array1<R> = Zip::from(&dhead_in).and(&tr.pooled).map_collect(|&d, &y| d * (R::one() - y * y));
                p.backward_vec(tr.cls.view(), dpre.view(), gp)
            }
            _ => dhead_in,
        };

        let t_len = tokens.len();
        let mut dx = Array2::<R>::zeros((t_len, self.arch.hidden));
        dx.row_mut(0).assign(&dcls);
        for (layer, (lt, gl)) in self.layers.iter().zip(tr.layers.iter().zip(grad.layers.iter_mut())).rev() {
            let df = layer.output_norm.backward(&lt.output_norm, dx.view(), &mut gl.output_norm);
            let mut dnormed = df.clone();
            let mut dffn = df;
            if let Some(m) = &lt.ffn_mask {
                dffn *= m;
            }
            let mut dact = layer.ffn_out.backward(lt.ffn_act.view(), dffn.view(), &mut gl.ffn_out);
            Zip::from(&mut dact).and(&lt.ffn_pre).for_each(|d, &x| *d *= gelu_grad(x));
            dnormed += &layer.ffn_in.backward(lt.normed.view(), dact.view(), &mut gl.ffn_in);
            let da = layer.attention_norm.backward(&lt.attention_norm, dnormed.view(), &mut gl.attention_norm);
            let mut dattn = da.clone();
            if let Some(m) = &lt.attention_mask {
                dattn *= m;
            }
            let mut dinput = da;
            dinput += &layer.attention.backward(lt.input.view(), &lt.attention, dattn.view(), &mut gl.attention);
            dx = dinput;
        }

        if let Some(m) = &tr.embedding_mask {
            dx *= m;
        }
        let dx0 = self.embedding_norm.backward(&tr.embedding_norm, dx.view(), &mut grad.embedding_norm);
        self.word_embeddings.backward(tokens, dx0.view(), &mut grad.word_embeddings);
        {
            let mut gp = grad.position_embeddings.w.slice_mut(s![..t_len, ..]);
            gp += &dx0;
        }
        if let Some(gt) = grad.token_type_embeddings.as_mut() {
            let mut row = gt.w.row_mut(0);
            row += &dx0.sum_axis(Axis(0));
        }
        (loss, tr.probs)
    }
}

impl<R: Real> Parameters<R> for TransformerNet<R> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[R])) {
        self.word_embeddings.visit(&join(prefix, "embeddings.word"), f);
        self.position_embeddings.visit(&join(prefix, "embeddings.position"), f);
        if let Some(tt) = &self.token_type_embeddings {
            tt.visit(&join(prefix, "embeddings.token_type"), f);
        }
        self.embedding_norm.visit(&join(prefix, "embeddings.norm"), f);
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&join(prefix, &format!("layer.{i}")), f);
        }
        if let Some(p) = &self.pooler {
            p.visit(&join(prefix, "pooler"), f);
        }
        self.head.visit(&join(prefix, "classifier"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [R])) {
        self.word_embeddings.visit_mut(&join(prefix, "embeddings.word"), f);
        self.position_embeddings.visit_mut(&join(prefix, "embeddings.position"), f);
        if let Some(tt) = &mut self.token_type_embeddings {
            tt.visit_mut(&join(prefix, "embeddings.token_type"), f);
        }
        self.embedding_norm.visit_mut(&join(prefix, "embeddings.norm"), f);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&join(prefix, &format!("layer.{i}")), f);
        }
        if let Some(p) = &mut self.pooler {
            p.visit_mut(&join(prefix, "pooler"), f);
        }
        self.head.visit_mut(&join(prefix, "classifier"), f);
    }
}
