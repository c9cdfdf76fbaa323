//! Embedding → Conv1d+ReLU → BiLSTM → additive attention → dense → softmax.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{cross_entropy_grad, Network, RecurrentConfig};
use crate::label::NUM_CLASSES;
use crate::nn::{
    dropout_mask, glorot_uniform, relu, softmax_in_place, AdditiveAttention, Conv1d, Embedding, Linear, Lstm,
    Parameters, Real,
};

#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentNet<R> {
    pub embedding: Embedding<R>,
    pub conv: Conv1d<R>,
    pub forward_lstm: Lstm<R>,
    pub backward_lstm: Lstm<R>,
    pub attention: AdditiveAttention<R>,
    pub head: Linear<R>,
    pub dropout: f64,
}

impl<R: Real> RecurrentNet<R> {
    pub fn init(cfg: &RecurrentConfig, vocab_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = Embedding { w: glorot_uniform(vocab_size, cfg.embed_dim, &mut rng) };
        let conv = Conv1d {
            w: glorot_uniform(cfg.conv_kernel * cfg.embed_dim, cfg.conv_filters, &mut rng),
            b: Array1::zeros(cfg.conv_filters),
            kernel: cfg.conv_kernel,
        };
        let forward_lstm = Lstm::init(cfg.conv_filters, cfg.recurrent_units, false, &mut rng);
        let backward_lstm = Lstm::init(cfg.conv_filters, cfg.recurrent_units, true, &mut rng);
        let attention = AdditiveAttention::init(2 * cfg.recurrent_units, cfg.attention_dim, &mut rng);
        let head = Linear::glorot(2 * cfg.recurrent_units, NUM_CLASSES, &mut rng);
        Self { embedding, conv, forward_lstm, backward_lstm, attention, head, dropout: cfg.dropout }
    }

    fn units(&self) -> usize {
        self.forward_lstm.units()
    }

    /// Attention distribution over the (unpadded) positions of `tokens`.
    pub fn attention_weights(&self, tokens: &[u32]) -> Array1<R> {
        self.run(tokens, None).attention.weights
    }

    fn run(&self, tokens: &[u32], rng: Option<&mut ChaCha8Rng>) -> Trace<R> {
        let x = self.embedding.forward(tokens);
        let (z, conv) = self.conv.forward(x.view());
        let c = z.mapv(relu);
        let (hf, lstm_f) = self.forward_lstm.forward(c.view());
        let (hb, lstm_b) = self.backward_lstm.forward(c.view());
        let h = concatenate(Axis(1), &[hf.view(), hb.view()]).expect("equal lengths");
        let (ctx, attention) = self.attention.forward(h.view());
        let mask = dropout_mask(ctx.len(), self.dropout, rng);
        let pooled = match &mask {
            Some(m) => &ctx * m,
            None => ctx,
        };
        let logits = self.head.forward_vec(pooled.view());
        let mut probs = [R::zero(); NUM_CLASSES];
        for (p, l) in probs.iter_mut().zip(logits.iter()) {
            *p = *l;
        }
        softmax_in_place(&mut probs);
        Trace { z, c, conv, h, lstm_f, lstm_b, attention, mask, pooled, probs }
    }
}

struct Trace<R> {
    z: Array2<R>,
    c: Array2<R>,
    conv: crate::nn::Conv1dCache<R>,
    h: Array2<R>,
    lstm_f: crate::nn::LstmCache<R>,
    lstm_b: crate::nn::LstmCache<R>,
    attention: crate::nn::AttentionCache<R>,
    mask: Option<Array1<R>>,
    pooled: Array1<R>,
    probs: [R; NUM_CLASSES],
}

impl<R: Real> Network<R> for RecurrentNet<R> {
    fn zeros_like(&self) -> Self {
        Self {
            embedding: Embedding { w: Array2::zeros(self.embedding.w.raw_dim()) },
            conv: Conv1d {
                w: Array2::zeros(self.conv.w.raw_dim()),
                b: Array1::zeros(self.conv.b.raw_dim()),
                kernel: self.conv.kernel,
            },
            forward_lstm: self.forward_lstm.zeros_like(),
            backward_lstm: self.backward_lstm.zeros_like(),
            attention: self.attention.zeros_like(),
            head: Linear::zeros(self.head.input_dim(), self.head.output_dim()),
            dropout: self.dropout,
        }
    }

    fn vocab_size(&self) -> usize {
        self.embedding.w.nrows()
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
        let tr = self.run(tokens, rng);
        let (loss, dlogits) = cross_entropy_grad(&tr.probs, target, weight);
        let mut dpooled = self.head.backward_vec(tr.pooled.view(), dlogits.view(), &mut grad.head);
        if let Some(m) = &tr.mask {
            dpooled *= m;
        }
        let dh = self.attention.backward(tr.h.view(), &tr.attention, dpooled.view(), &mut grad.attention);
        let u = self.units();
        let mut dc = self.forward_lstm.backward(tr.c.view(), &tr.lstm_f, dh.slice(s![.., ..u]), &mut grad.forward_lstm);
        dc += &self.backward_lstm.backward(tr.c.view(), &tr.lstm_b, dh.slice(s![.., u..]), &mut grad.backward_lstm);
        ndarray::Zip::from(&mut dc).and(&tr.z).for_each(|d, &z| {
            if z <= R::zero() {
                *d = R::zero();
            }
        });
        let dx = self.conv.backward(&tr.conv, dc.view(), &mut grad.conv);
        self.embedding.backward(tokens, dx.view(), &mut grad.embedding);
        (loss, tr.probs)
    }
}

impl<R: Real> Parameters<R> for RecurrentNet<R> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[R])) {
        use crate::nn::join;
        self.embedding.visit(&join(prefix, "embedding"), f);
        self.conv.visit(&join(prefix, "conv"), f);
        self.forward_lstm.visit(&join(prefix, "lstm_forward"), f);
        self.backward_lstm.visit(&join(prefix, "lstm_backward"), f);
        self.attention.visit(&join(prefix, "attention"), f);
        self.head.visit(&join(prefix, "classifier"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [R])) {
        use crate::nn::join;
        self.embedding.visit_mut(&join(prefix, "embedding"), f);
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.forward_lstm.visit_mut(&join(prefix, "lstm_forward"), f);
        self.backward_lstm.visit_mut(&join(prefix, "lstm_backward"), f);
        self.attention.visit_mut(&join(prefix, "attention"), f);
        self.head.visit_mut(&join(prefix, "classifier"), f);
    }
}
