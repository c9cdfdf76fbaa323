use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;

use super::{glorot_uniform, join, uniform_std, visit1, visit1_mut, visit2, visit2_mut, Parameters, Real};

pub fn relu<R: Real>(x: R) -> R {
    if x > R::zero() {
        x
    } else {
        R::zero()
    }
}

pub fn gelu<R: Real>(x: R) -> R {
    let half = R::lit(0.5);
    half * x * (R::one() + (x * R::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub fn gelu_grad<R: Real>(x: R) -> R {
    let half = R::lit(0.5);
    let cdf = half * (R::one() + (x * R::lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * half).exp() * R::lit(1.0 / (2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}

fn sigmoid<R: Real>(x: R) -> R {
    R::one() / (R::one() + (-x).exp())
}

pub fn softmax_in_place<R: Real>(xs: &mut [R]) {
    let max = xs.iter().copied().fold(R::neg_infinity(), R::max);
    let mut sum = R::zero();
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in xs.iter_mut() {
        *x = *x / sum;
    }
}

pub fn softmax_rows<R: Real>(x: &mut Array2<R>) {
    for mut row in x.rows_mut() {
        softmax_in_place(row.as_slice_mut().expect("standard layout"));
    }
}

/// Inverted-dropout scaling mask, or `None` when dropout is inactive.
pub fn dropout_mask<R: Real, G: Rng>(len: usize, rate: f64, rng: Option<&mut G>) -> Option<Array1<R>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = R::lit(1.0 / (1.0 - rate));
    Some(Array1::from_shape_fn(len, |_| if rng.gen::<f64>() < rate { R::zero() } else { keep }))
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<R> {
    /// `in × out`
    pub w: Array2<R>,
    pub b: Array1<R>,
}

impl<R: Real> Linear<R> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self { w: Array2::zeros((input, output)), b: Array1::zeros(output) }
    }

    pub fn glorot<G: Rng>(input: usize, output: usize, rng: &mut G) -> Self {
        Self { w: glorot_uniform(input, output, rng), b: Array1::zeros(output) }
    }

    pub fn with_std<G: Rng>(input: usize, output: usize, std: f64, rng: &mut G) -> Self {
        Self { w: uniform_std(input, output, std, rng), b: Array1::zeros(output) }
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: ArrayView2<R>) -> Array2<R> {
        let mut y = x.dot(&self.w);
        y += &self.b;
        y
    }

    pub fn forward_vec(&self, x: ArrayView1<R>) -> Array1<R> {
        x.dot(&self.w) + &self.b
    }

    pub fn backward(&self, x: ArrayView2<R>, dy: ArrayView2<R>, grad: &mut Self) -> Array2<R> {
        general_mat_mul(R::one(), &x.t(), &dy, R::one(), &mut grad.w);
        grad.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }

    pub fn backward_vec(&self, x: ArrayView1<R>, dy: ArrayView1<R>, grad: &mut Self) -> Array1<R> {
        for (mut row, &xi) in grad.w.rows_mut().into_iter().zip(x.iter()) {
            row.scaled_add(xi, &dy);
        }
        grad.b += &dy;
        self.w.dot(&dy)
    }
}

impl<R: Real> Parameters<R> for Linear<R> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[R])) {
        visit2(&self.w, &join(prefix, "weight"), f);
        visit1(&self.b, &join(prefix, "bias"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [R])) {
        visit2_mut(&mut self.w, &join(prefix, "weight"), f);
        visit1_mut(&mut self.b, &join(prefix, "bias"), f);
    }
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct Embedding<R> {
    /// `vocab × dim`
    pub w: Array2<R>,
}

impl<R: Real> Embedding<R> {
    pub fn forward(&self, ids: &[u32]) -> Array2<R> {
        let mut out = Array2::zeros((ids.len(), self.w.ncols()));
        for (mut row, &id) in out.rows_mut().into_iter().zip(ids) {
            row.assign(&self.w.row(id as usize));
        }
        out
    }

    pub fn backward(&self, ids: &[u32], dx: ArrayView2<R>, grad: &mut Self) {
        for (row, &id) in dx.rows().into_iter().zip(ids) {
            let mut g = grad.w.row_mut(id as usize);
            g += &row;
        }
    }
}

impl<R: Real> Parameters<R> for Embedding<R> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[R])) {
        visit2(&self.w, &join(prefix, "weight"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [R])) {
        visit2_mut(&mut self.w, &join(prefix, "weight"), f);
    }
}

// ---------------------------------------------------------------------------

/// 1-D convolution over time with "same" zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d<R> {
    /// `(kernel · in) × filters`; rows grouped by kernel offset.
    pub w: Array2<R>,
    pub b: Array1<R>,
    pub kernel: usize,
}

pub struct Conv1dCache<R> {
    cols: Array2<R>,
}

impl<R: Real> Conv1d<R> {
    fn left_pad(&self) -> usize {
        (self.kernel - 1) / 2
    }

    fn in_dim(&self) -> usize {
        self.w.nrows() / self.kernel
    }

    fn im2col(&self, x: ArrayView2<R>) -> Array2<R> {
        let (t_len, d) = x.dim();
        let left = self.left_pad() as isize;
        let mut cols = Array2::zeros((t_len, self.kernel * d));
        for t in 0..t_len {
            for j in 0..self.kernel {
                let src = t as isize + j as isize - left;
                if src >= 0 && (src as usize) < t_len {
                    cols.slice_mut(s![t, j * d..(j + 1) * d]).assign(&x.row(src as usize));
                }
            }
        }
        cols
    }

    /// Pre-activation output `T × filters`.
    pub fn forward(&self, x: ArrayView2<R>) -> (Array2<R>, Conv1dCache<R>) {
        let cols = self.im2col(x);
        let mut y = cols.dot(&self.w);
        y += &self.b;
        (y, Conv1dCache { cols })
    }

    pub fn backward(&self, cache: &Conv1dCache<R>, dy: ArrayView2<R>, grad: &mut Self) -> Array2<R> {
        general_mat_mul(R::one(), &cache.cols.t(), &dy, R::one(), &mut grad.w);
        grad.b += &dy.sum_axis(Axis(0));
        let dcols = dy.dot(&self.w.t());
        let d = self.in_dim();
        let t_len = dy.nrows();
        let left = self.left_pad() as isize;
        let mut dx = Array2::zeros((t_len, d));
        for t in 0..t_len {
            for j in 0..self.kernel {
                let dst = t as isize + j as isize - left;
                if dst >= 0 && (dst as usize) < t_len {
                    let mut row = dx.row_mut(dst as usize);
                    row += &dcols.slice(s![t, j * d..(j + 1) * d]);
                }
            }
        }
        dx
    }
}

impl<R: Real> Parameters<R> for Conv1d<R> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[R])) {
        visit2(&self.w, &join(prefix, "weight"), f);
        visit1(&self.b, &join(prefix, "bias"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [R])) {
        visit2_mut(&mut self.w, &join(prefix, "weight"), f);
        visit1_mut(&mut self.b, &join(prefix, "bias"), f);
    }
}

// ---------------------------------------------------------------------------

/// One direction of an LSTM layer. Gate blocks are laid out `[i | f | g | o]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm<R> {
    /// `in × 4H`
    pub wx: Array2<R>,
    /// `H × 4H`
    pub wh: Array2<R>,
    pub b: Array1<R>,
    pub reverse: bool,
}

pub struct LstmCache<R> {
    gates: Array2<R>,
    c: Array2<R>,
    tanh_c: Array2<R>,
    h: Array2<R>,
}

impl<R: Real> Lstm<R> {
    pub fn init<G: Rng>(input: usize, units: usize, reverse: bool, rng: &mut G) -> Self {
        let mut b = Array1::zeros(4 * units);
        b.slice_mut(s![units..2 * units]).fill(R::one());
        Self { wx: glorot_uniform(input, 4 * units, rng), wh: glorot_uniform(units, 4 * units, rng), b, reverse }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            wx: Array2::zeros(self.wx.raw_dim()),
            wh: Array2::zeros(self.wh.raw_dim()),
            b: Array1::zeros(self.b.raw_dim()),
            reverse: self.reverse,
        }
    }

    pub fn units(&self) -> usize {
        self.wh.nrows()
    }

    fn order(&self, t_len: usize) -> Vec<usize> {
        if self.reverse {
            (0..t_len).rev().collect()
        } else {
            (0..t_len).collect()
        }
    }

    /// Hidden states `T × H` in input time order.
    pub fn forward(&self, x: ArrayView2<R>) -> (Array2<R>, LstmCache<R>) {
        let t_len = x.nrows();
        let hu = self.units();
        let mut xw = x.dot(&self.wx);
        xw += &self.b;
        let mut gates = Array2::zeros((t_len, 4 * hu));
        let mut c = Array2::zeros((t_len, hu));
        let mut tanh_c = Array2::zeros((t_len, hu));
        let mut h = Array2::zeros((t_len, hu));
        let mut h_prev = Array1::<R>::zeros(hu);
        let mut c_prev = Array1::<R>::zeros(hu);
        for t in self.order(t_len) {
            let mut g = h_prev.dot(&self.wh);
            g += &xw.row(t);
            for k in 0..hu {
                let i = sigmoid(g[k]);
                let f = sigmoid(g[hu + k]);
                let gg = g[2 * hu + k].tanh();
                let o = sigmoid(g[3 * hu + k]);
                let ct = f * c_prev[k] + i * gg;
                let tc = ct.tanh();
                gates[[t, k]] = i;
                gates[[t, hu + k]] = f;
                gates[[t, 2 * hu + k]] = gg;
                gates[[t, 3 * hu + k]] = o;
                c[[t, k]] = ct;
                tanh_c[[t, k]] = tc;
                h[[t, k]] = o * tc;
            }
            h_prev.assign(&h.row(t));
            c_prev.assign(&c.row(t));
        }
        (h.clone(), LstmCache { gates, c, tanh_c, h })
    }

    pub fn backward(&self, x: ArrayView2<R>, cache: &LstmCache<R>, dh: ArrayView2<R>, grad: &mut Self) -> Array2<R> {
        let t_len = x.nrows();
        let hu = self.units();
        let order = self.order(t_len);
        let mut dgates = Array2::<R>::zeros((t_len, 4 * hu));
        let mut h_prev_rows = Array2::<R>::zeros((t_len, hu));
        let mut dh_next = Array1::<R>::zeros(hu);
        let mut dc_next = Array1::<R>::zeros(hu);
        let one = R::one();
        for step in (0..t_len).rev() {
            let t = order[step];
            let prev = if step > 0 { Some(order[step - 1]) } else { None };
            if let Some(p) = prev {
                h_prev_rows.row_mut(t).assign(&cache.h.row(p));
            }
            for k in 0..hu {
                let i = cache.gates[[t, k]];
                let f = cache.gates[[t, hu + k]];
                let gg = cache.gates[[t, 2 * hu + k]];
                let o = cache.gates[[t, 3 * hu + k]];
                let tc = cache.tanh_c[[t, k]];
                let c_prev = prev.map_or(R::zero(), |p| cache.c[[p, k]]);
                let dht = dh[[t, k]] + dh_next[k];
                let d_o = dht * tc * o * (one - o);
                let dc = dht * o * (one - tc * tc) + dc_next[k];
                dgates[[t, k]] = dc * gg * i * (one - i);
                dgates[[t, hu + k]] = dc * c_prev * f * (one - f);
                dgates[[t, 2 * hu + k]] = dc * i * (one - gg * gg);
                dgates[[t, 3 * hu + k]] = d_o;
                dc_next[k] = dc * f;
            }
            dh_next = self.wh.dot(&dgates.row(t));
        }
        general_mat_mul(one, &h_prev_rows.t(), &dgates, one, &mut grad.wh);
        general_mat_mul(one, &x.t(), &dgates, one, &mut grad.wx);
        grad.b += &dgates.sum_axis(Axis(0));
        dgates.dot(&self.wx.t())
    }
}

impl<R: Real> Parameters<R> for Lstm<R> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[R])) {
        visit2(&self.wx, &join(prefix, "input_kernel"), f);
        visit2(&self.wh, &join(prefix, "recurrent_kernel"), f);
        visit1(&self.b, &join(prefix, "bias"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [R])) {
        visit2_mut(&mut self.wx, &join(prefix, "input_kernel"), f);
        visit2_mut(&mut self.wh, &join(prefix, "recurrent_kernel"), f);
        visit1_mut(&mut self.b, &join(prefix, "bias"), f);
    }
}

// ---------------------------------------------------------------------------

/// Single-query additive attention pooling over time steps.
#[derive(Clone, Debug, PartialEq)]
pub struct AdditiveAttention<R> {
    /// `D × A`
    pub w: Array2<R>,
    pub b: Array1<R>,
    /// Query vector of length `A`.
    pub v: Array1<R>,
}

pub struct AttentionCache<R> {
    u: Array2<R>,
    pub weights: Array1<R>,
}

impl<R: Real> AdditiveAttention<R> {
    pub fn init<G: Rng>(input: usize, dim: usize, rng: &mut G) -> Self {
        let v = glorot_uniform::<R, G>(dim, 1, rng).into_shape_with_order(dim).expect("column vector");
        Self { w: glorot_uniform(input, dim, rng), b: Array1::zeros(dim), v }
    }

    pub fn zeros_like(&self) -> Self {
        Self { w: Array2::zeros(self.w.raw_dim()), b: Array1::zeros(self.b.raw_dim()), v: Array1::zeros(self.v.raw_dim()) }
    }

    /// Context vector (length `D`) and the attention weights over time.
    pub fn forward(&self, h: ArrayView2<R>) -> (Array1<R>, AttentionCache<R>) {
        let mut u = h.dot(&self.w);
        u += &self.b;
        u.mapv_inplace(|x| x.tanh());
        let mut weights = u.dot(&self.v);
        softmax_in_place(weights.as_slice_mut().expect("standard layout"));
        let ctx = h.t().dot(&weights);
        (ctx, AttentionCache { u, weights })
    }

    pub fn backward(&self, h: ArrayView2<R>, cache: &AttentionCache<R>, dctx: ArrayView1<R>, grad: &mut Self) -> Array2<R> {
        let alpha = &cache.weights;
        let t_len = h.nrows();
        let mut dh = Array2::<R>::zeros(h.raw_dim());
        for t in 0..t_len {
            dh.row_mut(t).scaled_add(alpha[t], &dctx);
        }
        let dalpha = h.dot(&dctx);
        let dot: R = alpha.iter().zip(dalpha.iter()).fold(R::zero(), |acc, (&a, &d)| acc + a * d);
        let ds: Array1<R> = Zip::from(alpha).and(&dalpha).map_collect(|&a, &d| a * (d - dot));
        grad.v += &cache.u.t().dot(&ds);
        let mut dpre = Array2::<R>::zeros(cache.u.raw_dim());
        Zip::from(dpre.rows_mut()).and(cache.u.rows()).and(&ds).for_each(|mut dp, u_row, &dst| {
            Zip::from(&mut dp).and(&u_row).and(&self.v).for_each(|d, &u, &v| *d = dst * v * (R::one() - u * u));
        });
        general_mat_mul(R::one(), &h.t(), &dpre, R::one(), &mut grad.w);
        grad.b += &dpre.sum_axis(Axis(0));
        dh += &dpre.dot(&self.w.t());
        dh
    }
}

impl<R: Real> Parameters<R> for AdditiveAttention<R> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[R])) {
        visit2(&self.w, &join(prefix, "weight"), f);
        visit1(&self.b, &join(prefix, "bias"), f);
        visit1(&self.v, &join(prefix, "query"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [R])) {
        visit2_mut(&mut self.w, &join(prefix, "weight"), f);
        visit1_mut(&mut self.b, &join(prefix, "bias"), f);
        visit1_mut(&mut self.v, &join(prefix, "query"), f);
    }
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm<R> {
    pub gamma: Array1<R>,
    pub beta: Array1<R>,
    pub eps: f64,
}

pub struct LayerNormCache<R> {
    xhat: Array2<R>,
    inv_std: Array1<R>,
}

impl<R: Real> LayerNorm<R> {
    pub fn new(dim: usize, eps: f64) -> Self {
        Self { gamma: Array1::ones(dim), beta: Array1::zeros(dim), eps }
    }

    pub fn zeros_like(&self) -> Self {
        Self { gamma: Array1::zeros(self.gamma.raw_dim()), beta: Array1::zeros(self.beta.raw_dim()), eps: self.eps }
    }

    pub fn forward(&self, x: ArrayView2<R>) -> (Array2<R>, LayerNormCache<R>) {
        let (t_len, d) = x.dim();
        let n = R::lit(d as f64);
        let eps = R::lit(self.eps);
        let mut xhat = Array2::zeros((t_len, d));
        let mut inv_std = Array1::zeros(t_len);
        for t in 0..t_len {
            let row = x.row(t);
            let mean = row.sum() / n;
            let var = row.fold(R::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / n;
            let is = R::one() / (var + eps).sqrt();
            inv_std[t] = is;
            Zip::from(xhat.row_mut(t)).and(&row).for_each(|o, &v| *o = (v - mean) * is);
        }
        let mut y = &xhat * &self.gamma;
        y += &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache<R>, dy: ArrayView2<R>, grad: &mut Self) -> Array2<R> {
        grad.gamma += &(&dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let dxhat = &dy * &self.gamma;
        let n = R::lit(dy.ncols() as f64);
        let mut dx = Array2::zeros(dy.raw_dim());
        for t in 0..dy.nrows() {
            let dxh = dxhat.row(t);
            let xh = cache.xhat.row(t);
            let mean_d = dxh.sum() / n;
            let mean_dx = dxh.iter().zip(xh.iter()).fold(R::zero(), |acc, (&a, &b)| acc + a * b) / n;
            let is = cache.inv_std[t];
            Zip::from(dx.row_mut(t)).and(&dxh).and(&xh).for_each(|o, &d, &x| *o = is * (d - mean_d - x * mean_dx));
        }
        dx
    }
}

impl<R: Real> Parameters<R> for LayerNorm<R> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[R])) {
        visit1(&self.gamma, &join(prefix, "weight"), f);
        visit1(&self.beta, &join(prefix, "bias"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [R])) {
        visit1_mut(&mut self.gamma, &join(prefix, "weight"), f);
        visit1_mut(&mut self.beta, &join(prefix, "bias"), f);
    }
}

// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadSelfAttention<R> {
    pub q: Linear<R>,
    pub k: Linear<R>,
    pub v: Linear<R>,
    pub o: Linear<R>,
    pub heads: usize,
}

pub struct MhaCache<R> {
    q: Array2<R>,
    k: Array2<R>,
    v: Array2<R>,
    probs: Vec<Array2<R>>,
    concat: Array2<R>,
}

impl<R: Real> MultiHeadSelfAttention<R> {
    pub fn zeros_like(&self) -> Self {
        let d = self.q.input_dim();
        Self {
            q: Linear::zeros(d, d),
            k: Linear::zeros(d, d),
            v: Linear::zeros(d, d),
            o: Linear::zeros(d, d),
            heads: self.heads,
        }
    }

    fn head_dim(&self) -> usize {
        self.q.output_dim() / self.heads
    }

    pub fn forward(&self, x: ArrayView2<R>) -> (Array2<R>, MhaCache<R>) {
        let q = self.q.forward(x);
        let k = self.k.forward(x);
        let v = self.v.forward(x);
        let hd = self.head_dim();
        let scale = R::lit(1.0 / (hd as f64).sqrt());
        let mut concat = Array2::zeros(q.raw_dim());
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t());
            scores *= scale;
            softmax_rows(&mut scores);
            concat.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            probs.push(scores);
        }
        let out = self.o.forward(concat.view());
        (out, MhaCache { q, k, v, probs, concat })
    }

    pub fn backward(&self, x: ArrayView2<R>, cache: &MhaCache<R>, dout: ArrayView2<R>, grad: &mut Self) -> Array2<R> {
        let dconcat = self.o.backward(cache.concat.view(), dout, &mut grad.o);
        let hd = self.head_dim();
        let scale = R::lit(1.0 / (hd as f64).sqrt());
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for h in 0..self.heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let a = &cache.probs[h];
            let doh = dconcat.slice(cols);
            let da = doh.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&a.t().dot(&doh));
            let mut ds = Array2::zeros(a.raw_dim());
            for t in 0..a.nrows() {
                let ar = a.row(t);
                let dar = da.row(t);
                let dot = ar.iter().zip(dar.iter()).fold(R::zero(), |acc, (&p, &d)| acc + p * d);
                Zip::from(ds.row_mut(t)).and(&ar).and(&dar).for_each(|o, &p, &d| *o = p * (d - dot) * scale);
            }
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        let mut dx = self.q.backward(x, dq.view(), &mut grad.q);
        dx += &self.k.backward(x, dk.view(), &mut grad.k);
        dx += &self.v.backward(x, dv.view(), &mut grad.v);
        dx
    }
}

impl<R: Real> Parameters<R> for MultiHeadSelfAttention<R> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &[R])) {
        self.q.visit(&join(prefix, "query"), f);
        self.k.visit(&join(prefix, "key"), f);
        self.v.visit(&join(prefix, "value"), f);
        self.o.visit(&join(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &[usize], &mut [R])) {
        self.q.visit_mut(&join(prefix, "query"), f);
        self.k.visit_mut(&join(prefix, "key"), f);
        self.v.visit_mut(&join(prefix, "value"), f);
        self.o.visit_mut(&join(prefix, "output"), f);
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Central-difference check of `backward` for a scalar loss
    /// `sum(out ⊙ probe)` on an input matrix.
    fn check_input_grad(
        x: &Array2<f64>,
        forward: &dyn Fn(&Array2<f64>) -> Array2<f64>,
        analytic: &Array2<f64>,
        probe: &Array2<f64>,
    ) {
        let eps = 1e-6;
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            xp[[r, c]] += eps;
            let mut xm = x.clone();
            xm[[r, c]] -= eps;
            let fp = (&forward(&xp) * probe).sum();
            let fm = (&forward(&xm) * probe).sum();
            let num = (fp - fm) / (2.0 * eps);
            assert!((num - analytic[[r, c]]).abs() < 1e-6 * (1.0 + num.abs()), "{idx}: {num} vs {}", analytic[[r, c]]);
        }
    }

    fn rand_mat(r: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut xs = [1000.0f32, 1001.0, 999.0];
        softmax_in_place(&mut xs);
        assert!((xs.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!(xs[1] > xs[0] && xs[0] > xs[2]);
    }

    #[test]
    fn gelu_matches_reference_points() {
        assert!((gelu(1.0f64) - 0.841_344_746_068_543).abs() < 1e-12);
        assert!((gelu(-1.0f64) + 0.158_655_253_931_457).abs() < 1e-12);
        let h = 1e-6;
        for x in [-2.0f64, -0.3, 0.0, 0.7, 3.1] {
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((num - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn conv_input_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv1d { w: glorot_uniform::<f64, _>(3 * 2, 4, &mut rng), b: array![0.1, -0.2, 0.3, 0.0], kernel: 3 };
        let x = rand_mat(5, 2, 2);
        let probe = rand_mat(5, 4, 3);
        let (_, cache) = conv.forward(x.view());
        let mut g = Conv1d { w: Array2::zeros(conv.w.raw_dim()), b: Array1::zeros(4), kernel: 3 };
        let dx = conv.backward(&cache, probe.view(), &mut g);
        check_input_grad(&x, &|x| conv.forward(x.view()).0, &dx, &probe);
    }

    #[test]
    fn lstm_input_gradient_both_directions() {
        for reverse in [false, true] {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let lstm = Lstm::<f64>::init(3, 2, reverse, &mut rng);
            let x = rand_mat(4, 3, 5);
            let probe = rand_mat(4, 2, 6);
            let (_, cache) = lstm.forward(x.view());
            let mut g = lstm.zeros_like();
            let dx = lstm.backward(x.view(), &cache, probe.view(), &mut g);
            check_input_grad(&x, &|x| lstm.forward(x.view()).0, &dx, &probe);
        }
    }

    #[test]
    fn attention_weights_are_a_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let att = AdditiveAttention::<f64>::init(4, 3, &mut rng);
        let h = rand_mat(6, 4, 8);
        let (_, cache) = att.forward(h.view());
        assert!(cache.weights.iter().all(|&w| w >= 0.0));
        assert!((cache.weights.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn attention_input_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let att = AdditiveAttention::<f64>::init(4, 3, &mut rng);
        let h = rand_mat(5, 4, 10);
        let probe = rand_mat(1, 4, 11);
        let (_, cache) = att.forward(h.view());
        let mut g = att.zeros_like();
        let dh = att.backward(h.view(), &cache, probe.row(0), &mut g);
        let fwd = |h: &Array2<f64>| att.forward(h.view()).0.insert_axis(Axis(0));
        check_input_grad(&h, &fwd, &dh, &probe);
    }

    #[test]
    fn layer_norm_input_gradient() {
        let ln = LayerNorm { gamma: array![1.5, 0.5, -1.0, 2.0], beta: array![0.1, 0.2, 0.3, 0.4], eps: 1e-12 };
        let x = rand_mat(3, 4, 12);
        let probe = rand_mat(3, 4, 13);
        let (_, cache) = ln.forward(x.view());
        let mut g = ln.zeros_like();
        let dx = ln.backward(&cache, probe.view(), &mut g);
        check_input_grad(&x, &|x| ln.forward(x.view()).0, &dx, &probe);
    }

    #[test]
    fn mha_input_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let d = 4;
        let mha = MultiHeadSelfAttention {
            q: Linear::<f64>::glorot(d, d, &mut rng),
            k: Linear::glorot(d, d, &mut rng),
            v: Linear::glorot(d, d, &mut rng),
            o: Linear::glorot(d, d, &mut rng),
            heads: 2,
        };
        let x = rand_mat(3, d, 15);
        let probe = rand_mat(3, d, 16);
        let (_, cache) = mha.forward(x.view());
        let mut g = mha.zeros_like();
        let dx = mha.backward(x.view(), &cache, probe.view(), &mut g);
        check_input_grad(&x, &|x| mha.forward(x.view()).0, &dx, &probe);
    }

    #[test]
    fn linear_weight_gradient_is_outer_product() {
        let lin = Linear { w: array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]], b: array![0.0, 0.0] };
        let mut g = Linear::zeros(3, 2);
        let dx = lin.backward_vec(array![1.0, 0.0, 2.0].view(), array![1.0, -1.0].view(), &mut g);
        assert_eq!(g.w, array![[1.0, -1.0], [0.0, 0.0], [2.0, -2.0]]);
        assert_eq!(dx, array![-1.0, -1.0, -1.0]);
    }
}
