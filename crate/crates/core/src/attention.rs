//! Multi-head attention and the pre-norm transformer blocks built on it.
//!
//! `U_qkv` is one `[D × 3·h·D_q]` matrix laid out as `[U_q | U_k | U_v]`,
//! each block holding the heads side by side. Queries are always projected
//! through the `U_q` columns of the query source and keys/values through the
//! `U_k | U_v` columns of the key/value source, so self-attention is exactly
//! the cross-attention path with both sources equal.

use crate::autodiff::{Graph, ParamId, ParamStore, Var, LN_EPS};
use crate::error::{Error, Result};
use crate::init;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct MsaWeights {
    pub u_qkv: ParamId,
    pub w_out: ParamId,
    pub heads: usize,
    pub head_dim: usize,
    pub model_dim: usize,
}

#[derive(Clone, Debug)]
pub struct FfnWeights {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Debug)]
pub struct LayerNormWeights {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Clone, Debug)]
pub struct EncoderBlockWeights {
    pub ln1: LayerNormWeights,
    pub msa: MsaWeights,
    pub ln2: LayerNormWeights,
    pub ffn: FfnWeights,
}

/// Post-softmax attention probabilities, `[h × T_q × T_kv]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub weights: Tensor,
}

impl AttentionMap {
    pub fn heads(&self) -> usize {
        self.weights.shape()[0]
    }

    /// Average over heads, `[T_q × T_kv]`.
    pub fn head_mean(&self) -> Tensor {
        let s = self.weights.shape();
        let (h, tq, tk) = (s[0], s[1], s[2]);
        let plane = tq * tk;
        let d = self.weights.data();
        Tensor::from_fn(&[tq, tk], |i| {
            (0..h).map(|k| d[k * plane + i]).sum::<f64>() / h as f64
        })
    }

    pub fn head(&self, k: usize) -> Tensor {
        let s = self.weights.shape();
        let plane = s[1] * s[2];
        Tensor::from_parts(vec![s[1], s[2]], self.weights.data()[k * plane..(k + 1) * plane].to_vec())
    }

    /// Largest deviation of any (head, query) row sum from 1.
    pub fn max_row_sum_error(&self) -> f64 {
        let tk = self.weights.last_dim();
        self.weights
            .data()
            .chunks(tk)
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Handles to the per-head probability nodes of one attention call.
#[derive(Clone, Debug)]
pub struct AttnProbs(pub Vec<Var>);

impl AttnProbs {
    pub fn to_map(&self, g: &Graph) -> AttentionMap {
        let first = g.value(self.0[0]).shape().to_vec();
        let mut data = Vec::with_capacity(self.0.len() * first[0] * first[1]);
        for &p in &self.0 {
            data.extend_from_slice(g.value(p).data());
        }
        AttentionMap {
            weights: Tensor::from_parts(vec![self.0.len(), first[0], first[1]], data),
        }
    }
}

impl LayerNormWeights {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize) -> Result<Self> {
        Ok(LayerNormWeights {
            gamma: store.add(format!("{prefix}.gamma"), Tensor::ones(&[dim]))?,
            beta: store.add(format!("{prefix}.beta"), Tensor::zeros(&[dim]))?,
        })
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma)?;
        let beta = g.param(store, self.beta)?;
        g.layer_norm(x, gamma, beta, LN_EPS)
    }
}

impl MsaWeights {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        model_dim: usize,
        heads: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if heads == 0 || !model_dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "model dim {model_dim} is not divisible by {heads} heads"
            )));
        }
        let inner = model_dim; // h · D_q with D_q = D / h
        let u_qkv = store.add(
            format!("{prefix}.Uqkv"),
            init::xavier_matrix(rng, model_dim, 3 * inner),
        )?;
        let w_out = store.add(format!("{prefix}.W"), init::xavier_matrix(rng, inner, model_dim))?;
        Ok(MsaWeights {
            u_qkv,
            w_out,
            heads,
            head_dim: model_dim / heads,
            model_dim,
        })
    }
}

impl FfnWeights {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        hidden: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::Config("ffn hidden dim must be >= 1".into()));
        }
        let w1 = store.add(format!("{prefix}.w1"), init::xavier_matrix(rng, dim, hidden))?;
        let b1 = store.add(format!("{prefix}.b1"), Tensor::zeros(&[hidden]))?;
        let w2 = store.add(format!("{prefix}.w2"), init::xavier_matrix(rng, hidden, dim))?;
        let b2 = store.add(format!("{prefix}.b2"), Tensor::zeros(&[dim]))?;
        Ok(FfnWeights { w1, b1, w2, b2 })
    }
}

impl EncoderBlockWeights {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        heads: usize,
        ffn_dim: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(EncoderBlockWeights {
            ln1: LayerNormWeights::new(store, &format!("{prefix}.ln1"), dim)?,
            msa: MsaWeights::new(store, &format!("{prefix}.msa"), dim, heads, rng)?,
            ln2: LayerNormWeights::new(store, &format!("{prefix}.ln2"), dim)?,
            ffn: FfnWeights::new(store, &format!("{prefix}.ffn"), dim, ffn_dim, rng)?,
        })
    }

    /// Number of scalars a block holds.
    pub fn numel(dim: usize, ffn_dim: usize) -> usize {
        4 * dim + 3 * dim * dim + dim * dim + dim * ffn_dim + ffn_dim + ffn_dim * dim + dim
    }
}

/// `x · w + b`.
pub fn linear(g: &mut Graph, store: &ParamStore, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let wv = g.param(store, w)?;
    let bv = g.param(store, b)?;
    let y = g.matmul(x, wv)?;
    g.add_bias(y, bv)
}

/// `softmax(q kᵀ / √D_q) · v`.
pub fn scaled_dot_attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<(Var, Var)> {
    let (qs, ks, vs) = (g.shape(q).to_vec(), g.shape(k).to_vec(), g.shape(v).to_vec());
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 || qs[1] != ks[1] || ks[0] != vs[0] {
        return Err(Error::dim(
            "attention",
            format!("incompatible q {qs:?}, k {ks:?}, v {vs:?}"),
        ));
    }
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scaled = g.scale(scores, 1.0 / (qs[1] as f64).sqrt())?;
    let probs = g.softmax(scaled)?;
    let out = g.matmul(probs, v)?;
    Ok((out, probs))
}

/// Multi-head attention with queries from `z_q` and keys/values from `z_kv`.
pub fn msa(
    g: &mut Graph,
    store: &ParamStore,
    z_q: Var,
    z_kv: Var,
    w: &MsaWeights,
) -> Result<(Var, AttnProbs)> {
    let d = w.model_dim;
    for (name, z) in [("query", z_q), ("key/value", z_kv)] {
        if g.shape(z).len() != 2 || g.shape(z)[1] != d {
            return Err(Error::dim(
                "msa",
                format!("{name} source {:?} does not have {d} columns", g.shape(z)),
            ));
        }
    }
    let inner = w.heads * w.head_dim;
    let u = g.param(store, w.u_qkv)?;
    let u_q = g.slice_cols(u, 0, inner)?;
    let u_kv = g.slice_cols(u, inner, 2 * inner)?;
    let q = g.matmul(z_q, u_q)?;
    let kv = g.matmul(z_kv, u_kv)?;

    let mut heads = Vec::with_capacity(w.heads);
    let mut probs = Vec::with_capacity(w.heads);
    for h in 0..w.heads {
        let off = h * w.head_dim;
        let qh = g.slice_cols(q, off, w.head_dim)?;
        let kh = g.slice_cols(kv, off, w.head_dim)?;
        let vh = g.slice_cols(kv, inner + off, w.head_dim)?;
        let (oh, ph) = scaled_dot_attention(g, qh, kh, vh)?;
        heads.push(oh);
        probs.push(ph);
    }
    let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
    let w_out = g.param(store, w.w_out)?;
    let out = g.matmul(cat, w_out)?;
    Ok((out, AttnProbs(probs)))
}

/// `linear → GELU → linear`.
pub fn ffn(g: &mut Graph, store: &ParamStore, x: Var, w: &FfnWeights) -> Result<Var> {
    let h = linear(g, store, x, w.w1, w.b1)?;
    let a = g.gelu(h)?;
    linear(g, store, a, w.w2, w.b2)
}

/// Pre-norm block: `ẑ = MSA(LN₁ z) + z`, `out = MLP(LN₂ ẑ) + ẑ`.
pub fn encoder_block(
    g: &mut Graph,
    store: &ParamStore,
    z: Var,
    w: &EncoderBlockWeights,
) -> Result<(Var, AttnProbs)> {
    let n = w.ln1.apply(g, store, z)?;
    let (a, probs) = msa(g, store, n, n, &w.msa)?;
    let zh = g.add(a, z)?;
    let out = ffn_residual(g, store, zh, w)?;
    Ok((out, probs))
}

/// Cross block: keys/values from `z_kv`, queries from `z_q`, residual
/// anchored to the key/value source.
pub fn cross_block(
    g: &mut Graph,
    store: &ParamStore,
    z_kv: Var,
    z_q: Var,
    w: &EncoderBlockWeights,
) -> Result<(Var, AttnProbs)> {
    if g.shape(z_kv) != g.shape(z_q) {
        return Err(Error::dim(
            "cross_block",
            format!(
                "key/value source {:?} and query source {:?} differ",
                g.shape(z_kv),
                g.shape(z_q)
            ),
        ));
    }
    if z_kv == z_q {
        return encoder_block(g, store, z_kv, w);
    }
    let n_kv = w.ln1.apply(g, store, z_kv)?;
    let n_q = w.ln1.apply(g, store, z_q)?;
    let (a, probs) = msa(g, store, n_q, n_kv, &w.msa)?;
    let zh = g.add(a, z_kv)?;
    let out = ffn_residual(g, store, zh, w)?;
    Ok((out, probs))
}

fn ffn_residual(g: &mut Graph, store: &ParamStore, zh: Var, w: &EncoderBlockWeights) -> Result<Var> {
    let n = w.ln2.apply(g, store, zh)?;
    let m = ffn(g, store, n, &w.ffn)?;
    g.add(m, zh)
}
