//! Brute-force reference implementations on nested `Vec`s. Nothing here
//! calls into the library's numeric kernels; parameter values are only read
//! out of the store.
#![allow(dead_code, clippy::needless_range_loop)]

pub mod cases;
pub mod grads;
pub mod tables;

use ifusion::attention::{EncoderBlockWeights, FfnWeights, LayerNormWeights};
use ifusion::autodiff::{ParamId, ParamStore, LN_EPS};
use ifusion::fusion::Branch;
use ifusion::model::{Architecture, FusionWeights, SampleWindow};
use ifusion::Tensor;

pub type Mat = Vec<Vec<f64>>;

pub fn mat(t: &Tensor) -> Mat {
    let s = t.shape();
    let (r, c) = match s.len() {
        1 => (1, s[0]),
        2 => (s[0], s[1]),
        _ => panic!("mat() needs rank 1 or 2, got {s:?}"),
    };
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

pub fn vec1(t: &Tensor) -> Vec<f64> {
    t.data().to_vec()
}

pub fn to_tensor(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

pub fn max_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len(), "row count");
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len(), "column count");
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        assert_eq!(a[i].len(), k);
        for j in 0..m {
            let mut acc = 0.0;
            for t in 0..k {
                acc += a[i][t] * b[t][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect())
        .collect()
}

pub fn add_row(a: &Mat, bias: &[f64]) -> Mat {
    a.iter()
        .map(|x| x.iter().zip(bias).map(|(p, q)| p + q).collect())
        .collect()
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn cols(a: &Mat, start: usize, len: usize) -> Mat {
    a.iter().map(|r| r[start..start + len].to_vec()).collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = (var + LN_EPS).sqrt();
    x.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(v, (g, b))| (v - mean) / sd * g + b)
        .collect()
}

pub fn layer_norm_rows(x: &Mat, gamma: &[f64], beta: &[f64]) -> Mat {
    x.iter().map(|r| layer_norm(r, gamma, beta)).collect()
}

/// Maclaurin series below 2.5, the erfc continued fraction above. Good to a
/// few ulp over the whole line.
pub fn erf(x: f64) -> f64 {
    let a = x.abs();
    let r = if a < 2.5 {
        let x2 = a * a;
        let (mut term, mut sum) = (a, a);
        for n in 1..200 {
            term *= -x2 / n as f64;
            let t = term / (2 * n + 1) as f64;
            sum += t;
            if t.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum * 2.0 / std::f64::consts::PI.sqrt()
    } else {
        let mut f = a;
        for n in (1..=200).rev() {
            f = a + (n as f64 / 2.0) / f;
        }
        1.0 - (-a * a).exp() / (std::f64::consts::PI.sqrt() * f)
    };
    if x < 0.0 {
        -r
    } else {
        r
    }
}

/// `x Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

pub fn gelu_mat(a: &Mat) -> Mat {
    a.iter().map(|r| r.iter().map(|&v| gelu(v)).collect()).collect()
}

/// Six nested loops, zero padding, cross-correlation. `x` is `[C][H][W]`,
/// `k` is `[O × C × kh × kw]`.
pub fn conv2d(x: &[Mat], k: &Tensor, bias: &[f64], stride: usize, pad: usize) -> Vec<Mat> {
    let [o, c, kh, kw] = *k.shape() else { panic!("kernel rank") };
    assert_eq!(x.len(), c);
    let (h, w) = (x[0].len(), x[0][0].len());
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![vec![vec![0.0; ow]; oh]; o];
    for f in 0..o {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = bias[f];
                for ch in 0..c {
                    for i in 0..kh {
                        for j in 0..kw {
                            let r = (y * stride + i) as isize - pad as isize;
                            let q = (xx * stride + j) as isize - pad as isize;
                            if r >= 0 && q >= 0 && (r as usize) < h && (q as usize) < w {
                                acc += k.get(&[f, ch, i, j]) * x[ch][r as usize][q as usize];
                            }
                        }
                    }
                }
                out[f][y][xx] = acc;
            }
        }
    }
    out
}

pub fn image(t: &Tensor) -> Vec<Mat> {
    let [c, h, w] = *t.shape() else { panic!("image rank") };
    (0..c)
        .map(|ch| (0..h).map(|r| (0..w).map(|q| t.get(&[ch, r, q])).collect()).collect())
        .collect()
}

/// Explicit `q kᵀ`, scale, row softmax, weighted sum of `v` rows.
pub fn attention(q: &Mat, k: &Mat, v: &Mat) -> (Mat, Mat) {
    let dq = q[0].len() as f64;
    let mut probs = Vec::new();
    let mut out = Vec::new();
    for qi in q {
        let scores: Vec<f64> = k
            .iter()
            .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / dq.sqrt())
            .collect();
        let p = softmax(&scores);
        let mut o = vec![0.0; v[0].len()];
        for (pj, vj) in p.iter().zip(v) {
            for (oc, vc) in o.iter_mut().zip(vj) {
                *oc += pj * vc;
            }
        }
        probs.push(p);
        out.push(o);
    }
    (out, probs)
}

/// Raw values of one encoder block.
#[derive(Clone, Debug)]
pub struct Block {
    pub g1: Vec<f64>,
    pub b1: Vec<f64>,
    pub u: Mat,
    pub w: Mat,
    pub heads: usize,
    pub g2: Vec<f64>,
    pub b2: Vec<f64>,
    pub ffn: Ffn,
}

#[derive(Clone, Debug)]
pub struct Ffn {
    pub w1: Mat,
    pub c1: Vec<f64>,
    pub w2: Mat,
    pub c2: Vec<f64>,
}

fn val(store: &ParamStore, id: ParamId) -> &Tensor {
    store.value(id)
}

impl Ffn {
    pub fn read(store: &ParamStore, w: &FfnWeights) -> Self {
        Ffn {
            w1: mat(val(store, w.w1)),
            c1: vec1(val(store, w.b1)),
            w2: mat(val(store, w.w2)),
            c2: vec1(val(store, w.b2)),
        }
    }

    pub fn apply(&self, x: &Mat) -> Mat {
        let h = gelu_mat(&add_row(&matmul(x, &self.w1), &self.c1));
        add_row(&matmul(&h, &self.w2), &self.c2)
    }
}

fn ln(store: &ParamStore, w: &LayerNormWeights) -> (Vec<f64>, Vec<f64>) {
    (vec1(val(store, w.gamma)), vec1(val(store, w.beta)))
}

impl Block {
    pub fn read(store: &ParamStore, w: &EncoderBlockWeights) -> Self {
        let (g1, b1) = ln(store, &w.ln1);
        let (g2, b2) = ln(store, &w.ln2);
        Block {
            g1,
            b1,
            u: mat(val(store, w.msa.u_qkv)),
            w: mat(val(store, w.msa.w_out)),
            heads: w.msa.heads,
            g2,
            b2,
            ffn: Ffn::read(store, &w.ffn),
        }
    }
}

/// Queries from `zq`, keys and values from `zkv`; per-head probabilities.
pub fn msa(zq: &Mat, zkv: &Mat, u: &Mat, w_out: &Mat, heads: usize) -> (Mat, Vec<Mat>) {
    let d = zq[0].len();
    let dq = d / heads;
    let q = matmul(zq, &cols(u, 0, d));
    let k = matmul(zkv, &cols(u, d, d));
    let v = matmul(zkv, &cols(u, 2 * d, d));
    let mut cat = vec![Vec::with_capacity(d); zq.len()];
    let mut maps = Vec::new();
    for h in 0..heads {
        let (o, p) = attention(&cols(&q, h * dq, dq), &cols(&k, h * dq, dq), &cols(&v, h * dq, dq));
        for (row, part) in cat.iter_mut().zip(o) {
            row.extend(part);
        }
        maps.push(p);
    }
    (matmul(&cat, w_out), maps)
}

/// `ẑ = MSA(LN₁ z_q, LN₁ z_kv) + z_kv`, `out = FFN(LN₂ ẑ) + ẑ`.
pub fn cross_block(zkv: &Mat, zq: &Mat, b: &Block) -> (Mat, Vec<Mat>) {
    let nkv = layer_norm_rows(zkv, &b.g1, &b.b1);
    let nq = layer_norm_rows(zq, &b.g1, &b.b1);
    let (a, maps) = msa(&nq, &nkv, &b.u, &b.w, b.heads);
    let zh = add(&a, zkv);
    let f = b.ffn.apply(&layer_norm_rows(&zh, &b.g2, &b.b2));
    (add(&f, &zh), maps)
}

pub fn encoder_block(z: &Mat, b: &Block) -> (Mat, Vec<Mat>) {
    cross_block(z, z, b)
}

/// Feature-fusion layer, one token at a time.
pub struct Fuse {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub k1: Tensor,
    pub c1: Vec<f64>,
    pub k2: Tensor,
    pub c2: Vec<f64>,
    pub k3: Tensor,
    pub c3: Vec<f64>,
}

impl Fuse {
    pub fn read(store: &ParamStore, w: &ifusion::fusion::FeatureFusionWeights) -> Self {
        let (gamma, beta) = ln(store, &w.ln);
        Fuse {
            gamma,
            beta,
            k1: val(store, w.conv1.0).clone(),
            c1: vec1(val(store, w.conv1.1)),
            k2: val(store, w.conv2.0).clone(),
            c2: vec1(val(store, w.conv2.1)),
            k3: val(store, w.conv3.0).clone(),
            c3: vec1(val(store, w.conv3.1)),
        }
    }
}

/// `views[i][j]` are `[T × D]`; returns `[T × D]`.
pub fn compress(views: &[Vec<Mat>], f: &Fuse) -> Mat {
    let n = views.len();
    let (t, d) = (views[0][0].len(), views[0][0][0].len());
    let mut out = Vec::with_capacity(t);
    for tok in 0..t {
        let mut img: Vec<Mat> = Vec::with_capacity(d);
        for c in 0..d {
            let grid: Vec<f64> = (0..n * n).map(|p| views[p / n][p % n][tok][c]).collect();
            let normed = layer_norm(&grid, &f.gamma, &f.beta);
            img.push((0..n).map(|i| normed[i * n..(i + 1) * n].to_vec()).collect());
        }
        let a = conv2d(&img, &f.k1, &f.c1, 1, 1);
        let b = conv2d(&a, &f.k2, &f.c2, 1, 0);
        let res: Vec<Mat> = b
            .iter()
            .zip(&img)
            .map(|(bc, ic)| {
                bc.iter()
                    .zip(ic)
                    .map(|(br, ir)| br.iter().zip(ir).map(|(&x, &y)| gelu(x) + y).collect())
                    .collect()
            })
            .collect();
        let c = conv2d(&res, &f.k3, &f.c3, 1, 0);
        out.push(c.iter().map(|ch| ch[0][0]).collect());
    }
    out
}

pub fn ffn_update(z: &Mat, f: &Ffn) -> Mat {
    add(z, &f.apply(z))
}

pub fn concat_fusion(views: &[Vec<Mat>], proj: &Mat, bias: &[f64]) -> Mat {
    let t = views[0][0].len();
    let cat: Mat = (0..t)
        .map(|tok| views.iter().flatten().flat_map(|v| v[tok].iter().copied()).collect())
        .collect();
    add_row(&matmul(&cat, proj), bias)
}

/// Nine patches, each flattened band, row, column.
pub fn patches(x: &Tensor, s: usize) -> Mat {
    let bands = x.shape()[0];
    let mut out = Vec::new();
    for pr in 0..3 {
        for pc in 0..3 {
            let mut p = Vec::new();
            for b in 0..bands {
                for r in 0..s {
                    for c in 0..s {
                        p.push(x.get(&[b, pr * s + r, pc * s + c]));
                    }
                }
            }
            out.push(p);
        }
    }
    out
}

pub fn tokenize(x: &Tensor, s: usize, w: &Mat, b: &[f64], cls: &[f64], pos: Option<&Mat>) -> Mat {
    let mut seq = vec![cls.to_vec()];
    seq.extend(add_row(&matmul(&patches(x, s), w), b));
    match pos {
        Some(p) => add(&seq, p),
        None => seq,
    }
}

pub fn center_input(x: &Tensor) -> Tensor {
    let [bands, side, _] = *x.shape() else { panic!("window rank") };
    let s = side / 3;
    let mut out = Tensor::zeros(x.shape());
    for b in 0..bands {
        for r in 0..side {
            for c in 0..side {
                out.set(&[b, r, c], x.get(&[b, s + r % s, s + c % s]));
            }
        }
    }
    out
}

pub struct Trace {
    pub logits: Vec<f64>,
    pub branches: Vec<Branch>,
    /// Stage-1 outputs, one per branch.
    pub stage1: Vec<Mat>,
    /// `attn[i][j][head]`, `[T_q × T_kv]`.
    pub attn: Vec<Vec<Vec<Mat>>>,
    pub integrated: Option<Mat>,
}

/// Whole network chained from the oracles above.
pub fn forward(arch: &Architecture, store: &ParamStore, s: &SampleWindow) -> Trace {
    let sp = arch.cfg.patch_side;
    let mut stage1 = Vec::new();
    for bw in &arch.branches {
        let e = &bw.embed;
        let pos = e.pos.map(|p| mat(val(store, p)));
        let mut z = tokenize(
            s.input(bw.branch),
            sp,
            &mat(val(store, e.weight)),
            &vec1(val(store, e.bias)),
            &vec1(val(store, e.cls)),
            pos.as_ref(),
        );
        for b in &bw.blocks {
            z = encoder_block(&z, &Block::read(store, b)).0;
        }
        stage1.push(z);
    }
    let branches: Vec<Branch> = arch.branches.iter().map(|b| b.branch).collect();
    let (mut z, attn, integrated) = match &arch.fusion {
        None => (stage1[0].clone(), Vec::new(), None),
        Some(fw) => {
            let blocks = match fw {
                FusionWeights::Matrix { views, .. } | FusionWeights::Concat { views, .. } => views,
            };
            let n = stage1.len();
            let mut views = vec![Vec::new(); n];
            let mut attn = vec![Vec::new(); n];
            for i in 0..n {
                for j in 0..n {
                    let (v, a) = cross_block(&stage1[i], &stage1[j], &Block::read(store, &blocks[i][j]));
                    views[i].push(v);
                    attn[i].push(a);
                }
            }
            let zf = match fw {
                FusionWeights::Matrix { fuse, ffn, .. } => {
                    let zh = compress(&views, &Fuse::read(store, fuse));
                    ffn_update(&zh, &Ffn::read(store, ffn))
                }
                FusionWeights::Concat { proj, bias, .. } => {
                    concat_fusion(&views, &mat(val(store, *proj)), &vec1(val(store, *bias)))
                }
            };
            (zf.clone(), attn, Some(zf))
        }
    };
    for b in &arch.stage3 {
        z = encoder_block(&z, &Block::read(store, b)).0;
    }
    let (g, b) = ln(store, &arch.head.ln);
    let cls = layer_norm(&z[0], &g, &b);
    let logits = add_row(&matmul(&vec![cls], &mat(val(store, arch.head.weight))), &vec1(val(store, arch.head.bias)));
    Trace {
        logits: logits[0].clone(),
        branches,
        stage1,
        attn,
        integrated,
    }
}

/// Deterministic pseudo-random fill in `[-1, 1]`, independent of the
/// library's generator.
pub fn fill(shape: &[usize], seed: u64) -> Tensor {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xD1B5_4A32_D192_ED03;
    Tensor::from_fn(shape, |_| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    })
}

/// Overwrites every parameter with [`fill`] values scaled by `scale`, so
/// zero-initialised tensors (biases, cls, pos) take part in oracle and
/// gradient checks.
pub fn randomize(store: &mut ParamStore, seed: u64, scale: f64) {
    for (k, p) in store.iter_mut().enumerate() {
        let shape = p.value.shape().to_vec();
        let r = fill(&shape, seed.wrapping_add(k as u64 * 7919));
        p.value = r.map(|v| v * scale);
    }
}
