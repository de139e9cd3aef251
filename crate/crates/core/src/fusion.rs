//! Interconnected fusion: every ordered pair of branch features yields one
//! attention view, the views form a square fusion matrix, and a small
//! convolutional stack compresses the matrix back to one feature per token.
//!
//! The compressor treats the matrix as a `D`-channel `g×g` image per token:
//! `x[t, c, i, j] = view(i, j)[t, c]`. Tokens never mix inside it.

use std::fmt;

use crate::attention::{cross_block, ffn, AttnProbs, EncoderBlockWeights, FfnWeights, LayerNormWeights};
use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::init;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Input branch. The numeric id (1, 2, 3) is the row/column label used in
/// the fusion matrix and in exported file names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Branch {
    /// Full HSI window.
    H1,
    /// Replicated HSI center patch.
    H2,
    /// LiDAR window.
    L,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::H1, Branch::H2, Branch::L];

    pub fn id(self) -> usize {
        match self {
            Branch::H1 => 1,
            Branch::H2 => 2,
            Branch::L => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Branch::H1 => "h1",
            Branch::H2 => "h2",
            Branch::L => "l",
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Stage-1 outputs, one `[T × D]` sequence per active branch.
#[derive(Clone, Debug)]
pub struct BranchFeatures {
    pub branches: Vec<(Branch, Var)>,
}

impl BranchFeatures {
    pub fn validate(&self, g: &Graph) -> Result<()> {
        let Some(&(_, first)) = self.branches.first() else {
            return Err(Error::Contract("no branch features".into()));
        };
        let shape = g.shape(first).to_vec();
        for &(b, v) in &self.branches {
            if g.shape(v) != shape.as_slice() {
                return Err(Error::dim(
                    "branch_features",
                    format!("branch {b} has shape {:?}, expected {shape:?}", g.shape(v)),
                ));
            }
        }
        Ok(())
    }
}

/// Square grid of views; `views[i][j]` takes keys/values from branch `i`
/// and queries from branch `j`.
#[derive(Clone, Debug)]
pub struct FusionMatrix {
    pub branches: Vec<Branch>,
    pub views: Vec<Vec<Var>>,
    pub attn: Vec<Vec<AttnProbs>>,
}

impl FusionMatrix {
    pub fn side(&self) -> usize {
        self.branches.len()
    }

    /// Views in row-major `(i, j)` order.
    pub fn flat_views(&self) -> Vec<Var> {
        self.views.iter().flatten().copied().collect()
    }

    /// The same matrix with `(i, j)` and `(j, i)` swapped.
    pub fn transposed(&self) -> FusionMatrix {
        let n = self.side();
        FusionMatrix {
            branches: self.branches.clone(),
            views: (0..n).map(|i| (0..n).map(|j| self.views[j][i]).collect()).collect(),
            attn: (0..n)
                .map(|i| (0..n).map(|j| self.attn[j][i].clone()).collect())
                .collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FeatureFusionWeights {
    pub grid: usize,
    pub ln: LayerNormWeights,
    pub conv1: (ParamId, ParamId),
    pub conv2: (ParamId, ParamId),
    pub conv3: (ParamId, ParamId),
}

impl FeatureFusionWeights {
    /// `grid` is the fusion-matrix side (3, or 2 without the center patch).
    pub fn new(store: &mut ParamStore, prefix: &str, grid: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        if grid < 2 {
            return Err(Error::Config(format!("fusion grid side {grid} is below 2")));
        }
        let ln = LayerNormWeights::new(store, &format!("{prefix}.ln"), grid * grid)?;
        let mut conv = |name: &str, k: usize| -> Result<(ParamId, ParamId)> {
            let kernel = store.add(format!("{prefix}.{name}.kernel"), init::xavier_kernel(rng, dim, dim, k, k))?;
            let bias = store.add(format!("{prefix}.{name}.bias"), Tensor::zeros(&[dim]))?;
            Ok((kernel, bias))
        };
        let conv1 = conv("conv1", 3)?;
        let conv2 = conv("conv2", 1)?;
        let conv3 = conv("conv3", grid)?;
        Ok(FeatureFusionWeights {
            grid,
            ln,
            conv1,
            conv2,
            conv3,
        })
    }

    pub fn numel(grid: usize, dim: usize) -> usize {
        2 * grid * grid + dim * dim * (9 + 1 + grid * grid) + 3 * dim
    }
}

/// One cross block per ordered branch pair.
pub fn build_views(
    g: &mut Graph,
    store: &ParamStore,
    features: &BranchFeatures,
    blocks: &[Vec<EncoderBlockWeights>],
) -> Result<FusionMatrix> {
    features.validate(g)?;
    let n = features.branches.len();
    if blocks.len() != n || blocks.iter().any(|row| row.len() != n) {
        return Err(Error::Config(format!("need a {n}x{n} grid of view blocks")));
    }
    let mut views = Vec::with_capacity(n);
    let mut attn = Vec::with_capacity(n);
    for (i, &(bi, zi)) in features.branches.iter().enumerate() {
        let mut vrow = Vec::with_capacity(n);
        let mut arow = Vec::with_capacity(n);
        for (j, &(bj, zj)) in features.branches.iter().enumerate() {
            g.enter(format!("view_{}_{}", bi.id(), bj.id()));
            let res = cross_block(g, store, zi, zj, &blocks[i][j]);
            g.exit();
            let (v, p) = res?;
            vrow.push(v);
            arow.push(p);
        }
        views.push(vrow);
        attn.push(arow);
    }
    Ok(FusionMatrix {
        branches: features.branches.iter().map(|&(b, _)| b).collect(),
        views,
        attn,
    })
}

/// Feature-fusion layer: grid layer norm → 3×3 conv (pad 1) → 1×1 conv →
/// GELU → residual from the layer-norm output → `g×g` conv (pad 0).
pub fn compress(g: &mut Graph, store: &ParamStore, m: &FusionMatrix, w: &FeatureFusionWeights) -> Result<Var> {
    let side = m.side();
    if side != w.grid {
        return Err(Error::Config(format!(
            "fusion weights expect a {0}x{0} matrix, got {side}x{side}",
            w.grid
        )));
    }
    let views = m.flat_views();
    let (t, d) = match *g.shape(views[0]) {
        [t, d] => (t, d),
        ref s => return Err(Error::dim("compress", format!("views must be 2-D, got {s:?}"))),
    };
    let stacked = g.stack_last(&views)?;
    let normed = w.ln.apply(g, store, stacked)?;
    let image = g.reshape(normed, &[t, d, side, side])?;
    let conv = |g: &mut Graph, x: Var, (k, b): (ParamId, ParamId), pad: usize| -> Result<Var> {
        let kv = g.param(store, k)?;
        let bv = g.param(store, b)?;
        g.conv2d(x, kv, bv, 1, pad)
    };
    let c1 = conv(g, image, w.conv1, 1)?;
    let c2 = conv(g, c1, w.conv2, 0)?;
    let act = g.gelu(c2)?;
    let res = g.add(act, image)?;
    let c3 = conv(g, res, w.conv3, 0)?;
    g.reshape(c3, &[t, d])
}

/// `z_f = ẑ + FFN(ẑ)`, no inner layer norm.
pub fn ffn_update(g: &mut Graph, store: &ParamStore, z_hat: Var, w: &FfnWeights) -> Result<Var> {
    let f = ffn(g, store, z_hat, w)?;
    g.add(z_hat, f)
}

/// Ablation: concatenate the views per token (row-major) and project to `D`.
pub fn concat_fusion(g: &mut Graph, store: &ParamStore, m: &FusionMatrix, proj: ParamId, bias: ParamId) -> Result<Var> {
    let views = m.flat_views();
    let cat = g.concat_cols(&views)?;
    let p = g.param(store, proj)?;
    let b = g.param(store, bias)?;
    let y = g.matmul(cat, p)?;
    g.add_bias(y, b)
}
