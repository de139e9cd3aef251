//! The end-to-end network: three tokenized branches, per-branch Stage-1
//! encoders, the interconnected fusion stage, a shared Stage-3 encoder and
//! a cls-token head.
//!
//! Parameters are created (and their initial values drawn) in this order:
//! per branch `embed`, `cls`, `pos`; Stage-1 blocks branch by branch;
//! Stage-2 views row-major; the fusion layer and its FFN (or the concat
//! projection); Stage-3 blocks; the head.

pub mod checkpoint;
mod config;

use std::path::Path;

pub use config::{Ablation, IfConfig, Strategy, TOKENS};

use crate::attention::{encoder_block, linear, AttentionMap, EncoderBlockWeights, FfnWeights, LayerNormWeights};
use crate::autodiff::{Gradients, Graph, ParamId, ParamStore, Var};
use crate::error::{Error, Result};
use crate::fusion::{self, Branch, BranchFeatures, FeatureFusionWeights, FusionMatrix};
use crate::init;
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

/// One labelled pixel, already windowed and normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleWindow {
    /// `[B_h × 3s × 3s]`
    pub x_h1: Tensor,
    /// Center patch of `x_h1` tiled 3×3.
    pub x_h2: Tensor,
    /// `[B_l × 3s × 3s]`
    pub x_l: Tensor,
    pub label: usize,
}

impl SampleWindow {
    pub fn new(x_h1: Tensor, x_l: Tensor, label: usize) -> Result<Self> {
        let x_h2 = make_center_input(&x_h1)?;
        if x_l.rank() != 3 || x_l.shape()[1..] != x_h1.shape()[1..] {
            return Err(Error::dim(
                "sample",
                format!("lidar window {:?} does not match hsi window {:?}", x_l.shape(), x_h1.shape()),
            ));
        }
        Ok(SampleWindow { x_h1, x_h2, x_l, label })
    }

    pub fn input(&self, b: Branch) -> &Tensor {
        match b {
            Branch::H1 => &self.x_h1,
            Branch::H2 => &self.x_h2,
            Branch::L => &self.x_l,
        }
    }
}

/// Tiles the center `s×s` block of a `[B × 3s × 3s]` window 3×3.
pub fn make_center_input(x: &Tensor) -> Result<Tensor> {
    let (bands, h, w) = match *x.shape() {
        [b, h, w] => (b, h, w),
        ref s => return Err(Error::Contract(format!("window must be [B, H, W], got {s:?}"))),
    };
    if h != w || h % 3 != 0 {
        return Err(Error::Contract(format!(
            "window side {h}x{w} is not square with a side divisible by 3"
        )));
    }
    let s = h / 3;
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for b in 0..bands {
        for r in 0..h {
            for c in 0..w {
                out[(b * h + r) * w + c] = src[(b * h + s + r % s) * w + s + c % s];
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Splits a `[B × 3s × 3s]` window into its nine patches, row-major, each
/// flattened band-major then row then column: `[9 × s·s·B]`.
pub fn patch_matrix(x: &Tensor, s: usize) -> Result<Tensor> {
    let (bands, h, w) = match *x.shape() {
        [b, h, w] if h == 3 * s && w == 3 * s => (b, h, w),
        ref sh => return Err(Error::dim("tokenize", format!("window {sh:?} is not [B, {0}, {0}]", 3 * s))),
    };
    let f = s * s * bands;
    let src = x.data();
    let mut out = vec![0.0; 9 * f];
    for p in 0..9 {
        let (pr, pc) = (p / 3 * s, p % 3 * s);
        for b in 0..bands {
            for r in 0..s {
                for c in 0..s {
                    out[p * f + (b * s + r) * s + c] = src[(b * h + pr + r) * w + pc + c];
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![9, f], out))
}

/// Patch projection plus the branch's cls token and positional table.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub weight: ParamId,
    pub bias: ParamId,
    pub cls: ParamId,
    pub pos: Option<ParamId>,
}

impl Embedding {
    fn new(store: &mut ParamStore, b: Branch, features: usize, cfg: &IfConfig, rng: &mut Rng) -> Result<Self> {
        let d = cfg.embed_dim;
        let weight = store.add(format!("embed.{b}.weight"), init::xavier_matrix(rng, features, d))?;
        let bias = store.add(format!("embed.{b}.bias"), Tensor::zeros(&[d]))?;
        let cls = store.add(format!("cls.{b}"), Tensor::zeros(&[1, d]))?;
        let pos = if cfg.pos_embed {
            Some(store.add(format!("pos.{b}"), Tensor::zeros(&[TOKENS, d]))?)
        } else {
            None
        };
        Ok(Embedding { weight, bias, cls, pos })
    }
}

/// `[cls; patches · W + b] + pos`, a `[10 × D]` sequence.
pub fn tokenize(g: &mut Graph, store: &ParamStore, x: &Tensor, s: usize, e: &Embedding) -> Result<Var> {
    let patches = g.constant(patch_matrix(x, s)?)?;
    let tokens = linear(g, store, patches, e.weight, e.bias)?;
    let cls = g.param(store, e.cls)?;
    let seq = g.concat_rows(&[cls, tokens])?;
    match e.pos {
        Some(p) => {
            let pos = g.param(store, p)?;
            g.add(seq, pos)
        }
        None => Ok(seq),
    }
}

#[derive(Clone, Debug)]
pub struct BranchWeights {
    pub branch: Branch,
    pub embed: Embedding,
    pub blocks: Vec<EncoderBlockWeights>,
}

#[derive(Clone, Debug)]
pub enum FusionWeights {
    Matrix {
        views: Vec<Vec<EncoderBlockWeights>>,
        fuse: FeatureFusionWeights,
        ffn: FfnWeights,
    },
    Concat {
        views: Vec<Vec<EncoderBlockWeights>>,
        proj: ParamId,
        bias: ParamId,
    },
}

#[derive(Clone, Debug)]
pub struct HeadWeights {
    pub ln: LayerNormWeights,
    pub weight: ParamId,
    pub bias: ParamId,
}

/// Parameter handles and wiring; values live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Architecture {
    pub cfg: IfConfig,
    pub branches: Vec<BranchWeights>,
    /// `None` only for `hsi_only`.
    pub fusion: Option<FusionWeights>,
    /// Stage-3 blocks, or the whole encoder for `hsi_only`.
    pub stage3: Vec<EncoderBlockWeights>,
    pub head: HeadWeights,
}

/// Final cls-head scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Logits {
    pub scores: Tensor,
}

impl Logits {
    /// Lowest index wins ties.
    pub fn argmax(&self) -> usize {
        self.scores.argmax()
    }
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    /// `[1 × K]`
    pub logits: Var,
    pub matrix: Option<FusionMatrix>,
    /// Stage-2 output `Z^f`, `[T × D]`.
    pub integrated: Option<Var>,
}

/// Concrete values from one forward pass, for export and inspection.
#[derive(Clone, Debug)]
pub struct Capture {
    pub logits: Logits,
    /// Branch order of the fusion matrix rows and columns.
    pub branches: Vec<Branch>,
    /// `attention[i][j]`: keys/values from branch `i`, queries from `j`.
    pub attention: Vec<Vec<AttentionMap>>,
    pub integrated: Option<Tensor>,
}

impl Architecture {
    pub fn build(cfg: &IfConfig, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let (d, h, f) = (cfg.embed_dim, cfg.heads, cfg.ffn_dim);
        let active: &[Branch] = match cfg.ablation {
            Ablation::HsiOnly => &[Branch::H1],
            Ablation::NoContext => &[Branch::H1, Branch::L],
            Ablation::None | Ablation::ConcatFusion => &Branch::ALL,
        };
        let mut embeds = Vec::new();
        for &b in active {
            let bands = if b == Branch::L { cfg.lidar_bands } else { cfg.hsi_bands };
            embeds.push(Embedding::new(store, b, cfg.patch_features(bands), cfg, rng)?);
        }

        if cfg.ablation == Ablation::HsiOnly {
            let stage3 = (0..cfg.total_depth)
                .map(|n| EncoderBlockWeights::new(store, &format!("encoder.block{n}"), d, h, f, rng))
                .collect::<Result<Vec<_>>>()?;
            let head = head_weights(store, cfg, rng)?;
            let branches = vec![BranchWeights {
                branch: Branch::H1,
                embed: embeds.remove(0),
                blocks: Vec::new(),
            }];
            return Ok(Architecture { cfg: cfg.clone(), branches, fusion: None, stage3, head });
        }

        let mut branches = Vec::new();
        for (&b, embed) in active.iter().zip(embeds) {
            let blocks = (0..cfg.stage1_depth)
                .map(|m| EncoderBlockWeights::new(store, &format!("stage1.{b}.block{m}"), d, h, f, rng))
                .collect::<Result<Vec<_>>>()?;
            branches.push(BranchWeights { branch: b, embed, blocks });
        }
        let views = active
            .iter()
            .map(|bi| {
                active
                    .iter()
                    .map(|bj| {
                        let prefix = format!("stage2.view_{}_{}", bi.id(), bj.id());
                        EncoderBlockWeights::new(store, &prefix, d, h, f, rng)
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let n = active.len();
        let fusion = if cfg.ablation == Ablation::ConcatFusion {
            let proj = store.add("stage2.concat.proj", init::xavier_matrix(rng, n * n * d, d))?;
            let bias = store.add("stage2.concat.bias", Tensor::zeros(&[d]))?;
            FusionWeights::Concat { views, proj, bias }
        } else {
            let fuse = FeatureFusionWeights::new(store, "stage2.fuse", n, d, rng)?;
            let ffn = FfnWeights::new(store, "stage2.ffn", d, f, rng)?;
            FusionWeights::Matrix { views, fuse, ffn }
        };
        let stage3 = (0..cfg.stage3_depth())
            .map(|k| EncoderBlockWeights::new(store, &format!("stage3.block{k}"), d, h, f, rng))
            .collect::<Result<Vec<_>>>()?;
        let head = head_weights(store, cfg, rng)?;
        Ok(Architecture { cfg: cfg.clone(), branches, fusion: Some(fusion), stage3, head })
    }

    pub fn check_sample(&self, s: &SampleWindow) -> Result<()> {
        let side = self.cfg.window();
        for b in &self.branches {
            let bands = if b.branch == Branch::L { self.cfg.lidar_bands } else { self.cfg.hsi_bands };
            let x = s.input(b.branch);
            if x.shape() != [bands, side, side] {
                return Err(Error::dim(
                    "forward",
                    format!("branch {} input {:?}, expected {:?}", b.branch, x.shape(), [bands, side, side]),
                ));
            }
        }
        if s.label >= self.cfg.num_classes {
            return Err(Error::Contract(format!(
                "label {} outside [0, {})",
                s.label, self.cfg.num_classes
            )));
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, s: &SampleWindow) -> Result<ForwardVars> {
        self.check_sample(s)?;
        let sp = self.cfg.patch_side;
        let mut feats = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            g.enter(format!("stage1.{}", b.branch));
            let res = (|| {
                let mut z = tokenize(g, store, s.input(b.branch), sp, &b.embed)?;
                for w in &b.blocks {
                    z = encoder_block(g, store, z, w)?.0;
                }
                Ok(z)
            })();
            g.exit();
            feats.push((b.branch, res?));
        }

        let (mut z, matrix, integrated) = match &self.fusion {
            None => (feats[0].1, None, None),
            Some(fw) => {
                g.enter("stage2");
                let res = (|| {
                    let features = BranchFeatures { branches: feats };
                    let (views, m) = match fw {
                        FusionWeights::Matrix { views, .. } | FusionWeights::Concat { views, .. } => {
                            (views, fusion::build_views(g, store, &features, views)?)
                        }
                    };
                    debug_assert_eq!(views.len(), m.side());
                    let zf = match fw {
                        FusionWeights::Matrix { fuse, ffn, .. } => {
                            let z_hat = fusion::compress(g, store, &m, fuse)?;
                            fusion::ffn_update(g, store, z_hat, ffn)?
                        }
                        FusionWeights::Concat { proj, bias, .. } => {
                            fusion::concat_fusion(g, store, &m, *proj, *bias)?
                        }
                    };
                    Ok((zf, m))
                })();
                g.exit();
                let (zf, m) = res?;
                (zf, Some(m), Some(zf))
            }
        };

        g.enter("stage3");
        let res = (|| {
            for w in &self.stage3 {
                z = encoder_block(g, store, z, w)?.0;
            }
            Ok(z)
        })();
        g.exit();
        let z = res?;

        g.enter("head");
        let res = (|| {
            let cls = g.slice_rows(z, 0, 1)?;
            let n = self.head.ln.apply(g, store, cls)?;
            linear(g, store, n, self.head.weight, self.head.bias)
        })();
        g.exit();
        Ok(ForwardVars { logits: res?, matrix, integrated })
    }

    /// Cross-entropy of the sample's true label.
    pub fn loss(&self, g: &mut Graph, store: &ParamStore, s: &SampleWindow) -> Result<(Var, Var)> {
        let out = self.forward(g, store, s)?;
        let l = g.cross_entropy(out.logits, s.label)?;
        Ok((l, out.logits))
    }
}

fn head_weights(store: &mut ParamStore, cfg: &IfConfig, rng: &mut Rng) -> Result<HeadWeights> {
    let d = cfg.embed_dim;
    Ok(HeadWeights {
        ln: LayerNormWeights::new(store, "head.ln", d)?,
        weight: store.add("head.linear.weight", init::xavier_matrix(rng, d, cfg.num_classes))?,
        bias: store.add("head.linear.bias", Tensor::zeros(&[cfg.num_classes]))?,
    })
}

/// Architecture plus parameter values. Immutable during inference, so
/// forward passes on distinct samples may run concurrently.
#[derive(Clone, Debug)]
pub struct IfModel {
    pub arch: Architecture,
    pub params: ParamStore,
}

impl IfModel {
    pub fn new(cfg: &IfConfig, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = rng::seeded(seed);
        let arch = Architecture::build(cfg, &mut params, &mut rng)?;
        Ok(IfModel { arch, params })
    }

    pub fn cfg(&self) -> &IfConfig {
        &self.arch.cfg
    }

    pub fn logits(&self, s: &SampleWindow) -> Result<Logits> {
        let mut g = Graph::new();
        let out = self.arch.forward(&mut g, &self.params, s)?;
        Ok(Logits { scores: g.value(out.logits).reshape(&[self.cfg().num_classes])? })
    }

    pub fn predict(&self, s: &SampleWindow) -> Result<usize> {
        Ok(self.logits(s)?.argmax())
    }

    /// Loss, logits and parameter gradients for one sample.
    pub fn loss_grad(&self, s: &SampleWindow) -> Result<(f64, Logits, Gradients)> {
        let mut g = Graph::new();
        let (l, logits) = self.arch.loss(&mut g, &self.params, s)?;
        let grads = g.backward(l)?;
        let scores = g.value(logits).reshape(&[self.cfg().num_classes])?;
        Ok((g.value(l).data()[0], Logits { scores }, grads))
    }

    pub fn capture(&self, s: &SampleWindow) -> Result<Capture> {
        let mut g = Graph::new();
        let out = self.arch.forward(&mut g, &self.params, s)?;
        let scores = g.value(out.logits).reshape(&[self.cfg().num_classes])?;
        let (branches, attention) = match &out.matrix {
            Some(m) => (
                m.branches.clone(),
                m.attn
                    .iter()
                    .map(|row| row.iter().map(|p| p.to_map(&g)).collect())
                    .collect(),
            ),
            None => (vec![Branch::H1], Vec::new()),
        };
        Ok(Capture {
            logits: Logits { scores },
            branches,
            attention,
            integrated: out.integrated.map(|v| g.value(v).clone()),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.params, path)
    }

    /// Builds the architecture for `cfg` and fills it from a checkpoint.
    pub fn load(cfg: &IfConfig, path: &Path) -> Result<Self> {
        let mut model = IfModel::new(cfg, 0)?;
        checkpoint::load_into(&mut model.params, path)?;
        Ok(model)
    }
}
