use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::EncoderBlockWeights;
use crate::error::{Error, Result};
use crate::fusion::FeatureFusionWeights;

/// Depth allocation for a three-layer network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Early,
    Middle,
    Late,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Early, Strategy::Middle, Strategy::Late];

    /// Stage-1 depth when the total depth is three.
    pub fn stage1_depth(self) -> usize {
        match self {
            Strategy::Early => 0,
            Strategy::Middle => 1,
            Strategy::Late => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Early => "early",
            Strategy::Middle => "middle",
            Strategy::Late => "late",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "early" => Ok(Strategy::Early),
            "middle" => Ok(Strategy::Middle),
            "late" => Ok(Strategy::Late),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// Drop the center-patch branch; 2×2 fusion matrix over {h1, l}.
    NoContext,
    /// Replace the feature-fusion layer and its FFN with concat + projection.
    ConcatFusion,
    /// Single-branch ViT on the HSI window.
    HsiOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::None,
        Ablation::NoContext,
        Ablation::ConcatFusion,
        Ablation::HsiOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoContext => "no_context",
            Ablation::ConcatFusion => "concat_fusion",
            Ablation::HsiOnly => "hsi_only",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Tokens per branch: nine patches plus the cls token.
pub const TOKENS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IfConfig {
    /// Patch side `s`; sample windows are `3s × 3s`.
    pub patch_side: usize,
    pub hsi_bands: usize,
    pub lidar_bands: usize,
    pub embed_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub total_depth: usize,
    pub stage1_depth: usize,
    pub num_classes: usize,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default = "yes")]
    pub pos_embed: bool,
}

fn yes() -> bool {
    true
}

impl IfConfig {
    /// Default widths (`D = 64`, `h = 4`, `D_ff = 128`, `N = 3`, middle fusion).
    pub fn new(patch_side: usize, hsi_bands: usize, lidar_bands: usize, num_classes: usize) -> Self {
        IfConfig {
            patch_side,
            hsi_bands,
            lidar_bands,
            embed_dim: 64,
            heads: 4,
            ffn_dim: 128,
            total_depth: 3,
            stage1_depth: 1,
            num_classes,
            ablation: Ablation::None,
            pos_embed: true,
        }
    }

    pub fn with_strategy(mut self, s: Strategy) -> Self {
        self.total_depth = 3;
        self.stage1_depth = s.stage1_depth();
        self
    }

    pub fn with_ablation(mut self, a: Ablation) -> Self {
        self.ablation = a;
        self
    }

    pub fn with_dims(mut self, embed_dim: usize, heads: usize, ffn_dim: usize) -> Self {
        self.embed_dim = embed_dim;
        self.heads = heads;
        self.ffn_dim = ffn_dim;
        self
    }

    pub fn strategy(&self) -> Option<Strategy> {
        if self.total_depth != 3 {
            return None;
        }
        Strategy::ALL
            .into_iter()
            .find(|s| s.stage1_depth() == self.stage1_depth)
    }

    pub fn stage3_depth(&self) -> usize {
        self.total_depth - self.stage1_depth - 1
    }

    pub fn window(&self) -> usize {
        3 * self.patch_side
    }

    pub fn patch_features(&self, bands: usize) -> usize {
        self.patch_side * self.patch_side * bands
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.patch_side == 0 {
            problems.push("patch_side must be >= 1".to_string());
        }
        if self.hsi_bands == 0 {
            problems.push("hsi_bands must be >= 1".to_string());
        }
        if self.lidar_bands == 0 && self.ablation != Ablation::HsiOnly {
            problems.push("lidar_bands must be >= 1".to_string());
        }
        if self.embed_dim == 0 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            problems.push(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.ffn_dim == 0 {
            problems.push("ffn_dim must be >= 1".to_string());
        }
        if self.num_classes < 2 {
            problems.push("num_classes must be >= 2".to_string());
        }
        if self.ablation == Ablation::HsiOnly {
            if self.total_depth == 0 {
                problems.push("total_depth must be >= 1".to_string());
            }
        } else if self.total_depth == 0 || self.stage1_depth + 1 > self.total_depth {
            problems.push(format!(
                "stage1_depth {} must be <= total_depth - 1 (total_depth {})",
                self.stage1_depth, self.total_depth
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Closed-form parameter count.
    ///
    /// With `D`, `F = D_ff`, `K` classes, block size
    /// `β = 4D + 4D² + 2DF + F + D`, branch embedding of `b` bands
    /// `ε(b) = s²bD + D + D + 10D·[pos]`:
    ///
    /// - full: `ε(B_h)·2 + ε(B_l) + 3Mβ + 9β + φ(3) + (2DF + F + D) + (N−M−1)β + head`
    /// - no_context: two branches, `4β + φ(2)` in place of `9β + φ(3)`
    /// - concat_fusion: `9β + 9D² + D` in place of `9β + φ(3) + FFN`
    /// - hsi_only: `ε(B_h) + Nβ + head`
    ///
    /// where `φ(g) = 2g² + D²(10 + g²) + 3D` and `head = 2D + DK + K`.
    pub fn param_count(&self) -> usize {
        let d = self.embed_dim;
        let f = self.ffn_dim;
        let block = EncoderBlockWeights::numel(d, f);
        let pos = if self.pos_embed { TOKENS * d } else { 0 };
        let branch = |bands: usize| self.patch_features(bands) * d + d + d + pos;
        let ffn = 2 * d * f + f + d;
        let head = 2 * d + d * self.num_classes + self.num_classes;
        let m = self.stage1_depth;
        let stage3 = self.stage3_depth_or_zero() * block;
        match self.ablation {
            Ablation::HsiOnly => branch(self.hsi_bands) + self.total_depth * block + head,
            Ablation::None => {
                2 * branch(self.hsi_bands)
                    + branch(self.lidar_bands)
                    + 3 * m * block
                    + 9 * block
                    + FeatureFusionWeights::numel(3, d)
                    + ffn
                    + stage3
                    + head
            }
            Ablation::NoContext => {
                branch(self.hsi_bands)
                    + branch(self.lidar_bands)
                    + 2 * m * block
                    + 4 * block
                    + FeatureFusionWeights::numel(2, d)
                    + ffn
                    + stage3
                    + head
            }
            Ablation::ConcatFusion => {
                2 * branch(self.hsi_bands)
                    + branch(self.lidar_bands)
                    + 3 * m * block
                    + 9 * block
                    + 9 * d * d
                    + d
                    + stage3
                    + head
            }
        }
    }

    fn stage3_depth_or_zero(&self) -> usize {
        self.total_depth.saturating_sub(self.stage1_depth + 1)
    }
}
