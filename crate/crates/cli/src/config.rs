//! Run configuration: `{model, train, data, output}`.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use ifusion::data::{self, io, Cube, LabelMap, Prepared, SplitSpec, SynthSpec};
use ifusion::model::{Ablation, IfConfig, Strategy};
use ifusion::train::TrainConfig;
use ifusion::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    pub data: DataSection,
    pub output: OutputSection,
}

/// `IfConfig` fields; band and class counts default to what the data says.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub patch_side: usize,
    pub hsi_bands: Option<usize>,
    pub lidar_bands: Option<usize>,
    pub embed_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub total_depth: usize,
    pub stage1_depth: Option<usize>,
    /// Sets `total_depth = 3` and the matching `stage1_depth`.
    pub strategy: Option<Strategy>,
    pub num_classes: Option<usize>,
    pub ablation: Ablation,
    pub pos_embed: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = IfConfig::new(2, 1, 1, 2);
        ModelSection {
            patch_side: d.patch_side,
            hsi_bands: None,
            lidar_bands: None,
            embed_dim: d.embed_dim,
            heads: d.heads,
            ffn_dim: d.ffn_dim,
            total_depth: d.total_depth,
            stage1_depth: None,
            strategy: None,
            num_classes: None,
            ablation: d.ablation,
            pos_embed: d.pos_embed,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LidarPaths {
    One(PathBuf),
    /// Concatenated along the band axis in list order.
    Many(Vec<PathBuf>),
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub hsi: Option<PathBuf>,
    pub lidar: Option<LidarPaths>,
    pub labels: Option<PathBuf>,
    pub split: Option<PathBuf>,
    /// Inline scene; mutually exclusive with the path fields.
    pub synth: Option<SynthSpec>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

/// Raw rasters as loaded, before normalization.
pub struct RawData {
    pub hsi: Cube,
    pub lidar: Cube,
    pub labels: LabelMap,
    pub split: SplitSpec,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.into(), source })?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|source| Error::Json { path: path.into(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let d = &mut self.data;
        for p in [&mut d.hsi, &mut d.labels, &mut d.split].into_iter().flatten() {
            fix(p);
        }
        match &mut d.lidar {
            Some(LidarPaths::One(p)) => fix(p),
            Some(LidarPaths::Many(ps)) => ps.iter_mut().for_each(fix),
            None => {}
        }
        fix(&mut self.output.dir);
    }

    /// Checks the sections that do not need the data loaded.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        let d = &self.data;
        let has_paths = d.hsi.is_some() || d.lidar.is_some() || d.labels.is_some() || d.split.is_some();
        match (&d.synth, has_paths) {
            (Some(_), true) => {
                return Err(Error::Config("data: give either `synth` or file paths, not both".into()))
            }
            (Some(s), false) => s.validate()?,
            (None, _) => {
                let mut missing = Vec::new();
                for (name, p) in [("hsi", &d.hsi), ("labels", &d.labels), ("split", &d.split)] {
                    match p {
                        None => missing.push(format!("data.{name} is required")),
                        Some(p) if !p.exists() => missing.push(format!("data.{name}: {} does not exist", p.display())),
                        _ => {}
                    }
                }
                match &d.lidar {
                    None => missing.push("data.lidar is required".into()),
                    Some(LidarPaths::Many(v)) if v.is_empty() => missing.push("data.lidar list is empty".into()),
                    Some(l) => {
                        for p in lidar_list(l) {
                            if !p.exists() {
                                missing.push(format!("data.lidar: {} does not exist", p.display()));
                            }
                        }
                    }
                }
                if !missing.is_empty() {
                    return Err(Error::Config(missing.join("; ")));
                }
            }
        }
        if let (Some(s), Some(m)) = (self.model.strategy, self.model.stage1_depth) {
            if (s.stage1_depth(), 3) != (m, self.model.total_depth) {
                return Err(Error::Config(format!(
                    "model.strategy `{s}` conflicts with stage1_depth {m} / total_depth {}",
                    self.model.total_depth
                )));
            }
        }
        Ok(())
    }

    pub fn load_data(&self) -> Result<RawData> {
        if let Some(spec) = &self.data.synth {
            let s = data::gen_synth(spec)?;
            return Ok(RawData { hsi: s.hsi, lidar: s.lidar, labels: s.labels, split: s.split });
        }
        let d = &self.data;
        let req = |p: &Option<PathBuf>| p.clone().expect("validated");
        let hsi = io::read_cube(&req(&d.hsi))?;
        let paths = lidar_list(d.lidar.as_ref().expect("validated"));
        let mut lidar = io::read_cube(&paths[0])?;
        for p in &paths[1..] {
            lidar = data::concat_lidar(&lidar, &io::read_cube(p)?)?;
        }
        let labels = io::read_labels(&req(&d.labels))?;
        let split = SplitSpec::load(&req(&d.split))?;
        Ok(RawData { hsi, lidar, labels, split })
    }

    pub fn prepare(&self) -> Result<Prepared> {
        let raw = self.load_data()?;
        data::prepare(&raw.hsi, &raw.lidar, raw.labels, raw.split)
    }

    /// Fills data-derived fields and checks them against any explicit ones.
    pub fn model_config(&self, data: &Prepared) -> Result<IfConfig> {
        let m = &self.model;
        let pick = |name: &str, given: Option<usize>, found: usize| -> Result<usize> {
            match given {
                Some(g) if g != found => Err(Error::Config(format!("model.{name} is {g} but the data has {found}"))),
                _ => Ok(found),
            }
        };
        let (total_depth, stage1_depth) = match m.strategy {
            Some(s) => (3, s.stage1_depth()),
            None => (m.total_depth, m.stage1_depth.unwrap_or(1)),
        };
        let cfg = IfConfig {
            patch_side: m.patch_side,
            hsi_bands: pick("hsi_bands", m.hsi_bands, data.hsi.bands)?,
            lidar_bands: pick("lidar_bands", m.lidar_bands, data.lidar.bands)?,
            embed_dim: m.embed_dim,
            heads: m.heads,
            ffn_dim: m.ffn_dim,
            total_depth,
            stage1_depth,
            num_classes: pick("num_classes", m.num_classes, data.num_classes())?,
            ablation: m.ablation,
            pos_embed: m.pos_embed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn lidar_list(l: &LidarPaths) -> Vec<PathBuf> {
    match l {
        LidarPaths::One(p) => vec![p.clone()],
        LidarPaths::Many(v) => v.clone(),
    }
}
