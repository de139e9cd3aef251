//! Rasters, splits, normalization and sample windows.

pub mod io;
pub mod synth;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Mode};
use crate::model::SampleWindow;
use crate::tensor::Tensor;

pub use synth::{gen_synth, pair_confusion_bound, SynthData, SynthSpec};

/// `[B × H × W]` raster with finite values.
#[derive(Clone, Debug, PartialEq)]
pub struct Cube {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub values: Tensor,
}

impl Cube {
    pub fn new(values: Tensor) -> Result<Self> {
        let (bands, height, width) = match *values.shape() {
            [b, h, w] => (b, h, w),
            ref s => return Err(Error::dim("cube", format!("values must be [B, H, W], got {s:?}"))),
        };
        if let Some(i) = values.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("cube value {i} is not finite")));
        }
        Ok(Cube { height, width, bands, values })
    }

    pub fn get(&self, b: usize, r: usize, c: usize) -> f64 {
        self.values.data()[(b * self.height + r) * self.width + c]
    }

    pub fn band(&self, b: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.values.data()[b * n..(b + 1) * n]
    }
}

/// Per-pixel class ids; 0 is unlabeled, `1..=K` are classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<i32>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<i32>) -> Result<Self> {
        if height == 0 || width == 0 || labels.len() != height * width {
            return Err(Error::dim(
                "label_map",
                format!("{} labels for a {height}x{width} map", labels.len()),
            ));
        }
        if let Some(i) = labels.iter().position(|&l| l < 0) {
            return Err(Error::Contract(format!(
                "negative label {} at pixel ({}, {})",
                labels[i],
                i / width,
                i % width
            )));
        }
        Ok(LabelMap { height, width, labels })
    }

    pub fn get(&self, r: usize, c: usize) -> i32 {
        self.labels[r * self.width + c]
    }

    pub fn max_label(&self) -> i32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }
}

/// Stacks `b`'s bands after `a`'s.
pub fn concat_lidar(a: &Cube, b: &Cube) -> Result<Cube> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(Error::dim(
            "concat_lidar",
            format!("{}x{} vs {}x{}", a.height, a.width, b.height, b.width),
        ));
    }
    let mut data = a.values.data().to_vec();
    data.extend_from_slice(b.values.data());
    Cube::new(Tensor::new(vec![a.bands + b.bands, a.height, a.width], data)?)
}

/// Symmetric reflection into `[0, n)`: `-1 → 0`, `n → n-1`.
pub fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

/// `side × side` window whose top-left is `(row - side/2, col - side/2)`,
/// mirrored at the borders. For even sides the pixel sits just below and
/// right of the geometric center, inside the center patch.
pub fn extract_window(cube: &Cube, row: usize, col: usize, side: usize) -> Result<Tensor> {
    if row >= cube.height || col >= cube.width {
        return Err(Error::Contract(format!(
            "pixel ({row}, {col}) outside {}x{} image",
            cube.height, cube.width
        )));
    }
    let r0 = row as isize - (side / 2) as isize;
    let c0 = col as isize - (side / 2) as isize;
    let rows: Vec<usize> = (0..side).map(|i| mirror(r0 + i as isize, cube.height)).collect();
    let cols: Vec<usize> = (0..side).map(|j| mirror(c0 + j as isize, cube.width)).collect();
    let mut out = Vec::with_capacity(cube.bands * side * side);
    for b in 0..cube.bands {
        let band = cube.band(b);
        for &r in &rows {
            out.extend(cols.iter().map(|&c| band[r * cube.width + c]));
        }
    }
    Ok(Tensor::from_parts(vec![cube.bands, side, side], out))
}

/// Per-band mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Reads only the listed pixels.
    pub fn from_pixels(cube: &Cube, pixels: &[[usize; 2]]) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::Contract("no pixels for normalization statistics".into()));
        }
        let n = pixels.len() as f64;
        let mut mean = Vec::with_capacity(cube.bands);
        let mut std = Vec::with_capacity(cube.bands);
        for b in 0..cube.bands {
            let mu = pixels.iter().map(|&[r, c]| cube.get(b, r, c)).sum::<f64>() / n;
            let var = pixels.iter().map(|&[r, c]| (cube.get(b, r, c) - mu).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd <= 0.0 || !sd.is_finite() {
                return Err(Error::Contract(format!("band {b} is constant over the training pixels")));
            }
            mean.push(mu);
            std.push(sd);
        }
        Ok(NormStats { mean, std })
    }
}

/// `(x − mean) / std` per band.
pub fn normalize(cube: &Cube, stats: &NormStats) -> Result<Cube> {
    if stats.mean.len() != cube.bands || stats.std.len() != cube.bands {
        return Err(Error::dim(
            "normalize",
            format!("stats for {} bands, cube has {}", stats.mean.len(), cube.bands),
        ));
    }
    let n = cube.height * cube.width;
    let data = cube
        .values
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - stats.mean[i / n]) / stats.std[i / n])
        .collect();
    Cube::new(Tensor::new(cube.values.shape().to_vec(), data)?)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSplit {
    pub id: i32,
    pub train: Vec<[usize; 2]>,
    pub test: Vec<[usize; 2]>,
}

/// Train/test pixel coordinates `[row, col]` per class id.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub classes: Vec<ClassSplit>,
}

impl SplitSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json { path: path.to_path_buf(), source })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("split serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn train_pixels(&self) -> Vec<[usize; 2]> {
        self.classes.iter().flat_map(|c| c.train.iter().copied()).collect()
    }

    pub fn train_count(&self) -> usize {
        self.classes.iter().map(|c| c.train.len()).sum()
    }

    pub fn test_count(&self) -> usize {
        self.classes.iter().map(|c| c.test.len()).sum()
    }

    /// Largest class id, i.e. `K`.
    pub fn num_classes(&self) -> usize {
        self.classes.iter().map(|c| c.id.max(0) as usize).max().unwrap_or(0)
    }

    /// Ids in `1..`, unique, non-overlapping sets, pixels in bounds and
    /// labelled with their class id.
    pub fn validate(&self, labels: &LabelMap) -> Result<()> {
        let mut ids = HashSet::new();
        let mut seen = HashSet::new();
        for cls in &self.classes {
            if cls.id < 1 {
                return Err(Error::Contract(format!("class id {} must be >= 1", cls.id)));
            }
            if !ids.insert(cls.id) {
                return Err(Error::Contract(format!("class id {} listed twice", cls.id)));
            }
            for (set, pixels) in [("train", &cls.train), ("test", &cls.test)] {
                for &[r, c] in pixels {
                    if r >= labels.height || c >= labels.width {
                        return Err(Error::Contract(format!(
                            "{set} pixel ({r}, {c}) of class {} outside {}x{} map",
                            cls.id, labels.height, labels.width
                        )));
                    }
                    let l = labels.get(r, c);
                    if l == 0 {
                        return Err(Error::Contract(format!("{set} pixel ({r}, {c}) is unlabeled")));
                    }
                    if l != cls.id {
                        return Err(Error::Contract(format!(
                            "{set} pixel ({r}, {c}) listed under class {} but labelled {l}",
                            cls.id
                        )));
                    }
                    if !seen.insert((r, c)) {
                        return Err(Error::Contract(format!("pixel ({r}, {c}) appears twice in the split")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Normalized rasters ready for windowing.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub hsi: Cube,
    pub lidar: Cube,
    pub labels: LabelMap,
    pub split: SplitSpec,
    pub hsi_stats: NormStats,
    pub lidar_stats: NormStats,
}

#[derive(Clone, Debug)]
pub struct Samples {
    pub train: Vec<SampleWindow>,
    pub test: Vec<SampleWindow>,
}

/// Validates the split and z-scores both cubes with statistics taken from
/// the training pixels alone.
pub fn prepare(hsi: &Cube, lidar: &Cube, labels: LabelMap, split: SplitSpec) -> Result<Prepared> {
    if (hsi.height, hsi.width) != (lidar.height, lidar.width)
        || (hsi.height, hsi.width) != (labels.height, labels.width)
    {
        return Err(Error::dim(
            "prepare",
            format!(
                "hsi {}x{}, lidar {}x{}, labels {}x{}",
                hsi.height, hsi.width, lidar.height, lidar.width, labels.height, labels.width
            ),
        ));
    }
    split.validate(&labels)?;
    let train = split.train_pixels();
    let hsi_stats = NormStats::from_pixels(hsi, &train)?;
    let lidar_stats = NormStats::from_pixels(lidar, &train)?;
    Ok(Prepared {
        hsi: normalize(hsi, &hsi_stats)?,
        lidar: normalize(lidar, &lidar_stats)?,
        labels,
        split,
        hsi_stats,
        lidar_stats,
    })
}

impl Prepared {
    pub fn num_classes(&self) -> usize {
        self.split.num_classes()
    }

    pub fn window(&self, row: usize, col: usize, patch_side: usize, label: usize) -> Result<SampleWindow> {
        let side = 3 * patch_side;
        SampleWindow::new(
            extract_window(&self.hsi, row, col, side)?,
            extract_window(&self.lidar, row, col, side)?,
            label,
        )
    }

    /// Windows for every split pixel, classes in split order, with
    /// zero-based labels.
    pub fn samples(&self, patch_side: usize, mode: Mode) -> Result<Samples> {
        make_samples(self, patch_side, mode)
    }
}

pub fn make_samples(data: &Prepared, patch_side: usize, mode: Mode) -> Result<Samples> {
    if patch_side == 0 {
        return Err(Error::Config("patch_side must be >= 1".into()));
    }
    let collect = |test: bool| -> Result<Vec<SampleWindow>> {
        let jobs: Vec<([usize; 2], usize)> = data
            .split
            .classes
            .iter()
            .flat_map(|c| {
                let set = if test { &c.test } else { &c.train };
                set.iter().map(move |&p| (p, (c.id - 1) as usize))
            })
            .collect();
        for &([r, c], _) in &jobs {
            if data.labels.get(r, c) == 0 {
                return Err(Error::Contract(format!("split pixel ({r}, {c}) is unlabeled")));
            }
        }
        exec::map_slice(mode, &jobs, |&([r, c], label)| data.window(r, c, patch_side, label))
            .into_iter()
            .collect()
    };
    Ok(Samples { train: collect(false)?, test: collect(true)? })
}
