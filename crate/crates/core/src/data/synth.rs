//! Synthetic HSI + LiDAR scenes.
//!
//! The image is cut into square tiles; tiles are dealt to classes in equal
//! numbers and shuffled. An HSI pixel is its class signature plus Gaussian
//! noise, a LiDAR pixel its class altitude plus noise. All values are
//! rounded to f32 so in-memory and on-disk scenes agree bit for bit.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ClassSplit, Cube, LabelMap, SplitSpec};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    /// Side of the square class regions.
    pub tile: usize,
    pub hsi_bands: usize,
    pub lidar_bands: usize,
    /// `classes × hsi_bands`
    pub signatures: Vec<Vec<f64>>,
    /// One level per class, shared by every LiDAR band.
    pub altitudes: Vec<f64>,
    pub noise_std: f64,
    pub lidar_noise_std: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Tiles per class reserved for training; test pixels come from the
    /// remaining tiles. 0 draws both sets from all of the class's tiles.
    pub train_tiles: usize,
    pub seed: u64,
}

/// The default scene: 4 classes on a 96×96 image of 16×16 tiles (nine per
/// class), 16 HSI bands and one LiDAR band. Four tiles per class supply the
/// training pixels and the other five the test pixels, so a window's view
/// of neighbouring tiles cannot identify a test pixel's class.
///
/// Classes 2 and 3 share a spectrum and differ only in altitude. Classes 0
/// and 1 differ by a faint spectral offset that window averaging cannot
/// fully resolve, while their altitudes are far apart.
impl Default for SynthSpec {
    fn default() -> Self {
        let bands = 16;
        let base_a: Vec<f64> = (0..bands).map(|b| 1.0 + 0.5 * (0.5 * b as f64).sin()).collect();
        let near_a: Vec<f64> = base_a
            .iter()
            .enumerate()
            .map(|(b, v)| v + if b % 2 == 0 { 0.012 } else { -0.012 })
            .collect();
        let base_b: Vec<f64> = (0..bands).map(|b| 1.0 + 0.5 * (0.3 * b as f64 + 1.0).cos()).collect();
        SynthSpec {
            classes: 4,
            height: 96,
            width: 96,
            tile: 16,
            hsi_bands: bands,
            lidar_bands: 1,
            signatures: vec![base_a, near_a, base_b.clone(), base_b],
            altitudes: vec![0.0, 1.0, 0.0, 1.0],
            noise_std: 0.25,
            lidar_noise_std: 0.15,
            train_per_class: 100,
            test_per_class: 250,
            train_tiles: 4,
            seed: 17,
        }
    }
}

impl SynthSpec {
    pub fn tiles(&self) -> usize {
        if self.tile == 0 {
            return 0;
        }
        (self.height / self.tile) * (self.width / self.tile)
    }

    /// Lists every problem at once.
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let k = self.classes;
        if k < 2 {
            errs.push(format!("classes = {k}, need at least 2"));
        }
        if self.height == 0 || self.width == 0 {
            errs.push(format!("image size {}x{} must be >= 1x1", self.height, self.width));
        }
        if self.tile == 0 {
            errs.push("tile must be >= 1".to_string());
        } else if !self.height.is_multiple_of(self.tile) || !self.width.is_multiple_of(self.tile) {
            errs.push(format!(
                "tile {} does not divide the {}x{} image",
                self.tile, self.height, self.width
            ));
        }
        if self.hsi_bands == 0 {
            errs.push("hsi_bands must be >= 1".to_string());
        }
        if self.lidar_bands == 0 {
            errs.push("lidar_bands must be >= 1".to_string());
        }
        if self.signatures.len() != k {
            errs.push(format!("{} signatures for {k} classes", self.signatures.len()));
        }
        for (i, s) in self.signatures.iter().enumerate() {
            if s.len() != self.hsi_bands {
                errs.push(format!("signature {i} has {} bands, expected {}", s.len(), self.hsi_bands));
            }
            if s.iter().any(|v| !v.is_finite()) {
                errs.push(format!("signature {i} is not finite"));
            }
        }
        if self.altitudes.len() != k {
            errs.push(format!("{} altitudes for {k} classes", self.altitudes.len()));
        }
        if self.altitudes.iter().any(|v| !v.is_finite()) {
            errs.push("altitudes must be finite".to_string());
        }
        for (name, v) in [("noise_std", self.noise_std), ("lidar_noise_std", self.lidar_noise_std)] {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("{name} = {v} must be finite and >= 0"));
            }
        }
        if self.signatures.len() == k && self.altitudes.len() == k {
            for i in 0..k {
                for j in i + 1..k {
                    if self.signatures[i] == self.signatures[j] && self.altitudes[i] == self.altitudes[j] {
                        errs.push(format!("classes {i} and {j} have identical signature and altitude"));
                    }
                }
            }
        }
        let tiles = self.tiles();
        if k >= 2 && self.tile > 0 {
            if tiles < k {
                errs.push(format!("{k} classes exceed the region capacity of {tiles} tiles"));
            } else {
                let per_class = tiles / k;
                let area = self.tile * self.tile;
                if self.train_tiles == 0 {
                    let need = self.train_per_class + self.test_per_class;
                    if need > per_class * area {
                        errs.push(format!(
                            "{need} pixels per class requested, region capacity is {}",
                            per_class * area
                        ));
                    }
                } else if self.train_tiles >= per_class {
                    errs.push(format!(
                        "train_tiles {} leaves no test tiles out of {per_class} per class",
                        self.train_tiles
                    ));
                } else {
                    let (tr, te) = (self.train_tiles * area, (per_class - self.train_tiles) * area);
                    if self.train_per_class > tr {
                        errs.push(format!(
                            "train_per_class {} exceeds the training-tile capacity of {tr}",
                            self.train_per_class
                        ));
                    }
                    if self.test_per_class > te {
                        errs.push(format!(
                            "test_per_class {} exceeds the test-tile capacity of {te}",
                            self.test_per_class
                        ));
                    }
                }
            }
        }
        if self.train_per_class == 0 {
            errs.push("train_per_class must be >= 1".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(errs))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub hsi: Cube,
    pub lidar: Cube,
    pub labels: LabelMap,
    pub split: SplitSpec,
}

fn f32_round(v: f64) -> f64 {
    f64::from(v as f32)
}

pub fn gen_synth(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let (h, w, t, k) = (spec.height, spec.width, spec.tile, spec.classes);
    let tiles_w = w / t;
    let tiles = spec.tiles();
    let per_class = tiles / k;

    // dealt round-robin, then shuffled; leftover tiles stay unlabeled
    let mut owner: Vec<i32> = (0..tiles)
        .map(|i| if i < per_class * k { (i % k) as i32 + 1 } else { 0 })
        .collect();
    rng::shuffle(&mut rng::seeded(rng::derive(spec.seed, 1)), &mut owner);

    let labels: Vec<i32> = (0..h * w)
        .map(|p| owner[(p / w / t) * tiles_w + (p % w) / t])
        .collect();
    let label_map = LabelMap::new(h, w, labels)?;

    let mut noise = rng::seeded(rng::derive(spec.seed, 2));
    let mut hsi = vec![0.0; spec.hsi_bands * h * w];
    let mut lidar = vec![0.0; spec.lidar_bands * h * w];
    for p in 0..h * w {
        let l = label_map.labels[p];
        let cls = (l.max(1) - 1) as usize;
        // unlabeled pixels get a background level that matches no class
        for b in 0..spec.hsi_bands {
            let base = if l == 0 { 0.0 } else { spec.signatures[cls][b] };
            let z: f64 = StandardNormal.sample(&mut noise);
            hsi[b * h * w + p] = f32_round(base + spec.noise_std * z);
        }
        for b in 0..spec.lidar_bands {
            let base = if l == 0 { -1.0 } else { spec.altitudes[cls] };
            let z: f64 = StandardNormal.sample(&mut noise);
            lidar[b * h * w + p] = f32_round(base + spec.lidar_noise_std * z);
        }
    }

    let mut pick = rng::seeded(rng::derive(spec.seed, 3));
    let tile_of = |p: usize| (p / w / t) * tiles_w + (p % w) / t;
    let mut classes = Vec::with_capacity(k);
    for id in 1..=k as i32 {
        let pixels = |keep: &dyn Fn(usize) -> bool| -> Vec<[usize; 2]> {
            (0..h * w)
                .filter(|&p| label_map.labels[p] == id && keep(tile_of(p)))
                .map(|p| [p / w, p % w])
                .collect()
        };
        let (train, mut test) = if spec.train_tiles == 0 {
            let mut all = pixels(&|_| true);
            rng::shuffle(&mut pick, &mut all);
            let rest = all.split_off(spec.train_per_class);
            (all, rest)
        } else {
            let mut own: Vec<usize> = (0..tiles).filter(|&i| owner[i] == id).collect();
            rng::shuffle(&mut pick, &mut own);
            let train_tiles = &own[..spec.train_tiles];
            let mut tr = pixels(&|i| train_tiles.contains(&i));
            let mut te = pixels(&|i| !train_tiles.contains(&i));
            rng::shuffle(&mut pick, &mut tr);
            rng::shuffle(&mut pick, &mut te);
            tr.truncate(spec.train_per_class);
            (tr, te)
        };
        test.truncate(spec.test_per_class);
        classes.push(ClassSplit { id, train, test });
    }

    Ok(SynthData {
        hsi: Cube::new(Tensor::new(vec![spec.hsi_bands, h, w], hsi)?)?,
        lidar: Cube::new(Tensor::new(vec![spec.lidar_bands, h, w], lidar)?)?,
        labels: label_map,
        split: SplitSpec { classes },
    })
}

/// Lowest test error any classifier that sees only the spectrum can reach:
/// classes sharing a signature are merged, and within each merged group
/// every sample outside the largest class is lost.
pub fn pair_confusion_bound(spec: &SynthSpec, split: &SplitSpec) -> f64 {
    let mut groups: Vec<(Vec<f64>, Vec<usize>)> = Vec::new();
    for c in &split.classes {
        let sig = &spec.signatures[(c.id - 1) as usize];
        match groups.iter_mut().find(|(s, _)| s == sig) {
            Some((_, counts)) => counts.push(c.test.len()),
            None => groups.push((sig.clone(), vec![c.test.len()])),
        }
    }
    let lost: usize = groups
        .iter()
        .map(|(_, counts)| counts.iter().sum::<usize>() - counts.iter().max().copied().unwrap_or(0))
        .sum();
    lost as f64 / split.test_count() as f64
}
