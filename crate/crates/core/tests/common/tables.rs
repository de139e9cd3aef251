//! Standard per-class train/test pixel counts of the three benchmark scenes.

use ifusion::data::{self, ClassSplit, Cube, LabelMap, SplitSpec};
use ifusion::exec::Mode;
use ifusion::Tensor;

pub const HOUSTON: [(usize, usize); 15] = [
    (198, 1251),
    (190, 1254),
    (192, 697),
    (188, 1244),
    (186, 1242),
    (182, 325),
    (196, 1268),
    (191, 1244),
    (193, 1252),
    (191, 1227),
    (181, 1235),
    (192, 1233),
    (184, 469),
    (181, 428),
    (187, 660),
];

pub const TRENTO: [(usize, usize); 6] = [(129, 4034), (125, 2903), (105, 479), (154, 9123), (184, 10501), (122, 3174)];

pub const MUUFL: [(usize, usize); 11] = [
    (150, 23246),
    (150, 4270),
    (150, 6882),
    (150, 1826),
    (150, 6687),
    (150, 466),
    (150, 2233),
    (150, 6240),
    (150, 1385),
    (150, 183),
    (150, 269),
];

pub const TOTALS: [(&str, usize, usize); 3] = [("houston", 2832, 15029), ("trento", 819, 30214), ("muufl", 1650, 53687)];

pub fn table(name: &str) -> &'static [(usize, usize)] {
    match name {
        "houston" => &HOUSTON,
        "trento" => &TRENTO,
        "muufl" => &MUUFL,
        _ => panic!("unknown scene {name}"),
    }
}

/// A one-band scene whose split lists exactly `counts` pixels per class,
/// laid out class after class, train before test.
pub fn scene(counts: &[(usize, usize)], lidar_bands: usize) -> (Cube, Cube, LabelMap, SplitSpec) {
    let n: usize = counts.iter().map(|(a, b)| a + b).sum();
    let width = 256;
    let height = n.div_ceil(width) + 1;
    let mut labels = vec![0; height * width];
    let mut classes = Vec::new();
    let mut next = 0;
    for (k, &(tr, te)) in counts.iter().enumerate() {
        let id = k as i32 + 1;
        let mut take = |m: usize| -> Vec<[usize; 2]> {
            (0..m)
                .map(|_| {
                    labels[next] = id;
                    next += 1;
                    [(next - 1) / width, (next - 1) % width]
                })
                .collect()
        };
        let train = take(tr);
        let test = take(te);
        classes.push(ClassSplit { id, train, test });
    }
    let cube = |b: usize| Cube::new(Tensor::from_fn(&[b, height, width], |i| (i % 7) as f64)).unwrap();
    (
        cube(1),
        cube(lidar_bands),
        LabelMap::new(height, width, labels).unwrap(),
        SplitSpec { classes },
    )
}

/// `(train, test, per-class (train, test))` as counted on the extracted
/// sample windows.
pub fn sample_counts(counts: &[(usize, usize)], lidar_bands: usize) -> (usize, usize, Vec<(usize, usize)>) {
    let (hsi, lidar, labels, split) = scene(counts, lidar_bands);
    let prepared = data::prepare(&hsi, &lidar, labels, split).unwrap();
    let s = prepared.samples(1, Mode::default()).unwrap();
    let mut per = vec![(0, 0); counts.len()];
    for w in &s.train {
        per[w.label].0 += 1;
    }
    for w in &s.test {
        per[w.label].1 += 1;
    }
    (s.train.len(), s.test.len(), per)
}
