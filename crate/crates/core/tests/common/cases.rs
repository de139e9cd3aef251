//! Library-versus-oracle comparisons on fixed small instances. Each returns
//! the largest absolute difference.

use ifusion::attention::{self, AttnProbs, EncoderBlockWeights, FfnWeights};
use ifusion::autodiff::{Graph, ParamStore};
use ifusion::fusion::{self, Branch, BranchFeatures, FeatureFusionWeights, FusionMatrix};
use ifusion::model::{self, Ablation, IfConfig, IfModel, SampleWindow};
use ifusion::{rng, Tensor};

use super::*;

fn store_with<T>(seed: u64, build: impl FnOnce(&mut ParamStore, &mut rng::Rng) -> T) -> (ParamStore, T) {
    let mut store = ParamStore::new();
    let mut r = rng::seeded(seed);
    let w = build(&mut store, &mut r);
    randomize(&mut store, seed ^ 0xA5A5, 0.7);
    (store, w)
}

fn block(store: &mut ParamStore, r: &mut rng::Rng, name: &str, d: usize, h: usize, f: usize) -> EncoderBlockWeights {
    EncoderBlockWeights::new(store, name, d, h, f, r).unwrap()
}

fn tensor_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.max_abs_diff(b)
}

pub fn matmul_random() -> f64 {
    let a = fill(&[4, 7], 1);
    let b = fill(&[7, 5], 2);
    let mut g = Graph::new();
    let (va, vb) = (g.constant(a.clone()).unwrap(), g.constant(b.clone()).unwrap());
    let y = g.matmul(va, vb).unwrap();
    max_diff(&mat(g.value(y)), &matmul(&mat(&a), &mat(&b)))
}

/// Random `[C × H × W]` input against the six-loop oracle, over a few
/// stride/padding settings.
pub fn conv2d_random(c: usize, h: usize, w: usize, o: usize, k: usize, seed: u64) -> f64 {
    let x = fill(&[c, h, w], seed);
    let kern = fill(&[o, c, k, k], seed + 1);
    let bias = fill(&[o], seed + 2);
    let mut worst: f64 = 0.0;
    for (stride, pad) in [(1, 0), (1, 1), (2, 1), (2, 0)] {
        if h + 2 * pad < k || w + 2 * pad < k {
            continue;
        }
        let mut g = Graph::new();
        let vx = g.constant(x.clone()).unwrap();
        let vk = g.constant(kern.clone()).unwrap();
        let vb = g.constant(bias.clone()).unwrap();
        let y = g.conv2d(vx, vk, vb, stride, pad).unwrap();
        let want = conv2d(&image(&x), &kern, bias.data(), stride, pad);
        let got = image(g.value(y));
        for (gc, wc) in got.iter().zip(&want) {
            worst = worst.max(max_diff(gc, wc));
        }
    }
    worst
}

pub fn attention_random() -> f64 {
    let (q, k, v) = (fill(&[2, 4], 11), fill(&[3, 4], 12), fill(&[3, 4], 13));
    let mut g = Graph::new();
    let (vq, vk, vv) = (
        g.constant(q.clone()).unwrap(),
        g.constant(k.clone()).unwrap(),
        g.constant(v.clone()).unwrap(),
    );
    let (out, probs) = attention::scaled_dot_attention(&mut g, vq, vk, vv).unwrap();
    let (want, want_p) = attention(&mat(&q), &mat(&k), &mat(&v));
    max_diff(&mat(g.value(out)), &want).max(max_diff(&mat(g.value(probs)), &want_p))
}

pub fn msa_random() -> f64 {
    let (store, w) = store_with(21, |s, r| ifusion::attention::MsaWeights::new(s, "msa", 8, 2, r).unwrap());
    let (zq, zkv) = (fill(&[2, 8], 22), fill(&[3, 8], 23));
    let mut g = Graph::new();
    let (a, b) = (g.constant(zq.clone()).unwrap(), g.constant(zkv.clone()).unwrap());
    let (out, probs) = attention::msa(&mut g, &store, a, b, &w).unwrap();
    let (want, maps) = msa(&mat(&zq), &mat(&zkv), &mat(store.value(w.u_qkv)), &mat(store.value(w.w_out)), 2);
    let map = probs.to_map(&g);
    let mut worst = max_diff(&mat(g.value(out)), &want);
    for (h, m) in maps.iter().enumerate() {
        worst = worst.max(max_diff(&mat(&map.head(h)), m));
    }
    worst
}

pub fn encoder_block_t1() -> f64 {
    let (store, w) = store_with(31, |s, r| block(s, r, "blk", 4, 2, 6));
    let z = fill(&[1, 4], 32);
    let mut g = Graph::new();
    let vz = g.constant(z.clone()).unwrap();
    let (out, _) = attention::encoder_block(&mut g, &store, vz, &w).unwrap();
    max_diff(&mat(g.value(out)), &encoder_block(&mat(&z), &Block::read(&store, &w)).0)
}

pub fn cross_block_random() -> f64 {
    let (store, w) = store_with(41, |s, r| block(s, r, "blk", 8, 2, 12));
    let (zi, zj) = (fill(&[4, 8], 42), fill(&[4, 8], 43));
    let mut g = Graph::new();
    let (a, b) = (g.constant(zi.clone()).unwrap(), g.constant(zj.clone()).unwrap());
    let (out, probs) = attention::cross_block(&mut g, &store, a, b, &w).unwrap();
    let (want, maps) = cross_block(&mat(&zi), &mat(&zj), &Block::read(&store, &w));
    let map = probs.to_map(&g);
    let mut worst = max_diff(&mat(g.value(out)), &want);
    for (h, m) in maps.iter().enumerate() {
        worst = worst.max(max_diff(&mat(&map.head(h)), m));
    }
    worst
}

fn view_grid(store: &mut ParamStore, r: &mut rng::Rng, n: usize, d: usize) -> Vec<Vec<EncoderBlockWeights>> {
    (0..n)
        .map(|i| (0..n).map(|j| block(store, r, &format!("v{i}{j}"), d, 2, 2 * d)).collect())
        .collect()
}

/// Every view of a 3×3 matrix over random `T=10, D=8` branches.
pub fn build_views_random() -> f64 {
    let (store, blocks) = store_with(51, |s, r| view_grid(s, r, 3, 8));
    let feats: Vec<Tensor> = (0..3).map(|k| fill(&[10, 8], 52 + k)).collect();
    let mut g = Graph::new();
    let branches = BranchFeatures {
        branches: Branch::ALL
            .iter()
            .zip(&feats)
            .map(|(&b, t)| (b, g.constant(t.clone()).unwrap()))
            .collect(),
    };
    let m = fusion::build_views(&mut g, &store, &branches, &blocks).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let (want, _) = cross_block(&mat(&feats[i]), &mat(&feats[j]), &Block::read(&store, &blocks[i][j]));
            worst = worst.max(max_diff(&mat(g.value(m.views[i][j])), &want));
        }
    }
    worst
}

fn matrix_of(g: &mut Graph, views: &[Vec<Tensor>]) -> FusionMatrix {
    let n = views.len();
    FusionMatrix {
        branches: Branch::ALL[..n].to_vec(),
        views: views
            .iter()
            .map(|row| row.iter().map(|t| g.constant(t.clone()).unwrap()).collect())
            .collect(),
        attn: vec![vec![AttnProbs(Vec::new()); n]; n],
    }
}

fn random_views(n: usize, t: usize, d: usize, seed: u64) -> Vec<Vec<Tensor>> {
    (0..n)
        .map(|i| (0..n).map(|j| fill(&[t, d], seed + (i * n + j) as u64)).collect())
        .collect()
}

fn mats(views: &[Vec<Tensor>]) -> Vec<Vec<Mat>> {
    views.iter().map(|r| r.iter().map(mat).collect()).collect()
}

/// Feature-fusion layer on a random `T=4, D=6` matrix (grid side 3 or 2).
pub fn compress_random(grid: usize) -> f64 {
    let (store, w) = store_with(61, |s, r| FeatureFusionWeights::new(s, "fuse", grid, 6, r).unwrap());
    let views = random_views(grid, 4, 6, 62);
    let mut g = Graph::new();
    let m = matrix_of(&mut g, &views);
    let out = fusion::compress(&mut g, &store, &m, &w).unwrap();
    max_diff(&mat(g.value(out)), &compress(&mats(&views), &Fuse::read(&store, &w)))
}

pub fn ffn_update_random() -> f64 {
    let (store, w) = store_with(71, |s, r| FfnWeights::new(s, "ffn", 2, 3, r).unwrap());
    let z = fill(&[1, 2], 72);
    let mut g = Graph::new();
    let vz = g.constant(z.clone()).unwrap();
    let out = fusion::ffn_update(&mut g, &store, vz, &w).unwrap();
    max_diff(&mat(g.value(out)), &ffn_update(&mat(&z), &Ffn::read(&store, &w)))
}

/// Distance between the library's FFN update and an oracle with GELU
/// swapped for the identity; must be far from zero.
pub fn ffn_update_linear_probe() -> f64 {
    let (store, w) = store_with(71, |s, r| FfnWeights::new(s, "ffn", 2, 3, r).unwrap());
    let z = fill(&[1, 2], 72);
    let mut g = Graph::new();
    let vz = g.constant(z.clone()).unwrap();
    let out = fusion::ffn_update(&mut g, &store, vz, &w).unwrap();
    let f = Ffn::read(&store, &w);
    let zm = mat(&z);
    let lin = add(&zm, &add_row(&matmul(&add_row(&matmul(&zm, &f.w1), &f.c1), &f.w2), &f.c2));
    max_diff(&mat(g.value(out)), &lin)
}

pub fn concat_random() -> f64 {
    let (store, (p, b)) = store_with(81, |s, r| {
        (
            s.add("proj", ifusion::init::xavier_matrix(r, 9 * 5, 5)).unwrap(),
            s.add("bias", Tensor::zeros(&[5])).unwrap(),
        )
    });
    let views = random_views(3, 4, 5, 82);
    let mut g = Graph::new();
    let m = matrix_of(&mut g, &views);
    let out = fusion::concat_fusion(&mut g, &store, &m, p, b).unwrap();
    max_diff(
        &mat(g.value(out)),
        &concat_fusion(&mats(&views), &mat(store.value(p)), store.value(b).data()),
    )
}

pub fn tokenize_random(s: usize, bands: usize) -> f64 {
    let cfg = IfConfig::new(s, bands, 1, 2).with_dims(6, 2, 6);
    let mut m = IfModel::new(&cfg, 91).unwrap();
    randomize(&mut m.params, 92, 0.8);
    let x = fill(&[bands, 3 * s, 3 * s], 93);
    let e = &m.arch.branches[0].embed;
    let mut g = Graph::new();
    let out = model::tokenize(&mut g, &m.params, &x, s, e).unwrap();
    let want = tokenize(
        &x,
        s,
        &mat(m.params.value(e.weight)),
        m.params.value(e.bias).data(),
        m.params.value(e.cls).data(),
        e.pos.map(|p| mat(m.params.value(p))).as_ref(),
    );
    max_diff(&mat(g.value(out)), &want)
}

pub fn tiny_config(ablation: Ablation, s: usize, stage1: usize) -> IfConfig {
    let mut cfg = IfConfig::new(s, 3, 2, 2).with_dims(8, 2, 8).with_ablation(ablation);
    cfg.stage1_depth = stage1;
    cfg
}

pub fn tiny_sample(cfg: &IfConfig, seed: u64) -> SampleWindow {
    let side = cfg.window();
    SampleWindow::new(
        fill(&[cfg.hsi_bands, side, side], seed),
        fill(&[cfg.lidar_bands, side, side], seed + 1),
        (seed as usize) % cfg.num_classes,
    )
    .unwrap()
}

/// Randomised tiny model; logits, attention maps and the integrated
/// feature against the chained oracle.
pub fn forward_random(cfg: &IfConfig, seed: u64) -> f64 {
    let mut m = IfModel::new(cfg, seed).unwrap();
    randomize(&mut m.params, seed + 100, 0.6);
    let s = tiny_sample(cfg, seed + 200);
    let cap = m.capture(&s).unwrap();
    let tr = forward(&m.arch, &m.params, &s);
    assert_eq!(cap.branches, tr.branches);
    let mut worst = max_diff(&vec![vec1(&cap.logits.scores)], &vec![tr.logits.clone()]);
    if let (Some(a), Some(b)) = (&cap.integrated, &tr.integrated) {
        worst = worst.max(max_diff(&mat(a), b));
    }
    for (row, trow) in cap.attention.iter().zip(&tr.attn) {
        for (map, heads) in row.iter().zip(trow) {
            for (h, want) in heads.iter().enumerate() {
                worst = worst.max(max_diff(&mat(&map.head(h)), want));
            }
        }
    }
    worst
}

/// Every instance the oracle-equivalence criterion lists, by name.
pub fn all() -> Vec<(String, f64)> {
    let mut out = vec![
        ("matmul 4x7·7x5".to_string(), matmul_random()),
        ("conv2d 2x3x3, 4 kernels".into(), conv2d_random(2, 3, 3, 4, 3, 5)),
        ("conv2d 4x8x8".into(), conv2d_random(4, 8, 8, 3, 3, 6)),
        ("attention 2x3, D_q=4".into(), attention_random()),
        ("msa 2x8 / 3x8, h=2".into(), msa_random()),
        ("encoder block T=1 D=4".into(), encoder_block_t1()),
        ("cross block T=4 D=8".into(), cross_block_random()),
        ("fusion views T=10 D=8".into(), build_views_random()),
        ("compress 3x3, T=4 D=6".into(), compress_random(3)),
        ("compress 2x2, T=4 D=6".into(), compress_random(2)),
        ("ffn update T=1 D=2".into(), ffn_update_random()),
        ("concat fusion".into(), concat_random()),
        ("tokenize s=1 B=2".into(), tokenize_random(1, 2)),
        ("tokenize s=2 B=3".into(), tokenize_random(2, 3)),
    ];
    for ab in Ablation::ALL {
        for (s, m) in [(1, 1), (2, 0), (1, 2)] {
            let cfg = tiny_config(ab, s, m);
            out.push((format!("forward {ab} s={s} M={m}"), forward_random(&cfg, 7 + s as u64)));
        }
    }
    out
}
