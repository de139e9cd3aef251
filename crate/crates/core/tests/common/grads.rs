//! Finite-difference checks with the step and tolerance the acceptance
//! gate uses.

use ifusion::attention::{self, EncoderBlockWeights, FfnWeights};
use ifusion::autodiff::{grad_check, GradCheckReport, Graph, ParamStore, Var, LN_EPS};
use ifusion::fusion::{self, Branch, BranchFeatures, FeatureFusionWeights};
use ifusion::model::{IfConfig, IfModel};
use ifusion::{rng, Result};

use super::{cases, fill, randomize};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-4;
pub const TRIALS: u64 = 20;

type Build = fn(&mut Graph, &[Var]) -> Result<Var>;

/// `Σ op(x) ⊙ R` for a fixed random `R`, so every output element carries
/// a distinct weight.
fn check_op(name: &str, shapes: &[&[usize]], build: Build) -> (String, GradCheckReport) {
    let mut entries = Vec::new();
    for trial in 0..TRIALS {
        let seed = 1000 * trial + name.len() as u64;
        let mut store = ParamStore::new();
        let ids: Vec<_> = shapes
            .iter()
            .enumerate()
            .map(|(k, s)| store.add(format!("{name}.in{k}"), fill(s, seed + k as u64)).unwrap())
            .collect();
        let report = grad_check(
            &mut store,
            &ids,
            |g, st| {
                let vars = ids.iter().map(|&id| g.param(st, id)).collect::<Result<Vec<_>>>()?;
                let y = build(g, &vars)?;
                let r = g.constant(fill(g.shape(y), seed + 77))?;
                let m = g.mul(y, r)?;
                g.sum(m)
            },
            H,
            TOL,
        )
        .unwrap();
        entries.extend(report.entries);
    }
    (name.to_string(), GradCheckReport { entries, tol: TOL })
}

pub fn op_reports() -> Vec<(String, GradCheckReport)> {
    vec![
        check_op("matmul", &[&[3, 4], &[4, 2]], |g, v| g.matmul(v[0], v[1])),
        check_op("add", &[&[3, 4], &[3, 4]], |g, v| g.add(v[0], v[1])),
        check_op("add_bias", &[&[3, 4], &[4]], |g, v| g.add_bias(v[0], v[1])),
        check_op("mul", &[&[3, 4], &[3, 4]], |g, v| g.mul(v[0], v[1])),
        check_op("scale", &[&[2, 5]], |g, v| g.scale(v[0], -1.7)),
        check_op("softmax", &[&[3, 5]], |g, v| g.softmax(v[0])),
        check_op("layer_norm", &[&[3, 5], &[5], &[5]], |g, v| g.layer_norm(v[0], v[1], v[2], LN_EPS)),
        check_op("gelu", &[&[4, 4]], |g, v| g.gelu(v[0])),
        check_op("conv2d_pad1", &[&[2, 4, 4], &[3, 2, 3, 3], &[3]], |g, v| g.conv2d(v[0], v[1], v[2], 1, 1)),
        check_op("conv2d_stride2", &[&[2, 5, 5], &[2, 2, 3, 3], &[2]], |g, v| g.conv2d(v[0], v[1], v[2], 2, 0)),
        check_op("conv2d_batched", &[&[2, 3, 3, 3], &[3, 3, 1, 1], &[3]], |g, v| g.conv2d(v[0], v[1], v[2], 1, 0)),
        check_op("transpose", &[&[3, 4]], |g, v| g.transpose(v[0])),
        check_op("slice_cols", &[&[3, 6]], |g, v| g.slice_cols(v[0], 2, 3)),
        check_op("concat_cols", &[&[3, 2], &[3, 4]], |g, v| g.concat_cols(&[v[0], v[1]])),
        check_op("slice_rows", &[&[5, 3]], |g, v| g.slice_rows(v[0], 1, 3)),
        check_op("concat_rows", &[&[1, 3], &[4, 3]], |g, v| g.concat_rows(&[v[0], v[1]])),
        check_op("reshape", &[&[2, 6]], |g, v| g.reshape(v[0], &[3, 2, 2])),
        check_op("stack_last", &[&[2, 3], &[2, 3], &[2, 3]], |g, v| g.stack_last(&[v[0], v[1], v[2]])),
        check_op("sum", &[&[3, 3]], |g, v| g.sum(v[0])),
        check_op("cross_entropy", &[&[1, 5]], |g, v| g.cross_entropy(v[0], 3)),
    ]
}

/// Random parameter values with layer-norm gains kept away from zero.
fn perturbed(store: &mut ParamStore, seed: u64) {
    randomize(store, seed, 0.5);
    for p in store.iter_mut() {
        if p.name.ends_with(".gamma") {
            p.value = p.value.map(|v| 1.0 + v);
        }
    }
}

fn block_store(d: usize, h: usize, f: usize, seed: u64) -> (ParamStore, EncoderBlockWeights) {
    let mut store = ParamStore::new();
    let mut r = rng::seeded(seed);
    let w = EncoderBlockWeights::new(&mut store, "blk", d, h, f, &mut r).unwrap();
    perturbed(&mut store, seed + 1);
    (store, w)
}

fn weighted_sum(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let r = g.constant(fill(g.shape(y), seed))?;
    let m = g.mul(y, r)?;
    g.sum(m)
}

/// One encoder block, `D=8`, four tokens; the input is a parameter too.
pub fn encoder_block_report() -> GradCheckReport {
    let (mut store, w) = block_store(8, 2, 16, 301);
    let z = store.add("z", fill(&[4, 8], 302)).unwrap();
    let ids = store.ids();
    grad_check(
        &mut store,
        &ids,
        |g, st| {
            let vz = g.param(st, z)?;
            let (y, _) = attention::encoder_block(g, st, vz, &w)?;
            weighted_sum(g, y, 303)
        },
        H,
        TOL,
    )
    .unwrap()
}

pub fn cross_block_report() -> GradCheckReport {
    let (mut store, w) = block_store(8, 2, 16, 311);
    let zi = store.add("zi", fill(&[4, 8], 312)).unwrap();
    let zj = store.add("zj", fill(&[4, 8], 313)).unwrap();
    let ids = store.ids();
    grad_check(
        &mut store,
        &ids,
        |g, st| {
            let (a, b) = (g.param(st, zi)?, g.param(st, zj)?);
            let (y, _) = attention::cross_block(g, st, a, b, &w)?;
            weighted_sum(g, y, 314)
        },
        H,
        TOL,
    )
    .unwrap()
}

/// Nine views, feature-fusion layer and FFN update on `T=4, D=8` branches.
pub fn stage2_report() -> GradCheckReport {
    let (t, d) = (4, 8);
    let mut store = ParamStore::new();
    let mut r = rng::seeded(321);
    let blocks: Vec<Vec<EncoderBlockWeights>> = (0..3)
        .map(|i| {
            (0..3)
                .map(|j| EncoderBlockWeights::new(&mut store, &format!("view_{i}_{j}"), d, 2, 8, &mut r).unwrap())
                .collect()
        })
        .collect();
    let fuse = FeatureFusionWeights::new(&mut store, "fuse", 3, d, &mut r).unwrap();
    let ffn = FfnWeights::new(&mut store, "ffn", d, 8, &mut r).unwrap();
    let inputs: Vec<_> = (0..3)
        .map(|k| store.add(format!("z{k}"), fill(&[t, d], 330 + k)).unwrap())
        .collect();
    perturbed(&mut store, 322);
    let ids = store.ids();
    grad_check(
        &mut store,
        &ids,
        |g, st| {
            let branches = Branch::ALL
                .iter()
                .zip(&inputs)
                .map(|(&b, &id)| Ok((b, g.param(st, id)?)))
                .collect::<Result<Vec<_>>>()?;
            let m = fusion::build_views(g, st, &BranchFeatures { branches }, &blocks)?;
            let zh = fusion::compress(g, st, &m, &fuse)?;
            let zf = fusion::ffn_update(g, st, zh, &ffn)?;
            weighted_sum(g, zf, 340)
        },
        H,
        TOL,
    )
    .unwrap()
}

/// Cross-entropy of a randomised tiny model against every parameter.
pub fn model_report(cfg: &IfConfig, seed: u64) -> GradCheckReport {
    let mut m = IfModel::new(cfg, seed).unwrap();
    perturbed(&mut m.params, seed + 1);
    let sample = cases::tiny_sample(cfg, seed + 2);
    let arch = m.arch.clone();
    let ids = m.params.ids();
    grad_check(
        &mut m.params,
        &ids,
        |g, st| Ok(arch.loss(g, st, &sample)?.0),
        H,
        TOL,
    )
    .unwrap()
}

pub fn summary(name: &str, r: &GradCheckReport) -> String {
    match r.worst() {
        Some(w) => format!(
            "{name}: {} entries, max rel err {:.2e} at {}[{}] (analytic {:.6e}, numeric {:.6e})",
            r.entries.len(),
            r.max_rel_error(),
            w.param,
            w.index,
            w.analytic,
            w.numeric
        ),
        None => format!("{name}: no entries"),
    }
}
