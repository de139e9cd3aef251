use std::fmt::Write as _;
use std::path::Path;

use ifusion::data::{io, SynthSpec};
use ifusion::exec::Mode;
use ifusion::model::{IfModel, Strategy};
use ifusion::train::experiment::{self, metrics_csv, metrics_text};
use ifusion::train::{evaluate, log_jsonl, train_with};
use ifusion::{Error, Result, Tensor};

use crate::config::RunConfig;

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io { path: path.into(), source })
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.into(), source })
}

/// Loads the config and applies `IF_SEED`, which overrides `train.seed`.
fn load(path: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Ok(v) = std::env::var("IF_SEED") {
        let seed = v
            .trim()
            .parse::<u64>()
            .map_err(|_| Error::Config(format!("IF_SEED `{v}` is not an unsigned integer")))?;
        eprintln!("IF_SEED={seed} overrides train.seed {}", cfg.train.seed);
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

pub fn synth(spec_path: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(spec_path).map_err(|source| Error::Io { path: spec_path.into(), source })?;
    let spec: SynthSpec =
        serde_json::from_str(&text).map_err(|source| Error::Json { path: spec_path.into(), source })?;
    let data = ifusion::data::gen_synth(&spec)?;
    mkdir(out)?;
    io::write_cube(&out.join("hsi.ifc"), &data.hsi)?;
    io::write_cube(&out.join("lidar.ifc"), &data.lidar)?;
    io::write_labels(&out.join("labels.ifl"), &data.labels)?;
    data.split.save(&out.join("split.json"))?;
    println!(
        "wrote {}x{} scene, {} classes, {} train / {} test pixels to {}",
        spec.height,
        spec.width,
        spec.classes,
        data.split.train_count(),
        data.split.test_count(),
        out.display()
    );
    Ok(())
}

pub fn train(config: &Path, mode: Mode) -> Result<()> {
    let rc = load(config)?;
    let data = rc.prepare()?;
    let cfg = rc.model_config(&data)?;
    let samples = data.samples(cfg.patch_side, mode)?;
    let mut model = IfModel::new(&cfg, rc.train.seed)?;
    eprintln!(
        "training {} parameters on {} samples for {} epochs",
        cfg.param_count(),
        samples.train.len(),
        rc.train.epochs
    );
    let log = train_with(&mut model, &samples.train, &rc.train, mode, |e| {
        eprintln!("epoch {:>4}  loss {:.6}  train_oa {:.4}", e.epoch + 1, e.loss, e.train_oa);
    })?;
    let m = evaluate(&model, &samples.test, mode)?.metrics()?;
    let dir = &rc.output.dir;
    mkdir(dir)?;
    model.save(&dir.join("model.ifm"))?;
    write(&dir.join("metrics.csv"), metrics_csv(&m))?;
    write(&dir.join("log.jsonl"), log_jsonl(&log))?;
    report_empty(&m);
    print!("{}", metrics_text(&m));
    Ok(())
}

fn report_empty(m: &ifusion::train::Metrics) {
    let empty = m.empty_classes();
    if !empty.is_empty() {
        let ids: Vec<String> = empty.iter().map(|k| (k + 1).to_string()).collect();
        eprintln!("classes without test samples, left out of AA: {}", ids.join(", "));
    }
}

pub fn eval(config: &Path, ckpt: &Path, mode: Mode) -> Result<()> {
    let rc = load(config)?;
    let data = rc.prepare()?;
    let cfg = rc.model_config(&data)?;
    let model = IfModel::load(&cfg, ckpt)?;
    let samples = data.samples(cfg.patch_side, mode)?;
    let m = evaluate(&model, &samples.test, mode)?.metrics()?;
    report_empty(&m);
    print!("{}", metrics_text(&m));
    Ok(())
}

pub fn grid(config: &Path, sides: &[usize], strategies: &[String], mode: Mode) -> Result<()> {
    let rc = load(config)?;
    let strategies: Vec<Strategy> = strategies.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    let data = rc.prepare()?;
    let base = rc.model_config(&data)?;
    let table = experiment::run_grid(&base, &rc.train, &data, sides, &strategies, mode)?;
    mkdir(&rc.output.dir)?;
    write(&rc.output.dir.join("grid.csv"), table.to_csv())?;
    print!("{}", table.to_text());
    Ok(())
}

pub fn ablate(config: &Path, mode: Mode) -> Result<()> {
    let rc = load(config)?;
    let data = rc.prepare()?;
    let cfg = rc.model_config(&data)?;
    let table = experiment::run_ablations(&cfg, &rc.train, &data, mode)?;
    mkdir(&rc.output.dir)?;
    write(&rc.output.dir.join("ablation.csv"), table.to_csv())?;
    print!("{}", table.to_text());
    Ok(())
}

/// Rows of `t` as CSV, shortest round-trip decimals.
fn matrix_csv(t: &Tensor) -> String {
    let mut out = String::new();
    for row in t.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", cells.join(","));
    }
    out
}

fn parse_pixel(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("--pixel `{s}` is not `row,col`"));
    let (r, c) = s.split_once(',').ok_or_else(bad)?;
    Ok((r.trim().parse().map_err(|_| bad())?, c.trim().parse().map_err(|_| bad())?))
}

pub fn export_attn(config: &Path, ckpt: &Path, pixel: &str, out: &Path, per_head: bool) -> Result<()> {
    let (row, col) = parse_pixel(pixel)?;
    let rc = load(config)?;
    let data = rc.prepare()?;
    let cfg = rc.model_config(&data)?;
    if row >= data.labels.height || col >= data.labels.width {
        return Err(Error::Config(format!(
            "pixel ({row}, {col}) outside the {}x{} image",
            data.labels.height, data.labels.width
        )));
    }
    let model = IfModel::load(&cfg, ckpt)?;
    let label = data.labels.get(row, col);
    let class = if label > 0 { (label - 1) as usize } else { 0 };
    let sample = data.window(row, col, cfg.patch_side, class.min(cfg.num_classes - 1))?;
    let cap = model.capture(&sample)?;
    let Some(integrated) = cap.integrated else {
        return Err(Error::Config(format!("ablation `{}` has no fusion matrix to export", cfg.ablation)));
    };
    mkdir(out)?;
    let mut files = Vec::new();
    for (i, bi) in cap.branches.iter().enumerate() {
        for (j, bj) in cap.branches.iter().enumerate() {
            let map = &cap.attention[i][j];
            let name = format!("attn_{}_{}.csv", bi.id(), bj.id());
            write(&out.join(&name), matrix_csv(&map.head_mean()))?;
            files.push(name);
            if per_head {
                for h in 0..map.heads() {
                    let name = format!("attn_{}_{}_head{h}.csv", bi.id(), bj.id());
                    write(&out.join(&name), matrix_csv(&map.head(h)))?;
                    files.push(name);
                }
            }
        }
    }
    write(&out.join("integrated.csv"), matrix_csv(&integrated))?;
    let meta = serde_json::json!({
        "branches": {"1": "h1", "2": "h2", "3": "l"},
        "matrix_order": cap.branches.iter().map(|b| b.id()).collect::<Vec<_>>(),
        "pixel": [row, col],
        "label": label,
        "predicted_class": cap.logits.argmax() + 1,
        "heads": cfg.heads,
        "files": files,
        "layout": "attn_i_j: keys/values from branch i, queries from branch j; rows are query tokens, token 0 is cls",
    });
    write(&out.join("meta.json"), serde_json::to_string_pretty(&meta).expect("meta serializes"))?;
    println!("wrote {} attention maps and integrated.csv to {}", cap.branches.len().pow(2), out.display());
    Ok(())
}
