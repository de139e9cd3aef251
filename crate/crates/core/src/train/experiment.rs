//! Strategy × patch-size grid and the ablation table.

use std::fmt::Write as _;

use serde::Serialize;

use super::{evaluate, train, ConfusionMatrix, EpochLog, Metrics, TrainConfig};
use crate::data::{Prepared, Samples};
use crate::error::Result;
use crate::exec::Mode;
use crate::model::{Ablation, IfConfig, IfModel, Strategy};

/// Full-scale Houston results (OA, AA, Kappa in percent) for context.
/// Indexed by strategy (early, middle, late) then side (3, 6, 9, 12).
pub const HOUSTON_GRID: [[[f64; 3]; 4]; 3] = [
    [[85.67, 86.05, 84.46], [94.36, 93.89, 93.88], [96.37, 95.42, 96.06], [97.50, 96.72, 97.29]],
    [[84.82, 84.87, 83.52], [94.02, 93.25, 93.51], [95.95, 95.22, 95.60], [96.38, 95.83, 96.07]],
    [[82.74, 83.11, 81.27], [94.78, 94.46, 94.33], [93.69, 93.15, 93.15], [97.03, 96.52, 96.78]],
];

/// Houston ablation results (OA, AA, Kappa), keyed like [`Ablation::ALL`].
pub const HOUSTON_ABLATION: [(Ablation, [f64; 3]); 4] = [
    (Ablation::None, [97.50, 96.72, 97.29]),
    (Ablation::NoContext, [96.41, 95.76, 96.10]),
    (Ablation::ConcatFusion, [91.35, 95.31, 95.56]),
    (Ablation::HsiOnly, [90.31, 90.10, 88.96]),
];

pub const PATCH_SIDES: [usize; 4] = [1, 2, 3, 4];

#[derive(Clone, Debug)]
pub struct RunResult {
    pub model: IfModel,
    pub log: Vec<EpochLog>,
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

/// Fresh model from `tc.seed`, trained on `samples.train`, scored on
/// `samples.test`.
pub fn fit(cfg: &IfConfig, tc: &TrainConfig, samples: &Samples, mode: Mode) -> Result<RunResult> {
    let mut model = IfModel::new(cfg, tc.seed)?;
    let log = train(&mut model, &samples.train, tc, mode)?;
    let confusion = evaluate(&model, &samples.test, mode)?;
    let metrics = confusion.metrics()?;
    Ok(RunResult { model, log, confusion, metrics })
}

type Getter = fn(&Metrics) -> f64;

#[derive(Clone, Debug, Serialize)]
pub struct GridCell {
    pub strategy: Strategy,
    pub patch_side: usize,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, Serialize)]
pub struct GridTable {
    pub cells: Vec<GridCell>,
}

fn reference_grid(s: Strategy, side: usize) -> Option<[f64; 3]> {
    let si = Strategy::ALL.iter().position(|&x| x == s)?;
    let pi = PATCH_SIDES.iter().position(|&x| x == side)?;
    Some(HOUSTON_GRID[si][pi])
}

fn fmt_ref(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_default()
}

impl GridTable {
    /// Columns: strategy, window, OA/AA/Kappa in percent, then the Houston
    /// reference triple.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,window,oa,aa,kappa,houston_oa,houston_aa,houston_kappa\n");
        for c in &self.cells {
            let r = reference_grid(c.strategy, c.patch_side);
            let _ = writeln!(
                out,
                "{},{w}x{w},{},{},{},{},{},{}",
                c.strategy,
                c.metrics.oa * 100.0,
                c.metrics.aa * 100.0,
                c.metrics.kappa * 100.0,
                fmt_ref(r.map(|v| v[0])),
                fmt_ref(r.map(|v| v[1])),
                fmt_ref(r.map(|v| v[2])),
                w = 3 * c.patch_side,
            );
        }
        out
    }

    /// Metric rows × (strategy, window) columns, grouped by strategy.
    pub fn to_text(&self) -> String {
        let mut out = format!("{:<8}", "metric");
        for c in &self.cells {
            let _ = write!(out, " {:>12}", format!("{}/{w}x{w}", c.strategy, w = 3 * c.patch_side));
        }
        out.push('\n');
        let rows: [(&str, Getter); 3] =
            [("OA", |m| m.oa), ("AA", |m| m.aa), ("Kappa", |m| m.kappa)];
        for (name, get) in rows {
            let _ = write!(out, "{name:<8}");
            for c in &self.cells {
                let _ = write!(out, " {:>12.2}", get(&c.metrics) * 100.0);
            }
            out.push('\n');
        }
        out
    }
}

/// One train + eval per `(strategy, side)`, strategy-major.
pub fn run_grid(
    base: &IfConfig,
    tc: &TrainConfig,
    data: &Prepared,
    sides: &[usize],
    strategies: &[Strategy],
    mode: Mode,
) -> Result<GridTable> {
    let mut samples = Vec::with_capacity(sides.len());
    for &s in sides {
        samples.push(data.samples(s, mode)?);
    }
    let mut cells = Vec::with_capacity(sides.len() * strategies.len());
    for &strategy in strategies {
        for (&patch_side, set) in sides.iter().zip(&samples) {
            let mut cfg = base.clone().with_strategy(strategy);
            cfg.patch_side = patch_side;
            let r = fit(&cfg, tc, set, mode)?;
            cells.push(GridCell { strategy, patch_side, metrics: r.metrics });
        }
    }
    Ok(GridTable { cells })
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn get(&self, a: Ablation) -> Option<&Metrics> {
        self.rows.iter().find(|r| r.ablation == a).map(|r| &r.metrics)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,oa,aa,kappa,houston_oa,houston_aa,houston_kappa\n");
        for r in &self.rows {
            let reference = HOUSTON_ABLATION.iter().find(|(a, _)| *a == r.ablation).map(|(_, v)| *v);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                variant_name(r.ablation),
                r.metrics.oa * 100.0,
                r.metrics.aa * 100.0,
                r.metrics.kappa * 100.0,
                fmt_ref(reference.map(|v| v[0])),
                fmt_ref(reference.map(|v| v[1])),
                fmt_ref(reference.map(|v| v[2])),
            );
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<14} {:>8} {:>8} {:>8}\n", "variant", "OA", "AA", "Kappa");
        for r in &self.rows {
            let m = &r.metrics;
            let _ = writeln!(
                out,
                "{:<14} {:>8.2} {:>8.2} {:>8.2}",
                variant_name(r.ablation),
                m.oa * 100.0,
                m.aa * 100.0,
                m.kappa * 100.0
            );
        }
        out
    }
}

fn variant_name(a: Ablation) -> &'static str {
    match a {
        Ablation::None => "if",
        other => other.name(),
    }
}

/// Rows in the order IF, no_context, concat_fusion, hsi_only; identical
/// data and seed for each.
pub fn run_ablations(cfg: &IfConfig, tc: &TrainConfig, data: &Prepared, mode: Mode) -> Result<AblationTable> {
    let samples = data.samples(cfg.patch_side, mode)?;
    let mut rows = Vec::with_capacity(4);
    for ablation in Ablation::ALL {
        let r = fit(&cfg.clone().with_ablation(ablation), tc, &samples, mode)?;
        rows.push(AblationRow { ablation, metrics: r.metrics });
    }
    Ok(AblationTable { rows })
}

/// Per-class recall rows followed by OA, AA and Kappa, all in percent.
pub fn metrics_csv(m: &Metrics) -> String {
    let mut out = String::from("metric,value\n");
    for (k, r) in m.per_class.iter().enumerate() {
        match r {
            Some(v) => {
                let _ = writeln!(out, "class_{},{}", k + 1, v * 100.0);
            }
            None => {
                let _ = writeln!(out, "class_{},", k + 1);
            }
        }
    }
    let _ = writeln!(out, "OA,{}", m.oa * 100.0);
    let _ = writeln!(out, "AA,{}", m.aa * 100.0);
    let _ = writeln!(out, "Kappa,{}", m.kappa * 100.0);
    out
}

pub fn metrics_text(m: &Metrics) -> String {
    let mut out = String::new();
    for (k, r) in m.per_class.iter().enumerate() {
        let v = r.map(|v| format!("{:.2}", v * 100.0)).unwrap_or_else(|| "-".into());
        let _ = writeln!(out, "{:<10} {:>8}", format!("class {}", k + 1), v);
    }
    let _ = writeln!(out, "{:<10} {:>8.2}", "OA", m.oa * 100.0);
    let _ = writeln!(out, "{:<10} {:>8.2}", "AA", m.aa * 100.0);
    let _ = writeln!(out, "{:<10} {:>8.2}", "Kappa", m.kappa * 100.0);
    out
}
