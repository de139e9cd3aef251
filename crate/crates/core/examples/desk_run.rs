//! Trains every ablation variant on the default synthetic scene and prints
//! per-epoch progress.
//!
//! `cargo run --release --example desk_run -- [patch_side] [epochs] [variant,...]`

use std::time::Instant;

use ifusion::data::{gen_synth, pair_confusion_bound, prepare, SynthSpec};
use ifusion::exec::Mode;
use ifusion::model::{Ablation, IfConfig, IfModel};
use ifusion::train::{evaluate, train_with, TrainConfig};

fn main() -> ifusion::Result<()> {
    let mut args = std::env::args().skip(1);
    let side: usize = args.next().map_or(2, |s| s.parse().expect("patch side"));
    let epochs: usize = args.next().map_or(40, |s| s.parse().expect("epochs"));
    let only: Option<String> = args.next();
    let spec = SynthSpec::default();
    let d = gen_synth(&spec)?;
    println!("pair-confusion bound {:.4}", pair_confusion_bound(&spec, &d.split));
    let data = prepare(&d.hsi, &d.lidar, d.labels, d.split)?;
    let samples = data.samples(side, Mode::default())?;
    let tc = TrainConfig { epochs, ..TrainConfig::default() };
    for ab in Ablation::ALL {
        if only.as_deref().is_some_and(|o| !o.split(',').any(|n| n == ab.name())) {
            continue;
        }
        let cfg = IfConfig::new(side, spec.hsi_bands, spec.lidar_bands, spec.classes)
            .with_dims(32, 4, 64)
            .with_ablation(ab);
        let mut model = IfModel::new(&cfg, tc.seed)?;
        let t = Instant::now();
        train_with(&mut model, &samples.train, &tc, Mode::default(), |e| {
            if e.epoch % 10 == 9 {
                println!("  {ab} epoch {:>3} loss {:.4} train_oa {:.3}", e.epoch + 1, e.loss, e.train_oa);
            }
        })?;
        let cm = evaluate(&model, &samples.test, Mode::default())?;
        println!("  confusion {:?}", cm.counts);
        let m = cm.metrics()?;
        println!("{ab}: test OA {:.4} AA {:.4} kappa {:.4} ({:.1}s)", m.oa, m.aa, m.kappa, t.elapsed().as_secs_f64());
    }
    Ok(())
}
