//! Runs the staged training recipe on procedural clips with a toy model and
//! saves the checkpoint for the other examples.
//!
//! `cargo run --release --example train_toy -- [steps per stage] [output]`

use std::path::PathBuf;
use std::time::Instant;

use nvc::model::{ModelConfig, NvcModel};
use nvc::train::data::{MotionKind, SyntheticSource};
use nvc::train::{run_stage, LrSchedule, Stage, TrainConfig};

fn main() -> nvc::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(50);
    let output = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("nvc_toy.safetensors"));
    let mut model = NvcModel::new(ModelConfig::toy())?;
    let data = SyntheticSource::new(
        vec![MotionKind::Translation, MotionKind::Rotation, MotionKind::Zoom, MotionKind::Occlusion],
        1,
    );
    let cfg = TrainConfig {
        steps,
        intra_crop: 64,
        inter_crop: 64,
        lr: LrSchedule {
            initial: 1e-3,
            ..LrSchedule::default()
        },
        log_every: 0,
        ..TrainConfig::default()
    };
    for stage in Stage::ALL {
        let t = Instant::now();
        let report = run_stage(&mut model, stage, &cfg, &data, &mut std::io::sink())?;
        let (head, tail) = report.head_tail(5);
        println!(
            "{:16} {:6.1} ms/step  loss {head:.4} -> {tail:.4}",
            stage.name(),
            t.elapsed().as_secs_f64() * 1000.0 / steps as f64
        );
    }
    model.save(&output)?;
    println!("saved {}", output.display());
    Ok(())
}
