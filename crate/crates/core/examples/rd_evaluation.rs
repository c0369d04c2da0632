//! Evaluates models on a synthetic suite with the full codec, intra-only
//! coding and the motion-free baseline, writes CSV/JSON tables and, given
//! four or more checkpoints (one per lambda), prints BD summaries.
//!
//! `cargo run --release --example rd_evaluation -- a.safetensors b.safetensors ...`

use nvc::eval::{BdSummary, EvalCodec, Quality, RdTable};
use nvc::model::{ModelConfig, NvcModel};
use nvc::train::data::{generate_clip, ClipSpec, MotionKind};

fn main() -> nvc::Result<()> {
    let paths: Vec<String> = std::env::args().skip(1).collect();
    let models: Vec<NvcModel> = if paths.is_empty() {
        vec![NvcModel::new(ModelConfig::toy())?]
    } else {
        paths.iter().map(|p| NvcModel::load(p.as_ref())).collect::<nvc::Result<_>>()?
    };
    let labels: Vec<String> = if paths.is_empty() { vec!["untrained".into()] } else { paths.clone() };
    let named: Vec<(String, &NvcModel)> = labels.iter().cloned().zip(models.iter()).collect();
    let clips: Vec<(String, Vec<candle_core::Tensor>)> = [MotionKind::Translation, MotionKind::Zoom, MotionKind::Occlusion]
        .into_iter()
        .map(|k| Ok((k.name().to_string(), generate_clip(&ClipSpec::new(k, 64, 6, 11))?.frames)))
        .collect::<nvc::Result<_>>()?;
    let mut table = RdTable::default();
    for codec in [EvalCodec::Nvc, EvalCodec::IntraOnly, EvalCodec::MotionFree] {
        table.rows.extend(RdTable::evaluate(&named, &clips, codec, 6)?.rows);
    }
    println!("{:12} {:12} {:>8} {:>8} {:>8} {:>10}", "codec", "sequence", "bpp", "psnr", "ms-ssim", "motion bpp");
    for r in &table.rows {
        println!(
            "{:12} {:12} {:8.4} {:8.2} {:8.4} {:10.4}",
            r.codec, r.sequence, r.bpp, r.psnr, r.ms_ssim, r.motion_bpp
        );
    }
    let dir = std::env::temp_dir();
    table.write_csv(&dir.join("nvc_rd.csv"))?;
    table.write_json(&dir.join("nvc_rd.json"))?;
    println!("tables written to {}", dir.join("nvc_rd.{csv,json}").display());
    if models.len() >= 4 {
        let nvc = table.curve(EvalCodec::Nvc.name(), Quality::Psnr)?;
        for anchor in [EvalCodec::IntraOnly, EvalCodec::MotionFree] {
            println!("{}", BdSummary::compute(&table.curve(anchor.name(), Quality::Psnr)?, &nvc)?);
        }
    }
    Ok(())
}
