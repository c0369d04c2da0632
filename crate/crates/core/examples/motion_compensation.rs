//! Estimates multiscale flow between two frames, then predicts the current
//! frame with the multiscale and the single-scale compensation networks.

use nvc::entropy::QuantMode;
use nvc::mcn::{McnConfig, McnKind};
use nvc::metrics::psnr;
use nvc::model::{ModelConfig, NvcModel, INTRA, MOTION, RES};
use nvc::train::data::{generate_clip, ClipSpec, MotionKind};
use nvc::train::zero_state;

fn main() -> nvc::Result<()> {
    let multi = match std::env::args().nth(1) {
        Some(path) => NvcModel::load(path.as_ref())?,
        None => NvcModel::new(ModelConfig::toy())?,
    };
    let single_cfg = ModelConfig {
        mcn: McnConfig::scaled(McnKind::SingleScale, 0.25),
        ..multi.config.clone()
    };
    let single = multi.variant(single_cfg, &[INTRA, MOTION, RES])?;
    let clip = generate_clip(&ClipSpec::new(MotionKind::Translation, 64, 2, 8))?;
    let (reference, current) = (&clip.frames[0], &clip.frames[1]);
    let state = zero_state(&multi, 64, 64)?;
    let m = multi.motion.forward(reference, current, &state, QuantMode::Infer, 0)?;
    for (s, f) in m.flows.flows.iter().enumerate() {
        println!("scale {s}: flow {:?}, mean |f| {:.3}", f.dims(), f.abs()?.mean_all()?.to_scalar::<f32>()?);
    }
    println!("motion latent estimate {:.0} bits", m.latent.bits()?.to_scalar::<f32>()?);
    println!("previous frame   {:.2} dB", psnr(reference, current, 1.0)?);
    for (name, model) in [("multiscale", &multi), ("single-scale", &single)] {
        let pred = model.mcn.predict_frame(reference, &m.flows)?;
        println!("{name:12} prediction {:.2} dB", psnr(&pred, current, 1.0)?);
    }
    Ok(())
}
