//! Codes one image with the intra VAE: hyper latent, context-modelled main
//! latent, range coding and decoding. Pass a trained checkpoint to see
//! meaningful rates; without one a freshly initialized toy model is used.

use candle_core::DType;
use nvc::intra::{decode_intra, encode_intra};
use nvc::metrics::{ms_ssim, psnr};
use nvc::model::{ModelConfig, NvcModel};
use nvc::train::data::{generate_clip, ClipSpec, MotionKind};

fn main() -> nvc::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(path) => NvcModel::load(path.as_ref())?,
        None => NvcModel::new(ModelConfig::toy())?,
    };
    let x = generate_clip(&ClipSpec::new(MotionKind::Static, 128, 1, 3))?.frames.remove(0);
    let enc = encode_intra(&x, &model.intra)?;
    let bytes: usize = enc.chunks.iter().map(|c| c.payload.len()).sum();
    let dec = decode_intra(&enc.chunks, &model.intra, 128, 128, DType::F32)?;
    let same = dec.flatten_all()?.to_vec1::<f32>()? == enc.recon.flatten_all()?.to_vec1::<f32>()?;
    println!("payload      {bytes} bytes ({:.3} bpp)", 8.0 * bytes as f64 / (128.0 * 128.0));
    println!("estimate     {:.0} main-latent bits", enc.estimated_main_bits);
    println!("PSNR         {:.2} dB", psnr(&x, &dec, 1.0)?);
    println!("MS-SSIM      {:.4}", ms_ssim(&x, &dec)?);
    println!("decoder sync {same}");
    Ok(())
}
