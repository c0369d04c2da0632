//! Full codec round trip: GOP-structured encoding to a `.nvc` file, decoding
//! from the file and a bit-exact comparison of the reconstructions.

use nvc::bitstream::NvcBitstream;
use nvc::model::{ModelConfig, NvcModel};
use nvc::pipeline::{decode_sequence, encode_sequence, rd_point, CodecConfig};
use nvc::train::data::{generate_clip, ClipSpec, MotionKind};

fn main() -> nvc::Result<()> {
    let model = match std::env::args().nth(1) {
        Some(path) => NvcModel::load(path.as_ref())?,
        None => NvcModel::new(ModelConfig::toy())?,
    };
    let spec = ClipSpec {
        height: 72,
        width: 88,
        ..ClipSpec::new(MotionKind::Occlusion, 0, 8, 2)
    };
    let frames = generate_clip(&spec)?.frames;
    let cfg = CodecConfig {
        gop_size: 4,
        ..CodecConfig::default()
    };
    let enc = encode_sequence(&model, &frames, &cfg)?;
    let path = std::env::temp_dir().join("nvc_example.nvc");
    std::fs::write(&path, enc.bitstream.to_bytes()?)?;
    let stream = NvcBitstream::from_bytes(&std::fs::read(&path)?)?;
    let dec = decode_sequence(&model, &stream)?;
    for s in &enc.stats {
        println!("frame {:2} {:?} {:5} bytes (motion {:4})", s.index, s.frame_type, s.bytes, s.motion_bytes);
    }
    let exact = enc
        .recon
        .iter()
        .zip(&dec.frames)
        .all(|(a, b)| a.flatten_all().and_then(|a| a.to_vec1::<f32>()).ok() == b.flatten_all().and_then(|b| b.to_vec1::<f32>()).ok());
    let rd = rd_point(&frames, &stream, &dec.frames)?;
    println!("{}: {:.4} bpp, {:.2} dB, MS-SSIM {:.4}", path.display(), rd.bpp, rd.psnr, rd.ms_ssim);
    println!("decoder matches encoder: {exact}");
    Ok(())
}
