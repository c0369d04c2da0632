//! Encodes a short clip, then inspects the `.nvc` container record by record.

use nvc::bitstream::NvcBitstream;
use nvc::model::{ModelConfig, NvcModel};
use nvc::pipeline::{encode_sequence, CodecConfig};
use nvc::train::data::{generate_clip, ClipSpec, MotionKind};

fn main() -> nvc::Result<()> {
    let model = NvcModel::new(ModelConfig::toy())?;
    let frames = generate_clip(&ClipSpec::new(MotionKind::Translation, 64, 5, 1))?.frames;
    let cfg = CodecConfig {
        gop_size: 3,
        ..CodecConfig::default()
    };
    let bytes = encode_sequence(&model, &frames, &cfg)?.bitstream.to_bytes()?;
    let stream = NvcBitstream::from_bytes(&bytes)?;
    let h = &stream.header;
    println!("{}x{} frames={} gop={} model={} bytes={}", h.width, h.height, h.frame_count, h.gop_size, h.model_id, bytes.len());
    for (i, f) in stream.frames.iter().enumerate() {
        let chunks: Vec<String> = f
            .chunks
            .iter()
            .map(|c| format!("{}[{}..{}] {}B", c.kind.name(), c.symbol_min, c.symbol_max, c.payload.len()))
            .collect();
        println!("frame {i:2} {:?}  {}", f.frame_type, chunks.join("  "));
    }
    let mut corrupt = bytes.clone();
    corrupt[9] ^= 0x40;
    println!("flipped header bit: {}", NvcBitstream::from_bytes(&corrupt).unwrap_err());
    Ok(())
}
