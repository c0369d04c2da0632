//! Backward-warps a synthetic frame with its ground-truth flow and writes
//! the flow as Middlebury `.flo` plus a color-wheel PNG.

use nvc::flowviz::{flow_to_rgb, write_flo};
use nvc::metrics::psnr;
use nvc::train::data::{generate_clip, ClipSpec, MotionKind};
use nvc::warp::warp;

fn main() -> nvc::Result<()> {
    let out = std::env::temp_dir().join("nvc_warp_example");
    std::fs::create_dir_all(&out)?;
    for kind in [MotionKind::Translation, MotionKind::Rotation, MotionKind::Zoom] {
        let clip = generate_clip(&ClipSpec::new(kind, 96, 2, 4))?;
        let flow = &clip.flows[1];
        let warped = warp(&clip.frames[0], flow)?;
        println!(
            "{:12} previous frame {:.2} dB, warped with true flow {:.2} dB",
            kind.name(),
            psnr(&clip.frames[0], &clip.frames[1], 1.0)?,
            psnr(&warped, &clip.frames[1], 1.0)?
        );
        write_flo(&out.join(format!("{}.flo", kind.name())), flow)?;
        let (rgb, w, h) = flow_to_rgb(flow, None)?;
        image::save_buffer(out.join(format!("{}.png", kind.name())), &rgb, w as u32, h as u32, image::ColorType::Rgb8)?;
    }
    println!("flows written to {}", out.display());
    Ok(())
}
