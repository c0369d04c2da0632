//! Flow dumps: Middlebury `.flo` float files and color-wheel PNGs.

use std::io::Write;
use std::path::Path;

use candle_core::{DType, Tensor};

use crate::error::{NvcError, Result};
use crate::motion::MultiscaleFlow;

const FLO_MAGIC: f32 = 202021.25;

/// Splits a `(1, 2, H, W)` flow into `(dx, dy, H, W)` row-major planes.
fn planes(flow: &Tensor) -> Result<(Vec<f32>, Vec<f32>, usize, usize)> {
    let (b, c, h, w) = flow.dims4()?;
    if b != 1 || c != 2 {
        return Err(NvcError::Shape(format!("flow must be (1, 2, H, W), got {:?}", flow.dims())));
    }
    let f = flow.to_dtype(DType::F32)?;
    let dx = f.narrow(1, 0, 1)?.flatten_all()?.to_vec1::<f32>()?;
    let dy = f.narrow(1, 1, 1)?.flatten_all()?.to_vec1::<f32>()?;
    Ok((dx, dy, h, w))
}

/// Writes a Middlebury `.flo` file.
pub fn write_flo(path: &Path, flow: &Tensor) -> Result<()> {
    let (dx, dy, h, w) = planes(flow)?;
    let mut out = Vec::with_capacity(12 + 8 * h * w);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for (u, v) in dx.iter().zip(&dy) {
        out.extend_from_slice(&u.to_le_bytes());
        out.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

/// Reads a Middlebury `.flo` file into a `(1, 2, H, W)` f32 tensor.
pub fn read_flo(path: &Path) -> Result<Tensor> {
    let b = std::fs::read(path)?;
    let word = |i: usize| -> Result<[u8; 4]> {
        b.get(i..i + 4)
            .map(|s| s.try_into().unwrap())
            .ok_or(NvcError::Truncated)
    };
    if f32::from_le_bytes(word(0)?) != FLO_MAGIC {
        return Err(NvcError::BadMagic);
    }
    let w = i32::from_le_bytes(word(4)?) as usize;
    let h = i32::from_le_bytes(word(8)?) as usize;
    if b.len() != 12 + 8 * w * h {
        return Err(NvcError::Truncated);
    }
    let mut dx = Vec::with_capacity(w * h);
    let mut dy = Vec::with_capacity(w * h);
    for i in 0..w * h {
        dx.push(f32::from_le_bytes(word(12 + 8 * i)?));
        dy.push(f32::from_le_bytes(word(16 + 8 * i)?));
    }
    dx.extend(dy);
    Ok(Tensor::from_vec(dx, (1, 2, h, w), &candle_core::Device::Cpu)?)
}

fn color_wheel() -> Vec<[f64; 3]> {
    let segments = [(15, [255.0, 0.0, 0.0], [0.0, 1.0, 0.0]), (6, [255.0, 255.0, 0.0], [-1.0, 0.0, 0.0]), (4, [0.0, 255.0, 0.0], [0.0, 0.0, 1.0]), (11, [0.0, 255.0, 255.0], [0.0, -1.0, 0.0]), (13, [0.0, 0.0, 255.0], [1.0, 0.0, 0.0]), (6, [255.0, 0.0, 255.0], [0.0, 0.0, -1.0])];
    let mut wheel = Vec::with_capacity(55);
    for (n, start, dir) in segments {
        for i in 0..n {
            let t = 255.0 * i as f64 / n as f64;
            wheel.push([start[0] + dir[0] * t, start[1] + dir[1] * t, start[2] + dir[2] * t]);
        }
    }
    wheel
}

/// Colors a flow with the standard wheel: hue is direction, saturation is
/// magnitude relative to `max_magnitude` (the flow's own maximum if `None`).
pub fn flow_to_rgb(flow: &Tensor, max_magnitude: Option<f64>) -> Result<(Vec<u8>, usize, usize)> {
    let (dx, dy, h, w) = planes(flow)?;
    let max = max_magnitude.unwrap_or_else(|| {
        dx.iter()
            .zip(&dy)
            .map(|(u, v)| (*u as f64).hypot(*v as f64))
            .fold(0.0, f64::max)
    });
    let max = if max > 0.0 { max } else { 1.0 };
    let wheel = color_wheel();
    let n = wheel.len();
    let mut rgb = Vec::with_capacity(3 * h * w);
    for (u, v) in dx.iter().zip(&dy) {
        let (u, v) = (*u as f64 / max, *v as f64 / max);
        let rad = u.hypot(v);
        let a = (-v).atan2(-u) / std::f64::consts::PI;
        let fk = (a + 1.0) / 2.0 * (n - 1) as f64;
        let k0 = fk.floor() as usize % n;
        let k1 = (k0 + 1) % n;
        let f = fk - fk.floor();
        for c in 0..3 {
            let col = ((1.0 - f) * wheel[k0][c] + f * wheel[k1][c]) / 255.0;
            let col = if rad <= 1.0 { 1.0 - rad * (1.0 - col) } else { col * 0.75 };
            rgb.push((255.0 * col).round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok((rgb, w, h))
}

/// Writes `frame{index:05}_s{scale}.flo` and `.png` for every scale.
pub fn dump_flows(dir: &Path, index: usize, flows: &MultiscaleFlow) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (s, f) in flows.flows.iter().enumerate() {
        let stem = format!("frame{index:05}_s{s}");
        write_flo(&dir.join(format!("{stem}.flo")), f)?;
        let (rgb, w, h) = flow_to_rgb(f, None)?;
        image::save_buffer(dir.join(format!("{stem}.png")), &rgb, w as u32, h as u32, image::ColorType::Rgb8)?;
    }
    Ok(())
}
