//! Frames, padding and file I/O (numbered PNG directories, planar YUV 4:2:0).

use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};

use crate::backbone::PAD_MULTIPLE;
use crate::error::{NvcError, Result};

/// One RGB picture `(1, 3, H, W)` in `[0, 1]` with its display index.
#[derive(Debug, Clone)]
pub struct Frame {
    pub pixels: Tensor,
    pub timestamp: usize,
}

impl Frame {
    pub fn new(pixels: Tensor, timestamp: usize) -> Result<Self> {
        let (b, c, _, _) = pixels.dims4()?;
        if b != 1 || c != 3 {
            return Err(NvcError::Shape(format!("frame must be (1, 3, H, W), got {:?}", pixels.dims())));
        }
        Ok(Self { pixels, timestamp })
    }

    pub fn height(&self) -> usize {
        self.pixels.dim(2).unwrap_or(0)
    }

    pub fn width(&self) -> usize {
        self.pixels.dim(3).unwrap_or(0)
    }
}

/// Smallest multiple of `m` that is `>= n`.
pub fn round_up(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}

/// Mirror index for reflect padding; repeats the reflection for pads larger
/// than the signal.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Reflect-pads the bottom and right of `(B, C, H, W)` to `(ph, pw)`.
pub fn pad_reflect_to(x: &Tensor, ph: usize, pw: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if ph < h || pw < w {
        return Err(NvcError::Shape(format!("cannot pad {h}x{w} down to {ph}x{pw}")));
    }
    if (ph, pw) == (h, w) {
        return Ok(x.clone());
    }
    let rows: Vec<u32> = (0..ph).map(|i| reflect(i as isize, h) as u32).collect();
    let cols: Vec<u32> = (0..pw).map(|i| reflect(i as isize, w) as u32).collect();
    let rows = Tensor::from_vec(rows, ph, x.device())?;
    let cols = Tensor::from_vec(cols, pw, x.device())?;
    Ok(x.index_select(&rows, 2)?.index_select(&cols, 3)?)
}

/// Reflect-pads to the next multiple of 64 in both dimensions.
pub fn pad_frame(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    pad_reflect_to(x, round_up(h, PAD_MULTIPLE), round_up(w, PAD_MULTIPLE))
}

/// Top-left `h x w` crop.
pub fn crop(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    Ok(x.narrow(2, 0, h)?.narrow(3, 0, w)?)
}

/// Interleaved 8-bit RGB to a `(1, 3, H, W)` f32 tensor.
pub fn rgb8_to_tensor(rgb: &[u8], width: usize, height: usize) -> Result<Tensor> {
    if rgb.len() != width * height * 3 {
        return Err(NvcError::Shape("rgb buffer size mismatch".into()));
    }
    let mut planar = vec![0f32; rgb.len()];
    for (i, px) in rgb.chunks_exact(3).enumerate() {
        for c in 0..3 {
            planar[c * width * height + i] = px[c] as f32 / 255.0;
        }
    }
    Ok(Tensor::from_vec(planar, (1, 3, height, width), &Device::Cpu)?)
}

/// `(1, 3, H, W)` in `[0, 1]` to interleaved 8-bit RGB (rounded, clamped).
pub fn tensor_to_rgb8(x: &Tensor) -> Result<(Vec<u8>, usize, usize)> {
    let (_, c, h, w) = x.dims4()?;
    if c != 3 {
        return Err(NvcError::Shape("expected 3 channels".into()));
    }
    let v = x.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?;
    let mut out = vec![0u8; h * w * 3];
    for i in 0..h * w {
        for ch in 0..3 {
            out[i * 3 + ch] = (v[ch * h * w + i] * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok((out, w, h))
}

pub fn read_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    rgb8_to_tensor(img.as_raw(), w as usize, h as usize)
}

pub fn write_png(path: &Path, x: &Tensor) -> Result<()> {
    let (buf, w, h) = tensor_to_rgb8(x)?;
    image::save_buffer(path, &buf, w as u32, h as u32, image::ExtendedColorType::Rgb8)?;
    Ok(())
}

/// PNG files of a directory in natural (numeric-aware) name order.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    let key = |p: &PathBuf| {
        let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("").to_string();
        let digits: String = stem.chars().filter(|c| c.is_ascii_digit()).collect();
        (digits.parse::<u64>().unwrap_or(u64::MAX), stem)
    };
    files.sort_by_key(key);
    Ok(files)
}

pub fn read_png_dir(dir: &Path) -> Result<Vec<Frame>> {
    list_pngs(dir)?
        .iter()
        .enumerate()
        .map(|(i, p)| Frame::new(read_png(p)?, i))
        .collect()
}

/// Writes frames as `00000.png`, `00001.png`, ... into `dir`.
pub fn write_png_dir(dir: &Path, frames: &[Tensor]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, f) in frames.iter().enumerate() {
        write_png(&dir.join(format!("{i:05}.png")), f)?;
    }
    Ok(())
}

// BT.709 limited-range conversion.
const KR: f64 = 0.2126;
const KB: f64 = 0.0722;

fn yuv_to_rgb(y: u8, u: u8, v: u8) -> [f64; 3] {
    let yf = (y as f64 - 16.0) / 219.0;
    let pb = (u as f64 - 128.0) / 224.0;
    let pr = (v as f64 - 128.0) / 224.0;
    let kg = 1.0 - KR - KB;
    let r = yf + 2.0 * (1.0 - KR) * pr;
    let b = yf + 2.0 * (1.0 - KB) * pb;
    let g = (yf - KR * r - KB * b) / kg;
    [r.clamp(0.0, 1.0), g.clamp(0.0, 1.0), b.clamp(0.0, 1.0)]
}

fn rgb_to_ycbcr(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let y = KR * r + (1.0 - KR - KB) * g + KB * b;
    let pb = (b - y) / (2.0 * (1.0 - KB));
    let pr = (r - y) / (2.0 * (1.0 - KR));
    (16.0 + 219.0 * y, 128.0 + 224.0 * pb, 128.0 + 224.0 * pr)
}

/// Reads 8-bit planar YUV 4:2:0 frames (BT.709, limited range) as RGB.
pub fn read_yuv420p(path: &Path, width: usize, height: usize) -> Result<Vec<Frame>> {
    if width % 2 != 0 || height % 2 != 0 || width == 0 || height == 0 {
        return Err(NvcError::Config(format!("yuv420p needs even dimensions, got {width}x{height}")));
    }
    let data = std::fs::read(path)?;
    let (cw, ch) = (width / 2, height / 2);
    let frame_bytes = width * height + 2 * cw * ch;
    if data.len() % frame_bytes != 0 {
        return Err(NvcError::Config(format!(
            "file size {} is not a multiple of the {width}x{height} yuv420p frame size {frame_bytes}",
            data.len()
        )));
    }
    data.chunks_exact(frame_bytes)
        .enumerate()
        .map(|(t, buf)| {
            let (yp, rest) = buf.split_at(width * height);
            let (up, vp) = rest.split_at(cw * ch);
            let mut planar = vec![0f32; 3 * width * height];
            for row in 0..height {
                for col in 0..width {
                    let ci = (row / 2) * cw + col / 2;
                    let rgb = yuv_to_rgb(yp[row * width + col], up[ci], vp[ci]);
                    for c in 0..3 {
                        planar[c * width * height + row * width + col] = rgb[c] as f32;
                    }
                }
            }
            Frame::new(Tensor::from_vec(planar, (1, 3, height, width), &Device::Cpu)?, t)
        })
        .collect()
}

/// Writes RGB frames as 8-bit planar YUV 4:2:0 (chroma averaged over 2x2).
pub fn write_yuv420p(path: &Path, frames: &[Tensor]) -> Result<()> {
    let mut out = Vec::new();
    for f in frames {
        let (_, _, h, w) = f.dims4()?;
        if w % 2 != 0 || h % 2 != 0 {
            return Err(NvcError::Config("yuv420p needs even dimensions".into()));
        }
        let v = f.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        let px = |r: usize, c: usize| {
            let i = r * w + c;
            rgb_to_ycbcr(v[i], v[h * w + i], v[2 * h * w + i])
        };
        let q = |x: f64| x.round().clamp(0.0, 255.0) as u8;
        for r in 0..h {
            for c in 0..w {
                out.push(q(px(r, c).0));
            }
        }
        for plane in 0..2 {
            for r in (0..h).step_by(2) {
                for c in (0..w).step_by(2) {
                    let mut acc = 0.0;
                    for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        let (_, cb, cr) = px(r + dr, c + dc);
                        acc += if plane == 0 { cb } else { cr };
                    }
                    out.push(q(acc / 4.0));
                }
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}
