//! Backward bilinear warping with border clamping.
//!
//! `out(y, x) = bilinear(input, (x + dx(y, x), y + dy(y, x)))`, where flow
//! channel 0 is `dx` and channel 1 is `dy`, both in pixels. Sample positions
//! are clamped to the image, so out-of-range samples replicate the border.
//! Built from differentiable tensor ops, so gradients flow to both the input
//! and the flow (zero flow gradient where a position is clamped).

use candle_core::{DType, IndexOp, Tensor};

use crate::error::{NvcError, Result};

pub fn warp(input: &Tensor, flow: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = input.dims4()?;
    let (fb, fc, fh, fw) = flow.dims4()?;
    if fb != b || fc != 2 || fh != h || fw != w {
        return Err(NvcError::Shape(format!(
            "flow {:?} does not match input {:?}",
            flow.dims(),
            input.dims()
        )));
    }
    let dev = input.device();
    let dtype = input.dtype();
    let flow = flow.to_dtype(dtype)?;
    let xs: Vec<f64> = (0..h * w).map(|i| (i % w) as f64).collect();
    let ys: Vec<f64> = (0..h * w).map(|i| (i / w) as f64).collect();
    let gx = Tensor::from_vec(xs, (h, w), dev)?.to_dtype(dtype)?;
    let gy = Tensor::from_vec(ys, (h, w), dev)?.to_dtype(dtype)?;
    let mut outs = Vec::with_capacity(b);
    for bi in 0..b {
        let px = (flow.i((bi, 0))? + &gx)?.clamp(0.0, (w - 1) as f64)?;
        let py = (flow.i((bi, 1))? + &gy)?.clamp(0.0, (h - 1) as f64)?;
        let pxv = px.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        let pyv = py.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        // Lower corners are kept one short of the last index so the upper
        // corner is always valid; a weight of exactly 1 then hits the edge.
        let corner = |p: f64, n: usize| -> usize {
            if n < 2 {
                0
            } else {
                (p.floor() as usize).min(n - 2)
            }
        };
        let x0: Vec<usize> = pxv.iter().map(|&p| corner(p, w)).collect();
        let y0: Vec<usize> = pyv.iter().map(|&p| corner(p, h)).collect();
        let x1: Vec<usize> = x0.iter().map(|&x| (x + 1).min(w - 1)).collect();
        let y1: Vec<usize> = y0.iter().map(|&y| (y + 1).min(h - 1)).collect();
        let as_t = |v: &[usize]| -> Result<Tensor> {
            let f: Vec<f64> = v.iter().map(|&u| u as f64).collect();
            Ok(Tensor::from_vec(f, (h, w), dev)?.to_dtype(dtype)?)
        };
        let wx = (&px - as_t(&x0)?)?.reshape((1, h * w))?;
        let wy = (&py - as_t(&y0)?)?.reshape((1, h * w))?;
        let idx = |ys: &[usize], xs: &[usize]| -> Result<Tensor> {
            let v: Vec<u32> = ys.iter().zip(xs).map(|(&y, &x)| (y * w + x) as u32).collect();
            Ok(Tensor::from_vec(v, h * w, dev)?)
        };
        let src = input.i(bi)?.reshape((c, h * w))?;
        let i00 = src.index_select(&idx(&y0, &x0)?, 1)?;
        let i01 = src.index_select(&idx(&y0, &x1)?, 1)?;
        let i10 = src.index_select(&idx(&y1, &x0)?, 1)?;
        let i11 = src.index_select(&idx(&y1, &x1)?, 1)?;
        let one_x = wx.affine(-1.0, 1.0)?;
        let one_y = wy.affine(-1.0, 1.0)?;
        let top = (i00.broadcast_mul(&one_x)? + i01.broadcast_mul(&wx)?)?;
        let bottom = (i10.broadcast_mul(&one_x)? + i11.broadcast_mul(&wx)?)?;
        let out = (top.broadcast_mul(&one_y)? + bottom.broadcast_mul(&wy)?)?;
        outs.push(out.reshape((1, c, h, w))?);
    }
    Ok(Tensor::cat(&outs, 0)?)
}

/// Constant flow field `(1, 2, h, w)`.
pub fn constant_flow(dx: f64, dy: f64, h: usize, w: usize, dtype: DType) -> Result<Tensor> {
    let mut v = vec![dx; h * w];
    v.extend(std::iter::repeat(dy).take(h * w));
    Ok(Tensor::from_vec(v, (1, 2, h, w), &candle_core::Device::Cpu)?.to_dtype(dtype)?)
}
