//! Closed-form oracles for the quantizer, warp, prediction loss, metrics and BD.

use candle_core::{DType, Device, Tensor, Var};
use nvc::bd::{bd_quality, bd_rate, RdCurve};
use nvc::entropy::{round_half_away, universal_quantize, universal_quantize_scalar, Bottleneck, QuantMode};
use nvc::mcn::pooled_pyramid;
use nvc::metrics::{ms_ssim, psnr};
use nvc::nn::pool2;
use nvc::train::{multiscale_prediction_loss, scale_weight};
use nvc::warp::{constant_flow, warp};
use nvc::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Outcome;

const WARP_TOLERANCE: f64 = 1e-6;
const GRADIENT_TOLERANCE: f64 = 1e-3;
const PSNR_TOLERANCE_DB: f64 = 0.01;
const SCALING_TOLERANCE_PCT: f64 = 0.01;
const TRAPEZOID_TOLERANCE_PCT: f64 = 0.05;
const TRAPEZOID_SAMPLES: usize = 10_000;

fn values(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
}

fn random(shape: (usize, usize, usize, usize), seed: u64, lo: f64, hi: f64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.0 * shape.1 * shape.2 * shape.3;
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
    Ok(Tensor::from_vec(v, shape, &Device::Cpu)?)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Worst relative error between analytic gradients and central differences
/// of `loss` at every `stride`-th coordinate of `base`.
fn gradient_error(
    base: &[f64],
    shape: (usize, usize, usize, usize),
    analytic: &[f64],
    stride: usize,
    loss: &dyn Fn(&Tensor) -> Result<f64>,
) -> Result<f64> {
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for i in (0..base.len()).step_by(stride) {
        let (mut p, mut m) = (base.to_vec(), base.to_vec());
        p[i] += eps;
        m[i] -= eps;
        let lp = loss(&Tensor::from_vec(p, shape, &Device::Cpu)?)?;
        let lm = loss(&Tensor::from_vec(m, shape, &Device::Cpu)?)?;
        let num = (lp - lm) / (2.0 * eps);
        let rel = (num - analytic[i]).abs() / num.abs().max(analytic[i].abs()).max(1e-4);
        worst = worst.max(rel);
    }
    Ok(worst)
}

pub fn quantizer_and_warp() -> Result<Vec<Outcome>> {
    let mut out = Vec::new();

    let cases = [(1.3, 0.2, 1.8), (0.7, -0.5, 0.5)];
    let exact = cases.iter().all(|&(x, u, want)| universal_quantize_scalar(x, u) == want)
        && round_half_away(2.5) == 3.0
        && round_half_away(-2.5) == -3.0;
    let x = Var::from_tensor(&random((1, 4, 5, 5), 1, -6.0, 6.0)?)?;
    let inferred = universal_quantize(x.as_tensor(), QuantMode::Infer, 0, Bottleneck::IntraMain)?;
    let rounded = values(x.as_tensor())?.iter().map(|v| round_half_away(*v)).collect::<Vec<_>>();
    let infer_ok = values(&inferred.values)? == rounded;
    let trained = universal_quantize(x.as_tensor(), QuantMode::Train, 9, Bottleneck::IntraMain)?;
    let grads = (&trained.values * 3.0)?.sum_all()?.backward()?;
    let g = values(grads.get(x.as_tensor()).expect("gradient reaches input"))?;
    let pass_through = g.iter().all(|&v| v == 3.0);
    out.push(Outcome::new(
        "4",
        exact && infer_ok && pass_through,
        format!("quantizer: arithmetic cases exact {exact}, inference rounding {infer_ok}, unit pass-through gradient {pass_through}"),
    ));

    let (h, w) = (12, 16);
    let img = random((1, 3, h, w), 2, 0.0, 1.0)?;
    let id = warp(&img, &constant_flow(0.0, 0.0, h, w, DType::F64)?)?;
    let identity = values(&id)? == values(&img)?;

    let shifted = values(&warp(&img, &constant_flow(3.0, 0.0, h, w, DType::F64)?)?)?;
    let src = values(&img)?;
    let mut expect = vec![0.0; src.len()];
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                expect[(c * h + y) * w + x] = src[(c * h + y) * w + (x + 3).min(w - 1)];
            }
        }
    }
    let shift_err = max_abs_diff(&shifted, &expect);

    let (a, b, c0) = (0.031, -0.017, 0.4);
    let ramp: Vec<f64> = (0..h * w).map(|i| a * (i % w) as f64 + b * (i / w) as f64 + c0).collect();
    let ramp_t = Tensor::from_vec(ramp, (1, 1, h, w), &Device::Cpu)?;
    let (dx, dy) = (0.5, 0.5);
    let warped = values(&warp(&ramp_t, &constant_flow(dx, dy, h, w, DType::F64)?)?)?;
    let mut ramp_err: f64 = 0.0;
    for y in 0..h - 1 {
        for x in 0..w - 1 {
            let want = a * (x as f64 + dx) + b * (y as f64 + dy) + c0;
            ramp_err = ramp_err.max((warped[y * w + x] - want).abs());
        }
    }
    out.push(Outcome::new(
        "4",
        identity && shift_err <= WARP_TOLERANCE && ramp_err <= WARP_TOLERANCE,
        format!("warp: zero-flow identity {identity}, integer shift error {shift_err:.1e}, half-pixel ramp error {ramp_err:.1e}"),
    ));

    let (gh, gw) = (8, 8);
    let input = random((1, 2, gh, gw), 3, 0.0, 1.0)?;
    let flow = random((1, 2, gh, gw), 4, -1.7, 1.7)?;
    let weights = random((1, 2, gh, gw), 5, 0.0, 1.0)?;
    let warp_loss = |x: &Tensor, f: &Tensor| -> Result<f64> {
        Ok((warp(x, f)? * &weights)?.sqr()?.sum_all()?.to_scalar::<f64>()?)
    };
    let xv = Var::from_tensor(&input)?;
    let fv = Var::from_tensor(&flow)?;
    let grads = (warp(xv.as_tensor(), fv.as_tensor())? * &weights)?.sqr()?.sum_all()?.backward()?;
    let gx = values(grads.get(xv.as_tensor()).expect("input gradient"))?;
    let gf = values(grads.get(fv.as_tensor()).expect("flow gradient"))?;
    let shape = (1, 2, gh, gw);
    let ex = gradient_error(&values(&input)?, shape, &gx, 3, &|x| warp_loss(x, &flow))?;
    let ef = gradient_error(&values(&flow)?, shape, &gf, 3, &|f| warp_loss(&input, f))?;

    let target = pooled_pyramid(&random((1, 3, 16, 16), 6, 0.0, 1.0)?)?;
    let pred_base = random((1, 3, 16, 16), 7, 0.0, 1.0)?;
    let pyramid_loss = |p: &Tensor| -> Result<f64> {
        Ok(multiscale_prediction_loss(&pooled_pyramid(p)?, &target)?.to_scalar::<f64>()?)
    };
    let pv = Var::from_tensor(&pred_base)?;
    let g = multiscale_prediction_loss(&pooled_pyramid(pv.as_tensor())?, &target)?.backward()?;
    let gp = values(g.get(pv.as_tensor()).expect("prediction gradient"))?;
    let el = gradient_error(&values(&pred_base)?, (1, 3, 16, 16), &gp, 5, &pyramid_loss)?;
    let worst = ex.max(ef).max(el);
    out.push(Outcome::new(
        "4",
        worst <= GRADIENT_TOLERANCE,
        format!("gradients vs central differences: warp input {ex:.1e}, warp flow {ef:.1e}, prediction loss {el:.1e}"),
    ));
    Ok(out)
}

fn constant_pyramid(fill: f64) -> Result<Vec<Tensor>> {
    (0..5)
        .map(|s| Ok(Tensor::full(fill, (1, 3, 32 >> s, 32 >> s), &Device::Cpu)?))
        .collect()
}

pub fn prediction_loss() -> Result<Vec<Outcome>> {
    let target = pooled_pyramid(&random((1, 3, 32, 32), 8, 0.0, 1.0)?)?;
    let zero = multiscale_prediction_loss(&target, &target)?.to_scalar::<f64>()?;

    let base = constant_pyramid(0.25)?;
    let eps = 0.125;
    let perturbed = |s: usize| -> Result<Vec<Tensor>> {
        let mut p = base.clone();
        p[s] = (&p[s] + eps)?;
        Ok(p)
    };
    let coarse = multiscale_prediction_loss(&perturbed(4)?, &base)?.to_scalar::<f64>()?;
    let fine = multiscale_prediction_loss(&perturbed(0)?, &base)?.to_scalar::<f64>()?;
    let ratio = coarse / fine;

    // 16x16 image x(i, j) = 16 i + j; a 2^s block mean is its centre value.
    let v: Vec<f64> = (0..256).map(|k| k as f64).collect();
    let img = Tensor::from_vec(v, (1, 1, 16, 16), &Device::Cpu)?;
    let pyr = pooled_pyramid(&img)?;
    let mut hand = true;
    for (s, level) in pyr.iter().enumerate() {
        let b = 1usize << s;
        let n = 16 / b;
        let got = values(level)?;
        let half = (b as f64 - 1.0) / 2.0;
        let want: Vec<f64> = (0..n * n)
            .map(|k| 16.0 * ((k / n * b) as f64 + half) + (k % n * b) as f64 + half)
            .collect();
        hand &= got == want;
    }
    let four = Tensor::from_vec((0..16).map(|k| k as f64).collect::<Vec<_>>(), (1, 1, 4, 4), &Device::Cpu)?;
    let half = pool2(&four)?;
    let small_ok = values(&half)? == vec![2.5, 4.5, 10.5, 12.5] && values(&pool2(&half)?)? == vec![7.5];
    Ok(vec![
        Outcome::new("5", zero == 0.0, format!("perfect prediction loss {zero}")),
        Outcome::new(
            "5",
            ratio == 256.0 && scale_weight(4) / scale_weight(0) == 256.0,
            format!("coarse to fine error ratio {ratio}"),
        ),
        Outcome::new("5", hand && small_ok, format!("pooled pyramid hand examples exact: {}", hand && small_ok)),
    ])
}

/// Cubic through four points, evaluated directly (Lagrange form).
fn lagrange(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    (0..xs.len())
        .map(|i| {
            let basis: f64 = (0..xs.len()).filter(|&j| j != i).map(|j| (x - xs[j]) / (xs[i] - xs[j])).product();
            ys[i] * basis
        })
        .sum()
}

/// BD-rate by trapezoid integration of the interpolating cubics.
fn trapezoid_bd_rate(anchor: &[(f64, f64)], test: &[(f64, f64)]) -> f64 {
    let q = |c: &[(f64, f64)]| c.iter().map(|p| p.1).collect::<Vec<_>>();
    let lr = |c: &[(f64, f64)]| c.iter().map(|p| p.0.ln()).collect::<Vec<_>>();
    let (qa, qt) = (q(anchor), q(test));
    let lo = qa.iter().cloned().fold(f64::INFINITY, f64::min).max(qt.iter().cloned().fold(f64::INFINITY, f64::min));
    let hi = qa.iter().cloned().fold(f64::NEG_INFINITY, f64::max).min(qt.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
    let diff = |x: f64| lagrange(&qt, &lr(test), x) - lagrange(&qa, &lr(anchor), x);
    let step = (hi - lo) / TRAPEZOID_SAMPLES as f64;
    let mut area = 0.5 * (diff(lo) + diff(hi));
    for k in 1..TRAPEZOID_SAMPLES {
        area += diff(lo + k as f64 * step);
    }
    ((area * step / (hi - lo)).exp() - 1.0) * 100.0
}

pub fn metrics_and_bd() -> Result<Vec<Outcome>> {
    let mut out = Vec::new();
    let a = Tensor::full(0.5f64, (1, 3, 32, 32), &Device::Cpu)?;
    let b = (&a + 1.0 / 255.0)?;
    let p = psnr(&a, &b, 1.0)?;
    out.push(Outcome::new(
        "6",
        (p - 48.13).abs() <= PSNR_TOLERANCE_DB,
        format!("PSNR at unit 8-bit MSE {p:.4} dB"),
    ));
    let img = random((1, 3, 64, 64), 9, 0.0, 1.0)?;
    let s = ms_ssim(&img, &img)?;
    out.push(Outcome::new("6", s == 1.0, format!("MS-SSIM identity {s}")));

    let anchor = RdCurve::new(vec![(0.1, 30.0), (0.2, 33.0), (0.4, 35.5), (0.8, 37.0)], "psnr", "anchor")?;
    let same = bd_rate(&anchor, &anchor)?;
    let scaled = RdCurve::new(anchor.points.iter().map(|&(r, q)| (r * 0.9, q)).collect(), "psnr", "scaled")?;
    let minus10 = bd_rate(&anchor, &scaled)?;
    let dq = bd_quality(&anchor, &anchor)?;
    out.push(Outcome::new(
        "6",
        same == 0.0 && dq == 0.0 && (minus10 + 10.0).abs() <= SCALING_TOLERANCE_PCT,
        format!("BD self-test {same}% / {dq} dB, uniform 0.9 rate scaling {minus10:.5}%"),
    ));

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut worst, mut compared): (f64, usize) = (0.0, 0);
    for _ in 0..20 {
        let curve = |rng: &mut ChaCha8Rng| {
            let mut r = rng.gen_range(0.05..0.15);
            let mut q = rng.gen_range(28.0..32.0);
            (0..4)
                .map(|_| {
                    r *= rng.gen_range(1.5..2.5);
                    q += rng.gen_range(1.0..3.0);
                    (r, q)
                })
                .collect::<Vec<_>>()
        };
        let (pa, pt) = (curve(&mut rng), curve(&mut rng));
        let ours = bd_rate(&RdCurve::new(pa.clone(), "psnr", "a")?, &RdCurve::new(pt.clone(), "psnr", "t")?);
        if let Ok(ours) = ours {
            worst = worst.max((ours - trapezoid_bd_rate(&pa, &pt)).abs());
            compared += 1;
        }
    }
    out.push(Outcome::new(
        "6",
        worst <= TRAPEZOID_TOLERANCE_PCT && compared >= 10,
        format!("worst gap to the trapezoid oracle over {compared} overlapping random curve pairs {worst:.2e} percentage points"),
    ));
    Ok(out)
}
