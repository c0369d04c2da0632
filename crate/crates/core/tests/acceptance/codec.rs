//! Encoder/decoder synchronization and context-model causality.

use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use nvc::bitstream::NvcBitstream;
use nvc::latent::LatentCodec;
use nvc::model::{ModelConfig, NvcModel};
use nvc::pipeline::{decode_sequence, encode_sequence, CodecConfig};
use nvc::train::data::{generate_clip, ClipSpec, MotionKind};
use nvc::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Outcome;

const SYNC_FRAMES: usize = 30;
const SYNC_GOP: usize = 10;
const SYNC_LIMIT_S: f64 = 300.0;

fn bits_of(t: &Tensor) -> Result<Vec<u32>> {
    Ok(t.flatten_all()?.to_dtype(DType::F32)?.to_vec1::<f32>()?.iter().map(|v| v.to_bits()).collect())
}

pub fn synchronization() -> Result<Vec<Outcome>> {
    let t = Instant::now();
    let model = NvcModel::new(ModelConfig::toy())?;
    let temporal = model.config.temporal_priors && model.motion.temporal_priors;
    // Odd size exercises padding; motion kinds switch per GOP.
    let mut frames = Vec::new();
    for (g, kind) in [MotionKind::Translation, MotionKind::Rotation, MotionKind::Occlusion].into_iter().enumerate() {
        let spec = ClipSpec {
            height: 72,
            width: 100,
            ..ClipSpec::new(kind, 0, SYNC_GOP, 40 + g as u64)
        };
        frames.extend(generate_clip(&spec)?.frames);
    }
    let cfg = CodecConfig {
        gop_size: SYNC_GOP,
        ..CodecConfig::default()
    };
    let enc = encode_sequence(&model, &frames, &cfg)?;
    let bytes = enc.bitstream.to_bytes()?;
    let dec = decode_sequence(&model, &NvcBitstream::from_bytes(&bytes)?)?;
    let mut mismatched = 0;
    for (a, b) in enc.recon.iter().zip(&dec.frames) {
        mismatched += usize::from(bits_of(a)? != bits_of(b)?);
    }
    let p_frames = enc.stats.iter().filter(|s| s.motion_bytes > 0).count();
    let secs = t.elapsed().as_secs_f64();
    let pass = temporal
        && frames.len() == SYNC_FRAMES
        && dec.frames.len() == SYNC_FRAMES
        && mismatched == 0
        && p_frames == SYNC_FRAMES - SYNC_FRAMES / SYNC_GOP
        && secs < SYNC_LIMIT_S;
    Ok(vec![Outcome::new(
        "3",
        pass,
        format!(
            "{} frames, {} GOPs, {} bytes, temporal priors {temporal}, {mismatched} frames differ, {secs:.1} s (limit {SYNC_LIMIT_S} s)",
            dec.frames.len(),
            SYNC_FRAMES / SYNC_GOP,
            bytes.len()
        ),
    )])
}

struct Probe {
    checked: usize,
    violations: usize,
    influenced: usize,
}

/// Perturbs every latent element in turn and checks that no element at or
/// before it sees a different `(mu, sigma)`, on both the batched training path
/// and the sequential coding path.
fn probe(codec: &LatentCodec, y: &Tensor, h_prev: Option<&Tensor>, seed: u64) -> Result<Probe> {
    let (_, n, h, w) = y.dims4()?;
    let len = n * h * w;
    let z_hat = codec.hyper_enc.forward(y)?.round()?;
    let hyper = codec.hyper_dec.forward(&z_hat)?;
    let eval = codec.evaluator(&z_hat, (n, h, w), h_prev)?;
    let base: Vec<f64> = y.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
    let params = |v: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let t = Tensor::from_vec(v.to_vec(), (1, n, h, w), &Device::Cpu)?.to_dtype(y.dtype())?;
        let p = codec.context.params(&t, &hyper, h_prev)?;
        let f = |x: &Tensor| -> Result<Vec<f64>> { Ok(x.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?) };
        Ok((f(&p.mu)?, f(&p.sigma)?))
    };
    let (bm, bs) = params(&base)?;
    let seq_base: Vec<(f64, f64)> = (0..len).map(|i| eval.params_at(&base, i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Probe {
        checked: 0,
        violations: 0,
        influenced: 0,
    };
    for j in 0..len {
        let mut v = base.clone();
        v[j] += if rng.gen() { 7.0 } else { -7.0 };
        let (pm, ps) = params(&v)?;
        for i in 0..=j {
            p.checked += 1;
            let seq = eval.params_at(&v, i);
            if pm[i] != bm[i] || ps[i] != bs[i] || seq != seq_base[i] {
                p.violations += 1;
            }
        }
        p.influenced += usize::from((j + 1..len).any(|i| pm[i] != bm[i] || ps[i] != bs[i]));
    }
    Ok(p)
}

pub fn causality() -> Result<Vec<Outcome>> {
    let model = NvcModel::new(ModelConfig::toy())?;
    let frames = generate_clip(&ClipSpec::new(MotionKind::Translation, 64, 2, 5))?.frames;
    let intra_y = model.intra.encoder.forward(&frames[0])?.round()?;
    let motion_y = model.motion.encoder.forward(&Tensor::cat(&[&frames[0], &frames[1]], 1)?)?.round()?;
    let res_y = model.residual.encoder.forward(&(&frames[1] - &frames[0])?)?.round()?;
    let (_, n, h, w) = motion_y.dims4()?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let hv: Vec<f32> = (0..n * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let h_prev = Tensor::from_vec(hv, (1, n, h, w), &Device::Cpu)?;
    let mut out = Vec::new();
    for (name, codec, y, hp) in [
        ("intra", &model.intra.latent, &intra_y, None),
        ("motion", &model.motion.latent, &motion_y, Some(&h_prev)),
        ("residual", &model.residual.latent, &res_y, None),
    ] {
        let p = probe(codec, y, hp, 11)?;
        let len = y.elem_count();
        out.push(Outcome::new(
            "8",
            p.violations == 0 && p.influenced > len / 2,
            format!(
                "{name}: {} causal pairs checked, {} violations, {}/{len} perturbations reach later elements",
                p.checked, p.violations, p.influenced
            ),
        ));
    }
    Ok(out)
}
