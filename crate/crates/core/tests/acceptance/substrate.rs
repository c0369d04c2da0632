//! Lossless substrate and rate fidelity.

use std::time::Instant;

use nvc::bitstream::{read_stream, write_stream, Chunk, FrameRecord, FrameType, StreamHeader};
use nvc::entropy::{
    build_pmf_table, estimate_bits_exact, range_decode, range_encode, Bottleneck, PmfTable, DEFAULT_PRECISION,
    FLUSH_BYTES,
};
use nvc::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Outcome;

const PAIRS: usize = 100_000;
const CONTAINER_CASES: usize = 2_000;
const TIME_LIMIT_S: f64 = 60.0;
const RATE_TOLERANCE: f64 = 0.02;

/// Random table over 1..=64 symbols, skewed or flat, summing to the precision.
fn random_table(rng: &mut ChaCha8Rng) -> Result<PmfTable> {
    let n = rng.gen_range(1..=64usize);
    let total = 1u32 << DEFAULT_PRECISION;
    let skew: f64 = rng.gen_range(0.0..8.0);
    let weights: Vec<f64> = (0..n).map(|_| rng.gen::<f64>().powf(skew)).collect();
    let sum: f64 = weights.iter().sum();
    let spare = total - n as u32;
    let mut freqs: Vec<u32> = weights.iter().map(|w| 1 + (w / sum * spare as f64) as u32).collect();
    let used: u32 = freqs.iter().sum();
    let top = rng.gen_range(0..n);
    freqs[top] += total - used;
    PmfTable::from_freqs(rng.gen_range(-40..40), freqs, DEFAULT_PRECISION)
}

fn draw(rng: &mut ChaCha8Rng, t: &PmfTable) -> i32 {
    let target = rng.gen_range(0..t.total());
    t.min_symbol + t.find(target) as i32
}

fn range_coder_fuzz() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut done, mut mismatches, mut runs) = (0, 0, 0);
    while done < PAIRS {
        let len = rng.gen_range(1..=400).min(PAIRS - done);
        let tables = (0..len).map(|_| random_table(&mut rng)).collect::<Result<Vec<_>>>()?;
        let symbols: Vec<i32> = tables.iter().map(|t| draw(&mut rng, t)).collect();
        let bytes = range_encode(&symbols, &tables)?;
        if range_decode(&bytes, &tables)? != symbols {
            mismatches += 1;
        }
        done += len;
        runs += 1;
    }
    Ok((mismatches == 0, format!("{done} pairs in {runs} runs, {mismatches} mismatches")))
}

fn random_chunk(rng: &mut ChaCha8Rng, kind: Bottleneck) -> Chunk {
    let lo = rng.gen_range(-1000..1000);
    Chunk {
        kind,
        symbol_min: lo,
        symbol_max: lo + rng.gen_range(0..500),
        payload: (0..rng.gen_range(0..200)).map(|_| rng.gen()).collect(),
    }
}

fn container_fuzz() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut roundtrip_fail, mut corrupt_accepted, mut corruptions) = (0, 0, 0);
    for _ in 0..CONTAINER_CASES {
        let gop = rng.gen_range(1..12u32);
        let count = rng.gen_range(0..25u32);
        let header = StreamHeader {
            width: rng.gen_range(1..4096),
            height: rng.gen_range(1..4096),
            gop_size: gop,
            model_id: rng.gen_range(0..4),
            frame_count: count,
        };
        let frames: Vec<FrameRecord> = (0..count)
            .map(|i| {
                if i % gop == 0 {
                    FrameRecord {
                        frame_type: FrameType::I,
                        chunks: vec![
                            random_chunk(&mut rng, Bottleneck::IntraHyper),
                            random_chunk(&mut rng, Bottleneck::IntraMain),
                        ],
                    }
                } else {
                    FrameRecord {
                        frame_type: FrameType::P,
                        chunks: [
                            Bottleneck::MotionHyper,
                            Bottleneck::MotionMain,
                            Bottleneck::ResHyper,
                            Bottleneck::ResMain,
                        ]
                        .map(|k| random_chunk(&mut rng, k))
                        .to_vec(),
                    }
                }
            })
            .collect();
        let bytes = write_stream(&header, &frames)?;
        match read_stream(&bytes) {
            Ok(s) if s.header == header && s.frames == frames => {}
            _ => roundtrip_fail += 1,
        }
        // Header corruption is caught by the checksum; truncation by length checks.
        let mut bad = bytes.clone();
        let at = rng.gen_range(0..28);
        bad[at] ^= 1 << rng.gen_range(0..8);
        corruptions += 1;
        corrupt_accepted += usize::from(read_stream(&bad).is_ok());
        if bytes.len() > 32 {
            let cut = rng.gen_range(32..bytes.len());
            corruptions += 1;
            corrupt_accepted += usize::from(read_stream(&bytes[..cut]).is_ok());
        }
    }
    Ok((
        roundtrip_fail == 0 && corrupt_accepted == 0,
        format!(
            "{CONTAINER_CASES} streams, {roundtrip_fail} round-trip failures, {corrupt_accepted}/{corruptions} corrupted streams accepted"
        ),
    ))
}

pub fn lossless() -> Result<Vec<Outcome>> {
    let t = Instant::now();
    let (rc_ok, rc) = range_coder_fuzz()?;
    let (ct_ok, ct) = container_fuzz()?;
    let secs = t.elapsed().as_secs_f64();
    Ok(vec![
        Outcome::new("1", rc_ok, format!("range coder: {rc}")),
        Outcome::new("1", ct_ok, format!("container: {ct}")),
        Outcome::new("1", secs < TIME_LIMIT_S, format!("runtime {secs:.1} s (limit {TIME_LIMIT_S} s)")),
    ])
}

/// Codes Gaussian symbols and compares the payload with the model's estimate.
pub fn rate_fidelity() -> Result<Vec<Outcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut out = Vec::new();
    let n = 20_000;
    for sigma_range in [(0.1f64, 0.5f64), (0.5, 2.0), (2.0, 10.0), (0.1, 10.0)] {
        let mut symbols = Vec::with_capacity(n);
        let (mut mu, mut sigma, mut tables) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..n {
            let m: f64 = rng.gen_range(-20.0..20.0);
            let s: f64 = rng.gen_range(sigma_range.0.ln()..sigma_range.1.ln()).exp();
            // Box-Muller sample, rounded to the integer grid.
            let (u1, u2): (f64, f64) = (rng.gen_range(1e-12..1.0), rng.gen());
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            let lo = (m - 12.0 * s).floor() as i32 - 1;
            let hi = (m + 12.0 * s).ceil() as i32 + 1;
            let sym = ((m + s * z).round() as i32).clamp(lo, hi);
            symbols.push(sym);
            mu.push(m as f32);
            sigma.push(s as f32);
            tables.push(build_pmf_table(m as f32 as f64, s as f32 as f64, lo, hi)?);
        }
        let estimate = estimate_bits_exact(&symbols, &mu, &sigma)?;
        let coded = 8.0 * range_encode(&symbols, &tables)?.len() as f64;
        let overhead = 8.0 * FLUSH_BYTES as f64;
        let rel = (coded - estimate - overhead).abs() / estimate;
        out.push(Outcome::new(
            "2",
            rel <= RATE_TOLERANCE,
            format!(
                "sigma {:?}: {coded:.0} coded vs {estimate:.0} estimated + {overhead:.0} flush bits ({:.3}%)",
                sigma_range,
                100.0 * rel
            ),
        ));
    }
    Ok(out)
}
