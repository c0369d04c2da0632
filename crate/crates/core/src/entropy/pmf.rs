use super::gaussian::gaussian_pmf;
use crate::error::{NvcError, Result};

/// Table precision in bits; every table sums to `1 << DEFAULT_PRECISION`.
pub const DEFAULT_PRECISION: u32 = 16;

/// Discretized, integer-frequency view of one element's probability model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PmfTable {
    pub min_symbol: i32,
    pub max_symbol: i32,
    pub freqs: Vec<u32>,
    /// Cumulative frequencies, `cum[i] = sum(freqs[..i])`, length `freqs.len() + 1`.
    pub cum: Vec<u32>,
    pub precision: u32,
}

impl PmfTable {
    pub fn total(&self) -> u32 {
        1 << self.precision
    }

    /// Builds a table from explicit frequencies; they must be >= 1 and sum to `1 << precision`.
    pub fn from_freqs(min_symbol: i32, freqs: Vec<u32>, precision: u32) -> Result<Self> {
        if freqs.is_empty() {
            return Err(NvcError::EmptyRange {
                min: min_symbol,
                max: min_symbol - 1,
            });
        }
        if freqs.iter().any(|&f| f == 0) {
            return Err(NvcError::CorruptStream("zero frequency in table".into()));
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u32;
        cum.push(0);
        for &f in &freqs {
            acc += f;
            cum.push(acc);
        }
        if acc != 1 << precision {
            return Err(NvcError::CorruptStream(format!(
                "table sums to {acc}, expected {}",
                1u32 << precision
            )));
        }
        Ok(Self {
            min_symbol,
            max_symbol: min_symbol + freqs.len() as i32 - 1,
            freqs,
            cum,
            precision,
        })
    }

    /// Uniform table over `[min, max]`; only valid when the alphabet size divides the total.
    pub fn uniform(min: i32, max: i32, precision: u32) -> Result<Self> {
        let n = (max - min + 1) as u32;
        let total = 1u32 << precision;
        if n == 0 || total % n != 0 {
            return Err(NvcError::AlphabetTooLarge(n as usize));
        }
        Self::from_freqs(min, vec![total / n; n as usize], precision)
    }

    /// `(cumulative start, frequency)` of `symbol`.
    pub fn interval(&self, symbol: i32) -> Result<(u32, u32)> {
        if symbol < self.min_symbol || symbol > self.max_symbol {
            return Err(NvcError::SymbolOutOfRange {
                symbol,
                min: self.min_symbol,
                max: self.max_symbol,
            });
        }
        let i = (symbol - self.min_symbol) as usize;
        Ok((self.cum[i], self.freqs[i]))
    }

    /// Index of the bin containing cumulative `target` (< total).
    pub fn find(&self, target: u32) -> usize {
        self.cum.partition_point(|&c| c <= target) - 1
    }
}

/// Discretizes `N(mu, sigma^2)` over `[min_symbol, max_symbol]`.
///
/// Fixed-point rule: each symbol first gets one count, the remaining
/// `total - n` counts are split as `floor(p_i / sum(p) * (total - n))`, and
/// whatever is left over goes to the most probable bin (lowest index on ties).
/// Probabilities come from `libm::erfc` in f64, which is a pure software
/// routine, so tables are identical on every platform for equal inputs.
pub fn build_pmf_table(mu: f64, sigma: f64, min_symbol: i32, max_symbol: i32) -> Result<PmfTable> {
    build_pmf_table_with_precision(mu, sigma, min_symbol, max_symbol, DEFAULT_PRECISION)
}

pub(crate) fn build_pmf_table_with_precision(
    mu: f64,
    sigma: f64,
    min_symbol: i32,
    max_symbol: i32,
    precision: u32,
) -> Result<PmfTable> {
    if min_symbol > max_symbol {
        return Err(NvcError::EmptyRange {
            min: min_symbol,
            max: max_symbol,
        });
    }
    let n = (max_symbol as i64 - min_symbol as i64 + 1) as usize;
    let total = 1u64 << precision;
    if n as u64 > total / 2 {
        return Err(NvcError::AlphabetTooLarge(n));
    }
    let probs: Vec<f64> = (min_symbol..=max_symbol)
        .map(|s| gaussian_pmf(s as f64, mu, sigma))
        .collect();
    let mass: f64 = probs.iter().sum();
    let budget = (total - n as u64) as f64;
    let mut freqs: Vec<u32> = probs
        .iter()
        .map(|&p| 1 + (p / mass * budget).floor() as u32)
        .collect();
    let used: u64 = freqs.iter().map(|&f| f as u64).sum();
    let mut best = 0;
    for (i, &f) in freqs.iter().enumerate() {
        if f > freqs[best] {
            best = i;
        }
    }
    freqs[best] += (total - used) as u32;
    PmfTable::from_freqs(min_symbol, freqs, precision)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::SIGMA_MIN;

    #[test]
    fn standard_normal_center_bin() {
        let t = build_pmf_table(0.0, 1.0, -8, 8).unwrap();
        assert_eq!(t.cum.last().copied(), Some(1 << 16));
        let (_, f) = t.interval(0).unwrap();
        let p = f as f64 / 65536.0;
        assert!((p - 0.382925).abs() <= 1.0 / 256.0, "{p}");
    }

    #[test]
    fn degenerate_alphabet() {
        let t = build_pmf_table(0.3, 2.0, 0, 0).unwrap();
        assert_eq!(t.freqs, vec![1 << 16]);
    }

    #[test]
    fn min_sigma_keeps_every_symbol_codable() {
        let t = build_pmf_table(0.0, SIGMA_MIN, -20, 20).unwrap();
        assert!(t.freqs.iter().all(|&f| f >= 1));
        assert_eq!(t.freqs.iter().map(|&f| f as u64).sum::<u64>(), 1 << 16);
    }

    #[test]
    fn empty_range_rejected() {
        assert!(matches!(
            build_pmf_table(0.0, 1.0, 3, 2),
            Err(NvcError::EmptyRange { .. })
        ));
    }

    #[test]
    fn find_inverts_interval() {
        let t = build_pmf_table(1.2, 3.0, -10, 12).unwrap();
        for s in -10..=12 {
            let (start, f) = t.interval(s).unwrap();
            assert_eq!(t.find(start), (s + 10) as usize);
            assert_eq!(t.find(start + f - 1), (s + 10) as usize);
        }
    }
}
