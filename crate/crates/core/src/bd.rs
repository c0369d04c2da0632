//! Bjontegaard delta metrics.
//!
//! Classic method: fit a cubic polynomial per curve (log rate against
//! quality for BD-rate, quality against log rate for BD-quality), integrate
//! both fits analytically over the overlapping interval and compare averages.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{NvcError, Result};

/// RD curve: `(bpp, quality)` points sorted by rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RdCurve {
    pub points: Vec<(f64, f64)>,
    pub metric: String,
    pub tag: String,
}

impl RdCurve {
    pub fn new(mut points: Vec<(f64, f64)>, metric: &str, tag: &str) -> Result<Self> {
        if points.iter().any(|(r, q)| !r.is_finite() || !q.is_finite() || *r <= 0.0) {
            return Err(NvcError::Curve("rates must be positive and all values finite".into()));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(NvcError::Curve("bpp values must be strictly increasing".into()));
        }
        Ok(Self {
            points,
            metric: metric.to_string(),
            tag: tag.to_string(),
        })
    }

    fn require_bd(&self) -> Result<()> {
        if self.points.len() < 4 {
            return Err(NvcError::Curve(format!(
                "curve '{}' has {} points, BD metrics need at least 4",
                self.tag,
                self.points.len()
            )));
        }
        Ok(())
    }

    /// Reads `bpp,quality` rows (header optional).
    pub fn from_csv(path: &std::path::Path, metric: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
        let mut pts = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let (Some(a), Some(b)) = (rec.get(0), rec.get(1)) else { continue };
            match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
                (Ok(r), Ok(q)) => pts.push((r, q)),
                _ => continue,
            }
        }
        let tag = path.file_stem().and_then(|s| s.to_str()).unwrap_or("curve");
        Self::new(pts, metric, tag)
    }
}

/// Least-squares cubic in a normalized variable; coefficients low to high.
struct Cubic {
    coef: [f64; 4],
    center: f64,
    scale: f64,
}

impl Cubic {
    fn fit(xs: &[f64], ys: &[f64]) -> Result<Self> {
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let center = 0.5 * (lo + hi);
        let scale = (0.5 * (hi - lo)).max(1e-12);
        let a = DMatrix::from_fn(xs.len(), 4, |r, c| ((xs[r] - center) / scale).powi(c as i32));
        let b = DVector::from_column_slice(ys);
        let sol = a
            .svd(true, true)
            .solve(&b, 1e-14)
            .map_err(|e| NvcError::Curve(format!("cubic fit failed: {e}")))?;
        Ok(Self {
            coef: [sol[0], sol[1], sol[2], sol[3]],
            center,
            scale,
        })
    }

    /// Exact integral over `[a, b]` in the original variable.
    fn integrate(&self, a: f64, b: f64) -> f64 {
        let prim = |x: f64| {
            let t = (x - self.center) / self.scale;
            self.scale * self.coef.iter().enumerate().map(|(k, c)| c * t.powi(k as i32 + 1) / (k as f64 + 1.0)).sum::<f64>()
        };
        prim(b) - prim(a)
    }
}

fn overlap(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = min(a).max(min(b));
    let hi = max(a).min(max(b));
    if hi <= lo {
        return Err(NvcError::Curve(format!("ranges do not overlap ({lo} >= {hi})")));
    }
    Ok((lo, hi))
}

/// Average rate difference of `test` relative to `anchor` at equal quality, in percent.
pub fn bd_rate(anchor: &RdCurve, test: &RdCurve) -> Result<f64> {
    anchor.require_bd()?;
    test.require_bd()?;
    let qa: Vec<f64> = anchor.points.iter().map(|p| p.1).collect();
    let qt: Vec<f64> = test.points.iter().map(|p| p.1).collect();
    let la: Vec<f64> = anchor.points.iter().map(|p| p.0.ln()).collect();
    let lt: Vec<f64> = test.points.iter().map(|p| p.0.ln()).collect();
    let (lo, hi) = overlap(&qa, &qt)?;
    let fa = Cubic::fit(&qa, &la)?;
    let ft = Cubic::fit(&qt, &lt)?;
    let avg = (ft.integrate(lo, hi) - fa.integrate(lo, hi)) / (hi - lo);
    Ok((avg.exp() - 1.0) * 100.0)
}

/// Average quality difference of `test` minus `anchor` at equal rate.
pub fn bd_quality(anchor: &RdCurve, test: &RdCurve) -> Result<f64> {
    anchor.require_bd()?;
    test.require_bd()?;
    let la: Vec<f64> = anchor.points.iter().map(|p| p.0.ln()).collect();
    let lt: Vec<f64> = test.points.iter().map(|p| p.0.ln()).collect();
    let qa: Vec<f64> = anchor.points.iter().map(|p| p.1).collect();
    let qt: Vec<f64> = test.points.iter().map(|p| p.1).collect();
    let (lo, hi) = overlap(&la, &lt)?;
    let fa = Cubic::fit(&la, &qa)?;
    let ft = Cubic::fit(&lt, &qt)?;
    Ok((ft.integrate(lo, hi) - fa.integrate(lo, hi)) / (hi - lo))
}
