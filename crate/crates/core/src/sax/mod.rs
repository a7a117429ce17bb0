//! Missingness-aware symbolic aggregate approximation.
//!
//! Series are z-normalized, compressed by piecewise aggregation and mapped to
//! `1..=alpha` through equiprobable Gaussian breakpoints. Symbol `0` is
//! reserved for windows of a missing modality.

pub mod normal;

use crate::error::{MaestroError, Result};

pub use normal::{normal_cdf, normal_quantile};

/// Reserved symbol for missing windows.
pub const MISSING: u16 = 0;

/// Standard-deviation guard below which a series counts as constant.
pub const STD_EPS: f64 = 1e-8;

/// One variate of one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    pub values: Vec<f64>,
    pub sample_rate: f64,
}

impl RawSeries {
    pub fn new(values: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(MaestroError::contract("series must hold at least one sample"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MaestroError::numeric("raw_series", "non-finite sample"));
        }
        Ok(Self {
            values,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PaaSeries {
    pub values: Vec<f64>,
    pub source_length: usize,
}

impl PaaSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Nominal `T / W`; segments actually differ by at most one sample.
    pub fn segment_length(&self) -> f64 {
        self.source_length as f64 / self.values.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolSequence {
    pub symbols: Vec<u16>,
    pub modality_id: usize,
    pub variate_id: usize,
}

impl SymbolSequence {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn is_fully_missing(&self) -> bool {
        self.symbols.iter().all(|&s| s == MISSING)
    }
}

/// Z-normalization with population stddev; constant series map to zeros.
pub fn znormalize(series: &RawSeries) -> RawSeries {
    let n = series.values.len() as f64;
    let mean = series.values.iter().sum::<f64>() / n;
    let var = series.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let values = if std > STD_EPS {
        series.values.iter().map(|v| (v - mean) / std).collect()
    } else {
        vec![0.0; series.values.len()]
    };
    RawSeries {
        values,
        sample_rate: series.sample_rate,
    }
}

/// `[start, end)` of each of `w` segments over `t` samples. The first
/// `t mod w` segments get `ceil(t/w)` samples, the rest `floor(t/w)`.
pub fn segment_bounds(t: usize, w: usize) -> Vec<(usize, usize)> {
    let base = t / w;
    let extra = t % w;
    let mut out = Vec::with_capacity(w);
    let mut start = 0;
    for i in 0..w {
        let len = base + usize::from(i < extra);
        out.push((start, start + len));
        start += len;
    }
    out
}

pub fn paa_compress(series: &RawSeries, w: usize) -> Result<PaaSeries> {
    let t = series.values.len();
    if w == 0 || w > t {
        return Err(MaestroError::contract(format!(
            "segment count {w} must be in 1..={t}"
        )));
    }
    let values = segment_bounds(t, w)
        .into_iter()
        .map(|(a, b)| series.values[a..b].iter().sum::<f64>() / (b - a) as f64)
        .collect();
    Ok(PaaSeries {
        values,
        source_length: t,
    })
}

/// Gaussian breakpoints and reconstruction levels for an alphabet.
#[derive(Clone, Debug, PartialEq)]
pub struct SaxCodec {
    alphabet_size: usize,
    breakpoints: Vec<f64>,
    symbol_values: Vec<f64>,
}

impl SaxCodec {
    /// Breakpoints at Φ⁻¹(k/α), levels at Φ⁻¹((k+½)/α).
    pub fn new(alphabet_size: usize) -> Result<Self> {
        if alphabet_size < 2 {
            return Err(MaestroError::contract(format!(
                "alphabet size {alphabet_size} < 2"
            )));
        }
        if alphabet_size >= u16::MAX as usize {
            return Err(MaestroError::contract("alphabet does not fit in u16 symbols"));
        }
        let a = alphabet_size as f64;
        let breakpoints = (1..alphabet_size)
            .map(|k| normal_quantile(k as f64 / a))
            .collect();
        let symbol_values = (0..alphabet_size)
            .map(|k| normal_quantile((k as f64 + 0.5) / a))
            .collect();
        Ok(Self {
            alphabet_size,
            breakpoints,
            symbol_values,
        })
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Reconstruction level of each non-missing symbol, indexed by `symbol - 1`.
    pub fn symbol_values(&self) -> &[f64] {
        &self.symbol_values
    }

    /// φ: value in `(β_k, β_{k+1}]` maps to `k + 1`; breakpoint values go low.
    pub fn symbol_for(&self, value: f64) -> u16 {
        let below = self.breakpoints.partition_point(|&b| b < value);
        (below + 1) as u16
    }

    pub fn reconstruct(&self, symbol: u16) -> Option<f64> {
        if symbol == MISSING {
            None
        } else {
            self.symbol_values.get(symbol as usize - 1).copied()
        }
    }

    /// Classical SAX cell distance between two non-missing symbols.
    pub fn cell_distance(&self, a: u16, b: u16) -> f64 {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        if hi - lo <= 1 {
            0.0
        } else {
            // regions are 1-based symbols; region r spans (β_{r-1}, β_r]
            self.breakpoints[hi as usize - 2] - self.breakpoints[lo as usize - 1]
        }
    }

    /// Encodes a PAA word; windows flagged in `missing` become [`MISSING`].
    pub fn encode(&self, paa: &PaaSeries, missing: &[bool]) -> Result<Vec<u16>> {
        if missing.len() != paa.values.len() {
            return Err(MaestroError::contract(format!(
                "mask length {} != word length {}",
                missing.len(),
                paa.values.len()
            )));
        }
        Ok(paa
            .values
            .iter()
            .zip(missing)
            .map(|(&v, &m)| if m { MISSING } else { self.symbol_for(v) })
            .collect())
    }

    /// MINDIST between two words of the same length built from series of
    /// length `t`: `sqrt(Σ_w n_w · dist(a_w, b_w)²)` with `n_w` the segment
    /// sizes, which is `sqrt(t/W) · sqrt(Σ dist²)` when `W` divides `t`.
    pub fn mindist(&self, a: &[u16], b: &[u16], t: usize) -> Result<f64> {
        if a.len() != b.len() {
            return Err(MaestroError::contract("mindist words differ in length"));
        }
        if a.iter().chain(b).any(|&s| s == MISSING) {
            return Err(MaestroError::contract(
                "mindist is undefined for missing symbols; mask them first",
            ));
        }
        if let Some(&s) = a.iter().chain(b).find(|&&s| s as usize > self.alphabet_size) {
            return Err(MaestroError::contract(format!("symbol {s} outside alphabet")));
        }
        let w = a.len();
        if w == 0 || w > t {
            return Err(MaestroError::contract("word length must be in 1..=T"));
        }
        let sum: f64 = segment_bounds(t, w)
            .into_iter()
            .zip(a.iter().zip(b))
            .map(|((s, e), (&x, &y))| (e - s) as f64 * self.cell_distance(x, y).powi(2))
            .sum();
        Ok(sum.sqrt())
    }
}

/// Normalize, compress and encode one variate.
pub fn encode_series(
    series: &RawSeries,
    w: usize,
    codec: &SaxCodec,
    missing: bool,
) -> Result<Vec<u16>> {
    let paa = paa_compress(&znormalize(series), w)?;
    codec.encode(&paa, &vec![missing; w])
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub eps_j: f64,
    pub eps_m: f64,
    pub holds: bool,
}

/// Evaluates the cross-modal distortion bound for one pair of samples
/// observed in two modalities, with ε taken as the actual MINDIST slack.
///
/// Inputs must already be normalized; within a modality both series share a length.
pub fn cross_modal_bound_check(
    pair_j: (&[f64], &[f64]),
    pair_m: (&[f64], &[f64]),
    codec: &SaxCodec,
    w_j: usize,
    w_m: usize,
) -> Result<BoundCheck> {
    let side = |(x, y): (&[f64], &[f64]), w: usize| -> Result<(f64, f64)> {
        if x.len() != y.len() {
            return Err(MaestroError::contract("pair series differ in length"));
        }
        let word = |s: &[f64]| -> Result<Vec<u16>> {
            let paa = paa_compress(&RawSeries::new(s.to_vec(), 1.0)?, w)?;
            codec.encode(&paa, &vec![false; w])
        };
        let sym = codec.mindist(&word(x)?, &word(y)?, x.len())?;
        Ok((sym, euclidean(x, y)))
    };
    let (sym_j, euc_j) = side(pair_j, w_j)?;
    let (sym_m, euc_m) = side(pair_m, w_m)?;
    let eps_j = euc_j - sym_j;
    let eps_m = euc_m - sym_m;
    // tolerance for rounding in the two distance computations
    if eps_j < -1e-9 || eps_m < -1e-9 {
        return Err(MaestroError::numeric(
            "cross_modal_bound_check",
            format!("MINDIST exceeds Euclidean distance (slack {eps_j:e}, {eps_m:e})"),
        ));
    }
    let lhs = (sym_j - sym_m).abs();
    let rhs = (euc_j - euc_m).abs() + eps_j + eps_m;
    Ok(BoundCheck {
        lhs,
        rhs,
        eps_j,
        eps_m,
        holds: lhs <= rhs + 1e-12,
    })
}
