//! Small numeric utilities shared across the crate: the standard normal
//! quantile function, linear-interpolation sample quantiles, rank
//! correlation, and deterministic seed derivation.

use crate::error::{Error, Result};

// Coefficients of Acklam's rational approximation to the inverse normal CDF.
const ACKLAM_A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.38357751867269e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const ACKLAM_B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const ACKLAM_C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const ACKLAM_D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];
const ACKLAM_P_LOW: f64 = 0.02425;

/// Quantile function of the standard normal distribution.
///
/// Acklam's rational approximation; relative error below 1.2e-9 over the
/// whole open interval, well inside the 1e-8 accuracy this crate relies on.
/// `p = 0` and `p = 1` map to the infinities.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(Error::Domain(format!(
            "normal quantile level must lie in [0,1], got {p}"
        )));
    }
    if p == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    if p == 1.0 {
        return Ok(f64::INFINITY);
    }
    let x = if p < ACKLAM_P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        horner(&ACKLAM_C, q) / (horner(&ACKLAM_D, q) * q + 1.0)
    } else if p > 1.0 - ACKLAM_P_LOW {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -horner(&ACKLAM_C, q) / (horner(&ACKLAM_D, q) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        horner(&ACKLAM_A, r) * q / (horner(&ACKLAM_B, r) * r + 1.0)
    };
    Ok(x)
}

/// Upper-tail critical value `z` with `P(Z > z) = level`, e.g.
/// `normal_upper_critical(0.05) ≈ 1.6449`.
pub fn normal_upper_critical(level: f64) -> Result<f64> {
    normal_quantile(1.0 - level)
}

fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().fold(0.0, |acc, &c| acc * x + c)
}

/// Sample quantile with linear interpolation between order statistics
/// (the "type 7" rule: index `h = (n-1)p`, interpolate between `⌊h⌋` and
/// `⌊h⌋+1`). Input must be sorted ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptyData("quantile of empty sample"));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("quantile level {p} outside [0,1]")));
    }
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n || frac == 0.0 {
        return Ok(sorted[lo.min(n - 1)]);
    }
    Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
}

/// Convenience: sort a copy and take the type-7 quantile.
pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

/// Arithmetic mean. Empty input yields an error.
pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyData("mean of empty sample"));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Population variance (denominator `n`).
pub fn population_variance(values: &[f64]) -> Result<f64> {
    let m = mean(values)?;
    Ok(values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64)
}

/// Ranks with ties sharing their average rank (1-based).
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
///
/// Returns an error when either side is constant, since the correlation
/// is undefined there.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            context: "spearman",
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::EmptyData("spearman needs at least two points"));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let ma = mean(&ra)?;
    let mb = mean(&rb)?;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in ra.iter().zip(rb.iter()) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Domain(
            "spearman undefined for a constant sequence".into(),
        ));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// 64-bit FNV-1a hash, used for stable configuration fingerprints.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a child seed from a master seed and an index.
///
/// Two rounds of the SplitMix64 finalizer over `master ^ (index+1)·φ64`.
/// The function is fixed so that replicate streams are reproducible across
/// runs and platforms.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for _ in 0..2 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}
