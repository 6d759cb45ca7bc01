//! Interval diagnostics: coverage and length summaries, deviation from the
//! analytic oracle quantiles, conditional coverage across an index
//! variable, and coverage binned by a reference interval length.

use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::net::{PiInterval, Predictor};
use crate::serde_ext;
use crate::stats::quantile_sorted;

/// Summary statistics of a batch of intervals and point predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalMetrics {
    /// Fraction of responses inside their closed interval.
    pub ave_coverage: f64,
    /// Mean interval length; `+∞` as soon as any interval is infinite.
    #[serde(with = "serde_ext::extended")]
    pub ave_length: f64,
    /// Interquartile range of the lengths (type-7 quantiles).
    #[serde(with = "serde_ext::extended")]
    pub iqr_length: f64,
    /// Mean absolute deviation of the point predictions from the responses.
    #[serde(with = "serde_ext::extended")]
    pub mad: f64,
    /// Set when any interval endpoint is infinite.
    pub has_infinite_interval: bool,
}

/// A binned diagnostic curve: per-bin coverage with the observation mass in
/// each bin. `unreliable` flags bins backed by fewer than 20 observations;
/// their coverage is `NaN` when the bin is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedCurve {
    pub centers: Vec<f64>,
    pub coverage: Vec<f64>,
    /// Fraction of retained observations per bin; sums to 1.
    pub mass: Vec<f64>,
    pub unreliable: Vec<bool>,
    /// Width of the centered moving-average smoother applied to the
    /// coverage values (1 means unsmoothed).
    pub smoothing_window: usize,
}

/// Coverage, length, and error summaries for matched slices of intervals,
/// point predictions, and responses.
pub fn interval_metrics(
    intervals: &[PiInterval],
    predictions: &[f64],
    responses: &[f64],
) -> Result<IntervalMetrics> {
    if intervals.len() != predictions.len() || intervals.len() != responses.len() {
        return Err(Error::Shape {
            context: "interval metrics",
            expected: intervals.len(),
            got: predictions.len().min(responses.len()),
        });
    }
    if intervals.is_empty() {
        return Err(Error::EmptyData("interval metrics"));
    }
    let n = intervals.len() as f64;
    let covered = intervals
        .iter()
        .zip(responses)
        .filter(|(i, &y)| i.contains(y))
        .count() as f64;
    let mut lengths: Vec<f64> = intervals.iter().map(PiInterval::length).collect();
    let has_infinite = lengths.iter().any(|l| !l.is_finite());
    let ave_length = if has_infinite {
        f64::INFINITY
    } else {
        lengths.iter().sum::<f64>() / n
    };
    lengths.sort_by(f64::total_cmp);
    let q75 = quantile_sorted(&lengths, 0.75)?;
    let q25 = quantile_sorted(&lengths, 0.25)?;
    // saturate instead of producing NaN when both quartiles are infinite
    let iqr_length = if q75.is_infinite() {
        f64::INFINITY
    } else {
        q75 - q25
    };
    let mad = predictions
        .iter()
        .zip(responses)
        .map(|(m, y)| (m - y).abs())
        .sum::<f64>()
        / n;
    Ok(IntervalMetrics {
        ave_coverage: covered / n,
        ave_length,
        iqr_length,
        mad,
        has_infinite_interval: has_infinite,
    })
}

/// Total mean absolute deviation of the predicted triple from the analytic
/// oracle quantiles at level `alpha`, summed over the three outputs.
/// Returns `+∞` when the predictor emits infinite bounds.
pub fn quantile_mad_vs_oracle<P: Predictor + ?Sized>(
    net: &P,
    spec: &SyntheticSpec,
    test_points: &[Vec<f64>],
    alpha: f64,
) -> Result<f64> {
    if test_points.is_empty() {
        return Err(Error::EmptyData("oracle deviation test points"));
    }
    let mut lowers = Vec::with_capacity(test_points.len());
    let mut medians = Vec::with_capacity(test_points.len());
    let mut uppers = Vec::with_capacity(test_points.len());
    let mut oracles = Vec::with_capacity(test_points.len());
    for x in test_points {
        oracles.push(crate::data::oracle_quantiles(x, spec, alpha)?);
        let t = net.predict_triple(x);
        lowers.push(t.lower);
        medians.push(t.median);
        uppers.push(t.upper);
    }
    quantile_mad_vs_oracle_parts(&lowers, &medians, &uppers, &oracles)
}

/// The same deviation computed from already-assembled endpoint slices.
pub fn quantile_mad_vs_oracle_parts(
    lowers: &[f64],
    medians: &[f64],
    uppers: &[f64],
    oracles: &[crate::data::OracleTriple],
) -> Result<f64> {
    let n = oracles.len();
    if n == 0 {
        return Err(Error::EmptyData("oracle deviation test points"));
    }
    if lowers.len() != n || medians.len() != n || uppers.len() != n {
        return Err(Error::Shape {
            context: "oracle deviation",
            expected: n,
            got: lowers.len().min(medians.len()).min(uppers.len()),
        });
    }
    let mut dev_lower = 0.0;
    let mut dev_median = 0.0;
    let mut dev_upper = 0.0;
    for i in 0..n {
        if !lowers[i].is_finite() || !uppers[i].is_finite() {
            return Ok(f64::INFINITY);
        }
        dev_lower += (lowers[i] - oracles[i].lower).abs();
        dev_median += (medians[i] - oracles[i].median).abs();
        dev_upper += (uppers[i] - oracles[i].upper).abs();
    }
    let n = n as f64;
    Ok(dev_lower / n + dev_median / n + dev_upper / n)
}

fn bin_index(value: f64, min: f64, width: f64, bins: usize) -> usize {
    (((value - min) / width).floor() as usize).min(bins - 1)
}

/// Per-bin empirical coverage across an index variable (equal-width bins
/// over the observed index range). Bins holding fewer than 20 observations
/// are flagged unreliable.
pub fn conditional_coverage(
    intervals: &[PiInterval],
    responses: &[f64],
    index_values: &[f64],
    bins: usize,
) -> Result<BinnedCurve> {
    if intervals.len() != responses.len() || intervals.len() != index_values.len() {
        return Err(Error::Shape {
            context: "conditional coverage",
            expected: intervals.len(),
            got: responses.len().min(index_values.len()),
        });
    }
    if intervals.is_empty() {
        return Err(Error::EmptyData("conditional coverage"));
    }
    if bins < 2 {
        return Err(Error::Domain(format!("need at least 2 bins, got {bins}")));
    }
    let min = index_values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = index_values
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if min.is_nan() || max <= min {
        return Err(Error::Domain(
            "degenerate index range for conditional coverage".into(),
        ));
    }
    let width = (max - min) / bins as f64;
    let mut counts = vec![0usize; bins];
    let mut covered = vec![0usize; bins];
    for ((interval, &y), &v) in intervals.iter().zip(responses).zip(index_values) {
        let b = bin_index(v, min, width, bins);
        counts[b] += 1;
        if interval.contains(y) {
            covered[b] += 1;
        }
    }
    let n = intervals.len() as f64;
    Ok(BinnedCurve {
        centers: (0..bins).map(|b| min + (b as f64 + 0.5) * width).collect(),
        coverage: counts
            .iter()
            .zip(&covered)
            .map(|(&c, &k)| {
                if c == 0 {
                    f64::NAN
                } else {
                    k as f64 / c as f64
                }
            })
            .collect(),
        mass: counts.iter().map(|&c| c as f64 / n).collect(),
        unreliable: counts.iter().map(|&c| c < 20).collect(),
        smoothing_window: 1,
    })
}

/// Default smoothing window (in bins) for [`coverage_by_length`].
pub const LENGTH_CURVE_WINDOW: usize = 9;

/// Coverage of each method binned by a reference interval length.
///
/// The top and bottom `trim` fraction of reference lengths are removed
/// (`⌈trim·n⌉` observations from each tail), the remainder is split into
/// `bins` equal-width bins, per-bin coverage is computed per method and
/// smoothed with a centered moving average (window shrinks at the edges),
/// and the retained length mass is reported alongside.
pub fn coverage_by_length(
    reference_lengths: &[f64],
    methods: &[(String, Vec<bool>)],
    bins: usize,
    trim: f64,
) -> Result<Vec<(String, BinnedCurve)>> {
    let n = reference_lengths.len();
    if n < 200 {
        return Err(Error::Domain(format!(
            "coverage-by-length needs at least 200 observations, got {n}"
        )));
    }
    if !(0.0..0.5).contains(&trim) {
        return Err(Error::Domain(format!(
            "trim fraction {trim} outside [0, 0.5)"
        )));
    }
    if bins < 2 {
        return Err(Error::Domain(format!("need at least 2 bins, got {bins}")));
    }
    for (name, flags) in methods {
        if flags.len() != n {
            return Err(Error::Shape {
                context: "coverage-by-length method flags",
                expected: n,
                got: flags.len(),
            });
        }
        let _ = name;
    }
    let cut = (trim * n as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| reference_lengths[a].total_cmp(&reference_lengths[b]));
    let retained = &order[cut..n - cut];
    if retained.is_empty() {
        return Err(Error::Domain("trimming removed every observation".into()));
    }
    if retained.iter().any(|&i| !reference_lengths[i].is_finite()) {
        return Err(Error::NonFinite("reference lengths after trimming".into()));
    }
    let min = reference_lengths[retained[0]];
    let max = reference_lengths[retained[retained.len() - 1]];
    if min.is_nan() || max <= min {
        return Err(Error::Domain("degenerate reference length range".into()));
    }
    let width = (max - min) / bins as f64;
    let centers: Vec<f64> = (0..bins).map(|b| min + (b as f64 + 0.5) * width).collect();
    let mut counts = vec![0usize; bins];
    for &i in retained {
        counts[bin_index(reference_lengths[i], min, width, bins)] += 1;
    }
    let total = retained.len() as f64;
    let mass: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
    let unreliable: Vec<bool> = counts.iter().map(|&c| c < 20).collect();

    let mut out = Vec::with_capacity(methods.len());
    for (name, flags) in methods {
        let mut covered = vec![0usize; bins];
        for &i in retained {
            if flags[i] {
                covered[bin_index(reference_lengths[i], min, width, bins)] += 1;
            }
        }
        let raw: Vec<f64> = counts
            .iter()
            .zip(&covered)
            .map(|(&c, &k)| {
                if c == 0 {
                    f64::NAN
                } else {
                    k as f64 / c as f64
                }
            })
            .collect();
        out.push((
            name.clone(),
            BinnedCurve {
                centers: centers.clone(),
                coverage: smooth(&raw, LENGTH_CURVE_WINDOW),
                mass: mass.clone(),
                unreliable: unreliable.clone(),
                smoothing_window: LENGTH_CURVE_WINDOW,
            },
        ));
    }
    Ok(out)
}

/// Centered moving average that shrinks at the edges and skips undefined
/// (NaN) bins.
fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = values.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            let defined: Vec<f64> = values[lo..=hi]
                .iter()
                .copied()
                .filter(|v| !v.is_nan())
                .collect();
            if defined.is_empty() {
                f64::NAN
            } else {
                defined.iter().sum::<f64>() / defined.len() as f64
            }
        })
        .collect()
}
