//! Finite-sample calibration of interval predictors on a held-out subset:
//! split-conformal expansion, the fixed-width residual variant, and
//! coverage-based selection of the training level on a grid.
//!
//! All procedures assume the predictor was produced without looking at the
//! calibration subset; that independence is what makes the rank arguments
//! behind the guarantees valid. Scores and coverage counts are symmetric
//! functions of the subset, so results are invariant under row permutation.

use serde::{Deserialize, Serialize};

use crate::data::Subset;
use crate::error::{Error, Result};
use crate::net::{PiInterval, PiTriple, Predictor};
use crate::serde_ext;

/// Result of split-conformal calibration: the expansion factor applied to
/// both half-widths of the predicted triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalCalibration {
    /// Order-statistic expansion factor; `+∞` when the rank exceeds the
    /// calibration size.
    #[serde(with = "serde_ext::extended")]
    pub c_hat: f64,
    pub alpha: f64,
    pub n2: usize,
    /// The selected rank `⌈(1-α)(n2+1)⌉`.
    pub rank: usize,
}

/// Result of fixed-width residual calibration: intervals are the median
/// plus/minus one half-width everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedWidthCalibration {
    /// Order-statistic absolute residual; `+∞` when the rank exceeds the
    /// calibration size.
    #[serde(with = "serde_ext::extended")]
    pub half_width: f64,
    pub alpha: f64,
    pub n2: usize,
    pub rank: usize,
}

/// A descending grid of training levels in `[0,1]` that contains 0.
///
/// Grids must be chosen before the calibration subset is visible; the
/// selection theory permits data-dependent grids only through the training
/// subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TauGrid(Vec<f64>);

impl TauGrid {
    pub fn new(mut values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Domain("grid values must lie in [0,1]".into()));
        }
        values.sort_by(|a, b| b.total_cmp(a));
        values.dedup();
        if values.last() != Some(&0.0) {
            return Err(Error::Domain("grid must contain 0".into()));
        }
        if values.len() < 2 {
            return Err(Error::Domain("grid needs a nonzero level".into()));
        }
        Ok(Self(values))
    }

    /// The default ten-step grid `{0.10, 0.09, …, 0.01, 0}`.
    pub fn default_ten() -> Self {
        let mut v: Vec<f64> = (1..=10).rev().map(|k| k as f64 / 100.0).collect();
        v.push(0.0);
        Self(v)
    }

    /// All levels, descending (0 last).
    pub fn levels(&self) -> &[f64] {
        &self.0
    }

    pub fn nonzero_levels(&self) -> &[f64] {
        &self.0[..self.0.len() - 1]
    }

    /// Grid size parameter `K`: the number of levels excluding 0.
    pub fn k(&self) -> usize {
        self.0.len() - 1
    }
}

impl TryFrom<Vec<f64>> for TauGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        TauGrid::new(v)
    }
}

impl From<TauGrid> for Vec<f64> {
    fn from(g: TauGrid) -> Vec<f64> {
        g.0
    }
}

/// Result of coverage-based grid selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSelection {
    /// Largest grid level whose empirical coverage meets the target; 0
    /// falls back to the trivial always-covering network.
    pub tau_hat: f64,
    /// Empirical coverage of the selected level on the calibration subset.
    pub coverage_at_tau: f64,
    pub alpha: f64,
    pub n2: usize,
    pub grid: TauGrid,
    /// Empirical coverage per grid level, in grid (descending) order.
    pub coverages: Vec<f64>,
}

/// Conservative selection: runs the grid selection at a tightened level and
/// reports whether the calibration size is large enough for the selection
/// to also guarantee average coverage at the original level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservativeSelection {
    pub selection: TauSelection,
    /// The original target miscoverage α.
    pub target_alpha: f64,
    pub epsilon: f64,
    /// Minimal calibration size for the average-coverage guarantee.
    pub required_n2: usize,
    /// Whether `n2 ≥ required_n2`.
    pub guarantee_met: bool,
}

/// Ratio with the degenerate conventions used by the conformity score:
/// positive over zero is `+∞`, zero over zero contributes 0, negative over
/// zero is `-∞` (and thus never wins the max).
#[inline]
fn score_ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num > 0.0 {
        f64::INFINITY
    } else if num == 0.0 {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

/// Conformity score of an observation against a predicted triple: the
/// smallest expansion factor (about the median) that brings the
/// observation inside the interval,
/// `max((m - y)/(m - l), (y - m)/(u - m))`.
///
/// Positive exactly when `y` differs from the median; at most 1 exactly
/// when `y` lies inside `[l, u]` (for positive widths).
pub fn conformity_score(triple: &PiTriple, y: f64) -> Result<f64> {
    if !y.is_finite() {
        return Err(Error::NonFinite("conformity score response".into()));
    }
    if !triple.median.is_finite() {
        return Err(Error::NonFinite("conformity score median".into()));
    }
    let left = score_ratio(triple.median - y, triple.median - triple.lower);
    let right = score_ratio(y - triple.median, triple.upper - triple.median);
    Ok(left.max(right))
}

/// The order-statistic rank `⌈(1-α)(n+1)⌉`.
fn conformal_rank(alpha: f64, n: usize) -> usize {
    ((1.0 - alpha) * (n + 1) as f64).ceil() as usize
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha {alpha} outside (0,1)")));
    }
    Ok(())
}

/// Calibrate the expansion factor on a held-out subset.
///
/// Computes the conformity score of every calibration observation, sorts
/// ascending, and takes the `⌈(1-α)(n2+1)⌉`-th order statistic (ties are
/// resolved by the sorted position, deterministically). When the rank
/// exceeds `n2` the factor is `+∞` and expanded intervals become the whole
/// line.
pub fn split_conformal<P: Predictor + ?Sized>(
    net: &P,
    calib: &Subset,
    alpha: f64,
) -> Result<ConformalCalibration> {
    validate_alpha(alpha)?;
    if calib.is_empty() {
        return Err(Error::EmptyData("conformal calibration subset"));
    }
    let mut scores = Vec::with_capacity(calib.len());
    for (row, &y) in calib.features.iter_rows().zip(&calib.responses) {
        scores.push(conformity_score(&net.predict_triple(row), y)?);
    }
    scores.sort_by(f64::total_cmp);
    let n2 = scores.len();
    let rank = conformal_rank(alpha, n2);
    let c_hat = if rank > n2 {
        f64::INFINITY
    } else {
        scores[rank - 1]
    };
    Ok(ConformalCalibration {
        c_hat,
        alpha,
        n2,
        rank,
    })
}

/// Expand a triple about its median by the factor `c`:
/// `[m - c·(m - l), m + c·(u - m)]`. A zero half-width stays zero under a
/// finite factor; an infinite factor yields the whole line regardless,
/// since an infinite order-statistic score must translate into an
/// always-covering interval for the rank argument to stay valid.
pub fn expand_interval(triple: &PiTriple, c: f64) -> Result<PiInterval> {
    if c.is_nan() || c <= 0.0 {
        return Err(Error::Domain(format!(
            "expansion factor must be positive, got {c}"
        )));
    }
    if c.is_infinite() {
        return PiInterval::new(f64::NEG_INFINITY, f64::INFINITY);
    }
    let scale = |width: f64| if width == 0.0 { 0.0 } else { c * width };
    PiInterval::new(
        triple.median - scale(triple.median - triple.lower),
        triple.median + scale(triple.upper - triple.median),
    )
}

/// Fixed-width calibration from absolute residuals `|y - m(x)|`: the same
/// rank rule as [`split_conformal`], and intervals `m(x) ± half_width`.
/// Valid but non-adaptive: every interval has identical width.
pub fn fixed_width_conformal<F>(
    median: F,
    calib: &Subset,
    alpha: f64,
) -> Result<FixedWidthCalibration>
where
    F: Fn(&[f64]) -> f64,
{
    validate_alpha(alpha)?;
    if calib.is_empty() {
        return Err(Error::EmptyData("conformal calibration subset"));
    }
    let mut residuals: Vec<f64> = calib
        .features
        .iter_rows()
        .zip(&calib.responses)
        .map(|(row, &y)| (y - median(row)).abs())
        .collect();
    residuals.sort_by(f64::total_cmp);
    let n2 = residuals.len();
    let rank = conformal_rank(alpha, n2);
    let half_width = if rank > n2 {
        f64::INFINITY
    } else {
        residuals[rank - 1]
    };
    Ok(FixedWidthCalibration {
        half_width,
        alpha,
        n2,
        rank,
    })
}

/// Fraction of observations inside the closed predicted interval
/// `[lower(x), upper(x)]`. The trivial predictor covers everything.
pub fn empirical_coverage<P: Predictor + ?Sized>(net: &P, data: &Subset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData("coverage subset"));
    }
    let covered = data
        .features
        .iter_rows()
        .zip(&data.responses)
        .filter(|(row, &y)| net.predict_triple(row).interval().contains(y))
        .count();
    Ok(covered as f64 / data.len() as f64)
}

/// Select the largest grid level whose empirical coverage on the
/// calibration subset reaches `1-α`.
///
/// `nets` supplies a predictor per nonzero grid level (a missing one is a
/// configuration error). Level 0 denotes the trivial network with coverage
/// 1, so the selection is always well defined.
pub fn select_tau<P: Predictor>(
    grid: &TauGrid,
    nets: &[(f64, P)],
    calib: &Subset,
    alpha: f64,
) -> Result<TauSelection> {
    validate_alpha(alpha)?;
    if calib.is_empty() {
        return Err(Error::EmptyData("selection calibration subset"));
    }
    let mut coverages = Vec::with_capacity(grid.levels().len());
    for &tau in grid.levels() {
        if tau == 0.0 {
            coverages.push(1.0);
            continue;
        }
        let net = nets
            .iter()
            .find(|(t, _)| *t == tau)
            .map(|(_, n)| n)
            .ok_or_else(|| Error::Config(format!("no trained network for grid level {tau}")))?;
        coverages.push(empirical_coverage(net, calib)?);
    }
    let threshold = 1.0 - alpha;
    let (tau_hat, coverage_at_tau) = grid
        .levels()
        .iter()
        .zip(&coverages)
        .find(|(_, &p)| p >= threshold)
        .map(|(&t, &p)| (t, p))
        .expect("level 0 always covers");
    Ok(TauSelection {
        tau_hat,
        coverage_at_tau,
        alpha,
        n2: calib.len(),
        grid: grid.clone(),
        coverages,
    })
}

/// Calibration size sufficient for the grid selection to keep its
/// conditional coverage guarantee: `⌈-log(δ/K) / (2ε²)⌉`.
pub fn selection_sample_bound(epsilon: f64, delta: f64, k: usize) -> Result<usize> {
    if !(0.0 < epsilon && epsilon < 1.0) || !(0.0 < delta && delta < 1.0) {
        return Err(Error::Domain(format!(
            "epsilon and delta must lie in (0,1), got ({epsilon}, {delta})"
        )));
    }
    if k == 0 {
        return Err(Error::Domain("grid size must be at least 1".into()));
    }
    Ok((-(delta / k as f64).ln() / (2.0 * epsilon * epsilon)).ceil() as usize)
}

/// Minimal calibration size for the conservative selection to provide
/// average coverage at level α: `⌈-2·log(ε / (2K(1-α+ε/2))) / ε²⌉`.
pub fn conservative_required_n2(alpha: f64, epsilon: f64, k: usize) -> Result<usize> {
    validate_alpha(alpha)?;
    if epsilon.is_nan() || epsilon <= 0.0 || alpha - epsilon <= 0.0 {
        return Err(Error::Domain(format!(
            "epsilon must satisfy 0 < epsilon < alpha, got epsilon {epsilon}, alpha {alpha}"
        )));
    }
    if k == 0 {
        return Err(Error::Domain("grid size must be at least 1".into()));
    }
    let inner = epsilon / (2.0 * k as f64 * (1.0 - alpha + epsilon / 2.0));
    Ok((-2.0 * inner.ln() / (epsilon * epsilon)).ceil() as usize)
}

/// Run the grid selection at the tightened miscoverage `α-ε` and report
/// whether the calibration size meets [`conservative_required_n2`], in
/// which case the selected intervals also provide average coverage at
/// level α.
pub fn conservative_select_tau<P: Predictor>(
    grid: &TauGrid,
    nets: &[(f64, P)],
    calib: &Subset,
    alpha: f64,
    epsilon: f64,
) -> Result<ConservativeSelection> {
    if alpha - epsilon <= 0.0 {
        return Err(Error::Domain(format!(
            "alpha - epsilon must be positive, got {}",
            alpha - epsilon
        )));
    }
    let selection = select_tau(grid, nets, calib, alpha - epsilon)?;
    let required_n2 = conservative_required_n2(alpha, epsilon, grid.k())?;
    let guarantee_met = selection.n2 >= required_n2;
    Ok(ConservativeSelection {
        selection,
        target_alpha: alpha,
        epsilon,
        required_n2,
        guarantee_met,
    })
}
