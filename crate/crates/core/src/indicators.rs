//! Technical indicators used as prior knowledge, Spearman rank correlation,
//! and the information-coefficient lag search.
//!
//! Price windows are indexed oldest first: `x[0]` is `x_1`, `x[n-1]` is `x_n`.

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default window length (minutes of history per sample).
pub const DEFAULT_WINDOW_LEN: usize = 50;

/// Fixed-length slice of a price series. Prices are finite and positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Window(Vec<f64>);

impl Window {
    pub fn new(prices: Vec<f64>) -> Result<Self> {
        if prices.is_empty() {
            return Err(Error::invalid("empty price window"));
        }
        if let Some(i) = prices.iter().position(|&p| !(p.is_finite() && p > 0.0)) {
            return Err(Error::invalid(format!(
                "price x_{} = {} is not a finite positive number",
                i + 1,
                prices[i]
            )));
        }
        Ok(Self(prices))
    }

    pub fn prices(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Window {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Window {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Window::new(v)
    }
}

impl From<Window> for Vec<f64> {
    fn from(w: Window) -> Self {
        w.0
    }
}

/// Arithmetic mean of the last `lag` prices.
pub fn sma(x: &[f64], lag: usize) -> Result<f64> {
    let n = x.len();
    if lag == 0 || lag > n {
        return Err(Error::invalid(format!("sma lag {lag} outside 1..={n}")));
    }
    Ok(x[n - lag..].iter().sum::<f64>() / lag as f64)
}

/// Moving-average crossover `sma(fast) − sma(slow)`.
pub fn sma_cross(x: &[f64], fast: usize, slow: usize) -> Result<f64> {
    if fast >= slow {
        return Err(Error::invalid(format!(
            "sma crossover needs fast < slow, got ({fast}, {slow})"
        )));
    }
    Ok(sma(x, fast)? - sma(x, slow)?)
}

/// Rate of change `x_n / x_{n−lag} − 1`.
pub fn roc(x: &[f64], lag: usize) -> Result<f64> {
    let n = x.len();
    if lag == 0 || lag >= n {
        return Err(Error::invalid(format!("roc lag {lag} outside 1..{n}")));
    }
    let base = x[n - 1 - lag];
    if base == 0.0 {
        return Err(Error::invalid(format!(
            "roc denominator x_{} is zero",
            n - lag
        )));
    }
    Ok(x[n - 1] / base - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorKind {
    SmaCross,
    Roc,
}

/// An indicator together with its lag hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IndicatorSpec {
    SmaCross { fast: usize, slow: usize },
    Roc { lag: usize },
}

impl IndicatorSpec {
    pub fn sma_cross(fast: usize, slow: usize) -> Result<Self> {
        let s = IndicatorSpec::SmaCross { fast, slow };
        s.check_lags()?;
        Ok(s)
    }

    pub fn roc(lag: usize) -> Result<Self> {
        let s = IndicatorSpec::Roc { lag };
        s.check_lags()?;
        Ok(s)
    }

    pub fn kind(&self) -> IndicatorKind {
        match self {
            IndicatorSpec::SmaCross { .. } => IndicatorKind::SmaCross,
            IndicatorSpec::Roc { .. } => IndicatorKind::Roc,
        }
    }

    fn check_lags(&self) -> Result<()> {
        match *self {
            IndicatorSpec::SmaCross { fast, slow } if fast == 0 || slow <= fast => Err(
                Error::invalid(format!("invalid crossover lags ({fast}, {slow})")),
            ),
            IndicatorSpec::Roc { lag: 0 } => Err(Error::invalid("roc lag must be positive")),
            _ => Ok(()),
        }
    }

    /// Shortest window the indicator can be evaluated on.
    pub fn min_window(&self) -> usize {
        match *self {
            IndicatorSpec::SmaCross { slow, .. } => slow,
            IndicatorSpec::Roc { lag } => lag + 1,
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        match *self {
            IndicatorSpec::SmaCross { fast, slow } => sma_cross(x, fast, slow),
            IndicatorSpec::Roc { lag } => roc(x, lag),
        }
    }

    /// Evaluates over many windows.
    pub fn evaluate_all<W: Deref<Target = [f64]>>(&self, windows: &[W]) -> Result<Vec<f64>> {
        windows.iter().map(|w| self.evaluate(w)).collect()
    }

    /// Lexicographic lag key used for tie-breaking: smallest lag first.
    fn lag_key(&self) -> (usize, usize) {
        match *self {
            IndicatorSpec::SmaCross { fast, slow } => (fast, slow),
            IndicatorSpec::Roc { lag } => (lag, 0),
        }
    }
}

impl fmt::Display for IndicatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IndicatorSpec::SmaCross { fast, slow } => write!(f, "SMA({fast},{slow})"),
            IndicatorSpec::Roc { lag } => write!(f, "ROC({lag})"),
        }
    }
}

impl IndicatorKind {
    /// Grid over candidate lags: every ordered pair `fast < slow` for
    /// crossovers, every lag for ROC.
    pub fn grid(self, lags: &[usize]) -> Vec<IndicatorSpec> {
        let mut lags = lags.to_vec();
        lags.sort_unstable();
        lags.dedup();
        match self {
            IndicatorKind::SmaCross => {
                let mut out = Vec::new();
                for (i, &fast) in lags.iter().enumerate() {
                    for &slow in &lags[i + 1..] {
                        if fast > 0 {
                            out.push(IndicatorSpec::SmaCross { fast, slow });
                        }
                    }
                }
                out
            }
            IndicatorKind::Roc => lags
                .into_iter()
                .filter(|&l| l > 0)
                .map(|lag| IndicatorSpec::Roc { lag })
                .collect(),
        }
    }
}

/// Average (mid) ranks, 1-based.
pub fn mid_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && v[idx[j]] == v[idx[i]] {
            j += 1;
        }
        // positions i..j share the average of ranks i+1..=j
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation(
            "one input has zero rank variance".into(),
        ));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson correlation of mid-ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "spearman inputs differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 3 {
        return Err(Error::invalid("spearman needs at least 3 observations"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spearman input"));
    }
    pearson(&mid_ranks(a), &mid_ranks(b))
}

/// Outcome of an IC grid search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best_spec: IndicatorSpec,
    pub ic: f64,
    /// Every grid point with its IC; `None` where the IC is undefined.
    pub table: Vec<(IndicatorSpec, Option<f64>)>,
}

/// Picks the grid point whose Spearman IC against `forward_returns` has the
/// largest magnitude. Ties go to the smallest lag, then the smallest slow lag.
pub fn grid_search<W>(
    windows: &[W],
    forward_returns: &[f64],
    grid: &[IndicatorSpec],
) -> Result<GridSearchResult>
where
    W: Deref<Target = [f64]> + Sync,
{
    if grid.is_empty() {
        return Err(Error::invalid("empty indicator grid"));
    }
    if windows.len() != forward_returns.len() {
        return Err(Error::shape(format!(
            "{} windows but {} forward returns",
            windows.len(),
            forward_returns.len()
        )));
    }
    let shortest = windows.iter().map(|w| w.len()).min().unwrap_or(0);
    for spec in grid {
        spec.check_lags()?;
        if spec.min_window() > shortest {
            return Err(Error::invalid(format!(
                "{spec} needs windows of length {} but the shortest has {shortest}",
                spec.min_window()
            )));
        }
    }

    let eval = |spec: &IndicatorSpec| -> Result<(IndicatorSpec, Option<f64>)> {
        let values = spec.evaluate_all(windows)?;
        match spearman(&values, forward_returns) {
            Ok(ic) => Ok((*spec, Some(ic))),
            Err(Error::UndefinedCorrelation(_)) => Ok((*spec, None)),
            Err(e) => Err(e),
        }
    };
    let table: Vec<(IndicatorSpec, Option<f64>)> = crate::exec::map_collect(grid, eval)?;

    let mut best: Option<(IndicatorSpec, f64)> = None;
    for &(spec, ic) in &table {
        let Some(ic) = ic else { continue };
        best = match best {
            None => Some((spec, ic)),
            Some((bs, bic)) => {
                let better = ic.abs() > bic.abs()
                    || (ic.abs() == bic.abs() && spec.lag_key() < bs.lag_key());
                if better {
                    Some((spec, ic))
                } else {
                    Some((bs, bic))
                }
            }
        };
    }
    let (best_spec, ic) = best
        .ok_or_else(|| Error::UndefinedCorrelation("IC is undefined at every grid point".into()))?;
    Ok(GridSearchResult {
        best_spec,
        ic,
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sma_examples() {
        assert_eq!(sma(&[7.0; 10], 4).unwrap(), 7.0);
        assert_eq!(sma(&[1.0, 2.0, 3.0, 4.0], 2).unwrap(), 3.5);
        assert!(sma(&[1.0, 2.0], 3).is_err());
        assert!(sma(&[1.0, 2.0], 0).is_err());
    }

    #[test]
    fn sma_cross_examples() {
        assert_eq!(sma_cross(&[5.0; 40], 15, 30).unwrap(), 0.0);
        assert_eq!(sma_cross(&[1.0, 2.0, 3.0, 4.0], 1, 2).unwrap(), 0.5);
        assert!(sma_cross(&[1.0, 2.0, 3.0, 4.0], 2, 2).is_err());
        assert!(sma_cross(&[1.0, 2.0, 3.0, 4.0], 3, 2).is_err());
    }

    #[test]
    fn roc_examples() {
        assert_eq!(roc(&[3.0; 20], 5).unwrap(), 0.0);
        assert!((roc(&[90.0, 100.0, 110.0], 1).unwrap() - 0.1).abs() < 1e-15);
        assert!(roc(&[1.0, 2.0, 3.0], 3).is_err());
        assert!(roc(&[0.0, 2.0, 3.0], 2).is_err());
    }

    #[test]
    fn spearman_examples() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(spearman(&a, &a).unwrap(), 1.0);
        let rev: Vec<f64> = a.iter().rev().copied().collect();
        assert_eq!(spearman(&a, &rev).unwrap(), -1.0);
        assert!(matches!(
            spearman(&a, &[2.0; 5]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(spearman(&a[..2], &a[..2]).is_err());
    }

    #[test]
    fn mid_ranks_average_ties() {
        assert_eq!(
            mid_ranks(&[10.0, 20.0, 10.0, 30.0]),
            vec![1.5, 3.0, 1.5, 4.0]
        );
    }

    #[test]
    fn grid_covers_ordered_pairs() {
        let g = IndicatorKind::SmaCross.grid(&[5, 10, 15]);
        assert_eq!(
            g,
            vec![
                IndicatorSpec::SmaCross { fast: 5, slow: 10 },
                IndicatorSpec::SmaCross { fast: 5, slow: 15 },
                IndicatorSpec::SmaCross { fast: 10, slow: 15 },
            ]
        );
        assert_eq!(IndicatorKind::Roc.grid(&[10, 5, 5]).len(), 2);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let w = vec![vec![1.0; 5]; 4];
        let w: Vec<&[f64]> = w.iter().map(|v| v.as_slice()).collect();
        assert!(grid_search(&w, &[0.0; 4], &[]).is_err());
    }

    #[test]
    fn window_rejects_non_positive_prices() {
        assert!(Window::new(vec![1.0, 0.0]).is_err());
        assert!(Window::new(vec![1.0, f64::NAN]).is_err());
        assert!(Window::new(vec![]).is_err());
        assert!(Window::new(vec![1.0, 2.0]).is_ok());
    }

    #[test]
    fn spec_serializes_with_kind_tag() {
        let s = IndicatorSpec::SmaCross { fast: 15, slow: 30 };
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(j, r#"{"kind":"sma_cross","fast":15,"slow":30}"#);
        let back: IndicatorSpec = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
    }
}
