//! Significance testing against a random indicator and meta-evaluation
//! statistics for comparing bias scores across models.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};

use crate::hash;

/// Significance level used for every verdict.
pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("no observations")]
    Empty,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 observations, got {0}")]
    TooFew(usize),
    #[error("input has zero variance")]
    ZeroVariance,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
}

pub type Result<T, E = StatsError> = std::result::Result<T, E>;

/// Prediction of the random method for comparison `k`: a fair coin that is a
/// pure function of `(seed, k)`.
#[inline]
pub fn random_coin(seed: u64, k: u64) -> bool {
    hash::combine(seed, k) >> 63 == 1
}

/// 2x2 contingency table of the model's indicator against the random coin.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct McNemarTally {
    /// Model biased, random not.
    pub b: u64,
    /// Random biased, model not.
    pub c: u64,
    pub both: u64,
    pub neither: u64,
}

impl McNemarTally {
    pub fn from_counts(b: u64, c: u64, both: u64, neither: u64) -> Self {
        Self { b, c, both, neither }
    }

    #[inline]
    pub fn record(&mut self, model: bool, random: bool) {
        match (model, random) {
            (true, false) => self.b += 1,
            (false, true) => self.c += 1,
            (true, true) => self.both += 1,
            (false, false) => self.neither += 1,
        }
    }

    /// Records comparison `k` with its coin drawn from `seed`.
    #[inline]
    pub fn observe(&mut self, seed: u64, k: u64, indicator: bool) {
        self.record(indicator, random_coin(seed, k));
    }

    pub fn merge(&mut self, other: &McNemarTally) {
        self.b += other.b;
        self.c += other.c;
        self.both += other.both;
        self.neither += other.neither;
    }

    pub fn total(&self) -> u64 {
        self.b + self.c + self.both + self.neither
    }

    pub fn test(&self, continuity_correction: bool) -> McNemarResult {
        let discordant = self.b + self.c;
        let (statistic, p_value) = if discordant == 0 {
            (0.0, 1.0)
        } else {
            let diff = (self.b as f64 - self.c as f64).abs();
            let diff = if continuity_correction { (diff - 1.0).max(0.0) } else { diff };
            let statistic = diff * diff / discordant as f64;
            let chi2 = ChiSquared::new(1.0).expect("one degree of freedom");
            (statistic, chi2.sf(statistic).clamp(0.0, 1.0))
        };
        McNemarResult {
            b: self.b,
            c: self.c,
            both: self.both,
            neither: self.neither,
            statistic,
            p_value,
            significant: p_value < ALPHA,
            continuity_correction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    pub b: u64,
    pub c: u64,
    pub both: u64,
    pub neither: u64,
    pub statistic: f64,
    pub p_value: f64,
    pub significant: bool,
    pub continuity_correction: bool,
}

/// McNemar test of a stream of indicator outcomes against a seeded fair coin.
/// The `k`-th outcome is paired with `random_coin(seed, k)`.
pub fn mcnemar_vs_random<I>(indicators: I, seed: u64, continuity_correction: bool) -> Result<McNemarResult>
where
    I: IntoIterator<Item = bool>,
{
    let mut tally = McNemarTally::default();
    for (k, ind) in indicators.into_iter().enumerate() {
        tally.observe(seed, k as u64, ind);
    }
    if tally.total() == 0 {
        return Err(StatsError::Empty);
    }
    Ok(tally.test(continuity_correction))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlations {
    pub spearman_rho: f64,
    pub pearson_r: f64,
    /// Two-sided p-value of the Pearson coefficient.
    pub pearson_p: f64,
}

fn check_pair(xs: &[f64], ys: &[f64], min: usize) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.is_empty() {
        return Err(StatsError::Empty);
    }
    if xs.len() < min {
        return Err(StatsError::TooFew(xs.len()));
    }
    if let Some(i) = xs.iter().chain(ys).position(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite(i % xs.len()));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties given the average of the ranks they span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap_or(Ordering::Equal));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson_p_value(r: f64, n: usize) -> f64 {
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let df = (n - 2) as f64;
    let t = r * (df / (1.0 - r * r)).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

pub fn correlations(xs: &[f64], ys: &[f64]) -> Result<Correlations> {
    check_pair(xs, ys, 3)?;
    let pearson_r = pearson(xs, ys)?;
    let spearman_rho = pearson(&average_ranks(xs), &average_ranks(ys))?;
    Ok(Correlations { spearman_rho, pearson_r, pearson_p: pearson_p_value(pearson_r, xs.len()) })
}

/// Fraction of positions where both scores lean the same way from 50.
/// A score of exactly 50 only agrees with another exact 50.
pub fn direction_agreement(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b, 1)?;
    let side = |x: f64| x.partial_cmp(&50.0).expect("finite");
    let agree = a.iter().zip(b).filter(|(x, y)| side(**x) == side(**y)).count();
    Ok(agree as f64 / a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffStats {
    /// Mean of `candidate - reference`.
    pub signed_mean: f64,
    /// Mean of `|candidate - reference|`.
    pub abs_mean: f64,
}

pub fn diff_stats(reference: &[f64], candidate: &[f64]) -> Result<DiffStats> {
    check_pair(reference, candidate, 1)?;
    let n = reference.len() as f64;
    let diffs = candidate.iter().zip(reference).map(|(c, r)| c - r);
    let (signed, abs) = diffs.fold((0.0, 0.0), |(s, a), d| (s + d, a + d.abs()));
    Ok(DiffStats { signed_mean: signed / n, abs_mean: abs / n })
}

/// Agreement of a candidate scoring method with a reference one across models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaReport {
    pub n_models: usize,
    /// `None` when fewer than 3 models or either side is constant.
    pub spearman_rho: Option<f64>,
    pub pearson_r: Option<f64>,
    pub pearson_p: Option<f64>,
    pub pearson_significant: Option<bool>,
    pub direction_agreement: f64,
    pub diff_signed_mean: f64,
    pub diff_abs_mean: f64,
}

impl MetaReport {
    pub fn compute(reference: &[f64], candidate: &[f64]) -> Result<Self> {
        let diff = diff_stats(reference, candidate)?;
        let direction = direction_agreement(reference, candidate)?;
        let corr = match correlations(reference, candidate) {
            Ok(c) => Some(c),
            Err(StatsError::TooFew(_) | StatsError::ZeroVariance) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            n_models: reference.len(),
            spearman_rho: corr.map(|c| c.spearman_rho),
            pearson_r: corr.map(|c| c.pearson_r),
            pearson_p: corr.map(|c| c.pearson_p),
            pearson_significant: corr.map(|c| c.pearson_p < ALPHA),
            direction_agreement: direction,
            diff_signed_mean: diff.signed_mean,
            diff_abs_mean: diff.abs_mean,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mcnemar_fixture() {
        let r = McNemarTally::from_counts(15, 5, 40, 40).test(false);
        assert_eq!(r.statistic, 5.0);
        // chi-square(1) survival at 5 = erfc(sqrt(2.5))
        assert!((r.p_value - 0.025_347_318_677_468).abs() < 1e-9, "{}", r.p_value);
        assert!(r.significant);
    }

    #[test]
    fn mcnemar_degenerate_tables() {
        let r = McNemarTally::from_counts(10, 10, 3, 4).test(false);
        assert_eq!((r.statistic, r.p_value, r.significant), (0.0, 1.0, false));
        let r = McNemarTally::from_counts(0, 0, 3, 4).test(false);
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        let r = McNemarTally::from_counts(15, 5, 0, 0).test(true);
        assert_eq!(r.statistic, 81.0 / 20.0);
    }

    #[test]
    fn mcnemar_stream() {
        assert_eq!(mcnemar_vs_random(std::iter::empty(), 1, false), Err(StatsError::Empty));
        let r = mcnemar_vs_random(vec![true; 400], 3, false).unwrap();
        assert_eq!(r.b + r.both, 400);
        assert_eq!(r.c + r.neither, 0);
        assert!(r.significant);
        let again = mcnemar_vs_random(vec![true; 400], 3, false).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn coin_is_roughly_fair() {
        let heads = (0..100_000u64).filter(|&k| random_coin(42, k)).count();
        assert!((heads as f64 / 100_000.0 - 0.5).abs() < 0.01, "{heads}");
    }

    #[test]
    fn perfect_correlations() {
        let c = correlations(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert!((c.spearman_rho - 1.0).abs() < 1e-12 && (c.pearson_r - 1.0).abs() < 1e-12);
        let c = correlations(&[1.0, 2.0, 3.0], &[6.0, 4.0, 2.0]).unwrap();
        assert!((c.spearman_rho + 1.0).abs() < 1e-12 && (c.pearson_r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_errors() {
        assert_eq!(correlations(&[1.0, 2.0], &[1.0, 2.0]), Err(StatsError::TooFew(2)));
        assert_eq!(correlations(&[1.0, 2.0, 3.0], &[1.0, 2.0]), Err(StatsError::LengthMismatch(3, 2)));
        assert_eq!(correlations(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(StatsError::ZeroVariance));
        assert_eq!(correlations(&[1.0, f64::NAN, 1.0], &[1.0, 2.0, 3.0]), Err(StatsError::NonFinite(1)));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn direction_cases() {
        assert_eq!(direction_agreement(&[54.69, 48.0], &[52.0, 49.0]).unwrap(), 1.0);
        assert_eq!(direction_agreement(&[50.0], &[51.0]).unwrap(), 0.0);
        assert_eq!(direction_agreement(&[50.0], &[50.0]).unwrap(), 1.0);
        assert!(direction_agreement(&[50.0], &[]).is_err());
    }

    #[test]
    fn diff_cases() {
        let d = diff_stats(&[52.67], &[54.89]).unwrap();
        assert!((d.signed_mean - 2.22).abs() < 1e-9);
        let d = diff_stats(&[46.95], &[46.05]).unwrap();
        assert!((d.signed_mean + 0.90).abs() < 1e-9);
        assert!((d.abs_mean - 0.90).abs() < 1e-9);
        assert_eq!(diff_stats(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), DiffStats { signed_mean: 0.0, abs_mean: 0.0 });
    }

    #[test]
    fn meta_report_skips_correlations_for_two_models() {
        let m = MetaReport::compute(&[46.95, 48.85], &[46.05, 48.82]).unwrap();
        assert_eq!(m.pearson_r, None);
        assert_eq!(m.direction_agreement, 1.0);
    }
}
