//! Hypothesis tests used to compare simulated populations with reference results.
//!
//! Every test returns a [`StatResult`]. p-values come from direct evaluation of
//! the regularized incomplete beta and gamma functions in [`special`].

pub mod special;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("degenerate variance: samples are constant and equal")]
    DegenerateVariance,
    #[error("regressor is constant")]
    ConstantRegressor,
    #[error("contingency table has a zero marginal")]
    ZeroMarginal,
    #[error("invalid degrees of freedom: {0}")]
    InvalidDf(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite input value")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatKind {
    T,
    F,
    Chi2,
    Slope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Positive,
    Negative,
    Zero,
}

impl Direction {
    pub fn of(x: f64) -> Self {
        if x > 0.0 {
            Direction::Positive
        } else if x < 0.0 {
            Direction::Negative
        } else {
            Direction::Zero
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Direction::Positive => Direction::Negative,
            Direction::Negative => Direction::Positive,
            Direction::Zero => Direction::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub kind: StatKind,
    #[serde(with = "extended_f64")]
    pub statistic: f64,
    pub df: (f64, Option<f64>),
    pub p_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub effect_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
    pub direction: Direction,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub perfect_fit: bool,
}

impl StatResult {
    pub fn significant(&self, alpha: f64) -> bool {
        self.p_value < alpha
    }
}

/// Serializes non-finite floats as the strings "inf" / "-inf" / "nan".
pub(crate) mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad float {other:?}"))),
            },
        }
    }
}

/// Reference distribution for [`p_from_distribution`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distribution {
    /// Student t, two-sided.
    T { df: f64 },
    /// Fisher F, upper tail.
    F { df1: f64, df2: f64 },
    /// Chi-square, upper tail.
    ChiSquare { df: f64 },
}

fn check_df(df: f64) -> Result<(), StatsError> {
    if df.is_finite() && df > 0.0 {
        Ok(())
    } else {
        Err(StatsError::InvalidDf(df.to_string()))
    }
}

pub fn p_from_distribution(statistic: f64, dist: Distribution) -> Result<f64, StatsError> {
    if statistic.is_nan() {
        return Err(StatsError::NonFinite);
    }
    let p = match dist {
        Distribution::T { df } => {
            check_df(df)?;
            if statistic.is_infinite() {
                0.0
            } else {
                let t2 = statistic * statistic;
                special::inc_beta(df / (df + t2), df / 2.0, 0.5)
            }
        }
        Distribution::F { df1, df2 } => {
            check_df(df1)?;
            check_df(df2)?;
            if statistic <= 0.0 {
                1.0
            } else if statistic.is_infinite() {
                0.0
            } else {
                special::inc_beta(df2 / (df2 + df1 * statistic), df2 / 2.0, df1 / 2.0)
            }
        }
        Distribution::ChiSquare { df } => {
            check_df(df)?;
            if statistic <= 0.0 {
                1.0
            } else if statistic.is_infinite() {
                0.0
            } else {
                special::inc_gamma_upper(df / 2.0, statistic / 2.0)
            }
        }
    };
    Ok(p.clamp(0.0, 1.0))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the n − 1 denominator.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

fn ensure_finite(xs: &[f64]) -> Result<(), StatsError> {
    if xs.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

fn ensure_len(xs: &[f64], needed: usize) -> Result<(), StatsError> {
    if xs.len() < needed {
        Err(StatsError::TooFewObservations { needed, got: xs.len() })
    } else {
        Ok(())
    }
}

/// Builds a t result from a mean difference and its standard error.
fn t_result(diff: f64, se: f64, df: f64) -> Result<StatResult, StatsError> {
    let statistic = if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        return Err(StatsError::DegenerateVariance);
    } else {
        diff.signum() * f64::INFINITY
    };
    Ok(StatResult {
        kind: StatKind::T,
        statistic,
        df: (df, None),
        p_value: p_from_distribution(statistic, Distribution::T { df })?,
        effect_size: Some(diff),
        std_error: Some(se),
        direction: Direction::of(diff),
        perfect_fit: se == 0.0,
    })
}

/// Independent two-sample t-test: Student (pooled variance) or Welch.
pub fn t_test_ind(a: &[f64], b: &[f64], pooled: bool) -> Result<StatResult, StatsError> {
    ensure_len(a, 2)?;
    ensure_len(b, 2)?;
    ensure_finite(a)?;
    ensure_finite(b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (variance(a), variance(b));
    let diff = mean(a) - mean(b);
    if pooled {
        let df = na + nb - 2.0;
        let sp2 = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
        let se = (sp2 * (1.0 / na + 1.0 / nb)).sqrt();
        t_result(diff, se, df)
    } else {
        let (qa, qb) = (va / na, vb / nb);
        let se = (qa + qb).sqrt();
        let df = if se > 0.0 {
            (qa + qb).powi(2) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0))
        } else {
            na + nb - 2.0
        };
        t_result(diff, se, df)
    }
}

/// Paired t-test on `a[i] − b[i]`. Its square is the F(1, n − 1) contrast.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<StatResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch { expected: a.len(), got: b.len() });
    }
    ensure_len(a, 2)?;
    ensure_finite(a)?;
    ensure_finite(b)?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let se = (variance(&d) / n).sqrt();
    t_result(mean(&d), se, n - 1.0)
}

/// Simple least-squares regression of `y` on `x`.
///
/// `statistic` and `effect_size` hold the slope, `std_error` its standard
/// error; the p-value is two-sided against t(n − 2). With a binary regressor
/// the slope equals the difference of group means.
pub fn ols_simple(y: &[f64], x: &[f64]) -> Result<StatResult, StatsError> {
    if y.len() != x.len() {
        return Err(StatsError::LengthMismatch { expected: y.len(), got: x.len() });
    }
    ensure_len(y, 3)?;
    ensure_finite(y)?;
    ensure_finite(x)?;
    let fit = LineFit::new(x, y).ok_or(StatsError::ConstantRegressor)?;
    let df = y.len() as f64 - 2.0;
    let p_value = if fit.perfect {
        if fit.slope == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        p_from_distribution(fit.slope / fit.se, Distribution::T { df })?
    };
    Ok(StatResult {
        kind: StatKind::Slope,
        statistic: fit.slope,
        df: (df, None),
        p_value,
        effect_size: Some(fit.slope),
        std_error: Some(fit.se),
        direction: Direction::of(fit.slope),
        perfect_fit: fit.perfect,
    })
}

struct LineFit {
    slope: f64,
    intercept: f64,
    se: f64,
    ss_reg: f64,
    ss_res: f64,
    perfect: bool,
}

impl LineFit {
    fn new(x: &[f64], y: &[f64]) -> Option<Self> {
        let n = x.len() as f64;
        let (mx, my) = (mean(x), mean(y));
        let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
        if sxx == 0.0 {
            return None;
        }
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let ss_res: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        // Rounding residue on an exact line is ~1e-30 relative to syy.
        let perfect = ss_res <= 1e-24 * syy.max(f64::MIN_POSITIVE) || ss_res == 0.0;
        let ss_res = if perfect { 0.0 } else { ss_res };
        let se = (ss_res / (n - 2.0) / sxx).sqrt();
        Some(LineFit { slope, intercept, se, ss_reg: syy - ss_res, ss_res, perfect })
    }
}

/// One-way between-groups ANOVA with η² = SS_between / SS_total.
pub fn anova_oneway(groups: &[Vec<f64>]) -> Result<StatResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewObservations { needed: 2, got: groups.len() });
    }
    for g in groups {
        ensure_len(g, 2)?;
        ensure_finite(g)?;
    }
    let k = groups.len() as f64;
    let n: f64 = groups.iter().map(|g| g.len() as f64).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n;
    let ss_between: f64 = groups.iter().map(|g| g.len() as f64 * (mean(g) - grand).powi(2)).sum();
    let ss_within: f64 = groups
        .iter()
        .map(|g| {
            let m = mean(g);
            g.iter().map(|v| (v - m).powi(2)).sum::<f64>()
        })
        .sum();
    let (df1, df2) = (k - 1.0, n - k);
    let statistic = if ss_within > 0.0 {
        (ss_between / df1) / (ss_within / df2)
    } else if ss_between == 0.0 {
        return Err(StatsError::DegenerateVariance);
    } else {
        f64::INFINITY
    };
    let total = ss_between + ss_within;
    let first_last = mean(&groups[groups.len() - 1]) - mean(&groups[0]);
    Ok(StatResult {
        kind: StatKind::F,
        statistic,
        df: (df1, Some(df2)),
        p_value: p_from_distribution(statistic, Distribution::F { df1, df2 })?,
        effect_size: Some(ss_between / total),
        std_error: None,
        direction: Direction::of(first_last),
        perfect_fit: ss_within == 0.0,
    })
}

/// Pearson chi-square on a 2×2 table without continuity correction.
///
/// `direction` is the sign of the first-column rate difference between rows,
/// `a / (a + b) − c / (c + d)` for `[[a, b], [c, d]]`.
pub fn chi_square_2x2(table: [[u64; 2]; 2]) -> Result<StatResult, StatsError> {
    let rows = [table[0][0] + table[0][1], table[1][0] + table[1][1]];
    let cols = [table[0][0] + table[1][0], table[0][1] + table[1][1]];
    if rows.contains(&0) || cols.contains(&0) {
        return Err(StatsError::ZeroMarginal);
    }
    let total = (rows[0] + rows[1]) as f64;
    let mut statistic = 0.0;
    for (i, row) in table.iter().enumerate() {
        for (j, &obs) in row.iter().enumerate() {
            let expected = rows[i] as f64 * cols[j] as f64 / total;
            statistic += (obs as f64 - expected).powi(2) / expected;
        }
    }
    let rate_diff = table[0][0] as f64 / rows[0] as f64 - table[1][0] as f64 / rows[1] as f64;
    Ok(StatResult {
        kind: StatKind::Chi2,
        statistic,
        df: (1.0, None),
        p_value: p_from_distribution(statistic, Distribution::ChiSquare { df: 1.0 })?,
        effect_size: Some(rate_diff),
        std_error: None,
        direction: Direction::of(rate_diff),
        perfect_fit: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendClass {
    Increasing,
    Decreasing,
    NoTrend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendResult {
    pub slope: f64,
    pub intercept: f64,
    /// F = t² of the slope with df (1, rounds − 2); η² is R².
    pub f: StatResult,
    pub classification: TrendClass,
}

/// Regresses per-round means on the round index 1..=rounds.
pub fn linear_trend(round_means: &[f64], rounds: usize) -> Result<TrendResult, StatsError> {
    if round_means.len() != rounds {
        return Err(StatsError::LengthMismatch { expected: rounds, got: round_means.len() });
    }
    ensure_len(round_means, 3)?;
    ensure_finite(round_means)?;
    let x: Vec<f64> = (1..=rounds).map(|r| r as f64).collect();
    let fit = LineFit::new(&x, round_means).ok_or(StatsError::ConstantRegressor)?;
    let df2 = rounds as f64 - 2.0;
    let statistic = if fit.ss_res > 0.0 {
        fit.ss_reg / (fit.ss_res / df2)
    } else if fit.slope == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let total = fit.ss_reg + fit.ss_res;
    let eta2 = if total > 0.0 { fit.ss_reg / total } else { 0.0 };
    let p_value = p_from_distribution(statistic, Distribution::F { df1: 1.0, df2 })?;
    let classification = if p_value < 0.05 && fit.slope > 0.0 {
        TrendClass::Increasing
    } else if p_value < 0.05 && fit.slope < 0.0 {
        TrendClass::Decreasing
    } else {
        TrendClass::NoTrend
    };
    Ok(TrendResult {
        slope: fit.slope,
        intercept: fit.intercept,
        f: StatResult {
            kind: StatKind::F,
            statistic,
            df: (1.0, Some(df2)),
            p_value,
            effect_size: Some(eta2),
            std_error: Some(fit.se),
            direction: Direction::of(fit.slope),
            perfect_fit: fit.perfect,
        },
        classification,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_samples_give_zero_t() {
        let a = [1.0, 4.0, 2.0, 8.0];
        let r = t_test_ind(&a, &a, true).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 1.0).abs() < 1e-15);
        assert_eq!(r.direction, Direction::Zero);
    }

    #[test]
    fn pooled_t_fixture() {
        let r = t_test_ind(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0], true).unwrap();
        assert!((r.statistic - (-1.224_744_871_391_589)).abs() < 1e-12);
        assert_eq!(r.df, (4.0, None));
        assert_eq!(r.direction, Direction::Negative);
    }

    #[test]
    fn constant_equal_samples_are_degenerate() {
        let err = t_test_ind(&[2.0, 2.0], &[2.0, 2.0, 2.0], true).unwrap_err();
        assert_eq!(err, StatsError::DegenerateVariance);
        assert!(matches!(
            t_test_ind(&[1.0], &[2.0, 3.0], true),
            Err(StatsError::TooFewObservations { .. })
        ));
    }

    #[test]
    fn constant_unequal_samples_give_infinite_t() {
        let r = t_test_ind(&[3.0, 3.0], &[1.0, 1.0], true).unwrap();
        assert!(r.statistic.is_infinite() && r.statistic > 0.0);
        assert_eq!(r.p_value, 0.0);
    }

    #[test]
    fn ols_binary_regressor_is_mean_difference() {
        let y = [3.0, 5.0, 4.0, 10.0, 12.0, 9.0, 11.0];
        let x = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let r = ols_simple(&y, &x).unwrap();
        let diff = mean(&y[3..]) - mean(&y[..3]);
        assert!((r.statistic - diff).abs() < 1e-12);
    }

    #[test]
    fn ols_exact_line_is_flagged() {
        let r = ols_simple(&[1.0, 2.0, 3.0], &[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert_eq!(r.std_error, Some(0.0));
        assert!(r.perfect_fit);
        assert_eq!(ols_simple(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]), Err(StatsError::ConstantRegressor));
    }

    #[test]
    fn anova_fixtures() {
        let r = anova_oneway(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert!((r.statistic - 8.0).abs() < 1e-12);
        assert_eq!(r.df, (1.0, Some(2.0)));
        assert!((r.effect_size.unwrap() - 0.8).abs() < 1e-12);

        let same = anova_oneway(&[vec![1.0, 3.0], vec![0.0, 4.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!(same.statistic, 0.0);
        assert!((same.p_value - 1.0).abs() < 1e-15);

        assert_eq!(
            anova_oneway(&[vec![1.0, 1.0], vec![1.0, 1.0]]),
            Err(StatsError::DegenerateVariance)
        );
    }

    #[test]
    fn chi_square_fixtures() {
        assert_eq!(chi_square_2x2([[10, 10], [10, 10]]).unwrap().statistic, 0.0);
        let r = chi_square_2x2([[30, 20], [10, 40]]).unwrap();
        assert!((r.statistic - 50.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.direction, Direction::Positive);
        assert_eq!(chi_square_2x2([[0, 5], [0, 5]]), Err(StatsError::ZeroMarginal));
    }

    #[test]
    fn trend_fixtures() {
        let flat = linear_trend(&[5.0; 6], 6).unwrap();
        assert_eq!(flat.slope, 0.0);
        assert_eq!(flat.classification, TrendClass::NoTrend);
        assert_eq!(flat.f.df, (1.0, Some(4.0)));

        let down = linear_trend(&[6.0, 5.0, 4.0, 3.0, 2.0, 1.0], 6).unwrap();
        assert!((down.slope + 1.0).abs() < 1e-12);
        assert!(down.f.perfect_fit);
        assert_eq!(down.classification, TrendClass::Decreasing);

        assert!(matches!(linear_trend(&[1.0; 5], 6), Err(StatsError::LengthMismatch { .. })));
    }

    #[test]
    fn p_value_edges() {
        assert_eq!(p_from_distribution(0.0, Distribution::T { df: 3.0 }).unwrap(), 1.0);
        assert_eq!(p_from_distribution(0.0, Distribution::F { df1: 2.0, df2: 9.0 }).unwrap(), 1.0);
        let p = p_from_distribution(3.841_458_820_694_124, Distribution::ChiSquare { df: 1.0 }).unwrap();
        assert!((p - 0.05).abs() < 1e-9);
        assert!(matches!(
            p_from_distribution(1.0, Distribution::T { df: 0.0 }),
            Err(StatsError::InvalidDf(_))
        ));
    }

    #[test]
    fn infinite_statistic_round_trips_through_json() {
        let r = t_test_ind(&[3.0, 3.0], &[1.0, 1.0], true).unwrap();
        let text = serde_json::to_string(&r).unwrap();
        assert!(text.contains("\"inf\""));
        let back: StatResult = serde_json::from_str(&text).unwrap();
        assert_eq!(back.statistic, f64::INFINITY);
    }

    fn sample() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-50.0..50.0f64, 3..12)
    }

    proptest! {
        #[test]
        fn t_is_scale_invariant(a in sample(), b in sample(), k in 0.1..20.0f64, shift in -10.0..10.0f64) {
            let r = t_test_ind(&a, &b, true).unwrap();
            let a2: Vec<f64> = a.iter().map(|v| k * v + shift).collect();
            let b2: Vec<f64> = b.iter().map(|v| k * v + shift).collect();
            let r2 = t_test_ind(&a2, &b2, true).unwrap();
            prop_assert!((r.statistic - r2.statistic).abs() <= 1e-7 * r.statistic.abs().max(1.0));
            prop_assert!((r.p_value - r2.p_value).abs() < 1e-8);
        }

        #[test]
        fn swapping_samples_negates_t(a in sample(), b in sample()) {
            let ab = t_test_ind(&a, &b, false).unwrap();
            let ba = t_test_ind(&b, &a, false).unwrap();
            prop_assert!((ab.statistic + ba.statistic).abs() < 1e-9 * ab.statistic.abs().max(1.0));
            prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
            prop_assert_eq!(ab.direction, ba.direction.flip());
        }

        #[test]
        fn anova_ignores_group_order(a in sample(), b in sample(), c in sample(), k in 0.1..20.0f64) {
            let r = anova_oneway(&[a.clone(), b.clone(), c.clone()]).unwrap();
            let r2 = anova_oneway(&[c.clone(), a.clone(), b.clone()]).unwrap();
            prop_assert!((r.statistic - r2.statistic).abs() <= 1e-9 * r.statistic.max(1.0));
            let scaled: Vec<Vec<f64>> = [a, b, c].iter().map(|g| g.iter().map(|v| v * k).collect()).collect();
            let r3 = anova_oneway(&scaled).unwrap();
            prop_assert!((r.statistic - r3.statistic).abs() <= 1e-7 * r.statistic.max(1.0));
            let eta = r.effect_size.unwrap();
            prop_assert!((0.0..=1.0).contains(&eta));
        }

        #[test]
        fn p_values_stay_in_unit_interval(stat in 0.0..500.0f64, df1 in 1u32..300, df2 in 1u32..300) {
            for d in [
                Distribution::T { df: f64::from(df1) },
                Distribution::F { df1: f64::from(df1), df2: f64::from(df2) },
                Distribution::ChiSquare { df: f64::from(df2) },
            ] {
                let p = p_from_distribution(stat, d).unwrap();
                prop_assert!((0.0..=1.0).contains(&p));
            }
        }
    }
}
