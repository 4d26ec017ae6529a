//! Order statistics and significance testing.

use statrs::distribution::{ContinuousCDF, StudentsT};

use super::AnalysisError;

/// Quartiles (Q1, median, Q3) of a sorted slice by linear interpolation
/// between order statistics.
pub fn quartiles(sorted: &[f64]) -> (f64, f64, f64) {
    (
        percentile_sorted(sorted, 0.25),
        percentile_sorted(sorted, 0.5),
        percentile_sorted(sorted, 0.75),
    )
}

fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of empty slice");
    if sorted.len() == 1 {
        return sorted[0];
    }
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Welch's unequal-variance t-test: statistic, Welch-Satterthwaite
/// degrees of freedom, and the two-sided p-value.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<(f64, f64, f64), AnalysisError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(AnalysisError::Invalid(
            "welch_ttest needs at least two values per group".into(),
        ));
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let var = |xs: &[f64], m: f64| {
        xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
    };
    let (ma, mb) = (mean(a), mean(b));
    let (va, vb) = (var(a, ma), var(b, mb));
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let se2 = va / na + vb / nb;
    if se2 == 0.0 {
        if ma == mb {
            // Identical constant groups: no evidence of difference.
            return Ok((0.0, na + nb - 2.0, 1.0));
        }
        return Err(AnalysisError::Degenerate(
            "zero combined variance with unequal means".into(),
        ));
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2
        / ((va / na) * (va / na) / (na - 1.0) + (vb / nb) * (vb / nb) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| AnalysisError::Degenerate(format!("t-distribution: {e}")))?;
    let p = 2.0 * dist.cdf(-t.abs());
    Ok((t, df, p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_interpolate_linearly() {
        // Four points: h(0.25) = 0.75 -> 10 + 0.75*(20-10) = 17.5, etc.
        let xs = [10.0, 20.0, 30.0, 40.0];
        let (q1, med, q3) = quartiles(&xs);
        assert_eq!(q1, 17.5);
        assert_eq!(med, 25.0);
        assert_eq!(q3, 32.5);
        let one = [7.0];
        assert_eq!(quartiles(&one), (7.0, 7.0, 7.0));
    }

    #[test]
    fn welch_identical_groups() {
        let a = [0.5, 0.6, 0.7];
        let (t, _, p) = welch_ttest(&a, &a).unwrap();
        assert!(t.abs() < 1e-12);
        assert!((p - 1.0).abs() < 1e-9);
    }

    #[test]
    fn welch_textbook_instance() {
        // Expected values computed with an independent statistics package
        // before the implementation and frozen here.
        let a = [19.8, 20.4, 19.6, 17.8, 18.5, 18.9, 18.3, 18.9, 19.5, 22.0];
        let b = [
            28.2, 26.6, 20.1, 23.3, 25.2, 22.1, 17.7, 27.6, 20.6, 13.7, 23.2, 17.5, 20.6,
            18.0, 23.9, 21.6, 24.3, 20.4, 23.9, 13.3,
        ];
        let (t, df, p) = welch_ttest(&a, &b).unwrap();
        assert!((t - (-2.22)).abs() < 0.01, "t = {t}");
        assert!((p - 0.036).abs() < 0.005, "p = {p}");
        assert!(df > 20.0 && df < 30.0, "df = {df}");
    }

    #[test]
    fn welch_degenerate_variance() {
        let a = [1.0, 1.0, 1.0];
        let b = [2.0, 2.0];
        assert!(matches!(
            welch_ttest(&a, &b),
            Err(AnalysisError::Degenerate(_))
        ));
        assert!(welch_ttest(&[1.0], &[1.0, 2.0]).is_err());
    }
}
