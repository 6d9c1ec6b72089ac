//! Goodness-of-fit statistics used to validate the samplers.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Significance level used by every test in the crate.
pub const SIGNIFICANCE: f64 = 0.01;

/// Asymptotic 1% critical value of `sqrt(n) * D` for the one-sample KS test.
pub const KS_CRITICAL_1PCT: f64 = 1.628;

/// Kolmogorov-Smirnov statistic `sup |F_n(x) - F(x)|` of `samples` against a
/// continuous `cdf`. Sorts `samples` in place.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    ks_statistic_with_atoms(samples, &cdf, &cdf)
}

/// As [`ks_statistic`] for a CDF that may jump: `cdf_left` is its left
/// limit. Tied samples are treated as one step of the empirical CDF.
pub fn ks_statistic_with_atoms(
    samples: &mut [f64],
    cdf: impl Fn(f64) -> f64,
    cdf_left: impl Fn(f64) -> f64,
) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < samples.len() {
        let x = samples[i];
        let mut j = i + 1;
        while j < samples.len() && samples[j] == x {
            j += 1;
        }
        let (below, at) = (i as f64 / n, j as f64 / n);
        d = d.max((cdf_left(x) - below).abs()).max((cdf(x) - at).abs());
        i = j;
    }
    d
}

/// Survival function of the Kolmogorov distribution,
/// `P(K > x) = 2 * sum_{k>=1} (-1)^(k-1) exp(-2 k^2 x^2)`.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 0.2 {
        // the alternating series converges too slowly here; the value is 1 to double precision
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Asymptotic p-value for a KS statistic over `n` samples, with Stephens'
/// small-sample correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    kolmogorov_sf((sn + 0.12 + 0.11 / sn) * d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Number of cells after pooling.
    pub cells: usize,
}

/// Pearson chi-square goodness of fit. Adjacent cells are pooled left to
/// right until each pooled cell expects at least `min_expected` counts; a
/// short tail is folded into the last pooled cell.
pub fn chi_square(observed: &[f64], expected: &[f64], min_expected: f64) -> ChiSquareResult {
    assert_eq!(observed.len(), expected.len());
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let (mut o_acc, mut e_acc) = (0.0, 0.0);
    for (&o, &e) in observed.iter().zip(expected) {
        o_acc += o;
        e_acc += e;
        if e_acc >= min_expected {
            pooled.push((o_acc, e_acc));
            o_acc = 0.0;
            e_acc = 0.0;
        }
    }
    if e_acc > 0.0 || o_acc > 0.0 {
        match pooled.last_mut() {
            Some(last) => {
                last.0 += o_acc;
                last.1 += e_acc;
            }
            None => pooled.push((o_acc, e_acc)),
        }
    }
    let statistic: f64 = pooled
        .iter()
        .map(|&(o, e)| if e > 0.0 { (o - e).powi(2) / e } else { 0.0 })
        .sum();
    let cells = pooled.len();
    let dof = cells.saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64).expect("dof > 0").sf(statistic)
    };
    ChiSquareResult {
        statistic,
        dof,
        p_value,
        cells,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atoms_are_scored_against_the_jump() {
        // half the mass uniform on [0, 1/2), half an atom at 1
        let cdf = |x: f64| if x >= 1.0 { 1.0 } else { (2.0 * x).min(1.0) * 0.5 };
        let left = |x: f64| if x > 1.0 { 1.0 } else { (2.0 * x).min(1.0) * 0.5 };
        let mut xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 2000.0).collect();
        xs.extend(std::iter::repeat_n(1.0, 1000));
        let d = ks_statistic_with_atoms(&mut xs, cdf, left);
        assert!(d <= 0.0005 + 1e-12, "{d}");
        // the continuous version would see the atom as a 1/2 discrepancy
        assert!(ks_statistic(&mut xs, left) >= 0.5 - 1e-12);
    }

    #[test]
    fn kolmogorov_tail_reference_points() {
        // classical table values: P(K > 1.36) ~ 0.049, P(K > 1.63) ~ 0.0098
        assert!((kolmogorov_sf(1.3581) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_sf(KS_CRITICAL_1PCT) - 0.01).abs() < 2e-4);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn ks_of_exact_grid_is_small() {
        let n = 1000;
        let mut xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_statistic(&mut xs, |x| x);
        assert!((d - 0.5 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn chi_square_perfect_fit() {
        let e = vec![100.0; 10];
        let r = chi_square(&e, &e, 5.0);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.dof, 9);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chi_square_pools_sparse_cells() {
        let o = [1.0, 2.0, 0.0, 50.0, 47.0];
        let e = [1.0, 1.0, 1.0, 50.0, 47.0];
        let r = chi_square(&o, &e, 5.0);
        // first three cells plus the fourth pool into one, the fifth stands alone
        assert_eq!(r.cells, 2);
        assert_eq!(r.dof, 1);
    }

    #[test]
    fn chi_square_detects_gross_misfit() {
        let o = [200.0, 0.0, 0.0, 0.0];
        let e = [50.0; 4];
        assert!(chi_square(&o, &e, 5.0).p_value < 1e-10);
    }
}
