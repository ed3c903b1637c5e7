//! Wasserstein-2 distances between empirical and Gaussian measures.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::rng;

fn sorted(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("samples must be finite".into()));
    }
    let mut s = v.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    Ok(s)
}

/// Exact W2 between two equally weighted 1-D samples of equal size, by the
/// monotone coupling.
pub fn w2_1d_exact(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(invalid("samples must be non-empty"));
    }
    let (a, b) = (sorted(a)?, sorted(b)?);
    let ss: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// Closed-form W2 between `N(mu1, diag var1)` and `N(mu2, diag var2)`.
pub fn w2_gaussian(mu1: &[f64], var1: &[f64], mu2: &[f64], var2: &[f64]) -> Result<f64> {
    let d = mu1.len();
    for v in [var1, mu2, var2] {
        if v.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: v.len(),
            });
        }
    }
    if var1.iter().chain(var2).any(|v| !(*v >= 0.0)) {
        return Err(invalid("variances must be nonnegative"));
    }
    let mean: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b) * (a - b)).sum();
    let cov: f64 = var1
        .iter()
        .zip(var2)
        .map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2))
        .sum();
    Ok((mean + cov).sqrt())
}

/// A Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicedEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_projections: usize,
}

fn random_directions(d: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, 0);
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / nrm).collect()
        })
        .collect()
}

/// Directions used by [`sliced_w2`] for a given dimension, count and seed.
pub fn sliced_directions(d: usize, n_proj: usize, seed: u64) -> Vec<Vec<f64>> {
    random_directions(d, n_proj, seed)
}

fn project(x: &ArrayView2<'_, f64>, dir: &[f64]) -> Vec<f64> {
    x.rows()
        .into_iter()
        .map(|r| r.iter().zip(dir).map(|(a, b)| a * b).sum())
        .collect()
}

/// Summarises per-direction squared distances as `sqrt(mean)` with a
/// delta-method standard error.
pub fn summarise_sliced(squares: &[f64]) -> SlicedEstimate {
    let n = squares.len() as f64;
    let mean = squares.iter().sum::<f64>() / n;
    let var = if squares.len() > 1 {
        squares.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let value = mean.sqrt();
    let se_mean = (var / n).sqrt();
    let stderr = if value > 0.0 { se_mean / (2.0 * value) } else { se_mean.sqrt() };
    SlicedEstimate {
        value,
        stderr,
        n_projections: squares.len(),
    }
}

/// Sliced W2: root mean of squared 1-D W2 distances between projections on
/// `n_proj` random unit directions.
pub fn sliced_w2(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, n_proj: usize, seed: u64) -> Result<SlicedEstimate> {
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension {
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    if n_proj == 0 {
        return Err(invalid("need at least one projection"));
    }
    let squares = random_directions(a.ncols(), n_proj, seed)
        .iter()
        .map(|dir| w2_1d_exact(&project(&a, dir), &project(&b, dir)).map(|w| w * w))
        .collect::<Result<Vec<f64>>>()?;
    Ok(summarise_sliced(&squares))
}

/// `sqrt(sum_j W2(a_j, b_j)^2)` over coordinates: exact for product
/// measures and a lower bound on W2 otherwise.
pub fn w2_coordinatewise(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension {
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    let mut ss = 0.0;
    for j in 0..a.ncols() {
        let w = w2_1d_exact(&a.column(j).to_vec(), &b.column(j).to_vec())?;
        ss += w * w;
    }
    Ok(ss.sqrt())
}

/// `sqrt(mean ||a_i - b_i||^2)` for paired rows: the cost of one particular
/// coupling, hence an upper bound on W2 between the two laws.
pub fn w2_coupling_upper(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(invalid("paired samples must have equal shape"));
    }
    let ss: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((ss / a.nrows() as f64).sqrt())
}

/// Per-coordinate sample means and variances.
pub fn moments(x: ArrayView2<'_, f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let mean: Vec<f64> = x.columns().into_iter().map(|c| c.sum() / n).collect();
    let var = x
        .columns()
        .into_iter()
        .zip(&mean)
        .map(|(c, m)| c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0).max(1.0))
        .collect();
    (mean, var)
}

/// Largest sample size accepted by [`lp_oracle_w2`].
pub const LP_ORACLE_MAX: usize = 8;

/// Exact W2 between two uniform empirical measures on `n <= 8` points in
/// `R^d`, by enumerating every permutation coupling (optimal for equal
/// uniform weights).
pub fn lp_oracle_w2(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    let n = a.nrows();
    if b.nrows() != n || a.ncols() != b.ncols() {
        return Err(invalid("oracle needs samples of equal shape"));
    }
    if n == 0 || n > LP_ORACLE_MAX {
        return Err(invalid(format!("oracle supports 1..={LP_ORACLE_MAX} points, got {n}")));
    }
    let cost: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| a.row(i).iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum())
                .collect()
        })
        .collect();
    // Heap's algorithm.
    let mut perm: Vec<usize> = (0..n).collect();
    let total = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>();
    let mut best = total(&perm);
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(total(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok((best / n as f64).sqrt())
}

/// How a W2 value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum W2Method {
    Exact1d,
    /// Closed form between Gaussians fitted to each sample's moments.
    GaussianClosedForm,
    Coordinatewise,
    Sliced { n_projections: usize },
    LpOracle,
}

impl W2Method {
    /// Exact for `d = 1`, sliced with 256 projections otherwise.
    pub fn auto(dim: usize) -> Self {
        if dim == 1 {
            W2Method::Exact1d
        } else {
            W2Method::Sliced { n_projections: 256 }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct W2Estimate {
    pub value: f64,
    pub method: W2Method,
    pub n_samples: [usize; 2],
    /// Standard error, sliced estimates only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
}

/// W2 between two sample sets (rows are points) by the chosen method.
pub fn estimate_w2(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, method: W2Method, seed: u64) -> Result<W2Estimate> {
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension {
            expected: a.ncols(),
            got: b.ncols(),
        });
    }
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(invalid("samples must be non-empty"));
    }
    let mut stderr = None;
    let value = match method {
        W2Method::Exact1d => {
            if a.ncols() != 1 {
                return Err(invalid(format!("exact 1-D W2 needs d = 1, got d = {}", a.ncols())));
            }
            w2_1d_exact(&a.column(0).to_vec(), &b.column(0).to_vec())?
        }
        W2Method::GaussianClosedForm => {
            let (m1, v1) = moments(a);
            let (m2, v2) = moments(b);
            w2_gaussian(&m1, &v1, &m2, &v2)?
        }
        W2Method::Coordinatewise => w2_coordinatewise(a, b)?,
        W2Method::Sliced { n_projections } => {
            let est = sliced_w2(a, b, n_projections, seed)?;
            stderr = Some(est.stderr);
            est.value
        }
        W2Method::LpOracle => lp_oracle_w2(&a.to_owned(), &b.to_owned())?,
    };
    Ok(W2Estimate {
        value,
        method,
        n_samples: [a.nrows(), b.nrows()],
        stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn simple_cases() {
        assert_eq!(w2_1d_exact(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((w2_1d_exact(&[0.0, 1.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((w2_1d_exact(&[3.0, 0.0], &[1.0, 2.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!(w2_1d_exact(&[0.0], &[0.0, 1.0]).is_err());
        assert_eq!(w2_gaussian(&[0.0], &[1.0], &[0.0], &[1.0]).unwrap(), 0.0);
        assert!((w2_gaussian(&[1.0], &[4.0], &[0.0], &[1.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(w2_gaussian(&[0.0], &[-1.0], &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn estimate_records_method() {
        let a = Array2::from_shape_vec((3, 1), vec![0.0, 1.0, 2.0]).unwrap();
        let b = a.mapv(|x| x + 0.5);
        let e = estimate_w2(a.view(), b.view(), W2Method::auto(1), 0).unwrap();
        assert_eq!(e.method, W2Method::Exact1d);
        assert!((e.value - 0.5).abs() < 1e-15 && e.stderr.is_none());
        let lp = estimate_w2(a.view(), b.view(), W2Method::LpOracle, 0).unwrap();
        assert!((lp.value - 0.5).abs() < 1e-15);
        let a2 = Array2::from_shape_vec((2, 2), vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let s = estimate_w2(a2.view(), a2.view(), W2Method::auto(2), 3).unwrap();
        assert_eq!(s.value, 0.0);
        assert_eq!(s.stderr, Some(0.0));
        assert!(estimate_w2(a2.view(), a2.view(), W2Method::Exact1d, 0).is_err());
    }

    #[test]
    fn lp_oracle_agrees_with_sorting_in_1d() {
        let a = Array2::from_shape_vec((4, 1), vec![0.3, -1.0, 2.5, 0.0]).unwrap();
        let b = Array2::from_shape_vec((4, 1), vec![1.0, 0.1, -0.7, 3.0]).unwrap();
        let lp = lp_oracle_w2(&a, &b).unwrap();
        let ex = w2_1d_exact(&a.column(0).to_vec(), &b.column(0).to_vec()).unwrap();
        assert!((lp - ex).abs() < 1e-14);
        let big = Array2::<f64>::zeros((9, 1));
        assert!(lp_oracle_w2(&big, &big).is_err());
    }

    #[test]
    fn sliced_of_shift_in_2d() {
        // A shift v projects to <v, theta>; E <v, theta>^2 = |v|^2 / 2 in 2-D.
        let a = Array2::from_shape_fn((200, 2), |(i, j)| (i as f64 * 0.37 + j as f64).sin());
        let b = a.mapv(|x| x) + &ndarray::arr1(&[3.0, 4.0]);
        let s = sliced_w2(a.view(), b.view(), 4000, 1).unwrap();
        assert!((s.value - 5.0 / 2f64.sqrt()).abs() < 5.0 * s.stderr + 1e-9);
    }

    #[test]
    fn coupling_dominates_exact() {
        let a = Array2::from_shape_vec((3, 1), vec![0.0, 1.0, 2.0]).unwrap();
        let b = Array2::from_shape_vec((3, 1), vec![2.0, 1.0, 0.0]).unwrap();
        assert_eq!(w2_coordinatewise(a.view(), b.view()).unwrap(), 0.0);
        assert!(w2_coupling_upper(a.view(), b.view()).unwrap() > 1.0);
    }

    proptest! {
        #[test]
        fn w2_is_a_symmetric_nonnegative_distance(
            a in proptest::collection::vec(-10.0..10.0f64, 1..20),
            shift in -3.0..3.0f64,
        ) {
            let b: Vec<f64> = a.iter().map(|x| x + shift).collect();
            let ab = w2_1d_exact(&a, &b).unwrap();
            let ba = w2_1d_exact(&b, &a).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert!((ab - shift.abs()).abs() < 1e-12);
            prop_assert_eq!(w2_1d_exact(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn sorting_matches_permutation_oracle(v in proptest::collection::vec(-5.0..5.0f64, 2..=12)) {
            let n = v.len() / 2;
            let a = Array2::from_shape_vec((n, 1), v[..n].to_vec()).unwrap();
            let b = Array2::from_shape_vec((n, 1), v[n..2 * n].to_vec()).unwrap();
            let lp = lp_oracle_w2(&a, &b).unwrap();
            let ex = w2_1d_exact(&v[..n], &v[n..2 * n]).unwrap();
            prop_assert!((lp - ex).abs() <= 1e-10);
        }
    }
}
