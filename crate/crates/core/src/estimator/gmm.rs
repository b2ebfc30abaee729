//! Linear IV / GMM algebra on already-demeaned design matrices.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Reciprocal condition number below which a normal matrix is treated as
/// singular.
const RCOND_MIN: f64 = 1e-13;

/// Inverse of a symmetric matrix, refusing near-singular input.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let svd = m.clone().svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if !(max > 0.0) || min / max < RCOND_MIN || !min.is_finite() {
        return Err(Error::RankDeficient(format!(
            "{what} is singular (singular values {min:e} .. {max:e})"
        )));
    }
    let inv = m
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient(format!("{what} is not invertible")))?;
    Ok(symmetrize(inv))
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// `S = sum_c (Z_c' u_c)(Z_c' u_c)'`, accumulated in row order.
pub fn cluster_moment_cov(z: &DMatrix<f64>, u: &DVector<f64>, clusters: &[usize], n_clusters: usize) -> DMatrix<f64> {
    let l = z.ncols();
    let mut g = DMatrix::<f64>::zeros(l, n_clusters);
    for (i, &c) in clusters.iter().enumerate() {
        let ui = u[i];
        for a in 0..l {
            g[(a, c)] += z[(i, a)] * ui;
        }
    }
    symmetrize(&g * g.transpose())
}

/// Coefficients of the GMM estimator with weight `w`:
/// `(X'Z W Z'X)^{-1} X'Z W Z'y`.
pub fn gmm_coefficients(y: &DVector<f64>, x: &DMatrix<f64>, z: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DVector<f64>> {
    let zx = z.transpose() * x;
    let zy = z.transpose() * y;
    let a = zx.transpose() * w * &zx;
    let a_inv = spd_inverse(&a, "X'Z W Z'X")?;
    Ok(a_inv * (zx.transpose() * w * zy))
}

/// Two-stage least squares coefficients.
pub fn tsls(y: &DVector<f64>, x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DVector<f64>> {
    let ztz = z.transpose() * z;
    let w = spd_inverse(&ztz, "Z'Z")?;
    gmm_coefficients(y, x, z, &w)
}

#[derive(Clone, Debug)]
pub struct GmmFit {
    /// First-step (2SLS) coefficients.
    pub first_step: DVector<f64>,
    pub coefficients: DVector<f64>,
    /// Cluster-robust covariance of `coefficients`.
    pub covariance: DMatrix<f64>,
    pub residuals: DVector<f64>,
    pub weight: DMatrix<f64>,
    /// Max abs entry of `X'Z W Z'u` at the solution.
    pub foc_max: f64,
}

/// Weighting used in the second step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Inverse of the cluster-summed moment covariance at the 2SLS residuals.
    #[default]
    TwoStepClustered,
    /// `(Z'Z)^{-1}`: the second step reproduces 2SLS.
    Homoskedastic,
}

/// 2SLS followed by a second GMM step. Covariance is `(Q' S^{-1} Q)^{-1}`
/// for the efficient weight and the cluster sandwich otherwise, with
/// `Q = Z'X` and `S` the clustered moment covariance.
pub fn two_step_gmm(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    clusters: &[usize],
    n_clusters: usize,
    weighting: Weighting,
) -> Result<GmmFit> {
    if z.ncols() < x.ncols() {
        return Err(Error::InvalidSpec(format!(
            "{} instruments for {} regressors",
            z.ncols(),
            x.ncols()
        )));
    }
    let ztz_inv = spd_inverse(&(z.transpose() * z), "Z'Z")?;
    let first_step = gmm_coefficients(y, x, z, &ztz_inv)?;
    let u1 = y - x * &first_step;
    let s1 = cluster_moment_cov(z, &u1, clusters, n_clusters);
    let zx = z.transpose() * x;
    let (weight, coefficients, covariance) = match weighting {
        Weighting::TwoStepClustered => {
            let w = spd_inverse(&s1, "clustered moment covariance")?;
            let b = gmm_coefficients(y, x, z, &w)?;
            let cov = spd_inverse(&(zx.transpose() * &w * &zx), "Q'WQ")?;
            (w, b, cov)
        }
        Weighting::Homoskedastic => {
            let bread = spd_inverse(&(zx.transpose() * &ztz_inv * &zx), "X'Pz X")?;
            let half = &bread * zx.transpose() * &ztz_inv;
            let cov = symmetrize(&half * &s1 * half.transpose());
            (ztz_inv.clone(), first_step.clone(), cov)
        }
    };
    let residuals = y - x * &coefficients;
    let foc = zx.transpose() * &weight * (z.transpose() * &residuals);
    Ok(GmmFit {
        first_step,
        coefficients,
        covariance,
        residuals,
        weight,
        foc_max: foc.amax(),
    })
}

/// OLS with cluster-robust covariance.
pub fn ols_clustered(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    clusters: &[usize],
    n_clusters: usize,
) -> Result<(DVector<f64>, DMatrix<f64>, DVector<f64>)> {
    let xtx_inv = spd_inverse(&(x.transpose() * x), "X'X")?;
    let beta = &xtx_inv * (x.transpose() * y);
    let u = y - x * &beta;
    let meat = cluster_moment_cov(x, &u, clusters, n_clusters);
    let cov = symmetrize(&xtx_inv * meat * &xtx_inv);
    Ok((beta, cov, u))
}

/// Residuals of each column of `m` after projecting on `basis`.
pub fn partial_out(m: &DMatrix<f64>, basis: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if basis.ncols() == 0 {
        return Ok(m.clone());
    }
    let inv = spd_inverse(&(basis.transpose() * basis), "exogenous regressor cross-product")?;
    let coef = inv * (basis.transpose() * m);
    Ok(m - basis * coef)
}

/// Sanderson-Windmeijer conditional first-stage F statistic for each
/// endogenous regressor. Inputs must already have the exogenous regressors
/// partialled out; the Wald test uses the cluster-robust covariance.
pub fn sanderson_windmeijer(
    endog: &DMatrix<f64>,
    excluded: &DMatrix<f64>,
    clusters: &[usize],
    n_clusters: usize,
) -> Result<Vec<f64>> {
    let k = endog.ncols();
    let l = excluded.ncols();
    if l < k {
        return Err(Error::InvalidSpec(format!("{l} excluded instruments for {k} endogenous regressors")));
    }
    let ztz_inv = spd_inverse(&(excluded.transpose() * excluded), "Z'Z")?;
    let proj = excluded * (&ztz_inv * excluded.transpose() * endog);
    let dof = (l - k + 1) as f64;
    (0..k)
        .map(|j| {
            let xj = endog.column(j).into_owned();
            let e = if k == 1 {
                xj
            } else {
                let others: Vec<usize> = (0..k).filter(|&i| i != j).collect();
                let x_other = endog.select_columns(&others);
                let fitted_other = proj.select_columns(&others);
                // 2SLS of x_j on the other endogenous regressors
                let a = fitted_other.transpose() * &x_other;
                let a_inv = a
                    .try_inverse()
                    .ok_or_else(|| Error::RankDeficient("SW residualisation".into()))?;
                let d = a_inv * (fitted_other.transpose() * &xj);
                &xj - &x_other * d
            };
            let b = &ztz_inv * (excluded.transpose() * &e);
            let r = &e - excluded * &b;
            let meat = cluster_moment_cov(excluded, &r, clusters, n_clusters);
            let v = symmetrize(&ztz_inv * meat * &ztz_inv);
            let v_inv = spd_inverse(&v, "first-stage covariance")?;
            let wald = (b.transpose() * v_inv * &b)[(0, 0)];
            Ok(wald / dof)
        })
        .collect()
}
