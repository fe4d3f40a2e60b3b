//! Least squares with district-clustered (CR1) covariance, and linear contrasts.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::econometrics::qr::Qr;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `n × k` regressors (column-major), outcome and cluster ids.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix<T> {
    pub names: Vec<String>,
    pub n: usize,
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub clusters: Vec<u32>,
}

impl<T: Scalar> DesignMatrix<T> {
    pub fn new(names: Vec<String>, columns: Vec<Vec<T>>, y: Vec<T>, clusters: Vec<u32>) -> Result<Self> {
        let n = y.len();
        if names.len() != columns.len() {
            return Err(Error::invalid("design: one name per column required"));
        }
        if let Some((name, c)) = names.iter().zip(&columns).find(|(_, c)| c.len() != n) {
            return Err(Error::invalid(format!("design column {name} has {} rows, outcome has {n}", c.len())));
        }
        if clusters.len() != n {
            return Err(Error::invalid("design: every row needs a cluster id"));
        }
        if let Some(i) = columns.iter().flatten().chain(&y).position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("design: non-finite value at flat position {i}")));
        }
        Ok(Self { names, n, x: columns.concat(), y, clusters })
    }

    pub fn k(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, j: usize) -> &[T] {
        &self.x[j * self.n..(j + 1) * self.n]
    }

    pub fn row(&self, i: usize) -> Vec<T> {
        (0..self.k()).map(|j| self.x[j * self.n + i]).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    /// z-tests with the 1.96 multiplier.
    #[default]
    Normal,
    /// t distribution with G − 1 degrees of freedom.
    StudentT,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult<T> {
    pub names: Vec<String>,
    pub beta: Vec<T>,
    /// Cluster-robust covariance, row-major `k × k`.
    pub cov: Vec<T>,
    pub residuals: Vec<T>,
    pub n: usize,
    pub k: usize,
    pub g: usize,
    pub r2: T,
    pub adj_r2: T,
    /// `G/(G−1) · (N−1)/(N−K)`.
    pub small_sample_factor: T,
    pub ci_method: CiMethod,
}

impl<T: Scalar> FitResult<T> {
    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn coef(&self, name: &str) -> Option<T> {
        self.index(name).map(|j| self.beta[j])
    }

    pub fn se(&self, name: &str) -> Option<T> {
        self.index(name).map(|j| self.cov[j * self.k + j].max(T::zero()).sqrt())
    }

    /// Weight vector summing the named coefficients.
    pub fn weights(&self, terms: &[&str]) -> Result<Vec<T>> {
        let mut w = vec![T::zero(); self.k];
        for t in terms {
            let j = self
                .index(t)
                .ok_or_else(|| Error::invalid(format!("no coefficient named {t}")))?;
            w[j] += T::one();
        }
        Ok(w)
    }
}

pub fn fit_ols<T: Scalar>(design: &DesignMatrix<T>) -> Result<FitResult<T>> {
    fit_ols_with(design, CiMethod::Normal)
}

pub fn fit_ols_with<T: Scalar>(design: &DesignMatrix<T>, ci_method: CiMethod) -> Result<FitResult<T>> {
    let (n, k) = (design.n, design.k());
    if k == 0 {
        return Err(Error::invalid("design has no columns"));
    }
    if n <= k {
        return Err(Error::invalid(format!("need more rows than columns, have N={n}, K={k}")));
    }
    let qr = Qr::new(n, k, design.x.clone());
    if let Some(dep) = qr.first_dependency() {
        return Err(Error::RankDeficient {
            column: design.names[dep.column].clone(),
            depends_on: dep.combination.iter().map(|&(j, _)| design.names[j].clone()).collect(),
        });
    }
    let beta = qr.solve(&design.y);
    let mut residuals = design.y.clone();
    for (j, &b) in beta.iter().enumerate() {
        for (r, &x) in residuals.iter_mut().zip(design.column(j)) {
            *r -= x * b;
        }
    }
    let xtx_inv = qr.xtx_inverse();
    let (cov, g, c) = cluster_cov(design, &residuals, &xtx_inv)?;

    let nn = T::from_usize_lossy(n);
    let mean = design.y.iter().copied().sum::<T>() / nn;
    let sst: T = design.y.iter().map(|&v| (v - mean) * (v - mean)).sum();
    let ssr: T = residuals.iter().map(|&u| u * u).sum();
    let r2 = if sst > T::zero() { T::one() - ssr / sst } else { T::one() };
    let adj_r2 = T::one() - (T::one() - r2) * (nn - T::one()) / (nn - T::from_usize_lossy(k));
    Ok(FitResult {
        names: design.names.clone(),
        beta,
        cov,
        residuals,
        n,
        k,
        g,
        r2,
        adj_r2,
        small_sample_factor: c,
        ci_method,
    })
}

/// CR1 sandwich `c · A (Σ_g X_gᵀ u_g u_gᵀ X_g) A` with `A = (XᵀX)⁻¹`.
/// Returns the covariance, the cluster count and `c`.
pub fn cluster_cov<T: Scalar>(design: &DesignMatrix<T>, residuals: &[T], xtx_inv: &[T]) -> Result<(Vec<T>, usize, T)> {
    let (n, k) = (design.n, design.k());
    let mut ids: Vec<u32> = design.clusters.clone();
    ids.sort_unstable();
    ids.dedup();
    let g = ids.len();
    if g < 2 {
        return Err(Error::invalid(format!("clustered covariance needs at least 2 clusters, have {g}")));
    }
    let mut scores = vec![T::zero(); g * k];
    for i in 0..n {
        let gi = ids.binary_search(&design.clusters[i]).expect("id present");
        let u = residuals[i];
        for j in 0..k {
            scores[gi * k + j] += design.x[j * n + i] * u;
        }
    }
    let mut meat = vec![T::zero(); k * k];
    for s in scores.chunks_exact(k) {
        for a in 0..k {
            for b in a..k {
                meat[a * k + b] += s[a] * s[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            meat[a * k + b] = meat[b * k + a];
        }
    }
    let (gg, nn, kk) = (T::from_usize_lossy(g), T::from_usize_lossy(n), T::from_usize_lossy(k));
    let c = gg / (gg - T::one()) * (nn - T::one()) / (nn - kk);
    let am = matmul(xtx_inv, &meat, k);
    let mut v = matmul(&am, xtx_inv, k);
    for a in 0..k {
        for b in 0..a {
            let s = (v[a * k + b] + v[b * k + a]) * T::lit(0.5) * c;
            v[a * k + b] = s;
            v[b * k + a] = s;
        }
        v[a * k + a] *= c;
    }
    Ok((v, g, c))
}

fn matmul<T: Scalar>(a: &[T], b: &[T], k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * k];
    for i in 0..k {
        for m in 0..k {
            let x = a[i * k + m];
            if x == T::zero() {
                continue;
            }
            for j in 0..k {
                out[i * k + j] += x * b[m * k + j];
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Contrast<T> {
    pub label: String,
    pub estimate: T,
    pub se: T,
    pub z: T,
    pub p: T,
    pub ci_lo: T,
    pub ci_hi: T,
}

/// `cᵀβ̂` with standard error `√(cᵀV̂c)`, two-sided p-value and 95% interval.
pub fn contrast<T: Scalar>(fit: &FitResult<T>, weights: &[T], label: &str) -> Result<Contrast<T>> {
    let k = fit.k;
    if weights.len() != k {
        return Err(Error::invalid(format!("contrast {label}: {} weights for {k} coefficients", weights.len())));
    }
    let estimate: T = weights.iter().zip(&fit.beta).map(|(&c, &b)| c * b).sum();
    let mut var = T::zero();
    for a in 0..k {
        if weights[a] == T::zero() {
            continue;
        }
        for b in 0..k {
            var += weights[a] * fit.cov[a * k + b] * weights[b];
        }
    }
    let scale: T = (0..k).map(|a| weights[a].abs() * fit.cov[a * k + a].abs()).sum::<T>() * T::from_usize_lossy(k);
    if var < -(scale * T::lit(1e-10)) {
        return Err(Error::Numerical(format!("contrast {label}: negative variance {var}")));
    }
    if !(var > T::zero()) {
        return Err(Error::Numerical(format!("contrast {label}: zero variance, z undefined")));
    }
    let se = var.sqrt();
    let z = estimate / se;
    let zf = z.as_f64();
    let (p, q) = match fit.ci_method {
        CiMethod::Normal => {
            let d = Normal::standard();
            (2.0 * d.sf(zf.abs()), 1.96)
        }
        CiMethod::StudentT => {
            let d = StudentsT::new(0.0, 1.0, (fit.g - 1) as f64)
                .map_err(|e| Error::Numerical(format!("t distribution: {e}")))?;
            (2.0 * d.sf(zf.abs()), d.inverse_cdf(0.975))
        }
    };
    let q = T::lit(q);
    Ok(Contrast {
        label: label.to_owned(),
        estimate,
        se,
        z,
        p: T::lit(p),
        ci_lo: estimate - q * se,
        ci_hi: estimate + q * se,
    })
}

/// Contrast selecting one coefficient.
pub fn coefficient<T: Scalar>(fit: &FitResult<T>, name: &str) -> Result<Contrast<T>> {
    contrast(fit, &fit.weights(&[name])?, name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let d = DesignMatrix::new(
            vec!["const".into(), "x".into()],
            vec![vec![1.0; 10], x],
            y,
            (0..10).collect(),
        )
        .unwrap();
        let f = fit_ols(&d).unwrap();
        assert!(f.beta[0].abs() < 1e-12 && (f.beta[1] - 2.0).abs() < 1e-12);
        assert!(f.residuals.iter().all(|r| r.abs() < 1e-12));
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_column_is_named() {
        let x: Vec<f64> = (0..10).map(|i| (i * i) as f64).collect();
        let d = DesignMatrix::new(
            vec!["const".into(), "a".into(), "b".into()],
            vec![vec![1.0; 10], x.clone(), x],
            (0..10).map(f64::from).collect(),
            (0..10).collect(),
        )
        .unwrap();
        match fit_ols(&d) {
            Err(Error::RankDeficient { column, depends_on }) => {
                assert_eq!(column, "b");
                assert_eq!(depends_on, vec!["a".to_string()]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn one_cluster_is_an_error() {
        let d = DesignMatrix::new(vec!["const".into()], vec![vec![1.0; 5]], vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![7; 5]).unwrap();
        assert!(fit_ols(&d).is_err());
    }

    #[test]
    fn zero_contrast_is_undefined() {
        let d = DesignMatrix::new(
            vec!["const".into(), "x".into()],
            vec![vec![1.0; 6], vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]],
            vec![1.0, 2.5, 0.8, 2.0, 1.1, 3.0],
            (0..6).collect(),
        )
        .unwrap();
        let f: FitResult<f64> = fit_ols(&d).unwrap();
        assert!(contrast(&f, &[0.0, 0.0], "zero").is_err());
        let c = coefficient(&f, "x").unwrap();
        assert_eq!(c.estimate, f.beta[1]);
        assert!((c.se - f.se("x").unwrap()).abs() < 1e-15);
        assert!((c.ci_hi - c.estimate - 1.96 * c.se).abs() < 1e-12);
        // t-based intervals are wider
        let ft = fit_ols_with(&d, CiMethod::StudentT).unwrap();
        let ct = coefficient(&ft, "x").unwrap();
        assert!(ct.ci_hi - ct.ci_lo > c.ci_hi - c.ci_lo);
        assert!(ct.p > c.p);
    }

    use proptest::prelude::*;

    fn design(rows: &[(f64, f64, f64)], y: Vec<f64>) -> DesignMatrix<f64> {
        let n = rows.len();
        DesignMatrix::new(
            vec!["c".into(), "a".into(), "b".into()],
            vec![vec![1.0; n], rows.iter().map(|r| r.0).collect(), rows.iter().map(|r| r.1).collect()],
            y,
            (0..n as u32).map(|i| i % 5).collect(),
        )
        .unwrap()
    }

    proptest! {
        #[test]
        fn rescaling_the_outcome_rescales_the_fit(
            rows in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0, -1.0f64..1.0), 12..60),
            scale in 0.1f64..10.0,
        ) {
            let y: Vec<f64> = rows.iter().map(|r| 1.0 + 2.0 * r.0 - r.1 + r.2).collect();
            let Ok(a) = fit_ols(&design(&rows, y.clone())) else { return Ok(()) };
            let b = fit_ols(&design(&rows, y.iter().map(|v| v * scale).collect())).unwrap();
            let tol = 1e-8 * (1.0 + a.beta.iter().map(|v| v.abs()).fold(0.0, f64::max));
            for j in 0..3 {
                prop_assert!((b.beta[j] - scale * a.beta[j]).abs() <= tol * scale);
                let (va, vb) = (a.cov[j * 3 + j], b.cov[j * 3 + j]);
                prop_assert!((vb - scale * scale * va).abs() <= 1e-8 * scale * scale * (va.abs() + 1e-12));
            }
            // residuals are orthogonal to every regressor
            let d = design(&rows, y);
            for j in 0..3 {
                let dot: f64 = d.column(j).iter().zip(&a.residuals).map(|(x, u)| x * u).sum();
                prop_assert!(dot.abs() <= 1e-8 * (1.0 + d.column(j).iter().map(|v| v.abs()).sum::<f64>()));
            }
        }
    }
}
