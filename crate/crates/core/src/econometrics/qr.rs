//! Householder QR of a column-major matrix.

use crate::scalar::Scalar;

/// Compact Householder factorisation: reflectors below the diagonal, `R`
/// above it, `R`'s diagonal in `rdiag`.
#[derive(Debug, Clone)]
pub struct Qr<T> {
    n: usize,
    k: usize,
    a: Vec<T>,
    rdiag: Vec<T>,
    col_norms: Vec<T>,
}

/// A column that is (numerically) a combination of earlier columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dependency<T> {
    pub column: usize,
    /// Earlier columns with their weights in the combination.
    pub combination: Vec<(usize, T)>,
}

impl<T: Scalar> Qr<T> {
    pub fn new(n: usize, k: usize, mut a: Vec<T>) -> Self {
        assert_eq!(a.len(), n * k);
        let col_norms: Vec<T> = (0..k).map(|j| norm(&a[j * n..(j + 1) * n])).collect();
        let mut rdiag = vec![T::zero(); k];
        for j in 0..k.min(n) {
            let (head, tail) = a.split_at_mut((j + 1) * n);
            let col = &mut head[j * n..];
            let mut nrm = norm(&col[j..]);
            if nrm != T::zero() {
                if col[j] < T::zero() {
                    nrm = -nrm;
                }
                for v in &mut col[j..] {
                    *v /= nrm;
                }
                col[j] += T::one();
                for other in tail.chunks_exact_mut(n) {
                    let s: T = col[j..].iter().zip(&other[j..]).map(|(&x, &y)| x * y).sum();
                    let s = -s / col[j];
                    for (o, &x) in other[j..].iter_mut().zip(&col[j..]) {
                        *o += s * x;
                    }
                }
            }
            rdiag[j] = -nrm;
        }
        Self { n, k, a, rdiag, col_norms }
    }

    #[inline]
    fn r(&self, i: usize, j: usize) -> T {
        match i.cmp(&j) {
            std::cmp::Ordering::Less => self.a[j * self.n + i],
            std::cmp::Ordering::Equal => self.rdiag[i],
            std::cmp::Ordering::Greater => T::zero(),
        }
    }

    fn tolerance(&self) -> T {
        T::epsilon() * T::from_usize_lossy(self.n.max(self.k)) * T::lit(100.0)
    }

    /// First column whose residual after projecting out earlier columns is
    /// negligible relative to its norm.
    pub fn first_dependency(&self) -> Option<Dependency<T>> {
        let tol = self.tolerance();
        for j in 0..self.k {
            let dependent = j >= self.n
                || self.col_norms[j] == T::zero()
                || self.rdiag[j].abs() <= tol * self.col_norms[j];
            if !dependent {
                continue;
            }
            if j >= self.n || self.col_norms[j] == T::zero() {
                return Some(Dependency { column: j, combination: Vec::new() });
            }
            // x_j ≈ X_{<j} c with R_{<j,<j} c = R_{<j,j}
            let rhs: Vec<T> = (0..j).map(|i| self.r(i, j)).collect();
            let c = self.back_substitute(j, rhs);
            let big = c.iter().fold(T::zero(), |m, v| m.max(v.abs()));
            let combination = c
                .into_iter()
                .enumerate()
                .filter(|(_, v)| v.abs() > big * T::lit(1e-6))
                .collect();
            return Some(Dependency { column: j, combination });
        }
        None
    }

    /// Solve `R[..m, ..m] x = b`.
    fn back_substitute(&self, m: usize, mut b: Vec<T>) -> Vec<T> {
        for i in (0..m).rev() {
            let mut s = b[i];
            for j in i + 1..m {
                s -= self.r(i, j) * b[j];
            }
            b[i] = s / self.r(i, i);
        }
        b
    }

    /// Least-squares solution of `X β ≈ y` (full column rank assumed).
    pub fn solve(&self, y: &[T]) -> Vec<T> {
        let n = self.n;
        let mut qty = y.to_vec();
        for j in 0..self.k {
            let col = &self.a[j * n..(j + 1) * n];
            if col[j] == T::zero() {
                continue;
            }
            let s: T = col[j..].iter().zip(&qty[j..]).map(|(&x, &v)| x * v).sum();
            let s = -s / col[j];
            for (v, &x) in qty[j..].iter_mut().zip(&col[j..]) {
                *v += s * x;
            }
        }
        qty.truncate(self.k);
        self.back_substitute(self.k, qty)
    }

    /// `(XᵀX)⁻¹ = R⁻¹ R⁻ᵀ`, row-major `k × k`.
    pub fn xtx_inverse(&self) -> Vec<T> {
        let k = self.k;
        // columns of R⁻¹
        let mut rinv = vec![T::zero(); k * k];
        for c in 0..k {
            let mut e = vec![T::zero(); k];
            e[c] = T::one();
            let col = self.back_substitute(k, e);
            for (r, v) in col.into_iter().enumerate() {
                rinv[r * k + c] = v;
            }
        }
        let mut out = vec![T::zero(); k * k];
        for i in 0..k {
            for j in i..k {
                let s: T = (j.max(i)..k).map(|m| rinv[i * k + m] * rinv[j * k + m]).sum();
                out[i * k + j] = s;
                out[j * k + i] = s;
            }
        }
        out
    }
}

fn norm<T: Scalar>(v: &[T]) -> T {
    // scaled to avoid overflow/underflow
    let scale = v.iter().fold(T::zero(), |m, x| m.max(x.abs()));
    if scale == T::zero() {
        return T::zero();
    }
    let ss: T = v.iter().map(|&x| (x / scale) * (x / scale)).sum();
    scale * ss.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn colmajor(rows: &[&[f64]]) -> (usize, usize, Vec<f64>) {
        let (n, k) = (rows.len(), rows[0].len());
        let mut a = vec![0.0; n * k];
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                a[j * n + i] = v;
            }
        }
        (n, k, a)
    }

    #[test]
    fn exact_fit() {
        let (n, k, a) = colmajor(&[&[1.0, 1.0], &[1.0, 2.0], &[1.0, 3.0], &[1.0, 4.0]]);
        let qr = Qr::new(n, k, a);
        assert!(qr.first_dependency().is_none());
        let beta = qr.solve(&[2.0, 4.0, 6.0, 8.0]);
        assert!(beta[0].abs() < 1e-12 && (beta[1] - 2.0).abs() < 1e-12);
        let inv = qr.xtx_inverse();
        // XᵀX = [[4, 10], [10, 30]], det 20
        assert!((inv[0] - 1.5).abs() < 1e-12 && (inv[1] + 0.5).abs() < 1e-12 && (inv[3] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn detects_duplicate_column() {
        let (n, k, a) = colmajor(&[&[1.0, 2.0, 2.0], &[1.0, 5.0, 5.0], &[1.0, 3.0, 3.0], &[1.0, 0.0, 0.0]]);
        let dep = Qr::new(n, k, a).first_dependency().unwrap();
        assert_eq!(dep.column, 2);
        assert_eq!(dep.combination.len(), 1);
        assert_eq!(dep.combination[0].0, 1);
        assert!((dep.combination[0].1 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn f32_solve() {
        let n = 4;
        let a: Vec<f32> = vec![1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 3.0, 4.0];
        let beta = Qr::new(n, 2, a).solve(&[3.0, 5.0, 7.0, 9.0]);
        assert!((beta[0] - 1.0).abs() < 1e-5 && (beta[1] - 2.0).abs() < 1e-5);
    }
}
