//! Small dense complex matrices for the evaluation paths (channel, rate, baseline).

use std::ops::{Index, IndexMut};

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub type C<T> = Complex<T>;

/// Row-major complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> CMatrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix {
            rows,
            cols,
            data: vec![Complex::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = Complex::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex<T>) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CMatrix { rows, cols, data }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Complex<T>>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(format!(
                "{}x{} matrix needs {} entries, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(CMatrix { rows, cols, data })
    }

    /// Column vector from a slice.
    pub fn column(v: &[Complex<T>]) -> Self {
        CMatrix {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    pub fn diag(v: &[Complex<T>]) -> Self {
        let mut m = Self::zeros(v.len(), v.len());
        for (i, &x) in v.iter().enumerate() {
            m[(i, i)] = x;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex<T>> {
        self.data
    }

    pub fn col(&self, j: usize) -> Vec<Complex<T>> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn matmul(&self, rhs: &CMatrix<T>) -> Result<CMatrix<T>> {
        if self.cols != rhs.rows {
            return Err(Error::dim(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for p in 0..self.cols {
                let a = self[(i, p)];
                if a.is_zero() {
                    continue;
                }
                let row = &rhs.data[p * rhs.cols..(p + 1) * rhs.cols];
                let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (d, &b) in dst.iter_mut().zip(row) {
                    *d = *d + a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn conj_transpose(&self) -> CMatrix<T> {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> CMatrix<T> {
        CMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, s: T) -> CMatrix<T> {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    pub fn mul_scalar(&self, s: Complex<T>) -> CMatrix<T> {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    pub fn add(&self, rhs: &CMatrix<T>) -> Result<CMatrix<T>> {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &CMatrix<T>) -> Result<CMatrix<T>> {
        self.zip_with(rhs, |a, b| a - b)
    }

    fn zip_with(
        &self,
        rhs: &CMatrix<T>,
        f: impl Fn(Complex<T>, Complex<T>) -> Complex<T>,
    ) -> Result<CMatrix<T>> {
        if self.shape() != rhs.shape() {
            return Err(Error::dim(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        Ok(CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn frobenius_sqr(&self) -> T {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn frobenius(&self) -> T {
        self.frobenius_sqr().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Largest entry-wise deviation from Hermitian symmetry.
    pub fn hermitian_defect(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.rows {
            for j in 0..self.cols {
                let d = (self[(i, j)] - self[(j, i)].conj()).norm();
                worst = worst.max(d);
            }
        }
        worst
    }

    /// Lower-triangular `L` with `L L^H = self`; errors when not positive definite.
    pub fn cholesky(&self) -> Result<Cholesky<T>> {
        if self.rows != self.cols {
            return Err(Error::dim("cholesky needs a square matrix"));
        }
        let n = self.rows;
        let mut l = CMatrix::zeros(n, n);
        for j in 0..n {
            let mut diag = self[(j, j)].re;
            for k in 0..j {
                diag -= l[(j, k)].norm_sqr();
            }
            if !(diag > T::zero()) || !diag.is_finite() {
                return Err(Error::numerical(format!(
                    "matrix is not positive definite (pivot {} = {})",
                    j, diag
                )));
            }
            let ljj = diag.sqrt();
            l[(j, j)] = Complex::new(ljj, T::zero());
            for i in (j + 1)..n {
                let mut acc = self[(i, j)];
                for k in 0..j {
                    acc = acc - l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = acc / ljj;
            }
        }
        Ok(Cholesky { l })
    }

    /// Eigen-decomposition of a Hermitian matrix by cyclic complex Jacobi rotations.
    ///
    /// Eigenvalues are returned in descending order with matching eigenvector columns.
    pub fn hermitian_eigen(&self) -> Result<(Vec<T>, CMatrix<T>)> {
        if self.rows != self.cols {
            return Err(Error::dim("eigen-decomposition needs a square matrix"));
        }
        let n = self.rows;
        let mut a = self.clone();
        let mut v = CMatrix::identity(n);
        let scale = a.frobenius().max(T::min_positive_value());
        let tol = T::epsilon() * scale * T::lit(0.1);
        for _sweep in 0..100 {
            let mut off = T::zero();
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[(p, q)].norm_sqr();
                }
            }
            if off.sqrt() <= tol {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let b = a[(p, q)];
                    let mag = b.norm();
                    if mag <= tol * T::lit(1e-3) {
                        continue;
                    }
                    let phase = b / mag;
                    // D = diag(1 at p, conj(phase) at q) makes (p,q) real.
                    for k in 0..n {
                        a[(k, q)] = a[(k, q)] * phase.conj();
                        v[(k, q)] = v[(k, q)] * phase.conj();
                    }
                    for k in 0..n {
                        a[(q, k)] = a[(q, k)] * phase;
                    }
                    let app = a[(p, p)].re;
                    let aqq = a[(q, q)].re;
                    let tau = (aqq - app) / (T::lit(2.0) * mag);
                    let t = if tau >= T::zero() {
                        T::one() / (tau + (T::one() + tau * tau).sqrt())
                    } else {
                        -T::one() / (-tau + (T::one() + tau * tau).sqrt())
                    };
                    let c = T::one() / (T::one() + t * t).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = akp * c - akq * s;
                        a[(k, q)] = akp * s + akq * c;
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = vkp * c - vkq * s;
                        v[(k, q)] = vkp * s + vkq * c;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = apk * c - aqk * s;
                        a[(q, k)] = apk * s + aqk * c;
                    }
                    a[(p, q)] = Complex::zero();
                    a[(q, p)] = Complex::zero();
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| {
            a[(j, j)]
                .re
                .partial_cmp(&a[(i, i)].re)
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let values = order.iter().map(|&i| a[(i, i)].re).collect();
        let vectors = CMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
        Ok((values, vectors))
    }
}

impl<T> Index<(usize, usize)> for CMatrix<T> {
    type Output = Complex<T>;

    fn index(&self, (i, j): (usize, usize)) -> &Complex<T> {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for CMatrix<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex<T> {
        &mut self.data[i * self.cols + j]
    }
}

/// Cholesky factor of a Hermitian positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky<T> {
    l: CMatrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    pub fn factor(&self) -> &CMatrix<T> {
        &self.l
    }

    /// Natural log of the determinant.
    pub fn ln_det(&self) -> T {
        let n = self.l.rows();
        let mut acc = T::zero();
        for i in 0..n {
            acc += self.l[(i, i)].re.ln();
        }
        acc + acc
    }

    /// `L^{-1} b` by forward substitution.
    pub fn forward(&self, b: &[Complex<T>]) -> Vec<Complex<T>> {
        let n = self.l.rows();
        let mut x = b.to_vec();
        for i in 0..n {
            let mut acc = x[i];
            for k in 0..i {
                acc = acc - self.l[(i, k)] * x[k];
            }
            x[i] = acc / self.l[(i, i)].re;
        }
        x
    }

    /// `y^H A^{-1} y` for the factored `A`.
    pub fn inv_quad_form(&self, y: &[Complex<T>]) -> T {
        self.forward(y).iter().map(|z| z.norm_sqr()).sum()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[Complex<T>]) -> Vec<Complex<T>> {
        let n = self.l.rows();
        let mut x = self.forward(b);
        for i in (0..n).rev() {
            let mut acc = x[i];
            for k in (i + 1)..n {
                acc = acc - self.l[(k, i)].conj() * x[k];
            }
            x[i] = acc / self.l[(i, i)].re;
        }
        x
    }

    pub fn inverse(&self) -> CMatrix<T> {
        let n = self.l.rows();
        let mut inv = CMatrix::zeros(n, n);
        let mut e = vec![Complex::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|z| *z = Complex::zero());
            e[j] = Complex::one();
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize, seed: u64) -> CMatrix<f64> {
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        CMatrix::from_fn(n, n, |_, _| Complex::new(next(), next()))
    }

    fn spd(n: usize, seed: u64) -> CMatrix<f64> {
        let g = sample(n, seed);
        g.matmul(&g.conj_transpose())
            .unwrap()
            .add(&CMatrix::identity(n).scale(0.1))
            .unwrap()
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = spd(5, 3);
        let ch = a.cholesky().unwrap();
        let l = ch.factor();
        let back = l.matmul(&l.conj_transpose()).unwrap();
        assert!(back.sub(&a).unwrap().frobenius() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = CMatrix::<f64>::identity(3);
        a[(1, 1)] = Complex::new(-1.0, 0.0);
        assert!(matches!(a.cholesky(), Err(Error::Numerical(_))));
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let a = spd(4, 11);
        let inv = a.cholesky().unwrap().inverse();
        let prod = a.matmul(&inv).unwrap();
        assert!(prod.sub(&CMatrix::identity(4)).unwrap().frobenius() < 1e-10);
    }

    #[test]
    fn jacobi_eigen_diagonalizes() {
        let a = spd(6, 5);
        let (vals, vecs) = a.hermitian_eigen().unwrap();
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        let lam = CMatrix::diag(&vals.iter().map(|&x| Complex::new(x, 0.0)).collect::<Vec<_>>());
        let back = vecs.matmul(&lam).unwrap().matmul(&vecs.conj_transpose()).unwrap();
        assert!(back.sub(&a).unwrap().frobenius() < 1e-10);
        let ln_det: f64 = vals.iter().map(|x| x.ln()).sum();
        assert!((ln_det - a.cholesky().unwrap().ln_det()).abs() < 1e-10);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let a = CMatrix::<f64>::zeros(2, 3);
        assert!(matches!(a.matmul(&a), Err(Error::Dimension(_))));
    }
}
