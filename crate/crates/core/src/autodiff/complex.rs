//! Complex tensors as `(re, im)` pairs of real graph nodes.

use super::graph::{Graph, Var};
use crate::error::Result;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CVar {
    pub re: Var,
    pub im: Var,
}

impl CVar {
    pub fn new(re: Var, im: Var) -> Self {
        CVar { re, im }
    }
}

impl<T: Scalar> Graph<T> {
    pub fn c_add(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        Ok(CVar::new(self.add(a.re, b.re)?, self.add(a.im, b.im)?))
    }

    /// Elementwise complex product with broadcasting.
    pub fn c_mul(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        let rr = self.mul(a.re, b.re)?;
        let ii = self.mul(a.im, b.im)?;
        let ri = self.mul(a.re, b.im)?;
        let ir = self.mul(a.im, b.re)?;
        Ok(CVar::new(self.sub(rr, ii)?, self.add(ri, ir)?))
    }

    /// Complex tensor times a real tensor (broadcasting).
    pub fn c_mul_real(&mut self, a: CVar, r: Var) -> Result<CVar> {
        Ok(CVar::new(self.mul(a.re, r)?, self.mul(a.im, r)?))
    }

    pub fn c_scale(&mut self, a: CVar, s: T) -> CVar {
        CVar::new(self.scale(a.re, s), self.scale(a.im, s))
    }

    /// Batched complex matrix product over the last two axes.
    pub fn c_matmul(&mut self, a: CVar, b: CVar) -> Result<CVar> {
        let rr = self.matmul(a.re, b.re)?;
        let ii = self.matmul(a.im, b.im)?;
        let ri = self.matmul(a.re, b.im)?;
        let ir = self.matmul(a.im, b.re)?;
        Ok(CVar::new(self.sub(rr, ii)?, self.add(ri, ir)?))
    }

    /// Complex matrix times a real matrix.
    pub fn c_matmul_real(&mut self, a: CVar, r: Var) -> Result<CVar> {
        Ok(CVar::new(self.matmul(a.re, r)?, self.matmul(a.im, r)?))
    }

    /// Real matrix times a complex matrix.
    pub fn real_matmul_c(&mut self, r: Var, b: CVar) -> Result<CVar> {
        Ok(CVar::new(self.matmul(r, b.re)?, self.matmul(r, b.im)?))
    }

    /// Conjugate transpose of the last two axes.
    pub fn c_conj_transpose(&mut self, a: CVar) -> Result<CVar> {
        let re = self.transpose(a.re)?;
        let im = self.transpose(a.im)?;
        Ok(CVar::new(re, self.neg(im)))
    }

    /// `|a|^2` elementwise.
    pub fn c_abs_sqr(&mut self, a: CVar) -> Result<Var> {
        let rr = self.mul(a.re, a.re)?;
        let ii = self.mul(a.im, a.im)?;
        self.add(rr, ii)
    }

    /// `exp(j theta)`.
    pub fn phasor(&mut self, theta: Var) -> CVar {
        CVar::new(self.cos(theta), self.sin(theta))
    }

    pub fn c_reshape(&mut self, a: CVar, shape: &[usize]) -> Result<CVar> {
        Ok(CVar::new(self.reshape(a.re, shape)?, self.reshape(a.im, shape)?))
    }
}
