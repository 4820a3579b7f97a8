//! Learned downlink pilots with GSM masking, and the noisy observation model.

use num_complex::Complex;
use rand::Rng;

use crate::autodiff::{CVar, Graph, Var};
use crate::channel::{complex_gaussian, ChannelMatrix};
use crate::cmat::CMatrix;
use crate::error::{Error, Result};
use crate::gsm_topology::{greedy_order, Connector, ConnectorSet};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct PilotLayer<T> {
    /// Phases, row-major `n_t x l`.
    pub theta_x: Vec<T>,
    /// Row-major `n_t x l` activation mask.
    pub mask: Vec<u8>,
    pub n_t: usize,
    pub l: usize,
    pub power: f64,
    pub n_k: usize,
}

/// Greedy choice of `l` activation patterns, one per pilot column; patterns
/// repeat in greedy order once all `M` have been used.
///
/// Returns a row-major `n_t x l` 0/1 matrix.
pub fn build_pilot_mask(connectors: &ConnectorSet, l: usize) -> Result<Vec<u8>> {
    if connectors.is_empty() {
        return Err(Error::config("pilot mask needs a nonempty connector set"));
    }
    if l == 0 {
        return Err(Error::config("pilot length must be at least 1"));
    }
    let patterns: Vec<Vec<u8>> = connectors.iter().map(Connector::activation).collect();
    let order = greedy_order(&patterns, l, 0, true);
    let n_t = patterns[0].len();
    let mut mask = vec![0u8; n_t * l];
    for (col, &p) in order.iter().enumerate() {
        for (i, &a) in patterns[p].iter().enumerate() {
            mask[i * l + col] = a;
        }
    }
    Ok(mask)
}

impl<T: Scalar> PilotLayer<T> {
    /// Phases i.i.d. uniform on `[0, 2 pi)`.
    pub fn new<R: Rng + ?Sized>(connectors: &ConnectorSet, l: usize, power: f64, rng: &mut R) -> Result<Self> {
        let mask = build_pilot_mask(connectors, l)?;
        let first = &connectors.legal[0];
        let n_t = first.n_t();
        let theta_x = (0..n_t * l)
            .map(|_| T::lit(rng.random_range(0.0..std::f64::consts::TAU)))
            .collect();
        Ok(PilotLayer {
            theta_x,
            mask,
            n_t,
            l,
            power,
            n_k: first.n_k(),
        })
    }

    pub fn amplitude(&self) -> T {
        T::lit((self.power / self.n_k as f64).sqrt())
    }

    /// `sqrt(P / n_k) exp(j theta_X)` with masked entries forced to zero.
    pub fn emit(&self) -> CMatrix<T> {
        let amp = self.amplitude();
        CMatrix::from_fn(self.n_t, self.l, |i, j| {
            let k = i * self.l + j;
            if self.mask[k] == 0 {
                Complex::new(T::zero(), T::zero())
            } else {
                Complex::new(amp * self.theta_x[k].cos(), amp * self.theta_x[k].sin())
            }
        })
    }
}

/// Graph version of [`PilotLayer::emit`] for phases held in `theta_x` (`[n_t, l]`).
pub fn emit_pilots<T: Scalar>(g: &mut Graph<T>, theta_x: Var, mask: &[u8], power: f64, n_k: usize) -> Result<CVar> {
    let shape = g.shape(theta_x).to_vec();
    if shape.len() != 2 || shape[0] * shape[1] != mask.len() {
        return Err(Error::dim(format!(
            "pilot phases {:?} do not match a mask of {} entries",
            shape,
            mask.len()
        )));
    }
    let amp = T::lit((power / n_k as f64).sqrt());
    let m = g.constant(&shape, mask.iter().map(|&b| if b == 0 { T::zero() } else { amp }).collect())?;
    let ph = g.phasor(theta_x);
    g.c_mul_real(ph, m)
}

/// `Y = H X + N` with fresh i.i.d. `CN(0, noise_var)` noise.
pub fn observe<T: Scalar, R: Rng + ?Sized>(
    h: &ChannelMatrix<T>,
    x: &CMatrix<T>,
    noise_var: f64,
    rng: &mut R,
) -> Result<CMatrix<T>> {
    let mut y = h.h.matmul(x)?;
    if noise_var > 0.0 {
        for v in y.data_mut() {
            *v = *v + complex_gaussian(rng, noise_var);
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gsm_topology::GsmConfig;
    use crate::rng::SimRng;
    use rand::SeedableRng;

    fn worked_example() -> ConnectorSet {
        let cfg = GsmConfig {
            n_t: 6,
            n_r: 1,
            n_g: 3,
            n_k: 2,
            n_rf: 2,
            n_s: 1,
        };
        ConnectorSet::build(&cfg, 0).unwrap()
    }

    fn column(mask: &[u8], n_t: usize, l: usize, c: usize) -> Vec<u8> {
        (0..n_t).map(|i| mask[i * l + c]).collect()
    }

    #[test]
    fn worked_example_mask() {
        let cs = worked_example();
        let m = build_pilot_mask(&cs, 2).unwrap();
        assert_eq!(column(&m, 6, 2, 0), vec![1, 1, 1, 1, 0, 0]);
        assert_eq!(column(&m, 6, 2, 1), vec![1, 1, 0, 0, 1, 1]);
        let one = build_pilot_mask(&cs, 1).unwrap();
        assert_eq!(one, vec![1, 1, 1, 1, 0, 0]);
    }

    #[test]
    fn default_mask_covers_every_antenna() {
        let cs = ConnectorSet::build(&GsmConfig::default(), 0).unwrap();
        let m = build_pilot_mask(&cs, 8).unwrap();
        for i in 0..16 {
            assert!(m[i * 8..(i + 1) * 8].contains(&1));
        }
        for c in 0..8 {
            assert_eq!(column(&m, 16, 8, c).iter().filter(|&&b| b == 1).count(), 8);
        }
        // long pilots cycle the greedy order
        assert_eq!(column(&m, 16, 8, 5), column(&m, 16, 8, 1));
    }

    #[test]
    fn mask_errors() {
        let empty = ConnectorSet {
            legal: vec![],
            m_bar: 0,
            m: 0,
        };
        assert!(build_pilot_mask(&empty, 2).is_err());
        assert!(build_pilot_mask(&worked_example(), 0).is_err());
    }

    #[test]
    fn emit_constant_magnitude() {
        let cs = ConnectorSet::build(&GsmConfig::default(), 0).unwrap();
        let mut layer = PilotLayer::<f64>::new(&cs, 8, 1.0, &mut SimRng::seed_from_u64(3)).unwrap();
        let x = layer.emit();
        for i in 0..16 {
            for j in 0..8 {
                let v = x[(i, j)];
                if layer.mask[i * 8 + j] == 0 {
                    assert_eq!(v, Complex::new(0.0, 0.0));
                } else {
                    assert!((v.norm() - 0.5).abs() < 1e-15);
                }
            }
        }
        for j in 0..8 {
            let e: f64 = (0..16).map(|i| x[(i, j)].norm_sqr()).sum();
            assert!((e - 0.25 * 8.0).abs() < 1e-12);
        }
        layer.theta_x.iter_mut().for_each(|t| *t = 0.0);
        let x = layer.emit();
        assert!(x.data().iter().all(|v| *v == Complex::new(0.0, 0.0) || *v == Complex::new(0.5, 0.0)));
    }

    #[test]
    fn graph_emit_matches_and_masks_gradients() {
        let cs = ConnectorSet::build(&GsmConfig::default(), 0).unwrap();
        let layer = PilotLayer::<f64>::new(&cs, 8, 2.0, &mut SimRng::seed_from_u64(5)).unwrap();
        let mut g = Graph::new();
        let th = g.variable(&[16, 8], layer.theta_x.clone()).unwrap();
        let x = emit_pilots(&mut g, th, &layer.mask, 2.0, 4).unwrap();
        let want = layer.emit();
        for k in 0..128 {
            assert!((g.value(x.re)[k] - want.data()[k].re).abs() < 1e-15);
            assert!((g.value(x.im)[k] - want.data()[k].im).abs() < 1e-15);
        }
        let a = g.sum(x.re);
        let b = g.sum(x.im);
        let s = g.add(a, b).unwrap();
        let grads = g.backward(s).unwrap();
        let gt = grads.get(th).unwrap();
        for k in 0..128 {
            if layer.mask[k] == 0 {
                assert_eq!(gt[k], 0.0);
            }
        }
    }

    #[test]
    fn observe_noise_and_determinism() {
        let h = ChannelMatrix::new(CMatrix::<f64>::from_fn(4, 16, |i, j| Complex::new(i as f64, j as f64)));
        let x = CMatrix::from_fn(16, 8, |i, j| Complex::new((i + j) as f64 * 0.1, 0.0));
        let clean = observe(&h, &x, 0.0, &mut SimRng::seed_from_u64(0)).unwrap();
        assert_eq!(clean, h.h.matmul(&x).unwrap());
        let a = observe(&h, &x, 0.5, &mut SimRng::seed_from_u64(9)).unwrap();
        let b = observe(&h, &x, 0.5, &mut SimRng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let zero = CMatrix::<f64>::zeros(16, 25_000);
        let y = observe(&h, &zero, 0.5, &mut SimRng::seed_from_u64(1)).unwrap();
        let var = y.data().iter().map(|v| v.norm_sqr()).sum::<f64>() / y.data().len() as f64;
        assert!((var - 0.5).abs() < 0.025);
    }
}
