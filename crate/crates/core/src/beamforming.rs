//! Analog/digital hybrid beamformers under the GSM subarray architecture.

use num_complex::Complex;
use num_traits::Zero;
use rand::Rng;

use crate::channel::{complex_gaussian, ChannelMatrix};
use crate::cmat::CMatrix;
use crate::error::{Error, Result};
use crate::gsm_topology::{Connector, ConnectorSet};
use crate::scalar::Scalar;

/// Norms below this make the digital normalization undefined.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AnalogBeamformer<T> {
    pub theta_a: Vec<T>,
    pub n_k: usize,
}

impl<T: Scalar> AnalogBeamformer<T> {
    pub fn matrix(&self) -> Result<CMatrix<T>> {
        build_analog(&self.theta_a, self.n_k)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DigitalBeamformerSet<T> {
    pub d: Vec<CMatrix<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridBeamformer<T> {
    pub analog: AnalogBeamformer<T>,
    pub digital: DigitalBeamformerSet<T>,
    pub connectors: ConnectorSet,
}

/// `A = diag(exp(j theta)) / sqrt(n_k)`.
pub fn build_analog<T: Scalar>(theta_a: &[T], n_k: usize) -> Result<CMatrix<T>> {
    if n_k == 0 {
        return Err(Error::config("n_k must be positive"));
    }
    if theta_a.iter().any(|t| !t.is_finite()) {
        return Err(Error::numerical("analog phases must be finite"));
    }
    let amp = T::one() / T::lit(n_k as f64).sqrt();
    let diag: Vec<Complex<T>> = theta_a
        .iter()
        .map(|&t| Complex::new(t.cos() * amp, t.sin() * amp))
        .collect();
    Ok(CMatrix::diag(&diag))
}

/// The connector as a complex 0/1 matrix.
pub fn connector_matrix<T: Scalar>(c: &Connector) -> CMatrix<T> {
    CMatrix::from_fn(c.n_t(), c.n_rf(), |i, j| {
        if c.entry(i, j) == 1 {
            Complex::new(T::one(), T::zero())
        } else {
            Complex::zero()
        }
    })
}

/// `A C_m D`, the per-scheme precoder.
pub fn precoder<T: Scalar>(a: &CMatrix<T>, c_m: &Connector, d: &CMatrix<T>) -> Result<CMatrix<T>> {
    if a.rows() != c_m.n_t() || a.cols() != c_m.n_t() {
        return Err(Error::dim(format!(
            "analog matrix {:?} does not match connector with {} antennas",
            a.shape(),
            c_m.n_t()
        )));
    }
    a.matmul(&connector_matrix(c_m))?.matmul(d)
}

/// Scales `d_hat` so that `||A C_m D_m||_F^2 = n_s` (the column count of `d_hat`).
pub fn normalize_digital<T: Scalar>(
    a: &CMatrix<T>,
    c_m: &Connector,
    d_hat: &CMatrix<T>,
) -> Result<CMatrix<T>> {
    let n_s = d_hat.cols();
    let norm = precoder(a, c_m, d_hat)?.frobenius();
    if !(norm >= T::lit(DEGENERATE_NORM)) {
        return Err(Error::DegenerateBeamformer(format!(
            "||A C_m D_hat||_F = {} is below {:e}",
            norm, DEGENERATE_NORM
        )));
    }
    Ok(d_hat.scale(T::lit(n_s as f64).sqrt() / norm))
}

/// Noiseless signal map `H A C_m D_m`.
pub fn effective_channel<T: Scalar>(
    h: &ChannelMatrix<T>,
    a: &CMatrix<T>,
    c_m: &Connector,
    d_m: &CMatrix<T>,
) -> Result<CMatrix<T>> {
    if h.n_t() != a.rows() {
        return Err(Error::dim(format!(
            "channel has {} transmit antennas, analog matrix {}",
            h.n_t(),
            a.rows()
        )));
    }
    h.h.matmul(&precoder(a, c_m, d_m)?)
}

impl<T: Scalar> HybridBeamformer<T> {
    /// Builds the beamformer from raw decoder outputs, normalizing each digital part.
    pub fn from_raw(
        theta_a: Vec<T>,
        n_k: usize,
        d_hat: &[CMatrix<T>],
        connectors: ConnectorSet,
    ) -> Result<Self> {
        if d_hat.len() != connectors.len() {
            return Err(Error::dim(format!(
                "{} digital beamformers for {} connectors",
                d_hat.len(),
                connectors.len()
            )));
        }
        let analog = AnalogBeamformer { theta_a, n_k };
        let a = analog.matrix()?;
        let d = d_hat
            .iter()
            .zip(connectors.iter())
            .map(|(dh, c)| normalize_digital(&a, c, dh))
            .collect::<Result<Vec<_>>>()?;
        Ok(HybridBeamformer {
            analog,
            digital: DigitalBeamformerSet { d },
            connectors,
        })
    }

    /// All-zero digital parts: no signal, used as the zero-rate reference.
    pub fn silent(n_t: usize, n_k: usize, n_s: usize, connectors: ConnectorSet) -> Self {
        let n_rf = connectors.legal.first().map_or(0, Connector::n_rf);
        let d = vec![CMatrix::zeros(n_rf, n_s); connectors.len()];
        HybridBeamformer {
            analog: AnalogBeamformer {
                theta_a: vec![T::zero(); n_t],
                n_k,
            },
            digital: DigitalBeamformerSet { d },
            connectors,
        }
    }

    /// Uniform random phases and complex Gaussian digital parts, normalized.
    pub fn random<R: Rng + ?Sized>(
        n_t: usize,
        n_k: usize,
        n_s: usize,
        connectors: ConnectorSet,
        rng: &mut R,
    ) -> Result<Self> {
        let theta: Vec<T> = (0..n_t)
            .map(|_| T::lit(rng.random_range(0.0..std::f64::consts::TAU)))
            .collect();
        let n_rf = connectors.legal.first().map_or(0, Connector::n_rf);
        let d_hat: Vec<CMatrix<T>> = (0..connectors.len())
            .map(|_| CMatrix::from_fn(n_rf, n_s, |_, _| complex_gaussian(rng, 1.0)))
            .collect();
        Self::from_raw(theta, n_k, &d_hat, connectors)
    }

    pub fn m(&self) -> usize {
        self.digital.d.len()
    }

    pub fn n_s(&self) -> usize {
        self.digital.d.first().map_or(0, CMatrix::cols)
    }

    /// `H A C_m D_m` for every scheme `m`.
    pub fn effective_channels(&self, h: &ChannelMatrix<T>) -> Result<Vec<CMatrix<T>>> {
        let a = self.analog.matrix()?;
        self.connectors
            .iter()
            .zip(&self.digital.d)
            .map(|(c, d)| effective_channel(h, &a, c, d))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{sample_channel, ChannelConfig};
    use crate::gsm_topology::GsmConfig;
    use crate::rng::SimRng;
    use rand::SeedableRng;

    fn naive_product(mats: &[&CMatrix<f64>]) -> CMatrix<f64> {
        let mut acc = mats[0].clone();
        for m in &mats[1..] {
            let mut out = CMatrix::zeros(acc.rows(), m.cols());
            for i in 0..acc.rows() {
                for j in 0..m.cols() {
                    let mut s = Complex::new(0.0, 0.0);
                    for k in 0..acc.cols() {
                        s += acc[(i, k)] * m[(k, j)];
                    }
                    out[(i, j)] = s;
                }
            }
            acc = out;
        }
        acc
    }

    #[test]
    fn zero_phase_is_scaled_identity() {
        let a = build_analog(&[0.0f64; 4], 4).unwrap();
        assert!(a.sub(&CMatrix::identity(4).scale(0.5)).unwrap().frobenius() < 1e-15);
        let a = build_analog(&[0.0f64, std::f64::consts::PI], 1).unwrap();
        assert!((a[(0, 0)].re - 1.0).abs() < 1e-15);
        assert!((a[(1, 1)].re + 1.0).abs() < 1e-15 && a[(1, 1)].im.abs() < 1e-15);
        assert!(build_analog(&[f64::NAN], 1).is_err());
    }

    #[test]
    fn constant_modulus() {
        let mut rng = SimRng::seed_from_u64(2);
        let theta: Vec<f64> = (0..16).map(|_| rng.random_range(-10.0..10.0)).collect();
        let a = build_analog(&theta, 4).unwrap();
        for i in 0..16 {
            assert!((a[(i, i)].norm() - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_examples() {
        let cs = ConnectorSet::build(&GsmConfig::default(), 0).unwrap();
        let c = &cs.legal[0];
        let a = build_analog(&[0.0f64; 16], 4).unwrap();
        // ||A C D||_F = ||D||_F for subarray wiring; make it 2
        let d = CMatrix::from_fn(2, 2, |i, j| Complex::new(if i == j { 2f64.sqrt() } else { 0.0 }, 0.0));
        assert!((precoder(&a, c, &d).unwrap().frobenius() - 2.0).abs() < 1e-12);
        let dn = normalize_digital(&a, c, &d).unwrap();
        let factor = dn[(0, 0)].re / d[(0, 0)].re;
        assert!((factor - 2f64.sqrt() / 2.0).abs() < 1e-12);
        let again = normalize_digital(&a, c, &dn).unwrap();
        assert!(again.sub(&dn).unwrap().frobenius() < 1e-12);
        let zero = CMatrix::zeros(2, 2);
        assert!(matches!(
            normalize_digital(&a, c, &zero),
            Err(Error::DegenerateBeamformer(_))
        ));
    }

    #[test]
    fn random_beamformer_meets_power() {
        let cs = ConnectorSet::build(&GsmConfig::default(), 0).unwrap();
        let mut rng = SimRng::seed_from_u64(5);
        let hb = HybridBeamformer::<f64>::random(16, 4, 2, cs.clone(), &mut rng).unwrap();
        let a = hb.analog.matrix().unwrap();
        for (c, d) in cs.iter().zip(&hb.digital.d) {
            let p = precoder(&a, c, d).unwrap().frobenius_sqr();
            assert!((p - 2.0).abs() < 1e-9);
        }
    }

    #[test]
    fn effective_channel_matches_naive_and_is_linear() {
        let cs = ConnectorSet::build(&GsmConfig::default(), 0).unwrap();
        let mut rng = SimRng::seed_from_u64(8);
        let h: ChannelMatrix<f64> = sample_channel(&ChannelConfig::default(), &mut rng).unwrap();
        let hb = HybridBeamformer::<f64>::random(16, 4, 2, cs.clone(), &mut rng).unwrap();
        let a = hb.analog.matrix().unwrap();
        let c = &cs.legal[2];
        let d = &hb.digital.d[2];
        let got = effective_channel(&h, &a, c, d).unwrap();
        let cm = connector_matrix::<f64>(c);
        let want = naive_product(&[&h.h, &a, &cm, d]);
        assert!(got.sub(&want).unwrap().frobenius() < 1e-12);
        let scaled = effective_channel(&h, &a, c, &d.scale(3.5)).unwrap();
        assert!(scaled.sub(&got.scale(3.5)).unwrap().frobenius() < 1e-12);
        let zero = effective_channel(&h, &a, c, &CMatrix::zeros(2, 2)).unwrap();
        assert_eq!(zero.frobenius(), 0.0);
    }

    #[test]
    fn scalar_effective_channel() {
        let h = ChannelMatrix::new(CMatrix::from_vec(1, 1, vec![Complex::new(2.0, 1.0)]).unwrap());
        let c = Connector::new(1, 1, vec![0]).unwrap();
        let a = build_analog(&[0.5f64], 1).unwrap();
        let d = CMatrix::from_vec(1, 1, vec![Complex::new(0.0, 3.0)]).unwrap();
        let got = effective_channel(&h, &a, &c, &d).unwrap();
        let want = Complex::new(2.0, 1.0) * Complex::from_polar(1.0, 0.5) * Complex::new(0.0, 3.0);
        assert!((got[(0, 0)] - want).norm() < 1e-14);
    }
}
