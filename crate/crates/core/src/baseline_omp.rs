//! Conventional baseline: OMP channel estimation from the pilot observations,
//! scalar-quantized CSI feedback, and an SVD beamformer fitted to the GSM
//! structure ("OMP+SVD-GSM").

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::beamforming::HybridBeamformer;
use crate::channel::{steering_vector, ChannelConfig, ChannelMatrix};
use crate::cmat::CMatrix;
use crate::error::{Error, Result};
use crate::gsm_topology::ConnectorSet;
use crate::scalar::Scalar;

/// Label used for baseline rows in result files.
pub const SCHEME_LABEL: &str = "OMP+SVD-GSM";

/// Ridge added to the normal equations when they are not positive definite.
pub const RIDGE: f64 = 1e-10;

/// Unit-norm atoms `vec(a_r(theta_r) a_t(theta_t)^H)` over an angle grid.
#[derive(Debug, Clone)]
pub struct Dictionary<T> {
    pub grid_tx: Vec<f64>,
    pub grid_rx: Vec<f64>,
    tx: Vec<Vec<Complex<T>>>,
    rx: Vec<Vec<Complex<T>>>,
}

/// `n` midpoints of equal cells covering `[lo, hi]`.
pub fn angle_grid(n: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64).collect()
}

impl<T: Scalar> Dictionary<T> {
    pub fn new(cfg: &ChannelConfig, n_tx: usize, n_rx: usize) -> Result<Self> {
        if n_tx == 0 || n_rx == 0 {
            return Err(Error::config("dictionary grids must be nonempty"));
        }
        let grid_tx = angle_grid(n_tx, cfg.tx_sector);
        let grid_rx = angle_grid(n_rx, cfg.rx_sector);
        let tx = grid_tx
            .iter()
            .map(|&a| steering_vector(a, cfg.n_t, cfg.wavelength, cfg.spacing))
            .collect::<Result<_>>()?;
        let rx = grid_rx
            .iter()
            .map(|&a| steering_vector(a, cfg.n_r, cfg.wavelength, cfg.spacing))
            .collect::<Result<_>>()?;
        Ok(Dictionary { grid_tx, grid_rx, tx, rx })
    }

    pub fn len(&self) -> usize {
        self.grid_tx.len() * self.grid_rx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_t(&self) -> usize {
        self.tx[0].len()
    }

    pub fn n_r(&self) -> usize {
        self.rx[0].len()
    }

    /// Atom `k = i_tx * |grid_rx| + i_rx` as an `n_r x n_t` matrix.
    pub fn atom(&self, k: usize) -> CMatrix<T> {
        let (i, j) = (k / self.grid_rx.len(), k % self.grid_rx.len());
        let (at, ar) = (&self.tx[i], &self.rx[j]);
        CMatrix::from_fn(ar.len(), at.len(), |r, t| ar[r] * at[t].conj())
    }

    /// All atoms as columns of an `(n_r n_t) x len` matrix, row-major vectorization.
    pub fn atoms(&self) -> CMatrix<T> {
        let (n_r, n_t) = (self.n_r(), self.n_t());
        let mut out = CMatrix::zeros(n_r * n_t, self.len());
        for k in 0..self.len() {
            let a = self.atom(k);
            for (row, &v) in a.data().iter().enumerate() {
                out[(row, k)] = v;
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct OmpResult<T> {
    pub h: ChannelMatrix<T>,
    /// Selected atom indices in selection order.
    pub support: Vec<usize>,
    pub coefficients: Vec<Complex<T>>,
    /// Residual norm before the first and after every iteration.
    pub residual_norms: Vec<f64>,
    /// Set when a least-squares refit needed the ridge.
    pub ridge_used: bool,
}

fn dot_conj<T: Scalar>(a: &[Complex<T>], b: &[Complex<T>]) -> Complex<T> {
    a.iter().zip(b).fold(Complex::new(T::zero(), T::zero()), |acc, (x, y)| acc + x.conj() * y)
}

fn norm_sqr<T: Scalar>(a: &[Complex<T>]) -> f64 {
    a.iter().map(|z| z.norm_sqr().to_f64_lossy()).sum()
}

/// Orthogonal matching pursuit under the pilot sensing map `H -> H X`.
///
/// Runs `sparsity` iterations, stopping early once the residual energy drops
/// to the expected noise energy `noise_var * n_r * L` (or to numerical zero
/// when `noise_var = 0`).
pub fn omp_estimate<T: Scalar>(
    y: &CMatrix<T>,
    x: &CMatrix<T>,
    dict: &Dictionary<T>,
    sparsity: usize,
    noise_var: f64,
) -> Result<OmpResult<T>> {
    if sparsity == 0 {
        return Err(Error::config("OMP sparsity must be at least 1"));
    }
    let (n_r, n_t, l) = (dict.n_r(), dict.n_t(), x.cols());
    if x.rows() != n_t || y.shape() != (n_r, l) {
        return Err(Error::dim(format!(
            "pilots {:?} and observation {:?} do not fit a {}x{} channel",
            x.shape(),
            y.shape(),
            n_r,
            n_t
        )));
    }
    // b_i = X^T conj(a_t(i)), so a_r a_t^H X = a_r b_i^T
    let b: Vec<Vec<Complex<T>>> = dict
        .tx
        .iter()
        .map(|at| {
            (0..l)
                .map(|c| (0..n_t).fold(Complex::new(T::zero(), T::zero()), |acc, t| acc + at[t].conj() * x[(t, c)]))
                .collect()
        })
        .collect();
    let b_norm: Vec<f64> = b.iter().map(|v| norm_sqr(v).sqrt()).collect();
    let n_rx = dict.grid_rx.len();
    let sensed = |k: usize| -> Vec<Complex<T>> {
        let (i, j) = (k / n_rx, k % n_rx);
        let ar = &dict.rx[j];
        let mut v = Vec::with_capacity(n_r * l);
        for r in 0..n_r {
            for c in 0..l {
                v.push(ar[r] * b[i][c]);
            }
        }
        v
    };

    let yv = y.data().to_vec();
    let y_energy = norm_sqr(&yv);
    let floor = if noise_var > 0.0 {
        noise_var * (n_r * l) as f64
    } else {
        1e-28 * y_energy
    };
    let mut residual = yv.clone();
    let mut residual_norms = vec![y_energy.sqrt()];
    let mut support: Vec<usize> = Vec::new();
    let mut columns: Vec<Vec<Complex<T>>> = Vec::new();
    let mut coef: Vec<Complex<T>> = Vec::new();
    let mut ridge_used = false;

    for _ in 0..sparsity.min(dict.len()) {
        if norm_sqr(&residual) <= floor {
            break;
        }
        // |<psi_k, r>| / ||psi_k|| with psi_k = a_r (x) b_i
        let rmat = CMatrix::from_vec(n_r, l, residual.clone())?;
        let mut best = (0usize, -1.0f64);
        for (j, ar) in dict.rx.iter().enumerate() {
            let u: Vec<Complex<T>> = (0..l)
                .map(|c| (0..n_r).fold(Complex::new(T::zero(), T::zero()), |acc, r| acc + ar[r].conj() * rmat[(r, c)]))
                .collect();
            for (i, bi) in b.iter().enumerate() {
                if b_norm[i] <= 1e-300 {
                    continue;
                }
                let k = i * n_rx + j;
                if support.contains(&k) {
                    continue;
                }
                let c = dot_conj(bi, &u).norm().to_f64_lossy() / b_norm[i];
                if c > best.1 {
                    best = (k, c);
                }
            }
        }
        if best.1 <= 0.0 {
            break;
        }
        support.push(best.0);
        columns.push(sensed(best.0));
        let (sol, ridge) = least_squares(&columns, &yv)?;
        ridge_used |= ridge;
        coef = sol;
        residual = yv.clone();
        for (col, &g) in columns.iter().zip(&coef) {
            for (r, &v) in residual.iter_mut().zip(col) {
                *r = *r - v * g;
            }
        }
        residual_norms.push(norm_sqr(&residual).sqrt());
    }

    let mut h = CMatrix::zeros(n_r, n_t);
    for (&k, &g) in support.iter().zip(&coef) {
        h = h.add(&dict.atom(k).mul_scalar(g))?;
    }
    Ok(OmpResult {
        h: ChannelMatrix::new(h),
        support,
        coefficients: coef,
        residual_norms,
        ridge_used,
    })
}

/// Solves `min ||sum_k g_k col_k - y||` through the normal equations.
fn least_squares<T: Scalar>(cols: &[Vec<Complex<T>>], y: &[Complex<T>]) -> Result<(Vec<Complex<T>>, bool)> {
    let k = cols.len();
    let gram = CMatrix::from_fn(k, k, |i, j| dot_conj(&cols[i], &cols[j]));
    let rhs: Vec<Complex<T>> = cols.iter().map(|c| dot_conj(c, y)).collect();
    match gram.cholesky() {
        Ok(ch) => Ok((ch.solve(&rhs), false)),
        Err(_) => {
            let ridged = gram.add(&CMatrix::identity(k).scale(T::lit(RIDGE)))?;
            let ch = ridged
                .cholesky()
                .map_err(|_| Error::numerical("least-squares refit is singular even with ridge"))?;
            Ok((ch.solve(&rhs), true))
        }
    }
}

/// Quantizer range policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ClipPolicy {
    /// `+- k` times the RMS of the coefficient pool.
    Sigmas(f64),
    /// `+-` the largest coefficient magnitude; nothing is clipped.
    MaxAbs,
}

impl Default for ClipPolicy {
    fn default() -> Self {
        ClipPolicy::Sigmas(3.0)
    }
}

/// Midrise uniform scalar quantizers over `[-range, range]`, one bit budget per coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiQuantizer {
    pub range: f64,
    pub bits: Vec<u32>,
}

/// Spreads `total` bits over `n` coefficients, the first `total % n` getting one extra.
pub fn allocate_bits(total: usize, n: usize) -> Vec<u32> {
    if n == 0 {
        return Vec::new();
    }
    let (base, extra) = (total / n, total % n);
    (0..n).map(|i| (base + usize::from(i < extra)) as u32).collect()
}

fn coefficients<T: Scalar>(h: &ChannelMatrix<T>) -> Vec<f64> {
    h.h.data()
        .iter()
        .flat_map(|z| [z.re.to_f64_lossy(), z.im.to_f64_lossy()])
        .collect()
}

impl CsiQuantizer {
    pub fn fit<T: Scalar>(h: &ChannelMatrix<T>, bits_total: usize, clip: ClipPolicy) -> Self {
        let c = coefficients(h);
        let range = match clip {
            ClipPolicy::Sigmas(k) => k * (c.iter().map(|v| v * v).sum::<f64>() / c.len() as f64).sqrt(),
            ClipPolicy::MaxAbs => c.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        };
        CsiQuantizer {
            range,
            bits: allocate_bits(bits_total, c.len()),
        }
    }

    fn level(&self, v: f64, bits: u32) -> f64 {
        if bits == 0 || !(self.range > 0.0) {
            return 0.0;
        }
        let levels = 2f64.powi(bits as i32);
        let step = 2.0 * self.range / levels;
        let idx = ((v + self.range) / step).floor().clamp(0.0, levels - 1.0);
        -self.range + (idx + 0.5) * step
    }

    /// Quantized-then-reconstructed channel.
    pub fn apply<T: Scalar>(&self, h: &ChannelMatrix<T>) -> Result<ChannelMatrix<T>> {
        let c = coefficients(h);
        if c.len() != self.bits.len() {
            return Err(Error::dim("quantizer was fitted to a different channel shape"));
        }
        let q: Vec<Complex<T>> = c
            .chunks(2)
            .zip(self.bits.chunks(2))
            .map(|(v, b)| Complex::new(T::lit(self.level(v[0], b[0])), T::lit(self.level(v[1], b[1]))))
            .collect();
        Ok(ChannelMatrix::new(CMatrix::from_vec(h.n_r(), h.n_t(), q)?))
    }
}

/// Finite-rate feedback of an estimated channel: fit the quantizer and apply it.
pub fn quantize_csi<T: Scalar>(h_hat: &ChannelMatrix<T>, bits_total: usize, clip: ClipPolicy) -> Result<ChannelMatrix<T>> {
    CsiQuantizer::fit(h_hat, bits_total, clip).apply(h_hat)
}

/// Hybrid beamformer fitted to a channel estimate: analog phases of the
/// dominant right singular vector, digital parts from the top right singular
/// vectors of each reduced channel `H A C_m`, then power normalization.
pub fn svd_gsm_beamformer<T: Scalar>(
    h_hat: &ChannelMatrix<T>,
    connectors: &ConnectorSet,
    n_k: usize,
    n_s: usize,
) -> Result<HybridBeamformer<T>> {
    let first = connectors.legal.first().ok_or_else(|| Error::config("empty connector set"))?;
    if n_s == 0 || n_s > first.n_rf() {
        return Err(Error::config(format!("n_s = {} must be in 1..={}", n_s, first.n_rf())));
    }
    let h = &h_hat.h;
    let (_, v) = h.conj_transpose().matmul(h)?.hermitian_eigen()?;
    let theta: Vec<T> = (0..h.cols()).map(|i| v[(i, 0)].arg()).collect();
    let a = crate::beamforming::build_analog(&theta, n_k)?;
    let ha = h.matmul(&a)?;
    let d_hat = connectors
        .iter()
        .map(|c| {
            let cm = crate::beamforming::connector_matrix::<T>(c);
            let hm = ha.matmul(&cm)?;
            let (_, u) = hm.conj_transpose().matmul(&hm)?.hermitian_eigen()?;
            Ok(CMatrix::from_fn(c.n_rf(), n_s, |i, j| u[(i, j)]))
        })
        .collect::<Result<Vec<_>>>()?;
    HybridBeamformer::from_raw(theta, n_k, &d_hat, connectors.clone())
}

/// Random on-grid sparse channel `sum_k g_k atom_k` with `CN(0, 1)` gains.
pub fn on_grid_channel<T: Scalar, R: Rng + ?Sized>(dict: &Dictionary<T>, sparsity: usize, rng: &mut R) -> ChannelMatrix<T> {
    let mut h = CMatrix::zeros(dict.n_r(), dict.n_t());
    for _ in 0..sparsity {
        let k = rng.random_range(0..dict.len());
        let g = crate::channel::complex_gaussian::<T, _>(rng, 1.0);
        h = h.add(&dict.atom(k).mul_scalar(g)).expect("atoms share a shape");
    }
    ChannelMatrix::new(h)
}

pub fn nmse<T: Scalar>(estimate: &ChannelMatrix<T>, truth: &ChannelMatrix<T>) -> Result<f64> {
    let e = estimate.h.sub(&truth.h)?.frobenius_sqr().to_f64_lossy();
    Ok(e / truth.h.frobenius_sqr().to_f64_lossy())
}

/// Everything the baseline needs besides the channel: dictionary, sounding
/// pilots and the GSM structure.
#[derive(Debug, Clone)]
pub struct BaselineSetup<T> {
    pub dict: Dictionary<T>,
    /// Random-phase masked pilots, `n_t x L`.
    pub pilots: CMatrix<T>,
    pub connectors: ConnectorSet,
    pub n_k: usize,
    pub n_s: usize,
    pub sparsity: usize,
    pub clip: ClipPolicy,
}

impl<T: Scalar> BaselineSetup<T> {
    pub fn new(run: &crate::config::RunConfig) -> Result<Self> {
        let g = &run.model.gsm;
        let b = &run.baseline;
        let connectors = ConnectorSet::build(g, run.model.connector_seed_index)?;
        let mut rng = crate::rng::rng_from(run.train.seed, &[0x6f_6d70]);
        let layer = crate::pilots::PilotLayer::<T>::new(&connectors, run.model.pilot_len, run.train.link().power, &mut rng)?;
        Ok(BaselineSetup {
            dict: Dictionary::new(&run.channel, b.grid_tx, b.grid_rx)?,
            pilots: layer.emit(),
            connectors,
            n_k: g.n_k,
            n_s: g.n_s,
            sparsity: b.sparsity,
            clip: b.clip,
        })
    }

    /// Estimate from `y = H X + noise`, optional quantized feedback, then the SVD beamformer.
    ///
    /// `bits = None` feeds the estimate back unquantized.
    pub fn beamformer(
        &self,
        h: &ChannelMatrix<T>,
        noise: &CMatrix<T>,
        noise_var: f64,
        bits: Option<usize>,
    ) -> Result<HybridBeamformer<T>> {
        let y = h.h.matmul(&self.pilots)?.add(noise)?;
        let est = omp_estimate(&y, &self.pilots, &self.dict, self.sparsity, noise_var)?;
        let fed_back = match bits {
            Some(b) => quantize_csi(&est.h, b, self.clip)?,
            None => est.h,
        };
        svd_gsm_beamformer(&fed_back, &self.connectors, self.n_k, self.n_s)
    }
}
