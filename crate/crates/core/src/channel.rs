//! Clustered Saleh-Valenzuela channels over uniform linear arrays.

use std::io::{Read, Write};

use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cmat::CMatrix;
use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub n_t: usize,
    pub n_r: usize,
    pub n_cl: usize,
    pub n_ray: usize,
    /// Carrier wavelength in meters.
    pub wavelength: f64,
    /// Element spacing in meters.
    pub spacing: f64,
    /// Standard deviation of the per-ray angular offset, degrees.
    pub angular_spread: f64,
    pub tx_sector: (f64, f64),
    pub rx_sector: (f64, f64),
    pub rng_seed: u64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            n_t: 16,
            n_r: 4,
            n_cl: 2,
            n_ray: 8,
            wavelength: 5e-3,
            spacing: 2.5e-3,
            angular_spread: 7.5,
            tx_sector: (-30.0, 30.0),
            rx_sector: (-180.0, 180.0),
            rng_seed: 2023,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_t == 0 || self.n_r == 0 {
            return Err(Error::config("antenna counts must be positive"));
        }
        if self.n_cl == 0 || self.n_ray == 0 {
            return Err(Error::config("n_cl and n_ray must be at least 1"));
        }
        if !(self.angular_spread > 0.0) {
            return Err(Error::config("angular spread must be positive"));
        }
        if !(self.wavelength > 0.0) || !(self.spacing > 0.0) {
            return Err(Error::config("wavelength and spacing must be positive"));
        }
        for (name, (lo, hi)) in [("tx_sector", self.tx_sector), ("rx_sector", self.rx_sector)] {
            if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::config(format!("{} [{}, {}] is empty", name, lo, hi)));
            }
        }
        Ok(())
    }

    /// Offsets are truncated to this many standard deviations.
    pub const TRUNCATION: f64 = 3.0;
}

/// One downlink realization, `n_r x n_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix<T> {
    pub h: CMatrix<T>,
}

impl<T: Scalar> ChannelMatrix<T> {
    pub fn new(h: CMatrix<T>) -> Self {
        ChannelMatrix { h }
    }

    pub fn n_r(&self) -> usize {
        self.h.rows()
    }

    pub fn n_t(&self) -> usize {
        self.h.cols()
    }
}

/// Normalized ULA response, entry `k = exp(j 2 pi (d / lambda) k sin theta) / sqrt(n)`.
pub fn steering_vector<T: Scalar>(
    theta_deg: f64,
    n: usize,
    wavelength: f64,
    spacing: f64,
) -> Result<Vec<Complex<T>>> {
    if n == 0 {
        return Err(Error::dim("steering vector needs at least one element"));
    }
    let phase = 2.0 * std::f64::consts::PI * spacing / wavelength * theta_deg.to_radians().sin();
    let amp = T::lit(1.0 / (n as f64).sqrt());
    Ok((0..n)
        .map(|k| {
            let (s, c) = (phase * k as f64).sin_cos();
            Complex::new(T::lit(c) * amp, T::lit(s) * amp)
        })
        .collect())
}

/// Zero-mean circularly-symmetric complex Gaussian with the given variance.
pub fn complex_gaussian<T: Scalar, R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex<T> {
    let sd = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex::new(T::lit(re * sd), T::lit(im * sd))
}

/// Laplacian offset with standard deviation `sd`, truncated to `+-TRUNCATION * sd`.
pub fn truncated_laplace<R: Rng + ?Sized>(rng: &mut R, sd: f64) -> f64 {
    let b = sd / std::f64::consts::SQRT_2;
    let cap = ChannelConfig::TRUNCATION * sd;
    let mass = 1.0 - (-cap / b).exp();
    let v: f64 = rng.random();
    let mag = -b * (1.0 - v * mass).ln();
    if rng.random::<bool>() {
        mag.min(cap)
    } else {
        -mag.min(cap)
    }
}

/// Ray angles `(aod, aoa)` in degrees for one realization.
#[derive(Debug, Clone, PartialEq)]
pub struct RayGeometry {
    pub aod: Vec<f64>,
    pub aoa: Vec<f64>,
}

fn sample_geometry<R: Rng + ?Sized>(cfg: &ChannelConfig, rng: &mut R) -> RayGeometry {
    let mut aod = Vec::with_capacity(cfg.n_cl * cfg.n_ray);
    let mut aoa = Vec::with_capacity(cfg.n_cl * cfg.n_ray);
    for _ in 0..cfg.n_cl {
        let ct = rng.random_range(cfg.tx_sector.0..cfg.tx_sector.1);
        let cr = rng.random_range(cfg.rx_sector.0..cfg.rx_sector.1);
        for _ in 0..cfg.n_ray {
            aod.push(ct + truncated_laplace(rng, cfg.angular_spread));
            aoa.push(cr + truncated_laplace(rng, cfg.angular_spread));
        }
    }
    RayGeometry { aod, aoa }
}

/// Draws `H = sqrt(n_t n_r / (n_cl n_ray)) sum alpha a_r(aoa) a_t(aod)^H`.
pub fn sample_channel<T: Scalar, R: Rng + ?Sized>(
    cfg: &ChannelConfig,
    rng: &mut R,
) -> Result<ChannelMatrix<T>> {
    Ok(sample_channel_with_geometry(cfg, rng)?.0)
}

pub fn sample_channel_with_geometry<T: Scalar, R: Rng + ?Sized>(
    cfg: &ChannelConfig,
    rng: &mut R,
) -> Result<(ChannelMatrix<T>, RayGeometry)> {
    cfg.validate()?;
    let geom = sample_geometry(cfg, rng);
    let paths = cfg.n_cl * cfg.n_ray;
    let scale = T::lit(((cfg.n_t * cfg.n_r) as f64 / paths as f64).sqrt());
    let mut h = CMatrix::<T>::zeros(cfg.n_r, cfg.n_t);
    for p in 0..paths {
        let alpha: Complex<T> = complex_gaussian(rng, 1.0);
        let ar = steering_vector::<T>(geom.aoa[p], cfg.n_r, cfg.wavelength, cfg.spacing)?;
        let at = steering_vector::<T>(geom.aod[p], cfg.n_t, cfg.wavelength, cfg.spacing)?;
        for i in 0..cfg.n_r {
            let left = ar[i] * alpha * scale;
            for j in 0..cfg.n_t {
                h[(i, j)] = h[(i, j)] + left * at[j].conj();
            }
        }
    }
    Ok((ChannelMatrix::new(h), geom))
}

/// `count` sequential draws from one generator.
pub fn generate_dataset<T: Scalar, R: Rng + ?Sized>(
    cfg: &ChannelConfig,
    count: usize,
    rng: &mut R,
) -> Result<Vec<ChannelMatrix<T>>> {
    if count == 0 {
        return Err(Error::config("dataset count must be at least 1"));
    }
    (0..count).map(|_| sample_channel(cfg, rng)).collect()
}

/// `count` draws where sample `i` uses its own sub-seed of `seed`; parallel and
/// independent of the worker count.
pub fn generate_dataset_seeded<T: Scalar>(
    cfg: &ChannelConfig,
    count: usize,
    seed: u64,
) -> Result<Vec<ChannelMatrix<T>>> {
    if count == 0 {
        return Err(Error::config("dataset count must be at least 1"));
    }
    cfg.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| sample_channel(cfg, &mut rng_from(seed, &[i as u64])))
        .collect()
}

pub const DATASET_MAGIC: [u8; 4] = *b"GSMH";
pub const DATASET_VERSION: u32 = 1;

/// Writes the binary dataset: magic, version (u32), n_r (u32), n_t (u32),
/// count (u64), then row-major `(re, im)` f64 pairs, all little-endian.
pub fn write_dataset<T: Scalar, W: Write>(out: &mut W, data: &[ChannelMatrix<T>]) -> Result<()> {
    let (n_r, n_t) = match data.first() {
        Some(h) => (h.n_r(), h.n_t()),
        None => return Err(Error::config("refusing to write an empty dataset")),
    };
    if data.iter().any(|h| h.n_r() != n_r || h.n_t() != n_t) {
        return Err(Error::dim("dataset matrices have inconsistent shapes"));
    }
    out.write_all(&DATASET_MAGIC)?;
    out.write_all(&DATASET_VERSION.to_le_bytes())?;
    out.write_all(&(n_r as u32).to_le_bytes())?;
    out.write_all(&(n_t as u32).to_le_bytes())?;
    out.write_all(&(data.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(n_r * n_t * 16);
    for h in data {
        buf.clear();
        for z in h.h.data() {
            buf.extend_from_slice(&z.re.to_f64_lossy().to_le_bytes());
            buf.extend_from_slice(&z.im.to_f64_lossy().to_le_bytes());
        }
        out.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_dataset<T: Scalar, R: Read>(input: &mut R) -> Result<Vec<ChannelMatrix<T>>> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if magic != DATASET_MAGIC {
        return Err(Error::Format(format!("bad dataset magic {:?}", magic)));
    }
    let version = read_u32(input)?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {}", version)));
    }
    let n_r = read_u32(input)? as usize;
    let n_t = read_u32(input)? as usize;
    let mut b8 = [0u8; 8];
    input.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8) as usize;
    let mut out = Vec::with_capacity(count);
    let mut buf = vec![0u8; n_r * n_t * 16];
    for _ in 0..count {
        input.read_exact(&mut buf)?;
        let data = buf
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().unwrap());
                let im = f64::from_le_bytes(c[8..].try_into().unwrap());
                Complex::new(T::lit(re), T::lit(im))
            })
            .collect();
        out.push(ChannelMatrix::new(CMatrix::from_vec(n_r, n_t, data)?));
    }
    Ok(out)
}
