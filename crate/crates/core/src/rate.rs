//! GSM achievable rate: amplitude-phase mutual information in closed form,
//! spatial mutual information by Monte Carlo, and the differentiable loss.
//!
//! Everything is expressed through the normalized covariance
//! `Sigma_m / sigma^2 = I + P / (n_s sigma^2) * G_m G_m^H` with
//! `G_m = H A C_m D_m`.

use num_complex::Complex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{CVar, Graph, Var};
use crate::beamforming::{HybridBeamformer, DEGENERATE_NORM};
use crate::channel::ChannelMatrix;
use crate::cmat::{CMatrix, Cholesky};
use crate::error::{Error, Result};
use crate::gsm_topology::ConnectorSet;
use crate::rng::rng_from;
use crate::scalar::Scalar;

/// Monte-Carlo draws per hypothesis per channel when not configured.
pub const DEFAULT_MC_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub power: f64,
    pub noise_var: f64,
}

impl LinkParams {
    /// `P = 1`, `sigma^2 = 10^(-snr_db / 10)`.
    pub fn from_snr_db(snr_db: f64) -> Self {
        LinkParams {
            power: 1.0,
            noise_var: 10f64.powf(-snr_db / 10.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.power > 0.0) || !(self.noise_var > 0.0) {
            return Err(Error::config(format!(
                "power ({}) and noise variance ({}) must be positive",
                self.power, self.noise_var
            )));
        }
        Ok(())
    }

    pub fn snr_db(&self) -> f64 {
        10.0 * (self.power / self.noise_var).log10()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub mi_amp_phase: f64,
    pub mi_spatial: f64,
    pub total: f64,
    pub mc_samples: usize,
    pub mc_stderr: f64,
}

/// `Sigma_m = sigma^2 I + (P / n_s) G G^H` for `G = H A C_m D_m`.
pub fn covariance<T: Scalar>(g: &CMatrix<T>, link: &LinkParams) -> Result<CMatrix<T>> {
    link.validate()?;
    let n_s = g.cols();
    let gram = g.matmul(&g.conj_transpose())?;
    let n_r = g.rows();
    CMatrix::identity(n_r)
        .scale(T::lit(link.noise_var))
        .add(&gram.scale(T::lit(link.power / n_s as f64)))
}

/// `Sigma_m / sigma^2`, better conditioned than `Sigma_m` at high SNR.
fn normalized_covariance<T: Scalar>(g: &CMatrix<T>, link: &LinkParams) -> Result<CMatrix<T>> {
    let n_s = g.cols();
    let gram = g.matmul(&g.conj_transpose())?;
    CMatrix::identity(g.rows()).add(&gram.scale(T::lit(link.power / (n_s as f64 * link.noise_var))))
}

fn factor_all<T: Scalar>(hb: &HybridBeamformer<T>, h: &ChannelMatrix<T>, link: &LinkParams) -> Result<Vec<Cholesky<T>>> {
    link.validate()?;
    hb.effective_channels(h)?
        .iter()
        .map(|g| normalized_covariance(g, link)?.cholesky())
        .collect()
}

/// `(1/M) sum_m log2 det(Sigma_m / sigma^2)`.
pub fn mi_amp_phase<T: Scalar>(hb: &HybridBeamformer<T>, h: &ChannelMatrix<T>, link: &LinkParams) -> Result<f64> {
    let factors = factor_all(hb, h, link)?;
    if factors.is_empty() {
        return Err(Error::config("beamformer has no connectors"));
    }
    let sum: f64 = factors.iter().map(|c| c.ln_det().to_f64_lossy()).sum();
    Ok(sum / factors.len() as f64 / std::f64::consts::LN_2)
}

/// Per-draw spatial information terms from already-factored normalized covariances.
///
/// Returns `(estimate, stderr)`; the estimate is clamped below at zero.
pub fn spatial_mi_from_factors<T: Scalar, R: Rng + ?Sized>(
    factors: &[Cholesky<T>],
    mc_samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if mc_samples == 0 {
        return Err(Error::config("mc_samples must be at least 1"));
    }
    let m = factors.len();
    if m <= 1 {
        return Ok((0.0, 0.0));
    }
    let n = factors[0].factor().rows();
    let ln_dets: Vec<f64> = factors.iter().map(|c| c.ln_det().to_f64_lossy()).collect();
    let ln_m = (m as f64).ln();
    let mut logf = vec![0.0f64; m];
    let mut z = vec![Complex::new(T::zero(), T::zero()); n];
    let mut mean_total = 0.0;
    let mut var_total = 0.0;
    for (hyp, fac) in factors.iter().enumerate() {
        let l = fac.factor();
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..mc_samples {
            for zi in z.iter_mut() {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                *zi = Complex::new(T::lit(re * std::f64::consts::FRAC_1_SQRT_2), T::lit(im * std::f64::consts::FRAC_1_SQRT_2));
            }
            // y = L z ~ CN(0, Sigma_hyp)
            let y: Vec<Complex<T>> = (0..n)
                .map(|i| (0..=i).fold(Complex::new(T::zero(), T::zero()), |acc, k| acc + l[(i, k)] * z[k]))
                .collect();
            for (l_idx, f) in factors.iter().enumerate() {
                // the -n ln(pi) term is common to all hypotheses and cancels
                logf[l_idx] = -ln_dets[l_idx] - f.inv_quad_form(&y).to_f64_lossy();
            }
            let max = logf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logf.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            let term = (logf[hyp] - lse + ln_m) / std::f64::consts::LN_2;
            sum += term;
            sum_sq += term * term;
        }
        let s = mc_samples as f64;
        let mean = sum / s;
        let var = if mc_samples > 1 {
            ((sum_sq - s * mean * mean) / (s - 1.0)).max(0.0)
        } else {
            0.0
        };
        mean_total += mean;
        var_total += var / s;
    }
    let mf = m as f64;
    let estimate = (mean_total / mf).max(0.0);
    Ok((estimate, var_total.sqrt() / mf))
}

/// Monte-Carlo `I(y; m)` with `y ~ CN(0, Sigma_m)`; returns `(value, stderr)`.
pub fn mi_spatial<T: Scalar, R: Rng + ?Sized>(
    hb: &HybridBeamformer<T>,
    h: &ChannelMatrix<T>,
    link: &LinkParams,
    mc_samples: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let factors = factor_all(hb, h, link)?;
    spatial_mi_from_factors(&factors, mc_samples, rng)
}

pub fn achievable_rate<T: Scalar, R: Rng + ?Sized>(
    hb: &HybridBeamformer<T>,
    h: &ChannelMatrix<T>,
    link: &LinkParams,
    mc_samples: usize,
    rng: &mut R,
) -> Result<RateReport> {
    let factors = factor_all(hb, h, link)?;
    if factors.is_empty() {
        return Err(Error::config("beamformer has no connectors"));
    }
    let amp: f64 = factors.iter().map(|c| c.ln_det().to_f64_lossy()).sum::<f64>()
        / factors.len() as f64
        / std::f64::consts::LN_2;
    let (spatial, stderr) = spatial_mi_from_factors(&factors, mc_samples, rng)?;
    Ok(RateReport {
        mi_amp_phase: amp,
        mi_spatial: spatial,
        total: amp + spatial,
        mc_samples,
        mc_stderr: stderr,
    })
}

/// Dataset-average rate, one beamformer per channel; channel `i` draws its
/// Monte-Carlo samples from sub-seed `i` of `seed`.
pub fn average_rate<T: Scalar>(
    beamformers: &[HybridBeamformer<T>],
    channels: &[ChannelMatrix<T>],
    link: &LinkParams,
    mc_samples: usize,
    seed: u64,
) -> Result<RateReport> {
    if beamformers.len() != channels.len() || channels.is_empty() {
        return Err(Error::dim(format!(
            "{} beamformers for {} channels",
            beamformers.len(),
            channels.len()
        )));
    }
    let reports = beamformers
        .par_iter()
        .zip(channels.par_iter())
        .enumerate()
        .map(|(i, (hb, h))| achievable_rate(hb, h, link, mc_samples, &mut rng_from(seed, &[i as u64])))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(&reports))
}

/// Mean of per-channel reports; the stderr combines the per-channel Monte-Carlo errors.
pub fn summarize(reports: &[RateReport]) -> RateReport {
    let n = reports.len() as f64;
    let amp = reports.iter().map(|r| r.mi_amp_phase).sum::<f64>() / n;
    let spatial = reports.iter().map(|r| r.mi_spatial).sum::<f64>() / n;
    let var: f64 = reports.iter().map(|r| r.mc_stderr * r.mc_stderr).sum::<f64>() / (n * n);
    RateReport {
        mi_amp_phase: amp,
        mi_spatial: spatial,
        total: amp + spatial,
        mc_samples: reports.first().map_or(0, |r| r.mc_samples),
        mc_stderr: var.sqrt(),
    }
}

/// Mean over the batch of `-mi_amp_phase`, evaluated without a graph.
pub fn training_loss_value<T: Scalar>(
    beamformers: &[HybridBeamformer<T>],
    channels: &[ChannelMatrix<T>],
    link: &LinkParams,
) -> Result<f64> {
    if beamformers.len() != channels.len() || channels.is_empty() {
        return Err(Error::dim("batch of beamformers and channels must match and be nonempty"));
    }
    let mut acc = 0.0;
    for (hb, h) in beamformers.iter().zip(channels) {
        acc -= mi_amp_phase(hb, h, link)?;
    }
    Ok(acc / channels.len() as f64)
}

/// Connector stack `[M, n_t, n_rf]` as a real constant.
pub fn connector_stack<T: Scalar>(g: &mut Graph<T>, connectors: &ConnectorSet) -> Result<Var> {
    let first = connectors
        .legal
        .first()
        .ok_or_else(|| Error::config("empty connector set"))?;
    let (n_t, n_rf) = (first.n_t(), first.n_rf());
    let mut data = Vec::with_capacity(connectors.len() * n_t * n_rf);
    for c in connectors.iter() {
        data.extend(c.matrix().into_iter().map(|b| T::lit(b as f64)));
    }
    g.constant(&[connectors.len(), n_t, n_rf], data)
}

/// Batched channels `[b, n_r, n_t]` as a complex constant.
pub fn channel_batch<T: Scalar>(g: &mut Graph<T>, channels: &[ChannelMatrix<T>]) -> Result<CVar> {
    let first = channels.first().ok_or_else(|| Error::config("empty channel batch"))?;
    let (n_r, n_t) = (first.n_r(), first.n_t());
    let mut re = Vec::with_capacity(channels.len() * n_r * n_t);
    let mut im = Vec::with_capacity(channels.len() * n_r * n_t);
    for h in channels {
        if h.n_r() != n_r || h.n_t() != n_t {
            return Err(Error::dim("channel batch has inconsistent shapes"));
        }
        for z in h.h.data() {
            re.push(z.re);
            im.push(z.im);
        }
    }
    let shape = [channels.len(), n_r, n_t];
    Ok(CVar::new(g.constant(&shape, re)?, g.constant(&shape, im)?))
}

/// Graph outputs of [`beamformer_loss`].
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    /// Scalar `-mean_b (1/M) sum_m log2 det(Sigma_m / sigma^2)`.
    pub loss: Var,
    /// Per-sample per-scheme amplitude-phase information `[b, M]`, bits.
    pub mi: Var,
    /// Normalized precoders `A C_m D_m`, `[b, M, n_t, n_s]`.
    pub precoders: CVar,
}

/// Differentiable loss from raw decoder outputs.
///
/// `h`: `[b, n_r, n_t]`; `theta_a`: `[b, n_t]`; `d_hat`: `[b, M, n_rf, n_s]`.
/// Applies the analog beamformer, the power normalization of each digital
/// beamformer and the log-det objective.
pub fn beamformer_loss<T: Scalar>(
    g: &mut Graph<T>,
    h: CVar,
    theta_a: Var,
    d_hat: CVar,
    connectors: &ConnectorSet,
    n_k: usize,
    link: &LinkParams,
) -> Result<LossNodes> {
    link.validate()?;
    let hs = g.shape(h.re).to_vec();
    let ds = g.shape(d_hat.re).to_vec();
    if hs.len() != 3 || ds.len() != 4 || g.shape(theta_a) != [hs[0], hs[2]] || ds[0] != hs[0] || ds[1] != connectors.len() {
        return Err(Error::dim(format!(
            "loss shapes: h {:?}, theta_a {:?}, d_hat {:?}, M = {}",
            hs,
            g.shape(theta_a),
            ds,
            connectors.len()
        )));
    }
    let (b, n_r, n_t) = (hs[0], hs[1], hs[2]);
    let n_s = ds[3];
    let stack = connector_stack(g, connectors)?;
    // C_m D_hat_m: [b, M, n_t, n_s]
    let cd = g.real_matmul_c(stack, d_hat)?;
    let theta = g.reshape(theta_a, &[b, 1, n_t, 1])?;
    let ph = g.phasor(theta);
    let ph = g.c_scale(ph, T::one() / T::lit(n_k as f64).sqrt());
    let f = g.c_mul(ph, cd)?;
    let energy = g.c_abs_sqr(f)?;
    let norm_sq = g.sum_axes(energy, &[2, 3])?;
    if let Some(bad) = g.value(norm_sq).iter().position(|&v| !(v >= T::lit(DEGENERATE_NORM * DEGENERATE_NORM))) {
        return Err(Error::DegenerateBeamformer(format!(
            "sample {} scheme {}: ||A C_m D_hat_m||_F below {:e}",
            bad / connectors.len(),
            bad % connectors.len(),
            DEGENERATE_NORM
        )));
    }
    let inv_norm = g.powf(norm_sq, -T::lit(0.5));
    let scale = g.scale(inv_norm, T::lit(n_s as f64).sqrt());
    let precoders = g.c_mul_real(f, scale)?;
    let h4 = g.c_reshape(h, &[b, 1, n_r, n_t])?;
    let eff = g.c_matmul(h4, precoders)?;
    let eff_h = g.c_conj_transpose(eff)?;
    let gram = g.c_matmul(eff, eff_h)?;
    let snr = T::lit(link.power / (n_s as f64 * link.noise_var));
    let gram = g.c_scale(gram, snr);
    let mut eye = vec![T::zero(); n_r * n_r];
    for i in 0..n_r {
        eye[i * n_r + i] = T::one();
    }
    let eye = g.constant(&[n_r, n_r], eye)?;
    let re = g.add(gram.re, eye)?;
    let ln_det = g.herm_log_det(re, gram.im)?;
    let mi = g.scale(ln_det, T::one() / T::LN_2());
    let mean = g.mean(mi);
    let loss = g.neg(mean);
    Ok(LossNodes { loss, mi, precoders })
}
