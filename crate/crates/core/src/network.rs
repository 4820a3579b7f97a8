//! Encoder (UE side), sign quantizer and decoder (BS side).
//!
//! The encoder maps the pilot observation `Y [n_r, L]` to `B` logits through a
//! convolutional expander and two parallel multi-resolution branches; the
//! decoder maps the `B` feedback bits to analog phases and raw digital
//! beamformers for every legal connector.

use num_complex::Complex;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchStats, CVar, Graph, ParamId, ParamStore, QuantizerMode, Record, Var};
use crate::beamforming::HybridBeamformer;
use crate::channel::ChannelMatrix;
use crate::cmat::CMatrix;
use crate::error::{Error, Result};
use crate::gsm_topology::{ConnectorSet, GsmConfig};
use crate::pilots::{build_pilot_mask, emit_pilots};
use crate::rate::{beamformer_loss, channel_batch, LinkParams, LossNodes};
use crate::rng::rng_from;
use crate::scalar::Scalar;

/// Closest odd integer to `x`, ties broken downward: `2 floor((x - 1) / 2) + 1`.
pub fn odd(x: usize) -> usize {
    if x == 0 {
        return 1;
    }
    2 * ((x - 1) / 2) + 1
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub n_r: usize,
    pub l: usize,
    pub expand_channels: usize,
    pub branch_kernels: Vec<usize>,
    pub feedback_bits: usize,
}

impl EncoderSpec {
    pub fn expander_kernel(&self) -> usize {
        odd(self.n_r * self.l / 2)
    }

    pub fn seq_len(&self) -> usize {
        self.n_r * self.l
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderSpec {
    pub feedback_bits: usize,
    pub hidden_dims: Vec<usize>,
    pub n_t: usize,
    pub m: usize,
    pub n_rf: usize,
    pub n_s: usize,
}

impl DecoderSpec {
    pub fn head_sizes(&self) -> (usize, usize) {
        (self.n_t, 2 * self.m * self.n_rf * self.n_s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeedbackBits {
    q: Vec<i8>,
}

impl FeedbackBits {
    pub fn new(q: Vec<i8>) -> Result<Self> {
        if q.iter().any(|&b| b != 1 && b != -1) {
            return Err(Error::config("feedback bits must be +1 or -1"));
        }
        Ok(FeedbackBits { q })
    }

    /// Signs of `values`, `sign(0) = +1`.
    pub fn from_signs<T: Scalar>(values: &[T]) -> Self {
        FeedbackBits {
            q: values.iter().map(|&v| if v >= T::zero() { 1 } else { -1 }).collect(),
        }
    }

    pub fn bits(&self) -> &[i8] {
        &self.q
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }
}

fn default_pilot_len() -> usize {
    8
}
fn default_feedback_bits() -> usize {
    30
}
fn default_expand() -> usize {
    24
}
fn default_branches() -> Vec<usize> {
    vec![7, 11]
}
fn default_hidden() -> Vec<usize> {
    vec![2048, 1024, 512]
}
fn default_bn_eps() -> f64 {
    1e-5
}
fn default_bn_momentum() -> f64 {
    0.9
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default)]
    pub gsm: GsmConfig,
    #[serde(default = "default_pilot_len")]
    pub pilot_len: usize,
    #[serde(default = "default_feedback_bits")]
    pub feedback_bits: usize,
    #[serde(default = "default_expand")]
    pub expand_channels: usize,
    #[serde(default = "default_branches")]
    pub branch_kernels: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f64,
    /// Weight of the old running statistics.
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
    /// Candidate index that seeds the greedy connector selection.
    #[serde(default)]
    pub connector_seed_index: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            gsm: GsmConfig::default(),
            pilot_len: default_pilot_len(),
            feedback_bits: default_feedback_bits(),
            expand_channels: default_expand(),
            branch_kernels: default_branches(),
            hidden_dims: default_hidden(),
            bn_eps: default_bn_eps(),
            bn_momentum: default_bn_momentum(),
            connector_seed_index: 0,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.gsm.validate()?;
        if self.pilot_len == 0 || self.feedback_bits == 0 || self.expand_channels == 0 {
            return Err(Error::config("pilot length, feedback bits and expander width must be positive"));
        }
        if self.branch_kernels.is_empty() || self.branch_kernels.contains(&0) {
            return Err(Error::config("branch kernels must be a nonempty list of positive sizes"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::config("hidden dimensions must be positive"));
        }
        if !(self.bn_eps > 0.0) || !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::config("bn_eps must be positive and bn_momentum in [0, 1)"));
        }
        Ok(())
    }

    pub fn encoder(&self) -> EncoderSpec {
        EncoderSpec {
            n_r: self.gsm.n_r,
            l: self.pilot_len,
            expand_channels: self.expand_channels,
            branch_kernels: self.branch_kernels.clone(),
            feedback_bits: self.feedback_bits,
        }
    }

    pub fn decoder(&self, m: usize) -> DecoderSpec {
        DecoderSpec {
            feedback_bits: self.feedback_bits,
            hidden_dims: self.hidden_dims.clone(),
            n_t: self.gsm.n_t,
            m,
            n_rf: self.gsm.n_rf,
            n_s: self.gsm.n_s,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct BnIds {
    gamma: ParamId,
    beta: ParamId,
    mean: ParamId,
    var: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct ConvBlock {
    w: ParamId,
    bn: BnIds,
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w: ParamId,
    b: Option<ParamId>,
}

#[derive(Debug, Clone, Copy)]
struct HiddenBlock {
    fc: Dense,
    bn: BnIds,
}

#[derive(Debug, Clone)]
struct Layers {
    theta_x: ParamId,
    expander: ConvBlock,
    branches: Vec<ConvBlock>,
    enc_fc: Dense,
    hidden: Vec<HiddenBlock>,
    head_theta: Dense,
    head_digital: Dense,
}

/// Per-forward settings, and batch statistics collected in training mode.
#[derive(Debug, Clone)]
pub struct Pass<T> {
    pub bn_train: bool,
    pub quantizer: QuantizerMode,
    stats: Vec<(BnIds, BatchStats<T>)>,
}

impl<T> Pass<T> {
    /// Batch statistics, hard sign forward.
    pub fn train() -> Self {
        Pass {
            bn_train: true,
            quantizer: QuantizerMode::Hard,
            stats: Vec::new(),
        }
    }

    /// Running statistics, hard sign forward.
    pub fn eval() -> Self {
        Pass {
            bn_train: false,
            quantizer: QuantizerMode::Hard,
            stats: Vec::new(),
        }
    }

    /// Batch statistics, `tanh` forward matching the surrogate gradient.
    pub fn smooth() -> Self {
        Pass {
            bn_train: true,
            quantizer: QuantizerMode::Smooth,
            stats: Vec::new(),
        }
    }
}

/// Channels and pilot noise of one batch.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub channels: Vec<ChannelMatrix<T>>,
    /// `n_r x L` noise per sample, already scaled to the noise variance.
    pub noise: Vec<CMatrix<T>>,
}

impl<T> Batch<T> {
    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardNodes {
    pub pilots: CVar,
    pub observation: CVar,
    pub logits: Var,
    pub bits: Var,
    pub theta_a: Var,
    pub d_hat: CVar,
    pub loss: LossNodes,
}

#[derive(Debug, Clone)]
pub struct GsmEfbNet<T> {
    pub spec: ModelSpec,
    pub connectors: ConnectorSet,
    pub pilot_mask: Vec<u8>,
    pub store: ParamStore<T>,
    layers: Layers,
}

fn xavier<T: Scalar, R: Rng + ?Sized>(rng: &mut R, n: usize, fan_in: usize, fan_out: usize) -> Vec<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| T::lit(rng.random_range(-a..a))).collect()
}

impl<T: Scalar> GsmEfbNet<T> {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let connectors = ConnectorSet::build(&spec.gsm, spec.connector_seed_index)?;
        let pilot_mask = build_pilot_mask(&connectors, spec.pilot_len)?;
        let enc = spec.encoder();
        let dec = spec.decoder(connectors.len());
        let mut rng = rng_from(seed, &[0x696e_6974]);
        let mut store = ParamStore::new();

        let n_t = spec.gsm.n_t;
        let theta_x = store.add(
            "pilot.theta_x",
            &[n_t, enc.l],
            (0..n_t * enc.l)
                .map(|_| T::lit(rng.random_range(0.0..std::f64::consts::TAU)))
                .collect(),
            true,
        )?;

        let bn = |store: &mut ParamStore<T>, name: &str, c: usize| -> Result<BnIds> {
            Ok(BnIds {
                gamma: store.add(&format!("{name}.gamma"), &[c], vec![T::one(); c], true)?,
                beta: store.add(&format!("{name}.beta"), &[c], vec![T::zero(); c], true)?,
                mean: store.add(&format!("{name}.running_mean"), &[c], vec![T::zero(); c], false)?,
                var: store.add(&format!("{name}.running_var"), &[c], vec![T::one(); c], false)?,
            })
        };
        let conv = |store: &mut ParamStore<T>, rng: &mut _, name: &str, cin: usize, cout: usize, k: usize| -> Result<ConvBlock> {
            let w = store.add(
                &format!("{name}.weight"),
                &[cout, cin, k],
                xavier(rng, cout * cin * k, cin * k, cout * k),
                true,
            )?;
            Ok(ConvBlock {
                w,
                bn: bn(store, &format!("{name}.bn"), cout)?,
            })
        };
        let c = enc.expand_channels;
        let expander = conv(&mut store, &mut rng, "enc.expand", 2, c, enc.expander_kernel())?;
        let branches = enc
            .branch_kernels
            .iter()
            .enumerate()
            .map(|(i, &k)| conv(&mut store, &mut rng, &format!("enc.branch{i}"), c, c, k))
            .collect::<Result<Vec<_>>>()?;

        let dense = |store: &mut ParamStore<T>, rng: &mut _, name: &str, fan_in: usize, fan_out: usize, bias: bool| -> Result<Dense> {
            let w = store.add(
                &format!("{name}.weight"),
                &[fan_in, fan_out],
                xavier(rng, fan_in * fan_out, fan_in, fan_out),
                true,
            )?;
            let b = if bias {
                Some(store.add(&format!("{name}.bias"), &[fan_out], vec![T::zero(); fan_out], true)?)
            } else {
                None
            };
            Ok(Dense { w, b })
        };
        let flat = c * enc.branch_kernels.len() * enc.seq_len();
        let enc_fc = dense(&mut store, &mut rng, "enc.fc", flat, enc.feedback_bits, true)?;
        let mut hidden = Vec::with_capacity(dec.hidden_dims.len());
        let mut width = dec.feedback_bits;
        for (i, &h) in dec.hidden_dims.iter().enumerate() {
            // no bias: it would be cancelled by the batch norm that follows
            let fc = dense(&mut store, &mut rng, &format!("dec.fc{i}"), width, h, false)?;
            hidden.push(HiddenBlock {
                fc,
                bn: bn(&mut store, &format!("dec.fc{i}.bn"), h)?,
            });
            width = h;
        }
        let (n_theta, n_digital) = dec.head_sizes();
        let head_theta = dense(&mut store, &mut rng, "dec.head_theta", width, n_theta, true)?;
        let head_digital = dense(&mut store, &mut rng, "dec.head_digital", width, n_digital, true)?;

        Ok(GsmEfbNet {
            spec,
            connectors,
            pilot_mask,
            store,
            layers: Layers {
                theta_x,
                expander,
                branches,
                enc_fc,
                hidden,
                head_theta,
                head_digital,
            },
        })
    }

    pub fn m(&self) -> usize {
        self.connectors.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.store.iter().filter(|(_, p)| p.trainable).map(|(_, p)| p.values.len()).sum()
    }

    fn conv_block(&self, store: &ParamStore<T>, g: &mut Graph<T>, x: Var, blk: &ConvBlock, pass: &mut Pass<T>) -> Result<Var> {
        let w = g.param(store, blk.w);
        let y = g.conv1d(x, w)?;
        let y = self.bn(store, g, y, &blk.bn, pass)?;
        Ok(g.relu(y))
    }

    fn bn(&self, store: &ParamStore<T>, g: &mut Graph<T>, x: Var, ids: &BnIds, pass: &mut Pass<T>) -> Result<Var> {
        let gamma = g.param(store, ids.gamma);
        let beta = g.param(store, ids.beta);
        let eps = T::lit(self.spec.bn_eps);
        let running = if pass.bn_train {
            None
        } else {
            Some((
                store.get(ids.mean).values.as_slice(),
                store.get(ids.var).values.as_slice(),
            ))
        };
        let (y, stats) = g.batch_norm(x, gamma, beta, running, eps)?;
        if let Some(s) = stats {
            pass.stats.push((*ids, s));
        }
        Ok(y)
    }

    fn dense(&self, store: &ParamStore<T>, g: &mut Graph<T>, x: Var, d: &Dense) -> Result<Var> {
        let w = g.param(store, d.w);
        let y = g.matmul(x, w)?;
        match d.b {
            Some(b) => {
                let b = g.param(store, b);
                g.add(y, b)
            }
            None => Ok(y),
        }
    }

    /// Pilot matrix `[n_t, L]` from the learnable phases.
    pub fn pilots(&self, g: &mut Graph<T>, link: &LinkParams) -> Result<CVar> {
        self.pilots_with(&self.store, g, link)
    }

    fn pilots_with(&self, store: &ParamStore<T>, g: &mut Graph<T>, link: &LinkParams) -> Result<CVar> {
        let th = g.param(store, self.layers.theta_x);
        emit_pilots(g, th, &self.pilot_mask, link.power, self.spec.gsm.n_k)
    }

    /// Current pilot matrix as a plain complex matrix.
    pub fn pilot_matrix(&self, link: &LinkParams) -> CMatrix<T> {
        let n_t = self.spec.gsm.n_t;
        let l = self.spec.pilot_len;
        let amp = T::lit((link.power / self.spec.gsm.n_k as f64).sqrt());
        let th = &self.store.get(self.layers.theta_x).values;
        CMatrix::from_fn(n_t, l, |i, j| {
            let k = i * l + j;
            if self.pilot_mask[k] == 0 {
                Complex::new(T::zero(), T::zero())
            } else {
                Complex::new(amp * th[k].cos(), amp * th[k].sin())
            }
        })
    }

    /// Logits `[b, B]` from observations `y [b, n_r, L]`.
    pub fn encode(&self, g: &mut Graph<T>, y: CVar, pass: &mut Pass<T>) -> Result<Var> {
        self.encode_with(&self.store, g, y, pass)
    }

    fn encode_with(&self, store: &ParamStore<T>, g: &mut Graph<T>, y: CVar, pass: &mut Pass<T>) -> Result<Var> {
        let enc = self.spec.encoder();
        let s = g.shape(y.re).to_vec();
        if s.len() != 3 || s[1] != enc.n_r || s[2] != enc.l {
            return Err(Error::dim(format!(
                "encoder expects [b, {}, {}], got {:?}",
                enc.n_r, enc.l, s
            )));
        }
        let b = s[0];
        let len = enc.seq_len();
        let re = g.reshape(y.re, &[b, 1, len])?;
        let im = g.reshape(y.im, &[b, 1, len])?;
        let x = g.concat(&[re, im], 1)?;
        let x = self.conv_block(store, g, x, &self.layers.expander, pass)?;
        let mut outs = Vec::with_capacity(self.layers.branches.len());
        for blk in &self.layers.branches {
            outs.push(self.conv_block(store, g, x, blk, pass)?);
        }
        let x = g.concat(&outs, 1)?;
        let flat = g.shape(x)[1] * len;
        let x = g.reshape(x, &[b, flat])?;
        self.dense(store, g, x, &self.layers.enc_fc)
    }

    pub fn quantize(&self, g: &mut Graph<T>, logits: Var, pass: &Pass<T>) -> Var {
        g.quantize(logits, pass.quantizer)
    }

    /// Analog phases `[b, n_t]` and raw digital beamformers `[b, M, n_rf, n_s]`.
    pub fn decode(&self, g: &mut Graph<T>, q: Var, pass: &mut Pass<T>) -> Result<(Var, CVar)> {
        self.decode_with(&self.store, g, q, pass)
    }

    fn decode_with(&self, store: &ParamStore<T>, g: &mut Graph<T>, q: Var, pass: &mut Pass<T>) -> Result<(Var, CVar)> {
        let s = g.shape(q).to_vec();
        if s.len() != 2 || s[1] != self.spec.feedback_bits {
            return Err(Error::dim(format!(
                "decoder expects [b, {}], got {:?}",
                self.spec.feedback_bits, s
            )));
        }
        let b = s[0];
        let mut x = q;
        for blk in &self.layers.hidden {
            let y = self.dense(store, g, x, &blk.fc)?;
            let y = self.bn(store, g, y, &blk.bn, pass)?;
            x = g.relu(y);
        }
        let theta_a = self.dense(store, g, x, &self.layers.head_theta)?;
        let raw = self.dense(store, g, x, &self.layers.head_digital)?;
        let gsm = &self.spec.gsm;
        let m = self.m();
        let raw = g.reshape(raw, &[b, 2, m, gsm.n_rf, gsm.n_s])?;
        let re = g.slice(raw, 1, 0, 1)?;
        let im = g.slice(raw, 1, 1, 1)?;
        let shape = [b, m, gsm.n_rf, gsm.n_s];
        let d_hat = CVar::new(g.reshape(re, &shape)?, g.reshape(im, &shape)?);
        Ok((theta_a, d_hat))
    }

    /// Pilots, observation, encoder, quantizer, decoder, normalization and loss.
    pub fn forward(&self, g: &mut Graph<T>, batch: &Batch<T>, link: &LinkParams, pass: &mut Pass<T>) -> Result<ForwardNodes> {
        self.forward_with(&self.store, g, batch, link, pass)
    }

    /// [`Self::forward`] reading parameter values from `store`, which must share
    /// this model's layout (e.g. a perturbed clone of `self.store`).
    pub fn forward_with(
        &self,
        store: &ParamStore<T>,
        g: &mut Graph<T>,
        batch: &Batch<T>,
        link: &LinkParams,
        pass: &mut Pass<T>,
    ) -> Result<ForwardNodes> {
        let b = batch.len();
        if b == 0 || batch.noise.len() != b {
            return Err(Error::dim(format!(
                "batch has {} channels and {} noise matrices",
                b,
                batch.noise.len()
            )));
        }
        let (n_r, l) = (self.spec.gsm.n_r, self.spec.pilot_len);
        let pilots = self.pilots_with(store, g, link)?;
        let h = channel_batch(g, &batch.channels)?;
        let hx = g.c_matmul(h, pilots)?;
        let mut nre = Vec::with_capacity(b * n_r * l);
        let mut nim = Vec::with_capacity(b * n_r * l);
        for n in &batch.noise {
            if n.shape() != (n_r, l) {
                return Err(Error::dim(format!("noise shape {:?}, expected ({n_r}, {l})", n.shape())));
            }
            nre.extend(n.data().iter().map(|z| z.re));
            nim.extend(n.data().iter().map(|z| z.im));
        }
        let noise = CVar::new(g.constant(&[b, n_r, l], nre)?, g.constant(&[b, n_r, l], nim)?);
        let observation = g.c_add(hx, noise)?;
        let logits = self.encode_with(store, g, observation, pass)?;
        let bits = self.quantize(g, logits, pass);
        let (theta_a, d_hat) = self.decode_with(store, g, bits, pass)?;
        let loss = beamformer_loss(g, h, theta_a, d_hat, &self.connectors, self.spec.gsm.n_k, link)?;
        Ok(ForwardNodes {
            pilots,
            observation,
            logits,
            bits,
            theta_a,
            d_hat,
            loss,
        })
    }

    /// Folds the batch statistics of a training pass into the running averages.
    pub fn update_running_stats(&mut self, pass: &Pass<T>) {
        let mom = T::lit(self.spec.bn_momentum);
        let rest = T::one() - mom;
        for (ids, s) in &pass.stats {
            for (r, &v) in self.store.get_mut(ids.mean).values.iter_mut().zip(&s.mean) {
                *r = mom * *r + rest * v;
            }
            for (r, &v) in self.store.get_mut(ids.var).values.iter_mut().zip(&s.var) {
                *r = mom * *r + rest * v;
            }
        }
    }

    /// Hybrid beamformers decoded in a finished forward pass, one per sample.
    pub fn beamformers(&self, g: &Graph<T>, nodes: &ForwardNodes) -> Result<Vec<HybridBeamformer<T>>> {
        let gsm = &self.spec.gsm;
        let (n_t, m, n_rf, n_s) = (gsm.n_t, self.m(), gsm.n_rf, gsm.n_s);
        let th = g.value(nodes.theta_a);
        let re = g.value(nodes.d_hat.re);
        let im = g.value(nodes.d_hat.im);
        let b = th.len() / n_t;
        (0..b)
            .map(|s| {
                let d: Vec<CMatrix<T>> = (0..m)
                    .map(|k| {
                        let off = (s * m + k) * n_rf * n_s;
                        CMatrix::from_fn(n_rf, n_s, |i, j| Complex::new(re[off + i * n_s + j], im[off + i * n_s + j]))
                    })
                    .collect();
                HybridBeamformer::from_raw(th[s * n_t..(s + 1) * n_t].to_vec(), gsm.n_k, &d, self.connectors.clone())
            })
            .collect()
    }

    /// Hard feedback bits from a finished forward pass.
    pub fn feedback(&self, g: &Graph<T>, nodes: &ForwardNodes) -> Vec<FeedbackBits> {
        g.value(nodes.logits)
            .chunks(self.spec.feedback_bits)
            .map(FeedbackBits::from_signs)
            .collect()
    }

    pub fn to_records(&self) -> Vec<Record> {
        self.store.to_records()
    }

    pub fn load_records(&mut self, records: &[Record]) -> Result<()> {
        self.store.load_records(records)
    }
}
