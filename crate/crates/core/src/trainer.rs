//! Unsupervised end-to-end training: online channel sampling, Adam with a
//! warmup + cosine schedule, per-epoch test evaluation and resumable run
//! directories.
//!
//! Run directory layout:
//! - `config.json`: the full [`RunConfig`]
//! - `metrics.csv`: one row per epoch
//! - `checkpoint.bin`: latest parameters, optimizer state and next epoch
//! - `summary.json`: rates of the initial model, the random baseline and the final model

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{read_checkpoint, write_checkpoint, Graph, ParamId, ParamStore, Record};
use crate::beamforming::HybridBeamformer;
use crate::channel::{complex_gaussian, generate_dataset_seeded, sample_channel, ChannelMatrix};
use crate::cmat::CMatrix;
use crate::config::{RunConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::network::{Batch, GsmEfbNet, Pass};
use crate::rate::{average_rate, LinkParams, RateReport};
use crate::rng::{derive_seed, rng_from};
use crate::scalar::Scalar;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SUMMARY_FILE: &str = "summary.json";
pub const METRICS_SCHEMA_VERSION: u32 = 1;
pub const METRICS_HEADER: &str = "epoch,lr,train_loss,test_mi_amp_phase,test_mi_spatial,test_rate";

const STREAM_TRAIN: u64 = 1;
const STREAM_TRAIN_NOISE: u64 = 2;
const STREAM_TEST_NOISE: u64 = 3;
const STREAM_MC: u64 = 4;
const STREAM_RANDOM_BF: u64 = 5;

/// Linear ramp from 0 over the warmup epochs, then cosine decay to `lr_min`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    let w = cfg.warmup_epochs;
    if epoch < w {
        return cfg.lr_init * epoch as f64 / w as f64;
    }
    let span = cfg.epochs.saturating_sub(w).max(1) as f64;
    let t = ((epoch - w) as f64 / span).min(1.0);
    cfg.lr_min + 0.5 * (cfg.lr_init - cfg.lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Adam with bias correction; moments are indexed by parameter id.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        let zeros = |store: &ParamStore<T>| store.iter().map(|(_, p)| vec![T::zero(); p.values.len()]).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(store),
            v: zeros(store),
        }
    }

    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Vec<T>)], lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(t));
        let c2 = T::lit(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::lit(lr), T::lit(self.eps));
        for (id, g) in grads {
            let i = id.index();
            let p = store.get_mut(*id);
            if g.len() != p.values.len() || i >= self.m.len() {
                return Err(Error::dim(format!("gradient for {:?} does not match the optimizer state", p.name)));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..g.len() {
                m[k] = b1 * m[k] + (T::one() - b1) * g[k];
                v[k] = b2 * v[k] + (T::one() - b2) * g[k] * g[k];
                let mh = m[k] / c1;
                let vh = v[k] / c2;
                p.values[k] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn to_records(&self, store: &ParamStore<T>) -> Vec<Record> {
        let mut out = vec![Record {
            name: "adam.step".into(),
            dims: vec![1],
            values: vec![self.step as f64],
        }];
        for (id, p) in store.iter() {
            for (tag, buf) in [("m", &self.m), ("v", &self.v)] {
                out.push(Record {
                    name: format!("adam.{tag}.{}", p.name),
                    dims: p.shape.clone(),
                    values: buf[id.index()].iter().map(|x| x.to_f64_lossy()).collect(),
                });
            }
        }
        out
    }

    pub fn load_records(&mut self, store: &ParamStore<T>, records: &[Record]) -> Result<()> {
        let find = |name: &str| {
            records
                .iter()
                .find(|r| r.name == name)
                .ok_or_else(|| Error::Format(format!("checkpoint lacks {name:?}")))
        };
        self.step = find("adam.step")?.values.first().copied().unwrap_or(0.0) as u64;
        for (id, p) in store.iter() {
            for tag in ["m", "v"] {
                let r = find(&format!("adam.{tag}.{}", p.name))?;
                if r.values.len() != p.values.len() {
                    return Err(Error::Format(format!("optimizer state for {:?} has the wrong size", p.name)));
                }
                let vals = r.values.iter().map(|&x| T::lit(x)).collect();
                match tag {
                    "m" => self.m[id.index()] = vals,
                    _ => self.v[id.index()] = vals,
                }
            }
        }
        Ok(())
    }
}

/// Rescales gradients so that their global L2 norm is at most `max_norm`.
pub fn clip_gradients<T: Scalar>(grads: &mut [(ParamId, Vec<T>)], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|(_, g)| g.iter())
        .map(|x| x.to_f64_lossy().powi(2))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = T::lit(max_norm / norm);
        grads.iter_mut().for_each(|(_, g)| g.iter_mut().for_each(|x| *x *= s));
    }
    norm
}

fn unit_noise<T: Scalar, R: Rng + ?Sized>(rng: &mut R, n_r: usize, l: usize, noise_var: f64) -> CMatrix<T> {
    CMatrix::from_fn(n_r, l, |_, _| complex_gaussian(rng, noise_var))
}

/// Training batch `(epoch, batch)`: fresh channels and pilot noise from per-sample sub-seeds.
pub fn sample_batch<T: Scalar>(run: &RunConfig, epoch: usize, batch: usize) -> Result<Batch<T>> {
    let tc = &run.train;
    let noise_var = tc.link().noise_var;
    let (n_r, l) = (run.model.gsm.n_r, run.model.pilot_len);
    let pairs = (0..tc.batch_size)
        .into_par_iter()
        .map(|i| {
            let path = [STREAM_TRAIN, epoch as u64, batch as u64, i as u64];
            let mut rng = rng_from(tc.seed, &path);
            let h = sample_channel(&run.channel, &mut rng)?;
            let n = if tc.freeze_pilot_noise {
                unit_noise(&mut rng_from(tc.seed, &[STREAM_TRAIN_NOISE, batch as u64, i as u64]), n_r, l, noise_var)
            } else {
                unit_noise(&mut rng, n_r, l, noise_var)
            };
            Ok((h, n))
        })
        .collect::<Result<Vec<_>>>()?;
    let (channels, noise) = pairs.into_iter().unzip();
    Ok(Batch { channels, noise })
}

/// Fixed test channels with unit-variance pilot noise, scaled per SNR at evaluation.
#[derive(Debug, Clone)]
pub struct TestSet<T> {
    pub channels: Vec<ChannelMatrix<T>>,
    pub unit_noise: Vec<CMatrix<T>>,
}

impl<T: Scalar> TestSet<T> {
    /// Channels come from the channel config's seed, so every run sees the same test set.
    pub fn generate(run: &RunConfig, size: usize) -> Result<Self> {
        let channels = generate_dataset_seeded(&run.channel, size, run.channel.rng_seed)?;
        Self::with_channels(run, channels)
    }

    pub fn with_channels(run: &RunConfig, channels: Vec<ChannelMatrix<T>>) -> Result<Self> {
        let (n_r, l) = (run.model.gsm.n_r, run.model.pilot_len);
        let seed = run.channel.rng_seed;
        let unit_noise = (0..channels.len())
            .map(|i| unit_noise(&mut rng_from(seed, &[STREAM_TEST_NOISE, i as u64]), n_r, l, 1.0))
            .collect();
        Ok(TestSet { channels, unit_noise })
    }

    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    /// Pilot noise of test sample `i` at the link's noise variance.
    pub fn noise(&self, i: usize, link: &LinkParams) -> CMatrix<T> {
        self.unit_noise[i].scale(T::lit(link.noise_var.sqrt()))
    }

    fn batch(&self, range: std::ops::Range<usize>, link: &LinkParams) -> Batch<T> {
        let sd = T::lit(link.noise_var.sqrt());
        Batch {
            channels: self.channels[range.clone()].to_vec(),
            noise: self.unit_noise[range].iter().map(|n| n.scale(sd)).collect(),
        }
    }
}

/// Beamformers the model produces in evaluation mode for every test channel.
pub fn infer_beamformers<T: Scalar>(
    net: &GsmEfbNet<T>,
    test: &TestSet<T>,
    link: &LinkParams,
    eval_batch: usize,
) -> Result<Vec<HybridBeamformer<T>>> {
    let chunks: Vec<_> = (0..test.len()).step_by(eval_batch.max(1)).collect();
    let parts = chunks
        .par_iter()
        .map(|&start| {
            let end = (start + eval_batch).min(test.len());
            let batch = test.batch(start..end, link);
            let mut g = Graph::new();
            let nodes = net.forward(&mut g, &batch, link, &mut Pass::eval())?;
            net.beamformers(&g, &nodes)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// Test-set achievable rate of the model in evaluation mode.
pub fn evaluate<T: Scalar>(
    net: &GsmEfbNet<T>,
    test: &TestSet<T>,
    link: &LinkParams,
    tc: &TrainConfig,
) -> Result<RateReport> {
    let hbs = infer_beamformers(net, test, link, tc.eval_batch)?;
    average_rate(&hbs, &test.channels, link, tc.eval_mc_samples, derive_seed(tc.seed, &[STREAM_MC]))
}

/// Rate of random-phase, random-digital beamformers on the test set.
pub fn random_baseline<T: Scalar>(
    net: &GsmEfbNet<T>,
    test: &TestSet<T>,
    link: &LinkParams,
    tc: &TrainConfig,
) -> Result<RateReport> {
    let g = &net.spec.gsm;
    let hbs = (0..test.len())
        .map(|i| {
            let mut rng = rng_from(tc.seed, &[STREAM_RANDOM_BF, i as u64]);
            HybridBeamformer::random(g.n_t, g.n_k, g.n_s, net.connectors.clone(), &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    average_rate(&hbs, &test.channels, link, tc.eval_mc_samples, derive_seed(tc.seed, &[STREAM_MC]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_mi_amp_phase: f64,
    pub test_mi_spatial: f64,
    pub test_rate: f64,
}

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.lr, self.train_loss, self.test_mi_amp_phase, self.test_mi_spatial, self.test_rate
        )
    }

    pub fn parse_row(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 6 {
            return Err(Error::Format(format!("metrics row has {} fields: {line:?}", f.len())));
        }
        let num = |s: &str| -> Result<f64> { s.parse().map_err(|_| Error::Format(format!("bad number {s:?} in metrics row"))) };
        Ok(EpochMetrics {
            epoch: f[0].parse().map_err(|_| Error::Format(format!("bad epoch {:?}", f[0])))?,
            lr: num(f[1])?,
            train_loss: num(f[2])?,
            test_mi_amp_phase: num(f[3])?,
            test_mi_spatial: num(f[4])?,
            test_rate: num(f[5])?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub feedback_bits: usize,
    pub snr_db: f64,
    pub initial: RateReport,
    pub random_baseline: RateReport,
    pub final_rate: Option<RateReport>,
    pub epochs_completed: usize,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Continue from `checkpoint.bin` in the run directory.
    pub resume: bool,
    /// Stop after this many epochs in total (the schedule still uses `epochs`).
    pub stop_after: Option<usize>,
    /// Print one line per epoch to stderr.
    pub verbose: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub net: GsmEfbNet<T>,
    pub history: Vec<EpochMetrics>,
    pub summary: TrainSummary,
}

/// Writes `checkpoint.bin` atomically (temporary file, then rename).
pub fn save_checkpoint<T: Scalar>(dir: &Path, net: &GsmEfbNet<T>, adam: &Adam<T>, next_epoch: usize) -> Result<()> {
    let mut records = net.to_records();
    records.extend(adam.to_records(&net.store));
    records.push(Record {
        name: "meta.next_epoch".into(),
        dims: vec![1],
        values: vec![next_epoch as f64],
    });
    let tmp = dir.join(format!("{CHECKPOINT_FILE}.tmp"));
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        write_checkpoint(&mut w, &records)?;
        w.flush()?;
    }
    fs::rename(&tmp, dir.join(CHECKPOINT_FILE))?;
    Ok(())
}

/// Model stored in a run directory: its config and latest parameters.
pub fn load_run<T: Scalar>(dir: &Path) -> Result<(RunConfig, GsmEfbNet<T>, Vec<Record>)> {
    let run = RunConfig::load(&dir.join(CONFIG_FILE))?;
    let mut net = GsmEfbNet::new(run.model.clone(), run.train.seed)?;
    let path = dir.join(CHECKPOINT_FILE);
    let file = fs::File::open(&path)
        .map_err(|e| Error::config(format!("cannot open checkpoint {}: {}", path.display(), e)))?;
    let records = read_checkpoint(&mut BufReader::new(file))?;
    net.load_records(&records)?;
    Ok((run, net, records))
}

fn metrics_preamble(run: &RunConfig) -> String {
    let cfg = serde_json::to_string(run).expect("config serializes");
    format!(
        "# schema_version={}\n# seed={}\n# config={}\n{}\n",
        METRICS_SCHEMA_VERSION, run.train.seed, cfg, METRICS_HEADER
    )
}

/// Data rows of a metrics file, skipping comments and the header.
pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty() && *l != METRICS_HEADER)
        .map(EpochMetrics::parse_row)
        .collect()
}

fn write_metrics(path: &Path, run: &RunConfig, rows: &[EpochMetrics]) -> Result<()> {
    let mut text = metrics_preamble(run);
    for r in rows {
        text.push_str(&r.csv_row());
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_summary(dir: &Path, s: &TrainSummary) -> Result<()> {
    fs::write(dir.join(SUMMARY_FILE), serde_json::to_string_pretty(s)?)?;
    Ok(())
}

/// One optimization step on `batch`; returns the batch loss.
pub fn train_step<T: Scalar>(
    net: &mut GsmEfbNet<T>,
    adam: &mut Adam<T>,
    batch: &Batch<T>,
    link: &LinkParams,
    lr: f64,
    max_grad_norm: Option<f64>,
) -> Result<f64> {
    let mut g = Graph::new();
    let mut pass = Pass::train();
    let nodes = net.forward(&mut g, batch, link, &mut pass)?;
    let loss = g.scalar(nodes.loss.loss)?.to_f64_lossy();
    if !loss.is_finite() {
        return Err(Error::numerical(format!("training loss is {loss}")));
    }
    let mut grads = g.backward(nodes.loss.loss)?.params(&net.store);
    drop(g);
    if grads.iter().any(|(_, v)| v.iter().any(|x| !x.is_finite())) {
        return Err(Error::numerical("non-finite gradient"));
    }
    if let Some(c) = max_grad_norm {
        clip_gradients(&mut grads, c);
    }
    adam.update(&mut net.store, &grads, lr)?;
    net.update_running_stats(&pass);
    Ok(loss)
}

/// Trains per `run`, writing the run directory when `dir` is given.
///
/// A numerical failure aborts with the checkpoint of the last completed epoch
/// left in place.
pub fn train<T: Scalar>(run: &RunConfig, dir: Option<&Path>, opts: &TrainOptions) -> Result<TrainOutcome<T>> {
    run.validate()?;
    let tc = &run.train;
    let link = tc.link();
    let mut net = GsmEfbNet::<T>::new(run.model.clone(), tc.seed)?;
    let test = TestSet::<T>::generate(run, tc.test_size)?;
    let initial = evaluate(&net, &test, &link, tc)?;
    let random = random_baseline(&net, &test, &link, tc)?;
    let mut adam = Adam::new(&net.store);
    let mut history = Vec::new();
    let mut start = 0;

    if let Some(d) = dir {
        fs::create_dir_all(d)?;
        if opts.resume {
            let saved = RunConfig::load(&d.join(CONFIG_FILE))?;
            if &saved != run {
                return Err(Error::config("resume config differs from the run directory's config.json"));
            }
            let (_, loaded, records) = load_run::<T>(d)?;
            net = loaded;
            adam.load_records(&net.store, &records)?;
            start = records
                .iter()
                .find(|r| r.name == "meta.next_epoch")
                .and_then(|r| r.values.first().copied())
                .ok_or_else(|| Error::Format("checkpoint lacks meta.next_epoch".into()))? as usize;
            history = read_metrics(&d.join(METRICS_FILE))?;
            history.retain(|m| m.epoch < start);
        } else {
            fs::write(d.join(CONFIG_FILE), run.to_json())?;
            save_checkpoint(d, &net, &adam, 0)?;
        }
        write_metrics(&d.join(METRICS_FILE), run, &history)?;
    }

    let mut summary = TrainSummary {
        seed: tc.seed,
        feedback_bits: run.model.feedback_bits,
        snr_db: tc.snr_db,
        initial,
        random_baseline: random,
        final_rate: None,
        epochs_completed: start,
    };
    let end = opts.stop_after.map_or(tc.epochs, |s| s.min(tc.epochs));
    for epoch in start..end {
        let lr = lr_schedule(epoch, tc);
        let mut total = 0.0;
        for b in 0..tc.batches_per_epoch {
            let batch = sample_batch::<T>(run, epoch, b)?;
            total += train_step(&mut net, &mut adam, &batch, &link, lr, tc.max_grad_norm)?;
        }
        let rate = evaluate(&net, &test, &link, tc)?;
        let m = EpochMetrics {
            epoch,
            lr,
            train_loss: total / tc.batches_per_epoch as f64,
            test_mi_amp_phase: rate.mi_amp_phase,
            test_mi_spatial: rate.mi_spatial,
            test_rate: rate.total,
        };
        if opts.verbose {
            eprintln!(
                "epoch {:>4}  lr {:.3e}  loss {:>9.4}  rate {:>8.4} (amp-phase {:.4}, spatial {:.4})",
                epoch, lr, m.train_loss, m.test_rate, m.test_mi_amp_phase, m.test_mi_spatial
            );
        }
        history.push(m);
        summary.final_rate = Some(rate);
        summary.epochs_completed = epoch + 1;
        if let Some(d) = dir {
            save_checkpoint(d, &net, &adam, epoch + 1)?;
            write_metrics(&d.join(METRICS_FILE), run, &history)?;
        }
    }
    if summary.final_rate.is_none() {
        summary.final_rate = Some(if start > 0 { evaluate(&net, &test, &link, tc)? } else { initial });
    }
    if let Some(d) = dir {
        write_summary(d, &summary)?;
    }
    Ok(TrainOutcome { net, history, summary })
}

/// Paths of run directories (those holding a `config.json`) directly below `root`, sorted.
pub fn run_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(CONFIG_FILE).is_file())
        .collect();
    if root.join(CONFIG_FILE).is_file() {
        out.push(root.to_path_buf());
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::ParamStore;

    #[test]
    fn schedule_shape() {
        let tc = TrainConfig::default();
        assert_eq!(lr_schedule(0, &tc), 0.0);
        assert!((lr_schedule(10, &tc) - 5e-4).abs() < 1e-18);
        assert!((lr_schedule(5, &tc) - 2.5e-4).abs() < 1e-18);
        let last = lr_schedule(199, &tc);
        assert!(last > 1e-5 && last < 1.01e-5);
        let mut prev = f64::INFINITY;
        for e in 10..200 {
            let v = lr_schedule(e, &tc);
            assert!(v <= prev);
            prev = v;
        }
        let no_warm = TrainConfig {
            warmup_epochs: 0,
            ..TrainConfig::default()
        };
        assert_eq!(lr_schedule(0, &no_warm), 5e-4);
    }

    fn one_param(v: Vec<f64>) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", &[v.len()], v, true).unwrap();
        (s, id)
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let (mut s, id) = one_param(vec![1.0, -2.0]);
        let mut adam = Adam::new(&s);
        adam.update(&mut s, &[(id, vec![0.0, 0.0])], 1e-3).unwrap();
        assert_eq!(s.get(id).values, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let (mut s, id) = one_param(vec![0.5]);
        let mut adam = Adam::new(&s);
        adam.update(&mut s, &[(id, vec![3.0])], 1e-3).unwrap();
        // m_hat = g, v_hat = g^2, step = lr * g / (|g| + eps)
        let want = 0.5 - 1e-3 * 3.0 / (3.0 + 1e-8);
        assert!((s.get(id).values[0] - want).abs() < 1e-15);
    }

    #[test]
    fn adam_state_round_trips() {
        let (mut s, id) = one_param(vec![0.5, 0.1]);
        let mut adam = Adam::new(&s);
        adam.update(&mut s, &[(id, vec![1.0, -2.0])], 1e-2).unwrap();
        let recs = adam.to_records(&s);
        let mut other = Adam::new(&s);
        other.load_records(&s, &recs).unwrap();
        assert_eq!(other, adam);
    }

    #[test]
    fn clipping_caps_the_norm() {
        let mut g = vec![(one_param(vec![0.0]).1, vec![3.0f64, 4.0])];
        assert_eq!(clip_gradients(&mut g, 1.0), 5.0);
        assert!((g[0].1[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn metrics_rows_round_trip() {
        let m = EpochMetrics {
            epoch: 3,
            lr: 1.25e-4,
            train_loss: -7.5,
            test_mi_amp_phase: 8.0,
            test_mi_spatial: 1.5,
            test_rate: 9.5,
        };
        assert_eq!(EpochMetrics::parse_row(&m.csv_row()).unwrap(), m);
        assert!(EpochMetrics::parse_row("1,2,3").is_err());
    }

    #[test]
    fn batches_are_reproducible() {
        let run = RunConfig::smoke();
        let a = sample_batch::<f64>(&run, 1, 2).unwrap();
        let b = sample_batch::<f64>(&run, 1, 2).unwrap();
        let c = sample_batch::<f64>(&run, 1, 3).unwrap();
        assert_eq!(a.channels[0], b.channels[0]);
        assert_eq!(a.noise[5], b.noise[5]);
        assert_ne!(a.channels[0], c.channels[0]);
    }
}
