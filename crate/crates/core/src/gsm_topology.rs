//! Antenna-group activation schemes for generalized spatial modulation.
//!
//! `N_t` transmit antennas are split into `N_g` contiguous groups of `N_k`
//! antennas. A connector wires each of the `N_RF` RF chains to a distinct
//! group; only `M = 2^floor(log2 binom(N_g, N_RF))` of the candidate
//! connectors are legal, chosen greedily by Hamming distance between their
//! activation patterns.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GsmConfig {
    pub n_t: usize,
    pub n_r: usize,
    pub n_g: usize,
    pub n_k: usize,
    pub n_rf: usize,
    pub n_s: usize,
}

impl Default for GsmConfig {
    fn default() -> Self {
        GsmConfig {
            n_t: 16,
            n_r: 4,
            n_g: 4,
            n_k: 4,
            n_rf: 2,
            n_s: 2,
        }
    }
}

impl GsmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_g == 0 || self.n_k == 0 || self.n_rf == 0 || self.n_s == 0 || self.n_r == 0 {
            return Err(Error::config(format!("all GSM dimensions must be positive: {:?}", self)));
        }
        if self.n_t != self.n_g * self.n_k {
            return Err(Error::config(format!(
                "n_t = {} must equal n_g * n_k = {}",
                self.n_t,
                self.n_g * self.n_k
            )));
        }
        if self.n_rf > self.n_g {
            return Err(Error::config(format!(
                "n_rf = {} exceeds group count n_g = {}",
                self.n_rf, self.n_g
            )));
        }
        if self.n_s > self.n_rf {
            return Err(Error::config(format!(
                "n_s = {} exceeds RF chain count n_rf = {}",
                self.n_s, self.n_rf
            )));
        }
        Ok(())
    }
}

/// Binary `n_t x n_rf` antenna connecting matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Connector {
    n_t: usize,
    n_k: usize,
    /// Group driven by each RF chain, ascending.
    groups: Vec<usize>,
}

impl Connector {
    pub fn new(n_t: usize, n_k: usize, groups: Vec<usize>) -> Result<Self> {
        if n_k == 0 || !n_t.is_multiple_of(n_k) {
            return Err(Error::config(format!("n_t = {} not divisible by n_k = {}", n_t, n_k)));
        }
        let n_g = n_t / n_k;
        if groups.is_empty() {
            return Err(Error::config("connector needs at least one RF chain"));
        }
        if groups.iter().any(|&g| g >= n_g) || groups.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "groups {:?} must be strictly ascending and below {}",
                groups, n_g
            )));
        }
        Ok(Connector { n_t, n_k, groups })
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_rf(&self) -> usize {
        self.groups.len()
    }

    pub fn n_k(&self) -> usize {
        self.n_k
    }

    /// Entry `(i, j)`: antenna `i` is active and wired to RF chain `j`.
    pub fn entry(&self, antenna: usize, chain: usize) -> u8 {
        u8::from(antenna / self.n_k == self.groups[chain])
    }

    /// Row-major `n_t x n_rf` 0/1 matrix.
    pub fn matrix(&self) -> Vec<u8> {
        let n_rf = self.n_rf();
        let mut m = vec![0u8; self.n_t * n_rf];
        for i in 0..self.n_t {
            for j in 0..n_rf {
                m[i * n_rf + j] = self.entry(i, j);
            }
        }
        m
    }

    /// RF chain feeding antenna `i`, if any.
    pub fn chain_of(&self, antenna: usize) -> Option<usize> {
        let g = antenna / self.n_k;
        self.groups.iter().position(|&x| x == g)
    }

    /// Row sums over the RF columns: the antenna activation pattern.
    pub fn activation(&self) -> Vec<u8> {
        (0..self.n_t)
            .map(|i| u8::from(self.chain_of(i).is_some()))
            .collect()
    }
}

/// The `M` legal connectors, in greedy selection order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectorSet {
    pub legal: Vec<Connector>,
    pub m_bar: usize,
    pub m: usize,
}

impl ConnectorSet {
    /// Enumerates candidates, counts legal schemes and greedily selects them.
    pub fn build(cfg: &GsmConfig, seed_index: usize) -> Result<Self> {
        let (m_bar, m) = count_legal(cfg)?;
        let candidates = enumerate_candidates(cfg)?;
        let mut set = select_legal(&candidates, m, seed_index)?;
        set.m_bar = m_bar;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.legal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.legal.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Connector> {
        self.legal.iter()
    }
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// `(m_bar, m)` with `m_bar = binom(n_g, n_rf)` and `m` the largest power of two not above it.
pub fn count_legal(cfg: &GsmConfig) -> Result<(usize, usize)> {
    cfg.validate()?;
    let m_bar = binomial(cfg.n_g, cfg.n_rf);
    let m_bar = usize::try_from(m_bar)
        .map_err(|_| Error::config("candidate count overflows usize"))?;
    let m = 1usize << (usize::BITS - 1 - m_bar.leading_zeros());
    Ok((m_bar, m))
}

/// All `binom(n_g, n_rf)` connectors, lexicographic in their group tuples.
pub fn enumerate_candidates(cfg: &GsmConfig) -> Result<Vec<Connector>> {
    cfg.validate()?;
    let mut out = Vec::new();
    let mut tuple: Vec<usize> = (0..cfg.n_rf).collect();
    loop {
        out.push(Connector::new(cfg.n_t, cfg.n_k, tuple.clone())?);
        // advance to the next combination
        let k = cfg.n_rf;
        let mut i = k;
        while i > 0 && tuple[i - 1] == cfg.n_g - k + (i - 1) {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        tuple[i - 1] += 1;
        for j in i..k {
            tuple[j] = tuple[j - 1] + 1;
        }
    }
    Ok(out)
}

/// Hamming distance between activation patterns (XOR of row sums).
pub fn hamming_distance(p: &Connector, q: &Connector) -> Result<usize> {
    if p.n_t != q.n_t || p.n_rf() != q.n_rf() {
        return Err(Error::dim(format!(
            "connector shapes differ: {}x{} vs {}x{}",
            p.n_t,
            p.n_rf(),
            q.n_t,
            q.n_rf()
        )));
    }
    Ok(pattern_distance(&p.activation(), &q.activation()))
}

pub(crate) fn pattern_distance(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Greedy max-average-distance ordering over `patterns`, `count` picks.
///
/// Ties go to the lowest index. With `allow_repeat`, picks cycle the greedy
/// order once every pattern has been chosen.
pub(crate) fn greedy_order(
    patterns: &[Vec<u8>],
    count: usize,
    seed_index: usize,
    allow_repeat: bool,
) -> Vec<usize> {
    let n = patterns.len();
    let mut chosen = Vec::with_capacity(count.min(n));
    if n == 0 || count == 0 {
        return chosen;
    }
    let mut taken = vec![false; n];
    // Sum of distances to chosen patterns; averages share a denominator.
    let mut total = vec![0usize; n];
    let mut next = seed_index;
    while chosen.len() < count.min(n) {
        chosen.push(next);
        taken[next] = true;
        for (i, t) in total.iter_mut().enumerate() {
            *t += pattern_distance(&patterns[i], &patterns[next]);
        }
        let mut best: Option<usize> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            if best.is_none_or(|b| total[i] > total[b]) {
                best = Some(i);
            }
        }
        match best {
            Some(b) => next = b,
            None => break,
        }
    }
    if allow_repeat {
        let base = chosen.clone();
        while chosen.len() < count {
            chosen.push(base[chosen.len() % base.len()]);
        }
    }
    chosen
}

/// Greedy selection of `m` legal connectors starting from `candidates[seed_index]`.
pub fn select_legal(candidates: &[Connector], m: usize, seed_index: usize) -> Result<ConnectorSet> {
    if m > candidates.len() {
        return Err(Error::config(format!(
            "cannot select {} connectors from {} candidates",
            m,
            candidates.len()
        )));
    }
    if m == 0 {
        return Err(Error::config("at least one legal connector is required"));
    }
    if seed_index >= candidates.len() {
        return Err(Error::config(format!(
            "seed index {} out of range for {} candidates",
            seed_index,
            candidates.len()
        )));
    }
    if let Some(w) = candidates.windows(2).find(|w| w[0].n_t != w[1].n_t || w[0].n_rf() != w[1].n_rf()) {
        return Err(Error::dim(format!(
            "mixed connector shapes: {:?} vs {:?}",
            w[0].groups, w[1].groups
        )));
    }
    let patterns: Vec<Vec<u8>> = candidates.iter().map(Connector::activation).collect();
    let order = greedy_order(&patterns, m, seed_index, false);
    Ok(ConnectorSet {
        legal: order.iter().map(|&i| candidates[i].clone()).collect(),
        m_bar: candidates.len(),
        m,
    })
}

/// Average pairwise Hamming distance of a connector subset (0 for fewer than two).
pub fn average_pairwise_distance(set: &[Connector]) -> f64 {
    let n = set.len();
    if n < 2 {
        return 0.0;
    }
    let acts: Vec<Vec<u8>> = set.iter().map(Connector::activation).collect();
    let mut sum = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            sum += pattern_distance(&acts[i], &acts[j]);
        }
    }
    sum as f64 / (n * (n - 1) / 2) as f64
}
