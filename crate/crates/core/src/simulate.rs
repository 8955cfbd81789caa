//! Monte-Carlo link simulation: QAM transmit streams through the channel,
//! the quantized receiver and the overlap-save equalizer.
//!
//! Each channel realization is an independent work unit with its own RNG
//! streams derived from the master seed, so a report depends only on the
//! configuration, never on how many worker threads ran it. Per-realization
//! tallies are reduced in realization order.
//!
//! Error statistics are reported on unit-power symbols: estimates are divided
//! by the known transmit amplitude `sigma_x` before computing the squared
//! error and the hard decisions. No blind rescaling of the estimates happens,
//! so Wiener-filter shrinkage shows up in both MSE and BER.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blockopt::{optimal_block_length, ComplexityParams, SearchMode};
use crate::channel::{complex_gaussian, convolve, freq_channel, generate_channel, ChannelTaps, PowerDelayProfile};
use crate::fde::{build_filter_bank, BlockEqualizer, ErrorProfile, FdeConfig};
use crate::numfmt::sig12;
use crate::quant::{self, bussgang_model_with_power, per_antenna_agc, QuantizerKind, QuantizerSpec};
use crate::{CMatrix, Error, Result, C64};

/// Equalizer variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Wiener filter that ignores quantization.
    #[serde(rename = "WF")]
    Wf,
    /// Wiener filter on the Bussgang-linearized model.
    #[serde(rename = "WF_Q")]
    WfQ,
}

impl Method {
    pub fn accounts_quantization(self) -> bool {
        matches!(self, Method::WfQ)
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Wf => "WF",
            Method::WfQ => "WF_Q",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wf" => Ok(Method::Wf),
            "wfq" | "wf_q" | "wf-q" => Ok(Method::WfQ),
            other => Err(Error::Config(format!("unknown method '{other}' (expected wf or wfq)"))),
        }
    }
}

/// Gray-mapped square QAM with unit average symbol energy.
///
/// A label of `B` bits splits into an in-phase half (high bits) and a
/// quadrature half (low bits), each Gray-coded along its axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Qam {
    order: usize,
    side: usize,
    half_bits: u32,
    scale: f64,
}

fn gray(i: usize) -> usize {
    i ^ (i >> 1)
}

fn gray_decode(mut g: usize) -> usize {
    let mut i = g;
    while g > 1 {
        g >>= 1;
        i ^= g;
    }
    i
}

impl Qam {
    pub fn new(order: usize) -> Result<Self> {
        let bits = order.trailing_zeros();
        if order < 4 || !order.is_power_of_two() || !bits.is_multiple_of(2) {
            return Err(Error::Config(format!("{order}-QAM is not a square constellation")));
        }
        let side = 1usize << (bits / 2);
        let scale = (2.0 * ((side * side) as f64 - 1.0) / 3.0).sqrt();
        Ok(Self { order, side, half_bits: bits / 2, scale })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bits_per_symbol(&self) -> u32 {
        2 * self.half_bits
    }

    fn level(&self, idx: usize) -> f64 {
        (2.0 * idx as f64 - (self.side as f64 - 1.0)) / self.scale
    }

    fn slice(&self, v: f64) -> usize {
        let u = (v * self.scale + self.side as f64 - 1.0) / 2.0;
        // ties resolve toward the lower level
        let idx = (u - 0.5).ceil();
        idx.clamp(0.0, (self.side - 1) as f64) as usize
    }

    /// Constellation point of a `B`-bit label.
    pub fn point(&self, label: usize) -> C64 {
        let mask = self.side - 1;
        let i = gray_decode(label >> self.half_bits);
        let q = gray_decode(label & mask);
        C64::new(self.level(i), self.level(q))
    }

    /// Label of the constellation point nearest to `z`.
    pub fn detect(&self, z: C64) -> usize {
        (gray(self.slice(z.re)) << self.half_bits) | gray(self.slice(z.im))
    }

    pub fn points(&self) -> Vec<C64> {
        (0..self.order).map(|l| self.point(l)).collect()
    }

    fn label_of(&self, bits: &[bool]) -> usize {
        bits.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
    }

    fn bits_of(&self, label: usize, out: &mut Vec<bool>) {
        let b = self.bits_per_symbol();
        out.extend((0..b).rev().map(|i| (label >> i) & 1 == 1));
    }
}

/// Maps a bit stream (MSB first per symbol) onto unit-energy Gray QAM symbols.
pub fn map_symbols(bits: &[bool], order: usize) -> Result<Vec<C64>> {
    let qam = Qam::new(order)?;
    let b = qam.bits_per_symbol() as usize;
    if !bits.len().is_multiple_of(b) {
        return Err(Error::Config(format!("{} bits do not fill {b}-bit symbols", bits.len())));
    }
    Ok(bits.chunks(b).map(|c| qam.point(qam.label_of(c))).collect())
}

/// Minimum-distance decisions and the corresponding Gray-coded bits.
pub fn demap_symbols(estimates: &[C64], order: usize) -> Result<(Vec<C64>, Vec<bool>)> {
    let qam = Qam::new(order)?;
    let mut bits = Vec::with_capacity(estimates.len() * qam.bits_per_symbol() as usize);
    let hard = estimates
        .iter()
        .map(|&z| {
            let label = qam.detect(z);
            qam.bits_of(label, &mut bits);
            qam.point(label)
        })
        .collect();
    Ok((hard, bits))
}

/// `trace(H H^H)` of the block-Toeplitz stacking for `n_b` samples. Every
/// block row holds all taps, so this is exactly `n_b sum_l ||H_l||_F^2`.
pub fn block_toeplitz_trace(taps: &ChannelTaps, n_b: usize) -> f64 {
    n_b as f64 * taps.energy()
}

/// Per-user transmit power `sigma_x^2` for a target Eb/N0:
/// `Eb/N0 = P_t trace / (K M sigma_eta^2 B)` with `P_t = K sigma_x^2`.
pub fn ebn0_to_sigma_x2(
    ebn0_db: f64,
    mean_trace: f64,
    users: usize,
    antennas: usize,
    sigma_eta2: f64,
    bits_per_symbol: u32,
) -> Result<f64> {
    if !(mean_trace.is_finite() && mean_trace > 0.0) {
        return Err(Error::Config(format!("channel trace must be positive, got {mean_trace}")));
    }
    let ebn0 = 10f64.powf(ebn0_db / 10.0);
    let p_t = ebn0 * (users * antennas) as f64 * sigma_eta2 * bits_per_symbol as f64 / mean_trace;
    Ok(p_t / users as f64)
}

/// Power-delay profile selection for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PdpSpec {
    /// 3GPP EVA, optionally with an explicit sample period.
    Eva { sample_period_ns: Option<f64> },
    /// Equal power on every tap.
    Uniform,
    /// Explicit `(tap index, linear power)` list.
    Custom { entries: Vec<(usize, f64)> },
}

impl PdpSpec {
    pub fn build(&self, total_taps: usize) -> Result<PowerDelayProfile> {
        match self {
            PdpSpec::Eva { sample_period_ns: Some(ts) } => PowerDelayProfile::eva_with_sample_period(total_taps, *ts),
            PdpSpec::Eva { sample_period_ns: None } if total_taps == 1 => Ok(PowerDelayProfile::flat()),
            PdpSpec::Eva { sample_period_ns: None } => PowerDelayProfile::eva(total_taps),
            PdpSpec::Uniform => PowerDelayProfile::uniform(total_taps),
            PdpSpec::Custom { entries } => PowerDelayProfile::new(entries.clone(), total_taps),
        }
    }
}

/// Full description of a Monte-Carlo run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub users: usize,
    pub antennas: usize,
    /// Channel taps `L + 1`.
    pub total_taps: usize,
    pub pdp: PdpSpec,
    /// Square QAM order.
    pub modulation: usize,
    /// Symbols per user and coherence block `T_c`.
    pub coherence: usize,
    /// Channel realizations `N_sim`.
    pub realizations: usize,
    pub ebn0_grid: Vec<f64>,
    /// Block lengths to compare; empty selects the power-of-two complexity
    /// optimum and `T_c`.
    pub block_lens: Vec<usize>,
    /// Overlap `L'`; `None` uses the channel memory `L`.
    pub overlap: Option<usize>,
    /// ADC resolution; `None` runs the unquantized receiver.
    pub quant_bits: Option<u32>,
    pub quantizer: QuantizerKind,
    pub methods: Vec<Method>,
    pub sigma_eta2: f64,
    /// Leave the undiscarded stream-edge estimates out of MSE and BER.
    pub exclude_edges: bool,
    /// Block length whose Toeplitz trace enters the Eb/N0 definition.
    pub ebn0_ref_block_len: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the global pool. Results do not depend on it.
    #[serde(skip)]
    pub workers: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            users: 2,
            antennas: 32,
            total_taps: 16,
            pdp: PdpSpec::Eva { sample_period_ns: None },
            modulation: 16,
            coherence: 2048,
            realizations: 20,
            ebn0_grid: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            block_lens: Vec::new(),
            overlap: None,
            quant_bits: Some(1),
            quantizer: QuantizerKind::Uniform,
            methods: vec![Method::Wf, Method::WfQ],
            sigma_eta2: 1.0,
            exclude_edges: true,
            ebn0_ref_block_len: 1,
            seed: 1,
            workers: None,
        }
    }
}

impl SimConfig {
    /// Full-size setup: `M = 64`, `L + 1 = 128`, `T_c = 5e4`, `N_sim = 200`.
    pub fn paper_scale() -> Self {
        Self { antennas: 64, total_taps: 128, coherence: 50_000, realizations: 200, ..Self::default() }
    }

    pub fn memory(&self) -> usize {
        self.total_taps.saturating_sub(1)
    }

    pub fn overlap(&self) -> usize {
        self.overlap.unwrap_or(self.memory())
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        if self.users == 0 || self.antennas == 0 || self.total_taps == 0 {
            return cfg_err(format!(
                "need K, M, L+1 >= 1 (got {}, {}, {})",
                self.users, self.antennas, self.total_taps
            ));
        }
        Qam::new(self.modulation)?;
        if self.realizations == 0 {
            return cfg_err("need at least one channel realization".into());
        }
        if self.ebn0_grid.is_empty() || self.ebn0_grid.iter().any(|e| !e.is_finite()) {
            return cfg_err("Eb/N0 grid must be a non-empty list of finite values".into());
        }
        if self.methods.is_empty() {
            return cfg_err("no equalizer method selected".into());
        }
        if !(self.sigma_eta2.is_finite() && self.sigma_eta2 > 0.0) {
            return cfg_err(format!("noise variance must be positive, got {}", self.sigma_eta2));
        }
        if self.ebn0_ref_block_len == 0 {
            return cfg_err("Eb/N0 reference block length must be positive".into());
        }
        if self.coherence < self.total_taps {
            return cfg_err(format!("T_c = {} is shorter than the channel", self.coherence));
        }
        if let Some(b) = self.quant_bits {
            if b == 0 || b > quant::MAX_BITS {
                return Err(Error::UnsupportedResolution(b));
            }
        }
        for &n_b in &self.block_lens {
            self.check_block_len(n_b)?;
        }
        Ok(())
    }

    fn check_block_len(&self, n_b: usize) -> Result<()> {
        let min = self.overlap().max(self.memory()) + 1;
        if n_b < min || n_b > self.coherence {
            return Err(Error::Config(format!(
                "block length {n_b} infeasible: need {min} <= N_b <= T_c = {}",
                self.coherence
            )));
        }
        Ok(())
    }

    /// Block lengths actually simulated.
    pub fn resolved_block_lens(&self) -> Result<Vec<usize>> {
        if !self.block_lens.is_empty() {
            return Ok(self.block_lens.clone());
        }
        let p = ComplexityParams::new(self.users, self.antennas, self.overlap(), self.coherence)?;
        let opt = optimal_block_length(&p, SearchMode::Exhaustive, false)?;
        let mut lens = Vec::new();
        if let Some(n) = opt.n_opt_pow2 {
            if self.check_block_len(n).is_ok() {
                lens.push(n);
            }
        }
        if !lens.contains(&self.coherence) {
            lens.push(self.coherence);
        }
        Ok(lens)
    }
}

/// One point of the (Eb/N0, N_b, method) grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimRow {
    pub ebn0_db: f64,
    pub n_b: usize,
    pub method: Method,
    pub mse: f64,
    /// Standard error of `mse` across channel realizations.
    pub mse_stderr: f64,
    pub ber: f64,
    pub symbols: u64,
    pub edge_excluded: u64,
    pub bit_errors: u64,
    pub bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub rows: Vec<SimRow>,
    pub config: SimConfig,
    pub block_lens: Vec<usize>,
    pub rho_q: f64,
    pub mean_trace: f64,
    /// Per-user transmit power for every grid point.
    pub sigma_x2: Vec<f64>,
}

impl SimReport {
    pub fn row(&self, ebn0_db: f64, n_b: usize, method: Method) -> Option<&SimRow> {
        self.rows
            .iter()
            .find(|r| r.ebn0_db == ebn0_db && r.n_b == n_b && r.method == method)
    }

    /// Writes `ebn0_db,n_b,method,mse,ber,symbols,edge_excluded,seed`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["ebn0_db", "n_b", "method", "mse", "ber", "symbols", "edge_excluded", "seed"])?;
        for r in &self.rows {
            wr.write_record([
                sig12(r.ebn0_db),
                r.n_b.to_string(),
                r.method.label().to_string(),
                sig12(r.mse),
                sig12(r.ber),
                r.symbols.to_string(),
                r.edge_excluded.to_string(),
                self.config.seed.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

const STREAM_CHANNEL: u64 = 0;
const STREAM_DATA: u64 = 1;
const STREAM_NOISE: u64 = 2;

fn stream_rng(seed: u64, realization: usize, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(realization as u64 * 4 + purpose);
    rng
}

/// Uniform random labels and their unit-energy symbols, `K x T`.
pub fn transmit_symbols<R: Rng + ?Sized>(rng: &mut R, qam: &Qam, users: usize, len: usize) -> (Vec<usize>, CMatrix) {
    let labels: Vec<usize> = (0..users * len).map(|_| rng.random_range(0..qam.order())).collect();
    let x = CMatrix::from_fn(users, len, |k, t| qam.point(labels[k * len + t]));
    (labels, x)
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    sq_err: f64,
    symbols: u64,
    edge: u64,
    bit_errors: u64,
    bits: u64,
}

/// Everything a realization needs besides its index.
struct Shared<'a> {
    cfg: &'a SimConfig,
    qam: Qam,
    base_quantizer: Option<QuantizerSpec>,
    rho_q: f64,
    block_lens: &'a [usize],
    sigma_x2: &'a [f64],
}

/// Received stream of one realization at one transmit power.
struct Received {
    labels: Vec<usize>,
    x: CMatrix,
    r: CMatrix,
}

impl Shared<'_> {
    fn draw(&self, realization: usize) -> Result<(Vec<usize>, CMatrix, CMatrix)> {
        let cfg = self.cfg;
        let mut data_rng = stream_rng(cfg.seed, realization, STREAM_DATA);
        let mut noise_rng = stream_rng(cfg.seed, realization, STREAM_NOISE);
        let (labels, x) = transmit_symbols(&mut data_rng, &self.qam, cfg.users, cfg.coherence);
        let noise = CMatrix::from_fn(cfg.antennas, cfg.coherence, |_, _| complex_gaussian(&mut noise_rng, 1.0));
        Ok((labels, x, noise))
    }

    fn receive(&self, taps: &ChannelTaps, y0: &CMatrix, noise: &CMatrix, sigma_x2: f64) -> Result<CMatrix> {
        let (sx, se) = (sigma_x2.sqrt(), self.cfg.sigma_eta2.sqrt());
        let y = y0 * C64::new(sx, 0.0) + noise * C64::new(se, 0.0);
        match &self.base_quantizer {
            Some(base) => {
                let specs: Vec<QuantizerSpec> = per_antenna_agc(taps, sigma_x2, self.cfg.sigma_eta2)
                    .into_iter()
                    .map(|s| base.scaled(s))
                    .collect();
                quant::quantize(&y, &specs)
            }
            None => Ok(y),
        }
    }

    fn realize(&self, realization: usize, taps: &ChannelTaps) -> Result<(Received, CMatrix, CMatrix)> {
        let (labels, x, noise) = self.draw(realization)?;
        let y0 = convolve(taps, &x)?;
        Ok((Received { labels, x, r: CMatrix::zeros(0, 0) }, y0, noise))
    }

    fn run(&self, realization: usize, taps: &ChannelTaps) -> Result<Vec<Tally>> {
        let cfg = self.cfg;
        let (mut rx, y0, noise) = self.realize(realization, taps)?;
        let fcs = self
            .block_lens
            .iter()
            .map(|&n_b| freq_channel(taps, n_b, self.rho_q))
            .collect::<Result<Vec<_>>>()?;
        let mut tallies = Vec::with_capacity(self.sigma_x2.len() * self.block_lens.len() * cfg.methods.len());
        for &sx2 in self.sigma_x2 {
            rx.r = self.receive(taps, &y0, &noise, sx2)?;
            let bm = bussgang_model_with_power(taps, self.rho_q, cfg.sigma_eta2, sx2)?;
            let inv_sx = C64::new(1.0 / sx2.sqrt(), 0.0);
            for (fc, &n_b) in fcs.iter().zip(self.block_lens) {
                for &method in &cfg.methods {
                    let fde_cfg = FdeConfig::new(n_b, cfg.overlap(), sx2, method.accounts_quantization())
                        .map_err(|e| Error::Config(format!("block length {n_b}: {e}")))?;
                    let bank = build_filter_bank(fc, &bm, &fde_cfg)?;
                    let out = crate::fde::overlap_save_stream(&rx.r, &bank, &fde_cfg)?;
                    let mut t = Tally::default();
                    for time in 0..cfg.coherence {
                        if cfg.exclude_edges && out.edge[time] {
                            t.edge += cfg.users as u64;
                            continue;
                        }
                        for k in 0..cfg.users {
                            let est = out.estimates[(k, time)] * inv_sx;
                            t.sq_err += (est - rx.x[(k, time)]).norm_sqr();
                            let tx = rx.labels[k * cfg.coherence + time];
                            t.bit_errors += (tx ^ self.qam.detect(est)).count_ones() as u64;
                        }
                        t.symbols += cfg.users as u64;
                    }
                    t.bits = t.symbols * self.qam.bits_per_symbol() as u64;
                    tallies.push(t);
                }
            }
        }
        Ok(tallies)
    }
}

fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

struct Prepared {
    pdp_channels: Vec<ChannelTaps>,
    base_quantizer: Option<QuantizerSpec>,
    rho_q: f64,
    mean_trace: f64,
}

fn prepare(cfg: &SimConfig) -> Result<Prepared> {
    cfg.validate()?;
    let pdp = cfg.pdp.build(cfg.total_taps)?;
    let base_quantizer = cfg
        .quant_bits
        .map(|b| quant::design(cfg.quantizer, b, 1.0))
        .transpose()?;
    let rho_q = base_quantizer.as_ref().map_or(0.0, |q| q.rho_q);
    let pdp_channels = (0..cfg.realizations)
        .map(|r| generate_channel(&pdp, cfg.antennas, cfg.users, &mut stream_rng(cfg.seed, r, STREAM_CHANNEL)))
        .collect::<Result<Vec<_>>>()?;
    let mean_trace = pdp_channels
        .iter()
        .map(|t| block_toeplitz_trace(t, cfg.ebn0_ref_block_len))
        .sum::<f64>()
        / cfg.realizations as f64;
    Ok(Prepared { pdp_channels, base_quantizer, rho_q, mean_trace })
}

fn sigma_x2_grid(cfg: &SimConfig, qam: &Qam, mean_trace: f64) -> Result<Vec<f64>> {
    cfg.ebn0_grid
        .iter()
        .map(|&e| ebn0_to_sigma_x2(e, mean_trace, cfg.users, cfg.antennas, cfg.sigma_eta2, qam.bits_per_symbol()))
        .collect()
}

/// Runs the full (Eb/N0 x N_b x method) grid over all channel realizations.
pub fn run_experiment(cfg: &SimConfig) -> Result<SimReport> {
    let prep = prepare(cfg)?;
    let qam = Qam::new(cfg.modulation)?;
    let block_lens = cfg.resolved_block_lens()?;
    for &n_b in &block_lens {
        cfg.check_block_len(n_b)?;
    }
    let sigma_x2 = sigma_x2_grid(cfg, &qam, prep.mean_trace)?;
    let shared = Shared {
        cfg,
        qam,
        base_quantizer: prep.base_quantizer.clone(),
        rho_q: prep.rho_q,
        block_lens: &block_lens,
        sigma_x2: &sigma_x2,
    };
    let per_realization: Vec<Vec<Tally>> = with_workers(cfg.workers, || {
        prep.pdp_channels
            .par_iter()
            .enumerate()
            .map(|(r, taps)| shared.run(r, taps))
            .collect::<Result<Vec<_>>>()
    })??;

    let mut rows = Vec::new();
    let mut idx = 0;
    for &ebn0_db in &cfg.ebn0_grid {
        for &n_b in &block_lens {
            for &method in &cfg.methods {
                let mut total = Tally::default();
                let mut per_mse = Vec::with_capacity(cfg.realizations);
                for tallies in &per_realization {
                    let t = tallies[idx];
                    total.sq_err += t.sq_err;
                    total.symbols += t.symbols;
                    total.edge += t.edge;
                    total.bit_errors += t.bit_errors;
                    total.bits += t.bits;
                    per_mse.push(t.sq_err / t.symbols.max(1) as f64);
                }
                rows.push(SimRow {
                    ebn0_db,
                    n_b,
                    method,
                    mse: total.sq_err / total.symbols.max(1) as f64,
                    mse_stderr: standard_error(&per_mse),
                    ber: total.bit_errors as f64 / total.bits.max(1) as f64,
                    symbols: total.symbols,
                    edge_excluded: total.edge,
                    bit_errors: total.bit_errors,
                    bits: total.bits,
                });
                idx += 1;
            }
        }
    }
    Ok(SimReport { rows, config: cfg.clone(), block_lens, rho_q: prep.rho_q, mean_trace: prep.mean_trace, sigma_x2 })
}

/// Standard error of the mean of `v`.
pub fn standard_error(v: &[f64]) -> f64 {
    let n = v.len();
    if n < 2 {
        return 0.0;
    }
    let mean = v.iter().sum::<f64>() / n as f64;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (var / n as f64).sqrt()
}

/// Which grid point a per-position profile measures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileRequest {
    pub n_b: usize,
    pub ebn0_db: f64,
    pub method: Method,
}

/// Average squared error of unit-power symbols per within-block position
/// (0 = newest sample), with no discard.
///
/// Each realization's stream is cut into back-to-back blocks of `n_b`; the
/// first block is skipped when others exist, since no earlier symbols
/// interfere with it.
pub fn per_position_error_profile(cfg: &SimConfig, req: ProfileRequest) -> Result<ErrorProfile> {
    let prep = prepare(cfg)?;
    cfg.check_block_len(req.n_b)?;
    let qam = Qam::new(cfg.modulation)?;
    let sx2 = ebn0_to_sigma_x2(
        req.ebn0_db,
        prep.mean_trace,
        cfg.users,
        cfg.antennas,
        cfg.sigma_eta2,
        qam.bits_per_symbol(),
    )?;
    let lens = [req.n_b];
    let grid = [sx2];
    let shared = Shared {
        cfg,
        qam,
        base_quantizer: prep.base_quantizer.clone(),
        rho_q: prep.rho_q,
        block_lens: &lens,
        sigma_x2: &grid,
    };
    let n_b = req.n_b;
    let blocks: Vec<usize> = {
        let all: Vec<usize> = (0..cfg.coherence / n_b).map(|i| i * n_b).collect();
        if all.len() > 1 { all[1..].to_vec() } else { all }
    };
    let per_realization: Vec<Vec<f64>> = with_workers(cfg.workers, || {
        prep.pdp_channels
            .par_iter()
            .enumerate()
            .map(|(r, taps)| -> Result<Vec<f64>> {
                let (mut rx, y0, noise) = shared.realize(r, taps)?;
                rx.r = shared.receive(taps, &y0, &noise, sx2)?;
                let fc = freq_channel(taps, n_b, shared.rho_q)?;
                let bm = bussgang_model_with_power(taps, shared.rho_q, cfg.sigma_eta2, sx2)?;
                let fde_cfg = FdeConfig::new(n_b, 0, sx2, req.method.accounts_quantization())?;
                let bank = build_filter_bank(&fc, &bm, &fde_cfg)?;
                let mut eq = BlockEqualizer::new(&bank);
                let inv_sx = C64::new(1.0 / sx2.sqrt(), 0.0);
                let mut acc = vec![0.0; n_b];
                for &s in &blocks {
                    let est = eq.equalize_at(&rx.r, s)?;
                    for (c, a) in acc.iter_mut().enumerate() {
                        let time = s + n_b - 1 - c;
                        for k in 0..cfg.users {
                            *a += (est[(k, c)] * inv_sx - rx.x[(k, time)]).norm_sqr();
                        }
                    }
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let denom = (per_realization.len() * blocks.len() * cfg.users) as f64;
    let mut power = vec![0.0; n_b];
    for acc in &per_realization {
        for (p, a) in power.iter_mut().zip(acc) {
            *p += a;
        }
    }
    power.iter_mut().for_each(|p| *p /= denom);
    Ok(ErrorProfile { power })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::build_block_toeplitz;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn qpsk_points() {
        let pts = Qam::new(4).unwrap().points();
        let a = 1.0 / 2f64.sqrt();
        for p in &pts {
            assert!((p.re.abs() - a).abs() < 1e-15 && (p.im.abs() - a).abs() < 1e-15);
        }
        let mut sorted: Vec<(i8, i8)> = pts.iter().map(|p| (p.re.signum() as i8, p.im.signum() as i8)).collect();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 4);
    }

    #[test]
    fn unit_average_energy() {
        for order in [4, 16, 64, 256] {
            let pts = Qam::new(order).unwrap().points();
            let e = pts.iter().map(|p| p.norm_sqr()).sum::<f64>() / order as f64;
            assert!((e - 1.0).abs() < 1e-12, "{order}-QAM energy {e}");
        }
    }

    #[test]
    fn rejects_non_square_orders() {
        for order in [2, 8, 32, 12, 0] {
            assert!(matches!(Qam::new(order), Err(Error::Config(_))));
        }
        assert!(map_symbols(&[true, false, true], 16).is_err());
    }

    #[test]
    fn gray_neighbours_differ_in_one_bit() {
        let qam = Qam::new(16).unwrap();
        let pts = qam.points();
        let d_min = 2.0 / 10f64.sqrt();
        for a in 0..16 {
            for b in 0..16 {
                if ((pts[a] - pts[b]).norm() - d_min).abs() < 1e-12 {
                    assert_eq!((a ^ b).count_ones(), 1);
                }
            }
        }
    }

    #[test]
    fn map_demap_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for order in [4usize, 16, 64] {
            let b = order.trailing_zeros() as usize;
            let bits: Vec<bool> = (0..b * 500).map(|_| rng.random()).collect();
            let syms = map_symbols(&bits, order).unwrap();
            let (hard, back) = demap_symbols(&syms, order).unwrap();
            assert_eq!(back, bits);
            assert_eq!(hard, syms);
        }
    }

    #[test]
    fn demap_ties_go_low() {
        let (hard, _) = demap_symbols(&[C64::new(0.0, 0.0)], 4).unwrap();
        let a = 1.0 / 2f64.sqrt();
        assert_eq!(hard[0], C64::new(-a, -a));
        let (hard, _) = demap_symbols(&[C64::new(0.0, 0.5)], 4).unwrap();
        assert_eq!(hard[0], C64::new(-a, a));
    }

    #[test]
    fn qpsk_ber_matches_q_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let s = 0.2288;
        let n_sym = 500_000;
        let bits: Vec<bool> = (0..2 * n_sym).map(|_| rng.random()).collect();
        let syms = map_symbols(&bits, 4).unwrap();
        let noisy: Vec<C64> = syms
            .iter()
            .map(|z| {
                let (a, b): (f64, f64) = (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng));
                z + C64::new(s * a, s * b)
            })
            .collect();
        let (_, back) = demap_symbols(&noisy, 4).unwrap();
        let errs = back.iter().zip(&bits).filter(|(a, b)| a != b).count();
        let ber = errs as f64 / bits.len() as f64;
        let expect = 0.5 * statrs::function::erf::erfc((1.0 / 2f64.sqrt()) / s / 2f64.sqrt());
        assert!((ber - expect).abs() < 0.1 * expect, "ber {ber} vs {expect}");
    }

    #[test]
    fn ebn0_binding() {
        let v = ebn0_to_sigma_x2(0.0, 1.0, 1, 1, 1.0, 1).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        let a = ebn0_to_sigma_x2(7.0, 3.0, 2, 8, 1.0, 4).unwrap();
        let b = ebn0_to_sigma_x2(7.0 + 10.0 * 2f64.log10(), 3.0, 2, 8, 1.0, 4).unwrap();
        assert!((b / a - 2.0).abs() < 1e-12);
        assert!(ebn0_to_sigma_x2(0.0, 0.0, 1, 1, 1.0, 1).is_err());
    }

    #[test]
    fn toeplitz_trace_identity_and_expectation() {
        let pdp = PowerDelayProfile::uniform(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let taps = generate_channel(&pdp, 3, 2, &mut rng).unwrap();
        let h = build_block_toeplitz(&taps, 5).unwrap().matrix;
        let dense = (&h * h.adjoint()).trace().re;
        assert!((dense - block_toeplitz_trace(&taps, 5)).abs() < 1e-10);

        // E[trace] = M N_b K for unit-energy links
        let (m, k, n_b) = (4, 2, 8);
        let trials = 4000;
        let mean = (0..trials)
            .map(|_| block_toeplitz_trace(&generate_channel(&pdp, m, k, &mut rng).unwrap(), n_b))
            .sum::<f64>()
            / trials as f64;
        let expect = (m * n_b * k) as f64;
        assert!((mean - expect).abs() < 0.02 * expect, "trace {mean}");
        let sx2 = ebn0_to_sigma_x2(10.0, mean, k, m, 1.0, 4).unwrap();
        let closed = 10.0 * 4.0 / (n_b * k) as f64;
        assert!((sx2 - closed).abs() < 0.02 * closed);
    }

    #[test]
    fn transmit_power_matches_unit_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let qam = Qam::new(16).unwrap();
        let (_, x) = transmit_symbols(&mut rng, &qam, 2, 50_000);
        for k in 0..2 {
            let p = x.row(k).iter().map(|v| v.norm_sqr()).sum::<f64>() / 50_000.0;
            assert!((p - 1.0).abs() < 0.01, "user {k} power {p}");
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = SimConfig { block_lens: vec![8], ..SimConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.block_lens = vec![4096];
        assert!(cfg.validate().is_err());
        cfg.block_lens = vec![64];
        assert!(cfg.validate().is_ok());
        cfg.modulation = 8;
        assert!(cfg.validate().is_err());
        let cfg = SimConfig { quant_bits: Some(17), ..SimConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::UnsupportedResolution(17))));
    }

    #[test]
    fn auto_block_lens() {
        let cfg = SimConfig::default();
        let lens = cfg.resolved_block_lens().unwrap();
        assert_eq!(lens.len(), 2);
        assert!(lens[0].is_power_of_two());
        assert_eq!(lens[1], 2048);
    }

    #[test]
    fn method_parsing() {
        assert_eq!("wf".parse::<Method>().unwrap(), Method::Wf);
        assert_eq!("WF_Q".parse::<Method>().unwrap(), Method::WfQ);
        assert_eq!("wfq".parse::<Method>().unwrap(), Method::WfQ);
        assert!("mmse".parse::<Method>().is_err());
    }

    #[test]
    fn standard_error_of_constant_is_zero() {
        assert_eq!(standard_error(&[2.0, 2.0, 2.0]), 0.0);
        assert!((standard_error(&[1.0, 3.0]) - 1.0).abs() < 1e-15);
    }
}
