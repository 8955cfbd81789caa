//! Frequency-selective block-fading MIMO channels.
//!
//! A channel is a list of `L + 1` tap matrices `H_l` of shape `M x K`
//! (antennas x users). Besides random generation and the streaming
//! convolution used by the simulator, this module materializes the dense
//! block-Toeplitz and block-circulant stackings of a block of `N_b` samples.
//! Those dense forms exist only to validate the FFT path on small instances.
//!
//! Block layout follows the receiver's space-time matrices: column 0 of a
//! block is the newest sample `n`, column `N_b - 1` the oldest, and `vec{}`
//! stacks columns so antennas vary fastest.

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::{CMatrix, Error, Result, C64};

/// Tap delays of the 3GPP Extended Vehicular A profile, in nanoseconds.
pub const EVA_DELAYS_NS: [f64; 9] = [0.0, 30.0, 150.0, 310.0, 370.0, 710.0, 1090.0, 1730.0, 2510.0];

/// Relative tap powers of the 3GPP Extended Vehicular A profile, in dB.
pub const EVA_POWERS_DB: [f64; 9] = [0.0, -1.5, -1.4, -3.6, -0.6, -9.1, -7.0, -12.0, -16.9];

/// Sparse power-delay profile over `total_taps` integer tap positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerDelayProfile {
    entries: Vec<(usize, f64)>,
    total_taps: usize,
}

impl PowerDelayProfile {
    pub fn new(entries: Vec<(usize, f64)>, total_taps: usize) -> Result<Self> {
        if total_taps == 0 {
            return Err(Error::Config("power-delay profile needs at least one tap".into()));
        }
        if entries.is_empty() {
            return Err(Error::Config("power-delay profile has no entries".into()));
        }
        for w in entries.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Config(format!(
                    "tap indices must be strictly increasing ({} follows {})",
                    w[1].0, w[0].0
                )));
            }
        }
        for &(idx, p) in &entries {
            if idx >= total_taps {
                return Err(Error::Config(format!(
                    "tap index {idx} outside channel of {total_taps} taps"
                )));
            }
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::Config(format!("tap {idx} has invalid power {p}")));
            }
        }
        Ok(Self { entries, total_taps })
    }

    /// Single unit tap: a frequency-flat channel.
    pub fn flat() -> Self {
        Self { entries: vec![(0, 1.0)], total_taps: 1 }
    }

    /// Equal power on every one of `total_taps` taps.
    pub fn uniform(total_taps: usize) -> Result<Self> {
        Self::new((0..total_taps).map(|l| (l, 1.0)).collect(), total_taps)
    }

    /// EVA profile with the sample period chosen so the last tap lands on
    /// index `total_taps - 1`.
    pub fn eva(total_taps: usize) -> Result<Self> {
        if total_taps < 2 {
            return Err(Error::Config("EVA profile needs at least two taps".into()));
        }
        let last = EVA_DELAYS_NS[EVA_DELAYS_NS.len() - 1];
        Self::eva_with_sample_period(total_taps, last / (total_taps - 1) as f64)
    }

    /// EVA profile sampled at `sample_period_ns`. Delays are rounded to the
    /// nearest tap; paths falling on the same tap have their powers added.
    pub fn eva_with_sample_period(total_taps: usize, sample_period_ns: f64) -> Result<Self> {
        if !(sample_period_ns.is_finite() && sample_period_ns > 0.0) {
            return Err(Error::Config(format!("invalid sample period {sample_period_ns} ns")));
        }
        let mut entries: Vec<(usize, f64)> = Vec::with_capacity(EVA_DELAYS_NS.len());
        for (&d, &p_db) in EVA_DELAYS_NS.iter().zip(EVA_POWERS_DB.iter()) {
            let idx = (d / sample_period_ns).round() as usize;
            let p = 10f64.powf(p_db / 10.0);
            match entries.last_mut() {
                Some(last) if last.0 == idx => last.1 += p,
                _ => entries.push((idx, p)),
            }
        }
        Self::new(entries, total_taps)
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn total_taps(&self) -> usize {
        self.total_taps
    }

    /// Channel memory `L`.
    pub fn memory(&self) -> usize {
        self.total_taps - 1
    }
}

/// Channel impulse response: `L + 1` matrices of shape `M x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTaps {
    taps: Vec<CMatrix>,
}

impl ChannelTaps {
    pub fn new(taps: Vec<CMatrix>) -> Result<Self> {
        let first = taps
            .first()
            .ok_or_else(|| Error::Dimension("channel needs at least one tap".into()))?;
        let shape = first.shape();
        if shape.0 == 0 || shape.1 == 0 {
            return Err(Error::Dimension("tap matrices must be at least 1x1".into()));
        }
        if taps.iter().any(|t| t.shape() != shape) {
            return Err(Error::Dimension("tap matrices have differing shapes".into()));
        }
        Ok(Self { taps })
    }

    /// Scalar (`M = K = 1`) channel from its tap values.
    pub fn scalar(taps: &[C64]) -> Result<Self> {
        Self::new(taps.iter().map(|&h| CMatrix::from_element(1, 1, h)).collect())
    }

    pub fn zeros(m: usize, k: usize, total_taps: usize) -> Result<Self> {
        Self::new(vec![CMatrix::zeros(m, k); total_taps])
    }

    pub fn antennas(&self) -> usize {
        self.taps[0].nrows()
    }

    pub fn users(&self) -> usize {
        self.taps[0].ncols()
    }

    /// Channel memory `L`.
    pub fn memory(&self) -> usize {
        self.taps.len() - 1
    }

    pub fn taps(&self) -> &[CMatrix] {
        &self.taps
    }

    pub fn tap(&self, l: usize) -> &CMatrix {
        &self.taps[l]
    }

    /// Diagonal of `sum_l H_l H_l^H`: the channel energy collected by each antenna.
    pub fn antenna_gains(&self) -> Vec<f64> {
        let mut g = vec![0.0; self.antennas()];
        for t in &self.taps {
            for (m, gm) in g.iter_mut().enumerate() {
                *gm += t.row(m).iter().map(|h| h.norm_sqr()).sum::<f64>();
            }
        }
        g
    }

    /// `sum_l ||H_l||_F^2`.
    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t.norm_squared()).sum()
    }

    /// Copy with every tap multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        Self { taps: self.taps.iter().map(|t| t * C64::new(s, 0.0)).collect() }
    }

    /// Copy with entry `(m, k)` of tap `l` shifted by `delta`.
    pub fn perturbed(&self, l: usize, m: usize, k: usize, delta: C64) -> Self {
        let mut out = self.clone();
        out.taps[l][(m, k)] += delta;
        out
    }

    /// Writes the nonzero scalar entries as CSV with header `tap,rx,user,re,im`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["tap", "rx", "user", "re", "im"])?;
        for (l, t) in self.taps.iter().enumerate() {
            for k in 0..t.ncols() {
                for m in 0..t.nrows() {
                    let h = t[(m, k)];
                    if h != C64::new(0.0, 0.0) {
                        wr.write_record([
                            l.to_string(),
                            m.to_string(),
                            k.to_string(),
                            format!("{:e}", h.re),
                            format!("{:e}", h.im),
                        ])?;
                    }
                }
            }
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads taps written by [`ChannelTaps::write_csv`]. The CSV only lists
    /// nonzero entries, so the dimensions `(M, K, L + 1)` must be supplied.
    pub fn read_csv<R: Read>(r: R, m: usize, k: usize, total_taps: usize) -> Result<Self> {
        let mut taps = vec![CMatrix::zeros(m, k); total_taps];
        let mut rd = csv::Reader::from_reader(r);
        let headers = rd.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["tap", "rx", "user", "re", "im"] {
            return Err(Error::Config(format!("unexpected channel CSV header {headers:?}")));
        }
        for rec in rd.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or_default().trim().to_string();
            let parse_idx = |i: usize| {
                field(i)
                    .parse::<usize>()
                    .map_err(|e| Error::Config(format!("bad index '{}': {e}", field(i))))
            };
            let parse_f = |i: usize| {
                field(i)
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad value '{}': {e}", field(i))))
            };
            let (l, mi, ki) = (parse_idx(0)?, parse_idx(1)?, parse_idx(2)?);
            if l >= total_taps || mi >= m || ki >= k {
                return Err(Error::Dimension(format!(
                    "entry ({l}, {mi}, {ki}) outside {total_taps} taps of {m}x{k}"
                )));
            }
            taps[l][(mi, ki)] = C64::new(parse_f(3)?, parse_f(4)?);
        }
        Self::new(taps)
    }
}

/// Draws one circularly-symmetric complex Gaussian sample of variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(s * re, s * im)
}

/// Draws a channel realization for the given power-delay profile.
///
/// Taps listed in `pdp` are i.i.d. CN(0, p_l / sum(p)) per entry, so every
/// scalar link `h_mk` carries unit expected energy; all other taps are zero.
pub fn generate_channel<R: Rng + ?Sized>(
    pdp: &PowerDelayProfile,
    m: usize,
    k: usize,
    rng: &mut R,
) -> Result<ChannelTaps> {
    if m == 0 || k == 0 {
        return Err(Error::Config(format!("need M, K >= 1 (got M={m}, K={k})")));
    }
    let total: f64 = pdp.entries.iter().map(|e| e.1).sum();
    let mut taps = vec![CMatrix::zeros(m, k); pdp.total_taps];
    for &(idx, p) in &pdp.entries {
        let var = p / total;
        // column-major fill keeps the draw order independent of nalgebra internals
        for kk in 0..k {
            for mm in 0..m {
                taps[idx][(mm, kk)] = complex_gaussian(rng, var);
            }
        }
    }
    ChannelTaps::new(taps)
}

/// Which dense stacking a [`BlockStackedChannel`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StackKind {
    /// Linear convolution matrix, `M N_b x K (N_b + L)`.
    Toeplitz,
    /// Circulant approximation, `M N_b x K N_b`.
    Circulant,
    /// Causal part of the circulant matrix (upper band).
    Causal,
    /// Wrap-around part of the circulant matrix (bottom-left corner).
    Interference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockStackedChannel {
    pub matrix: CMatrix,
    pub kind: StackKind,
    pub block_len: usize,
}

/// The three matrices of the circulant approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct CirculantParts {
    pub circulant: BlockStackedChannel,
    pub causal: BlockStackedChannel,
    pub interference: BlockStackedChannel,
}

fn check_block_len(taps: &ChannelTaps, n_b: usize) -> Result<()> {
    if n_b <= taps.memory() {
        return Err(Error::Dimension(format!(
            "block length {n_b} must exceed channel memory {}",
            taps.memory()
        )));
    }
    Ok(())
}

fn place(dst: &mut CMatrix, row_block: usize, col_block: usize, blk: &CMatrix, scale: f64) {
    let (m, k) = blk.shape();
    let mut view = dst.view_mut((row_block * m, col_block * k), (m, k));
    view.copy_from(&(blk * C64::new(scale, 0.0)));
}

/// Dense block-Toeplitz convolution matrix: row block `i` holds `H_0 .. H_L`
/// starting at column block `i`.
pub fn build_block_toeplitz(taps: &ChannelTaps, n_b: usize) -> Result<BlockStackedChannel> {
    check_block_len(taps, n_b)?;
    let (m, k, l) = (taps.antennas(), taps.users(), taps.memory());
    let mut mat = CMatrix::zeros(m * n_b, k * (n_b + l));
    for i in 0..n_b {
        for (lag, h) in taps.taps().iter().enumerate() {
            place(&mut mat, i, i + lag, h, 1.0);
        }
    }
    Ok(BlockStackedChannel { matrix: mat, kind: StackKind::Toeplitz, block_len: n_b })
}

/// Dense block-circulant approximation, split into its causal and
/// wrap-around parts. All three are scaled by the Bussgang gain `1 - rho_q`.
pub fn build_block_circulant(taps: &ChannelTaps, n_b: usize, rho_q: f64) -> Result<CirculantParts> {
    check_block_len(taps, n_b)?;
    check_rho(rho_q)?;
    let (m, k) = (taps.antennas(), taps.users());
    let gain = 1.0 - rho_q;
    let mut causal = CMatrix::zeros(m * n_b, k * n_b);
    let mut interference = CMatrix::zeros(m * n_b, k * n_b);
    for i in 0..n_b {
        for (lag, h) in taps.taps().iter().enumerate() {
            let col = i + lag;
            if col < n_b {
                place(&mut causal, i, col, h, gain);
            } else {
                place(&mut interference, i, col - n_b, h, gain);
            }
        }
    }
    let circulant = &causal + &interference;
    let wrap = |matrix, kind| BlockStackedChannel { matrix, kind, block_len: n_b };
    Ok(CirculantParts {
        circulant: wrap(circulant, StackKind::Circulant),
        causal: wrap(causal, StackKind::Causal),
        interference: wrap(interference, StackKind::Interference),
    })
}

pub(crate) fn check_rho(rho_q: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rho_q) {
        return Err(Error::Config(format!("distortion factor {rho_q} outside [0, 1)")));
    }
    Ok(())
}

/// Per-subband channel matrices `H_f0 .. H_f(N_b-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqChannel {
    pub subbands: Vec<CMatrix>,
    /// Distortion factor whose gain `1 - rho_q` is baked into `subbands`.
    pub rho_q: f64,
}

impl FreqChannel {
    pub fn block_len(&self) -> usize {
        self.subbands.len()
    }

    pub fn includes_bussgang_gain(&self) -> bool {
        self.rho_q != 0.0
    }

    /// The same channel with the Bussgang gain removed.
    pub fn without_bussgang_gain(&self) -> FreqChannel {
        let s = C64::new(1.0 / (1.0 - self.rho_q), 0.0);
        FreqChannel { subbands: self.subbands.iter().map(|h| h * s).collect(), rho_q: 0.0 }
    }

    /// Dense `blockdiag{H_fi}`.
    pub fn block_diagonal(&self) -> CMatrix {
        let (m, k) = self.subbands[0].shape();
        let n = self.subbands.len();
        let mut out = CMatrix::zeros(m * n, k * n);
        for (i, h) in self.subbands.iter().enumerate() {
            out.view_mut((i * m, i * k), (m, k)).copy_from(h);
        }
        out
    }
}

/// Unnormalized `N_b`-point DFT of the tap sequence, scaled by `1 - rho_q`:
/// `H_fi = (1 - rho_q) sum_l H_l exp(-j 2 pi l i / N_b)`.
pub fn freq_channel(taps: &ChannelTaps, n_b: usize, rho_q: f64) -> Result<FreqChannel> {
    check_block_len(taps, n_b)?;
    check_rho(rho_q)?;
    let (m, k) = (taps.antennas(), taps.users());
    let gain = 1.0 - rho_q;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_b);
    let mut subbands = vec![CMatrix::zeros(m, k); n_b];
    let mut buf = vec![C64::new(0.0, 0.0); n_b];
    for kk in 0..k {
        for mm in 0..m {
            buf.iter_mut().for_each(|b| *b = C64::new(0.0, 0.0));
            for (l, h) in taps.taps().iter().enumerate() {
                buf[l] = h[(mm, kk)];
            }
            fft.process(&mut buf);
            for (i, v) in buf.iter().enumerate() {
                subbands[i][(mm, kk)] = v * gain;
            }
        }
    }
    Ok(FreqChannel { subbands, rho_q })
}

/// Noiseless linear convolution of a `K x T` transmit stream (time ascending,
/// samples before the stream start are zero). Returns the `M x T` receive stream.
pub fn convolve(taps: &ChannelTaps, x: &CMatrix) -> Result<CMatrix> {
    let (m, k) = (taps.antennas(), taps.users());
    if x.nrows() != k {
        return Err(Error::Dimension(format!("stream has {} rows, channel has {k} users", x.nrows())));
    }
    let t_len = x.ncols();
    let mut y = CMatrix::zeros(m, t_len);
    let active: Vec<(usize, &CMatrix)> = taps
        .taps()
        .iter()
        .enumerate()
        .filter(|(_, h)| h.iter().any(|v| *v != C64::new(0.0, 0.0)))
        .collect();
    for n in 0..t_len {
        for &(l, h) in &active {
            if l > n {
                break;
            }
            let xs = x.column(n - l);
            for kk in 0..k {
                let xv = xs[kk];
                for mm in 0..m {
                    y[(mm, n)] += h[(mm, kk)] * xv;
                }
            }
        }
    }
    Ok(y)
}

/// Adds i.i.d. CN(0, `noise_std^2`) noise to every entry of `y`.
pub fn add_awgn<R: Rng + ?Sized>(y: &mut CMatrix, noise_std: f64, rng: &mut R) {
    if noise_std == 0.0 {
        return;
    }
    let var = noise_std * noise_std;
    for v in y.iter_mut() {
        *v += complex_gaussian(rng, var);
    }
}

/// Unquantized receive stream `y[n] = sum_l H_l x[n - l] + eta[n]`.
pub fn convolve_transmit<R: Rng + ?Sized>(
    taps: &ChannelTaps,
    x: &CMatrix,
    noise_std: f64,
    rng: &mut R,
) -> Result<CMatrix> {
    let mut y = convolve(taps, x)?;
    add_awgn(&mut y, noise_std, rng);
    Ok(y)
}

/// Unitary `n`-point DFT matrix in the sign convention that block-diagonalizes
/// the circulant stacking: `F[a, c] = exp(+j 2 pi a c / n) / sqrt(n)`.
///
/// Because column 0 of a block is the newest sample, the circulant matrix
/// couples column `i` to column `(i + l) mod N_b`; this kernel sign is the one
/// for which `(F x I_M) H_cir (F^H x I_K)` equals `blockdiag{H_fi}` with the
/// `exp(-j ...)` subband definition of [`freq_channel`].
pub fn dft_matrix(n: usize) -> CMatrix {
    let norm = 1.0 / (n as f64).sqrt();
    CMatrix::from_fn(n, n, |a, c| {
        let phase = 2.0 * std::f64::consts::PI * ((a * c) % n) as f64 / n as f64;
        C64::from_polar(norm, phase)
    })
}

/// Kronecker product `a x b`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}
