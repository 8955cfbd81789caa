//! Frequency-domain equalization with overlap-save block processing.
//!
//! A receive block `R` (`M x N_b`, column 0 newest) is taken to the frequency
//! domain row by row (`R_f = R F^T`), each subband is equalized by its MMSE
//! filter `G_fi`, and the estimates return to time as `X_c = X_f F*`.
//! `F` is the unitary DFT matrix of [`crate::channel::dft_matrix`], which
//! turns these products into an inverse FFT on the way in and a forward FFT
//! on the way out, both scaled by `1 / sqrt(N_b)`.
//!
//! The circulant channel model ignores inter-block interference, so the
//! estimation error concentrates at both block edges. Overlap-save keeps only
//! the central `N_b - L'` estimates of each block: `L_pre = ceil(L'/2)` newest
//! and `L_post = floor(L'/2)` oldest estimates are discarded.

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};

use crate::channel::FreqChannel;
use crate::quant::BussgangModel;
use crate::{CMatrix, CVector, Error, Result, C64};

/// Default row cap for the dense time-domain Wiener filter.
pub const DENSE_ROW_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdeConfig {
    /// Block length `N_b`.
    pub block_len: usize,
    /// Samples discarded per block `L'`.
    pub overlap: usize,
    /// Transmit symbol variance per user.
    pub sigma_x2: f64,
    /// `true` for WF_Q (Bussgang-aware), `false` for WF (quantization ignored).
    pub account_quantization: bool,
}

impl FdeConfig {
    pub fn new(block_len: usize, overlap: usize, sigma_x2: f64, account_quantization: bool) -> Result<Self> {
        if block_len < overlap + 1 {
            return Err(Error::Config(format!(
                "block length {block_len} retains no sample with overlap {overlap}"
            )));
        }
        if !(sigma_x2.is_finite() && sigma_x2 > 0.0) {
            return Err(Error::Config(format!("transmit power must be positive, got {sigma_x2}")));
        }
        Ok(Self { block_len, overlap, sigma_x2, account_quantization })
    }

    /// Newest-edge discard `ceil(L'/2)`.
    pub fn pre_discard(&self) -> usize {
        self.overlap.div_ceil(2)
    }

    /// Oldest-edge discard `floor(L'/2)`.
    pub fn post_discard(&self) -> usize {
        self.overlap / 2
    }

    /// Estimates retained per block.
    pub fn retained(&self) -> usize {
        self.block_len - self.overlap
    }
}

/// What a filter bank was designed for.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterProvenance {
    pub rho_q: f64,
    pub gain: f64,
    pub sigma_x2: f64,
    pub account_quantization: bool,
    pub noise_diag: Vec<f64>,
}

/// Per-subband MMSE filters `G_fi` (`K x M` each).
#[derive(Debug, Clone)]
pub struct SubbandFilterBank {
    pub filters: Vec<CMatrix>,
    pub built_from: FilterProvenance,
}

impl SubbandFilterBank {
    pub fn block_len(&self) -> usize {
        self.filters.len()
    }

    pub fn antennas(&self) -> usize {
        self.filters[0].ncols()
    }

    pub fn users(&self) -> usize {
        self.filters[0].nrows()
    }
}

/// Solves `(H^H D^-1 H + sigma_x^-2 I) G = H^H D^-1` with a Cholesky factorization.
fn mmse_filter(h: &CMatrix, noise_diag: &[f64], sigma_x2: f64) -> Result<CMatrix> {
    let (m, k) = h.shape();
    // H^H D^-1
    let mut hd = h.adjoint();
    for mm in 0..m {
        let inv = 1.0 / noise_diag[mm];
        hd.column_mut(mm).scale_mut(inv);
    }
    let mut a = &hd * h;
    for i in 0..k {
        a[(i, i)] += C64::new(1.0 / sigma_x2, 0.0);
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Internal("subband normal matrix is not positive definite".into()))?;
    Ok(chol.solve(&hd))
}

/// Designs the MMSE filter of every subband.
///
/// With `account_quantization` unset, the Bussgang gain is stripped from `fc`
/// and the noise is taken as thermal only (`rho_q = 0`).
pub fn build_filter_bank(fc: &FreqChannel, bm: &BussgangModel, cfg: &FdeConfig) -> Result<SubbandFilterBank> {
    if fc.block_len() != cfg.block_len {
        return Err(Error::Dimension(format!(
            "frequency channel has {} subbands, config expects {}",
            fc.block_len(),
            cfg.block_len
        )));
    }
    if (fc.rho_q - bm.rho_q).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "channel built for rho_q = {}, noise model for rho_q = {}",
            fc.rho_q, bm.rho_q
        )));
    }
    let m = fc.subbands[0].nrows();
    if bm.eff_noise_diag.len() != m {
        return Err(Error::Dimension(format!(
            "noise model covers {} antennas, channel has {m}",
            bm.eff_noise_diag.len()
        )));
    }
    let (fc, bm) = if cfg.account_quantization {
        (fc.clone(), bm.clone())
    } else {
        (fc.without_bussgang_gain(), bm.unquantized())
    };
    if bm.eff_noise_diag.iter().any(|d| d.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)) {
        return Err(Error::Config("noise diagonal must be strictly positive".into()));
    }
    let filters = fc
        .subbands
        .iter()
        .map(|h| mmse_filter(h, &bm.eff_noise_diag, cfg.sigma_x2))
        .collect::<Result<Vec<_>>>()?;
    Ok(SubbandFilterBank {
        filters,
        built_from: FilterProvenance {
            rho_q: bm.rho_q,
            gain: bm.gain,
            sigma_x2: cfg.sigma_x2,
            account_quantization: cfg.account_quantization,
            noise_diag: bm.eff_noise_diag.clone(),
        },
    })
}

/// Reusable block equalizer holding FFT plans and scratch space.
pub struct BlockEqualizer<'a> {
    bank: &'a SubbandFilterBank,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    buf: Vec<C64>,
    scratch: Vec<C64>,
    rf: CMatrix,
    xf: CMatrix,
}

impl<'a> BlockEqualizer<'a> {
    pub fn new(bank: &'a SubbandFilterBank) -> Self {
        let n = bank.block_len();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        Self {
            bank,
            fwd,
            inv,
            buf: vec![C64::new(0.0, 0.0); n],
            scratch: vec![C64::new(0.0, 0.0); scratch_len],
            rf: CMatrix::zeros(bank.antennas(), n),
            xf: CMatrix::zeros(bank.users(), n),
        }
    }

    /// Equalizes one `M x N_b` block (column 0 newest) into a `K x N_b` estimate.
    pub fn equalize(&mut self, r: &CMatrix) -> Result<CMatrix> {
        let (m, k, n) = (self.bank.antennas(), self.bank.users(), self.bank.block_len());
        if r.shape() != (m, n) {
            return Err(Error::Dimension(format!(
                "block is {:?}, filter bank expects ({m}, {n})",
                r.shape()
            )));
        }
        let norm = 1.0 / (n as f64).sqrt();
        // R_f = R F^T: inverse FFT of every antenna row
        for mm in 0..m {
            for (c, b) in self.buf.iter_mut().enumerate() {
                *b = r[(mm, c)];
            }
            self.inv.process_with_scratch(&mut self.buf, &mut self.scratch);
            for (a, b) in self.buf.iter().enumerate() {
                self.rf[(mm, a)] = b * norm;
            }
        }
        for (a, g) in self.bank.filters.iter().enumerate() {
            let est = g * self.rf.column(a);
            self.xf.set_column(a, &est);
        }
        // X_c = X_f F*: forward FFT of every user row
        let mut out = CMatrix::zeros(k, n);
        for kk in 0..k {
            for (a, b) in self.buf.iter_mut().enumerate() {
                *b = self.xf[(kk, a)];
            }
            self.fwd.process_with_scratch(&mut self.buf, &mut self.scratch);
            for (c, b) in self.buf.iter().enumerate() {
                out[(kk, c)] = b * norm;
            }
        }
        Ok(out)
    }

    /// Equalizes the block of the time-ascending stream `r` whose oldest
    /// sample is `start`. Column 0 of the result is time `start + N_b - 1`.
    pub fn equalize_at(&mut self, r: &CMatrix, start: usize) -> Result<CMatrix> {
        let n = self.bank.block_len();
        if start + n > r.ncols() {
            return Err(Error::Dimension(format!(
                "block [{start}, {}) exceeds stream of {}",
                start + n,
                r.ncols()
            )));
        }
        let block = CMatrix::from_fn(r.nrows(), n, |mm, c| r[(mm, start + n - 1 - c)]);
        self.equalize(&block)
    }
}

/// Equalizes a single block; see [`BlockEqualizer::equalize`].
pub fn equalize_block(r: &CMatrix, bank: &SubbandFilterBank) -> Result<CMatrix> {
    BlockEqualizer::new(bank).equalize(r)
}

/// Output of [`overlap_save_stream`]: one estimate per transmitted symbol.
#[derive(Debug, Clone)]
pub struct EqualizedStream {
    /// `K x T_c`, time ascending.
    pub estimates: CMatrix,
    /// Marks the stream-edge positions emitted without discard.
    pub edge: Vec<bool>,
    /// Oldest sample index of every processed block.
    pub block_starts: Vec<usize>,
}

impl EqualizedStream {
    pub fn edge_count(&self) -> usize {
        self.edge.iter().filter(|e| **e).count()
    }
}

/// Oldest-sample positions of the blocks covering a stream of `t_c` samples.
/// Blocks advance by `N_b - L'`; the last block is pulled back to end at the
/// stream end.
pub fn block_starts(t_c: usize, cfg: &FdeConfig) -> Result<Vec<usize>> {
    if t_c < cfg.block_len {
        return Err(Error::Config(format!(
            "coherence block of {t_c} samples is shorter than block length {}",
            cfg.block_len
        )));
    }
    let step = cfg.retained();
    let mut starts = Vec::with_capacity(t_c / step + 1);
    let mut s = 0;
    loop {
        if s + cfg.block_len >= t_c {
            starts.push(t_c - cfg.block_len);
            return Ok(starts);
        }
        starts.push(s);
        s += step;
    }
}

/// Overlap-save equalization of an `M x T_c` quantized stream (time ascending).
///
/// Every block contributes its central `N_b - L'` estimates. The first
/// `L_post` and last `L_pre` positions of the stream have no neighbouring
/// block and are taken undiscarded from the first/last block, flagged in
/// [`EqualizedStream::edge`].
pub fn overlap_save_stream(r: &CMatrix, bank: &SubbandFilterBank, cfg: &FdeConfig) -> Result<EqualizedStream> {
    if bank.block_len() != cfg.block_len {
        return Err(Error::Dimension(format!(
            "filter bank has {} subbands, config expects {}",
            bank.block_len(),
            cfg.block_len
        )));
    }
    let t_c = r.ncols();
    let starts = block_starts(t_c, cfg)?;
    let (n, pre, post) = (cfg.block_len, cfg.pre_discard(), cfg.post_discard());
    let mut eq = BlockEqualizer::new(bank);
    let mut estimates = CMatrix::zeros(bank.users(), t_c);
    let mut edge = vec![false; t_c];
    let mut filled = 0;
    let last = starts.len() - 1;
    for (i, &s) in starts.iter().enumerate() {
        let est = eq.equalize_at(r, s)?;
        let newest = s + n - 1;
        let lo = if i == 0 { s } else { s + post };
        let hi = if i == last { newest } else { newest - pre };
        for t in lo.max(filled)..=hi {
            estimates.set_column(t, &est.column(newest - t));
            edge[t] = (i == 0 && t < s + post) || (i == last && t + pre > newest);
        }
        filled = hi + 1;
    }
    debug_assert_eq!(filled, t_c);
    Ok(EqualizedStream { estimates, edge, block_starts: starts })
}

/// Dense Wiener filter on a stacked block: solves
/// `(H^H R^-1 H + sigma_x^-2 I) x = H^H R^-1 r` with `R = I_{N_b} x diag(noise)`.
pub fn time_domain_wf(r_stacked: &CVector, h_cir: &CMatrix, bm: &BussgangModel, sigma_x2: f64) -> Result<CVector> {
    time_domain_wf_capped(r_stacked, h_cir, bm, sigma_x2, DENSE_ROW_CAP)
}

pub fn time_domain_wf_capped(
    r_stacked: &CVector,
    h_cir: &CMatrix,
    bm: &BussgangModel,
    sigma_x2: f64,
    cap: usize,
) -> Result<CVector> {
    let rows = h_cir.nrows();
    if rows > cap {
        return Err(Error::SizeGuard { rows, cap });
    }
    if r_stacked.len() != rows {
        return Err(Error::Dimension(format!("stacked vector has {} rows, channel {rows}", r_stacked.len())));
    }
    let m = bm.eff_noise_diag.len();
    if m == 0 || !rows.is_multiple_of(m) {
        return Err(Error::Dimension(format!("{rows} rows do not stack {m} antennas")));
    }
    let mut hr = h_cir.adjoint();
    for i in 0..rows {
        hr.column_mut(i).scale_mut(1.0 / bm.eff_noise_diag[i % m]);
    }
    let mut a = &hr * h_cir;
    for i in 0..a.nrows() {
        a[(i, i)] += C64::new(1.0 / sigma_x2, 0.0);
    }
    let rhs = &hr * r_stacked;
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Internal("dense normal matrix is not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}

/// Column-stacking `vec{}` of a matrix.
pub fn vec_stack(a: &CMatrix) -> CVector {
    CVector::from_column_slice(a.as_slice())
}

/// Average error power per within-block position (0 = newest sample).
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorProfile {
    pub power: Vec<f64>,
}

impl ErrorProfile {
    /// Mean over the `pre` newest and `post` oldest positions, and over the rest.
    pub fn edge_center_means(&self, pre: usize, post: usize) -> (f64, f64) {
        let n = self.power.len();
        let (mut edge, mut ne, mut center, mut nc) = (0.0, 0usize, 0.0, 0usize);
        for (i, p) in self.power.iter().enumerate() {
            if i < pre || i + post >= n {
                edge += p;
                ne += 1;
            } else {
                center += p;
                nc += 1;
            }
        }
        (edge / ne.max(1) as f64, center / nc.max(1) as f64)
    }

    /// Writes `position,error_power`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["position", "error_power"])?;
        for (i, p) in self.power.iter().enumerate() {
            wr.write_record([i.to_string(), crate::numfmt::sig12(*p)])?;
        }
        wr.flush()?;
        Ok(())
    }
}
