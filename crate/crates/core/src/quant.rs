//! Scalar quantization of the receive signal and its Bussgang linearization.
//!
//! The default design is the MSE-optimal *uniform* quantizer for a Gaussian
//! input: equal-width interior intervals of step `delta`, levels at the
//! interval centers, and `delta` found by golden-section search on the exact
//! closed-form MSE. A non-uniform Lloyd-Max design is available for
//! comparison. Both designs satisfy `E[Q(y)^2] = E[Q(y) y]`, so the
//! normalized MSE `rho_q` is also one minus the Bussgang gain.

use statrs::function::erf::erfc;

use crate::channel::{check_rho, ChannelTaps};
use crate::{CMatrix, Error, Result, C64};

/// Highest supported resolution; beyond this the level tables blow up.
pub const MAX_BITS: u32 = 16;

const GOLDEN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantizerKind {
    /// Uniform step with optimized width.
    Uniform,
    /// Non-uniform centroid/midpoint (Lloyd-Max) design.
    LloydMax,
}

/// A symmetric `b`-bit scalar quantizer designed for a Gaussian input.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerSpec {
    pub bits: u32,
    pub kind: QuantizerKind,
    /// `a_0 .. a_{2^b}`, with `a_0 = -inf` and `a_{2^b} = +inf`.
    pub thresholds: Vec<f64>,
    /// `q_1 .. q_{2^b}`; level `j` covers `]a_{j-1}, a_j]`.
    pub levels: Vec<f64>,
    /// Normalized MSE achieved on the design input.
    pub rho_q: f64,
    /// Input standard deviation per real dimension the design targets.
    pub input_std: f64,
    /// Interval width for uniform designs (zero for Lloyd-Max).
    pub step: f64,
}

impl QuantizerSpec {
    /// The same quantizer redesigned for an input of standard deviation `sigma`.
    pub fn scaled(&self, sigma: f64) -> QuantizerSpec {
        let s = sigma / self.input_std;
        QuantizerSpec {
            bits: self.bits,
            kind: self.kind,
            thresholds: self.thresholds.iter().map(|a| a * s).collect(),
            levels: self.levels.iter().map(|q| q * s).collect(),
            rho_q: self.rho_q,
            input_std: sigma,
            step: self.step * s,
        }
    }

    /// Maps one real sample to the level of its interval.
    pub fn quantize_real(&self, x: f64) -> f64 {
        let finite = &self.thresholds[1..self.thresholds.len() - 1];
        let idx = finite.partition_point(|&a| a < x);
        self.levels[idx]
    }

    /// Quantizes real and imaginary parts independently.
    pub fn quantize_complex(&self, z: C64) -> C64 {
        C64::new(self.quantize_real(z.re), self.quantize_real(z.im))
    }
}

fn check_bits(bits: u32) -> Result<()> {
    if bits == 0 {
        return Err(Error::Config("quantizer needs at least one bit".into()));
    }
    if bits > MAX_BITS {
        return Err(Error::UnsupportedResolution(bits));
    }
    Ok(())
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Config(format!("input std must be positive, got {sigma}")));
    }
    Ok(())
}

/// Standard normal upper tail `P(Z > t)`.
fn upper_tail(t: f64) -> f64 {
    if t == f64::INFINITY {
        0.0
    } else {
        0.5 * erfc(t / std::f64::consts::SQRT_2)
    }
}

fn pdf(t: f64) -> f64 {
    if t.is_infinite() {
        0.0
    } else {
        (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }
}

/// `int_lo^hi (t - q)^2 phi(t) dt` for `0 <= lo <= hi <= inf`.
fn interval_mse(lo: f64, hi: f64, q: f64) -> f64 {
    let mass = upper_tail(lo) - upper_tail(hi);
    let (plo, phi) = (pdf(lo), pdf(hi));
    let t_phi_hi = if hi.is_infinite() { 0.0 } else { hi * phi };
    (1.0 + q * q) * mass + (lo * plo - t_phi_hi) - 2.0 * q * (plo - phi)
}

/// Exact MSE of the unit-variance uniform quantizer with `2^bits` levels and step `delta`.
fn uniform_mse(bits: u32, delta: f64) -> f64 {
    let half = 1usize << (bits - 1);
    let mut acc = 0.0;
    for i in 0..half {
        let lo = i as f64 * delta;
        let hi = if i + 1 == half { f64::INFINITY } else { (i + 1) as f64 * delta };
        acc += interval_mse(lo, hi, (i as f64 + 0.5) * delta);
    }
    2.0 * acc
}

/// `d/d delta` of [`uniform_mse`]. Threshold motion contributes nothing since
/// thresholds sit midway between levels, so only the level motion remains.
fn uniform_mse_slope(bits: u32, delta: f64) -> f64 {
    let half = 1usize << (bits - 1);
    let mut acc = 0.0;
    for i in 0..half {
        let lo = i as f64 * delta;
        let hi = if i + 1 == half { f64::INFINITY } else { (i + 1) as f64 * delta };
        let w = i as f64 + 0.5;
        let first_moment = pdf(lo) - pdf(hi) - w * delta * (upper_tail(lo) - upper_tail(hi));
        acc += w * first_moment;
    }
    -4.0 * acc
}

/// Bisection on the slope inside a bracket around the golden-section optimum.
fn polish_step(bits: u32, guess: f64) -> f64 {
    let (mut a, mut b) = (guess * 0.99, guess * 1.01);
    if uniform_mse_slope(bits, a) >= 0.0 || uniform_mse_slope(bits, b) <= 0.0 {
        return guess;
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        if uniform_mse_slope(bits, mid) < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, rel_tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a) > rel_tol * (c.abs() + d.abs()) / 2.0 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

fn uniform_tables(bits: u32, delta: f64) -> (Vec<f64>, Vec<f64>) {
    let n = 1usize << bits;
    let half = n as f64 / 2.0;
    let mut thresholds = Vec::with_capacity(n + 1);
    thresholds.push(f64::NEG_INFINITY);
    thresholds.extend((1..n).map(|j| (j as f64 - half) * delta));
    thresholds.push(f64::INFINITY);
    let levels = (1..=n).map(|j| (j as f64 - half - 0.5) * delta).collect();
    (thresholds, levels)
}

/// MSE-optimal uniform `bits`-bit quantizer for a zero-mean Gaussian of std `sigma`.
pub fn design_quantizer(bits: u32, sigma: f64) -> Result<QuantizerSpec> {
    check_bits(bits)?;
    check_sigma(sigma)?;
    let upper = 32.0 / (1u64 << bits) as f64;
    let delta = polish_step(bits, golden_section(|d| uniform_mse(bits, d), 0.0, upper, GOLDEN_TOL));
    let rho_q = uniform_mse(bits, delta);
    let (thresholds, levels) = uniform_tables(bits, delta);
    let unit = QuantizerSpec {
        bits,
        kind: QuantizerKind::Uniform,
        thresholds,
        levels,
        rho_q,
        input_std: 1.0,
        step: delta,
    };
    Ok(unit.scaled(sigma))
}

/// Lloyd-Max (non-uniform) quantizer for a zero-mean Gaussian of std `sigma`.
pub fn design_lloyd_max(bits: u32, sigma: f64) -> Result<QuantizerSpec> {
    check_bits(bits)?;
    check_sigma(sigma)?;
    let n = 1usize << bits;
    let half = n / 2;
    // positive half: boundaries b_0 = 0 < b_1 < .. < b_half = inf, levels between
    let start = design_quantizer(bits, 1.0)?;
    let mut levels: Vec<f64> = start.levels[half..].to_vec();
    let mut bounds = vec![0.0; half + 1];
    bounds[half] = f64::INFINITY;
    for _ in 0..100_000 {
        for i in 1..half {
            bounds[i] = 0.5 * (levels[i - 1] + levels[i]);
        }
        let mut moved = 0.0f64;
        for i in 0..half {
            let (lo, hi) = (bounds[i], bounds[i + 1]);
            let mass = upper_tail(lo) - upper_tail(hi);
            let c = (pdf(lo) - pdf(hi)) / mass;
            moved = moved.max((c - levels[i]).abs());
            levels[i] = c;
        }
        if moved < 1e-13 {
            break;
        }
    }
    let rho_q = 2.0
        * (0..half)
            .map(|i| interval_mse(bounds[i], bounds[i + 1], levels[i]))
            .sum::<f64>();
    let mut thresholds = vec![f64::NEG_INFINITY];
    thresholds.extend(bounds[1..half].iter().rev().map(|b| -b));
    thresholds.push(0.0);
    thresholds.extend_from_slice(&bounds[1..]);
    let mut all_levels: Vec<f64> = levels.iter().rev().map(|q| -q).collect();
    all_levels.extend_from_slice(&levels);
    let unit = QuantizerSpec {
        bits,
        kind: QuantizerKind::LloydMax,
        thresholds,
        levels: all_levels,
        rho_q,
        input_std: 1.0,
        step: 0.0,
    };
    Ok(unit.scaled(sigma))
}

/// Designs a quantizer of the requested kind.
pub fn design(kind: QuantizerKind, bits: u32, sigma: f64) -> Result<QuantizerSpec> {
    match kind {
        QuantizerKind::Uniform => design_quantizer(bits, sigma),
        QuantizerKind::LloydMax => design_lloyd_max(bits, sigma),
    }
}

/// Quantizes an `M x T` stream, row `m` with `specs[m]`.
pub fn quantize(y: &CMatrix, specs: &[QuantizerSpec]) -> Result<CMatrix> {
    if specs.len() != y.nrows() {
        return Err(Error::Dimension(format!(
            "{} quantizers for {} receive antennas",
            specs.len(),
            y.nrows()
        )));
    }
    let mut out = y.clone();
    for (m, spec) in specs.iter().enumerate() {
        for v in out.row_mut(m).iter_mut() {
            *v = spec.quantize_complex(*v);
        }
    }
    Ok(out)
}

/// Closed-form stand-in `rho_q ~ 3^-b`.
pub fn distortion_factor(bits: u32) -> f64 {
    3f64.powi(-(bits as i32))
}

/// Bussgang-linearized view of the quantized receiver: `r = gain * y + e`.
#[derive(Debug, Clone, PartialEq)]
pub struct BussgangModel {
    /// `1 - rho_q`.
    pub gain: f64,
    /// Per-antenna variance of the effective noise (thermal plus distortion)
    /// for one time slot.
    pub eff_noise_diag: Vec<f64>,
    pub rho_q: f64,
    /// Thermal noise variance the model was built with.
    pub sigma_eta2: f64,
}

impl BussgangModel {
    /// The model an equalizer that ignores quantization assumes.
    pub fn unquantized(&self) -> BussgangModel {
        BussgangModel {
            gain: 1.0,
            eff_noise_diag: vec![self.sigma_eta2; self.eff_noise_diag.len()],
            rho_q: 0.0,
            sigma_eta2: self.sigma_eta2,
        }
    }
}

/// Effective-noise model for unit transmit power per user.
pub fn bussgang_model(taps: &ChannelTaps, rho_q: f64, sigma_eta2: f64) -> Result<BussgangModel> {
    bussgang_model_with_power(taps, rho_q, sigma_eta2, 1.0)
}

/// Effective-noise model for transmit power `sigma_x2` per user:
/// `(1 - rho_q) (sigma_eta2 + rho_q sigma_x2 [sum_l H_l H_l^H]_mm)`.
pub fn bussgang_model_with_power(
    taps: &ChannelTaps,
    rho_q: f64,
    sigma_eta2: f64,
    sigma_x2: f64,
) -> Result<BussgangModel> {
    check_rho(rho_q)?;
    if !(sigma_eta2.is_finite() && sigma_eta2 > 0.0) {
        return Err(Error::Config(format!("noise variance must be positive, got {sigma_eta2}")));
    }
    if !(sigma_x2.is_finite() && sigma_x2 >= 0.0) {
        return Err(Error::Config(format!("invalid transmit power {sigma_x2}")));
    }
    let gain = 1.0 - rho_q;
    let eff_noise_diag = taps
        .antenna_gains()
        .into_iter()
        .map(|g| gain * (sigma_eta2 + rho_q * sigma_x2 * g))
        .collect();
    Ok(BussgangModel { gain, eff_noise_diag, rho_q, sigma_eta2 })
}

/// Per-antenna receive std per real dimension, used to match each antenna's
/// quantizer to its input: `sqrt((sigma_x2 [sum_l H_l H_l^H]_mm + sigma_eta2) / 2)`.
pub fn per_antenna_agc(taps: &ChannelTaps, sigma_x2: f64, sigma_eta2: f64) -> Vec<f64> {
    taps.antenna_gains()
        .into_iter()
        .map(|g| ((sigma_x2 * g + sigma_eta2) / 2.0).sqrt())
        .collect()
}
