//! Fixed-seed property checks used as a release gate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::blockopt::{optimal_block_length, ComplexityParams, SearchMode};
use crate::channel::{
    build_block_circulant, complex_gaussian, dft_matrix, freq_channel, generate_channel, kron, PowerDelayProfile,
};
use crate::fde::{build_filter_bank, equalize_block, time_domain_wf, vec_stack, FdeConfig};
use crate::quant::{bussgang_model_with_power, design_quantizer};
use crate::{CMatrix, CVector, Result, C64};

/// Deliberate defect injected into a check, to confirm the check can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// Perturbs one tap of the channel used for the dense circulant matrix.
    Circulant,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Largest relative Frobenius error of `(F x I_M) H_cir (F^H x I_K)` against
/// `blockdiag{H_fi}` over random small instances.
pub fn diagonalization_error(instances: usize, seed: u64, fault: Fault) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let m = rng.random_range(1..=4);
        let k = rng.random_range(1..=3);
        let l = rng.random_range(0..=4);
        let n_b = rng.random_range(l + 1..=16);
        let rho = rng.random_range(0.0..0.5);
        let taps = generate_channel(&PowerDelayProfile::uniform(l + 1)?, m, k, &mut rng)?;
        let fc = freq_channel(&taps, n_b, rho)?;
        let dense_taps = match fault {
            Fault::None => taps.clone(),
            Fault::Circulant => taps.perturbed(l, 0, 0, C64::new(0.5, 0.0)),
        };
        let hcir = build_block_circulant(&dense_taps, n_b, rho)?.circulant.matrix;
        let f = dft_matrix(n_b);
        let lhs = kron(&f, &CMatrix::identity(m, m)) * hcir * kron(&f.adjoint(), &CMatrix::identity(k, k));
        let rhs = fc.block_diagonal();
        worst = worst.max((&lhs - &rhs).norm() / rhs.norm());
    }
    Ok(worst)
}

/// Largest relative error between the FFT-domain block equalizer and the
/// dense Wiener filter on circulant data, over both equalizer variants.
pub fn fde_oracle_error(instances: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for i in 0..instances {
        let m = rng.random_range(1..=6);
        let k = rng.random_range(1..=3);
        let l = rng.random_range(0..=4);
        let n_b = rng.random_range(l + 1..=16);
        let bits = rng.random_range(1..=4);
        let rho = design_quantizer(bits, 1.0)?.rho_q;
        let sx2 = 10f64.powf(rng.random_range(-1.0..2.0));
        let taps = generate_channel(&PowerDelayProfile::uniform(l + 1)?, m, k, &mut rng)?;
        let bm = bussgang_model_with_power(&taps, rho, 1.0, sx2)?;
        let fc = freq_channel(&taps, n_b, rho)?;
        let account = i % 2 == 0;
        let (rho_used, bm_used) = if account { (rho, bm.clone()) } else { (0.0, bm.unquantized()) };
        let hcir = build_block_circulant(&taps, n_b, rho_used)?.circulant.matrix;
        let x = CVector::from_fn(k * n_b, |_, _| complex_gaussian(&mut rng, sx2));
        let noise = CVector::from_fn(m * n_b, |_, _| complex_gaussian(&mut rng, 1.0));
        let r = &hcir * x + noise;
        let dense = time_domain_wf(&r, &hcir, &bm_used, sx2)?;
        let cfg = FdeConfig::new(n_b, l, sx2, account)?;
        let bank = build_filter_bank(&fc, &bm, &cfg)?;
        let fast = vec_stack(&equalize_block(&CMatrix::from_column_slice(m, n_b, r.as_slice()), &bank)?);
        worst = worst.max((&fast - &dense).norm() / dense.norm());
    }
    Ok(worst)
}

/// Empirical 1-bit Bussgang gain `E[Q(y) y] / E[y^2]` with the designed
/// quantizer, and the designed distortion factor.
pub fn one_bit_gain(samples: usize, seed: u64) -> Result<(f64, f64)> {
    let q = design_quantizer(1, 1.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut qy, mut yy) = (0.0, 0.0);
    for _ in 0..samples {
        let y: f64 = StandardNormal.sample(&mut rng);
        qy += q.quantize_real(y) * y;
        yy += y * y;
    }
    Ok((qy / yy, q.rho_q))
}

/// Optimal block lengths (exhaustive argmin, power-of-two optimum) for
/// `K = 2`, `T_c = 5e4`.
pub fn argmin_pair(antennas: usize, overlap: usize, coherence: usize) -> Result<(usize, Option<usize>)> {
    let p = ComplexityParams::new(2, antennas, overlap, coherence)?;
    let r = optimal_block_length(&p, SearchMode::Exhaustive, false)?;
    Ok((r.n_opt, r.n_opt_pow2))
}

fn check(name: &'static str, passed: bool, detail: String) -> PropertyResult {
    PropertyResult { name, passed, detail }
}

/// Runs every property at its fixed seed.
pub fn run_properties(fault: Fault) -> Result<Vec<PropertyResult>> {
    let mut out = Vec::new();

    let e = diagonalization_error(50, 0xD1A6, fault)?;
    out.push(check("diagonalization", e < 1e-10, format!("max relative error {e:.3e} (limit 1e-10)")));

    let e = fde_oracle_error(50, 0xFDE0)?;
    out.push(check("fde_vs_wf", e < 1e-9, format!("max relative error {e:.3e} (limit 1e-9)")));

    let (gain, rho) = one_bit_gain(1_000_000, 0xB055)?;
    let expect = 2.0 / std::f64::consts::PI;
    let rel = (gain - expect).abs() / expect;
    let rho_err = (rho - (1.0 - expect)).abs();
    out.push(check(
        "bussgang_gain",
        rel < 0.01 && rho_err < 1e-9,
        format!("empirical gain {gain:.6} vs 2/pi (rel {rel:.2e}); designed rho error {rho_err:.2e}"),
    ));

    // The antenna count shifts the dynamic cost by K M N_b, so the integer
    // argmin may move by one sample; the power-of-two optimum must not move.
    let mut ok = true;
    let mut notes = Vec::new();
    for overlap in [31, 127] {
        let (n64, p64) = argmin_pair(64, overlap, 50_000)?;
        let (n128, p128) = argmin_pair(128, overlap, 50_000)?;
        ok &= n64.abs_diff(n128) <= 1 && p64 == p128;
        notes.push(format!("L'={overlap}: M=64 -> {n64}/{p64:?}, M=128 -> {n128}/{p128:?}"));
    }
    let (short, _) = argmin_pair(64, 31, 50_000)?;
    let (long, _) = argmin_pair(64, 127, 50_000)?;
    ok &= long > short;
    out.push(check("argmin_invariance", ok, notes.join("; ")));

    Ok(out)
}
