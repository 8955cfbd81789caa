use proptest::prelude::*;
use qfde_core::channel::{
    build_block_circulant, build_block_toeplitz, convolve, dft_matrix, freq_channel, generate_channel, kron,
    PowerDelayProfile,
};
use qfde_core::fde::{build_filter_bank, equalize_block, overlap_save_stream, time_domain_wf, vec_stack, FdeConfig};
use qfde_core::quant::{bussgang_model_with_power, design_quantizer};
use qfde_core::simulate::{demap_symbols, map_symbols, run_experiment, Method, PdpSpec, SimConfig};
use qfde_core::{CMatrix, CVector, C64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dims() -> impl Strategy<Value = (usize, usize, usize, usize, u64)> {
    (1usize..=4, 1usize..=3, 0usize..=4, 0usize..=8, any::<u64>()).prop_map(|(m, k, l, extra, seed)| (m, k, l, l + 1 + extra, seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn circulant_is_block_diagonalized((m, k, l, n_b, seed) in dims(), rho in 0.0f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let taps = generate_channel(&PowerDelayProfile::uniform(l + 1).unwrap(), m, k, &mut rng).unwrap();
        let parts = build_block_circulant(&taps, n_b, rho).unwrap();
        let f = dft_matrix(n_b);
        let lhs = kron(&f, &CMatrix::identity(m, m)) * &parts.circulant.matrix * kron(&f.adjoint(), &CMatrix::identity(k, k));
        let rhs = freq_channel(&taps, n_b, rho).unwrap().block_diagonal();
        prop_assert!((&lhs - &rhs).norm() / rhs.norm() < 1e-10);
        prop_assert_eq!(&parts.causal.matrix + &parts.interference.matrix, parts.circulant.matrix.clone());
        if l == 0 {
            prop_assert_eq!(parts.interference.matrix.norm(), 0.0);
        }
    }

    #[test]
    fn toeplitz_reproduces_convolution((m, k, l, n_b, seed) in dims()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let taps = generate_channel(&PowerDelayProfile::uniform(l + 1).unwrap(), m, k, &mut rng).unwrap();
        let t = n_b + l;
        let x = CMatrix::from_fn(k, t, |_, _| qfde_core::channel::complex_gaussian(&mut rng, 1.0));
        let y = convolve(&taps, &x).unwrap();
        // block i holds time t - 1 - i, newest first, for both sides
        let xs = CVector::from_fn(k * t, |r, _| x[(r % k, t - 1 - r / k)]);
        let ys = build_block_toeplitz(&taps, n_b).unwrap().matrix * xs;
        for i in 0..n_b {
            for a in 0..m {
                prop_assert!((ys[i * m + a] - y[(a, t - 1 - i)]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn fde_equals_dense_wiener((m, k, l, n_b, seed) in dims(), bits in 1u32..=4, account: bool) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let taps = generate_channel(&PowerDelayProfile::uniform(l + 1).unwrap(), m, k, &mut rng).unwrap();
        let rho = design_quantizer(bits, 1.0).unwrap().rho_q;
        let sx2 = 3.0;
        let bm = bussgang_model_with_power(&taps, rho, 1.0, sx2).unwrap();
        let fc = freq_channel(&taps, n_b, rho).unwrap();
        let (rho_used, bm_used) = if account { (rho, bm.clone()) } else { (0.0, bm.unquantized()) };
        let hcir = build_block_circulant(&taps, n_b, rho_used).unwrap().circulant.matrix;
        let r = CVector::from_fn(m * n_b, |_, _| qfde_core::channel::complex_gaussian(&mut rng, 1.0));
        let dense = time_domain_wf(&r, &hcir, &bm_used, sx2).unwrap();
        let bank = build_filter_bank(&fc, &bm, &FdeConfig::new(n_b, l, sx2, account).unwrap()).unwrap();
        let fast = vec_stack(&equalize_block(&CMatrix::from_column_slice(m, n_b, r.as_slice()), &bank).unwrap());
        prop_assert!((&fast - &dense).norm() / dense.norm() < 1e-9);
    }

    #[test]
    fn overlap_save_covers_every_symbol_once(t_c in 20usize..200, l in 0usize..6, extra in 1usize..20, seed: u64) {
        let n_b = l + extra;
        prop_assume!(n_b <= t_c);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let taps = generate_channel(&PowerDelayProfile::uniform(l + 1).unwrap(), 2, 1, &mut rng).unwrap();
        let cfg = FdeConfig::new(n_b, l, 1.0, true).unwrap();
        let bm = bussgang_model_with_power(&taps, 0.0, 0.1, 1.0).unwrap();
        let bank = build_filter_bank(&freq_channel(&taps, n_b, 0.0).unwrap(), &bm, &cfg).unwrap();
        let r = CMatrix::from_fn(2, t_c, |_, _| qfde_core::channel::complex_gaussian(&mut rng, 1.0));
        let out = overlap_save_stream(&r, &bank, &cfg).unwrap();
        prop_assert_eq!(out.estimates.ncols(), t_c);
        prop_assert!(out.edge_count() <= l);
        prop_assert!(out.estimates.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn quantizer_scale_equivariance(bits in 1u32..=6, alpha in 0.01f64..100.0, y in -5.0f64..5.0) {
        let unit = design_quantizer(bits, 1.0).unwrap();
        let scaled = design_quantizer(bits, alpha).unwrap();
        let a = scaled.quantize_real(alpha * y);
        let b = alpha * unit.quantize_real(y);
        prop_assert!((a - b).abs() <= 1e-9 * alpha);
    }

    #[test]
    fn qam_round_trip(order_idx in 0usize..3, bits in proptest::collection::vec(any::<bool>(), 0..20)) {
        let order = [4usize, 16, 64][order_idx];
        let b = order.trailing_zeros() as usize;
        let mut bits = bits;
        bits.truncate(bits.len() / b * b);
        let syms = map_symbols(&bits, order).unwrap();
        let (_, back) = demap_symbols(&syms, order).unwrap();
        prop_assert_eq!(back, bits);
    }
}

#[test]
fn diagonalization_holds_for_single_user_single_antenna() {
    let taps = qfde_core::channel::ChannelTaps::scalar(&[C64::new(1.0, 0.0), C64::new(0.0, 1.0)]).unwrap();
    let fc = freq_channel(&taps, 4, 0.0).unwrap();
    // H_f1 = 1 + j e^{-j pi / 2} = 2
    assert!((fc.subbands[1][(0, 0)] - C64::new(2.0, 0.0)).norm() < 1e-12);
}

fn selective(seed: u64, realizations: usize) -> SimConfig {
    SimConfig {
        users: 2,
        antennas: 8,
        total_taps: 9,
        pdp: PdpSpec::Uniform,
        modulation: 16,
        coherence: 512,
        realizations,
        ebn0_grid: vec![10.0],
        block_lens: vec![32],
        methods: vec![Method::WfQ],
        seed,
        ..SimConfig::default()
    }
}

#[test]
fn discard_beats_no_discard() {
    let with = run_experiment(&SimConfig { overlap: Some(8), ..selective(21, 50) }).unwrap();
    let without = run_experiment(&SimConfig { overlap: Some(0), ..selective(21, 50) }).unwrap();
    let (a, b) = (with.rows[0].mse, without.rows[0].mse);
    assert!(a < b, "discard {a} vs none {b}");
}

#[test]
fn doubling_realizations_is_consistent() {
    let a = run_experiment(&selective(22, 10)).unwrap();
    let b = run_experiment(&selective(22, 20)).unwrap();
    let (ra, rb) = (&a.rows[0], &b.rows[0]);
    let se = (ra.mse_stderr.powi(2) + rb.mse_stderr.powi(2)).sqrt();
    assert!((ra.mse - rb.mse).abs() < 3.0 * se, "{} vs {} (se {se})", ra.mse, rb.mse);
}
