use qfde_core::channel::{generate_channel, PowerDelayProfile};
use qfde_core::simulate::{
    block_toeplitz_trace, ebn0_to_sigma_x2, per_position_error_profile, run_experiment, Method, PdpSpec,
    ProfileRequest, SimConfig,
};
use qfde_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(seed: u64) -> SimConfig {
    SimConfig {
        users: 2,
        antennas: 8,
        total_taps: 4,
        pdp: PdpSpec::Uniform,
        modulation: 4,
        coherence: 256,
        realizations: 6,
        ebn0_grid: vec![0.0, 10.0, 20.0],
        block_lens: vec![32],
        seed,
        ..SimConfig::default()
    }
}

#[test]
fn one_row_per_grid_point() {
    let cfg = SimConfig { block_lens: vec![16, 64], ..small(1) };
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.rows.len(), 3 * 2 * 2);
    for r in &report.rows {
        assert_eq!(r.symbols + r.edge_excluded, (2 * 256 * 6) as u64);
    }
}

#[test]
fn edges_counted_when_excluded() {
    let cfg = small(2);
    let report = run_experiment(&cfg).unwrap();
    // ceil(3/2) newest and floor(3/2) oldest stream positions, per user and realization
    assert!(report.rows.iter().all(|r| r.edge_excluded == (3 * 2 * 6) as u64));
    let incl = run_experiment(&SimConfig { exclude_edges: false, ..cfg }).unwrap();
    assert!(incl.rows.iter().all(|r| r.edge_excluded == 0));
}

#[test]
fn wfq_not_worse_than_wf_with_one_bit() {
    let report = run_experiment(&SimConfig { realizations: 10, ..small(3) }).unwrap();
    for e in [10.0, 20.0] {
        let wf = report.row(e, 32, Method::Wf).unwrap();
        let wfq = report.row(e, 32, Method::WfQ).unwrap();
        assert!(wfq.mse <= wf.mse, "{e} dB: WF_Q {} vs WF {}", wfq.mse, wf.mse);
    }
}

#[test]
fn unquantized_methods_coincide_and_improve_with_snr() {
    let report = run_experiment(&SimConfig { quant_bits: None, ..small(4) }).unwrap();
    let mut prev = f64::INFINITY;
    for &e in &[0.0, 10.0, 20.0] {
        let wf = report.row(e, 32, Method::Wf).unwrap();
        let wfq = report.row(e, 32, Method::WfQ).unwrap();
        assert_eq!(wf.mse, wfq.mse);
        assert!(wf.mse < prev);
        prev = wf.mse;
    }
}

#[test]
fn ber_decreases_with_snr_unquantized() {
    let report = run_experiment(&SimConfig { quant_bits: None, ..small(5) }).unwrap();
    let bers: Vec<f64> = [0.0, 10.0, 20.0].iter().map(|&e| report.row(e, 32, Method::WfQ).unwrap().ber).collect();
    assert!(bers[0] > bers[1] && bers[1] >= bers[2], "{bers:?}");
}

#[test]
fn noiseless_flat_channel_is_recovered() {
    let cfg = SimConfig {
        users: 1,
        antennas: 4,
        total_taps: 1,
        pdp: PdpSpec::Eva { sample_period_ns: None },
        modulation: 16,
        ebn0_grid: vec![120.0],
        block_lens: vec![8],
        quant_bits: None,
        ..small(6)
    };
    let report = run_experiment(&cfg).unwrap();
    for r in &report.rows {
        assert!(r.mse < 1e-6, "mse {}", r.mse);
        assert_eq!(r.bit_errors, 0);
    }
}

#[test]
fn longer_discard_does_not_hurt() {
    let base = SimConfig { realizations: 8, ebn0_grid: vec![15.0], block_lens: vec![32], ..small(7) };
    let mut prev = f64::INFINITY;
    for overlap in [3, 9, 17] {
        let report = run_experiment(&SimConfig { overlap: Some(overlap), ..base.clone() }).unwrap();
        let mse = report.row(15.0, 32, Method::WfQ).unwrap().mse;
        assert!(mse <= prev * 1.02, "L'={overlap}: {mse} vs {prev}");
        prev = mse;
    }
}

#[test]
fn seeded_runs_are_reproducible() {
    let cfg = small(8);
    let a = run_experiment(&SimConfig { workers: Some(1), ..cfg.clone() }).unwrap();
    let b = run_experiment(&SimConfig { workers: Some(3), ..cfg.clone() }).unwrap();
    assert_eq!(a.rows, b.rows);
    let c = run_experiment(&SimConfig { seed: 9, ..cfg }).unwrap();
    assert_ne!(a.rows, c.rows);
}

#[test]
fn infeasible_block_length_is_config_error() {
    let err = run_experiment(&SimConfig { block_lens: vec![2], ..small(10) }).unwrap_err();
    assert!(matches!(err, Error::Config(ref m) if m.contains("block length 2")), "{err}");
}

#[test]
fn mean_trace_tracks_expectation() {
    let report = run_experiment(&SimConfig { realizations: 200, coherence: 64, ebn0_grid: vec![0.0], ..small(11) }).unwrap();
    let expect = (8 * 2) as f64; // M K per slot
    assert!((report.mean_trace - expect).abs() < 0.1 * expect, "{}", report.mean_trace);
    let sx2 = ebn0_to_sigma_x2(0.0, report.mean_trace, 2, 8, 1.0, 2).unwrap();
    assert_eq!(report.sigma_x2[0], sx2);
}

#[test]
fn trace_scales_with_block_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let taps = generate_channel(&PowerDelayProfile::eva(16).unwrap(), 4, 2, &mut rng).unwrap();
    assert!((block_toeplitz_trace(&taps, 64) - 64.0 * block_toeplitz_trace(&taps, 1)).abs() < 1e-9);
}

#[test]
fn profile_edges_exceed_center() {
    let cfg = SimConfig { realizations: 20, coherence: 512, antennas: 8, total_taps: 5, ..small(13) };
    let req = ProfileRequest { n_b: 32, ebn0_db: 10.0, method: Method::WfQ };
    let p = per_position_error_profile(&cfg, req).unwrap();
    assert_eq!(p.power.len(), 32);
    let (edge, center) = p.edge_center_means(2, 2);
    assert!(edge > center, "edge {edge} center {center}");
}
