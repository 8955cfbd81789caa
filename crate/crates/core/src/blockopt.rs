//! Complexity model of overlap-save FDE and the optimal block length.
//!
//! Costs are counted in complex multiplications:
//!
//! * dynamic cost per processed frame of `N_b` samples (antenna FFTs, subband
//!   filtering, user IFFTs): `(M + K) N_b log2 N_b + K M N_b`;
//! * static cost per coherence block (tap FFTs and filter design for every
//!   subband): `(K M log2 N_b + K M + 2 K^2 M + K^3) N_b`;
//! * cost per estimated symbol, with `T_c / (N_b - L')` frames per coherence
//!   block: `T_s / (K T_c) + T_d / (K (N_b - L'))`.
//!
//! `log2` is real-valued and the frame count is continuous unless
//! [`FrameCount::Whole`] is requested.

use serde::Serialize;

use crate::{Error, Result};

/// Above this many candidates the exhaustive scan switches to coarse-to-fine.
pub const EXHAUSTIVE_LIMIT: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ComplexityParams {
    pub users: usize,
    pub antennas: usize,
    /// Overlap `L'` (samples discarded per frame).
    pub overlap: usize,
    /// Coherence time `T_c` in symbols.
    pub coherence: usize,
}

impl ComplexityParams {
    pub fn new(users: usize, antennas: usize, overlap: usize, coherence: usize) -> Result<Self> {
        if users == 0 || antennas == 0 || coherence == 0 {
            return Err(Error::Config(format!(
                "users, antennas and coherence time must be positive (K={users}, M={antennas}, T_c={coherence})"
            )));
        }
        if coherence < overlap + 1 {
            return Err(Error::Constraint(format!(
                "no feasible block length: T_c = {coherence} < L' + 1 = {}",
                overlap + 1
            )));
        }
        Ok(Self { users, antennas, overlap, coherence })
    }

    /// Smallest feasible block length `L' + 1`.
    pub fn min_block(&self) -> usize {
        self.overlap + 1
    }
}

/// How frames per coherence block are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameCount {
    /// `T_c / (N_b - L')` as a real number.
    #[default]
    Continuous,
    /// `ceil((T_c - L') / (N_b - L'))` whole frames.
    Whole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    /// Every integer in `[L' + 1, T_c]`.
    Exhaustive,
    /// Powers of two in `[L' + 1, T_c]`.
    PowerOfTwo,
}

/// One sample of the cost curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub n_b: usize,
    pub t_sym: f64,
    pub t_s: f64,
    pub t_d_per_frame: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptResult {
    pub n_opt: usize,
    /// Cheaper of the powers of two bracketing `n_opt`, if any is feasible.
    pub n_opt_pow2: Option<usize>,
    pub cost_at_opt: f64,
    #[serde(skip)]
    pub curve: Option<Vec<CurvePoint>>,
}

/// Dynamic cost `T_d(N_b)` of one frame.
pub fn dynamic_cost(n_b: usize, p: &ComplexityParams) -> f64 {
    let (n, m, k) = (n_b as f64, p.antennas as f64, p.users as f64);
    (m + k) * n * n.log2() + k * m * n
}

/// Static cost `T_s(N_b)` of one coherence block.
pub fn static_cost(n_b: usize, p: &ComplexityParams) -> f64 {
    let (n, m, k) = (n_b as f64, p.antennas as f64, p.users as f64);
    (k * m * n.log2() + k * m + 2.0 * k * k * m + k * k * k) * n
}

fn check_feasible(n_b: usize, p: &ComplexityParams) -> Result<()> {
    if n_b < p.min_block() || n_b > p.coherence {
        return Err(Error::Constraint(format!(
            "block length {n_b} outside [{}, {}]",
            p.min_block(),
            p.coherence
        )));
    }
    Ok(())
}

/// Cost per estimated symbol `T_sym(N_b)` with a continuous frame count.
pub fn per_symbol_cost(n_b: usize, p: &ComplexityParams) -> Result<f64> {
    per_symbol_cost_with(n_b, p, FrameCount::Continuous)
}

pub fn per_symbol_cost_with(n_b: usize, p: &ComplexityParams, frames: FrameCount) -> Result<f64> {
    check_feasible(n_b, p)?;
    Ok(cost_unchecked(n_b, p, frames))
}

fn cost_unchecked(n_b: usize, p: &ComplexityParams, frames: FrameCount) -> f64 {
    let k = p.users as f64;
    let t_c = p.coherence as f64;
    let retained = (n_b - p.overlap) as f64;
    match frames {
        FrameCount::Continuous => static_cost(n_b, p) / (k * t_c) + dynamic_cost(n_b, p) / (k * retained),
        FrameCount::Whole => {
            let count = (p.coherence - p.overlap).div_ceil(n_b - p.overlap) as f64;
            (static_cost(n_b, p) + dynamic_cost(n_b, p) * count) / (k * t_c)
        }
    }
}

fn curve_point(n_b: usize, p: &ComplexityParams, frames: FrameCount) -> CurvePoint {
    CurvePoint {
        n_b,
        t_sym: cost_unchecked(n_b, p, frames),
        t_s: static_cost(n_b, p),
        t_d_per_frame: dynamic_cost(n_b, p),
    }
}

/// First minimizer of `f` over `lo..=hi`. Ranges longer than `limit` are
/// scanned on a coarse grid first, then densely around the coarse winner.
fn argmin_scan<F: Fn(usize) -> f64>(lo: usize, hi: usize, limit: usize, f: F) -> (usize, f64) {
    let dense = |a: usize, b: usize| {
        let mut best = (a, f(a));
        for n in a + 1..=b {
            let v = f(n);
            if v < best.1 {
                best = (n, v);
            }
        }
        best
    };
    let len = hi - lo + 1;
    if len <= limit {
        return dense(lo, hi);
    }
    let stride = len.div_ceil(limit.max(2) / 2);
    let mut coarse = (lo, f(lo));
    let mut n = lo;
    while n <= hi {
        let v = f(n);
        if v < coarse.1 {
            coarse = (n, v);
        }
        n += stride;
    }
    let tail = f(hi);
    if tail < coarse.1 {
        coarse = (hi, tail);
    }
    dense(coarse.0.saturating_sub(stride).max(lo), (coarse.0 + stride).min(hi))
}

fn pow2_bracket(n: usize) -> (usize, usize) {
    let next = n.next_power_of_two();
    let prior = if next == n { n } else { next / 2 };
    (prior, next)
}

/// Solves `argmin T_sym(N_b)` subject to `L' + 1 <= N_b <= T_c`.
pub fn optimal_block_length(p: &ComplexityParams, mode: SearchMode, with_curve: bool) -> Result<OptResult> {
    optimal_block_length_with(p, mode, FrameCount::Continuous, with_curve, EXHAUSTIVE_LIMIT)
}

pub fn optimal_block_length_with(
    p: &ComplexityParams,
    mode: SearchMode,
    frames: FrameCount,
    with_curve: bool,
    limit: usize,
) -> Result<OptResult> {
    let (lo, hi) = (p.min_block(), p.coherence);
    if hi < lo {
        return Err(Error::Constraint(format!("no feasible block length in [{lo}, {hi}]")));
    }
    let cost = |n: usize| cost_unchecked(n, p, frames);
    let pow2s: Vec<usize> = (0..usize::BITS)
        .map(|e| 1usize << e)
        .take_while(|&n| n <= hi)
        .filter(|&n| n >= lo)
        .collect();
    let best_of = |cands: &[usize]| {
        cands
            .iter()
            .filter(|&&n| n >= lo && n <= hi)
            .map(|&n| (n, cost(n)))
            .fold(None, |acc: Option<(usize, f64)>, c| match acc {
                Some(a) if a.1 <= c.1 => Some(a),
                _ => Some(c),
            })
    };
    let (n_opt, cost_at_opt, n_opt_pow2) = match mode {
        SearchMode::Exhaustive => {
            let (n, v) = argmin_scan(lo, hi, limit, cost);
            let (prior, next) = pow2_bracket(n);
            (n, v, best_of(&[prior, next]).map(|b| b.0))
        }
        SearchMode::PowerOfTwo => {
            let (n, v) = best_of(&pow2s).ok_or_else(|| {
                Error::Constraint(format!("no power of two in [{lo}, {hi}]"))
            })?;
            (n, v, Some(n))
        }
    };
    let curve = with_curve.then(|| match mode {
        SearchMode::Exhaustive => (lo..=hi).map(|n| curve_point(n, p, frames)).collect(),
        SearchMode::PowerOfTwo => pow2s.iter().map(|&n| curve_point(n, p, frames)).collect(),
    });
    Ok(OptResult { n_opt, n_opt_pow2, cost_at_opt, curve })
}

/// Writes the curve as CSV `n_b,t_sym,t_s,t_d_per_frame`.
pub fn write_curve_csv<W: std::io::Write>(curve: &[CurvePoint], w: W) -> Result<()> {
    use crate::numfmt::sig12;
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["n_b", "t_sym", "t_s", "t_d_per_frame"])?;
    for c in curve {
        wr.write_record([c.n_b.to_string(), sig12(c.t_sym), sig12(c.t_s), sig12(c.t_d_per_frame)])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(k: usize, m: usize, lp: usize, tc: usize) -> ComplexityParams {
        ComplexityParams::new(k, m, lp, tc).unwrap()
    }

    #[test]
    fn dynamic_cost_points() {
        let p = params(2, 64, 127, 50_000);
        assert_eq!(dynamic_cost(1024, &p), 806_912.0);
        assert_eq!(dynamic_cost(2, &p), 388.0);
        let p2 = params(2, 128, 127, 50_000);
        assert!(dynamic_cost(1024, &p2) > dynamic_cost(1024, &p));
    }

    #[test]
    fn static_cost_points() {
        assert_eq!(static_cost(1024, &params(2, 64, 127, 50_000)), 1_974_272.0);
        assert_eq!(static_cost(2, &params(1, 1, 0, 16)), 10.0);
        // Theta(N log N): doubling N slightly more than doubles the cost
        let p = params(2, 64, 0, 1 << 20);
        let ratio = static_cost(1 << 16, &p) / static_cost(1 << 15, &p);
        assert!(ratio > 2.0 && ratio < 2.2);
    }

    #[test]
    fn per_symbol_cost_reference_point() {
        let p = params(2, 64, 127, 50_000);
        let v = per_symbol_cost(1024, &p).unwrap();
        let expect = 1_974_272.0 / 100_000.0 + 806_912.0 / (2.0 * 897.0);
        assert!((v - expect).abs() < 1e-9);
        assert!((v - 469.6).abs() / 469.6 < 1e-3);
    }

    #[test]
    fn per_symbol_cost_constraints() {
        let p = params(2, 64, 127, 50_000);
        assert!(matches!(per_symbol_cost(127, &p), Err(Error::Constraint(_))));
        assert!(matches!(per_symbol_cost(50_001, &p), Err(Error::Constraint(_))));
        let left = per_symbol_cost(128, &p).unwrap();
        let dyn_only = dynamic_cost(128, &p) / 2.0;
        assert!((left - static_cost(128, &p) / 100_000.0 - dyn_only).abs() < 1e-9);
        assert!(left > per_symbol_cost(129, &p).unwrap());
    }

    #[test]
    fn static_cost_amortizes_away() {
        let p = params(2, 64, 31, usize::MAX / 4);
        let v = per_symbol_cost(256, &p).unwrap();
        let lim = dynamic_cost(256, &p) / (2.0 * 225.0);
        assert!((v - lim).abs() / lim < 1e-9);
    }

    #[test]
    fn whole_frame_mode_rounds_up() {
        let p = params(1, 1, 2, 10);
        // 8 retained samples in blocks of 4 retained: ceil(8/4) = 2 frames
        let v = per_symbol_cost_with(6, &p, FrameCount::Whole).unwrap();
        let expect = (static_cost(6, &p) + 2.0 * dynamic_cost(6, &p)) / 10.0;
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn infeasible_params() {
        assert!(matches!(ComplexityParams::new(2, 64, 127, 100), Err(Error::Constraint(_))));
        assert!(ComplexityParams::new(0, 64, 1, 100).is_err());
    }

    #[test]
    fn small_case_matches_enumeration() {
        let p = params(1, 1, 0, 16);
        let res = optimal_block_length(&p, SearchMode::Exhaustive, true).unwrap();
        let brute = (1..=16)
            .map(|n| (n, per_symbol_cost(n, &p).unwrap()))
            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        assert_eq!(res.n_opt, brute.0);
        assert_eq!(res.cost_at_opt, brute.1);
        assert_eq!(res.curve.unwrap().len(), 16);
    }

    #[test]
    fn coarse_to_fine_agrees_with_full_scan() {
        for (lp, tc) in [(31, 50_000), (127, 50_000), (7, 5_000), (127, 5_000)] {
            let p = params(2, 64, lp, tc);
            let full = optimal_block_length(&p, SearchMode::Exhaustive, false).unwrap();
            let coarse =
                optimal_block_length_with(&p, SearchMode::Exhaustive, FrameCount::Continuous, false, 64).unwrap();
            assert_eq!(full.n_opt, coarse.n_opt);
        }
    }

    #[test]
    fn result_invariants() {
        for lp in [7, 15, 31, 63, 127] {
            let p = params(2, 64, lp, 50_000);
            let r = optimal_block_length(&p, SearchMode::Exhaustive, false).unwrap();
            assert!(r.n_opt > lp && r.n_opt <= 50_000);
            assert_eq!(r.cost_at_opt, per_symbol_cost(r.n_opt, &p).unwrap());
            let pw = r.n_opt_pow2.unwrap();
            assert!(pw.is_power_of_two());
            let (prior, next) = pow2_bracket(r.n_opt);
            assert!(pw == prior || pw == next);
        }
    }

    #[test]
    fn unimodal_on_reference_sets() {
        for m in [64, 128] {
            for lp in [31, 127] {
                for tc in [5_000, 50_000] {
                    let p = params(2, m, lp, tc);
                    let curve = optimal_block_length(&p, SearchMode::Exhaustive, true).unwrap().curve.unwrap();
                    let turn = curve
                        .windows(2)
                        .position(|w| w[1].t_sym > w[0].t_sym)
                        .unwrap_or(curve.len() - 1);
                    assert!(curve[turn..].windows(2).all(|w| w[1].t_sym >= w[0].t_sym));
                }
            }
        }
    }

    #[test]
    fn argmin_grows_with_overlap() {
        let mut prev = 0;
        for lp in [7, 15, 31, 63, 127] {
            let n = optimal_block_length(&params(2, 64, lp, 50_000), SearchMode::Exhaustive, false)
                .unwrap()
                .n_opt;
            assert!(n >= prev);
            prev = n;
        }
    }

    #[test]
    fn argmin_shrinks_with_coherence() {
        for lp in [31, 127] {
            let long = optimal_block_length(&params(2, 64, lp, 50_000), SearchMode::Exhaustive, false).unwrap();
            let short = optimal_block_length(&params(2, 64, lp, 5_000), SearchMode::Exhaustive, false).unwrap();
            assert!(short.n_opt <= long.n_opt);
        }
    }

    #[test]
    fn antenna_count_offsets_cost() {
        // The integer argmin moves by at most one sample between M = 64 and
        // M = 128 (the K^3 and K N log N terms do not scale with M), while the
        // implementable power-of-two optimum is unchanged.
        for lp in [31, 127] {
            let a = optimal_block_length(&params(2, 64, lp, 50_000), SearchMode::Exhaustive, true).unwrap();
            let b = optimal_block_length(&params(2, 128, lp, 50_000), SearchMode::Exhaustive, true).unwrap();
            assert!(a.n_opt.abs_diff(b.n_opt) <= 1);
            assert_eq!(a.n_opt_pow2, b.n_opt_pow2);
            let pb = params(2, 128, lp, 50_000);
            let cross = per_symbol_cost(a.n_opt, &pb).unwrap();
            assert!((cross - b.cost_at_opt) / b.cost_at_opt < 1e-6);
            for (x, y) in a.curve.unwrap().iter().zip(b.curve.unwrap().iter()) {
                assert!(y.t_sym > x.t_sym);
            }
        }
    }

    #[test]
    fn pow2_near_optimal() {
        for m in [64, 128] {
            for lp in [31, 127] {
                let p = params(2, m, lp, 50_000);
                let r = optimal_block_length(&p, SearchMode::Exhaustive, false).unwrap();
                let pw = per_symbol_cost(r.n_opt_pow2.unwrap(), &p).unwrap();
                assert!(pw <= 1.25 * r.cost_at_opt);
                let scan = optimal_block_length(&p, SearchMode::PowerOfTwo, true).unwrap();
                assert!(scan.cost_at_opt <= pw);
                assert!(scan.curve.unwrap().iter().all(|c| c.n_b.is_power_of_two()));
            }
        }
    }

    #[test]
    fn pow2_mode_without_candidates() {
        let p = params(2, 64, 99, 120);
        assert!(matches!(
            optimal_block_length(&p, SearchMode::PowerOfTwo, false),
            Err(Error::Constraint(_))
        ));
        let r = optimal_block_length(&p, SearchMode::Exhaustive, false).unwrap();
        assert_eq!(r.n_opt_pow2, None);
    }

    #[test]
    fn curve_csv_header() {
        let p = params(2, 64, 127, 50_000);
        let pts = [curve_point(1024, &p, FrameCount::Continuous)];
        let mut buf = Vec::new();
        write_curve_csv(&pts, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "n_b,t_sym,t_s,t_d_per_frame");
        assert!(lines.next().unwrap().starts_with("1024,469.52"));
    }
}
