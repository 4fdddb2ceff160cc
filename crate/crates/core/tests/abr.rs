use proptest::prelude::*;

use pcsr_core::abr::{
    estimate_throughput, mpc_select, predict_stall, qoe_chunk, AbrConfig, AbrState, ChunkForecast,
    ChunkOutcome, QoeWeights, QualityCurve, RatioSet,
};
use pcsr_core::streaming::{simulate, synthetic_manifest, NetworkTrace, SessionConfig, SrLatencyModel};

fn forecasts(bytes_at_one: f64, candidates: &[f64], n: usize) -> Vec<ChunkForecast> {
    (0..n)
        .map(|_| ChunkForecast {
            frames: 30,
            duration_s: 1.0,
            bytes: candidates.iter().map(|r| r * bytes_at_one).collect(),
        })
        .collect()
}

fn state_with(cfg: &AbrConfig, bps: &[f64], buffer: f64, last: Option<f64>) -> AbrState {
    let mut s = AbrState::new(cfg);
    for &b in bps {
        s.record_throughput(b);
    }
    s.buffer_level_s = buffer;
    s.last_ratio = last;
    s
}

/// Enumerates every ratio sequence over the horizon and returns the first
/// ratio of the best one (ties to the higher first ratio).
fn brute_force_select(state: &AbrState, fc: &[ChunkForecast], cfg: &AbrConfig) -> f64 {
    let cands = cfg.ratios.candidates().unwrap();
    let tput = state.throughput_estimate().unwrap();
    let sr = state.sr_latency_estimate();
    let h = fc.len().min(cfg.horizon);
    let m = cands.len();
    let mut best = (f64::NEG_INFINITY, 0.0);
    for code in 0..m.pow(h as u32) {
        let mut idx = Vec::with_capacity(h);
        let mut c = code;
        for _ in 0..h {
            idx.push(c % m);
            c /= m;
        }
        let mut buffer = state.buffer_level_s;
        let mut prev = state.last_ratio;
        let mut total = 0.0;
        for (t, &i) in idx.iter().enumerate() {
            let r = cands[i];
            let stall = predict_stall(fc[t].bytes[i], tput, sr, fc[t].frames, buffer).unwrap();
            total += qoe_chunk(r, prev.unwrap_or(r), stall, &cfg.weights, &cfg.curve).unwrap();
            let busy = 8.0 * fc[t].bytes[i] / tput + fc[t].frames as f64 * sr;
            buffer = (buffer - busy).max(0.0) + fc[t].duration_s;
            prev = Some(r);
        }
        let first = cands[idx[0]];
        if total > best.0 || (total == best.0 && first > best.1) {
            best = (total, first);
        }
    }
    best.1
}

#[test]
fn throughput_examples() {
    let mbps = |v: &[f64]| v.iter().map(|x| x * 1e6).collect::<Vec<_>>();
    assert!((estimate_throughput(&mbps(&[10.0, 10.0, 10.0]), 5).unwrap() - 10e6).abs() < 1e-6);
    assert!((estimate_throughput(&mbps(&[10.0, 40.0]), 5).unwrap() - 16e6).abs() < 1e-6);
    let spike = mbps(&[1.0, 1.0, 1.0, 100.0]);
    assert!(estimate_throughput(&spike, 5).unwrap() < spike.iter().sum::<f64>() / 4.0);
    assert!(estimate_throughput(&[], 5).is_err());
    assert!(estimate_throughput(&[1e6, 0.0], 5).is_err());
}

#[test]
fn qoe_example_with_a_measured_table() {
    let curve = QualityCurve::Table {
        points: vec![(0.1, 0.3), (0.5, 0.8), (1.0, 1.0)],
    };
    let m = 2.0;
    let w = QoeWeights {
        alpha: 1.0,
        beta: 1.0,
        gamma: 1.0,
        drop_penalty_multiplier: m,
    };
    let got = qoe_chunk(0.5, 1.0, 0.2, &w, &curve).unwrap();
    assert!((got - (0.8 - 0.2 * m - 0.2)).abs() < 1e-12);
    assert!(qoe_chunk(1.5, 1.0, 0.0, &w, &curve).is_err());
    assert!(qoe_chunk(0.0, 1.0, 0.0, &w, &curve).is_err());
}

#[test]
fn stall_examples() {
    assert_eq!(predict_stall(1e6, 1e6, 0.01, 30, 1e4).unwrap(), 0.0);
    // 0.5 s download plus 0.1 s of SR against an empty buffer.
    let s = predict_stall(62_500.0, 1e6, 0.1 / 30.0, 30, 0.0).unwrap();
    assert!((s - 0.6).abs() < 1e-12);
}

#[test]
fn mpc_matches_exhaustive_enumeration_on_the_ladder() {
    let cfg = AbrConfig {
        ratios: RatioSet::ladder(),
        ..AbrConfig::default()
    };
    let cands = cfg.ratios.candidates().unwrap();
    for bps in [2e6, 10e6, 30e6, 60e6, 90e6, 200e6] {
        for buffer in [0.0, 0.7, 2.5] {
            for last in [None, Some(0.125), Some(1.0)] {
                let st = state_with(&cfg, &[bps, bps * 1.3, bps * 0.8], buffer, last);
                let fc = forecasts(9e6, &cands, 4);
                let got = mpc_select(&st, &fc, &cfg).unwrap();
                assert_eq!(got.fetch_ratio, brute_force_select(&st, &fc, &cfg), "bps {bps} buffer {buffer} last {last:?}");
                assert_eq!(got.sr_ratio, 1.0 / got.fetch_ratio);
            }
        }
    }
}

#[test]
fn mpc_matches_exhaustive_enumeration_on_a_coarse_grid() {
    let cfg = AbrConfig {
        ratios: RatioSet::Grid { r_min: 0.1, step: 0.05 },
        horizon: 3,
        ..AbrConfig::default()
    };
    let cands = cfg.ratios.candidates().unwrap();
    for bps in [5e6, 40e6, 75e6] {
        let st = state_with(&cfg, &[bps], 1.0, Some(0.5));
        let fc = forecasts(9e6, &cands, 3);
        assert_eq!(mpc_select(&st, &fc, &cfg).unwrap().fetch_ratio, brute_force_select(&st, &fc, &cfg));
    }
}

#[test]
fn empty_history_starts_at_the_floor() {
    let cfg = AbrConfig::default();
    let cands = cfg.ratios.candidates().unwrap();
    let d = mpc_select(&AbrState::new(&cfg), &forecasts(1e6, &cands, 3), &cfg).unwrap();
    assert_eq!(d.fetch_ratio, 0.1);
}

#[test]
fn replaying_a_session_reproduces_its_decisions() {
    let cfg = AbrConfig::default();
    let cands = cfg.ratios.candidates().unwrap();
    let fc = forecasts(9e6, &cands, 3);
    let run = || {
        let mut st = AbrState::new(&cfg);
        let mut log = Vec::new();
        for (i, bps) in [30e6, 45e6, 12e6, 80e6, 80e6, 5e6, 60e6].into_iter().enumerate() {
            let d = mpc_select(&st, &fc, &cfg).unwrap();
            log.push(d);
            let download_s = 8.0 * 9e6 * d.fetch_ratio / bps;
            st.update_after_chunk(&ChunkOutcome {
                ratio: d.fetch_ratio,
                throughput_bps: bps,
                sr_latency_per_frame_s: 0.01 + 0.001 * i as f64,
                download_s,
                sr_s: 0.3,
                chunk_duration_s: 1.0,
            });
            assert!(st.buffer_level_s >= 0.0);
        }
        log
    };
    assert_eq!(run(), run());
}

/// 100 Mbps for 30 s, then 20 Mbps.
fn step_trace() -> NetworkTrace {
    NetworkTrace::new(&[(0.0, 100e6), (30.0, 20e6)]).unwrap()
}

#[test]
fn bandwidth_drop_lowers_ratios_and_beats_every_fixed_ratio() {
    let manifest = synthetic_manifest("step", 50, 30, 1.0, 20_000, 0.0, 3).unwrap();
    let trace = step_trace();
    let model = SrLatencyModel::default();
    let adaptive = simulate(&trace, &manifest, &SessionConfig::default(), &model).unwrap();

    let before: Vec<f64> = adaptive
        .chunks
        .iter()
        .filter(|c| c.request_s > 10.0 && c.request_s < 30.0)
        .map(|c| c.ratio)
        .collect();
    let after: Vec<f64> = adaptive
        .chunks
        .iter()
        .filter(|c| c.request_s > 40.0 && c.request_s < 60.0)
        .map(|c| c.ratio)
        .collect();
    assert!(!before.is_empty() && !after.is_empty());
    let lowest_before = before.iter().copied().fold(f64::INFINITY, f64::min);
    let highest_after = after.iter().copied().fold(0.0, f64::max);
    assert!(highest_after <= lowest_before, "before {before:?} after {after:?}");

    for r in SessionConfig::default().abr.ratios.candidates().unwrap() {
        let fixed = SessionConfig {
            abr: AbrConfig {
                ratios: RatioSet::Discrete { ratios: vec![r] },
                ..AbrConfig::default()
            },
            ..SessionConfig::default()
        };
        let q = simulate(&trace, &manifest, &fixed, &model).unwrap().totals.qoe;
        assert!(adaptive.totals.qoe >= q, "fixed {r}: {q} > adaptive {}", adaptive.totals.qoe);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn more_bandwidth_never_lowers_the_choice(
        samples in prop::collection::vec(1e6f64..200e6, 1..6),
        buffer in 0.0f64..6.0,
        last in prop::option::of(0.1f64..=1.0),
        scale in 1.0f64..4.0,
    ) {
        let cfg = AbrConfig { ratios: RatioSet::Grid { r_min: 0.1, step: 0.03 }, ..AbrConfig::default() };
        let cands = cfg.ratios.candidates().unwrap();
        let fc = forecasts(9e6, &cands, 3);
        let lo = mpc_select(&state_with(&cfg, &samples, buffer, last), &fc, &cfg).unwrap();
        let scaled: Vec<f64> = samples.iter().map(|s| s * scale).collect();
        let hi = mpc_select(&state_with(&cfg, &scaled, buffer, last), &fc, &cfg).unwrap();
        prop_assert!(hi.fetch_ratio >= lo.fetch_ratio);
    }

    #[test]
    fn no_stall_when_the_buffer_covers_the_work(
        bytes in 1.0f64..1e8, bps in 1e5f64..1e9, sr in 0.0f64..0.1, frames in 1usize..60, extra in 0.0f64..5.0,
    ) {
        let busy = 8.0 * bytes / bps + frames as f64 * sr;
        prop_assert_eq!(predict_stall(bytes, bps, sr, frames, busy + extra).unwrap(), 0.0);
    }

    #[test]
    fn drops_cost_at_least_as_much_as_rises(a in 0.1f64..=1.0, b in 0.1f64..=1.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let w = QoeWeights::default();
        let c = QualityCurve::default();
        let drop = c.eval(lo) - qoe_chunk(lo, hi, 0.0, &w, &c).unwrap();
        let rise = c.eval(hi) - qoe_chunk(hi, lo, 0.0, &w, &c).unwrap();
        prop_assert!(drop >= rise);
    }
}
