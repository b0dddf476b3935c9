mod common;

use std::sync::Arc;
use std::time::Duration;

use proptest::prelude::*;
use tokio::sync::broadcast;

use streamgate_core::bench::{sweep, BenchConfig, BenchInput, ClockKind, Strategy, SyntheticSpec};
use streamgate_core::detector::{BoundingBox, Detection, LatencyModel, MockDetector, MockRule, MockScript};
use streamgate_core::eval::iou;
use streamgate_core::frame::{generate_synthetic_stream, Fps};
use streamgate_core::metrics::render_table;
use streamgate_core::overlay::{OverlayConfig, OverlaySink};
use streamgate_core::sampler::{
    run_loop, LoopControls, NullSink, ReadCost, RunReport, SamplerConfig, SamplerMode, SamplerState, TimedSource,
    VirtualClock,
};

fn live_run(n: u64, fps: u32, dc: f64, latency: f64, sink: &mut OverlaySink) -> RunReport {
    let clock = Arc::new(VirtualClock::new());
    let src = generate_synthetic_stream(n, 8, 6, Fps::integer(fps), 5);
    let mut src = TimedSource::new(src, clock.clone(), ReadCost::Zero).paced();
    let mut state = SamplerState::new(SamplerConfig::new(dc, SamplerMode::LiveLatestWins).unwrap());
    let mut det = MockDetector::new(MockScript {
        rules: vec![MockRule::new(0..u64::MAX, vec![Detection::new("car", 0.8, BoundingBox::new(1.0, 1.0, 5.0, 4.0))])],
        ..MockScript::fixed_latency(latency)
    });
    run_loop(&mut src, &mut state, &mut det, sink, clock.as_ref(), &LoopControls::default())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn offline_submissions_are_spaced_by_more_than_dc(
        n in 1u64..400,
        read_ms in 0u64..50,
        lat in 0.0f64..0.5,
        dc in 0.0001f64..1.0,
    ) {
        let clock = Arc::new(VirtualClock::new());
        let src = generate_synthetic_stream(n, 1, 1, Fps::integer(25), 0);
        let mut src = TimedSource::new(src, clock.clone(), ReadCost::Fixed(Duration::from_millis(read_ms)));
        let mut state = SamplerState::new(SamplerConfig::new(dc, SamplerMode::OfflineBlocking).unwrap());
        let mut det = MockDetector::new(MockScript::fixed_latency(lat));
        let r = run_loop(&mut src, &mut state, &mut det, &mut NullSink::default(), clock.as_ref(), &LoopControls::default());
        prop_assert!(r.tvfa <= r.total_frames);
        prop_assert_eq!(r.total_frames, n);
        prop_assert_eq!(r.submission_times.len() as u64, r.tvfa);
        for w in r.submission_times.windows(2) {
            prop_assert!(w[1] - w[0] > dc);
        }
    }

    #[test]
    fn live_mode_plays_every_frame_once_in_order(
        n in 1u64..300,
        fps in prop::sample::select(vec![10u32, 25, 30, 60]),
        dc in 0.0f64..0.5,
        lat in 0.0f64..1.0,
    ) {
        let mut sink = OverlaySink::new(OverlayConfig::default()).with_trace();
        let r = live_run(n, fps, dc, lat, &mut sink);
        let seqs: Vec<u64> = sink.trace().iter().map(|t| t.seq).collect();
        prop_assert_eq!(seqs, (0..n).collect::<Vec<_>>());
        prop_assert!(r.max_in_flight <= 1);
        for w in r.submission_times.windows(2) {
            prop_assert!(w[1] - w[0] > dc);
        }
    }

    #[test]
    fn iou_is_symmetric_and_bounded(
        a in prop::array::uniform4(-50.0f64..50.0),
        b in prop::array::uniform4(-50.0f64..50.0),
    ) {
        let mk = |v: [f64; 4]| BoundingBox::new(v[0].min(v[2]), v[1].min(v[3]), v[0].max(v[2]), v[1].max(v[3]));
        let (a, b) = (mk(a), mk(b));
        let x = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert!((x - iou(&b, &a)).abs() < 1e-12);
        prop_assert!((x - common::iou_direct(&a, &b)).abs() < 1e-9);
    }
}

#[test]
fn monitors_do_not_change_the_run() {
    let plain = {
        let mut sink = OverlaySink::new(OverlayConfig::default());
        live_run(400, 25, 0.05, 0.4, &mut sink)
    };
    let (tx, _) = broadcast::channel(4);
    let (etx, _) = broadcast::channel(256);
    // five viewers that never read, so the channel lags the whole time
    let viewers: Vec<_> = (0..5).map(|_| (tx.subscribe(), etx.subscribe())).collect();
    let watched = {
        let mut sink = OverlaySink::new(OverlayConfig::default()).with_preview(tx.clone(), 80).with_events(etx.clone());
        live_run(400, 25, 0.05, 0.4, &mut sink)
    };
    assert_eq!(plain, watched);
    drop(viewers);
}

fn table_cfg(strategy: Strategy) -> BenchConfig {
    BenchConfig {
        input: BenchInput::Synthetic(SyntheticSpec {
            n: 925,
            width: 64,
            height: 36,
            fps: Fps::integer(25),
            seed: 1,
        }),
        dc_list: vec![1.0, 0.1, 0.08, 0.07, 0.06, 0.05, 0.01, 0.001, 0.0001],
        latency: LatencyModel::Uniform { lo: 0.3, hi: 0.5, seed: 11 },
        read_cost: Duration::from_millis(1),
        clock: ClockKind::Virtual,
        strategy,
    }
}

#[test]
fn virtual_bench_is_reproducible_and_strategy_independent() {
    let a = render_table(&sweep(&table_cfg(Strategy::Sequential)).unwrap());
    let b = render_table(&sweep(&table_cfg(Strategy::Sequential)).unwrap());
    let c = render_table(&sweep(&table_cfg(Strategy::Parallel)).unwrap());
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(a.lines().count(), 10);
    assert!(!a.contains('\r'));
}

#[test]
fn failed_inferences_count_as_skipped() {
    let clock = Arc::new(VirtualClock::new());
    let src = generate_synthetic_stream(50, 1, 1, Fps::integer(25), 0);
    let mut src = TimedSource::new(src, clock.clone(), ReadCost::Fixed(Duration::from_millis(10)));
    let mut state = SamplerState::new(SamplerConfig::new(0.0, SamplerMode::OfflineBlocking).unwrap());
    let mut det = MockDetector::new(MockScript {
        failures: vec![3, 4, 10],
        ..MockScript::default()
    });
    let r = run_loop(&mut src, &mut state, &mut det, &mut NullSink::default(), clock.as_ref(), &LoopControls::default());
    assert_eq!(r.total_frames, 50);
    assert_eq!(r.detector_failures, 3);
    assert_eq!(r.tvfa, 47);
}
