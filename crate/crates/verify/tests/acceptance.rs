//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fail.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::Rng;

use streamgate_core::bench::{sweep, BenchConfig, BenchInput, ClockKind, Strategy, SyntheticSpec};
use streamgate_core::detector::{BoundingBox, Detection, LatencyModel, MockDetector, MockRule, MockScript};
use streamgate_core::eval::{
    annotations_to_csv, average_precision, evaluate, iou, parse_annotations_csv, parse_voc_xml, AnnotationRecord,
    EvalConfig, Prediction,
};
use streamgate_core::frame::{generate_synthetic_stream, Fps, FrameSource, TestCodecSource};
use streamgate_core::metrics::{format_2dp, render_table, MetricsState};
use streamgate_core::overlay::{OverlayConfig, OverlaySink};
use streamgate_core::rtmp::TestPublisher;
use streamgate_core::sampler::{
    run_loop, LoopControls, NullSink, ReadCost, RunReport, SamplerConfig, SamplerMode, SamplerState, TimedSource,
    VirtualClock,
};

use common::*;

/// Name, runtime budget in seconds, check.
type Criterion = (&'static str, f64, fn() -> Outcome);

struct Outcome {
    ok: bool,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Outcome {
    Outcome { ok: true, detail: detail.into() }
}

fn fail(detail: impl Into<String>) -> Outcome {
    Outcome { ok: false, detail: detail.into() }
}

fn check(ok: bool, detail: String) -> Outcome {
    Outcome { ok, detail }
}

fn offline_run(n: u64, fps: Fps, read: ReadCost, latency: LatencyModel, dc: f64) -> RunReport {
    let clock = Arc::new(VirtualClock::new());
    let src = generate_synthetic_stream(n, 1, 1, fps, 0);
    let mut src = TimedSource::new(src, clock.clone(), read);
    let mut state = SamplerState::new(SamplerConfig::new(dc, SamplerMode::OfflineBlocking).unwrap());
    let mut det = MockDetector::new(MockScript {
        latency,
        ..MockScript::default()
    });
    run_loop(&mut src, &mut state, &mut det, &mut NullSink::default(), clock.as_ref(), &LoopControls::default())
}

// ---------------------------------------------------------------- criteria

fn table1_identities() -> Outcome {
    // published counters for the two self-consistent rows
    let rows: [(f64, u64, u64, f64, &str, &str); 2] =
        [(0.05, 925, 103, 45.0, "11.13", "20.55"), (0.01, 925, 482, 154.0, "52.10", "6.00")];
    for (dc, total, tvfa, runtime, want_pfa, want_pfps) in rows {
        let m = MetricsState::new(dc);
        m.begin_run(Duration::ZERO, Some(Fps::integer(25)), dc);
        for i in 0..total {
            m.record_frame(Fps::integer(25).pts_micros(i));
        }
        for _ in 0..tvfa {
            m.record_inference(437_000);
        }
        m.end_run(Duration::from_secs_f64(runtime));
        let s = m.snapshot(Duration::from_secs(1000));
        let (pfa, pfps) = (format_2dp(s.pfa_percent), format_2dp(s.pfps));
        if pfa != want_pfa || pfps != want_pfps {
            return fail(format!("dc {dc}: pfa {pfa} pfps {pfps}, want {want_pfa} {want_pfps}"));
        }
    }
    // every row of a bench sweep against its own counters
    let cfg = BenchConfig {
        input: BenchInput::Synthetic("925,64,36,25,1".parse::<SyntheticSpec>().unwrap()),
        dc_list: vec![1.0, 0.1, 0.08, 0.07, 0.06, 0.05, 0.01, 0.001, 0.0001],
        latency: LatencyModel::Fixed(0.437),
        read_cost: Duration::from_millis(1),
        clock: ClockKind::Virtual,
        strategy: Strategy::default(),
    };
    let reports = sweep(&cfg).unwrap();
    let csv = render_table(&reports);
    let mut lines = csv.lines().skip(1);
    let mut sorted = reports.clone();
    sorted.sort_by(|a, b| b.dc.total_cmp(&a.dc));
    for r in &sorted {
        let line = lines.next().unwrap_or_default();
        let cols: Vec<&str> = line.split(',').collect();
        let pfa = format_2dp(Some(r.tvfa as f64 * 100.0 / r.total_frames as f64));
        let pfps = format_2dp(Some(r.total_frames as f64 / r.runtime_seconds));
        if cols.len() != 5 || cols[1] != pfa || cols[3] != pfps || cols[4] != r.tvfa.to_string() {
            return fail(format!("row {line:?} disagrees with tvfa {} runtime {}", r.tvfa, r.runtime_seconds));
        }
    }
    pass("rows 0.05 -> 11.13%/20.55, 0.01 -> 52.10%/6.00; 9 sweep rows self-consistent")
}

fn oracle_equivalence() -> Outcome {
    let mut rng = seeded(0x5eed);
    for k in 0..500 {
        let s = random_scenario(&mut rng);
        let lat_us: Vec<u64> = s.latency.schedule(s.frames).iter().map(|d| d.as_micros() as u64).collect();
        let (want, fired) = des_offline(&s.read_ns, &lat_us, s.dc);
        let costs = s.read_ns.iter().map(|&n| Duration::from_nanos(n)).collect();
        let r = offline_run(s.frames as u64, Fps::integer(25), ReadCost::PerFrame(costs), s.latency.clone(), s.dc);
        if r.tvfa != want {
            return fail(format!("scenario {k} ({} frames, dc {}): run_loop {} oracle {want}", s.frames, s.dc, r.tvfa));
        }
        let times_match = r.submission_times.len() == fired.len()
            && r.submission_times.iter().zip(&fired).all(|(a, &b)| (a - b as f64 / 1e9).abs() < 1e-9);
        if !times_match {
            return fail(format!("scenario {k}: submission times differ from oracle"));
        }
    }
    pass("500/500 scenarios, tvfa and submission times identical")
}

fn dc_monotonicity() -> Outcome {
    let mut rng = seeded(0xd0c);
    for k in 0..100 {
        let s = random_scenario(&mut rng);
        let mut grid: Vec<f64> = (0..5).map(|_| log_uniform_dc(&mut rng)).collect();
        grid.sort_by(f64::total_cmp);
        let costs: Vec<Duration> = s.read_ns.iter().map(|&n| Duration::from_nanos(n)).collect();
        let tvfa: Vec<u64> = grid
            .iter()
            .map(|&dc| offline_run(s.frames as u64, Fps::integer(25), ReadCost::PerFrame(costs.clone()), s.latency.clone(), dc).tvfa)
            .collect();
        if tvfa.windows(2).any(|w| w[1] > w[0]) {
            return fail(format!("scenario {k}: dc {grid:?} gave tvfa {tvfa:?}"));
        }
    }
    pass("100/100 scenarios non-increasing over 5-point dc grids")
}

fn field_trial_rate() -> Outcome {
    let r = offline_run(925, Fps::integer(25), ReadCost::Fixed(Duration::from_millis(1)), LatencyModel::Fixed(0.437), 0.05);
    let rate = r.inference_rate().unwrap_or(0.0);
    let ok = r.tvfa.abs_diff(103) <= 3 && (rate - 2.0).abs() <= 0.3;
    check(ok, format!("tvfa {} (target 103 +/- 3), inference rate {rate:.3}/s (target 2 +/- 0.3)", r.tvfa))
}

fn random_box(rng: &mut impl Rng, span: f64) -> BoundingBox {
    let x = rng.random_range(0.0..span);
    let y = rng.random_range(0.0..span);
    BoundingBox::new(x, y, x + rng.random_range(1.0..span / 2.0), y + rng.random_range(1.0..span / 2.0))
}

fn jitter(rng: &mut impl Rng, b: &BoundingBox, amount: f64) -> BoundingBox {
    let mut d = || rng.random_range(-amount..amount);
    BoundingBox::new(b.x_min + d(), b.y_min + d(), b.x_max + d(), b.y_max + d())
}

fn map_correctness() -> Outcome {
    // hand case: hit, miss, hit over two ground truths
    let gts = [("a", BoundingBox::new(0.0, 0.0, 10.0, 10.0)), ("a", BoundingBox::new(20.0, 20.0, 30.0, 30.0))];
    let preds = [
        ("a", 0.9, BoundingBox::new(0.0, 0.0, 10.0, 10.0)),
        ("a", 0.8, BoundingBox::new(50.0, 50.0, 60.0, 60.0)),
        ("a", 0.7, BoundingBox::new(20.0, 20.0, 30.0, 30.0)),
    ];
    let hand = average_precision(&preds, &gts, 0.5).unwrap_or(f64::NAN);
    if (hand - 0.8333).abs() > 5e-5 {
        return fail(format!("hand case AP {hand}"));
    }

    let mut rng = seeded(0xa9);
    let images = ["i0", "i1", "i2"];
    for k in 0..1000 {
        let gts: Vec<(&str, BoundingBox)> = (0..rng.random_range(0..=6))
            .map(|_| (images[rng.random_range(0..images.len())], random_box(&mut rng, 40.0)))
            .collect();
        let mut preds: Vec<(&str, f64, BoundingBox)> = Vec::new();
        for _ in 0..rng.random_range(0..=10) {
            let score = (rng.random_range(0..8) as f64) / 8.0; // ties on purpose
            if !gts.is_empty() && rng.random_bool(0.7) {
                let (img, g) = gts[rng.random_range(0..gts.len())];
                preds.push((img, score, jitter(&mut rng, &g, 3.0)));
            } else {
                preds.push((images[rng.random_range(0..images.len())], score, random_box(&mut rng, 40.0)));
            }
        }
        for t in [0.5, 0.75] {
            let got = average_precision(&preds, &gts, t);
            let want = brute_force_ap(&preds, &gts, t);
            let same = match (got, want) {
                (Some(a), Some(b)) => (a - b).abs() <= 1e-9,
                (None, None) => true,
                _ => false,
            };
            if !same {
                return fail(format!("instance {k} @{t}: AP {got:?}, oracle {want:?}"));
            }
        }
        if gts.is_empty() {
            continue;
        }
        // two-class version through the full evaluator for the threshold ordering
        let records: Vec<AnnotationRecord> = gts
            .iter()
            .enumerate()
            .map(|(i, (img, b))| AnnotationRecord {
                filename: img.to_string(),
                width: 100,
                height: 100,
                label: ["rhino", "car"][i % 2].into(),
                bbox: *b,
            })
            .collect();
        let predictions: Vec<Prediction> = preds
            .iter()
            .enumerate()
            .map(|(i, (img, s, b))| Prediction {
                filename: img.to_string(),
                label: ["rhino", "car"][i % 2].into(),
                score: *s,
                bbox: *b,
            })
            .collect();
        let rep = evaluate(&records, &predictions, &EvalConfig::default()).unwrap();
        let (m50, m75) = (rep.map_at(0.5).unwrap(), rep.map_at(0.75).unwrap());
        if m75 > m50 + 1e-12 {
            return fail(format!("instance {k}: mAP@0.75 {m75} > mAP@0.50 {m50}"));
        }
    }

    let records: Vec<AnnotationRecord> = (0..20)
        .map(|i| AnnotationRecord {
            filename: format!("f{}", i % 4),
            width: 640,
            height: 512,
            label: LABELS[i % LABELS.len()].into(),
            bbox: random_box(&mut rng, 400.0),
        })
        .collect();
    let perfect: Vec<Prediction> = records
        .iter()
        .map(|r| Prediction {
            filename: r.filename.clone(),
            label: r.label.clone(),
            score: 1.0,
            bbox: r.bbox,
        })
        .collect();
    let rep = evaluate(&records, &perfect, &EvalConfig::default()).unwrap();
    if rep.map_at(0.5) != Some(1.0) || rep.map_at(0.75) != Some(1.0) {
        return fail(format!("perfect predictions gave {:?} / {:?}", rep.map_at(0.5), rep.map_at(0.75)));
    }
    pass("hand case 0.8333, 1000 random instances match the PR oracle, perfect = 1.0, mAP@0.75 <= mAP@0.50")
}

fn iou_grid() -> Outcome {
    let mut rng = seeded(0x1011);
    let rect = |rng: &mut rand_chacha::ChaCha8Rng| {
        let x0 = rng.random_range(0..24i64);
        let y0 = rng.random_range(0..24i64);
        [x0, y0, x0 + rng.random_range(0..12), y0 + rng.random_range(0..12)]
    };
    for k in 0..10_000 {
        let (a, b) = (rect(&mut rng), rect(&mut rng));
        let (ba, bb) = (to_box(a), to_box(b));
        let got = iou(&ba, &bb);
        let want = grid_iou(a, b);
        if (got - want).abs() > 1e-9 || (got - iou(&bb, &ba)).abs() > 1e-12 || !(0.0..=1.0).contains(&got) {
            return fail(format!("pair {k} {a:?} {b:?}: iou {got}, grid {want}"));
        }
    }
    pass("10000 pairs match the unit-cell count; symmetric and within [0, 1]")
}

fn rtmp_conformance() -> Outcome {
    let (srv, handler, addr) = start_rtmp(vec!["drone1".into()]);
    let mut p = TestPublisher::connect(addr).unwrap();
    p.connect_app("live").unwrap();
    p.create_stream().unwrap();
    p.publish("drone1").unwrap();
    let transcript: Vec<String> = p.received.iter().map(render_message).collect();
    for i in 0..100u32 {
        p.send_rawv_frame(i * 40, 48, 27, &pattern(i, 48, 27), i == 0).unwrap();
    }
    p.finish().unwrap();
    let deadline = Instant::now() + Duration::from_secs(3);
    while !handler.events.lock().unwrap().iter().any(|e| e == "stop drone1") && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(5));
    }
    srv.shutdown();
    if transcript != golden("publish_transcript.txt") {
        return fail(format!("command responses differ from golden transcript: {transcript:#?}"));
    }
    let mut src = TestCodecSource::new(handler.frames().into_iter(), None);
    let mut n = 0;
    while let Ok(Some(f)) = src.next_frame() {
        if (f.width, f.height, f.seq) != (48, 27, n) {
            return fail(format!("frame {n} came out as {f:?}"));
        }
        n += 1;
    }
    check(n == 100, format!("{n} of 100 RawFrames, 48x27, golden transcript matched"))
}

fn live_synchronization() -> Outcome {
    let n = 500;
    let clock = Arc::new(VirtualClock::new());
    let src = generate_synthetic_stream(n, 16, 9, Fps::integer(25), 3);
    let mut src = TimedSource::new(src, clock.clone(), ReadCost::Zero).paced();
    let mut state = SamplerState::new(SamplerConfig::new(0.05, SamplerMode::LiveLatestWins).unwrap());
    let rhino = Detection::new("rhino", 0.9, BoundingBox::new(2.0, 2.0, 10.0, 7.0));
    let mut det = MockDetector::new(MockScript {
        rules: vec![MockRule::new(0..u64::MAX, vec![rhino])],
        ..MockScript::fixed_latency(0.4)
    });
    let mut sink = OverlaySink::new(OverlayConfig::default()).with_trace();
    let r = run_loop(&mut src, &mut state, &mut det, &mut sink, clock.as_ref(), &LoopControls::default());
    let seqs: Vec<u64> = sink.trace().iter().map(|t| t.seq).collect();
    if seqs != (0..n).collect::<Vec<_>>() {
        return fail(format!("sink saw {} frames, not 0..{n} in order", seqs.len()));
    }
    if r.max_in_flight > 1 {
        return fail(format!("{} inferences in flight", r.max_in_flight));
    }
    let bound = ((0.05f64 + 0.4) * 25.0).ceil() as u64;
    let worst = sink.trace().iter().filter(|t| t.overlay_from_seq.is_some()).map(|t| t.lag_frames).max();
    match worst {
        None => fail("no detection ever reached the overlay"),
        Some(w) => check(
            w <= bound,
            format!("{n} frames in order, max in flight {}, worst lag {w} <= {bound} frames", r.max_in_flight),
        ),
    }
}

fn annotation_round_trip() -> Outcome {
    let corpus = voc_corpus(50, 0xc5);
    let mut all = Vec::new();
    for (name, xml, objs) in &corpus {
        let recs = match parse_voc_xml(xml) {
            Ok(r) => r,
            Err(e) => return fail(format!("{name}: {e}")),
        };
        let expect: Vec<(String, [i64; 4])> = objs.clone();
        let got: Vec<(String, [i64; 4])> = recs
            .iter()
            .map(|r| {
                let b = r.bbox;
                (r.label.clone(), [b.x_min as i64, b.y_min as i64, b.x_max as i64, b.y_max as i64])
            })
            .collect();
        if got != expect || recs.iter().any(|r| &r.filename != name) {
            return fail(format!("{name}: records {got:?}, document {expect:?}"));
        }
        all.extend(recs);
    }
    let back = match parse_annotations_csv(&annotations_to_csv(&all)) {
        Ok(b) => b,
        Err(e) => return fail(e.to_string()),
    };
    let thermal = all.iter().filter(|r| (r.width, r.height) == (640, 512)).count();
    check(
        back == all && thermal > 0,
        format!("50 files, {} records survive XML -> CSV -> records unchanged ({thermal} at 640x512)", all.len()),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("table1_identities", 1.0, table1_identities),
        ("sampling_oracle_equivalence", 10.0, oracle_equivalence),
        ("dc_monotonicity", 5.0, dc_monotonicity),
        ("field_trial_rate", 5.0, field_trial_rate),
        ("map_correctness", 10.0, map_correctness),
        ("iou_grid", 5.0, iou_grid),
        ("rtmp_conformance", 5.0, rtmp_conformance),
        ("live_synchronization", 5.0, live_synchronization),
        ("annotation_round_trip", 2.0, annotation_round_trip),
    ];
    let mut failed = 0;
    for (name, budget, f) in criteria {
        let t = Instant::now();
        let mut out = std::panic::catch_unwind(f).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            fail(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        if secs >= budget {
            out.ok = false;
            out.detail += &format!("; took {secs:.2}s, budget {budget}s");
        }
        let tag = if out.ok { "PASS" } else { "FAIL" };
        println!("{tag} {name} ({secs:.3}s): {}", out.detail);
        failed += !out.ok as usize;
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
