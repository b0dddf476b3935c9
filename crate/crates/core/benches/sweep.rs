use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use std::time::Duration;

use streamgate_core::bench::{sweep, BenchConfig, BenchInput, ClockKind, Strategy, SyntheticSpec};
use streamgate_core::detector::LatencyModel;
use streamgate_core::eval::{evaluate, AnnotationRecord, EvalConfig, Prediction};
use streamgate_core::detector::BoundingBox;
use streamgate_core::frame::Fps;

fn table_config(strategy: Strategy) -> BenchConfig {
    BenchConfig {
        input: BenchInput::Synthetic(SyntheticSpec {
            n: 925,
            width: 64,
            height: 36,
            fps: Fps::integer(25),
            seed: 1,
        }),
        dc_list: vec![1.0, 0.1, 0.08, 0.07, 0.06, 0.05, 0.01, 0.001, 0.0001],
        latency: LatencyModel::Uniform { lo: 0.3, hi: 0.5, seed: 7 },
        read_cost: Duration::from_millis(1),
        clock: ClockKind::Virtual,
        strategy,
    }
}

fn bench_sweep(c: &mut Criterion) {
    let mut g = c.benchmark_group("dc_sweep");
    g.sample_size(20);
    for (name, s) in [("sequential", Strategy::Sequential), ("parallel", Strategy::Parallel)] {
        let cfg = table_config(s);
        g.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| black_box(sweep(cfg).unwrap()))
        });
    }
    g.finish();
}

fn eval_fixture(images: usize) -> (Vec<AnnotationRecord>, Vec<Prediction>) {
    let labels = ["rhino", "car", "elephant", "person", "giraffe", "zebra"];
    let mut gts = Vec::new();
    let mut preds = Vec::new();
    for i in 0..images {
        let file = format!("img{i:05}.jpg");
        for (k, l) in labels.iter().enumerate() {
            let x = ((i * 37 + k * 53) % 500) as f64;
            let b = BoundingBox::new(x, x / 2.0, x + 60.0, x / 2.0 + 40.0);
            gts.push(AnnotationRecord {
                filename: file.clone(),
                width: 640,
                height: 480,
                label: l.to_string(),
                bbox: b,
            });
            let shift = ((i + k) % 7) as f64 * 4.0;
            preds.push(Prediction {
                filename: file.clone(),
                label: l.to_string(),
                score: ((i * 13 + k * 7) % 100) as f64 / 100.0,
                bbox: BoundingBox::new(b.x_min + shift, b.y_min, b.x_max + shift, b.y_max),
            });
        }
    }
    (gts, preds)
}

/// mAP evaluation, one rayon task per class when `parallel` is on.
fn bench_eval(c: &mut Criterion) {
    let (gts, preds) = eval_fixture(2000);
    let cfg = EvalConfig {
        iou_thresholds: vec![0.5, 0.75],
        classes: None,
    };
    c.bench_function("evaluate_2000_images", |b| b.iter(|| black_box(evaluate(&gts, &preds, &cfg).unwrap())));
}

criterion_group!(benches, bench_sweep, bench_eval);
criterion_main!(benches);
