//! Helpers and reference oracles shared by the integration tests.
#![allow(dead_code)]

use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use streamgate_core::detector::BoundingBox;
use streamgate_core::rtmp::amf0::{self, Amf0Value};
use streamgate_core::rtmp::{
    msg_type, spawn_server, EncodedFrame, FrameHandoff, IngestHandler, RtmpMessage, RtmpServerConfig, ServerHandle,
    VecHandoff,
};

// ---------------------------------------------------------------- sampling

/// Straight-line replay of the sampling loop in integer nanoseconds.
///
/// The clock starts at 0 with start = 0. Reading frame i costs
/// `read_ns[i]`; a fired frame blocks for the next latency in `lat_us`.
pub fn des_offline(read_ns: &[u64], lat_us: &[u64], dc: f64) -> (u64, Vec<u64>) {
    let (mut now, mut start, mut calls) = (0u64, 0u64, 0usize);
    let mut fired_at = Vec::new();
    for &cost in read_ns {
        now += cost;
        if (now - start) as f64 / 1e9 > dc {
            start = now;
            fired_at.push(now);
            now += lat_us[calls] * 1000;
            calls += 1;
        }
    }
    (fired_at.len() as u64, fired_at)
}

/// One randomized offline scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub frames: usize,
    pub read_ns: Vec<u64>,
    pub latency: streamgate_core::detector::LatencyModel,
    pub dc: f64,
}

pub fn log_uniform_dc(rng: &mut impl Rng) -> f64 {
    10f64.powf(rng.random_range(-4.0..=0.0))
}

pub fn random_scenario(rng: &mut ChaCha8Rng) -> Scenario {
    use streamgate_core::detector::LatencyModel;
    let frames = rng.random_range(1..=2000);
    let read_ns = match rng.random_range(0..3) {
        0 => vec![0; frames],
        1 => vec![rng.random_range(0..5_000_000u64); frames],
        _ => (0..frames).map(|_| rng.random_range(0..60_000_000u64)).collect(),
    };
    let latency = if rng.random_bool(0.5) {
        LatencyModel::Fixed(rng.random_range(0.0..0.8))
    } else {
        let lo = rng.random_range(0.0..0.5);
        LatencyModel::Uniform {
            lo,
            hi: lo + rng.random_range(0.0..0.5),
            seed: rng.random(),
        }
    };
    Scenario {
        frames,
        read_ns,
        latency,
        dc: log_uniform_dc(rng),
    }
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- geometry

/// IoU by counting unit cells of an integer grid.
pub fn grid_iou(a: [i64; 4], b: [i64; 4]) -> f64 {
    let inside = |r: [i64; 4], x: i64, y: i64| x >= r[0] && x < r[2] && y >= r[1] && y < r[3];
    let (lo_x, lo_y) = (a[0].min(b[0]), a[1].min(b[1]));
    let (hi_x, hi_y) = (a[2].max(b[2]), a[3].max(b[3]));
    let (mut inter, mut union) = (0u64, 0u64);
    for y in lo_y..hi_y {
        for x in lo_x..hi_x {
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += (ia && ib) as u64;
            union += (ia || ib) as u64;
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn to_box(r: [i64; 4]) -> BoundingBox {
    BoundingBox::new(r[0] as f64, r[1] as f64, r[2] as f64, r[3] as f64)
}

/// Reference IoU straight from the definition.
pub fn iou_direct(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let h = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = w * h;
    let area = |r: &BoundingBox| (r.x_max - r.x_min) * (r.y_max - r.y_min);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// All-point interpolated AP computed the slow way.
///
/// Predictions are visited by descending score (stable). Each one claims
/// the unclaimed ground truth in its image with the highest IoU when that
/// IoU reaches `t`. Precision at each recall level is the best precision
/// at that recall or beyond, and AP sums it over recall steps.
pub fn brute_force_ap(preds: &[(&str, f64, BoundingBox)], gts: &[(&str, BoundingBox)], t: f64) -> Option<f64> {
    if gts.is_empty() {
        return if preds.is_empty() { None } else { Some(0.0) };
    }
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].1.partial_cmp(&preds[a].1).unwrap());
    let mut claimed = vec![false; gts.len()];
    let mut hits = Vec::new();
    for &i in &order {
        let (img, _, pb) = &preds[i];
        let mut best: Option<(usize, f64)> = None;
        for (g, (gimg, gb)) in gts.iter().enumerate() {
            if claimed[g] || gimg != img {
                continue;
            }
            let v = iou_direct(pb, gb);
            if v >= t && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            claimed[g] = true;
        }
        hits.push(best.is_some());
    }
    let mut points = Vec::new();
    let mut tp = 0.0;
    for (k, hit) in hits.iter().enumerate() {
        if *hit {
            tp += 1.0;
        }
        points.push((tp / gts.len() as f64, tp / (k + 1) as f64));
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (k, &(r, _)) in points.iter().enumerate() {
        if r > prev_recall {
            let p = points[k..].iter().map(|x| x.1).fold(0.0, f64::max);
            ap += (r - prev_recall) * p;
            prev_recall = r;
        }
    }
    Some(ap)
}

// ---------------------------------------------------------------- rtmp

/// Records publish events and keeps every published frame.
#[derive(Default)]
pub struct Collect {
    pub frames: VecHandoff,
    pub events: Mutex<Vec<String>>,
}

impl IngestHandler for Collect {
    fn publish_started(&self, key: &str) -> Box<dyn FrameHandoff> {
        self.events.lock().unwrap().push(format!("start {key}"));
        Box::new(self.frames.clone())
    }

    fn publish_stopped(&self, key: &str) {
        self.events.lock().unwrap().push(format!("stop {key}"));
    }
}

impl Collect {
    pub fn frames(&self) -> Vec<EncodedFrame> {
        self.frames.0.lock().unwrap().clone()
    }
}

pub fn start_rtmp(allow: Vec<String>) -> (ServerHandle, Arc<Collect>, SocketAddr) {
    let handler = Arc::new(Collect::default());
    let srv = spawn_server(
        RtmpServerConfig {
            bind: "127.0.0.1:0".parse().unwrap(),
            allow_list: allow,
        },
        handler.clone(),
    )
    .expect("bind rtmp");
    let addr = srv.local_addr;
    (srv, handler, addr)
}

fn render_amf(v: &Amf0Value) -> String {
    let props = |ps: &[(String, Amf0Value)]| {
        ps.iter()
            .map(|(k, v)| format!("{k}: {}", render_amf(v)))
            .collect::<Vec<_>>()
            .join(", ")
    };
    match v {
        Amf0Value::Number(n) => format!("{n}"),
        Amf0Value::Boolean(b) => format!("{b}"),
        Amf0Value::String(s) => format!("{s:?}"),
        Amf0Value::Object(ps) => format!("{{{}}}", props(ps)),
        Amf0Value::EcmaArray(ps) => format!("ecma{{{}}}", props(ps)),
        Amf0Value::StrictArray(vs) => format!("[{}]", vs.iter().map(render_amf).collect::<Vec<_>>().join(", ")),
        Amf0Value::Null => "null".into(),
        Amf0Value::Undefined => "undefined".into(),
        Amf0Value::Date(d) => format!("date({d})"),
    }
}

/// One transcript line per server message.
pub fn render_message(m: &RtmpMessage) -> String {
    if m.type_id == msg_type::COMMAND_AMF0 {
        let values = amf0::decode(&m.payload).expect("server sent undecodable AMF0");
        let body = values.iter().map(render_amf).collect::<Vec<_>>().join(", ");
        format!("command csid={} stream={} [{body}]", m.csid, m.stream_id)
    } else {
        let hex: String = m.payload.iter().map(|b| format!("{b:02x}")).collect();
        format!("control csid={} type={} payload={hex}", m.csid, m.type_id)
    }
}

pub fn golden(name: &str) -> Vec<String> {
    // resolves from both this crate and the sibling crates that include this module
    let path = format!("{}/../core/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("{path}: {e}"))
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(str::to_string)
        .collect()
}

/// Frame `i` of a recognisable test pattern.
pub fn pattern(i: u32, w: u16, h: u16) -> Vec<u8> {
    let mut px = Vec::with_capacity(w as usize * h as usize * 3);
    for y in 0..h as u32 {
        for x in 0..w as u32 {
            px.extend([(x + i) as u8, (y * 3) as u8, (i * 7) as u8]);
        }
    }
    px
}

// ---------------------------------------------------------------- annotations

pub fn voc_xml(filename: &str, w: u32, h: u32, objects: &[(&str, [i64; 4])]) -> String {
    let mut s = format!(
        "<annotation>\n  <folder>images</folder>\n  <filename>{filename}</filename>\n  <size>\n    <width>{w}</width>\n    <height>{h}</height>\n    <depth>3</depth>\n  </size>\n"
    );
    for (label, b) in objects {
        s += &format!(
            "  <object>\n    <name>{label}</name>\n    <pose>Unspecified</pose>\n    <truncated>0</truncated>\n    <difficult>0</difficult>\n    <bndbox>\n      <xmin>{}</xmin>\n      <ymin>{}</ymin>\n      <xmax>{}</xmax>\n      <ymax>{}</ymax>\n    </bndbox>\n  </object>\n",
            b[0], b[1], b[2], b[3]
        );
    }
    s + "</annotation>\n"
}

pub const LABELS: [&str; 5] = ["rhino", "elephant", "car", "person", "giraffe"];

/// Random VOC corpus; every fifth file is 640x512.
/// `(image file name, xml text, objects in document order)`
pub type VocFile = (String, String, Vec<(String, [i64; 4])>);

pub fn voc_corpus(n: usize, seed: u64) -> Vec<VocFile> {
    let mut rng = seeded(seed);
    (0..n)
        .map(|i| {
            let (w, h) = if i % 5 == 0 { (640, 512) } else { (rng.random_range(64..1920), rng.random_range(64..1080)) };
            let objs: Vec<(String, [i64; 4])> = (0..rng.random_range(0..6))
                .map(|_| {
                    let x0 = rng.random_range(0..w - 1);
                    let y0 = rng.random_range(0..h - 1);
                    let b = [x0, y0, rng.random_range(x0 + 1..=w), rng.random_range(y0 + 1..=h)];
                    (LABELS[rng.random_range(0..LABELS.len())].to_string(), b)
                })
                .collect();
            let name = format!("frame_{i:04}.jpg");
            let refs: Vec<(&str, [i64; 4])> = objs.iter().map(|(l, b)| (l.as_str(), *b)).collect();
            let xml = voc_xml(&name, w as u32, h as u32, &refs);
            (name, xml, objs)
        })
        .collect()
}
