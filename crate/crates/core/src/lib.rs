//! Live-stream object detection gateway.
//!
//! RTMP video comes in, a time-based sampling gate decides which frames
//! reach the detector, last-known detections are drawn on every outgoing
//! frame, and the run's throughput counters are reported in a fixed table
//! format. An offline toolkit computes IoU, AP and mAP over Pascal VOC
//! annotations.

pub mod bench;
pub mod config;
pub mod detector;
pub mod eval;
pub mod frame;
pub mod metrics;
pub mod overlay;
pub mod rtmp;
pub mod sampler;
pub mod service;
