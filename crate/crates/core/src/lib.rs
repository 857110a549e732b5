pub mod calibration;
pub mod config;
pub mod encoding;
pub mod evaluation;
pub mod examples;
pub mod lifecycle;
pub mod model;
pub mod pipeline;
pub mod serving;
pub mod sessions;
pub mod synth;
