pub mod config;
pub mod engine;
pub mod error;
pub mod lifecycle;
pub mod mesh;
pub mod msgplane;
pub mod scenario;
pub mod sim;
pub mod telemetry;
pub mod workloads;
