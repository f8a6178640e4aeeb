pub mod app;
pub mod detect;
pub mod frame;
pub mod geometry;
pub mod metrics;
pub mod optflow;
pub mod placement;
pub mod sim;
pub mod slump;
