pub mod dataplane;
pub mod geometry;
pub mod harness;
pub mod hull;
pub mod relay;
pub mod sim;
pub mod sync;
