//! Simulates a short capture session with 2D joint detections and
//! reconstructs the 3D skeleton of every merged trigger, comparing the
//! global and incremental bundle adjustment initializations.
//!
//! `cargo run --release --example skeleton_reconstruction [easy|medium|hard|ideal]`

use syncap::geometry::ReconstructionOptions;
use syncap::harness::{reconstruct_session, FrameResult, ObservationSource};
use syncap::sim::{run_session_with, Preset, RunOptions, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let preset = Preset::parse(&std::env::args().nth(1).unwrap_or_else(|| "easy".into()))?;
    let scenario = ScenarioConfig {
        duration_s: 4.9,
        ..ScenarioConfig::preset(preset)
    };
    let session = run_session_with(&scenario, &RunOptions::default())?;
    let frames = reconstruct_session(
        &session,
        &ReconstructionOptions::default(),
        ObservationSource::Wire,
        true,
    )?;

    let mean = |f: &dyn Fn(&FrameResult) -> Option<f64>| {
        let v: Vec<f64> = frames.iter().filter_map(f).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    };
    println!("{} frames from {} cameras ({preset:?})", frames.len(), scenario.devices);
    println!("re-projection error  {:.3} px", mean(&|f| f.reprojection_mean_px));
    println!("held-out error       {:.3} px", mean(&|f| f.heldout_mean_px));
    println!("joint position error {:.4} m", mean(&|f| f.joint_error_m));
    let iterations: usize = frames.iter().map(|f| f.global_iterations).sum();
    let incremental: usize = frames.iter().map(|f| f.incremental_invocations).sum();
    println!(
        "optimizer invocations: global {} ({iterations} iterations), incremental {incremental}",
        frames.len()
    );
    if let Some(f) = frames.first() {
        println!("first frame hip: {:?}", f.skeleton.joints[syncap::sim::HIP_JOINT]);
    }
    Ok(())
}
