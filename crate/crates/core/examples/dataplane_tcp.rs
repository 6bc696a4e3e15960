//! Three devices stream framed capture records to a data manager over
//! loopback TCP; the manager verifies, merges by trigger and persists.

use std::thread;
use std::time::Duration;

use syncap::dataplane::{
    load_index, CaptureRecord, FlushPolicy, ManagerConfig, PayloadKind, StreamConfig, TcpClient, TcpManager,
};
use syncap::geometry::{Intrinsics, Pose};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::temp_dir().join(format!("syncap-dataplane-{}", std::process::id()));
    let devices: u16 = 3;
    let triggers: u32 = 30;
    let manager = TcpManager::spawn(
        "127.0.0.1:0",
        ManagerConfig {
            expected_devices: (0..devices).collect(),
            joint_count: 25,
            policy: FlushPolicy::default(),
            store_root: root.clone(),
        },
    )?;
    let addr = manager.local_addr();
    let k = Intrinsics::centered(600.0, 640, 480)?;

    let workers: Vec<_> = (0..devices)
        .map(|d| {
            thread::spawn(move || -> Result<(), syncap::dataplane::DataplaneError> {
                let mut client = TcpClient::connect(addr, d, StreamConfig::default())?;
                for t in 0..triggers {
                    let payload = vec![d as u8; 4096];
                    let r = CaptureRecord::new(
                        d,
                        t,
                        100_000_000 * i64::from(t),
                        Pose::identity(),
                        k,
                        PayloadKind::Image,
                        payload,
                    );
                    client.send(&r)?;
                }
                client.flush(Duration::from_secs(10))?;
                client.close();
                Ok(())
            })
        })
        .collect();
    for w in workers {
        w.join().expect("device thread")?;
    }

    let report = manager.finish()?;
    println!(
        "{} frames, {} corrupt, {} complete triggers, {} persisted",
        report.frames, report.corrupt_frames, report.merge.complete, report.persisted
    );
    let ids: Vec<u32> = load_index(&root)?.iter().map(|e| e.trigger_id).collect();
    println!(
        "stored trigger ids {:?}..={:?} under {}",
        ids.first(),
        ids.last(),
        root.display()
    );
    std::fs::remove_dir_all(&root)?;
    Ok(())
}
