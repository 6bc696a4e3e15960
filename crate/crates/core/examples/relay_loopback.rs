//! A UDP relay on loopback: the host opens a session, three devices join,
//! the host measures round trips through the relay and fires triggers.

use std::net::UdpSocket;
use std::time::{Duration, Instant};

use syncap::relay::{DatagramKind, DeviceEndpoint, DeviceEvent, RelayDatagram, UdpRelayServer, HEADER_LEN};
use syncap::sync::TriggerMsg;

fn socket() -> std::io::Result<UdpSocket> {
    let s = UdpSocket::bind("127.0.0.1:0")?;
    s.set_read_timeout(Some(Duration::from_millis(500)))?;
    Ok(s)
}

fn receive(s: &UdpSocket) -> std::io::Result<Vec<u8>> {
    let mut buf = [0u8; 512];
    let n = s.recv(&mut buf)?;
    Ok(buf[..n].to_vec())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let server = UdpRelayServer::spawn("127.0.0.1:0")?;
    let relay = server.local_addr();
    let epoch = Instant::now();
    let now = || epoch.elapsed().as_nanos() as u64;

    let host = socket()?;
    host.send_to(&DeviceEndpoint::join_request(None, now()), relay)?;
    let mut host_state = DeviceEndpoint::new();
    let DeviceEvent::Joined { session_id, .. } = host_state.handle(&receive(&host)?) else {
        return Err("host was not acknowledged".into());
    };
    println!("session {session_id} opened on {relay}");

    let mut devices = Vec::new();
    for _ in 0..3 {
        let s = socket()?;
        s.send_to(&DeviceEndpoint::join_request(Some(session_id), now()), relay)?;
        let mut state = DeviceEndpoint::new();
        if let DeviceEvent::Joined { index, .. } = state.handle(&receive(&s)?) {
            println!("device joined as client {index}");
        }
        devices.push((s, state));
    }

    for (client, (s, state)) in devices.iter_mut().enumerate() {
        let probe = RelayDatagram::new(DatagramKind::RttProbe, session_id, client as u32, now());
        host.send_to(&probe.encode(), relay)?;
        if let DeviceEvent::Reply(echo) = state.handle(&receive(s)?) {
            s.send_to(&echo, relay)?;
        }
        if let DeviceEvent::RoundTrip { client, sent_ns } = host_state.handle(&receive(&host)?) {
            println!("client {client}: round trip {:.3} ms", (now() - sent_ns) as f64 * 1e-6);
        }
    }

    for trigger_id in 0..5 {
        let msg = TriggerMsg {
            session_id,
            trigger_id,
            host_send_time_ns: now() as i64,
        };
        host.send_to(&RelayDatagram::trigger(&msg).encode(), relay)?;
        for (client, (s, state)) in devices.iter_mut().enumerate() {
            let bytes = receive(s)?;
            assert_eq!(bytes.len(), HEADER_LEN);
            if let DeviceEvent::Trigger(t) = state.handle(&bytes) {
                println!(
                    "client {client} got trigger {} after {:.3} ms",
                    t.trigger_id,
                    (now() as i64 - t.host_send_time_ns) as f64 * 1e-6
                );
            }
        }
    }
    println!("{:?}", server.relay().stats());
    server.shutdown();
    Ok(())
}
