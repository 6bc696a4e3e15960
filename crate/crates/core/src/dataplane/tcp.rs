use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::frame::{encode_ack, AckDecoder, DecoderStats, FrameDecoder};
use super::merge::{FlushPolicy, MergeStats, Merger};
use super::record::CaptureRecord;
use super::store::DirectoryStore;
use super::stream::{ClientStream, StreamConfig, StreamStats};
use super::verify::{Rejection, Verdict, Verifier};
use super::DataplaneError;

pub const DEFAULT_MANAGER_PORT: u16 = 40001;
const POLL: Duration = Duration::from_millis(10);

#[derive(Debug, Clone)]
pub struct ManagerConfig {
    pub expected_devices: Vec<u16>,
    pub joint_count: usize,
    pub policy: FlushPolicy,
    pub store_root: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManagerReport {
    pub connections: u64,
    pub frames: u64,
    pub corrupt_frames: u64,
    pub verified: u64,
    pub rejected: BTreeMap<Rejection, u64>,
    pub merge: MergeStats,
    pub persisted: u64,
}

enum Event {
    Record(Box<CaptureRecord>),
    Closed {
        decoder: DecoderStats,
        verifier: Box<Verifier>,
    },
}

/// Manager side: one decode/verify pipeline per connection feeding a
/// single merge stage, which is the only writer to the store.
pub struct TcpManager {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
    merger: Option<JoinHandle<Result<ManagerReport, DataplaneError>>>,
}

impl TcpManager {
    pub fn spawn(addr: impl ToSocketAddrs, config: ManagerConfig) -> Result<Self, DataplaneError> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let local_addr = listener.local_addr()?;
        let mut store = DirectoryStore::create(&config.store_root)?;
        let stop = Arc::new(AtomicBool::new(false));
        let (tx, rx) = mpsc::channel::<Event>();

        let acceptor = {
            let stop = Arc::clone(&stop);
            let joint_count = config.joint_count;
            thread::Builder::new().name("dp-accept".into()).spawn(move || {
                let mut workers = Vec::new();
                while !stop.load(Ordering::Relaxed) {
                    match listener.accept() {
                        Ok((conn, _)) => {
                            let tx = tx.clone();
                            let stop = Arc::clone(&stop);
                            workers.push(thread::spawn(move || serve_connection(conn, joint_count, &tx, &stop)));
                        }
                        Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
                        Err(_) => thread::sleep(POLL),
                    }
                }
                for w in workers {
                    let _ = w.join();
                }
            })?
        };

        let merger = thread::Builder::new().name("dp-merge".into()).spawn(move || {
            let start = Instant::now();
            let now = || start.elapsed().as_nanos() as i64;
            let mut merger = Merger::new(config.expected_devices.iter().copied(), config.policy);
            let mut report = ManagerReport::default();
            loop {
                let ready = match rx.recv_timeout(POLL) {
                    Ok(Event::Record(r)) => merger.push(*r, now()),
                    Ok(Event::Closed { decoder, verifier }) => {
                        report.connections += 1;
                        report.frames += decoder.frames;
                        report.corrupt_frames += decoder.corrupt_frames;
                        report.verified += verifier.verified();
                        for (k, v) in verifier.rejected() {
                            *report.rejected.entry(*k).or_default() += v;
                        }
                        Vec::new()
                    }
                    Err(RecvTimeoutError::Timeout) => merger.poll(now()),
                    Err(RecvTimeoutError::Disconnected) => break,
                };
                for m in ready {
                    store.persist(&m)?;
                }
            }
            for m in merger.flush() {
                store.persist(&m)?;
            }
            report.merge = merger.stats();
            report.persisted = store.persisted();
            Ok(report)
        })?;

        Ok(Self {
            local_addr,
            stop,
            acceptor: Some(acceptor),
            merger: Some(merger),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Stops accepting, lets open connections wind down, flushes the merger.
    pub fn finish(mut self) -> Result<ManagerReport, DataplaneError> {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        match self.merger.take().map(JoinHandle::join) {
            Some(Ok(report)) => report,
            _ => Err(DataplaneError::ConnectionLost),
        }
    }
}

impl Drop for TcpManager {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
    }
}

fn serve_connection(mut conn: TcpStream, joint_count: usize, tx: &mpsc::Sender<Event>, stop: &AtomicBool) {
    let _ = conn.set_read_timeout(Some(POLL));
    let _ = conn.set_nodelay(true);
    let mut decoder = FrameDecoder::new();
    let mut verifier = Verifier::new(joint_count);
    let mut buf = vec![0u8; 64 * 1024];
    let handle = |records: Vec<CaptureRecord>, conn: &mut TcpStream, verifier: &mut Verifier| {
        for r in records {
            // acknowledge receipt; resending a rejected record would not help
            let _ = conn.write_all(&encode_ack(r.device, r.trigger_id));
            if verifier.verify(&r) == Verdict::Verified {
                let _ = tx.send(Event::Record(Box::new(r)));
            }
        }
    };
    loop {
        match conn.read(&mut buf) {
            Ok(0) => break,
            Ok(n) => {
                decoder.push(&buf[..n]);
                let records = decoder.drain();
                handle(records, &mut conn, &mut verifier);
            }
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                if stop.load(Ordering::Relaxed) {
                    break;
                }
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(_) => break,
        }
    }
    let records = decoder.finish();
    handle(records, &mut conn, &mut verifier);
    let _ = tx.send(Event::Closed {
        decoder: decoder.stats(),
        verifier: Box::new(verifier),
    });
}

/// Device side over a real TCP connection.
pub struct TcpClient {
    addr: SocketAddr,
    conn: TcpStream,
    stream: ClientStream,
    acks: AckDecoder,
    reconnects: u64,
}

impl TcpClient {
    pub fn connect(addr: SocketAddr, device: u16, config: StreamConfig) -> Result<Self, DataplaneError> {
        Ok(Self {
            addr,
            conn: open(addr)?,
            stream: ClientStream::new(device, config),
            acks: AckDecoder::default(),
            reconnects: 0,
        })
    }

    pub fn stats(&self) -> StreamStats {
        self.stream.stats()
    }

    pub fn reconnects(&self) -> u64 {
        self.reconnects
    }

    /// Queues a record and sends what the socket accepts without blocking.
    pub fn send(&mut self, record: &CaptureRecord) -> Result<(), DataplaneError> {
        self.stream.enqueue(record)?;
        self.poll()
    }

    /// Reads acknowledgements and keeps transmitting; reconnects on loss.
    pub fn poll(&mut self) -> Result<(), DataplaneError> {
        let mut buf = [0u8; 1024];
        loop {
            match self.conn.read(&mut buf) {
                Ok(0) => return self.reconnect(),
                Ok(n) => {
                    for (device, trigger) in self.acks.push(&buf[..n]) {
                        if device == self.stream.device() {
                            self.stream.on_ack(trigger);
                        }
                    }
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => break,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(_) => return self.reconnect(),
            }
        }
        match self.stream.pump(&mut self.conn) {
            Ok(_) => Ok(()),
            Err(DataplaneError::ConnectionLost) => self.reconnect(),
            Err(e) => Err(e),
        }
    }

    /// Drops the current connection and resumes from the last acknowledged frame.
    pub fn reconnect(&mut self) -> Result<(), DataplaneError> {
        let _ = self.conn.shutdown(Shutdown::Both);
        self.conn = open(self.addr)?;
        self.acks = AckDecoder::default();
        self.stream.reconnect();
        self.reconnects += 1;
        self.stream.pump(&mut self.conn).map(|_| ())
    }

    /// Simulates a connection reset, as a network fault would.
    pub fn reset_connection(&mut self) {
        let _ = self.conn.shutdown(Shutdown::Both);
    }

    /// Polls until every frame is acknowledged or `timeout` passes.
    pub fn flush(&mut self, timeout: Duration) -> Result<bool, DataplaneError> {
        let deadline = Instant::now() + timeout;
        while !self.stream.all_acked() {
            if Instant::now() >= deadline {
                return Ok(false);
            }
            self.poll()?;
            thread::sleep(Duration::from_millis(1));
        }
        Ok(true)
    }

    pub fn close(self) {
        let _ = self.conn.shutdown(Shutdown::Both);
    }
}

fn open(addr: SocketAddr) -> Result<TcpStream, DataplaneError> {
    let conn = TcpStream::connect_timeout(&addr, Duration::from_secs(2))?;
    conn.set_nodelay(true)?;
    conn.set_nonblocking(true)?;
    Ok(conn)
}

#[cfg(test)]
mod tests {
    use super::super::record::tests::sample;
    use super::super::store::load_index;
    use super::*;

    fn config(root: PathBuf, devices: u16) -> ManagerConfig {
        ManagerConfig {
            expected_devices: (0..devices).collect(),
            joint_count: 25,
            policy: FlushPolicy::default(),
            store_root: root,
        }
    }

    #[test]
    fn loopback_session_persists_every_trigger() {
        let tmp = tempfile::tempdir().unwrap();
        let manager = TcpManager::spawn("127.0.0.1:0", config(tmp.path().into(), 3)).unwrap();
        let addr = manager.local_addr();
        let handles: Vec<_> = (0..3u16)
            .map(|d| {
                thread::spawn(move || {
                    let mut c = TcpClient::connect(addr, d, StreamConfig::default()).unwrap();
                    for t in 0..50 {
                        c.send(&sample(d, t, vec![d as u8; 2048])).unwrap();
                    }
                    assert!(c.flush(Duration::from_secs(10)).unwrap());
                    c.close();
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        let report = manager.finish().unwrap();
        assert_eq!(report.persisted, 50);
        assert_eq!(report.merge.complete, 50);
        let ids: Vec<u32> = load_index(tmp.path()).unwrap().iter().map(|e| e.trigger_id).collect();
        assert_eq!(ids, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn reset_mid_stream_resumes_without_losing_frames() {
        let tmp = tempfile::tempdir().unwrap();
        let manager = TcpManager::spawn("127.0.0.1:0", config(tmp.path().into(), 1)).unwrap();
        let mut c = TcpClient::connect(manager.local_addr(), 0, StreamConfig::default()).unwrap();
        for t in 0..40 {
            c.send(&sample(0, t, vec![1; 512])).unwrap();
        }
        assert!(c.flush(Duration::from_secs(10)).unwrap());
        c.reset_connection();
        for t in 40..80 {
            c.send(&sample(0, t, vec![1; 512])).unwrap();
        }
        assert!(c.flush(Duration::from_secs(10)).unwrap());
        assert!(c.reconnects() >= 1);
        let resent = c.stats().resent;
        c.close();
        let report = manager.finish().unwrap();
        // every frame acknowledged before the reset was not sent again
        assert_eq!(resent, 0);
        assert_eq!(report.merge.duplicates, 0);
        assert_eq!(report.persisted, 80);
    }
}
