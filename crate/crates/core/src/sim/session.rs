use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::net::SocketAddr;
use std::path::PathBuf;

use nalgebra::{Unit, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    actor_pose_at, detect_joints, network_deliver, observe_joints, render_silhouette, stream_rng, ActorModel,
    BandwidthQueue, CameraTrajectory, DataNetwork, Delivery, EventQueue, LatencyModel, Link, PoseWalk, ScenarioConfig,
    SimClock, SimError, Stream, Uplink,
};
use crate::dataplane::{
    encode_joints, encode_silhouette, CaptureRecord, ClientStream, DirectoryStore, FlushPolicy, FrameDecoder,
    MergedCapture, Merger, PayloadKind, StreamConfig, Verdict, Verifier,
};
use crate::geometry::{Camera, GlobalTransform, Intrinsics, Skeleton2D, Skeleton3D, DEFAULT_JOINT_COUNT};
use crate::relay::{DatagramKind, DeviceEndpoint, DeviceEvent, Relay, RelayDatagram, RelayStats};
use crate::sync::{
    capture_instant, estimate_ntp_offset, schedule_triggers, CaptureContext, CompensationPlan, DeviceRole,
    NtpAlignment, NtpSample, RttTracker, SchemeKind, SyncScheme, TriggerCounter, TriggerMsg,
};

const MERGE_TICK_NS: i64 = 50_000_000;
/// Quiet time between the last RTT probe and the first trigger.
const SETTLE_NS: i64 = 500_000_000;

fn ms_to_ns(ms: f64) -> i64 {
    (ms * 1e6).round() as i64
}

/// What actually happened for one trigger, for oracle checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerTruth {
    pub trigger_id: u32,
    /// Global time of the host's capture; the actor is posed at this instant.
    pub host_capture_ns: i64,
    pub skeleton: Skeleton3D,
    /// Global capture instant per device; `None` where the trigger was lost.
    pub capture_ns: Vec<Option<i64>>,
    /// True camera of each device at its capture instant.
    pub cameras: Vec<Option<Camera>>,
    /// Detector output per device, before f32 encoding.
    pub detections: Vec<Option<Skeleton2D>>,
    /// Noise-free, miss-free projections per device.
    pub clean: Vec<Option<Skeleton2D>>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SpreadSummary {
    pub count: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub max_ms: f64,
}

impl SpreadSummary {
    pub fn from_samples(ms: &[f64]) -> Self {
        let n = ms.len();
        if n == 0 {
            return Self::default();
        }
        let mean = ms.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            ms.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            count: n,
            mean_ms: mean,
            std_ms: var.sqrt(),
            max_ms: ms.iter().copied().fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub triggers: usize,
    pub merged: usize,
    pub complete: usize,
    pub mean_completeness: f64,
    /// Fraction of (client, trigger) pairs for which the client captured.
    pub client_delivery: f64,
    pub spread: SpreadSummary,
    pub relay: RelayStats,
    pub stale_triggers: u64,
    pub stream_dropped: u64,
    pub rejected: u64,
    pub corrupt_frames: u64,
    pub merge_duplicates: u64,
    pub merge_late: u64,
    pub end_ns: i64,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Persist every merged capture under this directory.
    pub store_root: Option<PathBuf>,
    /// Drop payload bytes after merging (keeps memory flat for large images).
    pub discard_payloads: bool,
}

#[derive(Debug, Clone)]
pub struct SessionOutput {
    pub config: ScenarioConfig,
    pub session_id: u64,
    pub clocks: Vec<SimClock>,
    pub plan: Option<CompensationPlan>,
    pub ntp: Vec<Option<NtpAlignment>>,
    pub merged: Vec<MergedCapture>,
    /// Global time at which each entry of `merged` left the merger.
    pub emitted_ns: Vec<i64>,
    pub truth: Vec<TriggerTruth>,
    pub spreads_ms: Vec<(u32, f64)>,
    pub metrics: SessionMetrics,
}

/// Per-trigger spread of true capture instants, from the records' device
/// clock stamps mapped back to global time.
pub fn measure_capture_spread(captures: &[MergedCapture], clocks: &[SimClock]) -> Vec<(u32, f64)> {
    captures
        .iter()
        .filter(|m| m.records.len() >= 2)
        .map(|m| {
            let times = m
                .records
                .values()
                .map(|r| clocks[usize::from(r.device)].global(r.capture_time_ns as f64));
            let (lo, hi) = times.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)));
            (m.trigger_id, (hi - lo) / 1e6)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Node {
    Relay,
    Device(usize),
}

#[derive(Debug)]
enum Ev {
    Datagram {
        from: Node,
        to: Node,
        bytes: Vec<u8>,
    },
    Probe {
        client: usize,
    },
    Start,
    Trigger,
    Capture {
        device: usize,
        msg: TriggerMsg,
        local_ns: i64,
    },
    Pump {
        device: usize,
    },
    Segment {
        device: usize,
        bytes: Vec<u8>,
    },
    Ack {
        device: usize,
        trigger_id: u32,
    },
    MergeTick,
}

fn endpoint(device: usize) -> SocketAddr {
    SocketAddr::from(([10, 0, (device >> 8) as u8, (device & 0xff) as u8], 5000))
}

fn device_of(addr: &SocketAddr) -> usize {
    match addr {
        SocketAddr::V4(a) => {
            let o = a.ip().octets();
            (usize::from(o[2]) << 8) | usize::from(o[3])
        }
        SocketAddr::V6(_) => unreachable!("simulated endpoints are IPv4"),
    }
}

struct World<'a> {
    cfg: &'a ScenarioConfig,
    options: &'a RunOptions,
    seed: u64,
    devices: usize,
    scheme: SyncScheme,
    clocks: Vec<SimClock>,
    trajectories: Vec<CameraTrajectory>,
    transforms: Vec<GlobalTransform>,
    walks: Vec<Vec<PoseWalk>>,
    intrinsics: Intrinsics,
    actor: ActorModel,

    relay: Relay,
    session_id: u64,
    endpoints: Vec<DeviceEndpoint>,
    hops: Vec<LatencyModel>,
    processing_ns: i64,
    tracker: RttTracker,
    plan: Option<CompensationPlan>,
    ntp: Vec<Option<NtpAlignment>>,
    counter: TriggerCounter,
    schedule: Vec<i64>,
    next_trigger: usize,
    probes_sent: usize,

    streams: Vec<ClientStream>,
    net: DataNetwork,
    data_rngs: Vec<ChaCha8Rng>,
    pump_pending: Vec<bool>,
    ack_delay_ns: i64,
    decoders: Vec<FrameDecoder>,
    verifiers: Vec<Verifier>,
    merger: Merger,
    store: Option<DirectoryStore>,

    merged: Vec<MergedCapture>,
    emitted_ns: Vec<i64>,
    truth: BTreeMap<u32, TriggerTruth>,
    client_captures: u64,
    queue: EventQueue<Ev>,
}

impl<'a> World<'a> {
    fn new(cfg: &'a ScenarioConfig, options: &'a RunOptions) -> Result<Self, SimError> {
        cfg.validate()?;
        let seed = cfg.seed;
        let c = cfg.devices;
        let scheme = match cfg.scheme {
            SchemeKind::TriggerRelay => SyncScheme::trigger_relay(),
            SchemeKind::Uncompensated => SyncScheme::uncompensated(),
            SchemeKind::NtpBaseline => SyncScheme::ntp_baseline(),
            SchemeKind::NtpAveraged => SyncScheme::ntp_averaged(cfg.ntp_requests)?,
        };
        let schedule: Vec<i64> = schedule_triggers(cfg.frequency_hz, cfg.duration_s)?
            .iter()
            .map(|t| t.offset_ns)
            .collect();

        // the host clock is the global reference
        let clocks = (0..c)
            .map(|d| {
                if d == 0 {
                    return SimClock::IDEAL;
                }
                let mut rng = stream_rng(seed, Stream::Clock, d as u64, 0);
                let offset = rng.gen_range(-1.0..=1.0) * cfg.noise.clock_offset_ms;
                let drift = rng.gen_range(-1.0..=1.0) * cfg.noise.clock_drift_ppm * 1e-6;
                SimClock::new(ms_to_ns(offset) as f64, drift)
            })
            .collect();
        let transforms = (0..c)
            .map(|d| {
                let mut rng = stream_rng(seed, Stream::Placement, d as u64, 1);
                let axis = Vector3::<f64>::from_fn(|_, _| rng.sample(StandardNormal));
                let angle = rng.gen_range(0.0..PI);
                let t = Vector3::<f64>::from_fn(|_, _| rng.gen_range(-5.0..5.0));
                GlobalTransform::from_axis_angle(&Unit::new_normalize(axis), angle, t)
            })
            .collect();
        let walks = (0..c)
            .map(|d| {
                let n = &cfg.noise;
                let mut w = PoseWalk::new(n.pose_rotation_deg, n.pose_translation_m, n.pose_reversion);
                let mut rng = stream_rng(seed, Stream::PoseNoise, d as u64, 0);
                (0..schedule.len())
                    .map(|_| {
                        w.step(&mut rng);
                        w.clone()
                    })
                    .collect()
            })
            .collect();

        let net = &cfg.network;
        let hop_sigma = ms_to_ns(net.jitter_ms) as f64 / std::f64::consts::SQRT_2;
        let mut hops = vec![LatencyModel::new(ms_to_ns(net.hop_latency_ms), hop_sigma)?];
        for a in 0..c - 1 {
            hops.push(LatencyModel::new(
                ms_to_ns(net.hop_latency_ms + cfg.client_extra_ms(a)),
                hop_sigma,
            )?);
        }

        let dp = &cfg.dataplane;
        let cap = (dp.bandwidth_bytes_per_s > 0.0).then_some(dp.bandwidth_bytes_per_s);
        let data_latency = LatencyModel::new(ms_to_ns(dp.latency_ms), ms_to_ns(dp.jitter_ms) as f64)?;
        let stream_config = StreamConfig {
            buffer_depth: dp.buffer_depth,
            max_unacked: dp.max_unacked,
        };
        let store = match &options.store_root {
            Some(root) => Some(DirectoryStore::create(root.clone())?),
            None => None,
        };

        Ok(Self {
            cfg,
            options,
            seed,
            devices: c,
            scheme,
            clocks,
            trajectories: cfg.rig.trajectories(c, seed)?,
            transforms,
            walks,
            intrinsics: cfg.rig.intrinsics()?,
            actor: ActorModel::body25(cfg.actor.clone()),
            relay: Relay::new(),
            session_id: 0,
            endpoints: vec![DeviceEndpoint::new(); c],
            hops,
            processing_ns: (net.relay_processing_us * 1e3).round() as i64,
            tracker: RttTracker::new(c - 1, None),
            plan: None,
            ntp: vec![None; c],
            counter: TriggerCounter::new(0),
            schedule,
            next_trigger: 0,
            probes_sent: 0,
            streams: (0..c).map(|d| ClientStream::new(d as u16, stream_config)).collect(),
            net: DataNetwork::new(c, BandwidthQueue::new(cap)?, data_latency, dp.socket_bytes),
            data_rngs: (0..c).map(|d| stream_rng(seed, Stream::Data, d as u64, 0)).collect(),
            pump_pending: vec![false; c],
            ack_delay_ns: data_latency.base_ns,
            decoders: (0..c).map(|_| FrameDecoder::new()).collect(),
            verifiers: (0..c).map(|_| Verifier::new(DEFAULT_JOINT_COUNT)).collect(),
            merger: Merger::new(
                0..c as u16,
                FlushPolicy {
                    timeout_ns: ms_to_ns(dp.merge_timeout_ms),
                    watermark: dp.watermark,
                },
            ),
            store,
            merged: Vec::new(),
            emitted_ns: Vec::new(),
            truth: BTreeMap::new(),
            client_captures: 0,
            queue: EventQueue::new(),
        })
    }

    /// Joins every device through the relay. Setup is not timed.
    fn join(&mut self) -> Result<(), SimError> {
        for d in 0..self.devices {
            let session = (d > 0).then_some(self.session_id);
            let request = DeviceEndpoint::join_request(session, 0);
            let out = self.relay.handle_datagram(endpoint(d), &request);
            let ack = out
                .first()
                .ok_or_else(|| SimError::InvalidConfig(format!("device {d} could not join")))?;
            if let DeviceEvent::Joined { session_id, .. } = self.endpoints[d].handle(&ack.bytes) {
                self.session_id = session_id;
            }
        }
        self.counter = TriggerCounter::new(self.session_id);
        Ok(())
    }

    fn hop_link(&self, device: usize, lossy: bool) -> Link {
        Link {
            latency: self.hops[device],
            loss: if lossy { self.cfg.network.trigger_loss } else { 0.0 },
        }
    }

    fn send(&mut self, from: Node, to: Node, bytes: Vec<u8>, at: i64) {
        let dgram = RelayDatagram::decode(&bytes).expect("simulated datagrams are well formed");
        let device = match (from, to) {
            (Node::Device(d), Node::Relay) | (Node::Relay, Node::Device(d)) => d,
            _ => unreachable!("datagrams always cross the relay"),
        };
        let (link, mut rng) = match dgram.kind {
            DatagramKind::Trigger => {
                let lossy = from == Node::Relay;
                (
                    self.hop_link(device, lossy),
                    stream_rng(
                        self.seed,
                        Stream::TriggerHop,
                        device as u64,
                        u64::from(dgram.trigger_id),
                    ),
                )
            }
            DatagramKind::RttProbe | DatagramKind::RttEcho => {
                let leg = match (dgram.kind, from) {
                    (DatagramKind::RttProbe, Node::Device(_)) => 0,
                    (DatagramKind::RttProbe, Node::Relay) => 1,
                    (_, Node::Device(_)) => 2,
                    (_, Node::Relay) => 3,
                };
                let key = u64::from(dgram.trigger_id) * 4 + leg;
                (
                    self.hop_link(device, false),
                    stream_rng(self.seed, Stream::Probe, key, dgram.timestamp_ns),
                )
            }
            _ => (
                Link::lossless(LatencyModel::fixed(self.hops[device].base_ns)),
                stream_rng(self.seed, Stream::Probe, u64::MAX, 0),
            ),
        };
        if let Delivery::At(t) = network_deliver(at, &link, &mut rng) {
            self.queue.schedule(t, Ev::Datagram { from, to, bytes });
        }
    }

    fn run(&mut self) -> Result<(), SimError> {
        self.join()?;
        let clients = self.devices - 1;
        let interval = ms_to_ns(self.cfg.network.probe_interval_ms);
        let probes = self.cfg.network.rtt_samples * clients;
        for k in 0..probes {
            self.queue
                .schedule(k as i64 * interval, Ev::Probe { client: k % clients });
        }
        self.queue.schedule(probes as i64 * interval + SETTLE_NS, Ev::Start);

        while let Some((now, ev)) = self.queue.pop() {
            match ev {
                Ev::Probe { client } => {
                    self.probes_sent += 1;
                    let probe = RelayDatagram::new(DatagramKind::RttProbe, self.session_id, client as u32, now as u64);
                    self.send(Node::Device(0), Node::Relay, probe.encode().to_vec(), now);
                }
                Ev::Datagram { from, to, bytes } => self.on_datagram(now, from, to, &bytes)?,
                Ev::Start => self.start(now)?,
                Ev::Trigger => self.host_trigger(now)?,
                Ev::Capture { device, msg, local_ns } => self.capture(now, device, &msg, local_ns)?,
                Ev::Pump { device } => {
                    self.pump_pending[device] = false;
                    self.pump(device, now)?;
                }
                Ev::Segment { device, bytes } => self.on_segment(now, device, &bytes)?,
                Ev::Ack { device, trigger_id } => self.streams[device].on_ack(trigger_id),
                Ev::MergeTick => {
                    let ready = self.merger.poll(now);
                    self.emit(ready, now)?;
                    if !self.queue.is_empty() {
                        self.queue.schedule(now + MERGE_TICK_NS, Ev::MergeTick);
                    }
                }
            }
        }
        let rest = self.merger.flush();
        self.emit(rest, self.queue.now())
    }

    fn on_datagram(&mut self, now: i64, from: Node, to: Node, bytes: &[u8]) -> Result<(), SimError> {
        match to {
            Node::Relay => {
                let Node::Device(d) = from else { unreachable!() };
                for out in self.relay.handle_datagram(endpoint(d), bytes) {
                    let target = device_of(&out.to);
                    self.send(Node::Relay, Node::Device(target), out.bytes, now + self.processing_ns);
                }
            }
            Node::Device(d) => match self.endpoints[d].handle(bytes) {
                DeviceEvent::Reply(echo) => self.send(Node::Device(d), Node::Relay, echo, now),
                DeviceEvent::RoundTrip { client, sent_ns } => {
                    let rtt_ns = self.clocks[0].read(now) - sent_ns as i64;
                    self.tracker.record(client as usize, rtt_ns as f64 / 1e6)?;
                }
                DeviceEvent::Trigger(msg) if d > 0 => {
                    let arrival = self.clocks[d].read(now);
                    let ctx = CaptureContext {
                        role: DeviceRole::Client(d - 1),
                        trigger: &msg,
                        arrival_local_ns: arrival,
                        plan: self.plan.as_ref(),
                        ntp: self.ntp[d].as_ref(),
                    };
                    let local = capture_instant(&self.scheme, &ctx)?.max(arrival);
                    let global = self.clocks[d].global(local as f64).round() as i64;
                    self.queue.schedule(
                        global,
                        Ev::Capture {
                            device: d,
                            msg,
                            local_ns: local,
                        },
                    );
                }
                _ => {}
            },
        }
        Ok(())
    }

    fn start(&mut self, now: i64) -> Result<(), SimError> {
        self.plan = Some(self.tracker.plan()?);
        if self.scheme.uses_ntp() {
            self.align_clocks(now)?;
        }
        let first = now;
        for k in 0..self.schedule.len() {
            self.queue.schedule(first + self.schedule[k], Ev::Trigger);
        }
        self.queue.schedule(first, Ev::MergeTick);
        Ok(())
    }

    /// NTP exchanges between each client and the host over the relay path,
    /// evaluated in closed form on their own random stream.
    fn align_clocks(&mut self, now: i64) -> Result<(), SimError> {
        let lead_ns = ms_to_ns(self.cfg.network.ntp_lead_ms);
        let requests = match self.scheme.kind {
            SchemeKind::NtpBaseline => 1,
            _ => self.scheme.ntp_request_count,
        };
        self.ntp[0] = Some(NtpAlignment {
            offset_estimate_ns: 0.0,
            lead_ns,
        });
        for d in 1..self.devices {
            let (host, client, clock, p) = (self.hops[0], self.hops[d], self.clocks[d], self.processing_ns);
            let mut j = 0u64;
            let seed = self.seed;
            let mut exchange = || {
                let mut rng = stream_rng(seed, Stream::Ntp, d as u64, j);
                let g0 = (now - 100_000_000 + j as i64 * 1_000_000) as f64;
                let forward = client.sample(&mut rng) + p + host.sample(&mut rng);
                let back = host.sample(&mut rng) + p + client.sample(&mut rng);
                j += 1;
                let t1 = g0 + forward as f64;
                NtpSample {
                    t0: clock.local(g0),
                    t1,
                    t2: t1,
                    t3: clock.local(t1 + back as f64),
                }
            };
            let offset = estimate_ntp_offset(requests, &mut exchange)?;
            self.ntp[d] = Some(NtpAlignment {
                offset_estimate_ns: offset,
                lead_ns,
            });
        }
        Ok(())
    }

    fn host_trigger(&mut self, now: i64) -> Result<(), SimError> {
        let host_now = self.clocks[0].read(now);
        let msg = self.counter.next(host_now);
        self.next_trigger += 1;
        self.send(
            Node::Device(0),
            Node::Relay,
            RelayDatagram::trigger(&msg).encode().to_vec(),
            now,
        );
        let ctx = CaptureContext {
            role: DeviceRole::Host,
            trigger: &msg,
            arrival_local_ns: host_now,
            plan: self.plan.as_ref(),
            ntp: self.ntp[0].as_ref(),
        };
        let local = capture_instant(&self.scheme, &ctx)?;
        let global = self.clocks[0].global(local as f64).round() as i64;
        self.queue.schedule(
            global,
            Ev::Capture {
                device: 0,
                msg,
                local_ns: local,
            },
        );
        Ok(())
    }

    fn truth_entry(&mut self, trigger_id: u32) -> &mut TriggerTruth {
        let c = self.devices;
        self.truth.entry(trigger_id).or_insert_with(|| TriggerTruth {
            trigger_id,
            host_capture_ns: 0,
            skeleton: Skeleton3D::unresolved(trigger_id, DEFAULT_JOINT_COUNT),
            capture_ns: vec![None; c],
            cameras: vec![None; c],
            detections: vec![None; c],
            clean: vec![None; c],
        })
    }

    fn capture(&mut self, now: i64, d: usize, msg: &TriggerMsg, local_ns: i64) -> Result<(), SimError> {
        let k = msg.trigger_id;
        let t = now as f64 * 1e-9;
        let camera = self.trajectories[d].camera_at(t);
        let walk = &self.walks[d][(k as usize).min(self.walks[d].len() - 1)];
        let noisy = walk.apply(&camera.pose);
        let transform = self.transforms[d];
        let reported = transform.globalize(&transform.localize(&noisy));
        if d > 0 {
            self.client_captures += 1;
        }

        let cfg = self.cfg;
        let noise = &cfg.noise;
        let (payload, detections) = match cfg.payload.kind {
            PayloadKind::Joints2d => {
                let skeleton = actor_pose_at(t, &self.actor, k);
                let miss = if noise.misses(d) { noise.miss_rate } else { 0.0 };
                let mut rng = stream_rng(self.seed, Stream::Detector, d as u64, u64::from(k));
                let obs = observe_joints(&skeleton, &camera, d, noise.joint_sigma_px, miss, &mut rng);
                let clean = detect_joints(&skeleton, &camera, d);
                (encode_joints(&obs.joints), Some((obs, clean)))
            }
            PayloadKind::Silhouette => {
                let mask = render_silhouette(&self.actor.capsules_at(t), &camera);
                (encode_silhouette(&mask), None)
            }
            PayloadKind::Image => {
                let fill = (d as u32).wrapping_mul(31).wrapping_add(k) as u8;
                (vec![fill; cfg.payload.image_bytes], None)
            }
        };

        let skeleton = (d == 0).then(|| actor_pose_at(t, &self.actor, k));
        let entry = self.truth_entry(k);
        if let Some(s) = skeleton {
            entry.skeleton = s;
            entry.host_capture_ns = now;
        }
        entry.capture_ns[d] = Some(now);
        entry.cameras[d] = Some(camera);
        if let Some((obs, clean)) = detections {
            entry.detections[d] = Some(obs);
            entry.clean[d] = Some(clean);
        }

        let record = CaptureRecord::new(
            d as u16,
            k,
            local_ns,
            reported,
            self.intrinsics,
            self.cfg.payload.kind,
            payload,
        );
        self.streams[d].enqueue(&record)?;
        self.pump(d, now)
    }

    fn pump(&mut self, d: usize, now: i64) -> Result<(), SimError> {
        let mut uplink = Uplink {
            net: &mut self.net,
            device: d,
            now_ns: now,
            rng: &mut self.data_rngs[d],
            sent: Vec::new(),
        };
        self.streams[d].pump(&mut uplink)?;
        for seg in std::mem::take(&mut uplink.sent) {
            self.queue.schedule(
                seg.arrival_ns,
                Ev::Segment {
                    device: d,
                    bytes: seg.bytes,
                },
            );
        }
        if !self.streams[d].is_drained() && !self.pump_pending[d] {
            let at = self.net.next_drain(d, now).unwrap_or(now + 1_000_000);
            self.queue.schedule(at, Ev::Pump { device: d });
            self.pump_pending[d] = true;
        }
        Ok(())
    }

    fn on_segment(&mut self, now: i64, d: usize, bytes: &[u8]) -> Result<(), SimError> {
        self.decoders[d].push(bytes);
        for record in self.decoders[d].drain() {
            if self.verifiers[d].verify(&record) != Verdict::Verified {
                continue;
            }
            self.queue.schedule(
                now + self.ack_delay_ns,
                Ev::Ack {
                    device: d,
                    trigger_id: record.trigger_id,
                },
            );
            let ready = self.merger.push(record, now);
            self.emit(ready, now)?;
        }
        Ok(())
    }

    fn emit(&mut self, ready: Vec<MergedCapture>, now: i64) -> Result<(), SimError> {
        for mut m in ready {
            if let Some(store) = &mut self.store {
                store.persist(&m)?;
            }
            if self.options.discard_payloads {
                m.records.values_mut().for_each(|r| r.payload = Vec::new());
            }
            self.merged.push(m);
            self.emitted_ns.push(now);
        }
        Ok(())
    }

    fn finish(self) -> SessionOutput {
        let spreads = measure_capture_spread(&self.merged, &self.clocks);
        let samples: Vec<f64> = spreads.iter().map(|(_, s)| *s).collect();
        let triggers = self.next_trigger;
        let merged = self.merged.len();
        let stats = self.merger.stats();
        let metrics = SessionMetrics {
            triggers,
            merged,
            complete: stats.complete as usize,
            mean_completeness: if merged == 0 {
                0.0
            } else {
                self.merged.iter().map(MergedCapture::completeness).sum::<f64>() / merged as f64
            },
            client_delivery: if triggers == 0 {
                0.0
            } else {
                self.client_captures as f64 / (triggers * (self.devices - 1)) as f64
            },
            spread: SpreadSummary::from_samples(&samples),
            relay: self.relay.stats(),
            stale_triggers: self.endpoints.iter().map(DeviceEndpoint::stale_triggers).sum(),
            stream_dropped: self.streams.iter().map(|s| s.stats().dropped_oldest).sum(),
            rejected: self.verifiers.iter().map(Verifier::rejected_total).sum(),
            corrupt_frames: self.decoders.iter().map(|d| d.stats().corrupt_frames).sum(),
            merge_duplicates: stats.duplicates,
            merge_late: stats.late,
            end_ns: self.queue.now(),
        };
        SessionOutput {
            config: self.cfg.clone(),
            session_id: self.session_id,
            clocks: self.clocks,
            plan: self.plan,
            ntp: self.ntp,
            merged: self.merged,
            emitted_ns: self.emitted_ns,
            truth: self.truth.into_values().collect(),
            spreads_ms: spreads,
            metrics,
        }
    }
}

/// Runs one capture session end to end: RTT probing, trigger fan-out
/// through the relay, device capture, streaming, verification and merging.
pub fn run_session(config: &ScenarioConfig) -> Result<SessionOutput, SimError> {
    run_session_with(config, &RunOptions::default())
}

pub fn run_session_with(config: &ScenarioConfig, options: &RunOptions) -> Result<SessionOutput, SimError> {
    let mut world = World::new(config, options)?;
    world.run()?;
    Ok(world.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataplane::{decode_joints, load_index};
    use crate::sim::{NoiseProfile, Preset};

    fn quick(preset: Preset, duration_s: f64) -> ScenarioConfig {
        ScenarioConfig {
            duration_s,
            ..ScenarioConfig::preset(preset)
        }
    }

    #[test]
    fn ideal_session_is_complete_and_synchronous() {
        let out = run_session(&quick(Preset::Ideal, 2.0)).unwrap();
        assert_eq!(out.metrics.triggers, 21);
        assert_eq!(out.merged.len(), 21);
        assert_eq!(out.metrics.mean_completeness, 1.0);
        let ids: Vec<u32> = out.merged.iter().map(|m| m.trigger_id).collect();
        assert_eq!(ids, (0..21).collect::<Vec<_>>());
        assert!(out.spreads_ms.iter().all(|(_, s)| *s == 0.0));
        for t in &out.truth {
            assert!(t.capture_ns.iter().all(|c| *c == Some(t.host_capture_ns)));
        }
    }

    #[test]
    fn uncompensated_spread_is_the_one_way_delay() {
        let mut cfg = quick(Preset::Ideal, 1.0);
        cfg.devices = 2;
        cfg.scheme = SchemeKind::Uncompensated;
        cfg.network.asymmetry_ms = 10.0;
        let out = run_session(&cfg).unwrap();
        // host→relay 5 ms + relay 0.1 ms + relay→client 15 ms
        for (_, s) in &out.spreads_ms {
            assert!((s - 20.1).abs() < 1e-6, "{s}");
        }
    }

    #[test]
    fn zero_latency_rtt_is_twice_the_relay_processing() {
        let mut cfg = quick(Preset::Ideal, 0.0);
        cfg.network.hop_latency_ms = 0.0;
        let out = run_session(&cfg).unwrap();
        let plan = out.plan.unwrap();
        assert!(plan.mean_rtt_ms.iter().all(|r| (r - 0.2).abs() < 1e-9));
    }

    #[test]
    fn five_ms_hops_give_twenty_ms_rtt() {
        let mut cfg = quick(Preset::Ideal, 0.0);
        cfg.network.relay_processing_us = 0.0;
        let out = run_session(&cfg).unwrap();
        assert!(out.plan.unwrap().mean_rtt_ms.iter().all(|r| (r - 20.0).abs() < 1e-9));
    }

    #[test]
    fn trigger_loss_converges_to_one_minus_p() {
        let mut cfg = quick(Preset::Ideal, 999.9);
        cfg.devices = 2;
        cfg.network.trigger_loss = 0.2;
        cfg.payload.kind = PayloadKind::Image;
        cfg.payload.image_bytes = 8;
        let out = run_session(&cfg).unwrap();
        assert_eq!(out.metrics.triggers, 10_000);
        assert!(
            (out.metrics.client_delivery - 0.8).abs() < 0.02,
            "{}",
            out.metrics.client_delivery
        );
        assert_eq!(out.metrics.relay.forwarded, 10_000 + 2 * 20);
    }

    #[test]
    fn sessions_are_deterministic() {
        let cfg = quick(Preset::Hard, 1.5);
        let a = run_session(&cfg).unwrap();
        let b = run_session(&cfg).unwrap();
        assert_eq!(a.merged, b.merged);
        assert_eq!(a.metrics, b.metrics);
        let other = run_session(&ScenarioConfig { seed: 2, ..cfg }).unwrap();
        assert_ne!(a.merged, other.merged);
    }

    #[test]
    fn records_carry_decodable_joints_and_valid_poses() {
        let out = run_session(&quick(Preset::Easy, 1.0)).unwrap();
        for m in &out.merged {
            for r in m.records.values() {
                assert_eq!(decode_joints(&r.payload, 25).unwrap().len(), 25);
                assert!(r.pose.orthonormality_error() < 1e-9);
            }
        }
        assert_eq!(out.metrics.rejected, 0);
    }

    #[test]
    fn misses_hit_only_the_chosen_devices() {
        let mut cfg = quick(Preset::Ideal, 1.0);
        cfg.noise = NoiseProfile {
            miss_rate: 1.0,
            miss_devices: vec![4, 5],
            ..NoiseProfile::none()
        };
        let out = run_session(&cfg).unwrap();
        for t in &out.truth {
            for d in 0..6 {
                let present = t.detections[d].as_ref().unwrap().present_count();
                assert_eq!(present == 0, d >= 4);
            }
        }
    }

    #[test]
    fn persisted_store_matches_the_merge() {
        let dir = tempfile::tempdir().unwrap();
        let options = RunOptions {
            store_root: Some(dir.path().join("store")),
            discard_payloads: true,
        };
        let out = run_session_with(&quick(Preset::Ideal, 1.0), &options).unwrap();
        let index = load_index(&dir.path().join("store")).unwrap();
        let ids: Vec<u32> = index.iter().map(|e| e.trigger_id).collect();
        assert_eq!(ids, (0..11).collect::<Vec<_>>());
        assert!(out
            .merged
            .iter()
            .all(|m| m.records.values().all(|r| r.payload.is_empty())));
    }
}
