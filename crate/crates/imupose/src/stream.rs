//! Line-delimited JSON streaming protocol and the TCP inference server.
//!
//! Inbound records: `combo` (declare active locations), `calib_begin` /
//! `calib_end` bracketing a held T-pose, and per-device `imu` records.
//! Outbound: one `pose` per completed input frame, or `err`.
//!
//! Frame completion: readings are grouped by timestamp; a frame is run
//! either when every active location has reported for that timestamp or
//! when a newer timestamp arrives (missing devices are zero-order-held from
//! their last reading, which is how lower-rate sources are upsampled).
//! Timestamps must be monotone non-decreasing; protocol violations are
//! answered with an `err` record and the connection closes.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::devconfig::{BodyLocation, DeviceCombo, SensorReading};
use crate::estimator::{calibrate_tpose, EstimatorState, FusionThresholds, PoseOutput};
use crate::refine::{Refiner, RefinerConfig};
use crate::rotmath::{rot6d_from_matrix, Vec3};
use crate::rotmath::RotMat;
use crate::seqnet::ModelBundle;
use crate::skeleton::{Rig, PREDICTED_JOINTS};

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMsg {
    /// One device reading: timestamp (microseconds), location id, raw
    /// acceleration (m/s^2) and row-major orientation.
    Imu { t: u64, loc: String, acc: [f64; 3], rot: [f64; 9] },
    /// Declare the active location set (a combo id's parts).
    Combo { active: Vec<String> },
    CalibBegin,
    CalibEnd,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMsg {
    /// Estimated state for one completed frame: 24x3 root-relative joints,
    /// 18x9 row-major predicted-joint rotations, world translation and foot
    /// contacts.
    Pose { t: u64, joints: Vec<f64>, rots: Vec<f64>, trans: [f64; 3], contacts: [f64; 2] },
    Err { code: String, msg: String },
}

impl ServerMsg {
    pub fn from_output(t: u64, out: &PoseOutput) -> ServerMsg {
        let mut joints = Vec::with_capacity(72);
        for p in &out.joints_rel {
            joints.extend_from_slice(&p.to_array());
        }
        let mut rots = Vec::with_capacity(162);
        for &j in PREDICTED_JOINTS.iter() {
            rots.extend_from_slice(&out.full_pose.local_rot[j].m);
        }
        ServerMsg::Pose {
            t,
            joints,
            rots,
            trans: out.translation.to_array(),
            contacts: out.contacts,
        }
    }
}

/// Shared immutable context for every connection.
pub struct ServerCtx {
    pub bundle: ModelBundle,
    pub rig: Rig,
    pub fusion: FusionThresholds,
    /// Refinement applied to outgoing poses when set.
    pub refiner: Option<RefinerConfig>,
    pub gravity: Vec3,
    pub fps: f64,
}

/// Running server handle; dropping it does not stop the server, call
/// [`StreamServer::shutdown`].
pub struct StreamServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: JoinHandle<()>,
}

impl StreamServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    /// Signal the acceptor to stop and wait for it. Open sessions finish
    /// their current connection loop and exit.
    pub fn shutdown(self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.handle.join();
    }
}

/// Bind and serve. One acceptor thread, one worker thread per connection,
/// each owning its estimator and refiner; the model and rig are shared
/// immutably.
pub fn serve(bind: &str, ctx: Arc<ServerCtx>) -> std::io::Result<StreamServer> {
    let listener = TcpListener::bind(bind)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop_accept = stop.clone();
    let handle = std::thread::spawn(move || {
        let mut workers: Vec<JoinHandle<()>> = Vec::new();
        while !stop_accept.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, _)) => {
                    let ctx = ctx.clone();
                    let stop = stop_accept.clone();
                    workers.push(std::thread::spawn(move || {
                        let _ = run_session(stream, &ctx, &stop);
                    }));
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    std::thread::sleep(Duration::from_millis(20));
                }
                Err(_) => break,
            }
        }
        for w in workers {
            let _ = w.join();
        }
    });
    Ok(StreamServer { addr, stop, handle })
}

/// Per-timestamp grouping with zero-order hold: `held` keeps every
/// location's latest reading, `fresh` marks which ones belong to the frame
/// currently being assembled.
#[derive(Default)]
struct FrameAssembler {
    held: BTreeMap<BodyLocation, SensorReading>,
    fresh: std::collections::BTreeSet<BodyLocation>,
    fresh_t: Option<u64>,
}

type FrameSnapshot = (u64, BTreeMap<BodyLocation, SensorReading>);

impl FrameAssembler {
    /// Insert one reading. Completes the previous frame when the timestamp
    /// advances past it (laggard path, missing devices zero-order-held) and
    /// the current frame once every active location has reported (fast
    /// path). Snapshots are taken at completion time.
    fn push(
        &mut self,
        combo: &DeviceCombo,
        t: u64,
        loc: BodyLocation,
        reading: SensorReading,
    ) -> Vec<FrameSnapshot> {
        let mut completed = Vec::new();
        if self.fresh_t.is_some_and(|ft| t > ft) {
            completed.push((self.fresh_t.take().unwrap(), self.held.clone()));
            self.fresh.clear();
        }
        self.held.insert(loc, reading);
        self.fresh.insert(loc);
        self.fresh_t = Some(t);
        if combo.active().all(|l| self.fresh.contains(&l)) {
            completed.push((self.fresh_t.take().unwrap(), self.held.clone()));
            self.fresh.clear();
        }
        completed
    }

    /// Pending (incomplete) frame snapshot, if any.
    fn flush(&mut self) -> Option<FrameSnapshot> {
        let t = self.fresh_t.take()?;
        self.fresh.clear();
        Some((t, self.held.clone()))
    }
}

fn covers(snapshot: &BTreeMap<BodyLocation, SensorReading>, combo: &DeviceCombo) -> bool {
    combo.active().all(|l| snapshot.contains_key(&l))
}

enum Phase {
    AwaitCombo,
    Calibrating {
        combo: DeviceCombo,
        frames: Vec<BTreeMap<BodyLocation, SensorReading>>,
        assembler: FrameAssembler,
    },
    Running {
        state: EstimatorState,
        refiner: Option<Refiner>,
        assembler: FrameAssembler,
    },
}

struct Session<'a> {
    ctx: &'a ServerCtx,
    phase: Phase,
    last_t: Option<u64>,
}

enum Reply {
    None,
    Messages(Vec<ServerMsg>),
    /// Error answered, then the connection closes.
    Fatal(ServerMsg),
}

fn err(code: &str, msg: impl Into<String>) -> ServerMsg {
    ServerMsg::Err { code: code.into(), msg: msg.into() }
}

fn reading_of(acc: [f64; 3], rot: [f64; 9]) -> SensorReading {
    SensorReading { accel: Vec3::new(acc[0], acc[1], acc[2]), orient: RotMat { m: rot } }
}

impl<'a> Session<'a> {
    fn new(ctx: &'a ServerCtx) -> Session<'a> {
        Session { ctx, phase: Phase::AwaitCombo, last_t: None }
    }

    fn handle(&mut self, msg: ClientMsg) -> Reply {
        match msg {
            ClientMsg::Combo { active } => {
                let id = active.join("+");
                match DeviceCombo::from_id(&id) {
                    Ok(combo) => {
                        self.last_t = None;
                        self.phase = Phase::Calibrating {
                            combo,
                            frames: Vec::new(),
                            assembler: FrameAssembler::default(),
                        };
                        Reply::None
                    }
                    Err(e) => Reply::Fatal(err("bad_combo", e.to_string())),
                }
            }
            ClientMsg::CalibBegin => match &mut self.phase {
                Phase::Calibrating { frames, assembler, .. } => {
                    frames.clear();
                    *assembler = FrameAssembler::default();
                    Reply::None
                }
                Phase::AwaitCombo => Reply::Fatal(err("no_combo", "declare a combo first")),
                Phase::Running { .. } => {
                    Reply::Fatal(err("already_running", "recalibration requires a new combo"))
                }
            },
            ClientMsg::CalibEnd => {
                let Phase::Calibrating { combo, frames, assembler } = &mut self.phase else {
                    return Reply::Fatal(err("not_calibrating", "calib_end outside calibration"));
                };
                if let Some((_, snap)) = assembler.flush() {
                    if covers(&snap, combo) {
                        frames.push(snap);
                    }
                }
                let profile = match calibrate_tpose(
                    frames,
                    combo,
                    combo.active().next().expect("combo non-empty"),
                    self.ctx.gravity,
                    self.ctx.fps,
                ) {
                    Ok(p) => p,
                    Err(e) => return Reply::Fatal(err("calibration_failed", e.to_string())),
                };
                let state = EstimatorState::new(
                    combo.clone(),
                    profile,
                    &self.ctx.bundle,
                    self.ctx.fusion,
                );
                let refiner = self.ctx.refiner.map(Refiner::new);
                let assembler = std::mem::take(assembler);
                self.phase = Phase::Running { state, refiner, assembler };
                Reply::None
            }
            ClientMsg::Imu { t, loc, acc, rot } => {
                if self.last_t.is_some_and(|last| t < last) {
                    return Reply::Fatal(err(
                        "time_regression",
                        format!("timestamp {t} after {}", self.last_t.unwrap()),
                    ));
                }
                self.last_t = Some(t);
                let location = match BodyLocation::from_id(&loc) {
                    Ok(l) => l,
                    Err(e) => return Reply::Fatal(err("bad_location", e.to_string())),
                };
                match &mut self.phase {
                    Phase::AwaitCombo => Reply::Fatal(err("uncalibrated", "imu before combo")),
                    Phase::Calibrating { combo, frames, assembler } => {
                        if !combo.contains(location) {
                            return Reply::Fatal(err("inactive_location", loc));
                        }
                        // Leading frames before every device has spoken are
                        // dropped; afterwards each completed frame keeps its
                        // (zero-order-held) snapshot.
                        for (_, snap) in assembler.push(combo, t, location, reading_of(acc, rot)) {
                            if covers(&snap, combo) {
                                frames.push(snap);
                            }
                        }
                        Reply::None
                    }
                    Phase::Running { state, refiner, assembler } => {
                        if !state.combo.contains(location) {
                            return Reply::Fatal(err("inactive_location", loc));
                        }
                        let combo = state.combo.clone();
                        let done = assembler.push(&combo, t, location, reading_of(acc, rot));
                        let mut out = Vec::new();
                        for (frame_t, raw) in done {
                            match Self::run_frame(self.ctx, state, refiner, &raw, frame_t) {
                                Ok(msg) => out.push(msg),
                                Err(fatal) => return Reply::Fatal(fatal),
                            }
                        }
                        if out.is_empty() {
                            Reply::None
                        } else {
                            Reply::Messages(out)
                        }
                    }
                }
            }
        }
    }

    fn run_frame(
        ctx: &ServerCtx,
        state: &mut EstimatorState,
        refiner: &mut Option<Refiner>,
        raw: &BTreeMap<BodyLocation, SensorReading>,
        t: u64,
    ) -> Result<ServerMsg, ServerMsg> {
        let out = state
            .step(&ctx.bundle, &ctx.rig, raw)
            .map_err(|e| err("step_failed", e.to_string()))?;
        let out = match refiner {
            Some(r) => r.process(&ctx.rig, &out, 1.0 / ctx.fps),
            None => out,
        };
        Ok(ServerMsg::from_output(t, &out))
    }
}

fn run_session(
    stream: TcpStream,
    ctx: &ServerCtx,
    stop: &AtomicBool,
) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_millis(200)))?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut session = Session::new(ctx);
    let mut line = String::new();
    loop {
        if stop.load(Ordering::SeqCst) {
            return Ok(());
        }
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) => return Ok(()), // client closed
            Ok(_) => {}
            Err(e)
                if e.kind() == std::io::ErrorKind::WouldBlock
                    || e.kind() == std::io::ErrorKind::TimedOut =>
            {
                continue;
            }
            Err(e) => return Err(e),
        }
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<ClientMsg>(line.trim()) {
            Ok(msg) => session.handle(msg),
            Err(e) => Reply::Fatal(err("bad_record", e.to_string())),
        };
        match reply {
            Reply::None => {}
            Reply::Messages(msgs) => {
                for m in msgs {
                    serde_json::to_writer(&mut writer, &m)?;
                    writer.write_all(b"\n")?;
                }
                writer.flush()?;
            }
            Reply::Fatal(m) => {
                serde_json::to_writer(&mut writer, &m)?;
                writer.write_all(b"\n")?;
                writer.flush()?;
                return Ok(());
            }
        }
    }
}

/// 6D-encode a rotation list (used by clients/tests checking wire payloads).
pub fn rot6d_payload(rots: &[RotMat]) -> Vec<f64> {
    rots.iter().flat_map(|r| rot6d_from_matrix(r).r).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn message_wire_format() {
        let m = ClientMsg::Imu { t: 7, loc: "lwrist".into(), acc: [0.0, 1.0, 2.0], rot: [1.0; 9] };
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("\"type\":\"imu\""), "{s}");
        assert!(s.contains("\"loc\":\"lwrist\""));
        let back: ClientMsg = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);

        let c: ClientMsg = serde_json::from_str("{\"type\":\"calib_begin\"}").unwrap();
        assert_eq!(c, ClientMsg::CalibBegin);

        let e: ServerMsg = serde_json::from_str(
            "{\"type\":\"err\",\"code\":\"uncalibrated\",\"msg\":\"x\"}",
        )
        .unwrap();
        assert_eq!(e, ServerMsg::Err { code: "uncalibrated".into(), msg: "x".into() });

        assert!(serde_json::from_str::<ClientMsg>("{\"type\":\"warp\"}").is_err());
    }
}
