//! Streaming-protocol integration tests: state machine, error answers,
//! session isolation.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::Arc;

use imupose::estimator::FusionThresholds;
use imupose::rotmath::Vec3;
use imupose::seqnet::ModelBundle;
use imupose::skeleton::builtin_toy_rig;
use imupose::stream::{serve, ServerCtx, ServerMsg, StreamServer};

fn test_server() -> StreamServer {
    let ctx = Arc::new(ServerCtx {
        bundle: ModelBundle::new(8, 1, 12, 60.0, 1),
        rig: builtin_toy_rig(),
        fusion: FusionThresholds::default(),
        refiner: None,
        gravity: Vec3::default(),
        fps: 60.0,
    });
    serve("127.0.0.1:0", ctx).unwrap()
}

struct Client {
    sock: TcpStream,
    reader: BufReader<TcpStream>,
}

impl Client {
    fn connect(server: &StreamServer) -> Client {
        let sock = TcpStream::connect(server.addr()).unwrap();
        sock.set_nodelay(true).unwrap();
        let reader = BufReader::new(sock.try_clone().unwrap());
        Client { sock, reader }
    }

    fn send(&mut self, line: &str) {
        self.sock.write_all(line.as_bytes()).unwrap();
        self.sock.write_all(b"\n").unwrap();
        self.sock.flush().unwrap();
    }

    fn recv(&mut self) -> ServerMsg {
        let mut line = String::new();
        self.reader.read_line(&mut line).unwrap();
        serde_json::from_str(line.trim()).unwrap()
    }

    fn imu(t: u64, loc: &str) -> String {
        format!(
            "{{\"type\":\"imu\",\"t\":{t},\"loc\":\"{loc}\",\"acc\":[0,0,0],\"rot\":[1,0,0,0,1,0,0,0,1]}}"
        )
    }

    /// Full T-pose handshake for a single-location combo.
    fn calibrate(&mut self, loc: &str, frames: u64) -> u64 {
        self.send(&format!("{{\"type\":\"combo\",\"active\":[\"{loc}\"]}}"));
        self.send("{\"type\":\"calib_begin\"}");
        for t in 0..frames {
            self.send(&Self::imu(t * 16_667, loc));
        }
        self.send("{\"type\":\"calib_end\"}");
        frames * 16_667
    }
}

fn expect_err(msg: ServerMsg, expect_code: &str) {
    match msg {
        ServerMsg::Err { code, .. } => assert_eq!(code, expect_code),
        other => panic!("expected err {expect_code}, got {other:?}"),
    }
}

#[test]
fn imu_before_calibration_is_rejected() {
    let server = test_server();
    let mut c = Client::connect(&server);
    c.send(&Client::imu(0, "lwrist"));
    expect_err(c.recv(), "uncalibrated");
    server.shutdown();
}

#[test]
fn unknown_record_types_are_rejected() {
    let server = test_server();
    let mut c = Client::connect(&server);
    c.send("{\"type\":\"warp\",\"factor\":9}");
    expect_err(c.recv(), "bad_record");

    let mut c2 = Client::connect(&server);
    c2.send("this is not json");
    expect_err(c2.recv(), "bad_record");
    server.shutdown();
}

#[test]
fn timestamps_must_be_monotone() {
    let server = test_server();
    let mut c = Client::connect(&server);
    c.calibrate("head", 60);
    c.send(&Client::imu(2_000_000, "head"));
    let ServerMsg::Pose { .. } = c.recv() else { panic!("expected a pose") };
    c.send(&Client::imu(1_999_999, "head"));
    expect_err(c.recv(), "time_regression");
    server.shutdown();
}

#[test]
fn noisy_calibration_is_rejected() {
    let server = test_server();
    let mut c = Client::connect(&server);
    c.send("{\"type\":\"combo\",\"active\":[\"head\"]}");
    c.send("{\"type\":\"calib_begin\"}");
    for t in 0..60u64 {
        // Device visibly rotating during the hold.
        let a = (t as f64 * 3.0).to_radians();
        let (s, cos) = a.sin_cos();
        c.send(&format!(
            "{{\"type\":\"imu\",\"t\":{},\"loc\":\"head\",\"acc\":[0,0,0],\"rot\":[{cos},0,{s},0,1,0,{},0,{cos}]}}",
            t * 16_667,
            -s
        ));
    }
    c.send("{\"type\":\"calib_end\"}");
    expect_err(c.recv(), "calibration_failed");
    server.shutdown();
}

#[test]
fn sessions_are_isolated() {
    let server = test_server();
    let mut a = Client::connect(&server);
    let mut b = Client::connect(&server);
    let t0a = a.calibrate("head", 60);
    let t0b = b.calibrate("lwrist", 60);

    // Interleave the two streams; both must advance independently.
    for k in 0..5u64 {
        a.send(&Client::imu(t0a + k * 16_667, "head"));
        b.send(&Client::imu(t0b + k * 16_667, "lwrist"));
        let pa = a.recv();
        let pb = b.recv();
        assert!(matches!(pa, ServerMsg::Pose { .. }));
        assert!(matches!(pb, ServerMsg::Pose { .. }));
    }

    // One client dying does not disturb the other.
    drop(a);
    b.send(&Client::imu(t0b + 5 * 16_667, "lwrist"));
    assert!(matches!(b.recv(), ServerMsg::Pose { .. }));
    server.shutdown();
}

#[test]
fn lower_rate_devices_are_held() {
    // Two active locations, one reporting at half rate: poses still come out
    // at the fast device's rate via zero-order hold (laggard completion).
    let server = test_server();
    let mut c = Client::connect(&server);
    c.send("{\"type\":\"combo\",\"active\":[\"rpocket\",\"lwrist\"]}");
    c.send("{\"type\":\"calib_begin\"}");
    for t in 0..60u64 {
        c.send(&Client::imu(t * 16_667, "rpocket"));
        c.send(&Client::imu(t * 16_667, "lwrist"));
    }
    c.send("{\"type\":\"calib_end\"}");
    let t0 = 60 * 16_667u64;

    let mut poses = 0;
    for k in 0..10u64 {
        let t = t0 + k * 16_667;
        c.send(&Client::imu(t, "rpocket"));
        if k % 2 == 0 {
            c.send(&Client::imu(t, "lwrist"));
        }
    }
    // Flush the stream so the final (complete) frame is emitted too.
    c.send(&Client::imu(t0 + 10 * 16_667, "rpocket"));
    c.send(&Client::imu(t0 + 10 * 16_667, "lwrist"));
    for _ in 0..11 {
        match c.recv() {
            ServerMsg::Pose { .. } => poses += 1,
            other => panic!("unexpected {other:?}"),
        }
    }
    assert_eq!(poses, 11, "every fast-device frame yields a pose");
    server.shutdown();
}
