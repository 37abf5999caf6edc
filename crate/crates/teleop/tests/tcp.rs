use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use visk_core::data::{load_demo, DatasetIndex};
use visk_teleop::protocol::{ClientMessage, Command, ErrorCode, ServerMessage};
use visk_teleop::{serve, ServeOptions, Session, TeleopConfig};

fn send(w: &mut TcpStream, msg: &ClientMessage) {
    let mut line = serde_json::to_string(msg).unwrap();
    line.push('\n');
    w.write_all(line.as_bytes()).unwrap();
}

fn next(reader: &mut BufReader<TcpStream>) -> ServerMessage {
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    serde_json::from_str(&line).unwrap()
}

#[test]
fn synthetic_client_records_a_demo() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TeleopConfig::default();
    let lim = cfg.env.max_tick();
    let session = Session::new(cfg, dir.path()).unwrap();

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let shutdown = Arc::new(AtomicBool::new(false));
    let server = {
        let shutdown = shutdown.clone();
        let opts = ServeOptions { control_hz: 200.0, broadcast_hz: 400.0 };
        thread::spawn(move || serve(listener, session, opts, shutdown))
    };

    let mut w = TcpStream::connect(addr).unwrap();
    w.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    let mut r = BufReader::new(w.try_clone().unwrap());

    w.write_all(b"{oops\n").unwrap();
    w.write_all(b"{\"type\":\"teleport\"}\n").unwrap();
    let mut codes = Vec::new();
    while codes.len() < 2 {
        if let ServerMessage::Error { code, .. } = next(&mut r) {
            codes.push(code);
        }
    }
    assert_eq!(codes, [ErrorCode::MalformedJson, ErrorCode::UnknownType]);

    let slot = [20.0, 12.0];
    send(&mut w, &ClientMessage::StartEpisode { slot_xy: Some(slot) });
    let deadline = Instant::now() + Duration::from_secs(60);
    let mut saw_recording = false;
    loop {
        assert!(Instant::now() < deadline, "no insertion over the socket");
        let ServerMessage::Frame(f) = next(&mut r) else { continue };
        if !f.recording {
            assert!(!saw_recording, "recording ended before success");
            continue;
        }
        saw_recording = true;
        if f.success {
            break;
        }
        let d = [slot[0] - f.proprio[0] as f64, slot[1] - f.proprio[1] as f64];
        let aligned = d[0].abs().max(d[1].abs()) < 0.15;
        let c = Command {
            vx: (d[0] / lim).clamp(-1.0, 1.0),
            vy: (d[1] / lim).clamp(-1.0, 1.0),
            vz: if aligned { -1.0 } else { 0.0 },
            grip: 1.0,
            ts: 0.0,
        };
        send(&mut w, &ClientMessage::Cmd(c));
    }
    send(&mut w, &ClientMessage::StopEpisode);
    // the stop is applied on the next control tick; wait for the idle frame
    loop {
        if let ServerMessage::Frame(f) = next(&mut r) {
            if !f.recording {
                break;
            }
        }
    }
    drop(r);
    drop(w);
    shutdown.store(true, Ordering::SeqCst);
    let session = server.join().unwrap().unwrap();

    assert_eq!(session.index().demos.len(), 1);
    let index = DatasetIndex::load(dir.path()).unwrap();
    assert_eq!(index.demos.len(), 1);
    assert_eq!(index.demos[0].slot_xy, slot);
    let demo = load_demo(&dir.path().join(&index.demos[0].dir)).unwrap();
    demo.validate().unwrap();
}
