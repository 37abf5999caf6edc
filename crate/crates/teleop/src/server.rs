use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crate::protocol::{parse_client_line, ClientMessage, Command, ErrorCode, ServerMessage};
use crate::session::Session;
use crate::TeleopError;

/// Wall-clock pacing of the server loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServeOptions {
    pub control_hz: f64,
    pub broadcast_hz: f64,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self { control_hz: 10.0, broadcast_hz: 30.0 }
    }
}

enum Event {
    Control(ClientMessage),
    Disconnected,
}

fn send(writer: &Mutex<TcpStream>, msg: &ServerMessage) -> bool {
    let mut w = writer.lock().expect("writer lock");
    w.write_all(msg.to_line().as_bytes()).and_then(|_| w.flush()).is_ok()
}

/// Reads client lines: commands overwrite the shared cell, everything else
/// is queued for the control loop in arrival order.
fn reader_loop(stream: TcpStream, latest: Arc<Mutex<Option<Command>>>, events: mpsc::Sender<Event>, writer: Arc<Mutex<TcpStream>>) {
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        match parse_client_line(&line) {
            Ok(ClientMessage::Cmd(c)) => *latest.lock().expect("command lock") = Some(c),
            Ok(other) => {
                if events.send(Event::Control(other)).is_err() {
                    break;
                }
            }
            Err((code, msg)) => {
                log::warn!("dropping client message: {msg}");
                send(&writer, &ServerMessage::error(code, msg));
            }
        }
    }
    let _ = events.send(Event::Disconnected);
}

/// Drives one client connection until it disconnects or `shutdown` is set.
fn drive(session: &mut Session, stream: TcpStream, opts: ServeOptions, shutdown: &AtomicBool) -> Result<(), TeleopError> {
    let io = |source| TeleopError::Io { context: "client socket".into(), source };
    stream.set_nodelay(true).map_err(io)?;
    let writer = Arc::new(Mutex::new(stream.try_clone().map_err(io)?));
    let latest = Arc::new(Mutex::new(None));
    let (tx, rx): (_, Receiver<Event>) = mpsc::channel();
    {
        let (latest, writer) = (latest.clone(), writer.clone());
        thread::spawn(move || reader_loop(stream, latest, tx, writer));
    }

    let control_dt = Duration::from_secs_f64(1.0 / opts.control_hz);
    let frame_dt = Duration::from_secs_f64(1.0 / opts.broadcast_hz);
    let start = Instant::now();
    let (mut next_control, mut next_frame) = (start, start);
    loop {
        if shutdown.load(Ordering::SeqCst) {
            break;
        }
        let now = Instant::now();
        if now >= next_control {
            loop {
                match rx.try_recv() {
                    Ok(Event::Control(msg)) => {
                        if let Err(e) = session.handle(msg) {
                            let code = match e {
                                TeleopError::Sim(_) => ErrorCode::InvalidTarget,
                                _ => ErrorCode::IoFailure,
                            };
                            send(&writer, &ServerMessage::error(code, e.to_string()));
                        }
                    }
                    Ok(Event::Disconnected) | Err(TryRecvError::Disconnected) => return Ok(()),
                    Err(TryRecvError::Empty) => break,
                }
            }
            if let Some(c) = latest.lock().expect("command lock").take() {
                session.handle(ClientMessage::Cmd(c))?;
            }
            session.control_tick()?;
            next_control += control_dt;
        }
        if now >= next_frame {
            if !send(&writer, &ServerMessage::Frame(session.frame())) {
                return Ok(());
            }
            next_frame += frame_dt;
        }
        let wake = next_control.min(next_frame);
        if let Some(d) = wake.checked_duration_since(Instant::now()) {
            thread::sleep(d.min(Duration::from_millis(20)));
        }
    }
    Ok(())
}

/// Serves clients one at a time on `listener` until `shutdown` is set.
/// Returns the session so callers can inspect what was recorded.
pub fn serve(listener: TcpListener, mut session: Session, opts: ServeOptions, shutdown: Arc<AtomicBool>) -> Result<Session, TeleopError> {
    let io = |source| TeleopError::Io { context: "listener".into(), source };
    listener.set_nonblocking(true).map_err(io)?;
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                log::info!("client connected from {peer}");
                stream.set_nonblocking(false).map_err(io)?;
                drive(&mut session, stream, opts, &shutdown)?;
                // an unfinished recording is dropped with the connection
                if session.is_recording() {
                    session.handle(ClientMessage::Reset { slot_xy: None })?;
                }
                log::info!("client disconnected");
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
            Err(e) => return Err(io(e)),
        }
    }
    Ok(session)
}
