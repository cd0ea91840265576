//! AT-style command datagrams over UDP plus a loopback simulated drone
//! endpoint. The endpoint advances the same tick integrator as the
//! in-process simulation, so wire-driven and direct state evolution agree
//! exactly.

use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::pilot::{apply_tick, ref_event, DroneState, Mode, WireTick};

/// Default destination port for command datagrams.
pub const DEFAULT_PORT: u16 = 5556;
/// REF control word with the constant bits {18, 20, 22, 24, 28} set.
pub const REF_BASE: u32 = 290717696;
/// [`REF_BASE`] with the takeoff bit (9) set.
pub const REF_TAKEOFF: u32 = 290718208;
/// Hard ceiling on datagram size.
pub const MAX_DATAGRAM: usize = 1024;
/// Keepalive interval while a session is idle.
pub const DEFAULT_WATCHDOG: Duration = Duration::from_millis(30);
/// Endpoint enters a failsafe hover after this much silence.
pub const DEFAULT_FAILSAFE: Duration = Duration::from_secs(2);

/// One decoded command datagram.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AtCommand {
    Ref { seq: u32, takeoff: bool },
    Pcmd { seq: u32, flag: u8, roll: f32, pitch: f32, gaz: f32, yaw: f32 },
}

impl AtCommand {
    pub fn seq(&self) -> u32 {
        match *self {
            AtCommand::Ref { seq, .. } | AtCommand::Pcmd { seq, .. } => seq,
        }
    }
}

/// REF control word: constant bits plus the takeoff flag at bit 9.
pub fn ref_word(takeoff: bool) -> u32 {
    let base = (1 << 18) | (1 << 20) | (1 << 22) | (1 << 24) | (1 << 28);
    base | ((takeoff as u32) << 9)
}

/// A progressive-command axis: the IEEE-754 single-precision bit pattern
/// reinterpreted as a signed 32-bit integer.
pub fn float_arg(v: f32) -> i32 {
    v.to_bits() as i32
}

pub fn encode_ref(seq: u32, takeoff: bool) -> Vec<u8> {
    assert!(seq >= 1, "sequence numbers start at 1");
    format!("AT*REF={seq},{}\r", ref_word(takeoff)).into_bytes()
}

pub fn encode_pcmd(
    seq: u32,
    flag: u8,
    roll: f32,
    pitch: f32,
    gaz: f32,
    yaw: f32,
) -> Result<Vec<u8>> {
    assert!(seq >= 1, "sequence numbers start at 1");
    let mut clamped = [roll, pitch, gaz, yaw];
    for (name, v) in ["roll", "pitch", "gaz", "yaw"].iter().zip(clamped.iter_mut()) {
        if v.is_nan() {
            return Err(Error::Input(format!("PCMD {name} axis is NaN")));
        }
        let c = v.clamp(-1.0, 1.0);
        if c != *v {
            log::warn!("PCMD {name} axis {v} clamped to {c}");
            *v = c;
        }
    }
    let [r, p, g, y] = clamped;
    Ok(format!(
        "AT*PCMD={seq},{flag},{},{},{},{}\r",
        float_arg(r),
        float_arg(p),
        float_arg(g),
        float_arg(y)
    )
    .into_bytes())
}

pub fn encode(cmd: &AtCommand) -> Result<Vec<u8>> {
    match *cmd {
        AtCommand::Ref { seq, takeoff } => Ok(encode_ref(seq, takeoff)),
        AtCommand::Pcmd { seq, flag, roll, pitch, gaz, yaw } => {
            encode_pcmd(seq, flag, roll, pitch, gaz, yaw)
        }
    }
}

fn parse_seq(tok: &str) -> Result<u32> {
    let seq: u32 =
        tok.parse().map_err(|_| Error::Input(format!("invalid sequence number {tok:?}")))?;
    if seq == 0 {
        return Err(Error::Input("sequence numbers start at 1".into()));
    }
    Ok(seq)
}

/// Decode one datagram; the exact inverse of [`encode`] on valid input.
pub fn parse_at(bytes: &[u8]) -> Result<AtCommand> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::Input("datagram is not ASCII text".into()))?;
    let body = text
        .strip_suffix('\r')
        .ok_or_else(|| Error::Input("datagram missing CR terminator".into()))?;
    if let Some(args) = body.strip_prefix("AT*REF=") {
        let (seq, word) = args
            .split_once(',')
            .ok_or_else(|| Error::Input("REF needs `seq,word`".into()))?;
        let seq = parse_seq(seq)?;
        let word: u32 =
            word.parse().map_err(|_| Error::Input(format!("invalid REF word {word:?}")))?;
        Ok(AtCommand::Ref { seq, takeoff: word & (1 << 9) != 0 })
    } else if let Some(args) = body.strip_prefix("AT*PCMD=") {
        let fields: Vec<&str> = args.split(',').collect();
        let [seq, flag, roll, pitch, gaz, yaw] = fields[..] else {
            return Err(Error::Input(format!("PCMD needs 6 fields, found {}", fields.len())));
        };
        let seq = parse_seq(seq)?;
        let flag: u8 =
            flag.parse().map_err(|_| Error::Input(format!("invalid PCMD flag {flag:?}")))?;
        let mut axes = [0f32; 4];
        for (slot, tok) in axes.iter_mut().zip([roll, pitch, gaz, yaw]) {
            let bits: i32 = tok
                .parse()
                .map_err(|_| Error::Input(format!("invalid PCMD axis {tok:?}")))?;
            let v = f32::from_bits(bits as u32);
            if v.is_nan() {
                return Err(Error::Input("PCMD axis decodes to NaN".into()));
            }
            *slot = v;
        }
        let [roll, pitch, gaz, yaw] = axes;
        Ok(AtCommand::Pcmd { seq, flag, roll, pitch, gaz, yaw })
    } else {
        Err(Error::Input("unknown AT verb".into()))
    }
}

// ---------------------------------------------------------------------------
// Sending session

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LogEntry {
    pub seq: u32,
    pub verb: &'static str,
    pub keepalive: bool,
}

fn send_with_retry(mut attempt: impl FnMut() -> std::io::Result<usize>) -> Result<()> {
    const ATTEMPTS: u32 = 4;
    let mut last = None;
    for _ in 0..ATTEMPTS {
        match attempt() {
            Ok(_) => return Ok(()),
            Err(e) => last = Some(e),
        }
    }
    Err(Error::Transport { attempts: ATTEMPTS, source: last.expect("at least one attempt ran") })
}

/// One command session: owns the socket, the monotonically increasing
/// sequence counter, and the transmission log.
pub struct Session {
    socket: UdpSocket,
    next_seq: u32,
    watchdog: Duration,
    pub log: Vec<LogEntry>,
}

impl Session {
    pub fn connect<A: ToSocketAddrs>(dest: A) -> Result<Session> {
        Session::with_watchdog(dest, DEFAULT_WATCHDOG)
    }

    pub fn with_watchdog<A: ToSocketAddrs>(dest: A, watchdog: Duration) -> Result<Session> {
        let open = || -> std::io::Result<UdpSocket> {
            let socket = UdpSocket::bind(("0.0.0.0", 0))?;
            socket.connect(&dest)?;
            Ok(socket)
        };
        let socket = open().map_err(|e| Error::Transport { attempts: 1, source: e })?;
        Ok(Session { socket, next_seq: 1, watchdog, log: Vec::new() })
    }

    pub fn last_seq(&self) -> u32 {
        self.next_seq - 1
    }

    fn transmit(&mut self, bytes: &[u8], verb: &'static str, keepalive: bool) -> Result<u32> {
        assert!(bytes.len() <= MAX_DATAGRAM, "datagram exceeds {MAX_DATAGRAM} bytes");
        let socket = &self.socket;
        send_with_retry(|| socket.send(bytes))?;
        let seq = self.next_seq;
        self.next_seq += 1;
        self.log.push(LogEntry { seq, verb, keepalive });
        Ok(seq)
    }

    pub fn send_ref(&mut self, takeoff: bool) -> Result<u32> {
        let bytes = encode_ref(self.next_seq, takeoff);
        self.transmit(&bytes, "REF", false)
    }

    pub fn send_pcmd(&mut self, flag: u8, roll: f32, pitch: f32, gaz: f32, yaw: f32) -> Result<u32> {
        let bytes = encode_pcmd(self.next_seq, flag, roll, pitch, gaz, yaw)?;
        self.transmit(&bytes, "PCMD", false)
    }

    pub fn send_tick(&mut self, tick: &WireTick) -> Result<u32> {
        match *tick {
            WireTick::Ref { takeoff } => self.send_ref(takeoff),
            WireTick::Pcmd { flag, roll, pitch, gaz, yaw } => {
                self.send_pcmd(flag, roll, pitch, gaz, yaw)
            }
        }
    }

    fn keepalive(&mut self) -> Result<u32> {
        let bytes = encode_pcmd(self.next_seq, 0, 0.0, 0.0, 0.0, 0.0)?;
        self.transmit(&bytes, "PCMD", true)
    }

    /// Sit idle for `span`, emitting a hover keepalive every watchdog
    /// interval; returns the number of keepalives sent.
    pub fn idle(&mut self, span: Duration) -> Result<usize> {
        let mut fired = 0;
        let mut remaining = span;
        while remaining >= self.watchdog {
            std::thread::sleep(self.watchdog);
            self.keepalive()?;
            fired += 1;
            remaining -= self.watchdog;
        }
        if !remaining.is_zero() {
            std::thread::sleep(remaining);
        }
        Ok(fired)
    }
}

// ---------------------------------------------------------------------------
// Simulated endpoint

#[derive(Clone, Debug, PartialEq)]
pub struct EndpointStats {
    pub drone: DroneState,
    pub seq_last: u32,
    pub malformed: u64,
    pub stale: u64,
}

struct EndpointShared {
    state: Mutex<EndpointStats>,
    stop: AtomicBool,
}

/// Loopback drone double: parses datagrams, enforces sequence monotonicity,
/// applies REF/PCMD through the shared tick integrator, and falls back to a
/// hover when the link goes silent.
pub struct Endpoint {
    addr: SocketAddr,
    shared: Arc<EndpointShared>,
    handle: Option<JoinHandle<()>>,
}

impl Endpoint {
    pub fn bind<A: ToSocketAddrs>(addr: A, failsafe: Duration) -> Result<Endpoint> {
        let open = || -> std::io::Result<(UdpSocket, SocketAddr)> {
            let socket = UdpSocket::bind(&addr)?;
            socket.set_read_timeout(Some(Duration::from_millis(5)))?;
            let local = socket.local_addr()?;
            Ok((socket, local))
        };
        let (socket, local) =
            open().map_err(|e| Error::Transport { attempts: 1, source: e })?;
        let shared = Arc::new(EndpointShared {
            state: Mutex::new(EndpointStats {
                drone: DroneState::default(),
                seq_last: 0,
                malformed: 0,
                stale: 0,
            }),
            stop: AtomicBool::new(false),
        });
        let worker = Arc::clone(&shared);
        let handle = std::thread::spawn(move || run_endpoint(socket, worker, failsafe));
        Ok(Endpoint { addr: local, shared, handle: Some(handle) })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Consistent copy of the observable state (single lock, no torn reads).
    pub fn stats(&self) -> EndpointStats {
        self.shared.state.lock().expect("endpoint state lock").clone()
    }

    /// `mode,x,y,z,seq_last` snapshot line.
    pub fn snapshot_csv(&self) -> String {
        let st = self.stats();
        format!(
            "{},{},{},{},{}",
            st.drone.mode, st.drone.position[0], st.drone.position[1], st.drone.position[2], st.seq_last
        )
    }
}

impl Drop for Endpoint {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn run_endpoint(socket: UdpSocket, shared: Arc<EndpointShared>, failsafe: Duration) {
    let mut buf = [0u8; 2048];
    let mut last_rx = Instant::now();
    let mut failsafed = false;
    while !shared.stop.load(Ordering::SeqCst) {
        match socket.recv_from(&mut buf) {
            Ok((n, _)) => {
                last_rx = Instant::now();
                failsafed = false;
                let mut st = shared.state.lock().expect("endpoint state lock");
                apply_datagram(&buf[..n], &mut st);
            }
            Err(e)
                if matches!(
                    e.kind(),
                    std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                ) =>
            {
                if !failsafed && last_rx.elapsed() >= failsafe {
                    failsafed = true;
                    let mut st = shared.state.lock().expect("endpoint state lock");
                    if st.drone.mode != Mode::Landed {
                        // A climb that never left the ground settles back to
                        // Landed; anything airborne holds position.
                        if st.drone.position[2] > 0.0 {
                            st.drone.mode = Mode::Hovering;
                        } else {
                            st.drone.mode = Mode::Landed;
                        }
                        st.drone.velocity = [0.0; 3];
                        log::warn!("failsafe: no datagrams for {failsafe:?}, holding position");
                    }
                }
            }
            Err(e) => {
                log::error!("endpoint receive error: {e}");
                break;
            }
        }
    }
}

fn apply_datagram(bytes: &[u8], st: &mut EndpointStats) {
    match parse_at(bytes) {
        Err(e) => {
            st.malformed += 1;
            log::warn!("malformed datagram ignored: {e}");
        }
        Ok(cmd) => {
            if cmd.seq() <= st.seq_last {
                st.stale += 1;
                log::warn!("stale sequence {} after {} ignored", cmd.seq(), st.seq_last);
                return;
            }
            st.seq_last = cmd.seq();
            match cmd {
                AtCommand::Ref { takeoff, .. } => ref_event(&mut st.drone, takeoff),
                AtCommand::Pcmd { flag, roll, pitch, gaz, yaw, .. } => {
                    apply_tick(&mut st.drone, &WireTick::Pcmd { flag, roll, pitch, gaz, yaw })
                }
            }
        }
    }
}
