//! Line-delimited JSON client for out-of-process scorers and detectors, and
//! a bundled echo server with fault injection for testing it.
//!
//! Each request is one JSON object followed by `\n`; the reply is one JSON
//! object followed by `\n` on the same connection. See `docs/protocol.md`.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Detection, Detector, GoalQuery, PerceptionError, ScoreRequest, Scorer, FALLBACK_SCORE};
use crate::image::{PixelMask, RgbImage};
use crate::simulator::Observation;

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(2);
pub const SCORER_ADDR_ENV: &str = "GOALNAV_SCORER_ADDR";
pub const DETECTOR_ADDR_ENV: &str = "GOALNAV_DETECTOR_ADDR";

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct WireImage {
    pub width: usize,
    pub height: usize,
    pub rgb_base64: String,
}

impl WireImage {
    pub fn encode(img: &RgbImage) -> Self {
        Self {
            width: img.width,
            height: img.height,
            rgb_base64: BASE64.encode(&img.data),
        }
    }

    pub fn decode(&self) -> Option<RgbImage> {
        let data = BASE64.decode(&self.rgb_base64).ok()?;
        (data.len() == self.width * self.height * 3).then_some(RgbImage {
            width: self.width,
            height: self.height,
            data,
        })
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct WireQuery {
    pub text: String,
    pub query_id: u32,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireRequest {
    ScoreFrontiers {
        v: u32,
        request_id: u64,
        agent_id: usize,
        query: WireQuery,
        frontiers: Vec<[f64; 2]>,
        history: String,
        stages: Vec<String>,
        image: Option<WireImage>,
    },
    Detect {
        v: u32,
        request_id: u64,
        query: WireQuery,
        image: WireImage,
    },
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct WireDetection {
    pub bbox: [u32; 4],
    pub confidence: f64,
    /// Row-major pixel indices.
    pub mask: Vec<u32>,
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq, Default)]
pub struct WireReply {
    pub v: u32,
    pub request_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<Vec<WireDetection>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One persistent connection, one request in flight. Any failure drops the
/// connection so a late reply can never be read as the next answer.
struct LineClient {
    addr: String,
    timeout: Duration,
    conn: Mutex<Option<BufReader<TcpStream>>>,
    next_id: AtomicU64,
}

fn is_timeout(e: &std::io::Error) -> bool {
    matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut)
}

impl LineClient {
    fn new(addr: impl Into<String>, timeout: Duration) -> Self {
        Self {
            addr: addr.into(),
            timeout,
            conn: Mutex::new(None),
            next_id: AtomicU64::new(1),
        }
    }

    fn connect(&self) -> Result<BufReader<TcpStream>, PerceptionError> {
        let addr: SocketAddr = self
            .addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| PerceptionError::Unavailable(format!("cannot resolve {}", self.addr)))?;
        let stream = TcpStream::connect_timeout(&addr, self.timeout).map_err(|e| {
            if is_timeout(&e) {
                PerceptionError::Timeout
            } else {
                PerceptionError::Unavailable(format!("{}: {e}", self.addr))
            }
        })?;
        stream.set_read_timeout(Some(self.timeout))?;
        stream.set_write_timeout(Some(self.timeout))?;
        stream.set_nodelay(true)?;
        Ok(BufReader::new(stream))
    }

    fn call(&self, req: &WireRequest, request_id: u64) -> Result<WireReply, PerceptionError> {
        let mut line = serde_json::to_string(req).map_err(|e| PerceptionError::Protocol {
            reason: e.to_string(),
            raw: String::new(),
        })?;
        line.push('\n');
        let mut guard = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(self.connect()?);
        }
        let conn = guard.as_mut().expect("connected above");
        let result = (|| {
            conn.get_mut().write_all(line.as_bytes())?;
            conn.get_mut().flush()?;
            let mut reply = String::new();
            conn.read_line(&mut reply)?;
            Ok::<_, std::io::Error>(reply)
        })();
        let raw = match result {
            Ok(r) => r,
            Err(e) => {
                *guard = None;
                return Err(if is_timeout(&e) { PerceptionError::Timeout } else { e.into() });
            }
        };
        if !raw.ends_with('\n') {
            *guard = None;
            return Err(PerceptionError::Protocol {
                reason: "connection closed mid-reply".into(),
                raw,
            });
        }
        let reply: WireReply = serde_json::from_str(raw.trim_end()).map_err(|e| {
            *guard = None;
            PerceptionError::Protocol {
                reason: e.to_string(),
                raw: raw.trim_end().to_string(),
            }
        })?;
        let bad = |reason: String| PerceptionError::Protocol {
            reason,
            raw: raw.trim_end().to_string(),
        };
        if reply.v != PROTOCOL_VERSION {
            return Err(bad(format!("unsupported version {}", reply.v)));
        }
        if reply.request_id != request_id {
            *guard = None;
            return Err(bad(format!("reply for request {} while waiting for {request_id}", reply.request_id)));
        }
        if let Some(msg) = &reply.error {
            return Err(bad(format!("server error: {msg}")));
        }
        Ok(reply)
    }

    fn next_id(&self) -> u64 {
        self.next_id.fetch_add(1, Ordering::Relaxed)
    }
}

fn wire_query(q: &GoalQuery) -> WireQuery {
    WireQuery {
        text: q.text.clone(),
        query_id: q.query_id,
    }
}

pub struct ExternalScorer {
    client: LineClient,
    send_image: bool,
}

impl ExternalScorer {
    pub fn new(addr: impl Into<String>, timeout: Duration) -> Self {
        Self {
            client: LineClient::new(addr, timeout),
            send_image: true,
        }
    }

    /// Endpoint from `GOALNAV_SCORER_ADDR`.
    pub fn from_env() -> Option<Self> {
        std::env::var(SCORER_ADDR_ENV).ok().map(|a| Self::new(a, DEFAULT_TIMEOUT))
    }

    pub fn with_image(mut self, send: bool) -> Self {
        self.send_image = send;
        self
    }
}

impl Scorer for ExternalScorer {
    fn name(&self) -> &str {
        "external"
    }

    fn score_frontiers(&self, req: &ScoreRequest<'_>) -> Result<Vec<f64>, PerceptionError> {
        let request_id = self.client.next_id();
        let wire = WireRequest::ScoreFrontiers {
            v: PROTOCOL_VERSION,
            request_id,
            agent_id: req.agent_id,
            query: wire_query(req.query),
            frontiers: req.frontiers.iter().map(|&(x, y)| [x, y]).collect(),
            history: req.history.to_string(),
            stages: req.stages.iter().map(|s| s.to_string()).collect(),
            image: req.rgb.filter(|_| self.send_image).map(WireImage::encode),
        };
        let reply = self.client.call(&wire, request_id)?;
        let scores = reply.scores.ok_or_else(|| PerceptionError::Protocol {
            reason: "reply has no scores".into(),
            raw: String::new(),
        })?;
        if scores.len() != req.frontiers.len() {
            return Err(PerceptionError::Protocol {
                reason: format!("{} scores for {} frontiers", scores.len(), req.frontiers.len()),
                raw: format!("{scores:?}"),
            });
        }
        Ok(scores)
    }
}

pub struct ExternalDetector {
    client: LineClient,
}

impl ExternalDetector {
    pub fn new(addr: impl Into<String>, timeout: Duration) -> Self {
        Self {
            client: LineClient::new(addr, timeout),
        }
    }

    /// Endpoint from `GOALNAV_DETECTOR_ADDR`.
    pub fn from_env() -> Option<Self> {
        std::env::var(DETECTOR_ADDR_ENV).ok().map(|a| Self::new(a, DEFAULT_TIMEOUT))
    }
}

impl Detector for ExternalDetector {
    fn name(&self) -> &str {
        "external"
    }

    fn detect(&self, obs: &Observation, query: &GoalQuery) -> Result<Vec<Detection>, PerceptionError> {
        let request_id = self.client.next_id();
        let wire = WireRequest::Detect {
            v: PROTOCOL_VERSION,
            request_id,
            query: wire_query(query),
            image: WireImage::encode(&obs.rgb),
        };
        let reply = self.client.call(&wire, request_id)?;
        let (w, h) = (obs.rgb.width, obs.rgb.height);
        let mut out = Vec::new();
        for d in reply.detections.unwrap_or_default() {
            let [x1, y1, x2, y2] = d.bbox;
            let in_box = |i: u32| {
                let (u, v) = (i % w as u32, i / w as u32);
                (i as usize) < w * h && u >= x1 && u < x2 && v >= y1 && v < y2
            };
            if !(x1 < x2 && y1 < y2) || !(0.0..=1.0).contains(&d.confidence) || !d.mask.iter().all(|&i| in_box(i)) {
                return Err(PerceptionError::Protocol {
                    reason: "detection violates bbox/confidence/mask constraints".into(),
                    raw: format!("{d:?}"),
                });
            }
            out.push(Detection {
                bbox: d.bbox,
                confidence: d.confidence,
                mask: PixelMask::new(w, h, d.mask),
            });
        }
        out.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        Ok(out)
    }
}

/// Fault injected by [`EchoServer`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultMode {
    /// Well-formed replies: 0.5 per frontier, no detections.
    None,
    /// One score too many.
    WrongLength,
    /// A line that is not JSON.
    Malformed,
    /// Correct reply after a pause.
    Delay(Duration),
    /// Half a reply, then the connection closes.
    DropMidReply,
    /// Reads requests and never answers.
    Silent,
}

/// Test server speaking the scorer/detector protocol.
pub struct EchoServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    requests: Arc<Mutex<Vec<String>>>,
    handle: Option<JoinHandle<()>>,
}

impl EchoServer {
    /// Binds an ephemeral loopback port.
    pub fn start(mode: FaultMode) -> std::io::Result<Self> {
        Self::bind("127.0.0.1:0", mode)
    }

    pub fn bind(addr: &str, mode: FaultMode) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let requests = Arc::new(Mutex::new(Vec::new()));
        let (stop2, req2) = (stop.clone(), requests.clone());
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop2.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let (stop3, req3) = (stop2.clone(), req2.clone());
                std::thread::spawn(move || serve(stream, mode, &stop3, &req3));
            }
        });
        Ok(Self {
            addr,
            stop,
            requests,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Raw request lines received so far.
    pub fn requests(&self) -> Vec<String> {
        self.requests.lock().map(|r| r.clone()).unwrap_or_default()
    }

    /// Serves until the process exits (used by the CLI).
    pub fn wait(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for EchoServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock accept().
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(stream: TcpStream, mode: FaultMode, stop: &AtomicBool, requests: &Mutex<Vec<String>>) {
    let _ = stream.set_read_timeout(Some(Duration::from_millis(200)));
    let Ok(mut writer) = stream.try_clone() else { return };
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    loop {
        if stop.load(Ordering::SeqCst) {
            return;
        }
        match reader.read_line(&mut line) {
            Ok(0) => return,
            Ok(_) if !line.ends_with('\n') => continue,
            Ok(_) => {}
            Err(e) if is_timeout(&e) => continue,
            Err(_) => return,
        }
        let req = std::mem::take(&mut line);
        if let Ok(mut r) = requests.lock() {
            r.push(req.trim_end().to_string());
        }
        let reply = echo_reply(req.trim_end(), mode);
        match mode {
            FaultMode::Silent => continue,
            FaultMode::Delay(d) => std::thread::sleep(d),
            FaultMode::DropMidReply => {
                let half = &reply[..reply.len() / 2];
                let _ = writer.write_all(half.as_bytes());
                let _ = writer.flush();
                return;
            }
            _ => {}
        }
        if writer.write_all(reply.as_bytes()).is_err() {
            return;
        }
    }
}

fn echo_reply(req: &str, mode: FaultMode) -> String {
    if mode == FaultMode::Malformed {
        return "this is not json\n".into();
    }
    let mut reply = WireReply {
        v: PROTOCOL_VERSION,
        ..WireReply::default()
    };
    match serde_json::from_str::<WireRequest>(req) {
        Ok(WireRequest::ScoreFrontiers {
            request_id, frontiers, ..
        }) => {
            reply.request_id = request_id;
            let n = frontiers.len() + usize::from(mode == FaultMode::WrongLength);
            reply.scores = Some(vec![FALLBACK_SCORE; n]);
        }
        Ok(WireRequest::Detect { request_id, .. }) => {
            reply.request_id = request_id;
            reply.detections = Some(Vec::new());
        }
        Err(e) => reply.error = Some(e.to_string()),
    }
    let mut s = serde_json::to_string(&reply).expect("reply serializes");
    s.push('\n');
    s
}
