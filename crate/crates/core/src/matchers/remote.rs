//! Client and reference server for the line-delimited JSON scorer protocol.
//!
//! The wire format is documented in `docs/scorer-protocol.md`. In short: one
//! JSON object per line, requests carry an `id` echoed by the response, and a
//! server answers requests on a connection strictly in arrival order, so a
//! client may write several requests before reading any response.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use serde::{Deserialize, Serialize};

use super::{
    ImagePairScorer, ImageRef, MatcherKind, ScorerBindings, TextImage, TextImageScorer, TextPair, TextPairScorer,
};
use crate::error::{Error, Result};

pub const PROTOCOL: &str = "met-scorer";
pub const PROTOCOL_VERSION: u32 = 1;
/// Overrides the configured scorer endpoint when set.
pub const ENDPOINT_ENV: &str = "MET_SCORER_ENDPOINT";

/// Returns the endpoint to use: the environment override if present,
/// otherwise `configured`.
pub fn resolve_endpoint(configured: Option<&str>) -> Option<String> {
    match std::env::var(ENDPOINT_ENV) {
        Ok(v) if !v.trim().is_empty() => Some(v.trim().to_string()),
        _ => configured.map(str::to_string),
    }
}

/// One scoring item. Which fields are set depends on the kind:
/// TBM/TCM use `query_text` + `evidence_text`; IBM uses
/// `query_image_id`, `query_image`, `image_id`, `image`; CLIP uses
/// `text` + `image_id`, the latter resolved in the server's joint namespace.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Item {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_image_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_image: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Hello {
        id: u64,
        protocol: String,
        version: u32,
    },
    Score {
        id: u64,
        kind: MatcherKind,
        items: Vec<Item>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloResponse {
    pub id: u64,
    pub protocol: String,
    pub version: u32,
    pub kinds: Vec<MatcherKind>,
    pub dims: BTreeMap<MatcherKind, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub id: u64,
    pub scores: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub id: Option<u64>,
    pub error: String,
}

/// Serialises a protocol message as one line, without the newline.
pub fn encode<T: Serialize>(msg: &T) -> String {
    serde_json::to_string(msg).expect("protocol messages serialize")
}

pub fn text_item(query: &str, evidence: &str) -> Item {
    Item {
        query_text: Some(query.to_string()),
        evidence_text: Some(evidence.to_string()),
        ..Item::default()
    }
}

pub fn image_item(query: ImageRef<'_>, evidence: ImageRef<'_>) -> Item {
    Item {
        query_image_id: Some(query.image_id.to_string()),
        query_image: Some(query.vec.to_vec()),
        image_id: Some(evidence.image_id.to_string()),
        image: Some(evidence.vec.to_vec()),
        ..Item::default()
    }
}

pub fn clip_item(it: TextImage<'_>) -> Item {
    Item {
        text: Some(it.text.to_string()),
        image_id: Some(it.image_id.to_string()),
        ..Item::default()
    }
}

struct Conn {
    reader: BufReader<Box<dyn Read + Send>>,
    writer: Box<dyn Write + Send>,
}

impl Conn {
    fn open(endpoint: &str) -> Result<Self> {
        let unreachable = |e: std::io::Error| Error::Provider(format!("scorer endpoint {endpoint} unreachable: {e}"));
        if let Some(addr) = endpoint.strip_prefix("tcp://") {
            let s = TcpStream::connect(addr).map_err(unreachable)?;
            s.set_nodelay(true).ok();
            let r = s.try_clone().map_err(unreachable)?;
            return Ok(Self {
                reader: BufReader::new(Box::new(r)),
                writer: Box::new(s),
            });
        }
        #[cfg(unix)]
        if let Some(path) = endpoint.strip_prefix("unix:") {
            let s = std::os::unix::net::UnixStream::connect(path).map_err(unreachable)?;
            let r = s.try_clone().map_err(unreachable)?;
            return Ok(Self {
                reader: BufReader::new(Box::new(r)),
                writer: Box::new(s),
            });
        }
        Err(Error::Config(format!(
            "scorer endpoint {endpoint:?} must start with tcp:// or unix:"
        )))
    }

    fn send(&mut self, line: &str) -> Result<()> {
        let io = |e: std::io::Error| Error::Provider(format!("scorer write failed: {e}"));
        self.writer.write_all(line.as_bytes()).map_err(io)?;
        self.writer.write_all(b"\n").map_err(io)
    }

    fn recv(&mut self) -> Result<String> {
        let mut line = String::new();
        let n = self
            .reader
            .read_line(&mut line)
            .map_err(|e| Error::Provider(format!("scorer read failed: {e}")))?;
        if n == 0 {
            return Err(Error::Provider("scorer closed the connection".into()));
        }
        Ok(line)
    }
}

/// Connection to a remote scorer. Thread-safe; concurrent callers are
/// serialised on the connection.
pub struct RemoteClient {
    conn: Mutex<Conn>,
    next_id: AtomicU64,
    requests: AtomicU64,
    hello: HelloResponse,
}

impl std::fmt::Debug for RemoteClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteClient")
            .field("requests", &self.request_count())
            .field("hello", &self.hello)
            .finish()
    }
}

impl RemoteClient {
    /// Connects and performs the handshake.
    pub fn connect(endpoint: &str) -> Result<Self> {
        let mut conn = Conn::open(endpoint)?;
        conn.send(&encode(&Request::Hello {
            id: 0,
            protocol: PROTOCOL.into(),
            version: PROTOCOL_VERSION,
        }))?;
        let line = conn.recv()?;
        let hello: HelloResponse = serde_json::from_str(&line).map_err(|_| {
            match serde_json::from_str::<ErrorResponse>(&line) {
                Ok(e) => Error::Provider(format!("handshake rejected: {}", e.error)),
                Err(_) => Error::Provider(format!("bad handshake response: {}", line.trim_end())),
            }
        })?;
        if hello.protocol != PROTOCOL || hello.version != PROTOCOL_VERSION {
            return Err(Error::Provider(format!(
                "scorer speaks {} v{}, expected {PROTOCOL} v{PROTOCOL_VERSION}",
                hello.protocol, hello.version
            )));
        }
        Ok(Self {
            conn: Mutex::new(conn),
            next_id: AtomicU64::new(1),
            requests: AtomicU64::new(0),
            hello,
        })
    }

    pub fn kinds(&self) -> &[MatcherKind] {
        &self.hello.kinds
    }

    pub fn dims(&self) -> &BTreeMap<MatcherKind, usize> {
        &self.hello.dims
    }

    /// Number of scoring requests sent so far.
    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn score(&self, kind: MatcherKind, items: Vec<Item>) -> Result<Vec<Option<f64>>> {
        self.pipeline(vec![(kind, items)])?.pop().expect("one response")
    }

    /// Writes every batch before reading any response. Results come back in
    /// the order of `batches`.
    pub fn pipeline(&self, batches: Vec<(MatcherKind, Vec<Item>)>) -> Result<Vec<Result<Vec<Option<f64>>>>> {
        let mut conn = self.conn.lock().map_err(|_| Error::Provider("scorer connection poisoned".into()))?;
        let mut pending = Vec::with_capacity(batches.len());
        for (kind, items) in batches {
            if !self.hello.kinds.contains(&kind) {
                return Err(Error::Provider(format!("scorer does not offer {kind}")));
            }
            let id = self.next_id.fetch_add(1, Ordering::SeqCst);
            let n = items.len();
            conn.send(&encode(&Request::Score { id, kind, items }))?;
            self.requests.fetch_add(1, Ordering::SeqCst);
            pending.push((id, kind, n));
        }
        conn.writer
            .flush()
            .map_err(|e| Error::Provider(format!("scorer write failed: {e}")))?;
        let mut out = Vec::with_capacity(pending.len());
        for (id, kind, n) in pending {
            let line = conn.recv()?;
            if let Ok(r) = serde_json::from_str::<ScoreResponse>(&line) {
                if r.id != id {
                    return Err(Error::Provider(format!("response id {} out of order, expected {id}", r.id)));
                }
                if r.scores.len() != n {
                    out.push(Err(Error::Provider(format!(
                        "{kind}: {} scores for {n} items",
                        r.scores.len()
                    ))));
                } else {
                    out.push(Ok(r.scores));
                }
            } else if let Ok(e) = serde_json::from_str::<ErrorResponse>(&line) {
                out.push(Err(Error::Provider(format!("{kind}: {}", e.error))));
            } else {
                return Err(Error::Provider(format!("unparseable response: {}", line.trim_end())));
            }
        }
        Ok(out)
    }
}

/// A remote scorer bound to one matcher kind.
#[derive(Debug, Clone)]
pub struct RemoteScorer {
    pub client: Arc<RemoteClient>,
    pub kind: MatcherKind,
}

impl TextPairScorer for RemoteScorer {
    fn score_text_pairs(&self, pairs: &[TextPair<'_>]) -> Result<Vec<Option<f64>>> {
        let items = pairs.iter().map(|p| text_item(p.query, p.evidence)).collect();
        self.client.score(self.kind, items)
    }
}

impl ImagePairScorer for RemoteScorer {
    fn score_image_pairs(&self, pairs: &[(ImageRef<'_>, ImageRef<'_>)]) -> Result<Vec<Option<f64>>> {
        let items = pairs.iter().map(|&(q, e)| image_item(q, e)).collect();
        self.client.score(self.kind, items)
    }
}

impl TextImageScorer for RemoteScorer {
    fn score_text_images(&self, items: &[TextImage<'_>]) -> Result<Vec<Option<f64>>> {
        let items = items.iter().map(|&it| clip_item(it)).collect();
        self.client.score(self.kind, items)
    }
}

impl ScorerBindings {
    /// Binds every kind to `client`.
    pub fn remote(client: Arc<RemoteClient>) -> Self {
        let bind = |kind| Arc::new(RemoteScorer {
            client: client.clone(),
            kind,
        });
        Self {
            tbm: bind(MatcherKind::Tbm),
            tcm: bind(MatcherKind::Tcm),
            ibm: bind(MatcherKind::Ibm),
            clip: bind(MatcherKind::Clip),
        }
    }

    /// Rebinds one kind to the remote client, leaving the others untouched.
    pub fn with_remote(mut self, client: Arc<RemoteClient>, kind: MatcherKind) -> Self {
        let s = Arc::new(RemoteScorer { client, kind });
        match kind {
            MatcherKind::Tbm => self.tbm = s,
            MatcherKind::Tcm => self.tcm = s,
            MatcherKind::Ibm => self.ibm = s,
            MatcherKind::Clip => self.clip = s,
        }
        self
    }
}

/// Reference server answering the protocol from local providers.
#[derive(Clone)]
pub struct ScorerServer {
    bindings: ScorerBindings,
    dims: BTreeMap<MatcherKind, usize>,
    requests: Arc<AtomicU64>,
}

fn need<'a>(v: &'a Option<String>, field: &str, i: usize) -> std::result::Result<&'a str, String> {
    v.as_deref().ok_or_else(|| format!("item {i}: missing {field}"))
}

impl ScorerServer {
    pub fn new(bindings: ScorerBindings, dims: BTreeMap<MatcherKind, usize>) -> Self {
        Self {
            bindings,
            dims,
            requests: Arc::new(AtomicU64::new(0)),
        }
    }

    /// Scoring requests answered so far, across all connections.
    pub fn request_count(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    /// Answers one request line. Always returns exactly one response line.
    pub fn handle_line(&self, line: &str) -> String {
        let req: Request = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|x| x.as_u64()));
                return encode(&ErrorResponse {
                    id,
                    error: format!("malformed request: {e}"),
                });
            }
        };
        match req {
            Request::Hello { id, protocol, version } => {
                if protocol != PROTOCOL || version != PROTOCOL_VERSION {
                    return encode(&ErrorResponse {
                        id: Some(id),
                        error: format!("unsupported protocol {protocol} v{version}"),
                    });
                }
                encode(&HelloResponse {
                    id,
                    protocol: PROTOCOL.into(),
                    version: PROTOCOL_VERSION,
                    kinds: MatcherKind::ALL.to_vec(),
                    dims: self.dims.clone(),
                })
            }
            Request::Score { id, kind, items } => {
                self.requests.fetch_add(1, Ordering::SeqCst);
                match self.score(kind, &items) {
                    Ok(scores) => encode(&ScoreResponse { id, scores }),
                    Err(error) => encode(&ErrorResponse { id: Some(id), error }),
                }
            }
        }
    }

    fn score(&self, kind: MatcherKind, items: &[Item]) -> std::result::Result<Vec<Option<f64>>, String> {
        let r = match kind {
            MatcherKind::Tbm | MatcherKind::Tcm => {
                let pairs = items
                    .iter()
                    .enumerate()
                    .map(|(i, it)| {
                        Ok(TextPair {
                            query: need(&it.query_text, "query_text", i)?,
                            evidence: need(&it.evidence_text, "evidence_text", i)?,
                        })
                    })
                    .collect::<std::result::Result<Vec<_>, String>>()?;
                let s = if kind == MatcherKind::Tbm { &self.bindings.tbm } else { &self.bindings.tcm };
                s.score_text_pairs(&pairs)
            }
            MatcherKind::Ibm => {
                let pairs = items
                    .iter()
                    .enumerate()
                    .map(|(i, it)| {
                        let q = ImageRef {
                            image_id: need(&it.query_image_id, "query_image_id", i)?,
                            vec: it.query_image.as_deref().ok_or(format!("item {i}: missing query_image"))?,
                        };
                        let e = ImageRef {
                            image_id: need(&it.image_id, "image_id", i)?,
                            vec: it.image.as_deref().ok_or(format!("item {i}: missing image"))?,
                        };
                        Ok((q, e))
                    })
                    .collect::<std::result::Result<Vec<_>, String>>()?;
                self.bindings.ibm.score_image_pairs(&pairs)
            }
            MatcherKind::Clip => {
                let its = items
                    .iter()
                    .enumerate()
                    .map(|(i, it)| {
                        Ok(TextImage {
                            text: need(&it.text, "text", i)?,
                            image_id: need(&it.image_id, "image_id", i)?,
                        })
                    })
                    .collect::<std::result::Result<Vec<_>, String>>()?;
                self.bindings.clip.score_text_images(&its)
            }
        };
        r.map_err(|e| e.to_string())
    }

    /// Serves one connection until the peer closes it.
    pub fn serve_stream<R: Read, W: Write>(&self, reader: R, mut writer: W) -> std::io::Result<()> {
        let mut reader = BufReader::new(reader);
        let mut line = String::new();
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                return Ok(());
            }
            if line.trim().is_empty() {
                continue;
            }
            let resp = self.handle_line(line.trim_end_matches(['\n', '\r']));
            writer.write_all(resp.as_bytes())?;
            writer.write_all(b"\n")?;
            writer.flush()?;
        }
    }

    /// Accepts connections forever, one thread each.
    pub fn serve_tcp(self, listener: TcpListener) {
        for stream in listener.incoming().flatten() {
            let me = self.clone();
            thread::spawn(move || {
                if let Ok(r) = stream.try_clone() {
                    let _ = me.serve_stream(r, stream);
                }
            });
        }
    }

    /// Binds `addr` and serves in a background thread; returns the
    /// `tcp://` endpoint.
    pub fn spawn_tcp(self, addr: &str) -> Result<String> {
        let listener = TcpListener::bind(addr).map_err(|e| Error::Provider(format!("bind {addr}: {e}")))?;
        let local = listener
            .local_addr()
            .map_err(|e| Error::Provider(format!("bind {addr}: {e}")))?;
        thread::spawn(move || self.serve_tcp(listener));
        Ok(format!("tcp://{local}"))
    }
}
