//! Server daemon, transports and the client side of every scheme.
//!
//! A [`Server`] answers frames as a pure function of its database and the
//! received frame. The client talks to servers through [`Transport`]s: an
//! in-process call, an in-memory byte pipe, or TCP. [`fetch`] runs one
//! retrieval, fanning out to all servers concurrently, and records a
//! [`Transcript`] that is enough to recompute the download accounting.

use std::fmt;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::Path;
use std::str::FromStr;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::mds::{self, MdsAnswer, MdsCodeSpec, MdsQuery};
use crate::model::{rate_of, Database, DemandSpec, ProblemParams, RateReport, SideInfo};
use crate::multi_server;
use crate::partition::{self, PartitionAnswer, PartitionQuery};
use crate::sun_jafar;
use crate::wire::{self, code, Frame};

/// Environment variable holding the default listen address.
pub const LISTEN_ENV: &str = "PIRSI_LISTEN_ADDR";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:7878";

pub fn default_listen_addr() -> String {
    std::env::var(LISTEN_ENV).unwrap_or_else(|_| DEFAULT_LISTEN.to_string())
}

/// Answers frames from an immutable database.
#[derive(Clone, Debug)]
pub struct Server {
    db: Arc<Database>,
}

impl Server {
    pub fn new(db: Database) -> Self {
        Server { db: Arc::new(db) }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(Database::load(path)?))
    }

    pub fn database(&self) -> &Database {
        &self.db
    }

    /// The reply to one request. Depends only on the database and `req`.
    pub fn handle(&self, req: &Frame) -> Frame {
        let reply = match req.msg_type {
            wire::HELLO => Ok(wire::hello_payload(self.db.len(), self.db.message_bits())),
            wire::PARTITION_QUERY => PartitionQuery::from_bytes(&req.payload)
                .and_then(|q| partition::server_answer(&self.db, &q))
                .map(|a| a.to_bytes()),
            wire::MDS_QUERY => MdsQuery::from_bytes(&req.payload)
                .and_then(|q| mds::server_answer(&self.db, &q))
                .map(|a| a.to_bytes()),
            wire::SJ_QUERY => multi_server::parse_payload(&req.payload)
                .and_then(|(p, q)| multi_server::server_answer(&self.db, &p, &q))
                .map(|a| sun_jafar::answer_to_bytes(&a)),
            other => {
                return Frame::error(
                    code::UNKNOWN_TYPE,
                    &format!("unknown message type {other:#04x}"),
                )
            }
        };
        match reply {
            Ok(payload) => Frame::new(wire::ANSWER, payload),
            Err(Error::Malformed(m)) => Frame::error(code::MALFORMED, &m),
            Err(e) => Frame::error(code::BAD_QUERY, &e.to_string()),
        }
    }

    /// Serves one connection until the peer closes it. A frame that cannot
    /// be parsed gets an ERROR reply and ends the connection, since the
    /// stream position is lost.
    pub fn serve_stream<S: Read + Write>(&self, mut stream: S) -> Result<()> {
        loop {
            match Frame::read_from(&mut stream) {
                Ok(None) => return Ok(()),
                Ok(Some(req)) => self.handle(&req).write_to(&mut stream)?,
                Err(Error::Malformed(m)) => {
                    let c = if m.contains("exceeds") {
                        code::TOO_LARGE
                    } else {
                        code::MALFORMED
                    };
                    let c = if m.contains("version") {
                        code::BAD_VERSION
                    } else {
                        c
                    };
                    let _ = Frame::error(c, &m).write_to(&mut stream);
                    return Ok(());
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Accepts connections forever, one thread each.
    pub fn serve_tcp(&self, listener: TcpListener) -> Result<()> {
        for stream in listener.incoming() {
            let stream = stream?;
            let me = self.clone();
            thread::spawn(move || {
                let _ = stream.set_nodelay(true);
                let _ = me.serve_stream(stream);
            });
        }
        Ok(())
    }

    /// Binds `addr` and serves from a background thread.
    pub fn spawn_tcp(&self, addr: impl ToSocketAddrs) -> Result<SocketAddr> {
        let listener = TcpListener::bind(addr)?;
        let local = listener.local_addr()?;
        let me = self.clone();
        thread::spawn(move || me.serve_tcp(listener));
        Ok(local)
    }

    /// Serves an in-memory pipe from a background thread and returns the
    /// client end.
    pub fn spawn_loopback(&self) -> PipeEnd {
        let (client, server) = pipe();
        let me = self.clone();
        thread::spawn(move || me.serve_stream(server));
        client
    }
}

/// One end of an in-memory duplex byte stream.
#[derive(Debug)]
pub struct PipeEnd {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    buf: Vec<u8>,
    pos: usize,
}

pub fn pipe() -> (PipeEnd, PipeEnd) {
    let (atx, arx) = channel();
    let (btx, brx) = channel();
    (
        PipeEnd {
            tx: atx,
            rx: brx,
            buf: Vec::new(),
            pos: 0,
        },
        PipeEnd {
            tx: btx,
            rx: arx,
            buf: Vec::new(),
            pos: 0,
        },
    )
}

impl Read for PipeEnd {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        while self.pos == self.buf.len() {
            match self.rx.recv() {
                Ok(chunk) => {
                    self.buf = chunk;
                    self.pos = 0;
                }
                Err(_) => return Ok(0),
            }
        }
        let n = out.len().min(self.buf.len() - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

impl Write for PipeEnd {
    fn write(&mut self, data: &[u8]) -> io::Result<usize> {
        if data.is_empty() {
            return Ok(0);
        }
        self.tx
            .send(data.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "peer closed"))?;
        Ok(data.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// A request/response channel to one server.
pub trait Transport: Send {
    fn exchange(&mut self, request: &Frame) -> Result<Frame>;
}

/// Calls the server directly, still going through the byte encoding.
pub struct InProcess(pub Server);

impl Transport for InProcess {
    fn exchange(&mut self, request: &Frame) -> Result<Frame> {
        let req = Frame::from_bytes(&request.to_bytes())?;
        Frame::from_bytes(&self.0.handle(&req).to_bytes())
    }
}

/// Any reliable byte stream: TCP or a [`PipeEnd`].
pub struct StreamTransport<S>(pub S);

impl<S: Read + Write + Send> Transport for StreamTransport<S> {
    fn exchange(&mut self, request: &Frame) -> Result<Frame> {
        request
            .write_to(&mut self.0)
            .map_err(|e| Error::Connection(e.to_string()))?;
        match Frame::read_from(&mut self.0) {
            Ok(Some(f)) => Ok(f),
            Ok(None) => Err(Error::Connection("server closed the connection".into())),
            Err(Error::Io(e)) => Err(Error::Connection(e.to_string())),
            Err(e) => Err(e),
        }
    }
}

pub fn connect_tcp(addr: &str) -> Result<StreamTransport<TcpStream>> {
    let s = TcpStream::connect(addr).map_err(|e| Error::Connection(format!("{addr}: {e}")))?;
    let _ = s.set_nodelay(true);
    Ok(StreamTransport(s))
}

pub fn in_process(db: &Database, n: usize) -> Vec<Box<dyn Transport>> {
    let server = Server::new(db.clone());
    (0..n)
        .map(|_| Box::new(InProcess(server.clone())) as Box<dyn Transport>)
        .collect()
}

/// N independent servers with the same database, each behind its own pipe.
pub fn loopback(db: &Database, n: usize) -> Vec<Box<dyn Transport>> {
    (0..n)
        .map(|_| {
            Box::new(StreamTransport(Server::new(db.clone()).spawn_loopback()))
                as Box<dyn Transport>
        })
        .collect()
}

pub fn tcp(addresses: &[String]) -> Result<Vec<Box<dyn Transport>>> {
    addresses
        .iter()
        .map(|a| Ok(Box::new(connect_tcp(a)?) as Box<dyn Transport>))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeId {
    Partition,
    Mds,
    Multiserver,
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeId::Partition => "partition",
            SchemeId::Mds => "mds",
            SchemeId::Multiserver => "multiserver",
        })
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "partition" => Ok(SchemeId::Partition),
            "mds" => Ok(SchemeId::Mds),
            "multiserver" => Ok(SchemeId::Multiserver),
            _ => Err(Error::param(format!(
                "unknown scheme {s:?} (partition, mds, multiserver)"
            ))),
        }
    }
}

/// Everything a client needs to run retrievals.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub scheme: SchemeId,
    pub params: ProblemParams,
    /// Server addresses; empty means in-process servers.
    pub addresses: Vec<String>,
    pub seed: u64,
}

impl SessionConfig {
    pub fn new(scheme: SchemeId, params: ProblemParams, seed: u64) -> Self {
        SessionConfig {
            scheme,
            params,
            addresses: Vec::new(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        p.validate()?;
        match self.scheme {
            SchemeId::Partition | SchemeId::Mds if p.servers != 1 => {
                return Err(Error::param(format!(
                    "the {} scheme uses one server, got N={}",
                    self.scheme, p.servers
                )));
            }
            SchemeId::Mds => {
                mds::symbol_width(p.messages, p.side, p.bits)?;
            }
            SchemeId::Multiserver => {
                let (g, l) = multi_server::shape(p)?;
                if p.bits != l {
                    return Err(Error::param(format!(
                        "multiserver needs t = N^g = {}^{g} = {l}, got t={}",
                        p.servers, p.bits
                    )));
                }
            }
            SchemeId::Partition => {}
        }
        if p.bits == 0 {
            return Err(Error::param("message length must be positive"));
        }
        if !self.addresses.is_empty() && self.addresses.len() != p.servers {
            return Err(Error::param(format!(
                "{} addresses for N={}",
                self.addresses.len(),
                p.servers
            )));
        }
        Ok(())
    }

    /// key=value lines: scheme, k, m, n, t, seed, servers (comma-separated).
    /// Blank lines and lines starting with '#' are ignored.
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut scheme = None;
        let mut p = ProblemParams {
            servers: 1,
            messages: 0,
            side: 0,
            bits: 0,
        };
        let mut addresses = Vec::new();
        let mut seed = 0;
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::malformed(format!("expected key=value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = || {
                value
                    .parse::<usize>()
                    .map_err(|_| Error::malformed(format!("bad number for {key}: {value:?}")))
            };
            match key {
                "scheme" => scheme = Some(value.parse()?),
                "k" => p.messages = num()?,
                "m" => p.side = num()?,
                "n" => p.servers = num()?,
                "t" => p.bits = num()?,
                "seed" => {
                    seed = value
                        .parse()
                        .map_err(|_| Error::malformed(format!("bad seed {value:?}")))?
                }
                "servers" => {
                    addresses = value
                        .split(',')
                        .map(str::trim)
                        .filter(|a| !a.is_empty())
                        .map(String::from)
                        .collect()
                }
                _ => return Err(Error::malformed(format!("unknown key {key:?}"))),
            }
        }
        let cfg = SessionConfig {
            scheme: scheme.ok_or_else(|| Error::malformed("missing scheme"))?,
            params: p,
            addresses,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let p = &self.params;
        let mut out = format!(
            "scheme={}\nk={}\nm={}\nn={}\nt={}\nseed={}\n",
            self.scheme, p.messages, p.side, p.servers, p.bits, self.seed
        );
        if !self.addresses.is_empty() {
            out += &format!("servers={}\n", self.addresses.join(","));
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&std::fs::read_to_string(path)?)
    }
}

/// One request/response pair, frames hex-encoded.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub server: usize,
    pub request: String,
    pub response: String,
}

/// A replayable record of one retrieval.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub scheme: SchemeId,
    pub params: ProblemParams,
    pub seed: u64,
    pub demand: usize,
    pub side: Vec<usize>,
    pub exchanges: Vec<Exchange>,
    /// Query bytes sent, recorded but not part of the rate.
    pub upload_bytes: u64,
    /// Answer bits per server.
    pub downloaded_bits: Vec<u64>,
}

impl Transcript {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("transcript serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::malformed(format!("transcript: {e}")))
    }

    pub fn rate_report(&self) -> Result<RateReport> {
        rate_of(self.params.bits as u64, &self.downloaded_bits)
    }

    /// Recomputes the downloaded bits from the recorded answer frames and
    /// checks them against the stored totals.
    pub fn replay_rate(&self) -> Result<RateReport> {
        let mut per_server = vec![0u64; self.params.servers];
        for ex in &self.exchanges {
            let req = decode_frame(&ex.request)?;
            if req.msg_type == wire::HELLO {
                continue;
            }
            let resp = decode_frame(&ex.response)?.into_result()?;
            let slot = per_server.get_mut(ex.server).ok_or_else(|| {
                Error::CorruptedTranscript(format!("server {} out of range", ex.server))
            })?;
            *slot += answer_bits(self.scheme, &self.params, &resp.payload)?;
        }
        if per_server != self.downloaded_bits {
            return Err(Error::CorruptedTranscript(format!(
                "answers hold {per_server:?} bits but the transcript records {:?}",
                self.downloaded_bits
            )));
        }
        rate_of(self.params.bits as u64, &per_server)
    }
}

fn decode_frame(h: &str) -> Result<Frame> {
    let bytes = hex::decode(h).map_err(|e| Error::CorruptedTranscript(format!("bad hex: {e}")))?;
    Frame::from_bytes(&bytes).map_err(|e| Error::CorruptedTranscript(e.to_string()))
}

fn answer_bits(scheme: SchemeId, p: &ProblemParams, payload: &[u8]) -> Result<u64> {
    Ok(match scheme {
        SchemeId::Partition => PartitionAnswer::from_bytes(payload)?.answer_bits(),
        SchemeId::Mds => {
            MdsAnswer::from_bytes(payload, mds::symbol_width(p.messages, p.side, p.bits)?)?
                .answer_bits()
        }
        SchemeId::Multiserver => sun_jafar::answer_from_bytes(payload)?.len() as u64,
    })
}

/// Result of one retrieval.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FetchOutcome {
    pub message: BitString,
    pub report: RateReport,
    pub transcript: Transcript,
}

fn fan_out(transports: &mut [Box<dyn Transport>], requests: &[Frame]) -> Result<Vec<Frame>> {
    thread::scope(|s| {
        let handles: Vec<_> = transports
            .iter_mut()
            .zip(requests)
            .map(|(t, r)| s.spawn(move || t.exchange(r)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Connection("transport thread panicked".into())))
            })
            .collect()
    })
}

fn expect_answer(f: Frame) -> Result<Frame> {
    let f = f.into_result()?;
    if f.msg_type != wire::ANSWER {
        return Err(Error::protocol(format!(
            "expected ANSWER, got type {:#04x}",
            f.msg_type
        )));
    }
    Ok(f)
}

/// Runs one retrieval of X_W with the given side information against
/// `transports` (one per server). The query randomness comes from the
/// config seed, so identical inputs give identical transcripts.
pub fn fetch(
    cfg: &SessionConfig,
    transports: &mut [Box<dyn Transport>],
    spec: &DemandSpec,
    side: &SideInfo,
) -> Result<FetchOutcome> {
    cfg.validate()?;
    let p = cfg.params;
    spec.validate(p.messages)?;
    if spec.m() != p.side || side.keys().ne(spec.side.iter()) {
        return Err(Error::param(format!(
            "side information must be exactly S of size M={}",
            p.side
        )));
    }
    if side.values().any(|x| x.len() != p.bits) {
        return Err(Error::param(format!(
            "side messages must have t={} bits",
            p.bits
        )));
    }
    if transports.len() != p.servers {
        return Err(Error::param(format!(
            "{} transports for N={}",
            transports.len(),
            p.servers
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut exchanges = Vec::new();
    let mut record = |reqs: &[Frame], resps: &[Frame]| {
        for (i, (a, b)) in reqs.iter().zip(resps).enumerate() {
            exchanges.push(Exchange {
                server: i,
                request: hex::encode(a.to_bytes()),
                response: hex::encode(b.to_bytes()),
            });
        }
    };

    let hello = vec![Frame::new(wire::HELLO, Vec::new()); p.servers];
    let replies = fan_out(transports, &hello)?;
    record(&hello, &replies);
    for (i, r) in replies.into_iter().enumerate() {
        let (k, t) = wire::parse_hello(&expect_answer(r)?.payload)?;
        if (k, t) != (p.messages, p.bits) {
            return Err(Error::protocol(format!(
                "server {} holds K={k}, t={t} but the session expects K={}, t={}",
                i + 1,
                p.messages,
                p.bits
            )));
        }
    }

    let (message, requests, answers, bits) = match cfg.scheme {
        SchemeId::Partition => {
            let part = partition::build_partition(spec, p.messages, &mut rng)?;
            let q = partition::encode_query(&part, &mut rng);
            let reqs = vec![Frame::new(wire::PARTITION_QUERY, q.to_bytes())];
            let resps = fan_out(transports, &reqs)?;
            let a = PartitionAnswer::from_bytes(&expect_answer(resps[0].clone())?.payload)?;
            let msg = partition::decode(&a, &q, spec, side)?;
            (msg, reqs, resps, vec![a.answer_bits()])
        }
        SchemeId::Mds => {
            let code = MdsCodeSpec::for_messages(p.messages, p.side, p.bits)?;
            let reqs = vec![Frame::new(
                wire::MDS_QUERY,
                MdsQuery { m: p.side }.to_bytes(),
            )];
            let resps = fan_out(transports, &reqs)?;
            let a = MdsAnswer::from_bytes(
                &expect_answer(resps[0].clone())?.payload,
                code.field().width(),
            )?;
            let mut all = mds::decode(&a, &code, side, p.bits)?;
            let msg = all.remove(&spec.demand).ok_or_else(|| {
                Error::CorruptedTranscript("demand missing from MDS decode".into())
            })?;
            (msg, reqs, resps, vec![a.answer_bits()])
        }
        SchemeId::Multiserver => {
            let (q, ctx) = multi_server::build(spec, &p, &mut rng)?;
            let reqs: Vec<Frame> = (0..p.servers)
                .map(|n| Frame::new(wire::SJ_QUERY, q.server_payload(n)))
                .collect();
            let resps = fan_out(transports, &reqs)?;
            let answers = resps
                .iter()
                .map(|r| sun_jafar::answer_from_bytes(&expect_answer(r.clone())?.payload))
                .collect::<Result<Vec<_>>>()?;
            let msg = multi_server::decode(&answers, &ctx, side)?;
            let bits = answers.iter().map(|a| a.len() as u64).collect();
            (msg, reqs, resps, bits)
        }
    };
    record(&requests, &answers);
    let transcript = Transcript {
        scheme: cfg.scheme,
        params: p,
        seed: cfg.seed,
        demand: spec.demand,
        side: spec.side.iter().copied().collect(),
        exchanges,
        upload_bytes: requests.iter().map(|r| r.to_bytes().len() as u64).sum(),
        downloaded_bits: bits,
    };
    Ok(FetchOutcome {
        message,
        report: transcript.rate_report()?,
        transcript,
    })
}
