//! Store-and-forward fallback for networks where the direct socket fails.
//!
//! A relay is a set of append-only mailboxes ("channels"). A client with id
//! `c` posts to `c2s.c` and reads `s2c.c`. Delivery may duplicate or reorder
//! posts, so the server runs each client's control messages through an
//! [`InboundSequencer`] before handling them. Binary frames are stateless
//! uploads and skip sequencing.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::broadcast;

use super::handler::{Connection, ProtocolHandler};
use super::manager::SessionEvent;
use super::protocol::{ClientMessage, ServerMessage};

/// Messages held for reordering are capped at this many sequence numbers
/// past the next expected one; later ones are dropped.
pub const DEDUP_WINDOW: u64 = 256;
pub const DEFAULT_HOLD_TTL: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RelayError {
    #[error("relay is unavailable: {0}")]
    Unavailable(String),
    #[error("bad channel name {0:?}")]
    BadChannel(String),
    #[error("undecodable relay packet: {0}")]
    Packet(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("direct socket failed and the relay is unavailable")]
    RelayUnavailable,
}

/// One mailbox entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RelayPacket {
    Text { text: String },
    Binary { base64: String },
}

impl RelayPacket {
    pub fn text(t: impl Into<String>) -> Self {
        RelayPacket::Text { text: t.into() }
    }

    pub fn binary(bytes: &[u8]) -> Self {
        RelayPacket::Binary { base64: B64.encode(bytes) }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("packets serialize")
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, RelayError> {
        serde_json::from_slice(b).map_err(|e| RelayError::Packet(e.to_string()))
    }
}

pub trait Relay: Send + Sync {
    fn post(&self, channel: &str, packet: &[u8]) -> Result<(), RelayError>;
    /// Entries of `channel` from index `from` on, in stored order.
    fn fetch(&self, channel: &str, from: usize) -> Result<Vec<Vec<u8>>, RelayError>;
    fn channels(&self, prefix: &str) -> Result<Vec<String>, RelayError>;
}

pub fn client_channel(client: &str) -> String {
    format!("c2s.{client}")
}

pub fn server_channel(client: &str) -> String {
    format!("s2c.{client}")
}

fn check_channel(name: &str) -> Result<(), RelayError> {
    if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && !name.starts_with('.') {
        Ok(())
    } else {
        Err(RelayError::BadChannel(name.to_string()))
    }
}

/// In-process relay with fault injection.
#[derive(Debug, Default)]
pub struct MemoryRelay {
    boxes: Mutex<BTreeMap<String, Vec<Vec<u8>>>>,
    down: AtomicBool,
    duplicate: AtomicBool,
}

impl MemoryRelay {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_available(&self, up: bool) {
        self.down.store(!up, Ordering::SeqCst);
    }

    /// When on, every post is stored twice.
    pub fn set_duplicate_posts(&self, on: bool) {
        self.duplicate.store(on, Ordering::SeqCst);
    }

    /// Reorders the stored entries of a channel; `order[i]` is the old
    /// index of the entry placed at `i`.
    pub fn permute(&self, channel: &str, order: &[usize]) {
        let mut boxes = self.boxes.lock().unwrap();
        if let Some(entries) = boxes.get_mut(channel) {
            assert_eq!(order.len(), entries.len(), "permutation length");
            let old = std::mem::take(entries);
            *entries = order.iter().map(|&i| old[i].clone()).collect();
        }
    }

    fn guard(&self) -> Result<(), RelayError> {
        if self.down.load(Ordering::SeqCst) {
            Err(RelayError::Unavailable("memory relay switched off".into()))
        } else {
            Ok(())
        }
    }
}

impl Relay for MemoryRelay {
    fn post(&self, channel: &str, packet: &[u8]) -> Result<(), RelayError> {
        self.guard()?;
        check_channel(channel)?;
        let mut boxes = self.boxes.lock().unwrap();
        let entries = boxes.entry(channel.to_string()).or_default();
        entries.push(packet.to_vec());
        if self.duplicate.load(Ordering::SeqCst) {
            entries.push(packet.to_vec());
        }
        Ok(())
    }

    fn fetch(&self, channel: &str, from: usize) -> Result<Vec<Vec<u8>>, RelayError> {
        self.guard()?;
        let boxes = self.boxes.lock().unwrap();
        Ok(boxes.get(channel).map(|e| e.iter().skip(from).cloned().collect()).unwrap_or_default())
    }

    fn channels(&self, prefix: &str) -> Result<Vec<String>, RelayError> {
        self.guard()?;
        Ok(self.boxes.lock().unwrap().keys().filter(|k| k.starts_with(prefix)).cloned().collect())
    }
}

/// Relay over a shared directory: one subdirectory per channel, one file
/// per entry, names sorting in post order.
#[derive(Debug)]
pub struct DirRelay {
    root: PathBuf,
    counter: AtomicU64,
}

impl DirRelay {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DirRelay { root: root.into(), counter: AtomicU64::new(0) }
    }

    fn unavailable(e: std::io::Error) -> RelayError {
        RelayError::Unavailable(e.to_string())
    }
}

impl Relay for DirRelay {
    fn post(&self, channel: &str, packet: &[u8]) -> Result<(), RelayError> {
        check_channel(channel)?;
        let dir = self.root.join(channel);
        std::fs::create_dir_all(&dir).map_err(Self::unavailable)?;
        let nanos = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let name = format!("{nanos:024}-{:08}-{n:08}", std::process::id());
        let tmp = dir.join(format!(".{name}.tmp"));
        std::fs::write(&tmp, packet).map_err(Self::unavailable)?;
        std::fs::rename(&tmp, dir.join(format!("{name}.json"))).map_err(Self::unavailable)
    }

    fn fetch(&self, channel: &str, from: usize) -> Result<Vec<Vec<u8>>, RelayError> {
        check_channel(channel)?;
        let dir = self.root.join(channel);
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut names: Vec<_> = std::fs::read_dir(&dir)
            .map_err(Self::unavailable)?
            .filter_map(Result::ok)
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".json") && !n.starts_with('.'))
            .collect();
        names.sort();
        names.iter().skip(from).map(|n| std::fs::read(dir.join(n)).map_err(Self::unavailable)).collect()
    }

    fn channels(&self, prefix: &str) -> Result<Vec<String>, RelayError> {
        if !self.root.exists() {
            return Ok(Vec::new());
        }
        let mut out: Vec<_> = std::fs::read_dir(&self.root)
            .map_err(Self::unavailable)?
            .filter_map(Result::ok)
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.starts_with(prefix))
            .collect();
        out.sort();
        Ok(out)
    }
}

/// Restores per-sender order of control messages.
///
/// Messages are released strictly by `seq`, starting at 1. A message with
/// a seq already released or already held is a duplicate and is dropped. A
/// gap is waited on until the oldest held message is older than the TTL;
/// the sequencer then skips to the lowest held seq.
#[derive(Debug)]
pub struct InboundSequencer {
    next: u64,
    held: BTreeMap<u64, (Instant, ClientMessage)>,
    ttl: Duration,
    pub duplicates: u64,
    pub dropped: u64,
}

impl Default for InboundSequencer {
    fn default() -> Self {
        Self::new(DEFAULT_HOLD_TTL)
    }
}

impl InboundSequencer {
    pub fn new(ttl: Duration) -> Self {
        InboundSequencer { next: 1, held: BTreeMap::new(), ttl, duplicates: 0, dropped: 0 }
    }

    pub fn next_expected(&self) -> u64 {
        self.next
    }

    pub fn held(&self) -> usize {
        self.held.len()
    }

    /// Accepts one message; returns whatever is now releasable, in order.
    pub fn push(&mut self, msg: ClientMessage, now: Instant) -> Vec<ClientMessage> {
        if msg.seq < self.next || self.held.contains_key(&msg.seq) {
            self.duplicates += 1;
            return Vec::new();
        }
        if msg.seq >= self.next + DEDUP_WINDOW {
            self.dropped += 1;
            return Vec::new();
        }
        self.held.insert(msg.seq, (now, msg));
        self.release()
    }

    fn release(&mut self) -> Vec<ClientMessage> {
        let mut out = Vec::new();
        while let Some((_, m)) = self.held.remove(&self.next) {
            out.push(m);
            self.next += 1;
        }
        out
    }

    /// Gives up on a gap once the oldest held message has waited past the TTL.
    pub fn expire(&mut self, now: Instant) -> Vec<ClientMessage> {
        let Some(oldest) = self.held.values().map(|(t, _)| *t).min() else { return Vec::new() };
        if now.duration_since(oldest) < self.ttl {
            return Vec::new();
        }
        self.next = *self.held.keys().next().expect("held is non-empty");
        self.release()
    }
}

/// Sends over the direct socket, falling back to the relay.
pub trait Outbound: Send + Sync {
    fn send(&self, text: &str) -> Result<(), String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Direct,
    Relay,
}

pub struct FallbackTransport {
    direct: Arc<dyn Outbound>,
    relay: Arc<dyn Relay>,
    channel: String,
}

impl FallbackTransport {
    pub fn new(direct: Arc<dyn Outbound>, relay: Arc<dyn Relay>, channel: impl Into<String>) -> Self {
        FallbackTransport { direct, relay, channel: channel.into() }
    }

    pub fn send(&self, text: &str) -> Result<Route, TransportError> {
        if self.direct.send(text).is_ok() {
            return Ok(Route::Direct);
        }
        match self.relay.post(&self.channel, &RelayPacket::text(text).to_bytes()) {
            Ok(()) => Ok(Route::Relay),
            Err(_) => Err(TransportError::RelayUnavailable),
        }
    }
}

struct RelayClient {
    cursor: usize,
    sequencer: InboundSequencer,
    conn: Connection,
    events: Option<(String, broadcast::Receiver<SessionEvent>)>,
}

/// Server side of the relay: polls every client channel and posts replies.
pub struct RelayServer {
    relay: Arc<dyn Relay>,
    handler: Arc<ProtocolHandler>,
    ttl: Duration,
    clients: HashMap<String, RelayClient>,
}

impl RelayServer {
    pub fn new(relay: Arc<dyn Relay>, handler: Arc<ProtocolHandler>) -> Self {
        RelayServer { relay, handler, ttl: DEFAULT_HOLD_TTL, clients: HashMap::new() }
    }

    pub fn with_ttl(mut self, ttl: Duration) -> Self {
        self.ttl = ttl;
        self
    }

    pub fn session_of(&self, client: &str) -> Option<&str> {
        self.clients.get(client)?.conn.session_id()
    }

    fn post_all(&self, client: &str, msgs: &[ServerMessage]) -> Result<(), RelayError> {
        for m in msgs {
            self.relay.post(&server_channel(client), &RelayPacket::text(m.to_json()).to_bytes())?;
        }
        Ok(())
    }

    /// One polling round. Returns the number of control messages handled.
    pub async fn poll_once(&mut self, now: Instant) -> Result<usize, RelayError> {
        let mut handled = 0;
        for channel in self.relay.channels("c2s.")? {
            let client_id = channel["c2s.".len()..].to_string();
            let ttl = self.ttl;
            let entry = self.clients.entry(client_id.clone()).or_insert_with(|| RelayClient {
                cursor: 0,
                sequencer: InboundSequencer::new(ttl),
                conn: self.handler.connect(),
                events: None,
            });
            let new = self.relay.fetch(&channel, entry.cursor)?;
            entry.cursor += new.len();
            let mut ready = Vec::new();
            let mut replies = Vec::new();
            {
                let client = self.clients.get_mut(&client_id).expect("inserted above");
                for raw in new {
                    match RelayPacket::from_bytes(&raw)? {
                        RelayPacket::Binary { base64 } => {
                            let bytes = B64.decode(base64).map_err(|e| RelayError::Packet(e.to_string()))?;
                            replies.extend(client.conn.on_binary(&bytes));
                        }
                        RelayPacket::Text { text } => match ClientMessage::from_json(&text) {
                            Ok(m) => ready.extend(client.sequencer.push(m, now)),
                            Err(_) => replies.extend(client.conn.on_text(&text).await),
                        },
                    }
                }
                ready.extend(client.sequencer.expire(now));
            }
            for m in ready {
                handled += 1;
                let client = self.clients.get_mut(&client_id).expect("present");
                let out = client.conn.on_message(m).await;
                replies.extend(out);
            }
            self.post_all(&client_id, &replies)?;
            let client = self.clients.get_mut(&client_id).expect("present");
            client.conn.after_send(&replies);
            if let Some(sid) = client.conn.session_id().map(str::to_string) {
                if client.events.as_ref().map(|(s, _)| s != &sid).unwrap_or(true) {
                    if let Ok(rx) = self.handler.manager().subscribe(&sid) {
                        client.events = Some((sid, rx));
                    }
                }
            }
        }
        self.forward_events()?;
        Ok(handled)
    }

    fn forward_events(&mut self) -> Result<(), RelayError> {
        let mut posts = Vec::new();
        for (client_id, client) in self.clients.iter_mut() {
            if let Some((_, rx)) = client.events.as_mut() {
                while let Ok(SessionEvent::TimerTick(t)) = rx.try_recv() {
                    posts.push((client_id.clone(), client.conn.tick_message(t)));
                }
            }
        }
        for (client, m) in posts {
            self.post_all(&client, &[m])?;
        }
        Ok(())
    }

    /// Polls forever at `interval`, logging relay errors.
    pub async fn run(mut self, interval: Duration) {
        let mut ticker = tokio::time::interval(interval);
        loop {
            ticker.tick().await;
            if let Err(e) = self.poll_once(Instant::now()).await {
                tracing::warn!("relay poll failed: {e}");
            }
        }
    }
}
