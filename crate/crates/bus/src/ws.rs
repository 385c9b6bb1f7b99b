//! WebSocket bridge: JSON text envelopes on one side, a broker connection on
//! the other. Plain HTTP GETs on the same port serve static files when a
//! directory is configured.
//!
//! Client to bridge:
//! `{"op":"sub","topic":T}`, `{"op":"unsub","topic":T}`,
//! `{"topic":T,"payload":<json>}` or
//! `{"topic":T,"payload":"<base64>","encoding":"base64"}`.
//!
//! Bridge to client: the same publish envelope, and
//! `{"op":"error","message":M}` for input it could not act on.

use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Component, Path, PathBuf};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::Deserialize;
use serde_json::value::RawValue;
use tungstenite::{Message, WebSocket};

use crate::client::{BusClient, ClientError};
use crate::server::{spawn_acceptor, ServerHandle};

const POLL: Duration = Duration::from_millis(10);
const HEADER_LIMIT: usize = 16 * 1024;

#[derive(Debug, Clone)]
pub struct BridgeConfig {
    pub bus_addr: SocketAddr,
    /// Served over HTTP when set.
    pub static_dir: Option<PathBuf>,
}

pub fn serve_ws(addr: impl ToSocketAddrs, config: BridgeConfig) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    spawn_acceptor(listener, "ws", move |stream| {
        if let Err(e) = handle(stream, &config) {
            log::info!("ws: connection ended: {e}");
        }
    })
}

/// A parsed client envelope.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Inbound {
    Subscribe(String),
    Unsubscribe(String),
    Publish { topic: String, payload: Vec<u8> },
}

#[derive(Deserialize)]
struct RawInbound<'a> {
    op: Option<String>,
    topic: Option<String>,
    #[serde(borrow)]
    payload: Option<&'a RawValue>,
    encoding: Option<String>,
}

pub fn parse_inbound(text: &str) -> Result<Inbound, String> {
    let raw: RawInbound = serde_json::from_str(text).map_err(|e| format!("invalid envelope: {e}"))?;
    let topic = raw
        .topic
        .filter(|t| !t.is_empty())
        .ok_or_else(|| "envelope needs a non-empty \"topic\"".to_owned())?;
    match raw.op.as_deref() {
        Some("sub") => return Ok(Inbound::Subscribe(topic)),
        Some("unsub") => return Ok(Inbound::Unsubscribe(topic)),
        Some("pub") | None => {}
        Some(op) => return Err(format!("unknown op {op:?}")),
    }
    let payload = raw.payload.ok_or_else(|| "publish needs a \"payload\"".to_owned())?;
    let payload = match raw.encoding.as_deref() {
        None | Some("json") => payload.get().as_bytes().to_vec(),
        Some("base64") => {
            let s: String =
                serde_json::from_str(payload.get()).map_err(|_| "base64 payload must be a string".to_owned())?;
            B64.decode(s).map_err(|e| format!("bad base64: {e}"))?
        }
        Some(other) => return Err(format!("unknown encoding {other:?}")),
    };
    Ok(Inbound::Publish { topic, payload })
}

/// Publish envelope for a bus message. Payloads that are exactly one JSON
/// value are inlined byte for byte; anything else is base64.
pub fn outbound_envelope(topic: &str, payload: &[u8]) -> String {
    let topic = serde_json::to_string(topic).expect("strings serialize");
    let inline = std::str::from_utf8(payload)
        .ok()
        .and_then(|s| serde_json::from_str::<&RawValue>(s).ok().filter(|r| r.get().len() == s.len()));
    match inline {
        Some(raw) => format!(r#"{{"topic":{topic},"payload":{}}}"#, raw.get()),
        None => format!(
            r#"{{"topic":{topic},"payload":"{}","encoding":"base64"}}"#,
            B64.encode(payload)
        ),
    }
}

pub fn error_envelope(message: &str) -> String {
    serde_json::json!({"op": "error", "message": message}).to_string()
}

fn handle(stream: TcpStream, config: &BridgeConfig) -> io::Result<()> {
    let head = peek_head(&stream)?;
    let lower = head.to_ascii_lowercase();
    if lower.contains("upgrade: websocket") {
        stream.set_read_timeout(None)?;
        let ws = tungstenite::accept(stream).map_err(|e| io::Error::other(e.to_string()))?;
        bridge(ws, config)
    } else {
        serve_static(stream, &head, config.static_dir.as_deref())
    }
}

/// Reads request headers without consuming them.
fn peek_head(stream: &TcpStream) -> io::Result<String> {
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut buf = vec![0u8; HEADER_LIMIT];
    let start = Instant::now();
    loop {
        let n = stream.peek(&mut buf)?;
        if n == 0 {
            return Err(io::ErrorKind::UnexpectedEof.into());
        }
        if let Some(end) = buf[..n].windows(4).position(|w| w == b"\r\n\r\n") {
            return Ok(String::from_utf8_lossy(&buf[..end]).into_owned());
        }
        if n == HEADER_LIMIT || start.elapsed() > Duration::from_secs(5) {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "request headers too long"));
        }
        std::thread::sleep(Duration::from_millis(5));
    }
}

fn bridge(mut ws: WebSocket<TcpStream>, config: &BridgeConfig) -> io::Result<()> {
    let bus = BusClient::connect(config.bus_addr).map_err(|e| io::Error::other(e.to_string()))?;
    ws.get_ref().set_read_timeout(Some(POLL))?;
    let result = bridge_loop(&mut ws, &bus);
    let _ = ws.close(None);
    let _ = ws.flush();
    let _ = ws.get_ref().shutdown(Shutdown::Both);
    result
}

fn bridge_loop(ws: &mut WebSocket<TcpStream>, bus: &BusClient) -> io::Result<()> {
    let ws_err = |e: tungstenite::Error| io::Error::other(e.to_string());
    loop {
        match ws.read() {
            Ok(Message::Text(text)) => {
                let reply = match parse_inbound(text.as_str()) {
                    Ok(cmd) => apply(bus, cmd).err().map(|e| error_envelope(&e.to_string())),
                    Err(msg) => Some(error_envelope(&msg)),
                };
                if let Some(r) = reply {
                    ws.send(Message::text(r)).map_err(ws_err)?;
                }
            }
            Ok(Message::Binary(_)) => {
                ws.send(Message::text(error_envelope("binary frames are not accepted")))
                    .map_err(ws_err)?;
            }
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(ws_err(e)),
        }
        loop {
            match bus.try_recv() {
                Ok(Some(m)) => ws.send(Message::text(outbound_envelope(&m.topic, &m.payload))).map_err(ws_err)?,
                Ok(None) => break,
                Err(_) => return Ok(()),
            }
        }
    }
}

fn apply(bus: &BusClient, cmd: Inbound) -> Result<(), ClientError> {
    match cmd {
        Inbound::Subscribe(t) => bus.subscribe(&t),
        Inbound::Unsubscribe(t) => bus.unsubscribe(&t),
        Inbound::Publish { topic, payload } => bus.publish(&topic, &payload),
    }
}

fn serve_static(mut stream: TcpStream, head: &str, root: Option<&Path>) -> io::Result<()> {
    // Drain the request so the peer sees a clean close.
    let mut sink = vec![0u8; head.len() + 4];
    let _ = stream.read_exact(&mut sink);
    let path = head
        .lines()
        .next()
        .and_then(|l| l.strip_prefix("GET "))
        .and_then(|l| l.split_whitespace().next());
    let file = match (root, path) {
        (Some(root), Some(p)) => resolve(root, p),
        _ => None,
    };
    let response = match file.and_then(|f| std::fs::read(&f).ok().map(|b| (f, b))) {
        Some((f, body)) => {
            let mut r = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: {}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                content_type(&f),
                body.len()
            )
            .into_bytes();
            r.extend(body);
            r
        }
        None => b"HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\nConnection: close\r\n\r\n".to_vec(),
    };
    stream.write_all(&response)?;
    stream.shutdown(Shutdown::Both)
}

/// Maps a request path under `root`, refusing anything that escapes it.
fn resolve(root: &Path, url_path: &str) -> Option<PathBuf> {
    let rel = url_path.split(['?', '#']).next()?.trim_start_matches('/');
    let rel = if rel.is_empty() { "index.html" } else { rel };
    let rel = Path::new(rel);
    if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
        return None;
    }
    let full = root.join(rel);
    if full.is_dir() {
        Some(full.join("index.html"))
    } else {
        Some(full)
    }
}

fn content_type(p: &Path) -> &'static str {
    match p.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        _ => "application/octet-stream",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_payloads_inline_verbatim() {
        let p = br#"{"class_id":24,"prob":0.9000000000000001}"#;
        assert_eq!(
            outbound_envelope("gesture/prediction", p),
            r#"{"topic":"gesture/prediction","payload":{"class_id":24,"prob":0.9000000000000001}}"#
        );
    }

    #[test]
    fn non_json_payloads_use_base64() {
        let env = outbound_envelope("camera/frames", &[0, 255, 1]);
        assert_eq!(env, r#"{"topic":"camera/frames","payload":"AP8B","encoding":"base64"}"#);
        // Surrounding whitespace would not survive inlining.
        assert!(outbound_envelope("t", b" 1").contains("base64"));
        assert_eq!(
            parse_inbound(&env).unwrap(),
            Inbound::Publish {
                topic: "camera/frames".into(),
                payload: vec![0, 255, 1]
            }
        );
    }

    #[test]
    fn inbound_forms() {
        assert_eq!(
            parse_inbound(r#"{"op":"sub","topic":"robot/state"}"#),
            Ok(Inbound::Subscribe("robot/state".into()))
        );
        assert_eq!(
            parse_inbound(r#"{"op":"unsub","topic":"a"}"#),
            Ok(Inbound::Unsubscribe("a".into()))
        );
        assert_eq!(
            parse_inbound(r#"{"topic":"a","payload":{"x": [1, 2]}}"#),
            Ok(Inbound::Publish {
                topic: "a".into(),
                payload: br#"{"x": [1, 2]}"#.to_vec()
            })
        );
        for bad in [
            "not json",
            r#"{"op":"sub"}"#,
            r#"{"op":"jump","topic":"a"}"#,
            r#"{"topic":"a"}"#,
            r#"{"topic":"a","payload":5,"encoding":"base64"}"#,
            r#"{"topic":"","payload":1}"#,
        ] {
            assert!(parse_inbound(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn static_paths_stay_under_root() {
        let root = Path::new("/srv/console");
        assert_eq!(resolve(root, "/"), Some(root.join("index.html")));
        assert_eq!(resolve(root, "/app.js?v=2"), Some(root.join("app.js")));
        assert_eq!(resolve(root, "/../etc/passwd"), None);
        assert_eq!(resolve(root, "/a/../../x"), None);
    }
}
