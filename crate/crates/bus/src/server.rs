//! TCP listener plumbing and the binary-protocol broker server.

use std::collections::HashMap;
use std::io::{self, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::broker::{Broker, Outbound, Session};
use crate::codec::{self, FrameReader, MsgType};

/// Handle to a background accept loop. Shutting down also closes every
/// connection it accepted.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<HashMap<u64, TcpStream>>>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    /// Blocks until the accept loop exits.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
        for (_, c) in self.conns.lock().unwrap_or_else(|e| e.into_inner()).drain() {
            let _ = c.shutdown(Shutdown::Both);
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.thread.is_some() {
            self.stop_now();
        }
    }
}

/// Runs `handler` on its own thread for each accepted connection.
pub fn spawn_acceptor<F>(listener: TcpListener, name: &str, handler: F) -> io::Result<ServerHandle>
where
    F: Fn(TcpStream) + Send + Sync + 'static,
{
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let conns: Arc<Mutex<HashMap<u64, TcpStream>>> = Arc::default();
    let handler = Arc::new(handler);
    let (stop2, conns2, tag) = (stop.clone(), conns.clone(), name.to_owned());
    let thread = thread::Builder::new().name(format!("{name}-accept")).spawn(move || {
        for (id, stream) in (0u64..).zip(listener.incoming()) {
            if stop2.load(Ordering::SeqCst) {
                break;
            }
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("{tag}: accept failed: {e}");
                    continue;
                }
            };
            let _ = stream.set_nodelay(true);
            if let Ok(c) = stream.try_clone() {
                conns2.lock().unwrap_or_else(|e| e.into_inner()).insert(id, c);
            }
            let (h, conns3) = (handler.clone(), conns2.clone());
            let spawned = thread::Builder::new().name(format!("{tag}-conn")).spawn(move || {
                h(stream);
                conns3.lock().unwrap_or_else(|e| e.into_inner()).remove(&id);
            });
            if let Err(e) = spawned {
                log::error!("{tag}: cannot spawn connection thread: {e}");
            }
        }
    })?;
    Ok(ServerHandle {
        addr,
        stop,
        conns,
        thread: Some(thread),
    })
}

/// Binds the binary broker and serves it in the background.
pub fn serve_bus(addr: impl ToSocketAddrs, broker: Broker) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    spawn_acceptor(listener, "bus", move |stream| serve_connection(stream, &broker))
}

/// Speaks the binary protocol on one connection until it closes or sends
/// something malformed.
pub fn serve_connection(stream: TcpStream, broker: &Broker) {
    let peer = stream
        .peer_addr()
        .map_or_else(|_| "?".to_owned(), |a| a.to_string());
    let session = Arc::new(broker.connect());
    let writer = match stream.try_clone() {
        Ok(w) => w,
        Err(e) => {
            log::warn!("bus {peer}: {e}");
            return;
        }
    };
    let s2 = session.clone();
    let write_thread = thread::spawn(move || write_loop(writer, &s2));
    let mut reader = FrameReader::new(&stream);
    loop {
        match reader.next_frame() {
            Ok(Some(f)) => match f.msg_type {
                MsgType::Pub => {
                    session.publish(&f.topic, &f.payload);
                }
                MsgType::Sub => session.subscribe(&f.topic),
                MsgType::Unsub => session.unsubscribe(&f.topic),
                MsgType::Ping => session.push_control(codec::Frame::pong()),
                MsgType::Pong => {}
            },
            Ok(None) => break,
            Err(e) => {
                log::warn!("bus {peer}: closing connection: {e}");
                break;
            }
        }
    }
    session.disconnect();
    let _ = stream.shutdown(Shutdown::Both);
    let _ = write_thread.join();
}

fn write_loop(mut stream: TcpStream, session: &Session) {
    let mut buf = Vec::new();
    while !session.is_closed() {
        let Some(item) = session.recv(Duration::from_millis(200)) else {
            continue;
        };
        let frame = match item {
            Outbound::Message(d) => d.to_frame(),
            Outbound::Control(f) => f,
        };
        buf.clear();
        if codec::encode_into(&frame, &mut buf).is_err() {
            continue;
        }
        if let Err(e) = stream.write_all(&buf) {
            log::info!("bus: dropping subscriber {} after write error: {e}", session.id());
            session.disconnect();
            let _ = stream.shutdown(Shutdown::Both);
            break;
        }
    }
}
