use std::io::{self, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use crate::codec::{self, CodecError, Frame, FrameReader, MsgType};

const SYNC_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("connection closed")]
    Closed,
    #[error("no PONG within {0:?}")]
    SyncTimeout(Duration),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub topic: String,
    pub payload: Vec<u8>,
}

/// Cloneable write half; usable from any thread.
#[derive(Clone)]
pub struct Publisher {
    stream: Arc<Mutex<TcpStream>>,
}

impl Publisher {
    pub fn send(&self, frame: &Frame) -> Result<(), ClientError> {
        let bytes = codec::encode(frame)?;
        let mut s = self.stream.lock().unwrap_or_else(|e| e.into_inner());
        s.write_all(&bytes)?;
        Ok(())
    }

    pub fn publish(&self, topic: &str, payload: &[u8]) -> Result<(), ClientError> {
        self.send(&Frame::publish(topic, payload))
    }
}

/// Blocking client for the binary protocol. A background thread reads
/// incoming frames into a channel.
pub struct BusClient {
    publisher: Publisher,
    messages: Receiver<Message>,
    pongs: Mutex<Receiver<()>>,
    raw: TcpStream,
}

impl BusClient {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let read_half = stream.try_clone()?;
        let raw = stream.try_clone()?;
        let (msg_tx, messages) = mpsc::channel();
        let (pong_tx, pongs) = mpsc::channel();
        thread::Builder::new().name("bus-client-read".into()).spawn(move || {
            let mut reader = FrameReader::new(read_half);
            loop {
                match reader.next_frame() {
                    Ok(Some(f)) => match f.msg_type {
                        MsgType::Pub => {
                            let m = Message {
                                topic: f.topic,
                                payload: f.payload,
                            };
                            if msg_tx.send(m).is_err() {
                                break;
                            }
                        }
                        MsgType::Pong => {
                            let _ = pong_tx.send(());
                        }
                        other => log::debug!("bus client: ignoring {other:?}"),
                    },
                    Ok(None) => break,
                    Err(e) => {
                        log::debug!("bus client: read loop ended: {e}");
                        break;
                    }
                }
            }
        })?;
        Ok(Self {
            publisher: Publisher {
                stream: Arc::new(Mutex::new(stream)),
            },
            messages,
            pongs: Mutex::new(pongs),
            raw,
        })
    }

    /// Connects, retrying until the broker accepts or `wait` elapses.
    pub fn connect_retry(addr: impl ToSocketAddrs + Clone, wait: Duration) -> Result<Self, ClientError> {
        let start = std::time::Instant::now();
        loop {
            match Self::connect(addr.clone()) {
                Ok(c) => return Ok(c),
                Err(e) if start.elapsed() >= wait => return Err(e),
                Err(_) => thread::sleep(Duration::from_millis(50)),
            }
        }
    }

    pub fn publisher(&self) -> Publisher {
        self.publisher.clone()
    }

    pub fn publish(&self, topic: &str, payload: &[u8]) -> Result<(), ClientError> {
        self.publisher.publish(topic, payload)
    }

    /// Subscribes and waits until the broker has applied it.
    pub fn subscribe(&self, topic: &str) -> Result<(), ClientError> {
        self.publisher.send(&Frame::subscribe(topic))?;
        self.sync(SYNC_TIMEOUT)
    }

    pub fn unsubscribe(&self, topic: &str) -> Result<(), ClientError> {
        self.publisher.send(&Frame::unsubscribe(topic))?;
        self.sync(SYNC_TIMEOUT)
    }

    /// PING/PONG round trip: everything sent before it has been processed
    /// by the broker once this returns.
    pub fn sync(&self, timeout: Duration) -> Result<(), ClientError> {
        let pongs = self.pongs.lock().unwrap_or_else(|e| e.into_inner());
        while pongs.try_recv().is_ok() {}
        self.publisher.send(&Frame::ping())?;
        match pongs.recv_timeout(timeout) {
            Ok(()) => Ok(()),
            Err(RecvTimeoutError::Timeout) => Err(ClientError::SyncTimeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => Err(ClientError::Closed),
        }
    }

    /// `Ok(None)` on timeout.
    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<Message>, ClientError> {
        match self.messages.recv_timeout(timeout) {
            Ok(m) => Ok(Some(m)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(ClientError::Closed),
        }
    }

    pub fn try_recv(&self) -> Result<Option<Message>, ClientError> {
        self.recv_timeout(Duration::ZERO)
    }

    pub fn close(&self) {
        let _ = self.raw.shutdown(Shutdown::Both);
    }
}

impl Drop for BusClient {
    fn drop(&mut self) {
        self.close();
    }
}
