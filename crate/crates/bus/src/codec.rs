//! Binary frame format.
//!
//! ```text
//! "HIRO" | version u8 | type u8 | topic_len u16 BE | topic | payload_len u32 BE | payload
//! ```

use std::io::Read;

pub const MAGIC: [u8; 4] = *b"HIRO";
pub const VERSION: u8 = 1;
/// Bytes before the topic.
pub const PREFIX_LEN: usize = 8;
/// Upper bound on accepted payloads; larger length fields are rejected
/// before any allocation.
pub const MAX_PAYLOAD: usize = 16 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Pub = 0,
    Sub = 1,
    Unsub = 2,
    Ping = 3,
    Pong = 4,
}

impl MsgType {
    pub fn from_u8(b: u8) -> Option<Self> {
        Some(match b {
            0 => Self::Pub,
            1 => Self::Sub,
            2 => Self::Unsub,
            3 => Self::Ping,
            4 => Self::Pong,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub topic: String,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn publish(topic: impl Into<String>, payload: impl Into<Vec<u8>>) -> Self {
        Self {
            msg_type: MsgType::Pub,
            topic: topic.into(),
            payload: payload.into(),
        }
    }

    pub fn subscribe(topic: impl Into<String>) -> Self {
        Self::control(MsgType::Sub, topic)
    }

    pub fn unsubscribe(topic: impl Into<String>) -> Self {
        Self::control(MsgType::Unsub, topic)
    }

    pub fn ping() -> Self {
        Self::control(MsgType::Ping, "")
    }

    pub fn pong() -> Self {
        Self::control(MsgType::Pong, "")
    }

    fn control(msg_type: MsgType, topic: impl Into<String>) -> Self {
        Self {
            msg_type,
            topic: topic.into(),
            payload: Vec::new(),
        }
    }

    pub fn encoded_len(&self) -> usize {
        PREFIX_LEN + self.topic.len() + 4 + self.payload.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("truncated frame: need {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("bad magic at offset 0")]
    BadMagic,
    #[error("unsupported version {0} at offset 4")]
    BadVersion(u8),
    #[error("unknown message type {0} at offset 5")]
    BadType(u8),
    #[error("topic at offset {PREFIX_LEN} is not valid UTF-8")]
    TopicUtf8,
    #[error("{kind:?} frame requires a topic")]
    EmptyTopic { kind: MsgType },
    #[error("field at offset {offset} too large: {len}")]
    TooLarge { offset: usize, len: usize },
    #[error("{0} trailing bytes after frame")]
    Trailing(usize),
}

impl CodecError {
    /// Whether more input could turn this error into a valid frame.
    pub fn is_truncation(&self) -> bool {
        matches!(self, Self::Truncated { .. })
    }
}

pub fn encode(frame: &Frame) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(frame.encoded_len());
    encode_into(frame, &mut out)?;
    Ok(out)
}

pub fn encode_into(frame: &Frame, out: &mut Vec<u8>) -> Result<(), CodecError> {
    check_topic(frame.msg_type, &frame.topic)?;
    let topic_len = u16::try_from(frame.topic.len()).map_err(|_| CodecError::TooLarge {
        offset: 6,
        len: frame.topic.len(),
    })?;
    if frame.payload.len() > MAX_PAYLOAD {
        return Err(CodecError::TooLarge {
            offset: PREFIX_LEN + frame.topic.len(),
            len: frame.payload.len(),
        });
    }
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(frame.msg_type as u8);
    out.extend_from_slice(&topic_len.to_be_bytes());
    out.extend_from_slice(frame.topic.as_bytes());
    out.extend_from_slice(&(frame.payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&frame.payload);
    Ok(())
}

fn check_topic(kind: MsgType, topic: &str) -> Result<(), CodecError> {
    match kind {
        MsgType::Pub | MsgType::Sub | MsgType::Unsub if topic.is_empty() => Err(CodecError::EmptyTopic { kind }),
        _ => Ok(()),
    }
}

/// Decodes one frame from the front of `buf`, returning it with the number
/// of bytes consumed.
pub fn decode_prefix(buf: &[u8]) -> Result<(Frame, usize), CodecError> {
    let need = |offset: usize, n: usize| {
        if buf.len() < offset + n {
            Err(CodecError::Truncated { offset, needed: n })
        } else {
            Ok(&buf[offset..offset + n])
        }
    };
    if need(0, 4)? != MAGIC {
        return Err(CodecError::BadMagic);
    }
    let version = need(4, 1)?[0];
    if version != VERSION {
        return Err(CodecError::BadVersion(version));
    }
    let t = need(5, 1)?[0];
    let msg_type = MsgType::from_u8(t).ok_or(CodecError::BadType(t))?;
    let topic_len = u16::from_be_bytes(need(6, 2)?.try_into().unwrap()) as usize;
    let topic = std::str::from_utf8(need(PREFIX_LEN, topic_len)?).map_err(|_| CodecError::TopicUtf8)?;
    check_topic(msg_type, topic)?;
    let at = PREFIX_LEN + topic_len;
    let payload_len = u32::from_be_bytes(need(at, 4)?.try_into().unwrap()) as usize;
    if payload_len > MAX_PAYLOAD {
        return Err(CodecError::TooLarge {
            offset: at,
            len: payload_len,
        });
    }
    let payload = need(at + 4, payload_len)?.to_vec();
    Ok((
        Frame {
            msg_type,
            topic: topic.to_owned(),
            payload,
        },
        at + 4 + payload_len,
    ))
}

/// Decodes a buffer holding exactly one frame.
pub fn decode(buf: &[u8]) -> Result<Frame, CodecError> {
    let (frame, used) = decode_prefix(buf)?;
    if used != buf.len() {
        return Err(CodecError::Trailing(buf.len() - used));
    }
    Ok(frame)
}

#[derive(Debug, thiserror::Error)]
pub enum ReadError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("stream closed mid-frame after {0} bytes")]
    Eof(usize),
}

/// Blocking reader that pulls whole frames off a byte stream.
pub struct FrameReader<R> {
    inner: R,
    buf: Vec<u8>,
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            buf: Vec::new(),
        }
    }

    /// Next frame, or `Ok(None)` on a clean end of stream.
    pub fn next_frame(&mut self) -> Result<Option<Frame>, ReadError> {
        let mut chunk = [0u8; 8192];
        loop {
            if !self.buf.is_empty() {
                match decode_prefix(&self.buf) {
                    Ok((frame, used)) => {
                        self.buf.drain(..used);
                        return Ok(Some(frame));
                    }
                    Err(e) if e.is_truncation() => {}
                    Err(e) => return Err(e.into()),
                }
            }
            let n = match self.inner.read(&mut chunk) {
                Ok(n) => n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            };
            if n == 0 {
                return if self.buf.is_empty() {
                    Ok(None)
                } else {
                    Err(ReadError::Eof(self.buf.len()))
                };
            }
            self.buf.extend_from_slice(&chunk[..n]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ping_has_empty_topic_and_payload() {
        let bytes = encode(&Frame::ping()).unwrap();
        assert_eq!(bytes, [0x48, 0x49, 0x52, 0x4F, 1, 3, 0, 0, 0, 0, 0, 0]);
        assert_eq!(decode(&bytes).unwrap(), Frame::ping());
    }

    #[test]
    fn rejects_empty_pub_topic() {
        assert_eq!(
            encode(&Frame::publish("", vec![1])),
            Err(CodecError::EmptyTopic { kind: MsgType::Pub })
        );
    }

    #[test]
    fn huge_length_is_rejected_without_reading() {
        let mut bytes = encode(&Frame::publish("t", vec![])).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&u32::MAX.to_be_bytes());
        assert!(matches!(decode_prefix(&bytes), Err(CodecError::TooLarge { offset: 9, .. })));
    }
}
