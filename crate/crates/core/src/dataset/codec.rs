//! `GCLP` clip encoding.
//!
//! Header (28 bytes): magic `GCLP`, version `1`, then big-endian
//! `T, H, W, C: u16`, `class_id: u16`, `participant_id: u32`, `stage: u8`,
//! `variant_seed: u64`, followed by `T·H·W·C` raw pixels in row-major order.
//! Streamed camera frames use the same prefix with `T=1` and no label
//! fields.

use super::{Clip, DatasetError, Result, Stage};

pub const CLIP_MAGIC: [u8; 4] = *b"GCLP";
pub const CLIP_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 28;

/// Fails only if a dimension does not fit in `u16` or the pixel buffer does
/// not match the dimensions.
pub fn encode_clip(clip: &Clip) -> Result<Vec<u8>> {
    let [t, h, w, c] = clip.dims;
    let n = t * h * w * c;
    if clip.dims.iter().any(|&d| d > u16::MAX as usize) || clip.frames.len() != n {
        return Err(DatasetError::Input(format!(
            "clip dims {:?} inconsistent with {} pixels or beyond u16",
            clip.dims,
            clip.frames.len()
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + n);
    out.extend_from_slice(&CLIP_MAGIC);
    out.push(CLIP_VERSION);
    for d in clip.dims {
        out.extend_from_slice(&(d as u16).to_be_bytes());
    }
    out.extend_from_slice(&clip.class_id.to_be_bytes());
    out.extend_from_slice(&clip.participant_id.to_be_bytes());
    out.push(clip.stage as u8);
    out.extend_from_slice(&clip.variant_seed.to_be_bytes());
    out.extend_from_slice(&clip.frames);
    Ok(out)
}

fn format_err(offset: usize, reason: impl Into<String>) -> DatasetError {
    DatasetError::Format {
        offset,
        reason: reason.into(),
    }
}

pub fn decode_clip(bytes: &[u8]) -> Result<Clip> {
    if bytes.len() < HEADER_LEN {
        return Err(format_err(
            bytes.len(),
            format!("short header: {} of {HEADER_LEN} bytes", bytes.len()),
        ));
    }
    if bytes[..4] != CLIP_MAGIC {
        return Err(format_err(0, format!("bad magic {:02x?}", &bytes[..4])));
    }
    if bytes[4] != CLIP_VERSION {
        return Err(format_err(4, format!("unsupported version {}", bytes[4])));
    }
    let be16 = |at: usize| u16::from_be_bytes([bytes[at], bytes[at + 1]]);
    let dims = [be16(5) as usize, be16(7) as usize, be16(9) as usize, be16(11) as usize];
    let class_id = be16(13);
    let participant_id = u32::from_be_bytes(bytes[15..19].try_into().unwrap());
    let stage = Stage::try_from(bytes[19]).map_err(|e| format_err(19, e))?;
    let variant_seed = u64::from_be_bytes(bytes[20..28].try_into().unwrap());
    let n = dims.iter().product::<usize>();
    let body = &bytes[HEADER_LEN..];
    if body.len() != n {
        return Err(format_err(
            HEADER_LEN + body.len().min(n),
            format!("payload has {} pixel bytes, header implies {n}", body.len()),
        ));
    }
    Ok(Clip {
        frames: body.to_vec(),
        dims,
        class_id,
        participant_id,
        stage,
        variant_seed,
    })
}

/// Length of the header of a single streamed frame: magic, version and
/// `T=1, H, W, C` without the label fields.
pub const FRAME_HEADER_LEN: usize = 13;

/// One camera frame, `H×W×C` row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>> {
    let dims = [1, frame.height, frame.width, frame.channels];
    if dims.iter().any(|&d| d > u16::MAX as usize) || frame.pixels.len() != dims.iter().product::<usize>() {
        return Err(DatasetError::Input(format!(
            "frame {}x{}x{} inconsistent with {} pixels or beyond u16",
            frame.height,
            frame.width,
            frame.channels,
            frame.pixels.len()
        )));
    }
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + frame.pixels.len());
    out.extend_from_slice(&CLIP_MAGIC);
    out.push(CLIP_VERSION);
    for d in dims {
        out.extend_from_slice(&(d as u16).to_be_bytes());
    }
    out.extend_from_slice(&frame.pixels);
    Ok(out)
}

pub fn decode_frame(bytes: &[u8]) -> Result<Frame> {
    if bytes.len() < FRAME_HEADER_LEN {
        return Err(format_err(
            bytes.len(),
            format!("short frame header: {} of {FRAME_HEADER_LEN} bytes", bytes.len()),
        ));
    }
    if bytes[..4] != CLIP_MAGIC {
        return Err(format_err(0, format!("bad magic {:02x?}", &bytes[..4])));
    }
    if bytes[4] != CLIP_VERSION {
        return Err(format_err(4, format!("unsupported version {}", bytes[4])));
    }
    let be16 = |at: usize| u16::from_be_bytes([bytes[at], bytes[at + 1]]) as usize;
    if be16(5) != 1 {
        return Err(format_err(5, format!("frame payload must have T=1, got {}", be16(5))));
    }
    let (height, width, channels) = (be16(7), be16(9), be16(11));
    let n = height * width * channels;
    let body = &bytes[FRAME_HEADER_LEN..];
    if body.len() != n {
        return Err(format_err(
            FRAME_HEADER_LEN + body.len().min(n),
            format!("frame has {} pixel bytes, header implies {n}", body.len()),
        ));
    }
    Ok(Frame {
        height,
        width,
        channels,
        pixels: body.to_vec(),
    })
}
