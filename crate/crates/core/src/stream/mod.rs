//! Sliding-window recognition over a live frame stream.
//!
//! Frames enter a ring of the model's clip length; once full, every
//! `stride` frames the buffered clip is classified. A [`Smoother`] turns the
//! stream of probability rows into sparse, debounced [`PredictionEvent`]s.

use std::collections::{BTreeSet, VecDeque};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{class_label, is_background, pixels_to_input};
use crate::model::{GestureNet, ModelError};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("frame has {got} bytes, expected {expected}")]
    FrameSize { expected: usize, got: usize },
    #[error("invalid recognizer config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, StreamError>;

/// The most recent `capacity` frames.
#[derive(Debug, Clone)]
pub struct FrameRing {
    frames: VecDeque<Vec<u8>>,
    capacity: usize,
    frame_len: usize,
    pushed: u64,
}

impl FrameRing {
    pub fn new(capacity: usize, frame_len: usize) -> Self {
        FrameRing {
            frames: VecDeque::with_capacity(capacity),
            capacity,
            frame_len,
            pushed: 0,
        }
    }

    pub fn push(&mut self, frame: &[u8]) -> Result<()> {
        if frame.len() != self.frame_len {
            return Err(StreamError::FrameSize {
                expected: self.frame_len,
                got: frame.len(),
            });
        }
        if self.frames.len() == self.capacity {
            let mut old = self.frames.pop_front().expect("ring is full");
            old.copy_from_slice(frame);
            self.frames.push_back(old);
        } else {
            self.frames.push_back(frame.to_vec());
        }
        self.pushed += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.frames.len() == self.capacity
    }

    /// Frames pushed since creation.
    pub fn frame_counter(&self) -> u64 {
        self.pushed
    }

    /// Buffered frames oldest first, concatenated.
    pub fn clip(&self) -> Vec<u8> {
        self.frames.iter().flatten().copied().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmootherConfig {
    /// Windows considered for the majority vote.
    pub vote_window: usize,
    /// Minimum mean probability of the voted class.
    pub emit_threshold: f64,
    /// Windows after an emission during which nothing is emitted.
    pub refractory_windows: usize,
    /// Frames between inferences.
    pub stride: usize,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        SmootherConfig {
            vote_window: 5,
            emit_threshold: 0.85,
            refractory_windows: 8,
            stride: 4,
        }
    }
}

impl SmootherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vote_window == 0 || self.stride == 0 || !(0.0..=1.0).contains(&self.emit_threshold) {
            return Err(StreamError::Config(format!(
                "vote window and stride must be positive and threshold in [0, 1]: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEvent {
    pub class_id: usize,
    pub label: String,
    /// Mean probability of the class over the vote window.
    pub prob: f64,
    pub window: u64,
    pub ts_ms: u64,
}

/// Majority vote with a probability floor and a refractory period.
/// Background classes and any `suppressed` class are never emitted.
#[derive(Debug, Clone)]
pub struct Smoother {
    config: SmootherConfig,
    suppressed: BTreeSet<usize>,
    history: VecDeque<(usize, Vec<f64>)>,
    next_window: u64,
    last_emit: Option<u64>,
}

impl Smoother {
    pub fn new(config: SmootherConfig, suppressed: impl IntoIterator<Item = usize>) -> Self {
        Smoother {
            config,
            suppressed: suppressed.into_iter().collect(),
            history: VecDeque::with_capacity(config.vote_window),
            next_window: 0,
            last_emit: None,
        }
    }

    pub fn config(&self) -> &SmootherConfig {
        &self.config
    }

    /// Index the next observed window will get.
    pub fn windows_seen(&self) -> u64 {
        self.next_window
    }

    /// Feeds one window's probability row.
    pub fn observe(&mut self, probs: &[f64], ts_ms: u64) -> Option<PredictionEvent> {
        let window = self.next_window;
        self.next_window += 1;
        let top = argmax(probs);
        if self.history.len() == self.config.vote_window {
            self.history.pop_front();
        }
        self.history.push_back((top, probs.to_vec()));
        if self.history.len() < self.config.vote_window {
            return None;
        }
        if let Some(last) = self.last_emit {
            if window - last <= self.config.refractory_windows as u64 {
                return None;
            }
        }
        let votes = self.history.iter().filter(|(c, _)| *c == top).count();
        if 2 * votes <= self.config.vote_window {
            return None;
        }
        if is_background(top) || self.suppressed.contains(&top) {
            return None;
        }
        let mean = self.history.iter().map(|(_, p)| p[top]).sum::<f64>() / self.history.len() as f64;
        if mean < self.config.emit_threshold {
            return None;
        }
        self.last_emit = Some(window);
        Some(PredictionEvent {
            class_id: top,
            label: class_label(top).map(str::to_string).unwrap_or_else(|| format!("class {top}")),
            prob: mean,
            window,
            ts_ms,
        })
    }
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// One classified window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowResult {
    pub window: u64,
    pub probs: Vec<f64>,
    pub event: Option<PredictionEvent>,
}

/// Ring buffer + model + smoother.
pub struct Recognizer {
    net: GestureNet,
    ring: FrameRing,
    smoother: Smoother,
    dims: [usize; 4],
    inferences: u64,
}

impl Recognizer {
    pub fn new(net: GestureNet, config: SmootherConfig, suppressed: impl IntoIterator<Item = usize>) -> Result<Self> {
        config.validate()?;
        let c = net.config();
        let dims = [c.frames, c.height, c.width, c.channels];
        let ring = FrameRing::new(c.frames, c.height * c.width * c.channels);
        Ok(Recognizer {
            net,
            ring,
            smoother: Smoother::new(config, suppressed),
            dims,
            inferences: 0,
        })
    }

    /// `H×W×C` bytes per frame.
    pub fn frame_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    pub fn inferences(&self) -> u64 {
        self.inferences
    }

    pub fn net(&self) -> &GestureNet {
        &self.net
    }

    /// Buffers a frame and classifies the window when one is due.
    pub fn push_frame(&mut self, frame: &[u8]) -> Result<Option<Vec<f64>>> {
        self.ring.push(frame)?;
        let t = self.dims[0] as u64;
        let n = self.ring.frame_counter();
        if n < t || !(n - t).is_multiple_of(self.smoother.config.stride as u64) {
            return Ok(None);
        }
        let mut input = Vec::with_capacity(self.net.config().clip_len());
        pixels_to_input(&self.ring.clip(), self.dims, &mut input);
        let [c, t, h, w] = self.net.config().clip_shape();
        let x = Tensor::new(&[1, c, t, h, w], input).map_err(ModelError::from)?;
        self.inferences += 1;
        Ok(Some(self.net.forward(&x)?.into_data()))
    }

    /// [`Recognizer::push_frame`] followed by smoothing.
    pub fn process(&mut self, frame: &[u8], ts_ms: u64) -> Result<Option<PredictionEvent>> {
        Ok(self.observe_frame(frame, ts_ms)?.and_then(|w| w.event))
    }

    /// Like [`Recognizer::process`], but also returns the window's
    /// probabilities whenever an inference ran.
    pub fn observe_frame(&mut self, frame: &[u8], ts_ms: u64) -> Result<Option<WindowResult>> {
        let Some(probs) = self.push_frame(frame)? else {
            return Ok(None);
        };
        let window = self.smoother.windows_seen();
        let event = self.smoother.observe(&probs, ts_ms);
        Ok(Some(WindowResult { window, probs, event }))
    }
}

/// Windows per second of single-window inference, over `windows` runs.
pub fn inference_throughput(net: &GestureNet, windows: usize) -> Result<f64> {
    let [c, t, h, w] = net.config().clip_shape();
    let x = Tensor::from_fn(&[1, c, t, h, w], |i| ((i * 37) % 256) as f64 / 255.0);
    net.forward(&x)?;
    let start = Instant::now();
    for _ in 0..windows {
        net.forward(&x)?;
    }
    Ok(windows as f64 / start.elapsed().as_secs_f64())
}
