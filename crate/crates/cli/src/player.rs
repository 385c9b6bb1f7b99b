//! Synthetic camera: renders demonstrated gestures as a continuous frame
//! stream.

use hiros_core::dataset::motion::{render_frame, ClipJitter, FrameDims};
use hiros_core::dataset::{encode_frame, primitive_pool, Frame, Jitter, MotionPrototype, DOING_NOTHING, NUM_CLASSES};

pub struct GesturePlayer {
    pool: Vec<MotionPrototype>,
    dims: FrameDims,
    /// Frames per gesture cycle.
    cycle: usize,
    jitter: Jitter,
    seed: u64,
    performance: u64,
    current: Option<(usize, ClipJitter)>,
    index: u64,
}

impl GesturePlayer {
    pub fn new(dims: FrameDims, cycle: usize, seed: u64) -> Self {
        GesturePlayer {
            pool: primitive_pool(),
            dims,
            cycle: cycle.max(1),
            // Phase is carried by the running frame index instead.
            jitter: Jitter {
                phase: 0.0,
                ..Jitter::default()
            },
            seed,
            performance: 0,
            current: None,
            index: 0,
        }
    }

    /// Performance-to-performance variation; the phase range is ignored.
    pub fn with_jitter(mut self, jitter: Jitter) -> Self {
        self.jitter = Jitter { phase: 0.0, ..jitter };
        self
    }

    pub fn dims(&self) -> FrameDims {
        self.dims
    }

    /// Frames rendered so far.
    pub fn frames_played(&self) -> u64 {
        self.index
    }

    /// Next frame of `class_id` as raw `H×W×C` pixels. Switching class draws
    /// a fresh performance jitter.
    ///
    /// # Panics
    /// If `class_id` is not a gesture class.
    pub fn next_pixels(&mut self, class_id: usize) -> Vec<u8> {
        assert!(class_id < NUM_CLASSES, "class {class_id} out of range");
        let jitter = match self.current {
            Some((c, j)) if c == class_id => j,
            _ => {
                self.performance += 1;
                let j = self.jitter.sample(self.seed ^ self.performance.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let j = if self.pool[class_id].check_bounds(&j, self.cycle).is_ok() {
                    j
                } else {
                    ClipJitter {
                        noise_seed: j.noise_seed,
                        noise_sigma: j.noise_sigma,
                        ..ClipJitter::none()
                    }
                };
                self.current = Some((class_id, j));
                j
            }
        };
        let px = render_frame(&self.pool[class_id], &jitter, self.dims, self.cycle, self.index);
        self.index += 1;
        px
    }

    pub fn next_idle(&mut self) -> Vec<u8> {
        self.next_pixels(DOING_NOTHING)
    }

    /// Next frame of `class_id`, encoded for `camera/frames`.
    pub fn next_payload(&mut self, class_id: usize) -> Vec<u8> {
        let pixels = self.next_pixels(class_id);
        let frame = Frame {
            height: self.dims.height,
            width: self.dims.width,
            channels: self.dims.channels,
            pixels,
        };
        encode_frame(&frame).expect("player dims fit the frame header")
    }
}
