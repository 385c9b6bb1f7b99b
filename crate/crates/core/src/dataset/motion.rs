//! Parametric actor motions and the renderer.
//!
//! Geometry is authored on a 32×32 reference canvas (x right, y down) and
//! scaled to the requested frame size. The actor is a torso rectangle with a
//! head disc and two hand discs. Time `t` runs over `[0, 1)` across one clip;
//! every track has an integer frequency so rendering past `t = 1` repeats
//! the gesture seamlessly.

use std::f64::consts::TAU;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DatasetError, Result};

pub const REFERENCE_SIZE: f64 = 32.0;
/// Number of distinct primitives in [`primitive_pool`].
pub const POOL_SIZE: usize = 40;

const BACKGROUND: f64 = 20.0;
const TORSO: f64 = 90.0;
const HEAD: f64 = 140.0;
const HAND: f64 = 230.0;

const TORSO_X: [f64; 2] = [11.0, 21.0];
const TORSO_Y: [f64; 2] = [14.0, 31.0];
const HEAD_CENTER: [f64; 2] = [16.0, 9.0];
const HEAD_RADIUS: f64 = 3.0;
const HAND_RADIUS: f64 = 2.0;

const LEFT_REST: [f64; 2] = [10.0, 27.0];
const RIGHT_REST: [f64; 2] = [22.0, 27.0];
const LEFT_X: f64 = 10.0;
const RIGHT_X: f64 = 22.0;
const HIGH_Y: f64 = 9.0;
const MID_Y: f64 = 18.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Path {
    Still,
    /// Oscillation along a direction, degrees counter-clockwise from +x as
    /// seen on screen.
    Line { angle_deg: f64 },
    Circle { clockwise: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandTrack {
    pub center: [f64; 2],
    pub path: Path,
    pub amplitude: f64,
    pub freq: u32,
    /// Fraction of a cycle.
    pub phase: f64,
}

impl HandTrack {
    fn still(center: [f64; 2]) -> Self {
        HandTrack {
            center,
            path: Path::Still,
            amplitude: 0.0,
            freq: 0,
            phase: 0.0,
        }
    }

    /// Position on the reference canvas, before offset and scaling.
    pub fn position(&self, t: f64, amp_scale: f64, phase_jitter: f64) -> [f64; 2] {
        let a = self.amplitude * amp_scale;
        let theta = TAU * (self.freq as f64 * t + self.phase + phase_jitter);
        let [cx, cy] = self.center;
        match self.path {
            Path::Still => [cx, cy],
            Path::Line { angle_deg } => {
                let (s, c) = angle_deg.to_radians().sin_cos();
                let d = a * theta.sin();
                [cx + d * c, cy - d * s]
            }
            Path::Circle { clockwise } => {
                let dir = if clockwise { 1.0 } else { -1.0 };
                [cx + a * theta.cos(), cy + dir * a * theta.sin()]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionPrototype {
    pub id: usize,
    pub name: String,
    pub left: HandTrack,
    pub right: HandTrack,
    /// Horizontal whole-body sway amplitude, one cycle per clip.
    pub sway: f64,
}

/// Per-clip perturbation of a prototype.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipJitter {
    pub amp_scale: f64,
    pub phase: f64,
    /// Reference-canvas pixels.
    pub offset: [f64; 2],
    pub noise_sigma: f64,
    pub noise_seed: u64,
}

impl ClipJitter {
    pub fn none() -> Self {
        ClipJitter {
            amp_scale: 1.0,
            phase: 0.0,
            offset: [0.0, 0.0],
            noise_sigma: 0.0,
            noise_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameDims {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl FrameDims {
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Actor part positions at time `t` on the reference canvas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub sway: f64,
    pub left: [f64; 2],
    pub right: [f64; 2],
}

impl MotionPrototype {
    pub fn pose(&self, t: f64, j: &ClipJitter) -> Pose {
        let sway = self.sway * j.amp_scale * (TAU * (t + j.phase)).sin();
        let shift = |p: [f64; 2]| [p[0] + sway + j.offset[0], p[1] + j.offset[1]];
        Pose {
            sway,
            left: shift(self.left.position(t, j.amp_scale, j.phase)),
            right: shift(self.right.position(t, j.amp_scale, j.phase)),
        }
    }

    /// Checks that both hand centres stay on the canvas for `frames` samples
    /// of one cycle.
    pub fn check_bounds(&self, j: &ClipJitter, frames: usize) -> Result<()> {
        let max = REFERENCE_SIZE - 1.0;
        for f in 0..frames.max(1) {
            let t = f as f64 / frames.max(1) as f64;
            let pose = self.pose(t, j);
            for (hand, p) in [("left", pose.left), ("right", pose.right)] {
                if !(0.0..=max).contains(&p[0]) || !(0.0..=max).contains(&p[1]) {
                    return Err(DatasetError::Config(format!(
                        "primitive {} ({}): {hand} hand at ({:.2}, {:.2}) leaves the frame at t={t:.3}",
                        self.id, self.name, p[0], p[1]
                    )));
                }
            }
        }
        Ok(())
    }
}

fn disc_coverage(px: f64, py: f64, c: [f64; 2], r: f64) -> f64 {
    let d = ((px - c[0]).powi(2) + (py - c[1]).powi(2)).sqrt();
    (r + 0.5 - d).clamp(0.0, 1.0)
}

fn span_coverage(p: f64, lo: f64, hi: f64) -> f64 {
    (p - lo + 0.5).clamp(0.0, 1.0).min((hi - p + 0.5).clamp(0.0, 1.0))
}

fn blend(under: f64, over: f64, alpha: f64) -> f64 {
    under + (over - under) * alpha
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5EED_u64, |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// Renders frame `index` of a performance whose cycle spans `cycle` frames.
/// Output is `H×W×C` row-major.
pub fn render_frame(
    proto: &MotionPrototype,
    jitter: &ClipJitter,
    dims: FrameDims,
    cycle: usize,
    index: u64,
) -> Vec<u8> {
    let t = (index % cycle.max(1) as u64) as f64 / cycle.max(1) as f64;
    let pose = proto.pose(t, jitter);
    let sx = dims.width as f64 / REFERENCE_SIZE;
    let sy = dims.height as f64 / REFERENCE_SIZE;
    let sr = 0.5 * (sx + sy);
    let dx = pose.sway + jitter.offset[0];
    let dy = jitter.offset[1];
    let torso_x = [(TORSO_X[0] + dx) * sx, (TORSO_X[1] + dx) * sx];
    let torso_y = [(TORSO_Y[0] + dy) * sy, (TORSO_Y[1] + dy) * sy];
    let head = [(HEAD_CENTER[0] + dx) * sx, (HEAD_CENTER[1] + dy) * sy];
    let hands = [
        [pose.left[0] * sx, pose.left[1] * sy],
        [pose.right[0] * sx, pose.right[1] * sy],
    ];

    let mut noise = (jitter.noise_sigma > 0.0).then(|| {
        (
            ChaCha8Rng::seed_from_u64(mix_seed(&[jitter.noise_seed, index])),
            Normal::new(0.0, jitter.noise_sigma).expect("positive sigma"),
        )
    });
    let mut out = Vec::with_capacity(dims.len());
    for y in 0..dims.height {
        let py = y as f64 + 0.5;
        for x in 0..dims.width {
            let px = x as f64 + 0.5;
            let torso = span_coverage(px, torso_x[0], torso_x[1])
                .min(span_coverage(py, torso_y[0], torso_y[1]));
            let mut v = blend(BACKGROUND, TORSO, torso);
            v = blend(v, HEAD, disc_coverage(px, py, head, HEAD_RADIUS * sr));
            for h in hands {
                v = blend(v, HAND, disc_coverage(px, py, h, HAND_RADIUS * sr));
            }
            if let Some((rng, dist)) = noise.as_mut() {
                v += dist.sample(rng);
            }
            let p = v.round().clamp(0.0, 255.0) as u8;
            out.extend(std::iter::repeat_n(p, dims.channels));
        }
    }
    out
}

/// Renders `frames` consecutive frames (`T×H×W×C`).
pub fn render_clip(
    proto: &MotionPrototype,
    jitter: &ClipJitter,
    dims: FrameDims,
    frames: usize,
) -> Vec<u8> {
    (0..frames as u64)
        .flat_map(|i| render_frame(proto, jitter, dims, frames, i))
        .collect()
}

#[derive(Clone, Copy)]
enum Pattern {
    Line(f64, u32),
    Circle(bool),
}

fn track(center: [f64; 2], p: Pattern, phase: f64) -> HandTrack {
    let (path, freq, amplitude) = match p {
        Pattern::Line(angle_deg, f) => (Path::Line { angle_deg }, f, if f == 1 { 5.0 } else { 4.0 }),
        Pattern::Circle(clockwise) => (Path::Circle { clockwise }, 1, 5.0),
    };
    HandTrack {
        center,
        path,
        amplitude,
        freq,
        phase,
    }
}

fn pattern_name(p: Pattern) -> String {
    match p {
        Pattern::Line(a, 1) => format!("line{a:.0}"),
        Pattern::Line(a, f) => format!("line{a:.0}x{f}"),
        Pattern::Circle(true) => "circle-cw".into(),
        Pattern::Circle(false) => "circle-ccw".into(),
    }
}

/// The fixed pool of [`POOL_SIZE`] distinct primitives. Index 25 is the
/// motionless actor and index 26 a whole-body sway, so that the identity
/// mapping assigns them to the two background classes.
pub fn primitive_pool() -> Vec<MotionPrototype> {
    let one_hand = [
        Pattern::Line(0.0, 1),
        Pattern::Line(90.0, 1),
        Pattern::Circle(true),
        Pattern::Circle(false),
        Pattern::Line(0.0, 2),
        Pattern::Line(45.0, 1),
        Pattern::Line(135.0, 1),
    ];
    let mut active = Vec::new();
    for (level, y) in [("high", HIGH_Y), ("mid", MID_Y)] {
        for side in ["right", "left"] {
            for p in one_hand {
                let (left, right) = if side == "right" {
                    (HandTrack::still(LEFT_REST), track([RIGHT_X, y], p, 0.0))
                } else {
                    (track([LEFT_X, y], p, 0.0), HandTrack::still(RIGHT_REST))
                };
                active.push((format!("{side}-{level}-{}", pattern_name(p)), left, right));
            }
        }
        let both = [
            ("sync-line0", Pattern::Line(0.0, 1), Pattern::Line(0.0, 1), 0.0),
            ("mirror-line0", Pattern::Line(0.0, 1), Pattern::Line(0.0, 1), 0.5),
            ("sync-line90", Pattern::Line(90.0, 1), Pattern::Line(90.0, 1), 0.0),
            ("alt-line90", Pattern::Line(90.0, 1), Pattern::Line(90.0, 1), 0.5),
            ("mirror-circle", Pattern::Circle(false), Pattern::Circle(true), 0.0),
        ];
        for (name, lp, rp, lphase) in both {
            active.push((
                format!("both-{level}-{name}"),
                track([LEFT_X, y], lp, lphase),
                track([RIGHT_X, y], rp, 0.0),
            ));
        }
    }
    let mut pool: Vec<MotionPrototype> = Vec::with_capacity(POOL_SIZE);
    let mut active = active.into_iter();
    for id in 0..POOL_SIZE {
        let (name, left, right, sway) = match id {
            25 => (
                "idle".to_string(),
                HandTrack::still(LEFT_REST),
                HandTrack::still(RIGHT_REST),
                0.0,
            ),
            26 => (
                "sway".to_string(),
                HandTrack::still(LEFT_REST),
                HandTrack::still(RIGHT_REST),
                2.5,
            ),
            _ => {
                let (n, l, r) = active.next().expect("38 active primitives");
                (n, l, r, 0.0)
            }
        };
        pool.push(MotionPrototype {
            id,
            name,
            left,
            right,
            sway,
        });
    }
    debug_assert!(active.next().is_none());
    pool
}

#[cfg(test)]
mod tests {
    use super::*;

    const DIMS: FrameDims = FrameDims {
        height: 32,
        width: 32,
        channels: 1,
    };

    #[test]
    fn pool_is_distinct_and_in_bounds() {
        let pool = primitive_pool();
        assert_eq!(pool.len(), POOL_SIZE);
        let clips: Vec<Vec<u8>> = pool
            .iter()
            .map(|p| render_clip(p, &ClipJitter::none(), DIMS, 16))
            .collect();
        for i in 0..pool.len() {
            assert_eq!(pool[i].id, i);
            for j in 0..i {
                assert_ne!(clips[i], clips[j], "{} vs {}", pool[i].name, pool[j].name);
            }
        }
        let worst = [
            [-3.0, -3.0],
            [3.0, 3.0],
            [-3.0, 3.0],
            [3.0, -3.0],
        ];
        for p in &pool {
            for offset in worst {
                let j = ClipJitter {
                    amp_scale: 1.15,
                    offset,
                    ..ClipJitter::none()
                };
                p.check_bounds(&j, 64).unwrap();
            }
        }
    }

    #[test]
    fn idle_is_static_and_sway_is_not() {
        let pool = primitive_pool();
        let idle = render_clip(&pool[25], &ClipJitter::none(), DIMS, 16);
        assert!(idle.chunks(DIMS.len()).all(|f| f == &idle[..DIMS.len()]));
        let sway = render_clip(&pool[26], &ClipJitter::none(), DIMS, 16);
        assert_ne!(&sway[..DIMS.len()], &sway[4 * DIMS.len()..5 * DIMS.len()]);
    }

    #[test]
    fn rendering_is_periodic_and_replicates_channels() {
        let p = &primitive_pool()[2];
        let j = ClipJitter {
            noise_sigma: 0.0,
            ..ClipJitter::none()
        };
        assert_eq!(render_frame(p, &j, DIMS, 16, 3), render_frame(p, &j, DIMS, 16, 19));
        let rgb = FrameDims { channels: 3, ..DIMS };
        let f = render_frame(p, &j, rgb, 16, 3);
        assert_eq!(f.len(), 32 * 32 * 3);
        assert!(f.chunks(3).all(|px| px[0] == px[1] && px[1] == px[2]));
    }

    #[test]
    fn out_of_bounds_jitter_is_reported() {
        let p = &primitive_pool()[0];
        let j = ClipJitter {
            offset: [20.0, 0.0],
            ..ClipJitter::none()
        };
        assert!(matches!(p.check_bounds(&j, 16), Err(DatasetError::Config(_))));
    }

    #[test]
    fn hand_is_brightest_near_its_centre() {
        let p = &primitive_pool()[25];
        let f = render_frame(p, &ClipJitter::none(), DIMS, 16, 0);
        // Right hand rests at (22, 27): pixel (x=21..22, y=26..27).
        assert_eq!(f[26 * 32 + 21], HAND as u8);
        assert_eq!(f[0], BACKGROUND as u8);
    }
}
