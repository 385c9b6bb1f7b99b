use rand::distributions::Uniform;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::motion::{mix_seed, primitive_pool, render_clip, ClipJitter, FrameDims, MotionPrototype};
use super::{DatasetError, Manifest, ManifestEntry, Result, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
#[repr(u8)]
pub enum Stage {
    /// Participants invent their own gesture for each command.
    Uninstructed = 1,
    /// Participants copy a shown demonstration.
    Demonstrated = 2,
}

impl TryFrom<u8> for Stage {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Stage::Uninstructed),
            2 => Ok(Stage::Demonstrated),
            _ => Err(format!("stage must be 1 or 2, got {v}")),
        }
    }
}

impl From<Stage> for u8 {
    fn from(s: Stage) -> u8 {
        s as u8
    }
}

/// Jitter ranges. Each clip draws uniformly from `±amplitude` (relative),
/// `±phase` (cycles) and `±offset_px` (reference pixels) and adds Gaussian
/// pixel noise of `noise_sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub amplitude: f64,
    pub phase: f64,
    pub offset_px: f64,
    pub noise_sigma: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter {
            amplitude: 0.15,
            phase: 0.1,
            offset_px: 3.0,
            noise_sigma: 8.0,
        }
    }
}

impl Jitter {
    pub fn sample(&self, seed: u64) -> ClipJitter {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sym = |r: f64| if r > 0.0 { rng.sample(Uniform::new_inclusive(-r, r)) } else { 0.0 };
        ClipJitter {
            amp_scale: 1.0 + sym(self.amplitude),
            phase: sym(self.phase),
            offset: [sym(self.offset_px), sym(self.offset_px)],
            noise_sigma: self.noise_sigma,
            noise_seed: mix_seed(&[seed, 0x004E_015E]),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = [self.amplitude, self.phase, self.offset_px, self.noise_sigma]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0);
        if !ok || self.amplitude >= 1.0 {
            return Err(DatasetError::Config(format!(
                "jitter ranges must be finite, non-negative and amplitude < 1: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSpec {
    pub stage: Stage,
    pub participants: u32,
    pub clips_per_class_per_participant: usize,
    /// Class ids to generate; defaults to all 27.
    pub classes: Vec<usize>,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub jitter: Jitter,
    /// Number of primitives available to uninstructed participants.
    pub pool_size: usize,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            stage: Stage::Demonstrated,
            participants: 10,
            clips_per_class_per_participant: 5,
            classes: (0..NUM_CLASSES).collect(),
            frames: 16,
            height: 32,
            width: 32,
            channels: 1,
            jitter: Jitter::default(),
            pool_size: super::motion::POOL_SIZE,
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn frame_dims(&self) -> FrameDims {
        FrameDims {
            height: self.height,
            width: self.width,
            channels: self.channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(DatasetError::Config(m));
        if self.participants == 0 || self.clips_per_class_per_participant == 0 {
            return cfg("participants and clips per class must be positive".into());
        }
        if self.classes.is_empty() {
            return cfg("no classes requested".into());
        }
        let mut seen = [false; NUM_CLASSES];
        for &c in &self.classes {
            if c >= NUM_CLASSES || std::mem::replace(&mut seen[c], true) {
                return cfg(format!("class list {:?} has an invalid or repeated id", self.classes));
            }
        }
        let dims = [self.frames, self.height, self.width, self.channels];
        if dims.iter().any(|&d| d == 0 || d > u16::MAX as usize) {
            return cfg(format!("clip dimensions {dims:?} must be in 1..=65535"));
        }
        if self.pool_size > super::motion::POOL_SIZE {
            return cfg(format!(
                "pool size {} exceeds the {} available primitives",
                self.pool_size,
                super::motion::POOL_SIZE
            ));
        }
        if self.stage == Stage::Uninstructed && self.pool_size < self.classes.len() {
            return cfg(format!(
                "primitive pool of {} is smaller than the {} requested classes",
                self.pool_size,
                self.classes.len()
            ));
        }
        self.jitter.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clip {
    /// `T×H×W×C` row-major.
    pub frames: Vec<u8>,
    /// `[T, H, W, C]`.
    pub dims: [usize; 4],
    pub class_id: u16,
    pub participant_id: u32,
    pub stage: Stage,
    pub variant_seed: u64,
}

impl Clip {
    pub fn frame_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    pub fn frame(&self, t: usize) -> &[u8] {
        let n = self.frame_len();
        &self.frames[t * n..(t + 1) * n]
    }
}

/// Primitive indices chosen by one uninstructed participant, one per
/// position in `classes`. Sampled without replacement.
pub fn participant_mapping(seed: u64, participant: u32, classes: usize, pool_size: usize) -> Result<Vec<usize>> {
    if pool_size < classes {
        return Err(DatasetError::Config(format!(
            "primitive pool of {pool_size} is smaller than the {classes} requested classes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x0005_7471, participant as u64]));
    Ok(rand::seq::index::sample(&mut rng, pool_size, classes).into_vec())
}

/// Primitive used by `participant` for each requested class.
pub fn prototype_assignment(spec: &GenSpec, participant: u32) -> Result<Vec<usize>> {
    match spec.stage {
        Stage::Demonstrated => Ok(spec.classes.clone()),
        Stage::Uninstructed => participant_mapping(spec.seed, participant, spec.classes.len(), spec.pool_size),
    }
}

/// Seed of one clip; a pure function of the generation seed and the clip's
/// coordinates.
pub fn variant_seed(seed: u64, stage: Stage, participant: u32, class_id: usize, rep: usize) -> u64 {
    mix_seed(&[seed, stage as u64, participant as u64, class_id as u64, rep as u64])
}

pub fn clip_path(index: usize) -> String {
    format!("clips/{index:06}.gclp")
}

/// Renders the whole clip set. Clips are ordered by participant, then
/// class (in `spec.classes` order), then repetition.
pub fn generate(spec: &GenSpec) -> Result<(Vec<Clip>, Manifest)> {
    spec.validate()?;
    let pool = primitive_pool();
    let mut jobs: Vec<(u32, usize, usize, &MotionPrototype)> = Vec::new();
    for p in 0..spec.participants {
        let mapping = prototype_assignment(spec, p)?;
        for (&class, &proto) in spec.classes.iter().zip(&mapping) {
            for rep in 0..spec.clips_per_class_per_participant {
                jobs.push((p, class, rep, &pool[proto]));
            }
        }
    }
    let dims = spec.frame_dims();
    let clips: Vec<Clip> = jobs
        .par_iter()
        .map(|&(participant, class, rep, proto)| {
            let variant = variant_seed(spec.seed, spec.stage, participant, class, rep);
            let jitter = spec.jitter.sample(variant);
            proto.check_bounds(&jitter, spec.frames)?;
            Ok(Clip {
                frames: render_clip(proto, &jitter, dims, spec.frames),
                dims: [spec.frames, spec.height, spec.width, spec.channels],
                class_id: class as u16,
                participant_id: participant,
                stage: spec.stage,
                variant_seed: variant,
            })
        })
        .collect::<Result<_>>()?;
    let entries = clips
        .iter()
        .enumerate()
        .map(|(i, c)| ManifestEntry {
            path: clip_path(i),
            class_id: c.class_id,
            participant_id: c.participant_id,
            stage: c.stage,
            fold: None,
        })
        .collect();
    Ok((
        clips,
        Manifest {
            entries,
            spec: Some(spec.clone()),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(stage: Stage) -> GenSpec {
        GenSpec {
            stage,
            participants: 3,
            clips_per_class_per_participant: 2,
            classes: vec![0, 1, 2],
            frames: 4,
            height: 8,
            width: 8,
            ..GenSpec::default()
        }
    }

    #[test]
    fn deterministic_and_counted() {
        let (a, ma) = generate(&small(Stage::Demonstrated)).unwrap();
        let (b, mb) = generate(&small(Stage::Demonstrated)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        assert_eq!(a.len(), 3 * 3 * 2);
        assert!(a.iter().all(|c| c.frames.len() == 4 * 8 * 8));
        let other = GenSpec { seed: 1, ..small(Stage::Demonstrated) };
        assert_ne!(generate(&other).unwrap().0, a);
    }

    #[test]
    fn stage_two_uses_canonical_prototypes() {
        let spec = small(Stage::Demonstrated);
        for p in 0..3 {
            assert_eq!(prototype_assignment(&spec, p).unwrap(), vec![0, 1, 2]);
        }
    }

    #[test]
    fn stage_one_mapping_is_injective_per_participant() {
        let spec = GenSpec {
            stage: Stage::Uninstructed,
            ..GenSpec::default()
        };
        for p in 0..20 {
            let mut m = prototype_assignment(&spec, p).unwrap();
            assert_eq!(m.len(), 27);
            m.sort_unstable();
            m.dedup();
            assert_eq!(m.len(), 27);
            assert!(m.iter().all(|&i| i < 40));
        }
    }

    #[test]
    fn config_errors() {
        let too_small = GenSpec {
            stage: Stage::Uninstructed,
            pool_size: 26,
            ..GenSpec::default()
        };
        assert!(matches!(generate(&too_small), Err(DatasetError::Config(_))));
        let repeated = GenSpec {
            classes: vec![1, 1],
            ..GenSpec::default()
        };
        assert!(matches!(generate(&repeated), Err(DatasetError::Config(_))));
        let wild = GenSpec {
            jitter: Jitter {
                offset_px: 30.0,
                ..Jitter::default()
            },
            ..small(Stage::Demonstrated)
        };
        assert!(matches!(generate(&wild), Err(DatasetError::Config(_))));
    }

    #[test]
    fn stage_serializes_as_number() {
        assert_eq!(serde_json::to_string(&Stage::Uninstructed).unwrap(), "1");
        assert_eq!(serde_json::from_str::<Stage>("2").unwrap(), Stage::Demonstrated);
        assert!(serde_json::from_str::<Stage>("3").is_err());
    }
}
