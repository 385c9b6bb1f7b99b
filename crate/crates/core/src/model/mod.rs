//! The gesture network: two conv3d/ReLU/max-pool blocks, an LSTM over the
//! remaining time steps, and an affine softmax classifier on the final
//! hidden state.

mod checkpoint;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use train::{cross_validate, evaluate, train_fold, CvResult, TrainOptions, TrainReport};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Graph, ParamId, ParamStore, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("checkpoint format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error("non-finite training loss in epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub filters: usize,
    pub kernel: [usize; 3],
    pub pool: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub block1: ConvBlock,
    pub block2: ConvBlock,
    pub lstm_hidden: usize,
    pub num_classes: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            frames: 16,
            height: 32,
            width: 32,
            channels: 1,
            block1: ConvBlock {
                filters: 8,
                kernel: [3, 3, 3],
                pool: [2, 2, 2],
            },
            block2: ConvBlock {
                filters: 16,
                kernel: [3, 3, 3],
                pool: [2, 2, 2],
            },
            lstm_hidden: 64,
            num_classes: 27,
            seed: 0,
        }
    }
}

/// Intermediate sizes implied by a [`ModelConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// `[T, H, W]` after each block.
    pub block1_out: [usize; 3],
    pub block2_out: [usize; 3],
    pub lstm_steps: usize,
    pub lstm_input: usize,
}

/// Same-size padding for odd kernels.
pub(crate) fn same_padding(kernel: [usize; 3]) -> [usize; 3] {
    kernel.map(|k| (k - 1) / 2)
}

fn block_out(name: &str, input: [usize; 3], block: &ConvBlock) -> Result<[usize; 3]> {
    const AXES: [&str; 3] = ["T", "H", "W"];
    if block.filters == 0 {
        return Err(ModelError::Config(format!("{name}: zero filters")));
    }
    let pad = same_padding(block.kernel);
    let mut out = [0; 3];
    for a in 0..3 {
        let (k, p) = (block.kernel[a], block.pool[a]);
        if k == 0 || p == 0 {
            return Err(ModelError::Config(format!("{name}: zero kernel or pool on axis {}", AXES[a])));
        }
        let padded = input[a] + 2 * pad[a];
        if k > padded {
            return Err(ModelError::Config(format!(
                "{name}: kernel {k} larger than axis {} ({padded})",
                AXES[a]
            )));
        }
        let conv = padded - k + 1;
        if !conv.is_multiple_of(p) {
            return Err(ModelError::Config(format!(
                "{name}: pool {p} does not divide axis {} of size {conv}",
                AXES[a]
            )));
        }
        out[a] = conv / p;
        if out[a] == 0 {
            return Err(ModelError::Config(format!("{name}: axis {} vanishes", AXES[a])));
        }
    }
    Ok(out)
}

impl ModelConfig {
    pub fn dims(&self) -> Result<Dims> {
        for (name, v) in [
            ("frames", self.frames),
            ("height", self.height),
            ("width", self.width),
            ("channels", self.channels),
            ("lstm_hidden", self.lstm_hidden),
            ("num_classes", self.num_classes),
        ] {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        let b1 = block_out("block1", [self.frames, self.height, self.width], &self.block1)?;
        let b2 = block_out("block2", b1, &self.block2)?;
        Ok(Dims {
            block1_out: b1,
            block2_out: b2,
            lstm_steps: b2[0],
            lstm_input: self.block2.filters * b2[1] * b2[2],
        })
    }

    /// `[C, T, H, W]` of one input clip.
    pub fn clip_shape(&self) -> [usize; 4] {
        [self.channels, self.frames, self.height, self.width]
    }

    pub fn clip_len(&self) -> usize {
        self.clip_shape().iter().product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ParamIds {
    conv1_w: ParamId,
    conv1_b: ParamId,
    conv2_w: ParamId,
    conv2_b: ParamId,
    lstm_wx: ParamId,
    lstm_wh: ParamId,
    lstm_b: ParamId,
    fc_w: ParamId,
    fc_b: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GestureNet {
    config: ModelConfig,
    dims: Dims,
    store: ParamStore,
    ids: ParamIds,
}

fn glorot(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-limit..=limit))
}

impl GestureNet {
    pub fn build(config: ModelConfig) -> Result<Self> {
        let dims = config.dims()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (c0, f1, f2) = (config.channels, config.block1.filters, config.block2.filters);
        let k1: usize = config.block1.kernel.iter().product();
        let k2: usize = config.block2.kernel.iter().product();
        let [kt1, kh1, kw1] = config.block1.kernel;
        let [kt2, kh2, kw2] = config.block2.kernel;
        let (d, h, k) = (dims.lstm_input, config.lstm_hidden, config.num_classes);

        let conv1_w = store.add(glorot(&mut rng, &[f1, c0, kt1, kh1, kw1], c0 * k1, f1 * k1));
        let conv1_b = store.add(Tensor::zeros(&[f1]));
        let conv2_w = store.add(glorot(&mut rng, &[f2, f1, kt2, kh2, kw2], f1 * k2, f2 * k2));
        let conv2_b = store.add(Tensor::zeros(&[f2]));
        let lstm_wx = store.add(glorot(&mut rng, &[d, 4 * h], d, 4 * h));
        let lstm_wh = store.add(glorot(&mut rng, &[h, 4 * h], h, 4 * h));
        let lstm_b = store.add(Tensor::zeros(&[4 * h]));
        let fc_w = store.add(glorot(&mut rng, &[h, k], h, k));
        let fc_b = store.add(Tensor::zeros(&[k]));
        Ok(GestureNet {
            config,
            dims,
            store,
            ids: ParamIds {
                conv1_w,
                conv1_b,
                conv2_w,
                conv2_b,
                lstm_wx,
                lstm_wh,
                lstm_b,
                fc_w,
                fc_b,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn check_input(&self, clips: &Tensor) -> Result<usize> {
        let s = clips.shape();
        let expect = self.config.clip_shape();
        if s.len() != 5 || s[1..] != expect {
            return Err(ModelError::Input(format!(
                "expected clips [N,{},{},{},{}], got {s:?}",
                expect[0], expect[1], expect[2], expect[3]
            )));
        }
        Ok(s[0])
    }

    /// Records the network on `g` and returns the probability node.
    pub fn forward_graph(&self, g: &mut Graph, clips: Var) -> Result<Var> {
        let n = self.check_input(g.value(clips))?;
        let ids = &self.ids;
        let p = |g: &mut Graph, id| g.param(&self.store, id);

        let w1 = p(g, ids.conv1_w);
        let b1 = p(g, ids.conv1_b);
        let x = g.conv3d(clips, w1, b1, [1; 3], same_padding(self.config.block1.kernel))?;
        let x = g.relu(x);
        let x = g.maxpool3d(x, self.config.block1.pool)?;

        let w2 = p(g, ids.conv2_w);
        let b2 = p(g, ids.conv2_b);
        let x = g.conv3d(x, w2, b2, [1; 3], same_padding(self.config.block2.kernel))?;
        let x = g.relu(x);
        let x = g.maxpool3d(x, self.config.block2.pool)?;

        let hd = self.config.lstm_hidden;
        let wx = p(g, ids.lstm_wx);
        let wh = p(g, ids.lstm_wh);
        let lb = p(g, ids.lstm_b);
        let mut h = g.constant(Tensor::zeros(&[n, hd]));
        let mut c = g.constant(Tensor::zeros(&[n, hd]));
        for t in 0..self.dims.lstm_steps {
            let xt = g.time_slice(x, t)?;
            (h, c) = g.lstm_step(xt, h, c, wx, wh, lb)?;
        }

        let fw = p(g, ids.fc_w);
        let fb = p(g, ids.fc_b);
        let logits = g.affine(h, fw, fb)?;
        Ok(g.softmax(logits)?)
    }

    /// Class probabilities `[N, K]` for clips `[N, C, T, H, W]` with pixels
    /// scaled to `[0, 1]`.
    pub fn forward(&self, clips: &Tensor) -> Result<Tensor> {
        self.check_input(clips)?;
        let mut g = Graph::new();
        let x = g.constant(clips.clone());
        let probs = self.forward_graph(&mut g, x)?;
        Ok(g.value(probs).clone())
    }

    /// Forward over a flat buffer of clips in chunks to bound memory.
    pub fn predict_probs(&self, data: &[f64], chunk: usize) -> Result<Tensor> {
        let len = self.config.clip_len();
        if !data.len().is_multiple_of(len) || data.is_empty() {
            return Err(ModelError::Input(format!(
                "buffer of {} values is not a whole number of {len}-value clips",
                data.len()
            )));
        }
        let [c, t, h, w] = self.config.clip_shape();
        let k = self.config.num_classes;
        let mut out = Vec::with_capacity(data.len() / len * k);
        for part in data.chunks(chunk.max(1) * len) {
            let n = part.len() / len;
            let x = Tensor::new(&[n, c, t, h, w], part.to_vec())?;
            out.extend_from_slice(self.forward(&x)?.data());
        }
        Ok(Tensor::new(&[data.len() / len, k], out)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dims() {
        let d = ModelConfig::default().dims().unwrap();
        assert_eq!(d.block1_out, [8, 16, 16]);
        assert_eq!(d.block2_out, [4, 8, 8]);
        assert_eq!(d.lstm_steps, 4);
        assert_eq!(d.lstm_input, 16 * 8 * 8);
    }

    #[test]
    fn parameter_count_closed_form() {
        let net = GestureNet::build(ModelConfig::default()).unwrap();
        // conv1: 8*1*27 + 8; conv2: 16*8*27 + 16
        // lstm: 1024*256 + 64*256 + 256; fc: 64*27 + 27
        let expect = (8 * 27 + 8) + (16 * 8 * 27 + 16) + (1024 * 256 + 64 * 256 + 256) + (64 * 27 + 27);
        assert_eq!(expect, 284_235);
        assert_eq!(net.parameter_count(), expect);
    }

    #[test]
    fn same_seed_same_params() {
        let a = GestureNet::build(ModelConfig::default()).unwrap();
        let b = GestureNet::build(ModelConfig::default()).unwrap();
        assert_eq!(a.params(), b.params());
        let c = GestureNet::build(ModelConfig {
            seed: 1,
            ..ModelConfig::default()
        })
        .unwrap();
        assert_ne!(a.params(), c.params());
    }

    fn small(k: usize) -> ModelConfig {
        ModelConfig {
            frames: 8,
            height: 8,
            width: 8,
            channels: 1,
            block1: ConvBlock {
                filters: 2,
                kernel: [3, 3, 3],
                pool: [2, 2, 2],
            },
            block2: ConvBlock {
                filters: 3,
                kernel: [3, 3, 3],
                pool: [2, 2, 2],
            },
            lstm_hidden: 5,
            num_classes: k,
            seed: 3,
        }
    }

    #[test]
    fn two_class_output_width() {
        let net = GestureNet::build(small(2)).unwrap();
        let x = Tensor::from_fn(&[3, 1, 8, 8, 8], |i| (i % 13) as f64 / 13.0);
        let p = net.forward(&x).unwrap();
        assert_eq!(p.shape(), &[3, 2]);
        for r in 0..3 {
            let s: f64 = p.row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicate_rows_give_duplicate_probs() {
        let net = GestureNet::build(small(4)).unwrap();
        let one = Tensor::from_fn(&[1, 1, 8, 8, 8], |i| ((i * 31) % 17) as f64 / 17.0);
        let mut two = one.data().to_vec();
        two.extend_from_slice(one.data());
        let p = net.forward(&Tensor::new(&[2, 1, 8, 8, 8], two).unwrap()).unwrap();
        assert_eq!(p.row(0), p.row(1));
        let again = net.forward(&one).unwrap();
        assert_eq!(again.row(0), p.row(0));
    }

    #[test]
    fn rejects_bad_configs_and_inputs() {
        let mut cfg = small(2);
        cfg.frames = 6; // conv keeps 6, pool 2 -> 3, second pool 2 does not divide 3
        assert!(matches!(GestureNet::build(cfg), Err(ModelError::Config(_))));
        let mut cfg = small(2);
        cfg.num_classes = 0;
        assert!(matches!(GestureNet::build(cfg), Err(ModelError::Config(_))));

        let net = GestureNet::build(small(2)).unwrap();
        let err = net.forward(&Tensor::zeros(&[1, 1, 8, 8, 7])).unwrap_err();
        assert!(matches!(err, ModelError::Input(_)));
    }
}
