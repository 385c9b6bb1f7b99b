use super::{Clip, DatasetError, Result};
use crate::tensor::{self, Tensor};

/// Converts one `T×H×W×C` frame buffer into channel-major `C×T×H×W`
/// floats in `[0, 1]`, appending to `out`.
pub fn pixels_to_input(pixels: &[u8], dims: [usize; 4], out: &mut Vec<f64>) {
    let [t, h, w, c] = dims;
    let plane = t * h * w;
    let start = out.len();
    out.resize(start + plane * c, 0.0);
    for (i, px) in pixels.chunks_exact(c).enumerate() {
        for (ch, &v) in px.iter().enumerate() {
            out[start + ch * plane + i] = v as f64 / 255.0;
        }
    }
}

/// Model-ready clips: a flat `[N, C, T, H, W]` buffer with labels and
/// participant groups.
#[derive(Debug, Clone, PartialEq)]
pub struct Examples {
    data: Vec<f64>,
    labels: Vec<usize>,
    groups: Vec<u32>,
    shape: [usize; 4],
}

impl Examples {
    pub fn new(data: Vec<f64>, labels: Vec<usize>, groups: Vec<u32>, shape: [usize; 4]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if labels.len() != groups.len() || data.len() != labels.len() * len {
            return Err(DatasetError::Input(format!(
                "{} values, {} labels and {} groups do not describe clips of shape {shape:?}",
                data.len(),
                labels.len(),
                groups.len()
            )));
        }
        Ok(Examples {
            data,
            labels,
            groups,
            shape,
        })
    }

    pub fn from_clips(clips: &[Clip]) -> Result<Self> {
        let first = clips
            .first()
            .ok_or_else(|| DatasetError::Input("no clips".into()))?;
        let [t, h, w, c] = first.dims;
        let shape = [c, t, h, w];
        let mut data = Vec::with_capacity(clips.len() * first.frames.len());
        for clip in clips {
            if clip.dims != first.dims {
                return Err(DatasetError::Input(format!(
                    "mixed clip dimensions {:?} and {:?}",
                    first.dims, clip.dims
                )));
            }
            pixels_to_input(&clip.frames, clip.dims, &mut data);
        }
        Ok(Examples {
            data,
            labels: clips.iter().map(|c| c.class_id as usize).collect(),
            groups: clips.iter().map(|c| c.participant_id).collect(),
            shape,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn groups(&self) -> &[u32] {
        &self.groups
    }

    /// `[C, T, H, W]`.
    pub fn sample_shape(&self) -> [usize; 4] {
        self.shape
    }

    fn sample_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.data[i * n..(i + 1) * n]
    }

    /// Stacks the given samples into a `[B, C, T, H, W]` tensor.
    pub fn batch(&self, idx: &[usize]) -> tensor::Result<(Tensor, Vec<usize>)> {
        let mut data = Vec::with_capacity(idx.len() * self.sample_len());
        for &i in idx {
            if i >= self.len() {
                return Err(tensor::TensorError::Index {
                    op: "batch",
                    index: i,
                    bound: self.len(),
                });
            }
            data.extend_from_slice(self.sample(i));
        }
        let [c, t, h, w] = self.shape;
        let x = Tensor::new(&[idx.len(), c, t, h, w], data)?;
        Ok((x, idx.iter().map(|&i| self.labels[i]).collect()))
    }

    /// Panics if an index is out of range.
    pub fn subset(&self, idx: &[usize]) -> Examples {
        let mut data = Vec::with_capacity(idx.len() * self.sample_len());
        for &i in idx {
            data.extend_from_slice(self.sample(i));
        }
        Examples {
            data,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            groups: idx.iter().map(|&i| self.groups[i]).collect(),
            shape: self.shape,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Stage;

    fn clip(class_id: u16, fill: u8) -> Clip {
        Clip {
            frames: (0..2 * 2 * 2 * 3).map(|i| fill.wrapping_add(i as u8)).collect(),
            dims: [2, 2, 2, 3],
            class_id,
            participant_id: class_id as u32 + 10,
            stage: Stage::Demonstrated,
            variant_seed: 0,
        }
    }

    #[test]
    fn channel_major_layout() {
        let ex = Examples::from_clips(&[clip(1, 0), clip(4, 100)]).unwrap();
        assert_eq!(ex.sample_shape(), [3, 2, 2, 2]);
        assert_eq!(ex.labels(), &[1, 4]);
        assert_eq!(ex.groups(), &[11, 14]);
        // Pixel i, channel ch sits at ch*8 + i; source value was 3*i + ch.
        let s = ex.sample(0);
        for i in 0..8 {
            for ch in 0..3 {
                assert_eq!(s[ch * 8 + i], (3 * i + ch) as f64 / 255.0);
            }
        }
        let (x, y) = ex.batch(&[1, 0]).unwrap();
        assert_eq!(x.shape(), &[2, 3, 2, 2, 2]);
        assert_eq!(y, vec![4, 1]);
        assert_eq!(&x.data()[..24], ex.sample(1));
        assert!(ex.batch(&[2]).is_err());
        assert_eq!(ex.subset(&[1]).labels(), &[4]);
    }

    #[test]
    fn rejects_mixed_or_empty() {
        assert!(Examples::from_clips(&[]).is_err());
        let mut odd = clip(0, 0);
        odd.dims = [1, 2, 2, 6];
        assert!(Examples::from_clips(&[clip(0, 0), odd]).is_err());
        assert!(Examples::new(vec![0.0; 3], vec![0], vec![0], [1, 1, 1, 2]).is_err());
    }
}
