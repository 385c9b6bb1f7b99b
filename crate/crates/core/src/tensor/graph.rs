use super::ops::{self, LstmWeights};
use super::{ParamId, ParamStore, Result, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Constant,
    Leaf,
    Param(ParamId),
    Conv3d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: [usize; 3],
        padding: [usize; 3],
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    MatMul(Var, Var),
    Affine {
        x: Var,
        w: Var,
        b: Var,
    },
    Add(Var, Var),
    Mul(Var, Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    TimeSlice {
        x: Var,
        t: usize,
    },
    Softmax(Var),
    CrossEntropy {
        probs: Var,
        labels: Vec<usize>,
    },
    Dot {
        x: Var,
        weights: Tensor,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation so that [`Graph::backward`] can replay it
/// in reverse.
///
/// A graph is single-use: build it, run backward (possibly more than once),
/// then drop it.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last backward pass with respect to `v`, if it was
    /// reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input that takes no gradient (data).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Input whose gradient is recorded on the graph.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id), true)
    }

    pub fn conv3d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Var> {
        let y = ops::conv3d(self.value(input), self.value(kernel), self.value(bias), stride, padding)?;
        let rg = self.rg(input) || self.rg(kernel) || self.rg(bias);
        Ok(self.push(
            y,
            Op::Conv3d {
                input,
                kernel,
                bias,
                stride,
                padding,
            },
            rg,
        ))
    }

    pub fn maxpool3d(&mut self, input: Var, window: [usize; 3]) -> Result<Var> {
        let (y, argmax) = ops::maxpool3d(self.value(input), window)?;
        let rg = self.rg(input);
        Ok(self.push(y, Op::MaxPool { input, argmax }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = ops::relu(self.value(x));
        let rg = self.rg(x);
        self.push(y, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).map(ops::sigmoid);
        let rg = self.rg(x);
        self.push(y, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let y = self.value(x).map(f64::tanh);
        let rg = self.rg(x);
        self.push(y, Op::Tanh(x), rg)
    }

    pub fn matmul(&mut self, x: Var, w: Var) -> Result<Var> {
        let y = ops::matmul(self.value(x), self.value(w))?;
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(y, Op::MatMul(x, w), rg))
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = ops::affine(self.value(x), self.value(w), self.value(b))?;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(y, Op::Affine { x, w, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::dim(
                "add",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let mut y = ta.clone();
        y.add_assign(tb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::dim(
                "mul",
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let y = Tensor::new(ta.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(y, Op::Mul(a, b), rg))
    }

    /// Columns `start..start + len` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        t.expect_rank("slice_cols", 2)?;
        let (n, k) = (t.shape()[0], t.shape()[1]);
        if start + len > k || len == 0 {
            return Err(TensorError::dim(
                "slice_cols",
                format!("columns {start}..{} of {k}", start + len),
            ));
        }
        let mut data = Vec::with_capacity(n * len);
        for r in 0..n {
            data.extend_from_slice(&t.data()[r * k + start..r * k + start + len]);
        }
        let y = Tensor::new(&[n, len], data)?;
        let rg = self.rg(x);
        Ok(self.push(y, Op::SliceCols { x, start }, rg))
    }

    /// Flattens time step `t` of a `[N,C,T,H,W]` tensor into `[N, C*H*W]`.
    pub fn time_slice(&mut self, x: Var, t: usize) -> Result<Var> {
        let v = self.value(x);
        v.expect_rank("time_slice", 5)?;
        let s = v.shape();
        let (n, c, tt, hw) = (s[0], s[1], s[2], s[3] * s[4]);
        if t >= tt {
            return Err(TensorError::Index {
                op: "time_slice",
                index: t,
                bound: tt,
            });
        }
        let mut data = Vec::with_capacity(n * c * hw);
        for ni in 0..n {
            for ci in 0..c {
                let off = ((ni * c + ci) * tt + t) * hw;
                data.extend_from_slice(&v.data()[off..off + hw]);
            }
        }
        let y = Tensor::new(&[n, c * hw], data)?;
        let rg = self.rg(x);
        Ok(self.push(y, Op::TimeSlice { x, t }, rg))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let y = ops::softmax(self.value(x))?;
        let rg = self.rg(x);
        Ok(self.push(y, Op::Softmax(x), rg))
    }

    pub fn cross_entropy(&mut self, probs: Var, labels: &[usize]) -> Result<Var> {
        let loss = ops::cross_entropy(self.value(probs), labels)?;
        let rg = self.rg(probs);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                probs,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// `sum(x * weights)`, a scalar probe used for gradient checks.
    pub fn dot(&mut self, x: Var, weights: Tensor) -> Result<Var> {
        let v = self.value(x);
        if v.shape() != weights.shape() {
            return Err(TensorError::dim(
                "dot",
                format!("{:?} vs {:?}", v.shape(), weights.shape()),
            ));
        }
        let s = v.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::Dot { x, weights }, rg))
    }

    /// One LSTM step built from primitive ops; returns `(h', c')`.
    pub fn lstm_step(
        &mut self,
        x: Var,
        h: Var,
        c: Var,
        w_input: Var,
        w_hidden: Var,
        bias: Var,
    ) -> Result<(Var, Var)> {
        let weights = LstmWeights {
            w_input: self.value(w_input).clone(),
            w_hidden: self.value(w_hidden).clone(),
            bias: self.value(bias).clone(),
        };
        weights.check(self.value(x), self.value(h), self.value(c))?;
        let hd = weights.hidden();
        let zx = self.affine(x, w_input, bias)?;
        let zh = self.matmul(h, w_hidden)?;
        let z = self.add(zx, zh)?;
        let zi = self.slice_cols(z, 0, hd)?;
        let zf = self.slice_cols(z, hd, hd)?;
        let zg = self.slice_cols(z, 2 * hd, hd)?;
        let zo = self.slice_cols(z, 3 * hd, hd)?;
        let i = self.sigmoid(zi);
        let f = self.sigmoid(zf);
        let g = self.tanh(zg);
        let o = self.sigmoid(zo);
        let fc = self.mul(f, c)?;
        let ig = self.mul(i, g)?;
        let c_new = self.add(fc, ig)?;
        let tc = self.tanh(c_new);
        let h_new = self.mul(o, tc)?;
        Ok((h_new, c_new))
    }

    /// Reverse pass from a scalar `loss`. Parameter gradients are added to
    /// `store`; calling twice accumulates twice.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(TensorError::State(format!(
                "backward on node {} but only {} nodes were recorded",
                loss.0,
                self.nodes.len()
            )));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::State(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads, store)?;
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(
        &self,
        i: usize,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
        store: &mut ParamStore,
    ) -> Result<()> {
        let node = &self.nodes[i];
        let mut acc = |v: Var, d: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Constant | Op::Leaf => {}
            Op::Param(id) => store.get_mut(*id).grad.add_assign(g),
            Op::Conv3d {
                input,
                kernel,
                bias,
                stride,
                padding,
            } => {
                let (dx, dk, db) = ops::conv3d_backward(
                    self.value(*input),
                    self.value(*kernel),
                    *stride,
                    *padding,
                    g,
                    self.rg(*input),
                )?;
                if let Some(dx) = dx {
                    acc(*input, dx);
                }
                acc(*kernel, dk);
                acc(*bias, db);
            }
            Op::MaxPool { input, argmax } => {
                let dx = ops::maxpool3d_backward(self.value(*input).shape(), argmax, g);
                acc(*input, dx);
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let data = xv
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
                    .collect();
                acc(*x, Tensor::new(xv.shape(), data)?);
            }
            Op::Sigmoid(x) => {
                let data = node
                    .value
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&s, &d)| d * s * (1.0 - s))
                    .collect();
                acc(*x, Tensor::new(node.value.shape(), data)?);
            }
            Op::Tanh(x) => {
                let data = node
                    .value
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&t, &d)| d * (1.0 - t * t))
                    .collect();
                acc(*x, Tensor::new(node.value.shape(), data)?);
            }
            Op::MatMul(x, w) => {
                let (dx, dw) = self.matmul_grads(*x, *w, g);
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                if let Some(dw) = dw {
                    acc(*w, dw);
                }
            }
            Op::Affine { x, w, b } => {
                let (dx, dw) = self.matmul_grads(*x, *w, g);
                if let Some(dx) = dx {
                    acc(*x, dx);
                }
                if let Some(dw) = dw {
                    acc(*w, dw);
                }
                if self.rg(*b) {
                    let k = g.shape()[1];
                    let mut db = vec![0.0; k];
                    for row in g.data().chunks(k) {
                        for (a, v) in db.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    acc(*b, Tensor::new(&[k], db)?);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let d = vb.data().iter().zip(g.data()).map(|(x, y)| x * y).collect();
                    acc(*a, Tensor::new(va.shape(), d)?);
                }
                if self.rg(*b) {
                    let d = va.data().iter().zip(g.data()).map(|(x, y)| x * y).collect();
                    acc(*b, Tensor::new(vb.shape(), d)?);
                }
            }
            Op::SliceCols { x, start } => {
                let xs = self.value(*x).shape();
                let (n, k) = (xs[0], xs[1]);
                let len = g.shape()[1];
                let mut dx = Tensor::zeros(xs);
                for r in 0..n {
                    dx.data_mut()[r * k + start..r * k + start + len]
                        .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                acc(*x, dx);
            }
            Op::TimeSlice { x, t } => {
                let s = self.value(*x).shape();
                let (n, c, tt, hw) = (s[0], s[1], s[2], s[3] * s[4]);
                let mut dx = Tensor::zeros(s);
                for ni in 0..n {
                    for ci in 0..c {
                        let off = ((ni * c + ci) * tt + t) * hw;
                        let src = ((ni * c) + ci) * hw;
                        dx.data_mut()[off..off + hw].copy_from_slice(&g.data()[src..src + hw]);
                    }
                }
                acc(*x, dx);
            }
            Op::Softmax(x) => acc(*x, ops::softmax_backward(&node.value, g)),
            Op::CrossEntropy { probs, labels } => {
                let d = ops::cross_entropy_backward(self.value(*probs), labels, g.item())?;
                acc(*probs, d);
            }
            Op::Dot { x, weights } => acc(*x, weights.map(|w| w * g.item())),
        }
        Ok(())
    }

    fn matmul_grads(&self, x: Var, w: Var, g: &Tensor) -> (Option<Tensor>, Option<Tensor>) {
        let (xv, wv) = (self.value(x), self.value(w));
        let (n, d) = (xv.shape()[0], xv.shape()[1]);
        let k = wv.shape()[1];
        let dx = self.rg(x).then(|| {
            let mut out = vec![0.0; n * d];
            ops::gemm(n, k, d, g.data(), false, wv.data(), true, &mut out, 0.0);
            Tensor {
                shape: vec![n, d],
                data: out,
            }
        });
        let dw = self.rg(w).then(|| {
            let mut out = vec![0.0; d * k];
            ops::gemm(d, n, k, xv.data(), true, g.data(), false, &mut out, 0.0);
            Tensor {
                shape: vec![d, k],
                data: out,
            }
        });
        (dx, dw)
    }
}
