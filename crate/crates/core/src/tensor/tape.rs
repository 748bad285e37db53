use super::kernels::{self, ConvDims};
use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Conv2d { x: Var, kernel: Var, bias: Var, dims: ConvDims },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    LogSoftmax(Var),
    Reshape(Var),
    Upsample { x: Var, factor: usize },
    Sum(Var),
    Mean(Var),
    Route { sources: Vec<Var>, selection: Vec<usize> },
    MeanOf(Vec<Var>),
    GridCell { x: Var, row: usize, col: usize },
    SoftmaxCrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    Nll { logp: Var, labels: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of a forward pass.
///
/// Nodes are appended in evaluation order, so every node's inputs precede
/// it and a single reverse sweep suffices for [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Grad-enabled leaf.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let data = kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(vec![m, n], data)?, Op::MatMul(a, b), rg))
    }

    /// Adds `bias[n]` to every length-`n` row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(Error::dim("add_bias", sx, sb));
        }
        let n = sb[0];
        let b = self.value(bias).data();
        let mut t = self.value(x).clone();
        for row in t.data_mut().chunks_mut(n) {
            row.iter_mut().zip(b).for_each(|(v, bi)| *v += bi);
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(t, Op::AddBias(x, bias), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(name, self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, op, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let mut t = self.value(x).clone();
        t.data_mut().iter_mut().for_each(|v| *v *= factor);
        let rg = self.rg(&[x]);
        self.push(t, Op::Scale(x, factor), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut t = self.value(x).clone();
        t.data_mut().iter_mut().filter(|v| **v < 0.0).for_each(|v| *v = 0.0);
        let rg = self.rg(&[x]);
        self.push(t, Op::Relu(x), rg)
    }

    /// Stride-1, zero-padded ("same") convolution with a square odd kernel.
    /// `x`: `[batch×cin×h×w]`, `kernel`: `[cout×cin×k×k]`, `bias`: `[cout]`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (sx, sk, sb) = (self.shape(x), self.shape(kernel), self.shape(bias));
        if sx.len() != 4 || sk.len() != 4 || sk[2] != sk[3] || sk[2] % 2 == 0 {
            return Err(Error::dim("conv2d", sx, sk));
        }
        if sx[1] != sk[1] {
            return Err(Error::dim("conv2d channels", sx, sk));
        }
        if sb != [sk[0]] {
            return Err(Error::dim("conv2d bias", sk, sb));
        }
        let dims = ConvDims {
            batch: sx[0],
            cin: sx[1],
            cout: sk[0],
            h: sx[2],
            w: sx[3],
            k: sk[2],
        };
        let data = kernels::conv2d_forward(self.value(x).data(), self.value(kernel).data(), self.value(bias).data(), dims);
        let t = Tensor::new(vec![dims.batch, dims.cout, dims.h, dims.w], data)?;
        let rg = self.rg(&[x, kernel, bias]);
        Ok(self.push(t, Op::Conv2d { x, kernel, bias, dims }, rg))
    }

    /// 2×2 max pooling; ties route the gradient to the first row-major maximum.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 4 || !s[2].is_multiple_of(2) || !s[3].is_multiple_of(2) {
            return Err(Error::dim("maxpool2", s, &[2, 2]));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (data, argmax) = kernels::maxpool2(self.value(x).data(), b * c, h, w);
        let t = Tensor::new(vec![b, c, h / 2, w / 2], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::MaxPool2 { x, argmax }, rg))
    }

    /// Row-wise log-softmax of an `r×c` matrix, `c >= 2`.
    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::dim("log_softmax_rows", s, &[0, 0]));
        }
        if s[1] < 2 {
            return Err(Error::DegenerateClassification(s[1]));
        }
        let data = kernels::log_softmax_rows(self.value(x).data(), s[1]);
        let t = Tensor::new(s.to_vec(), data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::LogSoftmax(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Reshape(x), rg))
    }

    /// `[b×c×h×w] -> [b×(c·h·w)]`
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let b = s.first().copied().unwrap_or(1);
        let rest = s.iter().skip(1).product();
        self.reshape(x, &[b, rest])
    }

    /// Replicates each spatial cell `factor×factor` times.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 4 || factor == 0 {
            return Err(Error::dim("upsample_nearest", s, &[factor]));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let data = kernels::upsample_nearest(self.value(x).data(), b * c, h, w, factor);
        let t = Tensor::new(vec![b, c, h * factor, w * factor], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::Upsample { x, factor }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.len().max(1) as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    /// Picks, for every element of a `[b×c]` output, the same element from
    /// `sources[selection[idx]]`. The selection is a constant of the tape.
    pub fn route(&mut self, sources: &[Var], selection: &[usize]) -> Result<Var> {
        let first = *sources
            .first()
            .ok_or_else(|| Error::Contract("route needs at least one source".into()))?;
        let shape = self.shape(first).to_vec();
        for &s in sources {
            if self.shape(s) != shape.as_slice() {
                return Err(Error::dim("route", &shape, self.shape(s)));
            }
        }
        if selection.len() != self.value(first).len() {
            return Err(Error::dim("route selection", &shape, &[selection.len()]));
        }
        if let Some(&bad) = selection.iter().find(|&&j| j >= sources.len()) {
            return Err(Error::Contract(format!(
                "route index {bad} out of range for {} sources",
                sources.len()
            )));
        }
        let data = selection
            .iter()
            .enumerate()
            .map(|(idx, &j)| self.value(sources[j]).data()[idx])
            .collect();
        let t = Tensor::new(shape, data)?;
        let rg = self.rg(sources);
        Ok(self.push(
            t,
            Op::Route {
                sources: sources.to_vec(),
                selection: selection.to_vec(),
            },
            rg,
        ))
    }

    /// Elementwise mean of equally shaped tensors.
    pub fn mean_of(&mut self, sources: &[Var]) -> Result<Var> {
        let first = *sources
            .first()
            .ok_or_else(|| Error::Contract("mean_of needs at least one source".into()))?;
        let shape = self.shape(first).to_vec();
        let mut acc = vec![0.0; self.value(first).len()];
        for &s in sources {
            if self.shape(s) != shape.as_slice() {
                return Err(Error::dim("mean_of", &shape, self.shape(s)));
            }
            acc.iter_mut().zip(self.value(s).data()).for_each(|(a, v)| *a += v);
        }
        let n = sources.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        let t = Tensor::new(shape, acc)?;
        let rg = self.rg(sources);
        Ok(self.push(t, Op::MeanOf(sources.to_vec()), rg))
    }

    /// `[b×c×h×w] -> [b×c]` at spatial cell `(row, col)`.
    pub fn grid_cell(&mut self, x: Var, row: usize, col: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 4 || row >= s[2] || col >= s[3] {
            return Err(Error::dim("grid_cell", s, &[row, col]));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let src = self.value(x).data();
        let data = (0..b * c).map(|p| src[p * h * w + row * w + col]).collect();
        let t = Tensor::new(vec![b, c], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::GridCell { x, row, col }, rg))
    }

    /// Mean over rows of `logsumexp(row) - row[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        check_labels("softmax_cross_entropy", &s, labels)?;
        let c = s[1];
        let lp = kernels::log_softmax_rows(self.value(logits).data(), c);
        let loss = labels.iter().enumerate().map(|(r, &y)| -lp[r * c + y]).sum::<f64>() / labels.len() as f64;
        let probs = lp.iter().map(|v| v.exp()).collect();
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Mean over rows of `-logp[row, label]`; no normalization applied.
    pub fn nll(&mut self, logp: Var, labels: &[usize]) -> Result<Var> {
        let s = self.shape(logp).to_vec();
        check_labels("nll", &s, labels)?;
        let c = s[1];
        let v = self.value(logp).data();
        let loss = labels.iter().enumerate().map(|(r, &y)| -v[r * c + y]).sum::<f64>() / labels.len() as f64;
        let rg = self.rg(&[logp]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Nll {
                logp,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Every grad-enabled leaf gets a gradient, zero when `loss` does not
    /// depend on it.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got shape {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                if !node.requires_grad {
                    return None;
                }
                let shape = node.value.shape().to_vec();
                match g {
                    Some(g) => Tensor::new(shape, g).ok(),
                    None if matches!(node.op, Op::Leaf) => Some(Tensor::zeros(&shape)),
                    None => None,
                }
            })
            .collect();
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
            slot => *slot = Some(contrib),
        }
    }

    fn accumulate_with(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = &mut grads[v.0];
        let acc = slot.get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(acc);
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.requires_grad(*a) {
                    let ga = kernels::matmul_nt(g, self.value(*b).data(), m, k, n);
                    self.accumulate(grads, *a, ga);
                }
                if self.requires_grad(*b) {
                    let gb = kernels::matmul_tn(self.value(*a).data(), g, m, k, n);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, g.to_vec());
                let n = self.value(*bias).len();
                self.accumulate_with(grads, *bias, |acc| {
                    for row in g.chunks(n) {
                        acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.to_vec());
                self.accumulate(grads, *b, g.to_vec());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(grads, *a, g.iter().zip(vb).map(|(g, y)| g * y).collect());
                self.accumulate(grads, *b, g.iter().zip(va).map(|(g, x)| g * x).collect());
            }
            Op::Scale(x, f) => self.accumulate(grads, *x, g.iter().map(|v| v * f).collect()),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let gx = g.iter().zip(xv).map(|(&g, &x)| if x > 0.0 { g } else { 0.0 }).collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Conv2d { x, kernel, bias, dims } => {
                if self.requires_grad(*x) {
                    let gx = kernels::conv2d_grad_input(g, self.value(*kernel).data(), *dims);
                    self.accumulate(grads, *x, gx);
                }
                if self.requires_grad(*kernel) || self.requires_grad(*bias) {
                    let (gk, gb) = kernels::conv2d_grad_params(g, self.value(*x).data(), *dims);
                    self.accumulate(grads, *kernel, gk);
                    self.accumulate(grads, *bias, gb);
                }
            }
            Op::MaxPool2 { x, argmax } => {
                self.accumulate_with(grads, *x, |acc| {
                    for (&src, &gv) in argmax.iter().zip(g) {
                        acc[src] += gv;
                    }
                });
            }
            Op::LogSoftmax(x) => {
                // d/dx_j = g_j - softmax_j * sum(g)
                let c = node.value.shape()[1];
                let out = node.value.data();
                let mut gx = Vec::with_capacity(g.len());
                for (gr, orow) in g.chunks(c).zip(out.chunks(c)) {
                    let s: f64 = gr.iter().sum();
                    gx.extend(gr.iter().zip(orow).map(|(gj, oj)| gj - oj.exp() * s));
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g.to_vec()),
            Op::Upsample { x, factor } => {
                let s = self.shape(*x);
                let gx = kernels::upsample_nearest_adjoint(g, s[0] * s[1], s[2], s[3], *factor);
                self.accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, vec![g[0] / n as f64; n]);
            }
            Op::Route { sources, selection } => {
                for (j, &src) in sources.iter().enumerate() {
                    if !selection.contains(&j) {
                        continue;
                    }
                    self.accumulate_with(grads, src, |acc| {
                        for (idx, (&sel, &gv)) in selection.iter().zip(g).enumerate() {
                            if sel == j {
                                acc[idx] += gv;
                            }
                        }
                    });
                }
            }
            Op::MeanOf(sources) => {
                let n = sources.len() as f64;
                for &s in sources {
                    self.accumulate(grads, s, g.iter().map(|v| v / n).collect());
                }
            }
            Op::GridCell { x, row, col } => {
                let s = self.shape(*x);
                let (h, w) = (s[2], s[3]);
                self.accumulate_with(grads, *x, |acc| {
                    for (p, &gv) in g.iter().enumerate() {
                        acc[p * h * w + row * w + col] += gv;
                    }
                });
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                let c = self.shape(*logits)[1];
                let scale = g[0] / labels.len() as f64;
                let mut gx: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &y) in labels.iter().enumerate() {
                    gx[r * c + y] -= scale;
                }
                self.accumulate(grads, *logits, gx);
            }
            Op::Nll { logp, labels } => {
                let c = self.shape(*logp)[1];
                let scale = g[0] / labels.len() as f64;
                self.accumulate_with(grads, *logp, |acc| {
                    for (r, &y) in labels.iter().enumerate() {
                        acc[r * c + y] -= scale;
                    }
                });
            }
        }
    }
}

fn check_labels(op: &'static str, shape: &[usize], labels: &[usize]) -> Result<()> {
    if shape.len() != 2 || shape[0] != labels.len() || labels.is_empty() {
        return Err(Error::dim(op, shape, &[labels.len()]));
    }
    if shape[1] < 2 {
        return Err(Error::DegenerateClassification(shape[1]));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= shape[1]) {
        return Err(Error::Contract(format!("label {bad} out of range for {} classes", shape[1])));
    }
    Ok(())
}
