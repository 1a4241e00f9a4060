//! Define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Graph`] borrows a [`ParamStore`] for the duration of one forward and
//! backward pass. Only parameters flagged trainable receive gradients, but
//! gradients still flow *through* frozen sub-networks to earlier inputs.

use std::borrow::Cow;

use crate::kernels::{self, Axis, ConvGeom, Mat};
use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Option<Vec<f32>>,
    },
    ConvTranspose {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    InstanceNorm {
        x: Var,
        inv_std: Vec<f32>,
    },
    LeakyRelu {
        x: Var,
        slope: f32,
    },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Concat(Var, Var),
    Resize {
        x: Var,
        ys: Axis,
        xs: Axis,
    },
    Clamp {
        x: Var,
        lo: f32,
        hi: f32,
    },
    GlobalAvgPool(Var),
    Broadcast(Var),
    /// Scalar node with precomputed local gradients.
    Custom {
        inputs: Vec<Var>,
        grads: Vec<Tensor>,
    },
    WeightedSum(Vec<(Var, f32)>),
}

struct Node<'s> {
    value: Cow<'s, Tensor>,
    op: Op,
    needs_grad: bool,
}

pub struct Graph<'s> {
    store: &'s ParamStore,
    trainable: Vec<bool>,
    nodes: Vec<Node<'s>>,
}

/// Result of a backward pass.
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    pub params: ParamGrads,
}

impl Gradients {
    /// Gradient with respect to a node created with [`Graph::input_with_grad`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].as_ref()
    }
}

impl<'s> Graph<'s> {
    /// Graph in which the parameters listed in `trainable` receive gradients.
    pub fn new(store: &'s ParamStore, trainable: &[ParamId]) -> Self {
        let mut flags = vec![false; store.len()];
        for id in trainable {
            flags[id.0] = true;
        }
        Graph {
            store,
            trainable: flags,
            nodes: Vec::new(),
        }
    }

    /// Graph in which nothing is trainable (inference).
    pub fn inference(store: &'s ParamStore) -> Self {
        Self::new(store, &[])
    }

    fn push(&mut self, value: Cow<'s, Tensor>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, false)
    }

    pub fn input_with_grad(&mut self, t: Tensor) -> Var {
        self.push(Cow::Owned(t), Op::Leaf, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let store = self.store;
        let needs = self.trainable[id.0];
        self.push(Cow::Borrowed(store.get(id)), Op::Param(id), needs)
    }

    /// Convolution with weight `[out, in, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Var {
        let xt = self.value(x);
        let wt = self.value(w);
        let n = xt.n();
        let out_c = wt.n();
        assert_eq!(xt.c(), geom.channels, "conv input channels");
        assert_eq!(xt.hw(), (geom.height, geom.width), "conv input extent");
        assert_eq!(wt.c() * wt.h() * wt.w(), geom.col_rows(), "conv weight shape");
        let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
        let keep_cols = self.needs(w);
        let mut cols_all = if keep_cols { Some(vec![0.0; n * rows * cols_n]) } else { None };
        let mut scratch = vec![0.0; rows * cols_n];
        let mut out = Tensor::zeros([n, out_c, geom.out_h, geom.out_w]);
        for i in 0..n {
            let cols = match &mut cols_all {
                Some(all) => &mut all[i * rows * cols_n..(i + 1) * rows * cols_n],
                None => &mut scratch[..],
            };
            kernels::im2col(xt.sample(i), &geom, cols);
            kernels::gemm(
                Mat::new(wt.data(), out_c, rows),
                Mat::new(cols, rows, cols_n),
                out.sample_mut(i),
                0.0,
            );
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data());
        }
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(
            Cow::Owned(out),
            Op::Conv {
                x,
                w,
                b,
                geom,
                cols: cols_all,
            },
            needs,
        )
    }

    /// Transposed convolution with weight `[in, out, k, k]`.
    ///
    /// `geom` describes the forward convolution that maps the *output* of
    /// this op back to its input, so `geom.out_h/out_w` must equal the
    /// input extent and `geom.height/width` set the output extent.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Var {
        let xt = self.value(x);
        let wt = self.value(w);
        let n = xt.n();
        let in_c = xt.c();
        assert_eq!(wt.n(), in_c, "transposed conv input channels");
        assert_eq!(wt.c(), geom.channels, "transposed conv output channels");
        assert_eq!(xt.hw(), (geom.out_h, geom.out_w), "transposed conv input extent");
        let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
        let mut cols = vec![0.0; rows * cols_n];
        let mut out = Tensor::zeros([n, geom.channels, geom.height, geom.width]);
        for i in 0..n {
            kernels::gemm(
                Mat::new(wt.data(), in_c, rows).t(),
                Mat::new(xt.sample(i), in_c, cols_n),
                &mut cols,
                0.0,
            );
            kernels::col2im(&cols, &geom, out.sample_mut(i));
        }
        if let Some(b) = b {
            add_channel_bias(&mut out, self.value(b).data());
        }
        let needs = self.needs(x) || self.needs(w) || b.is_some_and(|b| self.needs(b));
        self.push(Cow::Owned(out), Op::ConvTranspose { x, w, b, geom }, needs)
    }

    pub fn instance_norm(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let plane = xt.h() * xt.w();
        let mut out = Tensor::zeros(xt.shape());
        let inv_std = kernels::instance_norm(xt.data(), plane, out.data_mut());
        let needs = self.needs(x);
        self.push(Cow::Owned(out), Op::InstanceNorm { x, inv_std }, needs)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f32) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let needs = self.needs(x);
        self.push(Cow::Owned(out), Op::LeakyRelu { x, slope }, needs)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let needs = self.needs(x);
        self.push(Cow::Owned(out), Op::Relu(x), needs)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f32::tanh);
        let needs = self.needs(x);
        self.push(Cow::Owned(out), Op::Tanh(x), needs)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        let needs = self.needs(x);
        self.push(Cow::Owned(out), Op::Sigmoid(x), needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(Cow::Owned(out), Op::Add(a, b), needs)
    }

    /// Channel concatenation.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let at = self.value(a);
        let bt = self.value(b);
        assert_eq!(at.n(), bt.n(), "concat batch");
        assert_eq!(at.hw(), bt.hw(), "concat extent");
        let [n, ca, h, w] = at.shape();
        let cb = bt.c();
        let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
        for i in 0..n {
            data.extend_from_slice(at.sample(i));
            data.extend_from_slice(bt.sample(i));
        }
        let out = Tensor::from_vec([n, ca + cb, h, w], data);
        let needs = self.needs(a) || self.needs(b);
        self.push(Cow::Owned(out), Op::Concat(a, b), needs)
    }

    /// Bilinear resampling with half-pixel centers.
    pub fn resize(&mut self, x: Var, to_h: usize, to_w: usize) -> Var {
        let xt = self.value(x);
        if xt.hw() == (to_h, to_w) {
            return x;
        }
        let out = crate::networks::resize_bilinear(xt, to_h, to_w);
        let ys = Axis::new(xt.h(), to_h);
        let xs = Axis::new(xt.w(), to_w);
        let needs = self.needs(x);
        self.push(Cow::Owned(out), Op::Resize { x, ys, xs }, needs)
    }

    pub fn clamp(&mut self, x: Var, lo: f32, hi: f32) -> Var {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        let needs = self.needs(x);
        self.push(Cow::Owned(out), Op::Clamp { x, lo, hi }, needs)
    }

    /// `[n, c, h, w] -> [n, c, 1, 1]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let [n, c, h, w] = xt.shape();
        let plane = h * w;
        let data = xt
            .data()
            .chunks(plane)
            .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / plane as f64) as f32)
            .collect();
        let out = Tensor::from_vec([n, c, 1, 1], data);
        let needs = self.needs(x);
        self.push(Cow::Owned(out), Op::GlobalAvgPool(x), needs)
    }

    /// `[n, c, 1, 1] -> [n, c, h, w]` by repetition.
    pub fn broadcast(&mut self, x: Var, h: usize, w: usize) -> Var {
        let xt = self.value(x);
        assert_eq!(xt.hw(), (1, 1), "broadcast expects a 1x1 map");
        let [n, c, _, _] = xt.shape();
        let data = xt.data().iter().flat_map(|&v| std::iter::repeat_n(v, h * w)).collect();
        let out = Tensor::from_vec([n, c, h, w], data);
        let needs = self.needs(x);
        self.push(Cow::Owned(out), Op::Broadcast(x), needs)
    }

    /// Scalar node whose value and local gradients were computed elsewhere.
    pub fn custom(&mut self, inputs: Vec<Var>, value: f32, grads: Vec<Tensor>) -> Var {
        assert_eq!(inputs.len(), grads.len());
        for (v, g) in inputs.iter().zip(&grads) {
            assert_eq!(self.value(*v).shape(), g.shape(), "custom gradient shape");
        }
        let needs = inputs.iter().any(|&v| self.needs(v));
        self.push(Cow::Owned(Tensor::scalar(value)), Op::Custom { inputs, grads }, needs)
    }

    /// Mean over every element.
    pub fn mean(&mut self, x: Var) -> Var {
        let xt = self.value(x);
        let n = xt.len();
        let value = xt.mean();
        let grad = Tensor::full(xt.shape(), 1.0 / n as f32);
        self.custom(vec![x], value, vec![grad])
    }

    pub fn weighted_sum(&mut self, terms: &[(Var, f32)]) -> Var {
        let mut total = 0.0f64;
        for &(v, k) in terms {
            assert_eq!(self.value(v).len(), 1, "weighted_sum takes scalars");
            total += k as f64 * self.value(v).data()[0] as f64;
        }
        let needs = terms.iter().any(|&(v, k)| k != 0.0 && self.needs(v));
        self.push(
            Cow::Owned(Tensor::scalar(total as f32)),
            Op::WeightedSum(terms.to_vec()),
            needs,
        )
    }

    pub fn scalar(&self, v: Var) -> f32 {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "not a scalar node");
        t.data()[0]
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut params = ParamGrads::new(self.store.len());
        if self.needs(root) {
            grads[root.0] = Some(Tensor::scalar(1.0));
        }
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(gout) = grads[idx].take() else { continue };
            self.backward_node(node, &gout, &mut grads, &mut params);
            grads[idx] = Some(gout);
        }
        Gradients { nodes: grads, params }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => t.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backward_node(&self, node: &Node<'s>, gout: &Tensor, grads: &mut [Option<Tensor>], params: &mut ParamGrads) {
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => params.accumulate(*id, gout, 1.0),
            Op::Conv { x, w, b, geom, cols } => {
                let xt = self.value(*x);
                let wt = self.value(*w);
                let n = xt.n();
                let out_c = wt.n();
                let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
                if self.needs(*w) {
                    let cols = cols.as_ref().expect("conv columns retained for weight gradient");
                    let mut gw = Tensor::zeros(wt.shape());
                    for i in 0..n {
                        kernels::gemm(
                            Mat::new(gout.sample(i), out_c, cols_n),
                            Mat::new(&cols[i * rows * cols_n..(i + 1) * rows * cols_n], rows, cols_n).t(),
                            gw.data_mut(),
                            1.0,
                        );
                    }
                    self.accumulate(grads, *w, gw);
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        self.accumulate(grads, *b, channel_sums(gout));
                    }
                }
                if self.needs(*x) {
                    let mut gx = Tensor::zeros(xt.shape());
                    let mut dcols = vec![0.0; rows * cols_n];
                    for i in 0..n {
                        kernels::gemm(
                            Mat::new(wt.data(), out_c, rows).t(),
                            Mat::new(gout.sample(i), out_c, cols_n),
                            &mut dcols,
                            0.0,
                        );
                        kernels::col2im(&dcols, geom, gx.sample_mut(i));
                    }
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::ConvTranspose { x, w, b, geom } => {
                let xt = self.value(*x);
                let wt = self.value(*w);
                let n = xt.n();
                let in_c = xt.c();
                let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
                let mut dcols = vec![0.0; n * rows * cols_n];
                for i in 0..n {
                    kernels::im2col(gout.sample(i), geom, &mut dcols[i * rows * cols_n..(i + 1) * rows * cols_n]);
                }
                if self.needs(*w) {
                    let mut gw = Tensor::zeros(wt.shape());
                    for i in 0..n {
                        kernels::gemm(
                            Mat::new(xt.sample(i), in_c, cols_n),
                            Mat::new(&dcols[i * rows * cols_n..(i + 1) * rows * cols_n], rows, cols_n).t(),
                            gw.data_mut(),
                            1.0,
                        );
                    }
                    self.accumulate(grads, *w, gw);
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        self.accumulate(grads, *b, channel_sums(gout));
                    }
                }
                if self.needs(*x) {
                    let mut gx = Tensor::zeros(xt.shape());
                    for i in 0..n {
                        kernels::gemm(
                            Mat::new(wt.data(), in_c, rows),
                            Mat::new(&dcols[i * rows * cols_n..(i + 1) * rows * cols_n], rows, cols_n),
                            gx.sample_mut(i),
                            0.0,
                        );
                    }
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::InstanceNorm { x, inv_std } => {
                let y = &node.value;
                let plane = y.h() * y.w();
                let mut gx = Tensor::zeros(y.shape());
                kernels::instance_norm_backward(y.data(), gout.data(), inv_std, plane, gx.data_mut());
                self.accumulate(grads, *x, gx);
            }
            Op::LeakyRelu { x, slope } => {
                let xt = self.value(*x);
                let g = zip_map(xt, gout, |v, g| if v > 0.0 { g } else { slope * g });
                self.accumulate(grads, *x, g);
            }
            Op::Relu(x) => {
                let g = zip_map(self.value(*x), gout, |v, g| if v > 0.0 { g } else { 0.0 });
                self.accumulate(grads, *x, g);
            }
            Op::Tanh(x) => {
                let g = zip_map(&node.value, gout, |y, g| g * (1.0 - y * y));
                self.accumulate(grads, *x, g);
            }
            Op::Sigmoid(x) => {
                let g = zip_map(&node.value, gout, |y, g| g * y * (1.0 - y));
                self.accumulate(grads, *x, g);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, gout.clone());
                self.accumulate(grads, *b, gout.clone());
            }
            Op::Concat(a, b) => {
                let [n, _, h, w] = gout.shape();
                let ca = self.value(*a).c();
                let cb = self.value(*b).c();
                let split = ca * h * w;
                if self.needs(*a) {
                    let data = (0..n).flat_map(|i| gout.sample(i)[..split].to_vec()).collect();
                    self.accumulate(grads, *a, Tensor::from_vec([n, ca, h, w], data));
                }
                if self.needs(*b) {
                    let data = (0..n).flat_map(|i| gout.sample(i)[split..].to_vec()).collect();
                    self.accumulate(grads, *b, Tensor::from_vec([n, cb, h, w], data));
                }
            }
            Op::Resize { x, ys, xs } => {
                let xt = self.value(*x);
                let [n, c, h, w] = xt.shape();
                let (oh, ow) = gout.hw();
                let mut gx = Tensor::zeros(xt.shape());
                for p in 0..n * c {
                    kernels::resize_plane_backward(
                        &gout.data()[p * oh * ow..(p + 1) * oh * ow],
                        w,
                        ys,
                        xs,
                        &mut gx.data_mut()[p * h * w..(p + 1) * h * w],
                    );
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Clamp { x, lo, hi } => {
                let g = zip_map(self.value(*x), gout, |v, g| if v >= *lo && v <= *hi { g } else { 0.0 });
                self.accumulate(grads, *x, g);
            }
            Op::GlobalAvgPool(x) => {
                let xt = self.value(*x);
                let plane = xt.h() * xt.w();
                let data = gout
                    .data()
                    .iter()
                    .flat_map(|&g| std::iter::repeat_n(g / plane as f32, plane))
                    .collect();
                self.accumulate(grads, *x, Tensor::from_vec(xt.shape(), data));
            }
            Op::Broadcast(x) => {
                let plane = gout.h() * gout.w();
                let data = gout.data().chunks(plane).map(|p| p.iter().sum::<f32>()).collect();
                self.accumulate(grads, *x, Tensor::from_vec(self.value(*x).shape(), data));
            }
            Op::Custom { inputs, grads: local } => {
                let up = gout.data()[0];
                for (v, g) in inputs.iter().zip(local) {
                    if self.needs(*v) {
                        self.accumulate(grads, *v, g.map(|e| e * up));
                    }
                }
            }
            Op::WeightedSum(terms) => {
                let up = gout.data()[0];
                for &(v, k) in terms {
                    if k != 0.0 {
                        self.accumulate(grads, v, Tensor::scalar(up * k));
                    }
                }
            }
        }
    }
}

fn add_channel_bias(out: &mut Tensor, bias: &[f32]) {
    let [n, c, h, w] = out.shape();
    let plane = h * w;
    let data = out.data_mut();
    for i in 0..n {
        for (ch, &bv) in bias.iter().enumerate().take(c) {
            let start = (i * c + ch) * plane;
            data[start..start + plane].iter_mut().for_each(|v| *v += bv);
        }
    }
}

fn channel_sums(g: &Tensor) -> Tensor {
    let [n, c, h, w] = g.shape();
    let plane = h * w;
    let mut out = vec![0.0f32; c];
    for i in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            let start = (i * c + ch) * plane;
            *o += g.data()[start..start + plane].iter().sum::<f32>();
        }
    }
    Tensor::from_vec([1, 1, 1, c], out)
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f32, f32) -> f32) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{stream_rng, Init};

    /// Central-difference check of d(sum(out * probe))/d(param) for a small graph builder.
    fn check_param_grad(build: impl Fn(&mut Graph<'_>, Var) -> Var, input: Tensor, shapes: &[[usize; 4]]) {
        let mut rng = stream_rng(11, "gradcheck");
        let mut store = ParamStore::new();
        let ids: Vec<ParamId> = shapes
            .iter()
            .enumerate()
            .map(|(i, &s)| store.add(format!("p{i}"), s, Init::Normal(0.5), &mut rng))
            .collect();
        let eval = |store: &ParamStore, x: &Tensor| -> (f64, Gradients) {
            let mut g = Graph::new(store, &ids);
            let xv = g.input_with_grad(x.clone());
            let out = build(&mut g, xv);
            let probe: Tensor = {
                let t = g.value(out);
                let d = (0..t.len()).map(|i| ((i * 37 % 17) as f32 - 8.0) / 8.0).collect();
                Tensor::from_vec(t.shape(), d)
            };
            let val: f64 = g.value(out).data().iter().zip(probe.data()).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
            let loss = g.custom(vec![out], val as f32, vec![probe]);
            let grads = g.backward(loss);
            (val, grads)
        };
        let (_, grads) = eval(&store, &input);
        let h = 1e-2f32;
        for &id in &ids {
            let analytic = grads.params.get(id).expect("param gradient").clone();
            for i in (0..store.get(id).len()).step_by(7) {
                let mut plus = store.clone();
                plus.get_mut(id).data_mut()[i] += h;
                let mut minus = store.clone();
                minus.get_mut(id).data_mut()[i] -= h;
                let fd = (eval(&plus, &input).0 - eval(&minus, &input).0) / (2.0 * h as f64);
                let an = analytic.data()[i] as f64;
                assert!((fd - an).abs() <= 2e-2 * fd.abs().max(1.0), "param {id:?}[{i}]: fd {fd} analytic {an}");
            }
        }
        // input gradient
        let gx = grads.wrt(Var(0)).expect("input gradient").clone();
        for i in (0..input.len()).step_by(5) {
            let mut plus = input.clone();
            plus.data_mut()[i] += h;
            let mut minus = input.clone();
            minus.data_mut()[i] -= h;
            let fd = (eval(&store, &plus).0 - eval(&store, &minus).0) / (2.0 * h as f64);
            let an = gx.data()[i] as f64;
            assert!((fd - an).abs() <= 2e-2 * fd.abs().max(1.0), "input[{i}]: fd {fd} analytic {an}");
        }
    }

    fn smooth_input(shape: [usize; 4]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|i| ((i as f32) * 0.731).sin()).collect())
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        check_param_grad(
            |g, x| {
                let w = g.param(ParamId(0));
                let b = g.param(ParamId(1));
                g.conv2d(x, w, Some(b), ConvGeom::ceil_mode(2, 5, 5, 4, 2, 1, 1))
            },
            smooth_input([2, 2, 5, 5]),
            &[[3, 2, 4, 4], [1, 1, 1, 3]],
        );
    }

    #[test]
    fn dilated_conv_gradients_match_finite_differences() {
        check_param_grad(
            |g, x| {
                let w = g.param(ParamId(0));
                g.conv2d(x, w, None, ConvGeom::ceil_mode(2, 6, 6, 3, 1, 2, 2))
            },
            smooth_input([1, 2, 6, 6]),
            &[[2, 2, 3, 3]],
        );
    }

    #[test]
    fn transposed_conv_gradients_match_finite_differences() {
        // output 7x5 from a 4x3 input (cropped from 8x6)
        check_param_grad(
            |g, x| {
                let w = g.param(ParamId(0));
                let b = g.param(ParamId(1));
                g.conv_transpose2d(x, w, Some(b), ConvGeom::ceil_mode(3, 7, 5, 4, 2, 1, 1))
            },
            smooth_input([2, 2, 4, 3]),
            &[[2, 3, 4, 4], [1, 1, 1, 3]],
        );
    }

    #[test]
    fn norm_activation_resize_chain_gradients() {
        check_param_grad(
            |g, x| {
                let w = g.param(ParamId(0));
                let y = g.conv2d(x, w, None, ConvGeom::ceil_mode(2, 6, 6, 3, 1, 1, 1));
                let y = g.instance_norm(y);
                let y = g.tanh(y);
                let z = g.resize(y, 4, 9);
                let z = g.sigmoid(z);
                let p = g.global_avg_pool(z);
                let p = g.broadcast(p, 4, 9);
                let s = g.add(z, p);
                g.concat(s, z)
            },
            smooth_input([2, 2, 6, 6]),
            &[[3, 2, 3, 3]],
        );
    }

    #[test]
    fn frozen_parameters_get_no_gradient_but_pass_it_through() {
        let mut rng = stream_rng(2, "t");
        let mut store = ParamStore::new();
        let w = store.add("w", [1, 1, 3, 3], Init::Normal(1.0), &mut rng);
        let mut g = Graph::new(&store, &[]);
        let x = g.input_with_grad(smooth_input([1, 1, 4, 4]));
        let wv = g.param(w);
        let y = g.conv2d(x, wv, None, ConvGeom::ceil_mode(1, 4, 4, 3, 1, 1, 1));
        let l = g.mean(y);
        let grads = g.backward(l);
        assert!(grads.params.get(w).is_none());
        assert!(grads.wrt(x).is_some());
    }
}
