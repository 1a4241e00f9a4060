//! Dense `f32` tensors in NCHW layout.

use std::fmt;

/// Four-dimensional shape `[batch, channels, height, width]`.
pub type Shape = [usize; 4];

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)
    }
}

pub fn numel(shape: Shape) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        Tensor {
            shape,
            data: vec![value; numel(shape)],
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self::full([1, 1, 1, 1], value)
    }

    /// Panics when `data.len()` does not match the shape.
    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Self {
        assert_eq!(numel(shape), data.len(), "tensor data does not match shape {shape:?}");
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
    }

    pub fn hw(&self) -> (usize, usize) {
        (self.shape[2], self.shape[3])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Elements per batch item.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f32] {
        let len = self.sample_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    /// Copy of batch item `i` as a batch of one.
    pub fn select(&self, i: usize) -> Tensor {
        let [_, c, h, w] = self.shape;
        Tensor::from_vec([1, c, h, w], self.sample(i).to_vec())
    }

    /// Concatenate along the batch axis. All parts must share `[c, h, w]`.
    pub fn stack(parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "cannot stack zero tensors");
        let [_, c, h, w] = parts[0].shape;
        let mut data = Vec::with_capacity(parts.iter().map(Tensor::len).sum());
        let mut n = 0;
        for p in parts {
            assert_eq!(&p.shape[1..], &[c, h, w], "stack shape mismatch");
            data.extend_from_slice(&p.data);
            n += p.shape[0];
        }
        Tensor::from_vec([n, c, h, w], data)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scaled_add_assign(&mut self, other: &Tensor, k: f32) {
        assert_eq!(self.shape, other.shape, "scaled_add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    pub fn mean(&self) -> f32 {
        (self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64) as f32
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// Per-channel means over batch and space.
    pub fn channel_means(&self) -> Vec<f64> {
        let [n, c, h, w] = self.shape;
        let plane = h * w;
        (0..c)
            .map(|ch| {
                let mut acc = 0.0f64;
                for b in 0..n {
                    let start = (b * c + ch) * plane;
                    acc += self.data[start..start + plane].iter().map(|&v| v as f64).sum::<f64>();
                }
                acc / (n * plane) as f64
            })
            .collect()
    }
}
