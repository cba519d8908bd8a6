use rand::Rng;

use crate::error::{Error, Result};

/// Dense `N×C×H×W` array of `f32`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: [usize; 4],
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: [usize; 4], data: Vec<f32>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::contract(format!("tensor dims must be positive, got {dims:?}")));
        }
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::contract(format!(
                "tensor dims {dims:?} need {} values, got {}",
                dims.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn filled(dims: [usize; 4], value: f32) -> Result<Self> {
        Self::new(dims, vec![value; dims.iter().product()])
    }

    pub fn zeros(dims: [usize; 4]) -> Result<Self> {
        Self::filled(dims, 0.0)
    }

    /// Uniform values in `[lo, hi)`.
    pub fn random<R: Rng + ?Sized>(dims: [usize; 4], lo: f32, hi: f32, rng: &mut R) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, (0..n).map(|_| rng.random_range(lo..hi)).collect())
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn n(&self) -> usize {
        self.dims[0]
    }

    pub fn c(&self) -> usize {
        self.dims[1]
    }

    pub fn h(&self) -> usize {
        self.dims[2]
    }

    pub fn w(&self) -> usize {
        self.dims[3]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.dims[1] + c) * self.dims[2] + y) * self.dims[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f32) {
        let i = self.offset(n, c, y, x);
        self.data[i] = v;
    }

    /// One `H×W` plane.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let hw = self.dims[2] * self.dims[3];
        let start = (n * self.dims[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let hw = self.dims[2] * self.dims[3];
        let start = (n * self.dims[1] + c) * hw;
        &mut self.data[start..start + hw]
    }

    /// Concatenates along the channel axis, in argument order.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let [n, _, h, w] = first.dims;
        if let Some(bad) = parts.iter().find(|t| t.n() != n || t.h() != h || t.w() != w) {
            return Err(Error::contract(format!(
                "concat mismatch: {:?} vs {:?}",
                first.dims, bad.dims
            )));
        }
        let c_total: usize = parts.iter().map(|t| t.c()).sum();
        let mut data = Vec::with_capacity(n * c_total * h * w);
        for b in 0..n {
            for t in parts {
                let hw = h * w;
                let start = b * t.c() * hw;
                data.extend_from_slice(&t.data[start..start + t.c() * hw]);
            }
        }
        Tensor::new([n, c_total, h, w], data)
    }

    /// Channels `[start, start + len)`.
    pub fn channel_slice(&self, start: usize, len: usize) -> Result<Tensor> {
        if len == 0 || start + len > self.c() {
            return Err(Error::contract(format!(
                "channel slice {start}..{} out of range for {} channels",
                start + len,
                self.c()
            )));
        }
        let hw = self.h() * self.w();
        let mut data = Vec::with_capacity(self.n() * len * hw);
        for b in 0..self.n() {
            let from = (b * self.c() + start) * hw;
            data.extend_from_slice(&self.data[from..from + len * hw]);
        }
        Tensor::new([self.n(), len, self.h(), self.w()], data)
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0` and comparing NaNs by payload.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.dims == other.dims
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
