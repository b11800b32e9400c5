//! Dense N-dimensional `f64` tensor, row-major, the value carrier for
//! images, features, and gradients.
//!
//! All operations are pure: inputs are never mutated and every call returns
//! a fresh tensor (or an error). 64-bit floats are used throughout so that
//! finite-difference gradient checks resolve cleanly.

use std::io::{Read, Write};

use crate::error::{Error, Result};

/// Binary op kinds for [`Tensor::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build from explicit shape and data. Checks `product(shape) == data.len()`.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::invalid(format!(
                "shape {:?} expects {} elements, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn ones_like(other: &Tensor) -> Self {
        Tensor::filled(&other.shape, 1.0)
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Tensor::zeros(&other.shape)
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor {
            shape: vec![n],
            data,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Reinterpret the buffer under a new shape of equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        Tensor::new(shape.to_vec(), self.data.clone())
    }

    /// Row-major 2D accessor. Callers must know the tensor is 2D.
    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[i * self.shape[1] + j] = v;
    }

    /// Error if any element is NaN or infinite.
    pub fn validate_finite(&self, context: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(context))
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    /// Elementwise binary op with trailing-dimension broadcasting.
    ///
    /// Shapes are aligned from the right; each aligned pair must be equal or
    /// one of them 1 (missing leading dims act as 1). Division by zero is an
    /// error rather than an Inf.
    pub fn elementwise(op: BinOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let out_shape = broadcast_shape(&a.shape, &b.shape).ok_or(Error::ShapeMismatch {
            op: "elementwise",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        })?;
        if op == BinOp::Div && b.data.iter().any(|&v| v == 0.0) {
            return Err(Error::DivisionByZero);
        }
        let rank = out_shape.len();
        let a_strides = broadcast_strides(&a.shape, rank);
        let b_strides = broadcast_strides(&b.shape, rank);
        let n: usize = out_shape.iter().product();
        let mut data = vec![0.0; n];
        let mut idx = vec![0usize; rank];
        for (flat, slot) in data.iter_mut().enumerate() {
            // Decompose flat index into multi-index (row-major).
            let mut rem = flat;
            for d in (0..rank).rev() {
                idx[d] = rem % out_shape[d];
                rem /= out_shape[d];
            }
            let mut ai = 0;
            let mut bi = 0;
            for d in 0..rank {
                ai += idx[d] * a_strides[d];
                bi += idx[d] * b_strides[d];
            }
            let (x, y) = (a.data[ai], b.data[bi]);
            *slot = match op {
                BinOp::Add => x + y,
                BinOp::Sub => x - y,
                BinOp::Mul => x * y,
                BinOp::Div => x / y,
                BinOp::Max => x.max(y),
            };
        }
        Ok(Tensor {
            shape: out_shape,
            data,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        Tensor::elementwise(BinOp::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        Tensor::elementwise(BinOp::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        Tensor::elementwise(BinOp::Mul, self, other)
    }

    /// Matrix product of an m-by-k and a k-by-n tensor.
    pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a.shape.clone(),
                rhs: b.shape.clone(),
            });
        }
        let (m, k) = (a.shape[0], a.shape[1]);
        let n = b.shape[1];
        let mut out = vec![0.0; m * n];
        // ikj ordering keeps the inner loop contiguous over b and out.
        for i in 0..m {
            let arow = &a.data[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &av) in arow.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let brow = &b.data[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                    *o += av * bv;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// 2D convolution (cross-correlation) of an N-by-C-by-H-by-W input with an
    /// F-by-C-by-kh-by-kw kernel, zero padding, square stride.
    pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        if input.shape.len() != 4 || kernel.shape.len() != 4 {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: input.shape.clone(),
                rhs: kernel.shape.clone(),
            });
        }
        let (n, c, h, w) = (input.shape[0], input.shape[1], input.shape[2], input.shape[3]);
        let (f, kc, kh, kw) = (kernel.shape[0], kernel.shape[1], kernel.shape[2], kernel.shape[3]);
        if kc != c {
            return Err(Error::ShapeMismatch {
                op: "conv2d channels",
                lhs: input.shape.clone(),
                rhs: kernel.shape.clone(),
            });
        }
        if stride == 0 || kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(Error::invalid(format!(
                "conv2d geometry: input {}x{}, kernel {}x{}, stride {}, padding {}",
                h, w, kh, kw, stride, padding
            )));
        }
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        let mut out = vec![0.0; n * f * oh * ow];
        for b in 0..n {
            for of in 0..f {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ic in 0..c {
                            let in_base = ((b * c + ic) * h) * w;
                            let k_base = ((of * c + ic) * kh) * kw;
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let irow = in_base + iy as usize * w;
                                let krow = k_base + ky * kw;
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx) as isize - padding as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc += input.data[irow + ix as usize]
                                        * kernel.data[krow + kx];
                                }
                            }
                        }
                        out[((b * f + of) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        Ok(Tensor {
            shape: vec![n, f, oh, ow],
            data: out,
        })
    }

    /// Normalized 2D Gaussian kernel of standard deviation `theta` and
    /// half-width `radius`: a (2r+1)-square tensor with values proportional
    /// to exp(-(dx^2+dy^2)/(2 theta^2)), scaled to sum to 1.
    pub fn gaussian_kernel2d(theta: f64, radius: usize) -> Result<Tensor> {
        if theta <= 0.0 {
            return Err(Error::invalid(format!("gaussian theta must be > 0, got {theta}")));
        }
        if radius == 0 {
            return Err(Error::invalid("gaussian radius must be >= 1"));
        }
        let side = 2 * radius + 1;
        let mut data = vec![0.0; side * side];
        let mut total = 0.0;
        for y in 0..side {
            let dy = y as f64 - radius as f64;
            for x in 0..side {
                let dx = x as f64 - radius as f64;
                let v = (-(dx * dx + dy * dy) / (2.0 * theta * theta)).exp();
                data[y * side + x] = v;
                total += v;
            }
        }
        for v in &mut data {
            *v /= total;
        }
        Ok(Tensor {
            shape: vec![side, side],
            data,
        })
    }

    /// Serialize as a little-endian blob: u32 rank, rank u64 dims, f64 payload.
    pub fn write_blob(&self, out: &mut impl Write) -> Result<()> {
        out.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &self.data {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_blob(input: &mut impl Read) -> Result<Tensor> {
        let mut b4 = [0u8; 4];
        input.read_exact(&mut b4)?;
        let rank = u32::from_le_bytes(b4) as usize;
        if rank > 8 {
            return Err(Error::Checkpoint(format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut b8 = [0u8; 8];
        for _ in 0..rank {
            input.read_exact(&mut b8)?;
            shape.push(u64::from_le_bytes(b8) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            input.read_exact(&mut b8)?;
            data.push(f64::from_le_bytes(b8));
        }
        Tensor::new(shape, data)
    }
}

/// Trailing-dimension broadcast shape, or None if incompatible.
fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for d in 0..rank {
        // d counts dimensions from the right; missing leading dims act as 1.
        let av = if d < a.len() { a[a.len() - 1 - d] } else { 1 };
        let bv = if d < b.len() { b[b.len() - 1 - d] } else { 1 };
        out[rank - 1 - d] = if av == bv {
            av
        } else if av == 1 {
            bv
        } else if bv == 1 {
            av
        } else {
            return None;
        };
    }
    Some(out)
}

/// Strides of `shape` broadcast up to `rank` dims (0 stride on broadcast axes).
fn broadcast_strides(shape: &[usize], rank: usize) -> Vec<usize> {
    let mut strides = vec![0usize; rank];
    let pad = rank - shape.len();
    // Row-major strides of the original shape.
    let mut own = vec![0usize; shape.len()];
    let mut acc = 1usize;
    for d in (0..shape.len()).rev() {
        own[d] = acc;
        acc *= shape[d];
    }
    for d in 0..shape.len() {
        strides[pad + d] = if shape[d] == 1 { 0 } else { own[d] };
    }
    strides
}
