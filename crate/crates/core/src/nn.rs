//! Layer primitives with hand-derived backward passes.
//!
//! Every forward here has a matching backward verified against central
//! finite differences. There is no autograd graph; callers thread the saved
//! activations through explicitly.

use crate::error::{Error, Result};
use crate::params::ModelParams;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// y = x W^T + b for x: N-by-I, w: O-by-I, b: O.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (xs, ws) = (x.shape(), w.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || b.shape() != [ws[0]] {
        return Err(Error::ShapeMismatch {
            op: "linear",
            lhs: xs.to_vec(),
            rhs: ws.to_vec(),
        });
    }
    let (n, i, o) = (xs[0], xs[1], ws[0]);
    let mut out = vec![0.0; n * o];
    for r in 0..n {
        let xr = &x.data()[r * i..(r + 1) * i];
        for c in 0..o {
            let wr = &w.data()[c * i..(c + 1) * i];
            let mut acc = b.data()[c];
            for (xv, wv) in xr.iter().zip(wr.iter()) {
                acc += xv * wv;
            }
            out[r * o + c] = acc;
        }
    }
    Tensor::new(vec![n, o], out)
}

/// Gradients of the linear layer: returns (dx, dw, db).
pub fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, i) = (x.shape()[0], x.shape()[1]);
    let o = w.shape()[0];
    if dy.shape() != [n, o] {
        return Err(Error::ShapeMismatch {
            op: "linear backward",
            lhs: dy.shape().to_vec(),
            rhs: vec![n, o],
        });
    }
    let mut dx = vec![0.0; n * i];
    let mut dw = vec![0.0; o * i];
    let mut db = vec![0.0; o];
    for r in 0..n {
        let xr = &x.data()[r * i..(r + 1) * i];
        let dxr = &mut dx[r * i..(r + 1) * i];
        for c in 0..o {
            let g = dy.data()[r * o + c];
            if g == 0.0 {
                continue;
            }
            db[c] += g;
            let wr = &w.data()[c * i..(c + 1) * i];
            let dwr = &mut dw[c * i..(c + 1) * i];
            for j in 0..i {
                dxr[j] += g * wr[j];
                dwr[j] += g * xr[j];
            }
        }
    }
    Ok((
        Tensor::new(vec![n, i], dx)?,
        Tensor::new(vec![o, i], dw)?,
        Tensor::new(vec![o], db)?,
    ))
}

/// Convolution with a per-output-channel bias.
pub fn conv_forward(
    x: &Tensor,
    w: &Tensor,
    b: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let mut y = Tensor::conv2d(x, w, stride, padding)?;
    let shape = y.shape().to_vec();
    let (n, f, oh, ow) = (shape[0], shape[1], shape[2], shape[3]);
    if b.shape() != [f] {
        return Err(Error::ShapeMismatch {
            op: "conv bias",
            lhs: b.shape().to_vec(),
            rhs: vec![f],
        });
    }
    let data = y.data_mut();
    for bi in 0..n {
        for fi in 0..f {
            let bias = b.data()[fi];
            let base = (bi * f + fi) * oh * ow;
            for v in &mut data[base..base + oh * ow] {
                *v += bias;
            }
        }
    }
    Ok(y)
}

/// Gradients of the biased convolution: returns (dx, dw, db).
pub fn conv_backward(
    x: &Tensor,
    w: &Tensor,
    stride: usize,
    padding: usize,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, h, wid) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (f, _, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let (oh, ow) = (dy.shape()[2], dy.shape()[3]);
    let mut dx = vec![0.0; n * c * h * wid];
    let mut dw = vec![0.0; f * c * kh * kw];
    let mut db = vec![0.0; f];
    for bi in 0..n {
        for fi in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = dy.data()[((bi * f + fi) * oh + oy) * ow + ox];
                    if g == 0.0 {
                        continue;
                    }
                    db[fi] += g;
                    for ci in 0..c {
                        let xin = (bi * c + ci) * h * wid;
                        let kin = (fi * c + ci) * kh * kw;
                        for ky in 0..kh {
                            let iy = (oy * stride + ky) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = xin + iy as usize * wid;
                            let krow = kin + ky * kw;
                            for kx in 0..kw {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if ix < 0 || ix >= wid as isize {
                                    continue;
                                }
                                dw[krow + kx] += g * x.data()[xrow + ix as usize];
                                dx[xrow + ix as usize] += g * w.data()[krow + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(w.shape().to_vec(), dw)?,
        Tensor::new(vec![f], db)?,
    ))
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&xv, &g)| if xv > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("relu shapes agree")
}

/// Non-overlapping 2D max pooling with ceil semantics: partial edge windows
/// take the max over whatever cells remain. Returns the pooled tensor and the
/// flat input index of each window's argmax (first index wins ties).
pub fn maxpool2d_forward(x: &Tensor, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    if x.shape().len() != 4 || stride == 0 {
        return Err(Error::invalid("maxpool2d expects NCHW input and stride >= 1"));
    }
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let oh = h.div_ceil(stride);
    let ow = w.div_ceil(stride);
    let mut out = vec![0.0; n * c * oh * ow];
    let mut argmax = vec![0usize; n * c * oh * ow];
    for bi in 0..n {
        for ci in 0..c {
            let base = (bi * c + ci) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    for iy in oy * stride..((oy + 1) * stride).min(h) {
                        for ix in ox * stride..((ox + 1) * stride).min(w) {
                            let idx = base + iy * w + ix;
                            if x.data()[idx] > best {
                                best = x.data()[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let o = ((bi * c + ci) * oh + oy) * ow + ox;
                    out[o] = best;
                    argmax[o] = best_idx;
                }
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, argmax))
}

pub fn maxpool2d_backward(in_shape: &[usize], argmax: &[usize], dy: &Tensor) -> Result<Tensor> {
    let mut dx = Tensor::zeros(in_shape);
    for (g, &idx) in dy.data().iter().zip(argmax) {
        dx.data_mut()[idx] += g;
    }
    Ok(dx)
}

/// Non-overlapping 1D max pooling over the feature axis of an N-by-D tensor,
/// output width ceil(D / stride). Ties route to the first (lowest) index.
pub fn maxpool1d_forward(x: &Tensor, stride: usize) -> Result<(Tensor, Vec<usize>)> {
    if x.shape().len() != 2 || stride == 0 {
        return Err(Error::invalid("maxpool1d expects 2-D input and stride >= 1"));
    }
    let (n, d) = (x.shape()[0], x.shape()[1]);
    if d == 0 {
        return Err(Error::EmptyInput("maxpool1d"));
    }
    let od = d.div_ceil(stride);
    let mut out = vec![0.0; n * od];
    let mut argmax = vec![0usize; n * od];
    for r in 0..n {
        for o in 0..od {
            let lo = o * stride;
            let hi = ((o + 1) * stride).min(d);
            let mut best = f64::NEG_INFINITY;
            let mut best_idx = 0;
            for j in lo..hi {
                let idx = r * d + j;
                if x.data()[idx] > best {
                    best = x.data()[idx];
                    best_idx = idx;
                }
            }
            out[r * od + o] = best;
            argmax[r * od + o] = best_idx;
        }
    }
    Ok((Tensor::new(vec![n, od], out)?, argmax))
}

pub fn maxpool1d_backward(in_shape: &[usize], argmax: &[usize], dy: &Tensor) -> Result<Tensor> {
    let mut dx = Tensor::zeros(in_shape);
    for (g, &idx) in dy.data().iter().zip(argmax) {
        dx.data_mut()[idx] += g;
    }
    Ok(dx)
}

/// Global average pool: NCHW -> N-by-C.
pub fn gap_forward(x: &Tensor) -> Result<Tensor> {
    if x.shape().len() != 4 {
        return Err(Error::invalid("gap expects NCHW input"));
    }
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let area = (h * w) as f64;
    let mut out = vec![0.0; n * c];
    for bi in 0..n {
        for ci in 0..c {
            let base = (bi * c + ci) * h * w;
            out[bi * c + ci] = x.data()[base..base + h * w].iter().sum::<f64>() / area;
        }
    }
    Tensor::new(vec![n, c], out)
}

pub fn gap_backward(in_shape: &[usize], dy: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
    let area = (h * w) as f64;
    let mut dx = vec![0.0; n * c * h * w];
    for bi in 0..n {
        for ci in 0..c {
            let g = dy.data()[bi * c + ci] / area;
            let base = (bi * c + ci) * h * w;
            for v in &mut dx[base..base + h * w] {
                *v = g;
            }
        }
    }
    Tensor::new(in_shape.to_vec(), dx)
}

/// Numerically stable row softmax of an N-by-C logit matrix.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    if logits.shape().len() != 2 {
        return Err(Error::invalid("softmax expects 2-D logits"));
    }
    let (n, c) = (logits.shape()[0], logits.shape()[1]);
    let mut out = vec![0.0; n * c];
    for r in 0..n {
        let row = &logits.data()[r * c..(r + 1) * c];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = (v - max).exp();
            out[r * c + j] = e;
            total += e;
        }
        for v in &mut out[r * c..(r + 1) * c] {
            *v /= total;
        }
    }
    Tensor::new(vec![n, c], out)
}

/// He initialization: entries named `*.weight` draw from
/// Normal(0, sqrt(2 / fan_in)) with fan_in the product of all non-leading
/// dims; `*.bias` entries are set to zero. Draws consume the rng in
/// registration order, so the same seed always produces the same model.
pub fn he_init(params: &mut ModelParams, rng: &mut Rng) -> Result<()> {
    for e in params.entries_mut() {
        if e.name.ends_with(".bias") {
            e.value = Tensor::zeros(e.value.shape());
        } else {
            let shape = e.value.shape().to_vec();
            if shape.len() < 2 {
                return Err(Error::invalid(format!(
                    "weight {} must have rank >= 2, got {:?}",
                    e.name, shape
                )));
            }
            let fan_in: usize = shape[1..].iter().product();
            let std = (2.0 / fan_in as f64).sqrt();
            for v in e.value.data_mut() {
                *v = rng.normal(0.0, std);
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random(rng: &mut Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    /// Central finite difference of a scalar function at one coordinate.
    fn central_diff(f: &mut dyn FnMut(&Tensor) -> f64, x: &Tensor, i: usize, eps: f64) -> f64 {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        (f(&plus) - f(&minus)) / (2.0 * eps)
    }

    fn assert_grad_close(analytic: f64, numeric: f64) {
        let tol = 1e-4 * analytic.abs().max(numeric.abs()).max(1e-2);
        assert!(
            (analytic - numeric).abs() <= tol,
            "analytic {analytic} vs numeric {numeric}"
        );
    }

    #[test]
    fn linear_matches_finite_differences() {
        let mut rng = Rng::new(21);
        let x = random(&mut rng, &[3, 4]);
        let w = random(&mut rng, &[2, 4]);
        let b = random(&mut rng, &[2]);
        let dy = random(&mut rng, &[3, 2]);
        // Scalar objective: <y, dy>.
        let (dx, dw, db) = linear_backward(&x, &w, &dy).unwrap();
        let mut f_x = |t: &Tensor| {
            linear_forward(t, &w, &b)
                .unwrap()
                .mul(&dy)
                .unwrap()
                .sum()
        };
        for i in 0..x.len() {
            assert_grad_close(dx.data()[i], central_diff(&mut f_x, &x, i, 1e-5));
        }
        let mut f_w = |t: &Tensor| {
            linear_forward(&x, t, &b)
                .unwrap()
                .mul(&dy)
                .unwrap()
                .sum()
        };
        for i in 0..w.len() {
            assert_grad_close(dw.data()[i], central_diff(&mut f_w, &w, i, 1e-5));
        }
        let mut f_b = |t: &Tensor| {
            linear_forward(&x, &w, t)
                .unwrap()
                .mul(&dy)
                .unwrap()
                .sum()
        };
        for i in 0..b.len() {
            assert_grad_close(db.data()[i], central_diff(&mut f_b, &b, i, 1e-5));
        }
    }

    #[test]
    fn conv_matches_finite_differences() {
        let mut rng = Rng::new(22);
        let x = random(&mut rng, &[2, 2, 5, 5]);
        let w = random(&mut rng, &[3, 2, 3, 3]);
        let b = random(&mut rng, &[3]);
        let y = conv_forward(&x, &w, &b, 1, 1).unwrap();
        let dy = random(&mut rng, &[2, 3, 5, 5]);
        assert_eq!(y.shape(), dy.shape());
        let (dx, dw, db) = conv_backward(&x, &w, 1, 1, &dy).unwrap();
        let mut f_x =
            |t: &Tensor| conv_forward(t, &w, &b, 1, 1).unwrap().mul(&dy).unwrap().sum();
        for i in (0..x.len()).step_by(7) {
            assert_grad_close(dx.data()[i], central_diff(&mut f_x, &x, i, 1e-5));
        }
        let mut f_w =
            |t: &Tensor| conv_forward(&x, t, &b, 1, 1).unwrap().mul(&dy).unwrap().sum();
        for i in 0..w.len() {
            assert_grad_close(dw.data()[i], central_diff(&mut f_w, &w, i, 1e-5));
        }
        let mut f_b =
            |t: &Tensor| conv_forward(&x, &w, t, 1, 1).unwrap().mul(&dy).unwrap().sum();
        for i in 0..b.len() {
            assert_grad_close(db.data()[i], central_diff(&mut f_b, &b, i, 1e-5));
        }
    }

    #[test]
    fn maxpool1d_examples() {
        let x = Tensor::new(vec![1, 4], vec![1.0, 3.0, 2.0, 4.0]).unwrap();
        let (y, _) = maxpool1d_forward(&x, 2).unwrap();
        assert_eq!(y.data(), &[3.0, 4.0]);
        let (id, _) = maxpool1d_forward(&x, 1).unwrap();
        assert_eq!(id.data(), x.data());
        // Ceil semantics: width 5 at stride 2 pools to 3.
        let x5 = Tensor::new(vec![1, 5], vec![5.0, 1.0, 2.0, 2.5, 9.0]).unwrap();
        let (y5, _) = maxpool1d_forward(&x5, 2).unwrap();
        assert_eq!(y5.data(), &[5.0, 2.5, 9.0]);
    }

    #[test]
    fn maxpool_tie_routes_to_first_index() {
        let x = Tensor::new(vec![1, 4], vec![2.0, 2.0, 1.0, 1.0]).unwrap();
        let (_, argmax) = maxpool1d_forward(&x, 2).unwrap();
        assert_eq!(argmax, vec![0, 2]);
    }

    #[test]
    fn maxpool_gradients_match_finite_differences() {
        let mut rng = Rng::new(23);
        // Keep window entries separated so the argmax is stable under the probe.
        let mut x = random(&mut rng, &[2, 7]);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            *v += i as f64 * 0.01;
        }
        let dy_shape = maxpool1d_forward(&x, 2).unwrap().0.shape().to_vec();
        let dy = random(&mut rng, &dy_shape);
        let (_, argmax) = maxpool1d_forward(&x, 2).unwrap();
        let dx = maxpool1d_backward(x.shape(), &argmax, &dy).unwrap();
        let mut f = |t: &Tensor| maxpool1d_forward(t, 2).unwrap().0.mul(&dy).unwrap().sum();
        for i in 0..x.len() {
            assert_grad_close(dx.data()[i], central_diff(&mut f, &x, i, 1e-6));
        }

        let x2 = random(&mut rng, &[1, 2, 4, 4]);
        let (y2, argmax2) = maxpool2d_forward(&x2, 2).unwrap();
        let dy2 = random(&mut rng, y2.shape());
        let dx2 = maxpool2d_backward(x2.shape(), &argmax2, &dy2).unwrap();
        let mut f2 = |t: &Tensor| maxpool2d_forward(t, 2).unwrap().0.mul(&dy2).unwrap().sum();
        for i in 0..x2.len() {
            assert_grad_close(dx2.data()[i], central_diff(&mut f2, &x2, i, 1e-6));
        }
    }

    #[test]
    fn gap_and_relu_gradients() {
        let mut rng = Rng::new(24);
        let x = random(&mut rng, &[2, 3, 4, 4]);
        let dy = random(&mut rng, &[2, 3]);
        let dx = gap_backward(x.shape(), &dy).unwrap();
        let mut f = |t: &Tensor| gap_forward(t).unwrap().mul(&dy).unwrap().sum();
        for i in (0..x.len()).step_by(5) {
            assert_grad_close(dx.data()[i], central_diff(&mut f, &x, i, 1e-6));
        }

        let xr = random(&mut rng, &[10]).map(|v| if v.abs() < 1e-3 { v + 0.1 } else { v });
        let dyr = random(&mut rng, &[10]);
        let dxr = relu_backward(&xr, &dyr);
        let mut fr = |t: &Tensor| relu_forward(t).mul(&dyr).unwrap().sum();
        for i in 0..xr.len() {
            assert_grad_close(dxr.data()[i], central_diff(&mut fr, &xr, i, 1e-6));
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = Rng::new(25);
        let logits = random(&mut rng, &[6, 5]).scale(10.0);
        let p = softmax_rows(&logits).unwrap();
        for r in 0..6 {
            let s: f64 = (0..5).map(|c| p.at2(r, c)).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn he_init_statistics() {
        let mut params = ModelParams::new();
        params.register("fc.weight", &[50, 200]).unwrap();
        params.register("fc.bias", &[50]).unwrap();
        let mut rng = Rng::new(77);
        he_init(&mut params, &mut rng).unwrap();
        let w = params.value("fc.weight").unwrap();
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let var = w.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let expect = (2.0 / 200.0_f64).sqrt();
        assert!((var.sqrt() - expect).abs() < 0.1 * expect);
        assert!(params.value("fc.bias").unwrap().data().iter().all(|&v| v == 0.0));
        // Determinism.
        let mut params2 = ModelParams::new();
        params2.register("fc.weight", &[50, 200]).unwrap();
        params2.register("fc.bias", &[50]).unwrap();
        he_init(&mut params2, &mut Rng::new(77)).unwrap();
        assert_eq!(params.value_digest(), params2.value_digest());
    }
}
