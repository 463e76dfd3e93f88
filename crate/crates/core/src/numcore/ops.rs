//! Eager kernels over [`Tensor`]. The tape in [`super::graph`] calls these for
//! its forward values, so eager and recorded results agree bit for bit.

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
pub const GELU_A: f64 = 0.044_715;

/// Matrix product of `a [m×k]` and `b [k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = rank2(a, "matmul", b)?;
    let (k2, n) = rank2(b, "matmul", a)?;
    if k != k2 {
        return Err(Error::Dimension {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    matmul_into(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(vec![m, n], out)
}

pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `a [m×k]` times the transpose of `b [n×k]`.
pub(crate) fn matmul_nt_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// Transpose of `a [k×m]` times `b [k×n]`.
pub(crate) fn matmul_tn_into(a: &[f64], b: &[f64], out: &mut [f64], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

fn rank2(t: &Tensor, op: &'static str, other: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::Dimension {
            op,
            lhs: t.shape().to_vec(),
            rhs: other.shape().to_vec(),
        }),
    }
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (r, c) = a.dims2()?;
    let src = a.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = src[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out)
}

/// Softmax along `axis`, stabilised by subtracting the running maximum.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::contract(format!(
            "softmax axis {axis} out of range for shape {shape:?}"
        )));
    }
    let extent = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |e: usize| (o * extent + e) * inner + i;
            let max = (0..extent).map(|e| src[idx(e)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for e in 0..extent {
                let v = (src[idx(e)] - max).exp();
                out[idx(e)] = v;
                total += v;
            }
            for e in 0..extent {
                out[idx(e)] /= total;
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// Row-wise softmax over `[rows×cols]` where `allowed[j] == false` forces
/// column `j` to probability exactly zero. A row with no allowed column is
/// all zeros.
pub(crate) fn masked_softmax_rows(src: &[f64], rows: usize, cols: usize, allowed: Option<&[bool]>) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    let ok = |j: usize| allowed.is_none_or(|m| m[j]);
    for r in 0..rows {
        let row = &src[r * cols..(r + 1) * cols];
        let max = (0..cols)
            .filter(|&j| ok(j))
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let orow = &mut out[r * cols..(r + 1) * cols];
        let mut total = 0.0;
        for j in 0..cols {
            if ok(j) {
                let v = (row[j] - max).exp();
                orow[j] = v;
                total += v;
            }
        }
        orow.iter_mut().for_each(|v| *v /= total);
    }
    out
}

/// Normalises each row of `x` over its last extent, then applies `gain` and
/// `bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let (rows, cols) = x.dims2()?;
    if gain.numel() != cols || bias.numel() != cols {
        return Err(Error::Dimension {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gain.shape().to_vec(),
        });
    }
    let (out, _, _) = layer_norm_rows(x.data(), gain.data(), bias.data(), rows, cols, eps);
    Tensor::new(x.shape().to_vec(), out)
}

/// Returns `(output, normalised input, inverse std per row)`.
pub(crate) fn layer_norm_rows(
    x: &[f64],
    gain: &[f64],
    bias: &[f64],
    rows: usize,
    cols: usize,
    eps: f64,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut out = vec![0.0; rows * cols];
    let mut xhat = vec![0.0; rows * cols];
    let mut inv_std = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std[r] = is;
        for j in 0..cols {
            let h = (row[j] - mean) * is;
            xhat[r * cols + j] = h;
            out[r * cols + j] = h * gain[j] + bias[j];
        }
    }
    (out, xhat, inv_std)
}

/// Tanh approximation of GELU.
pub fn gelu(v: f64) -> f64 {
    let u = GELU_C * (v + GELU_A * v * v * v);
    0.5 * v * (1.0 + u.tanh())
}

pub fn gelu_grad(v: f64) -> f64 {
    let u = GELU_C * (v + GELU_A * v * v * v);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v)
}

pub fn gelu_tensor(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| gelu(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&a, &Tensor::eye(2)).unwrap(), a);
        let b = m(&[&[5.0, 6.0], &[7.0, 8.0]]);
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_rejects_mismatch_naming_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let err = matmul(&a, &a).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&Tensor::vector(vec![0.0, 0.0]), 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&Tensor::vector(vec![1.0, 2.0, 3.0]), 0).unwrap();
        // exp-normalise by hand: e^1, e^2, e^3 over their sum
        let z = 1f64.exp() + 2f64.exp() + 3f64.exp();
        let expected = [1f64.exp() / z, 2f64.exp() / z, 3f64.exp() / z];
        for (got, want) in s.data().iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
        for (got, want) in s.data().iter().zip([0.0900, 0.2447, 0.6652]) {
            assert!((got - want).abs() < 1e-4);
        }
        let s = softmax(&Tensor::vector(vec![1000.0, 0.0]), 0).unwrap();
        assert!(s.data().iter().all(|v| v.is_finite()));
        assert!((s.data()[0] - 1.0).abs() < 1e-300 && s.data()[1] < 1e-300);
    }

    #[test]
    fn softmax_along_first_axis() {
        let x = m(&[&[0.0, 1.0], &[0.0, 1.0]]);
        let s = softmax(&x, 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5, 0.5, 0.5]);
        assert!(softmax(&x, 2).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let one = |n| Tensor::full(&[n], 1.0);
        let zero = |n| Tensor::zeros(&[n]);
        let y = layer_norm(&m(&[&[5.0, 5.0, 5.0]]), &one(3), &zero(3), 1e-12).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);
        let y = layer_norm(&m(&[&[1.0, 3.0]]), &one(2), &zero(2), 1e-12).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-6 && (y.data()[1] - 1.0).abs() < 1e-6);
        let bias = Tensor::vector(vec![0.5, -2.0]);
        let y = layer_norm(&m(&[&[1.0, 3.0], &[7.0, -4.0]]), &zero(2), &bias, 1e-12).unwrap();
        assert_eq!(y.data(), &[0.5, -2.0, 0.5, -2.0]);
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
