//! Differentiable primitives on [`Var`].

use super::{pairwise_sum, Tensor, Var};
use crate::error::{Error, Result};
use std::ops::Range;

fn check_same(a: &[usize], b: &[usize], op: &str) -> Result<()> {
    if a != b {
        return Err(Error::dim(format!("{op}: shapes {a:?} and {b:?} differ")));
    }
    Ok(())
}

fn require_matrix(shape: &[usize], op: &str) -> Result<(usize, usize)> {
    match shape {
        [m, n] => Ok((*m, *n)),
        _ => Err(Error::dim(format!("{op}: expected a matrix, got {shape:?}"))),
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

/// Outer/axis/inner decomposition of a shape around `axis`.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<'t> Var<'t> {
    fn unary(
        self,
        f: impl Fn(&Tensor) -> Tensor,
        backward: impl Fn(&Tensor, &Tensor, &Tensor) -> Tensor + 'static,
    ) -> Var<'t> {
        let out = f(&self.value_ref());
        self.tape().record(
            out,
            &[self],
            Box::new(move |g, inputs, out, _| vec![Some(backward(g, inputs[0], out))]),
        )
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let (a, b) = (self.value_ref(), other.value_ref());
            check_same(a.shape(), b.shape(), "add")?;
            a.zip_map(&b, |x, y| x + y)
        };
        Ok(self.tape().record(
            out,
            &[self, other],
            Box::new(|g, _, _, _| vec![Some(g.clone()), Some(g.clone())]),
        ))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let (a, b) = (self.value_ref(), other.value_ref());
            check_same(a.shape(), b.shape(), "sub")?;
            a.zip_map(&b, |x, y| x - y)
        };
        Ok(self.tape().record(
            out,
            &[self, other],
            Box::new(|g, _, _, _| vec![Some(g.clone()), Some(g.scale(-1.0))]),
        ))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let (a, b) = (self.value_ref(), other.value_ref());
            check_same(a.shape(), b.shape(), "mul")?;
            a.zip_map(&b, |x, y| x * y)
        };
        Ok(self.tape().record(
            out,
            &[self, other],
            Box::new(|g, inp, _, needs| {
                vec![
                    needs[0].then(|| g.zip_map(inp[1], |g, b| g * b)),
                    needs[1].then(|| g.zip_map(inp[0], |g, a| g * a)),
                ]
            }),
        ))
    }

    /// Elementwise quotient.
    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let (a, b) = (self.value_ref(), other.value_ref());
            check_same(a.shape(), b.shape(), "div")?;
            a.zip_map(&b, |x, y| x / y)
        };
        Ok(self.tape().record(
            out,
            &[self, other],
            Box::new(|g, inp, out, needs| {
                vec![
                    needs[0].then(|| g.zip_map(inp[1], |g, b| g / b)),
                    needs[1].then(|| {
                        let gb = g.zip_map(inp[1], |g, b| g / b);
                        gb.zip_map(out, |gb, q| -gb * q)
                    }),
                ]
            }),
        ))
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        self.unary(|x| x.map(|v| v + c), |g, _, _| g.clone())
    }

    pub fn mul_scalar(self, c: f64) -> Var<'t> {
        self.unary(|x| x.scale(c), move |g, _, _| g.scale(c))
    }

    pub fn neg(self) -> Var<'t> {
        self.mul_scalar(-1.0)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(
            |x| x.map(|v| v.max(0.0)),
            |g, x, _| g.zip_map(x, |g, x| if x > 0.0 { g } else { 0.0 }),
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Var<'t> {
        self.unary(
            |x| x.map(gelu),
            |g, x, _| g.zip_map(x, |g, x| g * gelu_grad(x)),
        )
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(|x| x.map(f64::exp), |g, _, y| g.zip_map(y, |g, y| g * y))
    }

    pub fn log(self) -> Var<'t> {
        self.unary(|x| x.map(f64::ln), |g, x, _| g.zip_map(x, |g, x| g / x))
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let (a, b) = (self.value_ref(), other.value_ref());
            let (m, k) = require_matrix(a.shape(), "matmul")?;
            let (k2, n) = require_matrix(b.shape(), "matmul")?;
            if k != k2 {
                return Err(Error::dim(format!(
                    "matmul: inner dimensions differ for {:?} x {:?}",
                    [m, k],
                    [k2, n]
                )));
            }
            a.matmul(&b)
        };
        Ok(self.tape().record(
            out,
            &[self, other],
            Box::new(|g, inp, _, needs| {
                vec![
                    needs[0].then(|| g.matmul_nt(inp[1])),
                    needs[1].then(|| inp[0].matmul_tn(g)),
                ]
            }),
        ))
    }

    /// Transpose of a matrix.
    pub fn transpose(self) -> Result<Var<'t>> {
        require_matrix(&self.shape(), "transpose")?;
        Ok(self.unary(|x| x.transpose2(), |g, _, _| g.transpose2()))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let out = self.value_ref().reshaped(shape)?;
        let orig = self.shape();
        Ok(self.tape().record(
            out,
            &[self],
            Box::new(move |g, _, _, _| vec![Some(g.reshaped(&orig).expect("same size"))]),
        ))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape()).collect();
        let base = &shapes[0];
        if axis >= base.len() {
            return Err(Error::dim(format!("concat axis {axis} out of range for {base:?}")));
        }
        for s in &shapes[1..] {
            let mismatch = s.len() != base.len()
                || s.iter()
                    .zip(base)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b);
            if mismatch {
                return Err(Error::dim(format!(
                    "concat along axis {axis}: {base:?} vs {s:?}"
                )));
            }
        }
        let extents: Vec<usize> = shapes.iter().map(|s| s[axis]).collect();
        let total: usize = extents.iter().sum();
        let (outer, _, inner) = split_at_axis(base, axis);
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        {
            let values: Vec<_> = parts.iter().map(|p| p.value_ref()).collect();
            for o in 0..outer {
                for (v, &e) in values.iter().zip(&extents) {
                    data.extend_from_slice(&v.data()[o * e * inner..(o + 1) * e * inner]);
                }
            }
        }
        let out = Tensor::new(&out_shape, data)?;
        let in_shapes = shapes.clone();
        Ok(first.tape().record(
            out,
            parts,
            Box::new(move |g, _, _, needs| {
                let mut offset = 0;
                in_shapes
                    .iter()
                    .zip(needs)
                    .map(|(s, &need)| {
                        let e = s[axis];
                        let start = offset;
                        offset += e;
                        need.then(|| {
                            let mut d = Vec::with_capacity(outer * e * inner);
                            for o in 0..outer {
                                let row = o * total * inner;
                                d.extend_from_slice(
                                    &g.data()[row + start * inner..row + (start + e) * inner],
                                );
                            }
                            Tensor::new(s, d).expect("slice shape")
                        })
                    })
                    .collect()
            }),
        ))
    }

    /// Sub-range along `axis`.
    pub fn slice(self, axis: usize, range: Range<usize>) -> Result<Var<'t>> {
        let shape = self.shape();
        if axis >= shape.len() || range.start >= range.end || range.end > shape[axis] {
            return Err(Error::dim(format!(
                "slice {range:?} along axis {axis} of {shape:?}"
            )));
        }
        let (outer, extent, inner) = split_at_axis(&shape, axis);
        let e = range.len();
        let mut out_shape = shape.clone();
        out_shape[axis] = e;
        let data = {
            let v = self.value_ref();
            let mut d = Vec::with_capacity(outer * e * inner);
            for o in 0..outer {
                let row = o * extent * inner;
                d.extend_from_slice(&v.data()[row + range.start * inner..row + range.end * inner]);
            }
            d
        };
        let out = Tensor::new(&out_shape, data)?;
        let start = range.start;
        Ok(self.tape().record(
            out,
            &[self],
            Box::new(move |g, _, _, _| {
                let mut full = Tensor::zeros(&shape);
                let fd = full.data_mut();
                for o in 0..outer {
                    let dst = o * extent * inner + start * inner;
                    fd[dst..dst + e * inner]
                        .copy_from_slice(&g.data()[o * e * inner..(o + 1) * e * inner]);
                }
                vec![Some(full)]
            }),
        ))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(self) -> Var<'t> {
        self.unary(
            |x| Tensor::scalar(x.sum()),
            |g, x, _| Tensor::full(x.shape(), g.item()),
        )
    }

    pub fn mean(self) -> Var<'t> {
        let n = self.value_ref().len() as f64;
        self.sum().mul_scalar(1.0 / n)
    }

    /// Column sums of a matrix: `[m, n] -> [1, n]`.
    pub fn sum_rows(self) -> Result<Var<'t>> {
        let (m, n) = require_matrix(&self.shape(), "sum_rows")?;
        Ok(self.unary(
            move |x| {
                let mut col = vec![0.0; m];
                let sums = (0..n)
                    .map(|j| {
                        for (i, c) in col.iter_mut().enumerate() {
                            *c = x.data()[i * n + j];
                        }
                        pairwise_sum(&col)
                    })
                    .collect();
                Tensor::new(&[1, n], sums).expect("row shape")
            },
            move |g, _, _| {
                let mut d = Vec::with_capacity(m * n);
                for _ in 0..m {
                    d.extend_from_slice(g.data());
                }
                Tensor::new(&[m, n], d).expect("matrix shape")
            },
        ))
    }

    /// Adds a length-`n` bias to every row of an `[m, n]` matrix.
    pub fn add_row_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        let out = {
            let (x, b) = (self.value_ref(), bias.value_ref());
            let (_, n) = require_matrix(x.shape(), "add_row_bias")?;
            if b.len() != n {
                return Err(Error::dim(format!(
                    "add_row_bias: bias {:?} for matrix {:?}",
                    b.shape(),
                    x.shape()
                )));
            }
            let mut out = x.clone();
            for row in out.data_mut().chunks_mut(n) {
                for (o, bv) in row.iter_mut().zip(b.data()) {
                    *o += bv;
                }
            }
            out
        };
        Ok(self.tape().record(
            out,
            &[self, bias],
            Box::new(|g, inp, _, needs| {
                let db = needs[1].then(|| {
                    let n = inp[1].len();
                    let mut s = vec![0.0; n];
                    for row in g.data().chunks(n) {
                        for (a, v) in s.iter_mut().zip(row) {
                            *a += v;
                        }
                    }
                    Tensor::new(inp[1].shape(), s).expect("bias shape")
                });
                vec![Some(g.clone()), db]
            }),
        ))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(self) -> Result<Var<'t>> {
        let out = {
            let x = self.value_ref();
            let (_, n) = require_matrix(x.shape(), "softmax_rows")?;
            if x.has_nan() {
                return Err(Error::Numeric("softmax_rows: NaN input".into()));
            }
            let mut out = x.clone();
            for row in out.data_mut().chunks_mut(n) {
                softmax_in_place(row);
            }
            out
        };
        Ok(self.tape().record(
            out,
            &[self],
            Box::new(|g, _, y, _| {
                let n = y.shape()[1];
                let mut dx = g.clone();
                for (drow, yrow) in dx.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                    let dot: f64 = drow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                    for (d, y) in drow.iter_mut().zip(yrow) {
                        *d = y * (*d - dot);
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax_rows(self) -> Result<Var<'t>> {
        let out = {
            let x = self.value_ref();
            let (_, n) = require_matrix(x.shape(), "log_softmax_rows")?;
            if x.has_nan() {
                return Err(Error::Numeric("log_softmax_rows: NaN input".into()));
            }
            let mut out = x.clone();
            for row in out.data_mut().chunks_mut(n) {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                for v in row.iter_mut() {
                    *v = *v - max - lse;
                }
            }
            out
        };
        Ok(self.tape().record(
            out,
            &[self],
            Box::new(|g, _, y, _| {
                let n = y.shape()[1];
                let mut dx = g.clone();
                for (drow, yrow) in dx.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                    let gsum: f64 = drow.iter().sum();
                    for (d, y) in drow.iter_mut().zip(yrow) {
                        *d -= y.exp() * gsum;
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Normalizes each row of an `[n, c]` matrix to zero mean and unit
    /// variance (biased), then applies `scale` and `shift` per column.
    pub fn layer_norm_rows(self, scale: Var<'t>, shift: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let out = {
            let (x, s, b) = (self.value_ref(), scale.value_ref(), shift.value_ref());
            let (_, c) = require_matrix(x.shape(), "layer_norm")?;
            if s.len() != c || b.len() != c {
                return Err(Error::dim(format!(
                    "layer_norm: scale {:?} / shift {:?} for {} channels",
                    s.shape(),
                    b.shape(),
                    c
                )));
            }
            let mut out = x.clone();
            for row in out.data_mut().chunks_mut(c) {
                let (mean, inv) = row_moments(row, eps);
                for ((v, sv), bv) in row.iter_mut().zip(s.data()).zip(b.data()) {
                    *v = (*v - mean) * inv * sv + bv;
                }
            }
            out
        };
        Ok(self.tape().record(
            out,
            &[self, scale, shift],
            Box::new(move |g, inp, _, needs| {
                let (x, s) = (inp[0], inp[1]);
                let c = s.len();
                let mut dx = Tensor::zeros(x.shape());
                let mut ds = vec![0.0; c];
                let mut db = vec![0.0; c];
                let mut xhat = vec![0.0; c];
                let mut gs = vec![0.0; c];
                for ((xrow, grow), dxrow) in x
                    .data()
                    .chunks(c)
                    .zip(g.data().chunks(c))
                    .zip(dx.data_mut().chunks_mut(c))
                {
                    let (mean, inv) = row_moments(xrow, eps);
                    for j in 0..c {
                        xhat[j] = (xrow[j] - mean) * inv;
                        gs[j] = grow[j] * s.data()[j];
                        ds[j] += grow[j] * xhat[j];
                        db[j] += grow[j];
                    }
                    let mg = gs.iter().sum::<f64>() / c as f64;
                    let mgx = gs.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for j in 0..c {
                        dxrow[j] = inv * (gs[j] - mg - xhat[j] * mgx);
                    }
                }
                vec![
                    needs[0].then_some(dx),
                    needs[1].then(|| Tensor::new(inp[1].shape(), ds).expect("scale shape")),
                    needs[2].then(|| Tensor::new(inp[2].shape(), db).expect("shift shape")),
                ]
            }),
        ))
    }
}

fn row_moments(row: &[f64], eps: f64) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
