//! Convolution primitives over single `[C, H, W]` images via im2col.

use super::{gemm_nn, gemm_nt, gemm_tn, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn out_hw(&self) -> (usize, usize) {
        (
            (self.height + 2 * self.pad - self.kh) / self.stride + 1,
            (self.width + 2 * self.pad - self.kw) / self.stride + 1,
        )
    }
}

/// Unfolds a `[C, H, W]` buffer into a `(C·kh·kw) × (OH·OW)` matrix.
#[allow(clippy::too_many_arguments)]
pub fn im2col(
    x: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let g = Geometry {
        channels,
        height,
        width,
        kh,
        kw,
        stride,
        pad,
    };
    let (oh, ow) = g.out_hw();
    let p = oh * ow;
    let mut cols = vec![0.0; channels * kh * kw * p];
    for c in 0..channels {
        for a in 0..kh {
            for b in 0..kw {
                let row = ((c * kh + a) * kw + b) * p;
                for i in 0..oh {
                    let y = (i * stride + a) as isize - pad as isize;
                    if y < 0 || y >= height as isize {
                        continue;
                    }
                    let src = c * height * width + y as usize * width;
                    let dst = row + i * ow;
                    for j in 0..ow {
                        let xx = (j * stride + b) as isize - pad as isize;
                        if xx >= 0 && xx < width as isize {
                            cols[dst + j] = x[src + xx as usize];
                        }
                    }
                }
            }
        }
    }
    (cols, oh, ow)
}

/// Adjoint of [`im2col`]: scatters columns back, summing overlaps.
#[allow(clippy::too_many_arguments)]
pub fn col2im(
    cols: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let g = Geometry {
        channels,
        height,
        width,
        kh,
        kw,
        stride,
        pad,
    };
    let (oh, ow) = g.out_hw();
    let p = oh * ow;
    let mut x = vec![0.0; channels * height * width];
    for c in 0..channels {
        for a in 0..kh {
            for b in 0..kw {
                let row = ((c * kh + a) * kw + b) * p;
                for i in 0..oh {
                    let y = (i * stride + a) as isize - pad as isize;
                    if y < 0 || y >= height as isize {
                        continue;
                    }
                    let dst = c * height * width + y as usize * width;
                    let src = row + i * ow;
                    for j in 0..ow {
                        let xx = (j * stride + b) as isize - pad as isize;
                        if xx >= 0 && xx < width as isize {
                            x[dst + xx as usize] += cols[src + j];
                        }
                    }
                }
            }
        }
    }
    x
}

fn chw(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match shape {
        [c, h, w] => Ok((*c, *h, *w)),
        _ => Err(Error::dim(format!("{what}: expected [C, H, W], got {shape:?}"))),
    }
}

fn kernel4(shape: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    match shape {
        [a, b, c, d] => Ok((*a, *b, *c, *d)),
        _ => Err(Error::dim(format!("{what}: expected a rank-4 kernel, got {shape:?}"))),
    }
}

fn channel_sums(g: &[f64], channels: usize) -> Vec<f64> {
    let per = g.len() / channels;
    g.chunks(per).map(|c| c.iter().sum()).collect()
}

impl<'t> Var<'t> {
    /// Zero-padded cross-correlation of a `[C_in, H, W]` image with an
    /// `[C_out, C_in, kh, kw]` kernel plus per-channel bias.
    pub fn conv2d(self, weight: Var<'t>, bias: Var<'t>, stride: usize, pad: usize) -> Result<Var<'t>> {
        if stride == 0 {
            return Err(Error::config("conv2d stride must be positive"));
        }
        let (out, geom, o) = {
            let (x, w, b) = (self.value_ref(), weight.value_ref(), bias.value_ref());
            let (c, h, wd) = chw(x.shape(), "conv2d")?;
            let (o, ci, kh, kw) = kernel4(w.shape(), "conv2d")?;
            if ci != c {
                return Err(Error::dim(format!(
                    "conv2d: kernel {:?} expects {ci} input channels, image {:?} has {c}",
                    w.shape(),
                    x.shape()
                )));
            }
            if b.len() != o {
                return Err(Error::dim(format!("conv2d: bias {:?} for {o} outputs", b.shape())));
            }
            if h + 2 * pad < kh || wd + 2 * pad < kw {
                return Err(Error::dim(format!(
                    "conv2d: kernel {kh}x{kw} larger than padded image {h}x{wd}"
                )));
            }
            let geom = Geometry {
                channels: c,
                height: h,
                width: wd,
                kh,
                kw,
                stride,
                pad,
            };
            let (cols, oh, ow) = im2col(x.data(), c, h, wd, kh, kw, stride, pad);
            let p = oh * ow;
            let mut out = vec![0.0; o * p];
            for (row, bv) in out.chunks_mut(p).zip(b.data()) {
                row.fill(*bv);
            }
            gemm_nn(w.data(), &cols, &mut out, o, c * kh * kw, p);
            (Tensor::new(&[o, oh, ow], out)?, geom, o)
        };
        Ok(self.tape().record(
            out,
            &[self, weight, bias],
            Box::new(move |g, inp, _, needs| {
                let Geometry {
                    channels: c,
                    height: h,
                    width: wd,
                    kh,
                    kw,
                    stride,
                    pad,
                } = geom;
                let ckk = c * kh * kw;
                let p = g.len() / o;
                let (x, w) = (inp[0], inp[1]);
                let dx = needs[0].then(|| {
                    let mut dcols = vec![0.0; ckk * p];
                    gemm_tn(w.data(), g.data(), &mut dcols, ckk, o, p);
                    let d = col2im(&dcols, c, h, wd, kh, kw, stride, pad);
                    Tensor::new(x.shape(), d).expect("input shape")
                });
                let dw = needs[1].then(|| {
                    let (cols, _, _) = im2col(x.data(), c, h, wd, kh, kw, stride, pad);
                    let mut d = vec![0.0; o * ckk];
                    gemm_nt(g.data(), &cols, &mut d, o, p, ckk);
                    Tensor::new(w.shape(), d).expect("kernel shape")
                });
                let db = needs[2]
                    .then(|| Tensor::new(inp[2].shape(), channel_sums(g.data(), o)).expect("bias"));
                vec![dx, dw, db]
            }),
        ))
    }

    /// Transposed convolution (no padding) of a `[C_in, h, w]` image with an
    /// `[C_in, C_out, kh, kw]` kernel; output is `((h−1)·s + kh) × ((w−1)·s + kw)`.
    pub fn conv_transpose2d(self, weight: Var<'t>, bias: Var<'t>, stride: usize) -> Result<Var<'t>> {
        if stride == 0 {
            return Err(Error::config("transposed conv stride must be positive"));
        }
        let (out, geom, c_in, h, wd) = {
            let (x, w, b) = (self.value_ref(), weight.value_ref(), bias.value_ref());
            let (c, h, wd) = chw(x.shape(), "conv_transpose2d")?;
            let (ci, o, kh, kw) = kernel4(w.shape(), "conv_transpose2d")?;
            if ci != c {
                return Err(Error::dim(format!(
                    "conv_transpose2d: kernel {:?} expects {ci} input channels, image {:?} has {c}",
                    w.shape(),
                    x.shape()
                )));
            }
            if b.len() != o {
                return Err(Error::dim(format!(
                    "conv_transpose2d: bias {:?} for {o} outputs",
                    b.shape()
                )));
            }
            let oh = (h - 1) * stride + kh;
            let ow = (wd - 1) * stride + kw;
            let okk = o * kh * kw;
            let mut cols = vec![0.0; okk * h * wd];
            gemm_tn(w.data(), x.data(), &mut cols, okk, c, h * wd);
            let mut out = col2im(&cols, o, oh, ow, kh, kw, stride, 0);
            for (plane, bv) in out.chunks_mut(oh * ow).zip(b.data()) {
                for v in plane {
                    *v += bv;
                }
            }
            let geom = Geometry {
                channels: o,
                height: oh,
                width: ow,
                kh,
                kw,
                stride,
                pad: 0,
            };
            (Tensor::new(&[o, oh, ow], out)?, geom, c, h, wd)
        };
        Ok(self.tape().record(
            out,
            &[self, weight, bias],
            Box::new(move |g, inp, _, needs| {
                let Geometry {
                    channels: o,
                    height: oh,
                    width: ow,
                    kh,
                    kw,
                    stride,
                    ..
                } = geom;
                let okk = o * kh * kw;
                let hw = h * wd;
                let (x, w) = (inp[0], inp[1]);
                let (dcols, _, _) = im2col(g.data(), o, oh, ow, kh, kw, stride, 0);
                let dx = needs[0].then(|| {
                    let mut d = vec![0.0; c_in * hw];
                    gemm_nn(w.data(), &dcols, &mut d, c_in, okk, hw);
                    Tensor::new(x.shape(), d).expect("input shape")
                });
                let dw = needs[1].then(|| {
                    let mut d = vec![0.0; c_in * okk];
                    gemm_nt(x.data(), &dcols, &mut d, c_in, hw, okk);
                    Tensor::new(w.shape(), d).expect("kernel shape")
                });
                let db = needs[2]
                    .then(|| Tensor::new(inp[2].shape(), channel_sums(g.data(), o)).expect("bias"));
                vec![dx, dw, db]
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_grad, relative_error, Tape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Direct-loop reference cross-correlation.
    fn conv_reference(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (o, _, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = Tensor::zeros(&[o, oh, ow]);
        for oc in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b.data()[oc];
                    for ic in 0..c {
                        for a in 0..kh {
                            for bb in 0..kw {
                                let y = (i * stride + a) as isize - pad as isize;
                                let xx = (j * stride + bb) as isize - pad as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                acc += w.data()[((oc * c + ic) * kh + a) * kw + bb]
                                    * x.data()[(ic * h + y as usize) * wd + xx as usize];
                            }
                        }
                    }
                    out.data_mut()[(oc * oh + i) * ow + j] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_passes_through() {
        let tape = Tape::new();
        let xv = random(&[3, 4, 5], 1);
        let mut k = Tensor::zeros(&[3, 3, 1, 1]);
        for i in 0..3 {
            k.data_mut()[i * 3 + i] = 1.0;
        }
        let y = tape
            .constant(xv.clone())
            .conv2d(tape.constant(k), tape.constant(Tensor::zeros(&[3])), 1, 0)
            .unwrap();
        assert_eq!(y.value(), xv);
    }

    #[test]
    fn ones_kernel_on_constant_image() {
        let tape = Tape::new();
        let c = 0.75;
        let y = tape
            .constant(Tensor::full(&[1, 5, 5], c))
            .conv2d(
                tape.constant(Tensor::ones(&[1, 1, 3, 3])),
                tape.constant(Tensor::zeros(&[1])),
                1,
                1,
            )
            .unwrap()
            .value();
        for i in 1..4 {
            for j in 1..4 {
                assert_eq!(y.data()[i * 5 + j], 9.0 * c);
            }
        }
        assert_eq!(y.data()[0], 4.0 * c);
    }

    #[test]
    fn zero_kernel_gives_bias_map() {
        let tape = Tape::new();
        let y = tape
            .constant(random(&[2, 4, 4], 3))
            .conv2d(
                tape.constant(Tensor::zeros(&[3, 2, 3, 3])),
                tape.constant(Tensor::new(&[3], vec![0.5, -1.0, 2.0]).unwrap()),
                1,
                1,
            )
            .unwrap()
            .value();
        assert_eq!(y.shape(), &[3, 4, 4]);
        for (ch, want) in [0.5, -1.0, 2.0].iter().enumerate() {
            assert!(y.data()[ch * 16..(ch + 1) * 16].iter().all(|v| v == want));
        }
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let tape = Tape::new();
        let r = tape.constant(Tensor::zeros(&[2, 4, 4])).conv2d(
            tape.constant(Tensor::zeros(&[1, 3, 3, 3])),
            tape.constant(Tensor::zeros(&[1])),
            1,
            1,
        );
        assert!(matches!(r, Err(Error::Dimension(_))));
        let r = tape.constant(Tensor::zeros(&[2, 4, 4])).conv_transpose2d(
            tape.constant(Tensor::zeros(&[3, 1, 2, 2])),
            tape.constant(Tensor::zeros(&[1])),
            2,
        );
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn matches_direct_loops() {
        let tape = Tape::new();
        for (stride, pad, k) in [(1, 1, 3), (2, 1, 3), (2, 0, 1), (1, 0, 2)] {
            let x = random(&[2, 7, 6], 10 + stride as u64);
            let w = random(&[3, 2, k, k], 20);
            let b = random(&[3], 30);
            let y = tape
                .constant(x.clone())
                .conv2d(tape.constant(w.clone()), tape.constant(b.clone()), stride, pad)
                .unwrap()
                .value();
            let r = conv_reference(&x, &w, &b, stride, pad);
            assert!(relative_error(&y, &r) < 1e-14);
        }
    }

    #[test]
    fn stride_two_halves_even_extents() {
        let tape = Tape::new();
        let mut x = tape.constant(random(&[1, 32, 32], 4));
        for r in 1..=3 {
            let c_in = x.shape()[0];
            x = x
                .conv2d(
                    tape.constant(random(&[2, c_in, 3, 3], r)),
                    tape.constant(Tensor::zeros(&[2])),
                    2,
                    1,
                )
                .unwrap();
            assert_eq!(x.shape(), vec![2, 32 >> r, 32 >> r]);
        }
    }

    #[test]
    fn transposed_hand_case_and_zero_input() {
        let tape = Tape::new();
        let y = tape
            .constant(Tensor::ones(&[1, 1, 1]))
            .conv_transpose2d(
                tape.constant(Tensor::ones(&[1, 1, 2, 2])),
                tape.constant(Tensor::zeros(&[1])),
                2,
            )
            .unwrap();
        assert_eq!(y.value(), Tensor::ones(&[1, 2, 2]));
        let z = tape
            .constant(Tensor::zeros(&[3, 4, 4]))
            .conv_transpose2d(
                tape.constant(random(&[3, 2, 2, 2], 5)),
                tape.constant(Tensor::zeros(&[2])),
                2,
            )
            .unwrap();
        assert_eq!(z.value(), Tensor::zeros(&[2, 8, 8]));
    }

    #[test]
    fn transposed_is_adjoint_of_strided_conv() {
        // conv: [C=3, 8, 8] -> [O=2, 4, 4]; the transpose maps back with the same weights.
        let tape = Tape::new();
        let w = random(&[2, 3, 2, 2], 6);
        let x = random(&[3, 8, 8], 7);
        let y = random(&[2, 4, 4], 8);
        let cx = tape
            .constant(x.clone())
            .conv2d(tape.constant(w.clone()), tape.constant(Tensor::zeros(&[2])), 2, 0)
            .unwrap()
            .value();
        let ty = tape
            .constant(y.clone())
            .conv_transpose2d(tape.constant(w), tape.constant(Tensor::zeros(&[3])), 2)
            .unwrap()
            .value();
        let lhs = cx.dot(&y);
        let rhs = x.dot(&ty);
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    fn gradcheck_layer(transposed: bool) {
        let (x0, w0, b0) = if transposed {
            (random(&[3, 4, 4], 1), random(&[3, 2, 2, 2], 2), random(&[2], 3))
        } else {
            (random(&[2, 8, 8], 1), random(&[3, 2, 3, 3], 2), random(&[3], 3))
        };
        let apply = |t: &Tape, x: Var<'_>, w: Var<'_>, b: Var<'_>| -> Tensor {
            let _ = t;
            if transposed {
                x.conv_transpose2d(w, b, 2).unwrap().value()
            } else {
                x.conv2d(w, b, 2, 1).unwrap().value()
            }
        };
        let probe_w = {
            let t = Tape::new();
            let x = t.constant(x0.clone());
            let out = apply(&t, x, t.constant(w0.clone()), t.constant(b0.clone()));
            random(out.shape(), 99)
        };
        let eval = |x: &Tensor, w: &Tensor, b: &Tensor| {
            let t = Tape::new();
            apply(&t, t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone()))
                .dot(&probe_w)
        };
        let tape = Tape::new();
        let (x, w, b) = (
            tape.leaf(x0.clone()),
            tape.leaf(w0.clone()),
            tape.leaf(b0.clone()),
        );
        let y = if transposed {
            x.conv_transpose2d(w, b, 2).unwrap()
        } else {
            x.conv2d(w, b, 2, 1).unwrap()
        };
        let g = y
            .mul(tape.constant(probe_w.clone()))
            .unwrap()
            .sum()
            .backward()
            .unwrap();
        let nx = finite_diff_grad(|x| eval(x, &w0, &b0), &x0, 1e-6);
        let nw = finite_diff_grad(|w| eval(&x0, w, &b0), &w0, 1e-6);
        let nb = finite_diff_grad(|b| eval(&x0, &w0, b), &b0, 1e-6);
        assert!(relative_error(g.get(x).unwrap(), &nx) < 1e-6);
        assert!(relative_error(g.get(w).unwrap(), &nw) < 1e-6);
        assert!(relative_error(g.get(b).unwrap(), &nb) < 1e-6);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        gradcheck_layer(false);
    }

    #[test]
    fn transposed_conv_gradients_match_finite_differences() {
        gradcheck_layer(true);
    }
}
