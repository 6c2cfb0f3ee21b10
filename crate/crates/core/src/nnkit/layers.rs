//! Layer kernels with hand-written backward passes.
//!
//! Convolution weights are laid out `[out, in, k, k]`, dense weights
//! `[out, in]`. Every backward function accumulates (`+=`) into the gradient
//! buffers it is handed so callers can share buffers across uses.

use crate::error::{Error, Result};
use crate::nnkit::{Grid, Param, RngStream, Scalar};

fn conv_dims<S: Scalar>(input: &Grid<S>, weight: &Param<S>, bias: &Param<S>) -> Result<(usize, usize)> {
    if weight.shape.len() != 4 {
        return Err(Error::config(format!(
            "conv weight `{}` must be rank 4, got {:?}",
            weight.name, weight.shape
        )));
    }
    let (out_c, in_c, kh, kw) = (weight.shape[0], weight.shape[1], weight.shape[2], weight.shape[3]);
    if kh != kw || kh % 2 == 0 {
        return Err(Error::config(format!(
            "conv kernel `{}` must be square with odd size, got {kh}x{kw}",
            weight.name
        )));
    }
    if in_c != input.channels {
        return Err(Error::config(format!(
            "conv `{}` expects {in_c} input channels, input has {}",
            weight.name, input.channels
        )));
    }
    if bias.shape != [out_c] {
        return Err(Error::config(format!(
            "conv bias `{}` must have shape [{out_c}], got {:?}",
            bias.name, bias.shape
        )));
    }
    Ok((out_c, kh))
}

/// Valid output rows/cols for a kernel tap at offset `d` (already minus pad).
#[inline]
fn tap_range(d: isize, n: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d).min(n as isize).max(0) as usize;
    (lo, hi.max(lo))
}

/// Same-size cross-correlation plus bias. `pad` must equal `(k - 1) / 2`.
pub fn conv2d<S: Scalar>(input: &Grid<S>, weight: &Param<S>, bias: &Param<S>, pad: usize) -> Result<Grid<S>> {
    let (out_c, k) = conv_dims(input, weight, bias)?;
    if pad != (k - 1) / 2 {
        return Err(Error::config(format!(
            "conv `{}`: pad {pad} does not preserve size for kernel {k}",
            weight.name
        )));
    }
    let (h, w) = (input.height, input.width);
    let in_c = input.channels;
    let mut out = Grid::zeros(out_c, h, w);
    let plane = h * w;
    for o in 0..out_c {
        let out_plane = &mut out.values[o * plane..(o + 1) * plane];
        out_plane.iter_mut().for_each(|v| *v = bias.values[o]);
        for c in 0..in_c {
            let in_plane = input.plane(c);
            for ky in 0..k {
                let dy = ky as isize - pad as isize;
                let (y0, y1) = tap_range(dy, h);
                for kx in 0..k {
                    let wv = weight.values[((o * in_c + c) * k + ky) * k + kx];
                    if wv == S::zero() {
                        continue;
                    }
                    let dx = kx as isize - pad as isize;
                    let (x0, x1) = tap_range(dx, w);
                    for y in y0..y1 {
                        let src_row = ((y as isize + dy) as usize) * w;
                        let src = &in_plane[(src_row as isize + x0 as isize + dx) as usize
                            ..(src_row as isize + x1 as isize + dx) as usize];
                        let dst = &mut out_plane[y * w + x0..y * w + x1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += wv * *s;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Backward of [`conv2d`]. Accumulates into `d_weight`/`d_bias` and, when
/// given, into `d_input`.
pub fn conv2d_backward<S: Scalar>(
    input: &Grid<S>,
    weight: &Param<S>,
    d_out: &Grid<S>,
    d_weight: &mut [S],
    d_bias: &mut [S],
    mut d_input: Option<&mut Grid<S>>,
) {
    let (out_c, in_c, k) = (weight.shape[0], weight.shape[1], weight.shape[2]);
    let pad = (k - 1) / 2;
    let (h, w) = (input.height, input.width);
    let plane = h * w;
    for o in 0..out_c {
        let g_plane = &d_out.values[o * plane..(o + 1) * plane];
        d_bias[o] += g_plane.iter().copied().sum::<S>();
        for c in 0..in_c {
            let in_plane = input.plane(c);
            for ky in 0..k {
                let dy = ky as isize - pad as isize;
                let (y0, y1) = tap_range(dy, h);
                for kx in 0..k {
                    let dx = kx as isize - pad as isize;
                    let (x0, x1) = tap_range(dx, w);
                    let widx = ((o * in_c + c) * k + ky) * k + kx;
                    let wv = weight.values[widx];
                    let mut acc = S::zero();
                    for y in y0..y1 {
                        let src_start = ((y as isize + dy) as usize * w) as isize + dx;
                        let g = &g_plane[y * w + x0..y * w + x1];
                        let s = &in_plane[(src_start + x0 as isize) as usize..(src_start + x1 as isize) as usize];
                        for (gv, sv) in g.iter().zip(s) {
                            acc += *gv * *sv;
                        }
                    }
                    d_weight[widx] += acc;
                    if let Some(di) = d_input.as_deref_mut() {
                        if wv == S::zero() {
                            continue;
                        }
                        let di_plane = &mut di.values[c * plane..(c + 1) * plane];
                        for y in y0..y1 {
                            let dst_start = ((y as isize + dy) as usize * w) as isize + dx;
                            let g = &g_plane[y * w + x0..y * w + x1];
                            let dst = &mut di_plane
                                [(dst_start + x0 as isize) as usize..(dst_start + x1 as isize) as usize];
                            for (d, gv) in dst.iter_mut().zip(g) {
                                *d += wv * *gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn dense_dims<S: Scalar>(input: &[S], weight: &Param<S>, bias: &Param<S>) -> Result<(usize, usize)> {
    if weight.shape.len() != 2 {
        return Err(Error::config(format!(
            "dense weight `{}` must be rank 2, got {:?}",
            weight.name, weight.shape
        )));
    }
    let (out_n, in_n) = (weight.shape[0], weight.shape[1]);
    if input.len() != in_n {
        return Err(Error::config(format!(
            "dense `{}` expects input length {in_n}, got {}",
            weight.name,
            input.len()
        )));
    }
    if bias.shape != [out_n] {
        return Err(Error::config(format!(
            "dense bias `{}` must have shape [{out_n}], got {:?}",
            bias.name, bias.shape
        )));
    }
    Ok((out_n, in_n))
}

/// `y = W x + b`.
pub fn dense<S: Scalar>(input: &[S], weight: &Param<S>, bias: &Param<S>) -> Result<Vec<S>> {
    let (out_n, in_n) = dense_dims(input, weight, bias)?;
    Ok((0..out_n)
        .map(|o| {
            let row = &weight.values[o * in_n..(o + 1) * in_n];
            bias.values[o] + row.iter().zip(input).map(|(w, x)| *w * *x).sum::<S>()
        })
        .collect())
}

pub fn dense_backward<S: Scalar>(
    input: &[S],
    weight: &Param<S>,
    d_out: &[S],
    d_weight: &mut [S],
    d_bias: &mut [S],
    d_input: Option<&mut [S]>,
) {
    let in_n = weight.shape[1];
    for (o, g) in d_out.iter().enumerate() {
        d_bias[o] += *g;
        let row = &mut d_weight[o * in_n..(o + 1) * in_n];
        for (dw, x) in row.iter_mut().zip(input) {
            *dw += *g * *x;
        }
    }
    if let Some(di) = d_input {
        for (o, g) in d_out.iter().enumerate() {
            let row = &weight.values[o * in_n..(o + 1) * in_n];
            for (d, w) in di.iter_mut().zip(row) {
                *d += *g * *w;
            }
        }
    }
}

#[inline]
pub fn relu<S: Scalar>(x: S) -> S {
    x.max(S::zero())
}

pub fn relu_in_place<S: Scalar>(xs: &mut [S]) {
    xs.iter_mut().for_each(|v| *v = relu(*v));
}

/// Gates `grad` by the pre-activation sign (zero gradient at the kink).
pub fn relu_backward<S: Scalar>(pre: &[S], grad: &mut [S]) {
    for (g, x) in grad.iter_mut().zip(pre) {
        if *x <= S::zero() {
            *g = S::zero();
        }
    }
}

/// Logistic function, evaluated without overflow for large |x|.
#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Derivative of the logistic function at `x`.
#[inline]
pub fn sigmoid_grad<S: Scalar>(x: S) -> S {
    let s = sigmoid(x);
    s * (S::one() - s)
}

/// Keep pattern of one dropout application.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask<S: Scalar> {
    pub keep: Vec<bool>,
    /// Multiplier applied to kept entries, `1 / (1 - p)`.
    pub scale: S,
}

impl<S: Scalar> DropoutMask<S> {
    pub fn ones(n: usize) -> Self {
        Self {
            keep: vec![true; n],
            scale: S::one(),
        }
    }

    pub fn apply(&self, xs: &mut [S]) {
        for (x, k) in xs.iter_mut().zip(&self.keep) {
            *x = if *k { *x * self.scale } else { S::zero() };
        }
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|k| **k).count()
    }
}

/// Inverted dropout. Disabled dropout is the identity with an all-ones mask.
pub fn dropout<S: Scalar>(
    input: &[S],
    p: f64,
    stream: &mut RngStream,
    enabled: bool,
) -> Result<(Vec<S>, DropoutMask<S>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(format!("dropout probability {p} outside [0, 1)")));
    }
    if !enabled {
        return Ok((input.to_vec(), DropoutMask::ones(input.len())));
    }
    let mask = DropoutMask {
        keep: (0..input.len()).map(|_| stream.uniform() >= p).collect(),
        scale: S::lit(1.0 / (1.0 - p)),
    };
    let mut out = input.to_vec();
    mask.apply(&mut out);
    Ok((out, mask))
}

/// Dropout backward is the same masked scaling applied to the gradient.
pub fn dropout_backward<S: Scalar>(mask: &DropoutMask<S>, grad: &mut [S]) {
    mask.apply(grad);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnkit::ParamSet;

    fn conv_params(out_c: usize, in_c: usize, k: usize, w: Vec<f64>, b: Vec<f64>) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        ps.push("w", &[out_c, in_c, k, k], w).unwrap();
        ps.push("b", &[out_c], b).unwrap();
        ps
    }

    /// Direct cross-correlation by definition, used as an oracle.
    fn naive_conv(input: &Grid<f64>, w: &[f64], b: &[f64], out_c: usize, k: usize) -> Grid<f64> {
        let pad = (k - 1) as isize / 2;
        let mut out = Grid::zeros(out_c, input.height, input.width);
        for o in 0..out_c {
            for y in 0..input.height {
                for x in 0..input.width {
                    let mut acc = b[o];
                    for c in 0..input.channels {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + ky as isize - pad;
                                let sx = x as isize + kx as isize - pad;
                                if sy < 0 || sx < 0 || sy >= input.height as isize || sx >= input.width as isize {
                                    continue;
                                }
                                acc += w[((o * input.channels + c) * k + ky) * k + kx]
                                    * input.at(c, sy as usize, sx as usize);
                            }
                        }
                    }
                    let i = out.index(o, y, x);
                    out.values[i] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_identity_kernel() {
        let ps = conv_params(1, 1, 1, vec![1.0], vec![0.0]);
        let input = Grid::from_values(1, 3, 4, (0..12).map(f64::from).collect()).unwrap();
        let out = conv2d(&input, ps.get("w").unwrap(), ps.get("b").unwrap(), 0).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn conv_zero_kernel() {
        let ps = conv_params(2, 1, 3, vec![0.0; 18], vec![0.0; 2]);
        let input = Grid::from_values(1, 4, 4, vec![1.5; 16]).unwrap();
        let out = conv2d(&input, ps.get("w").unwrap(), ps.get("b").unwrap(), 1).unwrap();
        assert!(out.values.iter().all(|v| *v == 0.0));
        assert_eq!(out.channels, 2);
    }

    #[test]
    fn conv_ones_kernel_spreads_impulse() {
        let ps = conv_params(1, 1, 3, vec![1.0; 9], vec![0.0]);
        let mut input = Grid::zeros(1, 5, 5);
        input.values[2 * 5 + 2] = 1.0;
        let out = conv2d(&input, ps.get("w").unwrap(), ps.get("b").unwrap(), 1).unwrap();
        for y in 0..5 {
            for x in 0..5 {
                let expected = if (1..=3).contains(&y) && (1..=3).contains(&x) { 1.0 } else { 0.0 };
                assert_eq!(out.at(0, y, x), expected, "cell ({y},{x})");
            }
        }
    }

    #[test]
    fn conv_matches_naive_oracle() {
        let mut s = RngStream::new(5, 0);
        let (in_c, out_c, k) = (3, 2, 3);
        let input = Grid::from_values(in_c, 5, 6, (0..90).map(|_| s.uniform_in(-1.0, 1.0)).collect()).unwrap();
        let w: Vec<f64> = (0..out_c * in_c * k * k).map(|_| s.uniform_in(-1.0, 1.0)).collect();
        let b = vec![0.3, -0.2];
        let ps = conv_params(out_c, in_c, k, w.clone(), b.clone());
        let out = conv2d(&input, ps.get("w").unwrap(), ps.get("b").unwrap(), 1).unwrap();
        let oracle = naive_conv(&input, &w, &b, out_c, k);
        for (a, e) in out.values.iter().zip(&oracle.values) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_channel_mismatch_is_config_error() {
        let ps = conv_params(1, 2, 3, vec![0.0; 18], vec![0.0]);
        let input = Grid::<f64>::zeros(1, 4, 4);
        assert!(conv2d(&input, ps.get("w").unwrap(), ps.get("b").unwrap(), 1).is_err());
        let ps = conv_params(1, 1, 3, vec![0.0; 9], vec![0.0]);
        assert!(conv2d(&input, ps.get("w").unwrap(), ps.get("b").unwrap(), 0).is_err());
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut s = RngStream::new(8, 1);
        let (in_c, out_c, k) = (2, 3, 3);
        let input = Grid::from_values(in_c, 4, 5, (0..40).map(|_| s.uniform_in(-1.0, 1.0)).collect()).unwrap();
        let w: Vec<f64> = (0..out_c * in_c * k * k).map(|_| s.uniform_in(-1.0, 1.0)).collect();
        let b = vec![0.1, 0.2, -0.3];
        let ps = conv_params(out_c, in_c, k, w, b);
        let upstream: Vec<f64> = (0..out_c * 20).map(|_| s.uniform_in(-1.0, 1.0)).collect();
        let loss = |inp: &Grid<f64>, p: &ParamSet<f64>| -> f64 {
            let out = conv2d(inp, p.get("w").unwrap(), p.get("b").unwrap(), 1).unwrap();
            out.values.iter().zip(&upstream).map(|(a, b)| a * b).sum()
        };
        let d_out = Grid::from_values(out_c, 4, 5, upstream.clone()).unwrap();
        let mut dw = vec![0.0; out_c * in_c * k * k];
        let mut db = vec![0.0; out_c];
        let mut di = Grid::zeros(in_c, 4, 5);
        conv2d_backward(&input, ps.get("w").unwrap(), &d_out, &mut dw, &mut db, Some(&mut di));
        let h = 1e-6;
        for i in 0..dw.len() {
            let mut p = ps.clone();
            p.get_mut("w").unwrap().values[i] += h;
            let up = loss(&input, &p);
            p.get_mut("w").unwrap().values[i] -= 2.0 * h;
            let down = loss(&input, &p);
            assert!(((up - down) / (2.0 * h) - dw[i]).abs() < 1e-7);
        }
        for i in 0..input.values.len() {
            let mut inp = input.clone();
            inp.values[i] += h;
            let up = loss(&inp, &ps);
            inp.values[i] -= 2.0 * h;
            let down = loss(&inp, &ps);
            assert!(((up - down) / (2.0 * h) - di.values[i]).abs() < 1e-7);
        }
        for (o, g) in db.iter().enumerate() {
            let expected: f64 = upstream[o * 20..(o + 1) * 20].iter().sum();
            assert!((g - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_cases() {
        let mut ps = ParamSet::<f64>::new();
        ps.push("w", &[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        ps.push("b", &[2], vec![0.0, 0.0]).unwrap();
        ps.push("eye", &[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        ps.push("zero", &[2, 2], vec![0.0; 4]).unwrap();
        ps.push("bias", &[2], vec![0.5, -1.5]).unwrap();
        let b0 = ps.get("b").unwrap();
        assert_eq!(dense(&[1.0, 1.0], ps.get("w").unwrap(), b0).unwrap(), vec![3.0, 7.0]);
        assert_eq!(dense(&[0.25, -3.0], ps.get("eye").unwrap(), b0).unwrap(), vec![0.25, -3.0]);
        assert_eq!(
            dense(&[9.0, 9.0], ps.get("zero").unwrap(), ps.get("bias").unwrap()).unwrap(),
            vec![0.5, -1.5]
        );
        assert!(dense(&[1.0], ps.get("w").unwrap(), b0).is_err());
    }

    #[test]
    fn activations() {
        assert_eq!(relu(-2.0_f64), 0.0);
        assert_eq!(relu(3.0_f64), 3.0);
        assert_eq!(sigmoid(0.0_f64), 0.5);
        assert!((sigmoid(3.0_f64.ln()) - 0.75).abs() < 1e-15);
        assert!(sigmoid(-800.0_f64).is_finite() && sigmoid(800.0_f64) == 1.0);
        // derivative against central differences
        for x in [-3.0f64, -0.5, 0.0, 0.7, 4.0] {
            let h = 1e-6;
            let fd = (sigmoid(x + h) - sigmoid(x - h)) / (2.0 * h);
            assert!((fd - sigmoid_grad(x)).abs() < 1e-9);
        }
    }

    #[test]
    fn dropout_disabled_and_degenerate() {
        let xs = vec![1.0_f64, -2.0, 3.0];
        let mut s = RngStream::new(1, 1);
        let (out, mask) = dropout(&xs, 0.5, &mut s, false).unwrap();
        assert_eq!(out, xs);
        assert_eq!(mask, DropoutMask::ones(3));
        let (out, _) = dropout(&xs, 0.0, &mut s, true).unwrap();
        assert_eq!(out, xs);
        assert!(dropout(&xs, 1.0, &mut s, true).is_err());
    }

    #[test]
    fn dropout_replay_and_rate() {
        let xs = vec![1.0_f64; 64];
        let stream = RngStream::new(42, 9);
        let (a, ma) = dropout(&xs, 0.5, &mut stream.clone(), true).unwrap();
        let (b, mb) = dropout(&xs, 0.5, &mut stream.clone(), true).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert!(a.iter().all(|v| *v == 0.0 || *v == 2.0));

        let n = 100_000;
        let p = 0.3;
        let (_, m) = dropout(&vec![1.0_f64; n], p, &mut RngStream::new(3, 4), true).unwrap();
        let frac = m.kept() as f64 / n as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((frac - (1.0 - p)).abs() <= 3.0 * sigma, "survivor fraction {frac}");
    }
}
