//! Same-padded, stride-1, dilated 2-d convolution and its exact adjoint.

use super::Tensor;
use crate::error::{Error, Result};

/// A convolution with square odd kernel, zero same-padding and stride 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `(out_ch, in_ch, k, k)`
    pub kernel: Tensor,
    pub bias: Vec<f64>,
    pub dilation: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn new(kernel: Tensor, bias: Vec<f64>, dilation: usize) -> Result<Self> {
        check_params(&kernel, &bias, dilation)?;
        Ok(ConvLayer {
            kernel,
            bias,
            dilation,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.shape()[1]
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.shape()[2]
    }
}

pub fn conv2d_forward(input: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    forward(input, &layer.kernel, &layer.bias, layer.dilation)
}

pub fn conv2d_backward(input: &Tensor, layer: &ConvLayer, grad_out: &Tensor) -> Result<ConvGrads> {
    let (kernel, bias, gi) = backward(input, &layer.kernel, layer.dilation, grad_out, true)?;
    Ok(ConvGrads {
        input: gi.expect("requested"),
        kernel,
        bias,
    })
}

fn check_params(kernel: &Tensor, bias: &[f64], dilation: usize) -> Result<()> {
    let s = kernel.shape();
    if s.len() != 4 || s[2] != s[3] || s[2].is_multiple_of(2) {
        return Err(Error::Config(format!(
            "kernel must be (out, in, k, k) with odd k, got {s:?}"
        )));
    }
    if bias.len() != s[0] {
        return Err(Error::shape("conv bias", &[s[0]], &[bias.len()]));
    }
    if dilation == 0 {
        return Err(Error::Config("dilation must be positive".into()));
    }
    Ok(())
}

/// Tap geometry: for offset `off` along an axis of length `n`, the output
/// range whose shifted source index stays inside `0..n`.
#[inline]
fn valid_range(off: isize, n: usize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (n as isize - off).clamp(0, n as isize) as usize;
    (lo.min(hi), hi)
}

pub(crate) fn forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &[f64],
    dilation: usize,
) -> Result<Tensor> {
    check_params(kernel, bias, dilation)?;
    let (ci, rows, cols) = input.dims3()?;
    let ks = kernel.shape();
    let (co, k) = (ks[0], ks[2]);
    if ks[1] != ci {
        return Err(Error::shape(
            "conv2d input channels",
            &[ks[1], rows, cols],
            &[ci, rows, cols],
        ));
    }
    let pad = (dilation * (k - 1) / 2) as isize;
    let kd = kernel.data();
    let plane = rows * cols;
    let mut out = Tensor::zeros(&[co, rows, cols]);
    for (o, out_plane) in out.data_mut().chunks_exact_mut(plane).enumerate() {
        out_plane.fill(bias[o]);
        for i in 0..ci {
            let in_plane = input.channel(i);
            let kbase = (o * ci + i) * k * k;
            for ky in 0..k {
                let dy = (ky * dilation) as isize - pad;
                let (y0, y1) = valid_range(dy, rows);
                for kx in 0..k {
                    let w = kd[kbase + ky * k + kx];
                    let dx = (kx * dilation) as isize - pad;
                    let (x0, x1) = valid_range(dx, cols);
                    if x0 >= x1 {
                        continue;
                    }
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let src_start = (sy * cols + x0) as isize + dx;
                        let src = &in_plane[src_start as usize..src_start as usize + (x1 - x0)];
                        let dst = &mut out_plane[y * cols + x0..y * cols + x1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d += w * s;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Returns `(grad_kernel, grad_bias, grad_input)`; the input adjoint is skipped
/// when `want_input` is false.
pub(crate) fn backward(
    input: &Tensor,
    kernel: &Tensor,
    dilation: usize,
    grad_out: &Tensor,
    want_input: bool,
) -> Result<(Tensor, Vec<f64>, Option<Tensor>)> {
    let (ci, rows, cols) = input.dims3()?;
    let ks = kernel.shape();
    if ks.len() != 4 || ks[1] != ci {
        return Err(Error::shape("conv2d_backward kernel", &[ks[0], ci], ks));
    }
    let (co, k) = (ks[0], ks[2]);
    if grad_out.shape() != [co, rows, cols] {
        return Err(Error::shape(
            "conv2d_backward grad_out",
            &[co, rows, cols],
            grad_out.shape(),
        ));
    }
    let pad = (dilation * (k - 1) / 2) as isize;
    let kd = kernel.data();
    let mut gk = Tensor::zeros(ks);
    let mut gb = vec![0.0; co];
    let mut gi = want_input.then(|| Tensor::zeros(&[ci, rows, cols]));

    for (o, gbo) in gb.iter_mut().enumerate() {
        let g_plane = grad_out.channel(o);
        *gbo = g_plane.iter().sum();
        for i in 0..ci {
            let in_plane = input.channel(i);
            let kbase = (o * ci + i) * k * k;
            for ky in 0..k {
                let dy = (ky * dilation) as isize - pad;
                let (y0, y1) = valid_range(dy, rows);
                for kx in 0..k {
                    let dx = (kx * dilation) as isize - pad;
                    let (x0, x1) = valid_range(dx, cols);
                    if x0 >= x1 {
                        continue;
                    }
                    let w = kd[kbase + ky * k + kx];
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        let sy = (y as isize + dy) as usize;
                        let s0 = ((sy * cols + x0) as isize + dx) as usize;
                        let g = &g_plane[y * cols + x0..y * cols + x1];
                        let src = &in_plane[s0..s0 + (x1 - x0)];
                        acc += g.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                        if let Some(gi) = gi.as_mut() {
                            let dst = &mut gi.channel_mut(i)[s0..s0 + (x1 - x0)];
                            for (d, gv) in dst.iter_mut().zip(g) {
                                *d += w * gv;
                            }
                        }
                    }
                    gk.data_mut()[kbase + ky * k + kx] = acc;
                }
            }
        }
    }
    Ok((gk, gb, gi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_layer(rng: &mut ChaCha8Rng, co: usize, ci: usize, k: usize, d: usize) -> ConvLayer {
        let kernel = random_tensor(rng, &[co, ci, k, k]);
        let bias = (0..co).map(|_| rng.random_range(-0.5..0.5)).collect();
        ConvLayer::new(kernel, bias, d).unwrap()
    }

    /// Direct per-output-cell evaluation with explicit bounds checks.
    fn naive_conv(input: &Tensor, layer: &ConvLayer) -> Tensor {
        let (ci, rows, cols) = input.dims3().unwrap();
        let (co, k, d) = (layer.out_channels(), layer.kernel_size(), layer.dilation);
        let pad = (d * (k - 1) / 2) as isize;
        let kd = layer.kernel.data();
        let mut out = Tensor::zeros(&[co, rows, cols]);
        for o in 0..co {
            for y in 0..rows {
                for x in 0..cols {
                    let mut acc = layer.bias[o];
                    for i in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = y as isize + (ky * d) as isize - pad;
                                let sx = x as isize + (kx * d) as isize - pad;
                                if sy < 0 || sx < 0 || sy >= rows as isize || sx >= cols as isize {
                                    continue;
                                }
                                let v = input.channel(i)[sy as usize * cols + sx as usize];
                                acc += kd[((o * ci + i) * k + ky) * k + kx] * v;
                            }
                        }
                    }
                    out.data_mut()[(o * rows + y) * cols + x] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random_tensor(&mut rng, &[1, 6, 7]);
        let layer = ConvLayer::new(Tensor::filled(&[1, 1, 1, 1], 1.0), vec![0.0], 1).unwrap();
        assert_eq!(conv2d_forward(&input, &layer).unwrap(), input);
        let g = random_tensor(&mut rng, &[1, 6, 7]);
        assert_eq!(conv2d_backward(&input, &layer, &g).unwrap().input, g);
    }

    #[test]
    fn zero_input_gives_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let layer = random_layer(&mut rng, 3, 2, 3, 2);
        let out = conv2d_forward(&Tensor::zeros(&[2, 5, 5]), &layer).unwrap();
        for o in 0..3 {
            assert!(out.channel(o).iter().all(|&v| v == layer.bias[o]));
        }
    }

    #[test]
    fn matches_naive_oracle_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let input = random_tensor(&mut rng, &[2, 8, 8]);
        for d in 1..=4 {
            let layer = random_layer(&mut rng, 3, 2, 3, d);
            assert_eq!(
                conv2d_forward(&input, &layer).unwrap(),
                naive_conv(&input, &layer)
            );
        }
    }

    #[test]
    fn shape_preserved_for_dilations_up_to_eight() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = random_tensor(&mut rng, &[2, 8, 9]);
        for d in 1..=8 {
            let layer = random_layer(&mut rng, 4, 2, 3, d);
            assert_eq!(conv2d_forward(&input, &layer).unwrap().shape(), &[4, 8, 9]);
            assert_eq!(
                conv2d_forward(&input, &layer).unwrap(),
                naive_conv(&input, &layer)
            );
        }
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let layer = random_layer(&mut rng, 3, 2, 3, 1);
        let err = conv2d_forward(&Tensor::zeros(&[4, 5, 5]), &layer).unwrap_err();
        assert!(err.to_string().contains('4'), "{err}");
        let bad_grad = Tensor::zeros(&[2, 5, 5]);
        assert!(conv2d_backward(&Tensor::zeros(&[2, 5, 5]), &layer, &bad_grad).is_err());
    }

    #[test]
    fn zero_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let layer = random_layer(&mut rng, 3, 2, 3, 2);
        let input = random_tensor(&mut rng, &[2, 6, 6]);
        let g = conv2d_backward(&input, &layer, &Tensor::zeros(&[3, 6, 6])).unwrap();
        assert!(g
            .input
            .data()
            .iter()
            .chain(g.kernel.data())
            .chain(&g.bias)
            .all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let input = random_tensor(&mut rng, &[2, 8, 8]);
        let weights = random_tensor(&mut rng, &[3, 8, 8]);
        for d in [1, 2, 3] {
            let layer = random_layer(&mut rng, 3, 2, 3, d);
            let loss = |inp: &Tensor, l: &ConvLayer| -> f64 {
                let out = conv2d_forward(inp, l).unwrap();
                out.data()
                    .iter()
                    .zip(weights.data())
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let grads = conv2d_backward(&input, &layer, &weights).unwrap();
            let h = 1e-6;
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
            for j in 0..layer.kernel.len() {
                let mut p = layer.clone();
                p.kernel.data_mut()[j] += h;
                let mut m = layer.clone();
                m.kernel.data_mut()[j] -= h;
                let fd = (loss(&input, &p) - loss(&input, &m)) / (2.0 * h);
                assert!(rel(grads.kernel.data()[j], fd) < 1e-5, "kernel {j}");
            }
            for j in 0..3 {
                let mut p = layer.clone();
                p.bias[j] += h;
                let mut m = layer.clone();
                m.bias[j] -= h;
                let fd = (loss(&input, &p) - loss(&input, &m)) / (2.0 * h);
                assert!(rel(grads.bias[j], fd) < 1e-5, "bias {j}");
            }
            for j in 0..input.len() {
                let mut p = input.clone();
                p.data_mut()[j] += h;
                let mut m = input.clone();
                m.data_mut()[j] -= h;
                let fd = (loss(&p, &layer) - loss(&m, &layer)) / (2.0 * h);
                assert!(rel(grads.input.data()[j], fd) < 1e-5, "input {j}");
            }
        }
    }

    #[test]
    fn forward_is_linear_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut layer = random_layer(&mut rng, 3, 2, 3, 2);
        layer.bias = vec![0.0; 3];
        let x = random_tensor(&mut rng, &[2, 8, 8]);
        let y = random_tensor(&mut rng, &[2, 8, 8]);
        let (a, b) = (0.7, -1.3);
        let mut combo = x.clone();
        combo.scale(a);
        combo.add_scaled(&y, b).unwrap();
        let lhs = conv2d_forward(&combo, &layer).unwrap();
        let mut rhs = conv2d_forward(&x, &layer).unwrap();
        rhs.scale(a);
        rhs.add_scaled(&conv2d_forward(&y, &layer).unwrap(), b)
            .unwrap();
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            assert!((l - r).abs() < 1e-12);
        }
    }
}
