//! Dense CHW kernels for the desk-scale backbone.
//!
//! All buffers are planar (`[channel][row][col]`, row-major). The 3x3
//! convolution uses zero padding of one pixel and unit stride so spatial size
//! is preserved; downsampling is a separate 2x2 average pool.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2};

/// Row/col range of output positions for which `pos + offset` stays inside `0..len`.
#[inline]
fn valid_range(len: usize, offset: isize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (len as isize - offset).min(len as isize).max(0) as usize;
    (lo, hi.max(lo))
}

/// Unfolds the zero-padded 3x3 neighbourhoods of `input` into a
/// `(c_in * 9, h * w)` matrix whose row order matches the weight layout.
fn im2col(input: &[f32], c_in: usize, h: usize, w: usize) -> Vec<f32> {
    let plane = h * w;
    let mut cols = vec![0.0f32; c_in * 9 * plane];
    for ic in 0..c_in {
        let in_plane = &input[ic * plane..(ic + 1) * plane];
        for ky in 0..3 {
            let dy = ky as isize - 1;
            let (y0, y1) = valid_range(h, dy);
            for kx in 0..3 {
                let dx = kx as isize - 1;
                let (x0, x1) = valid_range(w, dx);
                let row = &mut cols[((ic * 9) + ky * 3 + kx) * plane..][..plane];
                for y in y0..y1 {
                    let src = ((y as isize + dy) as usize) * w;
                    let src = (src as isize + x0 as isize + dx) as usize;
                    row[y * w + x0..y * w + x1].copy_from_slice(&in_plane[src..src + (x1 - x0)]);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input planes.
fn col2im(cols: &[f32], c_in: usize, h: usize, w: usize, out: &mut [f32]) {
    let plane = h * w;
    for ic in 0..c_in {
        let out_plane = &mut out[ic * plane..(ic + 1) * plane];
        for ky in 0..3 {
            let dy = ky as isize - 1;
            let (y0, y1) = valid_range(h, dy);
            for kx in 0..3 {
                let dx = kx as isize - 1;
                let (x0, x1) = valid_range(w, dx);
                let row = &cols[((ic * 9) + ky * 3 + kx) * plane..][..plane];
                for y in y0..y1 {
                    let dst = ((y as isize + dy) as usize) * w;
                    let dst = (dst as isize + x0 as isize + dx) as usize;
                    for (d, g) in out_plane[dst..dst + (x1 - x0)].iter_mut().zip(&row[y * w + x0..y * w + x1]) {
                        *d += g;
                    }
                }
            }
        }
    }
}

/// `out[oc] = bias[oc] + sum_ic conv3x3(input[ic], weight[oc][ic])`.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_forward(
    input: &[f32],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f32],
    bias: &[f32],
    c_out: usize,
    out: &mut [f32],
) {
    let plane = h * w;
    debug_assert_eq!(input.len(), c_in * plane);
    debug_assert_eq!(weight.len(), c_out * c_in * 9);
    debug_assert_eq!(out.len(), c_out * plane);
    for (oc, out_plane) in out.chunks_exact_mut(plane).enumerate() {
        out_plane.fill(bias[oc]);
    }
    let cols = im2col(input, c_in, h, w);
    let a = ArrayView2::from_shape((c_out, c_in * 9), weight).expect("weight shape");
    let b = ArrayView2::from_shape((c_in * 9, plane), &cols[..]).expect("column shape");
    let mut c = ArrayViewMut2::from_shape((c_out, plane), out).expect("output shape");
    general_mat_mul(1.0, &a, &b, 1.0, &mut c);
}

/// Backward pass of [`conv3x3_forward`].
///
/// `grad_out` is the gradient w.r.t. the convolution output (pre-activation).
/// Weight and bias gradients are accumulated when `grad_weight` is given;
/// the input gradient is written (overwritten) when `grad_input` is given.
#[allow(clippy::too_many_arguments)]
pub fn conv3x3_backward(
    input: &[f32],
    c_in: usize,
    h: usize,
    w: usize,
    weight: &[f32],
    c_out: usize,
    grad_out: &[f32],
    grad_weight: Option<(&mut [f32], &mut [f32])>,
    grad_input: Option<&mut [f32]>,
) {
    let plane = h * w;
    let g = ArrayView2::from_shape((c_out, plane), grad_out).expect("gradient shape");
    if let Some((gw, gb)) = grad_weight {
        for (b, g_plane) in gb.iter_mut().zip(grad_out.chunks_exact(plane)) {
            *b += g_plane.iter().sum::<f32>();
        }
        let cols = im2col(input, c_in, h, w);
        let cols = ArrayView2::from_shape((c_in * 9, plane), &cols[..]).expect("column shape");
        let mut gw = ArrayViewMut2::from_shape((c_out, c_in * 9), gw).expect("weight shape");
        general_mat_mul(1.0, &g, &cols.t(), 1.0, &mut gw);
    }
    if let Some(gi) = grad_input {
        gi.fill(0.0);
        let wt = ArrayView2::from_shape((c_out, c_in * 9), weight).expect("weight shape");
        let mut gcols = Array2::<f32>::zeros((c_in * 9, plane));
        general_mat_mul(1.0, &wt.t(), &g, 0.0, &mut gcols);
        col2im(gcols.as_slice().expect("standard layout"), c_in, h, w, gi);
    }
}

pub fn relu_inplace(x: &mut [f32]) {
    for v in x.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries whose activation was clipped by the rectifier.
pub fn relu_backward_inplace(activation: &[f32], grad: &mut [f32]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2x2 average pool with stride 2; a trailing odd row/column is dropped.
pub fn avg_pool2_forward(input: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        let src = &input[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for y in 0..oh {
            let r0 = &src[2 * y * w..];
            let r1 = &src[(2 * y + 1) * w..];
            for x in 0..ow {
                dst[y * ow + x] = 0.25 * (r0[2 * x] + r0[2 * x + 1] + r1[2 * x] + r1[2 * x + 1]);
            }
        }
    }
    out
}

pub fn avg_pool2_backward(grad_out: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (h / 2, w / 2);
    let mut grad_in = vec![0.0f32; c * h * w];
    for ch in 0..c {
        let g = &grad_out[ch * oh * ow..(ch + 1) * oh * ow];
        let dst = &mut grad_in[ch * h * w..(ch + 1) * h * w];
        for y in 0..oh {
            for x in 0..ow {
                let v = 0.25 * g[y * ow + x];
                dst[2 * y * w + 2 * x] = v;
                dst[2 * y * w + 2 * x + 1] = v;
                dst[(2 * y + 1) * w + 2 * x] = v;
                dst[(2 * y + 1) * w + 2 * x + 1] = v;
            }
        }
    }
    grad_in
}

pub fn global_avg_pool(input: &[f32], c: usize, plane: usize) -> Vec<f32> {
    let inv = 1.0 / plane as f32;
    (0..c)
        .map(|ch| input[ch * plane..(ch + 1) * plane].iter().sum::<f32>() * inv)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct, index-by-index convolution used as a reference.
    fn naive_conv(input: &[f32], c_in: usize, h: usize, w: usize, weight: &[f32], bias: &[f32], c_out: usize) -> Vec<f32> {
        let mut out = vec![0.0; c_out * h * w];
        for oc in 0..c_out {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[oc];
                    for ic in 0..c_in {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = y as isize + ky as isize - 1;
                                let sx = x as isize + kx as isize - 1;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += weight[((oc * c_in + ic) * 3 + ky) * 3 + kx]
                                    * input[(ic * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[(oc * h + y) * w + x] = acc;
                }
            }
        }
        out
    }

    fn pseudo(n: usize, salt: u32) -> Vec<f32> {
        (0..n)
            .map(|i| (((i as u32).wrapping_mul(2654435761).wrapping_add(salt) >> 8) % 1000) as f32 / 500.0 - 1.0)
            .collect()
    }

    #[test]
    fn conv_matches_naive_reference() {
        let (c_in, c_out, h, w) = (3, 4, 5, 7);
        let input = pseudo(c_in * h * w, 1);
        let weight = pseudo(c_out * c_in * 9, 2);
        let bias = pseudo(c_out, 3);
        let mut out = vec![0.0; c_out * h * w];
        conv3x3_forward(&input, c_in, h, w, &weight, &bias, c_out, &mut out);
        let reference = naive_conv(&input, c_in, h, w, &weight, &bias, c_out);
        for (a, b) in out.iter().zip(&reference) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        // <grad_out, conv(x)> is linear in both x and w; check both gradients
        // against the directional derivative computed from the forward pass.
        let (c_in, c_out, h, w) = (2, 3, 4, 6);
        let input = pseudo(c_in * h * w, 11);
        let weight = pseudo(c_out * c_in * 9, 12);
        let bias = vec![0.0; c_out];
        let grad_out = pseudo(c_out * h * w, 13);
        let mut gw = vec![0.0; weight.len()];
        let mut gb = vec![0.0; c_out];
        let mut gi = vec![0.0; input.len()];
        conv3x3_backward(&input, c_in, h, w, &weight, c_out, &grad_out, Some((&mut gw, &mut gb)), Some(&mut gi));

        let dot = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| (x * y) as f64).sum::<f64>();
        let direction = pseudo(input.len(), 14);
        let lin = naive_conv(&direction, c_in, h, w, &weight, &bias, c_out);
        assert!((dot(&grad_out, &lin) - dot(&gi, &direction)).abs() < 1e-3);

        let wdir = pseudo(weight.len(), 15);
        let lin = naive_conv(&input, c_in, h, w, &wdir, &bias, c_out);
        assert!((dot(&grad_out, &lin) - dot(&gw, &wdir)).abs() < 1e-3);

        let total: f32 = grad_out[..h * w].iter().sum();
        assert!((gb[0] - total).abs() < 1e-4);
    }

    #[test]
    fn pool_backward_spreads_evenly() {
        let input: Vec<f32> = (0..16).map(|v| v as f32).collect();
        let out = avg_pool2_forward(&input, 1, 4, 4);
        assert_eq!(out, vec![2.5, 4.5, 10.5, 12.5]);
        let g = avg_pool2_backward(&[1.0, 0.0, 0.0, 4.0], 1, 4, 4);
        assert_eq!(g[0], 0.25);
        assert_eq!(g[15], 1.0);
        assert_eq!(g.iter().sum::<f32>(), 5.0);
    }

    #[test]
    fn odd_pool_drops_trailing_row() {
        let input = vec![1.0f32; 9];
        assert_eq!(avg_pool2_forward(&input, 1, 3, 3), vec![1.0]);
    }
}
