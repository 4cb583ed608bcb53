//! Forward and backward passes for the handful of layer kinds the two
//! networks need. All math in f64; inputs are channel-height-width arrays.
//! Backward functions return the input gradient and accumulate parameter
//! gradients into caller-provided slices.

use ndarray::Array3;

pub const LEAK: f64 = 0.01;

/// 3x3 convolution, padding 1. Weight layout [out_c][in_c][3][3].
pub fn conv3x3_forward(
    x: &Array3<f64>,
    w: &[f64],
    b: &[f64],
    out_c: usize,
    stride: usize,
) -> Array3<f64> {
    let (in_c, h, wd) = x.dim();
    debug_assert_eq!(w.len(), out_c * in_c * 9);
    let oh = (h + 2 - 3) / stride + 1;
    let ow = (wd + 2 - 3) / stride + 1;
    let mut y = Array3::zeros((out_c, oh, ow));
    for o in 0..out_c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b[o];
                for c in 0..in_c {
                    let wbase = ((o * in_c) + c) * 9;
                    for ky in 0..3 {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            acc += w[wbase + ky * 3 + kx] * x[[c, iy as usize, ix as usize]];
                        }
                    }
                }
                y[[o, oy, ox]] = acc;
            }
        }
    }
    y
}

/// Backward of `conv3x3_forward`. Accumulates into `gw`/`gb`, returns dL/dx.
pub fn conv3x3_backward(
    x: &Array3<f64>,
    w: &[f64],
    out_c: usize,
    stride: usize,
    gy: &Array3<f64>,
    gw: &mut [f64],
    gb: &mut [f64],
) -> Array3<f64> {
    let (in_c, h, wd) = x.dim();
    let (_, oh, ow) = gy.dim();
    let mut gx = Array3::zeros((in_c, h, wd));
    for o in 0..out_c {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = gy[[o, oy, ox]];
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                for c in 0..in_c {
                    let wbase = ((o * in_c) + c) * 9;
                    for ky in 0..3 {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let (iy, ix) = (iy as usize, ix as usize);
                            gw[wbase + ky * 3 + kx] += g * x[[c, iy, ix]];
                            gx[[c, iy, ix]] += g * w[wbase + ky * 3 + kx];
                        }
                    }
                }
            }
        }
    }
    gx
}

pub fn leaky_relu_forward(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(|v| if v > 0.0 { v } else { LEAK * v })
}

pub fn leaky_relu_backward(x: &Array3<f64>, gy: &Array3<f64>) -> Array3<f64> {
    let mut gx = gy.clone();
    for (g, v) in gx.iter_mut().zip(x.iter()) {
        if *v <= 0.0 {
            *g *= LEAK;
        }
    }
    gx
}

pub fn leaky_relu_vec_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { LEAK * v }).collect()
}

pub fn leaky_relu_vec_backward(x: &[f64], gy: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(gy)
        .map(|(&v, &g)| if v > 0.0 { g } else { LEAK * g })
        .collect()
}

/// Dense layer y = Wx + b, weight layout [out][in].
pub fn dense_forward(x: &[f64], w: &[f64], b: &[f64], out_dim: usize) -> Vec<f64> {
    let in_dim = x.len();
    debug_assert_eq!(w.len(), out_dim * in_dim);
    let mut y = Vec::with_capacity(out_dim);
    for o in 0..out_dim {
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let mut acc = b[o];
        for (wi, xi) in row.iter().zip(x) {
            acc += wi * xi;
        }
        y.push(acc);
    }
    y
}

pub fn dense_backward(
    x: &[f64],
    w: &[f64],
    out_dim: usize,
    gy: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
) -> Vec<f64> {
    let in_dim = x.len();
    let mut gx = vec![0.0; in_dim];
    for o in 0..out_dim {
        let g = gy[o];
        gb[o] += g;
        let row = &w[o * in_dim..(o + 1) * in_dim];
        let grow = &mut gw[o * in_dim..(o + 1) * in_dim];
        for i in 0..in_dim {
            grow[i] += g * x[i];
            gx[i] += g * row[i];
        }
    }
    gx
}

/// Global average pool over spatial dims.
pub fn gap_forward(x: &Array3<f64>) -> Vec<f64> {
    let (c, h, w) = x.dim();
    let n = (h * w) as f64;
    (0..c)
        .map(|ch| x.index_axis(ndarray::Axis(0), ch).sum() / n)
        .collect()
}

pub fn gap_backward(dim: (usize, usize, usize), gy: &[f64]) -> Array3<f64> {
    let (c, h, w) = dim;
    let n = (h * w) as f64;
    let mut gx = Array3::zeros((c, h, w));
    for ch in 0..c {
        let g = gy[ch] / n;
        gx.index_axis_mut(ndarray::Axis(0), ch).fill(g);
    }
    gx
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2_forward(x: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    let mut y = Array3::zeros((c, h * 2, w * 2));
    for ch in 0..c {
        for yy in 0..h * 2 {
            for xx in 0..w * 2 {
                y[[ch, yy, xx]] = x[[ch, yy / 2, xx / 2]];
            }
        }
    }
    y
}

pub fn upsample2_backward(dim: (usize, usize, usize), gy: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = dim;
    let mut gx = Array3::zeros((c, h, w));
    for ch in 0..c {
        for yy in 0..h * 2 {
            for xx in 0..w * 2 {
                gx[[ch, yy / 2, xx / 2]] += gy[[ch, yy, xx]];
            }
        }
    }
    gx
}

/// Channel-wise concat of two maps with equal spatial dims.
pub fn concat_forward(a: &Array3<f64>, b: &Array3<f64>) -> Array3<f64> {
    let (ca, h, w) = a.dim();
    let (cb, hb, wb) = b.dim();
    debug_assert_eq!((h, w), (hb, wb));
    let mut y = Array3::zeros((ca + cb, h, w));
    y.slice_mut(ndarray::s![..ca, .., ..]).assign(a);
    y.slice_mut(ndarray::s![ca.., .., ..]).assign(b);
    y
}

pub fn concat_backward(ca: usize, gy: &Array3<f64>) -> (Array3<f64>, Array3<f64>) {
    let ga = gy.slice(ndarray::s![..ca, .., ..]).to_owned();
    let gb = gy.slice(ndarray::s![ca.., .., ..]).to_owned();
    (ga, gb)
}

pub fn tanh_forward(x: &Array3<f64>) -> Array3<f64> {
    x.mapv(f64::tanh)
}

pub fn tanh_backward(y: &Array3<f64>, gy: &Array3<f64>) -> Array3<f64> {
    let mut gx = gy.clone();
    for (g, t) in gx.iter_mut().zip(y.iter()) {
        *g *= 1.0 - t * t;
    }
    gx
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    fn rand_arr(dim: (usize, usize, usize), seed: u64) -> Array3<f64> {
        use rand::Rng;
        let mut rng = crate::rng::stream(seed, "ops-test");
        Array3::from_shape_fn(dim, |_| rng.gen_range(-1.0..1.0))
    }

    /// Finite-difference check of conv backward, both params and input.
    #[test]
    fn conv_gradients_match_finite_differences() {
        use rand::Rng;
        let mut rng = crate::rng::stream(3, "conv-fd");
        let x = rand_arr((2, 5, 5), 1);
        let out_c = 3;
        let mut w: Vec<f64> = (0..out_c * 2 * 9).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let b: Vec<f64> = (0..out_c).map(|_| rng.gen_range(-0.5..0.5)).collect();
        // loss = sum(y^2)/2 so gy = y
        let y = conv3x3_forward(&x, &w, &b, out_c, 2);
        let mut gw = vec![0.0; w.len()];
        let mut gb = vec![0.0; b.len()];
        let gx = conv3x3_backward(&x, &w, out_c, 2, &y, &mut gw, &mut gb);
        let h = 1e-6;
        let loss = |w: &[f64], x: &Array3<f64>| -> f64 {
            let y = conv3x3_forward(x, w, &b, out_c, 2);
            y.iter().map(|v| v * v).sum::<f64>() / 2.0
        };
        for i in (0..w.len()).step_by(7) {
            let orig = w[i];
            w[i] = orig + h;
            let lp = loss(&w, &x);
            w[i] = orig - h;
            let lm = loss(&w, &x);
            w[i] = orig;
            let num = (lp - lm) / (2.0 * h);
            assert!((num - gw[i]).abs() < 1e-5 * (1.0 + num.abs()), "gw[{i}]: {num} vs {}", gw[i]);
        }
        let mut xp = x.clone();
        for i in 0..5 {
            let idx = [i % 2, i, (i * 2) % 5];
            let orig = xp[idx];
            xp[idx] = orig + h;
            let lp = loss(&w, &xp);
            xp[idx] = orig - h;
            let lm = loss(&w, &xp);
            xp[idx] = orig;
            let num = (lp - lm) / (2.0 * h);
            assert!((num - gx[idx]).abs() < 1e-5 * (1.0 + num.abs()));
        }
    }

    #[test]
    fn upsample_backward_sums_children() {
        let x = rand_arr((1, 2, 2), 5);
        let y = upsample2_forward(&x);
        assert_eq!(y[[0, 1, 1]], x[[0, 0, 0]]);
        let gy = Array3::ones((1, 4, 4));
        let gx = upsample2_backward((1, 2, 2), &gy);
        assert_eq!(gx[[0, 0, 0]], 4.0);
    }

    #[test]
    fn gap_is_mean() {
        let x = rand_arr((2, 3, 3), 9);
        let y = gap_forward(&x);
        let m: f64 = x.index_axis(ndarray::Axis(0), 0).mean().unwrap();
        assert!((y[0] - m).abs() < 1e-12);
    }
}
