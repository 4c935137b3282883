//! Raw slice kernels shared by the tape and the plain forward paths.
//! Image layout is HWC throughout.

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

/// Geometry of a stride-1, zero-padded ("same") convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl ConvGeometry {
    fn pad(&self) -> isize {
        (self.kernel / 2) as isize
    }

    /// Calls `f(out_pixel, in_pixel, tap)` for every valid kernel tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (h, w, k, p) = (
            self.height as isize,
            self.width as isize,
            self.kernel as isize,
            self.pad(),
        );
        for y in 0..h {
            for x in 0..w {
                let out_px = (y * w + x) as usize;
                for dy in 0..k {
                    let sy = y + dy - p;
                    if sy < 0 || sy >= h {
                        continue;
                    }
                    for dx in 0..k {
                        let sx = x + dx - p;
                        if sx < 0 || sx >= w {
                            continue;
                        }
                        f(out_px, (sy * w + sx) as usize, (dy * k + dx) as usize);
                    }
                }
            }
        }
    }
}

/// `out[y,x,co] = bias[co] + sum in[y+dy-p, x+dx-p, ci] * weight[dy,dx,ci,co]`.
pub fn conv2d_forward(g: ConvGeometry, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let (cin, cout) = (g.in_channels, g.out_channels);
    let mut out = Vec::with_capacity(g.height * g.width * cout);
    for _ in 0..g.height * g.width {
        out.extend_from_slice(bias);
    }
    g.for_each_tap(|o, i, tap| {
        let in_px = &input[i * cin..(i + 1) * cin];
        let out_px = &mut out[o * cout..(o + 1) * cout];
        for (ci, &v) in in_px.iter().enumerate() {
            let w_row = &weight[(tap * cin + ci) * cout..(tap * cin + ci + 1) * cout];
            for (acc, &wv) in out_px.iter_mut().zip(w_row) {
                *acc += v * wv;
            }
        }
    });
    out
}

/// Returns `(grad_input, grad_weight, grad_bias)`; `grad_input` is skipped
/// when `need_input` is false.
pub fn conv2d_backward(
    g: ConvGeometry,
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    need_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let (cin, cout) = (g.in_channels, g.out_channels);
    let mut grad_w = vec![0.0; weight.len()];
    let mut grad_b = vec![0.0; cout];
    let mut grad_in = need_input.then(|| vec![0.0; input.len()]);
    for go in grad_out.chunks_exact(cout) {
        for (b, &v) in grad_b.iter_mut().zip(go) {
            *b += v;
        }
    }
    g.for_each_tap(|o, i, tap| {
        let go = &grad_out[o * cout..(o + 1) * cout];
        let in_px = &input[i * cin..(i + 1) * cin];
        for (ci, &v) in in_px.iter().enumerate() {
            let base = (tap * cin + ci) * cout;
            let gw = &mut grad_w[base..base + cout];
            for (acc, &gv) in gw.iter_mut().zip(go) {
                *acc += v * gv;
            }
        }
        if let Some(gi) = grad_in.as_mut() {
            let gi_px = &mut gi[i * cin..(i + 1) * cin];
            for (ci, acc) in gi_px.iter_mut().enumerate() {
                let base = (tap * cin + ci) * cout;
                let w_row = &weight[base..base + cout];
                *acc += w_row.iter().zip(go).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    });
    (grad_in, grad_w, grad_b)
}

/// Per-pixel affine map: `out[n,k] = bias[k] + sum_d feat[n,d] * weight[k,d]`.
pub fn pixel_linear_forward(feat: &[f64], dim: usize, weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let k = bias.len();
    let mut out = Vec::with_capacity(feat.len() / dim * k);
    for f in feat.chunks_exact(dim) {
        for (c, &b) in bias.iter().enumerate() {
            let w = &weight[c * dim..(c + 1) * dim];
            out.push(b + f.iter().zip(w).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    out
}

pub fn pixel_linear_backward(
    feat: &[f64],
    dim: usize,
    weight: &[f64],
    grad_out: &[f64],
    need_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let k = weight.len() / dim;
    let mut grad_w = vec![0.0; weight.len()];
    let mut grad_b = vec![0.0; k];
    let mut grad_in = need_input.then(|| vec![0.0; feat.len()]);
    for (n, (f, go)) in feat.chunks_exact(dim).zip(grad_out.chunks_exact(k)).enumerate() {
        for (c, &g) in go.iter().enumerate() {
            grad_b[c] += g;
            let gw = &mut grad_w[c * dim..(c + 1) * dim];
            for (acc, &fv) in gw.iter_mut().zip(f) {
                *acc += g * fv;
            }
        }
        if let Some(gi) = grad_in.as_mut() {
            let gi_px = &mut gi[n * dim..(n + 1) * dim];
            for (c, &g) in go.iter().enumerate() {
                let w = &weight[c * dim..(c + 1) * dim];
                for (acc, &wv) in gi_px.iter_mut().zip(w) {
                    *acc += g * wv;
                }
            }
        }
    }
    (grad_in, grad_w, grad_b)
}
