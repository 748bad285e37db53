//! Slice-level numeric kernels shared by forward and backward passes.

use crate::par;

/// `c[m×n] = a[m×k] · b[k×n]`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    par::for_each_chunk_mut(&mut c, n.max(1), m * k * n, |i, row| {
        let ar = &a[i * k..(i + 1) * k];
        for (p, &aip) in ar.iter().enumerate() {
            let br = &b[p * n..(p + 1) * n];
            for (cj, &bj) in row.iter_mut().zip(br) {
                *cj += aip * bj;
            }
        }
    });
    c
}

/// `aᵀ · g` for `a[m×k]`, `g[m×n]`, giving `[k×n]`.
pub fn matmul_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    par::for_each_chunk_mut(&mut out, n.max(1), m * k * n, |p, row| {
        for i in 0..m {
            let aip = a[i * k + p];
            let gr = &g[i * n..(i + 1) * n];
            for (o, &gj) in row.iter_mut().zip(gr) {
                *o += aip * gj;
            }
        }
    });
    out
}

/// `g · bᵀ` for `g[m×n]`, `b[k×n]`, giving `[m×k]`.
pub fn matmul_nt(g: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    par::for_each_chunk_mut(&mut out, k.max(1), m * k * n, |i, row| {
        let gr = &g[i * n..(i + 1) * n];
        for (p, o) in row.iter_mut().enumerate() {
            let br = &b[p * n..(p + 1) * n];
            *o = gr.iter().zip(br).map(|(x, y)| x * y).sum();
        }
    });
    out
}

/// Geometry of a same-padded, stride-1 square convolution.
#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvDims {
    fn pad(&self) -> isize {
        (self.k / 2) as isize
    }

    fn work(&self) -> usize {
        self.batch * self.cin * self.cout * self.h * self.w * self.k * self.k
    }
}

pub fn conv2d_forward(x: &[f64], kernel: &[f64], bias: &[f64], d: ConvDims) -> Vec<f64> {
    let (hw, kk) = (d.h * d.w, d.k * d.k);
    let pad = d.pad();
    let mut out = vec![0.0; d.batch * d.cout * hw];
    par::for_each_chunk_mut(&mut out, d.cout * hw, d.work(), |b, ob| {
        let xb = &x[b * d.cin * hw..(b + 1) * d.cin * hw];
        for co in 0..d.cout {
            let o = &mut ob[co * hw..(co + 1) * hw];
            o.iter_mut().for_each(|v| *v = bias[co]);
            for ci in 0..d.cin {
                let xc = &xb[ci * hw..(ci + 1) * hw];
                let kc = &kernel[(co * d.cin + ci) * kk..(co * d.cin + ci + 1) * kk];
                for ky in 0..d.k {
                    for kx in 0..d.k {
                        let wv = kc[ky * d.k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let dy = ky as isize - pad;
                        let dx = kx as isize - pad;
                        for oy in 0..d.h {
                            let iy = oy as isize + dy;
                            if iy < 0 || iy >= d.h as isize {
                                continue;
                            }
                            let xrow = &xc[iy as usize * d.w..(iy as usize + 1) * d.w];
                            let orow = &mut o[oy * d.w..(oy + 1) * d.w];
                            let lo = (-dx).max(0) as usize;
                            let hi = (d.w as isize - dx).min(d.w as isize) as usize;
                            for ox in lo..hi {
                                orow[ox] += wv * xrow[(ox as isize + dx) as usize];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradient with respect to the convolution input.
pub fn conv2d_grad_input(g: &[f64], kernel: &[f64], d: ConvDims) -> Vec<f64> {
    let (hw, kk) = (d.h * d.w, d.k * d.k);
    let pad = d.pad();
    let mut gx = vec![0.0; d.batch * d.cin * hw];
    par::for_each_chunk_mut(&mut gx, d.cin * hw, d.work(), |b, gxb| {
        let gb = &g[b * d.cout * hw..(b + 1) * d.cout * hw];
        for co in 0..d.cout {
            let gc = &gb[co * hw..(co + 1) * hw];
            for ci in 0..d.cin {
                let kc = &kernel[(co * d.cin + ci) * kk..(co * d.cin + ci + 1) * kk];
                let gxc = &mut gxb[ci * hw..(ci + 1) * hw];
                for ky in 0..d.k {
                    for kx in 0..d.k {
                        let wv = kc[ky * d.k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let dy = ky as isize - pad;
                        let dx = kx as isize - pad;
                        for oy in 0..d.h {
                            let iy = oy as isize + dy;
                            if iy < 0 || iy >= d.h as isize {
                                continue;
                            }
                            let grow = &gc[oy * d.w..(oy + 1) * d.w];
                            let xrow = &mut gxc[iy as usize * d.w..(iy as usize + 1) * d.w];
                            let lo = (-dx).max(0) as usize;
                            let hi = (d.w as isize - dx).min(d.w as isize) as usize;
                            for ox in lo..hi {
                                xrow[(ox as isize + dx) as usize] += wv * grow[ox];
                            }
                        }
                    }
                }
            }
        }
    });
    gx
}

/// Gradients with respect to kernel and bias.
pub fn conv2d_grad_params(g: &[f64], x: &[f64], d: ConvDims) -> (Vec<f64>, Vec<f64>) {
    let (hw, kk) = (d.h * d.w, d.k * d.k);
    let pad = d.pad();
    let mut gk = vec![0.0; d.cout * d.cin * kk];
    par::for_each_chunk_mut(&mut gk, d.cin * kk, d.work(), |co, gkc| {
        for b in 0..d.batch {
            let gc = &g[(b * d.cout + co) * hw..(b * d.cout + co + 1) * hw];
            for ci in 0..d.cin {
                let xc = &x[(b * d.cin + ci) * hw..(b * d.cin + ci + 1) * hw];
                for ky in 0..d.k {
                    for kx in 0..d.k {
                        let dy = ky as isize - pad;
                        let dx = kx as isize - pad;
                        let mut acc = 0.0;
                        for oy in 0..d.h {
                            let iy = oy as isize + dy;
                            if iy < 0 || iy >= d.h as isize {
                                continue;
                            }
                            let grow = &gc[oy * d.w..(oy + 1) * d.w];
                            let xrow = &xc[iy as usize * d.w..(iy as usize + 1) * d.w];
                            let lo = (-dx).max(0) as usize;
                            let hi = (d.w as isize - dx).min(d.w as isize) as usize;
                            for ox in lo..hi {
                                acc += grow[ox] * xrow[(ox as isize + dx) as usize];
                            }
                        }
                        gkc[ci * kk + ky * d.k + kx] += acc;
                    }
                }
            }
        }
    });
    let mut gb = vec![0.0; d.cout];
    for b in 0..d.batch {
        for (co, acc) in gb.iter_mut().enumerate() {
            *acc += g[(b * d.cout + co) * hw..(b * d.cout + co + 1) * hw].iter().sum::<f64>();
        }
    }
    (gk, gb)
}

/// 2×2 max pooling over `planes` planes of `h×w`. Returns values and the
/// flat input index of each window's first maximum.
pub fn maxpool2(x: &[f64], planes: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

/// Stable row-wise log-softmax of an `r×c` matrix.
///
/// Written as `(x - max) - log1p(Σ_{k≠argmax} exp(x_k - max))` so the largest
/// entry keeps its small negative value instead of cancelling to zero; outputs
/// are capped at `-f64::MIN_POSITIVE` so every entry is strictly negative.
pub fn log_softmax_rows(x: &[f64], c: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(c) {
        let mut top = 0;
        for (k, &v) in row.iter().enumerate() {
            if v > row[top] {
                top = k;
            }
        }
        let m = row[top];
        let rest: f64 = row.iter().enumerate().filter(|&(k, _)| k != top).map(|(_, &v)| (v - m).exp()).sum();
        let offset = rest.ln_1p();
        out.extend(row.iter().map(|&v| {
            let y = (v - m) - offset;
            // `f64::min` would turn NaN into the cap.
            if y > -f64::MIN_POSITIVE {
                -f64::MIN_POSITIVE
            } else {
                y
            }
        }));
    }
    out
}

#[cfg(test)]
pub fn logsumexp(row: &[f64]) -> f64 {
    if row.iter().any(|v| v.is_nan()) {
        return f64::NAN;
    }
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Nearest-neighbour upsampling of `planes` square `s×s` planes by `f`.
pub fn upsample_nearest(x: &[f64], planes: usize, h: usize, w: usize, f: usize) -> Vec<f64> {
    let (oh, ow) = (h * f, w * f);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            let row = &src[(oy / f) * w..(oy / f + 1) * w];
            out.extend((0..ow).map(|ox| row[ox / f]));
        }
    }
    out
}

/// Adjoint of [`upsample_nearest`]: sums each replication block.
pub fn upsample_nearest_adjoint(g: &[f64], planes: usize, h: usize, w: usize, f: usize) -> Vec<f64> {
    let (oh, ow) = (h * f, w * f);
    let mut out = vec![0.0; planes * h * w];
    for p in 0..planes {
        let gp = &g[p * oh * ow..(p + 1) * oh * ow];
        let op = &mut out[p * h * w..(p + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                op[(oy / f) * w + ox / f] += gp[oy * ow + ox];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nan_propagates_through_products_and_log_softmax() {
        assert!(matmul(&[0.0], &[f64::NAN], 1, 1, 1)[0].is_nan());
        assert!(log_softmax_rows(&[f64::NAN, 0.0], 2).iter().all(|v| v.is_nan()));
    }

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    #[test]
    fn transposed_products_agree_with_naive() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let g: Vec<f64> = (0..m * n).map(|i| (i as f64 * 0.71).sin()).collect();
        let c = matmul(&a, &b, m, k, n);
        let r = naive_matmul(&a, &b, m, k, n);
        assert!(c.iter().zip(&r).all(|(x, y)| (x - y).abs() < 1e-12));

        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let tn = matmul_tn(&a, &g, m, k, n);
        let r = naive_matmul(&at, &g, k, m, n);
        assert!(tn.iter().zip(&r).all(|(x, y)| (x - y).abs() < 1e-12));

        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let nt = matmul_nt(&g, &b, m, k, n);
        let r = naive_matmul(&g, &bt, m, n, k);
        assert!(nt.iter().zip(&r).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn dominant_logit_stays_strictly_negative() {
        let v = log_softmax_rows(&[40.0, 0.0, 0.0], 3);
        assert!(v[0] < 0.0 && (v[0] + 2.0 * (-40f64).exp()).abs() < 1e-30);
        let v = log_softmax_rows(&[1000.0, 0.0], 2);
        assert!(v[0] < 0.0 && v[1] == -1000.0);
    }
}
