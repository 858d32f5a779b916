use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{gemm, join, Act, Param, Parameters, Strides};

/// Bias-free 2-D convolution (square kernel, symmetric zero padding).
///
/// Input channels are processed in groups of `group` channels: each group is
/// convolved with its slice of the kernel on its own and the partial results
/// are summed in group order. For the ordinary case `group == in_c`. The
/// stem uses groups of three so each RGB triple contributes one exact
/// partial sum.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub group: usize,
    pub weight: Param,
    input: Option<Act>,
}

impl Conv2d {
    pub fn new(in_c: usize, out_c: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        let n = out_c * in_c * kernel * kernel;
        Self {
            in_c,
            out_c,
            kernel,
            stride,
            pad,
            group: in_c,
            weight: Param::new(vec![0.0; n], vec![out_c, in_c, kernel, kernel]),
            input: None,
        }
    }

    pub fn with_input_groups(mut self, group: usize) -> Self {
        assert!(group > 0 && self.in_c.is_multiple_of(group));
        self.group = group;
        self
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        ((h + 2 * self.pad - self.kernel) / self.stride + 1, (w + 2 * self.pad - self.kernel) / self.stride + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    /// Unrolls channels `c0..c0 + group` into a (group·k·k) × (N·OH·OW)
    /// patch matrix.
    fn im2col(&self, x: &Act, c0: usize, oh: usize, ow: usize) -> Vec<f32> {
        let k = self.kernel;
        let np = x.n * oh * ow;
        let mut col = vec![0.0f32; self.group * k * k * np];
        for gc in 0..self.group {
            let ch = c0 + gc;
            for ky in 0..k {
                for kx in 0..k {
                    let row = (gc * k + ky) * k + kx;
                    let dst_row = &mut col[row * np..(row + 1) * np];
                    for n in 0..x.n {
                        let src = &x.data[(ch * x.n + n) * x.plane()..][..x.plane()];
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            let src_row = &src[iy as usize * x.w..][..x.w];
                            let dst = &mut dst_row[(n * oh + oy) * ow..][..ow];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < x.w as isize {
                                    *d = src_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[f32], dx: &mut Act, c0: usize, oh: usize, ow: usize) {
        let k = self.kernel;
        let np = dx.n * oh * ow;
        let (plane, n_total, w, h) = (dx.plane(), dx.n, dx.w, dx.h);
        for gc in 0..self.group {
            let ch = c0 + gc;
            for ky in 0..k {
                for kx in 0..k {
                    let row = (gc * k + ky) * k + kx;
                    let src_row = &col[row * np..(row + 1) * np];
                    for n in 0..n_total {
                        let dst = &mut dx.data[(ch * n_total + n) * plane..][..plane];
                        for oy in 0..oh {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src = &src_row[(n * oh + oy) * ow..][..ow];
                            let dst_row = &mut dst[iy as usize * w..][..w];
                            for (ox, &s) in src.iter().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    dst_row[ix as usize] += s;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn patches<'a>(&self, x: &'a Act, c0: usize, oh: usize, ow: usize, buf: &'a mut Vec<f32>) -> &'a [f32] {
        if self.is_pointwise() {
            let len = self.group * x.per_channel();
            &x.data[c0 * x.per_channel()..][..len]
        } else {
            *buf = self.im2col(x, c0, oh, ow);
            buf
        }
    }

    pub fn forward(&mut self, x: &Act, keep_input: bool) -> Act {
        assert_eq!(x.c, self.in_c, "conv input channels");
        let (oh, ow) = self.out_hw(x.h, x.w);
        let np = x.n * oh * ow;
        let kk = self.kernel * self.kernel;
        let k_all = self.in_c * kk;
        let k_grp = self.group * kk;
        let mut out = Act::zeros(self.out_c, x.n, oh, ow);
        let mut buf = Vec::new();
        let mut partial = Vec::new();
        for g in 0..self.in_c / self.group {
            let col = self.patches(x, g * self.group, oh, ow, &mut buf);
            let w = &self.weight.value[g * k_grp..];
            if g == 0 {
                gemm(
                    self.out_c,
                    k_grp,
                    np,
                    w,
                    Strides { row: k_all, col: 1 },
                    col,
                    Strides::row_major(np),
                    0.0,
                    &mut out.data,
                    Strides::row_major(np),
                );
            } else {
                partial.resize(self.out_c * np, 0.0);
                gemm(
                    self.out_c,
                    k_grp,
                    np,
                    w,
                    Strides { row: k_all, col: 1 },
                    col,
                    Strides::row_major(np),
                    0.0,
                    &mut partial,
                    Strides::row_major(np),
                );
                out.data.iter_mut().zip(&partial).for_each(|(o, p)| *o += p);
            }
        }
        self.input = keep_input.then(|| x.clone());
        out
    }

    /// Accumulates the weight gradient; returns the input gradient when
    /// `need_dx` is set.
    pub fn backward(&mut self, dy: &Act, need_dx: bool) -> Option<Act> {
        let x = self.input.take().expect("conv backward without cached forward");
        let (oh, ow) = (dy.h, dy.w);
        let np = dy.per_channel();
        let kk = self.kernel * self.kernel;
        let k_all = self.in_c * kk;
        let k_grp = self.group * kk;
        let mut dx = need_dx.then(|| Act::zeros(x.c, x.n, x.h, x.w));
        let mut buf = Vec::new();
        for g in 0..self.in_c / self.group {
            let c0 = g * self.group;
            let col = self.patches(&x, c0, oh, ow, &mut buf);
            gemm(
                self.out_c,
                np,
                k_grp,
                &dy.data,
                Strides::row_major(np),
                col,
                Strides::col_major(np),
                1.0,
                &mut self.weight.grad[g * k_grp..],
                Strides { row: k_all, col: 1 },
            );
            if let Some(dx) = dx.as_mut() {
                let mut dcol = vec![0.0f32; k_grp * np];
                gemm(
                    k_grp,
                    self.out_c,
                    np,
                    &self.weight.value[g * k_grp..],
                    Strides { row: 1, col: k_all },
                    &dy.data,
                    Strides::row_major(np),
                    0.0,
                    &mut dcol,
                    Strides::row_major(np),
                );
                if self.is_pointwise() {
                    let dst = &mut dx.data[c0 * np..][..k_grp * np];
                    dst.iter_mut().zip(&dcol).for_each(|(d, s)| *d += s);
                } else {
                    self.col2im(&dcol, dx, c0, oh, ow);
                }
            }
        }
        dx
    }
}

impl Parameters for Conv2d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(alloc::string::String, &mut Param)) {
        f(join(prefix, "weight"), &mut self.weight);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution over one sample.
    fn reference(conv: &Conv2d, x: &Act) -> Act {
        let (oh, ow) = conv.out_hw(x.h, x.w);
        let mut out = Act::zeros(conv.out_c, x.n, oh, ow);
        let k = conv.kernel;
        for o in 0..conv.out_c {
            for n in 0..x.n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut s = 0.0f64;
                        for c in 0..conv.in_c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * conv.stride + ky) as isize - conv.pad as isize;
                                    let ix = (ox * conv.stride + kx) as isize - conv.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                        continue;
                                    }
                                    let xv = x.data[((c * x.n + n) * x.h + iy as usize) * x.w + ix as usize];
                                    let wv = conv.weight.value[((o * conv.in_c + c) * k + ky) * k + kx];
                                    s += (xv * wv) as f64;
                                }
                            }
                        }
                        out.data[((o * x.n + n) * oh + oy) * ow + ox] = s as f32;
                    }
                }
            }
        }
        out
    }

    fn filled(c: usize, n: usize, h: usize, w: usize, seed: u32) -> Act {
        let mut a = Act::zeros(c, n, h, w);
        let mut s = seed;
        for v in a.data.iter_mut() {
            s = s.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
            *v = (s >> 8) as f32 / (1 << 24) as f32 - 0.5;
        }
        a
    }

    #[test]
    fn forward_matches_reference() {
        for &(in_c, group, k, stride, pad) in
            &[(3, 3, 3, 1, 1), (6, 3, 3, 2, 1), (4, 4, 1, 2, 0), (5, 5, 1, 1, 0), (3, 3, 7, 2, 3)]
        {
            let mut conv = Conv2d::new(in_c, 4, k, stride, pad).with_input_groups(group);
            conv.weight.value = filled(1, 1, 1, conv.weight.value.len(), 7).data;
            let x = filled(in_c, 2, 9, 8, 3);
            let got = conv.forward(&x, false);
            let want = reference(&conv, &x);
            assert!(got.same_shape(&want));
            for (a, b) in got.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for &(in_c, group, k, stride, pad) in &[(3, 3, 3, 1, 1), (6, 3, 3, 2, 1), (4, 4, 1, 1, 0), (2, 2, 1, 2, 0)] {
            let mut conv = Conv2d::new(in_c, 3, k, stride, pad).with_input_groups(group);
            conv.weight.value = filled(1, 1, 1, conv.weight.value.len(), 11).data;
            let x = filled(in_c, 2, 6, 5, 5);
            let y = conv.forward(&x, true);
            // objective: sum(y * r)
            let r = filled(y.c, y.n, y.h, y.w, 13);
            let dy = Act { data: r.data.clone(), ..y.clone() };
            let dx = conv.backward(&dy, true).unwrap();
            let objective = |conv: &mut Conv2d, x: &Act| -> f64 {
                let y = conv.forward(x, false);
                y.data.iter().zip(&r.data).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
            };
            let eps = 1e-2f32;
            for i in (0..x.data.len()).step_by(7) {
                let mut xp = x.clone();
                xp.data[i] += eps;
                let mut xm = x.clone();
                xm.data[i] -= eps;
                let fd = (objective(&mut conv, &xp) - objective(&mut conv, &xm)) / (2.0 * eps as f64);
                assert!((fd - dx.data[i] as f64).abs() < 1e-3, "dx[{i}]: {fd} vs {}", dx.data[i]);
            }
            for i in 0..conv.weight.value.len() {
                let orig = conv.weight.value[i];
                conv.weight.value[i] = orig + eps;
                let fp = objective(&mut conv, &x);
                conv.weight.value[i] = orig - eps;
                let fm = objective(&mut conv, &x);
                conv.weight.value[i] = orig;
                let fd = (fp - fm) / (2.0 * eps as f64);
                assert!((fd - conv.weight.grad[i] as f64).abs() < 1e-3, "dw[{i}]");
            }
        }
    }
}
