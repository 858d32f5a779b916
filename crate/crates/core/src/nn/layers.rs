use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{gemm, join, Act, Param, Parameters, Strides};

/// In-place rectifier; returns the activity mask for the backward pass.
pub fn relu(x: &mut Act) -> Vec<bool> {
    x.data
        .iter_mut()
        .map(|v| {
            let on = *v > 0.0;
            if !on {
                *v = 0.0;
            }
            on
        })
        .collect()
}

pub fn relu_backward(dy: &mut Act, mask: &[bool]) {
    dy.data.iter_mut().zip(mask).for_each(|(d, &on)| {
        if !on {
            *d = 0.0;
        }
    });
}

/// 3×3, stride 2, padding 1 max pooling.
#[derive(Clone, Debug, Default)]
pub struct MaxPool {
    argmax: Vec<usize>,
    in_shape: (usize, usize, usize, usize),
}

impl MaxPool {
    pub fn forward(&mut self, x: &Act) -> Act {
        let (oh, ow) = ((x.h + 2 - 3) / 2 + 1, (x.w + 2 - 3) / 2 + 1);
        let mut out = Act::zeros(x.c, x.n, oh, ow);
        self.argmax = vec![0; out.data.len()];
        self.in_shape = (x.c, x.n, x.h, x.w);
        for cn in 0..x.c * x.n {
            let src = &x.data[cn * x.plane()..][..x.plane()];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f32::NEG_INFINITY;
                    let mut at = 0;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (oy * 2 + ky) as isize - 1;
                            let ix = (ox * 2 + kx) as isize - 1;
                            if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize {
                                continue;
                            }
                            let i = iy as usize * x.w + ix as usize;
                            if src[i] > best {
                                best = src[i];
                                at = i;
                            }
                        }
                    }
                    let o = cn * oh * ow + oy * ow + ox;
                    out.data[o] = best;
                    self.argmax[o] = cn * x.plane() + at;
                }
            }
        }
        out
    }

    pub fn backward(&mut self, dy: &Act) -> Act {
        let (c, n, h, w) = self.in_shape;
        let mut dx = Act::zeros(c, n, h, w);
        for (o, &i) in self.argmax.iter().enumerate() {
            dx.data[i] += dy.data[o];
        }
        dx
    }
}

/// Mean over each sample's spatial plane; output is N×C row-major.
pub fn global_avg_pool(x: &Act) -> Vec<f32> {
    let plane = x.plane();
    let mut out = vec![0.0f32; x.n * x.c];
    for c in 0..x.c {
        for n in 0..x.n {
            let s: f32 = x.data[(c * x.n + n) * plane..][..plane].iter().sum();
            out[n * x.c + c] = s / plane as f32;
        }
    }
    out
}

pub fn global_avg_pool_backward(dy: &[f32], c: usize, n: usize, h: usize, w: usize) -> Act {
    let plane = h * w;
    let mut dx = Act::zeros(c, n, h, w);
    for ch in 0..c {
        for s in 0..n {
            let g = dy[s * c + ch] / plane as f32;
            dx.data[(ch * n + s) * plane..][..plane].iter_mut().for_each(|v| *v = g);
        }
    }
    dx
}

/// Fully connected layer on N×in row-major inputs.
#[derive(Clone, Debug)]
pub struct Linear {
    pub in_f: usize,
    pub out_f: usize,
    pub weight: Param,
    pub bias: Param,
    input: Vec<f32>,
}

impl Linear {
    pub fn new(in_f: usize, out_f: usize) -> Self {
        Self {
            in_f,
            out_f,
            weight: Param::new(vec![0.0; in_f * out_f], vec![out_f, in_f]),
            bias: Param::new(vec![0.0; out_f], vec![out_f]),
            input: Vec::new(),
        }
    }

    pub fn forward(&mut self, x: &[f32], keep_input: bool) -> Vec<f32> {
        let n = x.len() / self.in_f;
        let mut out: Vec<f32> = (0..n).flat_map(|_| self.bias.value.iter().copied()).collect();
        gemm(
            n,
            self.in_f,
            self.out_f,
            x,
            Strides::row_major(self.in_f),
            &self.weight.value,
            Strides::col_major(self.in_f),
            1.0,
            &mut out,
            Strides::row_major(self.out_f),
        );
        if keep_input {
            self.input = x.to_vec();
        }
        out
    }

    pub fn backward(&mut self, dy: &[f32]) -> Vec<f32> {
        let n = dy.len() / self.out_f;
        let x = core::mem::take(&mut self.input);
        gemm(
            self.out_f,
            n,
            self.in_f,
            dy,
            Strides::col_major(self.out_f),
            &x,
            Strides::row_major(self.in_f),
            1.0,
            &mut self.weight.grad,
            Strides::row_major(self.in_f),
        );
        for row in dy.chunks(self.out_f) {
            self.bias.grad.iter_mut().zip(row).for_each(|(b, d)| *b += d);
        }
        let mut dx = vec![0.0f32; n * self.in_f];
        gemm(
            n,
            self.out_f,
            self.in_f,
            dy,
            Strides::row_major(self.out_f),
            &self.weight.value,
            Strides::row_major(self.in_f),
            0.0,
            &mut dx,
            Strides::row_major(self.in_f),
        );
        dx
    }
}

impl Parameters for Linear {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}
