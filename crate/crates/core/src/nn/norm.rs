use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::tensor::{join, Act, Param, Parameters};

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// Per-channel batch normalisation with running statistics for evaluation.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    cache: Option<(Vec<f32>, Vec<f32>)>,
}

impl BatchNorm2d {
    pub fn new(c: usize) -> Self {
        Self {
            gamma: Param::new(vec![1.0; c], vec![c]),
            beta: Param::new(vec![0.0; c], vec![c]),
            running_mean: Param::buffer(vec![0.0; c], vec![c]),
            running_var: Param::buffer(vec![1.0; c], vec![c]),
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    /// Training mode normalises with batch statistics and updates the
    /// running estimates; evaluation mode uses the running estimates.
    pub fn forward(&mut self, x: &mut Act, train: bool) {
        let m = x.per_channel();
        let mut xhat = if train { vec![0.0f32; x.data.len()] } else { Vec::new() };
        let mut inv_stds = vec![0.0f32; x.c];
        for c in 0..x.c {
            let xs = &mut x.data[c * m..(c + 1) * m];
            let (mean, var) = if train {
                let mean = xs.iter().map(|&v| v as f64).sum::<f64>() / m as f64;
                let var = xs.iter().map(|&v| (v as f64 - mean) * (v as f64 - mean)).sum::<f64>() / m as f64;
                let unbiased = if m > 1 { var * m as f64 / (m - 1) as f64 } else { var };
                let rm = &mut self.running_mean.value[c];
                *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * mean as f32;
                let rv = &mut self.running_var.value[c];
                *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * unbiased as f32;
                (mean as f32, var as f32)
            } else {
                (self.running_mean.value[c], self.running_var.value[c])
            };
            let inv_std = 1.0 / libm::sqrtf(var + BN_EPS);
            inv_stds[c] = inv_std;
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            if train {
                let xh = &mut xhat[c * m..(c + 1) * m];
                for (v, h) in xs.iter_mut().zip(xh.iter_mut()) {
                    *h = (*v - mean) * inv_std;
                    *v = g * *h + b;
                }
            } else {
                for v in xs.iter_mut() {
                    *v = g * ((*v - mean) * inv_std) + b;
                }
            }
        }
        self.cache = Some((xhat, inv_stds));
    }

    /// In-place backward; `dy` becomes `dx`. Evaluation-mode forwards
    /// backpropagate through the frozen affine map.
    pub fn backward(&mut self, dy: &mut Act) {
        let (xhat, inv_stds) = self.cache.take().expect("batchnorm backward without forward");
        let m = dy.per_channel();
        let frozen = xhat.is_empty();
        for c in 0..dy.c {
            let g = self.gamma.value[c];
            let inv_std = inv_stds[c];
            let d = &mut dy.data[c * m..(c + 1) * m];
            if frozen {
                // only the input gradient is needed for frozen statistics
                d.iter_mut().for_each(|v| *v *= g * inv_std);
                continue;
            }
            let xh = &xhat[c * m..(c + 1) * m];
            let mut dbeta = 0.0f64;
            let mut dgamma = 0.0f64;
            for (&dv, &h) in d.iter().zip(xh) {
                dbeta += dv as f64;
                dgamma += (dv * h) as f64;
            }
            self.gamma.grad[c] += dgamma as f32;
            self.beta.grad[c] += dbeta as f32;
            let scale = g * inv_std / m as f32;
            let (db, dg) = (dbeta as f32, dgamma as f32);
            for (dv, &h) in d.iter_mut().zip(xh) {
                *dv = scale * (m as f32 * *dv - db - h * dg);
            }
        }
    }
}

impl Parameters for BatchNorm2d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(join(prefix, "weight"), &mut self.gamma);
        f(join(prefix, "bias"), &mut self.beta);
        f(join(prefix, "running_mean"), &mut self.running_mean);
        f(join(prefix, "running_var"), &mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalises_and_backprops() {
        let mut bn = BatchNorm2d::new(2);
        bn.gamma.value = vec![1.5, -0.5];
        bn.beta.value = vec![0.1, 0.2];
        let base: Vec<f32> = (0..16).map(|i| ((i * 37) % 11) as f32 * 0.3 - 1.0).collect();
        let x = Act { c: 2, n: 2, h: 2, w: 2, data: base };
        let r: Vec<f32> = (0..16).map(|i| ((i * 13) % 7) as f32 - 3.0).collect();

        let mut y = x.clone();
        bn.forward(&mut y, true);
        let m0: f32 = y.data[..8].iter().sum::<f32>() / 8.0;
        assert!((m0 - 0.1).abs() < 1e-5);

        let mut dy = Act { data: r.clone(), ..x.clone() };
        bn.backward(&mut dy);
        let obj = |x: &Act| {
            let mut b = BatchNorm2d::new(2);
            b.gamma.value = vec![1.5, -0.5];
            b.beta.value = vec![0.1, 0.2];
            let mut y = x.clone();
            b.forward(&mut y, true);
            y.data.iter().zip(&r).map(|(a, b)| (*a as f64) * (*b as f64)).sum::<f64>()
        };
        for i in 0..16 {
            let mut xp = x.clone();
            xp.data[i] += 1e-2;
            let mut xm = x.clone();
            xm.data[i] -= 1e-2;
            let fd = (obj(&xp) - obj(&xm)) / 2e-2;
            assert!((fd - dy.data[i] as f64).abs() < 2e-3, "{i}: {fd} vs {}", dy.data[i]);
        }
    }
}
