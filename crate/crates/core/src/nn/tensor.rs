use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Feature maps stored channel-major across the batch (C, N, H, W), so that
/// a convolution's GEMM output is already in layout and per-channel
/// statistics run over contiguous memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Act {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Act {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Self { c, n, h, w, data: vec![0.0; c * n * h * w] }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Elements per channel (N·H·W).
    pub fn per_channel(&self) -> usize {
        self.n * self.h * self.w
    }

    pub fn same_shape(&self, other: &Act) -> bool {
        (self.c, self.n, self.h, self.w) == (other.c, other.n, other.h, other.w)
    }

    /// Assembles a batch from per-sample C×H×W buffers.
    pub fn from_samples(c: usize, h: usize, w: usize, samples: &[&[f32]]) -> Self {
        let n = samples.len();
        let plane = h * w;
        let mut a = Self::zeros(c, n, h, w);
        for (i, s) in samples.iter().enumerate() {
            assert_eq!(s.len(), c * plane);
            for ch in 0..c {
                let dst = (ch * n + i) * plane;
                a.data[dst..dst + plane].copy_from_slice(&s[ch * plane..(ch + 1) * plane]);
            }
        }
        a
    }

    /// One sample's C×H×W buffer.
    pub fn sample(&self, i: usize) -> Vec<f32> {
        let plane = self.plane();
        let mut out = Vec::with_capacity(self.c * plane);
        for ch in 0..self.c {
            let src = (ch * self.n + i) * plane;
            out.extend_from_slice(&self.data[src..src + plane]);
        }
        out
    }
}

/// A named tensor owned by a layer. Running statistics are stored as
/// non-trainable parameters so checkpoints carry them alongside weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

impl Param {
    pub fn new(value: Vec<f32>, shape: Vec<usize>) -> Self {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        let grad = vec![0.0; value.len()];
        Self { value, grad, shape, trainable: true }
    }

    pub fn buffer(value: Vec<f32>, shape: Vec<usize>) -> Self {
        Self { value, grad: Vec::new(), shape, trainable: false }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Visitor over a layer tree's parameters with dotted names.
pub trait Parameters {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        alloc::format!("{prefix}.{name}")
    }
}

/// Row/column strides of a matrix operand.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Strides {
    pub row: usize,
    pub col: usize,
}

impl Strides {
    pub const fn row_major(cols: usize) -> Self {
        Self { row: cols, col: 1 }
    }

    pub const fn col_major(rows: usize) -> Self {
        Self { row: 1, col: rows }
    }
}

fn span(rows: usize, cols: usize, s: Strides) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * s.row + (cols - 1) * s.col + 1
    }
}

/// `c = a·b + beta·c` for an m×k by k×n product.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    sa: Strides,
    b: &[f32],
    sb: Strides,
    beta: f32,
    c: &mut [f32],
    sc: Strides,
) {
    assert!(a.len() >= span(m, k, sa));
    assert!(b.len() >= span(k, n, sb));
    assert!(c.len() >= span(m, n, sc));
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.row as isize,
            sa.col as isize,
            b.as_ptr(),
            sb.row as isize,
            sb.col as isize,
            beta,
            c.as_mut_ptr(),
            sc.row as isize,
            sc.col as isize,
        );
    }
}
