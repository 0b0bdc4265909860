//! Dense kernels shared by forward and backward rules.
//!
//! Matrices are row-major slices. All products go through ndarray's GEMM,
//! which is single-threaded and therefore bitwise reproducible.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

fn view(data: &[f64], rows: usize, cols: usize) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((rows, cols), &data[..rows * cols]).expect("matrix view")
}

fn view_mut(data: &mut [f64], rows: usize, cols: usize) -> ArrayViewMut2<'_, f64> {
    ArrayViewMut2::from_shape((rows, cols), &mut data[..rows * cols]).expect("matrix view")
}

/// `c = a·b + beta·c` with `a: m×k`, `b: k×n`.
pub(crate) fn gemm(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, beta: f64, c: &mut [f64]) {
    let av = view(a, m, k);
    let bv = view(b, k, n);
    let mut cv = view_mut(c, m, n);
    general_mat_mul(1.0, &av, &bv, beta, &mut cv);
}

/// `c += aᵀ·b` with `a: k×m` stored, `b: k×n`.
pub(crate) fn gemm_at_b(a: &[f64], k: usize, m: usize, b: &[f64], n: usize, c: &mut [f64]) {
    let av = view(a, k, m);
    let bv = view(b, k, n);
    let mut cv = view_mut(c, m, n);
    general_mat_mul(1.0, &av.t(), &bv, 1.0, &mut cv);
}

/// `c = a·bᵀ + beta·c` with `a: m×k`, `b: n×k` stored.
pub(crate) fn gemm_a_bt(
    a: &[f64],
    m: usize,
    k: usize,
    b: &[f64],
    n: usize,
    beta: f64,
    c: &mut [f64],
) {
    let av = view(a, m, k);
    let bv = view(b, n, k);
    let mut cv = view_mut(c, m, n);
    general_mat_mul(1.0, &av, &bv.t(), beta, &mut cv);
}

/// Geometry of a causal convolution over `[nodes, steps, channels]` input.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    pub nodes: usize,
    pub steps: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub dilation: usize,
}

impl ConvGeometry {
    /// How far back tap `k` reads. The last tap sits on the current step.
    fn shift(&self, tap: usize) -> usize {
        (self.kernel - 1 - tap) * self.dilation
    }

    fn rows(&self) -> usize {
        self.nodes * self.steps
    }
}

/// `out[n,t,:] = Σ_k x[n, t − shift(k), :] · f[k]`, zero where the index falls before 0.
pub(crate) fn conv_forward(g: &ConvGeometry, x: &[f64], f: &[f64]) -> Vec<f64> {
    let rows = g.rows();
    let tap_len = g.c_in * g.c_out;
    let mut out = vec![0.0; rows * g.c_out];
    let mut tmp = Vec::new();
    for tap in 0..g.kernel {
        let shift = g.shift(tap);
        if shift >= g.steps {
            continue;
        }
        let fk = &f[tap * tap_len..(tap + 1) * tap_len];
        if shift == 0 {
            gemm(x, rows, g.c_in, fk, g.c_out, 1.0, &mut out);
            continue;
        }
        tmp.resize(rows * g.c_out, 0.0);
        gemm(x, rows, g.c_in, fk, g.c_out, 0.0, &mut tmp);
        for node in 0..g.nodes {
            let base = node * g.steps;
            for t in shift..g.steps {
                let dst = (base + t) * g.c_out;
                let src = (base + t - shift) * g.c_out;
                for (o, v) in out[dst..dst + g.c_out]
                    .iter_mut()
                    .zip(&tmp[src..src + g.c_out])
                {
                    *o += v;
                }
            }
        }
    }
    out
}

/// Gradients of [`conv_forward`] with respect to the input (when requested) and the filter.
pub(crate) fn conv_backward(
    g: &ConvGeometry,
    x: &[f64],
    f: &[f64],
    grad_out: &[f64],
    need_input_grad: bool,
) -> (Option<Vec<f64>>, Vec<f64>) {
    let rows = g.rows();
    let tap_len = g.c_in * g.c_out;
    let mut df = vec![0.0; g.kernel * tap_len];
    let mut dx = need_input_grad.then(|| vec![0.0; rows * g.c_in]);
    let mut shifted = Vec::new();
    let mut tmp = Vec::new();
    for tap in 0..g.kernel {
        let shift = g.shift(tap);
        if shift >= g.steps {
            continue;
        }
        let fk = &f[tap * tap_len..(tap + 1) * tap_len];
        let dfk = &mut df[tap * tap_len..(tap + 1) * tap_len];
        if shift == 0 {
            gemm_at_b(x, rows, g.c_in, grad_out, g.c_out, dfk);
        } else {
            shifted.clear();
            shifted.resize(rows * g.c_in, 0.0);
            for node in 0..g.nodes {
                let base = node * g.steps;
                let dst = (base + shift) * g.c_in;
                let src = base * g.c_in;
                let len = (g.steps - shift) * g.c_in;
                shifted[dst..dst + len].copy_from_slice(&x[src..src + len]);
            }
            gemm_at_b(&shifted, rows, g.c_in, grad_out, g.c_out, dfk);
        }

        if let Some(dx) = dx.as_mut() {
            if shift == 0 {
                gemm_a_bt(grad_out, rows, g.c_out, fk, g.c_in, 1.0, dx);
            } else {
                tmp.resize(rows * g.c_in, 0.0);
                gemm_a_bt(grad_out, rows, g.c_out, fk, g.c_in, 0.0, &mut tmp);
                for node in 0..g.nodes {
                    let base = node * g.steps;
                    for t in 0..g.steps - shift {
                        let dst = (base + t) * g.c_in;
                        let src = (base + t + shift) * g.c_in;
                        for (d, v) in dx[dst..dst + g.c_in]
                            .iter_mut()
                            .zip(&tmp[src..src + g.c_in])
                        {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
    (dx, df)
}

/// Splits `shape` around `axis` into `(outer, axis_len, inner)`.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_hand_product() {
        // [1 2; 3 4] · [5; 6] = [17; 39]
        let mut c = vec![0.0; 2];
        gemm(&[1.0, 2.0, 3.0, 4.0], 2, 2, &[5.0, 6.0], 1, 0.0, &mut c);
        assert_eq!(c, vec![17.0, 39.0]);

        let mut c = vec![1.0; 2];
        // aᵀ·b with a = [1 2; 3 4] stored → [1 3; 2 4]·[1; 1] = [4; 6], plus existing 1
        gemm_at_b(&[1.0, 2.0, 3.0, 4.0], 2, 2, &[1.0, 1.0], 1, &mut c);
        assert_eq!(c, vec![5.0, 7.0]);

        let mut c = vec![0.0; 2];
        // a·bᵀ with b stored as 1×2 row [1 1]
        gemm_a_bt(&[1.0, 2.0, 3.0, 4.0], 2, 2, &[1.0, 1.0], 1, 0.0, &mut c);
        assert_eq!(c, vec![3.0, 7.0]);
    }

    #[test]
    fn split_axis_products() {
        assert_eq!(split_axis(&[2, 3, 4], 1), (2, 3, 4));
        assert_eq!(split_axis(&[2, 3, 4], 0), (1, 2, 12));
        assert_eq!(split_axis(&[2, 3, 4], 2), (6, 4, 1));
    }
}
