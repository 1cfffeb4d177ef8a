//! Dense row-major 2D tensors and the matmul kernels the tape uses.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length");
        Self { rows, cols, data }
    }

    pub fn scalar(x: f64) -> Self {
        Self::from_vec(1, 1, vec![x])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for k in 0..4 {
            s[k] += a[4 * c + k] * b[4 * c + k];
        }
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}

/// `a (r x k) * b (k x c)`
pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows, "matmul inner dimension");
    let mut out = Tensor::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let o = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (p, &aip) in a.row(i).iter().enumerate() {
            if aip != 0.0 {
                axpy(aip, b.row(p), o);
            }
        }
    }
    out
}

/// `out += a^T (r x k)^T * b (r x c)`, giving `k x c`.
pub fn matmul_at_b_acc(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    assert_eq!(a.rows, b.rows);
    assert_eq!(out.shape(), (a.cols, b.cols));
    for i in 0..a.rows {
        let brow = b.row(i);
        for (p, &aip) in a.row(i).iter().enumerate() {
            if aip != 0.0 {
                axpy(aip, brow, &mut out.data[p * b.cols..(p + 1) * b.cols]);
            }
        }
    }
}

/// `out += a (r x c) * b^T (k x c)^T`, giving `r x k`.
pub fn matmul_a_bt_acc(a: &Tensor, b: &Tensor, out: &mut Tensor) {
    assert_eq!(a.cols, b.cols);
    assert_eq!(out.shape(), (a.rows, b.rows));
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] += dot(arow, b.row(j));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_agree_with_naive() {
        let a = Tensor::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        assert_eq!(matmul(&a, &b).data, vec![58.0, 64.0, 139.0, 154.0]);
        let mut atb = Tensor::zeros(3, 3);
        matmul_at_b_acc(&a, &a, &mut atb);
        assert_eq!(atb.get(0, 0), 17.0);
        assert_eq!(atb.get(1, 2), 2.0 * 3.0 + 5.0 * 6.0);
        let mut abt = Tensor::zeros(2, 2);
        matmul_a_bt_acc(&a, &a, &mut abt);
        assert_eq!(abt.data, vec![14.0, 32.0, 32.0, 77.0]);
    }
}
