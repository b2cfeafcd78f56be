//! Forward evaluation of the supported operation set.
//!
//! Shape mismatches inside these primitives are programming errors and panic;
//! public model and loss entry points validate shapes and return
//! [`crate::Error::Shape`] before reaching them.

use super::tensor::{Op, Tensor};

fn assert_same_shape(a: &Tensor, b: &Tensor, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}: shape mismatch");
}

fn assert_matrix(a: &Tensor, what: &str) {
    assert_eq!(a.shape().len(), 2, "{what}: expected a matrix, got {:?}", a.shape());
}

/// `c[m, n] = a[m, k] * b[k, n]`, all row-major.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    // SAFETY: slice lengths are m*k, k*n and m*n with the row-major strides given.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

fn map(a: &Tensor, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
    let value = a.data().iter().map(|&x| f(x)).collect();
    Tensor::record(op, &[a], a.shape().to_vec(), value)
}

fn zip(a: &Tensor, b: &Tensor, op: Op, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_same_shape(a, b, "elementwise");
    let value = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::record(op, &[a, b], a.shape().to_vec(), value)
}

impl Tensor {
    pub fn matmul(&self, rhs: &Tensor) -> Tensor {
        assert_matrix(self, "matmul lhs");
        assert_matrix(rhs, "matmul rhs");
        let (m, k) = (self.rows(), self.cols());
        let (k2, n) = (rhs.rows(), rhs.cols());
        assert_eq!(k, k2, "matmul: inner dimensions {k} vs {k2}");
        let value = gemm(m, k, n, self.data(), rhs.data());
        Tensor::record(Op::MatMul, &[self, rhs], vec![m, n], value)
    }

    pub fn t(&self) -> Tensor {
        assert_matrix(self, "transpose");
        let (r, c) = (self.rows(), self.cols());
        let src = self.data();
        let mut value = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                value[j * r + i] = src[i * c + j];
            }
        }
        Tensor::record(Op::Transpose, &[self], vec![c, r], value)
    }

    pub fn add(&self, rhs: &Tensor) -> Tensor {
        zip(self, rhs, Op::Add, |x, y| x + y)
    }

    pub fn sub(&self, rhs: &Tensor) -> Tensor {
        zip(self, rhs, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&self, rhs: &Tensor) -> Tensor {
        zip(self, rhs, Op::Mul, |x, y| x * y)
    }

    pub fn div(&self, rhs: &Tensor) -> Tensor {
        zip(self, rhs, Op::Div, |x, y| x / y)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        map(self, Op::Scale(c), |x| x * c)
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        map(self, Op::AddScalar(c), |x| x + c)
    }

    pub fn tanh(&self) -> Tensor {
        map(self, Op::Tanh, f64::tanh)
    }

    pub fn relu(&self) -> Tensor {
        map(self, Op::Relu, |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn exp(&self) -> Tensor {
        map(self, Op::Exp, f64::exp)
    }

    pub fn ln(&self) -> Tensor {
        map(self, Op::Log, f64::ln)
    }

    pub fn abs(&self) -> Tensor {
        map(self, Op::Abs, f64::abs)
    }

    pub fn sqrt(&self) -> Tensor {
        map(self, Op::Sqrt, f64::sqrt)
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&self) -> Tensor {
        // Fixed left-to-right reduction order.
        let s = self.data().iter().fold(0.0, |acc, &x| acc + x);
        Tensor::record(Op::Sum, &[self], Vec::new(), vec![s])
    }

    pub fn mean(&self) -> Tensor {
        self.sum().scale(1.0 / self.numel() as f64)
    }

    pub fn broadcast_scalar(&self, shape: &[usize]) -> Tensor {
        assert_eq!(self.numel(), 1, "broadcast_scalar of non-scalar");
        let value = vec![self.data()[0]; shape.iter().product()];
        Tensor::record(Op::BroadcastScalar(shape.to_vec()), &[self], shape.to_vec(), value)
    }

    /// Column sums: `[n, k] -> [k]`.
    pub fn sum_rows(&self) -> Tensor {
        assert_matrix(self, "sum_rows");
        let (n, k) = (self.rows(), self.cols());
        let mut value = vec![0.0; k];
        for row in self.data().chunks_exact(k).take(n) {
            for (acc, &x) in value.iter_mut().zip(row) {
                *acc += x;
            }
        }
        Tensor::record(Op::SumRows, &[self], vec![k], value)
    }

    /// Repeats a `[k]` vector as `n` rows.
    pub fn broadcast_rows(&self, n: usize) -> Tensor {
        assert_eq!(self.shape().len(), 1, "broadcast_rows expects a vector");
        let k = self.numel();
        let mut value = Vec::with_capacity(n * k);
        for _ in 0..n {
            value.extend_from_slice(self.data());
        }
        Tensor::record(Op::BroadcastRows(n), &[self], vec![n, k], value)
    }

    /// Row sums: `[n, k] -> [n, 1]`.
    pub fn sum_cols(&self) -> Tensor {
        assert_matrix(self, "sum_cols");
        let k = self.cols();
        let value = self
            .data()
            .chunks_exact(k)
            .map(|row| row.iter().fold(0.0, |acc, &x| acc + x))
            .collect();
        Tensor::record(Op::SumCols, &[self], vec![self.rows(), 1], value)
    }

    /// Repeats a `[n, 1]` column `k` times.
    pub fn broadcast_cols(&self, k: usize) -> Tensor {
        assert!(
            self.shape().len() == 2 && self.cols() == 1,
            "broadcast_cols expects [n, 1], got {:?}",
            self.shape()
        );
        let n = self.rows();
        let mut value = Vec::with_capacity(n * k);
        for &x in self.data() {
            value.extend(std::iter::repeat_n(x, k));
        }
        Tensor::record(Op::BroadcastCols(k), &[self], vec![n, k], value)
    }

    /// Adds a `[k]` bias to every row of a `[n, k]` matrix.
    pub fn add_row_vector(&self, bias: &Tensor) -> Tensor {
        self.add(&bias.broadcast_rows(self.rows()))
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.numel(),
            "reshape {:?} -> {shape:?}",
            self.shape()
        );
        Tensor::record(Op::Reshape, &[self], shape.to_vec(), self.to_vec())
    }

    pub fn concat_cols(parts: &[&Tensor]) -> Tensor {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let n = parts[0].rows();
        for p in parts {
            assert_matrix(p, "concat_cols");
            assert_eq!(p.rows(), n, "concat_cols: row counts differ");
        }
        let widths: Vec<usize> = parts.iter().map(|p| p.cols()).collect();
        let total: usize = widths.iter().sum();
        let mut value = Vec::with_capacity(n * total);
        for i in 0..n {
            for (p, &w) in parts.iter().zip(&widths) {
                value.extend_from_slice(&p.data()[i * w..(i + 1) * w]);
            }
        }
        Tensor::record(Op::ConcatCols(widths), parts, vec![n, total], value)
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Tensor {
        assert_matrix(self, "slice_cols");
        assert!(
            start < end && end <= self.cols(),
            "slice_cols {start}..{end} of {}",
            self.cols()
        );
        let c = self.cols();
        let mut value = Vec::with_capacity(self.rows() * (end - start));
        for row in self.data().chunks_exact(c) {
            value.extend_from_slice(&row[start..end]);
        }
        Tensor::record(Op::SliceCols { start, end }, &[self], vec![self.rows(), end - start], value)
    }

    pub(crate) fn pad_cols(&self, start: usize, total: usize) -> Tensor {
        assert_matrix(self, "pad_cols");
        let w = self.cols();
        assert!(start + w <= total);
        let mut value = vec![0.0; self.rows() * total];
        for (i, row) in self.data().chunks_exact(w).enumerate() {
            value[i * total + start..i * total + start + w].copy_from_slice(row);
        }
        Tensor::record(Op::PadCols { start, total }, &[self], vec![self.rows(), total], value)
    }

    /// Constant 0/1 mask from a predicate over this tensor's values.
    pub(crate) fn mask(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::raw(self.shape().to_vec(), self.data().iter().map(|&x| f(x)).collect())
    }

    /// Gathers rows of a constant matrix. The result is constant.
    pub fn gather_rows(&self, rows: &[usize]) -> Tensor {
        assert_matrix(self, "gather_rows");
        let c = self.cols();
        let mut value = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            value.extend_from_slice(&self.data()[r * c..(r + 1) * c]);
        }
        Tensor::raw(vec![rows.len(), c], value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::new(&[3, 2], vec![7., 8., 9., 10., 11., 12.]).unwrap();
        assert_eq!(a.matmul(&b).data(), &[58., 64., 139., 154.]);
    }

    #[test]
    fn transpose_and_slices() {
        let a = Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(a.t().data(), &[1., 4., 2., 5., 3., 6.]);
        assert_eq!(a.slice_cols(1, 3).data(), &[2., 3., 5., 6.]);
        assert_eq!(a.slice_cols(1, 2).pad_cols(1, 3).data(), &[0., 2., 0., 0., 5., 0.]);
        let c = Tensor::concat_cols(&[&a.slice_cols(0, 1), &a.slice_cols(1, 3)]);
        assert_eq!(c, a);
    }

    #[test]
    fn reductions_and_broadcasts() {
        let a = Tensor::new(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(a.sum().item(), 10.0);
        assert_eq!(a.mean().item(), 2.5);
        assert_eq!(a.sum_rows().data(), &[4., 6.]);
        assert_eq!(a.sum_cols().data(), &[3., 7.]);
        assert_eq!(a.sum_cols().broadcast_cols(2).data(), &[3., 3., 7., 7.]);
        assert_eq!(a.sum_rows().broadcast_rows(2).data(), &[4., 6., 4., 6.]);
    }

    #[test]
    fn constants_stay_constant() {
        let a = Tensor::ones(&[2, 2]);
        assert!(!a.add(&a).tanh().is_attached());
    }

    #[test]
    fn new_rejects_nan_and_bad_length() {
        assert!(Tensor::new(&[2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(&[2, 2], vec![1.0]).is_err());
    }
}
