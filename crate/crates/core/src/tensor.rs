//! Dense row-major matrices of `f64`.
//!
//! Every reduction accumulates from `0.0` in ascending index order, so a
//! given input always produces the same bits.

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::RandomSource;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor({}x{}, {:?})", self.rows, self.cols, self.data)
    }
}

/// Pointwise operations accepted by [`Tensor::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Relu,
    Sigmoid,
    Tanh,
}

impl Elementwise {
    fn is_binary(self) -> bool {
        matches!(self, Elementwise::Add | Elementwise::Sub | Elementwise::Mul)
    }
}

/// Logistic function in the branch form that never exponentiates a
/// positive argument.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} values cannot fill a {rows}x{cols} tensor",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a tensor from nested rows. Panics on ragged input; meant for
    /// literals in tests and examples.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    /// Column vector (n x 1).
    pub fn column(values: Vec<f64>) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values,
        }
    }

    /// I.i.d. uniform entries in `[lo, hi)`, drawn in row-major order.
    pub fn uniform_fill(rng: &mut RandomSource, lo: f64, hi: f64, rows: usize, cols: usize) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Parameter(format!("uniform range [{lo}, {hi}) is empty or not finite")));
        }
        let data = (0..rows * cols).map(|_| rng.uniform_range(lo, hi)).collect();
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col_values(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Like [`Tensor::map`] but visits elements in row-major order with a
    /// stateful closure.
    pub fn map_with(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc + v * v)
    }

    /// Matrix product. For every output entry the products are summed
    /// from `0.0` in ascending inner index.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Tensor::zeros(self.rows, other.cols);
        let n = other.cols;
        for i in 0..self.rows {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for (j, &a) in self.row(i).iter().enumerate() {
                let b_row = &other.data[j * n..(j + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self * x` for a plain vector, same accumulation order as
    /// [`Tensor::matmul`] with a column operand.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.cols != x.len() {
            return Err(Error::Dimension(format!(
                "matvec {}x{} by vector of length {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        Ok(matvec_unchecked(&self.data, self.rows, self.cols, x))
    }

    pub fn elementwise(&self, op: Elementwise, other: Option<&Tensor>) -> Result<Tensor> {
        match (op.is_binary(), other) {
            (true, Some(b)) => {
                if b.shape() != self.shape() {
                    return Err(Error::Dimension(format!(
                        "{op:?} of {:?} and {:?}",
                        self.shape(),
                        b.shape()
                    )));
                }
                let f = match op {
                    Elementwise::Add => |x: f64, y: f64| x + y,
                    Elementwise::Sub => |x: f64, y: f64| x - y,
                    _ => |x: f64, y: f64| x * y,
                };
                Ok(Tensor {
                    rows: self.rows,
                    cols: self.cols,
                    data: self.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
                })
            }
            (true, None) => Err(Error::Parameter(format!("{op:?} needs a second operand"))),
            (false, Some(_)) => Err(Error::Parameter(format!("{op:?} takes one operand"))),
            (false, None) => Ok(match op {
                Elementwise::Relu => self.map(relu),
                Elementwise::Sigmoid => self.map(sigmoid),
                _ => self.map(f64::tanh),
            }),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(Elementwise::Add, Some(other))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(Elementwise::Sub, Some(other))
    }

    pub fn hadamard(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(Elementwise::Mul, Some(other))
    }

    /// Adds a column vector to every column (bias per row).
    pub fn add_column_bias(&self, bias: &Tensor) -> Result<Tensor> {
        if bias.cols != 1 || bias.rows != self.rows {
            return Err(Error::Dimension(format!(
                "bias {:?} for tensor {:?}",
                bias.shape(),
                self.shape()
            )));
        }
        let mut out = self.clone();
        for r in 0..self.rows {
            let b = bias.data[r];
            out.row_mut(r).iter_mut().for_each(|v| *v += b);
        }
        Ok(out)
    }

    /// Row-wise `x - max(x) - ln(sum(exp(x - max(x))))`.
    pub fn log_softmax_rows(&self) -> Tensor {
        let mut out = self.clone();
        for r in 0..self.rows {
            log_softmax_in_place(out.row_mut(r));
        }
        out
    }
}

/// Row-major `w * x` over raw storage.
#[inline]
pub(crate) fn matvec_unchecked(w: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    if cols == 0 {
        return vec![0.0; rows];
    }
    w.chunks_exact(cols)
        .map(|row| row.iter().zip(x).fold(0.0, |acc, (&a, &b)| acc + a * b))
        .collect()
}

pub fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return;
    }
    let sum = row.iter().fold(0.0, |acc, &v| acc + (v - max).exp());
    let log_sum = sum.ln();
    row.iter_mut().for_each(|v| *v = *v - max - log_sum);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Tensor, b: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for k in 0..b.cols() {
                let mut acc = 0.0;
                for j in 0..a.cols() {
                    acc += a.get(i, j) * b.get(j, k);
                }
                out.set(i, k, acc);
            }
        }
        out
    }

    #[test]
    fn identity_times_matrix() {
        let m = Tensor::from_rows(&[[1.5, -2.0], [0.25, 7.0]]);
        assert_eq!(Tensor::identity(2).matmul(&m).unwrap(), m);
    }

    #[test]
    fn hand_product() {
        let a = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = Tensor::from_rows(&[[1.0], [1.0]]);
        assert_eq!(a.matmul(&b).unwrap(), Tensor::from_rows(&[[3.0], [7.0]]));
    }

    #[test]
    fn matmul_matches_triple_loop_bitwise() {
        let mut rng = RandomSource::new(11);
        let a = Tensor::uniform_fill(&mut rng, -1.0, 1.0, 5, 7).unwrap();
        let b = Tensor::uniform_fill(&mut rng, -1.0, 1.0, 7, 3).unwrap();
        let got = a.matmul(&b).unwrap();
        let want = naive_matmul(&a, &b);
        for (g, w) in got.data().iter().zip(want.data()) {
            assert_eq!(g.to_bits(), w.to_bits());
        }
    }

    #[test]
    fn matvec_agrees_with_matmul() {
        let mut rng = RandomSource::new(12);
        let a = Tensor::uniform_fill(&mut rng, -1.0, 1.0, 4, 6).unwrap();
        let x: Vec<f64> = (0..6).map(|_| rng.uniform()).collect();
        let col = a.matmul(&Tensor::column(x.clone())).unwrap();
        assert_eq!(a.matvec(&x).unwrap(), col.into_vec());
    }

    #[test]
    fn shape_errors() {
        let a = Tensor::zeros(2, 3);
        assert!(matches!(a.matmul(&Tensor::zeros(2, 3)), Err(Error::Dimension(_))));
        assert!(matches!(a.add(&Tensor::zeros(3, 2)), Err(Error::Dimension(_))));
        assert!(matches!(a.matvec(&[1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn pointwise_examples() {
        let t = Tensor::from_rows(&[[-1.0, 0.0, 2.0]]);
        assert_eq!(t.elementwise(Elementwise::Relu, None).unwrap().data(), &[0.0, 0.0, 2.0]);
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(Tensor::from_rows(&[[1e6]]).elementwise(Elementwise::Tanh, None).unwrap().data(), &[1.0]);
        assert_eq!(sigmoid(-1e6), 0.0);
        assert_eq!(sigmoid(1e6), 1.0);
        let b = Tensor::from_rows(&[[2.0, 3.0, 4.0]]);
        assert_eq!(t.elementwise(Elementwise::Mul, Some(&b)).unwrap().data(), &[-2.0, 0.0, 8.0]);
        assert_eq!(t.sub(&b).unwrap().data(), &[-3.0, -3.0, -2.0]);
    }

    #[test]
    fn log_softmax_examples() {
        let out = Tensor::from_rows(&[[0.0, 0.0]]).log_softmax_rows();
        let ln2 = std::f64::consts::LN_2;
        assert!((out.get(0, 0) + ln2).abs() < 1e-15);
        assert!((out.get(0, 1) + ln2).abs() < 1e-15);

        let out = Tensor::from_rows(&[[1000.0, 0.0]]).log_softmax_rows();
        assert!(out.get(0, 0).abs() < 1e-300);
        assert!((out.get(0, 1) + 1000.0).abs() < 1e-9);
    }

    #[test]
    fn log_softmax_rows_normalise() {
        let mut rng = RandomSource::new(5);
        let t = Tensor::uniform_fill(&mut rng, -50.0, 50.0, 20, 13).unwrap();
        let out = t.log_softmax_rows();
        for r in 0..out.rows() {
            let s: f64 = out.row(r).iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12, "row {r}: {s}");
        }
    }

    #[test]
    fn uniform_fill_contract() {
        let a = Tensor::uniform_fill(&mut RandomSource::new(42), -0.01, 0.01, 8, 9).unwrap();
        let b = Tensor::uniform_fill(&mut RandomSource::new(42), -0.01, 0.01, 8, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (-0.01..0.01).contains(v)));
        assert!(matches!(
            Tensor::uniform_fill(&mut RandomSource::new(1), 1.0, 1.0, 1, 1),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn uniform_mean_law_of_large_numbers() {
        // sd of the mean of 1e6 U[0,1) draws is 0.000289; 0.002 is ~7 sd
        let t = Tensor::uniform_fill(&mut RandomSource::new(2024), 0.0, 1.0, 1000, 1000).unwrap();
        let mean = t.data().iter().sum::<f64>() / 1e6;
        assert!((mean - 0.5).abs() < 0.002, "{mean}");
    }

    #[test]
    fn bias_and_transpose() {
        let t = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = Tensor::column(vec![10.0, 20.0]);
        assert_eq!(t.add_column_bias(&b).unwrap(), Tensor::from_rows(&[[11.0, 12.0], [23.0, 24.0]]));
        assert_eq!(t.transpose(), Tensor::from_rows(&[[1.0, 3.0], [2.0, 4.0]]));
    }
}
