//! Dense and low-rank matrix primitives.
//!
//! Values are stored row-major at 32-bit precision; every reduction
//! (inner products, norms, matrix products) accumulates in 64-bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense `rows x cols` matrix in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl WeightMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Dimension {
                op: "WeightMatrix::new",
                left: (rows, cols),
                right: (values.len(), 1),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{rows}x{cols} matrix")));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix from 64-bit values, rounding each to 32-bit.
    pub fn from_f64(rows: usize, cols: usize, values: &[f64]) -> Result<Self> {
        Self::new(rows, cols, values.iter().map(|&v| v as f32).collect())
    }

    pub fn from_rows(rows: &[&[f32]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
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

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.values[r * self.cols + c]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    fn check_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Dimension {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    /// Returns `alpha * self` rounded back to storage precision.
    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            values: self
                .values
                .iter()
                .map(|&v| (alpha * v as f64) as f32)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        axpy(-1.0, other, self)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        axpy(1.0, other, self)
    }

    pub fn transpose(&self) -> Self {
        let mut values = vec![0.0f32; self.values.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                values[c * self.rows + r] = self.values[r * self.cols + c];
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            values,
        }
    }

    /// Matrix product `self * rhs` with 64-bit accumulation.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension {
                op: "matmul",
                left: self.shape(),
                right: rhs.shape(),
            });
        }
        let (n, k, m) = (self.rows, self.cols, rhs.cols);
        let mut acc = vec![0.0f64; n * m];
        for i in 0..n {
            for p in 0..k {
                let a = self.values[i * k + p] as f64;
                if a == 0.0 {
                    continue;
                }
                let row = &rhs.values[p * m..(p + 1) * m];
                let out = &mut acc[i * m..(i + 1) * m];
                for (o, &b) in out.iter_mut().zip(row) {
                    *o += a * b as f64;
                }
            }
        }
        Ok(Self {
            rows: n,
            cols: m,
            values: acc.into_iter().map(|v| v as f32).collect(),
        })
    }
}

/// Low-rank adapter factors whose materialization `(alpha / r) * B * A`
/// is a module's parameter drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraDelta {
    /// `r x d_in`
    pub a: WeightMatrix,
    /// `d_out x r`
    pub b: WeightMatrix,
    pub rank: usize,
    pub scale_alpha: f64,
}

impl LoraDelta {
    pub fn new(a: WeightMatrix, b: WeightMatrix, scale_alpha: f64) -> Result<Self> {
        let rank = a.rows();
        let delta = Self {
            a,
            b,
            rank,
            scale_alpha,
        };
        delta.validate()?;
        Ok(delta)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::invalid("LoRA rank must be positive"));
        }
        if !(self.scale_alpha > 0.0 && self.scale_alpha.is_finite()) {
            return Err(Error::invalid(format!(
                "LoRA alpha must be positive, got {}",
                self.scale_alpha
            )));
        }
        if self.a.rows() != self.rank || self.b.cols() != self.rank {
            return Err(Error::Dimension {
                op: "LoraDelta",
                left: self.b.shape(),
                right: self.a.shape(),
            });
        }
        Ok(())
    }

    /// `alpha / r`
    pub fn scaling(&self) -> f64 {
        self.scale_alpha / self.rank as f64
    }

    /// `(d_out, d_in)` of the module this adapter wraps.
    pub fn target_shape(&self) -> (usize, usize) {
        (self.b.rows(), self.a.cols())
    }
}

/// Materializes an adapter into the dense drift `(alpha / r) * B * A`.
pub fn materialize(delta: &LoraDelta) -> Result<WeightMatrix> {
    delta.validate()?;
    let (n, r, m) = (delta.b.rows(), delta.rank, delta.a.cols());
    let s = delta.scaling();
    let a = delta.a.values();
    let b = delta.b.values();
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0f64;
            for p in 0..r {
                acc += b[i * r + p] as f64 * a[p * m + j] as f64;
            }
            out.push((s * acc) as f32);
        }
    }
    WeightMatrix::new(n, m, out)
}

/// Sum of elementwise products, accumulated in 64-bit.
pub fn frobenius_inner(x: &WeightMatrix, y: &WeightMatrix) -> Result<f64> {
    x.check_same_shape(y, "frobenius_inner")?;
    Ok(x.values
        .iter()
        .zip(&y.values)
        .map(|(&a, &b)| a as f64 * b as f64)
        .sum())
}

pub fn frobenius_norm(x: &WeightMatrix) -> f64 {
    x.values
        .iter()
        .map(|&v| {
            let v = v as f64;
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// `alpha * x + y`, elementwise.
pub fn axpy(alpha: f64, x: &WeightMatrix, y: &WeightMatrix) -> Result<WeightMatrix> {
    x.check_same_shape(y, "axpy")?;
    let values = x
        .values
        .iter()
        .zip(&y.values)
        .map(|(&a, &b)| (alpha * a as f64 + b as f64) as f32)
        .collect::<Vec<_>>();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("axpy result".into()));
    }
    Ok(WeightMatrix {
        rows: x.rows,
        cols: x.cols,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f32]]) -> WeightMatrix {
        WeightMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn rank_one_outer_product() {
        let delta = LoraDelta::new(m(&[&[3.0, 4.0]]), m(&[&[1.0], &[2.0]]), 1.0).unwrap();
        let w = materialize(&delta).unwrap();
        assert_eq!(w, m(&[&[3.0, 4.0], &[6.0, 8.0]]));
    }

    #[test]
    fn rank8_alpha16_doubles_product() {
        let a = WeightMatrix::new(8, 3, (0..24).map(|i| i as f32 * 0.25 - 2.0).collect()).unwrap();
        let b = WeightMatrix::new(2, 8, (0..16).map(|i| 1.0 - i as f32 * 0.125).collect()).unwrap();
        let ba = b.matmul(&a).unwrap();
        let w = materialize(&LoraDelta::new(a, b, 16.0).unwrap()).unwrap();
        assert_eq!(w, ba.scaled(2.0));
    }

    #[test]
    fn zero_b_annihilates() {
        let a = WeightMatrix::new(2, 5, vec![0.7; 10]).unwrap();
        let w = materialize(&LoraDelta::new(a, WeightMatrix::zeros(4, 2), 3.0).unwrap()).unwrap();
        assert!(w.is_zero());
        assert_eq!(w.shape(), (4, 5));
    }

    #[test]
    fn lora_shape_mismatch_is_dimension_error() {
        let err = LoraDelta::new(WeightMatrix::zeros(2, 4), WeightMatrix::zeros(3, 3), 1.0);
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn inner_product_examples() {
        let x = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let y = m(&[&[5.0, 6.0], &[7.0, 8.0]]);
        assert_eq!(frobenius_inner(&x, &y).unwrap(), 70.0);
        assert_eq!(
            frobenius_inner(&x, &WeightMatrix::zeros(2, 2)).unwrap(),
            0.0
        );
        let n = frobenius_norm(&x);
        assert!((frobenius_inner(&x, &x).unwrap() - n * n).abs() <= 1e-10 * n * n);
        assert!(frobenius_inner(&x, &WeightMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn norm_examples() {
        assert_eq!(frobenius_norm(&WeightMatrix::zeros(3, 3)), 0.0);
        assert!((frobenius_norm(&WeightMatrix::identity(3)) - 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(frobenius_norm(&m(&[&[3.0, 4.0]])), 5.0);
    }

    #[test]
    fn axpy_examples() {
        let x = m(&[&[1.0, -2.0]]);
        let y = m(&[&[0.5, 4.0]]);
        assert_eq!(axpy(0.0, &x, &y).unwrap(), y);
        assert_eq!(axpy(1.0, &x, &WeightMatrix::zeros(1, 2)).unwrap(), x);
        assert_eq!(
            axpy(2.0, &m(&[&[1.0]]), &m(&[&[3.0]])).unwrap(),
            m(&[&[5.0]])
        );
        assert!(axpy(1.0, &x, &WeightMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(WeightMatrix::new(1, 1, vec![f32::NAN]).is_err());
        assert!(WeightMatrix::new(1, 2, vec![1.0]).is_err());
    }
}
