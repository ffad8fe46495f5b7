use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observation `z = (y, a, x)`. For the missing-data mean `x` holds `w`
/// and `y = a·Y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation<'a> {
    pub y: f64,
    pub a: &'a [f64],
    pub x: &'a [f64],
}

impl<'a> Observation<'a> {
    pub fn new(y: f64, a: &'a [f64], x: &'a [f64]) -> Self {
        Observation { y, a, x }
    }

    /// First (for scalar functionals, the only) component of `a`.
    pub fn a(&self) -> f64 {
        self.a[0]
    }
}

/// Column-major sample: `y` (n), `a` (n × a_dim, row-major), `x` (n × r,
/// row-major). Covariates are checked to lie in `[0,1]^r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    y: Vec<f64>,
    a: Vec<f64>,
    a_dim: usize,
    x: Vec<f64>,
    r: usize,
}

impl Dataset {
    pub fn new(y: Vec<f64>, a: Vec<f64>, a_dim: usize, x: Vec<f64>, r: usize) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::EmptyInput("dataset has no observations".into()));
        }
        if a_dim == 0 || r == 0 {
            return Err(Error::InvalidSpec("a_dim and r must be positive".into()));
        }
        if a.len() != n * a_dim {
            return Err(Error::DimensionMismatch {
                what: "a values".into(),
                expected: n * a_dim,
                got: a.len(),
            });
        }
        if x.len() != n * r {
            return Err(Error::DimensionMismatch {
                what: "x values".into(),
                expected: n * r,
                got: x.len(),
            });
        }
        for (i, &v) in x.iter().enumerate() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Data {
                    row: i / r + 1,
                    message: format!("covariate {} = {v} outside [0, 1]", i % r + 1),
                });
            }
        }
        for (i, v) in y.iter().chain(&a).enumerate() {
            if !v.is_finite() {
                let row = if i < n { i + 1 } else { (i - n) / a_dim + 1 };
                return Err(Error::Data {
                    row,
                    message: "non-finite value".into(),
                });
            }
        }
        Ok(Dataset { y, a, a_dim, x, r })
    }

    /// Scalar-`a` convenience constructor from per-observation tuples.
    pub fn from_scalar(rows: &[(f64, f64, Vec<f64>)]) -> Result<Self> {
        let r = rows.first().map_or(1, |t| t.2.len());
        let mut y = Vec::with_capacity(rows.len());
        let mut a = Vec::with_capacity(rows.len());
        let mut x = Vec::with_capacity(rows.len() * r);
        for (yi, ai, xi) in rows {
            if xi.len() != r {
                return Err(Error::DimensionMismatch {
                    what: "covariate dimension".into(),
                    expected: r,
                    got: xi.len(),
                });
            }
            y.push(*yi);
            a.push(*ai);
            x.extend_from_slice(xi);
        }
        Dataset::new(y, a, 1, x, r)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn a_dim(&self) -> usize {
        self.a_dim
    }

    pub fn y(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn a(&self, i: usize) -> &[f64] {
        &self.a[i * self.a_dim..(i + 1) * self.a_dim]
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.x[i * self.r..(i + 1) * self.r]
    }

    pub fn obs(&self, i: usize) -> Observation<'_> {
        Observation {
            y: self.y[i],
            a: self.a(i),
            x: self.x(i),
        }
    }

    pub fn ys(&self) -> &[f64] {
        &self.y
    }

    /// Observations reordered (or subsampled) by `idx`.
    pub fn select(&self, idx: &[usize]) -> Result<Dataset> {
        let mut y = Vec::with_capacity(idx.len());
        let mut a = Vec::with_capacity(idx.len() * self.a_dim);
        let mut x = Vec::with_capacity(idx.len() * self.r);
        for &i in idx {
            y.push(self.y[i]);
            a.extend_from_slice(self.a(i));
            x.extend_from_slice(self.x(i));
        }
        Dataset::new(y, a, self.a_dim, x, self.r)
    }

    pub fn require_scalar_a(&self) -> Result<()> {
        if self.a_dim != 1 {
            return Err(Error::Unsupported(format!(
                "this estimator needs scalar a, dataset has {} columns",
                self.a_dim
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accessors() {
        let d = Dataset::new(vec![1.0, 2.0], vec![1.0, 0.0, 3.0, 4.0], 2, vec![0.1, 0.2, 0.3, 0.4], 2).unwrap();
        assert_eq!(d.n(), 2);
        assert_eq!(d.a(1), &[3.0, 4.0]);
        assert_eq!(d.x(0), &[0.1, 0.2]);
        assert_eq!(d.obs(1).y, 2.0);
        let s = d.select(&[1]).unwrap();
        assert_eq!(s.a(0), &[3.0, 4.0]);
    }

    #[test]
    fn rejects_out_of_range_covariate() {
        let e = Dataset::new(vec![1.0, 2.0], vec![1.0, 1.0], 1, vec![0.5, 1.5], 1).unwrap_err();
        assert!(matches!(e, Error::Data { row: 2, .. }));
    }

    #[test]
    fn rejects_shape_errors() {
        assert!(Dataset::new(vec![], vec![], 1, vec![], 1).is_err());
        assert!(Dataset::new(vec![1.0], vec![1.0, 2.0], 1, vec![0.5], 1).is_err());
    }
}
