//! Tensor-product b-spline dictionaries on the unit cube.
//!
//! A [`Basis`] holds clamped, evenly spaced knots per coordinate. Order 0
//! (`kappa = 0`) gives the Haar basis of cube indicators. Evaluation returns
//! either the dense `K`-vector `p(x)` or its nonzero pattern, which has at most
//! `(kappa + 1)^r` entries.

pub mod quadrature;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use quadrature::gauss_legendre_on;

/// Largest supported spline degree.
pub const MAX_KAPPA: usize = 15;

/// Scaling applied to every per-coordinate factor of the basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Raw b-splines; these form a partition of unity.
    #[default]
    None,
    /// Each factor is scaled by `sqrt(cells_per_dim)`, so the Haar gram under
    /// the uniform law is the identity.
    UniformDesign,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    /// Covariate dimension.
    pub r: usize,
    /// Polynomial degree of each piece; 0 is Haar.
    pub kappa: usize,
    /// Equal-width knot intervals per coordinate.
    pub cells_per_dim: usize,
    #[serde(default)]
    pub normalization: Normalization,
}

impl BasisSpec {
    pub fn new(r: usize, kappa: usize, cells_per_dim: usize) -> Self {
        BasisSpec {
            r,
            kappa,
            cells_per_dim,
            normalization: Normalization::None,
        }
    }

    pub fn haar(r: usize, cells_per_dim: usize) -> Self {
        Self::new(r, 0, cells_per_dim)
    }

    pub fn with_normalization(mut self, normalization: Normalization) -> Self {
        self.normalization = normalization;
        self
    }

    /// Number of basis functions per coordinate.
    pub fn per_dim(&self) -> usize {
        self.cells_per_dim + self.kappa
    }

    /// Total dictionary size `K = (cells + kappa)^r`.
    pub fn total_size(&self) -> usize {
        self.per_dim().pow(self.r as u32)
    }
}

/// Quadrature used to integrate against the basis: Gauss–Legendre nodes per
/// knot cell and coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub nodes_per_cell: usize,
}

impl QuadratureSpec {
    /// `kappa + 2` nodes, exact for the basis pieces times a weight of degree
    /// up to `kappa + 3`.
    pub fn default_for(kappa: usize) -> Self {
        QuadratureSpec {
            nodes_per_cell: kappa + 2,
        }
    }
}

/// Nonzero entries of `p(x)`.
#[derive(Debug, Clone, Default)]
pub struct SparseRow {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseRow {
    pub fn dot(&self, coeffs: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&k, v)| coeffs[k] * v).sum()
    }

    pub fn to_dense(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; k];
        for (&i, &v) in self.idx.iter().zip(&self.val) {
            out[i] += v;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    spec: BasisSpec,
    knots: Vec<f64>,
    per_dim: usize,
    size: usize,
    scale: f64,
}

impl Basis {
    pub fn new(spec: BasisSpec) -> Result<Self> {
        if spec.r == 0 {
            return Err(Error::InvalidSpec("basis dimension r must be at least 1".into()));
        }
        if spec.cells_per_dim == 0 {
            return Err(Error::InvalidSpec("cells_per_dim must be at least 1".into()));
        }
        if spec.kappa > MAX_KAPPA {
            return Err(Error::InvalidSpec(format!("kappa must be at most {MAX_KAPPA}")));
        }
        let m = spec.cells_per_dim;
        let p = spec.kappa;
        let mut knots = Vec::with_capacity(m + 2 * p + 1);
        knots.extend(std::iter::repeat(0.0).take(p));
        knots.extend((0..=m).map(|j| j as f64 / m as f64));
        knots.extend(std::iter::repeat(1.0).take(p));
        let scale = match spec.normalization {
            Normalization::None => 1.0,
            Normalization::UniformDesign => (m as f64).sqrt(),
        };
        let per_dim = spec.per_dim();
        let size = per_dim
            .checked_pow(spec.r as u32)
            .ok_or_else(|| Error::InvalidSpec("basis size overflows".into()))?;
        Ok(Basis {
            spec,
            knots,
            per_dim,
            size,
            scale,
        })
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    /// Total number of basis functions `K`.
    pub fn k(&self) -> usize {
        self.size
    }

    pub fn r(&self) -> usize {
        self.spec.r
    }

    pub fn kappa(&self) -> usize {
        self.spec.kappa
    }

    /// Clamped knot vector shared by every coordinate.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Knot cell of `t`; `t = 1` belongs to the last cell.
    fn cell_of(&self, t: f64) -> usize {
        let m = self.spec.cells_per_dim;
        ((t * m as f64).floor() as usize).min(m - 1)
    }

    /// Nonzero univariate values at `t`: returns the index of the first nonzero
    /// function and writes `kappa + 1` values into `out`.
    fn eval_1d(&self, t: f64, out: &mut [f64]) -> usize {
        let p = self.spec.kappa;
        let cell = self.cell_of(t);
        let span = cell + p;
        let u = &self.knots;
        out[0] = 1.0;
        let mut left = [0.0; MAX_KAPPA + 1];
        let mut right = [0.0; MAX_KAPPA + 1];
        for j in 1..=p {
            left[j] = t - u[span + 1 - j];
            right[j] = u[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        for v in out.iter_mut().take(p + 1) {
            *v *= self.scale;
        }
        cell
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.r {
            return Err(Error::DimensionMismatch {
                what: "point dimension".into(),
                expected: self.spec.r,
                got: x.len(),
            });
        }
        for (coord, &value) in x.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::Domain { coord, value });
            }
        }
        Ok(())
    }

    /// Nonzero entries of `p(x)`, written into `row` (cleared first).
    pub fn eval_sparse_into(&self, x: &[f64], row: &mut SparseRow) -> Result<()> {
        self.check_point(x)?;
        row.idx.clear();
        row.val.clear();
        let q = self.spec.kappa + 1;
        let r = self.spec.r;
        let mut vals = vec![0.0; q * r];
        let mut first = vec![0usize; r];
        for d in 0..r {
            first[d] = self.eval_1d(x[d], &mut vals[d * q..(d + 1) * q]);
        }
        // odometer over the (kappa+1)^r local tensor products; coordinate 0 varies fastest
        let mut local = vec![0usize; r];
        loop {
            let mut idx = 0usize;
            let mut stride = 1usize;
            let mut v = 1.0;
            for d in 0..r {
                idx += (first[d] + local[d]) * stride;
                stride *= self.per_dim;
                v *= vals[d * q + local[d]];
            }
            if v != 0.0 {
                row.idx.push(idx);
                row.val.push(v);
            }
            let mut d = 0;
            while d < r {
                local[d] += 1;
                if local[d] < q {
                    break;
                }
                local[d] = 0;
                d += 1;
            }
            if d == r {
                break;
            }
        }
        Ok(())
    }

    pub fn eval_sparse(&self, x: &[f64]) -> Result<SparseRow> {
        let mut row = SparseRow::default();
        self.eval_sparse_into(x, &mut row)?;
        Ok(row)
    }

    /// Dense `p(x)`.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval_sparse(x)?.to_dense(self.size))
    }

    /// `∫ ω(x) p(x) dx` over `[0,1]^r` by composite Gauss–Legendre quadrature on
    /// the knot cells, tensorized across coordinates.
    pub fn integrate_weighted(&self, omega: &dyn Fn(&[f64]) -> f64, quad: QuadratureSpec) -> Result<Vec<f64>> {
        if quad.nodes_per_cell == 0 {
            return Err(Error::InvalidSpec("quadrature needs at least one node per cell".into()));
        }
        let m = self.spec.cells_per_dim;
        let mut nodes = Vec::with_capacity(m * quad.nodes_per_cell);
        let mut weights = Vec::with_capacity(m * quad.nodes_per_cell);
        for c in 0..m {
            let (t, w) = gauss_legendre_on(
                quad.nodes_per_cell,
                c as f64 / m as f64,
                (c + 1) as f64 / m as f64,
            );
            nodes.extend(t);
            weights.extend(w);
        }
        let mut out = vec![0.0; self.size];
        let mut row = SparseRow::default();
        for_each_tensor_node(&nodes, &weights, self.spec.r, |x, w| {
            let wx = w * omega(x);
            if wx != 0.0 {
                self.eval_sparse_into(x, &mut row)?;
                for (&k, &v) in row.idx.iter().zip(&row.val) {
                    out[k] += wx * v;
                }
            }
            Ok(())
        })?;
        Ok(out)
    }
}

/// A finite dictionary of functions on `[0,1]^r` used as regressors.
///
/// [`Basis`] is the standard implementation; [`Reparametrized`] wraps one in
/// an invertible linear map.
pub trait Dictionary: Sync {
    /// Number of functions `K`.
    fn k(&self) -> usize;

    /// Covariate dimension.
    fn r(&self) -> usize;

    /// Writes the nonzero entries of `p(x)` into `row`.
    fn eval_sparse_into(&self, x: &[f64], row: &mut SparseRow) -> Result<()>;

    /// `∫ ω(x) p(x) dx` over `[0,1]^r`.
    fn integrate(&self, omega: &dyn Fn(&[f64]) -> f64, quad: QuadratureSpec) -> Result<Vec<f64>>;

    /// Quadrature used when the caller does not pick one.
    fn default_quadrature(&self) -> QuadratureSpec;

    fn eval_sparse(&self, x: &[f64]) -> Result<SparseRow> {
        let mut row = SparseRow::default();
        self.eval_sparse_into(x, &mut row)?;
        Ok(row)
    }

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval_sparse(x)?.to_dense(self.k()))
    }
}

impl Dictionary for Basis {
    fn k(&self) -> usize {
        self.size
    }

    fn r(&self) -> usize {
        self.spec.r
    }

    fn eval_sparse_into(&self, x: &[f64], row: &mut SparseRow) -> Result<()> {
        Basis::eval_sparse_into(self, x, row)
    }

    fn integrate(&self, omega: &dyn Fn(&[f64]) -> f64, quad: QuadratureSpec) -> Result<Vec<f64>> {
        self.integrate_weighted(omega, quad)
    }

    fn default_quadrature(&self) -> QuadratureSpec {
        QuadratureSpec::default_for(self.spec.kappa)
    }
}

/// The dictionary `x ↦ M p(x)` for a square matrix `M`.
#[derive(Debug, Clone)]
pub struct Reparametrized {
    inner: Basis,
    map: nalgebra::DMatrix<f64>,
}

impl Reparametrized {
    pub fn new(inner: Basis, map: nalgebra::DMatrix<f64>) -> Result<Self> {
        let k = inner.k();
        if map.nrows() != k || map.ncols() != k {
            return Err(Error::DimensionMismatch {
                what: "reparametrization matrix".into(),
                expected: k,
                got: map.nrows().max(map.ncols()),
            });
        }
        Ok(Reparametrized { inner, map })
    }
}

impl Dictionary for Reparametrized {
    fn k(&self) -> usize {
        self.inner.k()
    }

    fn r(&self) -> usize {
        self.inner.r()
    }

    fn eval_sparse_into(&self, x: &[f64], row: &mut SparseRow) -> Result<()> {
        let base = self.inner.eval_sparse(x)?;
        let k = self.k();
        row.idx.clear();
        row.val.clear();
        for i in 0..k {
            let v: f64 = base.idx.iter().zip(&base.val).map(|(&j, &b)| self.map[(i, j)] * b).sum();
            row.idx.push(i);
            row.val.push(v);
        }
        Ok(())
    }

    fn integrate(&self, omega: &dyn Fn(&[f64]) -> f64, quad: QuadratureSpec) -> Result<Vec<f64>> {
        let v = nalgebra::DVector::from_vec(self.inner.integrate_weighted(omega, quad)?);
        Ok((&self.map * v).as_slice().to_vec())
    }

    fn default_quadrature(&self) -> QuadratureSpec {
        QuadratureSpec::default_for(self.inner.kappa())
    }
}

/// Visits every point of the tensor product of a 1-D rule with itself `r` times.
pub(crate) fn for_each_tensor_node<F>(nodes: &[f64], weights: &[f64], r: usize, mut visit: F) -> Result<()>
where
    F: FnMut(&[f64], f64) -> Result<()>,
{
    let len = nodes.len();
    let mut pos = vec![0usize; r];
    let mut x = vec![0.0; r];
    loop {
        let mut w = 1.0;
        for d in 0..r {
            x[d] = nodes[pos[d]];
            w *= weights[pos[d]];
        }
        visit(&x, w)?;
        let mut d = 0;
        while d < r {
            pos[d] += 1;
            if pos[d] < len {
                break;
            }
            pos[d] = 0;
            d += 1;
        }
        if d == r {
            return Ok(());
        }
    }
}
