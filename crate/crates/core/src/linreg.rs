//! Gram matrices, PSD generalized inverses and series fits.
//!
//! All moments use `1/n` averaging. Coefficients are always `Σ⁺ h` with `Σ⁺`
//! the Moore–Penrose inverse obtained from a symmetric eigendecomposition, so
//! fitted coefficients lie in the row space of the gram matrix even when some
//! cells are empty.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::basis::{Dictionary, SparseRow};
use crate::error::{Error, Result};

/// Relative eigenvalue cutoff for rank truncation.
pub const DEFAULT_REL_TOL: f64 = 1e-10;
/// A gram is flagged nonsingular when its smallest eigenvalue exceeds this.
pub const EIG_THRESHOLD: f64 = 1e-8;
/// Diagnostic-only gate on the smallest eigenvalue (meaningful under the
/// uniform-design normalization).
pub const THEORY_GATE: f64 = 0.5;

const SYMMETRY_TOL: f64 = 1e-10;

/// A gram matrix together with its spectrum summary and pseudo-inverse.
#[derive(Debug, Clone)]
pub struct GramSummary {
    pub matrix: DMatrix<f64>,
    pub rank: usize,
    pub min_eig: f64,
    pub max_eig: f64,
    /// `min_eig > EIG_THRESHOLD`.
    pub nonsingular_flag: bool,
    /// `min_eig > THEORY_GATE`; reported, never enforced.
    pub theory_gate: bool,
    /// Basis functions with no support in the sample (zero diagonal).
    pub empty_columns: Vec<usize>,
    pinv: DMatrix<f64>,
}

/// Serializable summary of a [`GramSummary`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GramDiagnostics {
    pub k: usize,
    pub rank: usize,
    pub min_eig: f64,
    pub max_eig: f64,
    pub nonsingular: bool,
    pub theory_gate: bool,
    pub empty_columns: usize,
}

impl GramSummary {
    pub fn from_matrix(matrix: DMatrix<f64>, rel_tol: f64) -> Result<Self> {
        let (pinv, eig) = psd_decompose(&matrix, rel_tol)?;
        let max_eig = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min_eig = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let rank = eig.iter().filter(|&&l| max_eig > 0.0 && l > rel_tol * max_eig).count();
        let empty_columns = (0..matrix.nrows()).filter(|&i| matrix[(i, i)] == 0.0).collect();
        Ok(GramSummary {
            rank,
            min_eig,
            max_eig,
            nonsingular_flag: min_eig > EIG_THRESHOLD,
            theory_gate: min_eig > THEORY_GATE,
            empty_columns,
            matrix,
            pinv,
        })
    }

    pub fn k(&self) -> usize {
        self.matrix.nrows()
    }

    /// Moore–Penrose inverse of the gram.
    pub fn pinv(&self) -> &DMatrix<f64> {
        &self.pinv
    }

    /// `Σ⁺ h`.
    pub fn solve(&self, h: &[f64]) -> Vec<f64> {
        let h = DVector::from_column_slice(h);
        (&self.pinv * h).as_slice().to_vec()
    }

    pub fn diagnostics(&self) -> GramDiagnostics {
        GramDiagnostics {
            k: self.k(),
            rank: self.rank,
            min_eig: self.min_eig,
            max_eig: self.max_eig,
            nonsingular: self.nonsingular_flag,
            theory_gate: self.theory_gate,
            empty_columns: self.empty_columns.len(),
        }
    }
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch {
            what: "square matrix".into(),
            expected: a.nrows(),
            got: a.ncols(),
        });
    }
    let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in 0..i {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    if worst > SYMMETRY_TOL * scale {
        return Err(Error::NonSymmetric(worst));
    }
    Ok(())
}

fn is_diagonal(a: &DMatrix<f64>) -> bool {
    let n = a.nrows();
    (0..n).all(|j| (0..n).all(|i| i == j || a[(i, j)] == 0.0))
}

/// Pseudo-inverse and eigenvalues of a symmetric PSD matrix.
fn psd_decompose(a: &DMatrix<f64>, rel_tol: f64) -> Result<(DMatrix<f64>, Vec<f64>)> {
    check_symmetric(a)?;
    let n = a.nrows();
    if n == 0 {
        return Ok((DMatrix::zeros(0, 0), Vec::new()));
    }
    if is_diagonal(a) {
        let eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut pinv = DMatrix::zeros(n, n);
        for (i, &l) in eig.iter().enumerate() {
            if max > 0.0 && l > rel_tol * max {
                pinv[(i, i)] = 1.0 / l;
            }
        }
        return Ok((pinv, eig));
    }
    let sym = (a + a.transpose()) * 0.5;
    let SymmetricEigen {
        eigenvectors,
        eigenvalues,
    } = SymmetricEigen::new(sym);
    let max = eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut scaled = eigenvectors.clone();
    for (j, &l) in eigenvalues.iter().enumerate() {
        let inv = if max > 0.0 && l > rel_tol * max { 1.0 / l } else { 0.0 };
        scaled.column_mut(j).scale_mut(inv);
    }
    let pinv = &scaled * eigenvectors.transpose();
    Ok((pinv, eigenvalues.as_slice().to_vec()))
}

/// Moore–Penrose inverse of a symmetric PSD matrix, zeroing eigenvalues below
/// `rel_tol * max_eig`.
pub fn pinv_psd(a: &DMatrix<f64>, rel_tol: f64) -> Result<DMatrix<f64>> {
    Ok(psd_decompose(a, rel_tol)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitTarget {
    Regression,
    Riesz,
}

/// Coefficients `δ` of a series function `p(x)'δ`.
#[derive(Debug, Clone)]
pub struct SeriesFit {
    pub coeffs: Vec<f64>,
    pub gram: Arc<GramSummary>,
    pub n_used: usize,
    pub target: FitTarget,
}

impl SeriesFit {
    pub fn predict(&self, basis: &dyn Dictionary, x: &[f64]) -> Result<f64> {
        Ok(basis.eval_sparse(x)?.dot(&self.coeffs))
    }
}

/// A sample of basis rows with optional observation weights; the gram
/// `(1/n) Σ w_i p(x_i) p(x_i)'` is built once and shared by every response
/// fitted on the same subsample.
#[derive(Debug, Clone)]
pub struct Design {
    rows: Vec<SparseRow>,
    weights: Option<Vec<f64>>,
    gram: Arc<GramSummary>,
}

impl Design {
    pub fn new<'a, I>(basis: &dyn Dictionary, xs: I, weights: Option<Vec<f64>>, rel_tol: f64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let rows = xs
            .into_iter()
            .map(|x| basis.eval_sparse(x))
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Err(Error::EmptyInput("gram needs at least one point".into()));
        }
        if let Some(w) = &weights {
            if w.len() != rows.len() {
                return Err(Error::DimensionMismatch {
                    what: "weights".into(),
                    expected: rows.len(),
                    got: w.len(),
                });
            }
        }
        let k = basis.k();
        let n = rows.len() as f64;
        let mut m = DMatrix::<f64>::zeros(k, k);
        for (i, row) in rows.iter().enumerate() {
            let w = weights.as_ref().map_or(1.0, |w| w[i]);
            if w == 0.0 {
                continue;
            }
            for (&a, &va) in row.idx.iter().zip(&row.val) {
                for (&b, &vb) in row.idx.iter().zip(&row.val) {
                    m[(a, b)] += w * va * vb;
                }
            }
        }
        m /= n;
        let gram = Arc::new(GramSummary::from_matrix(m, rel_tol)?);
        Ok(Design { rows, weights, gram })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn gram(&self) -> &Arc<GramSummary> {
        &self.gram
    }

    pub fn rows(&self) -> &[SparseRow] {
        &self.rows
    }

    /// `(1/n) Σ w_i p(x_i) y_i`.
    pub fn cross_moment(&self, ys: &[f64]) -> Result<Vec<f64>> {
        if ys.len() != self.rows.len() {
            return Err(Error::DimensionMismatch {
                what: "responses".into(),
                expected: self.rows.len(),
                got: ys.len(),
            });
        }
        let mut h = vec![0.0; self.gram.k()];
        for (i, (row, &y)) in self.rows.iter().zip(ys).enumerate() {
            let w = self.weights.as_ref().map_or(1.0, |w| w[i]);
            for (&k, &v) in row.idx.iter().zip(&row.val) {
                h[k] += w * v * y;
            }
        }
        let n = self.rows.len() as f64;
        h.iter_mut().for_each(|v| *v /= n);
        Ok(h)
    }

    /// Least-squares fit of `ys` on the design.
    pub fn fit(&self, ys: &[f64]) -> Result<SeriesFit> {
        let h = self.cross_moment(ys)?;
        self.fit_moment(&h, FitTarget::Regression)
    }

    /// `δ = Σ⁺ h` for an externally formed moment vector `h`.
    pub fn fit_moment(&self, h: &[f64], target: FitTarget) -> Result<SeriesFit> {
        if h.len() != self.gram.k() {
            return Err(Error::DimensionMismatch {
                what: "moment vector".into(),
                expected: self.gram.k(),
                got: h.len(),
            });
        }
        Ok(SeriesFit {
            coeffs: self.gram.solve(h),
            gram: Arc::clone(&self.gram),
            n_used: self.rows.len(),
            target,
        })
    }
}

/// `(1/n) Σ p(x_i) p(x_i)'` with its spectrum summary.
pub fn gram(basis: &dyn Dictionary, xs: &[&[f64]]) -> Result<GramSummary> {
    let design = Design::new(basis, xs.iter().copied(), None, DEFAULT_REL_TOL)?;
    Ok(Arc::try_unwrap(design.gram).unwrap_or_else(|g| (*g).clone()))
}

/// Series regression `δ̂ = Σ̂⁺ ĥ` of `ys` on `p(xs)`.
pub fn fit_regression(basis: &dyn Dictionary, xs: &[&[f64]], ys: &[f64]) -> Result<SeriesFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            what: "xs and ys".into(),
            expected: xs.len(),
            got: ys.len(),
        });
    }
    Design::new(basis, xs.iter().copied(), None, DEFAULT_REL_TOL)?.fit(ys)
}

/// Riesz-representer fit `δ̃ = Σ̃⁺ h̃` with `h̃` the mean of `v_samples` and
/// `Σ̃` the gram of `xs_for_gram`.
pub fn fit_riesz(basis: &dyn Dictionary, v_samples: &[Vec<f64>], xs_for_gram: &[&[f64]]) -> Result<SeriesFit> {
    let h = mean_vector(basis.k(), v_samples)?;
    Design::new(basis, xs_for_gram.iter().copied(), None, DEFAULT_REL_TOL)?.fit_moment(&h, FitTarget::Riesz)
}

/// Componentwise mean of equally sized vectors.
pub fn mean_vector(k: usize, samples: &[Vec<f64>]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no v samples".into()));
    }
    let mut h = vec![0.0; k];
    for v in samples {
        if v.len() != k {
            return Err(Error::DimensionMismatch {
                what: "v sample length".into(),
                expected: k,
                got: v.len(),
            });
        }
        for (acc, x) in h.iter_mut().zip(v) {
            *acc += x;
        }
    }
    let n = samples.len() as f64;
    h.iter_mut().for_each(|x| *x /= n);
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{Basis, BasisSpec};

    fn haar2() -> Basis {
        Basis::new(BasisSpec::haar(1, 2)).unwrap()
    }

    fn constant() -> Basis {
        Basis::new(BasisSpec::haar(1, 1)).unwrap()
    }

    fn pts(v: &[f64]) -> Vec<[f64; 1]> {
        v.iter().map(|&x| [x]).collect()
    }

    fn refs(p: &[[f64; 1]]) -> Vec<&[f64]> {
        p.iter().map(|x| &x[..]).collect()
    }

    #[test]
    fn gram_examples() {
        let p = pts(&[0.1, 0.9, 0.4]);
        let g = gram(&constant(), &refs(&p)).unwrap();
        assert!((g.matrix[(0, 0)] - 1.0).abs() < 1e-15);

        let p = pts(&[0.25, 0.75]);
        let g = gram(&haar2(), &refs(&p)).unwrap();
        assert_eq!(g.matrix, DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]));
        assert!(g.nonsingular_flag);

        let p = pts(&[0.25, 0.3]);
        let g = gram(&haar2(), &refs(&p)).unwrap();
        assert_eq!(g.matrix, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert!(!g.nonsingular_flag);
        assert_eq!(g.empty_columns, vec![1]);
        assert_eq!(g.rank, 1);
    }

    #[test]
    fn gram_rejects_empty() {
        assert!(matches!(gram(&haar2(), &[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn pinv_examples() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert!((pinv_psd(&i, DEFAULT_REL_TOL).unwrap() - &i).amax() < 1e-15);

        let d = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 0.0]);
        let p = pinv_psd(&d, DEFAULT_REL_TOL).unwrap();
        assert_eq!(p, DMatrix::from_row_slice(2, 2, &[0.25, 0.0, 0.0, 0.0]));

        let ones = DMatrix::from_element(2, 2, 1.0);
        let p = pinv_psd(&ones, DEFAULT_REL_TOL).unwrap();
        assert!((p - DMatrix::from_element(2, 2, 0.25)).amax() < 1e-14);
    }

    #[test]
    fn pinv_rejects_asymmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(pinv_psd(&a, DEFAULT_REL_TOL), Err(Error::NonSymmetric(_))));
    }

    #[test]
    fn regression_examples() {
        let p = pts(&[0.1, 0.5, 0.9]);
        let fit = fit_regression(&constant(), &refs(&p), &[1.0, 2.0, 3.0]).unwrap();
        assert!((fit.coeffs[0] - 2.0).abs() < 1e-14);

        let p = pts(&[0.2, 0.3, 0.7]);
        let fit = fit_regression(&haar2(), &refs(&p), &[1.0, 3.0, 5.0]).unwrap();
        assert!((fit.coeffs[0] - 2.0).abs() < 1e-14);
        assert!((fit.coeffs[1] - 5.0).abs() < 1e-14);
        assert_eq!(fit.target, FitTarget::Regression);
    }

    #[test]
    fn regression_size_mismatch() {
        let p = pts(&[0.2, 0.3]);
        assert!(matches!(
            fit_regression(&haar2(), &refs(&p), &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn empty_cell_predicts_zero() {
        let p = pts(&[0.1, 0.2]);
        let b = haar2();
        let fit = fit_regression(&b, &refs(&p), &[4.0, 6.0]).unwrap();
        assert!((fit.predict(&b, &[0.3]).unwrap() - 5.0).abs() < 1e-14);
        assert_eq!(fit.predict(&b, &[0.8]).unwrap(), 0.0);
        assert_eq!(fit.gram.empty_columns, vec![1]);
    }

    #[test]
    fn riesz_examples() {
        // v(z) = -a p(x), a = [1, 3], x = [0.2, 0.8]
        let b = haar2();
        let p = pts(&[0.2, 0.8]);
        let v = vec![vec![-1.0, 0.0], vec![0.0, -3.0]];
        let fit = fit_riesz(&b, &v, &refs(&p)).unwrap();
        assert!((fit.coeffs[0] + 1.0).abs() < 1e-14);
        assert!((fit.coeffs[1] + 3.0).abs() < 1e-14);
        assert_eq!(fit.target, FitTarget::Riesz);

        let zero = vec![vec![0.0, 0.0]; 2];
        let fit = fit_riesz(&b, &zero, &refs(&p)).unwrap();
        assert_eq!(fit.coeffs, vec![0.0, 0.0]);

        let bad = vec![vec![0.0; 3]];
        assert!(matches!(fit_riesz(&b, &bad, &refs(&p)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn weighted_design_uses_full_count() {
        // weights zero out the second point but the average still divides by 2
        let b = constant();
        let p = pts(&[0.1, 0.9]);
        let d = Design::new(&b, refs(&p), Some(vec![1.0, 0.0]), DEFAULT_REL_TOL).unwrap();
        assert!((d.gram().matrix[(0, 0)] - 0.5).abs() < 1e-15);
        let fit = d.fit(&[3.0, 100.0]).unwrap();
        assert!((fit.coeffs[0] - 3.0).abs() < 1e-14);
    }
}
