//! Small dense symmetric linear algebra.
//!
//! Everything here targets the d ≤ a few hundred matrices that show up as
//! batch-means covariances. Storage is full row-major; symmetry is enforced
//! at construction so downstream code can read either triangle.

use crate::error::{Error, Result};

/// Relative pivot tolerance: a Cholesky pivot at or below
/// `PIVOT_RTOL * max_diag` is treated as rank deficiency.
pub const PIVOT_RTOL: f64 = 1e-12;

/// Dense symmetric matrix, stored in full.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension(0));
        }
        Ok(Self {
            dim,
            data: vec![0.0; dim * dim],
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut m = Self::zeros(dim)?;
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        Ok(m)
    }

    /// Builds from a row-major buffer, replacing it by `(A + Aᵀ) / 2`.
    pub fn from_row_major(dim: usize, mut data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: data.len(),
            });
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                let avg = 0.5 * (data[i * dim + j] + data[j * dim + i]);
                data[i * dim + j] = avg;
                data[j * dim + i] = avg;
            }
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_row_major(dim, data)
    }

    /// Accumulates `scale * v vᵀ` into the matrix (both triangles).
    pub fn add_outer(&mut self, v: &[f64], scale: f64) {
        debug_assert_eq!(v.len(), self.dim);
        let d = self.dim;
        for i in 0..d {
            let vi = scale * v[i];
            let row = &mut self.data[i * d..(i + 1) * d];
            for (r, &vj) in row.iter_mut().zip(v) {
                *r += vi * vj;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.scale(factor);
        out
    }

    /// `G · S · Gᵀ` for a square `G` given row-major.
    pub fn congruence(&self, g: &[f64]) -> Result<Self> {
        let d = self.dim;
        if g.len() != d * d {
            return Err(Error::DimensionMismatch {
                expected: d * d,
                got: g.len(),
            });
        }
        let mut gs = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let gik = g[i * d + k];
                for j in 0..d {
                    gs[i * d + j] += gik * self.data[k * d + j];
                }
            }
        }
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = (0..d).map(|k| gs[i * d + k] * g[j * d + k]).sum();
            }
        }
        Self::from_row_major(d, out)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn max_diag(&self) -> f64 {
        (0..self.dim)
            .map(|i| self.get(i, i))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Diagonally pivoted Cholesky factor: `L Lᵀ = P S Pᵀ`, where row `i` of
/// `P S Pᵀ` is row `perm[i]` of `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholFactor {
    dim: usize,
    lower: Vec<f64>,
    perm: Vec<usize>,
}

impl CholFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Entry of `L` (in pivoted order).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.lower[i * self.dim + j]
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn diag(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.dim).map(move |i| self.get(i, i))
    }

    /// Overwrites `v` with `L⁻¹ P v`.
    pub fn forward_solve(&self, v: &mut [f64]) {
        let d = self.dim;
        let pv: Vec<f64> = self.perm.iter().map(|&p| v[p]).collect();
        v.copy_from_slice(&pv);
        for i in 0..d {
            let row = &self.lower[i * d..i * d + i];
            let s: f64 = row.iter().zip(&v[..i]).map(|(l, y)| l * y).sum();
            v[i] = (v[i] - s) / self.lower[i * d + i];
        }
    }

    /// Overwrites `v` with `Pᵀ L⁻ᵀ v`, undoing [`forward_solve`](Self::forward_solve)'s permutation.
    pub fn backward_solve(&self, v: &mut [f64]) {
        let d = self.dim;
        for i in (0..d).rev() {
            let s: f64 = ((i + 1)..d).map(|k| self.lower[k * d + i] * v[k]).sum();
            v[i] = (v[i] - s) / self.lower[i * d + i];
        }
        let mut out = vec![0.0; d];
        for (i, &p) in self.perm.iter().enumerate() {
            out[p] = v[i];
        }
        v.copy_from_slice(&out);
    }

    /// The factored matrix `S`, in its original ordering.
    pub fn reconstruct(&self) -> SymMatrix {
        let d = self.dim;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let s: f64 = (0..=j).map(|k| self.get(i, k) * self.get(j, k)).sum();
                let (pi, pj) = (self.perm[i], self.perm[j]);
                out[pi * d + pj] = s;
                out[pj * d + pi] = s;
            }
        }
        SymMatrix { dim: d, data: out }
    }
}

/// Cholesky factorization with diagonal pivoting and a relative pivot floor.
///
/// Each step eliminates the largest remaining diagonal entry. For a
/// rank-deficient matrix this leaves a trailing Schur complement at round-off
/// level regardless of how ill-conditioned the leading block is, so the
/// `PIVOT_RTOL × max diag` floor separates singular from definite input.
pub fn cholesky(s: &SymMatrix) -> Result<CholFactor> {
    let d = s.dim;
    let tolerance = PIVOT_RTOL * s.max_diag().max(0.0);
    let mut a = s.data.clone();
    let mut l = vec![0.0; d * d];
    let mut perm: Vec<usize> = (0..d).collect();
    for j in 0..d {
        let mut k = j;
        for i in (j + 1)..d {
            if a[i * d + i] > a[k * d + k] {
                k = i;
            }
        }
        if k != j {
            perm.swap(j, k);
            for c in 0..d {
                a.swap(j * d + c, k * d + c);
            }
            for r in 0..d {
                a.swap(r * d + j, r * d + k);
            }
            for c in 0..j {
                l.swap(j * d + c, k * d + c);
            }
        }
        let pivot = a[j * d + j];
        if pivot.is_nan() || pivot <= tolerance {
            return Err(Error::NotPositiveDefinite {
                row: perm[j],
                pivot,
                tolerance,
            });
        }
        let ljj = pivot.sqrt();
        l[j * d + j] = ljj;
        for i in (j + 1)..d {
            l[i * d + j] = a[i * d + j] / ljj;
        }
        for i in (j + 1)..d {
            let lij = l[i * d + j];
            for c in (j + 1)..=i {
                let v = a[i * d + c] - lij * l[c * d + j];
                a[i * d + c] = v;
                a[c * d + i] = v;
            }
        }
    }
    Ok(CholFactor {
        dim: d,
        lower: l,
        perm,
    })
}

/// `vᵀ S⁻¹ v` through one forward solve: with `P S Pᵀ = L Lᵀ` it equals `‖L⁻¹ P v‖²`.
pub fn quad_form_inv(s: &SymMatrix, v: &[f64]) -> Result<f64> {
    if v.len() != s.dim {
        return Err(Error::DimensionMismatch {
            expected: s.dim,
            got: v.len(),
        });
    }
    let factor = cholesky(s)?;
    Ok(quad_form_with(&factor, v))
}

/// Same as [`quad_form_inv`] for an existing factor.
pub fn quad_form_with(factor: &CholFactor, v: &[f64]) -> f64 {
    let mut y = v.to_vec();
    factor.forward_solve(&mut y);
    y.iter().map(|x| x * x).sum()
}

/// `S⁻¹ v`.
pub fn solve(s: &SymMatrix, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != s.dim {
        return Err(Error::DimensionMismatch {
            expected: s.dim,
            got: v.len(),
        });
    }
    let factor = cholesky(s)?;
    let mut x = v.to_vec();
    factor.forward_solve(&mut x);
    factor.backward_solve(&mut x);
    Ok(x)
}

/// `det(S)^{1/2}`; matrices that fail the Cholesky pivot test report 0.
pub fn det_sqrt(s: &SymMatrix) -> f64 {
    match cholesky(s) {
        Ok(f) => f.diag().product(),
        Err(_) => 0.0,
    }
}

/// Checked variant of [`det_sqrt`] for callers holding a matrix of unknown size.
pub fn det_sqrt_checked(s: &SymMatrix, expected_dim: usize) -> Result<f64> {
    if s.dim != expected_dim {
        return Err(Error::DimensionMismatch {
            expected: expected_dim,
            got: s.dim,
        });
    }
    Ok(det_sqrt(s))
}
