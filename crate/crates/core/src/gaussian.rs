//! Exact distributions for linear-Gaussian models `V = b0 + B1 V + B2 U`,
//! `U ~ N(0, I)`.
//!
//! Variables are indexed in topological order, so `B1` is strictly lower
//! triangular and `I - B1` is inverted by forward substitution. `B2` is
//! `J x H`: column `h` holds the loadings of background variable `h`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::dist::Dist;
use crate::expr::{BinOp, Expr, ERROR_SYMBOL};
use crate::scm::{
    error_column_name, BackgroundSpec, Intervention, ModelSpec, Monotonicity, Scm, ScmError, VariableKind, VariableSpec,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GaussianError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("B1 is not strictly lower triangular (entry {0}, {1})")]
    NotTriangular(usize, usize),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("covariance of the conditioning variables is singular (pivot {pivot:e} at `{variable}`)")]
    Singular { variable: String, pivot: f64 },
    #[error("variable `{0}` has no dedicated unit column in B2")]
    NoDedicatedColumn(String),
    #[error(transparent)]
    Model(#[from] ScmError),
}

/// Smallest admissible pivot when factorizing a conditioning covariance.
pub const MIN_PIVOT: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScm {
    names: Vec<String>,
    background_names: Vec<String>,
    dedicated: Vec<Option<usize>>,
    b0: DVector<f64>,
    b1: DMatrix<f64>,
    b2: DMatrix<f64>,
}

/// A multivariate normal law with labelled components.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDist {
    pub labels: Vec<String>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianDist {
    pub fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn mean_of(&self, label: &str) -> Option<f64> {
        self.index(label).map(|i| self.mean[i])
    }

    pub fn var_of(&self, label: &str) -> Option<f64> {
        self.index(label).map(|i| self.cov[(i, i)])
    }

    pub fn cov_of(&self, a: &str, b: &str) -> Option<f64> {
        Some(self.cov[(self.index(a)?, self.index(b)?)])
    }

    pub fn correlation(&self, a: &str, b: &str) -> Option<f64> {
        let c = self.cov_of(a, b)?;
        Some(c / libm::sqrt(self.var_of(a)? * self.var_of(b)?))
    }

    /// The marginal law of the listed components.
    pub fn select(&self, labels: &[&str]) -> Option<GaussianDist> {
        let idx: Vec<usize> = labels.iter().map(|l| self.index(l)).collect::<Option<_>>()?;
        Some(GaussianDist {
            labels: labels.iter().map(|&l| l.into()).collect(),
            mean: DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.mean[i])),
            cov: DMatrix::from_fn(idx.len(), idx.len(), |r, c| self.cov[(idx[r], idx[c])]),
        })
    }

    /// The 1-D normal law of one component (degenerate components get sd 0).
    pub fn component(&self, label: &str) -> Option<(f64, f64)> {
        let i = self.index(label)?;
        Some((self.mean[i], libm::sqrt(self.cov[(i, i)].max(0.0))))
    }
}

impl GaussianScm {
    /// Background columns that load on exactly one variable with coefficient
    /// 1 become that variable's dedicated error `u_<name>` (first such column
    /// wins); the others are named `g1, g2, ...`.
    pub fn new(
        names: Vec<String>,
        b0: DVector<f64>,
        b1: DMatrix<f64>,
        b2: DMatrix<f64>,
    ) -> Result<Self, GaussianError> {
        let j = names.len();
        if b0.len() != j || b1.nrows() != j || b1.ncols() != j || b2.nrows() != j {
            return Err(GaussianError::Dimension(format!(
                "{j} variables, b0 of length {}, B1 {}x{}, B2 {}x{}",
                b0.len(),
                b1.nrows(),
                b1.ncols(),
                b2.nrows(),
                b2.ncols()
            )));
        }
        for r in 0..j {
            for c in r..j {
                if b1[(r, c)] != 0.0 {
                    return Err(GaussianError::NotTriangular(r, c));
                }
            }
        }
        let h = b2.ncols();
        let mut dedicated = alloc::vec![None; j];
        let mut owner = alloc::vec![None; h];
        for c in 0..h {
            let nz: Vec<usize> = (0..j).filter(|&r| b2[(r, c)] != 0.0).collect();
            if nz.len() == 1 && b2[(nz[0], c)] == 1.0 && dedicated[nz[0]].is_none() {
                dedicated[nz[0]] = Some(c);
                owner[c] = Some(nz[0]);
            }
        }
        let mut next_global = 0;
        let background_names = owner
            .iter()
            .map(|o| match o {
                Some(r) => error_column_name(&names[*r]),
                None => {
                    next_global += 1;
                    format!("g{next_global}")
                }
            })
            .collect();
        Ok(GaussianScm {
            names,
            background_names,
            dedicated,
            b0,
            b1,
            b2,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn background_names(&self) -> &[String] {
        &self.background_names
    }

    pub fn b0(&self) -> &DVector<f64> {
        &self.b0
    }

    pub fn b1(&self) -> &DMatrix<f64> {
        &self.b1
    }

    pub fn b2(&self) -> &DMatrix<f64> {
        &self.b2
    }

    fn var_index(&self, name: &str) -> Result<usize, GaussianError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| GaussianError::UnknownVariable(name.into()))
    }

    /// `(I - B1)^-1 M` by forward substitution.
    fn solve(b1: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
        let j = b1.nrows();
        let mut out = m.clone();
        for r in 0..j {
            for k in 0..r {
                let coef = b1[(r, k)];
                if coef != 0.0 {
                    for c in 0..m.ncols() {
                        out[(r, c)] += coef * out[(k, c)];
                    }
                }
            }
        }
        out
    }

    fn labels(&self) -> Vec<String> {
        self.names.iter().chain(&self.background_names).cloned().collect()
    }

    /// Joint law of `(V, U)`.
    pub fn marginal(&self) -> GaussianDist {
        let j = self.names.len();
        let h = self.b2.ncols();
        let mu_v = Self::solve(&self.b1, &DMatrix::from_column_slice(j, 1, self.b0.as_slice()));
        let a_b2 = Self::solve(&self.b1, &self.b2);
        let s_vv = &a_b2 * a_b2.transpose();
        let mut cov = DMatrix::zeros(j + h, j + h);
        cov.view_mut((0, 0), (j, j)).copy_from(&s_vv);
        cov.view_mut((0, j), (j, h)).copy_from(&a_b2);
        cov.view_mut((j, 0), (h, j)).copy_from(&a_b2.transpose());
        cov.view_mut((j, j), (h, h)).fill_with_identity();
        let mut mean = DVector::zeros(j + h);
        mean.rows_mut(0, j).copy_from(&mu_v.column(0));
        GaussianDist {
            labels: self.labels(),
            mean,
            cov,
        }
    }

    /// Law of `(V1, U)` given `V2 = c`, where `V1` are the variables not fixed.
    pub fn condition(&self, fixed: &[(&str, f64)]) -> Result<GaussianDist, GaussianError> {
        let joint = self.marginal();
        let fixed_idx: Vec<usize> = fixed.iter().map(|(n, _)| self.var_index(n)).collect::<Result<_, _>>()?;
        let rest: Vec<usize> = (0..joint.labels.len()).filter(|i| !fixed_idx.contains(i)).collect();
        let k = fixed_idx.len();
        let sub = |rows: &[usize], cols: &[usize]| {
            DMatrix::from_fn(rows.len(), cols.len(), |r, c| joint.cov[(rows[r], cols[c])])
        };
        let s22 = sub(&fixed_idx, &fixed_idx);
        let s12 = sub(&rest, &fixed_idx);
        let s11 = sub(&rest, &rest);
        let l = cholesky(&s22).map_err(|i| GaussianError::Singular {
            variable: self.names[fixed_idx[i]].clone(),
            pivot: s22[(i, i)],
        })?;
        let innovation = DMatrix::from_fn(k, 1, |r, _| fixed[r].1 - joint.mean[fixed_idx[r]]);
        // K = S12 S22^-1 via two triangular solves on the transpose.
        let kt = chol_solve(&l, &s12.transpose());
        let mean_rest = DVector::from_fn(rest.len(), |r, _| joint.mean[rest[r]]);
        let mean = mean_rest + (kt.transpose() * innovation).column(0);
        let mut cov = s11 - &kt.transpose() * s12.transpose();
        symmetrize(&mut cov);
        Ok(GaussianDist {
            labels: rest.iter().map(|&i| joint.labels[i].clone()).collect(),
            mean,
            cov,
        })
    }

    /// Law of the observed variables in the submodel `do(iv)` with the
    /// background law updated by `V2 = c`.
    pub fn counterfactual(&self, fixed: &[(&str, f64)], iv: &Intervention) -> Result<GaussianDist, GaussianError> {
        let j = self.names.len();
        let h = self.b2.ncols();
        let cond = self.condition(fixed)?;
        let u_labels: Vec<&str> = self.background_names.iter().map(String::as_str).collect();
        let u = cond.select(&u_labels).expect("background labels present");
        let mut b0 = self.b0.clone();
        let mut b1 = self.b1.clone();
        let mut b2 = self.b2.clone();
        for (name, x) in iv.iter() {
            let r = self.var_index(name)?;
            b0[r] = x;
            b1.row_mut(r).fill(0.0);
            b2.row_mut(r).fill(0.0);
        }
        let shift = DMatrix::from_fn(j, 1, |r, _| b0[r]) + &b2 * DMatrix::from_column_slice(h, 1, u.mean.as_slice());
        let mean = Self::solve(&b1, &shift).column(0).into_owned();
        let a_b2 = Self::solve(&b1, &b2);
        let mut cov = &a_b2 * &u.cov * a_b2.transpose();
        symmetrize(&mut cov);
        Ok(GaussianDist {
            labels: self.names.clone(),
            mean,
            cov,
        })
    }

    /// The same model as an additive-noise [`Scm`] with standard normal
    /// errors; non-dedicated background columns become global background
    /// variables.
    pub fn to_scm(&self) -> Result<Scm, GaussianError> {
        let j = self.names.len();
        let mut spec = ModelSpec::default();
        for (c, name) in self.background_names.iter().enumerate() {
            if !self.dedicated.contains(&Some(c)) && (0..j).any(|r| self.b2[(r, c)] != 0.0) {
                spec.background.push(BackgroundSpec::new(name, Dist::STANDARD_NORMAL));
            }
        }
        for r in 0..j {
            let own = self.dedicated[r].ok_or_else(|| GaussianError::NoDedicatedColumn(self.names[r].clone()))?;
            let mut e: Expr = Expr::Num(self.b0[r]);
            for k in 0..r {
                let c = self.b1[(r, k)];
                if c != 0.0 {
                    e = Expr::plus(e, Expr::times(Expr::Num(c), Expr::Var(self.names[k].clone())));
                }
            }
            for c in 0..self.b2.ncols() {
                let w = self.b2[(r, c)];
                if c != own && w != 0.0 {
                    e = Expr::plus(
                        e,
                        Expr::times(Expr::Num(w), Expr::Var(self.background_names[c].clone())),
                    );
                }
            }
            e = Expr::binary(BinOp::Add, e, Expr::Var(ERROR_SYMBOL.into()));
            spec.variables.push(VariableSpec {
                name: self.names[r].clone(),
                kind: VariableKind::Continuous,
                error: Some(Dist::STANDARD_NORMAL),
                expr: e,
                monotonicity: Some(Monotonicity::Additive),
            });
        }
        Ok(Scm::build(&spec)?)
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// Lower Cholesky factor; on failure, the index of the first pivot below
/// [`MIN_PIVOT`].
fn cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>, usize> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        for k in 0..=i {
            let mut s = a[(i, k)];
            for p in 0..k {
                s -= l[(i, p)] * l[(k, p)];
            }
            if i == k {
                if s < MIN_PIVOT {
                    return Err(i);
                }
                l[(i, i)] = libm::sqrt(s);
            } else {
                l[(i, k)] = s / l[(k, k)];
            }
        }
    }
    Ok(l)
}

/// Solves `L L^T X = B`.
fn chol_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let y = l.solve_lower_triangular(b).expect("nonzero pivots");
    l.transpose().solve_upper_triangular(&y).expect("nonzero pivots")
}
