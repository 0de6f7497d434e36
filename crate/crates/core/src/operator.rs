//! Measurement matrices: either a dense matrix or an implicit operator that
//! only knows how to apply `A` and `Aᴴ`.

use std::fmt;
use std::sync::Arc;

use crate::{CMat, CVec, Error, RVec, Result, C64};

/// Default cap on dense materialization (complex entries).
pub const DENSE_ENTRY_CAP: usize = 10_000_000;

/// A linear map `Cᴺ → Cᴹ` with an adjoint. Implementations may assume the
/// input lengths are correct; [`SensingMatrix`] checks them.
pub trait LinearOperator: Send + Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &CVec) -> CVec;
    fn apply_adjoint(&self, y: &CVec) -> CVec;

    /// `diag(AᴴA)`. The default probes every column.
    fn column_energies(&self) -> RVec {
        let n = self.ncols();
        let mut e = CVec::zeros(n);
        RVec::from_iterator(
            n,
            (0..n).map(|j| {
                e[j] = C64::new(1.0, 0.0);
                let col = self.apply(&e);
                e[j] = C64::new(0.0, 0.0);
                col.norm_squared()
            }),
        )
    }
}

#[derive(Clone)]
pub enum SensingMatrix {
    Dense(Arc<CMat>),
    Implicit(Arc<dyn LinearOperator>),
}

impl fmt::Debug for SensingMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SensingMatrix::Dense(a) => write!(f, "Dense({}x{})", a.nrows(), a.ncols()),
            SensingMatrix::Implicit(op) => write!(f, "Implicit({}x{})", op.nrows(), op.ncols()),
        }
    }
}

impl From<CMat> for SensingMatrix {
    fn from(a: CMat) -> Self {
        SensingMatrix::Dense(Arc::new(a))
    }
}

impl SensingMatrix {
    pub fn implicit(op: impl LinearOperator + 'static) -> Self {
        SensingMatrix::Implicit(Arc::new(op))
    }

    pub fn nrows(&self) -> usize {
        match self {
            SensingMatrix::Dense(a) => a.nrows(),
            SensingMatrix::Implicit(op) => op.nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            SensingMatrix::Dense(a) => a.ncols(),
            SensingMatrix::Implicit(op) => op.ncols(),
        }
    }

    pub fn as_dense(&self) -> Option<&CMat> {
        match self {
            SensingMatrix::Dense(a) => Some(a),
            SensingMatrix::Implicit(_) => None,
        }
    }

    pub fn apply(&self, x: &CVec) -> Result<CVec> {
        if x.len() != self.ncols() {
            return Err(Error::dim("A·x input", self.ncols(), x.len()));
        }
        Ok(match self {
            SensingMatrix::Dense(a) => &**a * x,
            SensingMatrix::Implicit(op) => op.apply(x),
        })
    }

    pub fn apply_adjoint(&self, y: &CVec) -> Result<CVec> {
        if y.len() != self.nrows() {
            return Err(Error::dim("Aᴴ·y input", self.nrows(), y.len()));
        }
        Ok(match self {
            SensingMatrix::Dense(a) => a.ad_mul(y),
            SensingMatrix::Implicit(op) => op.apply_adjoint(y),
        })
    }

    /// `AᴴA x` without forming `AᴴA`.
    pub fn gram_apply(&self, x: &CVec) -> Result<CVec> {
        self.apply_adjoint(&self.apply(x)?)
    }

    pub fn column_energies(&self) -> RVec {
        match self {
            SensingMatrix::Dense(a) => RVec::from_iterator(a.ncols(), a.column_iter().map(|c| c.norm_squared())),
            SensingMatrix::Implicit(op) => op.column_energies(),
        }
    }

    /// `AᴴA`, formed densely. Implicit operators are probed column by column.
    pub fn gram(&self) -> Result<CMat> {
        match self {
            SensingMatrix::Dense(a) => Ok(a.ad_mul(a)),
            SensingMatrix::Implicit(_) => {
                let n = self.ncols();
                check_cap(n * n, DENSE_ENTRY_CAP)?;
                let mut g = CMat::zeros(n, n);
                let mut e = CVec::zeros(n);
                for j in 0..n {
                    e[j] = C64::new(1.0, 0.0);
                    g.set_column(j, &self.gram_apply(&e)?);
                    e[j] = C64::new(0.0, 0.0);
                }
                Ok(g)
            }
        }
    }

    /// Dense copy of `A` (probing implicit operators), refusing above `cap`
    /// entries.
    pub fn to_dense(&self, cap: usize) -> Result<CMat> {
        check_cap(self.nrows() * self.ncols(), cap)?;
        match self {
            SensingMatrix::Dense(a) => Ok((**a).clone()),
            SensingMatrix::Implicit(op) => {
                let n = op.ncols();
                let mut a = CMat::zeros(op.nrows(), n);
                let mut e = CVec::zeros(n);
                for j in 0..n {
                    e[j] = C64::new(1.0, 0.0);
                    a.set_column(j, &op.apply(&e));
                    e[j] = C64::new(0.0, 0.0);
                }
                Ok(a)
            }
        }
    }
}

pub(crate) fn check_cap(entries: usize, cap: usize) -> Result<()> {
    if entries > cap {
        Err(Error::TooLarge { entries, cap })
    } else {
        Ok(())
    }
}
