//! Operators on the truncated space QD(3) ⊗ mode V ⊗ mode H.
//!
//! Basis vectors are indexed row-major with the dot slowest:
//! `index = (qd * (n_max_v + 1) + n_v) * (n_max_h + 1) + n_h`, where the dot
//! states are ordered |G⟩, |V⟩, |H⟩. Every matrix the crate serializes uses
//! this order.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dynamics::DensityMatrix;
use crate::error::{Error, Result};

/// Dimension of the dot factor (|G⟩, |V⟩, |H⟩).
pub const QD_DIM: usize = 3;

/// Tolerance used when an operator claims to be Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Dot basis state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QdState {
    G = 0,
    V = 1,
    H = 2,
}

/// Linear polarization of a dot transition or cavity mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarization {
    V,
    H,
}

/// One tensor factor of the composite space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Subsystem {
    Qd,
    ModeV,
    ModeH,
}

/// Shape of the truncated composite space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpaceDescriptor {
    pub n_max_v: usize,
    pub n_max_h: usize,
}

impl SpaceDescriptor {
    pub fn new(n_max_v: usize, n_max_h: usize) -> Result<Self> {
        if n_max_v < 1 || n_max_h < 1 {
            return Err(Error::InvalidDimension(format!(
                "Fock truncations must be >= 1 (got n_max_v={n_max_v}, n_max_h={n_max_h})"
            )));
        }
        Ok(Self { n_max_v, n_max_h })
    }

    pub fn qd_dim(&self) -> usize {
        QD_DIM
    }

    pub fn dim_v(&self) -> usize {
        self.n_max_v + 1
    }

    pub fn dim_h(&self) -> usize {
        self.n_max_h + 1
    }

    pub fn total_dim(&self) -> usize {
        QD_DIM * self.dim_v() * self.dim_h()
    }

    pub fn subsystem_dim(&self, which: Subsystem) -> usize {
        match which {
            Subsystem::Qd => QD_DIM,
            Subsystem::ModeV => self.dim_v(),
            Subsystem::ModeH => self.dim_h(),
        }
    }

    /// Flat basis index of |qd, n_v, n_h⟩.
    pub fn index(&self, qd: usize, n_v: usize, n_h: usize) -> usize {
        debug_assert!(qd < QD_DIM && n_v < self.dim_v() && n_h < self.dim_h());
        (qd * self.dim_v() + n_v) * self.dim_h() + n_h
    }

    /// Inverse of [`SpaceDescriptor::index`].
    pub fn labels(&self, index: usize) -> (usize, usize, usize) {
        let n_h = index % self.dim_h();
        let rest = index / self.dim_h();
        (rest / self.dim_v(), rest % self.dim_v(), n_h)
    }
}

/// Dense operator on the composite space.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    pub space: SpaceDescriptor,
    pub matrix: DMatrix<C64>,
    /// Advisory flag; when set the matrix is Hermitian to [`HERMITIAN_TOL`].
    pub is_hermitian: bool,
}

impl Operator {
    pub fn new(space: SpaceDescriptor, matrix: DMatrix<C64>) -> Result<Self> {
        let d = space.total_dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: matrix.nrows().max(matrix.ncols()),
            });
        }
        let is_hermitian = hermitian_deviation(&matrix) < HERMITIAN_TOL;
        Ok(Self {
            space,
            matrix,
            is_hermitian,
        })
    }

    pub fn zeros(space: SpaceDescriptor) -> Self {
        let d = space.total_dim();
        Self {
            space,
            matrix: DMatrix::zeros(d, d),
            is_hermitian: true,
        }
    }

    pub fn identity(space: SpaceDescriptor) -> Self {
        let d = space.total_dim();
        Self {
            space,
            matrix: DMatrix::identity(d, d),
            is_hermitian: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn adjoint(&self) -> Self {
        Self {
            space: self.space,
            matrix: self.matrix.adjoint(),
            is_hermitian: self.is_hermitian,
        }
    }

    /// Matrix product `self · rhs`.
    pub fn mul(&self, rhs: &Operator) -> Result<Operator> {
        self.check_space(rhs.space)?;
        Operator::new(self.space, &self.matrix * &rhs.matrix)
    }

    pub fn add(&self, rhs: &Operator) -> Result<Operator> {
        self.check_space(rhs.space)?;
        Operator::new(self.space, &self.matrix + &rhs.matrix)
    }

    pub fn scale(&self, factor: C64) -> Operator {
        let matrix = &self.matrix * factor;
        Operator {
            space: self.space,
            is_hermitian: self.is_hermitian && factor.im == 0.0,
            matrix,
        }
    }

    /// `[self, rhs]`
    pub fn commutator(&self, rhs: &Operator) -> Result<Operator> {
        self.check_space(rhs.space)?;
        Operator::new(
            self.space,
            &self.matrix * &rhs.matrix - &rhs.matrix * &self.matrix,
        )
    }

    /// Largest entry of |M − M†|.
    pub fn hermitian_deviation(&self) -> f64 {
        hermitian_deviation(&self.matrix)
    }

    pub(crate) fn check_space(&self, other: SpaceDescriptor) -> Result<()> {
        if self.space != other {
            return Err(Error::DimensionMismatch {
                expected: self.space.total_dim(),
                got: other.total_dim(),
            });
        }
        Ok(())
    }

    /// Writes the nonzero entries as `row,col,re,im` CSV with a header.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row", "col", "re", "im"])?;
        for r in 0..self.dim() {
            for c in 0..self.dim() {
                let z = self.matrix[(r, c)];
                if z != C64::new(0.0, 0.0) {
                    w.serialize((r, c, z.re, z.im))?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn hermitian_deviation(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for r in 0..n {
        for c in r..n {
            worst = worst.max((m[(r, c)] - m[(c, r)].conj()).norm());
        }
    }
    worst
}

/// Single-mode annihilation operator on Fock states |0⟩..|n_max⟩.
pub fn annihilation(n_max: usize) -> Result<DMatrix<C64>> {
    if n_max < 1 {
        return Err(Error::InvalidDimension(format!(
            "Fock truncation must be >= 1 (got {n_max})"
        )));
    }
    let mut a = DMatrix::zeros(n_max + 1, n_max + 1);
    for n in 1..=n_max {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    Ok(a)
}

/// Kronecker product in the crate's row-major convention.
pub(crate) fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    a.kronecker(b)
}

/// Tensors a local operator with identities on the other two factors.
pub fn embed(local: &DMatrix<C64>, which: Subsystem, space: SpaceDescriptor) -> Result<Operator> {
    let expected = space.subsystem_dim(which);
    if local.nrows() != expected || local.ncols() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: local.nrows().max(local.ncols()),
        });
    }
    let id = |n: usize| DMatrix::<C64>::identity(n, n);
    let (q, v, h) = match which {
        Subsystem::Qd => (local.clone(), id(space.dim_v()), id(space.dim_h())),
        Subsystem::ModeV => (id(QD_DIM), local.clone(), id(space.dim_h())),
        Subsystem::ModeH => (id(QD_DIM), id(space.dim_v()), local.clone()),
    };
    Operator::new(space, kron(&kron(&q, &v), &h))
}

/// |i⟩⟨j| on the dot factor.
pub fn qd_projector(space: SpaceDescriptor, bra: QdState, ket: QdState) -> Operator {
    let mut m = DMatrix::zeros(QD_DIM, QD_DIM);
    m[(bra as usize, ket as usize)] = C64::new(1.0, 0.0);
    embed(&m, Subsystem::Qd, space).expect("dot factor has fixed dimension")
}

/// σ_V = |G⟩⟨V| or σ_H = |G⟩⟨H| on the full space.
pub fn qd_lowering(space: SpaceDescriptor, polarization: Polarization) -> Operator {
    let excited = match polarization {
        Polarization::V => QdState::V,
        Polarization::H => QdState::H,
    };
    qd_projector(space, QdState::G, excited)
}

/// Cavity-mode annihilation operator a_V or a_H on the full space.
pub fn mode_lowering(space: SpaceDescriptor, polarization: Polarization) -> Operator {
    let (n_max, which) = match polarization {
        Polarization::V => (space.n_max_v, Subsystem::ModeV),
        Polarization::H => (space.n_max_h, Subsystem::ModeH),
    };
    let a = annihilation(n_max).expect("space descriptor enforces n_max >= 1");
    embed(&a, which, space).expect("local dimension matches by construction")
}

/// Tr(op · ρ).
pub fn expectation(op: &Operator, rho: &DensityMatrix) -> Result<C64> {
    op.check_space(rho.space)?;
    Ok(trace_of_product(&op.matrix, &rho.matrix))
}

pub(crate) fn trace_of_product(a: &DMatrix<C64>, b: &DMatrix<C64>) -> C64 {
    let n = a.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for k in 0..n {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}
