//! Sparse evaluation of the Lindblad generator on row-major flat matrices.
//!
//! Every operator in the model has a handful of nonzeros per row, so the
//! generator is applied through coordinate lists instead of dense products.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::model::{collapse_channels, hamiltonian_system, to_rate, SystemParams};
use crate::operators::{mode_lowering, qd_lowering, Polarization, SpaceDescriptor};
use crate::error::Result;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Compressed-row sparse matrix.
#[derive(Debug, Clone)]
pub(crate) struct Csr {
    pub dim: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<C64>,
}

impl Csr {
    pub fn from_dense(m: &DMatrix<C64>) -> Self {
        let dim = m.nrows();
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for r in 0..dim {
            for c in 0..dim {
                let v = m[(r, c)];
                if v != ZERO {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            dim,
            row_ptr,
            cols,
            vals,
        }
    }

    fn entries(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |k| (r, self.cols[k], self.vals[k]))
        })
    }

    /// out += coeff · A ρ
    pub fn add_left(&self, coeff: C64, rho: &[C64], out: &mut [C64]) {
        let d = self.dim;
        for r in 0..d {
            let dst = &mut out[r * d..(r + 1) * d];
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let v = self.vals[k] * coeff;
                let src = &rho[self.cols[k] * d..(self.cols[k] + 1) * d];
                for (o, s) in dst.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
    }

    /// out += coeff · ρ A
    pub fn add_right(&self, coeff: C64, rho: &[C64], out: &mut [C64]) {
        let d = self.dim;
        for i in 0..d {
            let src = &rho[i * d..(i + 1) * d];
            let dst = &mut out[i * d..(i + 1) * d];
            for k in 0..d {
                let x = src[k];
                if x == ZERO {
                    continue;
                }
                let x = x * coeff;
                for p in self.row_ptr[k]..self.row_ptr[k + 1] {
                    dst[self.cols[p]] += x * self.vals[p];
                }
            }
        }
    }

    /// out += rate · X ρ X†
    pub fn add_sandwich(&self, rate: f64, rho: &[C64], out: &mut [C64]) {
        let d = self.dim;
        let entries: Vec<_> = self.entries().collect();
        for &(i, k, v) in &entries {
            let v = v * rate;
            for &(j, l, w) in &entries {
                out[i * d + j] += v * w.conj() * rho[k * d + l];
            }
        }
    }
}

/// Time-dependent coherent terms added on top of the static generator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Fields {
    /// Cavity drive Ω in H = Ω* a_V + Ω a_V† (ps⁻¹).
    pub cavity: C64,
    /// Exciton drive β in H = β σ_V† + β* σ_V (ps⁻¹).
    pub exciton: C64,
}

/// The undriven generator L' plus handles for the driven terms.
#[derive(Debug, Clone)]
pub(crate) struct Kernel {
    /// K = −i H_s/ħ − ½ Σ γ X†X
    k: Csr,
    k_adj: Csr,
    jumps: Vec<(f64, Csr)>,
    pub a_v: Csr,
    pub a_v_dag: Csr,
    s_v: Csr,
    s_v_dag: Csr,
}

impl Kernel {
    pub fn new(p: &SystemParams, space: SpaceDescriptor) -> Result<Self> {
        let h = hamiltonian_system(p, space)?;
        let channels = collapse_channels(p, space)?;
        let mut k = &h.matrix * (-I / crate::model::HBAR);
        let mut jumps = Vec::new();
        for ch in &channels {
            let rate = to_rate(ch.rate);
            if rate == 0.0 {
                continue;
            }
            let x = &ch.jump.matrix;
            k -= (x.adjoint() * x) * C64::from(0.5 * rate);
            jumps.push((rate, Csr::from_dense(x)));
        }
        let a_v = mode_lowering(space, Polarization::V).matrix;
        let s_v = qd_lowering(space, Polarization::V).matrix;
        Ok(Self {
            k_adj: Csr::from_dense(&k.adjoint()),
            k: Csr::from_dense(&k),
            jumps,
            a_v_dag: Csr::from_dense(&a_v.adjoint()),
            a_v: Csr::from_dense(&a_v),
            s_v_dag: Csr::from_dense(&s_v.adjoint()),
            s_v: Csr::from_dense(&s_v),
        })
    }

    /// out = L'[ρ] − i[H_fields, ρ]
    pub fn apply(&self, rho: &[C64], fields: Fields, out: &mut [C64]) {
        out.iter_mut().for_each(|z| *z = ZERO);
        self.k.add_left(C64::new(1.0, 0.0), rho, out);
        self.k_adj.add_right(C64::new(1.0, 0.0), rho, out);
        for (rate, x) in &self.jumps {
            x.add_sandwich(*rate, rho, out);
        }
        if fields.cavity != ZERO {
            self.add_commutator(&self.a_v, &self.a_v_dag, fields.cavity, rho, out);
        }
        if fields.exciton != ZERO {
            self.add_commutator(&self.s_v, &self.s_v_dag, fields.exciton, rho, out);
        }
    }

    /// out += −i[w* A + w A†, ρ]
    fn add_commutator(&self, a: &Csr, a_dag: &Csr, w: C64, rho: &[C64], out: &mut [C64]) {
        let ca = -I * w.conj();
        let cd = -I * w;
        a.add_left(ca, rho, out);
        a.add_right(-ca, rho, out);
        a_dag.add_left(cd, rho, out);
        a_dag.add_right(-cd, rho, out);
    }

    /// out += c · [ρ, A] with A = a_V or a_V†.
    pub fn add_commutator_rho_left(&self, which: &Csr, c: C64, rho: &[C64], out: &mut [C64]) {
        which.add_right(c, rho, out);
        which.add_left(-c, rho, out);
    }
}
