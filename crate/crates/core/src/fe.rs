//! Periodic 1D mesh and the lowest-order compatible finite-element pair.
//!
//! Velocity components live in the continuous piecewise-linear space P1
//! (one DOF per node), pressure in the piecewise-constant space P0 (one DOF
//! per element, located at the midpoint). Element `e` covers the interval
//! `[e·h, (e+1)·h]` and owns nodes `e` and `e+1 mod M`.

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};

/// Length of the periodic domain `[0, 3)`.
pub const DOMAIN_LENGTH: f64 = 3.0;

/// Uniform partition of the periodic interval into `M` elements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodicMesh {
    num_elements: usize,
    element_size: f64,
}

impl PeriodicMesh {
    pub fn new(num_elements: usize) -> Result<Self> {
        if num_elements < 2 {
            return Err(Error::InvalidMesh(format!(
                "need at least 2 elements, got {num_elements}"
            )));
        }
        Ok(Self {
            num_elements,
            element_size: DOMAIN_LENGTH / num_elements as f64,
        })
    }

    pub fn num_elements(&self) -> usize {
        self.num_elements
    }

    pub fn element_size(&self) -> f64 {
        self.element_size
    }

    pub fn domain_length(&self) -> f64 {
        DOMAIN_LENGTH
    }

    /// Coordinate of node `m`.
    pub fn node(&self, m: usize) -> f64 {
        m as f64 * self.element_size
    }

    /// Midpoint of element `e`, where its P0 DOF sits.
    pub fn midpoint(&self, e: usize) -> f64 {
        (e as f64 + 0.5) * self.element_size
    }
}

/// Equivalent to [`PeriodicMesh::new`].
pub fn build_mesh(num_elements: usize) -> Result<PeriodicMesh> {
    PeriodicMesh::new(num_elements)
}

macro_rules! fe_field {
    ($name:ident, $what:literal) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            values: Vec<f64>,
        }

        impl $name {
            pub fn new(mesh: &PeriodicMesh, values: Vec<f64>) -> Result<Self> {
                check_len($what, mesh.num_elements(), values.len())?;
                Ok(Self { values })
            }

            pub fn zeros(mesh: &PeriodicMesh) -> Self {
                Self {
                    values: vec![0.0; mesh.num_elements()],
                }
            }

            pub fn values(&self) -> &[f64] {
                &self.values
            }

            pub fn values_mut(&mut self) -> &mut [f64] {
                &mut self.values
            }

            pub fn into_values(self) -> Vec<f64> {
                self.values
            }

            pub fn len(&self) -> usize {
                self.values.len()
            }

            pub fn is_empty(&self) -> bool {
                self.values.is_empty()
            }
        }
    };
}

fe_field!(FieldP1, "P1 field");
fe_field!(FieldP0, "P0 field");

/// Square matrix with a fixed set of periodic (wrap-around) diagonals.
///
/// Band `b` with offset `o` stores `A[i][(i + o) mod n]` at index `i`.
/// Offsets that alias on very small meshes accumulate.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    dim: usize,
    offsets: Vec<isize>,
    bands: Vec<Vec<f64>>,
    symmetric: bool,
}

impl BandedMatrix {
    /// Circulant matrix: every row carries the same value on each band.
    pub fn circulant(dim: usize, stencil: &[(isize, f64)], symmetric: bool) -> Self {
        Self {
            dim,
            offsets: stencil.iter().map(|&(o, _)| o).collect(),
            bands: stencil.iter().map(|&(_, v)| vec![v; dim]).collect(),
            symmetric,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    fn column(&self, row: usize, offset: isize) -> usize {
        (row as isize + offset).rem_euclid(self.dim as isize) as usize
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.offsets
            .iter()
            .zip(&self.bands)
            .filter(|(&o, _)| self.column(row, o) == col)
            .map(|(_, band)| band[row])
            .sum()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `y = A x`. Panics on length mismatch.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        y.iter_mut().for_each(|v| *v = 0.0);
        for (&o, band) in self.offsets.iter().zip(&self.bands) {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi += band[i] * x[self.column(i, o)];
            }
        }
    }

    /// `xᵀ A x`.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        let ax = self.mul_vec(x);
        x.iter().zip(&ax).map(|(a, b)| a * b).sum()
    }

    pub fn transpose(&self) -> Self {
        let n = self.dim as isize;
        let bands = self
            .offsets
            .iter()
            .zip(&self.bands)
            .map(|(&o, band)| {
                (0..n)
                    .map(|i| band[(i - o).rem_euclid(n) as usize])
                    .collect()
            })
            .collect();
        Self {
            dim: self.dim,
            offsets: self.offsets.iter().map(|o| -o).collect(),
            bands,
            symmetric: self.symmetric,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.bands
            .iter_mut()
            .flat_map(|b| b.iter_mut())
            .for_each(|v| *v *= factor);
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut dense = DMatrix::zeros(self.dim, self.dim);
        for (&o, band) in self.offsets.iter().zip(&self.bands) {
            for (i, &v) in band.iter().enumerate() {
                dense[(i, self.column(i, o))] += v;
            }
        }
        dense
    }
}

/// P1 mass matrix from exact integration of hat-function products.
pub fn mass_matrix_p1(mesh: &PeriodicMesh) -> BandedMatrix {
    let h = mesh.element_size();
    BandedMatrix::circulant(
        mesh.num_elements(),
        &[(-1, h / 6.0), (0, 2.0 * h / 3.0), (1, h / 6.0)],
        true,
    )
}

pub fn mass_matrix_p0(mesh: &PeriodicMesh) -> BandedMatrix {
    BandedMatrix::circulant(mesh.num_elements(), &[(0, mesh.element_size())], true)
}

/// `G[e][j] = ⟨φ_j', χ_e⟩`, so `(G u)_e = u_{e+1} − u_e` integrates `U_x`
/// over element `e`.
pub fn divergence_matrix(mesh: &PeriodicMesh) -> BandedMatrix {
    BandedMatrix::circulant(mesh.num_elements(), &[(0, -1.0), (1, 1.0)], false)
}

/// Weak pressure gradient `(K p)_j = −⟨P, φ_j'⟩ = p_j − p_{j−1}`.
///
/// Integration by parts on the periodic domain gives `K = −Gᵀ` exactly.
pub fn gradient_matrix(mesh: &PeriodicMesh) -> BandedMatrix {
    BandedMatrix::circulant(mesh.num_elements(), &[(-1, -1.0), (0, 1.0)], false)
}

pub fn interpolate_p1(func: impl Fn(f64) -> f64, mesh: &PeriodicMesh) -> FieldP1 {
    FieldP1 {
        values: (0..mesh.num_elements())
            .map(|m| func(mesh.node(m)))
            .collect(),
    }
}

pub fn interpolate_p0(func: impl Fn(f64) -> f64, mesh: &PeriodicMesh) -> FieldP0 {
    FieldP0 {
        values: (0..mesh.num_elements())
            .map(|e| func(mesh.midpoint(e)))
            .collect(),
    }
}

/// Discrete energy `g⟨U,U⟩ + g⟨V,V⟩ + ⟨P,P⟩`.
pub fn energy(u: &FieldP1, v: &FieldP1, p: &FieldP0, g: f64, mesh: &PeriodicMesh) -> Result<f64> {
    let m = mesh.num_elements();
    check_len("u", m, u.len())?;
    check_len("v", m, v.len())?;
    check_len("p", m, p.len())?;
    Ok(energy_of_slices(
        u.values(),
        v.values(),
        p.values(),
        g,
        mesh,
    ))
}

/// Energy of raw DOF slices; lengths must equal `mesh.num_elements()`.
pub(crate) fn energy_of_slices(
    u: &[f64],
    v: &[f64],
    p: &[f64],
    g: f64,
    mesh: &PeriodicMesh,
) -> f64 {
    let h = mesh.element_size();
    g * (p1_norm_sq(u, h) + p1_norm_sq(v, h)) + h * p.iter().map(|x| x * x).sum::<f64>()
}

/// `uᵀ M₁ u` without materialising the mass matrix.
pub(crate) fn p1_norm_sq(u: &[f64], h: f64) -> f64 {
    let n = u.len();
    let mut acc = 0.0;
    for i in 0..n {
        let next = u[(i + 1) % n];
        acc += (2.0 / 3.0) * u[i] * u[i] + (1.0 / 3.0) * u[i] * next;
    }
    h * acc
}

/// `y = M₁ u` without materialising the mass matrix.
pub(crate) fn p1_mass_apply(u: &[f64], h: f64, y: &mut [f64]) {
    let n = u.len();
    for i in 0..n {
        let prev = u[(i + n - 1) % n];
        let next = u[(i + 1) % n];
        y[i] = h * ((2.0 / 3.0) * u[i] + (prev + next) / 6.0);
    }
}
