//! Exact prolongation from a coarse mesh onto a nested fine mesh.
//!
//! On nested meshes the coarse P1 and P0 spaces are subspaces of their fine
//! counterparts, so prolongation only re-expresses the same function in the
//! fine basis.

use crate::dynamics::{State, Trajectory};
use crate::error::{check_len, Error, Result};
use crate::fe::{FieldP0, FieldP1, PeriodicMesh};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshPair {
    coarse: PeriodicMesh,
    fine: PeriodicMesh,
    ratio: usize,
}

impl MeshPair {
    pub fn new(coarse: PeriodicMesh, fine: PeriodicMesh) -> Result<Self> {
        let (mc, mf) = (coarse.num_elements(), fine.num_elements());
        if mf % mc != 0 || mf / mc < 2 {
            return Err(Error::Config(format!(
                "meshes are not nested with ratio ≥ 2: coarse {mc}, fine {mf}"
            )));
        }
        Ok(Self {
            coarse,
            fine,
            ratio: mf / mc,
        })
    }

    pub fn coarse(&self) -> &PeriodicMesh {
        &self.coarse
    }

    pub fn fine(&self) -> &PeriodicMesh {
        &self.fine
    }

    pub fn ratio(&self) -> usize {
        self.ratio
    }
}

/// Sparse row-wise transfer matrix: each fine DOF is a short combination
/// of coarse DOF.
#[derive(Debug, Clone, PartialEq)]
pub struct Prolongation {
    coarse_dim: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl Prolongation {
    /// Two-banded linear interpolation weights for P1.
    pub fn p1(pair: &MeshPair) -> Self {
        let (mc, r) = (pair.coarse.num_elements(), pair.ratio);
        let rows = (0..pair.fine.num_elements())
            .map(|j| {
                let (e, k) = (j / r, j % r);
                if k == 0 {
                    vec![(e, 1.0)]
                } else {
                    let t = k as f64 / r as f64;
                    vec![(e, 1.0 - t), ((e + 1) % mc, t)]
                }
            })
            .collect();
        Self {
            coarse_dim: mc,
            rows,
        }
    }

    /// Block replication for P0: children inherit the parent value.
    pub fn p0(pair: &MeshPair) -> Self {
        let rows = (0..pair.fine.num_elements())
            .map(|j| vec![(j / pair.ratio, 1.0)])
            .collect();
        Self {
            coarse_dim: pair.coarse.num_elements(),
            rows,
        }
    }

    pub fn fine_dim(&self) -> usize {
        self.rows.len()
    }

    pub fn coarse_dim(&self) -> usize {
        self.coarse_dim
    }

    /// Panics on length mismatch.
    pub fn apply_into(&self, coarse: &[f64], fine: &mut [f64]) {
        assert_eq!(coarse.len(), self.coarse_dim);
        assert_eq!(fine.len(), self.rows.len());
        for (y, row) in fine.iter_mut().zip(&self.rows) {
            *y = row.iter().map(|&(c, w)| w * coarse[c]).sum();
        }
    }

    pub fn apply(&self, coarse: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows.len()];
        self.apply_into(coarse, &mut out);
        out
    }
}

pub fn prolong_p1(field: &FieldP1, pair: &MeshPair) -> Result<FieldP1> {
    check_len("coarse P1 field", pair.coarse.num_elements(), field.len())?;
    FieldP1::new(&pair.fine, Prolongation::p1(pair).apply(field.values()))
}

pub fn prolong_p0(field: &FieldP0, pair: &MeshPair) -> Result<FieldP0> {
    check_len("coarse P0 field", pair.coarse.num_elements(), field.len())?;
    FieldP0::new(&pair.fine, Prolongation::p0(pair).apply(field.values()))
}

pub fn prolong_state(state: &State, pair: &MeshPair) -> Result<State> {
    State::new(
        &pair.fine,
        prolong_p1(&state.u, pair)?,
        prolong_p1(&state.v, pair)?,
        prolong_p0(&state.p, pair)?,
    )
}

/// Prolongs every level of a coarse trajectory; the result is the network
/// input `x_c`.
pub fn prolong_trajectory(traj: &Trajectory, pair: &MeshPair) -> Result<Trajectory> {
    if traj.mesh() != &pair.coarse {
        return Err(Error::Config(format!(
            "trajectory mesh has {} elements, pair expects {}",
            traj.mesh().num_elements(),
            pair.coarse.num_elements()
        )));
    }
    let (mc, mf) = (pair.coarse.num_elements(), pair.fine.num_elements());
    let (p1, p0) = (Prolongation::p1(pair), Prolongation::p0(pair));
    let mut data = vec![0.0; traj.levels() * 3 * mf];
    for (n, out) in data.chunks_exact_mut(3 * mf).enumerate() {
        let level = traj.level(n);
        p1.apply_into(&level[..mc], &mut out[..mf]);
        p1.apply_into(&level[mc..2 * mc], &mut out[mf..2 * mf]);
        p0.apply_into(&level[2 * mc..], &mut out[2 * mf..]);
    }
    Trajectory::from_rows(&pair.fine, traj.levels(), data)
}
