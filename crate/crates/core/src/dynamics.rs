//! Crank–Nicolson time stepping of the linear rotating shallow-water system
//!
//! ```text
//! u_t − f v + p_x = 0,   v_t + f u = 0,   p_t + g u_x = 0
//! ```
//!
//! discretised with P1 velocities and P0 pressure. The semidiscrete system is
//! `M̂ ẋ = L̂ x` with `M̂ = blockdiag(M₁, M₁, M₀)` and
//!
//! ```text
//!       ⎡  0     f M₁   −K ⎤
//! L̂ =  ⎢ −f M₁   0      0 ⎥      K = −Gᵀ
//!       ⎣ −g G    0      0 ⎦
//! ```
//!
//! `diag(g, g, 1)·L̂` is skew-symmetric, so the implicit midpoint rule conserves
//! `g⟨U,U⟩ + g⟨V,V⟩ + ⟨P,P⟩` exactly (up to round-off).

use nalgebra::{linalg::LU, DMatrix, DVector, Dyn};

use crate::error::{check_len, Error, Result};
use crate::fe::{
    self, divergence_matrix, gradient_matrix, mass_matrix_p0, mass_matrix_p1, FieldP0, FieldP1,
    PeriodicMesh,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicsParams {
    /// Coriolis parameter `f`.
    pub coriolis: f64,
    /// Reference pressure `g`.
    pub gravity: f64,
    /// Time step `τ`.
    pub time_step: f64,
}

impl Default for PhysicsParams {
    fn default() -> Self {
        Self {
            coriolis: 0.1,
            gravity: 1.0,
            time_step: 0.01,
        }
    }
}

impl PhysicsParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.gravity > 0.0
            && self.time_step > 0.0
            && self.coriolis >= 0.0
            && [self.gravity, self.time_step, self.coriolis]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "physics parameters need g > 0, τ > 0, f ≥ 0: {self:?}"
            )))
        }
    }
}

/// One time level: `(u, v, p)` on a single mesh.
///
/// The flat layout is `[u | v | p]`, each block in ascending DOF order.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    mesh: PeriodicMesh,
    pub u: FieldP1,
    pub v: FieldP1,
    pub p: FieldP0,
}

impl State {
    pub fn new(mesh: &PeriodicMesh, u: FieldP1, v: FieldP1, p: FieldP0) -> Result<Self> {
        let m = mesh.num_elements();
        check_len("u", m, u.len())?;
        check_len("v", m, v.len())?;
        check_len("p", m, p.len())?;
        Ok(Self {
            mesh: *mesh,
            u,
            v,
            p,
        })
    }

    pub fn zeros(mesh: &PeriodicMesh) -> Self {
        Self {
            mesh: *mesh,
            u: FieldP1::zeros(mesh),
            v: FieldP1::zeros(mesh),
            p: FieldP0::zeros(mesh),
        }
    }

    pub fn from_flat(mesh: &PeriodicMesh, flat: &[f64]) -> Result<Self> {
        let m = mesh.num_elements();
        check_len("flat state", 3 * m, flat.len())?;
        Ok(Self {
            mesh: *mesh,
            u: FieldP1::new(mesh, flat[..m].to_vec())?,
            v: FieldP1::new(mesh, flat[m..2 * m].to_vec())?,
            p: FieldP0::new(mesh, flat[2 * m..].to_vec())?,
        })
    }

    pub fn mesh(&self) -> &PeriodicMesh {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        3 * self.mesh.num_elements()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend_from_slice(self.u.values());
        out.extend_from_slice(self.v.values());
        out.extend_from_slice(self.p.values());
        out
    }

    pub fn energy(&self, g: f64) -> f64 {
        fe::energy_of_slices(
            self.u.values(),
            self.v.values(),
            self.p.values(),
            g,
            &self.mesh,
        )
    }
}

/// Energy of a flat `[u | v | p]` vector on `mesh`.
pub fn flat_energy(flat: &[f64], g: f64, mesh: &PeriodicMesh) -> f64 {
    let m = mesh.num_elements();
    fe::energy_of_slices(&flat[..m], &flat[m..2 * m], &flat[2 * m..3 * m], g, mesh)
}

/// `N` time levels stored as a row-major `N × D` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    mesh: PeriodicMesh,
    levels: usize,
    data: Vec<f64>,
}

impl Trajectory {
    pub fn from_rows(mesh: &PeriodicMesh, levels: usize, data: Vec<f64>) -> Result<Self> {
        if levels == 0 {
            return Err(Error::Config(
                "a trajectory needs at least one level".into(),
            ));
        }
        check_len(
            "trajectory data",
            levels * 3 * mesh.num_elements(),
            data.len(),
        )?;
        Ok(Self {
            mesh: *mesh,
            levels,
            data,
        })
    }

    pub fn zeros(mesh: &PeriodicMesh, levels: usize) -> Self {
        Self {
            mesh: *mesh,
            levels,
            data: vec![0.0; levels * 3 * mesh.num_elements()],
        }
    }

    pub fn mesh(&self) -> &PeriodicMesh {
        &self.mesh
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn dim(&self) -> usize {
        3 * self.mesh.num_elements()
    }

    pub fn level(&self, n: usize) -> &[f64] {
        let d = self.dim();
        &self.data[n * d..(n + 1) * d]
    }

    pub fn state(&self, n: usize) -> State {
        State::from_flat(&self.mesh, self.level(n)).expect("level has trajectory dimension")
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn energies(&self, g: f64) -> Vec<f64> {
        (0..self.levels)
            .map(|n| flat_energy(self.level(n), g, &self.mesh))
            .collect()
    }
}

/// Dense block matrices of the semidiscrete system `M̂ ẋ = L̂ x`.
#[derive(Debug, Clone)]
pub struct Generator {
    pub mass: DMatrix<f64>,
    pub operator: DMatrix<f64>,
}

fn put_block(target: &mut DMatrix<f64>, row: usize, col: usize, block: &DMatrix<f64>) {
    target.view_mut((row, col), block.shape()).copy_from(block);
}

pub fn assemble_generator(mesh: &PeriodicMesh, params: &PhysicsParams) -> Generator {
    let m = mesh.num_elements();
    let m1 = mass_matrix_p1(mesh).to_dense();
    let m0 = mass_matrix_p0(mesh).to_dense();
    let grad = gradient_matrix(mesh).to_dense();
    let div = divergence_matrix(mesh).to_dense();

    let mut mass = DMatrix::zeros(3 * m, 3 * m);
    put_block(&mut mass, 0, 0, &m1);
    put_block(&mut mass, m, m, &m1);
    put_block(&mut mass, 2 * m, 2 * m, &m0);

    let f = params.coriolis;
    let mut operator = DMatrix::zeros(3 * m, 3 * m);
    put_block(&mut operator, 0, m, &(&m1 * f));
    put_block(&mut operator, 0, 2 * m, &(-grad));
    put_block(&mut operator, m, 0, &(&m1 * -f));
    put_block(&mut operator, 2 * m, 0, &(&div * -params.gravity));
    Generator { mass, operator }
}

/// LU factorization of `M̂ − (τ/2) L̂` together with `M̂ + (τ/2) L̂`,
/// built once per (mesh, physics) and reused for every step.
pub struct SystemFactorization {
    mesh: PeriodicMesh,
    params: PhysicsParams,
    signed_step: f64,
    lu: LU<f64, Dyn, Dyn>,
    rhs: DMatrix<f64>,
}

impl SystemFactorization {
    pub fn new(mesh: &PeriodicMesh, params: &PhysicsParams) -> Result<Self> {
        params.validate()?;
        Self::with_step(mesh, params, params.time_step)
    }

    fn with_step(mesh: &PeriodicMesh, params: &PhysicsParams, step: f64) -> Result<Self> {
        let Generator { mass, operator } = assemble_generator(mesh, params);
        let half = 0.5 * step;
        let lhs = &mass - &operator * half;
        let rhs = &mass + &operator * half;
        let lu = lhs.lu();
        if !lu.is_invertible() {
            return Err(Error::Singular(format!(
                "Crank–Nicolson matrix for M={} is not invertible",
                mesh.num_elements()
            )));
        }
        Ok(Self {
            mesh: *mesh,
            params: *params,
            signed_step: step,
            lu,
            rhs,
        })
    }

    /// The exact inverse of this map: the same scheme run with `−τ`.
    pub fn reversed(&self) -> Result<Self> {
        Self::with_step(&self.mesh, &self.params, -self.signed_step)
    }

    pub fn mesh(&self) -> &PeriodicMesh {
        &self.mesh
    }

    pub fn params(&self) -> &PhysicsParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        3 * self.mesh.num_elements()
    }

    pub fn step_flat(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("state", self.dim(), x.len())?;
        let b = &self.rhs * DVector::from_column_slice(x);
        self.lu
            .solve(&b)
            .map(|v| v.as_slice().to_vec())
            .ok_or_else(|| Error::Singular("Crank–Nicolson solve failed".into()))
    }

    pub fn step(&self, state: &State) -> Result<State> {
        if state.mesh() != &self.mesh {
            return Err(Error::Dimension {
                what: "state mesh elements",
                expected: self.mesh.num_elements(),
                actual: state.mesh().num_elements(),
            });
        }
        State::from_flat(&self.mesh, &self.step_flat(&state.flat())?)
    }

    /// Runs `n_steps` steps; the result holds `n_steps + 1` levels.
    pub fn simulate(&self, initial: &State, n_steps: usize) -> Result<Trajectory> {
        let d = self.dim();
        check_len("initial state", d, initial.dim())?;
        let mut data = Vec::with_capacity((n_steps + 1) * d);
        let mut current = initial.flat();
        data.extend_from_slice(&current);
        for _ in 0..n_steps {
            current = self.step_flat(&current)?;
            data.extend_from_slice(&current);
        }
        Trajectory::from_rows(&self.mesh, n_steps + 1, data)
    }

    pub fn flow_map(&self) -> Result<FlowMap> {
        let a = self
            .lu
            .solve(&self.rhs)
            .ok_or_else(|| Error::Singular("flow map solve failed".into()))?;
        let dim = self.dim();
        // nalgebra is column-major; FlowMap keeps rows contiguous.
        let mut matrix = Vec::with_capacity(dim * dim);
        for i in 0..dim {
            matrix.extend(a.row(i).iter().copied());
        }
        Ok(FlowMap {
            mesh: self.mesh,
            params: self.params,
            dim,
            matrix,
        })
    }
}

/// Dense one-step evolution matrix `A = (M̂ − τ/2 L̂)⁻¹ (M̂ + τ/2 L̂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowMap {
    mesh: PeriodicMesh,
    params: PhysicsParams,
    dim: usize,
    matrix: Vec<f64>,
}

impl FlowMap {
    pub fn mesh(&self) -> &PeriodicMesh {
        &self.mesh
    }

    pub fn params(&self) -> &PhysicsParams {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.matrix[row * self.dim + col]
    }

    /// `y = A x`. Panics on length mismatch.
    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        for (row, yi) in self.matrix.chunks_exact(self.dim).zip(y.iter_mut()) {
            *yi = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.dim];
        self.apply_into(x, &mut y);
        y
    }

    /// `y = Aᵀ x`. Panics on length mismatch.
    pub fn apply_transpose_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        y.iter_mut().for_each(|v| *v = 0.0);
        for (row, &xi) in self.matrix.chunks_exact(self.dim).zip(x) {
            if xi != 0.0 {
                for (yj, a) in y.iter_mut().zip(row) {
                    *yj += a * xi;
                }
            }
        }
    }

    /// Row-wise `y_i = A x_i` for a row-major stack of states.
    pub fn apply_rows(&self, x: &[f64], y: &mut [f64]) {
        self.rows_gemm(x, y, false);
    }

    /// Row-wise `y_i = Aᵀ x_i`.
    pub fn apply_transpose_rows(&self, x: &[f64], y: &mut [f64]) {
        self.rows_gemm(x, y, true);
    }

    fn rows_gemm(&self, x: &[f64], y: &mut [f64], transpose: bool) {
        let d = self.dim;
        assert_eq!(x.len() % d, 0);
        assert_eq!(x.len(), y.len());
        let rows = x.len() / d;
        if rows == 1 {
            return if transpose {
                self.apply_transpose_into(x, y)
            } else {
                self.apply_into(x, y)
            };
        }
        // Y (rows × D) = X · Aᵀ, or X · A for the transpose.
        let (rsb, csb) = if transpose {
            (d as isize, 1)
        } else {
            (1, d as isize)
        };
        unsafe {
            matrixmultiply::dgemm(
                rows,
                d,
                d,
                1.0,
                x.as_ptr(),
                d as isize,
                1,
                self.matrix.as_ptr(),
                rsb,
                csb,
                0.0,
                y.as_mut_ptr(),
                d as isize,
                1,
            );
        }
    }
}

pub fn flow_map(mesh: &PeriodicMesh, params: &PhysicsParams) -> Result<FlowMap> {
    SystemFactorization::new(mesh, params)?.flow_map()
}

pub fn simulate(initial: &State, n_steps: usize, params: &PhysicsParams) -> Result<Trajectory> {
    SystemFactorization::new(initial.mesh(), params)?.simulate(initial, n_steps)
}

/// `max_n |E_n − E_0| / max(E_0, 1e-30)`; zero for single-level trajectories.
pub fn energy_drift(traj: &Trajectory, g: f64) -> f64 {
    let energies = traj.energies(g);
    let e0 = energies[0];
    let scale = e0.max(1e-30);
    energies
        .iter()
        .map(|e| (e - e0).abs() / scale)
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fe::build_mesh;
    use crate::oracle;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(mesh: &PeriodicMesh, rng: &mut impl Rng) -> State {
        let flat: Vec<f64> = (0..3 * mesh.num_elements())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        State::from_flat(mesh, &flat).unwrap()
    }

    fn steady(mesh: &PeriodicMesh, c: f64) -> State {
        let mut s = State::zeros(mesh);
        s.p.values_mut().iter_mut().for_each(|p| *p = c);
        s
    }

    #[test]
    fn flat_round_trip() {
        let mesh = build_mesh(4).unwrap();
        let flat: Vec<f64> = (0..12).map(f64::from).collect();
        let s = State::from_flat(&mesh, &flat).unwrap();
        assert_eq!(s.u.values(), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(s.p.values(), &[8.0, 9.0, 10.0, 11.0]);
        assert_eq!(s.flat(), flat);
        assert!(State::from_flat(&mesh, &flat[..11]).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(PhysicsParams::default().validate().is_ok());
        let bad = PhysicsParams {
            time_step: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PhysicsParams {
            coriolis: -0.1,
            ..Default::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn generator_kills_steady_state() {
        let mesh = build_mesh(7).unwrap();
        let gen = assemble_generator(&mesh, &PhysicsParams::default());
        let x = DVector::from_vec(steady(&mesh, 2.0).flat());
        assert!((&gen.operator * x).amax() < 1e-15);
    }

    #[test]
    fn generator_without_rotation_freezes_u_for_constant_p() {
        let mesh = build_mesh(6).unwrap();
        let params = PhysicsParams {
            coriolis: 0.0,
            ..Default::default()
        };
        let gen = assemble_generator(&mesh, &params);
        let mut s = steady(&mesh, 1.5);
        s.v.values_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = i as f64);
        let rate = &gen.operator * DVector::from_vec(s.flat());
        assert!(rate.rows(0, 12).amax() < 1e-15);
    }

    #[test]
    fn generator_matches_hand_assembly() {
        // 9×9 oracle for M = 3, h = 1 written out entry by entry.
        let mesh = build_mesh(3).unwrap();
        let (f, g) = (0.3, 2.0);
        let params = PhysicsParams {
            coriolis: f,
            gravity: g,
            time_step: 0.1,
        };
        let gen = assemble_generator(&mesh, &params);
        let m1 = |i: usize, j: usize| if i == j { 2.0 / 3.0 } else { 1.0 / 6.0 };
        let div = |e: usize, j: usize| {
            if j == e {
                -1.0
            } else if j == (e + 1) % 3 {
                1.0
            } else {
                0.0
            }
        };
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(gen.mass[(i, j)], m1(i, j));
                assert_eq!(gen.mass[(3 + i, 3 + j)], m1(i, j));
                assert_eq!(gen.mass[(6 + i, 6 + j)], if i == j { 1.0 } else { 0.0 });
                assert!((gen.operator[(i, 3 + j)] - f * m1(i, j)).abs() < 1e-15);
                assert!((gen.operator[(3 + i, j)] + f * m1(i, j)).abs() < 1e-15);
                // −K = Gᵀ
                assert_eq!(gen.operator[(i, 6 + j)], div(j, i));
                assert_eq!(gen.operator[(6 + i, j)], -g * div(i, j));
                for (r, c) in [(0, 0), (3, 3), (3, 6), (6, 3), (6, 6)] {
                    assert_eq!(gen.operator[(r + i, c + j)], 0.0);
                }
            }
        }
    }

    /// The weak residuals, evaluated by quadrature on the basis functions,
    /// vanish for the semidiscrete rate `ẋ = M̂⁻¹ L̂ x`.
    #[test]
    fn weak_form_residuals_vanish() {
        let mesh = build_mesh(5).unwrap();
        let params = PhysicsParams {
            coriolis: 0.7,
            gravity: 1.9,
            time_step: 0.01,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_state(&mesh, &mut rng).flat();
        let gen = assemble_generator(&mesh, &params);
        let rate = gen
            .mass
            .clone()
            .lu()
            .solve(&(&gen.operator * DVector::from_vec(x.clone())))
            .unwrap();
        let (u, v, p) = (&x[..5], &x[5..10], &x[10..]);
        let (ut, vt, pt) = (
            &rate.as_slice()[..5],
            &rate.as_slice()[5..10],
            &rate.as_slice()[10..],
        );
        let ev1 = |vals: &[f64], y: f64| oracle::eval_p1(&mesh, vals, y);
        let ev0 = |vals: &[f64], y: f64| oracle::eval_p0(&mesh, vals, y);
        let grad_u = |y: f64| {
            (0..5)
                .map(|j| u[j] * oracle::hat_dx(&mesh, j, y))
                .sum::<f64>()
        };
        for j in 0..5 {
            let r_u = oracle::integrate(&mesh, |y| {
                (ev1(ut, y) - params.coriolis * ev1(v, y)) * oracle::hat(&mesh, j, y)
                    - ev0(p, y) * oracle::hat_dx(&mesh, j, y)
            });
            let r_v = oracle::integrate(&mesh, |y| {
                (ev1(vt, y) + params.coriolis * ev1(u, y)) * oracle::hat(&mesh, j, y)
            });
            let r_p = oracle::integrate(&mesh, |y| {
                (ev0(pt, y) + params.gravity * grad_u(y)) * oracle::indicator(&mesh, j, y)
            });
            assert!(r_u.abs() < 1e-12, "u residual {r_u}");
            assert!(r_v.abs() < 1e-12, "v residual {r_v}");
            assert!(r_p.abs() < 1e-12, "p residual {r_p}");
        }
    }

    #[test]
    fn steady_state_is_fixed() {
        let mesh = build_mesh(75).unwrap();
        let fact = SystemFactorization::new(&mesh, &PhysicsParams::default()).unwrap();
        let s = steady(&mesh, 0.7);
        let next = fact.step(&s).unwrap();
        for (a, b) in next.flat().iter().zip(s.flat()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn step_conserves_energy() {
        let mesh = build_mesh(75).unwrap();
        let params = PhysicsParams::default();
        let fact = SystemFactorization::new(&mesh, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let s = random_state(&mesh, &mut rng);
            let next = fact.step(&s).unwrap();
            let (e0, e1) = (s.energy(params.gravity), next.energy(params.gravity));
            assert!(((e1 - e0) / e0).abs() < 1e-12);
        }
    }

    #[test]
    fn step_matches_dense_inverse() {
        let mesh = build_mesh(3).unwrap();
        let params = PhysicsParams {
            coriolis: 0.4,
            gravity: 1.2,
            time_step: 0.3,
        };
        let gen = assemble_generator(&mesh, &params);
        let half = 0.5 * params.time_step;
        let inv = (&gen.mass - &gen.operator * half).try_inverse().unwrap();
        let a = inv * (&gen.mass + &gen.operator * half);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_state(&mesh, &mut rng);
        let expected = &a * DVector::from_vec(s.flat());
        let got = SystemFactorization::new(&mesh, &params)
            .unwrap()
            .step(&s)
            .unwrap();
        for (x, y) in got.flat().iter().zip(expected.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn step_rejects_foreign_mesh() {
        let fact =
            SystemFactorization::new(&build_mesh(4).unwrap(), &PhysicsParams::default()).unwrap();
        let s = State::zeros(&build_mesh(5).unwrap());
        assert!(matches!(fact.step(&s), Err(Error::Dimension { .. })));
    }

    #[test]
    fn flow_map_agrees_with_step() {
        let mesh = build_mesh(20).unwrap();
        let params = PhysicsParams::default();
        let fact = SystemFactorization::new(&mesh, &params).unwrap();
        let a = fact.flow_map().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let x = random_state(&mesh, &mut rng).flat();
            let ax = a.apply(&x);
            let sx = fact.step_flat(&x).unwrap();
            for (p, q) in ax.iter().zip(&sx) {
                assert!((p - q).abs() < 1e-12);
            }
            let (e0, e1) = (flat_energy(&x, 1.0, &mesh), flat_energy(&ax, 1.0, &mesh));
            assert!(((e1 - e0) / e0).abs() < 1e-10);
        }
        let s = steady(&mesh, -0.3).flat();
        for (p, q) in a.apply(&s).iter().zip(&s) {
            assert!((p - q).abs() < 1e-14);
        }
    }

    #[test]
    fn flow_map_transpose() {
        let mesh = build_mesh(4).unwrap();
        let a = flow_map(&mesh, &PhysicsParams::default()).unwrap();
        let e = |k: usize| {
            let mut v = vec![0.0; 12];
            v[k] = 1.0;
            v
        };
        for k in 0..12 {
            let col = a.apply(&e(k));
            let row = {
                let mut y = vec![0.0; 12];
                a.apply_transpose_into(&e(k), &mut y);
                y
            };
            for j in 0..12 {
                assert_eq!(col[j], a.entry(j, k));
                assert_eq!(row[j], a.entry(k, j));
            }
        }
    }

    #[test]
    fn row_stacked_application() {
        let mesh = build_mesh(9).unwrap();
        let a = flow_map(&mesh, &PhysicsParams::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x: Vec<f64> = (0..5 * 27).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (mut y, mut yt) = (vec![0.0; 5 * 27], vec![0.0; 5 * 27]);
        a.apply_rows(&x, &mut y);
        a.apply_transpose_rows(&x, &mut yt);
        for r in 0..5 {
            let xr = &x[r * 27..(r + 1) * 27];
            let mut t = vec![0.0; 27];
            a.apply_transpose_into(xr, &mut t);
            for (p, q) in a.apply(xr).iter().zip(&y[r * 27..]) {
                assert!((p - q).abs() < 1e-13);
            }
            for (p, q) in t.iter().zip(&yt[r * 27..]) {
                assert!((p - q).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn simulate_levels_and_flow_consistency() {
        let mesh = build_mesh(15).unwrap();
        let params = PhysicsParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_state(&mesh, &mut rng);
        let single = simulate(&s, 0, &params).unwrap();
        assert_eq!(single.levels(), 1);
        assert_eq!(single.level(0), s.flat().as_slice());

        let traj = simulate(&s, 12, &params).unwrap();
        assert_eq!(traj.levels(), 13);
        let a = flow_map(&mesh, &params).unwrap();
        let mut x = s.flat();
        for n in 1..13 {
            x = a.apply(&x);
            for (p, q) in traj.level(n).iter().zip(&x) {
                assert!((p - q).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn drift_of_long_run() {
        let mesh = build_mesh(75).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let traj = simulate(
            &random_state(&mesh, &mut rng),
            100,
            &PhysicsParams::default(),
        )
        .unwrap();
        assert!(energy_drift(&traj, 1.0) <= 1e-10);

        let constant = Trajectory::from_rows(&mesh, 3, vec![0.25; 3 * 225]).unwrap();
        assert_eq!(energy_drift(&constant, 1.0), 0.0);
    }

    #[test]
    fn forward_euler_drifts() {
        // A non-conservative integrator must fail the drift check.
        let mesh = build_mesh(75).unwrap();
        let params = PhysicsParams::default();
        let gen = assemble_generator(&mesh, &params);
        let b = gen.mass.clone().lu().solve(&gen.operator).unwrap();
        let p0 = fe::interpolate_p0(
            |x| (2.0 * std::f64::consts::PI * 10.0 * x / 3.0).sin(),
            &mesh,
        );
        let s = State::new(&mesh, FieldP1::zeros(&mesh), FieldP1::zeros(&mesh), p0).unwrap();
        let mut x = DVector::from_vec(s.flat());
        let mut data = x.as_slice().to_vec();
        for _ in 0..100 {
            x = &x + (&b * &x) * params.time_step;
            data.extend_from_slice(x.as_slice());
        }
        let traj = Trajectory::from_rows(&mesh, 101, data).unwrap();
        assert!(energy_drift(&traj, params.gravity) > 1e-3);
    }

    #[test]
    fn reversed_map_undoes_step() {
        let mesh = build_mesh(30).unwrap();
        let fact = SystemFactorization::new(&mesh, &PhysicsParams::default()).unwrap();
        let back = fact.reversed().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_state(&mesh, &mut rng).flat();
        let y = back.step_flat(&fact.step_flat(&x).unwrap()).unwrap();
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn no_rotation_no_pressure_keeps_velocity() {
        let mesh = build_mesh(12).unwrap();
        let params = PhysicsParams {
            coriolis: 0.0,
            ..Default::default()
        };
        let mut s = State::zeros(&mesh);
        s.u.values_mut().iter_mut().for_each(|u| *u = 0.3);
        s.v.values_mut()
            .iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v = (i as f64).cos());
        let traj = simulate(&s, 10, &params).unwrap();
        for n in 0..11 {
            for (a, b) in traj.level(n)[..24].iter().zip(&s.flat()[..24]) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }
}
