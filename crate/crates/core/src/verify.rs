//! Self-checks of the discretisation and the network gradient, run by the
//! `verify` subcommand.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::dataset::{initial_state, sample_params};
use crate::dynamics::{energy_drift, flat_energy, PhysicsParams, SystemFactorization};
use crate::error::Result;
use crate::fe::{divergence_matrix, gradient_matrix, BandedMatrix, PeriodicMesh};
use crate::nn::{Architecture, ModelParams, NeuralInterpolant, Tensor2};
use crate::rng::{stream_rng, Stream};
use crate::trainer::{example_loss_grad, sample_loss_grad, Example};
use crate::transfer::{MeshPair, Prolongation};

pub const CONSERVATION_TOL: f64 = 1e-10;
pub const DUALITY_TOL: f64 = 1e-14;
pub const PROLONGATION_TOL: f64 = 1e-13;
pub const FLOW_TOL: f64 = 1e-12;
pub const GRADIENT_TOL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
}

impl CheckResult {
    fn new(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
        }
    }

    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {}: {:.3e} (tol {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.tolerance
        )
    }
}

/// Relative energy drift over `steps` Crank–Nicolson steps from a random
/// Gaussian-plus-sine pressure bump.
pub fn check_conservation(
    mesh: &PeriodicMesh,
    physics: &PhysicsParams,
    steps: usize,
    seed: u64,
) -> Result<CheckResult> {
    let params = sample_params(&mut stream_rng(
        seed,
        Stream::Verify,
        mesh.num_elements() as u64,
    ));
    let fact = SystemFactorization::new(mesh, physics)?;
    let traj = fact.simulate(&initial_state(&params, mesh), steps)?;
    Ok(CheckResult::new(
        format!(
            "energy conservation, M={}, {steps} steps",
            mesh.num_elements()
        ),
        energy_drift(&traj, physics.gravity),
        CONSERVATION_TOL,
    ))
}

/// `max |K + Gᵀ|` entrywise.
pub fn check_skew_duality(k: &BandedMatrix, g: &BandedMatrix) -> CheckResult {
    let n = k.dim();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((k.get(i, j) + g.get(j, i)).abs());
        }
    }
    CheckResult::new(
        format!("gradient/divergence duality, M={n}"),
        worst,
        DUALITY_TOL,
    )
}

fn eval_p1(values: &[f64], h: f64, x: f64) -> f64 {
    let m = values.len();
    let s = x / h;
    let e = (s.floor() as usize).min(m - 1);
    let t = s - e as f64;
    values[e] * (1.0 - t) + values[(e + 1) % m] * t
}

fn eval_p0(values: &[f64], h: f64, x: f64) -> f64 {
    values[((x / h).floor() as usize).min(values.len() - 1)]
}

/// L² distance between random coarse fields and their prolongations,
/// integrated with 4-point Gauss rules on every fine element.
pub fn check_prolongation(pair: &MeshPair, seed: u64) -> CheckResult {
    const NODES: [f64; 4] = [
        -0.861_136_311_594_052_6,
        -0.339_981_043_584_856_3,
        0.339_981_043_584_856_3,
        0.861_136_311_594_052_6,
    ];
    const WEIGHTS: [f64; 4] = [
        0.347_854_845_137_453_9,
        0.652_145_154_862_546_1,
        0.652_145_154_862_546_1,
        0.347_854_845_137_453_9,
    ];
    let mut rng = stream_rng(
        seed,
        Stream::Verify,
        1_000_000 + pair.fine().num_elements() as u64,
    );
    let (mc, mf) = (pair.coarse().num_elements(), pair.fine().num_elements());
    let (hc, hf) = (pair.coarse().element_size(), pair.fine().element_size());
    let mut worst = 0.0f64;
    for _ in 0..4 {
        let c: Vec<f64> = (0..mc).map(|_| rng.random_range(-1.0..1.0)).collect();
        for (p1, prolong) in [
            (true, Prolongation::p1(pair)),
            (false, Prolongation::p0(pair)),
        ] {
            let f = prolong.apply(&c);
            let mut err = 0.0;
            for e in 0..mf {
                for (xi, w) in NODES.iter().zip(WEIGHTS) {
                    let x = (e as f64 + 0.5 * (xi + 1.0)) * hf;
                    let d = if p1 {
                        eval_p1(&c, hc, x) - eval_p1(&f, hf, x)
                    } else {
                        let xm = (e as f64 + 0.5) * hf;
                        eval_p0(&c, hc, xm) - f[e]
                    };
                    err += 0.5 * hf * w * d * d;
                }
            }
            worst = worst.max(err.sqrt());
        }
    }
    CheckResult::new(
        format!("prolongation exactness, {mc}->{mf}"),
        worst,
        PROLONGATION_TOL,
    )
}

/// Flow-map rows against direct steps, and energy of `A x` against `x`.
pub fn check_flow_map(
    mesh: &PeriodicMesh,
    physics: &PhysicsParams,
    seed: u64,
) -> Result<Vec<CheckResult>> {
    let fact = SystemFactorization::new(mesh, physics)?;
    let flow = fact.flow_map()?;
    let mut rng = stream_rng(seed, Stream::Verify, 2_000_000 + mesh.num_elements() as u64);
    let (mut step_err, mut energy_err) = (0.0f64, 0.0f64);
    for _ in 0..5 {
        let x: Vec<f64> = (0..fact.dim())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let a = flow.apply(&x);
        let b = fact.step_flat(&x)?;
        let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = a
            .iter()
            .zip(&b)
            .fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        step_err = step_err.max(diff / scale);
        let (e0, e1) = (
            flat_energy(&x, physics.gravity, mesh),
            flat_energy(&a, physics.gravity, mesh),
        );
        energy_err = energy_err.max((e1 - e0).abs() / e0);
    }
    Ok(vec![
        CheckResult::new(
            format!("flow map vs step, M={}", mesh.num_elements()),
            step_err,
            FLOW_TOL,
        ),
        CheckResult::new(
            format!("flow map energy, M={}", mesh.num_elements()),
            energy_err,
            CONSERVATION_TOL,
        ),
    ])
}

/// Worst per-tensor relative error of the analytic loss gradient against
/// central differences, on a small network with random inputs.
pub fn check_gradient(sigma: f64, seed: u64) -> Result<CheckResult> {
    let (levels, elems) = (3, 12);
    let mesh = PeriodicMesh::new(elems)?;
    let physics = PhysicsParams::default();
    let flow = Arc::new(SystemFactorization::new(&mesh, &physics)?.flow_map()?);
    let arch = Architecture {
        levels,
        length: elems,
        s1: 2,
        s2: 4,
    };
    let mut params = ModelParams::init(arch, seed);
    let mut rng = stream_rng(seed, Stream::Verify, 3_000_000);
    for t in params.tensors_mut() {
        t.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    }
    let mut random = |n: usize| -> Result<Tensor2> {
        Tensor2::new(
            n,
            3 * elems,
            (0..n * 3 * elems)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
    };
    let example = Example {
        x_c: random(levels)?,
        x_f: random(levels)?,
    };
    let g = physics.gravity;
    let model = NeuralInterpolant::new(params.clone(), flow.clone())?;
    let (_, grads) = example_loss_grad(&model, &example, sigma, g, &mesh)?;

    let loss = |p: &ModelParams| -> Result<f64> {
        let m = NeuralInterpolant::new(p.clone(), flow.clone())?;
        let pred = m.forward(&example.x_c)?;
        Ok(
            sample_loss_grad(&pred, &example.x_f, &example.x_c, sigma, g, &mesh)?
                .0
                .total(sigma),
        )
    };
    let h = 1e-5;
    let analytic = grads.tensors();
    let mut worst = 0.0f64;
    for (ti, an) in analytic.iter().enumerate() {
        let mut fd = vec![0.0; an.len()];
        for (i, slot) in fd.iter_mut().enumerate() {
            let (mut plus, mut minus) = (params.clone(), params.clone());
            plus.tensors_mut()[ti][i] += h;
            minus.tensors_mut()[ti][i] -= h;
            *slot = (loss(&plus)? - loss(&minus)?) / (2.0 * h);
        }
        let scale = an.iter().chain(&fd).fold(0.0f64, |m, v| m.max(v.abs()));
        if scale < 1e-10 {
            continue;
        }
        let diff = an
            .iter()
            .zip(&fd)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(diff / scale);
    }
    Ok(CheckResult::new(
        format!("loss gradient, sigma={sigma}"),
        worst,
        GRADIENT_TOL,
    ))
}

/// All checks for a fine mesh of `fine_elems` elements and a coarse mesh
/// four times coarser.
pub fn run_suite(fine_elems: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let fine = PeriodicMesh::new(fine_elems)?;
    let physics = PhysicsParams::default();
    let mut out = Vec::new();
    let mut meshes = vec![fine.clone()];
    if fine_elems % 4 == 0 && fine_elems / 4 >= 2 {
        let coarse = PeriodicMesh::new(fine_elems / 4)?;
        out.push(check_prolongation(
            &MeshPair::new(coarse.clone(), fine.clone())?,
            seed,
        ));
        meshes.insert(0, coarse);
    }
    for mesh in &meshes {
        out.push(check_conservation(mesh, &physics, 100, seed)?);
        out.push(check_skew_duality(
            &gradient_matrix(mesh),
            &divergence_matrix(mesh),
        ));
        out.extend(check_flow_map(mesh, &physics, seed)?);
    }
    for sigma in [0.0, 1.0] {
        out.push(check_gradient(sigma, seed)?);
    }
    Ok(out)
}
