//! Test-only brute-force oracles: pointwise basis evaluation and composite
//! Gauss–Legendre quadrature aligned with element boundaries.

use crate::fe::PeriodicMesh;

const GAUSS4: [(f64, f64); 4] = [
    (-0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
    (-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    (0.861_136_311_594_052_6, 0.347_854_845_137_453_9),
];

fn element_of(mesh: &PeriodicMesh, x: f64) -> (usize, f64) {
    let h = mesh.element_size();
    let m = mesh.num_elements();
    let e = ((x / h).floor() as isize).rem_euclid(m as isize) as usize;
    (e, x / h - (x / h).floor())
}

/// ∫₀³ f, four Gauss points on each of `sub` sub-intervals per element.
pub fn integrate_sub(mesh: &PeriodicMesh, sub: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = mesh.element_size() / sub as f64;
    let mut acc = 0.0;
    for cell in 0..mesh.num_elements() * sub {
        let mid = (cell as f64 + 0.5) * h;
        for (xi, w) in GAUSS4 {
            acc += w * 0.5 * h * f(mid + 0.5 * h * xi);
        }
    }
    acc
}

pub fn integrate(mesh: &PeriodicMesh, f: impl Fn(f64) -> f64) -> f64 {
    integrate_sub(mesh, 1, f)
}

pub fn hat(mesh: &PeriodicMesh, j: usize, x: f64) -> f64 {
    let (e, t) = element_of(mesh, x);
    let m = mesh.num_elements();
    let mut v = 0.0;
    if e == j {
        v += 1.0 - t;
    }
    if (e + 1) % m == j {
        v += t;
    }
    v
}

pub fn hat_dx(mesh: &PeriodicMesh, j: usize, x: f64) -> f64 {
    let (e, _) = element_of(mesh, x);
    let m = mesh.num_elements();
    let h = mesh.element_size();
    let mut v = 0.0;
    if e == j {
        v -= 1.0 / h;
    }
    if (e + 1) % m == j {
        v += 1.0 / h;
    }
    v
}

pub fn indicator(mesh: &PeriodicMesh, e: usize, x: f64) -> f64 {
    if element_of(mesh, x).0 == e {
        1.0
    } else {
        0.0
    }
}

pub fn eval_p1(mesh: &PeriodicMesh, values: &[f64], x: f64) -> f64 {
    (0..values.len()).map(|j| values[j] * hat(mesh, j, x)).sum()
}

pub fn eval_p0(mesh: &PeriodicMesh, values: &[f64], x: f64) -> f64 {
    values[element_of(mesh, x).0]
}
