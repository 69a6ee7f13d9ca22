//! Acceptance suite. Every test prints one `[PASS]`/`[FAIL] criterion N`
//! line straight to stderr so it shows up even when output is captured.
//!
//! Criteria 6 and 7 share one desk-scale σ sweep (four trainings), which
//! takes several minutes on a single core.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use c2f_core::dataset::{initial_state, sample_params};
use c2f_core::rng::{stream_rng, Stream};
use c2f_core::trainer::{batch_loss_grad, total_loss, Example};
use c2f_core::transfer::Prolongation;
use c2f_core::{
    Architecture, MeshPair, ModelParams, NeuralInterpolant, PeriodicMesh, PhysicsParams,
    SystemFactorization, Tensor2, UNetParams,
};
use rand::Rng;
use sha2::{Digest, Sha256};

static SERIAL: Mutex<()> = Mutex::new(());

/// Criteria run one at a time so their runtimes are measured in isolation.
fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, pass: bool, detail: &str) {
    let line = format!(
        "[{}] criterion {n}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    std::io::stderr().write_all(line.as_bytes()).unwrap();
}

fn c2f(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_c2f"))
        .args(args)
        .output()
        .expect("spawn c2f");
    assert!(
        out.status.success(),
        "c2f {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn work_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// `g‖u‖² + g‖v‖² + ‖p‖²` by two-point Gauss quadrature on every element,
/// exact for the piecewise-quadratic integrands.
fn fe_energy(x: &[f64], m: usize, g: f64) -> f64 {
    let h = 3.0 / m as f64;
    let r = 0.5 / 3f64.sqrt();
    let mut e = 0.0;
    for el in 0..m {
        let nx = (el + 1) % m;
        for t in [0.5 - r, 0.5 + r] {
            let u = x[el] * (1.0 - t) + x[nx] * t;
            let v = x[m + el] * (1.0 - t) + x[m + nx] * t;
            e += 0.5 * h * g * (u * u + v * v);
        }
        e += h * x[2 * m + el] * x[2 * m + el];
    }
    e
}

fn random_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn criterion_1_energy_conservation() {
    let _guard = serial();
    let start = Instant::now();
    let physics = PhysicsParams::default();
    let mut worst = 0.0f64;
    for m in [75, 300] {
        let mesh = PeriodicMesh::new(m).unwrap();
        let fact = SystemFactorization::new(&mesh, &physics).unwrap();
        for i in 0..50 {
            let params = sample_params(&mut stream_rng(11, Stream::Verify, i));
            let traj = fact.simulate(&initial_state(&params, &mesh), 100).unwrap();
            let e0 = fe_energy(traj.level(0), m, physics.gravity);
            for n in 1..=100 {
                let e = fe_energy(traj.level(n), m, physics.gravity);
                worst = worst.max((e - e0).abs() / e0);
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-10 && secs < 10.0;
    report(
        1,
        pass,
        &format!("max relative energy drift {worst:.2e} (tol 1e-10) over 2x50 runs x 100 steps in {secs:.1}s (limit 10s)"),
    );
    assert!(pass);
}

#[test]
fn criterion_2_flow_map_fidelity() {
    let _guard = serial();
    let start = Instant::now();
    let mesh = PeriodicMesh::new(300).unwrap();
    let physics = PhysicsParams::default();
    let fact = SystemFactorization::new(&mesh, &physics).unwrap();
    let flow = fact.flow_map().unwrap();
    assert_eq!(flow.dim(), 900);
    let mut rng = stream_rng(12, Stream::Verify, 0);
    let (mut step_err, mut energy_err) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let x = random_vec(900, &mut rng);
        let ax = flow.apply(&x);
        let sx = fact.step_flat(&x).unwrap();
        let norm = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let diff = ax
            .iter()
            .zip(&sx)
            .fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
        step_err = step_err.max(diff / norm);
        let (e0, e1) = (fe_energy(&x, 300, 1.0), fe_energy(&ax, 300, 1.0));
        energy_err = energy_err.max((e1 - e0).abs() / e0);
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = step_err <= 1e-12 && energy_err <= 1e-10 && secs < 30.0;
    report(
        2,
        pass,
        &format!(
            "|Ax - step(x)|/|x| {step_err:.2e} (tol 1e-12), energy {energy_err:.2e} (tol 1e-10), {secs:.1}s (limit 30s)"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_prolongation_exactness() {
    let _guard = serial();
    // Three-point Gauss rule on four sub-intervals of each fine element.
    let nodes = [-(0.6f64.sqrt()), 0.0, 0.6f64.sqrt()];
    let weights = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];
    let (mc, mf) = (75usize, 300usize);
    let pair = MeshPair::new(
        PeriodicMesh::new(mc).unwrap(),
        PeriodicMesh::new(mf).unwrap(),
    )
    .unwrap();
    let (hc, hf) = (3.0 / mc as f64, 3.0 / mf as f64);
    let p1 = |vals: &[f64], h: f64, x: f64| {
        let m = vals.len();
        let e = ((x / h).floor() as usize).min(m - 1);
        let t = x / h - e as f64;
        vals[e] * (1.0 - t) + vals[(e + 1) % m] * t
    };
    let p0 = |vals: &[f64], h: f64, x: f64| vals[((x / h).floor() as usize).min(vals.len() - 1)];
    let l2 = |f: &dyn Fn(f64) -> f64| {
        let mut acc = 0.0;
        for e in 0..mf {
            for sub in 0..4 {
                let a = (e as f64 + sub as f64 / 4.0) * hf;
                let w = hf / 4.0;
                for (xi, wi) in nodes.iter().zip(weights) {
                    let d = f(a + 0.5 * w * (xi + 1.0));
                    acc += 0.5 * w * wi * d * d;
                }
            }
        }
        acc.sqrt()
    };
    let mut rng = stream_rng(13, Stream::Verify, 0);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let c = random_vec(mc, &mut rng);
        let f1 = Prolongation::p1(&pair).apply(&c);
        worst = worst.max(l2(&|x| p1(&c, hc, x) - p1(&f1, hf, x)));
        let f0 = Prolongation::p0(&pair).apply(&c);
        worst = worst.max(l2(&|x| p0(&c, hc, x) - p0(&f0, hf, x)));
    }
    let pass = worst <= 1e-13;
    report(
        3,
        pass,
        &format!("max L2 prolongation error {worst:.2e} (tol 1e-13) over 20 P1 and 20 P0 fields"),
    );
    assert!(pass);
}

#[test]
fn criterion_4_gradient_correctness() {
    let _guard = serial();
    let start = Instant::now();
    let mesh = PeriodicMesh::new(12).unwrap();
    let physics = PhysicsParams::default();
    let g = physics.gravity;
    let flow = std::sync::Arc::new(
        SystemFactorization::new(&mesh, &physics)
            .unwrap()
            .flow_map()
            .unwrap(),
    );
    let arch = Architecture {
        levels: 3,
        length: 12,
        s1: 2,
        s2: 4,
    };
    let mut params = ModelParams::init(arch, 4);
    let mut rng = stream_rng(15, Stream::Verify, 0);
    for t in params.tensors_mut() {
        t.iter_mut()
            .for_each(|v| *v += rng.random_range(-0.05..0.05));
    }
    let mut random = || {
        Tensor2::new(
            3,
            36,
            (0..3 * 36).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    };
    let examples: Vec<Example> = (0..4)
        .map(|_| Example {
            x_c: random(),
            x_f: random(),
        })
        .collect();
    let batch: Vec<&Example> = examples.iter().collect();
    let inputs: Vec<Tensor2> = examples.iter().map(|e| e.x_c.clone()).collect();
    let targets: Vec<Tensor2> = examples.iter().map(|e| e.x_f.clone()).collect();

    let mut worst = 0.0f64;
    for sigma in [0.0, 1.0] {
        let model = NeuralInterpolant::new(params.clone(), flow.clone()).unwrap();
        let (_, grads) = batch_loss_grad(&model, &batch, sigma, g, &mesh).unwrap();
        let loss = |p: &ModelParams| {
            let m = NeuralInterpolant::new(p.clone(), flow.clone()).unwrap();
            let preds: Vec<Tensor2> = inputs.iter().map(|x| m.forward(x).unwrap()).collect();
            total_loss(&preds, &targets, &inputs, sigma, g, &mesh).unwrap()
        };
        let h = 1e-5;
        for (ti, an) in grads.tensors().iter().enumerate() {
            let mut fd = vec![0.0; an.len()];
            for (i, slot) in fd.iter_mut().enumerate() {
                let (mut plus, mut minus) = (params.clone(), params.clone());
                plus.tensors_mut()[ti][i] += h;
                minus.tensors_mut()[ti][i] -= h;
                *slot = (loss(&plus) - loss(&minus)) / (2.0 * h);
            }
            let scale = an.iter().chain(&fd).fold(0.0f64, |a, v| a.max(v.abs()));
            let diff = an
                .iter()
                .zip(&fd)
                .fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
            let rel = if scale > 0.0 { diff / scale } else { diff };
            worst = worst.max(rel);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-5 && secs < 60.0;
    report(
        4,
        pass,
        &format!("worst per-tensor relative gradient error {worst:.2e} (tol 1e-5), sigma in {{0, 1}}, {secs:.1}s (limit 60s)"),
    );
    assert!(pass);
}

#[test]
fn criterion_5_zero_weight_identity() {
    let _guard = serial();
    let mut rng = stream_rng(15, Stream::Verify, 0);
    let mut pass = true;
    for (n, s1, s2, l) in [(10, 20, 80, 300), (10, 80, 640, 300), (3, 2, 4, 12)] {
        let net = UNetParams::zeros(n, s1, s2);
        let data: Vec<f64> = (0..n * l)
            .map(|_| rng.random_range(-1.0..1.0) * 10f64.powi(rng.random_range(-30..30)))
            .collect();
        let x = Tensor2::new(n, l, data).unwrap();
        let y = net.forward(&x).unwrap();
        pass &= y
            .data()
            .iter()
            .zip(x.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
    }
    report(
        5,
        pass,
        "zero-parameter UNet output is bitwise equal to its input",
    );
    assert!(pass);
}

struct Sweep {
    dir: PathBuf,
    data: PathBuf,
    /// `(σ, epoch-1 loss, final loss, model path)`
    runs: Vec<(f64, f64, f64, PathBuf)>,
    seconds: f64,
}

const SIGMAS: [&str; 4] = ["0", "0.1", "1", "10"];

fn loss_column(csv: &str) -> Vec<f64> {
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("epoch,lr,mean_loss,data_term,penalty_term")
    );
    lines
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect()
}

fn sweep() -> &'static Sweep {
    static SWEEP: OnceLock<Sweep> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let start = Instant::now();
        let dir = work_dir("acceptance-sweep");
        let data = dir.join("desk.bin");
        c2f(&["gendata", "--desk-scale", "--seed", "0", "--out", s(&data)]);
        let mut runs = Vec::new();
        for sigma in SIGMAS {
            let model = dir.join(format!("model-{sigma}.bin"));
            let csv = dir.join(format!("loss-{sigma}.csv"));
            c2f(&[
                "train",
                "--desk-scale",
                "--sigma",
                sigma,
                "--seed",
                "0",
                "--data",
                s(&data),
                "--out",
                s(&model),
                "--loss-csv",
                s(&csv),
            ]);
            let losses = loss_column(&std::fs::read_to_string(&csv).unwrap());
            assert_eq!(losses.len(), 100);
            runs.push((
                sigma.parse().unwrap(),
                losses[0],
                *losses.last().unwrap(),
                model,
            ));
        }
        Sweep {
            dir,
            data,
            runs,
            seconds: start.elapsed().as_secs_f64(),
        }
    })
}

#[test]
fn criterion_6_loss_increases_with_sigma() {
    let _guard = serial();
    let sw = sweep();
    let finals: Vec<f64> = sw.runs.iter().map(|r| r.2).collect();
    let increasing = finals.windows(2).all(|w| w[0] < w[1]);
    let (first0, final0) = (sw.runs[0].1, sw.runs[0].2);
    let dropped = final0 * 100.0 <= first0;
    let table: Vec<String> = sw
        .runs
        .iter()
        .map(|r| format!("sigma={}: {:.3e}", r.0, r.2))
        .collect();
    report(
        6,
        increasing && dropped,
        &format!(
            "final losses [{}] strictly increasing: {increasing}; sigma=0 epoch-1 {first0:.3e} -> final {final0:.3e} (ratio {:.0}, need >= 100); desk sweep {:.0}s",
            table.join(", "),
            first0 / final0,
            sw.seconds
        ),
    );
    assert!(
        increasing,
        "final losses not strictly increasing in sigma: {finals:?}"
    );
    assert!(dropped, "sigma=0 loss fell only {first0:e} -> {final0:e}");
}

fn eval_csv(model: &Path, data: &Path, out: &Path) -> Vec<Vec<f64>> {
    c2f(&[
        "eval",
        "--data",
        s(data),
        "--model",
        s(model),
        "--seed",
        "0",
        "--out",
        s(out),
    ]);
    let text = std::fs::read_to_string(out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("batch,time_level,l2sq_error,energy_dev_mean,energy_dev_std")
    );
    lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn criterion_7_validation_protocol() {
    let _guard = serial();
    let sw = sweep();
    let rows0 = eval_csv(&sw.runs[0].3, &sw.data, &sw.dir.join("eval-0.csv"));
    let rows10 = eval_csv(&sw.runs[3].3, &sw.data, &sw.dir.join("eval-10.csv"));
    let shape_ok = [&rows0, &rows10].iter().all(|rows| {
        rows.len() == 30
            && rows.iter().enumerate().all(|(i, r)| {
                r.len() == 5
                    && r[0] == (i / 10) as f64
                    && r[1] == (i % 10) as f64
                    && r[2] >= 0.0
                    && r[4] >= 0.0
            })
    });
    let mean_std = |rows: &[Vec<f64>]| rows.iter().map(|r| r[4]).sum::<f64>() / rows.len() as f64;
    let (std0, std10) = (mean_std(&rows0), mean_std(&rows10));
    let pass = shape_ok && std10 > std0;
    report(
        7,
        pass,
        &format!("3 batches x 10 levels per model: {shape_ok}; mean energy-deviation std sigma=0 {std0:.3e}, sigma=10 {std10:.3e}"),
    );
    assert!(shape_ok);
    assert!(
        std10 > std0,
        "sigma=10 std {std10:e} not above sigma=0 std {std0:e}"
    );
}

fn sha(path: &Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}

#[test]
fn criterion_8_determinism() {
    let _guard = serial();
    let dir = work_dir("acceptance-determinism");
    let p = |name: &str| dir.join(name);

    c2f(&[
        "gendata",
        "--count",
        "4",
        "--seed",
        "7",
        "--out",
        s(&p("a.bin")),
    ]);
    c2f(&[
        "gendata",
        "--count",
        "4",
        "--seed",
        "7",
        "--out",
        s(&p("b.bin")),
    ]);
    let gendata = sha(&p("a.bin")) == sha(&p("b.bin"));

    c2f(&[
        "gendata",
        "--count",
        "60",
        "--seed",
        "3",
        "--out",
        s(&p("d.bin")),
    ]);
    for run in ["1", "2"] {
        c2f(&[
            "train",
            "--threads",
            "1",
            "--desk-scale",
            "--epochs",
            "2",
            "--sigma",
            "1",
            "--seed",
            "5",
            "--data",
            s(&p("d.bin")),
            "--out",
            s(&p(&format!("m{run}.bin"))),
            "--loss-csv",
            s(&p(&format!("l{run}.csv"))),
        ]);
    }
    let train = sha(&p("m1.bin")) == sha(&p("m2.bin")) && sha(&p("l1.csv")) == sha(&p("l2.csv"));

    for run in ["1", "2"] {
        c2f(&[
            "eval",
            "--data",
            s(&p("d.bin")),
            "--model",
            s(&p("m1.bin")),
            "--seed",
            "9",
            "--out",
            s(&p(&format!("e{run}.csv"))),
        ]);
    }
    let eval = sha(&p("e1.csv")) == sha(&p("e2.csv"));
    let pass = gendata && train && eval;
    report(
        8,
        pass,
        &format!(
            "byte-identical reruns: gendata {gendata}, train --threads 1 {train}, eval {eval}"
        ),
    );
    assert!(pass);
}

/// Full-scale run (1000 samples, 300 epochs, s₁=80, s₂=640). Far beyond a
/// single-core budget; run explicitly with `--ignored`. Non-gating: the
/// outcome is only logged.
#[test]
#[ignore]
fn criterion_6_full_scale_logged() {
    let dir = work_dir("acceptance-full-scale");
    let data = dir.join("full.bin");
    let csv = dir.join("loss.csv");
    c2f(&["gendata", "--seed", "0", "--out", s(&data)]);
    c2f(&[
        "train",
        "--sigma",
        "0",
        "--data",
        s(&data),
        "--out",
        s(&dir.join("model.bin")),
        "--loss-csv",
        s(&csv),
    ]);
    let losses = loss_column(&std::fs::read_to_string(&csv).unwrap());
    let last = *losses.last().unwrap();
    let within = (last / 6e-6).log10().abs() <= 1.0;
    report(
        6,
        within,
        &format!("full scale sigma=0 final loss {last:.3e} vs reference 6e-6 (within one order: {within}, non-gating)"),
    );
}
