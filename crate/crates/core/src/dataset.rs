//! Randomized training data: oscillatory pressure initial conditions run
//! natively on the fine mesh and on the coarse mesh (then prolonged).
//!
//! Binary layout (all little-endian):
//!
//! ```text
//! "SWE1" | version: u32
//! M_c, M_f, N, count: u32 | τ, f, g: f64 | seed: u64
//! count × { α, β, pos: f64 | k: u32 | x_c: N·3M_f f64 | x_f: N·3M_f f64 }
//! ```

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::codec::{read_file, write_file, Reader, Writer};
use crate::dynamics::{energy_drift, PhysicsParams, State, SystemFactorization, Trajectory};
use crate::error::{Error, Result};
use crate::fe::{interpolate_p0, FieldP1, PeriodicMesh};
use crate::rng::{stream_rng, Stream};
use crate::transfer::{prolong_trajectory, MeshPair};

pub const DATASET_MAGIC: &[u8; 4] = b"SWE1";
pub const DATASET_VERSION: u32 = 1;

/// Fraction of samples, in generation order, used for training.
pub const TRAIN_FRACTION: f64 = 0.7;

/// Tolerance of the generation-time conservation check.
pub const DRIFT_TOLERANCE: f64 = 1e-10;

/// Parameters of one initial pressure profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleParams {
    pub alpha: f64,
    pub beta: f64,
    pub pos: f64,
    pub k: u32,
}

/// α ~ U[½, 2], β ~ N(100, 6), pos ~ U[1, 2], k ~ U{4, …, 10}.
pub fn sample_params(rng: &mut impl Rng) -> SampleParams {
    let beta = Normal::new(100.0, 6.0).expect("valid normal");
    SampleParams {
        alpha: rng.random_range(0.5..=2.0),
        beta: beta.sample(rng),
        pos: rng.random_range(1.0..=2.0),
        k: rng.random_range(4..=10),
    }
}

/// `α (exp(−β (x − pos)²) + sin(2πk (x − pos)) / 10)`.
pub fn initial_pressure(params: &SampleParams, x: f64) -> f64 {
    let s = x - params.pos;
    params.alpha * ((-params.beta * s * s).exp() + 0.1 * (2.0 * PI * params.k as f64 * s).sin())
}

/// Zero velocity, pressure interpolated at element midpoints.
pub fn initial_state(params: &SampleParams, mesh: &PeriodicMesh) -> State {
    State::new(
        mesh,
        FieldP1::zeros(mesh),
        FieldP1::zeros(mesh),
        interpolate_p0(|x| initial_pressure(params, x), mesh),
    )
    .expect("fields built on mesh")
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub coarse_elems: usize,
    pub fine_elems: usize,
    /// Stored time levels per trajectory, initial condition included.
    pub levels: usize,
    pub physics: PhysicsParams,
    pub count: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            coarse_elems: 75,
            fine_elems: 300,
            levels: 10,
            physics: PhysicsParams::default(),
            count: 1000,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn mesh_pair(&self) -> Result<MeshPair> {
        MeshPair::new(
            PeriodicMesh::new(self.coarse_elems)?,
            PeriodicMesh::new(self.fine_elems)?,
        )
    }

    pub fn fine_mesh(&self) -> Result<PeriodicMesh> {
        PeriodicMesh::new(self.fine_elems)
    }

    /// State dimension `D = 3 M_f`.
    pub fn dim(&self) -> usize {
        3 * self.fine_elems
    }

    pub fn train_count(&self) -> usize {
        ((self.count as f64) * TRAIN_FRACTION).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("dataset count must be at least 1".into()));
        }
        if self.levels == 0 {
            return Err(Error::Config("trajectories need at least one level".into()));
        }
        self.physics.validate()?;
        self.mesh_pair().map(|_| ())
    }
}

/// One training sample: prolonged coarse run and native fine run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPair {
    pub x_c: Trajectory,
    pub x_f: Trajectory,
    pub params: SampleParams,
}

/// Reusable factorizations for generating many pairs on one mesh pair.
pub struct PairGenerator {
    pair: MeshPair,
    coarse: SystemFactorization,
    fine: SystemFactorization,
    n_steps: usize,
}

impl PairGenerator {
    pub fn new(pair: &MeshPair, n_steps: usize, physics: &PhysicsParams) -> Result<Self> {
        Ok(Self {
            pair: *pair,
            coarse: SystemFactorization::new(pair.coarse(), physics)?,
            fine: SystemFactorization::new(pair.fine(), physics)?,
            n_steps,
        })
    }

    pub fn generate(&self, params: &SampleParams) -> Result<TrajectoryPair> {
        let g = self.fine.params().gravity;
        let coarse_run = self
            .coarse
            .simulate(&initial_state(params, self.pair.coarse()), self.n_steps)?;
        let x_f = self
            .fine
            .simulate(&initial_state(params, self.pair.fine()), self.n_steps)?;
        for (name, traj) in [("coarse", &coarse_run), ("fine", &x_f)] {
            let drift = energy_drift(traj, g);
            if drift > DRIFT_TOLERANCE {
                return Err(Error::Invariant(format!(
                    "{name} run drifted by {drift:e} for {params:?}"
                )));
            }
        }
        Ok(TrajectoryPair {
            x_c: prolong_trajectory(&coarse_run, &self.pair)?,
            x_f,
            params: *params,
        })
    }
}

pub fn generate_pair(
    params: &SampleParams,
    pair: &MeshPair,
    n_steps: usize,
    physics: &PhysicsParams,
) -> Result<TrajectoryPair> {
    PairGenerator::new(pair, n_steps, physics)?.generate(params)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub pairs: Vec<TrajectoryPair>,
}

/// Generates `config.count` pairs. Sample `i` draws from its own stream, so
/// the result does not depend on the number of worker threads.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let generator = PairGenerator::new(&config.mesh_pair()?, config.levels - 1, &config.physics)?;
    let pairs = (0..config.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(config.seed, Stream::Data, i as u64);
            generator.generate(&sample_params(&mut rng))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        config: config.clone(),
        pairs,
    })
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Config(format!("{what} = {v} does not fit in u32")))
}

impl Dataset {
    pub fn train(&self) -> &[TrajectoryPair] {
        &self.pairs[..self.config.train_count()]
    }

    pub fn validation(&self) -> &[TrajectoryPair] {
        &self.pairs[self.config.train_count()..]
    }

    /// Largest relative energy drift over every stored trajectory.
    pub fn max_energy_drift(&self) -> f64 {
        let g = self.config.physics.gravity;
        self.pairs
            .iter()
            .flat_map(|p| [energy_drift(&p.x_c, g), energy_drift(&p.x_f, g)])
            .fold(0.0, f64::max)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let c = &self.config;
        let mut w = Writer::default();
        w.bytes(DATASET_MAGIC);
        w.u32(DATASET_VERSION);
        w.u32(to_u32(c.coarse_elems, "coarse_elems")?);
        w.u32(to_u32(c.fine_elems, "fine_elems")?);
        w.u32(to_u32(c.levels, "levels")?);
        w.u32(to_u32(self.pairs.len(), "count")?);
        w.f64(c.physics.time_step);
        w.f64(c.physics.coriolis);
        w.f64(c.physics.gravity);
        w.u64(c.seed);
        for pair in &self.pairs {
            w.f64(pair.params.alpha);
            w.f64(pair.params.beta);
            w.f64(pair.params.pos);
            w.u32(pair.params.k);
            w.f64s(pair.x_c.as_slice());
            w.f64s(pair.x_f.as_slice());
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        r.magic(DATASET_MAGIC)?;
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(r.error(format!("unsupported dataset version {version}")));
        }
        let coarse_elems = r.u32()? as usize;
        let fine_elems = r.u32()? as usize;
        let levels = r.u32()? as usize;
        let count = r.u32()? as usize;
        let time_step = r.f64()?;
        let coriolis = r.f64()?;
        let gravity = r.f64()?;
        let seed = r.u64()?;
        let config = DatasetConfig {
            coarse_elems,
            fine_elems,
            levels,
            physics: PhysicsParams {
                coriolis,
                gravity,
                time_step,
            },
            count,
            seed,
        };
        config.validate().map_err(|e| r.error(e.to_string()))?;
        let fine = config.fine_mesh()?;
        let n = levels * config.dim();
        let mut pairs = Vec::with_capacity(count);
        for _ in 0..count {
            let params = SampleParams {
                alpha: r.f64()?,
                beta: r.f64()?,
                pos: r.f64()?,
                k: r.u32()?,
            };
            let x_c = Trajectory::from_rows(&fine, levels, r.f64s(n)?)?;
            let x_f = Trajectory::from_rows(&fine, levels, r.f64s(n)?)?;
            pairs.push(TrajectoryPair { x_c, x_f, params });
        }
        r.finish()?;
        Ok(Self { config, pairs })
    }

    pub fn manifest(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").unwrap();
        kv(
            "format",
            String::from_utf8_lossy(DATASET_MAGIC).into_owned(),
        );
        kv("version", DATASET_VERSION.to_string());
        kv("coarse_elems", c.coarse_elems.to_string());
        kv("fine_elems", c.fine_elems.to_string());
        kv("levels", c.levels.to_string());
        kv("dim", c.dim().to_string());
        kv("count", c.count.to_string());
        kv("train_count", c.train_count().to_string());
        kv("validation_count", (c.count - c.train_count()).to_string());
        kv("time_step", c.physics.time_step.to_string());
        kv("coriolis", c.physics.coriolis.to_string());
        kv("gravity", c.physics.gravity.to_string());
        kv("seed", c.seed.to_string());
        s
    }

    /// Writes the binary file and a `<path>.manifest` sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes()?)?;
        write_file(&manifest_path(path), self.manifest().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}
