//! Loss assembly, Adam, the training loop and validation metrics.
//!
//! The data term is the squared error measured in the fine finite-element
//! norm (mass-matrix weighted), summed over time levels and fields. The
//! energy penalty is the time-averaged absolute difference between the
//! output energy and the input's initial energy.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::dataset::{Dataset, TrajectoryPair};
use crate::dynamics::{flat_energy, SystemFactorization, Trajectory};
use crate::error::{check_len, Error, Result};
use crate::fe::{p1_mass_apply, p1_norm_sq, PeriodicMesh};
use crate::nn::{Architecture, ModelParams, NeuralInterpolant, Tape, Tensor2};
use crate::rng::{stream_rng, Stream};

/// Hidden widths of the trained network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Widths {
    /// `s₁ = 8N`, `s₂ = 64N`.
    Full,
    /// `s₁ = 2N`, `s₂ = 8N`.
    Desk,
    Explicit {
        s1: usize,
        s2: usize,
    },
}

impl Widths {
    pub fn architecture(&self, levels: usize, length: usize) -> Architecture {
        match *self {
            Widths::Full => Architecture::full(levels, length),
            Widths::Desk => Architecture::desk(levels, length),
            Widths::Explicit { s1, s2 } => Architecture {
                levels,
                length,
                s1,
                s2,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Energy penalty weight σ.
    pub sigma: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Epochs between learning-rate decays.
    pub decay_period: usize,
    pub decay_factor: f64,
    pub seed: u64,
    pub widths: Widths,
}

impl TrainConfig {
    /// 300 epochs, lr 1e-3 divided by 10 every 30 epochs, batch 16.
    pub fn full(sigma: f64) -> Self {
        Self {
            sigma,
            batch_size: 16,
            epochs: 300,
            learning_rate: 1e-3,
            decay_period: 30,
            decay_factor: 10.0,
            seed: 0,
            widths: Widths::Full,
        }
    }

    /// 100 epochs with a decay every 10 and the reduced widths.
    pub fn desk(sigma: f64) -> Self {
        Self {
            epochs: 100,
            decay_period: 10,
            widths: Widths::Desk,
            ..Self::full(sigma)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma >= 0.0
            && self.sigma.is_finite()
            && self.batch_size > 0
            && self.learning_rate > 0.0
            && self.decay_period > 0
            && self.decay_factor > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid training configuration: {self:?}"
            )))
        }
    }
}

/// `base · factor^(−⌊epoch / period⌋)`.
pub fn lr_schedule(epoch: usize, config: &TrainConfig) -> f64 {
    config.learning_rate
        * config
            .decay_factor
            .powi(-((epoch / config.decay_period) as i32))
}

fn check_shapes(pred: &Tensor2, other: &Tensor2, mesh: &PeriodicMesh) -> Result<()> {
    check_len("state dimension", 3 * mesh.num_elements(), pred.length())?;
    check_len("prediction size", pred.data().len(), other.data().len())?;
    check_len("time levels", pred.channels(), other.channels())
}

/// Squared FE-norm error summed over levels and fields; mass matrices M₁
/// for the velocities and M₀ for the pressure. Not weighted by `g`.
pub fn fe_l2_sq_loss(pred: &Tensor2, target: &Tensor2, mesh: &PeriodicMesh) -> Result<f64> {
    check_shapes(pred, target, mesh)?;
    Ok(level_errors(pred, target, mesh).iter().sum())
}

/// Squared FE-norm error of each time level.
pub fn level_errors(pred: &Tensor2, target: &Tensor2, mesh: &PeriodicMesh) -> Vec<f64> {
    let (m, h) = (mesh.num_elements(), mesh.element_size());
    (0..pred.channels())
        .map(|n| {
            let e: Vec<f64> = pred
                .row(n)
                .iter()
                .zip(target.row(n))
                .map(|(a, b)| a - b)
                .collect();
            p1_norm_sq(&e[..m], h)
                + p1_norm_sq(&e[m..2 * m], h)
                + h * e[2 * m..].iter().map(|x| x * x).sum::<f64>()
        })
        .collect()
}

/// `(1/N) Σ_n |E(pred_n) − E(x_c,0)|`.
pub fn energy_penalty(pred: &Tensor2, x_c: &Tensor2, g: f64, mesh: &PeriodicMesh) -> Result<f64> {
    check_shapes(pred, x_c, mesh)?;
    let e0 = flat_energy(x_c.row(0), g, mesh);
    let n = pred.channels();
    Ok((0..n)
        .map(|k| (flat_energy(pred.row(k), g, mesh) - e0).abs())
        .sum::<f64>()
        / n as f64)
}

/// Loss terms of one sample.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SampleLoss {
    pub data: f64,
    pub penalty: f64,
}

impl SampleLoss {
    pub fn total(&self, sigma: f64) -> f64 {
        self.data + sigma * self.penalty
    }
}

/// Sample loss and `∂(data + σ·penalty)/∂pred`. The derivative of `|·|` at
/// zero is taken as zero.
pub fn sample_loss_grad(
    pred: &Tensor2,
    target: &Tensor2,
    x_c: &Tensor2,
    sigma: f64,
    g: f64,
    mesh: &PeriodicMesh,
) -> Result<(SampleLoss, Tensor2)> {
    check_shapes(pred, target, mesh)?;
    check_shapes(pred, x_c, mesh)?;
    let (m, h) = (mesh.num_elements(), mesh.element_size());
    let levels = pred.channels();
    let e0 = flat_energy(x_c.row(0), g, mesh);
    let mut grad = Tensor2::zeros(levels, 3 * m);
    let mut loss = SampleLoss::default();
    let mut me = vec![0.0; m];
    for n in 0..levels {
        let (p, t) = (pred.row(n), target.row(n));
        let err: Vec<f64> = p.iter().zip(t).map(|(a, b)| a - b).collect();
        let energy = flat_energy(p, g, mesh);
        let dev = energy - e0;
        loss.penalty += dev.abs() / levels as f64;
        let pen = if sigma > 0.0 && dev != 0.0 {
            sigma * dev.signum() / levels as f64
        } else {
            0.0
        };
        let row = grad.row_mut(n);
        for block in 0..2 {
            let r = block * m..(block + 1) * m;
            p1_mass_apply(&err[r.clone()], h, &mut me);
            loss.data += err[r.clone()]
                .iter()
                .zip(&me)
                .map(|(a, b)| a * b)
                .sum::<f64>();
            row[r.clone()]
                .iter_mut()
                .zip(&me)
                .for_each(|(gr, v)| *gr = 2.0 * v);
            if pen != 0.0 {
                p1_mass_apply(&p[r.clone()], h, &mut me);
                row[r]
                    .iter_mut()
                    .zip(&me)
                    .for_each(|(gr, v)| *gr += pen * 2.0 * g * v);
            }
        }
        for i in 2 * m..3 * m {
            loss.data += h * err[i] * err[i];
            row[i] = 2.0 * h * err[i] + pen * 2.0 * h * p[i];
        }
    }
    Ok((loss, grad))
}

/// Batch mean of `fe_l2_sq_loss + σ·energy_penalty`.
pub fn total_loss(
    preds: &[Tensor2],
    targets: &[Tensor2],
    inputs: &[Tensor2],
    sigma: f64,
    g: f64,
    mesh: &PeriodicMesh,
) -> Result<f64> {
    if preds.is_empty() || preds.len() != targets.len() || preds.len() != inputs.len() {
        return Err(Error::Config(
            "batch lists must be non-empty and of equal length".into(),
        ));
    }
    let mut acc = 0.0;
    for ((p, t), x) in preds.iter().zip(targets).zip(inputs) {
        acc += fe_l2_sq_loss(p, t, mesh)? + sigma * energy_penalty(p, x, g, mesh)?;
    }
    Ok(acc / preds.len() as f64)
}

/// One training example already laid out as `N × D` tensors.
#[derive(Debug, Clone)]
pub struct Example {
    pub x_c: Tensor2,
    pub x_f: Tensor2,
}

impl Example {
    pub fn from_pair(pair: &TrajectoryPair) -> Self {
        let to_tensor = |t: &Trajectory| {
            Tensor2::new(t.levels(), t.dim(), t.as_slice().to_vec()).expect("trajectory shape")
        };
        Self {
            x_c: to_tensor(&pair.x_c),
            x_f: to_tensor(&pair.x_f),
        }
    }
}

/// Forward, loss and backward for one example.
pub fn example_loss_grad(
    model: &NeuralInterpolant,
    example: &Example,
    sigma: f64,
    g: f64,
    mesh: &PeriodicMesh,
) -> Result<(SampleLoss, ModelParams)> {
    let mut tape = Tape::default();
    let pred = model.forward_taped(&example.x_c, &mut tape)?;
    let (loss, dy) = sample_loss_grad(&pred, &example.x_f, &example.x_c, sigma, g, mesh)?;
    Ok((loss, model.backward(&tape, &dy)?))
}

/// Mean loss terms and mean gradient over a batch. Gradients are reduced
/// in sample order, so the result does not depend on the thread count.
pub fn batch_loss_grad(
    model: &NeuralInterpolant,
    batch: &[&Example],
    sigma: f64,
    g: f64,
    mesh: &PeriodicMesh,
) -> Result<(SampleLoss, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    let inputs: Vec<Tensor2> = batch.iter().map(|ex| ex.x_c.clone()).collect();
    let (preds, tapes) = model.forward_batch_taped(&inputs)?;
    let mut total = SampleLoss::default();
    let mut dys = Vec::with_capacity(batch.len());
    for (pred, ex) in preds.iter().zip(batch) {
        let (loss, dy) = sample_loss_grad(pred, &ex.x_f, &ex.x_c, sigma, g, mesh)?;
        total.data += loss.data;
        total.penalty += loss.penalty;
        dys.push(dy);
    }
    let mut grads = model.backward_batch(&tapes, &dys)?;
    let inv = 1.0 / batch.len() as f64;
    total.data *= inv;
    total.penalty *= inv;
    grads.scale(inv);
    Ok((total, grads))
}

/// Bias-corrected Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_model(params: &ModelParams) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self::new(&shapes)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update over matching lists of parameter and gradient tensors.
    pub fn update(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>, lr: f64) {
        assert_eq!(params.len(), self.first.len());
        assert_eq!(grads.len(), self.first.len());
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            assert_eq!(p.len(), g.len());
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

pub fn adam_step(params: &mut ModelParams, grads: &ModelParams, state: &mut AdamState, lr: f64) {
    state.update(params.tensors_mut(), grads.tensors(), lr);
}

/// One row of the loss history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean of `data + σ·penalty` over the epoch's samples.
    pub mean_loss: f64,
    pub data_term: f64,
    pub penalty_term: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub sigma: f64,
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    /// Mean training loss of the last epoch.
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |r| r.mean_loss)
    }

    pub fn first_loss(&self) -> f64 {
        self.epochs.first().map_or(f64::NAN, |r| r.mean_loss)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,lr,mean_loss,data_term,penalty_term\n");
        for r in &self.epochs {
            writeln!(
                s,
                "{},{:e},{:e},{:e},{:e}",
                r.epoch, r.lr, r.mean_loss, r.data_term, r.penalty_term
            )
            .unwrap();
        }
        s
    }
}

/// Builds the fine flow map for a dataset.
pub fn dataset_flow(dataset: &Dataset) -> Result<Arc<crate::dynamics::FlowMap>> {
    let mesh = dataset.config.fine_mesh()?;
    Ok(Arc::new(
        SystemFactorization::new(&mesh, &dataset.config.physics)?.flow_map()?,
    ))
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(NeuralInterpolant, TrainReport)> {
    train_with(dataset, config, dataset_flow(dataset)?, |_| {})
}

/// Training loop; `on_epoch` sees every finished epoch.
pub fn train_with(
    dataset: &Dataset,
    config: &TrainConfig,
    flow: Arc<crate::dynamics::FlowMap>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(NeuralInterpolant, TrainReport)> {
    config.validate()?;
    let train_set = dataset.train();
    if train_set.is_empty() {
        return Err(Error::Config("dataset has no training samples".into()));
    }
    let mesh = dataset.config.fine_mesh()?;
    let g = dataset.config.physics.gravity;
    let arch = config
        .widths
        .architecture(dataset.config.levels, dataset.config.fine_elems);
    let mut model = NeuralInterpolant::new(ModelParams::init(arch, config.seed), flow)?;
    let mut adam = AdamState::for_model(&model.params);
    let examples: Vec<Example> = train_set.iter().map(Example::from_pair).collect();

    let mut report = TrainReport {
        sigma: config.sigma,
        epochs: Vec::with_capacity(config.epochs),
    };
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..config.epochs {
        let lr = lr_schedule(epoch, config);
        order.sort_unstable();
        order.shuffle(&mut stream_rng(config.seed, Stream::Shuffle, epoch as u64));
        let (mut data, mut penalty) = (0.0, 0.0);
        for idx in order.chunks(config.batch_size) {
            let batch: Vec<&Example> = idx.iter().map(|&i| &examples[i]).collect();
            let (loss, grads) = batch_loss_grad(&model, &batch, config.sigma, g, &mesh)?;
            data += loss.data * batch.len() as f64;
            penalty += loss.penalty * batch.len() as f64;
            adam_step(&mut model.params, &grads, &mut adam, lr);
        }
        let count = examples.len() as f64;
        let record = EpochRecord {
            epoch,
            lr,
            mean_loss: (data + config.sigma * penalty) / count,
            data_term: data / count,
            penalty_term: penalty / count,
        };
        on_epoch(&record);
        report.epochs.push(record);
    }
    Ok((model, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub batches: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            batches: 3,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// Batch statistics at one time level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub batch: usize,
    pub time_level: usize,
    /// Batch mean of the squared FE-norm error.
    pub l2sq_error: f64,
    /// Mean and sample standard deviation over the batch of
    /// `E(prediction) − E(fine truth)` at this level.
    pub energy_dev_mean: f64,
    pub energy_dev_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("batch,time_level,l2sq_error,energy_dev_mean,energy_dev_std\n");
        for r in &self.records {
            writeln!(
                s,
                "{},{},{:e},{:e},{:e}",
                r.batch, r.time_level, r.l2sq_error, r.energy_dev_mean, r.energy_dev_std
            )
            .unwrap();
        }
        s
    }

    /// Average of `energy_dev_std` over all rows.
    pub fn mean_energy_std(&self) -> f64 {
        self.records.iter().map(|r| r.energy_dev_std).sum::<f64>() / self.records.len() as f64
    }

    pub fn mean_l2sq_error(&self) -> f64 {
        self.records.iter().map(|r| r.l2sq_error).sum::<f64>() / self.records.len() as f64
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-level errors and energy statistics on `config.batches` seeded random
/// batches drawn without replacement from `validation`.
pub fn evaluate(
    model: &NeuralInterpolant,
    validation: &[TrajectoryPair],
    g: f64,
    mesh: &PeriodicMesh,
    config: &EvalConfig,
) -> Result<EvalReport> {
    evaluate_with(validation, g, mesh, config, |x_c| model.forward(x_c))
}

/// [`evaluate`] for an arbitrary predictor.
pub fn evaluate_with(
    validation: &[TrajectoryPair],
    g: f64,
    mesh: &PeriodicMesh,
    config: &EvalConfig,
    predict: impl Fn(&Tensor2) -> Result<Tensor2> + Sync,
) -> Result<EvalReport> {
    if config.batch_size == 0 || validation.len() < config.batch_size {
        return Err(Error::Config(format!(
            "validation set has {} samples, batch size is {}",
            validation.len(),
            config.batch_size
        )));
    }
    let mut records = Vec::new();
    for b in 0..config.batches {
        let mut rng = stream_rng(config.seed, Stream::EvalBatch, b as u64);
        let picks =
            rand::seq::index::sample(&mut rng, validation.len(), config.batch_size).into_vec();
        let results = picks
            .par_iter()
            .map(|&i| {
                let ex = Example::from_pair(&validation[i]);
                let pred = predict(&ex.x_c)?;
                check_shapes(&pred, &ex.x_f, mesh)?;
                let errors = level_errors(&pred, &ex.x_f, mesh);
                let devs: Vec<f64> = (0..pred.channels())
                    .map(|n| {
                        flat_energy(pred.row(n), g, mesh) - flat_energy(ex.x_f.row(n), g, mesh)
                    })
                    .collect();
                Ok((errors, devs))
            })
            .collect::<Result<Vec<_>>>()?;
        let levels = results[0].0.len();
        for n in 0..levels {
            let l2 = results.iter().map(|r| r.0[n]).sum::<f64>() / results.len() as f64;
            let devs: Vec<f64> = results.iter().map(|r| r.1[n]).collect();
            let (mean, std) = mean_std(&devs);
            records.push(EvalRecord {
                batch: b,
                time_level: n,
                l2sq_error: l2,
                energy_dev_mean: mean,
                energy_dev_std: std,
            });
        }
    }
    Ok(EvalReport { records })
}
