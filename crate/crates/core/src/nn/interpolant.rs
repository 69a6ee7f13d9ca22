use std::slice;
use std::sync::Arc;

use rayon::prelude::*;

use super::{ModelParams, Tensor2, UNetParams, UNetTape};
use crate::dynamics::FlowMap;
use crate::error::{Error, Result};

fn apply_per_field(nets: &[UNetParams; 3], x: &Tensor2) -> Result<(Tensor2, Vec<UNetTape>)> {
    let mut outs = Vec::with_capacity(3);
    let mut tapes = Vec::with_capacity(3);
    for (net, field) in nets.iter().zip(x.split_columns(3)) {
        let (y, tape) = net.forward_taped(&field)?;
        outs.push(y);
        tapes.push(tape);
    }
    Ok((Tensor2::concat_columns(&outs), tapes))
}

/// Per-field backward; returns `∂/∂x` and the parameter gradients.
fn backward_per_field(
    nets: &[UNetParams; 3],
    tapes: &[UNetTape],
    dy: &Tensor2,
) -> (Tensor2, [UNetParams; 3]) {
    let mut grads = [
        nets[0].zeros_like(),
        nets[1].zeros_like(),
        nets[2].zeros_like(),
    ];
    let dx: Vec<Tensor2> = dy
        .split_columns(3)
        .iter()
        .enumerate()
        .map(|(i, d)| nets[i].backward(&tapes[i], d, &mut grads[i]))
        .collect();
    (Tensor2::concat_columns(&dx), grads)
}

/// Overwrites row `n ≥ 1` of every sample with `A · row(n − 1)`, so row
/// `n = Aⁿ · row 0`. All samples advance together, one product per level.
fn flow_rows(flow: &FlowMap, zs: &[Tensor2]) -> Vec<Tensor2> {
    let mut ws = zs.to_vec();
    let Some(levels) = ws.first().map(Tensor2::channels) else {
        return ws;
    };
    let d = flow.dim();
    let mut cur: Vec<f64> = ws.iter().flat_map(|w| w.row(0).iter().copied()).collect();
    let mut next = vec![0.0; cur.len()];
    for n in 1..levels {
        flow.apply_rows(&cur, &mut next);
        for (w, src) in ws.iter_mut().zip(next.chunks_exact(d)) {
            w.row_mut(n).copy_from_slice(src);
        }
        std::mem::swap(&mut cur, &mut next);
    }
    ws
}

/// Adjoint of [`flow_rows`]: all sensitivity ends up in row 0. Returns the
/// row-0 sensitivities stacked sample by sample.
fn flow_rows_adjoint(flow: &FlowMap, dws: &[Tensor2]) -> Vec<f64> {
    let Some(levels) = dws.first().map(Tensor2::channels) else {
        return Vec::new();
    };
    let d = flow.dim();
    let mut lambda: Vec<f64> = dws
        .iter()
        .flat_map(|w| w.row(levels - 1).iter().copied())
        .collect();
    let mut tmp = vec![0.0; lambda.len()];
    for n in (1..levels).rev() {
        flow.apply_transpose_rows(&lambda, &mut tmp);
        for ((l, t), dw) in lambda.chunks_exact_mut(d).zip(tmp.chunks_exact(d)).zip(dws) {
            for ((a, b), g) in l.iter_mut().zip(t).zip(dw.row(n - 1)) {
                *a = b + g;
            }
        }
    }
    lambda
}

fn check_flow(params: &[UNetParams; 3], flow: &FlowMap, x: &Tensor2) -> Result<()> {
    if x.length() != flow.dim() {
        return Err(Error::Dimension {
            what: "state dimension vs flow map",
            expected: flow.dim(),
            actual: x.length(),
        });
    }
    if x.channels() != params[0].channels() {
        return Err(Error::Dimension {
            what: "time levels",
            expected: params[0].channels(),
            actual: x.channels(),
        });
    }
    Ok(())
}

/// Propagate row 0 with the fine flow map, then apply the stage-two
/// UNets per field.
pub fn learnflow_forward(params: &[UNetParams; 3], flow: &FlowMap, x: &Tensor2) -> Result<Tensor2> {
    check_flow(params, flow, x)?;
    let w = flow_rows(flow, slice::from_ref(x));
    Ok(apply_per_field(params, &w[0])?.0)
}

/// Intermediate values of one forward pass, consumed by
/// [`NeuralInterpolant::backward`].
#[derive(Debug, Default)]
pub struct Tape {
    recorded: Option<Recorded>,
}

#[derive(Debug)]
struct Recorded {
    stage_one: Vec<UNetTape>,
    stage_two: Vec<UNetTape>,
}

impl Tape {
    pub fn is_recorded(&self) -> bool {
        self.recorded.is_some()
    }
}

fn add_unets(acc: &mut [UNetParams; 3], other: &[UNetParams; 3]) {
    for (a, b) in acc.iter_mut().zip(other) {
        a.add_assign(b);
    }
}

/// `NN(x) = U₁(x) + LearnFlow(U₁(x))` with one shared evaluation of `U₁`.
/// The flow map is frozen: gradients pass through it but it is never
/// updated.
///
/// Batched calls run the UNets of different samples in parallel and give
/// results identical to one-sample calls.
#[derive(Debug, Clone)]
pub struct NeuralInterpolant {
    pub params: ModelParams,
    flow: Arc<FlowMap>,
}

impl NeuralInterpolant {
    pub fn new(params: ModelParams, flow: Arc<FlowMap>) -> Result<Self> {
        params.arch.validate()?;
        if params.arch.dim() != flow.dim() {
            return Err(Error::Dimension {
                what: "model state dimension vs flow map",
                expected: flow.dim(),
                actual: params.arch.dim(),
            });
        }
        Ok(Self { params, flow })
    }

    pub fn flow(&self) -> &Arc<FlowMap> {
        &self.flow
    }

    pub fn forward(&self, x_c: &Tensor2) -> Result<Tensor2> {
        Ok(self.forward_batch(slice::from_ref(x_c))?.remove(0))
    }

    pub fn forward_taped(&self, x_c: &Tensor2, tape: &mut Tape) -> Result<Tensor2> {
        let (mut ys, mut tapes) = self.forward_batch_taped(slice::from_ref(x_c))?;
        *tape = tapes.remove(0);
        Ok(ys.remove(0))
    }

    pub fn forward_batch(&self, xs: &[Tensor2]) -> Result<Vec<Tensor2>> {
        Ok(self.forward_batch_taped(xs)?.0)
    }

    pub fn forward_batch_taped(&self, xs: &[Tensor2]) -> Result<(Vec<Tensor2>, Vec<Tape>)> {
        for x in xs {
            check_flow(&self.params.stage_one, &self.flow, x)?;
        }
        let (zs, one_tapes): (Vec<Tensor2>, Vec<Vec<UNetTape>>) = xs
            .par_iter()
            .map(|x| apply_per_field(&self.params.stage_one, x))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        let ws = flow_rows(&self.flow, &zs);
        let two = ws
            .par_iter()
            .map(|w| apply_per_field(&self.params.stage_two, w))
            .collect::<Result<Vec<_>>>()?;
        let mut ys = Vec::with_capacity(xs.len());
        let mut tapes = Vec::with_capacity(xs.len());
        for (((mut y, stage_two), z), stage_one) in two.into_iter().zip(&zs).zip(one_tapes) {
            y.add_assign(z);
            ys.push(y);
            tapes.push(Tape {
                recorded: Some(Recorded {
                    stage_one,
                    stage_two,
                }),
            });
        }
        Ok((ys, tapes))
    }

    /// Parameter gradients of a scalar loss given `∂loss/∂y` at the output.
    pub fn backward(&self, tape: &Tape, dy: &Tensor2) -> Result<ModelParams> {
        self.backward_batch(slice::from_ref(tape), slice::from_ref(dy))
    }

    /// Sum over samples of the parameter gradients. Per-sample work runs
    /// in parallel; partial gradients are added in sample order.
    pub fn backward_batch(&self, tapes: &[Tape], dys: &[Tensor2]) -> Result<ModelParams> {
        if tapes.len() != dys.len() {
            return Err(Error::Dimension {
                what: "tapes vs output gradients",
                expected: tapes.len(),
                actual: dys.len(),
            });
        }
        let recs = tapes
            .iter()
            .map(|t| {
                t.recorded
                    .as_ref()
                    .ok_or_else(|| Error::Usage("backward called before forward".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let d = self.params.arch.dim();
        for dy in dys {
            if dy.length() != d || dy.channels() != self.params.arch.levels {
                return Err(Error::Dimension {
                    what: "output gradient size",
                    expected: self.params.arch.levels * d,
                    actual: dy.channels() * dy.length(),
                });
            }
        }
        let mut grads = self.params.zeros_like();
        let chunk = rayon::current_num_threads().max(1);
        let idx: Vec<usize> = (0..dys.len()).collect();

        let mut dws = Vec::with_capacity(dys.len());
        for group in idx.chunks(chunk) {
            let parts: Vec<_> = group
                .par_iter()
                .map(|&i| backward_per_field(&self.params.stage_two, &recs[i].stage_two, &dys[i]))
                .collect();
            for (dw, g) in parts {
                add_unets(&mut grads.stage_two, &g);
                dws.push(dw);
            }
        }

        let lambda = flow_rows_adjoint(&self.flow, &dws);
        for group in idx.chunks(chunk) {
            let parts: Vec<_> = group
                .par_iter()
                .map(|&i| {
                    let mut dz = dys[i].clone();
                    dz.row_mut(0)
                        .iter_mut()
                        .zip(&lambda[i * d..(i + 1) * d])
                        .for_each(|(a, b)| *a += b);
                    backward_per_field(&self.params.stage_one, &recs[i].stage_one, &dz).1
                })
                .collect();
            for g in parts {
                add_unets(&mut grads.stage_one, &g);
            }
        }
        Ok(grads)
    }
}
