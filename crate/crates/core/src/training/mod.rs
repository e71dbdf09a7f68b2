//! Full-batch training with Adam and per-epoch learning-rate decay.

mod adam;
mod loss;

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use thiserror::Error;

pub use adam::{Adam, AdamConfig};
pub use loss::{
    build_loss, reconstruction_loss, selfrep_loss, selfrep_terms, total_loss, LossBreakdown,
    LossNodes, LossWeights, OmegaKind,
};

use crate::autodiff::{grad_check_with, GradCheckReport, Gradients, NodeId, Tape};
use crate::error::Error;
use crate::model::{build_forward, ForwardState, ModelConfig, ModelParams, ParamId};
use crate::numeric::{Matrix, SeededRng};

/// Stop once the relative improvement of the total loss stays below `tol`
/// for `patience` consecutive epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStop {
    pub patience: usize,
    pub tol: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            patience: 25,
            tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: AdamConfig,
    pub early_stop: Option<EarlyStop>,
    /// Invoke the checkpoint callback every this many epochs (0 = never).
    pub checkpoint_every: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 1000,
            seed: 0,
            optimizer: AdamConfig::default(),
            early_stop: Some(EarlyStop::default()),
            checkpoint_every: 100,
        }
    }
}

/// Loss terms recorded before the update of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// Loss of the returned parameters.
    pub final_loss: LossBreakdown,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub adam_timestep: u64,
    pub wall_time: Duration,
}

impl TrainReport {
    pub fn initial_loss(&self) -> Option<f64> {
        self.history.first().map(|r| r.loss.total)
    }

    /// `epoch,lr,loss_total,loss_recon,loss_selfrep,loss_align` with
    /// shortest round-trip float formatting.
    pub fn write_history_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,lr,loss_total,loss_recon,loss_selfrep,loss_align")?;
        for r in &self.history {
            writeln!(
                out,
                "{},{:?},{:?},{:?},{:?},{:?}",
                r.epoch, r.lr, r.loss.total, r.loss.recon, r.loss.selfrep, r.loss.align
            )?;
        }
        Ok(())
    }

    pub fn history_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_history_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii")
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Invalid(#[from] Error),

    #[error("training diverged at epoch {epoch}: non-finite {term} loss")]
    Diverged {
        epoch: usize,
        term: &'static str,
        /// Parameters of the last epoch with a finite loss.
        last_good: Box<ModelParams>,
        report: Box<TrainReport>,
    },
}

/// Snapshot handed to the checkpoint callback.
pub struct Checkpoint<'a> {
    pub epoch: usize,
    pub params: &'a ModelParams,
    pub history: &'a [EpochRecord],
    pub adam_timestep: u64,
}

fn check_data(views: &[Matrix], config: &ModelConfig) -> Result<usize, Error> {
    config.validate()?;
    if views.len() != config.num_views() {
        return Err(Error::invalid(format!(
            "config has {} views, data has {}",
            config.num_views(),
            views.len()
        )));
    }
    let n = views[0].cols();
    if n == 0 {
        return Err(Error::invalid("dataset has no samples"));
    }
    for (v, x) in views.iter().enumerate() {
        if x.cols() != n {
            return Err(Error::invalid(format!("view {v} has {} samples, view 0 has {n}", x.cols())));
        }
        if x.rows() != config.feature_dims[v] {
            return Err(Error::invalid(format!(
                "view {v} has {} features, config says {}",
                x.rows(),
                config.feature_dims[v]
            )));
        }
    }
    Ok(n)
}

/// Loss and gradients at `params`.
pub fn loss_and_gradients(
    views: &[Matrix],
    params: &ModelParams,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Gradients<ParamId>), Error> {
    let mut tape = Tape::new();
    let fwd = build_forward(&mut tape, views, params)?;
    let nodes = build_loss(&mut tape, &fwd, params, weights)?;
    let loss = nodes.breakdown(&tape);
    let grads = tape.backward(nodes.total)?;
    Ok((loss, grads))
}

/// Loss and full forward state at `params`, via the tape.
pub fn evaluate(
    views: &[Matrix],
    params: &ModelParams,
    weights: &LossWeights,
) -> Result<(LossBreakdown, ForwardState), Error> {
    let mut tape = Tape::new();
    let fwd = build_forward(&mut tape, views, params)?;
    let nodes = build_loss(&mut tape, &fwd, params, weights)?;
    Ok((nodes.breakdown(&tape), ForwardState::from_tape(&tape, &fwd)))
}

/// Trains from a LeCun initialization seeded by `options.seed`.
pub fn train(
    views: &[Matrix],
    config: &ModelConfig,
    weights: &LossWeights,
    options: &TrainOptions,
) -> Result<(ModelParams, TrainReport), TrainError> {
    train_with(views, config, weights, options, |_| Ok(()))
}

/// [`train`] with a callback invoked every `checkpoint_every` epochs.
pub fn train_with<F>(
    views: &[Matrix],
    config: &ModelConfig,
    weights: &LossWeights,
    options: &TrainOptions,
    mut on_checkpoint: F,
) -> Result<(ModelParams, TrainReport), TrainError>
where
    F: FnMut(&Checkpoint<'_>) -> Result<(), Error>,
{
    let n = check_data(views, config)?;
    weights.validate()?;
    options.optimizer.validate()?;
    if options.epochs == 0 {
        return Err(Error::invalid("epochs must be >= 1").into());
    }
    let start = Instant::now();
    let mut rng = SeededRng::new(options.seed);
    let mut params = ModelParams::init(config, n, &mut rng)?;
    let mut adam = Adam::new(options.optimizer, &params);
    let mut history: Vec<EpochRecord> = Vec::with_capacity(options.epochs);
    let mut stalled = 0;
    let mut stopped_early = false;
    let mut last_good = params.clone();

    for epoch in 0..options.epochs {
        let lr = options.optimizer.lr_at(epoch);
        let (loss, grads) = loss_and_gradients(views, &params, weights)?;
        if let Some(term) = loss.non_finite_term() {
            let final_loss = history.last().map(|r| r.loss).unwrap_or_default();
            let report = TrainReport {
                epochs_run: history.len(),
                history,
                final_loss,
                stopped_early: false,
                adam_timestep: adam.timestep(),
                wall_time: start.elapsed(),
            };
            return Err(TrainError::Diverged {
                epoch,
                term,
                last_good: Box::new(last_good),
                report: Box::new(report),
            });
        }
        if let Some(prev) = history.last() {
            if let Some(es) = options.early_stop {
                let improvement = (prev.loss.total - loss.total) / prev.loss.total.abs().max(1e-300);
                stalled = if improvement < es.tol { stalled + 1 } else { 0 };
            }
        }
        history.push(EpochRecord { epoch, lr, loss });
        last_good.clone_from(&params);

        adam.step(&mut params, &grads, lr)?;
        params.zero_self_rep_diagonals();
        if !params.self_rep_diagonals_are_zero() {
            return Err(Error::Invariant("diag(C) nonzero after update".into()).into());
        }

        let done = epoch + 1 == options.epochs;
        if options.checkpoint_every > 0 && (epoch + 1) % options.checkpoint_every == 0 && !done {
            on_checkpoint(&Checkpoint {
                epoch: epoch + 1,
                params: &params,
                history: &history,
                adam_timestep: adam.timestep(),
            })?;
        }
        if let Some(es) = options.early_stop {
            if stalled >= es.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (final_loss, _) = evaluate(views, &params, weights)?;
    if let Some(term) = final_loss.non_finite_term() {
        let report = TrainReport {
            epochs_run: history.len(),
            final_loss: history.last().map(|r| r.loss).unwrap_or_default(),
            history,
            stopped_early,
            adam_timestep: adam.timestep(),
            wall_time: start.elapsed(),
        };
        return Err(TrainError::Diverged {
            epoch: report.epochs_run,
            term,
            last_good: Box::new(last_good),
            report: Box::new(report),
        });
    }
    let report = TrainReport {
        epochs_run: history.len(),
        history,
        final_loss,
        stopped_early,
        adam_timestep: adam.timestep(),
        wall_time: start.elapsed(),
    };
    on_checkpoint(&Checkpoint {
        epoch: report.epochs_run,
        params: &params,
        history: &report.history,
        adam_timestep: report.adam_timestep,
    })?;
    Ok((params, report))
}

/// Guard against dividing by a vanishing context norm.
pub const BEST_VIEW_EPS: f64 = 1e-12;

/// View with the smallest normalized self-representation residual
/// `||H_sr - H||_F^2 / max(eps, ||H||_F^2)`; ties go to the lowest index.
pub fn select_best_view(state: &ForwardState) -> usize {
    let mut best = 0;
    let mut best_score = f64::INFINITY;
    for (v, s) in state.views.iter().enumerate() {
        let residual = s.h_sr.sub(&s.h).expect("same shape").frobenius_sq();
        let score = residual / s.h.frobenius_sq().max(BEST_VIEW_EPS);
        if score < best_score {
            best = v;
            best_score = score;
        }
    }
    best
}

/// Random problem used to verify gradients: data, LeCun weights, random
/// biases and a random zero-diagonal `C` per view.
pub fn toy_problem(config: &ModelConfig, num_samples: usize, seed: u64) -> Result<(Vec<Matrix>, ModelParams), Error> {
    let mut rng = SeededRng::new(seed);
    let mut params = ModelParams::init(config, num_samples, &mut rng)?;
    for (id, m) in params.iter_mut() {
        match id {
            ParamId::EncoderBias { .. } | ParamId::DecoderBias { .. } => {
                *m = rng.normal_matrix(m.rows(), m.cols(), 0.3);
            }
            ParamId::SelfRep { .. } => {
                *m = rng.normal_matrix(m.rows(), m.cols(), 0.3);
                m.zero_diagonal();
            }
            _ => {}
        }
    }
    let views = config
        .feature_dims
        .iter()
        .map(|&f| rng.normal_matrix(f, num_samples, 1.0))
        .collect();
    Ok((views, params))
}

/// Central-difference check of the full training loss at `params`.
pub fn grad_check_loss(
    views: &[Matrix],
    params: &ModelParams,
    weights: &LossWeights,
    step: f64,
    corrupt: bool,
) -> Result<GradCheckReport<ParamId>, Error> {
    let config = params.config().clone();
    let n = params.num_samples();
    let build = |tape: &mut Tape<ParamId>, point: &BTreeMap<ParamId, Matrix>| -> Result<NodeId, Error> {
        // Diagonal entries of C are perturbed too; the tape masks them.
        let p = ModelParams::from_map_allow_diagonal(&config, n, point.clone())?;
        let fwd = build_forward(tape, views, &p)?;
        Ok(build_loss(tape, &fwd, &p, weights)?.total)
    };
    grad_check_with(build, params.as_map(), step, |g| {
        if corrupt {
            if let Some(m) = g.get_mut(&ParamId::Attention(0)) {
                let v = m.get(0, 0);
                m.set(0, 0, v + 1.0);
            }
        }
    })
}

#[cfg(test)]
mod tests;
