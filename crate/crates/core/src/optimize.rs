//! Multi-restart gradient descent on the relaxed loss.
//!
//! Each restart draws logits from `Normal(0, init_scale)` and runs AdaMax.
//! The objective starts as the surrogate of [`crate::relax`] and blends in the
//! rounding gap over `rounding_ramp_iters` iterations, so that it ends at the
//! expected cost of placing every module independently by its row. That
//! objective is linear in each row, which drives the probabilities to a hard
//! assignment; the surrogate alone settles on fractional rows when modules
//! are few. The final probabilities are rounded by argmax.
//!
//! Restarts are ranked by the discrete read cost of their rounded scheme, not
//! by the relaxed loss, since the two differ away from integer assignments.

use log::{debug, warn};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cost::{cost_s, cost_t_folded, CostBreakdown, StorageBreakdown, StorageConfig};
use crate::error::{Error, Result};
use crate::model::{Dataset, LineCatalog, ModuleIncidence, Scheme};
use crate::relax::{RelaxedObjective, SoftAssignment};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub n_streams: usize,
    pub n_restarts: usize,
    pub max_iters: usize,
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Stop when the relative loss improvement over `plateau_window`
    /// iterations drops below this.
    pub plateau_tol: f64,
    pub plateau_window: usize,
    /// Standard deviation of the initial logits.
    pub init_scale: f64,
    /// Iterations over which the objective moves from the surrogate to the
    /// expected placement cost; 0 optimizes the surrogate alone.
    pub rounding_ramp_iters: usize,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            n_streams: 2,
            n_restarts: 20,
            max_iters: 5000,
            step_size: 0.002,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            plateau_tol: 1e-7,
            plateau_window: 100,
            init_scale: 0.1,
            rounding_ramp_iters: 500,
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn with_streams(mut self, n_streams: usize) -> Self {
        self.n_streams = n_streams;
        self
    }

    pub fn with_restarts(mut self, n_restarts: usize) -> Self {
        self.n_restarts = n_restarts;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.n_streams < 1 {
            return fail("n_streams must be at least 1");
        }
        if self.n_restarts < 1 {
            return fail("n_restarts must be at least 1");
        }
        if self.max_iters < 1 {
            return fail("max_iters must be at least 1");
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return fail("step_size must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) || !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return fail("beta1 and beta2 must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return fail("epsilon must be positive");
        }
        if !(self.plateau_tol > 0.0) || self.plateau_window < 1 {
            return fail("plateau_tol must be positive and plateau_window at least 1");
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return fail("init_scale must be positive");
        }
        Ok(())
    }
}

/// A first-order update applied in place to a flat parameter vector.
pub trait UpdateRule {
    fn step(&mut self, params: &mut [f64], grad: &[f64]);
}

/// Adam variant with an infinity-norm second moment.
#[derive(Debug, Clone)]
pub struct AdaMax {
    step_size: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    beta1_power: f64,
    moment: Vec<f64>,
    inf_norm: Vec<f64>,
}

impl AdaMax {
    pub fn new(n_params: usize, step_size: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            step_size,
            beta1,
            beta2,
            epsilon,
            beta1_power: 1.0,
            moment: vec![0.0; n_params],
            inf_norm: vec![0.0; n_params],
        }
    }

    pub fn from_config(n_params: usize, config: &OptimizerConfig) -> Self {
        Self::new(
            n_params,
            config.step_size,
            config.beta1,
            config.beta2,
            config.epsilon,
        )
    }
}

impl UpdateRule for AdaMax {
    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.beta1_power *= self.beta1;
        let rate = self.step_size / (1.0 - self.beta1_power);
        for ((p, &g), (m, u)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.moment.iter_mut().zip(self.inf_norm.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *u = (self.beta2 * *u).max(g.abs());
            *p -= rate * *m / (*u + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RestartStatus {
    /// Relative improvement fell below the plateau tolerance.
    Converged,
    /// Iteration budget exhausted.
    MaxIters,
    /// Loss or gradient became non-finite; the restart is discarded.
    NonFinite,
    /// Nothing to optimize (single stream).
    Trivial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub status: RestartStatus,
    pub iterations: usize,
    pub final_relaxed_loss: f64,
    /// Expected placement cost minus surrogate at the final probabilities.
    pub final_rounding_gap: f64,
    /// Discrete read cost of the rounded scheme; `None` for discarded restarts.
    pub rounded_cost: Option<f64>,
    pub max_row_entropy: f64,
    pub empty_streams: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub best_scheme: Scheme,
    pub best_restart: usize,
    pub best_loss_relaxed: f64,
    pub best_cost_discrete: CostBreakdown,
    pub per_restart: Vec<RestartSummary>,
    pub seed: u64,
}

impl OptimizationResult {
    /// Running minimum of the rounded cost as restarts accumulate.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.per_restart
            .iter()
            .map(|r| {
                if let Some(c) = r.rounded_cost {
                    best = best.min(c);
                }
                best
            })
            .collect()
    }
}

/// Argmax per unit; ties go to the lowest stream index.
pub fn round_assignment(soft: &SoftAssignment) -> Scheme {
    round_probabilities(soft.probs())
}

fn round_probabilities(probs: &Array2<f64>) -> Scheme {
    let assignment = probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (s, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = s;
                }
            }
            best
        })
        .collect();
    Scheme::new(probs.ncols(), assignment).expect("argmax is in range")
}

struct Descent {
    soft: SoftAssignment,
    relaxed_loss: f64,
    rounding_gap: f64,
    iterations: usize,
    status: RestartStatus,
}

/// Runs a single restart from the given initial logits.
///
/// The objective starts as the surrogate and blends in the rounding gap
/// linearly over `rounding_ramp_iters` iterations, ending at the expected
/// placement cost. The plateau test starts once the blend is complete.
fn descend(objective: &RelaxedObjective, mut logits: Array2<f64>, config: &OptimizerConfig) -> Descent {
    let mut rule = AdaMax::from_config(logits.len(), config);
    let window = config.plateau_window;
    let mut history: Vec<f64> = Vec::new();
    let mut last: Option<(SoftAssignment, f64, f64)> = None;

    for iter in 0..config.max_iters {
        let gap_weight = match config.rounding_ramp_iters {
            0 => 0.0,
            ramp => ((iter + 1) as f64 / ramp as f64).min(1.0),
        };
        let soft = match SoftAssignment::from_logits(logits.clone()) {
            Ok(soft) => soft,
            Err(_) => {
                return Descent {
                    soft: SoftAssignment::uniform(logits.nrows(), logits.ncols()),
                    relaxed_loss: f64::NAN,
                    rounding_gap: f64::NAN,
                    iterations: iter,
                    status: RestartStatus::NonFinite,
                }
            }
        };
        let (loss, gap, grad) = objective
            .blended_loss_and_gradient(&soft, gap_weight)
            .expect("dimensions fixed by construction");
        let value = loss.value + gap_weight * gap;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Descent {
                soft,
                relaxed_loss: f64::NAN,
                rounding_gap: f64::NAN,
                iterations: iter + 1,
                status: RestartStatus::NonFinite,
            };
        }
        last = Some((soft, loss.value, gap));

        if config.rounding_ramp_iters == 0 || gap_weight == 1.0 {
            history.push(value);
        }
        if history.len() > window {
            let before = history[history.len() - 1 - window];
            let improvement = (before - value) / before.abs().max(f64::MIN_POSITIVE);
            if improvement < config.plateau_tol {
                let (soft, relaxed_loss, rounding_gap) = last.expect("set above");
                return Descent {
                    soft,
                    relaxed_loss,
                    rounding_gap,
                    iterations: iter + 1,
                    status: RestartStatus::Converged,
                };
            }
        }

        let grad = grad.as_standard_layout();
        rule.step(
            logits.as_slice_mut().expect("owned standard layout"),
            grad.as_slice().expect("standard layout"),
        );
    }

    let (soft, relaxed_loss, rounding_gap) = last.expect("max_iters >= 1");
    Descent {
        soft,
        relaxed_loss,
        rounding_gap,
        iterations: config.max_iters,
        status: RestartStatus::MaxIters,
    }
}

/// Minimizes the relaxed read cost over `config.n_streams` streams.
pub fn optimize(
    modules: &ModuleIncidence,
    catalog: &LineCatalog,
    config: &OptimizerConfig,
) -> Result<OptimizationResult> {
    config.validate()?;
    let n_units = catalog.n_modules();
    if config.n_streams > n_units {
        return Err(Error::Infeasible(format!(
            "{} streams requested but only {} modules exist",
            config.n_streams, n_units
        )));
    }
    let objective = RelaxedObjective::new(modules, catalog)?;

    if config.n_streams == 1 {
        let scheme = Scheme::single_stream(n_units);
        let cost = cost_t_folded(modules, catalog, &scheme)?;
        return Ok(OptimizationResult {
            best_restart: 0,
            best_loss_relaxed: cost.total,
            per_restart: vec![RestartSummary {
                restart: 0,
                status: RestartStatus::Trivial,
                iterations: 0,
                final_relaxed_loss: cost.total,
                final_rounding_gap: 0.0,
                rounded_cost: Some(cost.total),
                max_row_entropy: 0.0,
                empty_streams: Vec::new(),
            }],
            best_scheme: scheme,
            best_cost_discrete: cost,
            seed: config.seed,
        });
    }

    let normal = Normal::new(0.0, config.init_scale)
        .map_err(|e| Error::InvalidConfig(format!("init_scale: {e}")))?;
    let mut per_restart = Vec::with_capacity(config.n_restarts);
    let mut best: Option<(usize, Scheme, f64, CostBreakdown)> = None;

    for restart in 0..config.n_restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(restart as u64);
        let logits = Array2::from_shape_simple_fn((n_units, config.n_streams), || {
            normal.sample(&mut rng)
        });
        let Descent {
            soft,
            relaxed_loss: relaxed,
            rounding_gap,
            iterations,
            status,
        } = descend(&objective, logits, config);
        let max_row_entropy = soft.max_row_entropy();

        if status == RestartStatus::NonFinite {
            warn!("restart {restart} discarded: non-finite loss after {iterations} iterations");
            per_restart.push(RestartSummary {
                restart,
                status,
                iterations,
                final_relaxed_loss: relaxed,
                final_rounding_gap: rounding_gap,
                rounded_cost: None,
                max_row_entropy,
                empty_streams: Vec::new(),
            });
            continue;
        }

        let scheme = round_assignment(&soft);
        let cost = cost_t_folded(modules, catalog, &scheme)?;
        debug!(
            "restart {restart}: {status:?} after {iterations} iterations, relaxed {relaxed:.6}, rounded {:.6}",
            cost.total
        );
        per_restart.push(RestartSummary {
            restart,
            status,
            iterations,
            final_relaxed_loss: relaxed,
            final_rounding_gap: rounding_gap,
            rounded_cost: Some(cost.total),
            max_row_entropy,
            empty_streams: scheme.empty_streams(),
        });
        if best.as_ref().is_none_or(|b| cost.total < b.3.total) {
            best = Some((restart, scheme, relaxed, cost));
        }
    }

    let (best_restart, best_scheme, best_loss_relaxed, best_cost_discrete) =
        best.ok_or(Error::AllRestartsFailed(config.n_restarts))?;
    Ok(OptimizationResult {
        best_scheme,
        best_restart,
        best_loss_relaxed,
        best_cost_discrete,
        per_restart,
        seed: config.seed,
    })
}

/// One point of a stream-count sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_streams: usize,
    pub result: OptimizationResult,
    pub storage: StorageBreakdown,
}

/// Optimizes once per requested stream count and evaluates the storage of
/// each best scheme.
pub fn sweep_streams(
    dataset: &Dataset,
    stream_counts: &[usize],
    config: &OptimizerConfig,
    storage: &StorageConfig,
) -> Result<Vec<SweepPoint>> {
    stream_counts
        .iter()
        .map(|&n_streams| {
            if n_streams == 0 {
                return Err(Error::InvalidConfig("stream counts must be at least 1".into()));
            }
            let cfg = config.clone().with_streams(n_streams);
            let result = optimize(dataset.module_incidence(), dataset.catalog(), &cfg)?;
            let storage = cost_s(
                dataset.incidence(),
                dataset.catalog(),
                &result.best_scheme,
                storage,
            )?;
            Ok(SweepPoint {
                n_streams,
                result,
                storage,
            })
        })
        .collect()
}
