//! Exact reference answers for small instances.
//!
//! [`enumerate_optimal`] walks every partition of the modules into at most
//! `k` blocks, as restricted-growth strings in lexicographic order, and
//! evaluates the discrete objective on each. [`mc_prescale_check`] samples
//! prescale decisions to check the analytic expectations used by the cost
//! models.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{check_scheme, cost_s, cost_t, StorageConfig};
use crate::error::{Error, Result};
use crate::model::{Dataset, EventLineIncidence, LineCatalog, Scheme};

/// Discrete objective minimized by the oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Objective {
    /// Read cost.
    T,
    /// Storage.
    S,
    /// `T + weight · S`.
    Weighted(f64),
}

impl Objective {
    pub fn evaluate(&self, dataset: &Dataset, scheme: &Scheme, storage: &StorageConfig) -> Result<f64> {
        let t = || cost_t(dataset.incidence(), dataset.catalog(), scheme).map(|c| c.total);
        let s = || {
            cost_s(dataset.incidence(), dataset.catalog(), scheme, storage).map(|c| c.total)
        };
        Ok(match *self {
            Objective::T => t()?,
            Objective::S => s()?,
            Objective::Weighted(w) => t()? + w * s()?,
        })
    }
}

/// Size guards for exhaustive enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleLimits {
    pub max_modules: usize,
    pub max_streams: usize,
    pub max_evaluations: u128,
}

impl Default for OracleLimits {
    fn default() -> Self {
        Self {
            max_modules: 12,
            max_streams: 4,
            max_evaluations: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub best_scheme: Scheme,
    pub best_cost: f64,
    pub n_evaluated: u128,
    /// Best `top_k` schemes in increasing cost order, when requested.
    pub ranked_tail: Option<Vec<(Scheme, f64)>>,
}

/// Number of partitions of `n` items into at most `k` nonempty blocks.
pub fn count_partitions(n: usize, k: usize) -> u128 {
    if n == 0 {
        return 1;
    }
    // Stirling numbers of the second kind, row by row.
    let k = k.min(n);
    let mut row = vec![0u128; k + 1];
    row[0] = 1;
    for _ in 0..n {
        for j in (1..=k).rev() {
            row[j] = j as u128 * row[j] + row[j - 1];
        }
        row[0] = 0;
    }
    row.iter().sum()
}

/// Restricted-growth strings of length `n` with values below `k`, in
/// lexicographic order. Each string is the canonical labelling of one set
/// partition into at most `k` blocks.
#[derive(Debug, Clone)]
pub struct RestrictedGrowth {
    digits: Vec<usize>,
    /// `prefix_max[i]` = max of `digits[..i]`, with `prefix_max[0] = 0`.
    prefix_max: Vec<usize>,
    k: usize,
    started: bool,
    done: bool,
}

impl RestrictedGrowth {
    pub fn new(n: usize, k: usize) -> Self {
        Self {
            digits: vec![0; n],
            prefix_max: vec![0; n + 1],
            k: k.max(1),
            started: false,
            done: false,
        }
    }

    /// Advances to the next string; returns false when exhausted.
    pub fn advance(&mut self) -> bool {
        if self.done {
            return false;
        }
        if !self.started {
            self.started = true;
            return true;
        }
        let n = self.digits.len();
        // digits[0] is always 0; scan from the right for an incrementable digit.
        for i in (1..n).rev() {
            let bound = (self.prefix_max[i] + 1).min(self.k - 1);
            if self.digits[i] < bound {
                self.digits[i] += 1;
                self.prefix_max[i + 1] = self.prefix_max[i].max(self.digits[i]);
                for j in i + 1..n {
                    self.digits[j] = 0;
                    self.prefix_max[j + 1] = self.prefix_max[j];
                }
                return true;
            }
        }
        self.done = true;
        false
    }

    pub fn current(&self) -> &[usize] {
        &self.digits
    }
}

impl Iterator for RestrictedGrowth {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        self.advance().then(|| self.digits.clone())
    }
}

#[derive(Debug, PartialEq)]
struct Ranked {
    cost: f64,
    order: u128,
    assignment: Vec<usize>,
}

impl Eq for Ranked {}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then(self.order.cmp(&other.order))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimizes `objective` over every module partition into at most
/// `n_streams` streams.
///
/// Ties go to the lexicographically smallest canonical assignment. The
/// returned scheme keeps `n_streams` streams; blocks are labelled in order of
/// first appearance, so unused trailing streams stay empty.
pub fn enumerate_optimal(
    dataset: &Dataset,
    n_streams: usize,
    objective: Objective,
    storage: &StorageConfig,
    limits: &OracleLimits,
    top_k: Option<usize>,
) -> Result<OracleResult> {
    let n_modules = dataset.catalog().n_modules();
    if n_streams == 0 {
        return Err(Error::InvalidConfig("n_streams must be at least 1".into()));
    }
    if n_modules > limits.max_modules || n_streams > limits.max_streams {
        return Err(Error::Infeasible(format!(
            "exhaustive search limited to {} modules and {} streams, got {} and {}; reduce the instance",
            limits.max_modules, limits.max_streams, n_modules, n_streams
        )));
    }
    let total = count_partitions(n_modules, n_streams);
    if total > limits.max_evaluations {
        return Err(Error::Infeasible(format!(
            "{total} partitions exceed the evaluation cap of {}; reduce the instance",
            limits.max_evaluations
        )));
    }

    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut heap: BinaryHeap<Ranked> = BinaryHeap::new();
    let mut n_evaluated = 0u128;
    let mut strings = RestrictedGrowth::new(n_modules, n_streams);
    while strings.advance() {
        let assignment = strings.current().to_vec();
        let scheme = Scheme::new(n_streams, assignment)?;
        let cost = objective.evaluate(dataset, &scheme, storage)?;
        if best.as_ref().is_none_or(|(_, c)| cost < *c) {
            best = Some((scheme.assignment().to_vec(), cost));
        }
        if let Some(k) = top_k.filter(|&k| k > 0) {
            heap.push(Ranked {
                cost,
                order: n_evaluated,
                assignment: scheme.assignment().to_vec(),
            });
            if heap.len() > k {
                heap.pop();
            }
        }
        n_evaluated += 1;
    }

    let (assignment, best_cost) = best.expect("at least one partition");
    let ranked_tail = top_k.map(|_| {
        heap.into_sorted_vec()
            .into_iter()
            .map(|r| {
                (
                    Scheme::new(n_streams, r.assignment).expect("valid labels"),
                    r.cost,
                )
            })
            .collect()
    });
    Ok(OracleResult {
        best_scheme: Scheme::new(n_streams, assignment)?,
        best_cost,
        n_evaluated,
        ranked_tail,
    })
}

/// Sample means and standard errors of the realized read cost and storage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub n_samples: usize,
    pub mean_t: f64,
    pub stderr_t: f64,
    pub mean_s: f64,
    pub stderr_s: f64,
}

impl McEstimate {
    /// Whether `analytic_t` and `analytic_s` lie within `k` standard errors.
    /// A zero standard error demands agreement to 1e-9 relative.
    pub fn agrees_with(&self, analytic_t: f64, analytic_s: f64, k: f64) -> bool {
        let within = |mean: f64, se: f64, x: f64| {
            (mean - x).abs() <= (k * se).max(1e-9 * x.abs().max(1.0))
        };
        within(self.mean_t, self.stderr_t, analytic_t) && within(self.mean_s, self.stderr_s, analytic_s)
    }
}

#[derive(Default)]
struct Welford {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let delta = x - self.mean;
        self.mean += delta / self.n;
        self.m2 += delta * (x - self.mean);
    }

    fn stderr(&self) -> f64 {
        if self.n < 2.0 {
            return 0.0;
        }
        (self.m2 / (self.n - 1.0) / self.n).sqrt()
    }
}

/// Samples the prescale decision of every `(event, line)` pair `n_samples`
/// times and reports the realized read cost and storage of `scheme`.
pub fn mc_prescale_check(
    incidence: &EventLineIncidence,
    catalog: &LineCatalog,
    scheme: &Scheme,
    n_samples: usize,
    seed: u64,
    storage: &StorageConfig,
) -> Result<McEstimate> {
    if n_samples == 0 {
        return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
    }
    check_scheme(catalog, scheme)?;
    let n_streams = scheme.n_streams();
    let stream_of_line: Vec<usize> = (0..catalog.n_lines())
        .map(|l| scheme.stream_of(catalog.module_of(l).expect("validated catalog")))
        .collect();
    let mut lines_in_stream = vec![0.0; n_streams];
    for (m, c) in catalog.module_line_counts().into_iter().enumerate() {
        lines_in_stream[scheme.stream_of(m)] += c as f64;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t_stats = Welford::default();
    let mut s_stats = Welford::default();
    let mut hit = vec![false; n_streams];
    let mut turbo = vec![0u32; n_streams];
    let mut reco = vec![false; n_streams];
    let mut events_in_stream = vec![0u64; n_streams];

    for _ in 0..n_samples {
        events_in_stream.iter_mut().for_each(|c| *c = 0);
        let mut size = 0.0;
        for row in incidence.rows() {
            for &l in row {
                let l = l as usize;
                let line = catalog.line(l);
                let kept = match line.prescale {
                    p if p >= 1.0 => true,
                    p if p <= 0.0 => false,
                    p => rng.gen_bool(p),
                };
                if kept {
                    let s = stream_of_line[l];
                    hit[s] = true;
                    turbo[s] += u32::from(line.is_turbo);
                    reco[s] |= line.is_persist_reco;
                }
            }
            for s in 0..n_streams {
                if hit[s] {
                    events_in_stream[s] += 1;
                    size += storage.base_kb * f64::from(turbo[s])
                        + if reco[s] { storage.shared_kb } else { 0.0 };
                    hit[s] = false;
                    turbo[s] = 0;
                    reco[s] = false;
                }
            }
        }
        let t: f64 = events_in_stream
            .iter()
            .zip(&lines_in_stream)
            .map(|(&e, &l)| e as f64 * l)
            .sum();
        t_stats.push(t);
        s_stats.push(size);
    }

    Ok(McEstimate {
        n_samples,
        mean_t: t_stats.mean,
        stderr_t: t_stats.stderr(),
        mean_s: s_stats.mean,
        stderr_s: s_stats.stderr(),
    })
}
