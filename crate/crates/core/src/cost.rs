//! Discrete cost models evaluated on hard schemes.
//!
//! The read cost of a stream is `lines in stream × events in stream`: every
//! line is read by its own analysis job and each job scans the whole stream.
//! With prescales the event count becomes an expectation,
//! `Σ_e (1 - Π_{l in s} (1 - passes(e, l) · P_l))`.
//!
//! The storage model charges `base_kb` per passing Turbo line and `shared_kb`
//! once per event and stream when any passing line of the stream persists the
//! full reconstruction. Prescales enter both terms as inclusion probabilities.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EventLineIncidence, LineCatalog, ModuleIncidence, Scheme};
use crate::numeric::{self, CompensatedSum};

/// Read-cost contribution of one stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamCost {
    pub n_units: usize,
    pub n_lines: usize,
    pub expected_events: f64,
    pub contribution: f64,
}

/// Per-stream and total read cost, in event reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub per_stream: Vec<StreamCost>,
    pub total: f64,
}

/// Per-event size constants of the storage model, in kB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageConfig {
    /// Size charged per passing Turbo line.
    pub base_kb: f64,
    /// Size charged once per event and stream for reconstruction persistence.
    pub shared_kb: f64,
}

impl Default for StorageConfig {
    fn default() -> Self {
        Self {
            base_kb: 10.0,
            shared_kb: 50.0,
        }
    }
}

/// Per-stream and total expected storage, in kB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageBreakdown {
    pub per_stream: Vec<f64>,
    pub total: f64,
}

pub(crate) fn check_scheme(catalog: &LineCatalog, scheme: &Scheme) -> Result<()> {
    let n_modules = catalog.n_modules();
    match scheme.n_units() {
        n if n < n_modules => Err(Error::UnassignedModule {
            module: catalog.modules()[n].clone(),
        }),
        n if n > n_modules => Err(Error::DimensionMismatch {
            what: "scheme units vs catalog modules",
            expected: n_modules,
            found: n,
        }),
        _ => Ok(()),
    }
}

/// Stream index of every line under `scheme`.
fn line_streams(catalog: &LineCatalog, scheme: &Scheme) -> Vec<usize> {
    (0..catalog.n_lines())
        .map(|l| {
            let m = catalog
                .module_of(l)
                .unwrap_or_else(|| panic!("line {l} has no module"));
            scheme.stream_of(m)
        })
        .collect()
}

fn lines_per_stream(catalog: &LineCatalog, scheme: &Scheme) -> Vec<usize> {
    let mut n_lines = vec![0; scheme.n_streams()];
    for (m, count) in catalog.module_line_counts().into_iter().enumerate() {
        n_lines[scheme.stream_of(m)] += count;
    }
    n_lines
}

fn assemble(catalog: &LineCatalog, scheme: &Scheme, events: Vec<CompensatedSum>) -> CostBreakdown {
    let n_lines = lines_per_stream(catalog, scheme);
    let n_units = scheme.stream_sizes();
    let per_stream: Vec<StreamCost> = events
        .iter()
        .enumerate()
        .map(|(s, acc)| {
            let expected_events = acc.value();
            StreamCost {
                n_units: n_units[s],
                n_lines: n_lines[s],
                expected_events,
                contribution: n_lines[s] as f64 * expected_events,
            }
        })
        .collect();
    let total = numeric::sum(&per_stream.iter().map(|c| c.contribution).collect::<Vec<_>>());
    CostBreakdown { per_stream, total }
}

/// Tracks which streams an event touched, so per-event scratch can be reset
/// without clearing the whole buffer.
struct Touched {
    flags: Vec<bool>,
    list: Vec<usize>,
}

impl Touched {
    fn new(n: usize) -> Self {
        Self {
            flags: vec![false; n],
            list: Vec::new(),
        }
    }

    /// Returns true the first time `s` is marked since the last drain.
    #[inline]
    fn mark(&mut self, s: usize) -> bool {
        if self.flags[s] {
            false
        } else {
            self.flags[s] = true;
            self.list.push(s);
            true
        }
    }

    fn drain(&mut self, mut f: impl FnMut(usize)) {
        for &s in &self.list {
            self.flags[s] = false;
            f(s);
        }
        self.list.clear();
    }
}

/// Expected read cost of `scheme` from line-level decisions.
pub fn cost_t(
    incidence: &EventLineIncidence,
    catalog: &LineCatalog,
    scheme: &Scheme,
) -> Result<CostBreakdown> {
    check_scheme(catalog, scheme)?;
    let stream_of_line = line_streams(catalog, scheme);
    let prescales = catalog.prescales();
    let n_streams = scheme.n_streams();

    let mut events = vec![CompensatedSum::new(); n_streams];
    let mut keep = vec![1.0f64; n_streams];
    let mut touched = Touched::new(n_streams);
    for row in incidence.rows() {
        for &l in row {
            let l = l as usize;
            let s = stream_of_line[l];
            if touched.mark(s) {
                keep[s] = 1.0;
            }
            keep[s] *= 1.0 - prescales[l];
        }
        touched.drain(|s| events[s].add(1.0 - keep[s]));
    }
    Ok(assemble(catalog, scheme, events))
}

/// Expected read cost of `scheme` from folded module probabilities.
///
/// Agrees with [`cost_t`] up to rounding; cheaper when modules hold many
/// lines.
pub fn cost_t_folded(
    modules: &ModuleIncidence,
    catalog: &LineCatalog,
    scheme: &Scheme,
) -> Result<CostBreakdown> {
    check_scheme(catalog, scheme)?;
    if modules.n_modules() != catalog.n_modules() {
        return Err(Error::DimensionMismatch {
            what: "module incidence vs catalog modules",
            expected: catalog.n_modules(),
            found: modules.n_modules(),
        });
    }
    let n_streams = scheme.n_streams();
    let mut events = vec![CompensatedSum::new(); n_streams];
    let mut keep = vec![1.0f64; n_streams];
    let mut touched = Touched::new(n_streams);
    modules.for_each_row(|_, row| {
        for &(m, p) in row {
            let s = scheme.stream_of(m as usize);
            if touched.mark(s) {
                keep[s] = 1.0;
            }
            keep[s] *= 1.0 - p;
        }
        touched.drain(|s| events[s].add(1.0 - keep[s]));
    });
    Ok(assemble(catalog, scheme, events))
}

/// Expected storage of `scheme`.
pub fn cost_s(
    incidence: &EventLineIncidence,
    catalog: &LineCatalog,
    scheme: &Scheme,
    config: &StorageConfig,
) -> Result<StorageBreakdown> {
    check_scheme(catalog, scheme)?;
    let stream_of_line = line_streams(catalog, scheme);
    let n_streams = scheme.n_streams();

    let mut sizes = vec![CompensatedSum::new(); n_streams];
    let mut turbo = vec![0.0f64; n_streams];
    let mut no_reco = vec![1.0f64; n_streams];
    let mut touched = Touched::new(n_streams);
    for row in incidence.rows() {
        for &l in row {
            let l = l as usize;
            let line = catalog.line(l);
            let s = stream_of_line[l];
            if touched.mark(s) {
                turbo[s] = 0.0;
                no_reco[s] = 1.0;
            }
            if line.is_turbo {
                turbo[s] += line.prescale;
            }
            if line.is_persist_reco {
                no_reco[s] *= 1.0 - line.prescale;
            }
        }
        touched.drain(|s| {
            sizes[s].add(config.base_kb * turbo[s] + config.shared_kb * (1.0 - no_reco[s]))
        });
    }
    let per_stream: Vec<f64> = sizes.iter().map(CompensatedSum::value).collect();
    let total = numeric::sum(&per_stream);
    Ok(StorageBreakdown { per_stream, total })
}

/// The single-stream scheme and the one-stream-per-module scheme.
pub fn extreme_schemes(catalog: &LineCatalog) -> (Scheme, Scheme) {
    let n = catalog.n_modules();
    (Scheme::single_stream(n), Scheme::per_unit(n))
}
