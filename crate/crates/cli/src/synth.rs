//! Synthetic instances with planted module clusters.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use streamopt::{EventLineIncidence, LineCatalog, LineRecord, Scheme};

use crate::error::{CliError, Result};
use crate::format;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_events: usize,
    pub n_modules: usize,
    /// Inclusive range of lines per module.
    pub lines_per_module: (usize, usize),
    pub n_clusters: usize,
    /// Pass rate of a line on events of its module's cluster.
    pub intra_rate: f64,
    /// Pass rate of a line on events of other clusters.
    pub cross_rate: f64,
    /// Fraction of lines given a prescale below 1.
    pub prescaled_fraction: f64,
    /// Range prescaled lines draw their prescale from.
    pub prescale_range: (f64, f64),
    pub persist_reco_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_events: 10_000,
            n_modules: 20,
            lines_per_module: (1, 4),
            n_clusters: 5,
            intra_rate: 0.3,
            cross_rate: 0.01,
            prescaled_fraction: 0.2,
            prescale_range: (0.1, 1.0),
            persist_reco_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Usage(msg));
        if self.n_events == 0 || self.n_modules == 0 || self.n_clusters == 0 {
            return bad("event, module and cluster counts must be at least 1".into());
        }
        let (lo, hi) = self.lines_per_module;
        if lo == 0 || lo > hi {
            return bad(format!("invalid lines-per-module range {lo}..={hi}"));
        }
        for (name, v) in [
            ("intra-cluster rate", self.intra_rate),
            ("cross-cluster rate", self.cross_rate),
            ("prescaled fraction", self.prescaled_fraction),
            ("persistreco fraction", self.persist_reco_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} is outside [0, 1]"));
            }
        }
        let (plo, phi) = self.prescale_range;
        if !(plo > 0.0 && plo <= phi && phi <= 1.0) {
            return bad(format!("invalid prescale range {plo}..{phi}"));
        }
        Ok(())
    }

    /// Cluster of module `m`.
    pub fn cluster_of(&self, module: usize) -> usize {
        module % self.n_clusters
    }
}

/// Generated lines, per-event passing lines and the planted grouping.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub lines: Vec<LineRecord>,
    /// Passing lines of every generated event; may be empty.
    pub rows: Vec<Vec<usize>>,
    /// Modules grouped by their planted cluster, one stream per cluster.
    pub planted: Scheme,
}

impl Synthetic {
    pub fn catalog(&self) -> LineCatalog {
        LineCatalog::new(self.lines.clone())
    }

    pub fn to_instance_text(&self) -> String {
        format::write_instance(&self.lines, &self.rows)
    }

    pub fn incidence(&self) -> streamopt::Result<EventLineIncidence> {
        EventLineIncidence::from_rows(self.lines.len(), self.rows.iter().cloned()).map(|(inc, _)| inc)
    }
}

pub fn module_name(m: usize) -> String {
    format!("mod{m:03}")
}

/// Draws every event from a uniformly chosen cluster; each line then passes
/// with the intra- or cross-cluster rate.
pub fn generate(spec: &SyntheticSpec) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut lines = Vec::new();
    let mut line_cluster = Vec::new();
    for m in 0..spec.n_modules {
        let n = rng.gen_range(spec.lines_per_module.0..=spec.lines_per_module.1);
        for j in 0..n {
            let prescale = if rng.gen_bool(spec.prescaled_fraction) {
                let (lo, hi) = spec.prescale_range;
                if lo == hi {
                    lo
                } else {
                    rng.gen_range(lo..hi)
                }
            } else {
                1.0
            };
            let persist = rng.gen_bool(spec.persist_reco_fraction);
            lines.push(
                LineRecord::new(format!("{}_line{j}", module_name(m)), module_name(m))
                    .with_prescale(prescale)
                    .with_flags(true, persist),
            );
            line_cluster.push(spec.cluster_of(m));
        }
    }
    let rows = (0..spec.n_events)
        .map(|_| {
            let cluster = rng.gen_range(0..spec.n_clusters);
            (0..lines.len())
                .filter(|&l| {
                    let rate = if line_cluster[l] == cluster {
                        spec.intra_rate
                    } else {
                        spec.cross_rate
                    };
                    rng.gen_bool(rate)
                })
                .collect()
        })
        .collect();
    let planted = Scheme::new(
        spec.n_clusters.min(spec.n_modules),
        (0..spec.n_modules).map(|m| spec.cluster_of(m)).collect(),
    )?;
    Ok(Synthetic {
        lines,
        rows,
        planted,
    })
}

/// A grouping with the same stream sizes as `scheme` but modules dealt out
/// at random.
pub fn scrambled_scheme(scheme: &Scheme, seed: u64) -> Scheme {
    let mut labels = scheme.assignment().to_vec();
    labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Scheme::new(scheme.n_streams(), labels).expect("same labels")
}
