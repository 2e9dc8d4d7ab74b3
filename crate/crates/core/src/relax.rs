//! Differentiable surrogate of the read cost.
//!
//! Every unit (module) `m` is spread over the streams with probabilities
//! `L[m, s] = softmax(A[m, :])[s]`. The surrogate replaces the line and event
//! counts of each stream by their expectations under independent placement:
//!
//! ```text
//! lines(s)  = Σ_m c_m L[m, s]                       c_m = lines in module m
//! events(s) = Σ_e (1 - Π_m (1 - D[e, m] L[m, s]))   D = folded module incidence
//! loss      = Σ_s lines(s) · events(s)
//! ```
//!
//! The surrogate equals the discrete cost whenever `L` is one-hot. Its
//! gradient with respect to the logits `A` is computed in closed form:
//!
//! ```text
//! ∂loss/∂L[m, s] = c_m events(s) + lines(s) Σ_e D[e, m] Π_{m' ≠ m} (1 - D[e, m'] L[m', s])
//! ∂loss/∂A[m, j] = L[m, j] (g[m, j] - Σ_s L[m, s] g[m, s])     g = ∂loss/∂L
//! ```
//!
//! The leave-one-out products use prefix/suffix products, so saturated
//! factors (exact zeros) are handled without division.

use std::collections::HashMap;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::{LineCatalog, ModuleIncidence, Scheme};
use crate::numeric::CompensatedSum;

/// Row-wise softmax with row-max subtraction.
pub fn softmax_rows(logits: &Array2<f64>) -> Result<Array2<f64>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    Ok(softmax_unchecked(logits))
}

fn softmax_unchecked(logits: &Array2<f64>) -> Array2<f64> {
    let mut probs = logits.clone();
    for mut row in probs.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let total: f64 = row.sum();
        row.mapv_inplace(|v| v / total);
    }
    probs
}

/// Logits and the stream probabilities they induce, one row per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment {
    logits: Array2<f64>,
    probs: Array2<f64>,
}

impl SoftAssignment {
    pub fn from_logits(logits: Array2<f64>) -> Result<Self> {
        let probs = softmax_rows(&logits)?;
        Ok(Self { logits, probs })
    }

    /// Embeds a hard scheme as exact one-hot probabilities. The logits of
    /// the unselected streams are `-inf`.
    pub fn one_hot(scheme: &Scheme) -> Self {
        let shape = (scheme.n_units(), scheme.n_streams());
        let mut logits = Array2::from_elem(shape, f64::NEG_INFINITY);
        let mut probs = Array2::zeros(shape);
        for (u, &s) in scheme.assignment().iter().enumerate() {
            logits[[u, s]] = 0.0;
            probs[[u, s]] = 1.0;
        }
        Self { logits, probs }
    }

    pub fn uniform(n_units: usize, n_streams: usize) -> Self {
        let logits = Array2::zeros((n_units, n_streams));
        let probs = Array2::from_elem((n_units, n_streams), 1.0 / n_streams as f64);
        Self { logits, probs }
    }

    pub fn logits(&self) -> &Array2<f64> {
        &self.logits
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn n_units(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_streams(&self) -> usize {
        self.probs.ncols()
    }

    /// Largest Shannon entropy (nats) over the unit rows; 0 for a hard
    /// assignment.
    pub fn max_row_entropy(&self) -> f64 {
        self.probs
            .rows()
            .into_iter()
            .map(|row| {
                -row.iter()
                    .filter(|&&p| p > 0.0)
                    .map(|&p| p * p.ln())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

/// Surrogate loss value with its per-stream factors.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedLoss {
    pub value: f64,
    pub per_stream_expected_lines: Vec<f64>,
    pub per_stream_expected_events: Vec<f64>,
}

/// Distinct event rows of a module incidence with their multiplicities.
#[derive(Debug, Clone)]
struct EventPatterns {
    n_units: usize,
    offsets: Vec<usize>,
    entries: Vec<(u32, f64)>,
    weights: Vec<f64>,
    max_row_len: usize,
}

impl EventPatterns {
    fn new(modules: &ModuleIncidence) -> Self {
        let mut index: HashMap<Vec<(u32, u64)>, usize> = HashMap::new();
        let mut offsets = vec![0];
        let mut entries = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        let mut max_row_len = 0;
        modules.for_each_row(|_, row| {
            let key: Vec<(u32, u64)> = row.iter().map(|&(m, v)| (m, v.to_bits())).collect();
            match index.get(&key) {
                Some(&p) => weights[p] += 1.0,
                None => {
                    index.insert(key, weights.len());
                    weights.push(1.0);
                    entries.extend_from_slice(row);
                    offsets.push(entries.len());
                    max_row_len = max_row_len.max(row.len());
                }
            }
        });
        Self {
            n_units: modules.n_modules(),
            offsets,
            entries,
            weights,
            max_row_len,
        }
    }

    fn check(&self, probs: &Array2<f64>) -> Result<()> {
        if probs.nrows() != self.n_units {
            return Err(Error::DimensionMismatch {
                what: "assignment rows vs modules",
                expected: self.n_units,
                found: probs.nrows(),
            });
        }
        Ok(())
    }

    /// Expected events per stream; when `event_grad` is given, also
    /// accumulates `∂events(s)/∂L[m, s]` into it (row-major units × streams).
    fn expected_events(&self, probs: &Array2<f64>, event_grad: Option<&mut [f64]>) -> Vec<f64> {
        self.evaluate(probs, None, event_grad).0
    }

    /// Expected events per stream and, when `rounding` carries line counts,
    /// the rounding gap per stream
    /// `Σ_e Σ_m c_m D[e, m] L[m, s] (1 - L[m, s]) Π_{m' ≠ m} (1 - D[e, m'] L[m', s])`.
    ///
    /// Gradients go to `grads`: `∂events/∂L` in the first slice and, with
    /// `rounding`, `∂gap/∂L` in the second.
    fn evaluate(
        &self,
        probs: &Array2<f64>,
        rounding: Option<&[f64]>,
        mut grads: Option<&mut [f64]>,
    ) -> (Vec<f64>, Vec<f64>) {
        let n_streams = probs.ncols();
        let probs = probs.as_standard_layout();
        let flat = probs.as_slice().expect("standard layout");
        let mut sums = vec![CompensatedSum::new(); n_streams];
        let mut gaps = vec![CompensatedSum::new(); n_streams];
        let k = self.max_row_len;
        let mut factors = vec![0.0; k];
        let mut weights = vec![0.0; k];
        let mut prefix = vec![0.0; k + 1];
        // Prefix of G(f) = Σ_i a_i Π_{l != i} f_l.
        let mut prefix_g = vec![0.0; k + 1];

        for (p, w) in self.offsets.windows(2).enumerate() {
            let row = &self.entries[w[0]..w[1]];
            let n = row.len();
            let weight = self.weights[p];
            for s in 0..n_streams {
                prefix[0] = 1.0;
                prefix_g[0] = 0.0;
                for (i, &(m, d)) in row.iter().enumerate() {
                    let l = flat[m as usize * n_streams + s];
                    let f = 1.0 - d * l;
                    factors[i] = f;
                    prefix[i + 1] = prefix[i] * f;
                    if let Some(counts) = rounding {
                        weights[i] = counts[m as usize] * d * l * (1.0 - l);
                        prefix_g[i + 1] = prefix_g[i] * f + weights[i] * prefix[i];
                    }
                }
                sums[s].add(weight * (1.0 - prefix[n]));
                if rounding.is_some() {
                    gaps[s].add(weight * prefix_g[n]);
                }

                if let Some(grads) = grads.as_deref_mut() {
                    let (event_grad, gap_grad) = grads.split_at_mut(self.n_units * n_streams);
                    let mut suffix = 1.0;
                    let mut suffix_g = 0.0;
                    for (i, &(m, d)) in row.iter().enumerate().rev() {
                        let at = m as usize * n_streams + s;
                        let leave_out = prefix[i] * suffix;
                        event_grad[at] += weight * d * leave_out;
                        if let Some(counts) = rounding {
                            let l = flat[at];
                            let d_weight = counts[m as usize] * d * (1.0 - 2.0 * l);
                            let d_factor = prefix_g[i] * suffix + prefix[i] * suffix_g;
                            gap_grad[at] += weight * (d_weight * leave_out - d * d_factor);
                            suffix_g = factors[i] * suffix_g + weights[i] * suffix;
                        }
                        suffix *= factors[i];
                    }
                }
            }
        }
        (
            sums.iter().map(CompensatedSum::value).collect(),
            gaps.iter().map(CompensatedSum::value).collect(),
        )
    }
}

/// Precomputed surrogate for one dataset, reused across many evaluations.
///
/// Identical event rows are merged and weighted by their multiplicity.
#[derive(Debug, Clone)]
pub struct RelaxedObjective {
    patterns: EventPatterns,
    line_counts: Vec<f64>,
}

impl RelaxedObjective {
    pub fn new(modules: &ModuleIncidence, catalog: &LineCatalog) -> Result<Self> {
        if modules.n_modules() != catalog.n_modules() {
            return Err(Error::DimensionMismatch {
                what: "module incidence vs catalog modules",
                expected: catalog.n_modules(),
                found: modules.n_modules(),
            });
        }
        Ok(Self {
            patterns: EventPatterns::new(modules),
            line_counts: catalog
                .module_line_counts()
                .into_iter()
                .map(|c| c as f64)
                .collect(),
        })
    }

    pub fn n_units(&self) -> usize {
        self.line_counts.len()
    }

    /// Number of distinct event rows.
    pub fn n_patterns(&self) -> usize {
        self.patterns.weights.len()
    }

    fn expected_lines_of(&self, probs: &Array2<f64>) -> Vec<f64> {
        let mut lines = vec![CompensatedSum::new(); probs.ncols()];
        for (row, &c) in probs.rows().into_iter().zip(&self.line_counts) {
            for (s, &p) in row.iter().enumerate() {
                lines[s].add(c * p);
            }
        }
        lines.iter().map(CompensatedSum::value).collect()
    }

    fn combine(lines: Vec<f64>, events: Vec<f64>) -> RelaxedLoss {
        let value = lines
            .iter()
            .zip(&events)
            .map(|(l, e)| l * e)
            .collect::<CompensatedSum>()
            .value();
        RelaxedLoss {
            value,
            per_stream_expected_lines: lines,
            per_stream_expected_events: events,
        }
    }

    /// Loss evaluated on a probability matrix (rows need not come from a
    /// softmax, so one-hot and other hard embeddings are accepted).
    pub fn loss_at(&self, probs: &Array2<f64>) -> Result<RelaxedLoss> {
        self.patterns.check(probs)?;
        let lines = self.expected_lines_of(probs);
        let events = self.patterns.expected_events(probs, None);
        Ok(Self::combine(lines, events))
    }

    /// Loss and `∂loss/∂L` with respect to the probabilities.
    pub fn loss_and_probability_gradient(
        &self,
        probs: &Array2<f64>,
    ) -> Result<(RelaxedLoss, Array2<f64>)> {
        let (loss, _, grad) = self.blended_probability_gradient(probs, 0.0)?;
        Ok((loss, grad))
    }

    /// Loss and `∂loss/∂A` with respect to the logits.
    pub fn loss_and_gradient(&self, soft: &SoftAssignment) -> Result<(RelaxedLoss, Array2<f64>)> {
        let (loss, _, grad) = self.blended_loss_and_gradient(soft, 0.0)?;
        Ok((loss, grad))
    }

    /// Gap between the expected read cost of independently placing every
    /// unit according to its row and the surrogate. Zero on hard
    /// assignments, nonnegative otherwise.
    pub fn rounding_gap(&self, probs: &Array2<f64>) -> Result<f64> {
        self.patterns.check(probs)?;
        let (_, gaps) = self.patterns.evaluate(probs, Some(&self.line_counts), None);
        Ok(gaps.iter().copied().collect::<CompensatedSum>().value())
    }

    /// Expected discrete read cost when every unit is placed independently
    /// according to its row: surrogate plus rounding gap.
    pub fn expected_placement_cost(&self, probs: &Array2<f64>) -> Result<f64> {
        Ok(self.loss_at(probs)?.value + self.rounding_gap(probs)?)
    }

    fn blended_probability_gradient(
        &self,
        probs: &Array2<f64>,
        gap_weight: f64,
    ) -> Result<(RelaxedLoss, f64, Array2<f64>)> {
        self.patterns.check(probs)?;
        let n_streams = probs.ncols();
        let size = self.n_units() * n_streams;
        let lines = self.expected_lines_of(probs);
        let with_gap = gap_weight != 0.0;
        let mut grads = vec![0.0; if with_gap { 2 * size } else { size }];
        let (events, gaps) = self.patterns.evaluate(
            probs,
            with_gap.then_some(self.line_counts.as_slice()),
            Some(&mut grads),
        );
        let (event_grad, gap_grad) = grads.split_at(size);
        let grad = Array2::from_shape_fn((self.n_units(), n_streams), |(m, s)| {
            let at = m * n_streams + s;
            let g = self.line_counts[m] * events[s] + lines[s] * event_grad[at];
            if with_gap {
                g + gap_weight * gap_grad[at]
            } else {
                g
            }
        });
        let gap = gaps.iter().copied().collect::<CompensatedSum>().value();
        Ok((Self::combine(lines, events), gap, grad))
    }

    /// Value and logit gradient of `surrogate + gap_weight · rounding gap`.
    ///
    /// Returns the surrogate breakdown, the rounding gap and the gradient of
    /// the blended value. At `gap_weight = 1` the blended value is the
    /// expected placement cost, which is multilinear in the rows and so has
    /// its minima at hard assignments.
    pub fn blended_loss_and_gradient(
        &self,
        soft: &SoftAssignment,
        gap_weight: f64,
    ) -> Result<(RelaxedLoss, f64, Array2<f64>)> {
        let probs = soft.probs();
        let (loss, gap, mut grad) = self.blended_probability_gradient(probs, gap_weight)?;
        for (mut g, p) in grad.rows_mut().into_iter().zip(probs.rows()) {
            let mean: f64 = g.iter().zip(p.iter()).map(|(g, p)| g * p).sum();
            g.zip_mut_with(&p, |g, &p| *g = p * (*g - mean));
        }
        Ok((loss, gap, grad))
    }
}

/// Expected line count of each stream.
pub fn expected_lines(catalog: &LineCatalog, soft: &SoftAssignment) -> Result<Vec<f64>> {
    if soft.n_units() != catalog.n_modules() {
        return Err(Error::DimensionMismatch {
            what: "assignment rows vs modules",
            expected: catalog.n_modules(),
            found: soft.n_units(),
        });
    }
    let counts = catalog.module_line_counts();
    let mut lines = vec![CompensatedSum::new(); soft.n_streams()];
    for (row, &c) in soft.probs().rows().into_iter().zip(&counts) {
        for (s, &p) in row.iter().enumerate() {
            lines[s].add(c as f64 * p);
        }
    }
    Ok(lines.iter().map(CompensatedSum::value).collect())
}

/// Expected event count of each stream.
pub fn expected_events(modules: &ModuleIncidence, soft: &SoftAssignment) -> Result<Vec<f64>> {
    let patterns = EventPatterns::new(modules);
    patterns.check(soft.probs())?;
    Ok(patterns.expected_events(soft.probs(), None))
}

/// Surrogate loss of a soft assignment.
pub fn relaxed_loss(
    modules: &ModuleIncidence,
    catalog: &LineCatalog,
    soft: &SoftAssignment,
) -> Result<RelaxedLoss> {
    RelaxedObjective::new(modules, catalog)?.loss_at(soft.probs())
}

/// Gradient of the surrogate loss with respect to the logits.
pub fn loss_gradient(
    modules: &ModuleIncidence,
    catalog: &LineCatalog,
    soft: &SoftAssignment,
) -> Result<Array2<f64>> {
    Ok(RelaxedObjective::new(modules, catalog)?
        .loss_and_gradient(soft)?
        .1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{fold_modules, EventLineIncidence, LineRecord};
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn softmax_examples() {
        let p = softmax_rows(&array![[0.0, 0.0], [0.0, 3.0f64.ln()]]).unwrap();
        assert_abs_diff_eq!(p[[0, 0]], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p[[0, 1]], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p[[1, 0]], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(p[[1, 1]], 0.75, epsilon = 1e-15);

        let shifted = softmax_rows(&array![[41.5, 41.5 + 3.0f64.ln()]]).unwrap();
        assert_abs_diff_eq!(shifted[[0, 1]], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(
            softmax_rows(&array![[0.0, f64::NAN]]),
            Err(Error::NonFinite(_))
        ));
        assert!(softmax_rows(&array![[f64::INFINITY, 0.0]]).is_err());
    }

    #[test]
    fn softmax_survives_large_logits() {
        let p = softmax_rows(&array![[1000.0, 999.0]]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(p.row(0).sum(), 1.0, epsilon = 1e-15);
    }

    fn single_event(modules: Vec<(&str, Vec<&str>)>, event_lines: Vec<usize>) -> (ModuleIncidence, LineCatalog) {
        let lines: Vec<LineRecord> = modules
            .iter()
            .flat_map(|(m, ls)| ls.iter().map(move |l| LineRecord::new(*l, *m)))
            .collect();
        let n = lines.len();
        let catalog = LineCatalog::new(lines);
        let (inc, _) = EventLineIncidence::from_rows(n, vec![event_lines]).unwrap();
        (fold_modules(&inc, &catalog), catalog)
    }

    #[test]
    fn expected_lines_examples() {
        let (_, catalog) = single_event(vec![("m", vec!["a", "b", "c"])], vec![0]);
        let soft = SoftAssignment::from_logits(array![[0.0, 0.0]]).unwrap();
        assert_eq!(expected_lines(&catalog, &soft).unwrap(), vec![1.5, 1.5]);

        let (_, catalog) = single_event(vec![("x", vec!["a", "b"]), ("y", vec!["c"])], vec![0]);
        let hard = SoftAssignment::one_hot(&Scheme::new(2, vec![0, 1]).unwrap());
        assert_eq!(expected_lines(&catalog, &hard).unwrap(), vec![2.0, 1.0]);

        let wrong = SoftAssignment::uniform(3, 2);
        assert!(matches!(
            expected_lines(&catalog, &wrong),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn expected_events_examples() {
        let (mi, _) = single_event(vec![("m", vec!["a"])], vec![0]);
        let soft = SoftAssignment::uniform(1, 2);
        assert_eq!(expected_events(&mi, &soft).unwrap(), vec![0.5, 0.5]);

        // Modules with selection probabilities (1, 0.5), both in stream 0.
        let catalog = LineCatalog::new(vec![
            LineRecord::new("a", "x"),
            LineRecord::new("b", "y").with_prescale(0.5),
        ]);
        let (inc, _) = EventLineIncidence::from_rows(2, vec![vec![0, 1]]).unwrap();
        let mi = fold_modules(&inc, &catalog);
        let hard = SoftAssignment::one_hot(&Scheme::new(2, vec![0, 0]).unwrap());
        assert_eq!(expected_events(&mi, &hard).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn relaxed_loss_differs_from_expected_cost() {
        let (mi, catalog) = single_event(vec![("m", vec!["a"])], vec![0]);
        let loss = relaxed_loss(&mi, &catalog, &SoftAssignment::uniform(1, 2)).unwrap();
        assert_eq!(loss.value, 0.5);
        // Rounding the line into either stream costs 1 · 1.
        for s in 0..2 {
            let hard = SoftAssignment::one_hot(&Scheme::new(2, vec![s]).unwrap());
            assert_eq!(relaxed_loss(&mi, &catalog, &hard).unwrap().value, 1.0);
        }
    }

    #[test]
    fn uniform_single_module_closed_form() {
        let catalog = LineCatalog::new(vec![
            LineRecord::new("a", "m"),
            LineRecord::new("b", "m").with_prescale(0.4),
        ]);
        let (inc, _) = EventLineIncidence::from_rows(2, vec![vec![0], vec![1], vec![0, 1], vec![1]]).unwrap();
        let mi = fold_modules(&inc, &catalog);
        let total: f64 = (0..mi.n_events()).map(|e| mi.get(e, 0)).sum();
        for k in 1..=4 {
            let loss = relaxed_loss(&mi, &catalog, &SoftAssignment::uniform(1, k)).unwrap();
            assert_abs_diff_eq!(loss.value, 2.0 / k as f64 * total, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_stream_gradient_is_zero() {
        let (mi, catalog) = single_event(vec![("x", vec!["a"]), ("y", vec!["b"])], vec![0, 1]);
        let soft = SoftAssignment::from_logits(array![[0.3], [-1.2]]).unwrap();
        let grad = loss_gradient(&mi, &catalog, &soft).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn identical_modules_have_stream_symmetric_gradient() {
        let (mi, catalog) = single_event(
            vec![("x", vec!["a"]), ("y", vec!["b"]), ("z", vec!["c"])],
            vec![0, 1, 2],
        );
        let grad = loss_gradient(&mi, &catalog, &SoftAssignment::uniform(3, 3)).unwrap();
        for row in grad.rows() {
            assert_abs_diff_eq!(row[0], row[1], epsilon = 1e-15);
            assert_abs_diff_eq!(row[1], row[2], epsilon = 1e-15);
        }
    }

    #[test]
    fn saturated_factor_gradient_uses_leave_one_out_product() {
        // One event selected by both modules; module x sits fully in stream 0.
        let (mi, catalog) = single_event(vec![("x", vec!["a"]), ("y", vec!["b"])], vec![0, 1]);
        let objective = RelaxedObjective::new(&mi, &catalog).unwrap();
        let probs = array![[1.0, 0.0], [0.25, 0.75]];
        let (loss, g) = objective.loss_and_probability_gradient(&probs).unwrap();
        // lines = (1.25, 0.75), events = (1, 0.75)
        assert_abs_diff_eq!(loss.value, 1.25 + 0.5625, epsilon = 1e-15);
        // ∂/∂L[y,0] = 1·events(0) + lines(0)·(1 - L[x,0]) = 1
        assert_abs_diff_eq!(g[[1, 0]], 1.0, epsilon = 1e-15);
        // ∂/∂L[x,0] = 1 + 1.25·(1 - 0.25)
        assert_abs_diff_eq!(g[[0, 0]], 1.0 + 1.25 * 0.75, epsilon = 1e-15);
    }

    #[test]
    fn max_row_entropy() {
        assert_eq!(SoftAssignment::one_hot(&Scheme::new(3, vec![2, 0]).unwrap()).max_row_entropy(), 0.0);
        assert_abs_diff_eq!(SoftAssignment::uniform(2, 4).max_row_entropy(), 4f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn duplicate_events_are_merged() {
        let catalog = LineCatalog::new(vec![LineRecord::new("a", "x"), LineRecord::new("b", "y")]);
        let (inc, _) = EventLineIncidence::from_rows(2, vec![vec![0], vec![0, 1], vec![0], vec![0, 1]]).unwrap();
        let objective = RelaxedObjective::new(&fold_modules(&inc, &catalog), &catalog).unwrap();
        assert_eq!(objective.n_patterns(), 2);
    }
}
