//! Dataset types: which events pass which lines, the line catalog with its
//! module grouping, folded event/module probabilities and hard schemes.

use std::collections::HashMap;
use std::fmt;

use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Module counts up to this value fold into a dense event × module matrix.
pub const DEFAULT_DENSE_MODULE_THRESHOLD: usize = 512;

/// Sparse binary matrix of events × lines, stored as compressed rows.
///
/// Every event has at least one passing line; empty rows are dropped at
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLineIncidence {
    n_lines: usize,
    offsets: Vec<usize>,
    lines: Vec<u32>,
}

impl EventLineIncidence {
    /// Builds the incidence from per-event lists of passing line indices.
    ///
    /// Returns the incidence together with the number of dropped events
    /// (events passing no line).
    pub fn from_rows<R, I>(n_lines: usize, rows: R) -> Result<(Self, usize)>
    where
        R: IntoIterator<Item = I>,
        I: IntoIterator<Item = usize>,
    {
        let mut offsets = vec![0];
        let mut lines = Vec::new();
        let mut dropped = 0;
        let mut row = Vec::new();
        for (event, source) in rows.into_iter().enumerate() {
            row.clear();
            row.extend(source);
            if row.is_empty() {
                dropped += 1;
                continue;
            }
            row.sort_unstable();
            for pair in row.windows(2) {
                if pair[0] == pair[1] {
                    return Err(Error::DuplicatePair {
                        event,
                        line: pair[0],
                    });
                }
            }
            if let Some(&line) = row.last().filter(|&&l| l >= n_lines) {
                return Err(Error::LineOutOfRange {
                    event,
                    line,
                    n_lines,
                });
            }
            lines.extend(row.iter().map(|&l| l as u32));
            offsets.push(lines.len());
        }
        if dropped > 0 {
            info!("dropped {dropped} events that pass no line");
        }
        Ok((
            Self {
                n_lines,
                offsets,
                lines,
            },
            dropped,
        ))
    }

    /// Builds the incidence from `(event, line)` pairs over `n_events` events.
    pub fn from_pairs(
        n_events: usize,
        n_lines: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<(Self, usize)> {
        let mut rows = vec![Vec::new(); n_events];
        for (event, line) in pairs {
            if event >= n_events {
                return Err(Error::DimensionMismatch {
                    what: "event index bound",
                    expected: n_events,
                    found: event + 1,
                });
            }
            rows[event].push(line);
        }
        Self::from_rows(n_lines, rows)
    }

    pub fn n_events(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_lines(&self) -> usize {
        self.n_lines
    }

    /// Number of `(event, line)` pairs.
    pub fn nnz(&self) -> usize {
        self.lines.len()
    }

    /// Sorted line indices passed by `event`.
    pub fn row(&self, event: usize) -> &[u32] {
        &self.lines[self.offsets[event]..self.offsets[event + 1]]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u32]> + '_ {
        self.offsets.windows(2).map(|w| &self.lines[w[0]..w[1]])
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows()
            .enumerate()
            .flat_map(|(e, row)| row.iter().map(move |&l| (e, l as usize)))
    }

    /// Number of events passing each line.
    pub fn line_event_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_lines];
        for &l in &self.lines {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// One event-selection line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRecord {
    pub name: String,
    /// Probability that a positive decision of the line is kept.
    pub prescale: f64,
    pub is_turbo: bool,
    pub is_persist_reco: bool,
    pub module: String,
}

impl LineRecord {
    pub fn new(name: impl Into<String>, module: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            prescale: 1.0,
            is_turbo: true,
            is_persist_reco: false,
            module: module.into(),
        }
    }

    pub fn with_prescale(mut self, prescale: f64) -> Self {
        self.prescale = prescale;
        self
    }

    pub fn with_flags(mut self, is_turbo: bool, is_persist_reco: bool) -> Self {
        self.is_turbo = is_turbo;
        self.is_persist_reco = is_persist_reco;
        self
    }
}

/// Ordered lines plus the ordered list of modules they belong to.
///
/// Construction does not reject inconsistent catalogs; use
/// [`validate_dataset`] (or [`Dataset::new`]) before computing costs.
#[derive(Debug, Clone, PartialEq)]
pub struct LineCatalog {
    lines: Vec<LineRecord>,
    modules: Vec<String>,
    line_module: Vec<Option<usize>>,
    module_lines: Vec<Vec<usize>>,
    line_by_name: HashMap<String, usize>,
}

impl LineCatalog {
    /// Catalog whose module order is the order of first appearance.
    pub fn new(lines: Vec<LineRecord>) -> Self {
        let mut modules: Vec<String> = Vec::new();
        let mut seen = HashMap::new();
        for line in &lines {
            if !seen.contains_key(&line.module) {
                seen.insert(line.module.clone(), modules.len());
                modules.push(line.module.clone());
            }
        }
        Self::with_modules(lines, modules)
    }

    /// Catalog with an explicit module order. Lines may reference modules
    /// missing from `modules`; such orphans are reported by validation.
    pub fn with_modules(lines: Vec<LineRecord>, modules: Vec<String>) -> Self {
        let mut module_index = HashMap::new();
        for (m, name) in modules.iter().enumerate() {
            module_index.entry(name.clone()).or_insert(m);
        }
        let mut module_lines = vec![Vec::new(); modules.len()];
        let line_module: Vec<Option<usize>> = lines
            .iter()
            .enumerate()
            .map(|(l, line)| {
                let m = module_index.get(&line.module).copied();
                if let Some(m) = m {
                    module_lines[m].push(l);
                }
                m
            })
            .collect();
        let mut line_by_name = HashMap::new();
        for (l, line) in lines.iter().enumerate() {
            line_by_name.entry(line.name.clone()).or_insert(l);
        }
        Self {
            lines,
            modules,
            line_module,
            module_lines,
            line_by_name,
        }
    }

    /// One module per line, named after the line.
    pub fn one_module_per_line(lines: Vec<LineRecord>) -> Self {
        let lines = lines
            .into_iter()
            .map(|mut l| {
                l.module = l.name.clone();
                l
            })
            .collect();
        Self::new(lines)
    }

    pub fn lines(&self) -> &[LineRecord] {
        &self.lines
    }

    pub fn line(&self, l: usize) -> &LineRecord {
        &self.lines[l]
    }

    pub fn modules(&self) -> &[String] {
        &self.modules
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn n_modules(&self) -> usize {
        self.modules.len()
    }

    /// Module index of line `l`, `None` for orphan lines.
    pub fn module_of(&self, l: usize) -> Option<usize> {
        self.line_module[l]
    }

    pub fn lines_in_module(&self, m: usize) -> &[usize] {
        &self.module_lines[m]
    }

    /// Number of lines in each module.
    pub fn module_line_counts(&self) -> Vec<usize> {
        self.module_lines.iter().map(Vec::len).collect()
    }

    pub fn line_index(&self, name: &str) -> Option<usize> {
        self.line_by_name.get(name).copied()
    }

    pub fn module_index(&self, name: &str) -> Option<usize> {
        self.modules.iter().position(|m| m == name)
    }

    pub fn prescales(&self) -> Vec<f64> {
        self.lines.iter().map(|l| l.prescale).collect()
    }

    /// Module index per line; panics on orphans, so only call on validated
    /// catalogs.
    pub(crate) fn module_indices(&self) -> Vec<usize> {
        self.line_module
            .iter()
            .enumerate()
            .map(|(l, m)| m.unwrap_or_else(|| panic!("line {l} has no module")))
            .collect()
    }
}

/// One consistency problem found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    LineCountMismatch { incidence: usize, catalog: usize },
    LineIndexOutOfRange { line: usize, n_lines: usize },
    PrescaleOutOfRange { line: String, prescale: f64 },
    OrphanModule { line: String, module: String },
    EmptyModule { module: String },
    DuplicateLineName { name: String },
    DuplicateModuleName { name: String },
    NoEvents,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LineCountMismatch { incidence, catalog } => write!(
                f,
                "incidence has {incidence} lines but the catalog has {catalog}"
            ),
            Violation::LineIndexOutOfRange { line, n_lines } => write!(
                f,
                "incidence references line index {line}, catalog has {n_lines} lines"
            ),
            Violation::PrescaleOutOfRange { line, prescale } => {
                write!(f, "line `{line}` has prescale {prescale} outside [0, 1]")
            }
            Violation::OrphanModule { line, module } => {
                write!(f, "line `{line}` references unknown module `{module}`")
            }
            Violation::EmptyModule { module } => write!(f, "module `{module}` has no lines"),
            Violation::DuplicateLineName { name } => write!(f, "duplicate line name `{name}`"),
            Violation::DuplicateModuleName { name } => {
                write!(f, "duplicate module name `{name}`")
            }
            Violation::NoEvents => write!(f, "no events"),
        }
    }
}

/// List of violations; empty means the dataset is consistent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks that the incidence and catalog describe one consistent dataset.
pub fn validate_dataset(incidence: &EventLineIncidence, catalog: &LineCatalog) -> ValidationReport {
    let mut violations = Vec::new();

    if incidence.n_events() == 0 {
        violations.push(Violation::NoEvents);
    }

    let n_lines = catalog.n_lines();
    let mut out_of_range: Vec<usize> = incidence
        .pairs()
        .map(|(_, l)| l)
        .filter(|&l| l >= n_lines)
        .collect();
    out_of_range.sort_unstable();
    out_of_range.dedup();
    if out_of_range.is_empty() {
        if incidence.n_lines() != n_lines {
            violations.push(Violation::LineCountMismatch {
                incidence: incidence.n_lines(),
                catalog: n_lines,
            });
        }
    } else {
        violations.extend(
            out_of_range
                .into_iter()
                .map(|line| Violation::LineIndexOutOfRange { line, n_lines }),
        );
    }

    let mut names = HashMap::new();
    for (l, line) in catalog.lines().iter().enumerate() {
        if !(0.0..=1.0).contains(&line.prescale) {
            violations.push(Violation::PrescaleOutOfRange {
                line: line.name.clone(),
                prescale: line.prescale,
            });
        }
        if catalog.module_of(l).is_none() {
            violations.push(Violation::OrphanModule {
                line: line.name.clone(),
                module: line.module.clone(),
            });
        }
        if names.insert(line.name.as_str(), l).is_some() {
            violations.push(Violation::DuplicateLineName {
                name: line.name.clone(),
            });
        }
    }

    let mut module_names = HashMap::new();
    for (m, module) in catalog.modules().iter().enumerate() {
        if module_names.insert(module.as_str(), m).is_some() {
            violations.push(Violation::DuplicateModuleName {
                name: module.clone(),
            });
        } else if catalog.lines_in_module(m).is_empty() {
            violations.push(Violation::EmptyModule {
                module: module.clone(),
            });
        }
    }

    ValidationReport { violations }
}

/// Probabilities that each event is selected by each module, after prescales.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleIncidence {
    n_events: usize,
    n_modules: usize,
    storage: Storage,
}

#[derive(Debug, Clone, PartialEq)]
enum Storage {
    /// Row-major `n_events × n_modules`.
    Dense(Vec<f64>),
    /// Compressed rows holding only nonzero entries, sorted by module.
    Sparse {
        offsets: Vec<usize>,
        entries: Vec<(u32, f64)>,
    },
}

impl ModuleIncidence {
    pub fn n_events(&self) -> usize {
        self.n_events
    }

    pub fn n_modules(&self) -> usize {
        self.n_modules
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense(_))
    }

    pub fn get(&self, event: usize, module: usize) -> f64 {
        match &self.storage {
            Storage::Dense(values) => values[event * self.n_modules + module],
            Storage::Sparse { offsets, entries } => {
                let row = &entries[offsets[event]..offsets[event + 1]];
                row.binary_search_by_key(&(module as u32), |&(m, _)| m)
                    .map_or(0.0, |i| row[i].1)
            }
        }
    }

    /// Nonzero `(module, probability)` entries of one event, by module index.
    pub fn row(&self, event: usize) -> Vec<(usize, f64)> {
        match &self.storage {
            Storage::Dense(values) => values[event * self.n_modules..(event + 1) * self.n_modules]
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(m, &v)| (m, v))
                .collect(),
            Storage::Sparse { offsets, entries } => entries[offsets[event]..offsets[event + 1]]
                .iter()
                .map(|&(m, v)| (m as usize, v))
                .collect(),
        }
    }

    /// Calls `f` with the nonzero entries of every event, in event order.
    pub fn for_each_row(&self, mut f: impl FnMut(usize, &[(u32, f64)])) {
        match &self.storage {
            Storage::Dense(values) => {
                let mut row = Vec::with_capacity(self.n_modules);
                for e in 0..self.n_events {
                    row.clear();
                    row.extend(
                        values[e * self.n_modules..(e + 1) * self.n_modules]
                            .iter()
                            .enumerate()
                            .filter(|(_, &v)| v != 0.0)
                            .map(|(m, &v)| (m as u32, v)),
                    );
                    f(e, &row);
                }
            }
            Storage::Sparse { offsets, entries } => {
                for (e, w) in offsets.windows(2).enumerate() {
                    f(e, &entries[w[0]..w[1]]);
                }
            }
        }
    }

    /// Dense row-major copy.
    pub fn to_dense(&self) -> Vec<f64> {
        match &self.storage {
            Storage::Dense(values) => values.clone(),
            Storage::Sparse { .. } => {
                let mut values = vec![0.0; self.n_events * self.n_modules];
                self.for_each_row(|e, row| {
                    for &(m, v) in row {
                        values[e * self.n_modules + m as usize] = v;
                    }
                });
                values
            }
        }
    }
}

/// Folds line decisions into module selection probabilities:
/// `1 - Π_{l in m} (1 - passes(e, l) · prescale(l))`.
pub fn fold_modules(incidence: &EventLineIncidence, catalog: &LineCatalog) -> ModuleIncidence {
    fold_modules_with_threshold(incidence, catalog, DEFAULT_DENSE_MODULE_THRESHOLD)
}

/// As [`fold_modules`], storing dense rows only when the module count is at
/// most `dense_threshold`.
pub fn fold_modules_with_threshold(
    incidence: &EventLineIncidence,
    catalog: &LineCatalog,
    dense_threshold: usize,
) -> ModuleIncidence {
    let n_modules = catalog.n_modules();
    let n_events = incidence.n_events();
    let module_of = catalog.module_indices();

    let mut keep = vec![1.0f64; n_modules];
    let mut touched: Vec<usize> = Vec::new();
    let mut fold_row = |row: &[u32], out: &mut Vec<(u32, f64)>| {
        for &l in row {
            let l = l as usize;
            let m = module_of[l];
            if !touched.contains(&m) {
                touched.push(m);
            }
            keep[m] *= 1.0 - catalog.line(l).prescale;
        }
        touched.sort_unstable();
        for &m in &touched {
            let v = 1.0 - keep[m];
            if v != 0.0 {
                out.push((m as u32, v));
            }
            keep[m] = 1.0;
        }
        touched.clear();
    };

    let storage = if n_modules <= dense_threshold {
        let mut values = vec![0.0; n_events * n_modules];
        let mut row_out = Vec::new();
        for (e, row) in incidence.rows().enumerate() {
            row_out.clear();
            fold_row(row, &mut row_out);
            for &(m, v) in &row_out {
                values[e * n_modules + m as usize] = v;
            }
        }
        Storage::Dense(values)
    } else {
        let mut offsets = Vec::with_capacity(n_events + 1);
        offsets.push(0);
        let mut entries = Vec::new();
        for row in incidence.rows() {
            fold_row(row, &mut entries);
            offsets.push(entries.len());
        }
        Storage::Sparse { offsets, entries }
    };

    ModuleIncidence {
        n_events,
        n_modules,
        storage,
    }
}

/// A validated dataset with its folded module incidence.
#[derive(Debug, Clone)]
pub struct Dataset {
    incidence: EventLineIncidence,
    catalog: LineCatalog,
    modules: ModuleIncidence,
}

impl Dataset {
    pub fn new(incidence: EventLineIncidence, catalog: LineCatalog) -> Result<Self> {
        let report = validate_dataset(&incidence, &catalog);
        if !report.is_valid() {
            return Err(Error::InvalidDataset(report));
        }
        let modules = fold_modules(&incidence, &catalog);
        Ok(Self {
            incidence,
            catalog,
            modules,
        })
    }

    pub fn incidence(&self) -> &EventLineIncidence {
        &self.incidence
    }

    pub fn catalog(&self) -> &LineCatalog {
        &self.catalog
    }

    pub fn module_incidence(&self) -> &ModuleIncidence {
        &self.modules
    }
}

/// Hard assignment of units (modules) to streams.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scheme {
    n_streams: usize,
    assignment: Vec<usize>,
}

impl Scheme {
    pub fn new(n_streams: usize, assignment: Vec<usize>) -> Result<Self> {
        if n_streams == 0 {
            return Err(Error::InvalidConfig(
                "a scheme needs at least one stream".into(),
            ));
        }
        if let Some((unit, &stream)) = assignment
            .iter()
            .enumerate()
            .find(|(_, &s)| s >= n_streams)
        {
            return Err(Error::StreamOutOfRange {
                unit,
                stream,
                n_streams,
            });
        }
        Ok(Self {
            n_streams,
            assignment,
        })
    }

    /// Every unit in stream 0.
    pub fn single_stream(n_units: usize) -> Self {
        Self {
            n_streams: 1,
            assignment: vec![0; n_units],
        }
    }

    /// Unit `u` in stream `u`.
    pub fn per_unit(n_units: usize) -> Self {
        Self {
            n_streams: n_units.max(1),
            assignment: (0..n_units).collect(),
        }
    }

    pub fn n_streams(&self) -> usize {
        self.n_streams
    }

    pub fn n_units(&self) -> usize {
        self.assignment.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn stream_of(&self, unit: usize) -> usize {
        self.assignment[unit]
    }

    /// Units per stream.
    pub fn stream_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_streams];
        for &s in &self.assignment {
            sizes[s] += 1;
        }
        sizes
    }

    pub fn members(&self, stream: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == stream)
            .map(|(u, _)| u)
            .collect()
    }

    /// Streams with no unit assigned.
    pub fn empty_streams(&self) -> Vec<usize> {
        self.stream_sizes()
            .iter()
            .enumerate()
            .filter(|(_, &n)| n == 0)
            .map(|(s, _)| s)
            .collect()
    }

    pub fn n_nonempty_streams(&self) -> usize {
        self.n_streams - self.empty_streams().len()
    }

    /// Relabels streams by first appearance and drops empty ones.
    pub fn canonical(&self) -> Self {
        let mut relabel = vec![usize::MAX; self.n_streams];
        let mut next = 0;
        let assignment = self
            .assignment
            .iter()
            .map(|&s| {
                if relabel[s] == usize::MAX {
                    relabel[s] = next;
                    next += 1;
                }
                relabel[s]
            })
            .collect();
        Self {
            n_streams: next.max(1),
            assignment,
        }
    }
}
