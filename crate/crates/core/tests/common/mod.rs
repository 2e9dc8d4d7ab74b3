#![allow(dead_code)]

use rand::Rng;
use streamopt::model::{Dataset, EventLineIncidence, LineCatalog, LineRecord};

pub struct InstanceShape {
    pub max_modules: usize,
    pub max_lines_per_module: usize,
    pub max_events: usize,
    pub prescaled: bool,
}

/// Random dataset: each line passes each event independently with a
/// per-line rate; events passing nothing are dropped by construction.
pub fn random_dataset<R: Rng>(rng: &mut R, shape: &InstanceShape) -> Dataset {
    loop {
        let n_modules = rng.gen_range(1..=shape.max_modules);
        let mut lines = Vec::new();
        for m in 0..n_modules {
            for j in 0..rng.gen_range(1..=shape.max_lines_per_module) {
                let prescale = if shape.prescaled && rng.gen_bool(0.4) {
                    rng.gen_range(0.05..1.0)
                } else {
                    1.0
                };
                let persist = rng.gen_bool(0.3);
                let turbo = !persist || rng.gen_bool(0.5);
                lines.push(
                    LineRecord::new(format!("m{m}_l{j}"), format!("m{m}"))
                        .with_prescale(prescale)
                        .with_flags(turbo, persist),
                );
            }
        }
        let n_lines = lines.len();
        let rates: Vec<f64> = (0..n_lines).map(|_| rng.gen_range(0.02..0.4)).collect();
        let n_events = rng.gen_range(1..=shape.max_events);
        let rows: Vec<Vec<usize>> = (0..n_events)
            .map(|_| (0..n_lines).filter(|&l| rng.gen_bool(rates[l])).collect())
            .collect();
        let (inc, _) = EventLineIncidence::from_rows(n_lines, rows).unwrap();
        if inc.n_events() == 0 {
            continue;
        }
        return Dataset::new(inc, LineCatalog::new(lines)).unwrap();
    }
}

/// Calls `f` with every raw assignment of `n` units to `k` labels.
pub fn for_each_assignment(n: usize, k: usize, mut f: impl FnMut(&[usize])) {
    let mut a = vec![0; n];
    loop {
        f(&a);
        let mut i = 0;
        loop {
            if i == n {
                return;
            }
            a[i] += 1;
            if a[i] < k {
                break;
            }
            a[i] = 0;
            i += 1;
        }
    }
}

/// Read cost by explicit set unions of passing events per stream, prescales
/// ignored.
pub fn union_cost(dataset: &Dataset, assignment: &[usize], n_streams: usize) -> f64 {
    let catalog = dataset.catalog();
    let mut total = 0.0;
    for s in 0..n_streams {
        let lines: Vec<usize> = (0..catalog.n_lines())
            .filter(|&l| assignment[catalog.module_of(l).unwrap()] == s)
            .collect();
        let events = (0..dataset.incidence().n_events())
            .filter(|&e| {
                dataset
                    .incidence()
                    .row(e)
                    .iter()
                    .any(|&l| lines.contains(&(l as usize)))
            })
            .count();
        total += (lines.len() * events) as f64;
    }
    total
}
