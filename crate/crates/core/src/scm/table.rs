use alloc::string::String;
use alloc::vec::Vec;

use crate::conditioning::StepDiagnostics;
use crate::stats;

/// `n` rows by named numeric columns.
///
/// A missing value ("not available") is stored as NaN; expression
/// evaluation never produces NaN, so the encoding is unambiguous. Weights,
/// when present, are normalized to sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleTable {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    n: usize,
    weights: Option<Vec<f64>>,
    diagnostics: Vec<StepDiagnostics>,
}

impl ParticleTable {
    /// Panics if column lengths differ or the counts of names and columns disagree.
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Self {
        assert_eq!(names.len(), columns.len(), "one name per column");
        let n = columns.first().map_or(0, Vec::len);
        assert!(columns.iter().all(|c| c.len() == n), "ragged columns");
        ParticleTable {
            names,
            columns,
            n,
            weights: None,
            diagnostics: Vec::new(),
        }
    }

    pub fn empty(names: Vec<String>) -> Self {
        let columns = names.iter().map(|_| Vec::new()).collect();
        ParticleTable::new(names, columns)
    }

    pub(crate) fn with_rows(names: Vec<String>, columns: Vec<Vec<f64>>, n: usize) -> Self {
        debug_assert!(columns.iter().all(|c| c.len() == n));
        ParticleTable {
            names,
            columns,
            n,
            weights: None,
            diagnostics: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_columns(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.column_index(name).map(|i| self.columns[i].as_slice())
    }

    pub fn column_at(&self, i: usize) -> &[f64] {
        &self.columns[i]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn get(&self, column: usize, row: usize) -> Option<f64> {
        let v = self.columns[column][row];
        (!v.is_nan()).then_some(v)
    }

    pub fn is_na(&self, column: usize, row: usize) -> bool {
        self.columns[column][row].is_nan()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Attaches weights, normalizing them. Panics on a length mismatch or a
    /// non-positive total.
    pub fn set_weights(&mut self, mut w: Vec<f64>) {
        assert_eq!(w.len(), self.n);
        let total: f64 = w.iter().sum();
        assert!(total > 0.0, "weights must have a positive sum");
        for x in &mut w {
            *x /= total;
        }
        self.weights = Some(w);
    }

    pub fn clear_weights(&mut self) {
        self.weights = None;
    }

    pub fn diagnostics(&self) -> &[StepDiagnostics] {
        &self.diagnostics
    }

    pub(crate) fn set_diagnostics(&mut self, d: Vec<StepDiagnostics>) {
        self.diagnostics = d;
    }

    pub(crate) fn column_mut(&mut self, i: usize) -> &mut Vec<f64> {
        &mut self.columns[i]
    }

    /// Rows picked by index (with repetition); weights are dropped.
    pub fn select_rows(&self, idx: &[usize]) -> ParticleTable {
        let columns = self
            .columns
            .iter()
            .map(|c| idx.iter().map(|&i| c[i]).collect())
            .collect();
        let mut t = ParticleTable::with_rows(self.names.clone(), columns, idx.len());
        t.diagnostics = self.diagnostics.clone();
        t
    }

    /// The named columns, in the given order. Unknown names are skipped.
    pub fn select_columns<S: AsRef<str>>(&self, names: &[S]) -> ParticleTable {
        let mut keep_names = Vec::new();
        let mut keep = Vec::new();
        for name in names {
            if let Some(i) = self.column_index(name.as_ref()) {
                keep_names.push(self.names[i].clone());
                keep.push(self.columns[i].clone());
            }
        }
        let mut t = ParticleTable::with_rows(keep_names, keep, self.n);
        t.weights = self.weights.clone();
        t.diagnostics = self.diagnostics.clone();
        t
    }

    /// Fraction of rows that are distinct over the given columns (all columns if empty).
    pub fn unique_fraction(&self, columns: &[usize]) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        let cols: Vec<&[f64]> = if columns.is_empty() {
            self.columns.iter().map(Vec::as_slice).collect()
        } else {
            columns.iter().map(|&i| self.columns[i].as_slice()).collect()
        };
        stats::distinct_rows(&cols, self.n) as f64 / self.n as f64
    }

    /// Effective sample size: `n` without weights, `1 / sum w^2` with them.
    pub fn ess(&self) -> f64 {
        match &self.weights {
            Some(w) => stats::ess(w),
            None => self.n as f64,
        }
    }
}
