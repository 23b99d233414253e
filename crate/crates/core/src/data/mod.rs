//! Dataset ingestion: CSV loading, standardization, TF-IDF vectorization
//! and confusion-matrix partitioning.

mod distance;
mod matrix;
mod text;

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use distance::Distance;
pub use matrix::{CsrMatrix, DenseMatrix, Matrix, SPARSE_DENSITY_THRESHOLD};
pub use text::{read_documents, tfidf_vectorize, tokenize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

impl Task {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "regression" => Some(Task::Regression),
            "classification" => Some(Task::Classification),
            _ => None,
        }
    }
}

/// Observations with labels and per-feature statistics. Immutable once
/// built; `feature_mean`/`feature_std` always describe the raw columns so a
/// standardized dataset can be mapped back.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Matrix,
    labels: Vec<f64>,
    feature_names: Vec<String>,
    feature_mean: Vec<f64>,
    feature_std: Vec<f64>,
    task: Task,
    standardized: bool,
    documents: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        observations: Matrix,
        labels: Vec<f64>,
        feature_names: Vec<String>,
        task: Task,
    ) -> Result<Self> {
        if observations.nrows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} observations but {} labels",
                observations.nrows(),
                labels.len()
            )));
        }
        if observations.nrows() == 0 {
            return Err(Error::EmptyDataset("no rows".into()));
        }
        if feature_names.len() != observations.ncols() {
            return Err(Error::Dimension(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                observations.ncols()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = feature_names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::InvalidArgument(format!("duplicate feature name '{dup}'")));
        }
        let (feature_mean, feature_std) = column_stats(&observations);
        Ok(Self {
            observations,
            labels,
            feature_names,
            feature_mean,
            feature_std,
            task,
            standardized: false,
            documents: None,
        })
    }

    /// Convenience constructor for dense rows with generated names `x0..`.
    pub fn from_rows(rows: &[Vec<f64>], labels: Vec<f64>, task: Task) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        let names = (0..d).map(|j| format!("x{j}")).collect();
        Self::new(Matrix::Dense(DenseMatrix::from_rows(rows)), labels, names, task)
    }

    pub fn with_documents(mut self, documents: Vec<String>) -> Result<Self> {
        if documents.len() != self.n() {
            return Err(Error::Dimension(format!(
                "{} documents for {} rows",
                documents.len(),
                self.n()
            )));
        }
        self.documents = Some(documents);
        Ok(self)
    }

    pub fn with_labels(mut self, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::Dimension(format!(
                "{} labels for {} rows",
                labels.len(),
                self.n()
            )));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn with_task(mut self, task: Task) -> Self {
        self.task = task;
        self
    }

    pub fn n(&self) -> usize {
        self.observations.nrows()
    }

    pub fn d(&self) -> usize {
        self.observations.ncols()
    }

    pub fn observations(&self) -> &Matrix {
        &self.observations
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_mean(&self) -> &[f64] {
        &self.feature_mean
    }

    pub fn feature_std(&self) -> &[f64] {
        &self.feature_std
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    pub fn documents(&self) -> Option<&[String]> {
        self.documents.as_deref()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.observations.row_dense(i)
    }

    /// Per-feature spread in the space the observations live in: 1 for
    /// standardized columns (0 where the raw column was constant), the raw
    /// standard deviation otherwise.
    pub fn working_scale(&self) -> Vec<f64> {
        if self.standardized {
            self.feature_std
                .iter()
                .map(|&s| if s > 0.0 { 1.0 } else { 0.0 })
                .collect()
        } else {
            self.feature_std.clone()
        }
    }

    /// Column means of the observations as stored.
    pub fn column_means(&self) -> Vec<f64> {
        column_stats(&self.observations).0
    }

    /// Rows `indices` as a new dataset; statistics are recomputed for the
    /// subset unless the parent is standardized, in which case the parent's
    /// raw statistics are kept.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset("empty subset".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n()) {
            return Err(Error::InvalidArgument(format!("row index {bad} out of range")));
        }
        let observations = self.observations.select_rows(indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let mut out = Dataset::new(observations, labels, self.feature_names.clone(), self.task)?;
        if self.standardized {
            out.feature_mean = self.feature_mean.clone();
            out.feature_std = self.feature_std.clone();
            out.standardized = true;
        }
        out.documents = self
            .documents
            .as_ref()
            .map(|docs| indices.iter().map(|&i| docs[i].clone()).collect());
        Ok(out)
    }
}

fn column_stats(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (m.nrows(), m.ncols());
    let mut sum = vec![0.0; d];
    for i in 0..n {
        m.for_each_in_row(i, |c, v| sum[c] += v);
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n.max(1) as f64).collect();
    // Two-pass variance; zeros of a sparse row contribute mean^2 each.
    let mut sq = vec![0.0; d];
    let mut seen = vec![0usize; d];
    for i in 0..n {
        m.for_each_in_row(i, |c, v| {
            sq[c] += (v - mean[c]) * (v - mean[c]);
            seen[c] += 1;
        });
    }
    let std = (0..d)
        .map(|c| {
            let implicit = (n - seen[c]) as f64 * mean[c] * mean[c];
            let var = (sq[c] + implicit) / n.max(1) as f64;
            let s = var.max(0.0).sqrt();
            // Treat round-off on constant columns as exactly zero spread.
            if s <= 1e-12 * mean[c].abs().max(1.0) {
                0.0
            } else {
                s
            }
        })
        .collect();
    (mean, std)
}

/// Z-scores every column with the dataset's raw statistics; zero-variance
/// columns become all zeros. Standardizing twice is a no-op.
pub fn standardize(ds: &Dataset) -> Dataset {
    if ds.standardized {
        return ds.clone();
    }
    let mut dense = ds.observations.to_dense();
    for i in 0..dense.nrows() {
        for (j, v) in dense.row_mut(i).iter_mut().enumerate() {
            *v = if ds.feature_std[j] > 0.0 {
                (*v - ds.feature_mean[j]) / ds.feature_std[j]
            } else {
                0.0
            };
        }
    }
    Dataset {
        observations: Matrix::Dense(dense),
        standardized: true,
        ..ds.clone()
    }
}

/// Loads a comma-separated file with a header row. Row order follows the
/// file; statistics are computed on the raw values.
pub fn load_csv(path: impl AsRef<Path>, target_column: &str, task: Task) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let headers: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let target = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::MissingColumn(target_column.to_string()))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != target)
        .map(|(_, h)| h.clone())
        .collect();

    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        for (j, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| Error::NonNumeric {
                path: path.to_path_buf(),
                // 1-based line number in the file, header is line 1.
                row: r + 2,
                column: headers.get(j).cloned().unwrap_or_else(|| j.to_string()),
                value: cell.to_string(),
            })?;
            if j == target {
                labels.push(value);
            } else {
                data.push(value);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no data rows", path.display())));
    }
    let n = labels.len();
    let d = feature_names.len();
    Dataset::new(
        Matrix::Dense(DenseMatrix::new(n, d, data)),
        labels,
        feature_names,
        task,
    )
}

/// Reads a one-column CSV. A first line that does not parse as a number is
/// treated as a header.
pub fn read_single_column(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        let cell = line.trim();
        if cell.is_empty() {
            continue;
        }
        match cell.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if line_no == 0 => continue,
            Err(_) => {
                return Err(Error::NonNumeric {
                    path: path.to_path_buf(),
                    row: line_no + 1,
                    column: "0".into(),
                    value: cell.to_string(),
                })
            }
        }
    }
    Ok(out)
}

/// Row indices of the four confusion-matrix cells, class 1 = positive.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionSplit {
    pub true_positives: Vec<usize>,
    pub true_negatives: Vec<usize>,
    pub false_positives: Vec<usize>,
    pub false_negatives: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfusionCell {
    TruePositives,
    TrueNegatives,
    FalsePositives,
    FalseNegatives,
}

impl ConfusionSplit {
    pub fn cell(&self, cell: ConfusionCell) -> &[usize] {
        match cell {
            ConfusionCell::TruePositives => &self.true_positives,
            ConfusionCell::TrueNegatives => &self.true_negatives,
            ConfusionCell::FalsePositives => &self.false_positives,
            ConfusionCell::FalseNegatives => &self.false_negatives,
        }
    }
}

fn binary_class(v: f64) -> Option<bool> {
    if v == 0.0 {
        Some(false)
    } else if v == 1.0 {
        Some(true)
    } else {
        None
    }
}

pub fn confusion_split(ds: &Dataset, predictions: &[f64]) -> Result<ConfusionSplit> {
    if predictions.len() != ds.n() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} rows",
            predictions.len(),
            ds.n()
        )));
    }
    let mut split = ConfusionSplit::default();
    for (i, (&y, &p)) in ds.labels().iter().zip(predictions).enumerate() {
        let truth = binary_class(y)
            .ok_or_else(|| Error::InvalidArgument(format!("label {y} at row {i} is not binary")))?;
        let pred = binary_class(p).ok_or_else(|| {
            Error::InvalidArgument(format!("prediction {p} at row {i} is not binary"))
        })?;
        match (truth, pred) {
            (true, true) => split.true_positives.push(i),
            (false, false) => split.true_negatives.push(i),
            (false, true) => split.false_positives.push(i),
            (true, false) => split.false_negatives.push(i),
        }
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_bundled_diabetes() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/diabetes.csv");
        let ds = load_csv(path, "target", Task::Regression).unwrap();
        assert_eq!((ds.n(), ds.d()), (442, 10));
        assert_eq!(ds.feature_names()[2], "bmi");
    }

    #[test]
    fn eight_feature_classification_csv() {
        let header = "preg,glucose,bp,skin,insulin,bmi,pedigree,age,outcome\n";
        let body = "6,148,72,35,0,33.6,0.627,50,1\n1,85,66,29,0,26.6,0.351,31,0\n";
        let f = write_tmp(&(header.to_string() + body));
        let ds = load_csv(f.path(), "outcome", Task::Classification).unwrap();
        assert_eq!(ds.d(), 8);
        assert_eq!(ds.task(), Task::Classification);
        assert_eq!(ds.labels(), &[1.0, 0.0]);
    }

    #[test]
    fn single_row_has_zero_spread() {
        let f = write_tmp("a,b,y\n1.5,2,0\n");
        let ds = load_csv(f.path(), "y", Task::Regression).unwrap();
        assert_eq!((ds.n(), ds.d()), (1, 2));
        assert_eq!(ds.feature_std(), &[0.0, 0.0]);
    }

    #[test]
    fn load_errors() {
        assert!(matches!(
            load_csv("/nonexistent/file.csv", "y", Task::Regression),
            Err(Error::Io { .. })
        ));
        let f = write_tmp("a,b\n1,2\n");
        assert!(matches!(
            load_csv(f.path(), "y", Task::Regression),
            Err(Error::MissingColumn(_))
        ));
        let f = write_tmp("a,y\n1,2\n3,oops\n");
        match load_csv(f.path(), "y", Task::Regression) {
            Err(Error::NonNumeric { row, column, .. }) => {
                assert_eq!(row, 3);
                assert_eq!(column, "y");
            }
            other => panic!("unexpected {other:?}"),
        }
        let f = write_tmp("a,y\n");
        assert!(matches!(
            load_csv(f.path(), "y", Task::Regression),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn standardize_hand_values() {
        let ds = Dataset::from_rows(
            &[vec![2.0, 5.0], vec![4.0, 5.0], vec![6.0, 5.0]],
            vec![0.0; 3],
            Task::Regression,
        )
        .unwrap();
        let z = standardize(&ds);
        let col0: Vec<f64> = (0..3).map(|i| z.observations().get(i, 0)).collect();
        let expected = [-1.224_744_871_391_589, 0.0, 1.224_744_871_391_589];
        for (a, b) in col0.iter().zip(expected) {
            assert!((a - b).abs() < 1e-9);
        }
        let col1: Vec<f64> = (0..3).map(|i| z.observations().get(i, 1)).collect();
        assert_eq!(col1, vec![0.0; 3]);
        assert_eq!(z.feature_mean(), &[4.0, 5.0]);
        assert_eq!(z.working_scale(), vec![1.0, 0.0]);
    }

    #[test]
    fn already_standard_column_is_unchanged() {
        let v = [-1.224_744_871_391_589, 0.0, 1.224_744_871_391_589];
        let ds = Dataset::from_rows(
            &v.iter().map(|&x| vec![x]).collect::<Vec<_>>(),
            vec![0.0; 3],
            Task::Regression,
        )
        .unwrap();
        let z = standardize(&ds);
        for (i, x) in v.iter().enumerate() {
            assert!((z.observations().get(i, 0) - x).abs() < 1e-9);
        }
    }

    #[test]
    fn confusion_cells() {
        let ds = Dataset::from_rows(&vec![vec![0.0]; 4], vec![1.0, 0.0, 1.0, 0.0], Task::Classification)
            .unwrap();
        let s = confusion_split(&ds, &[1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(s.true_positives, vec![0]);
        assert_eq!(s.true_negatives, vec![1]);
        assert_eq!(s.false_negatives, vec![2]);
        assert_eq!(s.false_positives, vec![3]);

        let s = confusion_split(&ds, &[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(s.false_positives.is_empty() && s.false_negatives.is_empty());

        let zeros = ds.clone().with_labels(vec![0.0; 4]).unwrap();
        let s = confusion_split(&zeros, &[1.0; 4]).unwrap();
        assert_eq!(s.false_positives, vec![0, 1, 2, 3]);

        assert!(confusion_split(&ds, &[1.0]).is_err());
        let multi = ds.with_labels(vec![0.0, 2.0, 1.0, 0.0]).unwrap();
        assert!(confusion_split(&multi, &[0.0; 4]).is_err());
    }

    proptest! {
        #[test]
        fn confusion_split_is_a_partition(pairs in proptest::collection::vec((0u8..2, 0u8..2), 1..60)) {
            let labels: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
            let preds: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
            let ds = Dataset::from_rows(&vec![vec![0.0]; labels.len()], labels, Task::Classification).unwrap();
            let s = confusion_split(&ds, &preds).unwrap();
            let mut all: Vec<usize> = [&s.true_positives, &s.true_negatives, &s.false_positives, &s.false_negatives]
                .iter().flat_map(|v| v.iter().copied()).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..pairs.len()).collect::<Vec<_>>());
        }

        #[test]
        fn standardize_is_idempotent_and_normalizes(rows in proptest::collection::vec(
            proptest::collection::vec(-50.0f64..50.0, 3), 2..30)) {
            let ds = Dataset::from_rows(&rows, vec![0.0; rows.len()], Task::Regression).unwrap();
            let once = standardize(&ds);
            let twice = standardize(&once);
            prop_assert_eq!(once.observations(), twice.observations());
            let z = once.observations();
            for j in 0..3 {
                if ds.feature_std()[j] == 0.0 { continue; }
                let col: Vec<f64> = (0..rows.len()).map(|i| z.get(i, j)).collect();
                let m = col.iter().sum::<f64>() / col.len() as f64;
                let s = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64).sqrt();
                prop_assert!(m.abs() < 1e-9);
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
        }
    }
}
