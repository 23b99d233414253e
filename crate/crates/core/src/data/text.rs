use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use super::{CsrMatrix, Dataset, DenseMatrix, Matrix, Task, SPARSE_DENSITY_THRESHOLD};
use crate::error::{Error, Result};

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(doc: &str) -> impl Iterator<Item = String> + '_ {
    doc.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// One document per line; a trailing carriage return is stripped.
pub fn read_documents(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.trim_end_matches('\r').to_string())
        .collect())
}

/// Raw-count TF times `ln(n / df)` IDF, rows L2-normalized. Vocabulary is
/// sorted lexicographically; terms seen in fewer than `min_doc_freq`
/// documents are dropped. Labels default to zero.
pub fn tfidf_vectorize(documents: &[String], min_doc_freq: usize) -> Result<Dataset> {
    if documents.is_empty() {
        return Err(Error::EmptyDataset("empty corpus".into()));
    }
    let n = documents.len();
    let counts: Vec<HashMap<String, usize>> = documents
        .iter()
        .map(|doc| {
            let mut tf = HashMap::new();
            for tok in tokenize(doc) {
                *tf.entry(tok).or_insert(0) += 1;
            }
            tf
        })
        .collect();
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for tf in &counts {
        for term in tf.keys() {
            *df.entry(term.as_str()).or_insert(0) += 1;
        }
    }
    let vocab: Vec<(&str, usize)> = df
        .into_iter()
        .filter(|(_, c)| *c >= min_doc_freq.max(1))
        .collect();
    if vocab.is_empty() {
        return Err(Error::EmptyDataset(
            "all tokens filtered out by the document-frequency threshold".into(),
        ));
    }
    let column: HashMap<&str, usize> = vocab.iter().enumerate().map(|(j, (t, _))| (*t, j)).collect();
    let idf: Vec<f64> = vocab.iter().map(|(_, c)| (n as f64 / *c as f64).ln()).collect();

    let rows: Vec<Vec<(usize, f64)>> = counts
        .iter()
        .map(|tf| {
            let mut row: Vec<(usize, f64)> = tf
                .iter()
                .filter_map(|(t, &c)| column.get(t.as_str()).map(|&j| (j, c as f64 * idf[j])))
                .collect();
            row.sort_unstable_by_key(|e| e.0);
            let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|e| e.1 /= norm);
            }
            row
        })
        .collect();

    let d = vocab.len();
    let csr = CsrMatrix::from_row_entries(d, rows);
    let observations = if (csr.nnz() as f64) / ((n * d) as f64) < SPARSE_DENSITY_THRESHOLD {
        Matrix::Sparse(csr)
    } else {
        let sparse = Matrix::Sparse(csr);
        let dense: DenseMatrix = sparse.to_dense();
        Matrix::Dense(dense)
    };
    let names = vocab.iter().map(|(t, _)| t.to_string()).collect();
    Dataset::new(observations, vec![0.0; n], names, Task::Classification)?
        .with_documents(documents.to_vec())
}
