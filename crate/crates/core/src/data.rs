//! Tab-separated dataset format, the held-out split and mini-batching.
//!
//! Header columns are `label:<task>` (0/1), `cat:<field>` (non-negative ids)
//! and `num:<field>` (decimal floats). Files are written labels first, then
//! categorical, then numeric columns, each group in schema order; on load the
//! columns may appear in any order.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Batch, CategoricalField, FeatureSchema, SampleFeatures};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("unexpected column {0}")]
    UnexpectedColumn(String),
    #[error("duplicate column {0}")]
    DuplicateColumn(String),
    #[error("line {line}: expected {expected} fields, found {found}")]
    FieldCount { line: usize, expected: usize, found: usize },
    #[error("line {line}, column {column}: cannot parse {value:?}: {reason}")]
    Parse {
        line: usize,
        column: String,
        value: String,
        reason: String,
    },
    #[error("line {line}: {field} id {id} is outside vocabulary of size {vocab}")]
    OutOfVocabulary {
        line: usize,
        field: String,
        id: usize,
        vocab: usize,
    },
    #[error("schema: {0}")]
    Schema(String),
    #[error("dataset is empty")]
    Empty,
}

impl DataError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoricalColumn {
    pub name: String,
    pub vocab_size: usize,
}

/// Column layout of a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSchema {
    pub tasks: Vec<String>,
    pub categorical: Vec<CategoricalColumn>,
    #[serde(default)]
    pub numeric: Vec<String>,
}

impl DatasetSchema {
    pub fn header(&self) -> Vec<String> {
        self.tasks
            .iter()
            .map(|t| format!("label:{t}"))
            .chain(self.categorical.iter().map(|c| format!("cat:{}", c.name)))
            .chain(self.numeric.iter().map(|n| format!("num:{n}")))
            .collect()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.tasks.is_empty() {
            return Err(DataError::Schema("at least one task column".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for col in self.header() {
            if col.contains(['\t', '\n']) || col.ends_with(':') {
                return Err(DataError::Schema(format!("bad column name {col:?}")));
            }
            if !seen.insert(col.clone()) {
                return Err(DataError::DuplicateColumn(col));
            }
        }
        if let Some(c) = self.categorical.iter().find(|c| c.vocab_size == 0) {
            return Err(DataError::Schema(format!("{}: vocab_size must be positive", c.name)));
        }
        Ok(())
    }

    /// Model input schema with one embedding width for every field.
    pub fn feature_schema(&self, embedding_dim: usize) -> FeatureSchema {
        self.feature_schema_with(|_| embedding_dim)
    }

    pub fn feature_schema_with(&self, dim: impl Fn(&str) -> usize) -> FeatureSchema {
        FeatureSchema {
            categorical: self
                .categorical
                .iter()
                .map(|c| CategoricalField {
                    name: c.name.clone(),
                    vocab_size: c.vocab_size,
                    embedding_dim: dim(&c.name),
                })
                .collect(),
            numeric: self.numeric.clone(),
        }
    }
}

/// Column-major in-memory dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: DatasetSchema,
    labels: Vec<Vec<u8>>,
    categorical: Vec<Vec<usize>>,
    /// Row-major `len x n_numeric`.
    numeric: Vec<f32>,
    len: usize,
}

impl Dataset {
    pub fn new(schema: DatasetSchema) -> Result<Self, DataError> {
        schema.validate()?;
        Ok(Self {
            labels: vec![Vec::new(); schema.tasks.len()],
            categorical: vec![Vec::new(); schema.categorical.len()],
            numeric: Vec::new(),
            len: 0,
            schema,
        })
    }

    /// Appends one row after checking it against the schema.
    pub fn push(&mut self, features: &SampleFeatures, labels: &[u8]) -> Result<(), DataError> {
        let s = &self.schema;
        if labels.len() != s.tasks.len()
            || features.categorical.len() != s.categorical.len()
            || features.numeric.len() != s.numeric.len()
        {
            return Err(DataError::Schema("row does not match schema".into()));
        }
        if let Some(&y) = labels.iter().find(|&&y| y > 1) {
            return Err(DataError::Schema(format!("label {y} is not 0 or 1")));
        }
        for (col, &id) in s.categorical.iter().zip(&features.categorical) {
            if id >= col.vocab_size {
                return Err(DataError::OutOfVocabulary {
                    line: self.len + 2,
                    field: col.name.clone(),
                    id,
                    vocab: col.vocab_size,
                });
            }
        }
        if let Some(v) = features.numeric.iter().find(|v| !v.is_finite()) {
            return Err(DataError::Schema(format!("non-finite numeric value {v}")));
        }
        for (col, &y) in self.labels.iter_mut().zip(labels) {
            col.push(y);
        }
        for (col, &id) in self.categorical.iter_mut().zip(&features.categorical) {
            col.push(id);
        }
        self.numeric.extend_from_slice(&features.numeric);
        self.len += 1;
        Ok(())
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn n_tasks(&self) -> usize {
        self.schema.tasks.len()
    }

    /// Label column of task `t`.
    pub fn task_labels(&self, t: usize) -> &[u8] {
        &self.labels[t]
    }

    pub fn labels_of(&self, i: usize) -> Vec<u8> {
        self.labels.iter().map(|col| col[i]).collect()
    }

    pub fn categorical_column(&self, f: usize) -> &[usize] {
        &self.categorical[f]
    }

    pub fn sample(&self, i: usize) -> SampleFeatures {
        let k = self.schema.numeric.len();
        SampleFeatures {
            categorical: self.categorical.iter().map(|col| col[i]).collect(),
            numeric: self.numeric[i * k..(i + 1) * k].to_vec(),
        }
    }

    /// Positive rate per task.
    pub fn base_rates(&self) -> Vec<f64> {
        self.labels
            .iter()
            .map(|col| col.iter().map(|&y| f64::from(y)).sum::<f64>() / self.len.max(1) as f64)
            .collect()
    }

    pub fn base_rates_of(&self, indices: &[usize]) -> Vec<f64> {
        self.labels
            .iter()
            .map(|col| indices.iter().map(|&i| f64::from(col[i])).sum::<f64>() / indices.len().max(1) as f64)
            .collect()
    }

    /// Labeled batch over the given rows, in the given order.
    pub fn batch(&self, indices: &[usize]) -> Batch {
        let k = self.schema.numeric.len();
        let mut numeric = Vec::with_capacity(indices.len() * k);
        for &i in indices {
            numeric.extend_from_slice(&self.numeric[i * k..(i + 1) * k]);
        }
        Batch {
            size: indices.len(),
            categorical: self
                .categorical
                .iter()
                .map(|col| indices.iter().map(|&i| col[i]).collect())
                .collect(),
            numeric,
            labels: self
                .labels
                .iter()
                .map(|col| indices.iter().map(|&i| f32::from(col[i])).collect())
                .collect(),
        }
    }

    pub fn write_tsv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "{}", self.schema.header().join("\t"))?;
        let k = self.schema.numeric.len();
        let mut line = String::new();
        for i in 0..self.len {
            line.clear();
            let cells = self
                .labels
                .iter()
                .map(|col| col[i].to_string())
                .chain(self.categorical.iter().map(|col| col[i].to_string()))
                .chain(self.numeric[i * k..(i + 1) * k].iter().map(|v| v.to_string()));
            for (j, cell) in cells.enumerate() {
                if j > 0 {
                    line.push('\t');
                }
                line.push_str(&cell);
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn save_tsv(&self, path: &Path) -> Result<(), DataError> {
        let file = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_tsv(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| DataError::io(path, e))
    }

    pub fn read_tsv(reader: impl BufRead, schema: &DatasetSchema) -> Result<Self, DataError> {
        let mut ds = Dataset::new(schema.clone())?;
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(h) => h.map_err(|e| DataError::io(Path::new("<input>"), e))?,
            None => return Err(DataError::Empty),
        };
        let columns: Vec<&str> = header.split('\t').collect();
        let mut position = HashMap::new();
        for (j, &c) in columns.iter().enumerate() {
            if position.insert(c.to_string(), j).is_some() {
                return Err(DataError::DuplicateColumn(c.to_string()));
            }
        }
        let expected = schema.header();
        let mut order = Vec::with_capacity(expected.len());
        for name in &expected {
            order.push(*position.get(name).ok_or_else(|| DataError::MissingColumn(name.clone()))?);
        }
        if let Some(extra) = columns.iter().find(|c| !expected.iter().any(|e| e == *c)) {
            return Err(DataError::UnexpectedColumn(extra.to_string()));
        }

        let n_tasks = schema.tasks.len();
        let n_cat = schema.categorical.len();
        let mut labels = vec![0u8; n_tasks];
        let mut features = SampleFeatures {
            categorical: vec![0; n_cat],
            numeric: vec![0.0; schema.numeric.len()],
        };
        for (row, line) in lines.enumerate() {
            let line_no = row + 2;
            let line = line.map_err(|e| DataError::io(Path::new("<input>"), e))?;
            if line.is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split('\t').collect();
            if cells.len() != columns.len() {
                return Err(DataError::FieldCount {
                    line: line_no,
                    expected: columns.len(),
                    found: cells.len(),
                });
            }
            let parse_err = |j: usize, reason: String| DataError::Parse {
                line: line_no,
                column: expected[j].clone(),
                value: cells[order[j]].to_string(),
                reason,
            };
            for (j, &col) in order.iter().enumerate() {
                let cell = cells[col];
                if j < n_tasks {
                    labels[j] = match cell {
                        "0" => 0,
                        "1" => 1,
                        _ => return Err(parse_err(j, "label must be 0 or 1".into())),
                    };
                } else if j < n_tasks + n_cat {
                    let f = j - n_tasks;
                    let id: usize = cell.parse().map_err(|e| parse_err(j, format!("{e}")))?;
                    let vocab = schema.categorical[f].vocab_size;
                    if id >= vocab {
                        return Err(DataError::OutOfVocabulary {
                            line: line_no,
                            field: schema.categorical[f].name.clone(),
                            id,
                            vocab,
                        });
                    }
                    features.categorical[f] = id;
                } else {
                    let v: f32 = cell.parse().map_err(|e| parse_err(j, format!("{e}")))?;
                    if !v.is_finite() {
                        return Err(parse_err(j, "not finite".into()));
                    }
                    features.numeric[j - n_tasks - n_cat] = v;
                }
            }
            ds.push(&features, &labels)?;
        }
        Ok(ds)
    }

    pub fn load_tsv(path: &Path, schema: &DatasetSchema) -> Result<Self, DataError> {
        let file = fs::File::open(path).map_err(|e| DataError::io(path, e))?;
        Self::read_tsv(BufReader::new(file), schema)
    }
}

/// Reads only the header of a dataset file and infers a schema, taking each
/// categorical vocabulary as one more than the largest id in the file.
pub fn infer_schema(path: &Path) -> Result<DatasetSchema, DataError> {
    let file = fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or(DataError::Empty)?
        .map_err(|e| DataError::io(path, e))?;
    let mut schema = DatasetSchema {
        tasks: Vec::new(),
        categorical: Vec::new(),
        numeric: Vec::new(),
    };
    let mut cat_cols = Vec::new();
    for (j, col) in header.split('\t').enumerate() {
        if let Some(t) = col.strip_prefix("label:") {
            schema.tasks.push(t.to_string());
        } else if let Some(c) = col.strip_prefix("cat:") {
            schema.categorical.push(CategoricalColumn {
                name: c.to_string(),
                vocab_size: 1,
            });
            cat_cols.push(j);
        } else if let Some(n) = col.strip_prefix("num:") {
            schema.numeric.push(n.to_string());
        } else {
            return Err(DataError::UnexpectedColumn(col.to_string()));
        }
    }
    for (row, line) in lines.enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        let cells: Vec<&str> = line.split('\t').collect();
        for (f, &j) in cat_cols.iter().enumerate() {
            let cell = cells.get(j).copied().unwrap_or("");
            let id: usize = cell.parse().map_err(|e| DataError::Parse {
                line: row + 2,
                column: format!("cat:{}", schema.categorical[f].name),
                value: cell.to_string(),
                reason: format!("{e}"),
            })?;
            let v = &mut schema.categorical[f].vocab_size;
            *v = (*v).max(id + 1);
        }
    }
    schema.validate()?;
    Ok(schema)
}

fn split_hash(index: u64, salt: u64) -> u64 {
    let mut z = index ^ salt.rotate_left(32);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Whether row `index` falls in the held-out tenth for this salt.
pub fn is_eval_row(index: usize, salt: u64) -> bool {
    split_hash(index as u64, salt).is_multiple_of(10)
}

/// Deterministic 90/10 split by row index: `(train, eval)`.
pub fn split_indices(n: usize, salt: u64) -> (Vec<usize>, Vec<usize>) {
    (0..n).partition(|&i| !is_eval_row(i, salt))
}

/// Shuffles `indices` with `seed` and cuts them into batches of at most
/// `batch_size` rows.
pub fn shuffled_batches(indices: &[usize], batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema() -> DatasetSchema {
        DatasetSchema {
            tasks: vec!["click".into(), "like".into()],
            categorical: vec![CategoricalColumn {
                name: "user".into(),
                vocab_size: 10,
            }],
            numeric: vec!["age".into()],
        }
    }

    #[test]
    fn loads_known_cells() {
        let text = "label:click\tlabel:like\tcat:user\tnum:age\n1\t0\t3\t0.5\n0\t1\t9\t-2.25\n";
        let ds = Dataset::read_tsv(text.as_bytes(), &schema()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.task_labels(0), &[1, 0]);
        assert_eq!(ds.task_labels(1), &[0, 1]);
        assert_eq!(ds.categorical_column(0), &[3, 9]);
        assert_eq!(ds.sample(1).numeric, vec![-2.25]);
    }

    #[test]
    fn column_order_is_free_on_load() {
        let text = "num:age\tcat:user\tlabel:like\tlabel:click\n0.5\t3\t1\t0\n";
        let ds = Dataset::read_tsv(text.as_bytes(), &schema()).unwrap();
        assert_eq!(ds.labels_of(0), vec![0, 1]);
        let mut out = Vec::new();
        ds.write_tsv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "label:click\tlabel:like\tcat:user\tnum:age\n0\t1\t3\t0.5\n"
        );
    }

    #[test]
    fn header_mismatch_names_column() {
        let text = "label:click\tcat:user\tnum:age\n1\t3\t0.5\n";
        match Dataset::read_tsv(text.as_bytes(), &schema()) {
            Err(DataError::MissingColumn(c)) => assert_eq!(c, "label:like"),
            other => panic!("{other:?}"),
        }
        let text = "label:click\tlabel:like\tcat:user\tnum:age\tnum:x\n";
        assert!(matches!(
            Dataset::read_tsv(text.as_bytes(), &schema()),
            Err(DataError::UnexpectedColumn(c)) if c == "num:x"
        ));
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let bad_label = "label:click\tlabel:like\tcat:user\tnum:age\n1\t0\t3\t0.5\n2\t0\t3\t0.5\n";
        assert!(matches!(
            Dataset::read_tsv(bad_label.as_bytes(), &schema()),
            Err(DataError::Parse { line: 3, column, .. }) if column == "label:click"
        ));
        let oov = "label:click\tlabel:like\tcat:user\tnum:age\n1\t0\t10\t0.5\n";
        assert!(matches!(
            Dataset::read_tsv(oov.as_bytes(), &schema()),
            Err(DataError::OutOfVocabulary { line: 2, id: 10, .. })
        ));
        let short = "label:click\tlabel:like\tcat:user\tnum:age\n1\t0\t3\n";
        assert!(matches!(
            Dataset::read_tsv(short.as_bytes(), &schema()),
            Err(DataError::FieldCount { line: 2, expected: 4, found: 3 })
        ));
        let nan = "label:click\tlabel:like\tcat:user\tnum:age\n1\t0\t3\tabc\n";
        assert!(matches!(
            Dataset::read_tsv(nan.as_bytes(), &schema()),
            Err(DataError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn split_is_about_one_tenth_and_stable() {
        let (train, eval) = split_indices(100_000, 7);
        assert_eq!(train.len() + eval.len(), 100_000);
        assert!((eval.len() as f64 - 10_000.0).abs() < 400.0, "{}", eval.len());
        assert_eq!(split_indices(100_000, 7).1, eval);
        assert_ne!(split_indices(100_000, 8).1, eval);
    }

    #[test]
    fn batches_cover_every_row_once() {
        let idx: Vec<usize> = (0..1000).collect();
        let batches = shuffled_batches(&idx, 64, 3);
        assert_eq!(batches.len(), 16);
        let mut all: Vec<usize> = batches.concat();
        assert_ne!(all, idx);
        all.sort_unstable();
        assert_eq!(all, idx);
        assert_eq!(shuffled_batches(&idx, 64, 3), batches);
    }

    #[test]
    fn batch_gathers_rows() {
        let text = "label:click\tlabel:like\tcat:user\tnum:age\n1\t0\t3\t0.5\n0\t1\t9\t-2.25\n";
        let ds = Dataset::read_tsv(text.as_bytes(), &schema()).unwrap();
        let b = ds.batch(&[1, 0]);
        assert_eq!(b.categorical, vec![vec![9, 3]]);
        assert_eq!(b.numeric, vec![-2.25, 0.5]);
        assert_eq!(b.labels, vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn infers_schema_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.tsv");
        fs::write(&path, "label:click\tlabel:like\tcat:user\tnum:age\n1\t0\t3\t0.5\n0\t1\t9\t-2.25\n").unwrap();
        let s = infer_schema(&path).unwrap();
        assert_eq!(s.categorical[0].vocab_size, 10);
        assert_eq!(s.tasks, vec!["click", "like"]);
        let ds = Dataset::load_tsv(&path, &s).unwrap();
        assert_eq!(ds.len(), 2);
    }

    proptest! {
        #[test]
        fn tsv_round_trip_preserves_values(
            rows in prop::collection::vec((0u8..2, 0u8..2, 0usize..10, any::<f32>().prop_filter("finite", |v| v.is_finite())), 1..40)
        ) {
            let mut ds = Dataset::new(schema()).unwrap();
            for &(a, b, u, x) in &rows {
                ds.push(&SampleFeatures { categorical: vec![u], numeric: vec![x] }, &[a, b]).unwrap();
            }
            let mut buf = Vec::new();
            ds.write_tsv(&mut buf).unwrap();
            let back = Dataset::read_tsv(buf.as_slice(), &schema()).unwrap();
            prop_assert_eq!(&back, &ds);
            for i in 0..ds.len() {
                prop_assert_eq!(back.sample(i).numeric[0].to_bits(), ds.sample(i).numeric[0].to_bits());
            }
        }
    }
}
