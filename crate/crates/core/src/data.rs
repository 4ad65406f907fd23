//! CSV ingestion, chronological splits and sliding windows.

use std::ops::Range;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A multivariate table: timestamp column dropped, `[rows, D]` values.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub columns: Vec<String>,
    pub values: Tensor,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn vars(&self) -> usize {
        self.values.shape()[1]
    }
}

/// Reads a CSV whose first column is a timestamp and whose remaining
/// columns are numeric. Row numbers in errors are 1-based file lines.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.len() < 2 {
        return Err(Error::EmptyData(format!(
            "{}: need a timestamp column and at least one value column",
            path.display()
        )));
    }
    let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let d = columns.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i + 2;
        if rec.len() != d + 1 {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                row: line,
                expected: d + 1,
                found: rec.len(),
            });
        }
        for (c, cell) in rec.iter().enumerate().skip(1) {
            let v: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| Error::NonNumeric {
                path: path.to_path_buf(),
                row: line,
                col: c + 1,
                value: cell.to_string(),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyData(format!("{}: no data rows", path.display())));
    }
    Ok(Dataset {
        columns,
        values: Tensor::new(&[rows, d], values)?,
    })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{}: {other:?}", path.display())),
    }
}

/// Row ranges of the three chronological splits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Explicit `(train, val, test)` row counts, or 70/10/20 of `rows`.
pub fn split(rows: usize, sizes: Option<(usize, usize, usize)>) -> Result<Splits> {
    let (a, b, c) = match sizes {
        Some((a, b, c)) => {
            if a == 0 || b == 0 || c == 0 {
                return Err(Error::Config("split sizes must be positive".into()));
            }
            if a + b + c > rows {
                return Err(Error::Config(format!("split sizes {a}+{b}+{c} exceed {rows} rows")));
            }
            (a, b, c)
        }
        None => {
            let a = rows * 7 / 10;
            let c = rows * 2 / 10;
            (a, rows - a - c, c)
        }
    };
    if a == 0 || b == 0 || c == 0 {
        return Err(Error::Config(format!("{rows} rows are too few to split")));
    }
    Ok(Splits {
        train: 0..a,
        val: a..a + b,
        test: a + b..a + b + c,
    })
}

/// Window start offsets over `rows` rows at the given stride.
pub fn window_starts(rows: usize, seq_len: usize, pred_len: usize, stride: usize) -> Vec<usize> {
    let span = seq_len + pred_len;
    if rows < span || stride == 0 {
        return Vec::new();
    }
    (0..=rows - span).step_by(stride).collect()
}

/// Sliding windows over a shared value matrix.
#[derive(Clone, Debug)]
pub struct WindowSet {
    data: Arc<Tensor>,
    starts: Vec<usize>,
    seq_len: usize,
    pred_len: usize,
}

impl WindowSet {
    /// Windows whose targets lie inside `targets`. Inputs may reach back
    /// into earlier rows, but not before `floor`.
    pub fn new(data: Arc<Tensor>, targets: Range<usize>, floor: usize, seq_len: usize, pred_len: usize) -> Self {
        let first = targets.start.saturating_sub(seq_len).max(floor);
        let rows = targets.end.saturating_sub(first);
        let starts = window_starts(rows, seq_len, pred_len, 1).into_iter().map(|s| s + first).collect();
        WindowSet {
            data,
            starts,
            seq_len,
            pred_len,
        }
    }

    /// Every window fully inside `range`.
    pub fn within(data: Arc<Tensor>, range: Range<usize>, seq_len: usize, pred_len: usize) -> Self {
        let starts = window_starts(range.len(), seq_len, pred_len, 1).into_iter().map(|s| s + range.start).collect();
        WindowSet {
            data,
            starts,
            seq_len,
            pred_len,
        }
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn pred_len(&self) -> usize {
        self.pred_len
    }

    pub fn vars(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn data(&self) -> &Arc<Tensor> {
        &self.data
    }

    fn rows(&self, from: usize, len: usize) -> &[f64] {
        let d = self.vars();
        &self.data.data()[from * d..(from + len) * d]
    }

    /// `([L, D], [H, D])` of window `i`.
    pub fn sample(&self, i: usize) -> Result<(Tensor, Tensor)> {
        let s = *self
            .starts
            .get(i)
            .ok_or_else(|| Error::Config(format!("window {i} out of range (have {})", self.len())))?;
        let d = self.vars();
        Ok((
            Tensor::new(&[self.seq_len, d], self.rows(s, self.seq_len).to_vec())?,
            Tensor::new(&[self.pred_len, d], self.rows(s + self.seq_len, self.pred_len).to_vec())?,
        ))
    }

    /// Stacked `([B, L, D], [B, H, D])` for the given window indices.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Tensor)> {
        let d = self.vars();
        let mut x = Vec::with_capacity(idx.len() * self.seq_len * d);
        let mut y = Vec::with_capacity(idx.len() * self.pred_len * d);
        for &i in idx {
            let s = *self
                .starts
                .get(i)
                .ok_or_else(|| Error::Config(format!("window {i} out of range (have {})", self.len())))?;
            x.extend_from_slice(self.rows(s, self.seq_len));
            y.extend_from_slice(self.rows(s + self.seq_len, self.pred_len));
        }
        Ok((
            Tensor::new(&[idx.len(), self.seq_len, d], x)?,
            Tensor::new(&[idx.len(), self.pred_len, d], y)?,
        ))
    }

    /// The chronologically first `⌈fraction·len⌉` windows.
    pub fn few_shot(&self, fraction: f64) -> Result<WindowSet> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("few-shot fraction {fraction} must lie in (0, 1]")));
        }
        let n = few_shot_count(self.len(), fraction);
        Ok(WindowSet {
            starts: self.starts[..n].to_vec(),
            ..self.clone()
        })
    }
}

/// `⌈fraction·count⌉`, robust to representation error in `fraction`.
pub fn few_shot_count(count: usize, fraction: f64) -> usize {
    ((fraction * count as f64 - 1e-9).ceil().max(0.0) as usize).min(count)
}

/// Per-column standardisation fitted on training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardScaler {
    pub fn fit(values: &Tensor, rows: Range<usize>) -> Result<Self> {
        let d = values.shape()[1];
        if rows.is_empty() {
            return Err(Error::EmptyData("scaler fitted on no rows".into()));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        for r in rows.clone() {
            for c in 0..d {
                mean[c] += values.data()[r * d + c] / n;
            }
        }
        for r in rows {
            for c in 0..d {
                var[c] += (values.data()[r * d + c] - mean[c]).powi(2) / n;
            }
        }
        let std = var.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Ok(StandardScaler { mean, std })
    }

    pub fn transform(&self, values: &Tensor) -> Tensor {
        let d = self.mean.len();
        Tensor::from_fn(values.shape(), |i| (values.data()[i] - self.mean[i % d]) / self.std[i % d])
    }

    pub fn inverse(&self, values: &Tensor) -> Tensor {
        let d = self.mean.len();
        Tensor::from_fn(values.shape(), |i| values.data()[i] * self.std[i % d] + self.mean[i % d])
    }
}

/// Train / val / test windows over one dataset.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub dataset: Dataset,
    pub splits: Splits,
    pub scaler: Option<StandardScaler>,
    pub train: WindowSet,
    pub val: WindowSet,
    pub test: WindowSet,
}

impl Prepared {
    pub fn window_set(&self, name: &str) -> Result<&WindowSet> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!("unknown split {other:?}; expected train, val or test"))),
        }
    }
}

/// Splits, optionally standardises and windows a dataset. Validation and
/// test windows borrow up to `seq_len` lookback rows from the preceding
/// split; test inputs never reach into training rows.
pub fn prepare(
    dataset: Dataset,
    sizes: Option<(usize, usize, usize)>,
    seq_len: usize,
    pred_len: usize,
    scale: bool,
) -> Result<Prepared> {
    let splits = split(dataset.rows(), sizes)?;
    let scaler = if scale {
        Some(StandardScaler::fit(&dataset.values, splits.train.clone())?)
    } else {
        None
    };
    let values = Arc::new(match &scaler {
        Some(s) => s.transform(&dataset.values),
        None => dataset.values.clone(),
    });
    let train = WindowSet::within(values.clone(), splits.train.clone(), seq_len, pred_len);
    let val = WindowSet::new(values.clone(), splits.val.clone(), 0, seq_len, pred_len);
    let test = WindowSet::new(values, splits.test.clone(), splits.val.start, seq_len, pred_len);
    Ok(Prepared {
        dataset,
        splits,
        scaler,
        train,
        val,
        test,
    })
}

/// A seeded univariate sinusoid `sin(2πt/period) + noise·ε` with standard
/// normal `ε`, for smoke tests and examples.
pub fn sinusoid(rows: usize, period: f64, noise: f64, seed: u64) -> Dataset {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows)
        .map(|t| {
            let e: f64 = StandardNormal.sample(&mut rng);
            (std::f64::consts::TAU * t as f64 / period).sin() + noise * e
        })
        .collect();
    Dataset {
        columns: vec!["value".into()],
        values: Tensor::new(&[rows, 1], data).expect("rows x 1"),
    }
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn small_csv() {
        let f = write("date,a,b\n2020-01-01,1,2\n2020-01-02,3.5,-4\n2020-01-03,5,6e1\n");
        let d = load_csv(f.path()).unwrap();
        assert_eq!(d.values.shape(), &[3, 2]);
        assert_eq!(d.values.data(), &[1., 2., 3.5, -4., 5., 60.]);
        assert_eq!(d.columns, vec!["a", "b"]);
    }

    #[test]
    fn ett_header() {
        let f = write("date,HUFL,HULL,MUFL,MULL,LUFL,LULL,OT\n2016-07-01 00:00:00,5.827,2.009,1.599,0.462,4.203,1.340,30.531\n");
        assert_eq!(load_csv(f.path()).unwrap().vars(), 7);
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(load_csv(Path::new("/no/such.csv")), Err(Error::MissingFile(_))));
        let f = write("date,a\n");
        assert!(matches!(load_csv(f.path()), Err(Error::EmptyData(_))));
        let f = write("date,a,b\nt,1,2\nt,3\n");
        assert!(matches!(load_csv(f.path()), Err(Error::RaggedRow { row: 3, expected: 3, found: 2, .. })));
        let f = write("date,a,b\nt,1,x\n");
        match load_csv(f.path()) {
            Err(Error::NonNumeric { row, col, value, .. }) => assert_eq!((row, col, value.as_str()), (2, 3, "x")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn proportional_split() {
        let s = split(100, None).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (70, 10, 20));
        let s = split(20000, Some((8545, 2881, 2881))).unwrap();
        assert_eq!((s.train, s.val, s.test), (0..8545, 8545..11426, 11426..14307));
        assert!(split(10, Some((8, 2, 2))).is_err());
        assert!(split(3, None).is_err());
    }

    #[test]
    fn window_counts() {
        assert_eq!(window_starts(12, 8, 4, 1), vec![0]);
        assert_eq!(window_starts(16, 8, 4, 1).len(), 5);
        for rows in 0..=200 {
            for l in 1..12 {
                for h in 1..6 {
                    let want = if rows >= l + h { rows - l - h + 1 } else { 0 };
                    assert_eq!(window_starts(rows, l, h, 1).len(), want);
                }
            }
        }
    }

    #[test]
    fn adjacency_and_lookback() {
        let data = Arc::new(Tensor::from_fn(&[100, 1], |i| i as f64));
        let s = split(100, None).unwrap();
        let val = WindowSet::new(data.clone(), s.val.clone(), 0, 8, 2);
        let (x, y) = val.sample(0).unwrap();
        assert_eq!(y.data()[0], 70.0);
        assert_eq!(x.data()[0], 62.0);
        for i in 0..val.len() {
            let (x, y) = val.sample(i).unwrap();
            assert_eq!(y.data()[0], x.data()[7] + 1.0);
            assert!(y.data()[1] < 80.0);
        }
        assert_eq!(val.len(), 9);
    }

    #[test]
    fn no_test_leakage() {
        let data = Arc::new(Tensor::from_fn(&[60, 1], |i| i as f64));
        for (l, h) in [(4, 2), (8, 4), (12, 3)] {
            let s = split(60, None).unwrap();
            let test = WindowSet::new(data.clone(), s.test.clone(), s.val.start, l, h);
            for &st in test.starts() {
                assert!(st >= s.train.end, "test input row {st} overlaps training rows");
                assert!(st + l + h <= s.test.end);
            }
        }
    }

    #[test]
    fn few_shot_prefix() {
        let data = Arc::new(Tensor::zeros(&[104, 1]));
        let w = WindowSet::within(data.clone(), 0..104, 4, 1);
        assert_eq!(w.len(), 100);
        let f = w.few_shot(0.05).unwrap();
        assert_eq!(f.starts(), &[0, 1, 2, 3, 4]);
        assert_eq!(w.few_shot(0.1).unwrap().len(), 10);
        assert_eq!(w.few_shot(1.0).unwrap().starts(), w.starts());
        let w10 = WindowSet::within(data, 0..14, 4, 1);
        assert_eq!(w10.few_shot(0.05).unwrap().len(), 1);
        assert!(w.few_shot(0.0).is_err());
        assert!(w.few_shot(1.5).is_err());
    }

    #[test]
    fn scaler_round_trip() {
        let v = Tensor::from_fn(&[10, 2], |i| (i * i) as f64);
        let s = StandardScaler::fit(&v, 0..7).unwrap();
        let t = s.transform(&v);
        assert!(s.inverse(&t).max_abs_diff(&v) < 1e-9);
        let c = StandardScaler::fit(&Tensor::full(&[4, 1], 3.0), 0..4).unwrap();
        assert_eq!(c.std, vec![1.0]);
    }
}
