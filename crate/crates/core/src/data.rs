//! Datasets: CSV ingestion, standardization, fold plans, the planted-feature
//! generator and column selection.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

/// N patients × D features with dense class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub feature_names: Vec<String>,
    /// Original label strings; `labels[i]` indexes into this.
    pub class_names: Vec<String>,
    pub label_column: String,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        feature_names: Vec<String>,
        class_names: Vec<String>,
        label_column: impl Into<String>,
    ) -> Result<Self> {
        let (n, d) = features.dim();
        if labels.len() != n {
            return Err(Error::Argument(format!(
                "{} labels for {n} rows",
                labels.len()
            )));
        }
        if feature_names.len() != d {
            return Err(Error::Argument(format!(
                "{} feature names for {d} columns",
                feature_names.len()
            )));
        }
        if d == 0 {
            return Err(Error::Argument("dataset has no feature columns".into()));
        }
        let mut seen = HashSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Argument(format!("duplicate feature name `{name}`")));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_names.len()) {
            return Err(Error::Argument(format!(
                "label {bad} out of range for {} classes",
                class_names.len()
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::Argument("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            labels,
            feature_names,
            class_names,
            label_column: label_column.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_count(&self) -> usize {
        self.feature_names.len()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// Rate of the most frequent class.
    pub fn majority_rate(&self) -> f64 {
        let mut counts = vec![0usize; self.class_count()];
        for &y in &self.labels {
            counts[y] += 1;
        }
        *counts.iter().max().unwrap_or(&0) as f64 / self.len().max(1) as f64
    }
}

fn ordered_classes(values: &BTreeSet<String>) -> Vec<String> {
    let mut classes: Vec<String> = values.iter().cloned().collect();
    let numeric: Option<Vec<f64>> = classes.iter().map(|v| v.trim().parse::<f64>().ok()).collect();
    if let Some(nums) = numeric {
        let mut paired: Vec<(f64, String)> = nums.into_iter().zip(classes).collect();
        paired.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        classes = paired.into_iter().map(|(_, s)| s).collect();
    }
    classes
}

/// Reads a header-bearing CSV; empty feature cells are imputed with the column mean.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, label_column)
}

pub fn read_csv<R: Read>(reader: R, label_column: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Ingestion {
            row: 0,
            column: label_column.to_string(),
            msg: "label column not found in header".into(),
        })?;
    let feature_cols: Vec<usize> = (0..headers.len()).filter(|&i| i != label_idx).collect();

    let mut cells: Vec<Vec<Option<f64>>> = Vec::new();
    let mut raw_labels = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let label = record.get(label_idx).map(str::trim).unwrap_or("");
        if label.is_empty() {
            return Err(Error::Ingestion {
                row,
                column: label_column.to_string(),
                msg: "missing label".into(),
            });
        }
        raw_labels.push(label.to_string());
        let mut values = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let cell = record.get(c).map(str::trim).unwrap_or("");
            if cell.is_empty() {
                values.push(None);
            } else {
                let v: f64 = cell.parse().map_err(|_| Error::Ingestion {
                    row,
                    column: headers[c].clone(),
                    msg: format!("cannot parse `{cell}` as a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Ingestion {
                        row,
                        column: headers[c].clone(),
                        msg: format!("non-finite value `{cell}`"),
                    });
                }
                values.push(Some(v));
            }
        }
        cells.push(values);
    }

    let n = cells.len();
    let d = feature_cols.len();
    let mut features = Matrix::zeros((n, d));
    for j in 0..d {
        let present: Vec<f64> = cells.iter().filter_map(|row| row[j]).collect();
        // An all-empty column imputes to zero.
        let mean = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        for i in 0..n {
            features[[i, j]] = cells[i][j].unwrap_or(mean);
        }
    }

    let distinct: BTreeSet<String> = raw_labels.iter().cloned().collect();
    let class_names = ordered_classes(&distinct);
    let lookup: HashMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let labels = raw_labels.iter().map(|s| lookup[s.as_str()]).collect();
    let feature_names = feature_cols.iter().map(|&c| headers[c].clone()).collect();
    Dataset::new(features, labels, feature_names, class_names, label_column)
}

/// Writes features followed by the label column.
pub fn write_csv<W: Write>(d: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = d.feature_names.iter().map(String::as_str).collect();
    header.push(&d.label_column);
    w.write_record(&header)?;
    for (i, row) in d.features.rows().into_iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        rec.push(d.class_names[d.labels[i]].clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(d, &mut buf)?;
    crate::io::write_atomic(path.as_ref(), &buf)
}

/// Per-column location and scale used by [`standardize`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
}

/// Z-scores every column with population statistics taken from `fit_rows`
/// (all rows when `None`). Zero-variance columns become all zero.
pub fn standardize(d: &Dataset, fit_rows: Option<&[usize]>) -> (Dataset, Vec<ColumnStats>) {
    let all: Vec<usize>;
    let rows = match fit_rows {
        Some(r) => r,
        None => {
            all = (0..d.len()).collect();
            &all
        }
    };
    let mut out = d.clone();
    let mut stats = Vec::with_capacity(d.feature_count());
    for j in 0..d.feature_count() {
        let col = d.features.column(j);
        let m = rows.len().max(1) as f64;
        let mean = rows.iter().map(|&i| col[i]).sum::<f64>() / m;
        let var = rows.iter().map(|&i| (col[i] - mean).powi(2)).sum::<f64>() / m;
        let std = var.sqrt();
        let mut target = out.features.column_mut(j);
        if std > 0.0 {
            target.mapv_inplace(|x| (x - mean) / std);
        } else {
            target.fill(0.0);
        }
        stats.push(ColumnStats {
            mean,
            std: if std > 0.0 { std } else { 0.0 },
        });
    }
    (out, stats)
}

/// Assignment of every node to one of `k` test folds.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    pub k: usize,
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Deterministic k-fold split. Stratified mode deals each shuffled class
/// round-robin across folds, continuing where the previous class stopped.
pub fn make_folds(labels: &[usize], k: usize, stratified: bool, seed: u64) -> Result<FoldPlan> {
    let n = labels.len();
    if k < 2 {
        return Err(Error::Argument(format!("fold count {k} must be at least 2")));
    }
    if k > n {
        return Err(Error::Argument(format!("fold count {k} exceeds node count {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignments = vec![0usize; n];
    if stratified {
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut next = 0usize;
        for c in 0..classes {
            let mut members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            if members.len() < k {
                return Err(Error::Argument(format!(
                    "stratified folds: class {c} has {} nodes, fewer than k = {k}",
                    members.len()
                )));
            }
            members.shuffle(&mut rng);
            for i in members {
                assignments[i] = next % k;
                next += 1;
            }
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for (pos, i) in order.into_iter().enumerate() {
            assignments[i] = pos % k;
        }
    }
    Ok(FoldPlan {
        seed,
        k,
        assignments,
    })
}

/// Parameters of the planted-feature benchmark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n: usize,
    pub d: usize,
    pub k_informative: usize,
    pub classes: usize,
    pub class_sep: f64,
    pub noise_sigma: f64,
    pub cluster_sep: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 300,
            d: 50,
            k_informative: 4,
            classes: 3,
            class_sep: 1.0,
            noise_sigma: 0.5,
            cluster_sep: 1.0,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config("synth.classes must be at least 2".into()));
        }
        if self.d == 0 {
            return Err(Error::Config("synth.d must be at least 1".into()));
        }
        if self.k_informative > self.d {
            return Err(Error::Config(format!(
                "synth.k_informative ({}) exceeds synth.d ({})",
                self.k_informative, self.d
            )));
        }
        if self.n < self.classes {
            return Err(Error::Config("synth.n must be at least synth.classes".into()));
        }
        for (name, v) in [
            ("synth.class_sep", self.class_sep),
            ("synth.noise_sigma", self.noise_sigma),
            ("synth.cluster_sep", self.cluster_sep),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative")));
            }
        }
        Ok(())
    }

    /// Parses `default` or comma-separated `key=value` overrides such as `n=120,d=20`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        let text = text.trim();
        if text.is_empty() || text == "default" {
            return Ok(spec);
        }
        for part in text.split(',') {
            let (key, value) = part.split_once('=').ok_or_else(|| {
                Error::Config(format!("synth spec entry `{part}` is not key=value"))
            })?;
            let bad = || Error::Config(format!("synth.{key}: cannot parse `{value}`"));
            match key.trim() {
                "n" => spec.n = value.parse().map_err(|_| bad())?,
                "d" => spec.d = value.parse().map_err(|_| bad())?,
                "k" | "k_informative" => spec.k_informative = value.parse().map_err(|_| bad())?,
                "c" | "classes" => spec.classes = value.parse().map_err(|_| bad())?,
                "class_sep" => spec.class_sep = value.parse().map_err(|_| bad())?,
                "noise_sigma" => spec.noise_sigma = value.parse().map_err(|_| bad())?,
                "cluster_sep" => spec.cluster_sep = value.parse().map_err(|_| bad())?,
                "seed" => spec.seed = value.parse().map_err(|_| bad())?,
                other => return Err(Error::Config(format!("unknown synth key `{other}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// Generates the planted benchmark and the sorted indices of its informative columns.
///
/// Informative columns carry a class mean (spaced `class_sep` apart and
/// centred on zero) plus a per-class cluster offset of norm `cluster_sep`
/// spread over the informative dimensions, plus `N(0, noise_sigma²)`.
/// Every other column is pure `N(0, 1)`.
pub fn synth_planted(spec: &SynthSpec) -> Result<(Dataset, Vec<usize>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = spec.classes;

    let mut labels: Vec<usize> = (0..spec.n).map(|i| i % c).collect();
    labels.shuffle(&mut rng);

    let mut informative: Vec<usize> =
        rand::seq::index::sample(&mut rng, spec.d, spec.k_informative).into_vec();
    informative.sort_unstable();

    let k = spec.k_informative;
    let offsets: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            let v: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter().map(|x| x / norm * spec.cluster_sep).collect()
            } else {
                vec![0.0; k]
            }
        })
        .collect();

    let slot: HashMap<usize, usize> = informative.iter().enumerate().map(|(s, &j)| (j, s)).collect();
    let centre = (c as f64 - 1.0) / 2.0;
    let mut features = Matrix::zeros((spec.n, spec.d));
    for i in 0..spec.n {
        let y = labels[i];
        for j in 0..spec.d {
            let z: f64 = StandardNormal.sample(&mut rng);
            features[[i, j]] = match slot.get(&j) {
                Some(&s) => {
                    (y as f64 - centre) * spec.class_sep + offsets[y][s] + spec.noise_sigma * z
                }
                None => z,
            };
        }
    }

    let width = (spec.d.saturating_sub(1)).to_string().len();
    let names = (0..spec.d).map(|j| format!("f{j:0width$}")).collect();
    let classes = (0..c).map(|y| y.to_string()).collect();
    let ds = Dataset::new(features, labels, names, classes, "label")?;
    Ok((ds, informative))
}

/// Column filter used by the ablation protocol.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSelection {
    All,
    Include(Vec<String>),
    Exclude(Vec<String>),
}

/// Keeps the selected columns in their original order.
pub fn select_features(d: &Dataset, sel: &FeatureSelection) -> Result<Dataset> {
    let names = match sel {
        FeatureSelection::All => return Ok(d.clone()),
        FeatureSelection::Include(n) | FeatureSelection::Exclude(n) => n,
    };
    let unknown: Vec<&str> = names
        .iter()
        .filter(|n| d.feature_index(n).is_none())
        .map(String::as_str)
        .collect();
    if !unknown.is_empty() {
        return Err(Error::Argument(format!(
            "unknown feature name(s): {}",
            unknown.join(", ")
        )));
    }
    let wanted: HashSet<&str> = names.iter().map(String::as_str).collect();
    let include = matches!(sel, FeatureSelection::Include(_));
    let keep: Vec<usize> = (0..d.feature_count())
        .filter(|&j| wanted.contains(d.feature_names[j].as_str()) == include)
        .collect();
    if keep.is_empty() {
        return Err(Error::Argument("feature selection leaves no columns".into()));
    }
    let features = d.features.select(ndarray::Axis(1), &keep);
    let feature_names = keep.iter().map(|&j| d.feature_names[j].clone()).collect();
    Dataset::new(
        features,
        d.labels.clone(),
        feature_names,
        d.class_names.clone(),
        d.label_column.clone(),
    )
}
