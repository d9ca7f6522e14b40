//! Interpretability exports: attention vs. label correlation, adjacency
//! snapshots with class-block means, and the feature ablation table.

use serde::{Deserialize, Serialize};

use crate::autodiff::Matrix;
use crate::data::{select_features, Dataset, FeatureSelection};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::trainer::{cross_validate, CvSummary, TrainConfig};

/// Pearson r between a column and the integer class indices; `None` when
/// either side has zero variance.
pub fn pearson(column: &[f64], labels: &[usize]) -> Result<Option<f64>> {
    if column.len() != labels.len() {
        return Err(Error::Argument(format!(
            "pearson: {} values vs {} labels",
            column.len(),
            labels.len()
        )));
    }
    if column.len() < 2 {
        return Err(Error::Argument("pearson needs at least two points".into()));
    }
    let n = column.len() as f64;
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let mx = column.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in column.iter().zip(&y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureReportRow {
    pub feature: String,
    pub attention: f64,
    pub pearson_r: Option<f64>,
}

/// One row per feature, attention descending, ties by name.
pub fn feature_report_from_attention(attention: &[f64], dataset: &Dataset) -> Result<Vec<FeatureReportRow>> {
    if attention.len() != dataset.feature_count() {
        return Err(Error::Argument(format!(
            "{} attention values for {} features",
            attention.len(),
            dataset.feature_count()
        )));
    }
    let mut rows = Vec::with_capacity(attention.len());
    for (j, name) in dataset.feature_names.iter().enumerate() {
        let col: Vec<f64> = dataset.features.column(j).to_vec();
        rows.push(FeatureReportRow {
            feature: name.clone(),
            attention: attention[j],
            pearson_r: pearson(&col, &dataset.labels)?,
        });
    }
    rows.sort_by(|a, b| {
        b.attention
            .total_cmp(&a.attention)
            .then_with(|| a.feature.cmp(&b.feature))
    });
    Ok(rows)
}

pub fn feature_report(model: &Model, dataset: &Dataset) -> Result<Vec<FeatureReportRow>> {
    feature_report_from_attention(&model.attention(), dataset)
}

pub fn feature_report_csv(rows: &[FeatureReportRow]) -> String {
    let mut out = String::from("feature,attention,pearson_r\n");
    for r in rows {
        let name = if r.feature.contains([',', '"', '\n']) {
            format!("\"{}\"", r.feature.replace('"', "\"\""))
        } else {
            r.feature.clone()
        };
        let pr = r.pearson_r.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{name},{},{pr}\n", r.attention));
    }
    out
}

pub fn parse_feature_report(text: &str) -> Result<Vec<FeatureReportRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |c: &str| Error::Ingestion {
            row: i + 1,
            column: c.to_string(),
            msg: "cannot parse value".into(),
        };
        let attention = rec.get(1).unwrap_or("").trim().parse().map_err(|_| bad("attention"))?;
        let pr = rec.get(2).unwrap_or("").trim();
        let pearson_r = if pr.is_empty() {
            None
        } else {
            Some(pr.parse().map_err(|_| bad("pearson_r"))?)
        };
        rows.push(FeatureReportRow {
            feature: rec.get(0).unwrap_or("").to_string(),
            attention,
            pearson_r,
        });
    }
    Ok(rows)
}

/// Mean edge weight within and across classes, diagonal excluded.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub intra_mean: f64,
    pub inter_mean: f64,
}

pub fn block_summary(adjacency: &Matrix, labels: &[usize]) -> BlockSummary {
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0usize, 0.0, 0usize);
    for ((i, j), &w) in adjacency.indexed_iter() {
        if i == j {
            continue;
        }
        if labels[i] == labels[j] {
            intra += w;
            ni += 1;
        } else {
            inter += w;
            nx += 1;
        }
    }
    BlockSummary {
        intra_mean: if ni > 0 { intra / ni as f64 } else { 0.0 },
        inter_mean: if nx > 0 { inter / nx as f64 } else { 0.0 },
    }
}

/// Adjacency reordered so classes are contiguous, ready for a heatmap.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyExport {
    /// `order[r]` is the original node shown at row `r`.
    pub order: Vec<usize>,
    pub matrix: Matrix,
    pub summary: BlockSummary,
}

impl AdjacencyExport {
    pub fn to_csv(&self) -> String {
        crate::io::matrix_csv(&self.matrix)
    }
}

pub fn export_adjacency(adjacency: &Matrix, labels: &[usize]) -> AdjacencyExport {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by_key(|&i| (labels[i], i));
    let n = order.len();
    let matrix = Matrix::from_shape_fn((n, n), |(r, c)| adjacency[[order[r], order[c]]]);
    AdjacencyExport {
        order,
        matrix,
        summary: block_summary(adjacency, labels),
    }
}

/// Snapshot of `model`'s graph over `x` (already standardized).
pub fn adjacency_export(model: &Model, x: &Matrix, labels: &[usize]) -> Result<AdjacencyExport> {
    let (g, _) = model.evaluate(x)?;
    Ok(export_adjacency(&g, labels))
}

/// Cross-validated results for all features, all but the selected ones,
/// and only the selected ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub selected_features: Vec<String>,
    pub all: CvSummary,
    pub complement: CvSummary,
    pub selected: CvSummary,
}

pub fn ablation_selections(selected: &[String]) -> Result<[(&'static str, FeatureSelection); 3]> {
    if selected.is_empty() {
        return Err(Error::Argument("ablation needs a non-empty feature selection".into()));
    }
    Ok([
        ("all", FeatureSelection::All),
        ("complement", FeatureSelection::Exclude(selected.to_vec())),
        ("selected", FeatureSelection::Include(selected.to_vec())),
    ])
}

/// Runs the three selections. `precomputed_all` skips retraining the
/// all-features row when the caller already has it.
pub fn ablation_run_with(
    dataset: &Dataset,
    selected: &[String],
    config: &TrainConfig,
    jobs: usize,
    precomputed_all: Option<CvSummary>,
) -> Result<AblationTable> {
    let [(_, all), (_, comp), (_, sel)] = ablation_selections(selected)?;
    let comp_ds = select_features(dataset, &comp)?;
    let sel_ds = select_features(dataset, &sel)?;
    let all = match precomputed_all {
        Some(s) => s,
        None => cross_validate(&select_features(dataset, &all)?, config, jobs)?,
    };
    let top_k = |ds: &Dataset| TrainConfig {
        top_k: config.top_k.min(ds.feature_count()),
        ..config.clone()
    };
    Ok(AblationTable {
        selected_features: selected.to_vec(),
        all,
        complement: cross_validate(&comp_ds, &top_k(&comp_ds), jobs)?,
        selected: cross_validate(&sel_ds, &top_k(&sel_ds), jobs)?,
    })
}

pub fn ablation_run(
    dataset: &Dataset,
    selected: &[String],
    config: &TrainConfig,
    jobs: usize,
) -> Result<AblationTable> {
    ablation_run_with(dataset, selected, config, jobs, None)
}

/// Names of the `k` highest-attention features.
pub fn top_features(attention: &[f64], names: &[String], k: usize) -> Vec<String> {
    crate::iam::rank_descending(attention)
        .into_iter()
        .take(k)
        .map(|j| names[j].clone())
        .collect()
}
