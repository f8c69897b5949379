use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const METRIC_LABELS: [&str; 5] = ["MCD", "WER", "ASV", "Nat", "Sim"];

/// One system's aggregate scores. Subjective columns are optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub system: String,
    pub mcd: Option<f64>,
    pub wer: Option<f64>,
    pub asv: Option<f64>,
    pub naturalness: Option<f64>,
    pub similarity: Option<f64>,
}

impl MetricsRow {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidInput(format!("{}: {what} {v} out of range", self.system)));
        for (what, v, lo, hi) in [
            ("MCD", self.mcd, 0.0, f64::INFINITY),
            ("WER", self.wer, 0.0, f64::INFINITY),
            ("ASV", self.asv, 0.0, 100.0),
            ("naturalness", self.naturalness, 1.0, 5.0),
            ("similarity", self.similarity, 0.0, 100.0),
        ] {
            if let Some(v) = v {
                if !(lo..=hi).contains(&v) {
                    return bad(what, v);
                }
            }
        }
        Ok(())
    }

    fn column(&self, k: usize) -> Result<f64> {
        let v = [self.mcd, self.wer, self.asv, self.naturalness, self.similarity][k];
        v.ok_or_else(|| Error::MissingMetric { system: self.system.clone(), field: METRIC_LABELS[k].to_string() })
    }

    pub fn is_complete(&self) -> bool {
        (0..5).all(|k| self.column(k).is_ok())
    }
}

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch { left: xs.len(), right: ys.len() });
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientRows { required: 2, found: xs.len() });
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    let degenerate = |ss: f64, values: &[f64]| ss <= 1e-20 * values.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    if degenerate(sxx, xs) {
        return Err(Error::DegenerateVariance("first series is constant".into()));
    }
    if degenerate(syy, ys) {
        return Err(Error::DegenerateVariance("second series is constant".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Symmetric 5x5 matrix over MCD, WER, ASV, naturalness and similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub values: [[f64; 5]; 5],
}

impl CorrelationMatrix {
    fn from_upper(upper: [[f64; 5]; 5]) -> Self {
        let mut values = [[1.0; 5]; 5];
        for i in 0..5 {
            for j in i + 1..5 {
                values[i][j] = upper[i][j];
                values[j][i] = upper[i][j];
            }
        }
        Self { labels: METRIC_LABELS.iter().map(|s| s.to_string()).collect(), values }
    }

    /// Largest absolute difference over the upper triangle.
    pub fn max_abs_diff(&self, other: &CorrelationMatrix) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..5 {
            for j in i + 1..5 {
                worst = worst.max((self.values[i][j] - other.values[i][j]).abs());
            }
        }
        worst
    }
}

pub fn correlation_matrix(rows: &[MetricsRow]) -> Result<CorrelationMatrix> {
    if rows.len() < 3 {
        return Err(Error::InsufficientRows { required: 3, found: rows.len() });
    }
    let mut cols = vec![Vec::with_capacity(rows.len()); 5];
    for r in rows {
        for (k, col) in cols.iter_mut().enumerate() {
            col.push(r.column(k)?);
        }
    }
    let mut upper = [[0.0; 5]; 5];
    for i in 0..5 {
        for j in i + 1..5 {
            upper[i][j] = pearson(&cols[i], &cols[j]).map_err(|e| match e {
                Error::DegenerateVariance(_) => {
                    Error::DegenerateVariance(format!("{} vs {}", METRIC_LABELS[i], METRIC_LABELS[j]))
                }
                other => other,
            })?;
        }
    }
    Ok(CorrelationMatrix::from_upper(upper))
}

fn parse_cell(s: &str, line: usize) -> Result<Option<f64>> {
    let s = s.trim();
    if s == "-" || s.is_empty() {
        return Ok(None);
    }
    s.trim_end_matches('%')
        .parse()
        .map(Some)
        .map_err(|_| Error::ManifestParse { line, message: format!("not a number: `{s}`") })
}

/// Parses a tab-separated table `system, mcd, wer, asv, naturalness,
/// similarity`; `-` marks a missing value, `#` starts a comment line and a
/// first line beginning with `system` is treated as a header.
pub fn parse_metrics_table(text: &str) -> Result<Vec<MetricsRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || (rows.is_empty() && trimmed.to_lowercase().starts_with("system")) {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != 6 {
            return Err(Error::ManifestParse { line: i + 1, message: format!("expected 6 tab-separated columns, found {}", cells.len()) });
        }
        let row = MetricsRow {
            system: cells[0].trim().to_string(),
            mcd: parse_cell(cells[1], i + 1)?,
            wer: parse_cell(cells[2], i + 1)?,
            asv: parse_cell(cells[3], i + 1)?,
            naturalness: parse_cell(cells[4], i + 1)?,
            similarity: parse_cell(cells[5], i + 1)?,
        };
        row.validate()?;
        rows.push(row);
    }
    Ok(rows)
}

/// A row of the bundled published-results fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct PublishedRow {
    /// `intra_a2o`, `cross_a2o` or `intra_a2a`.
    pub section: String,
    /// `feature` (mel), `ppg`, `s3r`, `external` or `reference`.
    pub group: String,
    pub row: MetricsRow,
}

const PUBLISHED: &str = include_str!("../../data/published_comparison.tsv");

/// The bundled published comparison results.
pub fn published_rows() -> Vec<PublishedRow> {
    PUBLISHED
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let c: Vec<&str> = l.split('\t').collect();
            let cell = |k: usize| parse_cell(c[k], 0).expect("bundled fixture is well formed");
            PublishedRow {
                section: c[0].to_string(),
                group: c[1].to_string(),
                row: MetricsRow {
                    system: c[2].to_string(),
                    mcd: cell(3),
                    wer: cell(4),
                    asv: cell(5),
                    naturalness: cell(6),
                    similarity: cell(7),
                },
            }
        })
        .collect()
}

/// Published pairwise correlations between the five metrics.
pub fn published_table3() -> CorrelationMatrix {
    let mut upper = [[0.0; 5]; 5];
    upper[0][1] = 0.678;
    upper[0][2] = -0.934;
    upper[0][3] = -0.968;
    upper[0][4] = -0.961;
    upper[1][2] = -0.640;
    upper[1][3] = -0.808;
    upper[1][4] = -0.587;
    upper[2][3] = 0.910;
    upper[2][4] = 0.911;
    upper[3][4] = 0.932;
    CorrelationMatrix::from_upper(upper)
}

/// One candidate row set and how well it reproduces the published matrix.
#[derive(Debug, Clone, Serialize)]
pub struct SubsetResult {
    pub label: String,
    pub systems: Vec<String>,
    pub matrix: CorrelationMatrix,
    pub max_abs_error: f64,
}

/// Scores every plausible row set of the intra-lingual any-to-one section
/// (the upstream rows, optionally with the mel row, the PPG row and the
/// fully scored external systems) against the published correlations,
/// best first.
pub fn subset_search() -> Result<Vec<SubsetResult>> {
    let intra: Vec<PublishedRow> = published_rows().into_iter().filter(|r| r.section == "intra_a2o").collect();
    let published = published_table3();
    let mut results = Vec::new();
    for mask in 0..8u8 {
        let (mel, ppg, ext) = (mask & 1 != 0, mask & 2 != 0, mask & 4 != 0);
        let rows: Vec<MetricsRow> = intra
            .iter()
            .filter(|r| match r.group.as_str() {
                "s3r" => true,
                "feature" => mel,
                "ppg" => ppg,
                "external" => ext && r.row.is_complete(),
                _ => false,
            })
            .map(|r| r.row.clone())
            .collect();
        let matrix = correlation_matrix(&rows)?;
        let mut label = vec!["upstreams"];
        if mel {
            label.push("mel");
        }
        if ppg {
            label.push("PPG");
        }
        if ext {
            label.push("external systems");
        }
        results.push(SubsetResult {
            label: label.join(" + "),
            systems: rows.iter().map(|r| r.system.clone()).collect(),
            max_abs_error: matrix.max_abs_diff(&published),
            matrix,
        });
    }
    results.sort_by(|a, b| a.max_abs_error.total_cmp(&b.max_abs_error));
    Ok(results)
}
