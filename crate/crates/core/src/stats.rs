//! Rank-based comparison of model families across subjects: Friedman's
//! test and Bonferroni-adjusted pairwise post-hoc tests.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Differences and values closer than this are treated as equal.
const TIE_TOLERANCE: f64 = 1e-9;
/// Largest sample size for the exact signed-rank distribution.
const EXACT_LIMIT: usize = 25;

/// Subjects (rows) × model families (columns).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub row_header: String,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl AccuracyTable {
    pub fn new(row_labels: Vec<String>, col_labels: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        let t = AccuracyTable {
            row_header: "subject".into(),
            row_labels,
            col_labels,
            values,
        };
        t.check()?;
        Ok(t)
    }

    pub fn rows(&self) -> usize {
        self.values.len()
    }

    pub fn cols(&self) -> usize {
        self.col_labels.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[j]).collect()
    }

    fn check(&self) -> Result<()> {
        if self.row_labels.len() != self.values.len() {
            return Err(Error::Stats("row labels and rows differ in count".into()));
        }
        for (i, row) in self.values.iter().enumerate() {
            if row.len() != self.col_labels.len() {
                return Err(Error::Stats(format!(
                    "row '{}' has {} cells, expected {}",
                    self.row_labels[i],
                    row.len(),
                    self.col_labels.len()
                )));
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Stats(format!("row '{}' holds {v}, outside [0, 1]", self.row_labels[i])));
            }
        }
        Ok(())
    }

    /// Delimited text with a header row; the first column labels the rows.
    pub fn from_reader(reader: impl Read, delimiter: u8) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = r.headers()?.clone();
        if header.len() < 2 {
            return Err(Error::Stats("table needs a label column and at least one data column".into()));
        }
        let mut row_labels = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            row_labels.push(rec[0].to_string());
            let row = rec
                .iter()
                .skip(1)
                .map(|f| f.parse::<f64>().map_err(|_| Error::Stats(format!("'{f}' is not a number"))))
                .collect::<Result<Vec<_>>>()?;
            values.push(row);
        }
        let t = AccuracyTable {
            row_header: header[0].to_string(),
            row_labels,
            col_labels: header.iter().skip(1).map(str::to_string).collect(),
            values,
        };
        t.check()?;
        Ok(t)
    }

    /// Reads a file, taking tabs as the delimiter for `.tsv` and commas otherwise.
    pub fn from_path(path: &Path) -> Result<Self> {
        let delimiter = if path.extension().is_some_and(|e| e == "tsv") { b'\t' } else { b',' };
        Self::from_reader(std::fs::File::open(path)?, delimiter)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec![self.row_header.clone()];
        header.extend(self.col_labels.iter().cloned());
        w.write_record(&header)?;
        for (label, row) in self.row_labels.iter().zip(&self.values) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Stats(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Average ranks (1-based) of `values`, ascending, with tied values sharing
/// the mean of their positions. Returns the ranks and `Σ(t³ − t)` over tie groups.
pub fn average_ranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && (values[order[end]] - values[order[start]]).abs() <= TIE_TOLERANCE {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        let t = (end - start) as f64;
        ties += t * t * t - t;
        start = end;
    }
    (ranks, ties)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub chi_square: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Mean within-row rank of each column (1 = lowest value).
    pub mean_ranks: Vec<f64>,
}

/// Friedman's test on within-row ranks, with the tie correction.
pub fn friedman_test(table: &AccuracyTable) -> Result<FriedmanResult> {
    let (n, k) = (table.rows(), table.cols());
    if n < 2 || k < 2 {
        return Err(Error::Stats(format!("Friedman's test needs at least 2×2 cells, got {n}×{k}")));
    }
    let mut rank_sums = vec![0.0; k];
    let mut ties = 0.0;
    for row in &table.values {
        let (r, t) = average_ranks(row);
        ties += t;
        for (s, v) in rank_sums.iter_mut().zip(r) {
            *s += v;
        }
    }
    let (nf, kf) = (n as f64, k as f64);
    let mean_ranks: Vec<f64> = rank_sums.iter().map(|s| s / nf).collect();
    let correction = 1.0 - ties / (nf * (kf * kf * kf - kf));
    if correction <= 0.0 {
        return Ok(FriedmanResult {
            chi_square: 0.0,
            dof: k - 1,
            p_value: 1.0,
            mean_ranks,
        });
    }
    let ssq: f64 = rank_sums.iter().map(|s| s * s).sum();
    let chi = (12.0 / (nf * kf * (kf + 1.0)) * ssq - 3.0 * nf * (kf + 1.0)) / correction;
    let chi = chi.max(0.0);
    let dist = ChiSquared::new(kf - 1.0).map_err(|e| Error::Stats(e.to_string()))?;
    Ok(FriedmanResult {
        chi_square: chi,
        dof: k - 1,
        p_value: dist.sf(chi),
        mean_ranks,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PosthocMethod {
    /// `z = |R̄ᵢ − R̄ⱼ| / √(k(k+1)/(6n))` on the Friedman mean ranks.
    #[default]
    RankZ,
    /// Exact signed-rank test on paired differences.
    WilcoxonExact,
}

impl std::str::FromStr for PosthocMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rank-z" => Ok(PosthocMethod::RankZ),
            "wilcoxon" | "wilcoxon-exact" => Ok(PosthocMethod::WilcoxonExact),
            other => Err(Error::Config(format!("unknown post-hoc method '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseResult {
    pub a: String,
    pub b: String,
    /// z for the rank test, W⁺ for the signed-rank test.
    pub statistic: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub significant: bool,
    /// Mean of `a − b` over rows.
    pub mean_difference: f64,
}

/// Two-sided test for every column pair `(i, j)`, `i < j`, with
/// Bonferroni adjustment `min(1, p · pairs)` and significance at 0.05.
pub fn pairwise_bonferroni(table: &AccuracyTable, method: PosthocMethod) -> Result<Vec<PairwiseResult>> {
    let (n, k) = (table.rows(), table.cols());
    if k < 2 || n < 1 {
        return Err(Error::Stats("pairwise comparisons need at least two columns and one row".into()));
    }
    let pairs = k * (k - 1) / 2;
    let mean_ranks = match method {
        PosthocMethod::RankZ => {
            if n < 2 {
                return Err(Error::Stats("the rank test needs at least two rows".into()));
            }
            friedman_test(table)?.mean_ranks
        }
        PosthocMethod::WilcoxonExact => Vec::new(),
    };
    let normal = Normal::standard();
    let mut out = Vec::with_capacity(pairs);
    for i in 0..k {
        for j in i + 1..k {
            let (a, b) = (table.column(i), table.column(j));
            let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
            let (statistic, p_raw) = match method {
                PosthocMethod::RankZ => {
                    let se = ((k * (k + 1)) as f64 / (6.0 * n as f64)).sqrt();
                    let z = (mean_ranks[i] - mean_ranks[j]).abs() / se;
                    (z, (2.0 * normal.sf(z)).min(1.0))
                }
                PosthocMethod::WilcoxonExact => signed_rank_test(&diffs),
            };
            let p_adjusted = (p_raw * pairs as f64).min(1.0);
            out.push(PairwiseResult {
                a: table.col_labels[i].clone(),
                b: table.col_labels[j].clone(),
                statistic,
                p_raw,
                p_adjusted,
                significant: p_adjusted < 0.05,
                mean_difference: diffs.iter().sum::<f64>() / n as f64,
            });
        }
    }
    Ok(out)
}

/// Two-sided signed-rank test: `(W⁺, p)`. Zero differences are dropped; the
/// null distribution is exact for up to 25 nonzero differences (ties handled
/// on doubled ranks) and normal with tie correction beyond that.
pub fn signed_rank_test(diffs: &[f64]) -> (f64, f64) {
    let nz: Vec<f64> = diffs.iter().copied().filter(|d| d.abs() > TIE_TOLERANCE).collect();
    let n = nz.len();
    if n == 0 {
        return (0.0, 1.0);
    }
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = average_ranks(&abs);
    let w_plus: f64 = nz.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    if n <= EXACT_LIMIT {
        // doubled ranks are integers even with ties
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let total: usize = doubled.iter().sum();
        let mut counts = vec![0f64; total + 1];
        counts[0] = 1.0;
        for &r in &doubled {
            for s in (r..=total).rev() {
                counts[s] += counts[s - r];
            }
        }
        let all = 2f64.powi(n as i32);
        let w2 = (2.0 * w_plus).round() as usize;
        let lower: f64 = counts[..=w2].iter().sum::<f64>() / all;
        let upper: f64 = counts[w2..].iter().sum::<f64>() / all;
        (w_plus, (2.0 * lower.min(upper)).min(1.0))
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - ties / 48.0;
        if var <= 0.0 {
            return (w_plus, 1.0);
        }
        let z = (w_plus - mean).abs() / var.sqrt();
        (w_plus, (2.0 * Normal::standard().sf(z)).min(1.0))
    }
}
