//! Benchmark-protocol pieces: target-noise injection, train/test
//! splitting, accuracy metrics, per-trial records, and aggregate tables.
//!
//! Trials split the rows, perturb the training targets (never the
//! features, never the held-out side), run the engine on the training
//! side, and score against the clean held-out targets. Results are
//! stored one JSON record per line so partial sweeps stay usable.

mod expr;
mod problem_spec;
mod simplify;
mod stats;

pub use expr::{make_probe, parse_expression, ExprParseError};
pub use problem_spec::{Dataset, LoadedProblem, ProblemError, ProblemSpec};
pub use simplify::{complexity, simplify, symbolic_solution, SOLUTION_TOLERANCE};
pub use stats::{wilcoxon_report, wilcoxon_signed_rank, PairResult, StatsError, WilcoxonResult};

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("need at least 2 rows to split, got {0}")]
    TooFewRows(usize),
    #[error("split ratio must lie strictly between 0 and 1, got {0}")]
    BadRatio(f64),
    #[error("r2 needs at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("r2 is undefined for a constant target")]
    ConstantTarget,
    #[error("prediction/target length mismatch: {pred} vs {target}")]
    LengthMismatch { pred: usize, target: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record: {0}")]
    Json(#[from] serde_json::Error),
}

/// Adds zero-mean Gaussian noise to the targets, scaled by the target's
/// root-mean-square: `σ = γ · sqrt(mean(y²))`. With γ = 0 the input is
/// returned untouched. Features are never perturbed.
pub fn add_noise(y: &[f64], gamma: f64, rng: &mut impl Rng) -> Vec<f64> {
    if gamma == 0.0 || y.is_empty() {
        return y.to_vec();
    }
    let rms = (y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64).sqrt();
    let normal = Normal::new(0.0, gamma * rms).expect("finite std");
    y.iter().map(|v| v + normal.sample(rng)).collect()
}

/// One side of a train/test partition, column-major like `Problem`.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    /// Original row indices, for traceability.
    pub rows: Vec<usize>,
}

/// Shuffles rows and partitions them into train (first `ratio` share,
/// rounded) and test. Deterministic for a fixed random state; the two
/// sides are disjoint and exhaustive, each non-empty.
pub fn split(
    x: &[Vec<f64>],
    y: &[f64],
    ratio: f64,
    rng: &mut impl Rng,
) -> Result<(Split, Split), BenchError> {
    let n = y.len();
    if n < 2 {
        return Err(BenchError::TooFewRows(n));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(BenchError::BadRatio(ratio));
    }
    let mut order: Vec<usize> = (0..n).collect();
    // Fisher-Yates via sampled indices keeps the draw count fixed.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let take = |rows: &[usize]| Split {
        x: x.iter()
            .map(|col| rows.iter().map(|r| col[*r]).collect())
            .collect(),
        y: rows.iter().map(|r| y[*r]).collect(),
        rows: rows.to_vec(),
    };
    Ok((take(&order[..n_train]), take(&order[n_train..])))
}

/// Coefficient of determination `1 − Σ(y−ŷ)² / Σ(y−ȳ)²`.
///
/// Non-finite predictions drive the score to −∞ (worst possible) rather
/// than NaN so medians over many trials stay well defined.
pub fn r2_score(y: &[f64], pred: &[f64]) -> Result<f64, BenchError> {
    if y.len() != pred.len() {
        return Err(BenchError::LengthMismatch {
            pred: pred.len(),
            target: y.len(),
        });
    }
    if y.len() < 2 {
        return Err(BenchError::TooFewObservations(y.len()));
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return Err(BenchError::ConstantTarget);
    }
    let ss_res: f64 = y
        .iter()
        .zip(pred)
        .map(|(t, p)| (t - p) * (t - p))
        .sum();
    let r2 = 1.0 - ss_res / ss_tot;
    Ok(if r2.is_finite() { r2 } else { f64::NEG_INFINITY })
}

/// JSON number with a defined encoding for non-finite values.
///
/// JSON itself has no infinities or NaN — `serde_json` emits `null` for
/// them, which cannot be read back. Losses and scores are legitimately
/// infinite (a discard-mode run that never finds a homogeneous candidate
/// keeps an infinite loss; a wildly diverging expression scores −∞), so
/// records encode such values as the strings `"inf"`, `"-inf"`, `"nan"`.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum JsonF64 {
    Num(f64),
    Tag(String),
}

impl From<f64> for JsonF64 {
    fn from(v: f64) -> JsonF64 {
        if v.is_finite() {
            JsonF64::Num(v)
        } else if v.is_nan() {
            JsonF64::Tag("nan".into())
        } else if v > 0.0 {
            JsonF64::Tag("inf".into())
        } else {
            JsonF64::Tag("-inf".into())
        }
    }
}

impl TryFrom<JsonF64> for f64 {
    type Error = String;

    fn try_from(v: JsonF64) -> Result<f64, String> {
        match v {
            JsonF64::Num(n) => Ok(n),
            JsonF64::Tag(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(format!("unrecognized float tag {other:?}")),
            },
        }
    }
}

mod json_f64 {
    use super::JsonF64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        JsonF64::from(*v).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        f64::try_from(JsonF64::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

mod json_f64_vec {
    use super::JsonF64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter()
            .map(|x| JsonF64::from(*x))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Vec::<JsonF64>::deserialize(d)?
            .into_iter()
            .map(|x| f64::try_from(x).map_err(serde::de::Error::custom))
            .collect()
    }
}

mod json_f64_opt {
    use super::JsonF64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.map(JsonF64::from).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<JsonF64>::deserialize(d)?
            .map(|x| f64::try_from(x).map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// Everything recorded about one trial. Training-side fields are filled
/// by the engine; the harness adds the problem identity, the noise level,
/// and the held-out metrics.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunRecord {
    pub problem: String,
    pub mode: String,
    pub gamma: f64,
    pub trial: u64,
    pub seed: u64,
    pub best_expression: String,
    /// Pre-order symbol names of the best tree.
    pub best_preorder: Vec<String>,
    /// Final best training loss (regularized, mode-dependent).
    #[serde(with = "json_f64")]
    pub best_loss: f64,
    /// Plain training MSE of the best tree.
    #[serde(with = "json_f64")]
    pub best_mse_train: f64,
    #[serde(with = "json_f64_vec")]
    pub per_generation_best_loss: Vec<f64>,
    pub generations_run: usize,
    pub evaluations: u64,
    /// Wall-clock duration; excluded from determinism guarantees.
    pub wall_time_ms: u64,
    pub stop_reason: String,
    /// Whether the best tree's dimension matches the target exactly.
    pub homogeneous: bool,
    #[serde(with = "json_f64_opt")]
    pub r2_test: Option<f64>,
    pub symbolic_solution: Option<bool>,
    /// Symbol count of the simplified best expression.
    pub complexity: Option<usize>,
    /// Full engine configuration, sufficient to reproduce the run.
    pub config: serde_json::Value,
}

/// Appends records to a JSON-lines file, one record per line.
pub fn write_records(records: &[RunRecord], path: &Path) -> Result<(), BenchError> {
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    for record in records {
        serde_json::to_writer(&mut file, record)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a JSON-lines record file; blank lines are skipped.
pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, BenchError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}

/// Linear-interpolation quantile (the common "R-7" definition) over a
/// copy of the data. `q` in [0, 1].
pub fn quantile(values: &[f64], q: f64) -> f64 {
    debug_assert!(!values.is_empty());
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in metrics"));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// One aggregate row per (mode, γ): medians and dispersion of the
/// held-out metrics across trials.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SummaryRow {
    pub mode: String,
    pub gamma: f64,
    pub trials: usize,
    pub median_r2: f64,
    pub iqr_r2: f64,
    pub solution_rate: f64,
    pub median_complexity: f64,
    pub median_evaluations: f64,
    pub homogeneous_rate: f64,
}

/// Groups records by (mode, γ) and aggregates the held-out metrics.
/// Records lacking test metrics contribute to counts but not medians.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    let mut groups: std::collections::BTreeMap<(String, String), Vec<&RunRecord>> =
        std::collections::BTreeMap::new();
    for r in records {
        // Format γ with enough precision to key groups stably.
        groups
            .entry((r.mode.clone(), format!("{:.9}", r.gamma)))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((mode, _), rs)| {
            let r2s: Vec<f64> = rs.iter().filter_map(|r| r.r2_test).collect();
            let comps: Vec<f64> = rs.iter().filter_map(|r| r.complexity.map(|c| c as f64)).collect();
            let solved = rs
                .iter()
                .filter(|r| r.symbolic_solution == Some(true))
                .count();
            let evals: Vec<f64> = rs.iter().map(|r| r.evaluations as f64).collect();
            let homog = rs.iter().filter(|r| r.homogeneous).count();
            SummaryRow {
                mode,
                gamma: rs[0].gamma,
                trials: rs.len(),
                median_r2: if r2s.is_empty() { f64::NAN } else { median(&r2s) },
                iqr_r2: if r2s.is_empty() {
                    f64::NAN
                } else {
                    quantile(&r2s, 0.75) - quantile(&r2s, 0.25)
                },
                solution_rate: solved as f64 / rs.len() as f64,
                median_complexity: if comps.is_empty() {
                    f64::NAN
                } else {
                    median(&comps)
                },
                median_evaluations: median(&evals),
                homogeneous_rate: homog as f64 / rs.len() as f64,
            }
        })
        .collect()
}

/// Writes summary rows as CSV with a header.
pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<(), BenchError> {
    let mut writer = csv::Writer::from_path(path).map_err(io_from_csv)?;
    writer
        .write_record([
            "mode",
            "gamma",
            "trials",
            "median_r2",
            "iqr_r2",
            "solution_rate",
            "median_complexity",
            "median_evaluations",
            "homogeneous_rate",
        ])
        .map_err(io_from_csv)?;
    for row in rows {
        writer
            .write_record([
                row.mode.clone(),
                format!("{}", row.gamma),
                format!("{}", row.trials),
                format!("{}", row.median_r2),
                format!("{}", row.iqr_r2),
                format!("{}", row.solution_rate),
                format!("{}", row.median_complexity),
                format!("{}", row.median_evaluations),
                format!("{}", row.homogeneous_rate),
            ])
            .map_err(io_from_csv)?;
    }
    writer.flush()?;
    Ok(())
}

fn io_from_csv(err: csv::Error) -> BenchError {
    BenchError::Io(std::io::Error::other(err))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    #[test]
    fn zero_gamma_leaves_targets_untouched() {
        let y = vec![3.0, -1.5, 8.25];
        let mut rng = StdRng::seed_from_u64(1);
        assert_eq!(add_noise(&y, 0.0, &mut rng), y);
    }

    #[test]
    fn noise_scale_follows_target_rms() {
        // For y = [3, 4]: rms² = 12.5, so σ = 0.1·√12.5.
        let y = [3.0, 4.0];
        let expected_std = 0.1 * 12.5f64.sqrt();
        let mut rng = StdRng::seed_from_u64(2);
        let mut draws = Vec::with_capacity(100_000);
        for _ in 0..50_000 {
            let noisy = add_noise(&y, 0.1, &mut rng);
            draws.push(noisy[0] - y[0]);
            draws.push(noisy[1] - y[1]);
        }
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
            / draws.len() as f64;
        let std = var.sqrt();
        assert!(
            (std - expected_std).abs() / expected_std < 0.02,
            "std {std} vs expected {expected_std}"
        );
    }

    #[test]
    fn split_partitions_disjoint_and_exhaustive() {
        let x = vec![(0..100).map(|i| i as f64).collect::<Vec<_>>()];
        let y: Vec<f64> = (0..100).map(|i| i as f64 * 2.0).collect();
        let mut rng = StdRng::seed_from_u64(3);
        let (train, test) = split(&x, &y, 0.75, &mut rng).unwrap();
        assert_eq!(train.y.len(), 75);
        assert_eq!(test.y.len(), 25);
        let mut all: Vec<usize> = train.rows.iter().chain(&test.rows).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        // Rows keep x/y pairing.
        for (i, r) in train.rows.iter().enumerate() {
            assert_eq!(train.x[0][i], *r as f64);
            assert_eq!(train.y[i], *r as f64 * 2.0);
        }
    }

    #[test]
    fn split_half_of_four_rows() {
        let x = vec![vec![1.0, 2.0, 3.0, 4.0]];
        let y = vec![1.0, 2.0, 3.0, 4.0];
        let mut rng = StdRng::seed_from_u64(4);
        let (train, test) = split(&x, &y, 0.5, &mut rng).unwrap();
        assert_eq!(train.y.len(), 2);
        assert_eq!(test.y.len(), 2);
    }

    #[test]
    fn split_is_deterministic_and_validates() {
        let x = vec![vec![1.0, 2.0, 3.0, 4.0, 5.0]];
        let y = vec![1.0, 2.0, 3.0, 4.0, 5.0];
        let a = split(&x, &y, 0.6, &mut StdRng::seed_from_u64(5)).unwrap();
        let b = split(&x, &y, 0.6, &mut StdRng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            split(&x, &y, 1.5, &mut StdRng::seed_from_u64(5)),
            Err(BenchError::BadRatio(_))
        ));
        assert!(matches!(
            split(&x[..], &[1.0], 0.5, &mut StdRng::seed_from_u64(5)),
            Err(BenchError::TooFewRows(1))
        ));
    }

    #[test]
    fn r2_examples() {
        let y = [1.0, 2.0, 3.0];
        assert_eq!(r2_score(&y, &y).unwrap(), 1.0);
        let mean = [2.0, 2.0, 2.0];
        assert_eq!(r2_score(&y, &mean).unwrap(), 0.0);
        let off = [1.0, 2.0, 4.0];
        assert!((r2_score(&y, &off).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(
            r2_score(&[5.0, 5.0], &[1.0, 2.0]),
            Err(BenchError::ConstantTarget)
        ));
        assert!(matches!(
            r2_score(&[1.0], &[1.0]),
            Err(BenchError::TooFewObservations(1))
        ));
        assert_eq!(
            r2_score(&y, &[f64::NAN, 2.0, 3.0]).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(median(&v), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(median(&[7.0]), 7.0);
    }

    fn record(mode: &str, gamma: f64, trial: u64, r2: f64, solved: bool) -> RunRecord {
        RunRecord {
            problem: "p".into(),
            mode: mode.into(),
            gamma,
            trial,
            seed: trial,
            best_expression: "x0".into(),
            best_preorder: vec!["x0".into()],
            best_loss: 0.1,
            best_mse_train: 0.1,
            per_generation_best_loss: vec![0.2, 0.1],
            generations_run: 1,
            evaluations: 100,
            wall_time_ms: 5,
            stop_reason: "generations".into(),
            homogeneous: true,
            r2_test: Some(r2),
            symbolic_solution: Some(solved),
            complexity: Some(3),
            config: serde_json::json!({"population": 10}),
        }
    }

    #[test]
    fn records_round_trip_and_summarize() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let records = vec![
            record("sbp", 0.0, 0, 0.9, true),
            record("sbp", 0.0, 1, 0.8, false),
            record("none", 0.0, 0, 0.5, false),
        ];
        write_records(&records[..2], &path).unwrap();
        write_records(&records[2..], &path).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back, records);

        let rows = summarize(&back);
        assert_eq!(rows.len(), 2);
        let sbp = rows.iter().find(|r| r.mode == "sbp").unwrap();
        assert_eq!(sbp.trials, 2);
        assert!((sbp.median_r2 - 0.85).abs() < 1e-12);
        assert_eq!(sbp.solution_rate, 0.5);

        let csv_path = dir.path().join("summary.csv");
        write_summary_csv(&rows, &csv_path).unwrap();
        let text = std::fs::read_to_string(&csv_path).unwrap();
        assert!(text.starts_with("mode,gamma,trials"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn records_round_trip_non_finite_values() {
        // A stagnated discard run carries infinite losses, and a bad
        // candidate can score −∞; both must survive the file format.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let mut stagnated = record("discard", 0.0, 0, 0.0, false);
        stagnated.best_loss = f64::INFINITY;
        stagnated.best_mse_train = f64::NAN;
        stagnated.per_generation_best_loss = vec![f64::INFINITY, f64::INFINITY];
        stagnated.r2_test = Some(f64::NEG_INFINITY);
        write_records(std::slice::from_ref(&stagnated), &path).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains("null"), "non-finite values must not decay to null");

        let back = read_records(&path).unwrap().remove(0);
        assert_eq!(back.best_loss, f64::INFINITY);
        assert!(back.best_mse_train.is_nan());
        assert_eq!(back.per_generation_best_loss, stagnated.per_generation_best_loss);
        assert_eq!(back.r2_test, Some(f64::NEG_INFINITY));
    }
}
