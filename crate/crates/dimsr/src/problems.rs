//! Built-in physics recovery problems with known closed forms.
//!
//! Five small laws whose every column carries real units, so a run can
//! be judged on exact recovery rather than fit alone. Physical constants
//! that carry dimension (the Coulomb constant, the speed of light)
//! appear as constant-valued feature columns, because ephemeral
//! constants inside candidate expressions are dimensionless by design.
//! All magnitudes are in scaled units of order one.
//!
//! Datasets are generated deterministically from per-problem seeds;
//! [`write_builtin_files`] materializes spec + CSV pairs that round-trip
//! bit-exactly through [`ProblemSpec::load`].

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use num_rational::Rational64;
use rand::Rng;

use crate::bench::{parse_expression, Dataset, ProblemSpec};
use crate::dimension::Op;
use crate::fitness::evaluate_batch;
use crate::genome::SymbolTable;
use crate::stream_rng;

/// The standard operator set for runs: arithmetic, natural log and exp,
/// sine and cosine, squaring, and square root.
pub fn default_operators() -> Vec<Op> {
    vec![
        Op::Add,
        Op::Sub,
        Op::Mul,
        Op::Div,
        Op::Log,
        Op::Exp,
        Op::Sin,
        Op::Cos,
        Op::Pow(Rational64::from_integer(2)),
        Op::Sqrt,
    ]
}

/// Rows generated for each built-in dataset.
pub const BUILTIN_ROWS: usize = 256;

struct Def {
    name: &'static str,
    difficulty: &'static str,
    truth: &'static str,
    /// Feature columns as (name, unit, low, high); `low == high` makes a
    /// constant column (a dimensional physical constant).
    features: &'static [(&'static str, &'static str, f64, f64)],
    /// Target column as (name, unit); always written last in the CSV.
    target: (&'static str, &'static str),
    seed: u64,
}

const DEFS: &[Def] = &[
    Def {
        name: "fqe",
        difficulty: "easy",
        truth: "q * E",
        features: &[("q", "C", 0.5, 2.0), ("E", "V/m", 0.5, 2.0)],
        target: ("F", "N"),
        seed: 11,
    },
    Def {
        name: "coulomb",
        difficulty: "medium",
        truth: "ke * q1 * q2 / r^2",
        features: &[
            ("q1", "C", 0.5, 2.0),
            ("q2", "C", 0.5, 2.0),
            ("r", "m", 0.5, 2.0),
            ("ke", "N*m^2/C^2", 8.9875, 8.9875),
        ],
        target: ("F", "N"),
        seed: 12,
    },
    Def {
        name: "vdt",
        difficulty: "easy",
        truth: "d / t",
        features: &[("d", "m", 1.0, 10.0), ("t", "s", 0.5, 4.0)],
        target: ("v", "m/s"),
        seed: 13,
    },
    Def {
        name: "cog",
        difficulty: "medium",
        truth: "(m1 * r1 + m2 * r2) / (m1 + m2)",
        features: &[
            ("m1", "kg", 0.5, 5.0),
            ("r1", "m", -2.0, 2.0),
            ("m2", "kg", 0.5, 5.0),
            ("r2", "m", -2.0, 2.0),
        ],
        target: ("x", "m"),
        seed: 14,
    },
    Def {
        name: "emc2",
        difficulty: "easy",
        truth: "m * c^2",
        features: &[("m", "kg", 0.5, 3.0), ("c", "m/s", 2.998, 2.998)],
        target: ("E", "J"),
        seed: 15,
    },
];

fn find(name: &str) -> Option<&'static Def> {
    DEFS.iter().find(|d| d.name == name)
}

/// Names of the built-in problems, in a fixed order.
pub fn builtin_names() -> Vec<&'static str> {
    DEFS.iter().map(|d| d.name).collect()
}

fn spec_of(def: &Def) -> ProblemSpec {
    let mut units = BTreeMap::new();
    for (name, unit, _, _) in def.features {
        units.insert((*name).to_string(), (*unit).to_string());
    }
    units.insert(def.target.0.to_string(), def.target.1.to_string());
    ProblemSpec {
        name: def.name.to_string(),
        data: format!("{}.csv", def.name),
        target: Some(def.target.0.to_string()),
        truth: Some(def.truth.to_string()),
        difficulty: def.difficulty.to_string(),
        units,
    }
}

fn dataset_of(def: &Def, rows: usize) -> Dataset {
    let mut rng = stream_rng(def.seed, 0);
    let mut x: Vec<Vec<f64>> = Vec::with_capacity(def.features.len());
    for (_, _, lo, hi) in def.features {
        if lo == hi {
            x.push(vec![*lo; rows]);
        } else {
            x.push((0..rows).map(|_| rng.random_range(*lo..=*hi)).collect());
        }
    }
    let feature_names: Vec<String> = def.features.iter().map(|f| f.0.to_string()).collect();
    let variables: Vec<(String, crate::dimension::DimVec)> = feature_names
        .iter()
        .map(|n| (n.clone(), crate::dimension::DimVec::ZERO))
        .collect();
    let table = SymbolTable::new(&default_operators(), &variables, false);
    let truth = parse_expression(def.truth, &table).expect("built-in truths parse");
    let y = evaluate_batch(&truth, &x, &[]).expect("built-in truths evaluate");
    Dataset {
        feature_names,
        target_name: def.target.0.to_string(),
        x,
        y,
    }
}

/// Spec and deterministic dataset for a built-in problem, fully in
/// memory. Returns `None` for unknown names.
pub fn builtin(name: &str) -> Option<(ProblemSpec, Dataset)> {
    let def = find(name)?;
    Some((spec_of(def), dataset_of(def, BUILTIN_ROWS)))
}

/// Writes `<name>.spec` and `<name>.csv` for every built-in problem into
/// `dir`, creating it if needed. Numbers are written in shortest
/// round-trip form, so reading the files back reproduces the in-memory
/// datasets bit for bit.
pub fn write_builtin_files(dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for def in DEFS {
        let spec = spec_of(def);
        let dataset = dataset_of(def, BUILTIN_ROWS);
        let text = toml::to_string_pretty(&spec).expect("specs serialize");
        std::fs::write(dir.join(format!("{}.spec", def.name)), text)?;

        let mut csv = std::fs::File::create(dir.join(&spec.data))?;
        let mut header = dataset.feature_names.clone();
        header.push(dataset.target_name.clone());
        writeln!(csv, "{}", header.join(","))?;
        for r in 0..dataset.y.len() {
            let mut row: Vec<String> = dataset.x.iter().map(|col| col[r].to_string()).collect();
            row.push(dataset.y[r].to_string());
            writeln!(csv, "{}", row.join(","))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dimension::{parse_unit, DimResult};

    #[test]
    fn five_builtins_with_valid_specs() {
        let names = builtin_names();
        assert_eq!(names, vec!["fqe", "coulomb", "vdt", "cog", "emc2"]);
        for name in names {
            let (spec, dataset) = builtin(name).unwrap();
            // The dictionary covers every column and every unit parses.
            assert!(spec.missing_units(&dataset).is_empty());
            let text = toml::to_string_pretty(&spec).unwrap();
            assert_eq!(ProblemSpec::from_toml_str(&text).unwrap(), spec);
            assert_eq!(dataset.y.len(), BUILTIN_ROWS);
            assert!(dataset.y.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn targets_match_hand_computed_laws() {
        let law: &[(&str, fn(&[f64]) -> f64)] = &[
            ("fqe", |r| r[0] * r[1]),
            ("coulomb", |r| r[3] * r[0] * r[1] / (r[2] * r[2])),
            ("vdt", |r| r[0] / r[1]),
            ("cog", |r| (r[0] * r[1] + r[2] * r[3]) / (r[0] + r[2])),
            ("emc2", |r| r[0] * (r[1] * r[1])),
        ];
        for (name, f) in law {
            let (_, dataset) = builtin(name).unwrap();
            for r in 0..dataset.y.len() {
                let row: Vec<f64> = dataset.x.iter().map(|col| col[r]).collect();
                assert_eq!(dataset.y[r], f(&row), "{name} row {r}");
            }
        }
    }

    #[test]
    fn truths_are_dimensionally_consistent() {
        for name in builtin_names() {
            let (spec, dataset) = builtin(name).unwrap();
            let problem = spec
                .build_problem(&dataset, &default_operators(), true)
                .unwrap();
            let truth = spec.truth_tree(&problem.table).unwrap().unwrap();
            assert_eq!(
                truth.dims[0],
                DimResult::Defined(problem.target_dim),
                "{name}: ground truth must carry the declared target dimension"
            );
        }
    }

    #[test]
    fn generation_is_deterministic_and_constants_are_constant() {
        let (_, a) = builtin("coulomb").unwrap();
        let (_, b) = builtin("coulomb").unwrap();
        assert_eq!(a, b);
        assert!(a.x[3].iter().all(|v| *v == 8.9875));
        let (_, e) = builtin("emc2").unwrap();
        assert!(e.x[1].iter().all(|v| *v == 2.998));
        // Varying columns actually vary.
        assert!(a.x[0].windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn files_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        write_builtin_files(dir.path()).unwrap();
        for name in builtin_names() {
            let (spec, dataset) = builtin(name).unwrap();
            let loaded = ProblemSpec::load(&dir.path().join(format!("{name}.spec"))).unwrap();
            assert_eq!(loaded.spec, spec);
            assert_eq!(loaded.read_dataset().unwrap(), dataset);
        }
    }

    #[test]
    fn default_operator_set() {
        let ops = default_operators();
        assert_eq!(ops.len(), 10);
        assert!(ops.contains(&Op::Pow(Rational64::from_integer(2))));
        assert!(ops.contains(&Op::Sqrt));
        assert!(!ops.contains(&Op::Pow(Rational64::new(1, 2))));
        // Unit sanity for the declared targets.
        assert_eq!(
            parse_unit("J").unwrap(),
            parse_unit("kg*m^2/s^2").unwrap()
        );
        assert_eq!(parse_unit("N").unwrap(), parse_unit("kg*m/s^2").unwrap());
    }
}
