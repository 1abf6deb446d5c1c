//! CSV datasets, ground-truth sidecars and result tables. Every writer goes
//! through [`atomic_write`] and has a matching reader.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::benchmark::{EffectFidelity, FidelityReport, FidelityRow, MetricRow};
use crate::data::{candidate_atoms, Dataset, PotentialOutcomeMeans};
use crate::error::{arg_err, Error, Result};
use crate::model::GroundTruth;

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn atomic_write(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::Builder::new().prefix(".causebench").tempfile_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// How outcome atoms are declared when loading a dataset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AtomSpec {
    #[default]
    None,
    Values { values: Vec<f64> },
    /// Every outcome value with at least this empirical frequency.
    Auto { min_frequency: f64 },
}

fn csv_err(e: csv::Error) -> Error {
    let row = e.position().map(|p| p.record() as usize).unwrap_or(0);
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            _ => unreachable!(),
        },
        _ => Error::Parse {
            row,
            column: String::new(),
            message: e.to_string(),
        },
    }
}

fn parse_cell(text: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = text.trim().parse().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("`{text}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            column: column.to_string(),
            message: format!("`{text}` is not finite"),
        });
    }
    Ok(v)
}

/// Reads a dataset with header. Columns `t` and `y` are required; `mu0` and
/// `mu1`, when both present, are known potential-outcome means; every
/// other column is a covariate. Rows are numbered from 1 after the header.
pub fn read_dataset<R: std::io::Read>(reader: R, atoms: &AtomSpec) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let missing = |name: &str| Error::Parse {
        row: 0,
        column: name.to_string(),
        message: "required column is missing".into(),
    };
    let t_col = find("t").ok_or_else(|| missing("t"))?;
    let y_col = find("y").ok_or_else(|| missing("y"))?;
    let effect_cols = find("mu0").zip(find("mu1"));
    let special: Vec<usize> = [Some(t_col), Some(y_col), effect_cols.map(|e| e.0), effect_cols.map(|e| e.1)]
        .into_iter()
        .flatten()
        .collect();
    let w_cols: Vec<usize> = (0..header.len()).filter(|j| !special.contains(j)).collect();
    for (j, h) in header.iter().enumerate() {
        if header[..j].contains(h) {
            return Err(Error::Parse {
                row: 0,
                column: h.clone(),
                message: "duplicate column name".into(),
            });
        }
    }

    let (mut w, mut t, mut y, mut mu0, mut mu1) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| match csv_err(e) {
            Error::Parse { message, .. } => Error::Parse {
                row,
                column: String::new(),
                message,
            },
            other => other,
        })?;
        let cell = |j: usize| parse_cell(&record[j], row, &header[j]);
        let tv = cell(t_col)?;
        if tv != 0.0 && tv != 1.0 {
            return Err(Error::Parse {
                row,
                column: "t".into(),
                message: format!("treatment must be 0 or 1, got {}", &record[t_col]),
            });
        }
        t.push(tv);
        y.push(cell(y_col)?);
        for &j in &w_cols {
            w.push(cell(j)?);
        }
        if let Some((a, b)) = effect_cols {
            mu0.push(cell(a)?);
            mu1.push(cell(b)?);
        }
    }
    if t.is_empty() {
        return Err(Error::Parse {
            row: 1,
            column: String::new(),
            message: "no data rows".into(),
        });
    }
    let w = Array2::from_shape_vec((t.len(), w_cols.len()), w).map_err(|e| arg_err(e.to_string()))?;
    let atom_values = match atoms {
        AtomSpec::None => Vec::new(),
        AtomSpec::Values { values } => values.clone(),
        AtomSpec::Auto { min_frequency } => candidate_atoms(&y, *min_frequency),
    };
    let mut ds = Dataset::new(w, t, y)?
        .with_columns(w_cols.iter().map(|&j| header[j].clone()).collect())?
        .with_atoms(atom_values)?;
    if effect_cols.is_some() {
        ds = ds.with_effects(PotentialOutcomeMeans { mu0, mu1 })?;
    }
    Ok(ds)
}

pub fn load_dataset(path: impl AsRef<Path>, atoms: &AtomSpec) -> Result<Dataset> {
    read_dataset(fs::File::open(path)?, atoms)
}

fn to_bytes<F>(write: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>,
{
    let mut wtr = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    write(&mut wtr).map_err(csv_err)?;
    wtr.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Shortest representation that parses back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v}")
}

pub fn dataset_csv(ds: &Dataset) -> Result<Vec<u8>> {
    to_bytes(|wtr| {
        let mut header: Vec<&str> = ds.columns.iter().map(String::as_str).collect();
        header.extend(["t", "y"]);
        if ds.effects.is_some() {
            header.extend(["mu0", "mu1"]);
        }
        wtr.write_record(&header)?;
        for i in 0..ds.n() {
            let mut rec: Vec<String> = ds.w.row(i).iter().map(|&v| num(v)).collect();
            rec.push(num(ds.t[i]));
            rec.push(num(ds.y[i]));
            if let Some(e) = &ds.effects {
                rec.push(num(e.mu0[i]));
                rec.push(num(e.mu1[i]));
            }
            wtr.write_record(&rec)?;
        }
        Ok(())
    })
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    ds.validate()?;
    atomic_write(path, &dataset_csv(ds)?)
}

/// `<stem>_truth.csv` next to a sampled dataset.
pub fn truth_path(dataset_path: &Path) -> PathBuf {
    let stem = dataset_path.file_stem().and_then(|s| s.to_str()).unwrap_or("sample");
    dataset_path.with_file_name(format!("{stem}_truth.csv"))
}

/// Per-row ground truth (`row,propensity,mu0,mu1,iate`) followed by a
/// footer record `ate,<value>`.
pub fn save_truth(gt: &GroundTruth, path: impl AsRef<Path>) -> Result<()> {
    let bytes = to_bytes(|wtr| {
        wtr.write_record(["row", "propensity", "mu0", "mu1", "iate"])?;
        for i in 0..gt.iate.len() {
            wtr.write_record([
                i.to_string(),
                num(gt.propensity[i]),
                num(gt.mu0[i]),
                num(gt.mu1[i]),
                num(gt.iate[i]),
            ])?;
        }
        wtr.write_record(["ate".to_string(), num(gt.ate)])
    })?;
    atomic_write(path, &bytes)
}

pub fn load_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(fs::File::open(path)?);
    let mut gt = GroundTruth {
        ate: f64::NAN,
        iate: vec![],
        propensity: vec![],
        mu0: vec![],
        mu1: vec![],
    };
    let names = ["row", "propensity", "mu0", "mu1", "iate"];
    let mut footer = false;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = i + 1;
        if footer {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: "data after the ate footer".into(),
            });
        }
        if rec.get(0) == Some("ate") {
            gt.ate = parse_cell(rec.get(1).unwrap_or(""), row, "ate")?;
            footer = true;
            continue;
        }
        if rec.len() != 5 {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: format!("expected 5 fields, found {}", rec.len()),
            });
        }
        let v: Vec<f64> = (1..5).map(|j| parse_cell(&rec[j], row, names[j])).collect::<Result<_>>()?;
        gt.propensity.push(v[0]);
        gt.mu0.push(v[1]);
        gt.mu1.push(v[2]);
        gt.iate.push(v[3]);
    }
    if !footer {
        return Err(Error::Parse {
            row: gt.iate.len() + 1,
            column: "ate".into(),
            message: "missing ate footer".into(),
        });
    }
    Ok(gt)
}

pub const METRIC_COLUMNS: [&str; 7] = ["estimator", "bias", "abs_bias", "std", "rmse", "mean_pehe", "n_failures"];

pub fn metrics_csv(rows: &[MetricRow]) -> Result<Vec<u8>> {
    to_bytes(|wtr| {
        wtr.write_record(METRIC_COLUMNS)?;
        for r in rows {
            wtr.write_record([
                r.estimator.clone(),
                num(r.bias),
                num(r.abs_bias),
                num(r.std),
                num(r.rmse),
                r.mean_pehe.map(num).unwrap_or_default(),
                r.n_failures.to_string(),
            ])?;
        }
        Ok(())
    })
}

pub fn save_metrics(rows: &[MetricRow], path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path, &metrics_csv(rows)?)
}

/// Numeric cell that may be `NaN` (failed aggregates) or empty (absent).
fn parse_optional(text: &str, row: usize, column: &str) -> Result<Option<f64>> {
    match text.trim() {
        "" => Ok(None),
        "NaN" => Ok(Some(f64::NAN)),
        t => parse_cell(t, row, column).map(Some),
    }
}

pub fn load_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricRow>> {
    let mut rdr = csv::Reader::from_reader(fs::File::open(path)?);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != METRIC_COLUMNS {
        return Err(Error::Parse {
            row: 0,
            column: String::new(),
            message: format!("expected columns {}", METRIC_COLUMNS.join(",")),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = i + 1;
        let f = |j: usize| -> Result<f64> {
            parse_optional(&rec[j], row, METRIC_COLUMNS[j])?.ok_or_else(|| Error::Parse {
                row,
                column: METRIC_COLUMNS[j].into(),
                message: "empty cell".into(),
            })
        };
        out.push(MetricRow {
            estimator: rec[0].to_string(),
            bias: f(1)?,
            abs_bias: f(2)?,
            std: f(3)?,
            rmse: f(4)?,
            mean_pehe: parse_optional(&rec[5], row, "mean_pehe")?,
            n_failures: rec[6].parse().map_err(|_| Error::Parse {
                row,
                column: "n_failures".into(),
                message: format!("`{}` is not a count", &rec[6]),
            })?,
        });
    }
    Ok(out)
}

pub const FIDELITY_COLUMNS: [&str; 7] = ["variables", "test", "statistic", "p_value", "method", "permutations", "seed"];
pub const EFFECT_COLUMNS: [&str; 4] = ["true_ate", "model_ate", "abs_bias", "pehe"];

/// `<stem>_effects.csv` next to a fidelity report.
pub fn effects_path(report_path: &Path) -> PathBuf {
    let stem = report_path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    report_path.with_file_name(format!("{stem}_effects.csv"))
}

/// Writes the test table to `path` and, when effects are known, a one-row
/// effects table to [`effects_path`].
pub fn save_fidelity(report: &FidelityReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(|wtr| {
        wtr.write_record(FIDELITY_COLUMNS)?;
        for r in &report.rows {
            wtr.write_record([
                r.variables.clone(),
                r.test.clone(),
                num(r.statistic),
                num(r.p_value),
                r.method.clone(),
                r.permutations.to_string(),
                r.seed.to_string(),
            ])?;
        }
        Ok(())
    })?;
    atomic_write(path, &bytes)?;
    if let Some(e) = &report.effects {
        let bytes = to_bytes(|wtr| {
            wtr.write_record(EFFECT_COLUMNS)?;
            wtr.write_record([num(e.true_ate), num(e.model_ate), num(e.abs_bias), num(e.pehe)])
        })?;
        atomic_write(effects_path(path), &bytes)?;
    }
    Ok(())
}

pub fn load_fidelity(path: impl AsRef<Path>) -> Result<FidelityReport> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_reader(fs::File::open(path)?);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = i + 1;
        let f = |j: usize| parse_optional(&rec[j], row, FIDELITY_COLUMNS[j]).map(|v| v.unwrap_or(f64::NAN));
        rows.push(FidelityRow {
            variables: rec[0].to_string(),
            test: rec[1].to_string(),
            statistic: f(2)?,
            p_value: f(3)?,
            method: rec[4].to_string(),
            permutations: rec[5].parse().map_err(|_| Error::Parse {
                row,
                column: "permutations".into(),
                message: format!("`{}` is not a count", &rec[5]),
            })?,
            seed: rec[6].parse().map_err(|_| Error::Parse {
                row,
                column: "seed".into(),
                message: format!("`{}` is not a seed", &rec[6]),
            })?,
        });
    }
    let epath = effects_path(path);
    let effects = if epath.exists() {
        let mut rdr = csv::Reader::from_reader(fs::File::open(&epath)?);
        let rec = rdr
            .records()
            .next()
            .ok_or_else(|| Error::Parse {
                row: 1,
                column: String::new(),
                message: "empty effects table".into(),
            })?
            .map_err(csv_err)?;
        let f = |j: usize| parse_cell(&rec[j], 1, EFFECT_COLUMNS[j]);
        Some(EffectFidelity {
            true_ate: f(0)?,
            model_ate: f(1)?,
            abs_bias: f(2)?,
            pehe: f(3)?,
        })
    } else {
        None
    };
    Ok(FidelityReport { rows, effects })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;

    fn read(text: &str) -> Result<Dataset> {
        read_dataset(text.as_bytes(), &AtomSpec::None)
    }

    #[test]
    fn reads_small_file() {
        let ds = read("age,t,y,income\n30,1,2.5,10\n40,0,1.0,20\n50,1,0,30\n").unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.columns, vec!["age", "income"]);
        assert_eq!(ds.w.row(1).to_vec(), vec![40.0, 20.0]);
        assert_eq!(ds.t, vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn bad_treatment_cites_row_and_column() {
        let text = "w,t,y\n1,0,1\n2,1,1\n3,0,1\n4,1,1\n5,2,1\n";
        match read(text) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column.as_str()), (5, "t")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_inputs_are_parse_errors() {
        assert!(matches!(read("w,y\n1,2\n"), Err(Error::Parse { row: 0, column, .. }) if column == "t"));
        assert!(matches!(read("w,t,y\n1,0,abc\n"), Err(Error::Parse { row: 1, column, .. }) if column == "y"));
        assert!(matches!(read("w,t,y\n1,0,1\n1,0\n"), Err(Error::Parse { row: 2, .. })));
        assert!(matches!(read("w,t,y\n1,0,inf\n"), Err(Error::Parse { .. })));
        assert!(matches!(read("w,t,y\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn dataset_round_trip_is_bit_exact() {
        let mut rng = rng_from_seed(1);
        let w = Array2::from_shape_fn((25, 3), |_| rng.random::<f64>() * 1e3 - 17.0 + 1e-17);
        let t: Vec<f64> = (0..25).map(|i| (i % 2) as f64).collect();
        let y: Vec<f64> = (0..25).map(|_| rng.random::<f64>().ln()).collect();
        let ds = Dataset::new(w, t, y)
            .unwrap()
            .with_columns(vec!["a".into(), "b c".into(), "d,e".into()])
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        save_dataset(&ds, &p).unwrap();
        let back = load_dataset(&p, &AtomSpec::None).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn effects_and_atoms_are_read() {
        let text = "w,t,y,mu0,mu1\n1,0,0,0.5,1.5\n2,1,0,1,2\n3,1,4,1,3\n";
        let ds = read_dataset(text.as_bytes(), &AtomSpec::Auto { min_frequency: 0.5 }).unwrap();
        assert_eq!(ds.atoms, vec![0.0]);
        assert_eq!(ds.effects.as_ref().unwrap().iate(), vec![1.0, 1.0, 2.0]);
        assert_eq!(ds.d(), 1);
    }

    #[test]
    fn truth_and_metric_tables_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let gt = GroundTruth {
            ate: 0.1 + 0.2,
            iate: vec![0.1, 0.2],
            propensity: vec![0.3, 0.7],
            mu0: vec![1.0, -2.0],
            mu1: vec![1.1, -1.8],
        };
        let p = dir.path().join("s_truth.csv");
        save_truth(&gt, &p).unwrap();
        assert_eq!(load_truth(&p).unwrap(), gt);
        assert_eq!(truth_path(Path::new("/x/s.csv")), Path::new("/x/s_truth.csv"));

        let rows = vec![
            MetricRow {
                estimator: "ipw/logistic_l2?stabilized=true&trim=true".into(),
                bias: -0.25,
                abs_bias: 0.25,
                std: 1.0 / 3.0,
                rmse: 0.5,
                mean_pehe: None,
                n_failures: 2,
            },
            MetricRow {
                estimator: "com/ols".into(),
                bias: 0.0,
                abs_bias: 0.0,
                std: 0.0,
                rmse: 0.0,
                mean_pehe: Some(1e-300),
                n_failures: 0,
            },
        ];
        let p = dir.path().join("m.csv");
        save_metrics(&rows, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("estimator,bias,abs_bias,std,rmse,mean_pehe,n_failures\n"));
        assert_eq!(load_metrics(&p).unwrap(), rows);
    }

    #[test]
    fn fidelity_tables_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let report = FidelityReport {
            rows: vec![
                FidelityRow {
                    variables: "t,y".into(),
                    test: "energy".into(),
                    statistic: 0.5,
                    p_value: 0.25,
                    method: "exact".into(),
                    permutations: 99,
                    seed: 7,
                },
                FidelityRow {
                    variables: "t".into(),
                    test: "es".into(),
                    statistic: f64::NAN,
                    p_value: f64::NAN,
                    method: "failed".into(),
                    permutations: 0,
                    seed: u64::MAX,
                },
            ],
            effects: Some(EffectFidelity {
                true_ate: 1.0,
                model_ate: 1.5,
                abs_bias: 0.5,
                pehe: 0.75,
            }),
        };
        let p = dir.path().join("r.csv");
        save_fidelity(&report, &p).unwrap();
        let back = load_fidelity(&p).unwrap();
        assert_eq!(back.rows[0], report.rows[0]);
        assert!(back.rows[1].p_value.is_nan());
        assert_eq!(back.effects, report.effects);
    }
}
