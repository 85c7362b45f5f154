//! CSV and JSON formats.
//!
//! Curves: long format `subject_id,t,y`, one row per observation, or wide
//! format with a `subject_id` column followed by one column per grid point
//! (header = the grid point, empty or `NA` cell = unobserved).
//! Designs: `subject_id` plus named numeric columns, with a JSON role map
//! `{"x": [..], "z": [..], "intercept": "z"}` assigning columns to the tested
//! block `X` and the nuisance block `Z`.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::basis::BasisSet;
use crate::data::{DesignPair, FunctionalDataset, IrregularCurve, Regime};
use crate::error::{FosrError, Result};
use crate::grid::Grid;
use crate::regression::RegressionFit;
use crate::report::TestReport;
use crate::sim::ExperimentResult;

/// Grid points closer than this are treated as the same location.
pub const GRID_MATCH_TOLERANCE: f64 = 1e-9;

fn parse_err(line: u64, message: impl Into<String>) -> FosrError {
    FosrError::Parse {
        line,
        message: message.into(),
    }
}

fn csv_err(e: csv::Error) -> FosrError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => FosrError::Io(io),
        other => parse_err(line, format!("{other:?}")),
    }
}

fn parse_f64(field: &str, line: u64, what: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| parse_err(line, format!("{what} `{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("{what} `{field}` is not finite")));
    }
    Ok(v)
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| parse_err(1, format!("missing column `{name}`")))
}

/// A dataset together with the subject identifiers of its rows.
#[derive(Clone, Debug)]
pub struct LoadedCurves {
    pub dataset: FunctionalDataset,
    pub subjects: Vec<String>,
}

/// Read long-format curves.
///
/// For `Full` and `Partial` the grid defaults to the sorted distinct `t`
/// values; a supplied grid must contain every `t`. `Full` requires every
/// subject to be observed at every grid point. For the irregular regimes the
/// raw pairs are kept and `grid` (default: 100 equispaced points) is the
/// evaluation grid. Rows with `covered` equal to 0, when that column is
/// present, are skipped.
pub fn read_long_csv<R: Read>(reader: R, regime: Regime, grid: Option<Grid>) -> Result<LoadedCurves> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let (ci, ct, cy) = (
        column_index(&headers, "subject_id")?,
        column_index(&headers, "t")?,
        column_index(&headers, "y")?,
    );
    let cc = headers.iter().position(|h| h.trim() == "covered");
    let mut subjects: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut obs: Vec<Vec<(f64, f64, u64)>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let field = |c: usize| rec.get(c).ok_or_else(|| parse_err(line, "too few fields"));
        let id = field(ci)?.to_string();
        if id.is_empty() {
            return Err(parse_err(line, "empty subject_id"));
        }
        let t = parse_f64(field(ct)?, line, "t")?;
        if let Some(c) = cc {
            match field(c)? {
                "0" | "false" => continue,
                "1" | "true" | "" => {}
                other => return Err(parse_err(line, format!("covered must be 0 or 1, found `{other}`"))),
            }
        }
        let y = parse_f64(field(cy)?, line, "y")?;
        if !(0.0..=1.0).contains(&t) {
            return Err(parse_err(line, format!("t = {t} lies outside [0, 1]")));
        }
        let k = *index.entry(id.clone()).or_insert_with(|| {
            subjects.push(id);
            obs.push(Vec::new());
            obs.len() - 1
        });
        obs[k].push((t, y, line));
    }
    if subjects.is_empty() {
        return Err(parse_err(1, "no observations"));
    }
    for o in obs.iter_mut() {
        o.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = o.windows(2).find(|w| w[1].0 - w[0].0 <= GRID_MATCH_TOLERANCE) {
            return Err(parse_err(w[1].2, format!("duplicate t = {} for one subject", w[1].0)));
        }
    }

    let dataset = if regime.is_irregular() {
        let grid = match grid {
            Some(g) => g,
            None => Grid::uniform(100)?,
        };
        let curves = obs
            .into_iter()
            .map(|o| IrregularCurve::new(o.iter().map(|x| x.0).collect(), o.iter().map(|x| x.1).collect()))
            .collect::<Result<Vec<_>>>()?;
        FunctionalDataset::irregular(grid, curves, regime)?
    } else {
        let grid = match grid {
            Some(g) => g,
            None => {
                let mut pts: Vec<f64> = obs.iter().flatten().map(|x| x.0).collect();
                pts.sort_by(f64::total_cmp);
                pts.dedup_by(|a, b| (*a - *b).abs() <= GRID_MATCH_TOLERANCE);
                Grid::new(pts)?
            }
        };
        let n = subjects.len();
        let mut values = DMatrix::zeros(n, grid.len());
        let mut mask = DMatrix::from_element(n, grid.len(), false);
        for (i, o) in obs.iter().enumerate() {
            for &(t, y, line) in o {
                let c = grid.nearest_index(t);
                if (grid.points()[c] - t).abs() > GRID_MATCH_TOLERANCE {
                    return Err(parse_err(line, format!("t = {t} is not a grid point")));
                }
                values[(i, c)] = y;
                mask[(i, c)] = true;
            }
        }
        match regime {
            Regime::Full => {
                if let Some(i) = (0..n).find(|&i| mask.row(i).iter().any(|m| !m)) {
                    return Err(FosrError::InvalidInput(format!(
                        "subject `{}` is not observed on the whole grid; use the partial regime",
                        subjects[i]
                    )));
                }
                FunctionalDataset::full(grid, values)?
            }
            _ => FunctionalDataset::partial(grid, values, mask)?,
        }
    };
    Ok(LoadedCurves { dataset, subjects })
}

/// Read wide-format curves. The regime is `Full` when every cell is present
/// and `Partial` otherwise.
pub fn read_wide_csv<R: Read>(reader: R) -> Result<LoadedCurves> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let ci = column_index(&headers, "subject_id")?;
    let cols: Vec<usize> = (0..headers.len()).filter(|&c| c != ci).collect();
    let points = cols
        .iter()
        .map(|&c| parse_f64(&headers[c], 1, "grid point header"))
        .collect::<Result<Vec<_>>>()?;
    let grid = Grid::new(points).map_err(|e| parse_err(1, e.to_string()))?;
    let mut subjects = Vec::new();
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != headers.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", headers.len(), rec.len())));
        }
        subjects.push(rec[ci].to_string());
        let row = cols
            .iter()
            .map(|&c| match &rec[c] {
                "" | "NA" | "na" | "NaN" => Ok(None),
                s => parse_f64(s, line, "value").map(Some),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(parse_err(1, "no subjects"));
    }
    let (n, nn) = (rows.len(), grid.len());
    let values = DMatrix::from_fn(n, nn, |i, m| rows[i][m].unwrap_or(0.0));
    let mask = DMatrix::from_fn(n, nn, |i, m| rows[i][m].is_some());
    let dataset = if mask.iter().all(|m| *m) {
        FunctionalDataset::full(grid, values)?
    } else {
        FunctionalDataset::partial(grid, values, mask)?
    };
    Ok(LoadedCurves { dataset, subjects })
}

/// Where the constant column goes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterceptRole {
    X,
    #[default]
    Z,
    None,
}

/// Assignment of design columns to the tested and nuisance blocks.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RoleMap {
    #[serde(default)]
    pub x: Vec<String>,
    #[serde(default)]
    pub z: Vec<String>,
    #[serde(default)]
    pub intercept: InterceptRole,
}

impl RoleMap {
    pub fn from_json<R: Read>(reader: R) -> Result<Self> {
        Ok(serde_json::from_reader(reader)?)
    }
}

/// Read a design and order its rows like `subjects`. Without a role map
/// every column is tested and the intercept is a nuisance term.
pub fn read_design_csv<R: Read>(reader: R, subjects: &[String], roles: Option<&RoleMap>) -> Result<DesignPair> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let ci = column_index(&headers, "subject_id")?;
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(c, _)| *c != ci)
        .map(|(_, h)| h.to_string())
        .collect();
    let default_roles = RoleMap {
        x: names.clone(),
        z: Vec::new(),
        intercept: InterceptRole::Z,
    };
    let roles = roles.unwrap_or(&default_roles);
    let lookup = |name: &String| -> Result<usize> {
        names
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| FosrError::InvalidInput(format!("role map names unknown column `{name}`")))
    };
    let xi = roles.x.iter().map(lookup).collect::<Result<Vec<_>>>()?;
    let zi = roles.z.iter().map(lookup).collect::<Result<Vec<_>>>()?;
    if let Some(c) = xi.iter().find(|c| zi.contains(c)) {
        return Err(FosrError::InvalidInput(format!("column `{}` is in both x and z", names[*c])));
    }

    let mut rows: HashMap<String, (Vec<f64>, u64)> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != headers.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", headers.len(), rec.len())));
        }
        let vals = (0..headers.len())
            .filter(|c| *c != ci)
            .map(|c| parse_f64(&rec[c], line, &headers[c]))
            .collect::<Result<Vec<_>>>()?;
        if rows.insert(rec[ci].to_string(), (vals, line)).is_some() {
            return Err(parse_err(line, format!("duplicate subject `{}`", &rec[ci])));
        }
    }
    let n = subjects.len();
    let mut ordered = Vec::with_capacity(n);
    for s in subjects {
        let (v, _) = rows
            .get(s)
            .ok_or_else(|| FosrError::InvalidInput(format!("subject `{s}` has no design row")))?;
        ordered.push(v);
    }
    let block = |cols: &[usize], intercept: bool| -> DMatrix<f64> {
        let k = cols.len() + intercept as usize;
        DMatrix::from_fn(n, k, |i, j| {
            if intercept && j == 0 {
                1.0
            } else {
                ordered[i][cols[j - intercept as usize]]
            }
        })
    };
    let x = block(&xi, roles.intercept == InterceptRole::X);
    let z = block(&zi, roles.intercept == InterceptRole::Z);
    DesignPair::new(x, z)
}

pub fn write_report_json<W: Write>(w: W, report: &TestReport) -> Result<()> {
    serde_json::to_writer_pretty(w, report)?;
    Ok(())
}

/// Single-row CSV summary of a report.
pub fn write_report_csv<W: Write>(w: W, report: &TestReport) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "statistic",
        "statistic_kind",
        "regime",
        "p_value",
        "critical_value",
        "alpha",
        "reject",
        "null_draws",
        "eigenvalues_kept",
        "seed",
    ])
    .map_err(csv_err)?;
    let kind = serde_json::to_value(report.statistic_kind)?;
    wr.write_record([
        report.statistic.to_string(),
        kind.as_str().unwrap_or_default().to_string(),
        report.regime.name().to_string(),
        report.p_value.to_string(),
        report.critical_value.to_string(),
        report.alpha.to_string(),
        report.reject.to_string(),
        report.null_draws.to_string(),
        report.eigenvalues.len().to_string(),
        report.seed.to_string(),
    ])
    .map_err(csv_err)?;
    wr.flush()?;
    Ok(())
}

/// Columns `t, v1, …, vr`.
pub fn write_basis_csv<W: Write>(w: W, basis: &BasisSet) -> Result<()> {
    let names: Vec<String> = (1..=basis.dim()).map(|l| format!("v{l}")).collect();
    write_functions_csv(w, basis.grid(), &names, basis.functions())
}

/// Columns `t` and one per row of `rows` (functions on the grid).
pub fn write_functions_csv<W: Write>(w: W, grid: &Grid, names: &[String], rows: &DMatrix<f64>) -> Result<()> {
    if rows.nrows() != names.len() || rows.ncols() != grid.len() {
        return Err(FosrError::Dimension("function table does not match names and grid".into()));
    }
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["t".to_string()];
    header.extend(names.iter().cloned());
    wr.write_record(&header).map_err(csv_err)?;
    for (m, t) in grid.points().iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(rows.column(m).iter().map(|v| v.to_string()));
        wr.write_record(&rec).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// `β̂` and `η̂` on the grid, as columns `t, beta_1, …, eta_1, …`.
pub fn write_fit_csv<W: Write>(w: W, fit: &RegressionFit) -> Result<()> {
    let p = fit.beta_hat.nrows();
    let q = fit.eta_hat.nrows();
    let mut names: Vec<String> = (1..=p).map(|j| format!("beta_{j}")).collect();
    names.extend((1..=q).map(|k| format!("eta_{k}")));
    let mut stacked = DMatrix::zeros(p + q, fit.grid.len());
    stacked.rows_mut(0, p).copy_from(&fit.beta_hat);
    stacked.rows_mut(p, q).copy_from(&fit.eta_hat);
    write_functions_csv(w, &fit.grid, &names, &stacked)
}

/// Long-format smoothed curves: `subject_id,t,y,covered`.
pub fn write_curves_csv<W: Write>(w: W, subjects: &[String], ds: &FunctionalDataset) -> Result<()> {
    if subjects.len() != ds.n_subjects() {
        return Err(FosrError::Dimension("subject ids do not match the dataset".into()));
    }
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["subject_id", "t", "y", "covered"]).map_err(csv_err)?;
    for (i, s) in subjects.iter().enumerate() {
        for (m, t) in ds.grid().points().iter().enumerate() {
            let covered = ds.mask()[(i, m)];
            wr.write_record([
                s.clone(),
                t.to_string(),
                ds.values()[(i, m)].to_string(),
                (covered as u8).to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    wr.flush()?;
    Ok(())
}

pub const EXPERIMENT_CSV_HEADER: [&str; 12] = [
    "scenario",
    "regime",
    "n",
    "d",
    "tau",
    "alpha",
    "null_draws",
    "replicates",
    "failures",
    "rejections",
    "rejection_rate",
    "seed",
];

/// One row per experiment; runtimes are left out so that reruns are
/// byte-identical.
pub fn write_experiments_csv<W: Write>(w: W, rows: &[(ExperimentResult, f64, usize)]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(EXPERIMENT_CSV_HEADER).map_err(csv_err)?;
    for (r, alpha, draws) in rows {
        let c = &r.config;
        wr.write_record([
            c.scenario.to_string(),
            c.regime.name().to_string(),
            c.n.to_string(),
            c.d.to_string(),
            c.tau.to_string(),
            alpha.to_string(),
            draws.to_string(),
            r.replicates.to_string(),
            r.failures.to_string(),
            r.rejections.to_string(),
            r.rejection_rate.to_string(),
            c.seed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

/// Distinct sorted values, handy for summarizing irregular designs.
pub fn distinct_sorted(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let set: BTreeSet<u64> = values.into_iter().map(f64::to_bits).collect();
    let mut v: Vec<f64> = set.into_iter().map(f64::from_bits).collect();
    v.sort_by(f64::total_cmp);
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn long_partial_round() {
        let src = "subject_id,t,y\na,0,1\na,0.5,2\na,1,3\nb,0,4\nb,1,5\n";
        let l = read_long_csv(src.as_bytes(), Regime::Partial, None).unwrap();
        assert_eq!(l.subjects, vec!["a", "b"]);
        assert_eq!(l.dataset.grid().points(), &[0.0, 0.5, 1.0]);
        assert!(!l.dataset.mask()[(1, 1)]);
        assert_eq!(l.dataset.values()[(1, 2)], 5.0);
        assert!(read_long_csv(src.as_bytes(), Regime::Full, None).is_err());
    }

    #[test]
    fn long_reports_line_numbers() {
        let src = "subject_id,t,y\na,0,1\na,0.5,oops\n";
        match read_long_csv(src.as_bytes(), Regime::Partial, None) {
            Err(FosrError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let src = "subject_id,t,y\na,0,1\na,2,1\n";
        assert!(matches!(
            read_long_csv(src.as_bytes(), Regime::Partial, None),
            Err(FosrError::Parse { line: 3, .. })
        ));
        assert!(read_long_csv("subject,t,y\n".as_bytes(), Regime::Full, None).is_err());
    }

    #[test]
    fn wide_with_gaps() {
        let src = "subject_id,0,0.5,1\na,1,2,3\nb,4,NA,6\n";
        let l = read_wide_csv(src.as_bytes()).unwrap();
        assert_eq!(l.dataset.regime(), Regime::Partial);
        assert!(!l.dataset.mask()[(1, 1)]);
        let l = read_wide_csv("subject_id,0,1\na,1,2\nb,3,4\n".as_bytes()).unwrap();
        assert_eq!(l.dataset.regime(), Regime::Full);
    }

    #[test]
    fn design_roles() {
        let src = "subject_id,age,sex\nb,30,1\na,40,0\nc,35,1\nd,50,0\n";
        let subj: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let dp = read_design_csv(src.as_bytes(), &subj, None).unwrap();
        assert_eq!((dp.p(), dp.q()), (2, 1));
        assert_eq!(dp.x()[(0, 0)], 40.0);
        let roles: RoleMap = serde_json::from_str(r#"{"x":["age"],"z":["sex"],"intercept":"z"}"#).unwrap();
        let dp = read_design_csv(src.as_bytes(), &subj, Some(&roles)).unwrap();
        assert_eq!((dp.p(), dp.q()), (1, 2));
        let roles: RoleMap = serde_json::from_str(r#"{"x":[],"intercept":"x"}"#).unwrap();
        let dp = read_design_csv(src.as_bytes(), &subj, Some(&roles)).unwrap();
        assert_eq!((dp.p(), dp.q()), (1, 0));
        let missing = vec!["zz".to_string()];
        assert!(read_design_csv(src.as_bytes(), &missing, None).is_err());
    }
}
