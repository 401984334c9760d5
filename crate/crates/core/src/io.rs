//! CSV readers and writers for every tabular file the tool exchanges.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{SufficientStats, SurvivalRecord};
use crate::diagnostics::Histogram;
use crate::error::{Error, Result};
use crate::evaluate::{LMeasureReport, SweepRow};
use crate::gibbs::{IdentityCheck, PosteriorSummary};
use crate::grid::{Cell, Grid};

fn reader(path: &Path, headers: bool) -> Result<csv::Reader<BufReader<File>>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(headers)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(f)))
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn finish(mut w: csv::Writer<BufWriter<File>>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn check_header(path: &Path, rdr: &mut csv::Reader<BufReader<File>>, expected: &[&str]) -> Result<()> {
    let headers = rdr.headers()?;
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(Error::parse(
            path,
            format!("expected header `{}`, found `{}`", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct RecordRow {
    age: usize,
    time: usize,
    exact: u8,
}

pub fn read_records(path: &Path) -> Result<Vec<SurvivalRecord>> {
    let mut rdr = reader(path, true)?;
    check_header(path, &mut rdr, &["age", "time", "exact"])?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<RecordRow>().enumerate() {
        let row = row.map_err(|e| Error::parse(path, format!("row {}: {e}", i + 1)))?;
        let exact = match row.exact {
            0 => false,
            1 => true,
            other => {
                return Err(Error::InvalidRecord {
                    index: i,
                    reason: format!("exact must be 0 or 1, got {other}"),
                })
            }
        };
        out.push(SurvivalRecord::new(row.age, row.time, exact));
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[SurvivalRecord]) -> Result<()> {
    let mut w = writer(path)?;
    for r in records {
        w.serialize(RecordRow {
            age: r.age,
            time: r.time,
            exact: u8::from(r.exact),
        })?;
    }
    finish(w, path)
}

/// Headerless numeric matrix, rows = ages, columns = times.
pub fn read_matrix<T>(path: &Path) -> Result<Array2<T>>
where
    T: std::str::FromStr + Clone,
    T::Err: std::fmt::Display,
{
    let mut rdr = reader(path, false)?;
    let mut values = Vec::new();
    let mut n_cols = None;
    let mut n_rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::parse(path, format!("row {}: {e}", i + 1)))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        match n_cols {
            None => n_cols = Some(rec.len()),
            Some(n) if n != rec.len() => {
                return Err(Error::parse(path, format!("row {} has {} columns, expected {n}", i + 1, rec.len())))
            }
            _ => {}
        }
        for (j, field) in rec.iter().enumerate() {
            let v = field
                .parse::<T>()
                .map_err(|e| Error::parse(path, format!("row {}, column {}: {e}", i + 1, j + 1)))?;
            values.push(v);
        }
        n_rows += 1;
    }
    let n_cols = n_cols.ok_or_else(|| Error::parse(path, "matrix file is empty"))?;
    Array2::from_shape_vec((n_rows, n_cols), values).map_err(|e| Error::parse(path, e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
struct StatsRow {
    age: usize,
    time: usize,
    deaths: u64,
    at_risk: u64,
}

pub fn write_stats(path: &Path, stats: &SufficientStats) -> Result<()> {
    let mut w = writer(path)?;
    for cell in stats.grid().cells() {
        w.serialize(StatsRow {
            age: cell.age,
            time: cell.time,
            deaths: stats.deaths_at(cell),
            at_risk: stats.at_risk_at(cell),
        })?;
    }
    finish(w, path)
}

/// Frequentist `r/m` reference from a statistics file, laid out on `grid`.
/// Cells absent from the file or with `m = 0` are undefined.
pub fn read_stats_reference(path: &Path, grid: &Grid) -> Result<Array2<Option<f64>>> {
    let mut rdr = reader(path, true)?;
    check_header(path, &mut rdr, &["age", "time", "deaths", "at_risk"])?;
    let mut out = Array2::from_elem(grid.shape(), None);
    for (i, row) in rdr.deserialize::<StatsRow>().enumerate() {
        let row = row.map_err(|e| Error::parse(path, format!("row {}: {e}", i + 1)))?;
        let cell = Cell::new(row.age, row.time);
        if grid.contains(cell) && row.at_risk > 0 {
            out[cell.ix()] = Some(row.deaths as f64 / row.at_risk as f64);
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct HazardRow {
    age: usize,
    time: usize,
    hazard: f64,
}

/// Long-format `age,time,hazard`; cells not in the file are undefined.
pub fn read_reference(path: &Path, grid: &Grid) -> Result<Array2<Option<f64>>> {
    let mut rdr = reader(path, true)?;
    check_header(path, &mut rdr, &["age", "time", "hazard"])?;
    let mut out = Array2::from_elem(grid.shape(), None);
    for (i, row) in rdr.deserialize::<HazardRow>().enumerate() {
        let row = row.map_err(|e| Error::parse(path, format!("row {}: {e}", i + 1)))?;
        let cell = Cell::new(row.age, row.time);
        if grid.contains(cell) {
            out[cell.ix()] = Some(row.hazard);
        }
    }
    Ok(out)
}

/// Writes the defined cells of a hazard matrix as `age,time,hazard`.
pub fn write_reference(path: &Path, hazards: &Array2<Option<f64>>) -> Result<()> {
    let mut w = writer(path)?;
    for ((i, j), h) in hazards.indexed_iter() {
        if let Some(hazard) = h {
            w.serialize(HazardRow {
                age: i + 1,
                time: j + 1,
                hazard: *hazard,
            })?;
        }
    }
    finish(w, path)
}

#[derive(Debug, Serialize)]
struct SummaryRow {
    age: usize,
    time: usize,
    mean: f64,
    q025: f64,
    q975: f64,
}

pub fn write_summary(path: &Path, summary: &PosteriorSummary) -> Result<()> {
    let mut w = writer(path)?;
    for cell in summary.grid().cells() {
        let ix = cell.ix();
        w.serialize(SummaryRow {
            age: cell.age,
            time: cell.time,
            mean: summary.mean[ix],
            q025: summary.q025[ix],
            q975: summary.q975[ix],
        })?;
    }
    finish(w, path)
}

#[derive(Debug, Serialize, Deserialize)]
struct DrawRow {
    draw: usize,
    age: usize,
    time: usize,
    pi: f64,
}

pub fn write_draws(path: &Path, summary: &PosteriorSummary) -> Result<()> {
    let grid = summary.grid();
    let mut w = writer(path)?;
    for (k, row) in summary.pi_draws.rows().into_iter().enumerate() {
        for (flat, &pi) in row.iter().enumerate() {
            let cell = grid.cell_at(flat);
            w.serialize(DrawRow {
                draw: k + 1,
                age: cell.age,
                time: cell.time,
                pi,
            })?;
        }
    }
    finish(w, path)
}

/// Hazard draws exported by [`write_draws`]. The grid spans every age and
/// time present; the first `n_times` columns are treated as observed
/// (all of them when `None`).
pub fn read_draws(path: &Path, n_times: Option<usize>) -> Result<(Grid, Array2<f64>)> {
    let mut rdr = reader(path, true)?;
    check_header(path, &mut rdr, &["draw", "age", "time", "pi"])?;
    let mut rows: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    let (mut n_draws, mut n_ages, mut n_total) = (0, 0, 0);
    for (i, row) in rdr.deserialize::<DrawRow>().enumerate() {
        let row = row.map_err(|e| Error::parse(path, format!("row {}: {e}", i + 1)))?;
        if row.draw == 0 || row.age == 0 || row.time == 0 {
            return Err(Error::parse(path, format!("row {}: indices are 1-based", i + 1)));
        }
        n_draws = n_draws.max(row.draw);
        n_ages = n_ages.max(row.age);
        n_total = n_total.max(row.time);
        if rows.insert((row.draw, row.age, row.time), row.pi).is_some() {
            return Err(Error::parse(path, format!("row {}: duplicate entry", i + 1)));
        }
    }
    let observed = n_times.unwrap_or(n_total);
    if observed == 0 || observed > n_total {
        return Err(Error::InvalidConfig(format!(
            "n_times {observed} incompatible with {n_total} time columns in the draws"
        )));
    }
    let grid = Grid::new(n_ages, observed, n_total - observed)?;
    if rows.len() != n_draws * grid.n_cells() {
        return Err(Error::DataIntegrity(format!(
            "{}: expected {} x {} entries, found {}",
            path.display(),
            n_draws,
            grid.n_cells(),
            rows.len()
        )));
    }
    let mut draws = Array2::zeros((n_draws, grid.n_cells()));
    for ((d, age, time), pi) in rows {
        draws[[d - 1, grid.flat_index(Cell::new(age, time))]] = pi;
    }
    Ok((grid, draws))
}

#[derive(Debug, Serialize, Deserialize)]
struct OmegaRow {
    draw: usize,
    omega: f64,
}

pub fn write_omega(path: &Path, omega: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    for (k, &omega) in omega.iter().enumerate() {
        w.serialize(OmegaRow { draw: k + 1, omega })?;
    }
    finish(w, path)
}

pub fn read_omega(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = reader(path, true)?;
    check_header(path, &mut rdr, &["draw", "omega"])?;
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<OmegaRow>().enumerate() {
        let row = row.map_err(|e| Error::parse(path, format!("row {}: {e}", i + 1)))?;
        if row.draw != i + 1 {
            return Err(Error::parse(path, format!("row {}: draws must be numbered 1, 2, ...", i + 1)));
        }
        out.push(row.omega);
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
struct IdentityRow {
    age: usize,
    time: usize,
    residual: f64,
    std_error: f64,
    flagged: u8,
}

pub fn write_identity(path: &Path, grid: &Grid, check: &IdentityCheck) -> Result<()> {
    let mut w = writer(path)?;
    for cell in grid.cells() {
        w.serialize(IdentityRow {
            age: cell.age,
            time: cell.time,
            residual: check.residual[cell.ix()],
            std_error: check.std_error[cell.ix()],
            flagged: u8::from(check.flagged.contains(&cell)),
        })?;
    }
    finish(w, path)
}

#[derive(Debug, Serialize)]
struct LMeasureRow {
    window: String,
    nu: f64,
    variance_part: f64,
    bias_part: f64,
    l_measure: f64,
    n_cells: usize,
    n_excluded: usize,
}

pub fn write_lmeasure(path: &Path, reports: &[LMeasureReport]) -> Result<()> {
    let mut w = writer(path)?;
    for r in reports {
        w.serialize(LMeasureRow {
            window: r.window.kind.to_string(),
            nu: r.nu,
            variance_part: r.variance_part,
            bias_part: r.bias_part,
            l_measure: r.value,
            n_cells: r.n_cells,
            n_excluded: r.n_excluded,
        })?;
    }
    finish(w, path)
}

#[derive(Debug, Serialize)]
struct SweepCsvRow<'a> {
    p: usize,
    q: usize,
    c: u32,
    window: &'a str,
    nu: f64,
    variance_part: f64,
    bias_part: f64,
    l_measure: f64,
}

/// Long-format sweep table. A failed row is written once per expected window
/// with NaN measures.
pub fn write_sweep(path: &Path, rows: &[SweepRow], windows: &[&str], nu: f64) -> Result<()> {
    let mut w = writer(path)?;
    for row in rows {
        match &row.outcome {
            Ok(reports) => {
                for r in reports {
                    let name = r.window.kind.to_string();
                    w.serialize(SweepCsvRow {
                        p: row.p,
                        q: row.q,
                        c: row.c,
                        window: &name,
                        nu: r.nu,
                        variance_part: r.variance_part,
                        bias_part: r.bias_part,
                        l_measure: r.value,
                    })?;
                }
            }
            Err(_) => {
                for name in windows {
                    w.serialize(SweepCsvRow {
                        p: row.p,
                        q: row.q,
                        c: row.c,
                        window: name,
                        nu,
                        variance_part: f64::NAN,
                        bias_part: f64::NAN,
                        l_measure: f64::NAN,
                    })?;
                }
            }
        }
    }
    finish(w, path)
}

pub fn write_sweep_errors(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["p", "q", "c", "error"])?;
    for row in rows {
        if let Err(e) = &row.outcome {
            w.write_record([row.p.to_string(), row.q.to_string(), row.c.to_string(), e.clone()])?;
        }
    }
    finish(w, path)
}

/// Plot-ready diagnostic tables: `trace.csv`, `ergodic.csv`, `acf.csv`,
/// `histogram.csv`.
pub fn write_diagnostics(dir: &Path, values: &[f64], ergodic: &[f64], acf: &[f64], hist: &Histogram) -> Result<()> {
    let path = dir.join("trace.csv");
    let mut w = writer(&path)?;
    w.write_record(["iter", "value"])?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([(i + 1).to_string(), fmt_f64(*v)])?;
    }
    finish(w, &path)?;

    let path = dir.join("ergodic.csv");
    let mut w = writer(&path)?;
    w.write_record(["iter", "ergodic_mean"])?;
    for (i, v) in ergodic.iter().enumerate() {
        w.write_record([(i + 1).to_string(), fmt_f64(*v)])?;
    }
    finish(w, &path)?;

    let path = dir.join("acf.csv");
    let mut w = writer(&path)?;
    w.write_record(["lag", "acf"])?;
    for (k, v) in acf.iter().enumerate() {
        w.write_record([k.to_string(), fmt_f64(*v)])?;
    }
    finish(w, &path)?;

    let path = dir.join("histogram.csv");
    let mut w = writer(&path)?;
    w.write_record(["bin_low", "bin_high", "freq"])?;
    for (i, f) in hist.freq.iter().enumerate() {
        w.write_record([fmt_f64(hist.edges[i]), fmt_f64(hist.edges[i + 1]), fmt_f64(*f)])?;
    }
    finish(w, &path)
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
