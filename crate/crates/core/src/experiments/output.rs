use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::study::{HistoryLine, Method, StudyRecord, StudyResult, StudySummary, HIST_BINS};
use crate::error::{Error, Result};
use crate::pmp::Extremal;
use crate::transcription::DiscreteTrajectory;

/// Column names of the Dubins trajectory files.
pub const DUBINS_COLUMNS: [&str; 4] = ["r_x", "r_y", "theta", "u"];

/// A numeric table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    /// Row-major values.
    pub values: DMatrix<f64>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.columns)?;
        for row in self.values.row_iter() {
            out.write_record(row.iter().map(|v| v.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut input = csv::Reader::from_reader(r);
        let columns: Vec<String> = input.headers()?.iter().map(str::to_string).collect();
        let mut data = Vec::new();
        let mut rows = 0;
        for rec in input.records() {
            let rec = rec?;
            for field in rec.iter() {
                data.push(field.trim().parse::<f64>().map_err(|e| Error::Parse(format!("'{field}': {e}")))?);
            }
            rows += 1;
        }
        if rows == 0 {
            return Err(Error::Parse("table has no rows".into()));
        }
        Ok(Table {
            values: DMatrix::from_row_slice(rows, columns.len(), &data),
            columns,
        })
    }
}

/// `s_tilde, t`, the states and the controls of an SCP iterate.
pub fn trajectory_table(traj: &DiscreteTrajectory, state_names: &[String], control_names: &[String]) -> Table {
    let (n, m) = (traj.state_dim(), traj.control_dim());
    let mut columns = vec!["s_tilde".to_string(), "t".to_string()];
    columns.extend(state_names.iter().cloned());
    columns.extend(control_names.iter().cloned());
    let values = DMatrix::from_fn(traj.node_count(), 2 + n + m, |j, c| match c {
        0 => traj.grid.nodes()[j],
        1 => traj.time(j),
        c if c < 2 + n => traj.states[(j, c - 2)],
        c => traj.controls[(j, c - 2 - n)],
    });
    Table { columns, values }
}

/// Same layout as [`trajectory_table`] followed by costate columns `p_<state>`.
pub fn extremal_table(ext: &Extremal, state_names: &[String], control_names: &[String]) -> Table {
    let (n, m) = (ext.states.ncols(), ext.controls.ncols());
    let mut columns = vec!["s_tilde".to_string(), "t".to_string()];
    columns.extend(state_names.iter().cloned());
    columns.extend(control_names.iter().cloned());
    columns.extend(state_names.iter().map(|s| format!("p_{s}")));
    let values = DMatrix::from_fn(ext.len(), 2 + 2 * n + m, |j, c| match c {
        0 => ext.times[j] / ext.final_time,
        1 => ext.times[j],
        c if c < 2 + n => ext.states[(j, c - 2)],
        c if c < 2 + n + m => ext.controls[(j, c - 2 - n)],
        c => ext.costates[(j, c - 2 - n - m)],
    });
    Table { columns, values }
}

pub fn dubins_names() -> (Vec<String>, Vec<String>) {
    (
        DUBINS_COLUMNS[..3].iter().map(|s| s.to_string()).collect(),
        vec![DUBINS_COLUMNS[3].to_string()],
    )
}

pub fn write_records<W: Write>(w: W, records: &[StudyRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(r: R) -> Result<Vec<StudyRecord>> {
    let mut input = csv::Reader::from_reader(r);
    input.deserialize().map(|r| r.map_err(Error::from)).collect()
}

/// `iterations, plain[, accelerated]` for bins `1..=HIST_BINS`.
pub fn write_histogram<W: Write>(w: W, summary: &StudySummary) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["iterations".to_string()];
    header.extend(summary.methods.iter().map(|m| match m.method {
        Method::Plain => "plain".to_string(),
        Method::Accelerated => "accelerated".to_string(),
    }));
    out.write_record(&header)?;
    for b in 0..HIST_BINS {
        let mut row = vec![(b + 1).to_string()];
        row.extend(summary.methods.iter().map(|m| m.histogram[b].to_string()));
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Write `records.csv`, `summary.json`, `hist_iters.csv`, `history.jsonl`
/// and one `traj_<seed>.csv` per scenario (plain SCP result) into `dir`.
pub fn write_study(dir: &Path, result: &StudyResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_records(File::create(dir.join("records.csv"))?, &result.records())?;
    let mut summary = BufWriter::new(File::create(dir.join("summary.json"))?);
    serde_json::to_writer_pretty(&mut summary, &result.summary)?;
    writeln!(summary)?;
    write_histogram(File::create(dir.join("hist_iters.csv"))?, &result.summary)?;
    let mut history = BufWriter::new(File::create(dir.join("history.jsonl"))?);
    let (states, controls) = dubins_names();
    for o in &result.outcomes {
        for (method, lines) in &o.histories {
            for record in lines {
                serde_json::to_writer(
                    &mut history,
                    &HistoryLine {
                        seed: o.scenario.seed,
                        method: *method,
                        record,
                    },
                )?;
                writeln!(history)?;
            }
        }
        let table = trajectory_table(&o.plain_trajectory, &states, &controls);
        table.write_csv(BufWriter::new(File::create(dir.join(format!("traj_{}.csv", o.scenario.seed)))?))?;
    }
    history.flush()?;
    Ok(())
}
