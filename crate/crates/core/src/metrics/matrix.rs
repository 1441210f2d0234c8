use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// `a[t][τ]`: test accuracy on task `τ` after training stage `t`. Row lengths
/// never decrease; continual runs give row `t` exactly `t` entries, a
/// multitask run gives one row covering every task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<f64>>,
}

const CSV_SCHEMA: &str = "# schema: stage (1-based training stage), task_1..task_T (test accuracy in [0,1] on task j after that stage; empty = task not yet seen)";

impl AccuracyMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::input("accuracy matrix needs at least one entry"));
        }
        for (t, row) in rows.iter().enumerate() {
            if t > 0 && row.len() < rows[t - 1].len() {
                return Err(Error::input(format!("row {} is shorter than row {t}", t + 1)));
            }
            if row.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(Error::input(format!("row {} has an entry outside [0, 1]", t + 1)));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Number of tasks covered by the final row.
    pub fn num_tasks(&self) -> usize {
        self.rows.last().map_or(0, Vec::len)
    }

    pub fn get(&self, stage: usize, task: usize) -> Option<f64> {
        self.rows.get(stage)?.get(task).copied()
    }

    pub fn last_row(&self) -> &[f64] {
        self.rows.last().expect("non-empty")
    }

    pub fn is_lower_triangular(&self) -> bool {
        self.rows.iter().enumerate().all(|(t, r)| r.len() == t + 1)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut out = out;
        writeln!(out, "{CSV_SCHEMA}").map_err(|e| Error::io("<csv>", e))?;
        let t = self.num_tasks();
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<String> = std::iter::once("stage".to_string())
            .chain((1..=t).map(|j| format!("task_{j}")))
            .collect();
        w.write_record(&header).map_err(csv_err)?;
        for (s, row) in self.rows.iter().enumerate() {
            let rec: Vec<String> = std::iter::once((s + 1).to_string())
                .chain((0..t).map(|j| row.get(j).map_or(String::new(), |v| v.to_string())))
                .collect();
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Parses the layout produced by [`AccuracyMatrix::write_csv`]. Errors
    /// name the 1-based data row.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .flexible(true)
            .from_reader(input);
        let width = r.headers().map_err(csv_err)?.len();
        if width < 2 {
            return Err(Error::Format {
                offset: 0,
                message: "header needs a stage column and at least one task column".into(),
            });
        }
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let line = i + 1;
            let bad = |message: String| Error::Format {
                offset: rec.position().map_or(0, |p| p.byte()),
                message: format!("row {line}: {message}"),
            };
            if rec.len() != width {
                return Err(bad(format!("{} fields, header has {width}", rec.len())));
            }
            let mut row = Vec::new();
            let mut ended = false;
            for cell in rec.iter().skip(1) {
                let cell = cell.trim();
                if cell.is_empty() {
                    ended = true;
                    continue;
                }
                if ended {
                    return Err(bad("value after an empty cell".into()));
                }
                row.push(cell.parse::<f64>().map_err(|e| bad(format!("{cell:?}: {e}")))?);
            }
            if row.is_empty() {
                return Err(bad("no accuracy values".into()));
            }
            if let Some(prev) = rows.last().map(Vec::len) {
                if row.len() < prev {
                    return Err(bad(format!("{} values after a row with {prev}", row.len())));
                }
            }
            rows.push(row);
        }
        Self::new(rows).map_err(|e| Error::Format {
            offset: 0,
            message: e.to_string(),
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format {
        offset: e.position().map_or(0, |p| p.byte()),
        message: e.to_string(),
    }
}

/// Mean of the final row.
pub fn final_accuracy(a: &AccuracyMatrix) -> f64 {
    let last = a.last_row();
    last.iter().sum::<f64>() / last.len() as f64
}

/// Mean over all but the last task of the largest drop from any earlier stage
/// to the final one. Zero for a single task or a single stage.
pub fn forgetting(a: &AccuracyMatrix) -> f64 {
    let t = a.num_tasks();
    let rows = a.rows();
    if t <= 1 || rows.len() <= 1 {
        return 0.0;
    }
    let last = a.last_row();
    let earlier = &rows[..rows.len() - 1];
    let mut total = 0.0;
    for (tau, &final_acc) in last.iter().enumerate().take(t - 1) {
        let best = earlier
            .iter()
            .filter_map(|r| r.get(tau))
            .map(|&v| v - final_acc)
            .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.max(d))));
        total += best.unwrap_or(0.0);
    }
    total / (t - 1) as f64
}

/// Mean of each task's accuracy at the first stage that evaluates it.
pub fn learning_accuracy(a: &AccuracyMatrix) -> f64 {
    let t = a.num_tasks();
    let sum: f64 = (0..t)
        .map(|tau| {
            a.rows()
                .iter()
                .find_map(|r| r.get(tau))
                .copied()
                .expect("last row covers every task")
        })
        .sum();
    sum / t as f64
}

pub fn forgetting_improvement(f_single: f64, f_method: f64) -> f64 {
    f_single - f_method
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub final_accuracy: f64,
    pub forgetting: f64,
    pub learning_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub forgetting_improvement: Option<f64>,
}

impl MetricsSummary {
    pub fn of(a: &AccuracyMatrix, baseline: Option<&AccuracyMatrix>) -> Self {
        let f = forgetting(a);
        Self {
            final_accuracy: final_accuracy(a),
            forgetting: f,
            learning_accuracy: learning_accuracy(a),
            forgetting_improvement: baseline.map(|b| forgetting_improvement(forgetting(b), f)),
        }
    }
}
