//! Ablation grids: one training run per (cell, seed), all cells sharing
//! the same seeds.

use std::fmt::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::config::TrainConfig;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::scalar::Scalar;

use super::{train, TrainStatus};

/// A named set of config overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub label: String,
    pub overrides: Vec<(String, String)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationGrid {
    pub cells: Vec<AblationCell>,
}

impl AblationGrid {
    /// Cartesian product of `key=v1,v2,...` axes. No axes yields a single
    /// baseline cell with no overrides.
    pub fn from_axes<S: AsRef<str>>(axes: &[S]) -> Result<Self> {
        let mut cells = vec![AblationCell {
            label: "baseline".into(),
            overrides: Vec::new(),
        }];
        for axis in axes {
            let axis = axis.as_ref();
            let (key, values) = axis
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("grid axis {axis:?} is not key=v1,v2")))?;
            TrainConfig::default().get(key.trim())?;
            let values: Vec<&str> = values.split(',').map(str::trim).collect();
            let mut next = Vec::with_capacity(cells.len() * values.len());
            for c in &cells {
                for v in &values {
                    let mut overrides = c.overrides.clone();
                    overrides.push((key.trim().to_string(), v.to_string()));
                    next.push(AblationCell {
                        label: overrides
                            .iter()
                            .map(|(k, v)| format!("{k}={v}"))
                            .collect::<Vec<_>>()
                            .join(";"),
                        overrides,
                    });
                }
            }
            cells = next;
        }
        Ok(Self { cells })
    }
}

fn cell(label: &str, overrides: &[(&str, &str)]) -> AblationCell {
    AblationCell {
        label: label.into(),
        overrides: overrides
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
    }
}

/// Grids mirroring the published ablations:
///
/// * `modules`: attention loss, query PE and query initialization added
///   one at a time.
/// * `pe`: query / memory positional encoding on and off.
/// * `variance`: query initialization variance 0.5, 1, 3, 5.
pub fn preset_grid(name: &str) -> Result<AblationGrid> {
    let cells = match name {
        "modules" => vec![
            cell(
                "baseline",
                &[
                    ("loss.attention_loss", "false"),
                    ("model.query_pe", "false"),
                    ("model.query_variance", "1"),
                ],
            ),
            cell(
                "+attention_loss",
                &[
                    ("loss.attention_loss", "true"),
                    ("model.query_pe", "false"),
                    ("model.query_variance", "1"),
                ],
            ),
            cell(
                "+query_pe",
                &[
                    ("loss.attention_loss", "true"),
                    ("model.query_pe", "true"),
                    ("model.query_variance", "1"),
                ],
            ),
            cell(
                "+query_init",
                &[
                    ("loss.attention_loss", "true"),
                    ("model.query_pe", "true"),
                    ("model.query_variance", "5"),
                ],
            ),
        ],
        "pe" => vec![
            cell(
                "none",
                &[("model.query_pe", "false"), ("model.memory_pe", "false")],
            ),
            cell(
                "memory",
                &[("model.query_pe", "false"), ("model.memory_pe", "true")],
            ),
            cell(
                "both",
                &[("model.query_pe", "true"), ("model.memory_pe", "true")],
            ),
            cell(
                "query",
                &[("model.query_pe", "true"), ("model.memory_pe", "false")],
            ),
        ],
        "variance" => ["0.5", "1", "3", "5"]
            .iter()
            .map(|v| cell(&format!("variance={v}"), &[("model.query_variance", v)]))
            .collect(),
        other => {
            return Err(Error::Config(format!(
                "unknown ablation preset {other:?} (modules, pe, variance)"
            )))
        }
    };
    Ok(AblationGrid { cells })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub cell: String,
    pub overrides: Vec<(String, String)>,
    pub seed: u64,
    /// Test metrics after the last epoch.
    pub final_report: EvalReport,
    /// Test metrics of the best-SRCC epoch.
    pub best_report: EvalReport,
    pub diverged: bool,
}

impl AblationRow {
    pub fn csv_header(layers: usize) -> String {
        let mut h = String::from("cell,seed,diverged,final_srcc,final_rl2_x100,best_srcc");
        for i in 1..=layers {
            write!(h, ",final_diag_layer{i}").unwrap();
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let mut r = format!(
            "{},{},{},{},{},{}",
            self.cell,
            self.seed,
            self.diverged,
            self.final_report.srcc,
            self.final_report.rl2_x100,
            self.best_report.srcc
        );
        for d in &self.final_report.diagonality_per_layer {
            write!(r, ",{d}").unwrap();
        }
        r
    }
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let layers = rows
        .first()
        .map_or(0, |r| r.final_report.diagonality_per_layer.len());
    let mut s = AblationRow::csv_header(layers);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Trains every cell once per seed, on up to `threads` worker threads.
///
/// Rows come back ordered by cell, then seed, whatever the thread count.
pub fn run_ablation<T: Scalar>(
    base: &TrainConfig,
    grid: &AblationGrid,
    data: &Dataset,
    seeds: &[u64],
    threads: usize,
) -> Result<Vec<AblationRow>> {
    let baseline = AblationCell {
        label: "baseline".into(),
        overrides: Vec::new(),
    };
    let cells: Vec<&AblationCell> = if grid.cells.is_empty() {
        vec![&baseline]
    } else {
        grid.cells.iter().collect()
    };
    let seeds = if seeds.is_empty() {
        vec![base.seed]
    } else {
        seeds.to_vec()
    };

    let mut jobs = Vec::with_capacity(cells.len() * seeds.len());
    for c in &cells {
        let mut cfg = base.clone();
        for (k, v) in &c.overrides {
            cfg.set(k, v)?;
        }
        for &s in &seeds {
            let mut cfg = cfg.clone();
            cfg.seed = s;
            cfg.validate()?;
            jobs.push((*c, cfg));
        }
    }

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<AblationRow>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let workers = threads.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((c, cfg)) = jobs.get(i) else { break };
                let row = train::<T>(cfg, data).map(|out| AblationRow {
                    cell: c.label.clone(),
                    overrides: c.overrides.clone(),
                    seed: cfg.seed,
                    final_report: out.final_report,
                    best_report: out.best_report,
                    diverged: matches!(out.status, TrainStatus::Diverged { .. }),
                });
                results.lock().unwrap()[i] = Some(row);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}
