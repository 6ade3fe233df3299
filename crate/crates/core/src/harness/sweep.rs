use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::config::{ConfigError, GateSpec, RunConfig, CONFIG_VERSION};
use crate::gate::TauCut;
use crate::optim::{GatePlacement, Method};
use crate::simulator::{run_experiment, DelaySchedule, RunResult};

/// Cross product of run configurations. `base.outer` overrides apply to
/// every method; the method, delay schedule and seed of `base` are replaced
/// by the axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub version: u32,
    pub base: RunConfig,
    pub methods: Vec<Method>,
    pub delays: Vec<DelaySchedule>,
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_cuts: Option<Vec<TauCut>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub etas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mus: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub placements: Option<Vec<GatePlacement>>,
    /// Upper bound on concurrently running cells.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub config: RunConfig,
}

impl Cell {
    pub fn variant(&self) -> String {
        super::variant_label(&self.config.outer_config())
    }

    pub fn file_name(&self) -> String {
        self.config.result_file_name()
    }
}

fn axis<T: Clone>(values: &Option<Vec<T>>) -> Vec<Option<T>> {
    match values {
        Some(v) => v.iter().cloned().map(Some).collect(),
        None => vec![None],
    }
}

impl SweepSpec {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let spec: SweepSpec = serde_json::from_str(text).map_err(ConfigError::from)?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Product of the axis sizes.
    pub fn cell_count(&self) -> usize {
        let opt = |n: Option<usize>| n.unwrap_or(1);
        self.methods.len()
            * self.delays.len()
            * self.seeds.len()
            * opt(self.alphas.as_ref().map(Vec::len))
            * opt(self.tau_cuts.as_ref().map(Vec::len))
            * opt(self.etas.as_ref().map(Vec::len))
            * opt(self.mus.as_ref().map(Vec::len))
            * opt(self.placements.as_ref().map(Vec::len))
    }

    /// Cells in axis order, seeds varying fastest.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::with_capacity(self.cell_count());
        for &method in &self.methods {
            for delay in &self.delays {
                for alpha in axis(&self.alphas) {
                    for tau_cut in axis(&self.tau_cuts) {
                        for eta in axis(&self.etas) {
                            for mu in axis(&self.mus) {
                                for placement in axis(&self.placements) {
                                    let mut outer = self.base.outer.clone();
                                    outer.method = method;
                                    if alpha.is_some() || tau_cut.is_some() {
                                        let g = outer.gate.get_or_insert(GateSpec {
                                            alpha: None,
                                            tau_cut: None,
                                        });
                                        g.alpha = alpha.or(g.alpha);
                                        g.tau_cut = tau_cut.or(g.tau_cut);
                                    }
                                    outer.eta = eta.or(outer.eta);
                                    outer.mu = mu.or(outer.mu);
                                    outer.gate_placement = placement.or(outer.gate_placement);
                                    for &seed in &self.seeds {
                                        let config = RunConfig {
                                            outer: outer.clone(),
                                            delay: delay.clone(),
                                            seed,
                                            ..self.base.clone()
                                        };
                                        out.push(Cell {
                                            index: out.len(),
                                            config,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Validates the spec and every cell before anything runs. Cell errors
    /// are prefixed with `cells[i]`.
    pub fn validate(&self) -> Result<Vec<Cell>, HarnessError> {
        let mut issues = Vec::new();
        if self.version != CONFIG_VERSION {
            issues.push(format!("version: unsupported version {}", self.version));
        }
        for (name, empty) in [
            ("methods", self.methods.is_empty()),
            ("delays", self.delays.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ] {
            if empty {
                issues.push(format!("{name}: axis is empty"));
            }
        }
        if self.jobs == Some(0) {
            issues.push("jobs: must be at least 1".into());
        }
        let seeds: BTreeSet<_> = self.seeds.iter().collect();
        if seeds.len() != self.seeds.len() {
            issues.push("seeds: duplicate seed".into());
        }
        let cells = self.cells();
        let mut names = BTreeSet::new();
        for cell in &cells {
            if let Err(e) = cell.config.validate() {
                if let ConfigError::Invalid(list) = &e {
                    for item in list {
                        issues.push(format!("cells[{}].{}: {}", cell.index, item.path, item.message));
                    }
                } else {
                    issues.push(format!("cells[{}]: {e}", cell.index));
                }
            } else if !names.insert(cell.file_name()) {
                issues.push(format!("cells[{}]: duplicates an earlier cell", cell.index));
            }
        }
        if issues.is_empty() {
            Ok(cells.into_iter().map(|c| Cell { config: c.config.resolved(), ..c }).collect())
        } else {
            Err(HarnessError::InvalidSweep(issues))
        }
    }
}

/// What happened to one cell during a sweep.
#[derive(Debug)]
pub enum CellStatus {
    Ran,
    Skipped,
    Failed(String),
}

#[derive(Debug)]
pub struct SweepReport {
    pub cells: Vec<Cell>,
    pub statuses: Vec<CellStatus>,
    pub summary: super::Summary,
    pub csv_path: PathBuf,
    pub table_path: PathBuf,
}

impl SweepReport {
    pub fn ran(&self) -> usize {
        self.statuses.iter().filter(|s| matches!(s, CellStatus::Ran)).count()
    }

    pub fn skipped(&self) -> usize {
        self.statuses.iter().filter(|s| matches!(s, CellStatus::Skipped)).count()
    }

    pub fn failures(&self) -> Vec<(usize, &str)> {
        self.statuses
            .iter()
            .enumerate()
            .filter_map(|(i, s)| match s {
                CellStatus::Failed(m) => Some((i, m.as_str())),
                _ => None,
            })
            .collect()
    }
}

/// Writes `result` to `<dir>/<hash>_s<seed>.json` and returns the path.
pub fn write_result(dir: &Path, result: &RunResult) -> Result<PathBuf, HarnessError> {
    let path = dir.join(result.config.result_file_name());
    let tmp = path.with_extension("json.tmp");
    let io = |source| HarnessError::Io {
        path: path.clone(),
        source,
    };
    fs::write(&tmp, result.to_json()).map_err(io)?;
    fs::rename(&tmp, &path).map_err(io)?;
    Ok(path)
}

pub fn read_result(path: &Path) -> Result<RunResult, HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| HarnessError::BadResult {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Runs every cell without a result file in `out`, then writes
/// `summary.csv` and `summary.txt` from the files on disk.
pub fn run_sweep(spec: &SweepSpec, out: &Path, jobs: Option<usize>) -> Result<SweepReport, HarnessError> {
    let cells = spec.validate()?;
    fs::create_dir_all(out).map_err(|source| HarnessError::Io {
        path: out.to_path_buf(),
        source,
    })?;
    let jobs = jobs.or(spec.jobs).unwrap_or_else(rayon::current_num_threads).max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let statuses: Vec<CellStatus> = pool.install(|| {
        cells
            .par_iter()
            .map(|cell| {
                if out.join(cell.file_name()).exists() {
                    return CellStatus::Skipped;
                }
                match run_experiment(&cell.config) {
                    Ok(result) => match write_result(out, &result) {
                        Ok(_) => CellStatus::Ran,
                        Err(e) => CellStatus::Failed(e.to_string()),
                    },
                    Err(e) => CellStatus::Failed(e.to_string()),
                }
            })
            .collect()
    });
    let summary = super::summarize(&cells, out)?;
    let csv_path = out.join("summary.csv");
    let table_path = out.join("summary.txt");
    let io = |path: &PathBuf, source| HarnessError::Io {
        path: path.clone(),
        source,
    };
    fs::write(&csv_path, summary.to_csv()).map_err(|e| io(&csv_path, e))?;
    fs::write(&table_path, summary.to_table()).map_err(|e| io(&table_path, e))?;
    Ok(SweepReport {
        cells,
        statuses,
        summary,
        csv_path,
        table_path,
    })
}
