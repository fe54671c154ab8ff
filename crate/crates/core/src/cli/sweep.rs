//! Grid sweeps over loss weights, feature-layer sets and labeled counts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use crate::error::{ensure, Error, Result};
use crate::losses::{LayerSet, LossConfig};
use crate::synth::Dataset;
use crate::trainer::{TrainConfig, TrainMode};

use super::commands::train_any;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepGrid {
    pub alpha_beta: Vec<(f64, f64)>,
    pub l_mul: Vec<LayerSet>,
    pub n_lab: Vec<usize>,
    /// Runs per cell; seeds are `base, base + 1, ...`.
    pub seeds: usize,
    /// Adds a supervised-only cell for every labeled count.
    pub include_supervised: bool,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            alpha_beta: (0..=10).map(|i| (i as f64 / 10.0, (10 - i) as f64 / 10.0)).collect(),
            l_mul: (1..=7).map(|n| LayerSet::prefix(n).expect("prefix within 1..=7")).collect(),
            n_lab: vec![30, 60, 90, 120, 150, 300, 600, 900, 1200, 1500],
            seeds: 1,
            include_supervised: true,
        }
    }
}

impl SweepGrid {
    /// One cell: a single weight pair, layer set and labeled count.
    pub fn single(alpha: f64, beta: f64, l_mul: LayerSet, n_lab: usize) -> Self {
        Self {
            alpha_beta: vec![(alpha, beta)],
            l_mul: vec![l_mul],
            n_lab: vec![n_lab],
            seeds: 1,
            include_supervised: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            !self.alpha_beta.is_empty() && !self.l_mul.is_empty() && !self.n_lab.is_empty(),
            Config,
            "sweep grid has an empty axis"
        );
        ensure!(self.seeds >= 1, Config, "sweep needs at least one seed per cell");
        for &(a, b) in &self.alpha_beta {
            for &l in &self.l_mul {
                LossConfig::new(a, b, l)?;
            }
        }
        for &n in &self.n_lab {
            ensure!(n >= 3 && n % 3 == 0, Config, "labeled count {n} must be a positive multiple of 3");
        }
        Ok(())
    }

    /// `"0.7:0.3;0.5:0.5"`.
    pub fn parse_alpha_beta(text: &str) -> Result<Vec<(f64, f64)>> {
        text.split(';')
            .map(|pair| {
                let (a, b) = pair
                    .split_once(':')
                    .ok_or_else(|| Error::Config(format!("alpha:beta pair expected, got {pair:?}")))?;
                let num = |s: &str| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad weight {s:?}")))
                };
                Ok((num(a)?, num(b)?))
            })
            .collect()
    }

    /// `"1;1,2;1,2,3"`.
    pub fn parse_lmul(text: &str) -> Result<Vec<LayerSet>> {
        text.split(';').map(str::parse).collect()
    }

    /// `"30,60,90"`.
    pub fn parse_nlab(text: &str) -> Result<Vec<usize>> {
        text.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad labeled count {s:?}")))
            })
            .collect()
    }

    pub fn alpha_beta_text(&self) -> String {
        let v: Vec<String> = self.alpha_beta.iter().map(|(a, b)| format!("{a}:{b}")).collect();
        v.join(";")
    }

    pub fn lmul_text(&self) -> String {
        let v: Vec<String> = self.l_mul.iter().map(ToString::to_string).collect();
        v.join(";")
    }

    pub fn nlab_text(&self) -> String {
        let v: Vec<String> = self.n_lab.iter().map(ToString::to_string).collect();
        v.join(",")
    }

    /// Every run of the sweep in a fixed order: per labeled count, the
    /// supervised cell (if enabled) and then each weight pair and layer set.
    pub fn jobs(&self, base_seed: u64) -> Vec<SweepJob> {
        let mut out = Vec::new();
        for &n_lab in &self.n_lab {
            let mut cells = Vec::new();
            if self.include_supervised {
                cells.push((TrainMode::Supervised, None));
            }
            for &(a, b) in &self.alpha_beta {
                for &l in &self.l_mul {
                    cells.push((TrainMode::Wlssgan, Some((a, b, l))));
                }
            }
            for (mode, weights) in cells {
                for s in 0..self.seeds as u64 {
                    out.push(SweepJob {
                        mode,
                        weights,
                        n_lab,
                        seed: base_seed + s,
                    });
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepJob {
    pub mode: TrainMode,
    /// `(alpha, beta, l_mul)`; `None` for supervised runs.
    pub weights: Option<(f64, f64, LayerSet)>,
    pub n_lab: usize,
    pub seed: u64,
}

impl SweepJob {
    pub fn train_config(&self, base: &TrainConfig) -> Result<TrainConfig> {
        let mut cfg = base.clone();
        cfg.seed = self.seed;
        cfg.n_lab = Some(self.n_lab);
        if let Some((a, b, l)) = self.weights {
            cfg.loss = LossConfig {
                adversarial: base.loss.adversarial,
                ..LossConfig::new(a, b, l)?
            };
        }
        Ok(cfg)
    }

    fn cell_fields(&self) -> [String; 4] {
        match self.weights {
            Some((a, b, l)) => [self.mode.to_string(), a.to_string(), b.to_string(), l.to_string()],
            None => [self.mode.to_string(), String::new(), String::new(), String::new()],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutcome {
    pub job: SweepJob,
    pub steady_state_accuracy: f64,
}

/// Runs every job on a pool of `workers` threads. Results come back in job
/// order regardless of scheduling.
pub fn run_jobs(dataset: &Dataset, base: &TrainConfig, jobs: &[SweepJob], workers: usize) -> Result<Vec<SweepOutcome>> {
    ensure!(workers >= 1, Config, "workers must be positive");
    let configs = jobs
        .iter()
        .map(|j| j.train_config(base))
        .collect::<Result<Vec<_>>>()?;
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<f64>>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    thread::scope(|scope| {
        for _ in 0..workers.min(jobs.len()).max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= jobs.len() {
                    break;
                }
                let res = train_any(dataset, &configs[i], jobs[i].mode, |_| Ok(())).and_then(|out| {
                    out.report
                        .steady_state_accuracy
                        .ok_or_else(|| Error::Empty("sweep run has no test accuracy".into()))
                });
                *slots[i].lock().expect("result slot") = Some(res);
            });
        }
    });
    jobs.iter()
        .zip(slots)
        .map(|(job, slot)| {
            let acc = slot.into_inner().expect("result slot").expect("every job ran")?;
            Ok(SweepOutcome {
                job: *job,
                steady_state_accuracy: acc,
            })
        })
        .collect()
}

pub const RUNS_HEADER: [&str; 7] = ["mode", "alpha", "beta", "lmul", "n_lab", "seed", "steady_acc"];

/// Per-run rows followed by one `seed = mean` row per cell.
pub fn runs_csv(outcomes: &[SweepOutcome]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(RUNS_HEADER)?;
    for o in outcomes {
        let [m, a, b, l] = o.job.cell_fields();
        w.write_record([
            m,
            a,
            b,
            l,
            o.job.n_lab.to_string(),
            o.job.seed.to_string(),
            o.steady_state_accuracy.to_string(),
        ])?;
    }
    for ((fields, n_lab), accs) in cell_means(outcomes) {
        let [m, a, b, l] = fields;
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        w.write_record([m, a, b, l, n_lab.to_string(), "mean".into(), mean.to_string()])?;
    }
    finish(w)
}

type CellKey = ([String; 4], usize);

/// Accuracies grouped by cell, in first-seen order.
fn cell_means(outcomes: &[SweepOutcome]) -> Vec<(CellKey, Vec<f64>)> {
    let mut out: Vec<(CellKey, Vec<f64>)> = Vec::new();
    for o in outcomes {
        let key = (o.job.cell_fields(), o.job.n_lab);
        match out.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(o.steady_state_accuracy),
            None => out.push((key, vec![o.steady_state_accuracy])),
        }
    }
    out
}

/// Table with one row per cell and one mean-accuracy column per labeled
/// count. The supervised row comes first.
pub fn table_csv(outcomes: &[SweepOutcome], grid: &SweepGrid) -> Result<String> {
    let mut rows: Vec<[String; 4]> = Vec::new();
    let mut values: BTreeMap<([String; 4], usize), f64> = BTreeMap::new();
    for ((fields, n_lab), accs) in cell_means(outcomes) {
        if !rows.contains(&fields) {
            rows.push(fields.clone());
        }
        values.insert((fields, n_lab), accs.iter().sum::<f64>() / accs.len() as f64);
    }
    rows.sort_by_key(|r| r[0] != TrainMode::Supervised.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["mode", "alpha", "beta", "lmul"].map(String::from).to_vec();
    header.extend(grid.n_lab.iter().map(|n| format!("n_lab={n}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = r.to_vec();
        for &n in &grid.n_lab {
            rec.push(values.get(&(r.clone(), n)).map(f64::to_string).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
}

pub struct SweepFiles {
    pub runs: PathBuf,
    pub table: PathBuf,
}

/// Runs the grid and writes `sweep_runs.csv` and `sweep_table.csv`.
pub fn write_sweep(
    dataset: &Dataset,
    base: &TrainConfig,
    grid: &SweepGrid,
    workers: usize,
    out: &Path,
) -> Result<(Vec<SweepOutcome>, SweepFiles)> {
    grid.validate()?;
    let jobs = grid.jobs(base.seed);
    let outcomes = run_jobs(dataset, base, &jobs, workers)?;
    let files = SweepFiles {
        runs: out.join("sweep_runs.csv"),
        table: out.join("sweep_table.csv"),
    };
    std::fs::write(&files.runs, runs_csv(&outcomes)?)?;
    std::fs::write(&files.table, table_csv(&outcomes, grid)?)?;
    Ok((outcomes, files))
}

/// Short human-readable summary of a sweep.
pub fn describe(grid: &SweepGrid) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "{} weight pairs x {} layer sets x {} labeled counts x {} seeds",
        grid.alpha_beta.len(),
        grid.l_mul.len(),
        grid.n_lab.len(),
        grid.seeds
    );
    if grid.include_supervised {
        s.push_str(" + supervised baseline");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_shape() {
        let g = SweepGrid::default();
        assert_eq!(g.alpha_beta.len(), 11);
        assert_eq!(g.alpha_beta[7], (0.7, 0.3));
        assert_eq!(g.l_mul.len(), 7);
        assert_eq!(g.l_mul[5].to_string(), "1,2,3,4,5,6");
        assert_eq!(g.n_lab.len(), 10);
        g.validate().unwrap();
        assert_eq!(g.jobs(0).len(), 10 * (11 * 7 + 1));
    }

    #[test]
    fn invalid_grids() {
        let mut g = SweepGrid::single(0.6, 0.3, LayerSet::all(), 30);
        assert!(g.validate().is_err());
        g.alpha_beta = vec![(0.7, 0.3)];
        g.n_lab = vec![31];
        assert!(g.validate().is_err());
        g.n_lab = vec![30];
        g.validate().unwrap();
    }

    #[test]
    fn text_forms_roundtrip() {
        let g = SweepGrid::default();
        assert_eq!(SweepGrid::parse_alpha_beta(&g.alpha_beta_text()).unwrap(), g.alpha_beta);
        assert_eq!(SweepGrid::parse_lmul(&g.lmul_text()).unwrap(), g.l_mul);
        assert_eq!(SweepGrid::parse_nlab(&g.nlab_text()).unwrap(), g.n_lab);
    }

    #[test]
    fn csv_layout() {
        let job = |mode, weights, seed| SweepJob {
            mode,
            weights,
            n_lab: 30,
            seed,
        };
        let w = Some((0.7, 0.3, LayerSet::all()));
        let outcomes = vec![
            SweepOutcome {
                job: job(TrainMode::Wlssgan, w, 0),
                steady_state_accuracy: 0.5,
            },
            SweepOutcome {
                job: job(TrainMode::Wlssgan, w, 1),
                steady_state_accuracy: 0.75,
            },
            SweepOutcome {
                job: job(TrainMode::Supervised, None, 0),
                steady_state_accuracy: 0.25,
            },
        ];
        let runs = runs_csv(&outcomes).unwrap();
        let lines: Vec<&str> = runs.lines().collect();
        assert_eq!(lines.len(), 1 + 3 + 2);
        assert_eq!(lines[4], "wlssgan,0.7,0.3,\"1,2,3,4,5,6,7\",30,mean,0.625");
        let grid = SweepGrid::single(0.7, 0.3, LayerSet::all(), 30);
        let table = table_csv(&outcomes, &grid).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "mode,alpha,beta,lmul,n_lab=30");
        assert_eq!(lines[1], "supervised,,,,0.25");
        assert_eq!(lines[2], "wlssgan,0.7,0.3,\"1,2,3,4,5,6,7\",0.625");
    }
}
