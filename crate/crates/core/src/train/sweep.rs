//! Grid sweeps over reduced resolution and participation rate.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::engine::{load_datasets, train_on, TrainOptions};
use crate::error::{Error, Result};
use crate::schedule::Resolution;

pub const SWEEP_HEADER: &str = "lambda,p,seed,best_val_top1,mflops,savings";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: Resolution,
    pub p: f64,
    pub seed: u64,
    pub best_val_top1: f64,
    pub mflops: f64,
    pub savings: f64,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn csv_row(&self) -> String {
        let lambda = if self.lambda.is_square() {
            self.lambda.height.to_string()
        } else {
            self.lambda.to_string()
        };
        format!("{lambda},{},{},{},{},{}", self.p, self.seed, self.best_val_top1, self.mflops, self.savings)
    }
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        s += &r.csv_row();
        s.push('\n');
    }
    s
}

/// Overrides that turn the base config into one cell.
pub fn cell_overrides(base: &ExperimentConfig, lambda: Resolution, p: f64, seed: u64) -> Vec<String> {
    let dir = base
        .output_dir
        .join(format!("lambda{}x{}_p{p}_seed{seed}", lambda.height, lambda.width));
    vec![
        format!("schedule.lambda=[{},{}]", lambda.height, lambda.width),
        format!("schedule.p={p}"),
        format!("seed={seed}"),
        format!("output_dir={}", serde_json::to_string(&dir.display().to_string()).expect("string")),
    ]
}

/// Run every `(lambda, p, seed)` cell. Cells that fail keep their row with
/// the error filled in and NaN metrics. `parallel > 1` needs a
/// non-deterministic config.
pub fn sweep(
    base: &ExperimentConfig,
    lambdas: &[Resolution],
    ps: &[f64],
    seeds: &[u64],
    parallel: usize,
    on_row: &(dyn Fn(&SweepRow) + Sync),
) -> Result<Vec<SweepRow>> {
    if lambdas.is_empty() || ps.is_empty() || seeds.is_empty() {
        return Err(Error::config("sweep", "grid must be non-empty"));
    }
    if parallel > 1 && base.deterministic {
        return Err(Error::config("parallel", "parallel sweeps require deterministic = false"));
    }
    let cells: Vec<(Resolution, f64, u64)> = lambdas
        .iter()
        .flat_map(|&l| ps.iter().flat_map(move |&p| seeds.iter().map(move |&s| (l, p, s))))
        .collect();
    // Validate every cell up front so a typo fails before hours of training.
    let configs = cells
        .iter()
        .map(|&(l, p, s)| {
            let o = cell_overrides(base, l, p, s);
            base.with_overrides(&o).map(|c| (c, o))
        })
        .collect::<Result<Vec<_>>>()?;
    let (train_set, val_set) = load_datasets(base)?;
    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<Option<SweepRow>>> = Mutex::new(vec![None; cells.len()]);
    let work = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some((cfg, overrides)) = configs.get(i) else { break };
        let (lambda, p, seed) = cells[i];
        let opts = TrainOptions {
            overrides: overrides.clone(),
            ..Default::default()
        };
        let row = match train_on(cfg, &train_set, &val_set, &opts) {
            Ok(out) => SweepRow {
                lambda,
                p,
                seed,
                best_val_top1: out.manifest.best_val_top1,
                mflops: out.manifest.flops.expected_mflops,
                savings: out.manifest.flops.expected_savings,
                error: None,
            },
            Err(e) => SweepRow {
                lambda,
                p,
                seed,
                best_val_top1: f64::NAN,
                mflops: f64::NAN,
                savings: f64::NAN,
                error: Some(e.to_string()),
            },
        };
        on_row(&row);
        rows.lock().expect("no panics while holding the lock")[i] = Some(row);
    };
    if parallel > 1 {
        std::thread::scope(|s| {
            for _ in 0..parallel {
                s.spawn(work);
            }
        });
    } else {
        work();
    }
    Ok(rows.into_inner().expect("workers finished").into_iter().flatten().collect())
}
