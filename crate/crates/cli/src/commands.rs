//! Subcommand bodies. Setup problems (bad config, missing files, bad
//! geometry) exit with 2; failures once work has started exit with 1.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use trd_core::data::fetch::{cache_dir, fetch as fetch_files, parse_manifest};
use trd_core::data::ResizeMode;
use trd_core::model::{flops_report, mflops_closed_form};
use trd_core::train::eval::{export_cam_gallery, stress_test, Normalization};
use trd_core::train::sweep::{sweep as run_sweep, sweep_csv};
use trd_core::train::{evaluate, load_datasets, load_run_model, train_on, EpochRecord, ExperimentConfig, RunManifest, TrainOptions};
use trd_core::Resolution;

use crate::ConfigArgs;

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

pub type CmdResult<T = ()> = Result<T, Failure>;

trait Phase<T> {
    /// Setup-phase failure: exit 2.
    fn usage(self) -> CmdResult<T>;
    /// Failure after work began: exit 1.
    fn runtime(self) -> CmdResult<T>;
}

impl<T, E: Into<anyhow::Error>> Phase<T> for Result<T, E> {
    fn usage(self) -> CmdResult<T> {
        self.map_err(|e| Failure { code: 2, error: e.into() })
    }

    fn runtime(self) -> CmdResult<T> {
        self.map_err(|e| Failure { code: 1, error: e.into() })
    }
}

fn parse_resolutions(items: &[String]) -> CmdResult<Vec<Resolution>> {
    items.iter().map(|s| s.parse::<Resolution>()).collect::<Result<Vec<_>, _>>().usage()
}

fn normalization(config: &ExperimentConfig) -> Normalization {
    Normalization {
        mean: config.augmentation.mean.clone(),
        std: config.augmentation.std.clone(),
    }
}

/// `1234.5e6 -> "1.23 G"` style, two decimals.
fn units(v: f64) -> String {
    if v.abs() >= 1e9 {
        format!("{:.2} G", v / 1e9)
    } else if v.abs() >= 1e6 {
        format!("{:.2} M", v / 1e6)
    } else if v.abs() >= 1e3 {
        format!("{:.2} K", v / 1e3)
    } else {
        format!("{v:.2}")
    }
}

pub fn fetch(base_url: &str, manifest: &Path, dest: Option<PathBuf>, name: &str) -> CmdResult {
    let text = std::fs::read_to_string(manifest)
        .with_context(|| format!("reading manifest {}", manifest.display()))
        .usage()?;
    let entries = parse_manifest(&text).usage()?;
    let dest = dest.unwrap_or_else(|| cache_dir().join(name));
    let report = fetch_files(base_url, &entries, &dest).runtime()?;
    println!(
        "{}: {} downloaded, {} already present",
        dest.display(),
        report.downloaded.len(),
        report.already_present.len()
    );
    Ok(())
}

fn progress(r: &EpochRecord) {
    eprintln!(
        "epoch {:>3}  {:>7}  lr {:.5}  loss {:.4}  train {:.4}  val {:.4}  {:.1}s",
        r.epoch,
        r.resolution.to_string(),
        r.lr,
        r.train_loss,
        r.train_top1,
        r.val_top1,
        r.wall_time_s
    );
}

pub fn train(args: &ConfigArgs, quiet: bool) -> CmdResult {
    let config = ExperimentConfig::load(&args.config, &args.overrides).usage()?;
    let (train_set, val_set) = load_datasets(&config).usage()?;
    let cb: &dyn Fn(&EpochRecord) = &progress;
    let opts = TrainOptions {
        overrides: args.overrides.clone(),
        dry: false,
        on_epoch: (!quiet).then_some(cb),
    };
    let out = train_on(&config, &train_set, &val_set, &opts).runtime()?;
    let m = &out.manifest;
    println!("run          {}", config.output_dir.display());
    println!("best val     {:.4} (epoch {})", m.best_val_top1, m.best_epoch);
    println!("final val    {:.4}", m.final_val_top1);
    println!("reduced      {} of {} epochs", m.schedule.reduced_epochs.len(), m.schedule.total_epochs);
    println!("mFLOPs       {} per image (forward)", units(m.flops.expected_mflops));
    println!("savings      {:.2}% measured", 100.0 * m.flops.measured_savings);
    println!("fingerprint  {}", m.schedule_fingerprint);
    Ok(())
}

pub fn eval(run: &Path, resolutions: &[String], which: &str, mode: Option<&str>, force: bool) -> CmdResult {
    let (manifest, model) = load_run_model(run, which, force).usage()?;
    let config = &manifest.config;
    let mode = match mode {
        Some(m) => m.parse::<ResizeMode>().usage()?,
        None => config.eval_resize_mode,
    };
    let mut res = parse_resolutions(resolutions)?;
    if res.is_empty() {
        res.push(config.native());
    }
    for r in &res {
        config.model.check_resolution(*r).usage()?;
    }
    let (_, val) = load_datasets(config).usage()?;
    let norm = normalization(config);
    for r in res {
        let acc = evaluate(&model, &val, r, mode, &norm).runtime()?;
        println!("{r}\t{acc:.4}");
    }
    Ok(())
}

pub fn stress(trd: &Path, baseline: &Path, resolutions: &[String], out: Option<&Path>) -> CmdResult {
    let (manifest, trd_model) = load_run_model(trd, "best", false).usage()?;
    let (_, base_model) = load_run_model(baseline, "best", false).usage()?;
    let config = &manifest.config;
    let mut res = parse_resolutions(resolutions)?;
    if res.is_empty() {
        res = config.eval_resolutions.clone();
    }
    if res.is_empty() {
        let min = config.model.min_input_resolution();
        res = (min..=config.native().height.min(config.native().width)).map(Resolution::square).collect();
    }
    let (_, val) = load_datasets(config).usage()?;
    let report = stress_test(&trd_model, &base_model, &val, &res, config.eval_resize_mode, &normalization(config)).runtime()?;
    println!("{:>9} {:>9} {:>9} {:>9}", "res", "trd", "baseline", "delta");
    for r in &report.rows {
        println!(
            "{:>9} {:>9.4} {:>9.4} {:>+9.4}",
            r.resolution.to_string(),
            r.trd_top1,
            r.baseline_top1,
            r.improvement
        );
    }
    if let Some(path) = out {
        std::fs::write(path, report.to_csv()).runtime()?;
    }
    Ok(())
}

pub fn closed_form_table(fbase: f64, r: f64, lambda: f64, p: f64, json: bool) -> CmdResult {
    let m = mflops_closed_form(fbase, r, lambda, p).usage()?;
    let savings = if fbase > 0.0 { 1.0 - m / fbase } else { 0.0 };
    if json {
        let doc = serde_json::json!({"fbase": fbase, "r": r, "lambda": lambda, "p": p, "mflops": m, "savings": savings});
        println!("{doc}");
    } else {
        println!("F_base   {}", units(fbase));
        println!("mFLOPs   {}", units(m));
        println!("savings  {:.2}%", 100.0 * savings);
        println!("raw      {m}");
    }
    Ok(())
}

pub fn flops(args: &ConfigArgs, json: bool) -> CmdResult {
    let config = ExperimentConfig::load(&args.config, &args.overrides).usage()?;
    let schedule = config.build_schedule().usage()?;
    let report = flops_report(&config.model, &schedule, config.schedule.resize_mode).usage()?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report).runtime()?);
    } else {
        print!("{}", report.to_table());
        println!("{:<32} {:>14}", "reduced epochs", format!("{}/{}", schedule.reduced_epochs.len(), schedule.total_epochs));
    }
    Ok(())
}

pub fn sweep(args: &ConfigArgs, lambdas: &[String], ps: &[f64], seeds: &[u64], parallel: usize, out: Option<PathBuf>) -> CmdResult {
    let config = ExperimentConfig::load(&args.config, &args.overrides).usage()?;
    let lambdas = parse_resolutions(lambdas)?;
    let on_row = |r: &trd_core::train::sweep::SweepRow| match &r.error {
        None => eprintln!("cell lambda={} p={} seed={}: best val {:.4}", r.lambda, r.p, r.seed, r.best_val_top1),
        Some(e) => eprintln!("cell lambda={} p={} seed={} failed: {e}", r.lambda, r.p, r.seed),
    };
    let rows = run_sweep(&config, &lambdas, ps, seeds, parallel, &on_row).usage()?;
    let path = out.unwrap_or_else(|| config.output_dir.join("sweep.csv"));
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).runtime()?;
    }
    std::fs::write(&path, sweep_csv(&rows)).runtime()?;
    println!("{}", path.display());
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        return Err(anyhow!("{failed} of {} cells failed", rows.len())).runtime();
    }
    Ok(())
}

pub fn cam(run: &Path, count: usize, out: Option<PathBuf>) -> CmdResult {
    let (manifest, model) = load_run_model(run, "best", false).usage()?;
    let config = &manifest.config;
    let (_, val) = load_datasets(config).usage()?;
    let n = count.min(val.len());
    let idx: Vec<usize> = (0..n).collect();
    let (images, _) = val.gather(&idx).runtime()?;
    let dir = out.unwrap_or_else(|| run.join("cam"));
    let files = export_cam_gallery(&model, &images, config.eval_resize_mode, &normalization(config), &dir).runtime()?;
    println!("{}: {} files", dir.display(), files.len());
    Ok(())
}

pub fn report(runs: &[PathBuf], baseline: Option<&Path>) -> CmdResult {
    let load = |p: &Path| RunManifest::load(&p.join("manifest.json")).usage();
    let base = baseline.map(load).transpose()?;
    println!(
        "{:<28} {:>8} {:>6} {:>8} {:>10} {:>9} {:>10}",
        "run", "best", "epoch", "final", "mFLOPs", "savings", "vs base"
    );
    for dir in runs {
        let m = load(dir)?;
        let delta = base
            .as_ref()
            .map_or_else(|| "-".to_string(), |b| format!("{:+.2} pt", 100.0 * (m.best_val_top1 - b.best_val_top1)));
        println!(
            "{:<28} {:>8.4} {:>6} {:>8.4} {:>10} {:>8.2}% {:>10}",
            m.config.name,
            m.best_val_top1,
            m.best_epoch,
            m.final_val_top1,
            units(m.flops.expected_mflops),
            100.0 * m.flops.measured_savings,
            delta
        );
    }
    Ok(())
}
