//! `lotpool`: train lottery-ticket pools, interpolate them into stronger
//! subnetworks, and reproduce the analysis tables.
//!
//! Stdout carries human-readable progress; machine-readable results go to
//! the files named by `--out` / `--csv` / `--log`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use lotpool::analysis::{
    ablate, adjacent_pair_mean, disagreement_matrix, ensemble_comparison, interpolation_path,
    pairwise_heatmap, AblationMode, AblationRow, Heatmap,
};
use lotpool::baselines::{ema_pool, ensemble_members, output_ensemble, swa_pool, BaselineResult};
use lotpool::config::{load_dataset, load_imp_config_file, DataRef};
use lotpool::data::{split, Dataset};
use lotpool::error::{Error, Result};
use lotpool::imp::{run_imp_observed, ImpRun};
use lotpool::model::evaluate;
use lotpool::pools::{
    pool_average, pool_interpolate, strengthen_dense, CoefficientPool, PoolResult, PruneMode,
};
use lotpool::store::{load_checkpoint, load_run, save_checkpoint, save_run, Checkpoint};

#[derive(Parser)]
#[command(
    name = "lotpool",
    version,
    about = "Lottery-ticket pools: iterative magnitude pruning plus greedy weight interpolation"
)]
struct Cli {
    /// Worker threads for parallel evaluations (falls back to LOTPOOL_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Iterative magnitude pruning pipelines.
    Imp {
        #[command(subcommand)]
        cmd: ImpCmd,
    },
    /// Build stronger subnetworks from a saved pool.
    Pool {
        #[command(subcommand)]
        cmd: PoolCmd,
    },
    /// Weight-averaging baselines.
    Baseline {
        #[command(subcommand)]
        cmd: BaselineCmd,
    },
    /// Output (logit) ensembles.
    Ensemble {
        #[command(subcommand)]
        cmd: EnsembleCmd,
    },
    /// Figure-style analyses emitted as CSV.
    Analyze {
        #[command(subcommand)]
        cmd: AnalyzeCmd,
    },
    /// Evaluate a saved checkpoint.
    Eval(EvalArgs),
}

#[derive(Subcommand)]
enum ImpCmd {
    /// Train dense, then prune-and-retrain for T rounds, saving every
    /// checkpoint plus a run manifest.
    Run {
        /// key=value config file (layer_sizes, epochs, iterations, ...).
        #[arg(long)]
        config: PathBuf,
        /// Dataset spec: idx:<images>,<labels> or synth:classes=..,dim=..,
        /// per_class=..,spread=..,seed=..
        #[arg(long)]
        data: String,
        /// Use only the first N samples.
        #[arg(long)]
        limit: Option<usize>,
        /// Fraction of the data held out for validation.
        #[arg(long, default_value_t = 0.1)]
        val_fraction: f64,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        /// Output directory for checkpoints and the manifest.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PoolCommonArgs {
    /// Run directory written by `imp run`.
    #[arg(long)]
    run: PathBuf,
    /// Output checkpoint file.
    #[arg(long)]
    out: PathBuf,
    /// Search log (JSON lines); defaults to <out>.log.jsonl.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PoolCmd {
    /// Greedy interpolation with coefficient search.
    Interp {
        #[command(flatten)]
        common: PoolCommonArgs,
        /// Target IMP iteration.
        #[arg(long)]
        t: usize,
        /// Comma-separated coefficients in (0,1); defaults to the 11-value pool.
        #[arg(long)]
        coeffs: Option<String>,
        /// Use only the N most adjacent candidates.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, default_value = "during")]
        prune_mode: String,
    },
    /// Greedy averaging (fixed coefficient 0.5).
    Avg {
        #[command(flatten)]
        common: PoolCommonArgs,
        #[arg(long)]
        t: usize,
    },
    /// Strengthen the trained dense network (t = 0).
    Dense {
        #[command(flatten)]
        common: PoolCommonArgs,
        /// Comma-separated coefficients; defaults to the 11-value pool.
        #[arg(long)]
        coeffs: Option<String>,
    },
}

#[derive(Subcommand)]
enum BaselineCmd {
    /// Running-mean absorption with 1/(n+1) coefficients.
    Swa {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        t: usize,
        /// Optionally save the averaged checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Exponential moving average with a fixed decay.
    Ema {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        t: usize,
        #[arg(long, default_value_t = 0.95)]
        decay: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EnsembleCmd {
    /// Logit-averaging ensemble vs the pooled subnetwork, with per-sample
    /// forward-pass costs.
    Eval {
        #[arg(long)]
        run: PathBuf,
        /// Single target iteration; omit to sweep all of them.
        #[arg(long)]
        t: Option<usize>,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Test dataset spec.
        #[arg(long)]
        test: String,
        /// Comparison table destination.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Pairwise-average accuracy heatmap.
    Heatmap {
        /// One run directory, or several for mean/std aggregation.
        #[arg(long, required = true)]
        run: Vec<PathBuf>,
        #[arg(long)]
        test: String,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Loss/error along the linear path between two checkpoints.
    Path {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        i: usize,
        #[arg(long)]
        j: usize,
        #[arg(long)]
        test: String,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Prediction disagreement fractions between checkpoints.
    Disagreement {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        test: String,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Candidate-count or coefficient-count ablation.
    Ablate {
        #[arg(long, required = true)]
        run: Vec<PathBuf>,
        /// candidate_count or coeff_count.
        #[arg(long)]
        mode: String,
        /// Comma-separated arms, e.g. 4,9,19 or 1,3,7.
        #[arg(long)]
        arms: String,
        #[arg(long)]
        test: String,
        #[arg(long)]
        csv: PathBuf,
    },
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file to evaluate.
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset spec to evaluate on.
    #[arg(long, conflicts_with_all = ["run", "split"])]
    data: Option<String>,
    /// Run directory whose recorded split should be used instead of --data.
    #[arg(long, requires = "split")]
    run: Option<PathBuf>,
    /// Which recorded split to evaluate: train or val.
    #[arg(long, requires = "run")]
    split: Option<String>,
}

fn main() {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("LOTPOOL_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: failed to configure {n} threads: {e}");
            std::process::exit(1);
        }
    }
    if let Err(e) = dispatch(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Imp { cmd } => match cmd {
            ImpCmd::Run {
                config,
                data,
                limit,
                val_fraction,
                split_seed,
                out,
            } => cmd_imp_run(&config, &data, limit, val_fraction, split_seed, &out),
        },
        Command::Pool { cmd } => match cmd {
            PoolCmd::Interp {
                common,
                t,
                coeffs,
                limit,
                prune_mode,
            } => {
                let coeffs = parse_coeffs(coeffs.as_deref())?;
                let mode = PruneMode::parse(&prune_mode)?;
                let (run, val_set) = load_run_with_val(&common.run)?;
                let res = pool_interpolate(&run, t, &coeffs, &val_set, mode, limit)?;
                finish_pool(&common, t, res, "interpolation")
            }
            PoolCmd::Avg { common, t } => {
                let (run, val_set) = load_run_with_val(&common.run)?;
                let res = pool_average(&run, t, &val_set)?;
                finish_pool(&common, t, res, "averaging")
            }
            PoolCmd::Dense { common, coeffs } => {
                let coeffs = parse_coeffs(coeffs.as_deref())?;
                let (run, val_set) = load_run_with_val(&common.run)?;
                let res = strengthen_dense(&run, &coeffs, &val_set)?;
                finish_pool(&common, 0, res, "dense strengthening")
            }
        },
        Command::Baseline { cmd } => match cmd {
            BaselineCmd::Swa { run, t, out, log } => {
                let (run, val_set) = load_run_with_val(&run)?;
                let res = swa_pool(&run, t, &val_set)?;
                finish_baseline(&run, t, res, "swa", out.as_deref(), log.as_deref())
            }
            BaselineCmd::Ema {
                run,
                t,
                decay,
                out,
                log,
            } => {
                let (run, val_set) = load_run_with_val(&run)?;
                let res = ema_pool(&run, t, decay, &val_set)?;
                finish_baseline(&run, t, res, "ema", out.as_deref(), log.as_deref())
            }
        },
        Command::Ensemble { cmd } => match cmd {
            EnsembleCmd::Eval {
                run,
                t,
                k,
                test,
                csv,
            } => cmd_ensemble_eval(&run, t, k, &test, csv.as_deref()),
        },
        Command::Analyze { cmd } => match cmd {
            AnalyzeCmd::Heatmap { run, test, csv } => cmd_heatmap(&run, &test, &csv),
            AnalyzeCmd::Path {
                run,
                i,
                j,
                test,
                csv,
            } => cmd_path(&run, i, j, &test, &csv),
            AnalyzeCmd::Disagreement { run, test, csv } => cmd_disagreement(&run, &test, &csv),
            AnalyzeCmd::Ablate {
                run,
                mode,
                arms,
                test,
                csv,
            } => cmd_ablate(&run, &mode, &arms, &test, &csv),
        },
        Command::Eval(args) => cmd_eval(&args),
    }
}

fn parse_coeffs(spec: Option<&str>) -> Result<CoefficientPool> {
    match spec {
        None => Ok(CoefficientPool::default_eleven()),
        Some(s) => {
            let values: Vec<f64> = s
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad coefficient {v:?}")))
                })
                .collect::<Result<_>>()?;
            CoefficientPool::new(values)
        }
    }
}

fn load_run_with_val(dir: &Path) -> Result<(ImpRun, Dataset)> {
    let (run, manifest) = load_run(dir)?;
    let (_, val_set) = manifest.data.load_split()?;
    Ok((run, val_set))
}

fn load_test_set(spec: &str) -> Result<Dataset> {
    load_dataset(spec, None)
}

fn cmd_imp_run(
    config_path: &Path,
    data_spec: &str,
    limit: Option<usize>,
    val_fraction: f64,
    split_seed: u64,
    out: &Path,
) -> Result<()> {
    let config = load_imp_config_file(config_path)?;
    let base = load_dataset(data_spec, limit)?;
    let fingerprint = base.fingerprint();
    let (train_set, val_set) = split(&base, val_fraction, split_seed)?;
    println!(
        "imp run: {} samples ({} train / {} val), model {:?}, T={}, p={}, {}",
        base.len(),
        train_set.len(),
        val_set.len(),
        config.model.layer_sizes,
        config.iterations,
        config.prune_fraction,
        config.rewind_mode.as_str(),
    );
    let run = run_imp_observed(&config, &train_set, &val_set, |ckpt| {
        println!(
            "  t={:<3} density {:.4}  kept {}",
            ckpt.meta.imp_iteration,
            ckpt.meta.density,
            ckpt.mask.kept_count()
        );
    })?;
    let data_ref = DataRef {
        spec: data_spec.to_string(),
        limit,
        val_fraction,
        split_seed,
        dataset_sha256: fingerprint,
    };
    let manifest = save_run(&run, out, &data_ref)?;
    println!(
        "saved {} checkpoints + manifest to {}",
        manifest.checkpoint_files.len(),
        out.display()
    );
    Ok(())
}

fn write_jsonl<T: serde::Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(
            &serde_json::to_string(r).map_err(|e| Error::Config(format!("serializing log: {e}")))?,
        );
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn finish_pool(common: &PoolCommonArgs, t: usize, res: PoolResult, label: &str) -> Result<()> {
    let accepted = res.log.iter().filter(|s| s.accepted).count();
    println!(
        "{label} at t={t}: density {:.4}, val accuracy {:.4} ({} of {} candidates accepted)",
        res.checkpoint.meta.density,
        res.val_accuracy,
        accepted,
        res.log.len()
    );
    save_checkpoint(&res.checkpoint, &common.out)?;
    let log_path = common
        .log
        .clone()
        .unwrap_or_else(|| default_log_path(&common.out));
    write_jsonl(&log_path, &res.log)?;
    println!(
        "wrote checkpoint {} and search log {}",
        common.out.display(),
        log_path.display()
    );
    Ok(())
}

fn default_log_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_os_string();
    s.push(".log.jsonl");
    PathBuf::from(s)
}

fn finish_baseline(
    run: &ImpRun,
    t: usize,
    res: BaselineResult,
    label: &str,
    out: Option<&Path>,
    log: Option<&Path>,
) -> Result<()> {
    let base = run.checkpoint(t)?;
    println!(
        "{label} at t={t}: density {:.4}, val accuracy {:.4} ({} candidates absorbed, target density {:.4})",
        res.checkpoint.meta.density,
        res.val_accuracy,
        res.log.len(),
        base.meta.density,
    );
    if let Some(path) = out {
        save_checkpoint(&res.checkpoint, path)?;
        println!("wrote checkpoint {}", path.display());
    }
    if let Some(path) = log {
        write_jsonl(path, &res.log)?;
        println!("wrote absorb log {}", path.display());
    }
    Ok(())
}

fn cmd_ensemble_eval(
    run_dir: &Path,
    t: Option<usize>,
    k: usize,
    test_spec: &str,
    csv: Option<&Path>,
) -> Result<()> {
    let (run, val_set) = load_run_with_val(run_dir)?;
    let test_set = load_test_set(test_spec)?;
    match t {
        Some(t) => {
            let members = ensemble_members(&run, t, k)?;
            let refs: Vec<&Checkpoint> = members.iter().map(|&i| &run.checkpoints[i]).collect();
            let report = output_ensemble(&refs, &test_set)?;
            println!(
                "ensemble at t={t}: members {:?}, test accuracy {:.4}, {} forward passes/sample",
                members, report.accuracy, report.forward_passes_per_sample
            );
        }
        None => {
            let rows = ensemble_comparison(&run, &val_set, &test_set, k)?;
            for row in &rows {
                println!(
                    "t={:<3} density {:.4}  pool {:.4} (1 pass)  ensemble {:.4} ({} passes)",
                    row.t,
                    row.density,
                    row.pool_test_acc,
                    row.ensemble_test_acc,
                    row.ensemble_forward_passes
                );
            }
            if let Some(path) = csv {
                let mut text = String::from(
                    "t,density,pool_test_acc,pool_forward_passes,ensemble_test_acc,ensemble_forward_passes\n",
                );
                for r in &rows {
                    text.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        r.t,
                        r.density,
                        r.pool_test_acc,
                        r.pool_forward_passes,
                        r.ensemble_test_acc,
                        r.ensemble_forward_passes
                    ));
                }
                std::fs::write(path, text)?;
                println!("wrote comparison table {}", path.display());
            }
        }
    }
    Ok(())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn load_runs(dirs: &[PathBuf]) -> Result<Vec<ImpRun>> {
    let mut runs = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let (run, _) = load_run(dir)?;
        runs.push(run);
    }
    if let Some(first) = runs.first() {
        for r in &runs[1..] {
            if r.t_max() != first.t_max() {
                return Err(Error::Config(
                    "runs have different iteration counts; cannot aggregate".into(),
                ));
            }
        }
    }
    Ok(runs)
}

fn cmd_heatmap(run_dirs: &[PathBuf], test_spec: &str, csv: &Path) -> Result<()> {
    let runs = load_runs(run_dirs)?;
    let test_set = load_test_set(test_spec)?;
    let heatmaps: Vec<Heatmap> = runs
        .iter()
        .map(|r| pairwise_heatmap(r, &test_set))
        .collect::<Result<_>>()?;
    let h0 = &heatmaps[0];
    let n = h0.size();
    let mut text = String::new();
    if heatmaps.len() == 1 {
        text.push_str("i,j,density_i,density_j,cell_density,accuracy\n");
        for i in 0..n {
            for j in 0..n {
                text.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    i, j, h0.densities[i], h0.densities[j], h0.cell_density[i][j], h0.accuracy[i][j]
                ));
            }
        }
    } else {
        text.push_str("i,j,density_i,density_j,cell_density,accuracy_mean,accuracy_std\n");
        for i in 0..n {
            for j in 0..n {
                let cells: Vec<f64> = heatmaps.iter().map(|h| h.accuracy[i][j]).collect();
                let (mean, std) = mean_std(&cells);
                text.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    i, j, h0.densities[i], h0.densities[j], h0.cell_density[i][j], mean, std
                ));
            }
        }
    }
    std::fs::write(csv, text)?;
    let adjacents: Vec<f64> = heatmaps.iter().map(adjacent_pair_mean).collect();
    let (mean, std) = mean_std(&adjacents);
    println!(
        "heatmap over {} run(s): adjacent-pair mean accuracy {:.4} (std {:.4}); wrote {}",
        heatmaps.len(),
        mean,
        std,
        csv.display()
    );
    Ok(())
}

fn cmd_path(run_dir: &Path, i: usize, j: usize, test_spec: &str, csv: &Path) -> Result<()> {
    let (run, _) = load_run(run_dir)?;
    let test_set = load_test_set(test_spec)?;
    let a = run.checkpoint(i)?;
    let b = run.checkpoint(j)?;
    let points = interpolation_path(a, b, &test_set)?;
    let mut text = String::from("alpha,loss,error\n");
    for p in &points {
        text.push_str(&format!("{},{},{}\n", p.alpha, p.test_loss, p.test_error));
    }
    std::fs::write(csv, text)?;
    println!(
        "path between t={i} and t={j}: {} points, wrote {}",
        points.len(),
        csv.display()
    );
    Ok(())
}

fn cmd_disagreement(run_dir: &Path, test_spec: &str, csv: &Path) -> Result<()> {
    let (run, _) = load_run(run_dir)?;
    let test_set = load_test_set(test_spec)?;
    let matrix = disagreement_matrix(&run, &test_set)?;
    let mut text = String::from("i,j,fraction\n");
    for (i, row) in matrix.iter().enumerate() {
        for (j, frac) in row.iter().enumerate() {
            text.push_str(&format!("{i},{j},{frac}\n"));
        }
    }
    std::fs::write(csv, text)?;
    println!("disagreement matrix: wrote {}", csv.display());
    Ok(())
}

fn cmd_ablate(
    run_dirs: &[PathBuf],
    mode: &str,
    arms: &str,
    test_spec: &str,
    csv: &Path,
) -> Result<()> {
    let mode = AblationMode::parse(mode)?;
    let arms: Vec<usize> = arms
        .split(',')
        .map(|a| {
            a.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad arm {a:?}")))
        })
        .collect::<Result<_>>()?;
    let runs = load_runs(run_dirs)?;
    let test_set = load_test_set(test_spec)?;

    let mut tables: Vec<Vec<AblationRow>> = Vec::with_capacity(runs.len());
    for (dir, run) in run_dirs.iter().zip(&runs) {
        let (_, manifest) = load_run(dir)?;
        let (_, val_set) = manifest.data.load_split()?;
        tables.push(ablate(run, mode, &arms, &val_set, &test_set)?);
    }

    let mut text = String::new();
    if tables.len() == 1 {
        text.push_str("mode,arm,t,density,val_acc,test_acc\n");
        for r in &tables[0] {
            text.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.mode.as_str(),
                r.arm,
                r.t,
                r.density,
                r.val_acc,
                r.test_acc
            ));
        }
    } else {
        text.push_str("mode,arm,t,density,val_acc_mean,val_acc_std,test_acc_mean,test_acc_std\n");
        for idx in 0..tables[0].len() {
            let r0 = &tables[0][idx];
            let vals: Vec<f64> = tables.iter().map(|t| t[idx].val_acc).collect();
            let tests: Vec<f64> = tables.iter().map(|t| t[idx].test_acc).collect();
            let (vm, vs) = mean_std(&vals);
            let (tm, ts) = mean_std(&tests);
            text.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r0.mode.as_str(),
                r0.arm,
                r0.t,
                r0.density,
                vm,
                vs,
                tm,
                ts
            ));
        }
    }
    std::fs::write(csv, text)?;
    println!(
        "{} ablation over {} run(s), arms {:?}: wrote {}",
        mode.as_str(),
        tables.len(),
        arms,
        csv.display()
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.ckpt)?;
    ckpt.validate()?;
    let ds = match (&args.data, &args.run, &args.split) {
        (Some(spec), None, None) => load_dataset(spec, None)?,
        (None, Some(run_dir), Some(which)) => {
            let (_, manifest) = load_run(run_dir)?;
            let (train_set, val_set) = manifest.data.load_split()?;
            match which.as_str() {
                "train" => train_set,
                "val" => val_set,
                other => {
                    return Err(Error::Config(format!(
                        "unknown split {other:?} (expected train or val)"
                    )))
                }
            }
        }
        _ => {
            return Err(Error::Config(
                "eval needs either --data <spec> or --run <dir> --split train|val".into(),
            ))
        }
    };
    let report = evaluate(&ckpt.params, None, &ds)?;
    println!(
        "checkpoint {} (t={}, density {:.4}): accuracy {:.6}, mean loss {:.6} on {} samples",
        args.ckpt.display(),
        ckpt.meta.imp_iteration,
        ckpt.meta.density,
        report.accuracy,
        report.mean_loss,
        ds.len()
    );
    Ok(())
}
