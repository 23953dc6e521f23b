use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use lorentzkit::alignment::hhsw_between;
use lorentzkit::config::{FoldPolicy, RunConfig};
use lorentzkit::data::{read_dataset, read_lorentz, read_matrix, read_sidecar, write_dataset, META_FILE};
use lorentzkit::experiment::{cross_validate, Fold};
use lorentzkit::gradcheck::{run_gradcheck, GradcheckConfig};
use lorentzkit::hyperbolicity::{delta_sampled, HyperbolicityReport, SampledPoints};
use lorentzkit::model::{evaluate, fit, load_checkpoint, save_checkpoint, sfuda_adapt, EpochRecord};
use lorentzkit::synth::{gen_epochs, EpochDataset, ShiftPolicy};
use lorentzkit::{Error, Result, VERSION};

use crate::{Cli, Command, Metric, Split};

/// Rows further than this from the hyperboloid are rejected.
const MANIFOLD_TOL: f64 = 1e-5;

const CONFIG_ECHO: &str = "run.toml";

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for o in &cli.global.overrides {
        cfg.set(o)?;
    }
    if let Some(s) = cli.global.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.global.out {
        cfg.out = Some(o.clone());
    }
    cfg.threads = resolve_threads(cli.global.threads, cfg.threads)?;
    let force = cli.global.force;

    match cli.command {
        Command::Gen { domains, classes, per_cell, shift } => {
            if let Some(d) = domains {
                cfg.data.domains = d;
            }
            if let Some(c) = classes {
                // keep the family/variant split when it divides, else a flat class set
                if c % cfg.data.variants == 0 && c / cfg.data.variants >= 1 {
                    cfg.data.families = c / cfg.data.variants;
                } else {
                    cfg.data.families = c;
                    cfg.data.variants = 1;
                }
            }
            if let Some(n) = per_cell {
                cfg.data.per_cell = n;
            }
            if let Some(s) = shift {
                cfg.data.shift = ShiftPolicy::with_strength(s);
            }
            cmd_gen(&cfg, force)
        }
        Command::Train { data, split } => cmd_train(&apply_split(cfg, split), &data, force),
        Command::Adapt { data, checkpoint, split } => cmd_adapt(&apply_split(cfg, split), &data, &checkpoint, force),
        Command::Eval { data, checkpoint, split } => cmd_eval(&apply_split(cfg, split), &data, checkpoint.as_deref(), force),
        Command::Delta { input, metric, batch, batches } => cmd_delta(&cfg, &input, metric, batch, batches, force),
        Command::Hhsw { a, b, slices, exponent } => cmd_hhsw(&cfg, &a, &b, slices, exponent, force),
        Command::Gradcheck { seeds, tolerance, inject_sign_flip } => {
            cmd_gradcheck(&cfg, GradcheckConfig { seeds, tolerance, inject_sign_flip }, force)
        }
    }
}

/// Flag, then a nonzero config value, then `LORENTZKIT_THREADS`, then 1.
fn resolve_threads(flag: Option<usize>, config: usize) -> Result<usize> {
    if let Some(t) = flag {
        return Ok(t.max(1));
    }
    if config > 0 {
        return Ok(config);
    }
    match std::env::var("LORENTZKIT_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map(|t| t.max(1))
            .map_err(|_| Error::Validation(format!("LORENTZKIT_THREADS={v:?} is not a count"))),
        _ => Ok(1),
    }
}

fn apply_split(mut cfg: RunConfig, split: Split) -> RunConfig {
    if let Some(s) = split.sources {
        cfg.folds.sources = s;
    }
    if let Some(t) = split.targets {
        cfg.folds.targets = t;
    }
    cfg
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source: e }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Creates the output directory, refusing a non-empty one without `force`.
fn prepare_out(cfg: &RunConfig, force: bool, required: bool) -> Result<Option<PathBuf>> {
    let Some(dir) = cfg.out.clone() else {
        return if required { Err(Error::Validation("an output directory is required (--out DIR)".into())) } else { Ok(None) };
    };
    if dir.exists() {
        if !dir.is_dir() {
            return Err(Error::Validation(format!("{} exists and is not a directory", dir.display())));
        }
        let non_empty = fs::read_dir(&dir).map_err(|e| io_err(&dir, e))?.next().is_some();
        if non_empty && !force {
            return Err(Error::Validation(format!("output directory {} is not empty; pass --force to write into it", dir.display())));
        }
    }
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    Ok(Some(dir))
}

fn echo_config(dir: &Path, cfg: &RunConfig, command: &str) -> Result<()> {
    write(&dir.join(CONFIG_ECHO), &format!("# lorentzkit {VERSION}\n# command: {command}\n{}", cfg.to_toml()))
}

fn cmd_gen(cfg: &RunConfig, force: bool) -> Result<()> {
    let spec = cfg.data.spec(cfg.seed);
    spec.validate()?;
    let dir = prepare_out(cfg, force, true)?.expect("required");
    let ds = gen_epochs(&spec)?;
    let generator = serde_json::to_value(spec).expect("spec serializes");
    write_dataset(&dir, &ds, Some(&generator))?;
    echo_config(&dir, cfg, "gen")?;
    println!(
        "wrote {} epochs ({} domains x {} classes x {} per cell, P={}, T={}) to {}",
        ds.len(),
        spec.n_domains,
        spec.n_classes(),
        spec.per_cell,
        spec.n_channels,
        spec.n_times,
        dir.display()
    );
    Ok(())
}

fn fixed_split(cfg: &RunConfig, ds: &EpochDataset, command: &str) -> Result<(Vec<u32>, Vec<u32>)> {
    if cfg.folds.policy == FoldPolicy::Logo {
        return Err(Error::Validation(format!("{command} needs a fixed split; cross-validation runs through `eval` without a checkpoint")));
    }
    cfg.folds.resolve(&ds.domain_ids())
}

fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,train_ce,val_balanced_accuracy\n");
    for r in history {
        let _ = writeln!(s, "{},{:.6},{:.6},{:.6}", r.epoch, r.train_loss, r.train_ce, r.val_balanced_accuracy);
    }
    s
}

fn cmd_train(cfg: &RunConfig, data: &Path, force: bool) -> Result<()> {
    let ds = read_dataset(data)?;
    let (sources, _) = fixed_split(cfg, &ds, "train")?;
    let model_cfg = cfg.model_config(ds.n_channels, ds.n_times, ds.n_classes());
    model_cfg.validate()?;
    cfg.train.validate()?;
    let dir = prepare_out(cfg, force, true)?.expect("required");
    eprintln!("training on domains {sources:?} ({} epochs)", ds.indices_in(&sources).len());
    let fitted = fit(&model_cfg, &cfg.train, &ds, &sources)?;
    save_checkpoint(&dir.join("model.heeg"), &fitted.model)?;
    write(&dir.join("history.csv"), &history_csv(&fitted.history))?;
    echo_config(&dir, cfg, "train")?;
    let best = &fitted.history[fitted.best_epoch];
    println!(
        "best epoch {} of {}: validation balanced accuracy {:.4}; checkpoint {}",
        best.epoch,
        fitted.history.len(),
        best.val_balanced_accuracy,
        dir.join("model.heeg").display()
    );
    Ok(())
}

/// Explicit targets, else the complement of explicit sources, else `fallback`.
fn target_domains(cfg: &RunConfig, ds: &EpochDataset, fallback: impl FnOnce(&[u32]) -> Vec<u32>) -> Result<Vec<u32>> {
    let present = ds.domain_ids();
    if cfg.folds.sources.is_empty() && cfg.folds.targets.is_empty() {
        return Ok(fallback(&present));
    }
    Ok(cfg.folds.resolve(&present)?.1)
}

fn cmd_adapt(cfg: &RunConfig, data: &Path, checkpoint: &Path, force: bool) -> Result<()> {
    let ds = read_dataset(data)?;
    if cfg.folds.policy == FoldPolicy::Logo {
        return Err(Error::Validation("adapt needs a fixed split; cross-validation runs through `eval` without a checkpoint".into()));
    }
    let model = load_checkpoint(checkpoint)?;
    let targets = target_domains(cfg, &ds, |present| present.iter().copied().filter(|d| !model.stats.contains(*d)).collect())?;
    if targets.is_empty() {
        return Err(Error::Validation("no target domains to adapt to".into()));
    }
    let dir = prepare_out(cfg, force, true)?.expect("required");
    let adapted = sfuda_adapt(&model, &ds, &targets, &cfg.adapt)?;
    save_checkpoint(&dir.join("adapted.heeg"), &adapted)?;
    echo_config(&dir, cfg, "adapt")?;
    println!("adapted to domains {targets:?}; checkpoint {}", dir.join("adapted.heeg").display());
    Ok(())
}

struct ScoreRow {
    fold: usize,
    domain: u32,
    n: usize,
    balanced_accuracy: f64,
    unseen: bool,
}

fn metrics_csv(rows: &[ScoreRow]) -> String {
    let mut s = String::from("fold,domain,n_epochs,balanced_accuracy,unseen_domain\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{:.6},{}", r.fold, r.domain, r.n, r.balanced_accuracy, u8::from(r.unseen));
    }
    let _ = writeln!(s, "all,mean,{},{:.6},{}", rows.iter().map(|r| r.n).sum::<usize>(), grand_mean(rows), u8::from(rows.iter().any(|r| r.unseen)));
    s
}

fn grand_mean(rows: &[ScoreRow]) -> f64 {
    rows.iter().map(|r| r.balanced_accuracy).sum::<f64>() / rows.len().max(1) as f64
}

fn metrics_table(rows: &[ScoreRow], ds: &EpochDataset) -> String {
    let mut s = format!("lorentzkit {VERSION}\n\n{:>5}  {:<12} {:>8}  {:>17}\n", "fold", "domain", "epochs", "balanced accuracy");
    for r in rows {
        let name = ds.domain_names.get(r.domain as usize).map_or("?", String::as_str);
        let _ = writeln!(s, "{:>5}  {:<12} {:>8}  {:>17.4}{}", r.fold, name, r.n, r.balanced_accuracy, if r.unseen { "  (unseen)" } else { "" });
    }
    let _ = writeln!(s, "{:>5}  {:<12} {:>8}  {:>17.4}", "", "grand mean", rows.iter().map(|r| r.n).sum::<usize>(), grand_mean(rows));
    let unseen: Vec<u32> = rows.iter().filter(|r| r.unseen).map(|r| r.domain).collect();
    if !unseen.is_empty() {
        let _ = writeln!(
            s,
            "\nWARNING: domains {unseen:?} were scored without statistics of their own (origin/unit fallback); run `adapt` first"
        );
    }
    s
}

fn cmd_eval(cfg: &RunConfig, data: &Path, checkpoint: Option<&Path>, force: bool) -> Result<()> {
    let ds = read_dataset(data)?;
    let rows = match checkpoint {
        Some(path) => {
            let model = load_checkpoint(path)?;
            let targets = target_domains(cfg, &ds, <[u32]>::to_vec)?;
            let dir = prepare_out(cfg, force, true)?;
            let rows = targets
                .iter()
                .map(|&d| {
                    let idx = ds.indices_in(&[d]);
                    if idx.is_empty() {
                        return Err(Error::Validation(format!("domain {d} has no epochs")));
                    }
                    let r = evaluate(&model, &ds, &idx)?;
                    Ok(ScoreRow { fold: 0, domain: d, n: r.n, balanced_accuracy: r.balanced_accuracy, unseen: r.unseen_domains.contains(&d) })
                })
                .collect::<Result<Vec<_>>>()?;
            (dir, rows)
        }
        None => {
            if cfg.folds.policy != FoldPolicy::Logo {
                return Err(Error::Validation("eval without --checkpoint cross-validates; set folds.policy = \"logo\"".into()));
            }
            let model_cfg = cfg.model_config(ds.n_channels, ds.n_times, ds.n_classes());
            model_cfg.validate()?;
            cfg.train.validate()?;
            let dir = prepare_out(cfg, force, true)?;
            let folds: Vec<Fold> = lorentzkit::experiment::folds(&ds.domain_ids())?;
            eprintln!("cross-validating {} folds on {} thread(s)", folds.len(), cfg.threads);
            let cv = cross_validate(&model_cfg, &cfg.train, &cfg.adapt, &ds, cfg.threads)?;
            let rows = cv
                .folds
                .iter()
                .flat_map(|f| {
                    f.scores.iter().map(|s| ScoreRow {
                        fold: f.fold.index,
                        domain: s.domain,
                        n: s.report.n,
                        balanced_accuracy: s.report.balanced_accuracy,
                        unseen: s.report.unseen_domains.contains(&s.domain),
                    })
                })
                .collect();
            (dir, rows)
        }
    };
    let (dir, rows) = rows;
    let dir = dir.expect("required");
    let table = metrics_table(&rows, &ds);
    write(&dir.join("metrics.csv"), &metrics_csv(&rows))?;
    write(&dir.join("report.txt"), &table)?;
    echo_config(&dir, cfg, "eval")?;
    print!("{table}");
    Ok(())
}

fn delta_text(r: &HyperbolicityReport, source: &str, metric: Metric) -> String {
    format!(
        "lorentzkit {VERSION}\ninput     {source}\nmetric    {}\nsamples   {} points x {} batches\ndelta     {:.6} ± {:.6}\ndiameter  {:.6} ± {:.6}\ndelta_rel {:.6} ± {:.6}\n",
        match metric {
            Metric::Lorentz => "lorentz",
            Metric::Euclidean => "euclidean",
        },
        r.sample_size,
        r.batches,
        r.delta,
        r.delta_std,
        r.diameter,
        r.diameter_std,
        r.delta_rel,
        r.delta_rel_std
    )
}

fn cmd_delta(cfg: &RunConfig, input: &Path, metric: Option<Metric>, batch: usize, batches: usize, force: bool) -> Result<()> {
    let (report, metric) = if input.is_dir() && input.join(META_FILE).exists() {
        // each epoch, flattened, is one point
        if metric == Some(Metric::Lorentz) {
            return Err(Error::Validation("a dataset has no curvature; use --metric euclidean or an embedding file".into()));
        }
        let ds = read_dataset(input)?;
        let w = ds.n_channels * ds.n_times;
        let rows: Vec<Vec<f64>> = (0..ds.len()).map(|i| ds.epoch(i).iter().map(|&v| f64::from(v)).collect()).collect();
        debug_assert!(rows.iter().all(|r| r.len() == w));
        (delta_sampled(SampledPoints::Euclidean(&rows), batch, batches, cfg.seed)?, Metric::Euclidean)
    } else {
        let metric = match metric {
            Some(m) => m,
            None if read_sidecar(input)?.is_some() => Metric::Lorentz,
            None => Metric::Euclidean,
        };
        let report = match metric {
            Metric::Lorentz => delta_sampled(SampledPoints::Lorentz(&read_lorentz(input, MANIFOLD_TOL)?), batch, batches, cfg.seed)?,
            Metric::Euclidean => delta_sampled(SampledPoints::Euclidean(&read_matrix(input)?), batch, batches, cfg.seed)?,
        };
        (report, metric)
    };
    let text = delta_text(&report, &input.display().to_string(), metric);
    print!("{text}");
    if let Some(dir) = prepare_out(cfg, force, false)? {
        let r = &report;
        let csv = format!(
            "delta,delta_std,diameter,diameter_std,delta_rel,delta_rel_std,sample_size,batches\n{:e},{:e},{:e},{:e},{:e},{:e},{},{}\n",
            r.delta, r.delta_std, r.diameter, r.diameter_std, r.delta_rel, r.delta_rel_std, r.sample_size, r.batches
        );
        write(&dir.join("delta.csv"), &csv)?;
        write(&dir.join("report.txt"), &text)?;
        echo_config(&dir, cfg, "delta")?;
    }
    Ok(())
}

fn cmd_hhsw(cfg: &RunConfig, a: &Path, b: &Path, slices: usize, exponent: f64, force: bool) -> Result<()> {
    if !(exponent >= 1.0) {
        return Err(Error::Validation(format!("exponent {exponent} must be >= 1")));
    }
    let pa = read_lorentz(a, MANIFOLD_TOL)?;
    let pb = read_lorentz(b, MANIFOLD_TOL)?;
    let est = hhsw_between(&pa, &pb, slices, exponent, cfg.seed)?;
    println!("hhsw {:e} ({} points, {slices} slices, p={exponent}, seed {})", est.value, pa.len(), cfg.seed);
    if let Some(dir) = prepare_out(cfg, force, false)? {
        write(&dir.join("hhsw.csv"), &format!("hhsw,points,slices,exponent,seed\n{:e},{},{slices},{exponent},{}\n", est.value, pa.len(), cfg.seed))?;
        let mut s = String::from("slice,value\n");
        for (i, v) in est.per_slice.iter().enumerate() {
            let _ = writeln!(s, "{i},{v:e}");
        }
        write(&dir.join("slices.csv"), &s)?;
        echo_config(&dir, cfg, "hhsw")?;
    }
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig, gc: GradcheckConfig, force: bool) -> Result<()> {
    let report = run_gradcheck(&gc, cfg.seed)?;
    let table = report.table();
    print!("{table}");
    if let Some(dir) = prepare_out(cfg, force, false)? {
        write(&dir.join("gradcheck.csv"), &report.to_csv())?;
        write(&dir.join("report.txt"), &table)?;
        echo_config(&dir, cfg, "gradcheck")?;
    }
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.layers.iter().filter(|l| !l.pass).map(|l| l.layer.as_str()).collect();
        Err(Error::Numeric(format!("gradient check failed for {}", failed.join(", "))))
    }
}
