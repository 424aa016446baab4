//! Argument parsing and the subcommands.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use adaptseg::envsim::{generate_dataset, read_dataset, verify_frames, write_dataset, Split};
use clap::{Args, Parser, Subcommand};

use crate::config::{RunConfig, KEYS};
use crate::pipeline::{self, Suite, LABEL_COLUMNS};
use crate::table::Table;
use crate::CliError;

#[derive(Parser, Debug)]
#[command(name = "adaptseg", version, about = "Test-time adaptive semantic segmentation on synthetic embodied scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Overrides {
    /// File of `key = value` lines applied before the overrides.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Configuration overrides as `--key value` or `--key=value` (see `keys`).
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate an action-tree dataset into `out`.
    GenData(Overrides),
    /// Check a dataset's manifest and re-render every frame.
    Validate(Overrides),
    /// Train one configuration; writes train.log, checkpoint.bin and config.txt to `out`.
    Train(Overrides),
    /// Score `checkpoint` on `split`; writes eval.tsv (and per_point.tsv) to `out`.
    Eval(Overrides),
    /// Run an ablation suite: main, embedder, steps, variants, policy or pca.
    Ablate {
        suite: String,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Re-check the tables in `out` and plot its training log.
    Report(Overrides),
    /// List configuration keys with their defaults.
    Keys,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Builds the configuration, also accepting `--config` among the overrides.
fn resolve(o: &Overrides) -> Result<RunConfig, CliError> {
    let mut file = o.config.clone();
    let mut rest = vec![];
    let mut it = o.overrides.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            let f = it.next().ok_or_else(|| CliError::Usage("--config needs a value".into()))?;
            file = Some(PathBuf::from(f));
        } else if let Some(f) = a.strip_prefix("--config=") {
            file = Some(PathBuf::from(f));
        } else {
            rest.push(a.clone());
        }
    }
    RunConfig::from_sources(file.as_deref(), &rest)
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenData(o) => gen_data(&resolve(&o)?),
        Command::Validate(o) => validate(&resolve(&o)?),
        Command::Train(o) => train(&resolve(&o)?),
        Command::Eval(o) => eval(&resolve(&o)?),
        Command::Ablate { suite, overrides } => ablate(suite.parse()?, &resolve(&overrides)?),
        Command::Report(o) => report(&resolve(&o)?),
        Command::Keys => {
            for (k, v, doc) in KEYS {
                println!("{k:<20} {v:<16} {doc}");
            }
            Ok(())
        }
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn gen_data(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir();
    let ds = generate_dataset(&cfg.dataset_config()?)?;
    write_dataset(&ds, &out)?;
    cfg.write_resolved(&out)?;
    println!(
        "wrote {} points ({} train, {} val, {} test) to {}",
        ds.points.len(),
        ds.count(Split::Train),
        ds.count(Split::Val),
        ds.count(Split::Test),
        out.display()
    );
    Ok(())
}

fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    let dir = cfg.path("dataset").unwrap_or_else(|| cfg.out_dir());
    let ds = read_dataset(&dir)?;
    let bad = verify_frames(&ds)?;
    if !bad.is_empty() {
        let ids: Vec<String> = bad.iter().map(usize::to_string).collect();
        return Err(CliError::Validation(format!(
            "stored frames differ from their re-render for points {}",
            ids.join(",")
        )));
    }
    let frames: usize = ds.points.iter().map(|p| p.tree.nodes.len()).sum();
    println!("{}: {} points, {frames} frames, all consistent", dir.display(), ds.points.len());
    Ok(())
}

fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let setup = cfg.setup()?;
    let out = cfg.out_dir();
    let ds = pipeline::load_dataset(cfg)?;
    let init = cfg.path("init").map(|p| pipeline::load_theta(&p, &setup)).transpose()?;
    print!("{}", pipeline::log_header(&setup));
    let outcome = pipeline::train_run(cfg, &ds, init, Some(&out), |r| println!("{}", r.log_line()))?;
    match outcome.best_epoch {
        Some(e) => println!("best epoch {e}; checkpoint in {}", out.join("checkpoint.bin").display()),
        None => println!("no epochs run; initial state saved in {}", out.join("checkpoint.bin").display()),
    }
    Ok(())
}

fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let setup = cfg.setup()?;
    let ckpt = cfg.path("checkpoint").ok_or_else(|| CliError::Usage("eval needs --checkpoint".into()))?;
    let state = pipeline::load_checkpoint(&ckpt, &setup)?;
    let ds = pipeline::load_dataset(cfg)?;
    let ev = pipeline::evaluate_split(cfg, &state, &ds)?;
    let decimals: usize = cfg.get("decimals")?;

    let mut t = pipeline::metric_table(decimals);
    t.comments.push(format!("split: {} ({} points)", cfg.raw("split"), ev.per_point.len()));
    let adaptation = if setup.adapt.adapts() { "on" } else { "off" };
    t.push(&[cfg.raw("name"), adaptation, setup.adapt.policy.tag()], &ev.report.values());
    let reference = match cfg.path("baseline") {
        Some(p) => pipeline::baseline_from_table(&p)?,
        None => ev.report.values().to_vec(),
    };
    t.set_deltas(&reference);
    if cfg.get::<bool>("exhaustive")? {
        if let Some((r, n)) = pipeline::exhaustive_average(cfg, &state, &ds)? {
            let v = r.values().map(|x| format!("{x:.*}", decimals));
            t.comments.push(format!("mean over all {n} sequences per point (per-image): {}", v.join(" ")));
        }
    }
    let out = cfg.out_dir();
    cfg.write_resolved(&out)?;
    write(&out.join("eval.tsv"), &t.render())?;
    print!("{}", t.render());

    if cfg.get::<bool>("per_point")? {
        let mut cols = pipeline::METRIC_COLUMNS.to_vec();
        cols.extend(["learned_loss", "shift"]);
        let mut pt = Table::new(&["point", "actions"], &cols, 4);
        for (id, r, traj, _) in &ev.per_point {
            let actions: Vec<&str> = traj.actions.iter().map(|a| a.tag()).collect();
            let actions = if actions.is_empty() { "-".to_string() } else { actions.join(",") };
            let learned = traj.learned_losses.first().copied().unwrap_or(0.0);
            let shift = traj.deltas.iter().map(|(_, d)| d * d).sum::<f64>().sqrt();
            let mut values = r.values().to_vec();
            values.extend([learned, shift]);
            pt.push(&[&id.to_string(), &actions], &values);
        }
        write(&out.join("per_point.tsv"), &pt.render())?;
    }
    Ok(())
}

fn ablate(suite: Suite, cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir();
    let res = pipeline::run_suite(suite, cfg, &out, |m| eprintln!("[{}] {m}", suite.tag()))?;
    print!("{}", res.table.render());
    if suite == Suite::Pca {
        print!("{}", pipeline::pca_table(&res.pca).render());
    }
    let failed = res.failed_cells();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("{} cell run(s) failed: {}", failed.len(), failed.join("; "))))
    }
}

/// Label-column count of each table file the commands write.
fn label_count(name: &str) -> Option<usize> {
    match name {
        "eval.tsv" | "table.tsv" => Some(LABEL_COLUMNS.len()),
        "pca.tsv" | "per_point.tsv" => Some(2),
        _ => None,
    }
}

fn report(cfg: &RunConfig) -> Result<(), CliError> {
    let out = cfg.out_dir();
    let mut found = false;
    let log = out.join("train.log");
    if log.exists() {
        let text = std::fs::read_to_string(&log).map_err(|e| CliError::io(&log, e))?;
        let (miou, loss) = pipeline::log_curves(&text)?;
        write(&out.join("curve_miou.svg"), &miou)?;
        write(&out.join("curve_loss.svg"), &loss)?;
        println!("plotted {}", log.display());
        found = true;
    }
    let mut names: Vec<String> = std::fs::read_dir(&out)
        .map_err(|e| CliError::io(&out, e))?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| label_count(n).is_some())
        .collect();
    names.sort();
    for name in names {
        let path = out.join(&name);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let t = Table::parse(&text, label_count(&name).unwrap_or(0))?;
        if t.render() != text {
            return Err(CliError::Validation(format!(
                "{} does not round-trip through the table parser",
                path.display()
            )));
        }
        println!("== {name}");
        print!("{text}");
        found = true;
    }
    if !found {
        return Err(CliError::Validation(format!("nothing to report in {}", out.display())));
    }
    Ok(())
}
