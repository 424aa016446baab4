//! Runs shared by the subcommands: data, training, evaluation and the
//! ablation suites.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use adaptseg::adapt::{
    evaluate, infer_with_actions, load_state, save_state, train, EpochRecord, Policy, Setup, TrainOutcome, TrainState,
    Trajectory, Variant, VariantMask, LOG_HEADER,
};
use adaptseg::envsim::{generate_dataset, read_dataset, Action, Dataset, DatasetPoint, Mask, Split};
use adaptseg::fusion::{embed_frames, pca_embeddings, PcaResult};
use adaptseg::params::{Checkpoint, ParamStore};
use adaptseg::segmodel::{forward, image_tensor, init_params};
use adaptseg::setloss::MetricReport;

use crate::config::RunConfig;
use crate::svg::{self, Series};
use crate::table::Table;
use crate::CliError;

pub const METRIC_COLUMNS: [&str; 4] = MetricReport::HEADER;
pub const LABEL_COLUMNS: [&str; 3] = ["method", "adaptation", "policy"];

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// The dataset named by `dataset`, or a freshly generated one.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    match cfg.path("dataset") {
        Some(dir) => Ok(read_dataset(&dir)?),
        None => Ok(generate_dataset(&cfg.dataset_config()?)?),
    }
}

/// Checks that the dataset fits the model and the sequence length.
pub fn check_compatible(setup: &Setup, ds: &Dataset) -> Result<(), CliError> {
    if ds.class_count() != setup.model.classes {
        return Err(CliError::Validation(format!(
            "dataset has {} classes, model is configured for {}",
            ds.class_count(),
            setup.model.classes
        )));
    }
    let cam = &ds.config.scene.camera;
    let (h, w) = setup.model.input;
    if cam.height > h || cam.width > w {
        return Err(CliError::Validation(format!("{}x{} frames do not fit the {h}x{w} canvas", cam.width, cam.height)));
    }
    let needs = if setup.adapt.policy == Policy::SingleFrame { 0 } else { setup.adapt.steps };
    if ds.config.depth < needs {
        return Err(CliError::Validation(format!(
            "dataset trees have depth {}, sequences need {needs} steps",
            ds.config.depth
        )));
    }
    Ok(())
}

pub fn points(ds: &Dataset, split: Split) -> Vec<&DatasetPoint> {
    ds.split(split).collect()
}

/// `#` lines describing the variant, followed by the column header.
pub fn log_header(setup: &Setup) -> String {
    let mask = VariantMask::new(setup.adapt.variant);
    let trainable: Vec<&str> = mask.flags.iter().filter(|(_, f)| f.trainable).map(|(g, _)| *g).collect();
    let list = |v: Vec<&str>| if v.is_empty() { "-".to_string() } else { v.join(",") };
    format!(
        "# variant: {}\n# policy: {}\n# trainable: {}\n# frozen: {}\n# adaptive: {}\n{LOG_HEADER}\n",
        setup.adapt.variant,
        setup.adapt.policy,
        list(trainable),
        list(mask.frozen_groups()),
        list(mask.adaptive_groups())
    )
}

/// Segmentation parameters of a checkpoint, checked against `setup`.
pub fn load_theta(path: &Path, setup: &Setup) -> Result<ParamStore, CliError> {
    let ckpt = Checkpoint::load(path)?;
    let theta =
        ckpt.section("theta").ok_or_else(|| CliError::Validation(format!("{}: no theta section", path.display())))?;
    if !theta.same_layout(&init_params(&setup.model, 0)?) {
        return Err(CliError::Validation(format!(
            "{}: parameters do not match the model configuration",
            path.display()
        )));
    }
    Ok(theta.clone())
}

/// Full training state of a checkpoint. Architecture metadata must agree
/// with `setup`; adaptation settings may differ.
pub fn load_checkpoint(path: &Path, setup: &Setup) -> Result<TrainState, CliError> {
    let ckpt = Checkpoint::load(path)?;
    let mismatches: Vec<String> = setup
        .meta()
        .into_iter()
        .filter(|(k, _)| k.starts_with("model.") || k.starts_with("fusion."))
        .filter_map(|(k, v)| match ckpt.meta(&k) {
            Some(c) if c == v => None,
            c => Some(format!("{k}: checkpoint {}, config {v}", c.unwrap_or("missing"))),
        })
        .collect();
    if !mismatches.is_empty() {
        return Err(CliError::Validation(format!(
            "{} does not match the configuration ({})",
            path.display(),
            mismatches.join("; ")
        )));
    }
    load_state(setup, &ckpt).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Trains one configuration. With `out`, the log is written as epochs
/// finish and the best state is saved as `checkpoint.bin` next to the
/// resolved configuration.
pub fn train_run(
    cfg: &RunConfig,
    ds: &Dataset,
    init: Option<ParamStore>,
    out: Option<&Path>,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, CliError> {
    let setup = cfg.setup()?;
    check_compatible(&setup, ds)?;
    let seed: u64 = cfg.get("seed")?;
    let header = log_header(&setup);
    let mut log = match out {
        Some(dir) => {
            cfg.write_resolved(dir)?;
            let path = dir.join("train.log");
            let mut f = BufWriter::new(File::create(&path).map_err(|e| CliError::io(&path, e))?);
            f.write_all(header.as_bytes()).map_err(|e| CliError::io(&path, e))?;
            Some((f, path))
        }
        None => None,
    };
    let mut io_err = None;
    let outcome = train(&setup, &points(ds, Split::Train), &points(ds, Split::Val), seed, init, |r| {
        if let Some((f, path)) = log.as_mut() {
            if let Err(e) = writeln!(f, "{}", r.log_line()).and_then(|_| f.flush()) {
                io_err.get_or_insert(CliError::io(path, e));
            }
        }
        progress(r);
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }
    if let Some(dir) = out {
        let best = outcome.best_epoch.map_or("-".to_string(), |e| e.to_string());
        let ckpt = save_state(
            &setup,
            &outcome.best,
            &[("train.best_epoch".into(), best), ("train.seed".into(), seed.to_string())],
        );
        ckpt.save(&dir.join("checkpoint.bin"))?;
    }
    Ok(outcome)
}

/// Single-frame training of every group, the common starting point of
/// suite cells. Returns the best segmentation parameters.
pub fn pretrain(cfg: &RunConfig, ds: &Dataset, out: Option<&Path>) -> Result<Option<ParamStore>, CliError> {
    let init = cfg.path("init").map(|p| load_theta(&p, &cfg.setup()?)).transpose()?;
    let epochs: usize = cfg.get("pretrain_epochs")?;
    if epochs == 0 {
        return Ok(init);
    }
    let mut pre = cfg.clone();
    pre.set("variant", Variant::Full.tag())?;
    pre.set("policy", Policy::SingleFrame.tag())?;
    pre.set("epochs", &epochs.to_string())?;
    pre.set("lr_model", cfg.raw("pretrain_lr"))?;
    let outcome = train_run(&pre, ds, init, out, |_| {})?;
    Ok(Some(outcome.best.theta))
}

pub struct Evaluation {
    pub report: MetricReport,
    pub per_point: Vec<(usize, MetricReport, Trajectory, Mask)>,
}

pub fn evaluate_split(cfg: &RunConfig, state: &TrainState, ds: &Dataset) -> Result<Evaluation, CliError> {
    let setup = cfg.setup()?;
    check_compatible(&setup, ds)?;
    let pts = points(ds, cfg.split()?);
    if pts.is_empty() {
        return Err(CliError::Validation(format!("split {} is empty", cfg.raw("split"))));
    }
    let (report, per) = evaluate(&setup, &state.theta, &state.phi, &pts, cfg.get("seed")?)?;
    let per_point = pts.iter().zip(per).map(|(p, (r, t, m))| (p.tree.point_id, r, t, m)).collect();
    Ok(Evaluation { report, per_point })
}

/// Mean per-image metrics over every possible action sequence of each
/// point, as a policy-independent reference. `None` when the policy adds
/// no frames.
pub fn exhaustive_average(
    cfg: &RunConfig,
    state: &TrainState,
    ds: &Dataset,
) -> Result<Option<(MetricReport, usize)>, CliError> {
    let setup = cfg.setup()?;
    if setup.adapt.policy == Policy::SingleFrame || setup.adapt.steps == 0 {
        return Ok(None);
    }
    let mut sequences: Vec<Vec<Action>> = vec![vec![]];
    for _ in 0..setup.adapt.steps {
        sequences = sequences
            .into_iter()
            .flat_map(|s| Action::ALL.iter().map(move |a| [s.clone(), vec![*a]].concat()))
            .collect();
    }
    let mut reports = vec![];
    for p in points(ds, cfg.split()?) {
        for s in &sequences {
            reports.push(infer_with_actions(&setup, &state.theta, &state.phi, p, s)?.report);
        }
    }
    Ok(MetricReport::mean(&reports).map(|r| (r, sequences.len())))
}

pub fn metric_table(decimals: usize) -> Table {
    Table::new(&LABEL_COLUMNS, &METRIC_COLUMNS, decimals)
}

/// Reference metrics from the first row of a rendered metrics table.
pub fn baseline_from_table(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let t = Table::parse(&text, LABEL_COLUMNS.len())?;
    let row = t.rows.first().ok_or_else(|| CliError::Validation(format!("{}: table has no rows", path.display())))?;
    METRIC_COLUMNS
        .iter()
        .map(|c| {
            t.column(c)
                .map(|i| row.values[i])
                .ok_or_else(|| CliError::Validation(format!("{}: no {c} column", path.display())))
        })
        .collect()
}

/// Prediction-embedder tokens of every frame along `actions`, projected on
/// their two principal axes.
pub fn pca_point(
    setup: &Setup,
    state: &TrainState,
    point: &DatasetPoint,
    actions: &[Action],
) -> Result<PcaResult, CliError> {
    let seq = point.tree.sequence(actions)?;
    let tb = state.theta.constants();
    let pb = state.phi.constants();
    let outs = seq
        .frames
        .iter()
        .map(|f| forward(&setup.model, &tb, &image_tensor(&setup.model, &f.image)?))
        .collect::<adaptseg::Result<Vec<_>>>()?;
    let toks = embed_frames(&setup.fusion, &pb, &outs)?;
    let frames: Vec<Vec<Vec<f64>>> = toks
        .predictions
        .iter()
        .map(|t| {
            let w = t.shape()[1];
            t.to_vec().chunks(w).map(<[f64]>::to_vec).collect()
        })
        .collect();
    Ok(pca_embeddings(&frames))
}

pub fn pca_svg(title: &str, pca: &PcaResult) -> String {
    let series: Vec<Series> = pca
        .coords
        .iter()
        .enumerate()
        .map(|(i, f)| Series { name: format!("frame {i}"), points: f.iter().map(|c| (c[0], c[1])).collect() })
        .collect();
    svg::scatter(&format!("{title} (separation {:.3})", pca.separation), "PC1", "PC2", &series)
}

/// Ablation suites; each is a list of cells trained from a shared start.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    /// Single-frame baseline against the adaptive model with adaptation off and on.
    Main,
    Embedder,
    Steps,
    Variants,
    Policy,
    Pca,
}

impl Suite {
    pub const ALL: [Suite; 6] =
        [Suite::Main, Suite::Embedder, Suite::Steps, Suite::Variants, Suite::Policy, Suite::Pca];

    pub fn tag(self) -> &'static str {
        match self {
            Suite::Main => "main",
            Suite::Embedder => "embedder",
            Suite::Steps => "steps",
            Suite::Variants => "variants",
            Suite::Policy => "policy",
            Suite::Pca => "pca",
        }
    }
}

impl FromStr for Suite {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        Suite::ALL.into_iter().find(|x| x.tag() == s).ok_or_else(|| {
            let names: Vec<&str> = Suite::ALL.iter().map(|x| x.tag()).collect();
            CliError::Usage(format!("unknown suite {s:?} ({})", names.join(", ")))
        })
    }
}

/// One row of a suite.
#[derive(Clone, Debug)]
pub struct Cell {
    pub name: String,
    pub labels: [String; 3],
    /// Overrides that shape training; cells with equal overrides share one
    /// trained model.
    pub train: Vec<(&'static str, String)>,
    /// Overrides applied only at evaluation.
    pub eval: Vec<(&'static str, String)>,
}

fn cell(name: &str, labels: [&str; 3], train: &[(&'static str, &str)], eval: &[(&'static str, &str)]) -> Cell {
    Cell {
        name: name.to_string(),
        labels: labels.map(String::from),
        train: train.iter().map(|(k, v)| (*k, v.to_string())).collect(),
        eval: eval.iter().map(|(k, v)| (*k, v.to_string())).collect(),
    }
}

fn baseline_cell() -> Cell {
    cell("baseline", ["baseline", "off", "single"], &[("variant", "baseline"), ("policy", "single")], &[])
}

/// Cells of `suite`; the first is the reference row.
pub fn suite_cells(suite: Suite, cfg: &RunConfig) -> Result<Vec<Cell>, CliError> {
    let policy = cfg.raw("policy").to_string();
    let on = |name: &str, method: &str, train: &[(&'static str, &str)]| cell(name, [method, "on", &policy], train, &[]);
    Ok(match suite {
        Suite::Main => vec![
            baseline_cell(),
            cell("adaptive-off", ["adaptive", "off", &policy], &[], &[("adapt_on_inference", "false")]),
            on("adaptive-on", "adaptive", &[]),
        ],
        Suite::Embedder | Suite::Pca => vec![
            baseline_cell(),
            on("vanilla", "vanilla", &[("embedder", "vanilla")]),
            on("mlp", "mlp", &[("embedder", "mlp")]),
        ],
        Suite::Steps | Suite::Variants => {
            let variants: Vec<Variant> = cfg.list("variants")?;
            let steps: Vec<usize> =
                if suite == Suite::Steps { cfg.list("steps_list")? } else { vec![cfg.get("steps")?] };
            let mut cells = vec![baseline_cell()];
            for v in &variants {
                for s in &steps {
                    let name = if suite == Suite::Steps { format!("{v}-{s}") } else { v.to_string() };
                    let method = if suite == Suite::Steps {
                        format!("{v} {s} step{}", if *s == 1 { "" } else { "s" })
                    } else {
                        v.to_string()
                    };
                    let mut c = on(&name, &method, &[("variant", v.tag())]);
                    c.train.push(("steps", s.to_string()));
                    cells.push(c);
                }
            }
            cells
        }
        Suite::Policy => {
            let causal = [("fusion_mode", "causal")];
            vec![
                cell("random", ["random", "on", "random"], &[causal[0], ("policy", "random")], &[]),
                cell("bestloss", ["bestloss", "on", "bestloss"], &[causal[0], ("policy", "bestloss")], &[]),
            ]
        }
    })
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub cell: Cell,
    pub per_seed: Vec<(u64, MetricReport)>,
    pub failures: Vec<(u64, String)>,
}

impl CellResult {
    pub fn mean(&self) -> Option<MetricReport> {
        MetricReport::mean(&self.per_seed.iter().map(|(_, r)| *r).collect::<Vec<_>>())
    }

    pub fn seed(&self, seed: u64) -> Option<&MetricReport> {
        self.per_seed.iter().find(|(s, _)| *s == seed).map(|(_, r)| r)
    }
}

/// Per-point separation scores `(point, vanilla, mlp)` of one seed.
pub type PcaScores = Vec<(usize, f64, f64)>;

pub struct SuiteResult {
    pub suite: Suite,
    pub cells: Vec<CellResult>,
    pub table: Table,
    pub pca: Vec<(u64, PcaScores)>,
}

impl SuiteResult {
    pub fn failed_cells(&self) -> Vec<String> {
        self.cells
            .iter()
            .flat_map(|c| c.failures.iter().map(move |(s, e)| format!("{} (seed {s}): {e}", c.cell.name)))
            .collect()
    }
}

fn cell_config(base: &RunConfig, seed: u64, overrides: &[(&'static str, String)]) -> Result<RunConfig, CliError> {
    let mut c = base.clone();
    c.set("seed", &seed.to_string())?;
    c.set("init", "")?;
    for (k, v) in overrides {
        c.set(k, v)?;
    }
    Ok(c)
}

fn suite_config(suite: Suite, cfg: &RunConfig) -> Result<RunConfig, CliError> {
    let mut c = cfg.clone();
    if suite == Suite::Steps {
        let steps: Vec<usize> = cfg.list("steps_list")?;
        let deepest = steps.iter().copied().max().unwrap_or(1);
        let depth: usize = cfg.get("depth")?;
        c.set("depth", &depth.max(deepest).to_string())?;
    }
    Ok(c)
}

fn seed_table(
    suite: Suite,
    cells: &[CellResult],
    pick: impl Fn(&CellResult) -> Option<MetricReport>,
    decimals: usize,
) -> Table {
    let mut t = metric_table(decimals);
    t.comments.push(format!("suite: {}", suite.tag()));
    for c in cells {
        if let Some(r) = pick(c) {
            let labels: Vec<&str> = c.cell.labels.iter().map(String::as_str).collect();
            t.push(&labels, &r.values());
        }
    }
    if let Some(reference) = cells.first().and_then(&pick) {
        t.set_deltas(&reference.values());
    }
    t
}

/// Runs every cell of `suite` for every seed, writing per-cell runs under
/// `out`. Failed cells are recorded and skipped; the caller decides how to
/// report them.
pub fn run_suite(
    suite: Suite,
    cfg: &RunConfig,
    out: &Path,
    mut note: impl FnMut(&str),
) -> Result<SuiteResult, CliError> {
    let cfg = suite_config(suite, cfg)?;
    cfg.setup()?;
    let seeds: Vec<u64> = cfg.list("seeds")?;
    if seeds.is_empty() {
        return Err(CliError::Usage("seeds is empty".into()));
    }
    let decimals: usize = cfg.get("decimals")?;
    let cells = suite_cells(suite, &cfg)?;
    let mut results: Vec<CellResult> =
        cells.iter().map(|c| CellResult { cell: c.clone(), per_seed: vec![], failures: vec![] }).collect();
    let mut pca = vec![];
    cfg.write_resolved(out)?;

    for &seed in &seeds {
        let seed_dir = out.join(format!("seed{seed}"));
        let data_cfg = cell_config(&cfg, seed, &[])?;
        note(&format!("seed {seed}: data"));
        let ds = load_dataset(&data_cfg)?;
        note(&format!("seed {seed}: pretraining"));
        let mut pre_cfg = data_cfg.clone();
        pre_cfg.set("init", cfg.raw("init"))?;
        let theta0 = pretrain(&pre_cfg, &ds, Some(&seed_dir.join("pretrain")))?;
        let mut trained: HashMap<String, (TrainState, RunConfig)> = HashMap::new();
        let mut pca_states: Vec<(String, RunConfig, TrainState)> = vec![];
        for (i, c) in cells.iter().enumerate() {
            let res = (|| -> Result<MetricReport, CliError> {
                let train_cfg = cell_config(&cfg, seed, &c.train)?;
                let key = train_cfg.resolved();
                if !trained.contains_key(&key) {
                    note(&format!("seed {seed}: training {}", c.name));
                    let o = train_run(&train_cfg, &ds, theta0.clone(), Some(&seed_dir.join(&c.name)), |_| {})?;
                    trained.insert(key.clone(), (o.best, train_cfg.clone()));
                }
                let (state, _) = &trained[&key];
                let mut eval_cfg = train_cfg.clone();
                for (k, v) in &c.eval {
                    eval_cfg.set(k, v)?;
                }
                let ev = evaluate_split(&eval_cfg, state, &ds)?;
                if suite == Suite::Pca && i > 0 {
                    pca_states.push((c.name.clone(), eval_cfg.clone(), state.clone()));
                }
                Ok(ev.report)
            })();
            match res {
                Ok(r) => results[i].per_seed.push((seed, r)),
                Err(e) => {
                    note(&format!("seed {seed}: cell {} failed: {e}", c.name));
                    results[i].failures.push((seed, e.to_string()));
                }
            }
        }
        let t = seed_table(suite, &results, |c| c.seed(seed).copied(), decimals);
        write(&seed_dir.join("table.tsv"), &t.render())?;
        if suite == Suite::Pca && pca_states.len() == 2 {
            let scores = pca_suite_seed(&pca_states, &ds, &seed_dir)?;
            pca.push((seed, scores));
        }
    }

    let mut table = seed_table(suite, &results, CellResult::mean, decimals);
    table.comments.push(format!("mean over seeds {}", cfg.raw("seeds")));
    table.comments.push(format!("split: {}", cfg.raw("split")));
    if let Some(reference) = results.first() {
        for c in &results[1..] {
            let wins = c.per_seed.iter().filter(|(s, r)| reference.seed(*s).is_some_and(|b| r.miou > b.miou)).count();
            table.comments.push(format!(
                "{}: higher mIoU than {} on {wins} of {} seeds",
                c.cell.name,
                reference.cell.name,
                seeds.len()
            ));
        }
    }
    for f in results.iter().flat_map(|c| c.failures.iter().map(move |(s, _)| format!("{} seed {s}", c.cell.name))) {
        table.comments.push(format!("failed: {f}"));
    }
    write(&out.join("table.tsv"), &table.render())?;
    if suite == Suite::Pca {
        write(&out.join("pca.tsv"), &pca_table(&pca).render())?;
    }
    Ok(SuiteResult { suite, cells: results, table, pca })
}

/// Separation scores of the two embedder models on the evaluation split,
/// plus one scatter per model for the split's first point.
fn pca_suite_seed(states: &[(String, RunConfig, TrainState)], ds: &Dataset, dir: &Path) -> Result<PcaScores, CliError> {
    let mut per_model = vec![];
    for (name, cfg, state) in states {
        let setup = cfg.setup()?;
        let pts = points(ds, cfg.split()?);
        let seed: u64 = cfg.get("seed")?;
        let mut scores = vec![];
        for (k, p) in pts.iter().enumerate() {
            let actions = adaptseg::adapt::infer(&setup, &state.theta, &state.phi, p, seed)?.trajectory.actions;
            let res = pca_point(&setup, state, p, &actions)?;
            if k == 0 {
                write(
                    &dir.join(format!("pca_{name}.svg")),
                    &pca_svg(&format!("{name} embedder, point {}", p.tree.point_id), &res),
                )?;
            }
            scores.push((p.tree.point_id, res.separation));
        }
        per_model.push(scores);
    }
    Ok(per_model[0].iter().zip(&per_model[1]).map(|(a, b)| (a.0, a.1, b.1)).collect())
}

pub fn pca_table(scores: &[(u64, PcaScores)]) -> Table {
    let mut t = Table::new(&["seed", "point"], &["vanilla", "mlp"], 4);
    t.comments.push("between-frame share of prediction-token variance on the first two principal axes".into());
    let (mut wins, mut n) = (0, 0);
    for (seed, rows) in scores {
        for (p, v, m) in rows {
            t.push(&[&seed.to_string(), &p.to_string()], &[*v, *m]);
            n += 1;
            wins += usize::from(m > v);
        }
    }
    t.comments.push(format!("mlp above vanilla on {wins} of {n} points"));
    t
}

/// Plots of a training log: `(validation mIoU, training loss)` per epoch.
pub fn log_curves(log: &str) -> Result<(String, String), CliError> {
    let mut miou = vec![];
    let mut loss = vec![];
    for line in log.lines().filter(|l| !l.starts_with('#') && !l.starts_with("epoch") && !l.trim().is_empty()) {
        let cells: Vec<f64> = line
            .split('\t')
            .map(|c| c.parse::<f64>().map_err(|_| CliError::Validation(format!("bad log line {line:?}"))))
            .collect::<Result<_, _>>()?;
        if cells.len() != 6 {
            return Err(CliError::Validation(format!("log line has {} columns: {line:?}", cells.len())));
        }
        miou.push((cells[0], cells[2]));
        loss.push((cells[0], cells[1]));
    }
    let a = svg::lines("validation mIoU", "epoch", "mIoU", &[Series { name: "val mIoU".into(), points: miou }]);
    let b = svg::lines("training loss", "epoch", "loss", &[Series { name: "train loss".into(), points: loss }]);
    Ok((a, b))
}
