use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use lbt_core::autodiff::l2_norm;
use lbt_core::engine::{
    retrain_discrete, train_linear_baseline, HypergradMode, LbtInstance, ModelConfig, ObjectiveMode,
};
use lbt_core::model::GenotypeDocument;
use lbt_core::oracle::{compare, fd_hypergradient, unrolled_hypergradient};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::output::{create_dir, mean_std, run_search_dir, write_json, RunManifest, RunRecord, MANIFEST_FILE};
use crate::CliError;

pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_HEADER: [&str; 4] = ["value", "teacher_test_error_mean", "teacher_test_error_std", "n_seeds"];
pub const ABLATE_FILE: &str = "ablate.json";
pub const GRADCHECK_FILE: &str = "gradcheck.txt";
pub const EVAL_FILE: &str = "eval.json";

/// Where and how a command runs.
#[derive(Clone, Debug)]
pub struct Context {
    pub out: PathBuf,
    pub jobs: usize,
    pub quiet: bool,
}

impl Context {
    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }
}

fn run_seeds(cfg: &RunConfig) -> Vec<u64> {
    (0..cfg.num_seeds as u64).map(|i| cfg.seed + i).collect()
}

/// Runs every `(config, dir)` pair, at most `jobs` at a time, in order.
fn run_batch(ctx: &Context, command: &str, runs: &[(RunConfig, PathBuf)]) -> Result<Vec<Result<RunRecord, CliError>>, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.jobs.max(1))
        .build()
        .map_err(|e| CliError::Other(e.to_string()))?;
    Ok(pool.install(|| {
        runs.par_iter()
            .map(|(cfg, dir)| {
                let r = run_search_dir(cfg, command, dir);
                match &r {
                    Ok(rec) => ctx.say(format!(
                        "{}: teacher test error {:.4}",
                        dir.display(),
                        rec.metrics.teacher_test_error
                    )),
                    Err(e) => eprintln!("{}: {e}", dir.display()),
                }
                r
            })
            .collect()
    }))
}

/// Splits batch results: non-divergence errors abort, divergences are
/// collected so the summary can still be written.
fn partition(results: Vec<Result<RunRecord, CliError>>) -> Result<(Vec<Option<RunRecord>>, Vec<String>), CliError> {
    let mut records = Vec::with_capacity(results.len());
    let mut diverged = Vec::new();
    for r in results {
        match r {
            Ok(rec) => records.push(Some(rec)),
            Err(CliError::Divergence(msg)) => {
                diverged.push(msg);
                records.push(None);
            }
            Err(other) => return Err(other),
        }
    }
    Ok((records, diverged))
}

fn divergence_error(diverged: &[String], total: usize) -> Result<(), CliError> {
    if diverged.is_empty() {
        Ok(())
    } else {
        Err(CliError::Divergence(format!(
            "{} of {total} runs diverged; first: {}",
            diverged.len(),
            diverged[0]
        )))
    }
}

pub fn search(cfg: &RunConfig, ctx: &Context) -> Result<RunRecord, CliError> {
    let record = run_search_dir(cfg, "search", &ctx.out)?;
    ctx.say(format!(
        "teacher test error {:.4} (initial {:.4}), student test error {}",
        record.metrics.teacher_test_error,
        record.metrics.teacher_test_error_initial,
        record.metrics.student_test_error.map_or("n/a".into(), |e| format!("{e:.4}")),
    ));
    ctx.say(format!("genotype: {}", record.genotype.join(" ")));
    Ok(record)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub row: String,
    pub objective: ObjectiveMode,
    pub teacher_test_error_mean: f64,
    pub teacher_test_error_std: f64,
    pub n_seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub seed: u64,
    pub full_error: f64,
    pub ablation_error: f64,
    /// `ablation_error - full_error`.
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub setting: u8,
    pub rows: Vec<SummaryRow>,
    /// Seeds where both runs finished.
    pub pairs: Vec<PairRow>,
}

/// Row labels and objective of an ablation setting, ablated row first.
pub fn ablation_rows(setting: u8) -> Result<[(&'static str, ObjectiveMode); 2], CliError> {
    match setting {
        1 => Ok([("student-only", ObjectiveMode::Ablation1), ("student+teacher", ObjectiveMode::Full)]),
        2 => Ok([("pseudo-only", ObjectiveMode::Ablation2), ("pseudo+human", ObjectiveMode::Full)]),
        other => Err(CliError::Config(format!("ablation setting must be 1 or 2, got {other}"))),
    }
}

fn summarize(row: &str, objective: ObjectiveMode, records: &[Option<RunRecord>]) -> SummaryRow {
    let errors: Vec<f64> = records.iter().flatten().map(|r| r.metrics.teacher_test_error).collect();
    let (mean, std) = mean_std(&errors);
    SummaryRow {
        row: row.to_string(),
        objective,
        teacher_test_error_mean: mean,
        teacher_test_error_std: std,
        n_seeds: errors.len(),
    }
}

/// Paired full vs ablated runs under matched seeds: `2 * num_seeds` runs.
pub fn ablate(cfg: &RunConfig, setting: u8, ctx: &Context) -> Result<AblationSummary, CliError> {
    let labels = ablation_rows(setting)?;
    create_dir(&ctx.out)?;
    write_json(&ctx.out.join(MANIFEST_FILE), &RunManifest::new("ablate", cfg, &ctx.out))?;
    let seeds = run_seeds(cfg);
    let mut runs = Vec::new();
    for (label, objective) in labels {
        for &seed in &seeds {
            let mut run = cfg.with_seed(seed);
            run.search.objective = objective;
            runs.push((run, ctx.out.join(label).join(format!("seed-{seed}"))));
        }
    }
    let total = runs.len();
    let (records, diverged) = partition(run_batch(ctx, "ablate", &runs)?)?;
    let (ablated, full) = records.split_at(seeds.len());
    let rows = vec![
        summarize(labels[0].0, labels[0].1, ablated),
        summarize(labels[1].0, labels[1].1, full),
    ];
    let pairs = seeds
        .iter()
        .zip(ablated.iter().zip(full))
        .filter_map(|(&seed, (a, f))| {
            let (a, f) = (a.as_ref()?, f.as_ref()?);
            Some(PairRow {
                seed,
                full_error: f.metrics.teacher_test_error,
                ablation_error: a.metrics.teacher_test_error,
                delta: a.metrics.teacher_test_error - f.metrics.teacher_test_error,
            })
        })
        .collect();
    let summary = AblationSummary { setting, rows, pairs };
    write_json(&ctx.out.join(ABLATE_FILE), &summary)?;
    for r in &summary.rows {
        ctx.say(format!(
            "{:<16} {:.4} +- {:.4} (n = {})",
            r.row, r.teacher_test_error_mean, r.teacher_test_error_std, r.n_seeds
        ));
    }
    divergence_error(&diverged, total)?;
    Ok(summary)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Lambda,
    Gamma,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::Gamma => "gamma",
        }
    }
}

impl std::str::FromStr for SweepParam {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lambda" => Ok(SweepParam::Lambda),
            "gamma" => Ok(SweepParam::Gamma),
            other => Err(CliError::Config(format!("sweep parameter must be lambda or gamma, got `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub teacher_test_error_mean: f64,
    pub teacher_test_error_std: f64,
    pub n_seeds: usize,
}

/// One directory per value and seed, plus `sweep.csv`.
pub fn sweep(cfg: &RunConfig, param: SweepParam, values: &[f64], ctx: &Context) -> Result<Vec<SweepRow>, CliError> {
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    create_dir(&ctx.out)?;
    write_json(&ctx.out.join(MANIFEST_FILE), &RunManifest::new("sweep", cfg, &ctx.out))?;
    let seeds = run_seeds(cfg);
    let mut runs = Vec::new();
    for &value in values {
        for &seed in &seeds {
            let mut run = cfg.with_seed(seed);
            match param {
                SweepParam::Lambda => run.search.lambda = value,
                SweepParam::Gamma => run.search.gamma = value,
            }
            run.validate()?;
            let dir = ctx.out.join(format!("{}={value}", param.name())).join(format!("seed-{seed}"));
            runs.push((run, dir));
        }
    }
    let total = runs.len();
    let (records, diverged) = partition(run_batch(ctx, "sweep", &runs)?)?;
    let rows: Vec<SweepRow> = values
        .iter()
        .zip(records.chunks(seeds.len()))
        .map(|(&value, chunk)| {
            let s = summarize("", cfg.search.objective, chunk);
            SweepRow {
                value,
                teacher_test_error_mean: s.teacher_test_error_mean,
                teacher_test_error_std: s.teacher_test_error_std,
                n_seeds: s.n_seeds,
            }
        })
        .collect();
    write_sweep_csv(&ctx.out.join(SWEEP_FILE), &rows)?;
    ctx.say(format!("{:>8} {:>10} {:>10} {:>4}", param.name(), "mean", "std", "n"));
    for r in &rows {
        ctx.say(format!(
            "{:>8} {:>10.4} {:>10.4} {:>4}",
            r.value, r.teacher_test_error_mean, r.teacher_test_error_std, r.n_seeds
        ));
    }
    divergence_error(&diverged, total)?;
    Ok(rows)
}

fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), CliError> {
    let csv_err = |e: csv::Error| CliError::Other(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(SWEEP_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.value.to_string(),
            r.teacher_test_error_mean.to_string(),
            r.teacher_test_error_std.to_string(),
            r.n_seeds.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(CliError::io(format!("writing {}", path.display())))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckLine {
    pub seed: u64,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub lines: Vec<CheckLine>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.passed)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for l in &self.lines {
            let _ = writeln!(
                s,
                "[{}] seed {} {}\n{}",
                if l.passed { "PASS" } else { "FAIL" },
                l.seed,
                l.name,
                l.detail
            );
        }
        let failed = self.lines.iter().filter(|l| !l.passed).count();
        let _ = writeln!(s, "{} checks, {failed} failed", self.lines.len());
        s
    }
}

// Below this norm a gradient counts as the zero vector.
const ZERO_NORM: f64 = 1e-12;

fn check(
    seed: u64,
    name: &'static str,
    candidate: &[f64],
    reference: &[f64],
    min_cosine: f64,
    max_rel_l2: f64,
) -> Result<CheckLine, CliError> {
    if l2_norm(reference) <= ZERO_NORM {
        let norm = l2_norm(candidate);
        return Ok(CheckLine {
            seed,
            name,
            passed: norm <= ZERO_NORM,
            detail: format!("zero reference; candidate norm {norm:.3e}\n"),
        });
    }
    let c = compare(candidate, reference, false)?;
    Ok(CheckLine {
        seed,
        name,
        passed: c.passes(min_cosine, max_rel_l2),
        detail: c.to_string(),
    })
}

fn gradcheck_instance(cfg: &RunConfig) -> Result<LbtInstance, CliError> {
    let bundle = cfg.bundle()?;
    let models = cfg.models(&bundle)?;
    let mut inst = LbtInstance::from_bundle(models, cfg.search.clone(), &bundle, cfg.seed)?;
    let scale = cfg.gradcheck.arch_scale;
    if scale > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let flat: Vec<f64> = (0..inst.arch.len()).map(|_| rng.random_range(-scale..scale)).collect();
        inst.arch = inst.arch.with_flat(&flat)?;
    }
    if cfg.gradcheck.degenerate {
        inst.teacher = inst.teacher.with_flat(&vec![0.0; inst.teacher.num_scalars()]).map_err(lbt_core::engine::EngineError::from)?;
        inst.student = inst.student.with_flat(&vec![0.0; inst.student.num_scalars()]).map_err(lbt_core::engine::EngineError::from)?;
    }
    Ok(inst)
}

/// Engine gradient vs the coordinate oracle, the two oracles against each
/// other, and the oracle against itself at a tenth of the step.
pub fn gradcheck(cfg: &RunConfig, ctx: &Context) -> Result<GradcheckReport, CliError> {
    let g = &cfg.gradcheck;
    if g.instances == 0 {
        return Err(CliError::Config("gradcheck.instances must be >= 1".into()));
    }
    create_dir(&ctx.out)?;
    write_json(&ctx.out.join(MANIFEST_FILE), &RunManifest::new("gradcheck", cfg, &ctx.out))?;
    let mut lines = Vec::new();
    for seed in cfg.seed..cfg.seed + g.instances as u64 {
        let inst = gradcheck_instance(&cfg.with_seed(seed))?;
        let reference = fd_hypergradient(&inst, g.fd_step)?;

        let mut engine = inst.combined_gradient()?;
        if g.corrupt_sign {
            engine.iter_mut().for_each(|v| *v = -*v);
        }
        let (min_cos, max_rel, name) = match cfg.search.hypergrad {
            HypergradMode::FiniteDifference => (g.min_cosine, f64::INFINITY, "engine (finite-difference) vs oracle"),
            HypergradMode::ExactUnrolled => (g.exact_min_cosine, g.exact_max_rel_l2, "engine (exact-unrolled) vs oracle"),
        };
        lines.push(check(seed, name, &engine, &reference, min_cos, max_rel)?);

        if inst.num_params() <= g.param_ceiling {
            let exact = unrolled_hypergradient(&inst, g.param_ceiling)?;
            lines.push(check(seed, "unrolled oracle vs coordinate oracle", &exact, &reference, -1.0, g.cross_max_rel_l2)?);
        }
        let fine = fd_hypergradient(&inst, g.fd_step / 10.0)?;
        lines.push(check(seed, "coordinate oracle step consistency", &reference, &fine, -1.0, g.step_max_rel_l2)?);
    }
    let report = GradcheckReport { lines };
    let text = report.render();
    let path = ctx.out.join(GRADCHECK_FILE);
    fs::write(&path, &text).map_err(CliError::io(format!("writing {}", path.display())))?;
    ctx.say(text.trim_end());
    if !report.passed() {
        let failed: Vec<String> = report
            .lines
            .iter()
            .filter(|l| !l.passed)
            .map(|l| format!("seed {} {}", l.seed, l.name))
            .collect();
        return Err(CliError::Gradcheck(failed.join("; ")));
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub seed: u64,
    pub cells: usize,
    pub epochs: usize,
    pub genotype: Vec<String>,
    pub test_error: f64,
    pub train_loss: f64,
    /// Softmax regression trained the same way.
    pub linear_baseline_test_error: f64,
}

/// Retrains the genotype's discrete network from scratch on teacher
/// train + val and scores it on the test split.
pub fn eval(cfg: &RunConfig, genotype_path: &Path, ctx: &Context) -> Result<EvalRecord, CliError> {
    let doc: GenotypeDocument = crate::output::read_json(genotype_path)
        .map_err(|e| CliError::Config(format!("genotype: {e}")))?;
    let mut genotype = doc.genotype()?;
    if let Some(cells) = cfg.eval.cells {
        genotype.cells = cells;
    }
    create_dir(&ctx.out)?;
    write_json(&ctx.out.join(MANIFEST_FILE), &RunManifest::new("eval", cfg, &ctx.out))?;
    let bundle = cfg.bundle()?;
    let models = ModelConfig {
        nodes: doc.nodes,
        cells: genotype.cells,
        ..cfg.model.clone()
    }
    .build(bundle.feature_dim, bundle.num_classes)?;
    let train = bundle.teacher_train.concat(&bundle.teacher_val);
    let outcome = retrain_discrete(&models.teacher, &genotype, &train, &bundle.test, &cfg.retrain)?;
    let baseline = train_linear_baseline(&train, &bundle.test, bundle.num_classes, &cfg.retrain)?;
    let record = EvalRecord {
        seed: cfg.seed,
        cells: genotype.cells,
        epochs: cfg.retrain.epochs,
        genotype: genotype.edges.iter().map(|e| e.op.name().to_string()).collect(),
        test_error: outcome.test_error,
        train_loss: outcome.train_loss,
        linear_baseline_test_error: baseline.test_error,
    };
    write_json(&ctx.out.join(EVAL_FILE), &record)?;
    ctx.say(format!(
        "test error {:.4} (linear baseline {:.4}), final train loss {:.6}",
        record.test_error, record.linear_baseline_test_error, record.train_loss
    ));
    Ok(record)
}
