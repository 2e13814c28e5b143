//! Command-line entry point.
//!
//! Every command reads an optional TOML config (`--config`), applies flag
//! overrides on top, writes the merged result to
//! `<out>/<command>/effective_config.toml` and places its artifacts under
//! `--out`:
//!
//! ```text
//! <out>/data/            gen-data
//! <out>/tir/ <out>/mt/   train-tir, train-mt
//! <out>/student/         train-student
//! <out>/experiments/     one directory per ablation or sweep run
//! <out>/ablation/ <out>/sweep/ <out>/eval/   reports
//! ```

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::config::RunConfig;
use crate::corpus::{generate_corpus, read_dataset, write_dataset, Corpus, Split};
use crate::error::{Error, Result};
use crate::evaluation::{emit_report, evaluate_model, EvalTarget, ReportBundle};
use crate::gradcheck::{network_checks, standard_checks, GradCheckConfig};
use crate::models::Checkpoint;
use crate::training::{
    ablate_teachers, pretrain_mt, pretrain_tir, sweep_lambda, train_student, Experiments, TeacherCache,
    MT_CHECKPOINT, STUDENT_CHECKPOINT, TIR_CHECKPOINT,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

/// Tolerance the gradient check must meet.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "mtkd", version, about = "Multi-teacher distillation for end-to-end text image translation")]
pub struct Cli {
    /// TOML config file; built-in defaults apply to anything it omits.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory for all outputs; created if absent.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Overrides the corpus seed for gen-data and the training seed elsewhere.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// More log output (-v info, -vv debug). MTKD_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic image/source/target corpus into <out>/data.
    GenData(GenDataArgs),
    /// Train the recognition teacher into <out>/tir.
    TrainTir(TrainArgs),
    /// Train the text translation teacher into <out>/mt.
    TrainMt(TrainArgs),
    /// Distil both teachers into the end-to-end student in <out>/student.
    TrainStudent(StudentArgs),
    /// Train the seven teacher combinations plus a baseline over the experiment seeds.
    Ablate(ExperimentArgs),
    /// Train the all-teacher student at each distillation weight of the grid.
    SweepLambda(SweepArgs),
    /// Score the student and/or the recognition-then-translation pipeline.
    Evaluate(EvaluateArgs),
    /// Compare analytic and finite-difference gradients of every loss.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Characters of the source and target alphabet [default: abcdefghijklmnop].
    #[arg(long)]
    pub alphabet: Option<String>,
    /// Shortest sentence in characters [default: 3].
    #[arg(long)]
    pub min_len: Option<usize>,
    /// Longest sentence in characters [default: 8].
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Training samples [default: 5000].
    #[arg(long)]
    pub n_train: Option<usize>,
    /// Validation samples [default: 500].
    #[arg(long)]
    pub n_valid: Option<usize>,
    /// Test samples [default: 500].
    #[arg(long)]
    pub n_test: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    /// Dataset directory [default: <out>/data].
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Passes over the training set [default: 10].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Samples per optimizer step [default: 32].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam step size [default: 0.0003].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Mix the clock into shuffling and dropout seeds.
    #[arg(long)]
    pub nondeterministic: bool,
}

#[derive(Debug, Args)]
pub struct TeacherPaths {
    /// Recognition teacher checkpoint [default: <out>/tir/tir.ckpt].
    #[arg(long)]
    pub tir: Option<PathBuf>,
    /// Translation teacher checkpoint [default: <out>/mt/mt.ckpt].
    #[arg(long)]
    pub mt: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct KdArgs {
    /// Weight of distillation against the end-to-end loss, in [0, 1] [default: 0.8].
    #[arg(long)]
    pub lambda_kd: Option<f64>,
    /// Image-encoder distillation weight [default: 1].
    #[arg(long)]
    pub lambda_i: Option<f64>,
    /// Sequential-encoder distillation weight [default: 1].
    #[arg(long)]
    pub lambda_s: Option<f64>,
    /// Decoder distillation weight [default: 1].
    #[arg(long)]
    pub lambda_d: Option<f64>,
    /// Drop the token-level terms.
    #[arg(long)]
    pub no_token: bool,
    /// Drop the sentence-level terms.
    #[arg(long)]
    pub no_sentence: bool,
    /// Squared instead of plain Euclidean feature distances.
    #[arg(long)]
    pub squared_l2: bool,
}

#[derive(Debug, Args)]
pub struct StudentArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    #[command(flatten)]
    pub teachers: TeacherPaths,
    #[command(flatten)]
    pub kd: KdArgs,
    /// Start the student's image encoder from the recognition teacher's.
    #[arg(long)]
    pub warm_start: bool,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub student: StudentArgs,
    /// Comma-separated run seeds [default: 1,2,3].
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub experiment: ExperimentArgs,
    /// Comma-separated distillation weights [default: 0,0.4,0.8,1].
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalModel {
    Student,
    Pipeline,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset directory [default: <out>/data].
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    pub model: EvalModel,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    /// Student checkpoint [default: <out>/student/student.ckpt].
    #[arg(long)]
    pub student: Option<PathBuf>,
    #[command(flatten)]
    pub teachers: TeacherPaths,
    /// Untimed sentences before measuring latency [default: 10].
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Timed sentences [default: 100].
    #[arg(long)]
    pub timed: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Finite-difference step [default: 0.0001].
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Most coordinates probed per input [default: 64].
    #[arg(long)]
    pub max_probes: Option<usize>,
    /// Also check through small recognition, translation and student networks.
    #[arg(long)]
    pub network: bool,
}

fn apply_train(cfg: &mut RunConfig, a: &TrainArgs, seed: Option<u64>) {
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.train.learning_rate = v;
    }
    if a.nondeterministic {
        cfg.train.deterministic = false;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
        cfg.model.seed = s;
    }
}

fn apply_student(cfg: &mut RunConfig, a: &StudentArgs, seed: Option<u64>) {
    apply_train(cfg, &a.train, seed);
    let kd = &mut cfg.kd;
    let k = &a.kd;
    for (dst, src) in
        [(&mut kd.lambda_kd, k.lambda_kd), (&mut kd.lambda_i, k.lambda_i), (&mut kd.lambda_s, k.lambda_s), (&mut kd.lambda_d, k.lambda_d)]
    {
        if let Some(v) = src {
            *dst = v;
        }
    }
    kd.enable_token &= !k.no_token;
    kd.enable_sentence &= !k.no_sentence;
    kd.squared_l2 |= k.squared_l2;
    cfg.train.warm_start_image_encoder |= a.warm_start;
}

struct Paths {
    out: PathBuf,
}

impl Paths {
    fn data(&self, given: &Option<PathBuf>) -> PathBuf {
        given.clone().unwrap_or_else(|| self.out.join("data"))
    }

    fn tir(&self, t: &TeacherPaths) -> PathBuf {
        t.tir.clone().unwrap_or_else(|| self.out.join("tir").join(TIR_CHECKPOINT))
    }

    fn mt(&self, t: &TeacherPaths) -> PathBuf {
        t.mt.clone().unwrap_or_else(|| self.out.join("mt").join(MT_CHECKPOINT))
    }
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    info!("loading corpus from {}", path.display());
    read_dataset(path)
}

fn load_teachers(paths: &Paths, t: &TeacherPaths, corpus: &Corpus) -> Result<TeacherCache> {
    let tir = Checkpoint::load(&paths.tir(t))?;
    let mt = Checkpoint::load(&paths.mt(t))?;
    TeacherCache::build(tir, mt, corpus)
}

fn experiments_for<'a>(
    cfg: &RunConfig,
    corpus: &'a Corpus,
    cache: &'a TeacherCache,
    a: &ExperimentArgs,
    out: &Path,
) -> Result<Experiments<'a>> {
    let seeds = a.seeds.clone().unwrap_or_else(|| cfg.experiment.seeds.clone());
    Experiments::new(corpus, cache, cfg.model.clone(), cfg.train_config(), seeds, &out.join("experiments"))
}

fn execute(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let paths = Paths { out: cli.out.clone() };
    let out = &cli.out;
    match &cli.command {
        Command::GenData(a) => {
            let c = &mut cfg.corpus;
            if let Some(v) = &a.alphabet {
                c.alphabet = v.clone();
            }
            for (dst, src) in [
                (&mut c.min_len, a.min_len),
                (&mut c.max_len, a.max_len),
                (&mut c.n_train, a.n_train),
                (&mut c.n_valid, a.n_valid),
                (&mut c.n_test, a.n_test),
            ] {
                if let Some(v) = src {
                    *dst = v;
                }
            }
            if let Some(s) = cli.seed {
                c.seed = s;
            }
            cfg.validate()?;
            let dir = out.join("data");
            cfg.write_effective(out)?;
            let corpus = generate_corpus(&cfg.corpus)?;
            write_dataset(&dir, &corpus)?;
            println!("wrote {} samples to {}", corpus.train.len() + corpus.valid.len() + corpus.test.len(), dir.display());
        }
        Command::TrainTir(a) | Command::TrainMt(a) => {
            apply_train(&mut cfg, a, cli.seed);
            cfg.validate()?;
            let tir = matches!(cli.command, Command::TrainTir(_));
            let dir = out.join(if tir { "tir" } else { "mt" });
            cfg.write_effective(&dir)?;
            let corpus = load_corpus(&paths.data(&a.data))?;
            let train = cfg.train_config();
            let outcome = if tir {
                pretrain_tir(&corpus, &cfg.model, &train, &dir)?
            } else {
                pretrain_mt(&corpus, &cfg.model, &train, &dir)?
            };
            let best = &outcome.records[outcome.best_epoch - 1];
            println!(
                "best epoch {} with validation token accuracy {:.4}; checkpoint {}",
                outcome.best_epoch,
                best.valid_accuracy.unwrap_or(0.0),
                dir.join(&best.checkpoint).display()
            );
        }
        Command::TrainStudent(a) => {
            apply_student(&mut cfg, a, cli.seed);
            cfg.validate()?;
            let dir = out.join("student");
            cfg.write_effective(&dir)?;
            let corpus = load_corpus(&paths.data(&a.train.data))?;
            let train = cfg.train_config();
            let needs_teachers = train.kd.lambda_kd > 0.0 || train.warm_start_image_encoder;
            let cache = if needs_teachers { Some(load_teachers(&paths, &a.teachers, &corpus)?) } else { None };
            let outcome = train_student(&corpus, cache.as_ref(), &cfg.model, &train, &dir)?;
            let best = &outcome.records[outcome.best_epoch - 1];
            println!(
                "best epoch {} with validation BLEU {:.2}; checkpoint {}",
                outcome.best_epoch,
                best.valid_bleu.unwrap_or(0.0),
                dir.join(STUDENT_CHECKPOINT).display()
            );
        }
        Command::Ablate(a) => {
            apply_student(&mut cfg, &a.student, cli.seed);
            cfg.validate()?;
            let dir = out.join("ablation");
            cfg.write_effective(&dir)?;
            let corpus = load_corpus(&paths.data(&a.student.train.data))?;
            let cache = load_teachers(&paths, &a.student.teachers, &corpus)?;
            let mut exp = experiments_for(&cfg, &corpus, &cache, a, out)?;
            let table = ablate_teachers(&mut exp)?;
            emit_report(&dir, &ReportBundle { ablation: Some(table), ..Default::default() })?;
            print!("{}", std::fs::read_to_string(dir.join(crate::evaluation::SUMMARY_FILE)).unwrap_or_default());
        }
        Command::SweepLambda(a) => {
            apply_student(&mut cfg, &a.experiment.student, cli.seed);
            if let Some(g) = &a.grid {
                cfg.experiment.lambda_grid = g.clone();
            }
            cfg.validate()?;
            let dir = out.join("sweep");
            cfg.write_effective(&dir)?;
            let corpus = load_corpus(&paths.data(&a.experiment.student.train.data))?;
            let cache = load_teachers(&paths, &a.experiment.student.teachers, &corpus)?;
            let mut exp = experiments_for(&cfg, &corpus, &cache, &a.experiment, out)?;
            let curve = sweep_lambda(&mut exp, &cfg.experiment.lambda_grid)?;
            emit_report(&dir, &ReportBundle { lambda_curve: Some(curve), ..Default::default() })?;
            print!("{}", std::fs::read_to_string(dir.join(crate::evaluation::SUMMARY_FILE)).unwrap_or_default());
        }
        Command::Evaluate(a) => {
            if let Some(v) = a.warmup {
                cfg.evaluation.warmup = v;
            }
            if let Some(v) = a.timed {
                cfg.evaluation.timed = v;
            }
            cfg.validate()?;
            let dir = out.join("eval");
            cfg.write_effective(&dir)?;
            let corpus = load_corpus(&paths.data(&a.data))?;
            let split = match a.split {
                SplitArg::Train => Split::Train,
                SplitArg::Valid => Split::Valid,
                SplitArg::Test => Split::Test,
            };
            let mut evaluations = Vec::new();
            if matches!(a.model, EvalModel::Student | EvalModel::Both) {
                let path = a.student.clone().unwrap_or_else(|| out.join("student").join(STUDENT_CHECKPOINT));
                let ck = Checkpoint::load(&path)?;
                evaluations.push(evaluate_model(EvalTarget::Student(&ck), &corpus, split, cfg.evaluation)?);
            }
            if matches!(a.model, EvalModel::Pipeline | EvalModel::Both) {
                let tir = Checkpoint::load(&paths.tir(&a.teachers))?;
                let mt = Checkpoint::load(&paths.mt(&a.teachers))?;
                evaluations.push(evaluate_model(EvalTarget::Pipeline { tir: &tir, mt: &mt }, &corpus, split, cfg.evaluation)?);
            }
            emit_report(&dir, &ReportBundle { evaluations, ..Default::default() })?;
            print!("{}", std::fs::read_to_string(dir.join(crate::evaluation::SUMMARY_FILE)).unwrap_or_default());
        }
        Command::Gradcheck(a) => {
            let mut gc = GradCheckConfig::default();
            if let Some(e) = a.epsilon {
                gc.epsilon = e;
            }
            if let Some(p) = a.max_probes {
                gc.max_probes = p;
            }
            if !(gc.epsilon > 0.0 && gc.epsilon.is_finite()) || gc.max_probes == 0 {
                return Err(Error::InvalidArgument("epsilon must be positive and max_probes at least 1".into()));
            }
            let mut results = standard_checks(&gc)?;
            if a.network {
                results.extend(network_checks(&gc)?.into_iter().map(|mut r| {
                    r.name = format!("network/{}", r.name);
                    r
                }));
            }
            let mut failed = 0;
            for r in &results {
                let ok = r.passes(GRADCHECK_TOLERANCE);
                failed += usize::from(!ok);
                println!("{:<30} {:.3e} {}", r.name, r.max_rel_error, if ok { "ok" } else { "FAIL" });
            }
            if failed > 0 {
                return Err(Error::GradientCheck { failed, tolerance: GRADCHECK_TOLERANCE });
            }
        }
    }
    Ok(())
}

fn init_logging(verbose: u8) {
    let default = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("MTKD_LOG", default)).try_init();
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
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_INVALID
            } else {
                EXIT_FAILURE
            }
        }
    }
}
