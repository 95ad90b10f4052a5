//! Argument parsing and the single-step subcommands.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use stagewise::dataset::{generate_synthetic, write_labels, write_probs, SynthConfig};
use stagewise::eval::compare_reports;
use stagewise::models::streaming_infer;
use stagewise::models::RefinerVariant;

use crate::config::{parse_types, types_label, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::experiment::run_experiment;
use crate::ledger::{now_unix, RunLedger};
use crate::pipeline::*;

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "STAGEWISE_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "stagewise",
    version,
    about = "Multi-stage online phase recognition experiments"
)]
pub struct Cli {
    /// JSON experiment config; flags override its fields
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic benchmark
    GenData(GenDataArgs),
    /// Train the single-stage predictor
    TrainPredictor(TrainPredictorArgs),
    /// Write predictor-stage probabilities for a split
    Predict(ModelDataArgs),
    /// Generate disturbed prediction sequences for refiner training
    GenDisturbed(GenDisturbedArgs),
    /// Train a refiner on disturbed sequences and bundle it with the predictor
    TrainRefiner(TrainRefinerArgs),
    /// Train predictor and refiner jointly (baseline)
    TrainE2e(TrainE2eArgs),
    /// Run a model over a split and write final-stage predictions
    Infer(InferArgs),
    /// Score a model on a split
    Eval(EvalArgs),
    /// Compare two metrics reports
    Compare(CompareArgs),
    /// Run the full comparison protocol for every configured seed
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct OutArg {
    /// Output directory [default: $STAGEWISE_OUT/<command>]
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub out: OutArg,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainPredictorArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub out: OutArg,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ModelDataArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub out: OutArg,
    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,
}

#[derive(Debug, Args)]
pub struct GenDisturbedArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Trained predictor bundle (required for mhf and rm)
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArg,
    /// Comma-separated subset of cv, mhf, rm
    #[arg(long)]
    pub types: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mask_ratio: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainRefinerArgs {
    /// Directory written by gen-disturbed
    #[arg(long)]
    pub disturbed: PathBuf,
    /// Predictor bundle the refiner will sit on
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub out: OutArg,
    #[arg(long)]
    pub types: Option<String>,
    #[arg(long)]
    pub stacks: Option<usize>,
    #[arg(long)]
    pub variant: Option<RefinerVariant>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainE2eArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub out: OutArg,
    #[arg(long)]
    pub stacks: Option<usize>,
    #[arg(long)]
    pub variant: Option<RefinerVariant>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub common: ModelDataArgs,
    /// Frame-by-frame streaming inference (causal models only)
    #[arg(long)]
    pub online: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: ModelDataArgs,
    /// Also write a per-video CSV
    #[arg(long)]
    pub csv: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub baseline: PathBuf,
    #[arg(long)]
    pub candidate: PathBuf,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[command(flatten)]
    pub out: OutArg,
    /// Run a single replicate with this seed
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Comma-separated replicate seeds
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub types: Option<String>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub stacks: Option<usize>,
    /// Use an existing dataset instead of generating one
    #[arg(long)]
    pub data: Option<PathBuf>,
}

pub fn resolve_out(out: &OutArg, command: &str) -> PathBuf {
    match &out.out {
        Some(p) => p.clone(),
        None => {
            let root = std::env::var_os(OUT_ROOT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
            root.join(command)
        }
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::config(format!("cannot create {}: {e}", dir.display())))
}

fn override_epochs(cfg: &mut stagewise::trainer::TrainConfig, epochs: Option<usize>) {
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
}

pub fn execute(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    match cli.command {
        Command::GenData(a) => gen_data(cfg, a),
        Command::TrainPredictor(a) => {
            override_epochs(&mut cfg.predictor.train, a.epochs);
            train_predictor_cmd(cfg, a)
        }
        Command::Predict(a) => predict(cfg, a),
        Command::GenDisturbed(a) => gen_disturbed(cfg, a),
        Command::TrainRefiner(a) => {
            override_epochs(&mut cfg.refiner.train, a.epochs);
            train_refiner_cmd(cfg, a)
        }
        Command::TrainE2e(a) => {
            let mut e2e = cfg.e2e_schedule().clone();
            override_epochs(&mut e2e, a.epochs);
            cfg.e2e_train = Some(e2e);
            train_e2e_cmd(cfg, a)
        }
        Command::Infer(a) => infer(cfg, a),
        Command::Eval(a) => eval(cfg, a),
        Command::Compare(a) => compare(cfg, a),
        Command::Experiment(a) => {
            if let Some(s) = a.seed {
                cfg.seeds = vec![s];
            }
            if let Some(s) = a.seeds {
                cfg.seeds = s;
            }
            if let Some(t) = &a.types {
                cfg.disturb.types = parse_types(t)?;
            }
            if let Some(k) = a.k {
                cfg.disturb.k = k;
            }
            if let Some(n) = a.stacks {
                cfg.refiner.stacks = Some(n);
            }
            if let Some(d) = a.data {
                cfg.dataset.synth = None;
                cfg.dataset.manifest = Some(d);
            }
            if a.out.out.is_some() || cfg.out.is_none() {
                cfg.out = Some(resolve_out(&a.out, "experiment"));
            }
            cfg.validate()?;
            run_experiment(&cfg).map(|_| ())
        }
    }
}

fn synth_config(cfg: &ExperimentConfig) -> CliResult<SynthConfig> {
    cfg.dataset
        .synth
        .clone()
        .ok_or_else(|| CliError::config("gen-data needs a `dataset.synth` section"))
}

fn gen_data(cfg: ExperimentConfig, a: GenDataArgs) -> CliResult<()> {
    let mut synth = synth_config(&cfg)?;
    if let Some(s) = a.seed {
        synth.seed = s;
    }
    synth.validate().map_err(|e| CliError::config(e.to_string()))?;
    let out = resolve_out(&a.out, "gen-data");
    create_dir(&out)?;
    let started = now_unix();
    let (ds, _) = generate_synthetic(&synth, &out)?;
    let mut ledger = RunLedger::new("gen-data", cfg.hash());
    ledger.artifact_tree(&out, &out, "dataset", "gen-data")?;
    ledger.step(
        "gen-data",
        started,
        serde_json::json!({ "seed": synth.seed, "train": ds.train.len(), "test": ds.test.len() }),
    );
    ledger.write(&out)?;
    Ok(())
}

fn train_predictor_cmd(cfg: ExperimentConfig, a: TrainPredictorArgs) -> CliResult<()> {
    let data = load_data(&a.data)?;
    let seed = a.seed.unwrap_or(cfg.predictor.train.seed);
    let out = resolve_out(&a.out, "train-predictor");
    create_dir(&out)?;
    let started = now_unix();
    predictor_step(&cfg, &data, seed, &out)?;
    let mut ledger = RunLedger::new("train-predictor", cfg.hash());
    ledger.input(&data.manifest)?;
    ledger.artifact_tree(&out, &out, "predictor", "train-predictor")?;
    ledger.step(
        "train-predictor",
        started,
        serde_json::json!({ "seed": seed, "dataset_sha256": data.sha256 }),
    );
    ledger.write(&out)?;
    Ok(())
}

fn predict(cfg: ExperimentConfig, a: ModelDataArgs) -> CliResult<()> {
    let data = load_data(&a.data)?;
    let (bundle, _) = load_bundle(&a.model)?;
    let model = bundle_model(&bundle, &a.model)?;
    check_compatible(&model, &data.dataset)?;
    let out = resolve_out(&a.out, "predict");
    create_dir(&out)?;
    let started = now_unix();
    for v in split_videos(&data.dataset, a.split) {
        write_probs(
            &out.join(format!("{}.mspp", v.id)),
            &model.predictor.forward(&v.features)?,
        )?;
    }
    let mut ledger = RunLedger::new("predict", cfg.hash());
    ledger.input(&data.manifest)?;
    ledger.artifact_tree(&out, &out, "predictor-probs", "predict")?;
    ledger.step(
        "predict",
        started,
        serde_json::json!({ "split": format!("{:?}", a.split).to_lowercase() }),
    );
    ledger.write(&out)?;
    Ok(())
}

fn gen_disturbed(mut cfg: ExperimentConfig, a: GenDisturbedArgs) -> CliResult<()> {
    if let Some(t) = &a.types {
        cfg.disturb.types = parse_types(t)?;
    }
    if let Some(k) = a.k {
        cfg.disturb.k = k;
    }
    if a.mask_ratio.is_some() {
        cfg.disturb.mask_ratio = a.mask_ratio;
    }
    cfg.validate()?;
    let data = load_data(&a.data)?;
    let loaded = a
        .model
        .as_ref()
        .map(|m| load_bundle(m).map(|(b, sha)| (b, sha, m.clone())))
        .transpose()?;
    let predictor = loaded
        .as_ref()
        .map(|(b, sha, dir)| bundle_predictor(b, dir).map(|p| (p, sha.clone())))
        .transpose()?;
    if let Some((p, _)) = &predictor {
        check_compatible(
            &stagewise::models::MultiStageModel::new(p.clone(), None)?,
            &data.dataset,
        )?;
    }
    let seed = a.seed.unwrap_or(cfg.predictor.train.seed);
    let out = resolve_out(&a.out, "gen-disturbed");
    create_dir(&out)?;
    let started = now_unix();
    let res = disturb_step(
        &cfg,
        &data,
        predictor.as_ref().map(|(p, sha)| (p, sha.as_str())),
        &cfg.disturb.types,
        seed,
        &out,
    )?;
    for w in &res.diagnostics.warnings {
        eprintln!("warning: {w}");
    }
    let mut ledger = RunLedger::new("gen-disturbed", cfg.hash());
    ledger.input(&data.manifest)?;
    if let Some(m) = &a.model {
        ledger.input(&m.join(stagewise::models::bundle::BUNDLE_WEIGHTS_FILE))?;
    }
    ledger.artifact_tree(&out, &out, "disturbed", "gen-disturbed")?;
    ledger.step(
        "gen-disturbed",
        started,
        serde_json::json!({ "types": types_label(&cfg.disturb.types), "seed": seed, "folds": res.folds }),
    );
    ledger.write(&out)?;
    Ok(())
}

fn train_refiner_cmd(mut cfg: ExperimentConfig, a: TrainRefinerArgs) -> CliResult<()> {
    if let Some(t) = &a.types {
        cfg.disturb.types = parse_types(t)?;
    }
    if let Some(n) = a.stacks {
        cfg.refiner.stacks = Some(n);
    }
    if let Some(v) = a.variant {
        cfg.refiner.variant = v;
    }
    cfg.validate()?;
    let (bundle, sha) = load_bundle(&a.model)?;
    let predictor = bundle_predictor(&bundle, &a.model)?;
    let samples = load_disturbed(&a.disturbed, &cfg.disturb.types, &sha)?;
    let seed = a.seed.unwrap_or(cfg.refiner.train.seed);
    let out = resolve_out(&a.out, "train-refiner");
    create_dir(&out)?;
    let started = now_unix();
    refiner_step(&cfg, &predictor, &sha, &samples, cfg.stacks(), seed, &out)?;
    let mut ledger = RunLedger::new("train-refiner", cfg.hash());
    ledger.input(&a.disturbed.join(stagewise::disturb::DISTURBED_INDEX_FILE))?;
    ledger.input(&a.model.join(stagewise::models::bundle::BUNDLE_WEIGHTS_FILE))?;
    ledger.artifact_tree(&out, &out, "non-e2e", "train-refiner")?;
    ledger.step(
        "train-refiner",
        started,
        serde_json::json!({ "seed": seed, "samples": samples.len() }),
    );
    ledger.write(&out)?;
    Ok(())
}

fn train_e2e_cmd(mut cfg: ExperimentConfig, a: TrainE2eArgs) -> CliResult<()> {
    if let Some(n) = a.stacks {
        cfg.refiner.stacks = Some(n);
    }
    if let Some(v) = a.variant {
        cfg.refiner.variant = v;
    }
    cfg.validate()?;
    let data = load_data(&a.data)?;
    let seed = a.seed.unwrap_or(cfg.e2e_schedule().seed);
    let out = resolve_out(&a.out, "train-e2e");
    create_dir(&out)?;
    let started = now_unix();
    e2e_step(&cfg, &data, cfg.stacks(), seed, &out)?;
    let mut ledger = RunLedger::new("train-e2e", cfg.hash());
    ledger.input(&data.manifest)?;
    ledger.artifact_tree(&out, &out, "e2e", "train-e2e")?;
    ledger.step("train-e2e", started, serde_json::json!({ "seed": seed }));
    ledger.write(&out)?;
    Ok(())
}

fn infer(cfg: ExperimentConfig, a: InferArgs) -> CliResult<()> {
    let c = &a.common;
    let (bundle, _) = load_bundle(&c.model)?;
    let model = bundle_model(&bundle, &c.model)?;
    if a.online {
        // Fail before touching the data.
        model.stream()?;
    }
    let data = load_data(&c.data)?;
    check_compatible(&model, &data.dataset)?;
    let out = resolve_out(&c.out, "infer");
    create_dir(&out)?;
    let started = now_unix();
    for v in split_videos(&data.dataset, c.split) {
        let (labels, probs) = if a.online {
            let frames = (0..v.features.frames()).map(|t| v.features.frame(t));
            let outputs = streaming_infer(frames, &model)?;
            let rows: Vec<Vec<f64>> = outputs.iter().map(|o| o.final_probs().to_vec()).collect();
            let labels = outputs.iter().map(|o| o.label).collect();
            (
                labels,
                stagewise::ProbSeq::new(stagewise::nncore::Tensor::from_rows(&rows)?)?,
            )
        } else {
            let inf = model.infer(&v.features)?;
            (inf.labels.clone(), inf.final_probs().clone())
        };
        write_labels(&out.join(format!("{}.pred", v.id)), &labels)?;
        write_probs(&out.join(format!("{}.mspp", v.id)), &probs)?;
    }
    let mut ledger = RunLedger::new("infer", cfg.hash());
    ledger.input(&data.manifest)?;
    ledger.artifact_tree(&out, &out, "predictions", "infer")?;
    ledger.step("infer", started, serde_json::json!({ "online": a.online }));
    ledger.write(&out)?;
    Ok(())
}

fn eval(cfg: ExperimentConfig, a: EvalArgs) -> CliResult<()> {
    let c = &a.common;
    let (bundle, _) = load_bundle(&c.model)?;
    let model = bundle_model(&bundle, &c.model)?;
    let data = load_data(&c.data)?;
    check_compatible(&model, &data.dataset)?;
    let out = resolve_out(&c.out, "eval");
    create_dir(&out)?;
    let started = now_unix();
    let report = evaluate(&model, &split_videos(&data.dataset, c.split))?;
    write_json(&out.join("report.json"), &report)?;
    if a.csv {
        stagewise::io_util::write_atomic(&out.join("report.csv"), report.to_csv().as_bytes())?;
    }
    let mut ledger = RunLedger::new("eval", cfg.hash());
    ledger.input(&data.manifest)?;
    ledger.artifact_tree(&out, &out, "report", "eval")?;
    ledger.step("eval", started, serde_json::json!({ "videos": report.videos.len() }));
    ledger.write(&out)?;
    Ok(())
}

fn read_report(path: &Path) -> CliResult<stagewise::eval::MetricsReport> {
    let raw =
        std::fs::read(path).map_err(|e| CliError::dependency(format!("cannot read report {}: {e}", path.display())))?;
    serde_json::from_slice(&raw).map_err(|e| CliError::dependency(format!("bad report {}: {e}", path.display())))
}

fn compare(cfg: ExperimentConfig, a: CompareArgs) -> CliResult<()> {
    let base = read_report(&a.baseline)?;
    let cand = read_report(&a.candidate)?;
    let cmp = compare_reports(&base, &cand)?;
    let out = resolve_out(&a.out, "compare");
    create_dir(&out)?;
    let started = now_unix();
    write_json(&out.join("comparison.json"), &cmp)?;
    let mut ledger = RunLedger::new("compare", cfg.hash());
    ledger.input(&a.baseline)?;
    ledger.input(&a.candidate)?;
    ledger.artifact_tree(&out, &out, "comparison", "compare")?;
    ledger.step("compare", started, serde_json::Value::Null);
    ledger.write(&out)?;
    Ok(())
}
