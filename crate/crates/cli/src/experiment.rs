//! The comparison protocol: per seed, generate → train predictor → disturbed
//! sequences → refiner, plus the E2E baseline, all scored on the test split.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stagewise::dataset::generate_synthetic;
use stagewise::disturb::Provenance;
use stagewise::eval::{compare_reports, Aggregate, MetricsReport};
use stagewise::models::bundle::BUNDLE_WEIGHTS_FILE;
use stagewise::models::MultiStageModel;
use stagewise::trainer::TrainHistory;

use crate::config::{parse_types, types_label, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::ledger::{now_unix, sha256_file, RunLedger};
use crate::pipeline::*;

pub const SUMMARY_FILE: &str = "summary.json";
pub const METHOD_PREDICTOR: &str = "predictor";
pub const METHOD_E2E: &str = "e2e";
pub const METHOD_NON_E2E: &str = "non-e2e";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackResult {
    pub metrics: Aggregate,
    /// Mean per-stage training loss in the first and last epoch.
    pub first_epoch_stage_losses: Vec<f64>,
    pub last_epoch_stage_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub methods: BTreeMap<String, Aggregate>,
    pub ablation: BTreeMap<String, Aggregate>,
    pub stacks: BTreeMap<usize, StackResult>,
    pub diagnostics: DisturbDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub acc: f64,
    pub jacc: f64,
    pub rec: f64,
    pub acc_per_seed: Vec<f64>,
}

impl MethodSummary {
    fn of(per_seed: &[Aggregate]) -> Self {
        let n = per_seed.len() as f64;
        let mean = |f: fn(&Aggregate) -> f64| per_seed.iter().map(f).sum::<f64>() / n;
        MethodSummary {
            acc: mean(|a| a.acc.mean),
            jacc: mean(|a| a.jacc.mean),
            rec: mean(|a| a.rec.mean),
            acc_per_seed: per_seed.iter().map(|a| a.acc.mean).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub refiner_types: String,
    pub stacks: usize,
    pub methods: BTreeMap<String, MethodSummary>,
    pub ablation: BTreeMap<String, MethodSummary>,
    pub stack_sweep: BTreeMap<usize, MethodSummary>,
    pub replicates: Vec<SeedSummary>,
}

pub struct ExperimentOutcome {
    pub out: PathBuf,
    pub summary: Summary,
}

fn stage_losses(h: &TrainHistory) -> (Vec<f64>, Vec<f64>) {
    let first = h.first().map(|e| e.stage_losses.clone()).unwrap_or_default();
    let last = h.last().map(|e| e.stage_losses.clone()).unwrap_or_default();
    (first, last)
}

struct SeedRun<'a> {
    cfg: &'a ExperimentConfig,
    root: &'a Path,
    dir: PathBuf,
    seed: u64,
    ledger: &'a mut RunLedger,
}

impl SeedRun<'_> {
    fn step_name(&self, name: &str) -> String {
        format!("seed-{}/{name}", self.seed)
    }

    fn record(
        &mut self,
        dir: &Path,
        kind: &str,
        name: &str,
        started: f64,
        provenance: serde_json::Value,
    ) -> CliResult<()> {
        let step = self.step_name(name);
        self.ledger.artifact_tree(self.root, dir, kind, &step)?;
        self.ledger.step(&step, started, provenance);
        Ok(())
    }

    fn report(&mut self, name: &str, model: &MultiStageModel, data: &LoadedData) -> CliResult<MetricsReport> {
        let report = evaluate(model, &split_videos(&data.dataset, Split::Test))?;
        let path = self.dir.join("reports").join(format!("{name}.json"));
        write_json(&path, &report)?;
        self.ledger
            .artifact(self.root, &path, "report", &self.step_name("eval"))?;
        Ok(report)
    }

    fn run(&mut self) -> CliResult<SeedSummary> {
        let cfg = self.cfg;
        let seed = self.seed;

        let started = now_unix();
        let data = match (&cfg.dataset.synth, &cfg.dataset.manifest) {
            (Some(synth), _) => {
                let synth = stagewise::dataset::SynthConfig { seed, ..synth.clone() };
                let dir = self.dir.join("data");
                generate_synthetic(&synth, &dir)?;
                self.record(
                    &dir.clone(),
                    "dataset",
                    "gen-data",
                    started,
                    serde_json::json!({ "seed": seed }),
                )?;
                load_data(&dir)?
            }
            (None, Some(path)) => load_data(path)?,
            (None, None) => return Err(CliError::config("no dataset configured")),
        };

        let started = now_unix();
        let pdir = self.dir.join("predictor");
        let predictor = predictor_step(cfg, &data, seed, &pdir)?;
        let psha = sha256_file(&pdir.join(BUNDLE_WEIGHTS_FILE))?;
        self.record(
            &pdir,
            "predictor",
            "train-predictor",
            started,
            serde_json::json!({ "seed": seed, "trained_on": data.dataset.train.iter().map(|v| &v.id).collect::<Vec<_>>() }),
        )?;

        let ablation: Vec<(String, Vec<Provenance>)> = cfg
            .ablation
            .iter()
            .map(|a| parse_types(a).map(|t| (types_label(&t), t)))
            .collect::<CliResult<_>>()?;
        let mut all_types = cfg.disturb.types.clone();
        all_types.extend(ablation.iter().flat_map(|(_, t)| t.iter().copied()));
        all_types.sort();
        all_types.dedup();

        let started = now_unix();
        let ddir = self.dir.join("disturbed");
        let disturbed = disturb_step(cfg, &data, Some((&predictor, psha.as_str())), &all_types, seed, &ddir)?;
        self.record(
            &ddir,
            "disturbed",
            "gen-disturbed",
            started,
            serde_json::json!({ "types": types_label(&all_types), "folds": disturbed.folds }),
        )?;

        let stacks = cfg.stacks();
        let main_label = types_label(&cfg.disturb.types);
        let mut refiners: BTreeMap<(String, usize), (MultiStageModel, TrainHistory)> = BTreeMap::new();
        let mut train_refiner =
            |run: &mut Self, label: &str, types: &[Provenance], n: usize, sub: PathBuf| -> CliResult<()> {
                if refiners.contains_key(&(label.to_string(), n)) {
                    return Ok(());
                }
                let started = now_unix();
                let samples = select(&disturbed.samples, types);
                let res = refiner_step(cfg, &predictor, &psha, &samples, n, seed, &sub)?;
                run.record(
                    &sub,
                    "non-e2e",
                    &format!("train-refiner/{label}/n{n}"),
                    started,
                    serde_json::json!({ "types": label, "stacks": n, "samples": samples.len() }),
                )?;
                refiners.insert((label.to_string(), n), res);
                Ok(())
            };
        train_refiner(self, &main_label, &cfg.disturb.types, stacks, self.dir.join("non-e2e"))?;
        for (label, types) in &ablation {
            train_refiner(self, label, types, stacks, self.dir.join("ablation").join(label))?;
        }
        for &n in &cfg.stack_sweep {
            train_refiner(
                self,
                &main_label,
                &cfg.disturb.types,
                n,
                self.dir.join("stacks").join(format!("n{n}")),
            )?;
        }

        let started = now_unix();
        let edir = self.dir.join("e2e");
        let (e2e, _) = e2e_step(cfg, &data, stacks, seed, &edir)?;
        self.record(
            &edir,
            "e2e",
            "train-e2e",
            started,
            serde_json::json!({ "seed": seed, "stacks": stacks }),
        )?;

        let predictor_only = MultiStageModel::new(predictor.clone(), None)?;
        let mut methods = BTreeMap::new();
        let r_pred = self.report(METHOD_PREDICTOR, &predictor_only, &data)?;
        let r_e2e = self.report(METHOD_E2E, &e2e, &data)?;
        let r_ne = self.report(METHOD_NON_E2E, &refiners[&(main_label.clone(), stacks)].0, &data)?;
        for (name, r) in [
            (METHOD_PREDICTOR, &r_pred),
            (METHOD_E2E, &r_e2e),
            (METHOD_NON_E2E, &r_ne),
        ] {
            methods.insert(name.to_string(), r.aggregate);
        }
        for (name, base) in [("predictor-vs-non-e2e", &r_pred), ("e2e-vs-non-e2e", &r_e2e)] {
            let path = self.dir.join("reports").join(format!("compare-{name}.json"));
            write_json(&path, &compare_reports(base, &r_ne)?)?;
            self.ledger
                .artifact(self.root, &path, "comparison", &self.step_name("compare"))?;
        }

        let mut ablation_out = BTreeMap::new();
        for (label, _) in &ablation {
            let r = self.report(
                &format!("ablation-{label}"),
                &refiners[&(label.clone(), stacks)].0,
                &data,
            )?;
            ablation_out.insert(label.clone(), r.aggregate);
        }
        let mut stack_out = BTreeMap::new();
        for &n in &cfg.stack_sweep {
            let (model, history) = &refiners[&(main_label.clone(), n)];
            let r = self.report(&format!("stacks-n{n}"), model, &data)?;
            let (first, last) = stage_losses(history);
            stack_out.insert(
                n,
                StackResult {
                    metrics: r.aggregate,
                    first_epoch_stage_losses: first,
                    last_epoch_stage_losses: last,
                },
            );
        }

        let summary = SeedSummary {
            seed,
            methods,
            ablation: ablation_out,
            stacks: stack_out,
            diagnostics: disturbed.diagnostics,
        };
        let path = self.dir.join(SUMMARY_FILE);
        write_json(&path, &summary)?;
        self.ledger
            .artifact(self.root, &path, "summary", &self.step_name("summary"))?;
        Ok(summary)
    }
}

fn collect<K: Ord + Clone>(
    replicates: &[SeedSummary],
    pick: impl Fn(&SeedSummary) -> BTreeMap<K, Aggregate>,
) -> BTreeMap<K, MethodSummary> {
    let mut per: BTreeMap<K, Vec<Aggregate>> = BTreeMap::new();
    for r in replicates {
        for (k, a) in pick(r) {
            per.entry(k).or_default().push(a);
        }
    }
    per.into_iter().map(|(k, v)| (k, MethodSummary::of(&v))).collect()
}

pub fn run_experiment(cfg: &ExperimentConfig) -> CliResult<ExperimentOutcome> {
    cfg.validate()?;
    let out = cfg
        .out
        .clone()
        .ok_or_else(|| CliError::config("experiment needs an output directory"))?;
    std::fs::create_dir_all(&out).map_err(|e| CliError::config(format!("cannot create {}: {e}", out.display())))?;
    let hash = cfg.hash();
    let mut ledger = RunLedger::new("experiment", hash.clone());
    let config_path = out.join("config.json");
    write_json(&config_path, cfg)?;
    ledger.artifact(&out, &config_path, "config", "experiment")?;

    let mut replicates = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let dir = out.join(format!("seed-{seed}"));
        let mut run = SeedRun {
            cfg,
            root: &out,
            dir,
            seed,
            ledger: &mut ledger,
        };
        replicates.push(run.run()?);
        ledger.write(&out)?;
    }

    let summary = Summary {
        config_hash: hash,
        seeds: cfg.seeds.clone(),
        refiner_types: types_label(&cfg.disturb.types),
        stacks: cfg.stacks(),
        methods: collect(&replicates, |r| r.methods.clone()),
        ablation: collect(&replicates, |r| r.ablation.clone()),
        stack_sweep: collect(&replicates, |r| r.stacks.iter().map(|(k, v)| (*k, v.metrics)).collect()),
        replicates,
    };
    let path = out.join(SUMMARY_FILE);
    write_json(&path, &summary)?;
    ledger.artifact(&out, &path, "summary", "experiment")?;
    ledger.write(&out)?;
    Ok(ExperimentOutcome { out, summary })
}
