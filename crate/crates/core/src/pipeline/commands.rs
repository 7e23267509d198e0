//! The pipeline commands. Each is deterministic given its inputs and seed.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::run::{write_csv, write_json, write_records, RunDir};
use super::train::{self, Budget, SnnSettings};
use crate::checkpoint;
use crate::cost::network_cost;
use crate::data::{generate_synthetic, load_dataset, Dataset, LoadOptions, Split};
use crate::error::{Error, Result};
use crate::metrics::{ConfusionMatrix, Scores};
use crate::network::Network;
use crate::search::{
    baseline_random_sampling, baseline_random_search, predict_ann, run_search, Candidate, Domain, LogRow,
    SupernetFitness,
};
use crate::space::{Choice, Genome, Supernet};
use crate::ttfs::{count_synops, map_ann_to_snn, map_snn_to_ann, quantize as quantize_snn, synapse_count, TtfsNetwork};

pub const KIND_SUPERNET: &str = "supernet";
pub const KIND_ANN: &str = "ann";
pub const KIND_SNN: &str = "snn";

/// Independent random streams per stage, all derived from the run seed.
#[derive(Clone, Copy, Debug)]
#[repr(u64)]
pub enum Stage {
    Supernet = 1,
    Search = 2,
    Retrain = 3,
    Finetune = 4,
    RandomSearch = 5,
    RandomSampling = 6,
    Fixed = 7,
    Direct = 8,
}

pub fn stage_rng(seed: u64, stage: Stage, sub: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ sub.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(stage as u64);
    rng
}

/// Loads (or generates) the dataset a config describes and carves the calibration split.
pub fn load_data(cfg: &PipelineConfig) -> Result<Dataset> {
    let m = &cfg.macro_config;
    let mut data = match &cfg.data.manifest {
        Some(path) => {
            let opts = LoadOptions {
                calib_from_train: cfg.data.calib_from_train,
            };
            load_dataset(path, m.input_shape(), m.num_classes, opts)?.dataset
        }
        None => generate_synthetic(&cfg.synthetic_spec())?,
    };
    data.carve_calibration(cfg.data.calib_fraction);
    Ok(data)
}

pub struct Context {
    pub cfg: PipelineConfig,
    pub run: RunDir,
    pub data: Dataset,
}

impl Context {
    pub fn open(cfg: PipelineConfig, out: &Path) -> Result<Self> {
        cfg.validate()?;
        let run = RunDir::open(out)?;
        write_json(&run.file("config.json"), &cfg)?;
        let data = load_data(&cfg)?;
        Ok(Context { cfg, run, data })
    }

    pub fn split(&self, split: Split) -> Dataset {
        self.data.split(split)
    }

    fn budget(&self, epochs: usize, lr: f64) -> Budget {
        Budget {
            epochs,
            lr,
            batch_size: self.cfg.batch_size,
        }
    }

    pub fn retrain_budget(&self) -> Budget {
        self.budget(self.cfg.epochs_retrain, self.cfg.lr_retrain)
    }

    pub fn finetune_budget(&self) -> Budget {
        self.budget(self.cfg.epochs_finetune, self.cfg.lr_finetune)
    }

    pub fn snn_settings(&self) -> SnnSettings {
        SnnSettings {
            tau_c: self.cfg.tau_c,
            margin: self.cfg.margin,
        }
    }

    fn rng(&self, stage: Stage, sub: u64) -> ChaCha8Rng {
        stage_rng(self.cfg.seed, stage, sub)
    }

    /// A bare name refers to `checkpoints/<name>.json`; anything else is a path.
    pub fn resolve(&self, checkpoint: &str) -> PathBuf {
        if checkpoint.contains('/') || checkpoint.ends_with(".json") {
            PathBuf::from(checkpoint)
        } else {
            self.run.checkpoint(checkpoint)
        }
    }

    fn calib_inputs(&self) -> Result<crate::tensor::Tensor> {
        let calib = self.split(Split::Calib);
        if calib.is_empty() {
            return Err(Error::Empty("calibration split".into()));
        }
        Ok(calib.all()?.0)
    }
}

fn loss_header() -> [&'static str; 4] {
    ["step", "epoch", "genome", "loss"]
}

// ---- train-supernet ----------------------------------------------------------

pub fn train_supernet(ctx: &Context) -> Result<Supernet> {
    let budget = ctx.budget(ctx.cfg.epochs_supernet, ctx.cfg.lr_supernet);
    let mut rng = ctx.rng(Stage::Supernet, 0);
    let (net, log) = train::train_supernet(&ctx.cfg.macro_config, &ctx.split(Split::Train), &budget, &mut rng)?;
    write_csv(&ctx.run.log("supernet_loss"), &log, &loss_header())?;
    checkpoint::save(&net, KIND_SUPERNET, &ctx.run.checkpoint("supernet"))?;
    log::info!("supernet trained for {} steps", log.len());
    Ok(net)
}

// ---- search --------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub domain: Domain,
    pub best: Candidate,
    pub history: Vec<f64>,
    pub best_genomes: Vec<Genome>,
    pub evaluations: usize,
    pub early_firings: usize,
}

#[derive(Serialize)]
struct SearchLogRow<'a> {
    round: usize,
    genome: String,
    war: f64,
    uar: f64,
    fitness: f64,
    domain: &'a str,
}

pub fn search_with(ctx: &Context, supernet: &Supernet, domain: Domain) -> Result<SearchResult> {
    let (eval, calib) = (ctx.split(Split::Eval), ctx.split(Split::Calib));
    let mut fitness = SupernetFitness::new(supernet, &eval, &calib, domain, ctx.cfg.tau_c, ctx.cfg.margin)?;
    let seed = ctx.rng(Stage::Search, 0).random_u64_seed();
    let state = run_search(&mut fitness, ctx.cfg.macro_config.num_blocks(), &ctx.cfg.search, seed)?;
    let d = domain.to_string();
    let rows: Vec<SearchLogRow> = state
        .log
        .iter()
        .map(|r: &LogRow| SearchLogRow {
            round: r.round,
            genome: r.genome.to_string(),
            war: r.war,
            uar: r.uar,
            fitness: r.fitness,
            domain: &d,
        })
        .collect();
    write_csv(
        &ctx.run.log(&format!("search_{d}")),
        &rows,
        &["round", "genome", "war", "uar", "fitness", "domain"],
    )?;
    let result = SearchResult {
        domain,
        best: state.best().clone(),
        history: state.history.clone(),
        best_genomes: state.best_genomes.clone(),
        evaluations: state.evaluations(),
        early_firings: fitness.early_firings,
    };
    write_json(&ctx.run.file(&format!("search_{d}.json")), &result)?;
    if fitness.early_firings > 0 {
        log::warn!("{} early firings during SNN-domain search", fitness.early_firings);
    }
    Ok(result)
}

trait SeedExt {
    fn random_u64_seed(&mut self) -> u64;
}

impl SeedExt for ChaCha8Rng {
    fn random_u64_seed(&mut self) -> u64 {
        rand::Rng::random(self)
    }
}

pub fn load_supernet(ctx: &Context) -> Result<Supernet> {
    let net: Supernet = checkpoint::load(KIND_SUPERNET, &ctx.run.checkpoint("supernet"))?;
    if net.config != ctx.cfg.macro_config {
        return Err(Error::Config("supernet checkpoint was trained with a different macro config".into()));
    }
    Ok(net)
}

pub fn search(ctx: &Context, domain: Domain) -> Result<SearchResult> {
    let supernet = load_supernet(ctx)?;
    search_with(ctx, &supernet, domain)
}

/// Best genome of a finished search (the ANN-domain one if both exist).
pub fn searched_genome(ctx: &Context) -> Result<Genome> {
    for d in ["ann", "snn"] {
        let p = ctx.run.file(&format!("search_{d}.json"));
        if p.exists() {
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let r: SearchResult = serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))?;
            return Ok(r.best.genome);
        }
    }
    Err(Error::MissingArtifact(ctx.run.file("search_ann.json")))
}

// ---- retrain / transfer / finetune / quantize ---------------------------------

/// Setting (1)/(2) starting point: the genome retrained from scratch with BN.
pub fn retrain(ctx: &Context, genome: &Genome) -> Result<Network> {
    ctx.cfg.macro_config.check_genome(genome)?;
    let mut rng = ctx.rng(Stage::Retrain, 0);
    let (net, log) = train::train_from_scratch(
        &ctx.cfg.macro_config,
        genome,
        true,
        &ctx.split(Split::Train),
        &ctx.retrain_budget(),
        &mut rng,
    )?;
    write_csv(&ctx.run.log("retrain_loss"), &log, &loss_header())?;
    checkpoint::save(&net, KIND_ANN, &ctx.run.checkpoint("ann"))?;
    Ok(net)
}

/// Setting (3): BN-free training from scratch, mapped straight to an SNN.
pub fn train_direct(ctx: &Context, genome: &Genome) -> Result<TtfsNetwork> {
    ctx.cfg.macro_config.check_genome(genome)?;
    let mut rng = ctx.rng(Stage::Direct, 0);
    let (net, log) = train::train_from_scratch(
        &ctx.cfg.macro_config,
        genome,
        false,
        &ctx.split(Split::Train),
        &ctx.retrain_budget(),
        &mut rng,
    )?;
    write_csv(&ctx.run.log("direct_loss"), &log, &loss_header())?;
    let snn = map_ann_to_snn(&net, &ctx.calib_inputs()?, ctx.cfg.tau_c, ctx.cfg.margin)?;
    checkpoint::save(&snn, KIND_SNN, &ctx.run.checkpoint("snn_direct"))?;
    Ok(snn)
}

pub fn transfer_network(ctx: &Context, net: &Network) -> Result<TtfsNetwork> {
    let fused = if net.has_bn() {
        log::info!("fusing batch normalization before transfer");
        net.fuse_bn()
    } else {
        net.clone()
    };
    map_ann_to_snn(&fused, &ctx.calib_inputs()?, ctx.cfg.tau_c, ctx.cfg.margin)
}

pub fn transfer(ctx: &Context, ann: &Path) -> Result<TtfsNetwork> {
    let net: Network = checkpoint::load(KIND_ANN, ann)?;
    let snn = transfer_network(ctx, &net)?;
    checkpoint::save(&snn, KIND_SNN, &ctx.run.checkpoint("snn"))?;
    Ok(snn)
}

fn load_snn(path: &Path, command: &str) -> Result<TtfsNetwork> {
    let manifest = checkpoint::read_manifest(path)?;
    if manifest.kind != KIND_SNN {
        return Err(Error::Config(format!(
            "{command} needs a transferred SNN checkpoint, {} holds a {} (run transfer first)",
            path.display(),
            manifest.kind
        )));
    }
    checkpoint::load(KIND_SNN, path)
}

fn stem_name(path: &Path) -> String {
    path.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned())
}

pub fn finetune_snn(ctx: &Context, snn_path: &Path) -> Result<(TtfsNetwork, String)> {
    let snn = load_snn(snn_path, "finetune-snn")?;
    let name = format!("{}_finetuned", stem_name(snn_path));
    let mut rng = ctx.rng(Stage::Finetune, u64::from(snn.quant.is_some()));
    let (out, log) = train::finetune(
        &snn,
        &ctx.split(Split::Train),
        &ctx.split(Split::Calib),
        &ctx.finetune_budget(),
        ctx.snn_settings(),
        &mut rng,
    )?;
    write_csv(&ctx.run.log(&format!("{name}_loss")), &log, &loss_header())?;
    checkpoint::save(&out, KIND_SNN, &ctx.run.checkpoint(&name))?;
    Ok((out, name))
}

pub fn quantize(ctx: &Context, snn_path: &Path) -> Result<TtfsNetwork> {
    let snn = load_snn(snn_path, "quantize")?;
    if snn.quant.is_some() {
        return Err(Error::Config(format!("{} is already quantized", snn_path.display())));
    }
    let q = quantize_snn(&snn, ctx.cfg.quant.weight_bits, ctx.cfg.quant.time_steps)?;
    checkpoint::save(&q, KIND_SNN, &ctx.run.checkpoint(&format!("{}_quant", stem_name(snn_path))))?;
    Ok(q)
}

// ---- eval ------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub kind: String,
    pub split: Split,
    pub samples: usize,
    pub war: f64,
    pub uar: f64,
    pub fitness: f64,
    pub params: u64,
    pub flops: u64,
    /// SNN only: mean SynOps per sample, the maximum over samples, and the synapse count.
    pub synops_mean: Option<f64>,
    pub synops_max: Option<u64>,
    pub synapses: Option<u64>,
    pub early_firings: Option<usize>,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    pub fn scores(&self) -> Scores {
        Scores {
            war: self.war,
            uar: self.uar,
            fitness: self.fitness,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnnStats {
    pub synops: Vec<u64>,
    pub early_firings: usize,
}

pub fn evaluate_ann(net: &Network, data: &Dataset) -> Result<ConfusionMatrix> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation split".into()));
    }
    let (x, y) = data.all()?;
    ConfusionMatrix::from_predictions(&y, &predict_ann(net, &x)?, data.num_classes)
}

pub fn evaluate_snn(snn: &TtfsNetwork, data: &Dataset) -> Result<(ConfusionMatrix, SnnStats)> {
    if data.is_empty() {
        return Err(Error::Empty("evaluation split".into()));
    }
    let mut cm = ConfusionMatrix::new(data.num_classes);
    let mut stats = SnnStats {
        synops: Vec::with_capacity(data.len()),
        early_firings: 0,
    };
    for s in &data.samples {
        let out = snn.forward(&s.frame)?;
        if !out.logits.is_finite() {
            return Err(Error::Numerical("non-finite SNN outputs".into()));
        }
        cm.add(s.label, crate::metrics::argmax(out.logits.data()))?;
        stats.synops.push(count_synops(snn, &out));
        stats.early_firings += out.early_firings();
    }
    Ok((cm, stats))
}

fn report_from(name: &str, kind: &str, split: Split, cm: ConfusionMatrix, net: &Network, snn: Option<(&TtfsNetwork, SnnStats)>) -> Result<EvalReport> {
    let scores = cm.scores()?;
    let cost = network_cost(net)?;
    let (synops_mean, synops_max, synapses, early) = match snn {
        Some((s, st)) => (
            Some(st.synops.iter().sum::<u64>() as f64 / st.synops.len() as f64),
            st.synops.iter().copied().max(),
            Some(synapse_count(s)),
            Some(st.early_firings),
        ),
        None => (None, None, None, None),
    };
    Ok(EvalReport {
        name: name.to_string(),
        kind: kind.to_string(),
        split,
        samples: cm.total() as usize,
        war: scores.war,
        uar: scores.uar,
        fitness: scores.fitness,
        params: cost.params,
        flops: cost.flops(),
        synops_mean,
        synops_max,
        synapses,
        early_firings: early,
        confusion: cm,
    })
}

pub fn eval_ann_report(name: &str, net: &Network, data: &Dataset, split: Split) -> Result<EvalReport> {
    let cm = evaluate_ann(net, data)?;
    report_from(name, KIND_ANN, split, cm, &net.fuse_bn(), None)
}

pub fn eval_snn_report(name: &str, snn: &TtfsNetwork, data: &Dataset, split: Split) -> Result<EvalReport> {
    let (cm, stats) = evaluate_snn(snn, data)?;
    let ann = map_snn_to_ann(snn)?;
    report_from(name, KIND_SNN, split, cm, &ann, Some((snn, stats)))
}

fn write_eval(ctx: &Context, report: &EvalReport) -> Result<()> {
    let tag = format!("{}_{}", report.name, report.split);
    let k = report.confusion.classes;
    let mut header = vec!["true".to_string()];
    header.extend((0..k).map(|c| format!("pred_{c}")));
    let rows: Vec<Vec<String>> = report
        .confusion
        .counts
        .iter()
        .enumerate()
        .map(|(i, row)| std::iter::once(i.to_string()).chain(row.iter().map(u64::to_string)).collect())
        .collect();
    write_records(&ctx.run.log(&format!("confusion_{tag}")), &header, &rows)?;
    write_json(&ctx.run.eval(&tag), report)
}

/// Evaluates any ANN or SNN checkpoint on a split and records the report.
pub fn eval(ctx: &Context, path: &Path, split: Split) -> Result<EvalReport> {
    let manifest = checkpoint::read_manifest(path)?;
    let name = stem_name(path);
    let data = ctx.split(split);
    let report = match manifest.kind.as_str() {
        KIND_ANN => eval_ann_report(&name, &checkpoint::load(KIND_ANN, path)?, &data, split)?,
        KIND_SNN => eval_snn_report(&name, &checkpoint::load(KIND_SNN, path)?, &data, split)?,
        other => return Err(Error::Config(format!("eval needs an ann or snn checkpoint, got {other}"))),
    };
    write_eval(ctx, &report)?;
    Ok(report)
}

// ---- baselines ---------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    RandomSearch,
    RandomSampling,
    Fixed3,
    Fixed5,
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random-search" => Ok(BaselineKind::RandomSearch),
            "random-sampling" => Ok(BaselineKind::RandomSampling),
            "fixed3" => Ok(BaselineKind::Fixed3),
            "fixed5" => Ok(BaselineKind::Fixed5),
            other => Err(Error::Config(format!(
                "unknown baseline {other:?} (random-search, random-sampling, fixed3, fixed5)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub kind: BaselineKind,
    pub runs: Vec<Candidate>,
    pub mean_war: f64,
    pub mean_uar: f64,
    pub best: Candidate,
}

/// Retrains a genome from scratch and scores it on the evaluation split.
pub fn train_and_score(ctx: &Context, genome: &Genome, stage: Stage, sub: u64) -> Result<Scores> {
    let mut rng = ctx.rng(stage, sub);
    let (net, _) = train::train_from_scratch(
        &ctx.cfg.macro_config,
        genome,
        true,
        &ctx.split(Split::Train),
        &ctx.retrain_budget(),
        &mut rng,
    )?;
    evaluate_ann(&net, &ctx.split(Split::Eval))?.scores()
}

pub fn baseline(ctx: &Context, kind: BaselineKind) -> Result<BaselineResult> {
    let blocks = ctx.cfg.macro_config.num_blocks();
    let runs = match kind {
        BaselineKind::RandomSearch => {
            let supernet = load_supernet(ctx)?;
            let (eval, calib) = (ctx.split(Split::Eval), ctx.split(Split::Calib));
            let mut f = SupernetFitness::new(&supernet, &eval, &calib, Domain::Ann, ctx.cfg.tau_c, ctx.cfg.margin)?;
            let seed = ctx.rng(Stage::RandomSearch, 0).random_u64_seed();
            baseline_random_search(&mut f, blocks, ctx.cfg.baselines.random_search_samples, seed)?.1
        }
        BaselineKind::RandomSampling => {
            let seed = ctx.rng(Stage::RandomSampling, 0).random_u64_seed();
            baseline_random_sampling(ctx.cfg.baselines.random_sampling_k, blocks, seed, |i, g| {
                train_and_score(ctx, g, Stage::RandomSampling, 1 + i as u64)
            })?
            .runs
        }
        BaselineKind::Fixed3 | BaselineKind::Fixed5 => {
            let choice = if kind == BaselineKind::Fixed3 { Choice::Conv3 } else { Choice::Conv5 };
            let g = Genome::uniform(choice, blocks);
            let scores = train_and_score(ctx, &g, Stage::Fixed, choice as u64)?;
            vec![Candidate { genome: g, scores }]
        }
    };
    let n = runs.len() as f64;
    let best = runs
        .iter()
        .min_by(|a, b| b.fitness().total_cmp(&a.fitness()).then_with(|| a.genome.cmp(&b.genome)))
        .cloned()
        .ok_or_else(|| Error::Empty("baseline runs".into()))?;
    let result = BaselineResult {
        kind,
        mean_war: runs.iter().map(|c| c.scores.war).sum::<f64>() / n,
        mean_uar: runs.iter().map(|c| c.scores.uar).sum::<f64>() / n,
        runs,
        best,
    };
    let tag = serde_json::to_value(kind)?.as_str().unwrap_or("baseline").to_string();
    let rows: Vec<[String; 4]> = result
        .runs
        .iter()
        .map(|c| [c.genome.to_string(), c.scores.war.to_string(), c.scores.uar.to_string(), c.scores.fitness.to_string()])
        .collect();
    write_csv(&ctx.run.log(&format!("baseline_{tag}")), &rows, &["genome", "war", "uar", "fitness"])?;
    write_json(&ctx.run.file(&format!("baseline_{tag}.json")), &result)?;
    Ok(result)
}

// ---- report ------------------------------------------------------------------

/// Aggregates search curves and evaluation reports of a run directory into CSVs.
pub fn report(run: &RunDir) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut curve_rows = Vec::new();
    for d in ["ann", "snn"] {
        let p = run.file(&format!("search_{d}.json"));
        if !p.exists() {
            continue;
        }
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let r: SearchResult = serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))?;
        for (round, (f, g)) in r.history.iter().zip(&r.best_genomes).enumerate() {
            curve_rows.push(vec![round.to_string(), d.to_string(), f.to_string(), g.to_string()]);
        }
    }
    let curves = run.log("fitness_curves");
    let header = |h: &[&str]| h.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    write_records(&curves, &header(&["round", "domain", "best_fitness", "best_genome"]), &curve_rows)?;
    written.push(curves);

    let evals_dir = run.root().join("evals");
    let mut files: Vec<PathBuf> = std::fs::read_dir(&evals_dir)
        .map_err(|e| Error::io(&evals_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut rows = Vec::new();
    for p in files {
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let r: EvalReport = serde_json::from_str(&text).map_err(|e| Error::format(&p, e.to_string()))?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        rows.push(vec![
            r.name,
            r.kind,
            r.split.to_string(),
            r.samples.to_string(),
            r.war.to_string(),
            r.uar.to_string(),
            r.fitness.to_string(),
            r.params.to_string(),
            r.flops.to_string(),
            opt(r.synops_mean.map(|v| v.to_string())),
            opt(r.synapses.map(|v| v.to_string())),
        ]);
    }
    let metrics = run.log("metrics");
    write_records(
        &metrics,
        &header(&["name", "kind", "split", "samples", "war", "uar", "fitness", "params", "flops", "synops_mean", "synapses"]),
        &rows,
    )?;
    written.push(metrics);
    Ok(written)
}

// ---- full pipeline -------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub seed: u64,
    pub genome: Genome,
    pub search_fitness: f64,
    pub search_history: Vec<f64>,
    pub stages: Vec<EvalReport>,
}

/// Supernet → search → retrain → transfer → fine-tune, plus the quantized branch.
pub fn run_all(ctx: &Context, domain: Domain) -> Result<PipelineResult> {
    let supernet = train_supernet(ctx)?;
    let searched = search_with(ctx, &supernet, domain)?;
    let genome = searched.best.genome.clone();
    retrain(ctx, &genome)?;
    let mut stages = Vec::new();
    let mut record = |r: EvalReport| -> Result<()> {
        stages.push(r);
        Ok(())
    };
    let ann_path = ctx.run.checkpoint("ann");
    record(eval(ctx, &ann_path, Split::Eval)?)?;
    transfer(ctx, &ann_path)?;
    let snn_path = ctx.run.checkpoint("snn");
    record(eval(ctx, &snn_path, Split::Eval)?)?;
    finetune_snn(ctx, &snn_path)?;
    record(eval(ctx, &ctx.run.checkpoint("snn_finetuned"), Split::Eval)?)?;
    quantize(ctx, &snn_path)?;
    let q_path = ctx.run.checkpoint("snn_quant");
    record(eval(ctx, &q_path, Split::Eval)?)?;
    finetune_snn(ctx, &q_path)?;
    record(eval(ctx, &ctx.run.checkpoint("snn_quant_finetuned"), Split::Eval)?)?;
    let result = PipelineResult {
        seed: ctx.cfg.seed,
        genome,
        search_fitness: searched.best.fitness(),
        search_history: searched.history,
        stages,
    };
    write_json(&ctx.run.file("result.json"), &result)?;
    report(&ctx.run)?;
    Ok(result)
}
