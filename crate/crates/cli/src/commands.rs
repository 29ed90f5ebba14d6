use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context as _, Result};
use serde_json::json;
use voxpilot_core::audio::FeatureConfig;
use voxpilot_core::augment::expand_dataset;
use voxpilot_core::config::KeyValues;
use voxpilot_core::dataset::{build_dataset, Dataset, Split};
use voxpilot_core::engines::Engines;
use voxpilot_core::eval::{compare_pipelines, evaluate_pipeline, split_hash, EvalSample};
use voxpilot_core::pipelines::siamese::Vote;
use voxpilot_core::pipelines::{PipelineId, Preprocessor};
use voxpilot_core::workflow::{eval_samples, train_pipelines, untrained_engines, Corpus, TrainPlan};
use voxpilot_drone::api::{serve_api, Service};
use voxpilot_drone::udp::serve_udp;
use voxpilot_drone::Simulator;

use crate::{EvalTarget, SplitArg, VoteArg};

pub struct Context {
    pub seed: u64,
    pub kv: KeyValues,
    pub features: FeatureConfig,
}

impl Context {
    pub fn new(seed: u64, config: Option<&Path>) -> Result<Self> {
        let kv = match config {
            Some(p) => KeyValues::from_file(p)?,
            None => KeyValues::default(),
        };
        let features = FeatureConfig::from_kv(&kv)?;
        Ok(Self { seed, kv, features })
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn parse_pipelines(names: &[String]) -> Result<Vec<PipelineId>> {
    let mut ids = Vec::new();
    for name in names {
        if name.eq_ignore_ascii_case("all") {
            ids.extend(PipelineId::ALL);
            continue;
        }
        let id: PipelineId = name.parse().with_context(|| format!("unknown pipeline `{name}`"))?;
        ids.push(id);
    }
    ids.sort();
    ids.dedup();
    Ok(ids)
}

pub fn gen_data(ctx: &Context, out: &Path, per_class: Option<usize>, speakers: Option<usize>) -> Result<()> {
    let per_class = per_class.map_or_else(|| ctx.kv.get_or("dataset.per_class", 200), Ok)?;
    let speakers = speakers.map_or_else(|| ctx.kv.get_or("dataset.speakers", 8), Ok)?;
    let mut ds = build_dataset(per_class, speakers, ctx.seed)?;
    ds.write(out)?;
    log::info!("wrote {} utterances to {}", ds.len(), out.display());
    print_counts(&ds);
    Ok(())
}

pub fn augment(ctx: &Context, data: &Path, out: &Path) -> Result<()> {
    let source = Dataset::load(data)?;
    let mut expanded = expand_dataset(&source, ctx.seed)?;
    expanded.write(out)?;
    log::info!("expanded {} entries to {} in {}", source.len(), expanded.len(), out.display());
    print_counts(&expanded);
    Ok(())
}

fn print_counts(ds: &Dataset) {
    for (label, n) in ds.class_counts() {
        println!("{:<10} {n}", label.name());
    }
}

pub fn train(ctx: &Context, pipelines: &[String], data: &Path, models: &Path) -> Result<()> {
    let ids = parse_pipelines(pipelines)?;
    let plan = TrainPlan::from_kv(&ctx.kv, ctx.seed)?;
    let ds = Dataset::load(data)?;
    let pre = Preprocessor::new(ctx.features.clone())?;
    let start = Instant::now();
    let corpus = Corpus::prepare(&ds, &pre, plan.outliers, plan.seed)?;
    log::info!(
        "prepared {} train / {} val items in {:.1}s",
        corpus.train.len(),
        corpus.val.len(),
        start.elapsed().as_secs_f64()
    );
    let trained = train_pipelines(&corpus, &plan, ctx.features.clone(), &ids)?;
    trained.engines.save(models)?;
    for (id, log) in &trained.logs {
        let path = models.join(format!("{}.log.jsonl", id.name().to_lowercase()));
        write(&path, log.to_jsonl())?;
        if let Some(last) = log.last(voxpilot_core::neuro::Part::Val) {
            println!(
                "{} final val loss {:.4} accuracy {}",
                id.name(),
                last.loss,
                last.accuracy.map_or("n/a".into(), |a| format!("{a:.4}"))
            );
        }
    }
    log::info!("trained {:?} in {:.1}s", ids, start.elapsed().as_secs_f64());
    Ok(())
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    }
}

fn load_engines(ctx: &Context, models: &Path, t: Option<&EvalTarget>) -> Result<Engines> {
    let mut e = Engines::load(models, ctx.features.clone())?;
    e.threshold = ctx.kv.get_or("eval.threshold", e.threshold)?;
    e.knn.k = ctx.kv.get_or("eval.k", e.knn.k)?;
    if let Some(rho) = ctx.kv.raw("eval.reject_distance") {
        e.knn.reject_distance = Some(rho.parse().with_context(|| format!("eval.reject_distance `{rho}`"))?);
    }
    if let Some(v) = ctx.kv.raw("eval.vote") {
        e.knn.vote = match v {
            "majority" => Vote::Majority,
            "weighted" => Vote::DistanceWeighted,
            other => bail!("eval.vote must be majority or weighted, got `{other}`"),
        };
    }
    if let Some(t) = t {
        if let Some(tau) = t.threshold {
            e.threshold = tau;
        }
        if let Some(k) = t.k {
            e.knn.k = k;
        }
        if let Some(v) = t.vote {
            e.knn.vote = match v {
                VoteArg::Majority => Vote::Majority,
                VoteArg::Weighted => Vote::DistanceWeighted,
            };
        }
        if t.reject_distance.is_some() {
            e.knn.reject_distance = t.reject_distance;
        }
    }
    if !(0.0..=1.0).contains(&e.threshold) {
        bail!("threshold {} outside [0, 1]", e.threshold);
    }
    e.knn.validate()?;
    Ok(e)
}

fn load_samples(t: &EvalTarget) -> Result<Vec<EvalSample>> {
    let ds = Dataset::load(&t.data)?;
    let samples = eval_samples(&ds, split_of(t.split))?;
    if samples.is_empty() {
        bail!("no original utterances in the {:?} split of {}", t.split, t.data.display());
    }
    Ok(samples)
}

pub fn eval(ctx: &Context, t: &EvalTarget, pipelines: &[String]) -> Result<()> {
    let engines = load_engines(ctx, &t.models, Some(t))?;
    let samples = load_samples(t)?;
    let ids = if pipelines.is_empty() {
        PipelineId::ALL.into_iter().filter(|&id| engines.available(id)).collect()
    } else {
        parse_pipelines(pipelines)?
    };
    if ids.is_empty() {
        bail!("no trained pipelines in {}", t.models.display());
    }
    println!("test set {} ({} samples)", split_hash(&samples), samples.len());
    for id in ids {
        let ev = evaluate_pipeline(&engines, id, &samples, t.warmup)?;
        let stem = id.name().to_lowercase();
        let mut decisions = String::new();
        for (s, d) in samples.iter().zip(&ev.decisions) {
            let line = json!({
                "id": s.id,
                "gold": s.label.name(),
                "direction": d.label.name(),
                "confidence": d.confidence,
                "transcript": d.transcript,
            });
            let _ = writeln!(decisions, "{line}");
        }
        let timing = json!({ "pipeline": id, "latency": ev.latency });
        write(&t.out.join(format!("{stem}.report.jsonl")), ev.report.to_jsonl(id.name()))?;
        write(&t.out.join(format!("{stem}.report.txt")), ev.report.to_table())?;
        write(&t.out.join(format!("{stem}.decisions.jsonl")), decisions)?;
        write(&t.out.join(format!("{stem}.timing.json")), format!("{timing}\n"))?;
        println!("\n{} ({})\n{}", id.name(), id.description(), ev.report.to_table());
        println!(
            "latency mean {:.3} ms  p50 {:.3} ms  p95 {:.3} ms",
            ev.latency.total.mean * 1e3,
            ev.latency.total.p50 * 1e3,
            ev.latency.total.p95 * 1e3
        );
    }
    Ok(())
}

pub fn compare(ctx: &Context, t: &EvalTarget, untrained: bool) -> Result<()> {
    let engines = load_engines(ctx, &t.models, Some(t))?;
    let samples = load_samples(t)?;
    let baseline = if untrained {
        let plan = TrainPlan::from_kv(&ctx.kv, ctx.seed)?;
        let ds = Dataset::load(&t.data)?;
        let pre = Preprocessor::new(ctx.features.clone())?;
        let corpus = Corpus::prepare(&ds, &pre, 0, plan.seed)?;
        let mut u = untrained_engines(&corpus, &plan, ctx.features.clone())?;
        u.threshold = engines.threshold;
        u.knn = engines.knn;
        Some(u)
    } else {
        None
    };
    let summary = compare_pipelines(&engines, baseline.as_ref(), &samples, t.warmup)?;
    write(&t.out.join("compare.jsonl"), summary.metrics_jsonl())?;
    write(&t.out.join("compare.txt"), summary.metrics_table())?;
    write(&t.out.join("timing.jsonl"), summary.timing_jsonl())?;
    write(&t.out.join("timing.txt"), summary.timing_table())?;
    print!("{}\n{}", summary.metrics_table(), summary.timing_table());
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Runtime::new()?)
}

pub fn sim(udp: &str, replay: Option<&Path>) -> Result<()> {
    let sim = Arc::new(Simulator::default());
    if let Some(path) = replay {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (reply, _) = sim.apply(line);
            println!("{line} -> {}", reply.as_str());
        }
        println!("{}", serde_json::to_string(&sim.state())?);
        return Ok(());
    }
    runtime()?.block_on(async {
        let server = serve_udp(sim, udp).await?;
        println!("simulator listening on udp://{}", server.local_addr);
        tokio::signal::ctrl_c().await?;
        Ok(())
    })
}

pub fn serve(ctx: &Context, models: &Path, http: &str, udp: &str, step: u32) -> Result<()> {
    let engines = load_engines(ctx, models, None)?;
    for id in PipelineId::ALL {
        if !engines.available(id) {
            log::warn!("{} unavailable: no model in {}", id.name(), models.display());
        }
    }
    let sim = Arc::new(Simulator::default());
    let service = Arc::new(Service::new(engines, sim.clone()).with_step(step)?);
    runtime()?.block_on(async {
        let udp_server = serve_udp(sim, udp).await?;
        let api = serve_api(service, http).await?;
        println!("simulator listening on udp://{}", udp_server.local_addr);
        println!("service listening on http://{}", api.local_addr);
        tokio::select! {
            r = tokio::signal::ctrl_c() => r?,
            _ = api.wait() => bail!("http server stopped"),
        }
        Ok(())
    })
}
