use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde_json::json;

use kgcal_core::adapter::{
    load_adapter, save_adapter, score_diagnostic, train_adapter, AdapterConfig, AdapterParams, AdapterTrainConfig,
    CalibratedScorer, Conditioning, ScoreStats,
};
use kgcal_core::evalx::{evaluate, EvalReport};
use kgcal_core::fuzzy::{FuzzySemantics, Negation, TNorm};
use kgcal_core::inference::{Engine, Trace, DEFAULT_BEAM_K};
use kgcal_core::kg::{ingest_triples, KnowledgeGraph, Split};
use kgcal_core::linkpred::{load_checkpoint, save_checkpoint, train_lp, EmbeddingTable, LossKind, LpTrainConfig, Normalization};
use kgcal_core::queries::{
    parse_query, read_query_file, sample_queries, write_query_file, LabeledQuery, QueryType, SampleTarget, SamplerConfig,
};

use crate::config::{RunConfig, UsageError};

pub fn run(name: &str, cfg: &mut RunConfig) -> Result<()> {
    let start = Instant::now();
    let seed: u64 = cfg.get("seed", 0)?;
    let log_every: usize = cfg.get("log_every", 1)?;
    if log_every == 0 {
        bail!(UsageError("`log_every` must be positive".into()));
    }
    let ctx = Ctx { seed, log_every };
    let outputs = match name {
        "ingest" => ingest(cfg)?,
        "train-lp" => train_lp_cmd(cfg, &ctx)?,
        "sample-queries" => sample(cfg, &ctx)?,
        "train-adapter" => train_adapter_cmd(cfg, &ctx)?,
        "answer" => answer(cfg)?,
        "eval" => eval(cfg)?,
        "report" => report(cfg)?,
        other => unreachable!("unregistered subcommand {other}"),
    };
    for (out, extra) in outputs {
        write_manifest(&out, name, cfg, seed, start, extra)?;
    }
    Ok(())
}

struct Ctx {
    seed: u64,
    log_every: usize,
}

impl Ctx {
    fn progress(&self, total: usize) -> impl FnMut(usize, f64) + '_ {
        move |step, loss| {
            if step % self.log_every == 0 || step + 1 == total {
                eprintln!("step={step} loss={loss}");
            }
        }
    }
}

/// An artifact and the extra facts recorded in its manifest.
type Output = (PathBuf, serde_json::Value);

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_manifest(out: &Path, command: &str, cfg: &RunConfig, seed: u64, start: Instant, extra: serde_json::Value) -> Result<()> {
    let m = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "config": cfg.echo(),
        "wall_time_secs": start.elapsed().as_secs_f64(),
        "output": extra,
    });
    let path = manifest_path(out);
    fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn path(cfg: &mut RunConfig, key: &str) -> Result<PathBuf> {
    Ok(PathBuf::from(cfg.req::<String>(key)?))
}

fn opt_path(cfg: &mut RunConfig, key: &str) -> Result<Option<PathBuf>> {
    Ok(cfg.opt::<String>(key)?.map(PathBuf::from))
}

fn load_kg(p: &Path) -> Result<KnowledgeGraph> {
    KnowledgeGraph::read_snapshot(p).with_context(|| format!("reading {}", p.display()))
}

fn load_lp(p: &Path) -> Result<EmbeddingTable> {
    load_checkpoint(p).with_context(|| format!("reading {}", p.display()))
}

fn semantics(cfg: &mut RunConfig) -> Result<FuzzySemantics> {
    let d = FuzzySemantics::default();
    Ok(FuzzySemantics::new(cfg.get::<TNorm>("tnorm", d.tnorm)?, cfg.get::<Negation>("negation", d.negation)?))
}

fn types(cfg: &mut RunConfig, default: &[QueryType]) -> Result<Vec<QueryType>> {
    let raw = cfg.get("types", default.iter().map(|t| t.name()).collect::<Vec<_>>().join(","))?;
    let ts = QueryType::parse_list(&raw)?;
    if ts.is_empty() {
        bail!(UsageError("`types` is empty".into()));
    }
    Ok(ts)
}

fn ingest(cfg: &mut RunConfig) -> Result<Vec<Output>> {
    let specs = cfg.list("triples");
    if specs.is_empty() {
        bail!(UsageError("missing required `--triples PATH:SPLIT ...`".into()));
    }
    let mut files = Vec::with_capacity(specs.len());
    for s in &specs {
        let (p, split) = s
            .rsplit_once(':')
            .ok_or_else(|| UsageError(format!("`{s}` is not PATH:SPLIT")))?;
        files.push((PathBuf::from(p), split.parse::<Split>()?));
    }
    let no_reciprocals = cfg.flag("no_reciprocals")?;
    let out = path(cfg, "out")?;
    let mut kg = ingest_triples(&files)?;
    if !no_reciprocals {
        kg = kg.add_reciprocals()?;
    }
    kg.write_snapshot(&out).with_context(|| format!("writing {}", out.display()))?;
    let counts: BTreeMap<String, usize> = Split::ALL.iter().map(|&s| (s.to_string(), kg.triples(s).len())).collect();
    eprintln!(
        "entities={} relations={} train={} valid={} test={}",
        kg.num_entities(),
        kg.num_relations(),
        counts["train"],
        counts["valid"],
        counts["test"]
    );
    let extra = json!({
        "path": out,
        "entities": kg.num_entities(),
        "relations": kg.num_relations(),
        "triples": counts,
    });
    Ok(vec![(out, extra)])
}

fn train_lp_cmd(cfg: &mut RunConfig, ctx: &Ctx) -> Result<Vec<Output>> {
    let kg = load_kg(&path(cfg, "kg")?)?;
    let out = path(cfg, "out")?;
    let d = LpTrainConfig::default();
    let config = LpTrainConfig {
        dim: cfg.get("dim", d.dim)?,
        learning_rate: cfg.get("learning_rate", d.learning_rate)?,
        steps: cfg.get("steps", d.steps)?,
        batch_size: cfg.get("batch_size", d.batch_size)?,
        n3_weight: cfg.get("n3_weight", d.n3_weight)?,
        init_std: cfg.get("init_std", d.init_std)?,
        seed: ctx.seed,
        loss: cfg.get::<LossKind>("loss", d.loss)?,
        normalization: cfg.get::<Normalization>("normalization", d.normalization)?,
    };
    config.validate()?;
    let table = train_lp(&kg, &config, ctx.progress(config.steps))?;
    save_checkpoint(&table, &out).with_context(|| format!("writing {}", out.display()))?;
    let extra = json!({ "path": out, "dim": table.dim(), "num_params": table.num_params() });
    Ok(vec![(out, extra)])
}

fn sample(cfg: &mut RunConfig, ctx: &Ctx) -> Result<Vec<Output>> {
    let kg = load_kg(&path(cfg, "kg")?)?;
    let out = path(cfg, "out")?;
    let types = types(cfg, &QueryType::ALL)?;
    let per_type: usize = cfg.get("per_type", 100)?;
    let d = SamplerConfig::default();
    let target = match cfg.get("target", "eval".to_string())?.as_str() {
        "train" => SampleTarget::Train,
        "eval" => SampleTarget::Eval,
        o => bail!(UsageError(format!("unknown target `{o}` (expected train, eval)"))),
    };
    let config = SamplerConfig {
        max_answers: cfg.get("max_answers", d.max_answers)?,
        attempts_per_query: cfg.get("attempts", d.attempts_per_query)?,
        seed: ctx.seed,
        target,
    };
    let mut all = Vec::new();
    let mut counts = BTreeMap::new();
    for t in types {
        let qs = sample_queries(&kg, t, per_type, &config)?;
        counts.insert(t.to_string(), qs.len());
        all.extend(qs);
    }
    write_query_file(&out, &all, &kg).with_context(|| format!("writing {}", out.display()))?;
    eprintln!("queries={}", all.len());
    Ok(vec![(out.clone(), json!({ "path": out, "queries": counts }))])
}

/// The snapshot a query file was sampled from, as recorded in its manifest.
fn kg_from_query_manifest(queries: &Path) -> Option<PathBuf> {
    let text = fs::read_to_string(manifest_path(queries)).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    v.get("config")?.get("kg")?.as_str().map(PathBuf::from)
}

fn kg_for_queries(cfg: &mut RunConfig, queries: &Path) -> Result<KnowledgeGraph> {
    match opt_path(cfg, "kg")? {
        Some(p) => load_kg(&p),
        None => match kg_from_query_manifest(queries) {
            Some(p) => load_kg(&p),
            None => bail!(UsageError(format!(
                "missing `--kg` and {} does not name a snapshot",
                manifest_path(queries).display()
            ))),
        },
    }
}

fn load_queries(kg: &KnowledgeGraph, p: &Path) -> Result<Vec<LabeledQuery>> {
    read_query_file(p, kg).with_context(|| format!("reading {}", p.display()))
}

fn arch(cfg: &mut RunConfig, seed: u64) -> Result<AdapterConfig> {
    let d = AdapterConfig::default();
    Ok(AdapterConfig {
        conditioning: cfg.get::<Conditioning>("condition", d.conditioning)?,
        layers: cfg.get("psi_layers", d.layers)?,
        hidden: cfg.opt("psi_hidden")?,
        monotone: cfg.flag("monotone")?,
        seed,
    })
}

fn train_adapter_cmd(cfg: &mut RunConfig, ctx: &Ctx) -> Result<Vec<Output>> {
    let lp = load_lp(&path(cfg, "lp")?)?;
    let qpath = path(cfg, "queries")?;
    let kg = kg_for_queries(cfg, &qpath)?;
    let queries = load_queries(&kg, &qpath)?;
    let out = PathBuf::from(cfg.get("out", "adapter.ckpt".to_string())?);
    let d = AdapterTrainConfig::default();
    let config = AdapterTrainConfig {
        types: types(cfg, &d.types)?,
        steps: cfg.get("steps", d.steps)?,
        learning_rate: cfg.get("learning_rate", d.learning_rate)?,
        batch_size: cfg.get("batch_size", d.batch_size)?,
        loss: cfg.get::<LossKind>("loss", d.loss)?,
        unfreeze_lp: cfg.flag("unfreeze_lp")?,
        seed: ctx.seed,
    };
    let out_lp = opt_path(cfg, "out_lp")?;
    if config.unfreeze_lp != out_lp.is_some() {
        bail!(UsageError("`--out-lp` is required with, and only with, `--unfreeze-lp`".into()));
    }
    let arch = arch(cfg, ctx.seed)?;
    let sem = semantics(cfg)?;
    config.validate()?;
    let trained = train_adapter(&lp, &queries, sem, arch, &config, ctx.progress(config.steps))?;
    save_adapter(&trained.adapter, &out).with_context(|| format!("writing {}", out.display()))?;
    eprintln!("adapter_params={}", trained.adapter.num_params());
    let mut outputs =
        vec![(out.clone(), json!({ "path": out, "num_params": trained.adapter.num_params() }))];
    if let (Some(p), Some(table)) = (out_lp, trained.lp) {
        save_checkpoint(&table, &p).with_context(|| format!("writing {}", p.display()))?;
        outputs.push((p.clone(), json!({ "path": p, "dim": table.dim() })));
    }
    Ok(outputs)
}

fn load_adapter_opt(cfg: &mut RunConfig) -> Result<Option<AdapterParams>> {
    opt_path(cfg, "adapter")?
        .map(|p| load_adapter(&p).with_context(|| format!("reading {}", p.display())))
        .transpose()
}

fn answer(cfg: &mut RunConfig) -> Result<Vec<Output>> {
    let kg = load_kg(&path(cfg, "kg")?)?;
    let lp = load_lp(&path(cfg, "lp")?)?;
    let adapter = load_adapter_opt(cfg)?;
    let raw: String = cfg.req("query")?;
    let text = if Path::new(&raw).is_file() { fs::read_to_string(&raw)? } else { raw };
    let query = parse_query(text.trim(), kg.entities(), kg.relations())?;
    let sem = semantics(cfg)?;
    let beam_k: usize = cfg.get("beam_k", DEFAULT_BEAM_K)?;
    let topn: usize = cfg.get("topn", 10)?;
    let explain = cfg.flag("explain")?;
    let out = opt_path(cfg, "out")?;

    let scorer = CalibratedScorer::new(&lp, adapter.as_ref())?;
    let engine = Engine::new(scorer, sem, beam_k);
    let (ranking, trace) = engine.answer(&query)?;
    let mut text = String::new();
    for (i, &(e, s)) in ranking.iter().take(topn).enumerate() {
        let _ = writeln!(text, "{}\t{}\t{s}", i + 1, kg.entities().name(e));
    }
    if explain {
        text.push_str(&explain_trace(&trace, &query.var_names, &kg));
    }
    match out {
        Some(p) => {
            fs::write(&p, &text).with_context(|| format!("writing {}", p.display()))?;
            Ok(vec![(p.clone(), json!({ "path": p, "answers": ranking.len().min(topn) }))])
        }
        None => {
            print!("{text}");
            Ok(Vec::new())
        }
    }
}

fn explain_trace(trace: &Trace, var_names: &[String], kg: &KnowledgeGraph) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "trace semantics={}/{} beam_k={}", trace.semantics.tnorm, trace.semantics.negation, trace.beam_k);
    for (i, step) in trace.steps.iter().enumerate() {
        let atoms: Vec<String> = step.atoms.iter().map(ToString::to_string).collect();
        let _ = writeln!(
            s,
            "step {i} branch={} var={} atoms=[{}] entries={}",
            step.disjunct,
            var_names[step.var as usize],
            atoms.join(","),
            step.entries.len()
        );
        for (j, e) in step.entries.iter().enumerate() {
            let parent = e.parent.map_or_else(|| "-".to_string(), |p| p.to_string());
            let scores: Vec<String> = e.atom_scores.iter().map(ToString::to_string).collect();
            let _ = writeln!(
                s,
                "  [{j}] {}={} parent={parent} atom_scores=[{}] score={}",
                var_names[step.var as usize],
                kg.entities().name(e.entity),
                scores.join(","),
                e.score
            );
        }
    }
    s
}

fn eval(cfg: &mut RunConfig) -> Result<Vec<Output>> {
    let lp = load_lp(&path(cfg, "lp")?)?;
    let adapter = load_adapter_opt(cfg)?;
    let qpath = path(cfg, "queries")?;
    let kg = kg_for_queries(cfg, &qpath)?;
    let types = types(cfg, &QueryType::ALL)?;
    let queries: Vec<LabeledQuery> = load_queries(&kg, &qpath)?.into_iter().filter(|q| types.contains(&q.query_type)).collect();
    let sem = semantics(cfg)?;
    let beam_k: usize = cfg.get("beam_k", DEFAULT_BEAM_K)?;
    let out = opt_path(cfg, "out")?;

    let scorer = CalibratedScorer::new(&lp, adapter.as_ref())?;
    let engine = Engine::new(scorer, sem, beam_k);
    let mut report = evaluate(&engine, &queries)?;
    report.config.insert("tnorm".into(), sem.tnorm.to_string());
    report.config.insert("negation".into(), sem.negation.to_string());
    report.config.insert("beam_k".into(), beam_k.to_string());
    report.config.insert(
        "adapter".into(),
        adapter.as_ref().map_or_else(|| "none".to_string(), |a| format!("{}/{}", a.conditioning(), a.layers())),
    );
    print!("{}", report.table());
    match out {
        Some(p) => {
            fs::write(&p, serde_json::to_string_pretty(&report)? + "\n").with_context(|| format!("writing {}", p.display()))?;
            Ok(vec![(p.clone(), json!({ "path": p, "queries": queries.len(), "skipped": report.skipped }))])
        }
        None => Ok(Vec::new()),
    }
}

fn stats_row(s: &mut String, label: &str, x: &ScoreStats) {
    let _ = writeln!(s, "{label:<12}{:>8}{:>12.4}{:>12.4}{:>12.4}{:>12.4}", x.count, x.min, x.max, x.mean, x.variance);
}

fn report(cfg: &mut RunConfig) -> Result<Vec<Output>> {
    let lp = opt_path(cfg, "lp")?.map(|p| load_lp(&p)).transpose()?;
    let adapter = match load_adapter_opt(cfg)? {
        Some(a) => a,
        None => {
            let dim = match &lp {
                Some(t) => cfg.get("dim", t.dim())?,
                None => cfg.req("dim")?,
            };
            AdapterParams::new(arch(cfg, 0)?, dim)?
        }
    };
    let eval_path = opt_path(cfg, "eval")?;
    let diag_atoms: usize = cfg.get("diag_atoms", 1000)?;
    let out = opt_path(cfg, "out")?;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "adapter condition={} psi_layers={} hidden={} monotone={} lp_dim={} input_dim={}",
        adapter.conditioning(),
        adapter.layers(),
        if adapter.layers() == 2 { adapter.hidden().to_string() } else { "-".into() },
        adapter.monotone(),
        adapter.lp_dim(),
        adapter.input_dim()
    );
    let _ = writeln!(s, "adapter_params {}", adapter.num_params());
    if let Some(lp) = &lp {
        if lp.dim() != adapter.lp_dim() {
            bail!(kgcal_core::Error::DimMismatch { expected: lp.dim(), got: adapter.lp_dim() });
        }
        let (ne, nr) = (lp.num_entities() as u32, lp.num_relations() as u32);
        let atoms: Vec<(u32, u32)> = (0..diag_atoms as u32).map(|i| (i % ne, i % nr)).collect();
        let diag = score_diagnostic(&CalibratedScorer::new(lp, Some(&adapter))?, &atoms);
        let _ = writeln!(s, "\nscores over {} atoms", atoms.len());
        let _ = writeln!(s, "{:<12}{:>8}{:>12}{:>12}{:>12}{:>12}", "stage", "count", "min", "max", "mean", "variance");
        stats_row(&mut s, "raw", &diag.raw);
        stats_row(&mut s, "normalized", &diag.normalized);
        stats_row(&mut s, "calibrated", &diag.calibrated);
        stats_row(&mut s, "clamped", &diag.clamped);
    }
    if let Some(p) = &eval_path {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let r: EvalReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        let _ = writeln!(s, "\nevaluation ({} queries skipped)", r.skipped);
        s.push_str(&r.table());
    }
    print!("{s}");
    match out {
        Some(p) => {
            fs::write(&p, &s).with_context(|| format!("writing {}", p.display()))?;
            Ok(vec![(p.clone(), json!({ "path": p, "adapter_params": adapter.num_params() }))])
        }
        None => Ok(Vec::new()),
    }
}
