use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::Value;

use ifim_core::assemble::{assemble_input, parse_request, CursorContext};
use ifim_core::bench::{
    attach_instructions, draw_subset, sample_size, truncate_context, BenchmarkTask,
    HumanEvalProblem, Origin, DEFAULT_CONFIDENCE, DEFAULT_CONTEXT_LINES, DEFAULT_MARGIN,
    DEFAULT_PROPORTION,
};
use ifim_core::corpus::{
    decontaminate, ingest_samples, line_comment_marker, mix_ratio, select_middle_span, to_cfim,
    CorpusFormat, Tag, TripletLine,
};
use ifim_core::eval::{
    pass_at_1, report_table, run_benchmark, CompletionBackend, CompletionsClient, EvalConfig,
    EvalResult, FailureKind, OracleBackend, RunKey, ScriptedCompletions,
};
use ifim_core::format::{build_training_example, ExampleSource, Mode};
use ifim_core::jsonl;
use ifim_core::synth::{
    synthesize_all, ChatCompletionsBackend, SynthBackend, SynthOutcome, TemplateBackend,
    DEFAULT_CONCURRENCY, DEFAULT_RETRIES,
};
use ifim_server::AppState;

use crate::config::PipelineConfig;
use crate::{
    AssembleArgs, BenchArgs, Cli, Command, EvalArgs, EvalBackendKind, FormatArgs, OriginKind,
    ServeArgs, ServeBackendKind, SynthArgs, SynthBackendKind,
};

const DEFAULT_BIND: &str = "127.0.0.1:8080";

struct Globals {
    seed: u64,
    jobs: usize,
}

pub fn run(cli: &Cli, cfg: &PipelineConfig) -> Result<()> {
    let globals = Globals {
        seed: cli.seed.or(cfg.seed).unwrap_or(0),
        jobs: cli
            .jobs
            .or(cfg.jobs)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1),
    };
    match &cli.command {
        Command::Synth(a) => synth(a, cfg, &globals),
        Command::Format(a) => format(a, cfg, &globals),
        Command::Bench(a) => bench(a, cfg, &globals),
        Command::Eval(a) => eval(a, cfg, &globals),
        Command::Assemble(a) => assemble(a, cfg),
        Command::Serve(a) => serve(a, cfg),
    }
}

fn synth_backend(kind: SynthBackendKind, model: Option<&str>) -> Result<Box<dyn SynthBackend>> {
    Ok(match kind {
        SynthBackendKind::Mock => Box::new(TemplateBackend),
        SynthBackendKind::Http => {
            let model = model.ok_or_else(|| anyhow!("--model is required for the http backend"))?;
            Box::new(ChatCompletionsBackend::from_env(model)?)
        }
    })
}

fn parse_synth_kind(name: &str) -> Result<SynthBackendKind> {
    match name {
        "mock" => Ok(SynthBackendKind::Mock),
        "http" => Ok(SynthBackendKind::Http),
        other => bail!("unknown synthesis backend {other:?} (expected mock or http)"),
    }
}

/// Reference texts from benchmark files: HumanEval problems (prompt plus
/// solution), benchmark tasks (full program), or corpus lines (code).
fn load_contaminants(paths: &[impl AsRef<Path>]) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let values: Vec<Value> = jsonl::read_path(path)?;
        for (i, v) in values.iter().enumerate() {
            let field = |k: &str| v.get(k).and_then(Value::as_str);
            let text = if let (Some(p), Some(s)) = (field("prompt"), field("canonical_solution")) {
                format!("{p}{s}")
            } else if let (Some(p), Some(m), Some(s)) =
                (field("prefix"), field("canonical_middle"), field("suffix"))
            {
                format!("{p}{m}{s}")
            } else if let Some(code) = field("code") {
                code.to_string()
            } else {
                bail!("{}: record {} has no code to match against", path.display(), i + 1);
            };
            out.push(text);
        }
    }
    Ok(out)
}

fn synth(a: &SynthArgs, cfg: &PipelineConfig, g: &Globals) -> Result<()> {
    let samples = ingest_samples(&a.corpus, CorpusFormat::Jsonl)?;
    let ingested = samples.len();
    let index: HashMap<String, u64> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.clone(), i as u64))
        .collect();
    let contaminants = load_contaminants(&a.contaminants)?;
    let (kept, removed) = decontaminate(samples, &contaminants);

    let min_lines = a.min_lines.or(cfg.synth.min_lines).unwrap_or(1);
    let max_lines = a.max_lines.or(cfg.synth.max_lines).unwrap_or(3);
    let mut triplets = Vec::with_capacity(kept.len());
    let mut blank = 0;
    for sample in &kept {
        // one seed per sample, keyed by its position in the corpus
        let seed = g.seed.wrapping_add(index[&sample.id]);
        match select_middle_span(sample, seed, min_lines, max_lines) {
            Ok(t) => triplets.push(t),
            Err(ifim_core::Error::BlankCode(_)) => blank += 1,
            Err(e) => return Err(e.into()),
        }
    }

    let kind = match a.backend {
        Some(k) => k,
        None => parse_synth_kind(cfg.synth.backend.as_deref().unwrap_or("mock"))?,
    };
    let backend = synth_backend(kind, a.model.as_deref().or(cfg.synth.model.as_deref()))?;
    let retries = a.retries.or(cfg.synth.retries).unwrap_or(DEFAULT_RETRIES);
    let concurrency = cfg.synth.concurrency.unwrap_or(DEFAULT_CONCURRENCY.min(g.jobs).max(1));
    let outcomes = synthesize_all(backend.as_ref(), &triplets, retries, concurrency);

    let mut lines = Vec::new();
    let (mut rejected, mut failed) = (0, 0);
    for (triplet, outcome) in triplets.iter().zip(outcomes) {
        match outcome {
            Ok(SynthOutcome::Accepted { record, .. }) => lines.push(TripletLine::from_record(&record)),
            Ok(SynthOutcome::Rejected { .. }) => rejected += 1,
            Err(e) => {
                failed += 1;
                eprintln!("warning: {}: {e}", triplet.sample_id);
            }
        }
    }
    jsonl::write_path(&a.out, &lines)?;
    println!(
        "ingested={ingested} removed={} blank={blank} rejected={rejected} failed={failed} written={}",
        removed.len(),
        lines.len()
    );
    Ok(())
}

fn format(a: &FormatArgs, cfg: &PipelineConfig, g: &Globals) -> Result<()> {
    let mode: Mode = a.mode.parse()?;
    let profiles = cfg.profile_set(a.profiles.as_deref())?;
    let sentinels = &profiles.get(&a.profile)?.sentinels;
    let lines: Vec<TripletLine> = jsonl::read_path(&a.dataset)?;
    let records = lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            l.record("")
                .filter(|r| !r.instruction.trim().is_empty())
                .ok_or_else(|| anyhow!("{}: line {} has no instruction", a.dataset.display(), i + 1))
        })
        .collect::<Result<Vec<_>>>()?;
    let mixed = mix_ratio(records, a.ratio, g.seed)?;

    let mut examples = Vec::with_capacity(mixed.records.len());
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for entry in &mixed.records {
        let example = if entry.tag == Tag::Ifim && a.cfim {
            let lang = &entry.record.triplet.language;
            let marker = line_comment_marker(lang)
                .ok_or_else(|| anyhow!("no line comment marker known for {lang:?}"))?;
            let triplet = to_cfim(&entry.record, marker)?;
            build_training_example(ExampleSource::Triplet(&triplet), mode, sentinels, Tag::Cfim)?
        } else {
            build_training_example(ExampleSource::Record(&entry.record), mode, sentinels, entry.tag)?
        };
        *counts.entry(example.tag.as_str()).or_default() += 1;
        examples.push(example);
    }
    jsonl::write_path(&a.out, &examples)?;
    let summary: Vec<String> = counts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("written={} {}", examples.len(), summary.join(" "));
    Ok(())
}

fn bench(a: &BenchArgs, cfg: &PipelineConfig, g: &Globals) -> Result<()> {
    let mut tasks = match a.origin {
        OriginKind::Humaneval => {
            let problems: Vec<HumanEvalProblem> = jsonl::read_path(&a.problems)?;
            let mut tasks = Vec::new();
            for p in &problems {
                tasks.extend(p.derive_tasks(!a.keep_docstrings)?);
            }
            tasks
        }
        OriginKind::Rme => {
            let keep = cfg.bench.context_lines.unwrap_or(DEFAULT_CONTEXT_LINES);
            let tasks: Vec<BenchmarkTask> = jsonl::read_path(&a.problems)?;
            tasks
                .into_iter()
                .map(|t| {
                    let t = truncate_context(&t, keep, keep);
                    BenchmarkTask {
                        origin: Origin::Repomastereval,
                        ..t
                    }
                })
                .collect()
        }
    };
    if tasks.is_empty() {
        bail!("no tasks derived from {}", a.problems.display());
    }
    let derived = tasks.len();
    if !a.full {
        let n = sample_size(
            derived as u64,
            cfg.bench.confidence.unwrap_or(DEFAULT_CONFIDENCE),
            cfg.bench.margin.unwrap_or(DEFAULT_MARGIN),
            cfg.bench.proportion.unwrap_or(DEFAULT_PROPORTION),
        )?;
        tasks = draw_subset(&tasks, n as usize, g.seed)?;
    }
    let subset = tasks.len();
    let mut with_instruction = 0;
    if let Some(kind) = a.backend {
        let backend = synth_backend(kind, a.model.as_deref().or(cfg.synth.model.as_deref()))?;
        let retries = cfg.synth.retries.unwrap_or(DEFAULT_RETRIES);
        let (attached, report) = attach_instructions(tasks, backend.as_ref(), retries, g.jobs);
        for (id, resp) in &report.rejected {
            eprintln!("warning: {id}: instruction rejected: {resp:?}");
        }
        for (id, err) in &report.failed {
            eprintln!("warning: {id}: {err}");
        }
        tasks = attached;
        with_instruction = tasks.iter().filter(|t| t.instruction.is_some()).count();
    }
    jsonl::write_path(&a.out, &tasks)?;
    println!("derived={derived} subset={subset} with_instruction={with_instruction}");
    Ok(())
}

fn eval(a: &EvalArgs, cfg: &PipelineConfig, g: &Globals) -> Result<()> {
    let profiles = cfg.profile_set(a.profiles.as_deref())?;
    let profile_name = a
        .profile
        .as_deref()
        .or(cfg.eval.profile.as_deref())
        .unwrap_or("default");
    let profile = profiles.get(profile_name)?;
    let tasks: Vec<BenchmarkTask> = jsonl::read_path(&a.benchmark)?;

    let kind = match a.backend {
        Some(k) => k,
        None => match cfg.eval.backend.as_deref().unwrap_or("oracle") {
            "oracle" => EvalBackendKind::Oracle,
            "scripted" => EvalBackendKind::Scripted,
            "http" => EvalBackendKind::Http,
            other => bail!("unknown completion backend {other:?}"),
        },
    };
    let backend: Box<dyn CompletionBackend> = match kind {
        EvalBackendKind::Oracle => Box::new(OracleBackend),
        EvalBackendKind::Scripted => {
            let script = a
                .script
                .as_ref()
                .ok_or_else(|| anyhow!("--script is required for the scripted backend"))?;
            Box::new(ScriptedCompletions::load(script)?)
        }
        EvalBackendKind::Http => {
            let model = a
                .model
                .as_deref()
                .or(cfg.eval.model.as_deref())
                .ok_or_else(|| anyhow!("--model is required for the http backend"))?;
            Box::new(CompletionsClient::from_env(model)?)
        }
    };
    let max_new_tokens = a.max_new_tokens.or(cfg.eval.max_new_tokens);
    if max_new_tokens == Some(0) {
        bail!("max_new_tokens must be at least 1");
    }
    let timeout = a.timeout_s.or(cfg.eval.timeout_s);
    if let Some(t) = timeout {
        if !(t.is_finite() && t > 0.0) {
            bail!("timeout must be a positive number of seconds, got {t}");
        }
    }
    let mode_override: Option<Mode> = a.mode.as_deref().map(str::parse).transpose()?;

    let settings: &[bool] = if a.both {
        &[true, false]
    } else if a.with_instruction {
        &[true]
    } else {
        &[false]
    };
    let bench_name = a
        .benchmark
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "benchmark".into());
    let label = a.label.clone().unwrap_or_else(|| backend.name().to_string());
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;

    let mut runs = BTreeMap::new();
    for &with in settings {
        let mut ecfg = EvalConfig::for_profile(profile, !a.base_model).with_instruction(with);
        if let Some(mode) = mode_override {
            ecfg.mode = mode;
        }
        if let Some(n) = max_new_tokens {
            ecfg.max_new_tokens = n;
        }
        if let Some(t) = timeout {
            ecfg.timeout = Duration::from_secs_f64(t);
        }
        ecfg.jobs = g.jobs;
        let results = run_benchmark(backend.as_ref(), &tasks, &ecfg);
        let file = if with {
            "results.with_instruction.jsonl"
        } else {
            "results.without_instruction.jsonl"
        };
        jsonl::write_path(a.out.join(file), &results)?;
        summarize(with, &results);
        runs.insert(
            RunKey {
                model: label.clone(),
                benchmark: bench_name.clone(),
                with_instruction: with,
            },
            results,
        );
    }
    let table = report_table(&runs);
    let text = table.to_text();
    fs::write(a.out.join("report.txt"), &text)?;
    fs::write(a.out.join("report.csv"), table.to_csv())?;
    print!("{text}");
    Ok(())
}

fn summarize(with: bool, results: &[EvalResult]) {
    let setting = if with { "w/ ins." } else { "w/o ins." };
    let score = match pass_at_1(results) {
        Ok(p) => p.to_string(),
        Err(_) => "n/a".into(),
    };
    let mut kinds: BTreeMap<String, usize> = BTreeMap::new();
    for r in results.iter().filter(|r| r.failure_kind != FailureKind::None) {
        let kind = serde_json::to_value(r.failure_kind)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        *kinds.entry(kind).or_default() += 1;
    }
    let failures: Vec<String> = kinds.iter().map(|(k, v)| format!("{k}={v}")).collect();
    eprintln!("{setting}: pass@1={score} tasks={} {}", results.len(), failures.join(" "));
}

fn assemble(a: &AssembleArgs, cfg: &PipelineConfig) -> Result<()> {
    let profiles = cfg.profile_set(a.profiles.as_deref())?;
    let profile = profiles.get(&a.profile)?;
    let source = fs::read_to_string(&a.file).with_context(|| format!("reading {}", a.file.display()))?;
    let cursor = a.cursor.unwrap_or(source.len());
    let ctx = CursorContext {
        source,
        cursor,
        language: a.language.clone(),
    };
    let request = parse_request(&ctx, &profiles.markers, &profile.name)?;
    let input = assemble_input(&request, profile)?;
    if a.json {
        let out = serde_json::json!({
            "prefix": request.prefix,
            "suffix": request.suffix,
            "instruction": request.instruction,
            "language": request.language,
            "model_profile": request.model_profile,
            "input": input,
        });
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        print!("{input}");
    }
    Ok(())
}

fn serve(a: &ServeArgs, cfg: &PipelineConfig) -> Result<()> {
    let profiles = cfg.profile_set(a.profiles.as_deref())?;
    let bind = a
        .bind
        .as_deref()
        .or(cfg.serve.bind.as_deref())
        .unwrap_or(DEFAULT_BIND);
    let addr: SocketAddr = bind.parse().with_context(|| format!("invalid bind address {bind:?}"))?;
    let kind = match a.backend {
        Some(k) => k,
        None => match cfg.serve.backend.as_deref().unwrap_or("none") {
            "none" => ServeBackendKind::None,
            "http" => ServeBackendKind::Http,
            other => bail!("unknown serve backend {other:?}"),
        },
    };
    let backend: Option<Arc<dyn CompletionBackend>> = match kind {
        ServeBackendKind::None => None,
        ServeBackendKind::Http => {
            let model = a
                .model
                .as_deref()
                .or(cfg.serve.model.as_deref())
                .ok_or_else(|| anyhow!("--model is required for the http backend"))?;
            Some(Arc::new(CompletionsClient::from_env(model)?))
        }
    };
    let state = AppState::new(profiles, backend);
    let runtime = tokio::runtime::Runtime::new()?;
    eprintln!("listening on {addr}");
    runtime.block_on(ifim_server::serve(addr, state))?;
    Ok(())
}
