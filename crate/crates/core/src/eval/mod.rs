//! Benchmark evaluation: input construction, generation, isolated test
//! execution, and Pass@1.

mod backend;
mod report;
mod sandbox;

use std::fmt;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::BenchmarkTask;
use crate::corpus::{to_cfim, InstructionRecord};
use crate::format::{render_fim_parts, render_ifim_parts, Mode, SentinelSet};
use crate::profile::{ModelProfile, DEFAULT_STOP_MARKERS};
use crate::{Error, Result};

pub use backend::{
    CompletionBackend, CompletionsClient, GenerationRequest, OracleBackend, Scripted,
    ScriptedCompletions,
};
pub use report::{report_table, ReportTable, RunKey};
pub use sandbox::{run_program, ExecOutcome, Interpreter};

pub const DEFAULT_MAX_NEW_TOKENS: usize = 128;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    None,
    TestFail,
    Timeout,
    Crash,
    BackendError,
    /// The evaluation input could not be built, e.g. a missing instruction.
    InputError,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalResult {
    pub task_id: String,
    pub completion: String,
    pub passed: bool,
    pub failure_kind: FailureKind,
    pub wall_time_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub max_new_tokens: usize,
    pub greedy: bool,
    pub with_instruction: bool,
    pub mode: Mode,
    pub sentinels: SentinelSet,
    pub timeout: Duration,
    /// Worker threads for task execution.
    pub jobs: usize,
    pub interpreter: Interpreter,
    /// Used when a base mode is evaluated with an instruction.
    pub comment_marker: String,
    /// Generations are cut at the first occurrence of any of these.
    pub stop: Vec<String>,
}

impl EvalConfig {
    pub fn new(mode: Mode, sentinels: SentinelSet) -> Self {
        let stop = sentinels
            .all()
            .iter()
            .map(|s| s.to_string())
            .chain(DEFAULT_STOP_MARKERS.iter().map(|s| s.to_string()))
            .collect();
        EvalConfig {
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            greedy: true,
            with_instruction: false,
            mode,
            sentinels,
            timeout: DEFAULT_TIMEOUT,
            jobs: std::thread::available_parallelism().map_or(1, |n| n.get()),
            interpreter: Interpreter::python(),
            comment_marker: "#".into(),
            stop,
        }
    }

    /// Evaluates with the profile's default IFIM mode when `ifim` is set,
    /// otherwise with its base mode.
    pub fn for_profile(profile: &ModelProfile, ifim: bool) -> Self {
        let mode = if ifim {
            Mode::Ifim(profile.default_ifim_mode)
        } else {
            Mode::Base(profile.base_mode)
        };
        let mut cfg = Self::new(mode, profile.sentinels.clone());
        cfg.stop = profile.stop_strings();
        cfg
    }

    pub fn with_instruction(mut self, on: bool) -> Self {
        self.with_instruction = on;
        self
    }
}

/// The prompt sent to the backend for one task.
///
/// * instruction on, IFIM mode: the IFIM layout.
/// * instruction on, base mode: the instruction is appended to the prefix as
///   a comment line, then the base layout.
/// * instruction off: the base layout over the raw prefix and suffix.
pub fn build_eval_input(task: &BenchmarkTask, cfg: &EvalConfig) -> Result<String> {
    let base = cfg.mode.base();
    if !cfg.with_instruction {
        return Ok(render_fim_parts(&task.prefix, "", &task.suffix, base, &cfg.sentinels).layout());
    }
    let instruction = task
        .instruction
        .as_deref()
        .filter(|i| !i.trim().is_empty())
        .ok_or_else(|| Error::MissingInstruction(task.task_id.clone()))?;
    match cfg.mode {
        Mode::Ifim(mode) => Ok(render_ifim_parts(
            &task.prefix,
            "",
            &task.suffix,
            instruction,
            mode,
            &cfg.sentinels,
        )?
        .layout()),
        Mode::Base(base) => {
            let record = InstructionRecord {
                triplet: task.triplet(),
                instruction: instruction.to_string(),
                synthesizer: String::new(),
            };
            let commented = to_cfim(&record, &cfg.comment_marker)?;
            Ok(render_fim_parts(&commented.prefix, "", &commented.suffix, base, &cfg.sentinels)
                .layout())
        }
    }
}

/// Cuts a generation at the earliest stop string.
pub fn truncate_completion<'a>(text: &'a str, stops: &[String]) -> &'a str {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    &text[..cut]
}

/// Runs `prefix ∘ completion ∘ suffix` followed by the task's tests.
pub fn execute_candidate(
    task: &BenchmarkTask,
    completion: &str,
    timeout: Duration,
    interpreter: &Interpreter,
) -> ExecOutcome {
    let program = format!(
        "{}{}{}\n\n{}",
        task.prefix, completion, task.suffix, task.tests
    );
    run_program(&program, interpreter, timeout)
}

fn evaluate_one(backend: &dyn CompletionBackend, task: &BenchmarkTask, cfg: &EvalConfig) -> EvalResult {
    let started = Instant::now();
    let fail = |kind: FailureKind, detail: String, completion: String| EvalResult {
        task_id: task.task_id.clone(),
        completion,
        passed: false,
        failure_kind: kind,
        wall_time_ms: started.elapsed().as_millis() as u64,
        detail: Some(detail),
    };
    let input = match build_eval_input(task, cfg) {
        Ok(input) => input,
        Err(e) => return fail(FailureKind::InputError, e.to_string(), String::new()),
    };
    let request = GenerationRequest {
        input: &input,
        max_new_tokens: cfg.max_new_tokens,
        greedy: cfg.greedy,
        stop: &cfg.stop,
        task: Some(task),
    };
    let raw = match backend.generate(&request) {
        Ok(raw) => raw,
        Err(e) => return fail(FailureKind::BackendError, e.to_string(), String::new()),
    };
    let completion = truncate_completion(&raw, &cfg.stop).to_string();
    let outcome = execute_candidate(task, &completion, cfg.timeout, &cfg.interpreter);
    EvalResult {
        task_id: task.task_id.clone(),
        passed: outcome.passed(),
        failure_kind: outcome.failure_kind,
        detail: outcome.detail,
        completion,
        wall_time_ms: started.elapsed().as_millis() as u64,
    }
}

/// Evaluates every task on a pool of `cfg.jobs` workers. Results come back
/// in task order; per-task failures never stop the run.
pub fn run_benchmark(
    backend: &dyn CompletionBackend,
    tasks: &[BenchmarkTask],
    cfg: &EvalConfig,
) -> Vec<EvalResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        tasks
            .par_iter()
            .map(|task| evaluate_one(backend, task, cfg))
            .collect()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PassAt1 {
    pub passed: usize,
    pub total: usize,
}

impl PassAt1 {
    pub fn fraction(self) -> f64 {
        self.passed as f64 / self.total as f64
    }

    pub fn percent(self) -> f64 {
        100.0 * self.fraction()
    }
}

impl fmt::Display for PassAt1 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}%", self.percent())
    }
}

/// Share of tasks whose single greedy completion passed.
pub fn pass_at_1(results: &[EvalResult]) -> Result<PassAt1> {
    if results.is_empty() {
        return Err(Error::EmptyResults);
    }
    Ok(PassAt1 {
        passed: results.iter().filter(|r| r.passed).count(),
        total: results.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::Origin;
    use crate::format::{default_ifim_mode, BaseMode};

    fn task(instruction: Option<&str>) -> BenchmarkTask {
        BenchmarkTask {
            task_id: "t".into(),
            origin: Origin::Custom,
            prefix: "P\n".into(),
            suffix: "S\n".into(),
            canonical_middle: "M\n".into(),
            tests: String::new(),
            instruction: instruction.map(String::from),
        }
    }

    fn result(passed: bool) -> EvalResult {
        EvalResult {
            task_id: "t".into(),
            completion: String::new(),
            passed,
            failure_kind: if passed {
                FailureKind::None
            } else {
                FailureKind::TestFail
            },
            wall_time_ms: 0,
            detail: None,
        }
    }

    #[test]
    fn eval_inputs() {
        let s = SentinelSet::default();
        let psim = EvalConfig::new(Mode::Ifim(default_ifim_mode(BaseMode::Psm)), s.clone())
            .with_instruction(true);
        assert_eq!(
            build_eval_input(&task(Some("do it")), &psim).unwrap(),
            "<PRE>P\n<SUF>S\n<INS>do it<MID>"
        );
        let psm = EvalConfig::new(Mode::Base(BaseMode::Psm), s.clone());
        assert_eq!(
            build_eval_input(&task(Some("do it")), &psm).unwrap(),
            "<PRE>P\n<SUF>S\n<MID>"
        );
        let psm_ins = psm.clone().with_instruction(true);
        assert_eq!(
            build_eval_input(&task(Some("do it")), &psm_ins).unwrap(),
            "<PRE>P\n# do it\n<SUF>S\n<MID>"
        );
        assert!(matches!(
            build_eval_input(&task(None), &psm_ins),
            Err(Error::MissingInstruction(_))
        ));
        let pims = EvalConfig::new(Mode::Ifim(default_ifim_mode(BaseMode::Pms)), s)
            .with_instruction(true);
        assert_eq!(
            build_eval_input(&task(Some("do it")), &pims).unwrap(),
            "<PRE>P\n<INS>do it<MID>S\n<SUF>"
        );
    }

    #[test]
    fn truncation_at_stops() {
        let stops = vec!["<MID>".to_string(), "<|endoftext|>".to_string()];
        assert_eq!(truncate_completion("x = 1<|endoftext|>junk", &stops), "x = 1");
        assert_eq!(truncate_completion("a<MID>b<|endoftext|>", &stops), "a");
        assert_eq!(truncate_completion("plain", &stops), "plain");
    }

    #[test]
    fn pass_at_one() {
        let all = vec![result(true); 4];
        assert_eq!(pass_at_1(&all).unwrap().to_string(), "100.0%");
        let three = vec![result(true), result(true), result(false), result(true)];
        assert_eq!(pass_at_1(&three).unwrap().to_string(), "75.0%");
        assert_eq!(pass_at_1(&vec![result(false); 4]).unwrap().to_string(), "0.0%");
        assert!(matches!(pass_at_1(&[]), Err(Error::EmptyResults)));
    }

    #[test]
    fn result_json_shape() {
        let json = serde_json::to_string(&result(false)).unwrap();
        assert_eq!(
            json,
            r#"{"task_id":"t","completion":"","passed":false,"failure_kind":"test_fail","wall_time_ms":0}"#
        );
    }
}
