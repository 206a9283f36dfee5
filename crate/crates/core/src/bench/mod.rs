//! Benchmark derivation: single-line infilling tasks, docstring stripping,
//! context truncation, representative subsets, and instruction attachment.

mod docstring;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::corpus::{split_lines, FimTriplet};
use crate::synth::{synthesize_all, SynthBackend, SynthOutcome};
use crate::{Error, Result};

pub use docstring::strip_docstrings;

pub const DEFAULT_CONTEXT_LINES: usize = 20;
pub const DEFAULT_CONFIDENCE: f64 = 0.95;
pub const DEFAULT_MARGIN: f64 = 0.05;
pub const DEFAULT_PROPORTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    HumanevalInfilling,
    Repomastereval,
    Custom,
}

impl Origin {
    pub fn language(self) -> &'static str {
        "python"
    }
}

/// One infilling task. `prefix + canonical_middle + suffix` is the original
/// program.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkTask {
    pub task_id: String,
    pub origin: Origin,
    pub prefix: String,
    pub suffix: String,
    pub canonical_middle: String,
    pub tests: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
}

impl BenchmarkTask {
    pub fn program(&self) -> String {
        format!("{}{}{}", self.prefix, self.canonical_middle, self.suffix)
    }

    pub fn triplet(&self) -> FimTriplet {
        FimTriplet {
            prefix: self.prefix.clone(),
            middle: self.canonical_middle.clone(),
            suffix: self.suffix.clone(),
            language: self.origin.language().to_string(),
            sample_id: self.task_id.clone(),
        }
    }
}

/// One task per non-blank line of `solution`, masking that line.
pub fn derive_single_line_tasks(
    problem_id: &str,
    solution: &str,
    tests: &str,
) -> Result<Vec<BenchmarkTask>> {
    if solution.trim().is_empty() {
        return Err(Error::BlankSolution(problem_id.to_string()));
    }
    let lines = split_lines(solution);
    let mut offset = 0;
    let mut tasks = Vec::new();
    for (k, line) in lines.iter().enumerate() {
        let start = offset;
        offset += line.len();
        if line.trim().is_empty() {
            continue;
        }
        tasks.push(BenchmarkTask {
            task_id: format!("{problem_id}/L{k}"),
            origin: Origin::Custom,
            prefix: solution[..start].to_string(),
            suffix: solution[offset..].to_string(),
            canonical_middle: line.to_string(),
            tests: tests.to_string(),
            instruction: None,
        });
    }
    Ok(tasks)
}

/// A HumanEval-format problem line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanEvalProblem {
    pub task_id: String,
    pub prompt: String,
    pub canonical_solution: String,
    pub test: String,
    pub entry_point: String,
}

impl HumanEvalProblem {
    pub fn test_program(&self) -> String {
        format!("{}\n\ncheck({})\n", self.test, self.entry_point)
    }

    /// Single-line tasks over the canonical solution, with the prompt as
    /// leading context. With `strip`, docstrings are removed from the whole
    /// program first.
    pub fn derive_tasks(&self, strip: bool) -> Result<Vec<BenchmarkTask>> {
        let program = format!("{}{}", self.prompt, self.canonical_solution);
        let (program, split) = if strip {
            let edits = docstring::docstring_edits(&program);
            let split = docstring::map_offset(&edits, self.prompt.len());
            (docstring::apply_edits(&program, &edits), split)
        } else {
            (program, self.prompt.len())
        };
        // a prompt without a trailing newline shares its last line with the body
        let split = program[..split].rfind('\n').map_or(0, |nl| nl + 1);
        let (preamble, body) = program.split_at(split);
        let mut tasks = derive_single_line_tasks(&self.task_id, body, &self.test_program())?;
        for task in &mut tasks {
            task.origin = Origin::HumanevalInfilling;
            task.prefix.insert_str(0, preamble);
        }
        Ok(tasks)
    }
}

fn last_lines(text: &str, keep: usize) -> &str {
    let lines = split_lines(text);
    if lines.len() <= keep {
        return text;
    }
    let drop: usize = lines[..lines.len() - keep].iter().map(|l| l.len()).sum();
    &text[drop..]
}

fn first_lines(text: &str, keep: usize) -> &str {
    let lines = split_lines(text);
    if lines.len() <= keep {
        return text;
    }
    let len: usize = lines[..keep].iter().map(|l| l.len()).sum();
    &text[..len]
}

/// Keeps the last `prefix_keep` lines of the prefix and the first
/// `suffix_keep` lines of the suffix.
pub fn truncate_context(task: &BenchmarkTask, prefix_keep: usize, suffix_keep: usize) -> BenchmarkTask {
    BenchmarkTask {
        prefix: last_lines(&task.prefix, prefix_keep).to_string(),
        suffix: first_lines(&task.suffix, suffix_keep).to_string(),
        ..task.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingPlan {
    pub population: u64,
    pub confidence: f64,
    pub margin: f64,
    pub proportion: f64,
    pub sample_size: u64,
}

impl SamplingPlan {
    /// Cochran's sample size with finite population correction:
    /// `n0 = z² p (1 - p) / e²`, `n = ceil(n0 N / (N + n0 - 1))`, where `z` is
    /// the two-sided normal quantile for `confidence`.
    pub fn new(population: u64, confidence: f64, margin: f64, proportion: f64) -> Result<Self> {
        if population == 0 {
            return Err(Error::InvalidParameter("population must be at least 1".into()));
        }
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        if !open_unit(confidence) || !open_unit(margin) {
            return Err(Error::InvalidParameter(format!(
                "confidence and margin must be in (0, 1), got {confidence} and {margin}"
            )));
        }
        if !(0.0..=1.0).contains(&proportion) {
            return Err(Error::InvalidParameter(format!(
                "proportion must be in [0, 1], got {proportion}"
            )));
        }
        let z = Normal::standard().inverse_cdf(1.0 - (1.0 - confidence) / 2.0);
        let n0 = z * z * proportion * (1.0 - proportion) / (margin * margin);
        let big_n = population as f64;
        // (N - 1) first so that N = 1 gives exactly n0 / n0
        let n = (n0 * big_n / ((big_n - 1.0) + n0)).ceil() as u64;
        Ok(SamplingPlan {
            population,
            confidence,
            margin,
            proportion,
            sample_size: n.clamp(1, population),
        })
    }
}

pub fn sample_size(population: u64, confidence: f64, margin: f64, proportion: f64) -> Result<u64> {
    SamplingPlan::new(population, confidence, margin, proportion).map(|p| p.sample_size)
}

/// Seeded uniform sample of `n` items without replacement, kept in their
/// original order.
pub fn draw_subset<T: Clone>(items: &[T], n: usize, seed: u64) -> Result<Vec<T>> {
    if n > items.len() {
        return Err(Error::SubsetTooLarge {
            requested: n,
            available: items.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, items.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| items[i].clone()).collect())
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct AttachReport {
    /// Tasks whose synthesized instruction failed the sentence filter, with
    /// the last response.
    pub rejected: Vec<(String, String)>,
    /// Tasks whose backend calls failed.
    pub failed: Vec<(String, String)>,
}

/// Synthesizes an instruction for each task from `(prefix, canonical_middle,
/// suffix)` with the same prompts used for training data. Tasks whose
/// synthesis is rejected or fails keep `instruction = None`.
pub fn attach_instructions(
    tasks: Vec<BenchmarkTask>,
    backend: &dyn SynthBackend,
    retries: usize,
    concurrency: usize,
) -> (Vec<BenchmarkTask>, AttachReport) {
    let triplets: Vec<FimTriplet> = tasks.iter().map(BenchmarkTask::triplet).collect();
    let outcomes = synthesize_all(backend, &triplets, retries, concurrency);
    let mut report = AttachReport::default();
    let tasks = tasks
        .into_iter()
        .zip(outcomes)
        .map(|(mut task, outcome)| {
            match outcome {
                Ok(SynthOutcome::Accepted { record, .. }) => task.instruction = Some(record.instruction),
                Ok(SynthOutcome::Rejected { last_response, .. }) => {
                    report.rejected.push((task.task_id.clone(), last_response))
                }
                Err(e) => report.failed.push((task.task_id.clone(), e.to_string())),
            }
            task
        })
        .collect();
    (tasks, report)
}
