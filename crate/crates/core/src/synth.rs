//! Instruction synthesis: prompt construction, response cleanup, the
//! one-sentence filter, and pluggable text generation backends.

use std::collections::VecDeque;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{FimTriplet, InstructionRecord};
use crate::{Error, Result};

pub const SYSTEM_PROMPT: &str = "You are a senior software engineer. When given a code snippet containing sections marked with <explain></explain> tags, write a single, concise instruction that explicitly describes the functional purpose of the code to be implemented within the tagged area. Focus on what needs to be achieved (e.g., inputs, outputs, logic) without prescribing how to implement it (e.g., specific methods, libraries). Ensure clarity and brevity so a developer can directly translate the instruction into code. Only write the instruction, no other text.";

pub const EXPLAIN_OPEN: &str = "<explain>";
pub const EXPLAIN_CLOSE: &str = "</explain>";

pub const DEFAULT_RETRIES: usize = 2;
pub const DEFAULT_CONCURRENCY: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPair {
    pub system: String,
    pub user: String,
}

/// Builds the system and user prompts for one triplet. The middle is wrapped
/// in `<explain>` tags inside a fenced block tagged with the language.
pub fn build_prompts(triplet: &FimTriplet) -> Result<PromptPair> {
    if triplet.middle.contains(EXPLAIN_OPEN) || triplet.middle.contains(EXPLAIN_CLOSE) {
        return Err(Error::ExplainTagInMiddle);
    }
    let code = format!(
        "{}{EXPLAIN_OPEN}{}{EXPLAIN_CLOSE}{}",
        triplet.prefix, triplet.middle, triplet.suffix
    );
    Ok(PromptPair {
        system: SYSTEM_PROMPT.to_string(),
        user: format!(
            "Explain the code in the <explain></explain> tags using one simple sentence: ```{}\n{}\n```",
            triplet.language, code
        ),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    Empty,
    Multiline,
    MultipleSentences,
}

impl Verdict {
    pub fn is_accept(self) -> bool {
        matches!(self, Verdict::Accept)
    }
}

const ABBREVIATIONS: [&str; 4] = ["e.g.", "i.e.", "etc.", "vs."];

/// Accepts text that is a single sentence: non-empty after trimming, no line
/// breaks, and at most one `.`/`!`/`?`. Periods inside `e.g.`, `i.e.`,
/// `etc.`, `vs.` and periods next to a digit are not counted.
pub fn one_sentence_filter(text: &str) -> Verdict {
    let text = text.trim();
    if text.is_empty() {
        return Verdict::Reject(RejectReason::Empty);
    }
    if text.contains(['\n', '\r']) {
        return Verdict::Reject(RejectReason::Multiline);
    }
    let bytes = text.as_bytes();
    let lower = text.to_ascii_lowercase();
    let mut exempt = vec![false; bytes.len()];
    for abbr in ABBREVIATIONS {
        for (at, _) in lower.match_indices(abbr) {
            let word_start = at == 0 || !bytes[at - 1].is_ascii_alphanumeric();
            if word_start {
                exempt[at..at + abbr.len()].iter_mut().for_each(|e| *e = true);
            }
        }
    }
    let terminators = bytes
        .iter()
        .enumerate()
        .filter(|&(i, &b)| match b {
            b'!' | b'?' => true,
            b'.' => {
                let digit_before = i > 0 && bytes[i - 1].is_ascii_digit();
                let digit_after = bytes.get(i + 1).is_some_and(u8::is_ascii_digit);
                !exempt[i] && !digit_before && !digit_after
            }
            _ => false,
        })
        .count();
    if terminators <= 1 {
        Verdict::Accept
    } else {
        Verdict::Reject(RejectReason::MultipleSentences)
    }
}

/// Strips surrounding whitespace, markdown code fences, and a matching pair
/// of surrounding quotes from a model response.
pub fn clean_response(raw: &str) -> String {
    let mut text = raw.trim();
    if let Some(rest) = text.strip_prefix("```") {
        // drop an optional info string on the opening fence
        let rest = match rest.find('\n') {
            Some(nl) => &rest[nl + 1..],
            None => rest,
        };
        text = rest.strip_suffix("```").unwrap_or(rest).trim();
    }
    loop {
        let mut chars = text.chars();
        let (Some(first), Some(last)) = (chars.next(), chars.next_back()) else {
            break;
        };
        let paired = matches!(
            (first, last),
            ('"', '"') | ('\'', '\'') | ('`', '`') | ('\u{201c}', '\u{201d}') | ('\u{2018}', '\u{2019}')
        );
        if !paired {
            break;
        }
        text = text[first.len_utf8()..text.len() - last.len_utf8()].trim();
    }
    text.to_string()
}

/// A text generation service used to synthesize instructions.
pub trait SynthBackend: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, system: &str, user: &str) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SynthOutcome {
    Accepted {
        record: InstructionRecord,
        retries_used: usize,
    },
    Rejected {
        last_response: String,
        attempts: usize,
    },
}

impl SynthOutcome {
    pub fn record(&self) -> Option<&InstructionRecord> {
        match self {
            SynthOutcome::Accepted { record, .. } => Some(record),
            SynthOutcome::Rejected { .. } => None,
        }
    }
}

/// Asks the backend for an instruction, retrying up to `retries` extra times
/// on filter rejection or transport failure. A final filter rejection is a
/// [`SynthOutcome::Rejected`]; a final transport failure is an error.
pub fn synthesize_instruction(
    backend: &dyn SynthBackend,
    triplet: &FimTriplet,
    retries: usize,
) -> Result<SynthOutcome> {
    let prompts = build_prompts(triplet)?;
    let attempts = retries + 1;
    let mut last: Option<Result<String>> = None;
    for attempt in 0..attempts {
        match backend.complete(&prompts.system, &prompts.user) {
            Ok(raw) => {
                let instruction = clean_response(&raw);
                if one_sentence_filter(&instruction).is_accept() {
                    return Ok(SynthOutcome::Accepted {
                        record: InstructionRecord {
                            triplet: triplet.clone(),
                            instruction,
                            synthesizer: backend.name().to_string(),
                        },
                        retries_used: attempt,
                    });
                }
                last = Some(Ok(instruction));
            }
            Err(e) => last = Some(Err(e)),
        }
    }
    match last {
        Some(Ok(last_response)) => Ok(SynthOutcome::Rejected {
            last_response,
            attempts,
        }),
        Some(Err(e)) => Err(e),
        None => unreachable!("at least one attempt is made"),
    }
}

/// Runs [`synthesize_instruction`] over many triplets with at most
/// `concurrency` calls in flight. Output order follows input order.
pub fn synthesize_all(
    backend: &dyn SynthBackend,
    triplets: &[FimTriplet],
    retries: usize,
    concurrency: usize,
) -> Vec<Result<SynthOutcome>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(concurrency.max(1))
        .build()
        .expect("thread pool");
    pool.install(|| {
        triplets
            .par_iter()
            .map(|t| synthesize_instruction(backend, t, retries))
            .collect()
    })
}

/// Deterministic offline backend: describes the tagged span by its size and
/// language. Never emits a sentence terminator.
#[derive(Debug, Default, Clone)]
pub struct TemplateBackend;

impl SynthBackend for TemplateBackend {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, _system: &str, user: &str) -> Result<String> {
        let block = user.split("```").nth(1).unwrap_or("");
        let (language, code) = block.split_once('\n').unwrap_or(("code", ""));
        let tagged = code
            .split_once(EXPLAIN_OPEN)
            .and_then(|(_, rest)| rest.split_once(EXPLAIN_CLOSE))
            .map(|(middle, _)| middle)
            .unwrap_or("");
        let lines = tagged.lines().filter(|l| !l.trim().is_empty()).count().max(1);
        let noun = if lines == 1 { "line" } else { "lines" };
        Ok(format!("Implement the missing {lines} {noun} of {language} logic"))
    }
}

/// Replays a fixed transcript of responses; `Err` entries simulate transport
/// failures. When the transcript runs out the last entry repeats.
#[derive(Debug)]
pub struct ScriptedBackend {
    name: String,
    script: Mutex<VecDeque<std::result::Result<String, String>>>,
    last: Mutex<Option<std::result::Result<String, String>>>,
    calls: Mutex<usize>,
}

impl ScriptedBackend {
    pub fn new(script: Vec<std::result::Result<String, String>>) -> Self {
        ScriptedBackend {
            name: "scripted".into(),
            script: Mutex::new(script.into()),
            last: Mutex::new(None),
            calls: Mutex::new(0),
        }
    }

    pub fn always(response: &str) -> Self {
        Self::new(vec![Ok(response.to_string())])
    }

    pub fn calls(&self) -> usize {
        *self.calls.lock().unwrap()
    }
}

impl SynthBackend for ScriptedBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, _system: &str, _user: &str) -> Result<String> {
        *self.calls.lock().unwrap() += 1;
        let next = self.script.lock().unwrap().pop_front();
        let mut last = self.last.lock().unwrap();
        let entry = match next {
            Some(entry) => {
                *last = Some(entry.clone());
                entry
            }
            None => last.clone().unwrap_or_else(|| Err("empty script".into())),
        };
        entry.map_err(Error::Backend)
    }
}

/// Backend driven by a closure over the user prompt.
pub struct FnBackend<F> {
    name: String,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&str) -> Result<String> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        FnBackend {
            name: name.into(),
            f,
        }
    }
}

impl<F> SynthBackend for FnBackend<F>
where
    F: Fn(&str) -> Result<String> + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, _system: &str, user: &str) -> Result<String> {
        (self.f)(user)
    }
}

pub const API_BASE_ENV: &str = "IFIM_API_BASE";
pub const API_KEY_ENV: &str = "IFIM_API_KEY";

/// OpenAI-compatible chat-completions client. Sends only the model and the
/// two messages, so decoding parameters are the provider's defaults.
pub struct ChatCompletionsBackend {
    base_url: String,
    api_key: Option<String>,
    model: String,
    label: String,
    client: reqwest::blocking::Client,
}

impl ChatCompletionsBackend {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, model: impl Into<String>) -> Self {
        let model = model.into();
        ChatCompletionsBackend {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            label: format!("{model} (provider default decoding)"),
            model,
            client: reqwest::blocking::Client::new(),
        }
    }

    pub fn from_env(model: impl Into<String>) -> Result<Self> {
        let base = std::env::var(API_BASE_ENV)
            .map_err(|_| Error::Config(format!("{API_BASE_ENV} is not set")))?;
        Ok(Self::new(base, std::env::var(API_KEY_ENV).ok(), model))
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 2],
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

impl SynthBackend for ChatCompletionsBackend {
    fn name(&self) -> &str {
        &self.label
    }

    fn complete(&self, system: &str, user: &str) -> Result<String> {
        let body = ChatRequest {
            model: &self.model,
            messages: [
                ChatMessage {
                    role: "system",
                    content: system,
                },
                ChatMessage {
                    role: "user",
                    content: user,
                },
            ],
        };
        let mut req = self
            .client
            .post(format!("{}/chat/completions", self.base_url))
            .json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Error::Backend(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Error::Backend(format!("HTTP {status}: {text}")));
        }
        let parsed: ChatResponse = resp.json().map_err(|e| Error::Backend(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Error::Backend("response has no choices".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triplet(p: &str, m: &str, s: &str) -> FimTriplet {
        FimTriplet {
            prefix: p.into(),
            middle: m.into(),
            suffix: s.into(),
            language: "python".into(),
            sample_id: "t".into(),
        }
    }

    #[test]
    fn prompts_embed_tagged_code() {
        let p = build_prompts(&triplet("a=1\n", "b=2\n", "c=3\n")).unwrap();
        assert_eq!(p.system, SYSTEM_PROMPT);
        assert!(p.system.starts_with("You are a senior software engineer."));
        assert_eq!(
            p.user,
            "Explain the code in the <explain></explain> tags using one simple sentence: ```python\na=1\n<explain>b=2\n</explain>c=3\n\n```"
        );
    }

    #[test]
    fn prompts_reject_tagged_middle() {
        assert!(matches!(
            build_prompts(&triplet("", "x</explain>", "")),
            Err(Error::ExplainTagInMiddle)
        ));
        assert!(build_prompts(&triplet("", "<explain>", "")).is_err());
    }

    #[test]
    fn filter_examples() {
        assert_eq!(one_sentence_filter("Filter out negative numbers."), Verdict::Accept);
        assert_eq!(
            one_sentence_filter("Sort the list. Then return it."),
            Verdict::Reject(RejectReason::MultipleSentences)
        );
        assert_eq!(
            one_sentence_filter("Compute, e.g., the running sum of values"),
            Verdict::Accept
        );
        assert_eq!(one_sentence_filter("   "), Verdict::Reject(RejectReason::Empty));
        assert_eq!(
            one_sentence_filter("Do a\nDo b"),
            Verdict::Reject(RejectReason::Multiline)
        );
        assert_eq!(one_sentence_filter("Scale by 2.5 and round."), Verdict::Accept);
    }

    #[test]
    fn cleanup_strips_quotes_and_fences() {
        assert_eq!(clean_response("  \"Return the sum.\" "), "Return the sum.");
        assert_eq!(clean_response("```text\nReturn the sum.\n```"), "Return the sum.");
        assert_eq!(clean_response("`x`"), "x");
        assert_eq!(clean_response("\u{201c}Add one\u{201d}"), "Add one");
        assert_eq!(clean_response("\"unbalanced"), "\"unbalanced");
    }

    #[test]
    fn synthesize_accepts_first_good_answer() {
        let backend = ScriptedBackend::always("Return the maximum value.");
        let out = synthesize_instruction(&backend, &triplet("", "x\n", ""), 2).unwrap();
        match out {
            SynthOutcome::Accepted {
                record,
                retries_used,
            } => {
                assert_eq!(record.instruction, "Return the maximum value.");
                assert_eq!(record.synthesizer, "scripted");
                assert_eq!(retries_used, 0);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(backend.calls(), 1);
    }

    #[test]
    fn synthesize_rejects_after_retries() {
        let backend = ScriptedBackend::always("Sort it. Return it.");
        let out = synthesize_instruction(&backend, &triplet("", "x\n", ""), 2).unwrap();
        assert!(matches!(out, SynthOutcome::Rejected { attempts: 3, .. }));
        assert_eq!(backend.calls(), 3);
    }

    #[test]
    fn synthesize_recovers_from_transport_failure() {
        let backend = ScriptedBackend::new(vec![
            Err("connection reset".into()),
            Ok("Return the maximum value.".into()),
        ]);
        let out = synthesize_instruction(&backend, &triplet("", "x\n", ""), 2).unwrap();
        assert!(matches!(out, SynthOutcome::Accepted { retries_used: 1, .. }));
        assert_eq!(backend.calls(), 2);
    }

    #[test]
    fn synthesize_surfaces_persistent_transport_failure() {
        let backend = ScriptedBackend::new(vec![Err("down".into())]);
        let err = synthesize_instruction(&backend, &triplet("", "x\n", ""), 1).unwrap_err();
        assert!(matches!(err, Error::Backend(_)));
        assert_eq!(backend.calls(), 2);
    }

    #[test]
    fn template_backend_is_deterministic_and_passes_filter() {
        let t = triplet("def f(x):\n", "    y = x.strip()\n    return y\n", "");
        let p = build_prompts(&t).unwrap();
        let a = TemplateBackend.complete(&p.system, &p.user).unwrap();
        assert_eq!(a, "Implement the missing 2 lines of python logic");
        assert!(one_sentence_filter(&a).is_accept());
    }

    #[test]
    fn batch_keeps_input_order() {
        let backend = FnBackend::new("echo", |user: &str| {
            let code = user.split_once("```").unwrap().1;
            let tagged = code.split_once("<explain>").unwrap().1;
            Ok(format!("Emit {}", tagged.split_once('\n').unwrap().0))
        });
        let triplets: Vec<_> = (0..40).map(|i| triplet("", &format!("v{i}\n"), "")).collect();
        let out = synthesize_all(&backend, &triplets, 0, 8);
        for (i, o) in out.iter().enumerate() {
            let rec = o.as_ref().unwrap().record().unwrap();
            assert_eq!(rec.instruction, format!("Emit v{i}"));
        }
    }
}
