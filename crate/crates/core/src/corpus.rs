//! Code corpora: ingestion, middle-span selection, decontamination, and
//! dataset mixing.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A raw source file or snippet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeSample {
    pub id: String,
    pub language: String,
    pub code: String,
    #[serde(default)]
    pub source: String,
}

/// A prefix / middle / suffix cut of one sample.
///
/// `prefix + middle + suffix` is the originating code, byte for byte.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FimTriplet {
    pub prefix: String,
    pub middle: String,
    pub suffix: String,
    pub language: String,
    pub sample_id: String,
}

impl FimTriplet {
    pub fn joined(&self) -> String {
        let mut out =
            String::with_capacity(self.prefix.len() + self.middle.len() + self.suffix.len());
        out.push_str(&self.prefix);
        out.push_str(&self.middle);
        out.push_str(&self.suffix);
        out
    }
}

/// A triplet paired with its synthesized one-sentence instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub triplet: FimTriplet,
    pub instruction: String,
    pub synthesizer: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Ifim,
    PlainFim,
    Cfim,
}

impl Tag {
    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Ifim => "ifim",
            Tag::PlainFim => "plain_fim",
            Tag::Cfim => "cfim",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedRecord {
    pub tag: Tag,
    pub record: InstructionRecord,
}

/// A dataset where a seeded fraction of records is marked for IFIM rendering.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedDataset {
    pub records: Vec<TaggedRecord>,
    pub ratio: f64,
    pub seed: u64,
}

impl MixedDataset {
    pub fn count(&self, tag: Tag) -> usize {
        self.records.iter().filter(|r| r.tag == tag).count()
    }

    /// Retags every IFIM entry as comment-FIM, converting its triplet with
    /// [`to_cfim`]. Plain FIM entries are left alone.
    pub fn into_cfim(self, comment_marker: impl Fn(&str) -> Option<String>) -> Result<Vec<CfimEntry>> {
        self.records
            .into_iter()
            .map(|entry| match entry.tag {
                Tag::Ifim => {
                    let marker = comment_marker(&entry.record.triplet.language).ok_or_else(|| {
                        Error::UnknownLanguage(entry.record.triplet.language.clone())
                    })?;
                    let triplet = to_cfim(&entry.record, &marker)?;
                    Ok(CfimEntry::Cfim(triplet))
                }
                _ => Ok(CfimEntry::Plain(entry.record)),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CfimEntry {
    Cfim(FimTriplet),
    Plain(InstructionRecord),
}

/// The on-disk triplet / record line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripletLine {
    pub id: String,
    pub language: String,
    pub prefix: String,
    pub middle: String,
    pub suffix: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<Tag>,
}

impl TripletLine {
    pub fn from_record(record: &InstructionRecord) -> Self {
        let t = &record.triplet;
        TripletLine {
            id: t.sample_id.clone(),
            language: t.language.clone(),
            prefix: t.prefix.clone(),
            middle: t.middle.clone(),
            suffix: t.suffix.clone(),
            instruction: Some(record.instruction.clone()),
            tag: None,
        }
    }

    pub fn triplet(&self) -> FimTriplet {
        FimTriplet {
            prefix: self.prefix.clone(),
            middle: self.middle.clone(),
            suffix: self.suffix.clone(),
            language: self.language.clone(),
            sample_id: self.id.clone(),
        }
    }

    /// Returns the record form when an instruction is present.
    pub fn record(&self, synthesizer: &str) -> Option<InstructionRecord> {
        self.instruction.as_ref().map(|instruction| InstructionRecord {
            triplet: self.triplet(),
            instruction: instruction.clone(),
            synthesizer: synthesizer.to_string(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    #[default]
    Jsonl,
}

pub fn ingest_samples(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Vec<CodeSample>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        CorpusFormat::Jsonl => ingest_jsonl(BufReader::new(file)),
    }
}

#[derive(Deserialize)]
struct RawSample {
    id: String,
    language: String,
    code: String,
    #[serde(default)]
    source: String,
}

/// Parses a JSONL corpus. Blank lines are skipped; later duplicate ids are
/// rejected with the line they appear on.
pub fn ingest_jsonl<R: BufRead>(reader: R) -> Result<Vec<CodeSample>> {
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawSample = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        if raw.code.is_empty() {
            return Err(Error::Malformed {
                line: line_no,
                message: "empty \"code\"".into(),
            });
        }
        if raw.language.trim().is_empty() {
            return Err(Error::Malformed {
                line: line_no,
                message: "empty \"language\"".into(),
            });
        }
        if !seen.insert(raw.id.clone()) {
            return Err(Error::DuplicateId {
                line: line_no,
                id: raw.id,
            });
        }
        samples.push(CodeSample {
            id: raw.id,
            language: raw.language.trim().to_lowercase(),
            code: raw.code,
            source: raw.source,
        });
    }
    Ok(samples)
}

/// Splits text into lines that keep their terminating `\n`. A final line
/// without a newline is still a line.
pub fn split_lines(text: &str) -> Vec<&str> {
    text.split_inclusive('\n').collect()
}

/// Cuts a contiguous block of `k` whole lines out of the sample, `k` uniform
/// in `[min_lines, min(max_lines, line_count)]` and the start uniform among
/// the valid positions.
pub fn select_middle_span(
    sample: &CodeSample,
    seed: u64,
    min_lines: usize,
    max_lines: usize,
) -> Result<FimTriplet> {
    if min_lines == 0 || min_lines > max_lines {
        return Err(Error::InvalidParameter(format!(
            "need 1 <= min_lines <= max_lines, got {min_lines}..{max_lines}"
        )));
    }
    if sample.code.trim().is_empty() {
        return Err(Error::BlankCode(sample.id.clone()));
    }
    let lines = split_lines(&sample.code);
    let (k, start) = draw_span(lines.len(), seed, min_lines, max_lines);

    let offset_of = |line: usize| -> usize { lines[..line].iter().map(|l| l.len()).sum() };
    let begin = offset_of(start);
    let end = offset_of(start + k);
    Ok(FimTriplet {
        prefix: sample.code[..begin].to_string(),
        middle: sample.code[begin..end].to_string(),
        suffix: sample.code[end..].to_string(),
        language: sample.language.clone(),
        sample_id: sample.id.clone(),
    })
}

/// The `(line_count, start)` draw behind [`select_middle_span`].
pub fn draw_span(line_count: usize, seed: u64, min_lines: usize, max_lines: usize) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hi = max_lines.min(line_count);
    let lo = min_lines.min(hi);
    let k = rng.random_range(lo..=hi);
    let start = rng.random_range(0..=line_count - k);
    (k, start)
}

/// Lowercases, drops `#` and `//` comments to end of line, and collapses
/// whitespace runs to one space.
pub fn normalize_for_match(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.lines() {
        let cut = [line.find('#'), line.find("//")]
            .into_iter()
            .flatten()
            .min()
            .unwrap_or(line.len());
        out.push_str(&line[..cut].to_lowercase());
        out.push(' ');
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Splits samples into `(kept, removed)`; a sample is removed when its
/// normalized code contains any normalized contaminant. Contaminants that
/// normalize to nothing are ignored.
pub fn decontaminate(
    samples: Vec<CodeSample>,
    contaminants: &[String],
) -> (Vec<CodeSample>, Vec<CodeSample>) {
    let needles: Vec<String> = contaminants
        .iter()
        .map(|c| normalize_for_match(c))
        .filter(|c| !c.is_empty())
        .collect();
    if needles.is_empty() {
        return (samples, Vec::new());
    }
    samples.into_iter().partition(|sample| {
        let hay = normalize_for_match(&sample.code);
        !needles.iter().any(|n| hay.contains(n.as_str()))
    })
}

/// Number of IFIM-tagged records for `n` records at `ratio`. Rounds half
/// away from zero.
pub fn ifim_count(n: usize, ratio: f64) -> usize {
    (ratio * n as f64).round() as usize
}

/// Tags exactly `round(ratio * n)` records as IFIM, chosen by a seeded
/// shuffle of indices; the rest are plain FIM. Record order is preserved.
pub fn mix_ratio(records: Vec<InstructionRecord>, ratio: f64, seed: u64) -> Result<MixedDataset> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidParameter(format!(
            "ratio must be within [0, 1], got {ratio}"
        )));
    }
    let n = records.len();
    let want = ifim_count(n, ratio);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_ifim = vec![false; n];
    for &idx in &order[..want] {
        is_ifim[idx] = true;
    }
    let records = records
        .into_iter()
        .zip(is_ifim)
        .map(|(record, ifim)| TaggedRecord {
            tag: if ifim { Tag::Ifim } else { Tag::PlainFim },
            record,
        })
        .collect();
    Ok(MixedDataset {
        records,
        ratio,
        seed,
    })
}

/// Appends the instruction to the prefix as a single line comment.
pub fn to_cfim(record: &InstructionRecord, comment_marker: &str) -> Result<FimTriplet> {
    if record.instruction.contains(['\n', '\r']) {
        return Err(Error::MultilineInstruction);
    }
    let mut triplet = record.triplet.clone();
    triplet.prefix = format!(
        "{}{} {}\n",
        record.triplet.prefix, comment_marker, record.instruction
    );
    Ok(triplet)
}

/// Line-comment opener for common languages.
pub fn line_comment_marker(language: &str) -> Option<&'static str> {
    match language {
        "python" | "ruby" | "shell" | "bash" | "sh" | "perl" | "r" | "julia" | "yaml"
        | "toml" | "powershell" | "elixir" | "nim" => Some("#"),
        "c" | "cpp" | "c++" | "java" | "javascript" | "typescript" | "rust" | "go" | "csharp"
        | "c#" | "kotlin" | "swift" | "scala" | "php" | "dart" | "zig" => Some("//"),
        "sql" | "haskell" | "lua" => Some("--"),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(code: &str) -> CodeSample {
        CodeSample {
            id: "s".into(),
            language: "python".into(),
            code: code.into(),
            source: "test".into(),
        }
    }

    fn record(prefix: &str, instruction: &str) -> InstructionRecord {
        InstructionRecord {
            triplet: FimTriplet {
                prefix: prefix.into(),
                middle: "m\n".into(),
                suffix: "s\n".into(),
                language: "python".into(),
                sample_id: "r".into(),
            },
            instruction: instruction.into(),
            synthesizer: "mock".into(),
        }
    }

    #[test]
    fn ingest_two_records_in_order() {
        let data = concat!(
            r#"{"id":"a","language":"Python","code":"x = 1\n","source":"oss"}"#,
            "\n",
            r#"{"id":"b","language":"rust","code":"fn main() {}\n"}"#,
            "\n"
        );
        let got = ingest_jsonl(data.as_bytes()).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].id, "a");
        assert_eq!(got[0].language, "python");
        assert_eq!(got[1].id, "b");
        assert_eq!(got[1].source, "");
    }

    #[test]
    fn ingest_empty_is_empty() {
        assert!(ingest_jsonl("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn ingest_missing_code_names_line() {
        let data = concat!(
            r#"{"id":"a","language":"python","code":"a"}"#,
            "\n",
            r#"{"id":"b","language":"python","code":"b"}"#,
            "\n",
            r#"{"id":"c","language":"python"}"#,
            "\n"
        );
        match ingest_jsonl(data.as_bytes()) {
            Err(Error::Malformed { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("code"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ingest_rejects_duplicate_id() {
        let data = concat!(
            r#"{"id":"a","language":"python","code":"a"}"#,
            "\n",
            r#"{"id":"a","language":"python","code":"b"}"#
        );
        assert!(matches!(
            ingest_jsonl(data.as_bytes()),
            Err(Error::DuplicateId { line: 2, .. })
        ));
    }

    #[test]
    fn ingest_missing_file() {
        assert!(matches!(
            ingest_samples("/nonexistent/corpus.jsonl", CorpusFormat::Jsonl),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn one_line_sample_is_all_middle() {
        let t = select_middle_span(&sample("print(1)"), 7, 1, 3).unwrap();
        assert_eq!(t.prefix, "");
        assert_eq!(t.middle, "print(1)");
        assert_eq!(t.suffix, "");
    }

    #[test]
    fn three_line_sample_middle_line() {
        let code = "a = 1\nb = 2\nc = 3\n";
        let lines = split_lines(code);
        // Enumerate every outcome of the draw and find a seed that picks
        // k=1 at the second line.
        let seed = (0..10_000u64)
            .find(|&s| draw_span(3, s, 1, 3) == (1, 1))
            .expect("some seed selects line 2");
        let t = select_middle_span(&sample(code), seed, 1, 3).unwrap();
        assert_eq!(t.middle, lines[1]);
        assert_eq!(t.middle, "b = 2\n");
        assert_eq!(t.prefix, "a = 1\n");
        assert_eq!(t.suffix, "c = 3\n");

        // Every seeded outcome is one of the enumerated (k, start) pairs.
        let mut outcomes = Vec::new();
        for k in 1..=3 {
            for start in 0..=(3 - k) {
                outcomes.push((k, start));
            }
        }
        for s in 0..500 {
            assert!(outcomes.contains(&draw_span(3, s, 1, 3)));
        }
    }

    #[test]
    fn span_is_deterministic() {
        let code: String = (0..10).map(|i| format!("line{i}\n")).collect();
        let a = select_middle_span(&sample(&code), 42, 1, 3).unwrap();
        let b = select_middle_span(&sample(&code), 42, 1, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn blank_code_errors() {
        assert!(matches!(
            select_middle_span(&sample(" \n\t\n"), 1, 1, 3),
            Err(Error::BlankCode(_))
        ));
        assert!(matches!(
            select_middle_span(&sample("x"), 1, 0, 3),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn keeps_crlf_and_missing_final_newline() {
        let code = "a\r\nb\r\nc";
        for seed in 0..50 {
            let t = select_middle_span(&sample(code), seed, 1, 3).unwrap();
            assert_eq!(t.joined(), code);
        }
    }

    #[test]
    fn decontaminate_verbatim_and_unrelated() {
        let contaminant = "def add(a, b):\n    return a + b\n".to_string();
        let samples = vec![
            sample("import os\ndef add(a, b):\n    return a + b\nprint(add(1, 2))\n"),
            CodeSample {
                id: "other".into(),
                ..sample("def mul(a, b):\n    return a * b\n")
            },
        ];
        let (kept, removed) = decontaminate(samples, &[contaminant]);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, "other");
        assert_eq!(removed.len(), 1);
    }

    #[test]
    fn decontaminate_reindented() {
        let contaminant = "def add(a, b):\n    total = a + b\n    return total\n";
        let planted = "x = 0\ndef add(a, b):\n\n\ttotal = a + b\n\n\n\treturn total  # done\n";
        // By hand: both sides normalize to "...def add(a, b): total = a + b return total..."
        assert_eq!(
            normalize_for_match(contaminant),
            "def add(a, b): total = a + b return total"
        );
        assert_eq!(
            normalize_for_match(planted),
            "x = 0 def add(a, b): total = a + b return total"
        );
        let (kept, removed) = decontaminate(vec![sample(planted)], &[contaminant.to_string()]);
        assert!(kept.is_empty());
        assert_eq!(removed.len(), 1);
    }

    #[test]
    fn decontaminate_empty_list_keeps_all() {
        let (kept, removed) = decontaminate(vec![sample("a"), sample("b")], &[]);
        assert_eq!(kept.len(), 2);
        assert!(removed.is_empty());
        let (kept, _) = decontaminate(vec![sample("a")], &["  # only a comment".into()]);
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn mixer_edges() {
        let recs: Vec<_> = (0..8).map(|i| record(&format!("p{i}\n"), "do it")).collect();
        let none = mix_ratio(recs.clone(), 0.0, 3).unwrap();
        assert_eq!(none.count(Tag::Ifim), 0);
        assert_eq!(none.count(Tag::PlainFim), 8);
        let all = mix_ratio(recs.clone(), 1.0, 3).unwrap();
        assert_eq!(all.count(Tag::Ifim), 8);
        let quarter = mix_ratio(recs.clone(), 0.25, 3).unwrap();
        assert_eq!(quarter.count(Tag::Ifim), 2);
        for (mixed, orig) in quarter.records.iter().zip(&recs) {
            assert_eq!(&mixed.record, orig);
        }
        assert_eq!(quarter, mix_ratio(recs.clone(), 0.25, 3).unwrap());
        assert!(mix_ratio(recs, 1.5, 3).is_err());
    }

    #[test]
    fn mixer_rounds_half_away_from_zero() {
        assert_eq!(ifim_count(2, 0.25), 1);
        assert_eq!(ifim_count(6, 0.25), 2);
        assert_eq!(ifim_count(1, 0.5), 1);
        assert_eq!(ifim_count(3, 0.5), 2);
    }

    #[test]
    fn cfim_construction() {
        let t = to_cfim(&record("a\n", "filter out negative numbers"), "#").unwrap();
        assert_eq!(t.prefix, "a\n# filter out negative numbers\n");
        assert_eq!(t.middle, "m\n");
        assert_eq!(t.suffix, "s\n");

        let t = to_cfim(&record("", "sum it"), "//").unwrap();
        assert_eq!(t.prefix, "// sum it\n");

        assert!(matches!(
            to_cfim(&record("", "one\ntwo"), "#"),
            Err(Error::MultilineInstruction)
        ));
    }
}
