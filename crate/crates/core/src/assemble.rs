//! Completion request assembly from an editor buffer.
//!
//! An instruction is written as a specially marked line comment, `#!` in
//! Python: the comment opener immediately followed by a sigil. Only the
//! nearest non-blank line at or above the cursor is inspected.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::format::{render_fim_parts, render_ifim_parts};
use crate::profile::ModelProfile;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marker {
    pub opener: String,
    pub sigil: String,
}

impl Marker {
    fn new(opener: &str, sigil: &str) -> Self {
        Marker {
            opener: opener.into(),
            sigil: sigil.into(),
        }
    }

    /// The instruction text on `line`, if it is a marked comment.
    pub fn instruction_in<'a>(&self, line: &'a str) -> Option<&'a str> {
        let text = line
            .trim_start()
            .strip_prefix(self.opener.as_str())?
            .strip_prefix(self.sigil.as_str())?
            .trim();
        (!text.is_empty()).then_some(text)
    }
}

/// Language tag to marker. The default maps Python to `#!`; the `//!`
/// entries for C-family languages are an extrapolation of the same scheme.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MarkerTable(pub BTreeMap<String, Marker>);

impl Default for MarkerTable {
    fn default() -> Self {
        let mut table = BTreeMap::new();
        table.insert("python".to_string(), Marker::new("#", "!"));
        for lang in [
            "c", "cpp", "csharp", "go", "java", "javascript", "kotlin", "rust", "swift", "typescript",
        ] {
            table.insert(lang.to_string(), Marker::new("//", "!"));
        }
        MarkerTable(table)
    }
}

impl MarkerTable {
    pub fn get(&self, language: &str) -> Option<&Marker> {
        self.0.get(language)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CursorContext {
    pub source: String,
    pub cursor: usize,
    pub language: String,
}

/// The instruction line cut out of the prefix, kept for reconstruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemovedLine {
    /// Byte offset in the returned prefix where the line used to start.
    pub offset: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionRequest {
    pub prefix: String,
    pub suffix: String,
    pub instruction: Option<String>,
    pub language: String,
    pub model_profile: String,
    pub removed: Option<RemovedLine>,
}

impl CompletionRequest {
    /// The original source: the prefix with the instruction line put back,
    /// followed by the suffix.
    pub fn reconstruct(&self) -> String {
        let mut prefix = self.prefix.clone();
        if let Some(removed) = &self.removed {
            prefix.insert_str(removed.offset, &removed.text);
        }
        prefix + &self.suffix
    }
}

/// Splits the buffer at the cursor and lifts a marked instruction comment
/// out of the prefix.
pub fn parse_request(
    ctx: &CursorContext,
    markers: &MarkerTable,
    model_profile: &str,
) -> Result<CompletionRequest> {
    if ctx.cursor > ctx.source.len() || !ctx.source.is_char_boundary(ctx.cursor) {
        return Err(Error::CursorOutOfRange {
            cursor: ctx.cursor,
            len: ctx.source.len(),
        });
    }
    let marker = markers
        .get(&ctx.language)
        .ok_or_else(|| Error::UnknownLanguage(ctx.language.clone()))?;
    let (prefix, suffix) = ctx.source.split_at(ctx.cursor);

    let mut request = CompletionRequest {
        prefix: prefix.to_string(),
        suffix: suffix.to_string(),
        instruction: None,
        language: ctx.language.clone(),
        model_profile: model_profile.to_string(),
        removed: None,
    };

    let mut end = prefix.len();
    let mut lines = prefix.split_inclusive('\n').rev();
    let nearest = lines.find_map(|line| {
        let start = end - line.len();
        end = start;
        (!line.trim().is_empty()).then_some((start, line))
    });
    let Some((start, line)) = nearest else {
        return Ok(request);
    };
    // a shebang on the first line is not an instruction
    if start == 0 && line.starts_with("#!/") {
        return Ok(request);
    }
    if let Some(instruction) = marker.instruction_in(line) {
        request.instruction = Some(instruction.to_string());
        request.prefix = format!("{}{}", &prefix[..start], &prefix[start + line.len()..]);
        request.removed = Some(RemovedLine {
            offset: start,
            text: line.to_string(),
        });
    }
    Ok(request)
}

/// The model input for a request: the profile's default IFIM layout when an
/// instruction is present, the plain base layout otherwise.
pub fn assemble_input(request: &CompletionRequest, profile: &ModelProfile) -> Result<String> {
    let rendered = match &request.instruction {
        Some(instruction) => render_ifim_parts(
            &request.prefix,
            "",
            &request.suffix,
            instruction,
            profile.default_ifim_mode,
            &profile.sentinels,
        )?,
        None => render_fim_parts(
            &request.prefix,
            "",
            &request.suffix,
            profile.base_mode,
            &profile.sentinels,
        ),
    };
    Ok(rendered.layout())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::{BaseMode, SentinelSet};

    fn ctx(source: &str, cursor: usize) -> CursorContext {
        CursorContext {
            source: source.into(),
            cursor,
            language: "python".into(),
        }
    }

    const SRC: &str = "def positives(xs):\n    #!filter out negative numbers\n    \n    return ys\n";

    fn cursor_after_instruction() -> usize {
        SRC.find("    \n").unwrap() + 4
    }

    #[test]
    fn extracts_marked_instruction() {
        let req = parse_request(&ctx(SRC, cursor_after_instruction()), &MarkerTable::default(), "default")
            .unwrap();
        assert_eq!(req.instruction.as_deref(), Some("filter out negative numbers"));
        assert_eq!(req.prefix, "def positives(xs):\n    ");
        assert_eq!(req.suffix, "\n    return ys\n");
        assert_eq!(req.reconstruct(), SRC);
    }

    #[test]
    fn no_marker_means_raw_split() {
        let src = "a = 1\n# todo\nb = 2\n";
        let cursor = src.find("b").unwrap();
        let req = parse_request(&ctx(src, cursor), &MarkerTable::default(), "default").unwrap();
        assert_eq!(req.instruction, None);
        assert_eq!(req.prefix, "a = 1\n# todo\n");
        assert_eq!(req.suffix, "b = 2\n");
        assert_eq!(req.reconstruct(), src);
    }

    #[test]
    fn only_nearest_line_counts() {
        let src = "#!old directive\nx = 1\n";
        let req = parse_request(&ctx(src, src.len()), &MarkerTable::default(), "default").unwrap();
        assert_eq!(req.instruction, None);
        let src = "#!/usr/bin/env python\n";
        let req = parse_request(&ctx(src, src.len()), &MarkerTable::default(), "default").unwrap();
        assert_eq!(req.instruction, None);
        let src = "x = 1\n#!   \n";
        let req = parse_request(&ctx(src, src.len()), &MarkerTable::default(), "default").unwrap();
        assert_eq!(req.instruction, None);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            parse_request(&ctx("abc", 4), &MarkerTable::default(), "d"),
            Err(Error::CursorOutOfRange { .. })
        ));
        assert!(matches!(
            parse_request(&ctx("é", 1), &MarkerTable::default(), "d"),
            Err(Error::CursorOutOfRange { .. })
        ));
        let mut c = ctx("x", 0);
        c.language = "cobol".into();
        assert!(matches!(
            parse_request(&c, &MarkerTable::default(), "d"),
            Err(Error::UnknownLanguage(_))
        ));
    }

    #[test]
    fn c_family_marker() {
        let mut c = ctx("int f() {\n  //!return twice x\n", 0);
        c.cursor = c.source.len();
        c.language = "c".into();
        let req = parse_request(&c, &MarkerTable::default(), "d").unwrap();
        assert_eq!(req.instruction.as_deref(), Some("return twice x"));
    }

    #[test]
    fn assembly_per_profile() {
        let req = parse_request(&ctx(SRC, cursor_after_instruction()), &MarkerTable::default(), "d")
            .unwrap();
        let psm = ModelProfile::new("d", BaseMode::Psm, SentinelSet::default());
        assert_eq!(
            assemble_input(&req, &psm).unwrap(),
            "<PRE>def positives(xs):\n    <SUF>\n    return ys\n<INS>filter out negative numbers<MID>"
        );
        let pms = ModelProfile::new("d", BaseMode::Pms, SentinelSet::default());
        assert_eq!(
            assemble_input(&req, &pms).unwrap(),
            "<PRE>def positives(xs):\n    <INS>filter out negative numbers<MID>\n    return ys\n<SUF>"
        );
        let plain = CompletionRequest {
            instruction: None,
            ..req
        };
        assert_eq!(
            assemble_input(&plain, &psm).unwrap(),
            "<PRE>def positives(xs):\n    <SUF>\n    return ys\n<MID>"
        );
    }
}
