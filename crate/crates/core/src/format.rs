//! Sequence layouts for FIM and instruction-aware FIM.
//!
//! A layout is an ordering of the components prefix (P), suffix (S),
//! middle (M) and, for IFIM, instruction (I). Each component is introduced by
//! its sentinel:
//!
//! | component | rendered as |
//! |-----------|-------------|
//! | P         | `pre ∘ P`   |
//! | S         | `suf ∘ S` (PSM/SPM families), `S ∘ suf` (PMS family) |
//! | I         | `ins ∘ I`   |
//! | M         | `mid`, followed by the target slot |
//!
//! Everything before the middle slot is [`Rendered::input`]; anything the
//! layout places after the slot (only in PMS-family modes and in the
//! `..MI` modes) is [`Rendered::input_after`]. No whitespace is ever added
//! around sentinels.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{FimTriplet, InstructionRecord, Tag};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentinelSet {
    pub pre: String,
    pub suf: String,
    pub mid: String,
    pub ins: String,
    #[serde(default)]
    pub model_profile: String,
}

impl Default for SentinelSet {
    fn default() -> Self {
        SentinelSet {
            pre: "<PRE>".into(),
            suf: "<SUF>".into(),
            mid: "<MID>".into(),
            ins: "<INS>".into(),
            model_profile: "default".into(),
        }
    }
}

impl SentinelSet {
    pub fn new(
        pre: impl Into<String>,
        suf: impl Into<String>,
        mid: impl Into<String>,
        ins: impl Into<String>,
        model_profile: impl Into<String>,
    ) -> Result<Self> {
        let set = SentinelSet {
            pre: pre.into(),
            suf: suf.into(),
            mid: mid.into(),
            ins: ins.into(),
            model_profile: model_profile.into(),
        };
        set.validate()?;
        Ok(set)
    }

    pub fn all(&self) -> [&str; 4] {
        [&self.pre, &self.suf, &self.mid, &self.ins]
    }

    /// All four non-empty, and no sentinel is a substring of another.
    pub fn validate(&self) -> Result<()> {
        let all = self.all();
        if all.iter().any(|s| s.is_empty()) {
            return Err(Error::InvalidSentinels("sentinels must be non-empty".into()));
        }
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                if a.contains(b) || b.contains(a) {
                    return Err(Error::InvalidSentinels(format!(
                        "{a:?} and {b:?} overlap"
                    )));
                }
            }
        }
        Ok(())
    }

    /// True when `text` contains any of the four sentinels.
    pub fn occurs_in(&self, text: &str) -> bool {
        self.all().iter().any(|s| text.contains(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Component {
    #[serde(rename = "P")]
    Prefix,
    #[serde(rename = "S")]
    Suffix,
    #[serde(rename = "M")]
    Middle,
    #[serde(rename = "I")]
    Instruction,
}

impl Component {
    pub fn letter(self) -> char {
        match self {
            Component::Prefix => 'P',
            Component::Suffix => 'S',
            Component::Middle => 'M',
            Component::Instruction => 'I',
        }
    }

    fn from_letter(c: char) -> Option<Self> {
        match c {
            'P' => Some(Component::Prefix),
            'S' => Some(Component::Suffix),
            'M' => Some(Component::Middle),
            'I' => Some(Component::Instruction),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaseMode {
    #[serde(rename = "PSM")]
    Psm,
    #[serde(rename = "PMS")]
    Pms,
    #[serde(rename = "SPM")]
    Spm,
}

impl BaseMode {
    pub const ALL: [BaseMode; 3] = [BaseMode::Psm, BaseMode::Pms, BaseMode::Spm];

    pub fn letters(self) -> [Component; 3] {
        use Component::*;
        match self {
            BaseMode::Psm => [Prefix, Suffix, Middle],
            BaseMode::Pms => [Prefix, Middle, Suffix],
            BaseMode::Spm => [Suffix, Prefix, Middle],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BaseMode::Psm => "PSM",
            BaseMode::Pms => "PMS",
            BaseMode::Spm => "SPM",
        }
    }
}

impl fmt::Display for BaseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A base mode with the instruction inserted before slot `ins_position`
/// (0 = first, 3 = last).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IfimMode {
    base: BaseMode,
    ins_position: usize,
}

impl IfimMode {
    pub fn new(base: BaseMode, ins_position: usize) -> Result<Self> {
        if ins_position > 3 {
            return Err(Error::InvalidParameter(format!(
                "instruction position must be 0..=3, got {ins_position}"
            )));
        }
        Ok(IfimMode { base, ins_position })
    }

    pub fn base(self) -> BaseMode {
        self.base
    }

    pub fn ins_position(self) -> usize {
        self.ins_position
    }

    pub fn letters(self) -> [Component; 4] {
        let base = self.base.letters();
        let mut out = [Component::Instruction; 4];
        let mut b = base.iter();
        for (i, slot) in out.iter_mut().enumerate() {
            if i != self.ins_position {
                *slot = *b.next().expect("three base letters");
            }
        }
        out
    }

    pub fn canonical_name(self) -> String {
        self.letters().iter().map(|c| c.letter()).collect()
    }
}

impl fmt::Display for IfimMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.canonical_name())
    }
}

/// Either a plain FIM mode or an IFIM mode, parsed from names like `PSM` or
/// `PIMS`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    Base(BaseMode),
    Ifim(IfimMode),
}

impl Mode {
    pub fn base(self) -> BaseMode {
        match self {
            Mode::Base(b) => b,
            Mode::Ifim(m) => m.base(),
        }
    }

    pub fn name(self) -> String {
        match self {
            Mode::Base(b) => b.name().to_string(),
            Mode::Ifim(m) => m.canonical_name(),
        }
    }

    fn letters(self) -> Vec<Component> {
        match self {
            Mode::Base(b) => b.letters().to_vec(),
            Mode::Ifim(m) => m.letters().to_vec(),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        let unknown = || Error::UnknownMode(s.to_string());
        let letters: Vec<Component> = upper
            .chars()
            .map(Component::from_letter)
            .collect::<Option<_>>()
            .ok_or_else(unknown)?;
        let find_base = |letters: &[Component]| {
            BaseMode::ALL
                .into_iter()
                .find(|b| b.letters().as_slice() == letters)
        };
        match letters.len() {
            3 => find_base(&letters).map(Mode::Base).ok_or_else(unknown),
            4 => {
                let pos = letters
                    .iter()
                    .position(|&c| c == Component::Instruction)
                    .ok_or_else(unknown)?;
                let rest: Vec<_> = letters
                    .iter()
                    .copied()
                    .filter(|&c| c != Component::Instruction)
                    .collect();
                let base = find_base(&rest).ok_or_else(unknown)?;
                Ok(Mode::Ifim(IfimMode::new(base, pos)?))
            }
            _ => Err(unknown()),
        }
    }
}

impl Serialize for Mode {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for Mode {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The four ways to insert I into a base mode, left to right.
pub fn enumerate_ifim_modes(base: BaseMode) -> [IfimMode; 4] {
    [0, 1, 2, 3].map(|pos| IfimMode { base, ins_position: pos })
}

/// The mode that places I immediately before M.
pub fn default_ifim_mode(base: BaseMode) -> IfimMode {
    let mid = base
        .letters()
        .iter()
        .position(|&c| c == Component::Middle)
        .expect("every base mode has a middle");
    IfimMode {
        base,
        ins_position: mid,
    }
}

/// A rendered sequence. The model conditions on `input`, produces `target`,
/// and `input_after` holds whatever the layout puts after the middle slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rendered {
    pub input: String,
    #[serde(default)]
    pub input_after: String,
    pub target: String,
}

impl Rendered {
    /// The full layout without the middle: `input ∘ input_after`.
    pub fn layout(&self) -> String {
        format!("{}{}", self.input, self.input_after)
    }

    /// The full training sequence: `input ∘ target ∘ input_after`.
    pub fn training_sequence(&self) -> String {
        format!("{}{}{}", self.input, self.target, self.input_after)
    }
}

enum Piece<'a> {
    Lit(&'a str),
    Text(Component),
}

fn pieces<'a>(letters: &[Component], base: BaseMode, s: &'a SentinelSet) -> Vec<Piece<'a>> {
    let mut out = Vec::with_capacity(8);
    for &c in letters {
        match c {
            Component::Prefix => {
                out.push(Piece::Lit(&s.pre));
                out.push(Piece::Text(c));
            }
            Component::Suffix if base == BaseMode::Pms => {
                out.push(Piece::Text(c));
                out.push(Piece::Lit(&s.suf));
            }
            Component::Suffix => {
                out.push(Piece::Lit(&s.suf));
                out.push(Piece::Text(c));
            }
            Component::Instruction => {
                out.push(Piece::Lit(&s.ins));
                out.push(Piece::Text(c));
            }
            Component::Middle => out.push(Piece::Lit(&s.mid)),
        }
    }
    out
}

fn render_letters(
    letters: &[Component],
    base: BaseMode,
    sentinels: &SentinelSet,
    prefix: &str,
    middle: &str,
    suffix: &str,
    instruction: &str,
) -> Rendered {
    let mut input = String::new();
    let mut after = String::new();
    let mut past_middle = false;
    for piece in pieces(letters, base, sentinels) {
        let out = if past_middle { &mut after } else { &mut input };
        match piece {
            Piece::Lit(lit) => {
                out.push_str(lit);
                if lit == sentinels.mid {
                    past_middle = true;
                }
            }
            Piece::Text(Component::Prefix) => out.push_str(prefix),
            Piece::Text(Component::Suffix) => out.push_str(suffix),
            Piece::Text(Component::Instruction) => out.push_str(instruction),
            Piece::Text(Component::Middle) => unreachable!("middle is a slot"),
        }
    }
    Rendered {
        input,
        input_after: after,
        target: middle.to_string(),
    }
}

/// Renders a triplet in a plain FIM mode.
pub fn render_fim(triplet: &FimTriplet, base: BaseMode, sentinels: &SentinelSet) -> Rendered {
    render_letters(
        &base.letters(),
        base,
        sentinels,
        &triplet.prefix,
        &triplet.middle,
        &triplet.suffix,
        "",
    )
}

/// Renders a record in an IFIM mode. The instruction must be non-empty.
pub fn render_ifim(
    record: &InstructionRecord,
    mode: IfimMode,
    sentinels: &SentinelSet,
) -> Result<Rendered> {
    render_ifim_parts(
        &record.triplet.prefix,
        &record.triplet.middle,
        &record.triplet.suffix,
        &record.instruction,
        mode,
        sentinels,
    )
}

/// [`render_ifim`] over loose components.
pub fn render_ifim_parts(
    prefix: &str,
    middle: &str,
    suffix: &str,
    instruction: &str,
    mode: IfimMode,
    sentinels: &SentinelSet,
) -> Result<Rendered> {
    if instruction.trim().is_empty() {
        return Err(Error::EmptyInstruction);
    }
    Ok(render_letters(
        &mode.letters(),
        mode.base(),
        sentinels,
        prefix,
        middle,
        suffix,
        instruction,
    ))
}

/// [`render_fim`] over loose components.
pub fn render_fim_parts(
    prefix: &str,
    middle: &str,
    suffix: &str,
    base: BaseMode,
    sentinels: &SentinelSet,
) -> Rendered {
    render_letters(&base.letters(), base, sentinels, prefix, middle, suffix, "")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedLayout {
    pub prefix: String,
    pub suffix: String,
    pub instruction: Option<String>,
}

/// Splits a layout string (`input ∘ input_after`) back into its components.
/// Fails when the sentinels are not where `mode` puts them or a component
/// would contain a sentinel. PMIS cannot be split: its I and S are adjacent
/// with no sentinel between them.
pub fn parse_layout(layout: &str, mode: Mode, sentinels: &SentinelSet) -> Result<ParsedLayout> {
    let err = |reason: String| Error::Layout {
        mode: mode.name(),
        reason,
    };
    let pieces = pieces(&mode.letters(), mode.base(), sentinels);
    let mut parsed = ParsedLayout {
        prefix: String::new(),
        suffix: String::new(),
        instruction: None,
    };
    let mut pos = 0;
    for (i, piece) in pieces.iter().enumerate() {
        match piece {
            Piece::Lit(lit) => {
                if !layout[pos..].starts_with(lit) {
                    return Err(err(format!("expected {lit:?} at byte {pos}")));
                }
                pos += lit.len();
            }
            Piece::Text(component) => {
                let end = match pieces.get(i + 1) {
                    Some(Piece::Lit(next)) => layout[pos..]
                        .find(next)
                        .map(|off| pos + off)
                        .ok_or_else(|| err(format!("missing {next:?}")))?,
                    Some(Piece::Text(next)) => {
                        return Err(err(format!(
                            "{} and {} are not separated by a sentinel",
                            component.letter(),
                            next.letter()
                        )))
                    }
                    None => layout.len(),
                };
                let text = &layout[pos..end];
                if sentinels.occurs_in(text) {
                    return Err(err(format!(
                        "component {} contains a sentinel",
                        component.letter()
                    )));
                }
                match component {
                    Component::Prefix => parsed.prefix = text.to_string(),
                    Component::Suffix => parsed.suffix = text.to_string(),
                    Component::Instruction => parsed.instruction = Some(text.to_string()),
                    Component::Middle => unreachable!(),
                }
                pos = end;
            }
        }
    }
    if pos != layout.len() {
        return Err(err(format!("trailing text at byte {pos}")));
    }
    Ok(parsed)
}

/// Picks the least frequent vocabulary entry that does not collide with any
/// `reserved` sentinel. Ties go to the lowest index.
pub fn select_ins_token(vocab: &[(String, u64)], reserved: &[&str]) -> Result<String> {
    if vocab.is_empty() {
        return Err(Error::EmptyVocab);
    }
    let collides = |token: &str| {
        token.is_empty()
            || reserved
                .iter()
                .any(|r| token == *r || r.contains(token) || token.contains(r))
    };
    vocab
        .iter()
        .filter(|(token, _)| !collides(token))
        // min_by_key returns the first minimum, which is the lowest index
        .min_by_key(|(_, freq)| *freq)
        .map(|(token, _)| token.clone())
        .ok_or(Error::NoInsCandidate)
}

/// Context components (P, S) that sit strictly before I and therefore keep
/// their KV cache when only the instruction changes.
pub fn cache_survival(mode: IfimMode) -> BTreeSet<Component> {
    mode.letters()
        .into_iter()
        .take_while(|&c| c != Component::Instruction)
        .filter(|c| matches!(c, Component::Prefix | Component::Suffix))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub id: String,
    pub mode: String,
    pub tag: Tag,
    pub input: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub input_after: String,
    pub target: String,
}

#[derive(Debug, Clone, Copy)]
pub enum ExampleSource<'a> {
    Record(&'a InstructionRecord),
    Triplet(&'a FimTriplet),
}

impl ExampleSource<'_> {
    fn kind(&self) -> &'static str {
        match self {
            ExampleSource::Record(_) => "an instruction record",
            ExampleSource::Triplet(_) => "a bare triplet",
        }
    }

    fn triplet(&self) -> &FimTriplet {
        match self {
            ExampleSource::Record(r) => &r.triplet,
            ExampleSource::Triplet(t) => t,
        }
    }
}

/// Builds one `(input, target)` pair.
///
/// * `ifim` needs a record; a base `mode` is promoted to its default IFIM mode.
/// * `plain_fim` renders the triplet in the base mode, ignoring any instruction.
/// * `cfim` needs a triplet already passed through
///   [`to_cfim`](crate::corpus::to_cfim) and renders it in the base mode.
pub fn build_training_example(
    source: ExampleSource<'_>,
    mode: Mode,
    sentinels: &SentinelSet,
    tag: Tag,
) -> Result<TrainingExample> {
    let triplet = source.triplet();
    let (mode_name, rendered) = match (tag, source) {
        (Tag::Ifim, ExampleSource::Record(record)) => {
            let ifim = match mode {
                Mode::Ifim(m) => m,
                Mode::Base(b) => default_ifim_mode(b),
            };
            (ifim.canonical_name(), render_ifim(record, ifim, sentinels)?)
        }
        (Tag::PlainFim, _) | (Tag::Cfim, ExampleSource::Triplet(_)) => {
            let base = mode.base();
            (base.name().to_string(), render_fim(triplet, base, sentinels))
        }
        (tag, source) => {
            return Err(Error::TagMismatch {
                tag: tag.as_str(),
                kind: source.kind(),
            })
        }
    };
    Ok(TrainingExample {
        id: triplet.sample_id.clone(),
        mode: mode_name,
        tag,
        input: rendered.input,
        input_after: rendered.input_after,
        target: rendered.target,
    })
}
