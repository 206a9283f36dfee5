//! Model profiles: sentinel literals, base mode, default IFIM mode, and the
//! per-language instruction marker table, loaded from TOML or JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assemble::MarkerTable;
use crate::format::{default_ifim_mode, BaseMode, IfimMode, Mode, SentinelSet};
use crate::{Error, Result};

/// End-of-text markers that always stop a generation.
pub const DEFAULT_STOP_MARKERS: [&str; 3] = ["<|endoftext|>", "<|end_of_text|>", "<EOT>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelProfile {
    pub name: String,
    pub sentinels: SentinelSet,
    pub base_mode: BaseMode,
    pub default_ifim_mode: IfimMode,
    /// Extra stop strings on top of the sentinels.
    pub stop: Vec<String>,
}

impl ModelProfile {
    pub fn new(name: &str, base_mode: BaseMode, sentinels: SentinelSet) -> Self {
        ModelProfile {
            name: name.to_string(),
            sentinels: SentinelSet {
                model_profile: name.to_string(),
                ..sentinels
            },
            base_mode,
            default_ifim_mode: default_ifim_mode(base_mode),
            stop: DEFAULT_STOP_MARKERS.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Sentinels followed by the extra stop strings.
    pub fn stop_strings(&self) -> Vec<String> {
        self.sentinels
            .all()
            .iter()
            .map(|s| s.to_string())
            .chain(self.stop.iter().cloned())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct ProfileSet {
    pub profiles: Vec<ModelProfile>,
    pub markers: MarkerTable,
}

#[derive(Deserialize, Serialize)]
struct RawProfile {
    name: String,
    base_mode: BaseMode,
    #[serde(default)]
    default_ifim_mode: Option<Mode>,
    #[serde(default)]
    sentinels: Option<RawSentinels>,
    #[serde(default)]
    stop: Option<Vec<String>>,
}

#[derive(Deserialize, Serialize)]
struct RawSentinels {
    pre: String,
    suf: String,
    mid: String,
    ins: String,
}

#[derive(Deserialize, Serialize)]
struct RawProfileFile {
    #[serde(default, rename = "profile")]
    profiles: Vec<RawProfile>,
    #[serde(default)]
    markers: Option<MarkerTable>,
}

impl ProfileSet {
    /// `default` (PSM), `default-pms` and `default-spm`, all with the literal
    /// `<PRE>`/`<SUF>`/`<MID>`/`<INS>` sentinels.
    pub fn builtin() -> Self {
        let s = SentinelSet::default();
        ProfileSet {
            profiles: vec![
                ModelProfile::new("default", BaseMode::Psm, s.clone()),
                ModelProfile::new("default-pms", BaseMode::Pms, s.clone()),
                ModelProfile::new("default-spm", BaseMode::Spm, s),
            ],
            markers: MarkerTable::default(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: RawProfileFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_raw(raw)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawProfileFile = serde_json::from_str(text)?;
        Self::from_raw(raw)
    }

    fn from_raw(raw: RawProfileFile) -> Result<Self> {
        if raw.profiles.is_empty() {
            return Err(Error::Config("no [[profile]] entries".into()));
        }
        let mut profiles: Vec<ModelProfile> = Vec::with_capacity(raw.profiles.len());
        for p in raw.profiles {
            if profiles.iter().any(|q| q.name == p.name) {
                return Err(Error::Config(format!("duplicate profile {:?}", p.name)));
            }
            let sentinels = match p.sentinels {
                Some(s) => SentinelSet::new(s.pre, s.suf, s.mid, s.ins, p.name.clone())?,
                None => SentinelSet::default(),
            };
            let mut profile = ModelProfile::new(&p.name, p.base_mode, sentinels);
            if let Some(mode) = p.default_ifim_mode {
                match mode {
                    Mode::Ifim(m) if m.base() == p.base_mode => profile.default_ifim_mode = m,
                    other => {
                        return Err(Error::Config(format!(
                            "profile {:?}: default_ifim_mode {other} is not an IFIM mode of {}",
                            p.name, p.base_mode
                        )))
                    }
                }
            }
            if let Some(stop) = p.stop {
                profile.stop = stop;
            }
            profiles.push(profile);
        }
        // file entries override the builtin markers language by language
        let mut markers = MarkerTable::default();
        markers.0.extend(raw.markers.map(|m| m.0).unwrap_or_default());
        Ok(ProfileSet { profiles, markers })
    }

    pub fn get(&self, name: &str) -> Result<&ModelProfile> {
        self.profiles
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::UnknownProfile(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.profiles.iter().map(|p| p.name.as_str()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_profiles() {
        let text = r##"
[[profile]]
name = "qwen"
base_mode = "PSM"
[profile.sentinels]
pre = "<|fim_prefix|>"
suf = "<|fim_suffix|>"
mid = "<|fim_middle|>"
ins = "<|rare|>"

[[profile]]
name = "ds"
base_mode = "PMS"
default_ifim_mode = "PMSI"
stop = ["<eos>"]

[markers.python]
opener = "#"
sigil = "!"
"##;
        let set = ProfileSet::from_toml(text).unwrap();
        assert_eq!(set.names(), ["qwen", "ds"]);
        let qwen = set.get("qwen").unwrap();
        assert_eq!(qwen.default_ifim_mode.canonical_name(), "PSIM");
        assert_eq!(qwen.sentinels.pre, "<|fim_prefix|>");
        assert_eq!(qwen.sentinels.model_profile, "qwen");
        let ds = set.get("ds").unwrap();
        assert_eq!(ds.default_ifim_mode.canonical_name(), "PMSI");
        assert_eq!(ds.stop_strings().last().unwrap(), "<eos>");
        assert!(matches!(set.get("nope"), Err(Error::UnknownProfile(_))));
    }

    #[test]
    fn rejects_mismatched_default_mode() {
        let text = "[[profile]]\nname = \"x\"\nbase_mode = \"PSM\"\ndefault_ifim_mode = \"PIMS\"\n";
        assert!(matches!(ProfileSet::from_toml(text), Err(Error::Config(_))));
        assert!(ProfileSet::from_toml("").is_err());
    }

    #[test]
    fn json_profiles() {
        let set = ProfileSet::from_json(r#"{"profile":[{"name":"a","base_mode":"SPM"}]}"#).unwrap();
        assert_eq!(set.get("a").unwrap().default_ifim_mode.canonical_name(), "SPIM");
        assert!(set.markers.get("python").is_some());
    }
}
