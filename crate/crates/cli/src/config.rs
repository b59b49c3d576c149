use std::fmt;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use dverg_core::emotion::ClassifierConfig;
use dverg_core::encdec::{DecodeMode, GenerationConfig, VocabMode};
use dverg_core::numerics::AdamConfig;
use dverg_core::training::TrainConfig;

/// Problems with the configuration or command line, as opposed to the data.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub function_words: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub emotion_map: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabSection {
    pub max_size: usize,
    pub min_count: usize,
}

impl Default for VocabSection {
    fn default() -> Self {
        VocabSection {
            max_size: 50_000,
            min_count: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationSection {
    pub beam_width: usize,
    pub max_len: usize,
    pub min_len: usize,
    /// `false` decodes over the whole vocabulary.
    pub dynamic: bool,
    pub tau: f32,
    pub cap: usize,
    pub seed: u64,
}

impl Default for GenerationSection {
    fn default() -> Self {
        let d = GenerationConfig::default();
        GenerationSection {
            beam_width: 1,
            max_len: d.max_len,
            min_len: d.min_len,
            dynamic: true,
            tau: 0.5,
            cap: 0,
            seed: d.seed,
        }
    }
}

impl GenerationSection {
    pub fn to_config(self) -> GenerationConfig {
        GenerationConfig {
            mode: if self.beam_width <= 1 {
                DecodeMode::Greedy
            } else {
                DecodeMode::Beam { width: self.beam_width }
            },
            max_len: self.max_len,
            min_len: self.min_len,
            vocab: if self.dynamic {
                VocabMode::Dynamic { tau: self.tau, cap: self.cap }
            } else {
                VocabMode::Static
            },
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let d = ClassifierConfig::default();
        ClassifierSection {
            epochs: d.epochs,
            batch_size: d.batch_size,
            hidden: d.hidden,
            lr: d.adam.lr,
            seed: d.seed,
        }
    }
}

impl ClassifierSection {
    pub fn to_config(self) -> ClassifierConfig {
        ClassifierConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            hidden: self.hidden,
            seed: self.seed,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub paths: Paths,
    pub train: TrainConfig,
    pub vocab: VocabSection,
    pub generation: GenerationSection,
    pub classifier: ClassifierSection,
}

impl AppConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }
}

/// The path must be set and must exist.
pub fn existing(path: &Option<PathBuf>, what: &str) -> anyhow::Result<PathBuf> {
    let p = path
        .clone()
        .ok_or_else(|| config_err(format!("no {what} given (set it in the config or pass a flag)")))?;
    if !p.exists() {
        return Err(config_err(format!("{what} `{}` does not exist", p.display())));
    }
    Ok(p)
}

/// An optional path that, when set, must exist.
pub fn optional(path: &Option<PathBuf>, what: &str) -> anyhow::Result<Option<PathBuf>> {
    match path {
        Some(_) => existing(path, what).map(Some),
        None => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_parse_and_default() {
        let c = AppConfig::parse(
            "[paths]\ncorpus = \"c.jsonl\"\n[train]\nlr = 0.01\nmode = \"ft-both\"\n[generation]\nbeam_width = 4\ndynamic = false\n",
        )
        .unwrap();
        assert_eq!(c.paths.corpus.as_deref(), Some(Path::new("c.jsonl")));
        assert_eq!(c.train.lr, 0.01);
        assert_eq!(c.train.hidden, 128);
        let g = c.generation.to_config();
        assert_eq!(g.mode, DecodeMode::Beam { width: 4 });
        assert_eq!(g.vocab, VocabMode::Static);
        assert_eq!(AppConfig::parse("").unwrap().vocab, VocabSection::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(AppConfig::parse("[train]\nlearning_rate = 0.1\n").is_err());
        assert!(AppConfig::parse("[nope]\n").is_err());
        assert!(AppConfig::parse("[train]\nmode = \"sideways\"\n").is_err());
    }
}
