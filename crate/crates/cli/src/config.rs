use std::path::Path;

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use mtt_core::io::sha256_hex;
use mtt_core::model::ModelSettings;
use mtt_core::pipeline::{SplitConfig, WindowSpec};
use mtt_core::synth::SyntheticSiteSpec;
use mtt_core::train::TrainConfig;

/// Parses `15m`, `4h`, `24h`, `1d`, `900s` or bare seconds.
pub fn parse_interval(s: &str) -> anyhow::Result<i64> {
    let s = s.trim();
    let split = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    let (num, unit) = s.split_at(split);
    let n: i64 = num.parse().with_context(|| format!("bad interval {s:?}"))?;
    let scale = match unit {
        "" | "s" => 1,
        "m" => 60,
        "h" => 3600,
        "d" => 86_400,
        _ => bail!("bad interval unit in {s:?}; use s, m, h or d"),
    };
    if n <= 0 || 86_400 % (n * scale) != 0 {
        bail!("interval {s:?} must be positive and divide one day");
    }
    Ok(n * scale)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub sync_interval: String,
    pub model_interval: String,
    pub window: WindowSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            sync_interval: "15m".into(),
            model_interval: "4h".into(),
            window: WindowSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub enabled: bool,
    /// Member `i` (from 1) trains with seed `seed + i`.
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            enabled: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, overrides every section seed.
    pub seed: Option<u64>,
    pub data: DataConfig,
    pub model: ModelSettings,
    pub train: TrainConfig,
    pub split: SplitConfig,
    pub ensemble: EnsembleConfig,
    pub synth: SyntheticSiteSpec,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Applies command-line overrides and checks every section.
    pub fn resolve(mut self, seed: Option<u64>, interval: Option<&str>) -> anyhow::Result<Self> {
        if seed.is_some() {
            self.seed = seed;
        }
        if let Some(i) = interval {
            self.data.model_interval = i.to_string();
        }
        if let Some(s) = self.seed {
            self.train.seed = s;
            self.split.seed = s;
            self.ensemble.seed = s;
            self.synth.seed = s;
        }
        let sync = parse_interval(&self.data.sync_interval)?;
        let model = parse_interval(&self.data.model_interval)?;
        if model % sync != 0 {
            bail!(
                "model interval {} is not a multiple of sync interval {}",
                self.data.model_interval,
                self.data.sync_interval
            );
        }
        self.train.validate()?;
        self.synth.validate()?;
        Ok(self)
    }

    pub fn sync_secs(&self) -> i64 {
        parse_interval(&self.data.sync_interval).expect("validated")
    }

    pub fn model_secs(&self) -> i64 {
        parse_interval(&self.data.model_interval).expect("validated")
    }

    pub fn hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("serializable")
                .as_bytes(),
        )
    }
}
