use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use telesync_core::rl::{ModelConfig, SacConfig, TrainConfig};
use telesync_core::{DelaySettings, DelaySteps, PredictorKind, SimConfig, Variant};

pub const OUT_ENV: &str = "TELESYNC_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub total_env_steps: u64,
    /// Predictor used by PMDC runs in campaigns.
    pub predictor: PredictorKind,
    pub eval_episodes: usize,
    pub sim: SimConfig,
    pub delays: Vec<DelaySettings>,
    pub sac: SacConfig,
    pub model: ModelConfig,
    pub bench: BenchConfig,
    pub serve: ServeConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs"),
            variants: Variant::ALL.to_vec(),
            seeds: vec![0, 1, 2],
            total_env_steps: 80_000,
            predictor: PredictorKind::Sbsp,
            eval_episodes: 10,
            sim: SimConfig::default(),
            delays: vec![DelaySettings {
                action_delay_ms: 240,
                obs_delay_min_ms: 10,
                obs_delay_max_ms: 50,
                delay_seed: 0,
            }],
            sac: SacConfig::default(),
            model: ModelConfig::default(),
            bench: BenchConfig::default(),
            serve: ServeConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub total_env_steps: u64,
    pub runs: usize,
    pub action_delays_ms: Vec<u64>,
    pub obs_delay_min_ms: u64,
    pub obs_delay_max_ms: u64,
    /// Any of `ABSP`, `SBSP`, `A-SAC`, `SAC`.
    pub methods: Vec<String>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            total_env_steps: 20_000,
            runs: 3,
            action_delays_ms: vec![80, 160, 240],
            obs_delay_min_ms: 0,
            obs_delay_max_ms: 0,
            methods: ["ABSP", "SBSP", "A-SAC", "SAC"].map(String::from).to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub host: String,
    pub port: u16,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8090,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            bail!("variants must not be empty");
        }
        if self.seeds.is_empty() {
            bail!("seeds must not be empty");
        }
        if self.delays.is_empty() {
            bail!("at least one delay setting is required");
        }
        if self.total_env_steps == 0 {
            bail!("total_env_steps must be positive");
        }
        self.sim.validate()?;
        self.sac.validate()?;
        for d in &self.delays {
            d.to_steps(&self.sim)?;
        }
        for ms in &self.bench.action_delays_ms {
            self.bench_delay(*ms)?;
        }
        for m in &self.bench.methods {
            if BenchMethod::parse(m)? == BenchMethod::Absp && self.bench.obs_delay_max_ms > 0 {
                bail!("ABSP benchmarks need zero observation delay so each step rolls exactly the action delay");
            }
        }
        Ok(())
    }

    /// Output directory, honouring the environment override.
    pub fn output_dir(&self) -> PathBuf {
        std::env::var_os(OUT_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.output_dir.clone())
    }

    pub fn train_config(&self, variant: Variant, delays: DelaySteps, seed: u64, steps: u64) -> TrainConfig {
        TrainConfig {
            sim: self.sim.clone(),
            delays,
            variant,
            predictor: self.predictor,
            seed,
            total_steps: steps,
            sac: self.sac.clone(),
            model: self.model.clone(),
        }
    }

    pub fn delays_steps(&self, d: &DelaySettings) -> Result<DelaySteps> {
        Ok(d.to_steps(&self.sim)?)
    }

    pub fn bench_delay(&self, action_ms: u64) -> Result<DelaySettings> {
        let d = DelaySettings {
            action_delay_ms: action_ms,
            obs_delay_min_ms: self.bench.obs_delay_min_ms,
            obs_delay_max_ms: self.bench.obs_delay_max_ms,
            delay_seed: 0,
        };
        d.to_steps(&self.sim)?;
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMethod {
    Absp,
    Sbsp,
    ASac,
    Sac,
}

impl BenchMethod {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_uppercase().replace('_', "-").as_str() {
            "ABSP" => Self::Absp,
            "SBSP" | "PMDC" => Self::Sbsp,
            "A-SAC" | "ASAC" => Self::ASac,
            "SAC" => Self::Sac,
            other => bail!("unknown bench method {other:?}"),
        })
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Absp => "ABSP",
            Self::Sbsp => "SBSP",
            Self::ASac => "A-SAC",
            Self::Sac => "SAC",
        }
    }

    pub fn variant(self) -> (Variant, PredictorKind) {
        match self {
            Self::Absp => (Variant::Pmdc, PredictorKind::Absp),
            Self::Sbsp => (Variant::Pmdc, PredictorKind::Sbsp),
            Self::ASac => (Variant::ASac, PredictorKind::Sbsp),
            Self::Sac => (Variant::Sac, PredictorKind::Sbsp),
        }
    }
}
