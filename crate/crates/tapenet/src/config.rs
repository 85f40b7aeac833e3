//! Training configuration: TOML file on disk, validated and parsed into the
//! typed pieces the loop needs. Checkpoint header metadata lives here too so
//! `eval` and `trace` can rebuild the right network from a file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use tapenet_core::curriculum::CurriculumSchedule;
use tapenet_core::machine::HeadConfig;
use tapenet_core::task::TaskKind;
use tapenet_nn::{
    AblationFlags, CheckpointHeader, ContextSpec, EncoderKind, NnError, PolicyDims, PolicyNet,
};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardScheme {
    /// Terminal 1.0 on success, plus a -0.01 cost per step.
    Sparse,
    /// Terminal reward is the fraction of correct target cells, same step cost.
    Dense,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub no_tape_values: bool,
    pub no_action_history: bool,
    pub no_history_tape_values: bool,
}

impl AblationConfig {
    pub fn flags(&self) -> AblationFlags {
        AblationFlags {
            no_tape_values: self.no_tape_values,
            no_action_history: self.no_action_history,
            no_history_tape_values: self.no_history_tape_values,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    pub c_min: usize,
    pub c_max: usize,
    pub ramp_start: u64,
    pub ramp_end: u64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        let s = CurriculumSchedule::default();
        CurriculumConfig {
            c_min: s.c_min,
            c_max: s.c_max,
            ramp_start: s.ramp_start,
            ramp_end: s.ramp_end,
        }
    }
}

impl CurriculumConfig {
    pub fn schedule(&self) -> CurriculumSchedule {
        CurriculumSchedule {
            c_min: self.c_min,
            c_max: self.c_max,
            ramp_start: self.ramp_start,
            ramp_end: self.ramp_end,
        }
    }
}

/// Everything a run needs. Paper-scale ceilings (50 data collectors, 30M
/// steps, curriculum to 10) are valid settings; the defaults are desk-scale.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub task: String,
    pub encoder: String,
    pub seed: u64,
    pub dtype: String,
    /// Total environment-step budget.
    pub steps: u64,
    pub batch_episodes: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub entropy_weight: f64,
    pub value_weight: f64,
    pub reward: String,
    /// Global gradient-norm clip before each optimizer step (0 disables).
    pub max_grad_norm: f64,
    /// Episode cap: T_max = ceil(multiplier * L).
    pub t_max_multiplier: f64,
    /// 0 runs the synchronous single-actor mode (bit-reproducible);
    /// n >= 1 runs n asynchronous data collectors.
    pub actors: usize,
    pub queue_capacity: usize,
    pub checkpoint_interval: u64,
    pub eval_interval: u64,
    pub eval_lengths: Vec<usize>,
    pub eval_seed: u64,
    pub greedy_eval: bool,
    /// Stop once the best success rate on the first eval length reaches
    /// this value; 0 disables early stopping.
    pub early_stop_rate: f64,
    pub ablation: AblationConfig,
    pub curriculum: CurriculumConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: "copy".into(),
            encoder: "attention".into(),
            seed: 0,
            dtype: "f64".into(),
            steps: 2_000_000,
            batch_episodes: 16,
            learning_rate: 3e-4,
            gamma: 0.99,
            entropy_weight: 0.01,
            value_weight: 0.5,
            reward: "sparse".into(),
            max_grad_norm: 0.0,
            t_max_multiplier: 8.0,
            actors: 0,
            queue_capacity: 64,
            checkpoint_interval: 500_000,
            eval_interval: 50_000,
            eval_lengths: vec![10, 20, 100],
            eval_seed: 1000,
            greedy_eval: false,
            early_stop_rate: 0.0,
            ablation: AblationConfig::default(),
            curriculum: CurriculumConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<TrainConfig, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let config: TrainConfig = toml::from_str(&text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.task_kind()?;
        self.encoder_kind()?;
        self.dtype_kind()?;
        self.reward_scheme()?;
        let positive = [
            ("steps", self.steps as f64),
            ("batch_episodes", self.batch_episodes as f64),
            ("learning_rate", self.learning_rate),
            ("t_max_multiplier", self.t_max_multiplier),
            ("queue_capacity", self.queue_capacity as f64),
            ("checkpoint_interval", self.checkpoint_interval as f64),
            ("eval_interval", self.eval_interval as f64),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(ConfigError::Invalid("gamma must be in [0, 1]".into()));
        }
        if self.entropy_weight < 0.0 || self.value_weight < 0.0 {
            return Err(ConfigError::Invalid(
                "loss weights must be non-negative".into(),
            ));
        }
        if self.curriculum.c_min < 1 || self.curriculum.c_max < self.curriculum.c_min {
            return Err(ConfigError::Invalid(
                "curriculum bounds must satisfy 1 <= c_min <= c_max".into(),
            ));
        }
        if self.eval_lengths.is_empty() || self.eval_lengths.iter().any(|&l| l == 0) {
            return Err(ConfigError::Invalid(
                "eval_lengths must be non-empty positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.early_stop_rate) {
            return Err(ConfigError::Invalid(
                "early_stop_rate must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn task_kind(&self) -> Result<TaskKind, ConfigError> {
        self.task
            .parse()
            .map_err(|_| ConfigError::Invalid(format!("unknown task `{}`", self.task)))
    }

    pub fn encoder_kind(&self) -> Result<EncoderKind, ConfigError> {
        EncoderKind::parse(&self.encoder)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown encoder `{}`", self.encoder)))
    }

    pub fn dtype_kind(&self) -> Result<Dtype, ConfigError> {
        match self.dtype.as_str() {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            other => Err(ConfigError::Invalid(format!("unknown dtype `{other}`"))),
        }
    }

    pub fn reward_scheme(&self) -> Result<RewardScheme, ConfigError> {
        match self.reward.as_str() {
            "sparse" => Ok(RewardScheme::Sparse),
            "dense" => Ok(RewardScheme::Dense),
            other => Err(ConfigError::Invalid(format!(
                "unknown reward scheme `{other}`"
            ))),
        }
    }

    pub fn context_spec(&self) -> Result<ContextSpec, ConfigError> {
        Ok(ContextSpec::for_task(
            self.task_kind()?,
            HeadConfig::DEFAULT,
        ))
    }

    pub fn policy_net(&self) -> Result<PolicyNet, ConfigError> {
        let spec = self.context_spec()?;
        Ok(PolicyNet::new(
            PolicyDims::for_spec(&spec),
            self.encoder_kind()?,
        ))
    }
}

/// Checkpoint header fields: enough to rebuild the network and reject
/// mismatched task/dataset pairs.
pub fn checkpoint_header(
    config: &TrainConfig,
    net: &PolicyNet,
    version: u64,
    env_steps: u64,
) -> CheckpointHeader {
    let mut h = CheckpointHeader::new();
    h.set("task", &config.task);
    h.set("encoder", net.encoder.name());
    h.set("dtype", &config.dtype);
    h.set("conv_channels", net.dims.conv_channels);
    h.set("trunk_width", net.dims.trunk_width);
    h.set("attn_queries", net.dims.attn_queries);
    h.set("lstm_hidden", net.dims.lstm_hidden);
    h.set("no_tape_values", config.ablation.no_tape_values);
    h.set("no_action_history", config.ablation.no_action_history);
    h.set(
        "no_history_tape_values",
        config.ablation.no_history_tape_values,
    );
    h.set("version", version);
    h.set("env_steps", env_steps);
    h
}

/// Network, task, and flags encoded in a checkpoint header.
pub struct CheckpointMeta {
    pub task: TaskKind,
    pub net: PolicyNet,
    pub flags: AblationFlags,
    pub dtype: Dtype,
    pub version: u64,
}

pub fn parse_checkpoint_header(header: &CheckpointHeader) -> Result<CheckpointMeta, NnError> {
    let bad = |what: &str| NnError::CheckpointFormat(format!("bad header field `{what}`"));
    let task: TaskKind = header.require("task")?.parse().map_err(|_| bad("task"))?;
    let encoder = EncoderKind::parse(header.require("encoder")?).ok_or_else(|| bad("encoder"))?;
    let dtype = match header.require("dtype")? {
        "f32" => Dtype::F32,
        "f64" => Dtype::F64,
        _ => return Err(bad("dtype")),
    };
    let usize_field = |key: &str| -> Result<usize, NnError> {
        header.require(key)?.parse::<usize>().map_err(|_| bad(key))
    };
    let bool_field = |key: &str| -> Result<bool, NnError> {
        header.require(key)?.parse::<bool>().map_err(|_| bad(key))
    };
    let spec = ContextSpec::for_task(task, HeadConfig::DEFAULT);
    let mut dims = PolicyDims::for_spec(&spec);
    dims.conv_channels = usize_field("conv_channels")?;
    dims.trunk_width = usize_field("trunk_width")?;
    dims.attn_queries = usize_field("attn_queries")?;
    dims.lstm_hidden = usize_field("lstm_hidden")?;
    let flags = AblationFlags {
        no_tape_values: bool_field("no_tape_values")?,
        no_action_history: bool_field("no_action_history")?,
        no_history_tape_values: bool_field("no_history_tape_values")?,
    };
    let version = header
        .require("version")?
        .parse::<u64>()
        .map_err(|_| bad("version"))?;
    Ok(CheckpointMeta {
        task,
        net: PolicyNet::new(dims, encoder),
        flags,
        dtype,
        version,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_with_overrides() {
        let text = r#"
task = "add"
encoder = "recurrent"
steps = 1000
reward = "dense"
actors = 4

[curriculum]
c_min = 1
c_max = 3
ramp_start = 10
ramp_end = 100

[ablation]
no_tape_values = true
"#;
        let config: TrainConfig = toml::from_str(text).unwrap();
        config.validate().unwrap();
        assert_eq!(config.task_kind().unwrap(), TaskKind::MultiDigitAdd);
        assert_eq!(config.encoder_kind().unwrap(), EncoderKind::Recurrent);
        assert_eq!(config.reward_scheme().unwrap(), RewardScheme::Dense);
        assert!(config.ablation.flags().no_tape_values);
        assert_eq!(config.curriculum.schedule().c_max, 3);
        assert_eq!(config.batch_episodes, 16); // untouched default
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<TrainConfig>("turbo = true").is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        let mut config = TrainConfig::default();
        config.task = "sort".into();
        assert!(config.validate().is_err());
        let mut config = TrainConfig::default();
        config.gamma = 1.5;
        assert!(config.validate().is_err());
        let mut config = TrainConfig::default();
        config.curriculum.c_min = 0;
        assert!(config.validate().is_err());
    }

    #[test]
    fn checkpoint_header_round_trips() {
        let config = TrainConfig::default();
        let net = config.policy_net().unwrap();
        let header = checkpoint_header(&config, &net, 7, 123_456);
        let meta = parse_checkpoint_header(&header).unwrap();
        assert_eq!(meta.task, TaskKind::Copy);
        assert_eq!(meta.net, net);
        assert_eq!(meta.version, 7);
        assert_eq!(meta.dtype, Dtype::F64);
        assert_eq!(meta.flags, AblationFlags::NONE);
    }
}
