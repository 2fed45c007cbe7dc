//! Run configuration: TOML file, command-line overrides and resolution.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;
use thiserror::Error;
use trustloop::agent::{AgentConfig, EnvFactory, EnvKind, Variant};
use trustloop::constraints::CandidateOrder;
use trustloop::env::wordle::WordList;
use trustloop::gateway::{BackendSpec, CompletionBackend, RemoteConfig};
use trustloop::profiler::ProfilerBackend;
use trustloop::reasoning::ReasoningBackend;
use trustloop::rules::LifecycleConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    File { path: String, message: String },
    #[error("field `{field}`: {message}")]
    Field { field: &'static str, message: String },
}

fn field(field: &'static str, message: impl Display) -> ConfigError {
    ConfigError::Field { field, message: message.to_string() }
}

fn parsed<'de, D, T>(d: D) -> Result<Option<T>, D::Error>
where
    D: Deserializer<'de>,
    T: FromStr,
    T::Err: Display,
{
    Option::<String>::deserialize(d)?.map(|s| s.parse().map_err(serde::de::Error::custom)).transpose()
}

/// Seeds are 64-bit; TOML integers are signed, so large seeds are
/// written as strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seed(pub u64);

impl Serialize for Seed {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(self.0) {
            Ok(v) => s.serialize_i64(v),
            Err(_) => s.serialize_str(&self.0.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Seed {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(i64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Int(v) => {
                u64::try_from(v).map(Seed).map_err(|_| serde::de::Error::custom("seed must be non-negative"))
            }
            Repr::Text(t) => t
                .parse()
                .map(Seed)
                .map_err(|_| serde::de::Error::custom(format!("seed `{t}` is not a 64-bit unsigned integer"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifecycleSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_applications: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub promote_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retire_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub include_candidates: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attempts: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_concurrency: Option<usize>,
    /// JSONL transcript of every completion, replayable later.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log: Option<PathBuf>,
}

/// Every setting is optional; unset ones take their defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, deserialize_with = "parsed", serialize_with = "shown", skip_serializing_if = "Option::is_none")]
    pub env: Option<EnvKind>,
    #[serde(default, deserialize_with = "parsed", serialize_with = "shown", skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    #[serde(default, deserialize_with = "parsed", serialize_with = "shown", skip_serializing_if = "Option::is_none")]
    pub backend: Option<BackendSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<Seed>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wordlist: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub allowed_wordlist: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hard_validity: Option<bool>,
    #[serde(default, deserialize_with = "parsed", serialize_with = "shown", skip_serializing_if = "Option::is_none")]
    pub fallback_order: Option<CandidateOrder>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub icl_samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_epochs: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_output_tokens: Option<u32>,
    #[serde(default, deserialize_with = "parsed", serialize_with = "shown", skip_serializing_if = "Option::is_none")]
    pub profiler: Option<ProfilerBackend>,
    #[serde(default, deserialize_with = "parsed", serialize_with = "shown", skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<ReasoningBackend>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_support: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "is_default")]
    pub lifecycle: LifecycleSection,
    #[serde(default, skip_serializing_if = "is_default")]
    pub remote: RemoteSection,
}

fn shown<S: Serializer, T: Display>(v: &Option<T>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.serialize_str(&v.to_string()),
        None => s.serialize_none(),
    }
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

impl ConfigFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::File { path: origin.to_string(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::File { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Values set in `over` win.
    pub fn overlay(self, over: ConfigFile) -> ConfigFile {
        macro_rules! pick {
            ($($f:ident),*) => { ConfigFile { $($f: over.$f.or(self.$f),)* lifecycle: LifecycleSection {
                min_applications: over.lifecycle.min_applications.or(self.lifecycle.min_applications),
                promote_threshold: over.lifecycle.promote_threshold.or(self.lifecycle.promote_threshold),
                retire_threshold: over.lifecycle.retire_threshold.or(self.lifecycle.retire_threshold),
                include_candidates: over.lifecycle.include_candidates.or(self.lifecycle.include_candidates),
            }, remote: RemoteSection {
                base_url: over.remote.base_url.or(self.remote.base_url),
                model: over.remote.model.or(self.remote.model),
                timeout_secs: over.remote.timeout_secs.or(self.remote.timeout_secs),
                attempts: over.remote.attempts.or(self.remote.attempts),
                max_concurrency: over.remote.max_concurrency.or(self.remote.max_concurrency),
                log: over.remote.log.or(self.remote.log),
            } } };
        }
        pick!(
            env,
            variant,
            backend,
            epochs,
            trajectories,
            seed,
            wordlist,
            allowed_wordlist,
            hard_validity,
            fallback_order,
            icl_samples,
            warmup_epochs,
            temperature,
            max_output_tokens,
            profiler,
            reasoning,
            min_support,
            workers
        )
    }

    /// Fills every default and checks the result.
    pub fn resolve(self) -> Result<RunConfig, ConfigError> {
        let env = self.env.ok_or_else(|| field("env", "required (gmn or wordle)"))?;
        let variant = self.variant.unwrap_or(Variant::Guided);
        let backend =
            self.backend.ok_or_else(|| field("backend", "required (remote, scripted:<policy> or replay:<path>)"))?;
        let defaults = AgentConfig::default();
        let lifecycle_defaults = LifecycleConfig::default();
        let remote_env = RemoteConfig::from_env();
        let resolved = RunConfig {
            file: ConfigFile {
                env: Some(env),
                variant: Some(variant),
                backend: Some(backend),
                epochs: Some(self.epochs.unwrap_or(defaults.epochs)),
                trajectories: Some(self.trajectories.unwrap_or(defaults.trajectories_per_epoch)),
                seed: Some(self.seed.unwrap_or(Seed(defaults.master_seed))),
                wordlist: self.wordlist,
                allowed_wordlist: self.allowed_wordlist,
                hard_validity: Some(self.hard_validity.unwrap_or(variant == Variant::Guided)),
                fallback_order: Some(self.fallback_order.unwrap_or(defaults.fallback_order)),
                icl_samples: Some(self.icl_samples.unwrap_or(defaults.icl_sample_count)),
                warmup_epochs: Some(self.warmup_epochs.unwrap_or(defaults.warmup_epochs)),
                temperature: Some(self.temperature.unwrap_or(defaults.temperature)),
                max_output_tokens: Some(self.max_output_tokens.unwrap_or(defaults.max_output_tokens)),
                profiler: Some(self.profiler.unwrap_or(defaults.profiler)),
                reasoning: Some(self.reasoning.unwrap_or(defaults.reasoning)),
                min_support: Some(self.min_support.unwrap_or(defaults.min_support)),
                workers: Some(self.workers.unwrap_or(defaults.workers)),
                lifecycle: LifecycleSection {
                    min_applications: Some(
                        self.lifecycle.min_applications.unwrap_or(lifecycle_defaults.min_applications),
                    ),
                    promote_threshold: Some(
                        self.lifecycle.promote_threshold.unwrap_or(lifecycle_defaults.promote_threshold),
                    ),
                    retire_threshold: Some(
                        self.lifecycle.retire_threshold.unwrap_or(lifecycle_defaults.retire_threshold),
                    ),
                    include_candidates: Some(
                        self.lifecycle.include_candidates.unwrap_or(lifecycle_defaults.include_candidates),
                    ),
                },
                remote: RemoteSection {
                    base_url: Some(self.remote.base_url.unwrap_or(remote_env.base_url.clone())),
                    model: Some(self.remote.model.unwrap_or(remote_env.model.clone())),
                    timeout_secs: Some(self.remote.timeout_secs.unwrap_or(remote_env.timeout.as_secs())),
                    attempts: Some(self.remote.attempts.unwrap_or(remote_env.attempts)),
                    max_concurrency: Some(self.remote.max_concurrency.unwrap_or(remote_env.max_concurrency)),
                    log: self.remote.log,
                },
            },
        };
        resolved.agent_config().validate().map_err(|m| field("config", m))?;
        let r = &resolved.file.remote;
        if r.attempts == Some(0) {
            return Err(field("remote.attempts", "must be at least 1"));
        }
        if r.max_concurrency == Some(0) {
            return Err(field("remote.max_concurrency", "must be at least 1"));
        }
        if resolved.file.allowed_wordlist.is_some() && resolved.file.wordlist.is_none() {
            return Err(field("allowed_wordlist", "needs `wordlist` as well"));
        }
        Ok(resolved)
    }
}

/// A fully resolved configuration: every field of `file` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    file: ConfigFile,
}

impl RunConfig {
    pub fn env(&self) -> EnvKind {
        self.file.env.expect("resolved")
    }

    pub fn variant(&self) -> Variant {
        self.file.variant.expect("resolved")
    }

    pub fn backend(&self) -> &BackendSpec {
        self.file.backend.as_ref().expect("resolved")
    }

    pub fn seed(&self) -> u64 {
        self.file.seed.expect("resolved").0
    }

    pub fn agent_config(&self) -> AgentConfig {
        let f = &self.file;
        let l = &f.lifecycle;
        let defaults = LifecycleConfig::default();
        AgentConfig {
            variant: self.variant(),
            epochs: f.epochs.unwrap_or_default(),
            trajectories_per_epoch: f.trajectories.unwrap_or_default(),
            icl_sample_count: f.icl_samples.unwrap_or_default(),
            warmup_epochs: f.warmup_epochs.unwrap_or_default(),
            master_seed: self.seed(),
            temperature: f.temperature.unwrap_or_default(),
            max_output_tokens: f.max_output_tokens.unwrap_or_default(),
            fallback_order: f.fallback_order.unwrap_or_default(),
            profiler: f.profiler.unwrap_or_default(),
            reasoning: f.reasoning.unwrap_or_default(),
            lifecycle: LifecycleConfig {
                min_applications: l.min_applications.unwrap_or(defaults.min_applications),
                promote_threshold: l.promote_threshold.unwrap_or(defaults.promote_threshold),
                retire_threshold: l.retire_threshold.unwrap_or(defaults.retire_threshold),
                include_candidates: l.include_candidates.unwrap_or(defaults.include_candidates),
            },
            min_support: f.min_support.unwrap_or_default(),
            workers: f.workers.unwrap_or_default(),
        }
    }

    pub fn words(&self) -> Result<Arc<WordList>, ConfigError> {
        match &self.file.wordlist {
            None => Ok(WordList::standard()),
            Some(answers) => WordList::load(answers, self.file.allowed_wordlist.as_deref())
                .map(Arc::new)
                .map_err(|e| field("wordlist", e)),
        }
    }

    pub fn factory(&self) -> Result<EnvFactory, ConfigError> {
        Ok(EnvFactory::new(self.env(), self.file.hard_validity.unwrap_or(false), self.words()?))
    }

    pub fn remote(&self) -> RemoteConfig {
        let r = &self.file.remote;
        let mut cfg = RemoteConfig::from_env();
        if let Some(url) = &r.base_url {
            cfg.base_url = url.clone();
        }
        if let Some(model) = &r.model {
            cfg.model = model.clone();
        }
        if let Some(secs) = r.timeout_secs {
            cfg.timeout = Duration::from_secs(secs);
        }
        if let Some(n) = r.attempts {
            cfg.attempts = n;
        }
        if let Some(n) = r.max_concurrency {
            cfg.max_concurrency = n;
        }
        cfg.log_path = r.log.clone();
        cfg
    }

    /// Builds the completion backend; fails fast on a missing API key.
    pub fn gateway(&self, words: Arc<WordList>) -> Result<Arc<dyn CompletionBackend>, ConfigError> {
        self.backend().build(words, self.remote()).map_err(|e| field("backend", e))
    }

    /// The snapshot written into the run directory. Never contains the key.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.file).expect("resolved configuration serializes")
    }

    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        ConfigFile::parse(text, origin)?.resolve()
    }
}
