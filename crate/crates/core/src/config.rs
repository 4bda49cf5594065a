//! Run configuration: one TOML file drives every subcommand.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Backend endpoints and the API key can be overridden through the
//! environment:
//!
//! | variable | overrides |
//! |---|---|
//! | `STEREOBENCH_TRANSLATE_URL` | `backends.translator.url` |
//! | `STEREOBENCH_QE_URL` | `backends.qe.url` |
//! | `STEREOBENCH_SCORE_URL` | `backends.scorer.url` |
//! | `STEREOBENCH_API_KEY` | bearer token for all HTTP backends |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::backends::mock::{FixtureQe, FixtureScorer, FixtureTranslator};
use crate::backends::{
    CachedQe, CachedScorer, CachedTranslator, HttpQe, HttpScorer, HttpTranslator, ModelRef,
    QualityEstimator, ResponseCache, Scorer, Translator,
};
use crate::error::{Error, Result};
use crate::expansion::{ExpansionConfig, PairHeuristicConfig, UnsupportedQePolicy};
use crate::metrics::{ProxySets, DEFAULT_PERMUTATIONS};
use crate::templating::TemplateRegistry;

pub const ENV_TRANSLATE_URL: &str = "STEREOBENCH_TRANSLATE_URL";
pub const ENV_QE_URL: &str = "STEREOBENCH_QE_URL";
pub const ENV_SCORE_URL: &str = "STEREOBENCH_SCORE_URL";
pub const ENV_API_KEY: &str = "STEREOBENCH_API_KEY";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub url: Option<String>,
    pub provider: Option<String>,
    pub batch_size: usize,
    /// Mock translator: share of texts that fail, per mille.
    pub failure_permille: u64,
    /// Mock QE score range.
    pub qe_low: f64,
    pub qe_high: f64,
    /// Languages the mock QE rejects as unsupported.
    pub unsupported: Vec<String>,
    pub conditioning: Option<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            url: None,
            provider: None,
            batch_size: 32,
            failure_permille: 0,
            qe_low: 0.80,
            qe_high: 1.0,
            unsupported: vec!["mt".into()],
            conditioning: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Backends {
    pub translator: BackendConfig,
    pub qe: BackendConfig,
    pub scorer: BackendConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub id: String,
    pub endpoint: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

impl ModelConfig {
    pub fn model_ref(&self) -> ModelRef {
        ModelRef {
            model_id: self.id.clone(),
            endpoint: self.endpoint.clone(),
            params: self.params.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub corpus: Option<PathBuf>,
    /// Extra or replacement language profiles, merged over the built-ins.
    pub templates: Option<PathBuf>,
    pub languages: Vec<String>,
    pub out: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub seed: u64,
    pub max_inflight: usize,
    pub permutations: usize,
    pub validation_size: usize,
    pub source_lang: String,
    pub unsupported_qe: UnsupportedQePolicy,
    pub heuristic: PairHeuristicConfig,
    pub proxy: ProxySets,
    pub backends: Backends,
    pub models: Vec<ModelConfig>,
    /// Annotation CSVs by name, usually one per language.
    pub annotations: BTreeMap<String, PathBuf>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            corpus: None,
            templates: None,
            languages: Vec::new(),
            out: PathBuf::from("out"),
            cache_dir: None,
            seed: 0,
            max_inflight: 4,
            permutations: DEFAULT_PERMUTATIONS,
            validation_size: 100,
            source_lang: "en".into(),
            unsupported_qe: UnsupportedQePolicy::SkipQe,
            heuristic: PairHeuristicConfig::default(),
            proxy: ProxySets::default(),
            backends: Backends::default(),
            models: Vec::new(),
            annotations: BTreeMap::new(),
            base_dir: PathBuf::from("."),
        }
    }
}

fn env_var(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}

impl Config {
    pub fn from_toml(raw: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: Config = toml::from_str(raw).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&raw, base)
    }

    pub fn validate(&self) -> Result<()> {
        self.heuristic.validate()?;
        self.proxy.validate()?;
        if self.max_inflight == 0 {
            return Err(Error::Config("max_inflight must be at least 1".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.models {
            if m.id.trim().is_empty() || !seen.insert(&m.id) {
                return Err(Error::Config(format!("empty or duplicate model id `{}`", m.id)));
            }
        }
        for (name, b) in [
            ("translator", &self.backends.translator),
            ("qe", &self.backends.qe),
            ("scorer", &self.backends.scorer),
        ] {
            if !(0.0..=1.0).contains(&b.qe_low) || !(b.qe_low..=1.0).contains(&b.qe_high) {
                return Err(Error::Config(format!("{name}: bad qe_low/qe_high range")));
            }
            if b.failure_permille > 1000 {
                return Err(Error::Config(format!("{name}: failure_permille above 1000")));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.resolve(&self.out)
    }

    pub fn cache_path(&self) -> PathBuf {
        match &self.cache_dir {
            Some(p) => self.resolve(p),
            None => self.out_dir().join("cache"),
        }
    }

    pub fn corpus_path(&self) -> Result<PathBuf> {
        self.corpus
            .as_ref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::Config("no `corpus` configured".into()))
    }

    pub fn registry(&self) -> Result<TemplateRegistry> {
        let mut r = TemplateRegistry::builtin();
        if let Some(p) = &self.templates {
            r.merge(TemplateRegistry::from_path(self.resolve(p))?);
        }
        Ok(r)
    }

    pub fn expansion(&self) -> ExpansionConfig {
        ExpansionConfig {
            heuristic: self.heuristic.clone(),
            source_lang: self.source_lang.clone(),
            unsupported_qe: self.unsupported_qe,
        }
    }

    pub fn model(&self, id: &str) -> Result<&ModelConfig> {
        self.models
            .iter()
            .find(|m| m.id == id)
            .ok_or_else(|| Error::Config(format!("model `{id}` is not configured")))
    }

    fn url(&self, b: &BackendConfig, env: &str, what: &str) -> Result<String> {
        env_var(env)
            .or_else(|| b.url.clone())
            .ok_or_else(|| Error::Config(format!("{what}: http backend needs `url` or ${env}")))
    }

    fn per_backend_inflight(&self) -> usize {
        self.max_inflight.max(1)
    }

    pub fn translator(&self, cache: &Arc<ResponseCache>) -> Result<Arc<dyn Translator>> {
        let b = &self.backends.translator;
        let inner: Arc<dyn Translator> = match b.kind {
            BackendKind::Mock => Arc::new(
                FixtureTranslator::new(self.registry()?).with_failures(b.failure_permille),
            ),
            BackendKind::Http => {
                let mut t = HttpTranslator::new(
                    &self.url(b, ENV_TRANSLATE_URL, "translator")?,
                    b.provider.clone().unwrap_or_else(|| "http-translator".into()),
                )
                .with_batch_size(b.batch_size)
                .with_max_inflight(self.per_backend_inflight());
                if let Some(k) = env_var(ENV_API_KEY) {
                    t = t.with_api_key(k);
                }
                Arc::new(t)
            }
        };
        Ok(Arc::new(CachedTranslator::new(inner, cache.clone())))
    }

    pub fn qe(&self, cache: &Arc<ResponseCache>) -> Result<Arc<dyn QualityEstimator>> {
        let b = &self.backends.qe;
        let inner: Arc<dyn QualityEstimator> = match b.kind {
            BackendKind::Mock => Arc::new(
                FixtureQe::new(b.qe_low, b.qe_high).with_unsupported(b.unsupported.iter()),
            ),
            BackendKind::Http => {
                let mut q = HttpQe::new(
                    &self.url(b, ENV_QE_URL, "qe")?,
                    b.provider.clone().unwrap_or_else(|| "http-qe".into()),
                )
                .with_batch_size(b.batch_size)
                .with_max_inflight(self.per_backend_inflight());
                if let Some(k) = env_var(ENV_API_KEY) {
                    q = q.with_api_key(k);
                }
                Arc::new(q)
            }
        };
        Ok(Arc::new(CachedQe::new(inner, cache.clone())))
    }

    pub fn scorer(&self, cache: &Arc<ResponseCache>) -> Result<Arc<dyn Scorer>> {
        let b = &self.backends.scorer;
        let inner: Arc<dyn Scorer> = match b.kind {
            BackendKind::Mock => Arc::new(FixtureScorer::new()),
            BackendKind::Http => {
                let mut s = HttpScorer::new(
                    &self.url(b, ENV_SCORE_URL, "scorer")?,
                    b.provider.clone().unwrap_or_else(|| "http-scorer".into()),
                )
                .with_batch_size(b.batch_size)
                .with_max_inflight(self.per_backend_inflight());
                if let Some(c) = &b.conditioning {
                    s = s.with_conditioning(c.clone());
                }
                if let Some(k) = env_var(ENV_API_KEY) {
                    s = s.with_api_key(k);
                }
                Arc::new(s)
            }
        };
        Ok(Arc::new(CachedScorer::new(inner, cache.clone())))
    }
}
