//! TOML configuration: server binding, resource paths, pipeline parameters
//! and the track config. Relative paths resolve against the config file's
//! directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotate::{Annotator, CategoryRules, Gazetteer, SentimentLexicon, DEFAULT_ANGER_THRESHOLD};
use crate::cluster::{ClusterConfig, DEFAULT_THETA, DEFAULT_WINDOW_HOURS};
use crate::error::{Error, Result};
use crate::ingest::TrackConfig;
use crate::media::MediaWeights;
use crate::parse::{NoiseRules, Tokenizer};

pub const CONFIG_ENV: &str = "ACT_CONFIG";

fn default_bind() -> String {
    "127.0.0.1".into()
}

fn default_port() -> u32 {
    8080
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_port")]
    pub port: u32,
    /// Origin allowed by CORS; omitted disables CORS headers.
    #[serde(default)]
    pub cors_origin: Option<String>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: default_bind(),
            port: default_port(),
            cors_origin: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    pub media_corpus: Option<PathBuf>,
    pub remote_media: Option<PathBuf>,
    pub gazetteer: Option<PathBuf>,
    pub sentiment_lexicon: Option<PathBuf>,
    pub anger_terms: Option<PathBuf>,
    pub category_rules: Option<PathBuf>,
    pub noise_rules: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    /// Store directory; created if absent. Without it nothing is persisted.
    pub data_dir: Option<PathBuf>,
}

const REQUIRED_PATHS: &[&str] = &[
    "gazetteer",
    "sentiment_lexicon",
    "anger_terms",
    "category_rules",
    "noise_rules",
    "stopwords",
];

impl PathsConfig {
    fn fields(&self) -> [(&'static str, &Option<PathBuf>); 9] {
        [
            ("corpus", &self.corpus),
            ("media_corpus", &self.media_corpus),
            ("remote_media", &self.remote_media),
            ("gazetteer", &self.gazetteer),
            ("sentiment_lexicon", &self.sentiment_lexicon),
            ("anger_terms", &self.anger_terms),
            ("category_rules", &self.category_rules),
            ("noise_rules", &self.noise_rules),
            ("stopwords", &self.stopwords),
        ]
    }

    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.corpus,
            &mut self.media_corpus,
            &mut self.remote_media,
            &mut self.gazetteer,
            &mut self.sentiment_lexicon,
            &mut self.anger_terms,
            &mut self.category_rules,
            &mut self.noise_rules,
            &mut self.stopwords,
            &mut self.data_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

fn default_snapshot_batch() -> usize {
    50
}

fn default_queue_capacity() -> usize {
    1024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineParams {
    pub theta: f64,
    pub window_hours: f64,
    pub snapshot_batch: usize,
    pub anger_threshold: f64,
    pub queue_capacity: usize,
    pub media_weights: MediaWeights,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            theta: DEFAULT_THETA,
            window_hours: DEFAULT_WINDOW_HOURS,
            snapshot_batch: default_snapshot_batch(),
            anger_threshold: DEFAULT_ANGER_THRESHOLD,
            queue_capacity: default_queue_capacity(),
            media_weights: MediaWeights::default(),
        }
    }
}

impl PipelineParams {
    pub fn cluster_config(&self) -> ClusterConfig {
        ClusterConfig::new(self.theta, self.window_hours)
    }

    pub fn diagnostics(&self) -> Vec<Error> {
        let mut out = Vec::new();
        let unit = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        if !unit(self.theta) {
            out.push(Error::config("pipeline.theta", "must be within [0, 1]"));
        }
        if !(self.window_hours.is_finite() && self.window_hours > 0.0) {
            out.push(Error::config("pipeline.window_hours", "must be > 0"));
        }
        if self.snapshot_batch == 0 {
            out.push(Error::config("pipeline.snapshot_batch", "must be >= 1"));
        }
        if !unit(self.anger_threshold) {
            out.push(Error::config("pipeline.anger_threshold", "must be within [0, 1]"));
        }
        if self.queue_capacity == 0 {
            out.push(Error::config("pipeline.queue_capacity", "must be >= 1"));
        }
        let w = &self.media_weights;
        for (name, v) in [("content", w.content), ("geo", w.geo), ("time", w.time), ("cutoff", w.cutoff)] {
            if !(v.is_finite() && v >= 0.0) {
                out.push(Error::config(format!("pipeline.media_weights.{name}"), "must be a finite number >= 0"));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiConfig {
    #[serde(default)]
    pub server: ServerConfig,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub pipeline: PipelineParams,
    #[serde(default)]
    pub track: TrackConfig,
}

impl ApiConfig {
    /// Parses and resolves relative paths; does not check the filesystem.
    pub fn parse(body: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ApiConfig = toml::from_str(body).map_err(|e| Error::config("<file>", e.message().to_string()))?;
        cfg.paths.resolve(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path).map_err(|source| Error::Open {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&body, path.parent().unwrap_or(Path::new(".")))
    }

    /// Every problem found, each naming its field.
    pub fn diagnostics(&self) -> Vec<Error> {
        let mut out = Vec::new();
        if !(1..=65535).contains(&self.server.port) {
            out.push(Error::config("server.port", format!("{} is outside 1..=65535", self.server.port)));
        }
        for (name, value) in self.paths.fields() {
            match value {
                None if REQUIRED_PATHS.contains(&name) => {
                    out.push(Error::config(format!("paths.{name}"), "required"));
                }
                Some(p) if !p.is_file() => {
                    out.push(Error::config(format!("paths.{name}"), format!("{} does not exist", p.display())));
                }
                _ => {}
            }
        }
        out.extend(self.pipeline.diagnostics());
        if let Err(e) = self.track.validate() {
            out.push(e);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        match self.diagnostics().into_iter().next() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    /// Loads every referenced resource; content errors name the file.
    pub fn resources(&self) -> Result<Resources> {
        self.validate()?;
        let p = &self.paths;
        let req = |o: &Option<PathBuf>| o.clone().expect("validated");
        let tokenizer = Tokenizer::load(&req(&p.stopwords))?;
        let gazetteer = Gazetteer::load(&req(&p.gazetteer), &tokenizer)?;
        Ok(Resources {
            tokenizer,
            noise_rules: NoiseRules::load(&req(&p.noise_rules))?,
            annotator: Annotator {
                gazetteer,
                categories: CategoryRules::load(&req(&p.category_rules))?,
                lexicon: SentimentLexicon::load(&req(&p.sentiment_lexicon), &req(&p.anger_terms))?,
                anger_threshold: self.pipeline.anger_threshold,
            },
            media_weights: self.pipeline.media_weights,
        })
    }
}

/// Read-only resources shared by the pipeline and every reader.
#[derive(Debug, Clone)]
pub struct Resources {
    pub tokenizer: Tokenizer,
    pub noise_rules: NoiseRules,
    pub annotator: Annotator,
    pub media_weights: MediaWeights,
}

impl Default for Resources {
    fn default() -> Self {
        Self {
            tokenizer: Tokenizer::shipped().clone(),
            noise_rules: NoiseRules::shipped(),
            annotator: Annotator::default(),
            media_weights: MediaWeights::default(),
        }
    }
}
