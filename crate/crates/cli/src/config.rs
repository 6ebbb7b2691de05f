//! Experiment files: TOML, or JSON when the file ends in `.json`.

use std::path::{Path, PathBuf};

use fedprompt_core::algorithms::{AlgoHyper, Method, PromptShape, SgdConfig};
use fedprompt_core::data::{generate_synthetic_dataset, load_feature_table, MasterDataset, SyntheticSpec};
use fedprompt_core::evaluation::{PartitionConfig, ScenarioKind, ScenarioSpec, Setup};
use fedprompt_core::federation::FederationConfig;
use fedprompt_core::vlm::{EncoderVariant, VlmConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    /// Output directory; `FEDPROMPT_OUT` takes precedence.
    pub output: PathBuf,
    pub scenarios: Vec<ScenarioSpec>,
    pub federation: FederationConfig,
    pub optimizer: OptimizerConfig,
    pub model: ModelConfig,
    pub algorithms: AlgoHyper,
    pub data: DataConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            methods: vec![Method::PromptFl],
            output: PathBuf::from("results"),
            scenarios: vec![ScenarioSpec::new(ScenarioKind::Global)],
            federation: FederationConfig::default(),
            optimizer: OptimizerConfig::default(),
            model: ModelConfig::default(),
            algorithms: AlgoHyper::default(),
            data: DataConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let sgd = SgdConfig::default();
        Self { lr: sgd.lr, momentum: sgd.momentum }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Prompt sets per client model (m).
    pub prompts: usize,
    /// Context tokens per prompt (L).
    pub tokens: usize,
    pub d_token: usize,
    /// Defaults to the data width.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_feature: Option<usize>,
    /// Defaults to the data width.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_image: Option<usize>,
    pub variant: EncoderVariant,
    pub tau: f64,
    pub class_tokens: usize,
    pub token_std: f64,
    pub encoder_gain: f64,
    pub zero_shot_gap: f64,
    pub fit_iterations: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let v = VlmConfig::default();
        let s = PromptShape::default();
        Self {
            prompts: s.prompts,
            tokens: s.len,
            d_token: v.d_token,
            d_feature: None,
            d_image: None,
            variant: v.variant,
            tau: v.tau,
            class_tokens: v.class_tokens,
            token_std: v.token_std,
            encoder_gain: v.encoder_gain,
            zero_shot_gap: v.zero_shot_gap,
            fit_iterations: v.fit_iterations,
            seed: v.seed,
        }
    }
}

impl ModelConfig {
    pub fn shape(&self) -> PromptShape {
        PromptShape { prompts: self.prompts, len: self.tokens }
    }

    pub fn vlm(&self, data_width: usize) -> VlmConfig {
        VlmConfig {
            variant: self.variant,
            d_token: self.d_token,
            d_feature: self.d_feature.unwrap_or(data_width),
            class_tokens: self.class_tokens,
            tau: self.tau,
            token_std: self.token_std,
            encoder_gain: self.encoder_gain,
            zero_shot_gap: self.zero_shot_gap,
            fit_iterations: self.fit_iterations,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset label in outputs; defaults to `synthetic` or the table's file stem.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Feature table, relative to the config file; replaces the synthetic data.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
    pub synthetic: SyntheticSpec,
    pub partition: PartitionConfig,
}

impl DataConfig {
    pub fn name(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match &self.table {
            Some(p) => p.file_stem().map_or("table".into(), |s| s.to_string_lossy().into_owned()),
            None => "synthetic".into(),
        }
    }

    pub fn load(&self) -> fedprompt_core::Result<MasterDataset> {
        match &self.table {
            Some(path) => load_feature_table(path),
            None => generate_synthetic_dataset(&self.synthetic),
        }
    }

    /// Class count without generating anything.
    pub fn classes(&self) -> fedprompt_core::Result<usize> {
        match &self.table {
            Some(_) => self.load().map(|d| d.classes()),
            None => Ok(self.synthetic.classes),
        }
    }
}

fn invalid(key: &str, message: impl std::fmt::Display) -> CliError {
    CliError::Invalid { key: key.to_string(), message: message.to_string() }
}

impl ExperimentConfig {
    /// Checks every field that serde cannot, naming the offending key.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "needs at least one seed"));
        }
        if self.methods.is_empty() {
            return Err(invalid("methods", "needs at least one method"));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(invalid("methods", format!("`{m}` listed twice")));
            }
        }
        if self.scenarios.is_empty() {
            return Err(invalid("scenarios", "needs at least one scenario"));
        }
        for (i, s) in self.scenarios.iter().enumerate() {
            s.validate().map_err(|e| invalid(&format!("scenarios[{i}]"), e))?;
            if self.scenarios[..i].iter().any(|o| o.label() == s.label()) {
                return Err(invalid(&format!("scenarios[{i}].name"), format!("scenario `{}` listed twice", s.label())));
            }
        }
        let f = &self.federation;
        for (key, value) in [
            ("federation.num_clients", f.num_clients),
            ("federation.rounds", f.rounds),
            ("federation.local_epochs", f.local_epochs),
            ("federation.batch_size", f.batch_size),
            ("federation.eval_every", f.eval_every),
        ] {
            if value == 0 {
                return Err(invalid(key, "must be at least 1"));
            }
        }
        f.validate().map_err(|e| invalid("federation", e))?;
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(invalid("optimizer.lr", format!("must be positive, got {}", o.lr)));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(invalid("optimizer.momentum", format!("must lie in [0, 1), got {}", o.momentum)));
        }
        let m = &self.model;
        for (key, value) in
            [("model.prompts", m.prompts), ("model.tokens", m.tokens), ("model.d_token", m.d_token), ("model.class_tokens", m.class_tokens)]
        {
            if value == 0 {
                return Err(invalid(key, "must be at least 1"));
            }
        }
        if !(m.tau > 0.0 && m.tau.is_finite()) {
            return Err(invalid("model.tau", format!("must be positive, got {}", m.tau)));
        }
        for (key, value) in [("model.token_std", m.token_std), ("model.encoder_gain", m.encoder_gain)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(invalid(key, format!("must be positive, got {value}")));
            }
        }
        if !(m.zero_shot_gap >= 0.0 && m.zero_shot_gap.is_finite()) {
            return Err(invalid("model.zero_shot_gap", format!("must be non-negative, got {}", m.zero_shot_gap)));
        }
        if let (Some(f), Some(i)) = (m.d_feature, m.d_image) {
            if f != i {
                return Err(invalid("model.d_image", format!("image width {i} differs from feature width {f}")));
            }
        }
        self.algorithms.validate().map_err(|e| invalid("algorithms", e))?;
        if self.data.table.is_none() {
            self.data.synthetic.validate().map_err(|e| invalid("data.synthetic", e))?;
            for (key, value) in [("model.d_feature", m.d_feature), ("model.d_image", m.d_image)] {
                if value.is_some_and(|v| v != self.data.synthetic.dim) {
                    return Err(invalid(key, format!("must equal the data width {}", self.data.synthetic.dim)));
                }
            }
        }
        let p = &self.data.partition;
        if !(p.alpha > 0.0 && p.alpha.is_finite()) {
            return Err(invalid("data.partition.alpha", format!("must be positive, got {}", p.alpha)));
        }
        if p.per_class == Some(0) {
            return Err(invalid("data.partition.per_class", "must be at least 1"));
        }
        if p.local_regions == 0 {
            return Err(invalid("data.partition.local_regions", "must be at least 1"));
        }
        Ok(())
    }

    /// Loads the data and fits the frozen model.
    pub fn setup(&self) -> Result<Setup, CliError> {
        let dataset = self.data.load()?;
        let vlm = self.model.vlm(dataset.dim());
        if let Some(i) = self.model.d_image.filter(|&i| i != dataset.dim()) {
            return Err(invalid("model.d_image", format!("{i} differs from the data width {}", dataset.dim())));
        }
        let sgd = SgdConfig { lr: self.optimizer.lr, momentum: self.optimizer.momentum, ..SgdConfig::default() };
        Ok(Setup::new(
            self.data.name(),
            dataset,
            vlm,
            self.model.shape(),
            self.algorithms.clone(),
            sgd,
            self.federation.clone(),
            self.data.partition.clone(),
        )?)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Output(format!("cannot serialize config: {e}")))
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn key_path(path: &serde_path_to_error::Path) -> String {
    let p = path.to_string();
    if p == "." {
        "(top level)".into()
    } else {
        p
    }
}

/// Parses without validating.
pub fn parse_config_str(text: &str, json: bool, origin: &str) -> Result<ExperimentConfig, CliError> {
    let located = |key: String, line: Option<usize>, message: String| CliError::Parse { origin: origin.to_string(), key, line, message };
    if json {
        let mut de = serde_json::Deserializer::from_str(text);
        return serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let key = key_path(e.path());
            let inner = e.into_inner();
            located(key, Some(inner.line()), inner.to_string())
        });
    }
    let de = toml::Deserializer::parse(text)
        .map_err(|e| located("(syntax)".into(), e.span().map(|s| line_of(text, s.start)), e.message().trim().to_string()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let key = key_path(e.path());
        let inner = e.into_inner();
        located(key, inner.span().map(|s| line_of(text, s.start)), inner.message().trim().to_string())
    })
}

/// Reads, parses and validates a config; the table path becomes relative to
/// the config's directory.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Parse {
        origin: path.display().to_string(),
        key: "(file)".into(),
        line: None,
        message: format!("cannot read: {e}"),
    })?;
    let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let mut cfg = parse_config_str(&text, json, &path.display().to_string())?;
    if let Some(table) = cfg.data.table.take() {
        let resolved = match table.is_relative() {
            true => path.parent().unwrap_or(Path::new("")).join(&table),
            false => table.clone(),
        };
        if !resolved.exists() {
            return Err(invalid("data.table", format!("{} does not exist", table.display())));
        }
        cfg.data.table = Some(resolved);
    }
    cfg.validate()?;
    Ok(cfg)
}
