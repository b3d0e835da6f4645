use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use super::CliError;
use crate::graph::WalkMode;
use crate::model::{KeySource, NetworkConfig};
use crate::purisk::ClassPrior;
use crate::train::{AdamConfig, Objective, TrainConfig, TrialPlan};

/// Fully resolved experiment settings. Every output file embeds a copy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: String,
    pub data_dir: PathBuf,
    /// Class name or index; `None` picks the dataset default.
    pub positive_class: Option<String>,
    pub p: Vec<f64>,
    pub objective: Objective,
    pub kappa: usize,
    pub layers: usize,
    pub dim: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub trials: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub row_normalize: bool,
    pub key: KeySource,
    pub walk_mode: WalkMode,
    /// Overrides the class prior computed from each split.
    pub prior: Option<f64>,
    pub parallel_trials: usize,
    pub threshold: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: "cora".into(),
            data_dir: PathBuf::from("data"),
            positive_class: None,
            p: vec![0.01, 0.02, 0.03, 0.04, 0.05],
            objective: Objective::Nnpu,
            kappa: 4,
            layers: 2,
            dim: 64,
            steps: 500,
            learning_rate: 1e-4,
            trials: 10,
            seed: 0,
            out_dir: PathBuf::from("results"),
            row_normalize: false,
            key: KeySource::LayerInput,
            walk_mode: WalkMode::Cumulative,
            prior: None,
            parallel_trials: 1,
            threshold: 0.5,
        }
    }
}

/// Flags shared by every command. Anything given here wins over the config
/// file, which wins over the defaults.
#[derive(Args, Clone, Debug, Default)]
pub struct CommonArgs {
    /// JSON file with any subset of the experiment settings.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Dataset name; files are `<name>.content` and `<name>.cites`.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Directory holding `<name>/<name>.content` or `<name>.content`.
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<PathBuf>,
    /// Positive class, by name or by index into the sorted class names.
    #[arg(long)]
    pub positive_class: Option<String>,
    /// Labeling fractions, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub p: Option<Vec<f64>>,
    /// upu, nnpu, naive_ce or pn.
    #[arg(long)]
    pub objective: Option<Objective>,
    /// Number of hops.
    #[arg(long)]
    pub kappa: Option<usize>,
    /// Number of layers.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Hidden embedding width.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Adam steps per trial.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Trials per setting, each with its own split and initialization.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Base seed; trial `i` uses `seed + i`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Results go to `<out>/<dataset>/<command>/`, hop masks to `<out>/cache/`.
    #[arg(long, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Scale feature rows to sum to 1.
    #[arg(long)]
    pub row_normalize: bool,
    /// Use the raw features as attention keys at every layer.
    #[arg(long)]
    pub key_raw_features: bool,
    /// Hop masks from exact-length walks of the plain graph.
    #[arg(long)]
    pub exact_walk: bool,
    /// Fixed class prior instead of the one computed from each split.
    #[arg(long)]
    pub prior: Option<f64>,
    /// Trials to run concurrently.
    #[arg(long)]
    pub parallel_trials: Option<usize>,
    /// Decision threshold on the sigmoid output.
    #[arg(long)]
    pub threshold: Option<f64>,
}

impl ExperimentConfig {
    /// Settings in `path` layered over `base`. Unknown keys are rejected.
    pub fn merged_with_file(base: &Self, path: &Path) -> Result<Self, CliError> {
        let fail = |m: String| CliError::Config(format!("{}: {m}", path.display()));
        let text = fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
        let file: serde_json::Value = serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?;
        let serde_json::Value::Object(entries) = file else {
            return Err(fail("expected a JSON object".into()));
        };
        let mut merged = serde_json::to_value(base).map_err(|e| fail(e.to_string()))?;
        for (key, value) in entries {
            merged[key] = value;
        }
        serde_json::from_value(merged).map_err(|e| fail(e.to_string()))
    }

    /// Defaults, then the config file, then command-line flags.
    pub fn resolve(args: &CommonArgs) -> Result<Self, CliError> {
        Self::resolve_with(args, Self::default())
    }

    /// As [`ExperimentConfig::resolve`] with command-specific defaults.
    pub fn resolve_with(args: &CommonArgs, defaults: Self) -> Result<Self, CliError> {
        let mut c = match &args.config {
            Some(path) => Self::merged_with_file(&defaults, path)?,
            None => defaults,
        };
        macro_rules! take {
            ($($field:ident => $target:ident),* $(,)?) => {
                $(if let Some(v) = &args.$field {
                    c.$target = v.clone();
                })*
            };
        }
        take!(
            dataset => dataset,
            data_dir => data_dir,
            p => p,
            objective => objective,
            kappa => kappa,
            layers => layers,
            dim => dim,
            steps => steps,
            learning_rate => learning_rate,
            trials => trials,
            seed => seed,
            out_dir => out_dir,
            parallel_trials => parallel_trials,
            threshold => threshold,
        );
        if args.positive_class.is_some() {
            c.positive_class = args.positive_class.clone();
        }
        if args.prior.is_some() {
            c.prior = args.prior;
        }
        if args.row_normalize {
            c.row_normalize = true;
        }
        if args.key_raw_features {
            c.key = KeySource::RawFeatures;
        }
        if args.exact_walk {
            c.walk_mode = WalkMode::Exact;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.p.is_empty() {
            return bad("at least one labeling fraction is required".into());
        }
        if let Some(p) = self.p.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
            return bad(format!("labeling fraction {p} outside (0, 1)"));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.parallel_trials == 0 {
            return bad("parallel trials must be at least 1".into());
        }
        if let Some(pi) = self.prior {
            ClassPrior::new(pi).map_err(|e| CliError::Config(e.to_string()))?;
        }
        NetworkConfig {
            input_dim: 1,
            ..self.network(1)
        }
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
        self.train_config()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn positive_class(&self) -> Result<String, CliError> {
        match &self.positive_class {
            Some(c) => Ok(c.clone()),
            None => crate::data::default_positive_class(&self.dataset)
                .map(str::to_string)
                .ok_or_else(|| {
                    CliError::Config(format!(
                        "no default positive class for dataset {:?}; pass --positive-class",
                        self.dataset
                    ))
                }),
        }
    }

    pub fn network(&self, input_dim: usize) -> NetworkConfig {
        NetworkConfig {
            kappa: self.kappa,
            layers: self.layers,
            hidden_dim: self.dim,
            key_source: self.key,
            ..NetworkConfig::new(input_dim)
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            steps: self.steps,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                ..AdamConfig::default()
            },
            objective: self.objective,
            seed: self.seed,
            eval_threshold: self.threshold,
        }
    }

    pub fn plan(&self, p: f64, input_dim: usize) -> TrialPlan {
        TrialPlan {
            p,
            net: self.network(input_dim),
            train: self.train_config(),
            n_trials: self.trials,
            base_seed: self.seed,
            parallel: self.parallel_trials,
            prior_override: self.prior.map(|pi| ClassPrior::new(pi).expect("validated")),
        }
    }
}
