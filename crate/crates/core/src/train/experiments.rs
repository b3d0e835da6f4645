use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{train_once, Objective, Result, TrainConfig, TrainError, TrialReport};
use crate::data::{make_pu_split, GraphDataset};
use crate::graph::HopMaskSet;
use crate::model::NetworkConfig;
use crate::purisk::ClassPrior;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub seed: u64,
    pub error: String,
}

/// Outcome of repeated trials with seeds `base_seed + i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub objective: Objective,
    pub p: f64,
    pub net: NetworkConfig,
    pub reports: Vec<TrialReport>,
    pub failures: Vec<TrialFailure>,
    pub mean_f1: f64,
    /// Sample standard deviation; 0 for a single trial (see `single_trial`).
    pub std_f1: f64,
    pub single_trial: bool,
}

impl TrialSummary {
    /// Completed trials.
    pub fn n_trials(&self) -> usize {
        self.reports.len()
    }

    pub fn row(&self, dataset: &str) -> ResultRow {
        ResultRow {
            dataset: dataset.to_string(),
            objective: self.objective.name().to_string(),
            p: self.p,
            kappa: self.net.kappa,
            layers: self.net.layers,
            dim: self.net.hidden_dim,
            mean_f1: self.mean_f1,
            std_f1: self.std_f1,
            n_trials: self.n_trials(),
        }
    }
}

/// One line of an aggregate results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub objective: String,
    pub p: f64,
    pub kappa: usize,
    pub layers: usize,
    pub dim: usize,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub n_trials: usize,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs `job(i)` for `i in 0..count` on up to `workers` threads and returns
/// the results in index order.
fn run_indexed<T: Send>(count: usize, workers: usize, job: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = workers.clamp(1, count.max(1));
    if workers == 1 {
        return (0..count).map(&job).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= count {
                    break;
                }
                let out = job(i);
                slots.lock().expect("worker panicked")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|o| o.expect("every index ran"))
        .collect()
}

/// Everything a batch of trials needs apart from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub p: f64,
    pub net: NetworkConfig,
    pub train: TrainConfig,
    pub n_trials: usize,
    pub base_seed: u64,
    /// Worker threads; trials are independent so results do not depend on it.
    pub parallel: usize,
    /// Replaces the prior computed from each split.
    pub prior_override: Option<ClassPrior>,
}

impl TrialPlan {
    pub fn new(p: f64, net: NetworkConfig, train: TrainConfig) -> Self {
        TrialPlan {
            p,
            net,
            train,
            n_trials: 10,
            base_seed: 0,
            parallel: 1,
            prior_override: None,
        }
    }
}

/// Trains `n_trials` times, each with a fresh split and initialization from
/// seed `base_seed + i`. Failed trials are recorded and excluded from the
/// statistics; invalid configurations fail before any training.
pub fn run_trials(ds: &GraphDataset, masks: &HopMaskSet, plan: &TrialPlan) -> Result<TrialSummary> {
    if plan.n_trials == 0 {
        return Err(TrainError::Config("at least one trial is required".into()));
    }
    plan.train.validate()?;
    plan.net.validate()?;
    let (p, cfg, net) = (plan.p, &plan.train, &plan.net);
    let splits = (0..plan.n_trials)
        .map(|i| {
            let mut split = make_pu_split(ds, p, plan.base_seed + i as u64)?;
            if let Some(prior) = plan.prior_override {
                split.prior = prior;
            }
            Ok(split)
        })
        .collect::<Result<Vec<_>>>()?;
    let outcomes = run_indexed(plan.n_trials, plan.parallel, |i| {
        let seed = plan.base_seed + i as u64;
        let trial_cfg = TrainConfig { seed, ..*cfg };
        log::info!("{} {} p={p} seed={seed}: training", ds.name, cfg.objective);
        let out = train_once(ds, masks, &splits[i], net, &trial_cfg);
        match &out {
            Ok(r) => log::info!("seed={seed}: f1={:.4} ({:.1}s)", r.f1, r.runtime_seconds),
            Err(e) => log::error!("seed={seed}: trial aborted: {e}"),
        }
        (seed, out)
    });
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (seed, out) in outcomes {
        match out {
            Ok(r) => reports.push(r),
            Err(e) => failures.push(TrialFailure {
                seed,
                error: e.to_string(),
            }),
        }
    }
    let f1s: Vec<f64> = reports.iter().map(|r| r.f1).collect();
    let (mean_f1, std_f1) = mean_std(&f1s);
    Ok(TrialSummary {
        objective: cfg.objective,
        p,
        net: net.clone(),
        single_trial: reports.len() == 1,
        reports,
        failures,
        mean_f1,
        std_f1,
    })
}

/// Column layout of the ablation grid, with `full` the configured hop count.
pub fn ablation_columns(full: usize) -> [(Objective, usize); 5] {
    [
        (Objective::NaiveCe, full),
        (Objective::Upu, 1),
        (Objective::Upu, full),
        (Objective::Nnpu, 1),
        (Objective::Nnpu, full),
    ]
}

/// Column headers matching [`ablation_columns`].
pub const ABLATION_COLUMNS: [&str; 5] = ["naive_ce", "upu_k1", "upu", "nnpu_k1", "nnpu"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub p: f64,
    /// One summary per entry of [`ABLATION_COLUMNS`].
    pub cells: Vec<TrialSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub dataset: String,
    pub rows: Vec<AblationRow>,
}

/// The `{nnpu, upu} × {κ, 1}` plus naive cross-entropy grid, one row per `p`.
/// The plan's own `p` and objective are ignored.
pub fn ablation_suite(
    ds: &GraphDataset,
    masks: &HopMaskSet,
    p_list: &[f64],
    plan: &TrialPlan,
) -> Result<AblationTable> {
    let mut rows = Vec::with_capacity(p_list.len());
    for &p in p_list {
        let mut cells = Vec::with_capacity(5);
        for (objective, kappa) in ablation_columns(plan.net.kappa) {
            let masks = masks.truncated(kappa)?;
            let cell = TrialPlan {
                p,
                net: NetworkConfig { kappa, ..plan.net.clone() },
                train: TrainConfig { objective, ..plan.train },
                ..plan.clone()
            };
            cells.push(run_trials(ds, &masks, &cell)?);
        }
        rows.push(AblationRow { p, cells });
    }
    Ok(AblationTable {
        dataset: ds.name.clone(),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopAnalysisRow {
    pub k: usize,
    /// F1 of a model that only sees mask `B^k`.
    pub single_hop_f1: f64,
    pub single_hop_std: f64,
    /// Mean first-layer attention on hop `k` in the full model.
    pub attention_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopAnalysis {
    pub dataset: String,
    pub p: f64,
    pub rows: Vec<HopAnalysisRow>,
    pub full_model: TrialSummary,
    pub single_hop: Vec<TrialSummary>,
}

/// Per hop `k`: F1 when training on `B^k` alone, paired with the attention
/// the full model (hops `1..=max k`) places on that hop in its first layer.
pub fn single_hop_analysis(
    ds: &GraphDataset,
    masks: &HopMaskSet,
    k_list: &[usize],
    plan: &TrialPlan,
) -> Result<HopAnalysis> {
    let kmax = *k_list
        .iter()
        .max()
        .ok_or_else(|| TrainError::Config("no hops to analyze".into()))?;
    let full_masks = masks.truncated(kmax)?;
    let full_plan = TrialPlan {
        net: NetworkConfig { kappa: kmax, ..plan.net.clone() },
        ..plan.clone()
    };
    let full_model = run_trials(ds, &full_masks, &full_plan)?;
    let one_hop = TrialPlan {
        net: NetworkConfig { kappa: 1, ..plan.net.clone() },
        ..plan.clone()
    };
    let mut rows = Vec::with_capacity(k_list.len());
    let mut single_hop = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let summary = run_trials(ds, &masks.single(k)?, &one_hop)?;
        let attention: Vec<f64> = full_model
            .reports
            .iter()
            .map(|r| r.hop_attention_means[0][k - 1])
            .collect();
        rows.push(HopAnalysisRow {
            k,
            single_hop_f1: summary.mean_f1,
            single_hop_std: summary.std_f1,
            attention_mean: mean_std(&attention).0,
        });
        single_hop.push(summary);
    }
    Ok(HopAnalysis {
        dataset: ds.name.clone(),
        p: plan.p,
        rows,
        full_model,
        single_hop,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Dim,
    Kappa,
    Layers,
}

impl std::str::FromStr for SweepAxis {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dim" | "d" => Ok(SweepAxis::Dim),
            "kappa" => Ok(SweepAxis::Kappa),
            "layers" | "l" => Ok(SweepAxis::Layers),
            _ => Err(TrainError::Config(format!(
                "unknown sweep axis {s:?} (expected dim, kappa or layers)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: usize,
    pub summary: TrialSummary,
}

/// Varies one hyperparameter over `values`, everything else fixed. `masks`
/// must hold at least as many hops as the largest value swept.
pub fn sweep(
    ds: &GraphDataset,
    masks: &HopMaskSet,
    axis: SweepAxis,
    values: &[usize],
    plan: &TrialPlan,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut net = plan.net.clone();
        match axis {
            SweepAxis::Dim => net.hidden_dim = value,
            SweepAxis::Kappa => net.kappa = value,
            SweepAxis::Layers => net.layers = value,
        }
        net.validate()?;
        let masks = masks.truncated(net.kappa)?;
        let summary = run_trials(ds, &masks, &TrialPlan { net, ..plan.clone() })?;
        rows.push(SweepRow { value, summary });
    }
    Ok(rows)
}
