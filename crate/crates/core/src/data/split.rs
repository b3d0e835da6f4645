use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataError, GraphDataset, Result};
use crate::purisk::ClassPrior;

pub const SPLIT_VERSION: u32 = 1;

/// Labeled positives `P` and unlabeled nodes `U` over a balanced subset of
/// the graph. Both index sets are sorted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PuSplit {
    pub version: u32,
    pub dataset: String,
    pub p: f64,
    pub seed: u64,
    pub positive_class: String,
    #[serde(rename = "P")]
    pub positives_labeled: Vec<usize>,
    #[serde(rename = "U")]
    pub unlabeled: Vec<usize>,
    pub prior: ClassPrior,
}

impl PuSplit {
    /// Recomputes `|U ∩ positives| / |U|` from ground truth.
    pub fn recompute_prior(&self, binary_labels: &[u8]) -> f64 {
        let pos = self
            .unlabeled
            .iter()
            .filter(|&&i| binary_labels[i] == 1)
            .count();
        pos as f64 / self.unlabeled.len() as f64
    }

    /// Checks the split against a dataset's labels: disjoint sorted sets in
    /// range, only positives in `P`, and the stored prior.
    pub fn validate(&self, binary_labels: &[u8]) -> Result<()> {
        let n = binary_labels.len();
        let fail = |m: String| Err(DataError::Split(m));
        for set in [&self.positives_labeled, &self.unlabeled] {
            if set.windows(2).any(|w| w[0] >= w[1]) {
                return fail("index sets must be sorted and free of duplicates".into());
            }
            if set.last().is_some_and(|&i| i >= n) {
                return fail(format!("node index out of range for {n} nodes"));
            }
        }
        if self
            .positives_labeled
            .iter()
            .any(|i| self.unlabeled.binary_search(i).is_ok())
        {
            return fail("P and U overlap".into());
        }
        if self.positives_labeled.iter().any(|&i| binary_labels[i] != 1) {
            return fail("P contains a node that is not positive".into());
        }
        if self.recompute_prior(binary_labels) != self.prior.positive() {
            return fail("stored prior does not match the unlabeled set".into());
        }
        Ok(())
    }
}

/// Balanced PU split over binary labels.
///
/// Samples `N_PN` negatives uniformly (where `N_PN` is the number of
/// positives) and `⌈p·N_PN⌉` positives as `P`. `U` holds the other positives
/// and the sampled negatives. Nodes outside `P ∪ U` take part in message
/// passing only.
pub fn split_labels(binary_labels: &[u8], p: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>, ClassPrior)> {
    if !(p > 0.0 && p < 1.0) {
        return Err(DataError::Config(format!("labeling fraction must lie in (0, 1), got {p}")));
    }
    let mut positives: Vec<usize> = (0..binary_labels.len()).filter(|&i| binary_labels[i] == 1).collect();
    let negatives: Vec<usize> = (0..binary_labels.len()).filter(|&i| binary_labels[i] == 0).collect();
    let n_pn = positives.len();
    if n_pn == 0 {
        return Err(DataError::Config("no positive nodes".into()));
    }
    if negatives.len() < n_pn {
        return Err(DataError::Config(format!(
            "{} negatives available, {n_pn} needed for a balanced split",
            negatives.len()
        )));
    }
    // the small offset keeps products like 0.05·100 from rounding up past 5
    let n_labeled = ((p * n_pn as f64) - 1e-9).ceil().max(1.0) as usize;
    if n_labeled >= n_pn {
        return Err(DataError::Config(format!(
            "p={p} labels all {n_pn} positives, leaving none unlabeled"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sampled: Vec<usize> = negatives.choose_multiple(&mut rng, n_pn).copied().collect();
    positives.shuffle(&mut rng);
    let mut labeled = positives[..n_labeled].to_vec();
    let mut unlabeled = positives[n_labeled..].to_vec();
    unlabeled.append(&mut sampled);
    labeled.sort_unstable();
    unlabeled.sort_unstable();
    let prior = (n_pn - n_labeled) as f64 / unlabeled.len() as f64;
    let prior = ClassPrior::new(prior).map_err(|e| DataError::Config(e.to_string()))?;
    Ok((labeled, unlabeled, prior))
}

pub fn make_pu_split(ds: &GraphDataset, p: f64, seed: u64) -> Result<PuSplit> {
    let (positives_labeled, unlabeled, prior) = split_labels(&ds.binary_labels, p, seed)?;
    Ok(PuSplit {
        version: SPLIT_VERSION,
        dataset: ds.name.clone(),
        p,
        seed,
        positive_class: ds.positive_class.clone(),
        positives_labeled,
        unlabeled,
        prior,
    })
}

pub fn save_split(split: &PuSplit, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(split).map_err(|e| DataError::Split(e.to_string()))?;
    fs::write(path, json).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_split(path: &Path) -> Result<PuSplit> {
    let text = super::read(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| DataError::Split(format!("{}: {e}", path.display())))?;
    match value.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(SPLIT_VERSION) => {}
        Some(v) => {
            return Err(DataError::Split(format!(
                "{}: version {v} is not supported (expected {SPLIT_VERSION})",
                path.display()
            )))
        }
        None => return Err(DataError::Split(format!("{}: missing version", path.display()))),
    }
    serde_json::from_value(value).map_err(|e| DataError::Split(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(pos: usize, neg: usize) -> Vec<u8> {
        // interleave so that positions carry no information
        let mut v = vec![1u8; pos];
        v.extend(std::iter::repeat_n(0, neg));
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        v.shuffle(&mut rng);
        v
    }

    fn toy_split(y: &[u8], p: f64, seed: u64) -> PuSplit {
        let (positives_labeled, unlabeled, prior) = split_labels(y, p, seed).unwrap();
        PuSplit {
            version: SPLIT_VERSION,
            dataset: "toy".into(),
            p,
            seed,
            positive_class: "1".into(),
            positives_labeled,
            unlabeled,
            prior,
        }
    }

    #[test]
    fn hundred_positives_at_five_percent() {
        let y = labels(100, 300);
        let s = toy_split(&y, 0.05, 3);
        assert_eq!(s.positives_labeled.len(), 5);
        assert_eq!(s.unlabeled.len(), 195);
        assert_eq!(s.prior.positive(), 95.0 / 195.0);
        s.validate(&y).unwrap();
        assert_eq!(s.recompute_prior(&y), s.prior.positive());
    }

    #[test]
    fn rounding_goes_up() {
        let y = labels(818, 1890);
        let (p, u, _) = split_labels(&y, 0.01, 0).unwrap();
        assert_eq!(p.len(), 9);
        assert_eq!(u.len(), 818 - 9 + 818);
    }

    #[test]
    fn rejects_bad_fractions_and_shortages() {
        let y = labels(10, 20);
        assert!(split_labels(&y, 0.0, 0).is_err());
        assert!(split_labels(&y, 1.0, 0).is_err());
        assert!(split_labels(&y, 0.95, 0).is_err());
        assert!(split_labels(&labels(10, 5), 0.1, 0).is_err());
        assert!(split_labels(&labels(0, 5), 0.1, 0).is_err());
    }

    #[test]
    fn determinism_and_seed_sensitivity() {
        let y = labels(50, 150);
        let a = toy_split(&y, 0.1, 7);
        assert_eq!(a, toy_split(&y, 0.1, 7));
        let distinct: std::collections::HashSet<_> = (0..10)
            .map(|s| toy_split(&y, 0.1, s).unlabeled)
            .collect();
        assert_eq!(distinct.len(), 10);
    }

    #[test]
    fn file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("split.json");
        let y = labels(30, 40);
        let s = toy_split(&y, 0.2, 5);
        save_split(&s, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"P\"") && text.contains("\"U\""));
        let back = load_split(&path).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.prior.positive().to_bits(), s.prior.positive().to_bits());

        fs::write(&path, text.replace("\"version\": 1", "\"version\": 9")).unwrap();
        let err = load_split(&path).unwrap_err().to_string();
        assert!(err.contains("version 9"), "{err}");
        fs::write(&path, "{ broken").unwrap();
        assert!(load_split(&path).is_err());
        fs::write(&path, "{\"version\": 1}").unwrap();
        assert!(load_split(&path).is_err());
    }

    #[test]
    fn validate_catches_tampering() {
        let y = labels(30, 40);
        let mut s = toy_split(&y, 0.2, 5);
        s.positives_labeled.push(s.unlabeled[0]);
        assert!(s.validate(&y).is_err());
        let mut s = toy_split(&y, 0.2, 5);
        s.prior = ClassPrior::new(0.5).unwrap();
        assert!(s.validate(&y).is_err());
    }
}
