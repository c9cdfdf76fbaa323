use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError};
use crate::digest::sha256_hex;
use crate::label::{VulnerabilityLabel, NUM_CLASSES};

const RATIO_TOLERANCE: f64 = 1e-9;
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self, CorpusError> {
        let r = Self { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let arr = self.as_array();
        let fail = |reason: &str| Err(CorpusError::InvalidRatios { ratios: arr, reason: reason.to_string() });
        if arr.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return fail("every ratio must be a finite non-negative number");
        }
        if (arr.iter().sum::<f64>() - 1.0).abs() > RATIO_TOLERANCE {
            return fail("ratios must sum to 1");
        }
        Ok(())
    }

    fn nonzero(&self) -> usize {
        self.as_array().iter().filter(|r| **r > 0.0).count()
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub filename: String,
    pub row: usize,
    pub partition: Partition,
}

/// Auditable record of a split: one entry per corpus row plus the inputs
/// that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub ratios: SplitRatios,
    pub entries: Vec<SplitEntry>,
}

impl SplitManifest {
    pub const SCHEMA_VERSION: u32 = 1;

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Content hash identifying the split (seed, ratios and every assignment).
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("manifest serializes").as_bytes())
    }

    /// Rebuild the partitions of `corpus` described by this manifest.
    pub fn apply(&self, corpus: &Corpus) -> Result<DatasetSplit, CorpusError> {
        if self.entries.len() != corpus.len() {
            return Err(CorpusError::ManifestMismatch(format!(
                "manifest lists {} rows, corpus has {}",
                self.entries.len(),
                corpus.len()
            )));
        }
        let mut parts: [Vec<usize>; 3] = Default::default();
        for entry in &self.entries {
            let pos = corpus.rows().iter().position(|&r| r == entry.row).ok_or_else(|| {
                CorpusError::ManifestMismatch(format!("row {} not present in corpus", entry.row))
            })?;
            if corpus.contracts()[pos].filename != entry.filename {
                return Err(CorpusError::ManifestMismatch(format!(
                    "row {} is `{}` in the corpus but `{}` in the manifest",
                    entry.row,
                    corpus.contracts()[pos].filename,
                    entry.filename
                )));
            }
            parts[partition_slot(entry.partition)].push(pos);
        }
        for p in parts.iter_mut() {
            p.sort_unstable();
        }
        Ok(DatasetSplit {
            train: corpus.select(&parts[0]),
            val: corpus.select(&parts[1]),
            test: corpus.select(&parts[2]),
            seed: self.seed,
            ratios: self.ratios,
        })
    }
}

fn partition_slot(p: Partition) -> usize {
    match p {
        Partition::Train => 0,
        Partition::Val => 1,
        Partition::Test => 2,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Corpus,
    pub val: Corpus,
    pub test: Corpus,
    pub seed: u64,
    pub ratios: SplitRatios,
}

impl DatasetSplit {
    pub fn manifest(&self) -> SplitManifest {
        let mut entries = Vec::with_capacity(self.train.len() + self.val.len() + self.test.len());
        for (corpus, partition) in [
            (&self.train, Partition::Train),
            (&self.val, Partition::Val),
            (&self.test, Partition::Test),
        ] {
            for (c, &row) in corpus.contracts().iter().zip(corpus.rows()) {
                entries.push(SplitEntry { filename: c.filename.clone(), row, partition });
            }
        }
        entries.sort_by_key(|e| e.row);
        SplitManifest { schema_version: SplitManifest::SCHEMA_VERSION, seed: self.seed, ratios: self.ratios, entries }
    }

    pub fn hash(&self) -> String {
        self.manifest().hash()
    }
}

/// Per-class allocation of `fraction` of each class by the largest-remainder
/// rule: floors first, then the units needed to reach the rounded total go
/// to the largest fractional parts (ties: larger class, then label order).
fn allocate(counts: &[usize; NUM_CLASSES], fraction: f64) -> [usize; NUM_CLASSES] {
    let total: usize = counts.iter().sum();
    let target = round_half_up(total as f64 * fraction);
    let mut alloc = [0usize; NUM_CLASSES];
    let mut remainders = [0f64; NUM_CLASSES];
    for c in 0..NUM_CLASSES {
        let exact = counts[c] as f64 * fraction;
        let floor = (exact + FLOOR_SLACK).floor();
        alloc[c] = (floor as usize).min(counts[c]);
        remainders[c] = (exact - floor).max(0.0);
    }
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..NUM_CLASSES).collect();
    order.sort_by(|&a, &b| {
        remainders[b]
            .partial_cmp(&remainders[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(counts[b].cmp(&counts[a]))
            .then(a.cmp(&b))
    });
    let mut leftover = target.saturating_sub(assigned);
    for &c in order.iter().cycle().take(NUM_CLASSES * 2) {
        if leftover == 0 {
            break;
        }
        if alloc[c] < counts[c] && remainders[c] > 0.0 {
            alloc[c] += 1;
            remainders[c] = 0.0;
            leftover -= 1;
        }
    }
    alloc
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5 + FLOOR_SLACK).floor().max(0.0) as usize
}

fn class_stream(label: VulnerabilityLabel) -> u64 {
    label.index() as u64 + 1
}

/// Stratified, seeded train/val/test partition of `corpus`.
pub fn stratified_split(corpus: &Corpus, ratios: SplitRatios, seed: u64) -> Result<DatasetSplit, CorpusError> {
    ratios.validate()?;
    let counts = corpus.class_counts().0;
    let required = ratios.nonzero();
    for label in VulnerabilityLabel::ALL {
        let available = counts[label.index()];
        if available < required {
            return Err(CorpusError::DegenerateClass { label, available, required });
        }
    }

    let test_alloc = allocate(&counts, ratios.test);
    let val_alloc = allocate(&counts, ratios.val);

    let mut parts: [Vec<usize>; 3] = Default::default();
    for label in VulnerabilityLabel::ALL {
        let c = label.index();
        let n = counts[c];
        let min_test = usize::from(ratios.test > 0.0);
        let min_val = usize::from(ratios.val > 0.0);
        let min_train = usize::from(ratios.train > 0.0);
        let mut test = test_alloc[c].max(min_test);
        let mut val = val_alloc[c].max(min_val);
        while test + val + min_train > n {
            if val > min_val && (val >= test || test <= min_test) {
                val -= 1;
            } else {
                test -= 1;
            }
        }

        let mut members: Vec<usize> =
            corpus.contracts().iter().enumerate().filter(|(_, k)| k.label == label).map(|(i, _)| i).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class_stream(label));
        members.shuffle(&mut rng);

        parts[2].extend_from_slice(&members[..test]);
        parts[1].extend_from_slice(&members[test..test + val]);
        parts[0].extend_from_slice(&members[test + val..]);
    }
    for p in parts.iter_mut() {
        p.sort_unstable();
    }
    Ok(DatasetSplit {
        train: corpus.select(&parts[0]),
        val: corpus.select(&parts[1]),
        test: corpus.select(&parts[2]),
        seed,
        ratios,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;
    use crate::corpus::{ClassCounts, Contract};
    use VulnerabilityLabel::*;

    fn corpus_with_counts(counts: [usize; 4]) -> Corpus {
        let mut contracts = Vec::new();
        for (label, n) in VulnerabilityLabel::ALL.into_iter().zip(counts) {
            for i in 0..n {
                contracts.push(Contract::new(format!("{label}_{i}.sol"), "contract X {}", label));
            }
        }
        Corpus::new(contracts)
    }

    #[test]
    fn reference_counts_give_expected_supports() {
        let corpus = corpus_with_counts([97, 590, 1218, 312]);
        let split = stratified_split(&corpus, SplitRatios::default(), 42).unwrap();
        assert_eq!(split.test.class_counts(), ClassCounts([10, 59, 122, 31]));
        assert_eq!(split.test.len(), 222);
        assert_eq!(split.val.class_counts(), ClassCounts([10, 59, 122, 31]));
        assert_eq!(split.train.class_counts(), ClassCounts([77, 472, 974, 250]));
    }

    #[test]
    fn everything_in_train() {
        let corpus = corpus_with_counts([3, 4, 5, 6]);
        let split = stratified_split(&corpus, SplitRatios::new(1.0, 0.0, 0.0).unwrap(), 1).unwrap();
        assert!(split.test.is_empty());
        assert!(split.val.is_empty());
        assert_eq!(split.train, corpus);
    }

    #[test]
    fn forty_balanced_gives_two_each() {
        let corpus = corpus_with_counts([10, 10, 10, 10]);
        let split = stratified_split(&corpus, SplitRatios::new(0.8, 0.0, 0.2).unwrap(), 9).unwrap();
        assert_eq!(split.test.class_counts(), ClassCounts([2, 2, 2, 2]));
        assert_eq!(split.train.class_counts(), ClassCounts([8, 8, 8, 8]));
        assert!(split.val.is_empty());
    }

    #[test]
    fn degenerate_class_is_reported() {
        let corpus = corpus_with_counts([2, 10, 10, 10]);
        let err = stratified_split(&corpus, SplitRatios::default(), 0).unwrap_err();
        assert!(matches!(err, CorpusError::DegenerateClass { label: DD, available: 2, required: 3 }));
    }

    #[test]
    fn small_class_still_reaches_every_partition() {
        let corpus = corpus_with_counts([3, 30, 30, 30]);
        let split = stratified_split(&corpus, SplitRatios::default(), 5).unwrap();
        assert_eq!(split.test.class_counts()[DD], 1);
        assert_eq!(split.val.class_counts()[DD], 1);
        assert_eq!(split.train.class_counts()[DD], 1);
    }

    #[test]
    fn invalid_ratios_rejected() {
        assert!(SplitRatios::new(0.8, 0.1, 0.2).is_err());
        assert!(SplitRatios::new(1.1, -0.1, 0.0).is_err());
        assert!(SplitRatios::new(f64::NAN, 0.5, 0.5).is_err());
    }

    #[test]
    fn largest_remainder_never_misses_by_a_whole_unit() {
        // Every class has fractional part exactly .5: naive per-class
        // rounding would overshoot the total by 2.
        let counts = [5, 15, 25, 35];
        let alloc = allocate(&counts, 0.1);
        assert_eq!(alloc.iter().sum::<usize>(), 8);
        for (a, n) in alloc.iter().zip(counts) {
            assert!((*a as f64 - n as f64 * 0.1).abs() < 1.0);
        }
    }

    #[test]
    fn manifest_round_trip_and_apply() {
        let corpus = corpus_with_counts([5, 12, 20, 9]);
        let split = stratified_split(&corpus, SplitRatios::default(), 3).unwrap();
        let manifest = split.manifest();
        let parsed = SplitManifest::from_json(&manifest.to_json()).unwrap();
        assert_eq!(parsed, manifest);
        assert_eq!(parsed.hash(), split.hash());
        assert_eq!(parsed.apply(&corpus).unwrap(), split);

        let names: HashSet<(String, usize)> =
            manifest.entries.iter().map(|e| (e.filename.clone(), e.row)).collect();
        assert_eq!(names.len(), corpus.len());
    }

    #[test]
    fn apply_rejects_foreign_corpus() {
        let corpus = corpus_with_counts([5, 12, 20, 9]);
        let manifest = stratified_split(&corpus, SplitRatios::default(), 3).unwrap().manifest();
        let other = corpus_with_counts([6, 12, 20, 8]);
        assert!(matches!(manifest.apply(&other), Err(CorpusError::ManifestMismatch(_))));
    }
}
