//! Episodic memory built from diverse and representative samples.
//!
//! The pool (current task data plus the previous memory) is grouped by the
//! model's candidate-restricted prediction. Within each class group, diverse
//! samples are picked first: lowest summed distance to the `K` nearest
//! neighbours, skipping anything inside the neighbourhood of an earlier pick.
//! Representatives closest to the class prototype fill the rest of the
//! class budget.
//!
//! Inside a group, "index" order is ascending sample id; every tie resolves
//! to the lower index.

use std::fmt;

use crate::data::Sample;
use crate::disambiguation::PseudoLabel;
use crate::error::{Error, Result};
use crate::math::{argmax_restricted, sq_distance, Rng};
use crate::model::Model;
use crate::prototypes::PrototypeBank;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryConfig {
    /// Total budget `m`.
    pub budget: usize,
    /// Neighbourhood size `K`.
    pub neighbors: usize,
    /// Share of each class budget reserved for diverse samples.
    pub diverse_fraction: f64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            budget: 2000,
            neighbors: 10,
            diverse_fraction: 0.67,
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.neighbors == 0 {
            return Err(Error::config("memory neighbour count K must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.diverse_fraction) {
            return Err(Error::config(format!(
                "diverse fraction {} outside [0, 1]",
                self.diverse_fraction
            )));
        }
        Ok(())
    }

    /// Per-class budgets `⌊m/n⌋`, with the remainder `m mod n` handed out one
    /// slot each to the lowest classes.
    pub fn class_budgets(&self, num_classes: usize) -> Result<Vec<usize>> {
        if num_classes == 0 || self.budget < num_classes {
            return Err(Error::config(format!(
                "memory budget {} is smaller than the {num_classes} classes seen",
                self.budget
            )));
        }
        let base = self.budget / num_classes;
        let extra = self.budget % num_classes;
        Ok((0..num_classes)
            .map(|c| base + usize::from(c < extra))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryKind {
    Representative,
    Diverse,
    Random,
}

impl fmt::Display for EntryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntryKind::Representative => "representative",
            EntryKind::Diverse => "diverse",
            EntryKind::Random => "random",
        })
    }
}

/// A sample in the selection pool, with what the selection needs to know.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolItem {
    pub sample: Sample,
    pub pseudo: PseudoLabel,
    pub feature: Vec<f64>,
    /// Predicted class `argmax_{j∈S_i} f_j(x_i)`.
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Pool {
    items: Vec<PoolItem>,
}

impl Pool {
    /// Items are kept in ascending id order. Duplicate ids are rejected.
    pub fn from_items(mut items: Vec<PoolItem>) -> Result<Self> {
        items.sort_by_key(|it| it.sample.id);
        if let Some(w) = items.windows(2).find(|w| w[0].sample.id == w[1].sample.id) {
            return Err(Error::Internal(format!(
                "sample id {} appears twice in the memory pool",
                w[0].sample.id
            )));
        }
        Ok(Self { items })
    }

    pub fn items(&self) -> &[PoolItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Items of class `c`, in id order.
    pub fn group(&self, class: usize) -> Vec<&PoolItem> {
        self.items.iter().filter(|it| it.class == class).collect()
    }
}

/// `D'_t = D_t ∪ M^{t−1}`, each sample grouped by the model's prediction
/// restricted to its original candidates.
pub fn build_pool<I>(model: &Model, samples: I) -> Result<Pool>
where
    I: IntoIterator<Item = (Sample, PseudoLabel)>,
{
    let mut items = Vec::new();
    for (sample, pseudo) in samples {
        let fw = model.forward(&sample.features)?;
        let class = argmax_restricted(&fw.logits, sample.candidates.iter())?;
        items.push(PoolItem {
            sample,
            pseudo,
            feature: fw.feature,
            class,
        });
    }
    Pool::from_items(items)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryEntry {
    pub sample: Sample,
    pub pseudo: PseudoLabel,
    pub class: usize,
    pub kind: EntryKind,
    /// Distance to the class prototype at selection time.
    pub prototype_distance: f64,
    /// Summed K-NN distance, when computed.
    pub knn_score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodicMemory {
    entries: Vec<MemoryEntry>,
}

impl EpisodicMemory {
    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [MemoryEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.sample.id).collect()
    }

    pub fn class_count(&self, class: usize) -> usize {
        self.entries.iter().filter(|e| e.class == class).count()
    }
}

/// Summed K-NN distances and the neighbourhoods themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnScores {
    pub scores: Vec<f64>,
    /// `neighborhoods[i]`: indices of the `K'` nearest others of `i`.
    pub neighborhoods: Vec<Vec<usize>>,
}

/// `a_i = Σ_{j∈N_K(i)} d_ij` with `K' = min(K, n−1)`; groups smaller than two
/// score zero with empty neighbourhoods.
pub fn knn_scores(features: &[&[f64]], k: usize) -> KnnScores {
    let n = features.len();
    if n < 2 {
        return KnnScores {
            scores: vec![0.0; n],
            neighborhoods: vec![Vec::new(); n],
        };
    }
    let k = k.min(n - 1);
    let mut scores = Vec::with_capacity(n);
    let mut neighborhoods = Vec::with_capacity(n);
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (sq_distance(features[i], features[j]).sqrt(), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        others.truncate(k);
        scores.push(others.iter().map(|(d, _)| d).sum());
        neighborhoods.push(others.into_iter().map(|(_, j)| j).collect());
    }
    KnnScores {
        scores,
        neighborhoods,
    }
}

/// Greedy diverse selection over fixed neighbourhoods: repeatedly take the
/// lowest-score sample that is neither selected nor inside the neighbourhood
/// of a selected one. Returns group indices in pick order.
pub fn select_diverse(knn: &KnnScores, max_picks: usize) -> Vec<usize> {
    let n = knn.scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| knn.scores[a].total_cmp(&knn.scores[b]).then(a.cmp(&b)));
    let mut excluded = vec![false; n];
    let mut picks = Vec::new();
    // Exclusion only grows, so one pass in score order equals the greedy loop.
    for i in order {
        if picks.len() >= max_picks {
            break;
        }
        if excluded[i] {
            continue;
        }
        picks.push(i);
        excluded[i] = true;
        for &j in &knn.neighborhoods[i] {
            excluded[j] = true;
        }
    }
    picks
}

/// The `count` group members closest to `prototype`, skipping `exclude`.
/// Returns group indices nearest first.
pub fn select_representative(
    features: &[&[f64]],
    prototype: &[f64],
    count: usize,
    exclude: &[usize],
) -> Vec<usize> {
    let mut ranked: Vec<(f64, usize)> = features
        .iter()
        .enumerate()
        .filter(|(i, _)| !exclude.contains(i))
        .map(|(i, f)| (sq_distance(f, prototype), i))
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    ranked.into_iter().take(count).map(|(_, i)| i).collect()
}

/// How a class budget is filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionPolicy {
    /// Diverse first, representatives for the remainder.
    DiverseThenRepresentative,
    /// Uniform random picks (ablation).
    Random,
}

/// Rebuilds the memory from `pool` for the label space `0..num_classes`.
pub fn rebuild_memory(
    pool: &Pool,
    bank: &PrototypeBank,
    num_classes: usize,
    config: &MemoryConfig,
) -> Result<EpisodicMemory> {
    rebuild_memory_with(
        pool,
        bank,
        num_classes,
        config,
        SelectionPolicy::DiverseThenRepresentative,
        None,
    )
}

pub fn rebuild_memory_with(
    pool: &Pool,
    bank: &PrototypeBank,
    num_classes: usize,
    config: &MemoryConfig,
    policy: SelectionPolicy,
    mut rng: Option<&mut Rng>,
) -> Result<EpisodicMemory> {
    config.validate()?;
    let budgets = config.class_budgets(num_classes)?;
    let mut entries = Vec::new();
    for (class, &budget) in budgets.iter().enumerate() {
        let group = pool.group(class);
        if group.is_empty() {
            continue;
        }
        let prototype = bank
            .get(class)
            .ok_or_else(|| Error::Internal(format!("memory group {class} has no prototype")))?;
        let features: Vec<&[f64]> = group.iter().map(|it| it.feature.as_slice()).collect();
        let proto_dist = |i: usize| sq_distance(features[i], prototype).sqrt();
        let mut push = |i: usize, kind: EntryKind, knn: Option<f64>| {
            let it = group[i];
            entries.push(MemoryEntry {
                sample: it.sample.clone(),
                pseudo: it.pseudo.clone(),
                class,
                kind,
                prototype_distance: proto_dist(i),
                knn_score: knn,
            });
        };

        match policy {
            SelectionPolicy::DiverseThenRepresentative => {
                let max_diverse = (config.diverse_fraction * budget as f64).floor() as usize;
                let knn = knn_scores(&features, config.neighbors);
                let diverse = select_diverse(&knn, max_diverse);
                let reps =
                    select_representative(&features, prototype, budget - diverse.len(), &diverse);
                for &i in &diverse {
                    push(i, EntryKind::Diverse, Some(knn.scores[i]));
                }
                for &i in &reps {
                    push(i, EntryKind::Representative, Some(knn.scores[i]));
                }
            }
            SelectionPolicy::Random => {
                let rng = rng
                    .as_deref_mut()
                    .ok_or_else(|| Error::Internal("random memory needs a generator".into()))?;
                let mut idx: Vec<usize> = (0..group.len()).collect();
                rng.shuffle(&mut idx);
                idx.truncate(budget);
                idx.sort_unstable();
                for i in idx {
                    push(i, EntryKind::Random, None);
                }
            }
        }
    }
    Ok(EpisodicMemory { entries })
}
