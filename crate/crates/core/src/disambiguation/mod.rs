//! Prototype-guided label disambiguation.
//!
//! Before a task trains, samples whose candidates include an old class are
//! scored by their distance to the nearest old-class prototype. A
//! two-component mixture over those distances splits the task data into
//! likely-old and likely-new samples, candidate sets are pruned accordingly,
//! and pseudo-labels start uniform over the pruned sets. During training the
//! pseudo-labels move toward the model's candidate-restricted prediction with
//! momentum `β`.

mod gmm;

use std::fmt;
use std::str::FromStr;

pub use gmm::{fit_gmm_1d, Component, EmOptions, Gmm1D, GmmFit, VARIANCE_FLOOR};

use crate::data::LabelSet;
use crate::error::{Error, Result};
use crate::math::argmax_restricted;
use crate::prototypes::PrototypeBank;

/// Tolerance on the unit-sum invariant of pseudo-labels.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationConfig {
    /// Posterior threshold above which a sample counts as old.
    pub alpha: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    pub em: EmOptions,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            beta_start: 0.8,
            beta_end: 0.6,
            em: EmOptions::default(),
        }
    }
}

impl SeparationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config(format!(
                "alpha = {} outside (0, 1]",
                self.alpha
            )));
        }
        for b in [self.beta_start, self.beta_end] {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::config(format!("beta = {b} outside [0, 1]")));
            }
        }
        if self.em.tolerance.is_nan() || self.em.tolerance <= 0.0 || self.em.max_iterations == 0 {
            return Err(Error::config(
                "EM tolerance and iteration cap must be positive",
            ));
        }
        Ok(())
    }
}

/// Which candidate set the arg-max of the pseudo-label update ranges over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ArgmaxSpace {
    /// The annotator's candidate set `S_i`.
    #[default]
    Original,
    /// The re-allocated set `S'_i`.
    Reallocated,
}

impl FromStr for ArgmaxSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(ArgmaxSpace::Original),
            "reallocated" => Ok(ArgmaxSpace::Reallocated),
            other => Err(Error::config(format!("unknown argmax space `{other}`"))),
        }
    }
}

impl fmt::Display for ArgmaxSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArgmaxSpace::Original => "original",
            ArgmaxSpace::Reallocated => "reallocated",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Membership {
    Old,
    New,
}

impl fmt::Display for Membership {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Membership::Old => "old",
            Membership::New => "new",
        })
    }
}

/// One member of the distance set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistanceEntry {
    /// Position of the sample in the task data.
    pub index: usize,
    /// Distance to the nearest old-candidate prototype.
    pub distance: f64,
    /// Class of that prototype.
    pub nearest: usize,
}

/// Distance set over samples with at least one old candidate.
///
/// Old candidates whose prototype was never initialised are ignored; a
/// sample none of whose old candidates has a prototype is left out.
pub fn distance_set<'a, I>(
    samples: I,
    bank: &PrototypeBank,
    old_space: &LabelSet,
) -> Result<Vec<DistanceEntry>>
where
    I: IntoIterator<Item = (&'a [f64], &'a LabelSet)>,
{
    let mut out = Vec::new();
    for (index, (feature, candidates)) in samples.into_iter().enumerate() {
        let old = candidates.iter().filter(|&c| old_space.contains(c));
        if let Some((nearest, distance)) = bank.nearest_among(feature, old)? {
            out.push(DistanceEntry {
                index,
                distance,
                nearest,
            });
        }
    }
    Ok(out)
}

/// `p(old component | e)`.
pub fn posterior_old(gmm: &Gmm1D, distance: f64) -> f64 {
    gmm.posterior_old(distance)
}

/// Samples with posterior strictly above `alpha` are old; everything else
/// (including samples absent from the distance set) is new.
pub fn separate(num_samples: usize, posteriors: &[(usize, f64)], alpha: f64) -> Vec<Membership> {
    let mut out = vec![Membership::New; num_samples];
    for &(index, w) in posteriors {
        if w > alpha {
            out[index] = Membership::Old;
        }
    }
    out
}

/// Candidate re-allocation.
///
/// Old: the nearest old-candidate prototype class plus every new candidate.
/// New: the new candidates only; when there are none, the nearest-prototype
/// class among the original candidates.
pub fn reallocate(
    candidates: &LabelSet,
    membership: Membership,
    feature: &[f64],
    bank: &PrototypeBank,
    old_space: &LabelSet,
    new_classes: &LabelSet,
) -> Result<LabelSet> {
    let new_part = candidates.filter(|c| new_classes.contains(c));
    match membership {
        Membership::Old => {
            let old = candidates.iter().filter(|&c| old_space.contains(c));
            Ok(match bank.nearest_among(feature, old)? {
                Some((c, _)) => new_part.union(&LabelSet::singleton(c)),
                None => new_part,
            })
        }
        Membership::New if !new_part.is_empty() => Ok(new_part),
        Membership::New => Ok(match bank.nearest_among(feature, candidates.iter())? {
            Some((c, _)) => LabelSet::singleton(c),
            None => candidates.clone(),
        }),
    }
}

/// Soft label over the current label space.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel(Vec<f64>);

impl PseudoLabel {
    /// Uniform over `set` in a space of `dim` classes.
    pub fn uniform(set: &LabelSet, dim: usize) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::EmptyInput("pseudo-label support"));
        }
        if let Some(m) = set.max().filter(|&m| m >= dim) {
            return Err(Error::IndexOutOfRange { index: m, len: dim });
        }
        let mut p = vec![0.0; dim];
        let share = 1.0 / set.len() as f64;
        for c in set.iter() {
            p[c] = share;
        }
        Ok(Self(p))
    }

    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite("pseudo-label"));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::config(format!("pseudo-label sums to {sum}")));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn support(&self) -> LabelSet {
        LabelSet::new((0..self.0.len()).filter(|&j| self.0[j] > 0.0))
    }

    /// Pads with zeros after the label space grows.
    pub fn extend_to(&mut self, dim: usize) {
        if dim > self.0.len() {
            self.0.resize(dim, 0.0);
        }
    }

    /// `p ← βp + (1−β)z` toward the one-hot `z` at `class`.
    pub fn blend_toward(&mut self, class: usize, beta: f64) {
        for (j, v) in self.0.iter_mut().enumerate() {
            let z = if j == class { 1.0 } else { 0.0 };
            *v = beta * *v + (1.0 - beta) * z;
        }
        let sum: f64 = self.0.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            for v in &mut self.0 {
                *v /= sum;
            }
        }
    }
}

/// Uniform initialisation over a (re-allocated) candidate set.
pub fn init_pseudo(set: &LabelSet, dim: usize) -> Result<PseudoLabel> {
    PseudoLabel::uniform(set, dim)
}

/// Momentum update toward the one-hot candidate-restricted arg-max of
/// `logits`. Returns the arg-max class.
pub fn update_pseudo(
    pseudo: &mut PseudoLabel,
    logits: &[f64],
    candidates: &LabelSet,
    beta: f64,
) -> Result<usize> {
    if logits.len() != pseudo.dim() {
        return Err(Error::DimensionMismatch {
            expected: pseudo.dim(),
            got: logits.len(),
        });
    }
    let z = argmax_restricted(logits, candidates.iter())?;
    pseudo.blend_toward(z, beta);
    Ok(z)
}

/// Candidate-masked, renormalised model output (the model-prediction
/// labelling rule). Falls back to uniform over the candidates when every
/// masked probability underflows.
pub fn masked_prediction(probs: &[f64], candidates: &LabelSet) -> Result<PseudoLabel> {
    if let Some(m) = candidates.max().filter(|&m| m >= probs.len()) {
        return Err(Error::IndexOutOfRange {
            index: m,
            len: probs.len(),
        });
    }
    let mass: f64 = candidates.iter().map(|c| probs[c]).sum();
    if mass.is_nan() || mass <= 0.0 {
        return PseudoLabel::uniform(candidates, probs.len());
    }
    let mut p = vec![0.0; probs.len()];
    for c in candidates.iter() {
        p[c] = probs[c] / mass;
    }
    Ok(PseudoLabel(p))
}

/// Linear ramp from `start` at epoch 0 to `end` at the last epoch.
pub fn beta_at(epoch: usize, total_epochs: usize, start: f64, end: f64) -> f64 {
    if total_epochs <= 1 {
        return start;
    }
    let frac = epoch.min(total_epochs - 1) as f64 / (total_epochs - 1) as f64;
    start + (end - start) * frac
}
