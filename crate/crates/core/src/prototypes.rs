//! Per-class feature centroids with momentum updates, and the nearest-mean
//! classifier built on them.

use crate::data::LabelSet;
use crate::error::{Error, Result};
use crate::math::{argmax_restricted, argmin_by_key, l2_distance, mean_vector, sq_distance};
use crate::model::Model;

/// Default momentum coefficient γ.
pub const DEFAULT_GAMMA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    dim: usize,
    gamma: f64,
    prototypes: Vec<Option<Vec<f64>>>,
}

/// Features grouped by assigned class: `lists[c]` is `P_c`.
pub type ClassFeatures = Vec<Vec<Vec<f64>>>;

impl PrototypeBank {
    pub fn new(dim: usize, gamma: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::config(format!("gamma = {gamma} outside [0, 1]")));
        }
        Ok(Self {
            dim,
            gamma,
            prototypes: Vec::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Number of class slots (initialised or not).
    pub fn num_slots(&self) -> usize {
        self.prototypes.len()
    }

    pub fn get(&self, class: usize) -> Option<&[f64]> {
        self.prototypes.get(class).and_then(|p| p.as_deref())
    }

    pub fn is_initialized(&self, class: usize) -> bool {
        self.get(class).is_some()
    }

    pub fn initialized(&self) -> impl Iterator<Item = (usize, &[f64])> + '_ {
        self.prototypes
            .iter()
            .enumerate()
            .filter_map(|(c, p)| p.as_deref().map(|v| (c, v)))
    }

    pub fn is_empty(&self) -> bool {
        self.initialized().next().is_none()
    }

    /// Directly sets a prototype (checkpoint restore, tests).
    pub fn set(&mut self, class: usize, prototype: Vec<f64>) -> Result<()> {
        if prototype.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: prototype.len(),
            });
        }
        if prototype.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prototype"));
        }
        if self.prototypes.len() <= class {
            self.prototypes.resize(class + 1, None);
        }
        self.prototypes[class] = Some(prototype);
        Ok(())
    }

    /// Ensures at least `n` class slots exist, new ones uninitialised.
    pub fn reserve_slots(&mut self, n: usize) {
        if self.prototypes.len() < n {
            self.prototypes.resize(n, None);
        }
    }

    /// Momentum update from per-class feature lists. A class seen for the
    /// first time takes the plain mean; classes with no features keep their
    /// prototype.
    pub fn update(&mut self, features: &ClassFeatures) -> Result<()> {
        for (class, list) in features.iter().enumerate() {
            if list.is_empty() {
                continue;
            }
            let mean = mean_vector(list)?;
            if mean.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: mean.len(),
                });
            }
            let next = match self.get(class) {
                Some(old) => old
                    .iter()
                    .zip(&mean)
                    .map(|(o, m)| self.gamma * o + (1.0 - self.gamma) * m)
                    .collect(),
                None => mean,
            };
            self.set(class, next)?;
        }
        Ok(())
    }

    /// Nearest initialised prototype (ties to the smaller class).
    pub fn classify(&self, feature: &[f64]) -> Result<usize> {
        self.nearest_among(feature, self.initialized().map(|(c, _)| c))?
            .map(|(c, _)| c)
            .ok_or(Error::EmptyInput("prototype bank"))
    }

    /// Nearest initialised prototype among `classes`, with its distance.
    /// `None` when none of them is initialised.
    pub fn nearest_among<I>(&self, feature: &[f64], classes: I) -> Result<Option<(usize, f64)>>
    where
        I: IntoIterator<Item = usize>,
    {
        if feature.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: feature.len(),
            });
        }
        let best = argmin_by_key(
            classes
                .into_iter()
                .filter_map(|c| self.get(c).map(|mu| (c, sq_distance(feature, mu)))),
        );
        Ok(best.map(|(c, d2)| (c, d2.sqrt())))
    }

    pub fn distance(&self, feature: &[f64], class: usize) -> Result<f64> {
        let mu = self
            .get(class)
            .ok_or_else(|| Error::Internal(format!("no prototype for class {class}")))?;
        l2_distance(feature, mu)
    }
}

/// Groups `φ(x)` by the model's candidate-restricted prediction.
pub fn assign_class_features<'a, I>(model: &Model, samples: I) -> Result<ClassFeatures>
where
    I: IntoIterator<Item = (&'a [f64], &'a LabelSet)>,
{
    let mut lists: ClassFeatures = vec![Vec::new(); model.num_classes()];
    for (x, candidates) in samples {
        let fw = model.forward(x)?;
        let c = argmax_restricted(&fw.logits, candidates.iter())?;
        lists[c].push(fw.feature);
    }
    Ok(lists)
}
