//! Synthetic labelled feature sets and their conversion into blurry,
//! partially-labelled task streams.
//!
//! Classes are Gaussian clusters. A stream randomly partitions the classes
//! across tasks and then relabels them in order of introduction, so the
//! cumulative label space of task `t` is always the prefix `0..|Y_t|` and a
//! class id doubles as its classifier-head row.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::math::{sq_distance, Matrix, Rng};

/// Sorted, duplicate-free set of class indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct LabelSet(Vec<usize>);

impl LabelSet {
    pub fn new<I: IntoIterator<Item = usize>>(labels: I) -> Self {
        let mut v: Vec<usize> = labels.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Self(v)
    }

    pub fn singleton(label: usize) -> Self {
        Self(vec![label])
    }

    pub fn contains(&self, label: usize) -> bool {
        self.0.binary_search(&label).is_ok()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn max(&self) -> Option<usize> {
        self.0.last().copied()
    }

    /// Members satisfying `keep`.
    pub fn filter(&self, keep: impl Fn(usize) -> bool) -> LabelSet {
        Self(self.0.iter().copied().filter(|&c| keep(c)).collect())
    }

    pub fn is_subset(&self, other: &LabelSet) -> bool {
        self.iter().all(|c| other.contains(c))
    }

    pub fn union(&self, other: &LabelSet) -> LabelSet {
        LabelSet::new(self.iter().chain(other.iter()))
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|c| c.to_string()).collect();
        f.write_str(&parts.join(";"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub samples_per_class: usize,
    pub test_per_class: usize,
    /// Minimum pairwise distance between class means.
    pub cluster_separation: f64,
    pub cluster_stddev: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            feature_dim: 16,
            samples_per_class: 100,
            test_per_class: 50,
            cluster_separation: 10.0,
            cluster_stddev: 0.5,
            seed: 7,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        if self.feature_dim == 0 || self.samples_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::config(
                "feature_dim, samples_per_class and test_per_class must be positive",
            ));
        }
        if !(self.cluster_separation > 0.0 && self.cluster_separation.is_finite()) {
            return Err(Error::config("cluster_separation must be positive"));
        }
        if !(self.cluster_stddev > 0.0 && self.cluster_stddev.is_finite()) {
            return Err(Error::config("cluster_stddev must be positive"));
        }
        Ok(())
    }
}

/// A fully labelled point (generator output and test-set record).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPoint {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub means: Vec<Vec<f64>>,
    pub train: Vec<LabeledPoint>,
    pub test: Vec<LabeledPoint>,
}

const MEAN_ATTEMPTS: usize = 10_000;

/// Draws well-separated class means, then isotropic Gaussian samples around
/// them. Train and test use disjoint sub-seeds of `spec.seed`.
pub fn make_gaussian_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let root = Rng::new(spec.seed);
    let d = spec.feature_dim;
    let min_sq = spec.cluster_separation * spec.cluster_separation;
    // Typical pairwise distance of two draws is 1.5x the required separation.
    let scale = 1.5 * spec.cluster_separation / (2.0 * d as f64).sqrt();

    let mut rng = root.derive("means");
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(spec.num_classes);
    while means.len() < spec.num_classes {
        let mut placed = false;
        for _ in 0..MEAN_ATTEMPTS {
            let cand: Vec<f64> = (0..d).map(|_| scale * rng.normal()).collect();
            if means.iter().all(|m| sq_distance(m, &cand) >= min_sq) {
                means.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::SeparationInfeasible {
                separation: spec.cluster_separation,
                attempts: MEAN_ATTEMPTS,
            });
        }
    }

    let draw = |rng: &mut Rng, per_class: usize, first_id: u64| {
        let mut out = Vec::with_capacity(per_class * spec.num_classes);
        let mut id = first_id;
        for (label, mean) in means.iter().enumerate() {
            for _ in 0..per_class {
                let features = mean
                    .iter()
                    .map(|m| m + spec.cluster_stddev * rng.normal())
                    .collect();
                out.push(LabeledPoint {
                    id,
                    features,
                    label,
                });
                id += 1;
            }
        }
        out
    };
    let train = draw(&mut root.derive("train"), spec.samples_per_class, 0);
    let test = draw(
        &mut root.derive("test"),
        spec.test_per_class,
        train.len() as u64,
    );
    Ok(Dataset {
        spec: spec.clone(),
        means,
        train,
        test,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlipMode {
    Uniform,
    NonUniform,
}

impl FromStr for FlipMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(FlipMode::Uniform),
            "nonuniform" => Ok(FlipMode::NonUniform),
            other => Err(Error::config(format!("unknown flip mode `{other}`"))),
        }
    }
}

impl fmt::Display for FlipMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlipMode::Uniform => "uniform",
            FlipMode::NonUniform => "nonuniform",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSpec {
    pub tasks: usize,
    /// Percentage of a class's samples placed in its introduction task;
    /// `W = 90` is the "10-blurry" setting, `W = 100` is non-blurry.
    pub w: u32,
    pub q: f64,
    pub flip_mode: FlipMode,
    pub seed: u64,
}

impl Default for StreamSpec {
    fn default() -> Self {
        Self {
            tasks: 5,
            w: 90,
            q: 0.3,
            flip_mode: FlipMode::Uniform,
            seed: 7,
        }
    }
}

impl StreamSpec {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.tasks == 0 {
            return Err(Error::config("at least one task is required"));
        }
        if self.tasks > num_classes {
            return Err(Error::config(format!(
                "{} tasks cannot each introduce a class out of {num_classes}",
                self.tasks
            )));
        }
        if self.w > 100 {
            return Err(Error::config(format!("W = {} outside [0, 100]", self.w)));
        }
        if !(0.0..=1.0).contains(&self.q) {
            return Err(Error::config(format!("q = {} outside [0, 1]", self.q)));
        }
        Ok(())
    }

    /// The `(100 - W)` in "(100 - W)-blurry".
    pub fn blurry_level(&self) -> u32 {
        100 - self.w.min(100)
    }
}

/// Per-label candidate-inclusion probabilities. Diagonal entries are 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FlipMatrix(Matrix);

impl FlipMatrix {
    pub fn new(matrix: Matrix) -> Result<Self> {
        if matrix.rows() != matrix.cols() {
            return Err(Error::config("flip matrix must be square"));
        }
        for r in 0..matrix.rows() {
            for c in 0..matrix.cols() {
                let v = matrix.get(r, c);
                if r == c && v != 1.0 {
                    return Err(Error::config(format!(
                        "flip matrix diagonal [{r}] is {v}, not 1"
                    )));
                }
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::config(format!("flip matrix entry [{r}][{c}] = {v}")));
                }
            }
        }
        Ok(Self(matrix))
    }

    /// Banded lower-triangular pattern: 0.5, 0.4, 0.3, 0.2, 0.1 on the five
    /// bands below the diagonal, zero elsewhere.
    pub fn banded_default(n: usize) -> Self {
        const BANDS: [f64; 5] = [0.5, 0.4, 0.3, 0.2, 0.1];
        let mut m = Matrix::zeros(n, n);
        for r in 0..n {
            m.row_mut(r)[r] = 1.0;
            for (k, &p) in BANDS.iter().enumerate() {
                if let Some(c) = r.checked_sub(k + 1) {
                    m.row_mut(r)[c] = p;
                }
            }
        }
        Self(m)
    }

    pub fn size(&self) -> usize {
        self.0.rows()
    }

    pub fn probability(&self, true_label: usize, label: usize) -> f64 {
        self.0.get(true_label, label)
    }
}

/// Uniform flipping: each negative label in `label_space` joins the set
/// independently with probability `q`.
pub fn flip_uniform(y: usize, label_space: &LabelSet, q: f64, rng: &mut Rng) -> Result<LabelSet> {
    if !label_space.contains(y) {
        return Err(Error::config(format!("true label {y} outside label space")));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::config(format!("q = {q} outside [0, 1]")));
    }
    Ok(LabelSet::new(
        label_space
            .iter()
            .filter(|&j| j == y || rng.bernoulli(q))
            .collect::<Vec<_>>(),
    ))
}

/// Matrix flipping: label `j` (restricted to `label_space`) joins with
/// probability `matrix[y][j]`.
pub fn flip_nonuniform(
    y: usize,
    matrix: &FlipMatrix,
    label_space: &LabelSet,
    rng: &mut Rng,
) -> Result<LabelSet> {
    if y >= matrix.size() || label_space.max().is_some_and(|m| m >= matrix.size()) {
        return Err(Error::IndexOutOfRange {
            index: y.max(label_space.max().unwrap_or(0)),
            len: matrix.size(),
        });
    }
    if !label_space.contains(y) {
        return Err(Error::config(format!("true label {y} outside label space")));
    }
    Ok(LabelSet::new(
        label_space
            .iter()
            .filter(|&j| j == y || rng.bernoulli(matrix.probability(y, j)))
            .collect::<Vec<_>>(),
    ))
}

/// A training sample as the learner sees it, plus the hidden true label used
/// only by the generator and by diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub features: Vec<f64>,
    pub true_label: usize,
    pub candidates: LabelSet,
    /// Task (0-based) in which the sample appears.
    pub task: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub index: usize,
    pub new_classes: LabelSet,
    /// Cumulative label space `Y_t` (always `0..num_seen`).
    pub label_space: LabelSet,
    pub train: Vec<Sample>,
}

impl Task {
    pub fn old_classes(&self) -> LabelSet {
        self.label_space.filter(|c| !self.new_classes.contains(c))
    }
}

/// Generation parameters carried alongside a stream (the stream-file header).
#[derive(Debug, Clone, PartialEq)]
pub struct StreamHeader {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub tasks: usize,
    pub q: f64,
    pub w: u32,
    pub seed: u64,
    pub flip_mode: FlipMode,
    pub cluster_stddev: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub header: StreamHeader,
    pub tasks: Vec<Task>,
    /// Every test point, labelled in stream class ids. The cumulative test set
    /// of task `t` is the subset whose class lies in `Y_t`.
    pub test: Vec<LabeledPoint>,
}

impl TaskStream {
    pub fn test_set(&self, task: usize) -> Vec<&LabeledPoint> {
        let space = &self.tasks[task].label_space;
        self.test
            .iter()
            .filter(|p| space.contains(p.label))
            .collect()
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }
}

/// Number of new classes per task: `C / T` each, the remainder going to the
/// earliest tasks.
pub fn class_partition(num_classes: usize, tasks: usize) -> Vec<usize> {
    let base = num_classes / tasks;
    let extra = num_classes % tasks;
    (0..tasks).map(|t| base + usize::from(t < extra)).collect()
}

/// Splits `count` items as evenly as possible into `parts` buckets, remainder
/// to the earliest buckets.
pub fn spread_evenly(count: usize, parts: usize) -> Vec<usize> {
    if parts == 0 {
        return Vec::new();
    }
    let base = count / parts;
    let extra = count % parts;
    (0..parts).map(|p| base + usize::from(p < extra)).collect()
}

/// Number of a class's `n` samples that stay in its introduction task.
pub fn home_share(n: usize, w: u32) -> usize {
    n * w as usize / 100
}

/// Builds the blurry task stream. Candidate sets are flipped against the
/// label space of the task each sample is placed in.
pub fn build_blurry_stream(dataset: &Dataset, spec: &StreamSpec) -> Result<TaskStream> {
    let num_classes = dataset.spec.num_classes;
    spec.validate(num_classes)?;
    let root = Rng::new(spec.seed);

    let mut order: Vec<usize> = (0..num_classes).collect();
    root.derive("partition").shuffle(&mut order);
    // order[k] is the generator class that becomes stream class k.
    let mut relabel = vec![0usize; num_classes];
    for (k, &orig) in order.iter().enumerate() {
        relabel[orig] = k;
    }

    let sizes = class_partition(num_classes, spec.tasks);
    let mut tasks = Vec::with_capacity(spec.tasks);
    let mut seen = 0;
    let mut home_of = vec![0usize; num_classes];
    for (t, &n) in sizes.iter().enumerate() {
        home_of[seen..seen + n].fill(t);
        tasks.push(Task {
            index: t,
            new_classes: LabelSet::new(seen..seen + n),
            label_space: LabelSet::new(0..seen + n),
            train: Vec::new(),
        });
        seen += n;
    }

    let mut by_class: Vec<Vec<&LabeledPoint>> = vec![Vec::new(); num_classes];
    for p in &dataset.train {
        by_class[relabel[p.label]].push(p);
    }

    let matrix = match spec.flip_mode {
        FlipMode::Uniform => None,
        FlipMode::NonUniform => Some(FlipMatrix::banded_default(num_classes)),
    };
    let mut flip_rng = root.derive("flip");
    let last = spec.tasks - 1;
    for (class, points) in by_class.iter().enumerate() {
        let home = home_of[class];
        let mut placement = Vec::with_capacity(points.len());
        if home == last {
            placement.resize(points.len(), home);
        } else {
            let keep = home_share(points.len(), spec.w);
            placement.resize(keep, home);
            for (offset, n) in spread_evenly(points.len() - keep, last - home)
                .into_iter()
                .enumerate()
            {
                placement.extend(std::iter::repeat_n(home + 1 + offset, n));
            }
        }
        for (p, &task) in points.iter().zip(&placement) {
            let space = &tasks[task].label_space;
            let candidates = match &matrix {
                None => flip_uniform(class, space, spec.q, &mut flip_rng)?,
                Some(m) => flip_nonuniform(class, m, space, &mut flip_rng)?,
            };
            tasks[task].train.push(Sample {
                id: p.id,
                features: p.features.clone(),
                true_label: class,
                candidates,
                task,
            });
        }
    }
    for task in &mut tasks {
        task.train.sort_by_key(|s| s.id);
    }

    let test = dataset
        .test
        .iter()
        .map(|p| LabeledPoint {
            id: p.id,
            features: p.features.clone(),
            label: relabel[p.label],
        })
        .collect();

    Ok(TaskStream {
        header: StreamHeader {
            num_classes,
            feature_dim: dataset.spec.feature_dim,
            tasks: spec.tasks,
            q: spec.q,
            w: spec.w,
            seed: spec.seed,
            flip_mode: spec.flip_mode,
            cluster_stddev: dataset.spec.cluster_stddev,
        },
        tasks,
        test,
    })
}
