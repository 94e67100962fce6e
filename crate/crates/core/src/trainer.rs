//! Task-by-task training, evaluation and the ablation variants.
//!
//! Per task: grow the head, separate likely-old from likely-new samples and
//! re-allocate their candidate sets, train for a number of epochs on the
//! task data plus memory with momentum pseudo-labels, update prototypes,
//! rebuild the memory, and keep a frozen copy of the model for distillation
//! in the next task.

use std::fmt;
use std::str::FromStr;

use crate::config::PgdrConfig;
use crate::data::{LabelSet, LabeledPoint, Sample, Task, TaskStream};
use crate::disambiguation::{
    beta_at, distance_set, fit_gmm_1d, masked_prediction, reallocate, separate, update_pseudo,
    ArgmaxSpace, Membership, PseudoLabel,
};
use crate::error::{Error, Result};
use crate::math::{argmax, argmax_restricted, sq_distance, Rng};
use crate::memory::{
    build_pool, rebuild_memory_with, EntryKind, EpisodicMemory, MemoryConfig, MemoryEntry,
    SelectionPolicy,
};
use crate::model::{
    augment, sgd_step, total_grad, total_loss, AugmentedBatch, LossValues, Model, Objective,
};
use crate::prototypes::{assign_class_features, PrototypeBank};

/// Largest number of samples in the fixed batch used to track the loss.
const FROZEN_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VariantTag {
    Pgdr,
    /// Model-prediction labelling: masked, renormalised output each step.
    Mp,
    /// Prototype-prediction labelling: the momentum target comes from the
    /// nearest candidate prototype.
    Pp,
    NoMemory,
    RandomMemory,
    DistanceMemory,
    LinearEval,
    NoCr,
    NoKd,
}

impl VariantTag {
    pub const ALL: [VariantTag; 9] = [
        VariantTag::Pgdr,
        VariantTag::Mp,
        VariantTag::Pp,
        VariantTag::NoMemory,
        VariantTag::RandomMemory,
        VariantTag::DistanceMemory,
        VariantTag::LinearEval,
        VariantTag::NoCr,
        VariantTag::NoKd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantTag::Pgdr => "PGDR",
            VariantTag::Mp => "MP",
            VariantTag::Pp => "PP",
            VariantTag::NoMemory => "NO_MEMORY",
            VariantTag::RandomMemory => "RANDOM_MEMORY",
            VariantTag::DistanceMemory => "DISTANCE_MEMORY",
            VariantTag::LinearEval => "LINEAR_EVAL",
            VariantTag::NoCr => "NO_CR",
            VariantTag::NoKd => "NO_KD",
        }
    }
}

impl FromStr for VariantTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        VariantTag::ALL
            .into_iter()
            .find(|v| v.name() == upper)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

impl fmt::Display for VariantTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Nearest prototype in feature space.
    Prototype,
    /// Arg-max of the head.
    Linear,
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prototype" => Ok(EvalMode::Prototype),
            "linear" => Ok(EvalMode::Linear),
            other => Err(Error::config(format!("unknown classifier `{other}`"))),
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Prototype => "prototype",
            EvalMode::Linear => "linear",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelingRule {
    /// Separation, re-allocation and momentum toward the model's arg-max.
    Momentum,
    /// Candidate-masked model output, no separation.
    ModelPrediction,
    /// Separation and re-allocation, momentum toward the nearest candidate
    /// prototype; prototypes refreshed every epoch.
    NearestPrototype,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemoryPolicy {
    Disabled,
    Selective,
    Random,
}

/// The knobs a variant turns, resolved from a config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pipeline {
    pub labeling: LabelingRule,
    pub memory_policy: MemoryPolicy,
    pub memory: MemoryConfig,
    pub objective: Objective,
    pub eval: EvalMode,
}

pub fn apply_variant(tag: VariantTag, config: &PgdrConfig) -> Pipeline {
    let mut p = Pipeline {
        labeling: LabelingRule::Momentum,
        memory_policy: MemoryPolicy::Selective,
        memory: config.memory,
        objective: config.objective(),
        eval: config.eval,
    };
    match tag {
        VariantTag::Pgdr => {}
        VariantTag::Mp => p.labeling = LabelingRule::ModelPrediction,
        VariantTag::Pp => p.labeling = LabelingRule::NearestPrototype,
        VariantTag::NoMemory => p.memory_policy = MemoryPolicy::Disabled,
        VariantTag::RandomMemory => p.memory_policy = MemoryPolicy::Random,
        VariantTag::DistanceMemory => p.memory.diverse_fraction = 0.0,
        VariantTag::LinearEval => p.eval = EvalMode::Linear,
        VariantTag::NoCr => p.objective.weights.cr = 0.0,
        VariantTag::NoKd => p.objective.weights.kd = 0.0,
    }
    p
}

/// Everything carried from one task to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: Model,
    pub bank: PrototypeBank,
    pub memory: EpisodicMemory,
    /// Frozen model from the end of the previous task.
    pub snapshot: Option<Model>,
}

impl TrainState {
    pub fn new(input_dim: usize, initial_classes: usize, config: &PgdrConfig) -> Result<Self> {
        let mut rng = Rng::new(config.seed).derive("init");
        let model = Model::new(
            input_dim,
            config.hidden_dim,
            initial_classes,
            config.activation,
            &mut rng,
        )?;
        Ok(Self {
            model,
            bank: PrototypeBank::new(config.hidden_dim, config.gamma)?,
            memory: EpisodicMemory::default(),
            snapshot: None,
        })
    }
}

/// Separation outcome for one sample of the current task.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparationRecord {
    pub id: u64,
    /// Distance to the nearest old-candidate prototype, when defined.
    pub distance: Option<f64>,
    /// Posterior of the old component; absent under the degenerate fallback.
    pub posterior: Option<f64>,
    pub membership: Membership,
    pub candidates: usize,
    pub reallocated: usize,
    pub truly_old: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryRecord {
    pub class: usize,
    pub id: u64,
    pub kind: EntryKind,
    pub prototype_distance: f64,
    pub knn_score: Option<f64>,
}

impl From<&MemoryEntry> for MemoryRecord {
    fn from(e: &MemoryEntry) -> Self {
        Self {
            class: e.class,
            id: e.sample.id,
            kind: e.kind,
            prototype_distance: e.prototype_distance,
            knn_score: e.knn_score,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskOutcome {
    pub separation: Vec<SeparationRecord>,
    /// Share of separated samples whose membership matches the truth.
    pub separation_accuracy: Option<f64>,
    /// The mixture fit was degenerate and the distance threshold was used.
    pub gmm_fallback: bool,
    /// Per-epoch means of the unweighted loss terms over training batches.
    pub epoch_losses: Vec<LossValues>,
    /// Weighted loss on a fixed batch after every epoch.
    pub frozen_losses: Vec<f64>,
    pub memory: Vec<MemoryRecord>,
}

struct Item {
    sample: Sample,
    /// Set the pseudo-label arg-max ranges over.
    argmax_set: LabelSet,
    pseudo: PseudoLabel,
    from_memory: bool,
}

/// Mean pairwise distance between initialised prototypes; infinite when
/// there are fewer than two.
fn mean_prototype_spacing(bank: &PrototypeBank) -> f64 {
    let protos: Vec<&[f64]> = bank.initialized().map(|(_, p)| p).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..protos.len() {
        for j in i + 1..protos.len() {
            total += sq_distance(protos[i], protos[j]).sqrt();
            pairs += 1;
        }
    }
    if pairs == 0 {
        f64::INFINITY
    } else {
        total / pairs as f64
    }
}

struct SeparationResult {
    reallocated: Vec<LabelSet>,
    records: Vec<SeparationRecord>,
    accuracy: Option<f64>,
    fallback: bool,
}

fn separate_task(state: &TrainState, task: &Task, config: &PgdrConfig) -> Result<SeparationResult> {
    let old_space = task.old_classes();
    let features: Vec<Vec<f64>> = task
        .train
        .iter()
        .map(|s| state.model.feature(&s.features))
        .collect::<Result<_>>()?;
    let entries = distance_set(
        features
            .iter()
            .map(|f| f.as_slice())
            .zip(task.train.iter().map(|s| &s.candidates)),
        &state.bank,
        &old_space,
    )?;
    let distances: Vec<f64> = entries.iter().map(|e| e.distance).collect();

    let mut fallback = false;
    let mut posteriors: Vec<(usize, f64)> = Vec::new();
    let membership = if entries.is_empty() {
        vec![Membership::New; task.train.len()]
    } else {
        match fit_gmm_1d(&distances, &config.separation.em) {
            Ok(fit) => {
                posteriors = entries
                    .iter()
                    .map(|e| (e.index, fit.model.posterior_old(e.distance)))
                    .collect();
                separate(task.train.len(), &posteriors, config.separation.alpha)
            }
            Err(Error::DegenerateInput(_)) => {
                fallback = true;
                let threshold = mean_prototype_spacing(&state.bank);
                let mut m = vec![Membership::New; task.train.len()];
                for e in &entries {
                    if e.distance <= threshold {
                        m[e.index] = Membership::Old;
                    }
                }
                m
            }
            Err(e) => return Err(e),
        }
    };

    let mut reallocated = Vec::with_capacity(task.train.len());
    for ((s, f), &m) in task.train.iter().zip(&features).zip(&membership) {
        reallocated.push(reallocate(
            &s.candidates,
            m,
            f,
            &state.bank,
            &old_space,
            &task.new_classes,
        )?);
    }

    let mut records = Vec::with_capacity(task.train.len());
    let mut dist = vec![None; task.train.len()];
    let mut post = vec![None; task.train.len()];
    for e in &entries {
        dist[e.index] = Some(e.distance);
    }
    for &(i, w) in &posteriors {
        post[i] = Some(w);
    }
    let mut correct = 0usize;
    for (i, s) in task.train.iter().enumerate() {
        let truly_old = old_space.contains(s.true_label);
        if dist[i].is_some() && (membership[i] == Membership::Old) == truly_old {
            correct += 1;
        }
        records.push(SeparationRecord {
            id: s.id,
            distance: dist[i],
            posterior: post[i],
            membership: membership[i],
            candidates: s.candidates.len(),
            reallocated: reallocated[i].len(),
            truly_old,
        });
    }
    let accuracy = (!entries.is_empty()).then(|| 100.0 * correct as f64 / entries.len() as f64);
    Ok(SeparationResult {
        reallocated,
        records,
        accuracy,
        fallback,
    })
}

fn refresh_prototypes(state: &mut TrainState, items: &[Item]) -> Result<()> {
    let lists = assign_class_features(
        &state.model,
        items
            .iter()
            .map(|it| (it.sample.features.as_slice(), &it.sample.candidates)),
    )?;
    state.bank.update(&lists)
}

/// Trains on one task and advances `state`.
pub fn run_task(
    state: &mut TrainState,
    task: &Task,
    cluster_stddev: f64,
    config: &PgdrConfig,
    pipeline: &Pipeline,
) -> Result<TaskOutcome> {
    let num_classes = task.label_space.len();
    let root = Rng::new(config.seed).derive_indexed("task", task.index as u64);
    if state.model.num_classes() < num_classes {
        state
            .model
            .grow_head(num_classes, &mut root.derive("head"))?;
    }
    for e in state.memory.entries_mut() {
        e.pseudo.extend_to(num_classes);
    }

    let separating = task.index > 0 && pipeline.labeling != LabelingRule::ModelPrediction;
    let separation = if separating {
        Some(separate_task(state, task, config)?)
    } else {
        None
    };

    let mut items: Vec<Item> = Vec::with_capacity(task.train.len() + state.memory.len());
    for (i, s) in task.train.iter().enumerate() {
        let realloc = match &separation {
            Some(sep) => sep.reallocated[i].clone(),
            None => s.candidates.clone(),
        };
        let argmax_set = match config.argmax_space {
            ArgmaxSpace::Original => s.candidates.clone(),
            ArgmaxSpace::Reallocated => realloc.clone(),
        };
        items.push(Item {
            sample: s.clone(),
            argmax_set,
            pseudo: PseudoLabel::uniform(&realloc, num_classes)?,
            from_memory: false,
        });
    }
    for e in state.memory.entries() {
        items.push(Item {
            sample: e.sample.clone(),
            argmax_set: e.sample.candidates.clone(),
            pseudo: e.pseudo.clone(),
            from_memory: true,
        });
    }
    if items.is_empty() {
        return Err(Error::EmptyInput("task training data"));
    }

    let sigma_weak = config.sigma_weak * cluster_stddev;
    let sigma_strong = config.sigma_strong * cluster_stddev;
    let objective = pipeline.objective;

    let frozen_n = items.len().min(FROZEN_BATCH);
    let mut frozen_rng = root.derive("frozen");
    let frozen_inputs: Vec<&[f64]> = items[..frozen_n]
        .iter()
        .map(|it| it.sample.features.as_slice())
        .collect();
    let mut frozen = AugmentedBatch::new(
        &frozen_inputs,
        Vec::new(),
        sigma_weak,
        sigma_strong,
        &mut frozen_rng,
    );

    let mut shuffle_rng = root.derive("shuffle");
    let mut aug_rng = root.derive("augment");
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut frozen_losses = Vec::with_capacity(config.epochs);
    let (start, end) = (config.separation.beta_start, config.separation.beta_end);

    for epoch in 0..config.epochs {
        let beta = beta_at(epoch, config.epochs, start, end);
        let mut order: Vec<usize> = (0..items.len()).collect();
        shuffle_rng.shuffle(&mut order);
        let mut sums = LossValues::default();
        for chunk in order.chunks(config.batch_size) {
            let mut weak = Vec::with_capacity(chunk.len());
            let mut strong = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let x = &items[i].sample.features;
                weak.push(augment(x, sigma_weak, &mut aug_rng));
                strong.push(augment(x, sigma_strong, &mut aug_rng));
            }
            for (k, &i) in chunk.iter().enumerate() {
                let item = &mut items[i];
                if item.from_memory && config.freeze_memory_labels {
                    continue;
                }
                let fw = state.model.forward(&weak[k])?;
                match pipeline.labeling {
                    LabelingRule::Momentum => {
                        update_pseudo(&mut item.pseudo, &fw.logits, &item.argmax_set, beta)?;
                    }
                    LabelingRule::NearestPrototype => {
                        let z = match state
                            .bank
                            .nearest_among(&fw.feature, item.argmax_set.iter())?
                        {
                            Some((c, _)) => c,
                            // No candidate has a prototype yet.
                            None => argmax_restricted(&fw.logits, item.argmax_set.iter())?,
                        };
                        item.pseudo.blend_toward(z, beta);
                    }
                    LabelingRule::ModelPrediction => {
                        item.pseudo = masked_prediction(&fw.probs, &item.sample.candidates)?;
                    }
                }
            }
            let targets = chunk
                .iter()
                .map(|&i| items[i].pseudo.as_slice().to_vec())
                .collect();
            let batch = AugmentedBatch {
                weak,
                strong,
                targets,
            };
            let (grads, values) =
                total_grad(&state.model, &batch, state.snapshot.as_ref(), &objective)?;
            sgd_step(&mut state.model, &grads, config.lr, config.sgd_momentum)?;
            let n = chunk.len() as f64;
            sums.ce += values.ce * n;
            sums.kd += values.kd * n;
            sums.cr += values.cr * n;
            sums.total += values.total * n;
        }
        let n = items.len() as f64;
        epoch_losses.push(LossValues {
            ce: sums.ce / n,
            kd: sums.kd / n,
            cr: sums.cr / n,
            total: sums.total / n,
        });

        if pipeline.labeling == LabelingRule::NearestPrototype {
            refresh_prototypes(state, &items)?;
        }
        frozen.targets = items[..frozen_n]
            .iter()
            .map(|it| it.pseudo.as_slice().to_vec())
            .collect();
        frozen_losses
            .push(total_loss(&state.model, &frozen, state.snapshot.as_ref(), &objective)?.total);
    }

    if pipeline.labeling != LabelingRule::NearestPrototype || config.epochs == 0 {
        refresh_prototypes(state, &items)?;
    }

    state.memory = match pipeline.memory_policy {
        MemoryPolicy::Disabled => EpisodicMemory::default(),
        policy => {
            let pool = build_pool(
                &state.model,
                items.into_iter().map(|it| (it.sample, it.pseudo)),
            )?;
            let (selection, mut rng) = match policy {
                MemoryPolicy::Random => (SelectionPolicy::Random, Some(root.derive("memory"))),
                _ => (SelectionPolicy::DiverseThenRepresentative, None),
            };
            rebuild_memory_with(
                &pool,
                &state.bank,
                num_classes,
                &pipeline.memory,
                selection,
                rng.as_mut(),
            )?
        }
    };
    state.snapshot = Some(state.model.clone());

    let (records, accuracy, fallback) = match separation {
        Some(s) => (s.records, s.accuracy, s.fallback),
        None => (Vec::new(), None, false),
    };
    Ok(TaskOutcome {
        separation: records,
        separation_accuracy: accuracy,
        gmm_fallback: fallback,
        epoch_losses,
        frozen_losses,
        memory: state
            .memory
            .entries()
            .iter()
            .map(MemoryRecord::from)
            .collect(),
    })
}

/// Accuracies in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracy {
    pub all: f64,
    /// On classes introduced by the task.
    pub new: Option<f64>,
    /// On classes from earlier tasks.
    pub old: Option<f64>,
}

pub fn evaluate(
    model: &Model,
    bank: &PrototypeBank,
    test: &[&LabeledPoint],
    new_classes: &LabelSet,
    mode: EvalMode,
) -> Result<Accuracy> {
    if test.is_empty() {
        return Err(Error::EmptyInput("test set"));
    }
    let (mut hit, mut new_hit, mut new_n, mut old_hit, mut old_n) = (0, 0, 0, 0, 0);
    for p in test {
        let predicted = match mode {
            EvalMode::Prototype => bank.classify(&model.feature(&p.features)?)?,
            EvalMode::Linear => argmax(&model.forward(&p.features)?.logits)?,
        };
        let ok = usize::from(predicted == p.label);
        hit += ok;
        if new_classes.contains(p.label) {
            new_hit += ok;
            new_n += 1;
        } else {
            old_hit += ok;
            old_n += 1;
        }
    }
    let pct = |h: usize, n: usize| (n > 0).then(|| 100.0 * h as f64 / n as f64);
    Ok(Accuracy {
        all: 100.0 * hit as f64 / test.len() as f64,
        new: pct(new_hit, new_n),
        old: pct(old_hit, old_n),
    })
}

pub fn average_incremental_accuracy(accuracies: &[f64]) -> Result<f64> {
    if accuracies.is_empty() {
        return Err(Error::EmptyInput("accuracy list"));
    }
    Ok(accuracies.iter().sum::<f64>() / accuracies.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskMetrics {
    /// 1-based task number.
    pub task: usize,
    /// Under the configured classifier.
    pub accuracy: Accuracy,
    pub prototype: Accuracy,
    pub linear: Accuracy,
    pub outcome: TaskOutcome,
}

impl TaskMetrics {
    /// Unweighted loss terms averaged over the final epoch; zeros when no
    /// epoch ran.
    pub fn final_losses(&self) -> LossValues {
        self.outcome
            .epoch_losses
            .last()
            .copied()
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub variant: VariantTag,
    pub eval: EvalMode,
    pub tasks: Vec<TaskMetrics>,
}

impl ExperimentReport {
    /// Ā under the configured classifier.
    pub fn average_accuracy(&self) -> Result<f64> {
        average_incremental_accuracy(
            &self
                .tasks
                .iter()
                .map(|t| t.accuracy.all)
                .collect::<Vec<_>>(),
        )
    }

    pub fn average_accuracy_with(&self, mode: EvalMode) -> Result<f64> {
        let acc: Vec<f64> = self
            .tasks
            .iter()
            .map(|t| match mode {
                EvalMode::Prototype => t.prototype.all,
                EvalMode::Linear => t.linear.all,
            })
            .collect();
        average_incremental_accuracy(&acc)
    }

    /// Mean over tasks that ran separation.
    pub fn mean_separation_accuracy(&self) -> Option<f64> {
        let v: Vec<f64> = self
            .tasks
            .iter()
            .filter_map(|t| t.outcome.separation_accuracy)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn final_task(&self) -> Option<&TaskMetrics> {
        self.tasks.last()
    }
}

/// Report plus the trained state after the last task.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub report: ExperimentReport,
    pub state: TrainState,
}

pub fn run_stream(stream: &TaskStream, config: &PgdrConfig) -> Result<RunResult> {
    config.validate()?;
    let first = stream
        .tasks
        .first()
        .ok_or(Error::EmptyInput("task stream"))?;
    let pipeline = apply_variant(config.variant, config);
    let mut state = TrainState::new(stream.header.feature_dim, first.label_space.len(), config)?;
    let mut tasks = Vec::with_capacity(stream.num_tasks());
    for (t, task) in stream.tasks.iter().enumerate() {
        let outcome = run_task(
            &mut state,
            task,
            stream.header.cluster_stddev,
            config,
            &pipeline,
        )?;
        let test = stream.test_set(t);
        let prototype = evaluate(
            &state.model,
            &state.bank,
            &test,
            &task.new_classes,
            EvalMode::Prototype,
        )?;
        let linear = evaluate(
            &state.model,
            &state.bank,
            &test,
            &task.new_classes,
            EvalMode::Linear,
        )?;
        tasks.push(TaskMetrics {
            task: t + 1,
            accuracy: match pipeline.eval {
                EvalMode::Prototype => prototype,
                EvalMode::Linear => linear,
            },
            prototype,
            linear,
            outcome,
        });
    }
    Ok(RunResult {
        report: ExperimentReport {
            variant: config.variant,
            eval: pipeline.eval,
            tasks,
        },
        state,
    })
}
