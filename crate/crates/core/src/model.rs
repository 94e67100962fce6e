//! Two-layer classifier `head ∘ φ` with hand-derived gradients.
//!
//! The encoder `φ` is an affine map followed by an elementwise activation;
//! the head is an affine map onto the current label space and grows one row
//! per new class. All three training losses are soft cross-entropies, so a
//! single logit-gradient routine serves them:
//!
//! ```text
//! L = −Σⱼ tⱼ log max(qⱼ, ε),   q = softmax(z / τ)
//! ∂L/∂zₖ = (qₖ Σ_{j∈U} tⱼ − tₖ·[k∈U]) / τ
//! ```
//!
//! where `U` is the set of entries whose probability is above the floor `ε`
//! (clamped entries are constant and contribute nothing).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::math::{softmax_unchecked, Matrix, Rng};

/// Floor applied inside every logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Tanh => v.tanh(),
            Activation::Relu => v.max(0.0),
        }
    }

    /// Derivative given pre-activation and output.
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - out * out,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::config(format!("unknown activation `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Identity => "identity",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        })
    }
}

/// Every trainable array of the model. Also used for gradients and momentum
/// buffers, which share the shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    /// `hidden × input`
    pub encoder_weight: Matrix,
    pub encoder_bias: Vec<f64>,
    /// `classes × hidden`
    pub head_weight: Matrix,
    pub head_bias: Vec<f64>,
}

/// Names used by checkpoints and diagnostics, in [`Parameters::tensors`] order.
pub const TENSOR_NAMES: [&str; 4] = ["encoder.weight", "encoder.bias", "head.weight", "head.bias"];

impl Parameters {
    pub fn zeros(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        Self {
            encoder_weight: Matrix::zeros(hidden_dim, input_dim),
            encoder_bias: vec![0.0; hidden_dim],
            head_weight: Matrix::zeros(num_classes, hidden_dim),
            head_bias: vec![0.0; num_classes],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden_dim(), self.num_classes())
    }

    pub fn input_dim(&self) -> usize {
        self.encoder_weight.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder_weight.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.head_weight.rows()
    }

    /// `(rows, cols, values)` of each array; biases are `n × 1`.
    pub fn tensors(&self) -> [(usize, usize, &[f64]); 4] {
        [
            (
                self.encoder_weight.rows(),
                self.encoder_weight.cols(),
                self.encoder_weight.as_slice(),
            ),
            (self.encoder_bias.len(), 1, &self.encoder_bias),
            (
                self.head_weight.rows(),
                self.head_weight.cols(),
                self.head_weight.as_slice(),
            ),
            (self.head_bias.len(), 1, &self.head_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [
            self.encoder_weight.as_mut_slice(),
            &mut self.encoder_bias,
            self.head_weight.as_mut_slice(),
            &mut self.head_bias,
        ]
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, _, v)| v.len()).sum()
    }

    pub fn same_shape(&self, other: &Parameters) -> bool {
        self.tensors()
            .iter()
            .zip(other.tensors().iter())
            .all(|(a, b)| a.0 == b.0 && a.1 == b.1)
    }

    /// Flattened copy in tensor order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .iter()
            .flat_map(|(_, _, v)| v.iter().copied())
            .collect()
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub pre_activation: Vec<f64>,
    pub feature: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    activation: Activation,
    params: Parameters,
    velocity: Parameters,
}

fn fan_in_uniform(rng: &mut Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    (0..n).map(|_| rng.uniform_range(-bound, bound)).collect()
}

impl Model {
    /// Weights uniform in `±1/√fan_in`, biases zero, momentum buffers zero.
    pub fn new(
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || num_classes == 0 {
            return Err(Error::config("model dimensions must be positive"));
        }
        let mut params = Parameters::zeros(input_dim, hidden_dim, num_classes);
        params.encoder_weight = Matrix::from_vec(
            hidden_dim,
            input_dim,
            fan_in_uniform(rng, input_dim, hidden_dim * input_dim),
        )?;
        params.head_weight = Matrix::from_vec(
            num_classes,
            hidden_dim,
            fan_in_uniform(rng, hidden_dim, num_classes * hidden_dim),
        )?;
        let velocity = params.zeros_like();
        Ok(Self {
            activation,
            params,
            velocity,
        })
    }

    pub fn from_parts(
        activation: Activation,
        params: Parameters,
        velocity: Parameters,
    ) -> Result<Self> {
        if !params.same_shape(&velocity) {
            return Err(Error::Internal(
                "momentum buffers do not match parameter shapes".into(),
            ));
        }
        if params.encoder_bias.len() != params.hidden_dim()
            || params.head_weight.cols() != params.hidden_dim()
            || params.head_bias.len() != params.num_classes()
        {
            return Err(Error::Internal("inconsistent parameter shapes".into()));
        }
        Ok(Self {
            activation,
            params,
            velocity,
        })
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &Parameters {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Parameters {
        &mut self.params
    }

    pub fn velocity(&self) -> &Parameters {
        &self.velocity
    }

    pub fn input_dim(&self) -> usize {
        self.params.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.params.hidden_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.params.num_classes()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(self.forward_unchecked(x))
    }

    fn forward_unchecked(&self, x: &[f64]) -> Forward {
        let mut pre = self.params.encoder_weight.matvec(x);
        for (p, b) in pre.iter_mut().zip(&self.params.encoder_bias) {
            *p += b;
        }
        let feature: Vec<f64> = pre.iter().map(|&v| self.activation.apply(v)).collect();
        let mut logits = self.params.head_weight.matvec(&feature);
        for (l, b) in logits.iter_mut().zip(&self.params.head_bias) {
            *l += b;
        }
        let probs = softmax_unchecked(&logits);
        Forward {
            pre_activation: pre,
            feature,
            logits,
            probs,
        }
    }

    /// `φ(x)`.
    pub fn feature(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.feature)
    }

    /// Extends the head to `num_classes` outputs. Existing rows are kept
    /// bit-exactly; new rows are drawn like at construction, biases zero.
    pub fn grow_head(&mut self, num_classes: usize, rng: &mut Rng) -> Result<()> {
        let current = self.num_classes();
        if num_classes < current {
            return Err(Error::config(format!(
                "cannot shrink head from {current} to {num_classes} classes"
            )));
        }
        let h = self.hidden_dim();
        for _ in current..num_classes {
            self.params
                .head_weight
                .push_row(&fan_in_uniform(rng, h, h))?;
            self.params.head_bias.push(0.0);
            self.velocity.head_weight.push_row(&vec![0.0; h])?;
            self.velocity.head_bias.push(0.0);
        }
        Ok(())
    }

    /// Accumulates into `grads` the gradient of a loss whose logit gradient
    /// at input `x` is `dlogits`.
    fn backprop(&self, x: &[f64], fw: &Forward, dlogits: &[f64], grads: &mut Parameters) {
        grads.head_weight.add_outer(dlogits, &fw.feature);
        for (g, d) in grads.head_bias.iter_mut().zip(dlogits) {
            *g += d;
        }
        let dfeature = self.params.head_weight.matvec_transposed(dlogits);
        let dpre: Vec<f64> = dfeature
            .iter()
            .zip(fw.pre_activation.iter().zip(&fw.feature))
            .map(|(d, (&pre, &out))| d * self.activation.derivative(pre, out))
            .collect();
        grads.encoder_weight.add_outer(&dpre, x);
        for (g, d) in grads.encoder_bias.iter_mut().zip(&dpre) {
            *g += d;
        }
    }
}

/// Relative weights of the three loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub ce: f64,
    pub kd: f64,
    pub cr: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ce: 1.0,
            kd: 1.0,
            cr: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w_ce", self.ce), ("w_kd", self.kd), ("w_cr", self.cr)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config(format!("{name} must be non-negative")));
            }
        }
        Ok(())
    }
}

fn soft_xent(probs: &[f64], target: &[f64]) -> f64 {
    -probs
        .iter()
        .zip(target)
        .map(|(&q, &t)| {
            if t == 0.0 {
                0.0
            } else {
                t * q.max(LOG_FLOOR).ln()
            }
        })
        .sum::<f64>()
}

/// Adds `scale · ∂/∂z soft_xent(softmax(z), target)` into `out`.
fn soft_xent_logit_grad(probs: &[f64], target: &[f64], scale: f64, out: &mut [f64]) {
    let mass: f64 = probs
        .iter()
        .zip(target)
        .filter(|(&q, _)| q >= LOG_FLOOR)
        .map(|(_, &t)| t)
        .sum();
    for ((o, &q), &t) in out.iter_mut().zip(probs).zip(target) {
        let own = if q >= LOG_FLOOR { t } else { 0.0 };
        *o += scale * (q * mass - own);
    }
}

fn batch_soft_xent(probs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if probs.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: probs.len(),
            got: targets.len(),
        });
    }
    if probs.is_empty() {
        return Err(Error::EmptyInput("loss batch"));
    }
    let mut total = 0.0;
    for (q, t) in probs.iter().zip(targets) {
        if q.len() != t.len() {
            return Err(Error::DimensionMismatch {
                expected: q.len(),
                got: t.len(),
            });
        }
        total += soft_xent(q, t);
    }
    Ok(total / probs.len() as f64)
}

/// Partial-label cross-entropy `−(1/N) Σᵢ Σⱼ pᵢⱼ log fⱼ(xᵢ)`.
pub fn loss_ce(probs: &[Vec<f64>], pseudo: &[Vec<f64>]) -> Result<f64> {
    batch_soft_xent(probs, pseudo)
}

/// Distillation `−(1/N) Σᵢ Σ_{j∈old} fʲ_old log fⱼ`. Both arguments are
/// distributions over the old classes only.
pub fn loss_kd(current_old: &[Vec<f64>], snapshot_old: &[Vec<f64>]) -> Result<f64> {
    batch_soft_xent(current_old, snapshot_old)
}

/// Consistency `−(1/N) Σᵢ Σⱼ pᵢⱼ log fⱼ(xˢᵢ)` with `p` from the weak view.
pub fn loss_cr(pseudo_weak: &[Vec<f64>], probs_strong: &[Vec<f64>]) -> Result<f64> {
    batch_soft_xent(probs_strong, pseudo_weak)
}

/// Softmax over the first `old_classes` logits at temperature `tau`.
pub fn old_class_probs(logits: &[f64], old_classes: usize, tau: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits[..old_classes].iter().map(|z| z / tau).collect();
    softmax_unchecked(&scaled)
}

/// The pair of old-class distributions that distillation compares for input
/// `x`: the current model's and the snapshot's.
pub fn distillation_pair(
    model: &Model,
    snapshot: Option<&Model>,
    x: &[f64],
    tau: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let snapshot = snapshot.ok_or(Error::NoSnapshot)?;
    let old = snapshot.num_classes();
    if old > model.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: model.num_classes(),
            got: old,
        });
    }
    let current = model.forward(x)?;
    let previous = snapshot.forward(x)?;
    Ok((
        old_class_probs(&current.logits, old, tau),
        old_class_probs(&previous.logits, old, tau),
    ))
}

/// Isotropic Gaussian feature jitter.
pub fn augment(x: &[f64], sigma: f64, rng: &mut Rng) -> Vec<f64> {
    if sigma == 0.0 {
        return x.to_vec();
    }
    x.iter().map(|v| v + sigma * rng.normal()).collect()
}

/// `v ← μ·v + g; θ ← θ − lr·v`.
pub fn sgd_step(model: &mut Model, grads: &Parameters, lr: f64, momentum: f64) -> Result<()> {
    if !model.params.same_shape(grads) {
        return Err(Error::Internal(
            "gradient shapes do not match parameters".into(),
        ));
    }
    let Model {
        params, velocity, ..
    } = model;
    for ((theta, v), g) in params
        .tensors_mut()
        .into_iter()
        .zip(velocity.tensors_mut())
        .zip(grads.tensors().iter().map(|t| t.2))
    {
        for ((p, vel), &gr) in theta.iter_mut().zip(v.iter_mut()).zip(g) {
            *vel = momentum * *vel + gr;
            *p -= lr * *vel;
        }
    }
    Ok(())
}

/// One training batch after augmentation: weak and strong views of every
/// input and its current pseudo-label.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBatch {
    pub weak: Vec<Vec<f64>>,
    pub strong: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl AugmentedBatch {
    pub fn new(
        inputs: &[&[f64]],
        targets: Vec<Vec<f64>>,
        sigma_weak: f64,
        sigma_strong: f64,
        rng: &mut Rng,
    ) -> Self {
        let mut weak = Vec::with_capacity(inputs.len());
        let mut strong = Vec::with_capacity(inputs.len());
        for x in inputs {
            weak.push(augment(x, sigma_weak, rng));
            strong.push(augment(x, sigma_strong, rng));
        }
        Self {
            weak,
            strong,
            targets,
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn validate(&self, model: &Model) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyInput("training batch"));
        }
        if self.weak.len() != self.len() || self.strong.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: self.weak.len().min(self.strong.len()),
            });
        }
        for t in &self.targets {
            if t.len() != model.num_classes() {
                return Err(Error::DimensionMismatch {
                    expected: model.num_classes(),
                    got: t.len(),
                });
            }
        }
        for x in self.weak.iter().chain(&self.strong) {
            if x.len() != model.input_dim() {
                return Err(Error::DimensionMismatch {
                    expected: model.input_dim(),
                    got: x.len(),
                });
            }
        }
        Ok(())
    }
}

/// Unweighted batch means of each term plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossValues {
    pub ce: f64,
    pub kd: f64,
    pub cr: f64,
    pub total: f64,
}

/// Training-objective options that are not per-term weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub weights: LossWeights,
    /// Distillation temperature.
    pub temperature: f64,
}

impl Default for Objective {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            temperature: 1.0,
        }
    }
}

/// Weighted `L_ce + L_kd + L_cr` on a batch and its parameter gradient.
/// The distillation term is dropped when `snapshot` is `None`.
pub fn total_grad(
    model: &Model,
    batch: &AugmentedBatch,
    snapshot: Option<&Model>,
    objective: &Objective,
) -> Result<(Parameters, LossValues)> {
    let mut grads = model.params.zeros_like();
    let values = accumulate(model, batch, snapshot, objective, Some(&mut grads))?;
    Ok((grads, values))
}

/// Same objective as [`total_grad`], value only.
pub fn total_loss(
    model: &Model,
    batch: &AugmentedBatch,
    snapshot: Option<&Model>,
    objective: &Objective,
) -> Result<LossValues> {
    accumulate(model, batch, snapshot, objective, None)
}

fn accumulate(
    model: &Model,
    batch: &AugmentedBatch,
    snapshot: Option<&Model>,
    objective: &Objective,
    mut grads: Option<&mut Parameters>,
) -> Result<LossValues> {
    batch.validate(model)?;
    let w = objective.weights;
    let tau = objective.temperature;
    let old_classes = match snapshot {
        Some(s) if s.num_classes() > model.num_classes() => {
            return Err(Error::DimensionMismatch {
                expected: model.num_classes(),
                got: s.num_classes(),
            })
        }
        Some(s) => s.num_classes(),
        None => 0,
    };
    let n = batch.len() as f64;
    let mut values = LossValues::default();
    let mut dlogits = vec![0.0; model.num_classes()];

    for i in 0..batch.len() {
        let weak = &batch.weak[i];
        let target = &batch.targets[i];
        let fw = model.forward_unchecked(weak);
        values.ce += soft_xent(&fw.probs, target);
        dlogits.iter_mut().for_each(|v| *v = 0.0);
        soft_xent_logit_grad(&fw.probs, target, w.ce / n, &mut dlogits);

        if let Some(snap) = snapshot {
            let current = old_class_probs(&fw.logits, old_classes, tau);
            let previous = old_class_probs(&snap.forward_unchecked(weak).logits, old_classes, tau);
            values.kd += soft_xent(&current, &previous);
            soft_xent_logit_grad(
                &current,
                &previous,
                w.kd / (n * tau),
                &mut dlogits[..old_classes],
            );
        }
        if let Some(g) = grads.as_deref_mut() {
            model.backprop(weak, &fw, &dlogits, g);
        }

        let strong = &batch.strong[i];
        let fs = model.forward_unchecked(strong);
        values.cr += soft_xent(&fs.probs, target);
        if let Some(g) = grads.as_deref_mut() {
            if w.cr != 0.0 {
                dlogits.iter_mut().for_each(|v| *v = 0.0);
                soft_xent_logit_grad(&fs.probs, target, w.cr / n, &mut dlogits);
                model.backprop(strong, &fs, &dlogits, g);
            }
        }
    }
    values.ce /= n;
    values.kd /= n;
    values.cr /= n;
    values.total = w.ce * values.ce + w.kd * values.kd + w.cr * values.cr;
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(rng: &mut Rng) -> Model {
        Model::new(4, 5, 3, Activation::Tanh, rng).unwrap()
    }

    #[test]
    fn zero_model_gives_uniform_probs() {
        let model = Model::from_parts(
            Activation::Tanh,
            Parameters::zeros(4, 5, 3),
            Parameters::zeros(4, 5, 3),
        )
        .unwrap();
        let fw = model.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(fw.logits, vec![0.0; 3]);
        for p in fw.probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(model.forward(&[1.0]).is_err());
    }

    #[test]
    fn identity_encoder_is_affine() {
        let mut rng = Rng::new(3);
        let model = Model::new(3, 2, 2, Activation::Identity, &mut rng).unwrap();
        let x = [0.3, -1.0, 2.0];
        let fw = model.forward(&x).unwrap();
        let p = model.params();
        for r in 0..2 {
            let expect: f64 = (0..3)
                .map(|c| p.encoder_weight.get(r, c) * x[c])
                .sum::<f64>()
                + p.encoder_bias[r];
            assert_eq!(fw.feature[r], expect);
        }
        let sum: f64 = fw.probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ce_closed_forms() {
        assert_eq!(loss_ce(&[vec![0.0, 1.0]], &[vec![0.0, 1.0]]).unwrap(), 0.0);
        let c = 5;
        let u = vec![1.0 / c as f64; c];
        let l = loss_ce(&[u.clone(), u.clone()], &[u.clone(), u]).unwrap();
        assert!((l - (c as f64).ln()).abs() < 1e-12);
        assert!(loss_ce(&[vec![1.0]], &[]).is_err());
        // log floor keeps the loss finite
        assert!(loss_ce(&[vec![0.0, 1.0]], &[vec![1.0, 0.0]])
            .unwrap()
            .is_finite());
    }

    #[test]
    fn kd_and_cr_identities() {
        let p = vec![0.2, 0.5, 0.3];
        let entropy: f64 = -p.iter().map(|v: &f64| v * v.ln()).sum::<f64>();
        assert!(
            (loss_kd(std::slice::from_ref(&p), std::slice::from_ref(&p)).unwrap() - entropy).abs()
                < 1e-12
        );
        assert_eq!(loss_kd(&[vec![1.0, 0.0]], &[vec![1.0, 0.0]]).unwrap(), 0.0);
        assert!(
            (loss_cr(std::slice::from_ref(&p), std::slice::from_ref(&p)).unwrap() - entropy).abs()
                < 1e-12
        );
        let saturated = softmax_unchecked(&[40.0, 0.0, 0.0]);
        assert!(loss_cr(&[vec![1.0, 0.0, 0.0]], &[saturated]).unwrap() < 1e-12);

        let mut rng = Rng::new(1);
        let m = tiny(&mut rng);
        assert!(matches!(
            distillation_pair(&m, None, &[0.0; 4], 1.0),
            Err(Error::NoSnapshot)
        ));
    }

    #[test]
    fn augment_zero_sigma_is_identity() {
        let mut rng = Rng::new(9);
        let x = vec![1.0, 2.0, -3.0];
        assert_eq!(augment(&x, 0.0, &mut rng), x);
    }

    #[test]
    fn augment_mean_converges() {
        let mut rng = Rng::new(10);
        let x = vec![1.0, -2.0, 0.5];
        let sigma = 0.3;
        let n = 10_000;
        let mut mean = [0.0; 3];
        for _ in 0..n {
            for (m, v) in mean.iter_mut().zip(augment(&x, sigma, &mut rng)) {
                *m += v / n as f64;
            }
        }
        let bound = 3.0 * sigma / (n as f64).sqrt();
        for (m, v) in mean.iter().zip(&x) {
            assert!((m - v).abs() < bound);
        }
    }

    #[test]
    fn sgd_step_recursion() {
        let mut rng = Rng::new(4);
        let mut m = tiny(&mut rng);
        let before = m.params().flatten();
        let mut ones = m.params().zeros_like();
        for t in ones.tensors_mut() {
            t.iter_mut().for_each(|v| *v = 1.0);
        }
        sgd_step(&mut m, &ones, 1.0, 0.0).unwrap();
        for (a, b) in before.iter().zip(m.params().flatten()) {
            assert_eq!(b, a - 1.0);
        }

        let mut m = tiny(&mut rng);
        let before = m.params().flatten();
        sgd_step(&mut m, &ones, 1.0, 0.9).unwrap();
        sgd_step(&mut m, &ones, 1.0, 0.9).unwrap();
        for (a, b) in before.iter().zip(m.params().flatten()) {
            assert!((a - b - 2.9).abs() < 1e-12);
        }

        let mut m = tiny(&mut rng);
        let before = m.params().clone();
        sgd_step(&mut m, &ones, 0.0, 0.9).unwrap();
        assert_eq!(&before, m.params());

        let wrong = Parameters::zeros(4, 5, 2);
        assert!(sgd_step(&mut m, &wrong, 0.1, 0.9).is_err());
    }

    #[test]
    fn head_growth_preserves_existing_logits() {
        let mut rng = Rng::new(5);
        let mut m = tiny(&mut rng);
        let x = [0.1, 0.2, -0.3, 0.9];
        let before = m.forward(&x).unwrap().logits;
        m.grow_head(6, &mut rng).unwrap();
        let after = m.forward(&x).unwrap().logits;
        assert_eq!(after.len(), 6);
        assert_eq!(&after[..3], &before[..]);
        assert_eq!(&m.params().head_bias[3..], &[0.0, 0.0, 0.0]);
        assert!(m.grow_head(2, &mut rng).is_err());
    }

    #[test]
    fn losses_are_non_negative_and_kd_dropped_without_snapshot() {
        let mut rng = Rng::new(6);
        let m = tiny(&mut rng);
        let x: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..4).map(|_| rng.normal()).collect())
            .collect();
        let inputs: Vec<&[f64]> = x.iter().map(|v| v.as_slice()).collect();
        let targets = vec![vec![0.5, 0.5, 0.0]; 4];
        let batch = AugmentedBatch::new(&inputs, targets, 0.1, 0.2, &mut rng);
        let v = total_loss(&m, &batch, None, &Objective::default()).unwrap();
        assert_eq!(v.kd, 0.0);
        assert!(v.ce >= 0.0 && v.cr >= 0.0);
        assert!((v.total - (v.ce + v.cr)).abs() < 1e-12);
    }
}
