//! Two-component one-dimensional Gaussian mixture fitted by EM.

use crate::error::{Error, Result};

/// Lower bound on component variances.
pub const VARIANCE_FLOOR: f64 = 1e-6;
const WEIGHT_FLOOR: f64 = 1e-12;
const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub mean: f64,
    pub variance: f64,
    pub weight: f64,
}

impl Component {
    fn log_density(&self, x: f64) -> f64 {
        let d = x - self.mean;
        -0.5 * (LN_2PI + self.variance.ln() + d * d / self.variance)
    }

    fn log_joint(&self, x: f64) -> f64 {
        self.weight.ln() + self.log_density(x)
    }
}

/// Mixture with `components[0]` the smaller-mean ("old") component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gmm1D {
    components: [Component; 2],
}

impl Gmm1D {
    /// Validates, floors variances and orders components by mean.
    pub fn new(a: Component, b: Component) -> Result<Self> {
        for c in [&a, &b] {
            if !(c.mean.is_finite() && c.variance.is_finite() && c.weight.is_finite()) {
                return Err(Error::NonFinite("mixture component"));
            }
            if !(c.weight > 0.0 && c.weight < 1.0) {
                return Err(Error::config(format!(
                    "mixing weight {} outside (0, 1)",
                    c.weight
                )));
            }
        }
        if ((a.weight + b.weight) - 1.0).abs() > 1e-9 {
            return Err(Error::config("mixing weights must sum to 1"));
        }
        let floor = |c: Component| Component {
            variance: c.variance.max(VARIANCE_FLOOR),
            ..c
        };
        let (a, b) = (floor(a), floor(b));
        Ok(Self {
            components: if b.mean < a.mean { [b, a] } else { [a, b] },
        })
    }

    pub fn components(&self) -> &[Component; 2] {
        &self.components
    }

    /// The smaller-mean component.
    pub fn old(&self) -> &Component {
        &self.components[0]
    }

    pub fn new_component(&self) -> &Component {
        &self.components[1]
    }

    /// `log p(x)`.
    pub fn log_likelihood_point(&self, x: f64) -> f64 {
        log_sum_exp(
            self.components[0].log_joint(x),
            self.components[1].log_joint(x),
        )
    }

    pub fn log_likelihood(&self, values: &[f64]) -> f64 {
        values.iter().map(|&x| self.log_likelihood_point(x)).sum()
    }

    /// Posterior probability of the smaller-mean component, via log space.
    pub fn posterior_old(&self, x: f64) -> f64 {
        let a = self.components[0].log_joint(x);
        let b = self.components[1].log_joint(x);
        (a - log_sum_exp(a, b)).exp().clamp(0.0, 1.0)
    }
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub model: Gmm1D,
    /// Log-likelihood at the initial parameters and after every EM step.
    pub log_likelihoods: Vec<f64>,
}

impl GmmFit {
    pub fn iterations(&self) -> usize {
        self.log_likelihoods.len().saturating_sub(1)
    }
}

/// Linear-interpolation percentile of sorted data, `p` in `[0, 1]`.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// EM from a deterministic start: means at the 10th and 90th percentiles,
/// both variances equal to the sample variance, equal weights. Stops when the
/// log-likelihood gain drops below the tolerance.
pub fn fit_gmm_1d(values: &[f64], options: &EmOptions) -> Result<GmmFit> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("mixture input"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let distinct =
        sorted.windows(2).filter(|w| w[0] != w[1]).count() + usize::from(!sorted.is_empty());
    if distinct < 2 {
        return Err(Error::DegenerateInput(format!(
            "{distinct} distinct value(s) among {}",
            values.len()
        )));
    }

    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance =
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).max(VARIANCE_FLOOR);
    let (mut lo, mut hi) = (percentile(&sorted, 0.1), percentile(&sorted, 0.9));
    if lo == hi {
        // Heavy ties at the percentiles; the extremes still differ.
        lo = sorted[0];
        hi = sorted[sorted.len() - 1];
    }
    let mut comps = [
        Component {
            mean: lo,
            variance,
            weight: 0.5,
        },
        Component {
            mean: hi,
            variance,
            weight: 0.5,
        },
    ];

    let log_lik = |comps: &[Component; 2]| -> f64 {
        values
            .iter()
            .map(|&x| log_sum_exp(comps[0].log_joint(x), comps[1].log_joint(x)))
            .sum()
    };

    let mut trace = vec![log_lik(&comps)];
    let mut resp = vec![0.0; values.len()];
    for _ in 0..options.max_iterations {
        // E step: responsibility of component 0.
        for (r, &x) in resp.iter_mut().zip(values) {
            let a = comps[0].log_joint(x);
            let b = comps[1].log_joint(x);
            *r = (a - log_sum_exp(a, b)).exp();
        }
        // M step.
        let mut next = comps;
        for (k, comp) in next.iter_mut().enumerate() {
            let weight_of = |r: f64| if k == 0 { r } else { 1.0 - r };
            let nk: f64 = resp.iter().map(|&r| weight_of(r)).sum();
            if nk <= WEIGHT_FLOOR * n {
                comp.weight = WEIGHT_FLOOR;
                continue;
            }
            let mu = resp
                .iter()
                .zip(values)
                .map(|(&r, &x)| weight_of(r) * x)
                .sum::<f64>()
                / nk;
            let var = resp
                .iter()
                .zip(values)
                .map(|(&r, &x)| weight_of(r) * (x - mu) * (x - mu))
                .sum::<f64>()
                / nk;
            comp.mean = mu;
            comp.variance = var.max(VARIANCE_FLOOR);
            comp.weight = (nk / n).clamp(WEIGHT_FLOOR, 1.0 - WEIGHT_FLOOR);
        }
        let total = next[0].weight + next[1].weight;
        next[0].weight /= total;
        next[1].weight /= total;
        comps = next;

        let ll = log_lik(&comps);
        let gain = ll - trace[trace.len() - 1];
        trace.push(ll);
        if gain < options.tolerance {
            break;
        }
    }

    Ok(GmmFit {
        model: Gmm1D::new(comps[0], comps[1])?,
        log_likelihoods: trace,
    })
}
