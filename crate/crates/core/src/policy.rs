//! The hybrid policy class: a factored diagonal-Gaussian x per-dimension
//! categorical distribution.
//!
//! Network raw outputs are mapped to distribution parameters as
//! `[means | stddev parameters | logits per discrete dimension]`; stddevs go
//! through softplus (strictly positive, unbounded above, infimum zero),
//! categorical probabilities through softmax, and means are taken raw.
//! Sampling draws each dimension independently; the log probability of a
//! hybrid action is the sum of the per-dimension log densities and log
//! masses.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Network, NodeId, Tape};
use crate::space::{ActionSpace, HybridAction};

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Per-dimension Gaussian means/stddevs and categorical probability vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridDistributionParams {
    pub means: Vec<f64>,
    pub stddevs: Vec<f64>,
    pub cat_probs: Vec<Vec<f64>>,
}

impl HybridDistributionParams {
    /// Checks the distribution invariants: positive stddevs and normalized,
    /// non-negative probability vectors.
    pub fn validate(&self) -> bool {
        self.stddevs.iter().all(|&s| s > 0.0)
            && self.cat_probs.iter().all(|p| {
                p.iter().all(|&v| v >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-9
            })
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Maps a raw network output vector onto distribution parameters for `space`.
pub fn heads_from_network_output(
    raw: &[f64],
    space: &ActionSpace,
) -> Result<HybridDistributionParams, HeadError> {
    if raw.len() != space.head_len() {
        return Err(HeadError {
            got: raw.len(),
            want: space.head_len(),
        });
    }
    let n_c = space.n_continuous();
    let means = raw[..n_c].to_vec();
    let stddevs = raw[n_c..2 * n_c].iter().map(|&v| softplus(v)).collect();
    let mut cat_probs = Vec::new();
    let mut offset = 2 * n_c;
    for k in space.category_counts() {
        let logits = &raw[offset..offset + k];
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
        let total: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= total;
        }
        cat_probs.push(probs);
        offset += k;
    }
    Ok(HybridDistributionParams {
        means,
        stddevs,
        cat_probs,
    })
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("raw head vector has length {got}, space expects {want}")]
pub struct HeadError {
    pub got: usize,
    pub want: usize,
}

/// Evaluates the policy network at an observation and maps the output to
/// distribution parameters.
pub fn policy_params(
    net: &Network,
    observation: &[f64],
    space: &ActionSpace,
) -> HybridDistributionParams {
    let raw = net
        .eval(observation)
        .expect("observation length matches policy input");
    heads_from_network_output(&raw, space).expect("policy output length matches space")
}

/// Draws one hybrid action: independent Normals for the continuous
/// dimensions, then one inverse-CDF categorical draw per discrete dimension.
pub fn sample(
    params: &HybridDistributionParams,
    space: &ActionSpace,
    rng: &mut impl Rng,
) -> HybridAction {
    debug_assert_eq!(params.means.len(), space.n_continuous());
    let mut continuous = Vec::with_capacity(params.means.len());
    for (&mu, &sigma) in params.means.iter().zip(&params.stddevs) {
        let z: f64 = StandardNormal.sample(rng);
        continuous.push(mu + sigma * z);
    }
    let mut discrete = Vec::with_capacity(params.cat_probs.len());
    for probs in &params.cat_probs {
        let u: f64 = rng.random_range(0.0..1.0);
        let mut acc = 0.0;
        let mut chosen = probs.len() - 1;
        for (k, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                chosen = k;
                break;
            }
        }
        discrete.push(chosen);
    }
    HybridAction {
        continuous,
        discrete,
    }
}

/// Deterministic evaluation action: Gaussian means and categorical argmax
/// (ties broken by lowest index).
pub fn mean_action(params: &HybridDistributionParams, _space: &ActionSpace) -> HybridAction {
    let discrete = params
        .cat_probs
        .iter()
        .map(|probs| {
            let mut best = 0;
            for (k, &p) in probs.iter().enumerate() {
                if p > probs[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    HybridAction {
        continuous: params.means.clone(),
        discrete,
    }
}

/// Sum of Gaussian log densities and categorical log masses. A category with
/// exactly zero probability yields negative infinity.
pub fn log_prob(
    params: &HybridDistributionParams,
    _space: &ActionSpace,
    action: &HybridAction,
) -> f64 {
    let mut total = 0.0;
    for ((&a, &mu), &sigma) in action
        .continuous
        .iter()
        .zip(&params.means)
        .zip(&params.stddevs)
    {
        let z = (a - mu) / sigma;
        total += -0.5 * LN_2PI - sigma.ln() - 0.5 * z * z;
    }
    for (&k, probs) in action.discrete.iter().zip(&params.cat_probs) {
        total += probs[k].ln();
    }
    total
}

/// Closed-form diagonal-Gaussian KL summed over continuous dimensions.
pub fn kl_gaussian(old: &HybridDistributionParams, new: &HybridDistributionParams) -> f64 {
    assert_eq!(old.means.len(), new.means.len());
    let mut total = 0.0;
    for i in 0..old.means.len() {
        let (m1, s1) = (old.means[i], old.stddevs[i]);
        let (m2, s2) = (new.means[i], new.stddevs[i]);
        assert!(s1 > 0.0 && s2 > 0.0, "KL needs positive stddevs");
        let dm = m1 - m2;
        total += (s2 / s1).ln() + (s1 * s1 + dm * dm) / (2.0 * s2 * s2) - 0.5;
    }
    total
}

fn kl_categorical(old: &[f64], new: &[f64]) -> f64 {
    old.iter()
        .zip(new)
        .map(|(&p, &q)| if p == 0.0 { 0.0 } else { p * (p.ln() - q.ln()) })
        .sum()
}

/// Mean over discrete dimensions of the categorical KL. Terms with zero old
/// probability contribute zero; a zero new probability under positive old
/// mass yields positive infinity.
pub fn kl_categorical_mean(old: &HybridDistributionParams, new: &HybridDistributionParams) -> f64 {
    assert_eq!(old.cat_probs.len(), new.cat_probs.len());
    if old.cat_probs.is_empty() {
        return 0.0;
    }
    let total: f64 = old
        .cat_probs
        .iter()
        .zip(&new.cat_probs)
        .map(|(p, q)| kl_categorical(p, q))
        .sum();
    total / old.cat_probs.len() as f64
}

/// Joint KL of the factored hybrid distribution: the Gaussian KL plus the
/// sum (not mean) of the per-dimension categorical KLs.
pub fn kl_joint(old: &HybridDistributionParams, new: &HybridDistributionParams) -> f64 {
    let cat: f64 = old
        .cat_probs
        .iter()
        .zip(&new.cat_probs)
        .map(|(p, q)| kl_categorical(p, q))
        .sum();
    kl_gaussian(old, new) + cat
}

/// Shifts the final-layer bias of one categorical head so the initial policy
/// picks `category` of discrete dimension `dim` with average probability `p`.
pub fn bias_discrete_head(
    net: &mut Network,
    space: &ActionSpace,
    dim: usize,
    category: usize,
    p: f64,
) {
    assert!(p > 0.0 && p < 1.0, "target probability must be in (0, 1)");
    let counts = space.category_counts();
    assert!(dim < counts.len(), "discrete dimension out of range");
    let k = counts[dim];
    assert!(category < k, "category out of range");

    let logits_start = 2 * space.n_continuous() + counts[..dim].iter().sum::<usize>();
    let bias_range = net.output_bias_range();
    let block = bias_range.start + logits_start;
    let others: f64 = (0..k)
        .filter(|&j| j != category)
        .map(|j| net.params()[block + j].exp())
        .sum();
    let target = (p / (1.0 - p) * others).ln();
    net.params_mut()[block + category] = target;
}

// ---- differentiable graphs over raw network heads ----

/// Tape nodes for the distribution heads of one state, shared by every
/// action term built against that state.
pub struct HeadNodes {
    n_continuous: usize,
    mean: Option<NodeId>,
    stddev: Option<NodeId>,
    /// `2 sigma^2`, the Gaussian log-density denominator.
    two_var: Option<NodeId>,
    /// Scalar `sum_i ln sigma_i`.
    sum_ln_stddev: Option<NodeId>,
    log_alpha: Vec<NodeId>,
}

/// Records softplus/log-softmax head mappings for a raw output node.
pub fn heads_on_tape(tape: &mut Tape, raw: NodeId, space: &ActionSpace) -> HeadNodes {
    let n_c = space.n_continuous();
    let (mean, stddev, two_var, sum_ln_stddev) = if n_c > 0 {
        let mean = tape.slice(raw, 0, n_c);
        let sraw = tape.slice(raw, n_c, n_c);
        let stddev = tape.softplus(sraw);
        let var = tape.mul(stddev, stddev);
        let two_var = tape.scale(var, 2.0);
        let ln_s = tape.ln(stddev);
        let sum_ln = tape.sum(ln_s);
        (Some(mean), Some(stddev), Some(two_var), Some(sum_ln))
    } else {
        (None, None, None, None)
    };
    let mut log_alpha = Vec::new();
    let mut offset = 2 * n_c;
    for k in space.category_counts() {
        let logits = tape.slice(raw, offset, k);
        log_alpha.push(tape.log_softmax(logits));
        offset += k;
    }
    HeadNodes {
        n_continuous: n_c,
        mean,
        stddev,
        two_var,
        sum_ln_stddev,
        log_alpha,
    }
}

impl HeadNodes {
    pub fn mean(&self) -> Option<NodeId> {
        self.mean
    }

    pub fn stddev(&self) -> Option<NodeId> {
        self.stddev
    }

    pub fn log_alpha(&self) -> &[NodeId] {
        &self.log_alpha
    }
}

/// Scalar node holding `log pi(action | heads)`, differentiable through the
/// raw network output.
pub fn log_prob_on_tape(tape: &mut Tape, heads: &HeadNodes, action: &HybridAction) -> NodeId {
    let mut terms: Vec<(NodeId, f64)> = Vec::new();
    let mut bias = 0.0;
    if heads.n_continuous > 0 {
        let a = tape.constant(&action.continuous);
        let diff = tape.sub(a, heads.mean.unwrap());
        let dsq = tape.mul(diff, diff);
        let ratio = tape.div(dsq, heads.two_var.unwrap());
        let s = tape.sum(ratio);
        terms.push((s, -1.0));
        terms.push((heads.sum_ln_stddev.unwrap(), -1.0));
        bias += -0.5 * LN_2PI * heads.n_continuous as f64;
    }
    for (d, &node) in heads.log_alpha.iter().enumerate() {
        let pick = tape.slice(node, action.discrete[d], 1);
        terms.push((pick, 1.0));
    }
    tape.lin_comb(&terms, bias)
}

/// Scalar node holding the Gaussian KL from fixed old parameters to the
/// differentiable new heads.
pub fn kl_gaussian_on_tape(
    tape: &mut Tape,
    old: &HybridDistributionParams,
    heads: &HeadNodes,
) -> NodeId {
    let n_c = heads.n_continuous;
    assert_eq!(old.means.len(), n_c);
    if n_c == 0 {
        return tape.scalar(0.0);
    }
    let old_mean = tape.constant(&old.means);
    let old_var: Vec<f64> = old.stddevs.iter().map(|&s| s * s).collect();
    let old_var = tape.constant(&old_var);
    let dm = tape.sub(old_mean, heads.mean.unwrap());
    let dsq = tape.mul(dm, dm);
    let num = tape.add(old_var, dsq);
    let ratio = tape.div(num, heads.two_var.unwrap());
    let s = tape.sum(ratio);
    let bias = -old.stddevs.iter().map(|&v| v.ln()).sum::<f64>() - 0.5 * n_c as f64;
    tape.lin_comb(&[(heads.sum_ln_stddev.unwrap(), 1.0), (s, 1.0)], bias)
}

/// Scalar node holding the mean categorical KL from fixed old parameters to
/// the differentiable new heads.
pub fn kl_categorical_mean_on_tape(
    tape: &mut Tape,
    old: &HybridDistributionParams,
    heads: &HeadNodes,
) -> NodeId {
    let n_d = heads.log_alpha.len();
    assert_eq!(old.cat_probs.len(), n_d);
    if n_d == 0 {
        return tape.scalar(0.0);
    }
    let mut terms = Vec::with_capacity(n_d);
    let mut bias = 0.0;
    for (d, &node) in heads.log_alpha.iter().enumerate() {
        let p_old = &old.cat_probs[d];
        let c = tape.constant(p_old);
        let cross = tape.dot(c, node);
        terms.push((cross, -1.0 / n_d as f64));
        bias += p_old
            .iter()
            .map(|&p| if p == 0.0 { 0.0 } else { p * p.ln() })
            .sum::<f64>()
            / n_d as f64;
    }
    tape.lin_comb(&terms, bias)
}
