//! Projected energy functions: per-direction weights for the sliced estimator.
//!
//! Non-parametric weights normalize `g(W_l)` for `g` in `{exp, identity,
//! square}`. Parametric weights take the softmax of scores produced by a
//! small network over the concatenated circle coordinates of both sample
//! sets (an `L x (n + m)` matrix), trained on the fly against the
//! per-direction distances.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Every kind of projected energy function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnergyKind {
    Exp,
    Identity,
    Poly,
    Linear,
    Nonlinear,
    Attention,
}

impl EnergyKind {
    pub const ALL: [EnergyKind; 6] =
        [EnergyKind::Exp, EnergyKind::Identity, EnergyKind::Poly, EnergyKind::Linear, EnergyKind::Nonlinear, EnergyKind::Attention];

    pub fn is_parametric(self) -> bool {
        matches!(self, EnergyKind::Linear | EnergyKind::Nonlinear | EnergyKind::Attention)
    }

    pub fn name(self) -> &'static str {
        match self {
            EnergyKind::Exp => "exp",
            EnergyKind::Identity => "identity",
            EnergyKind::Poly => "poly",
            EnergyKind::Linear => "linear",
            EnergyKind::Nonlinear => "nonlinear",
            EnergyKind::Attention => "attention",
        }
    }
}

impl std::str::FromStr for EnergyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EnergyKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| Error::InvalidConfig(format!("unknown energy kind '{s}'")))
    }
}

/// How network parameters are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetInit {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` from the given seed.
    Uniform {
        seed: u64,
    },
    Zero,
}

/// Choice and hyperparameters of the projected energy function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnergySpec {
    pub kind: EnergyKind,
    /// Training epochs `T` for parametric kinds.
    pub epochs: usize,
    /// Gradient step `alpha` for parametric kinds.
    pub learning_rate: f64,
    /// Ascend the weighted loss instead of descending it.
    pub maximize: bool,
    /// Take final weights from `exp(W_l)` after training, ignoring the network.
    pub literal_final_weights: bool,
    pub init: NetInit,
    /// Hidden width of the nonlinear head.
    pub hidden: usize,
    /// Query/key width of the attention network.
    pub attention_width: usize,
    /// Starting parameters; fresh ones are drawn from `init` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkParams>,
}

impl Default for EnergySpec {
    fn default() -> Self {
        Self {
            kind: EnergyKind::Exp,
            epochs: 10,
            learning_rate: 0.01,
            maximize: false,
            literal_final_weights: false,
            init: NetInit::Uniform { seed: 0 },
            hidden: 32,
            attention_width: 640,
            network: None,
        }
    }
}

impl EnergySpec {
    pub fn new(kind: EnergyKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(net) = &self.network {
            if net.kind != self.kind {
                return Err(Error::InvalidConfig(format!("checkpoint is a '{}' network, spec asks for '{}'", net.kind.name(), self.kind.name())));
            }
        }
        if self.kind.is_parametric() {
            if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
                return Err(Error::InvalidConfig(format!("learning rate must be positive, got {}", self.learning_rate)));
            }
            if self.hidden == 0 || self.attention_width == 0 {
                return Err(Error::InvalidConfig("network widths must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Direction weights: finite, in `[0, 1]`, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::ShapeMismatch("empty weight vector".into()));
        }
        let sum: f64 = w.iter().sum();
        if w.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::ShapeMismatch(format!("weights must lie in [0,1] and sum to 1 (sum = {sum})")));
        }
        Ok(Self(w))
    }

    pub fn uniform(l: usize) -> Self {
        Self(vec![1.0 / l as f64; l])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Max-shifted softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Non-parametric weights `g(d_l) / sum_k g(d_k)`.
///
/// Returns the weights and a flag that is set when `identity`/`poly` see an
/// all-zero input and fall back to uniform weights.
pub fn nonparametric_weights(distances: &[f64], kind: EnergyKind) -> Result<(WeightVector, bool)> {
    if distances.is_empty() {
        return Err(Error::ShapeMismatch("no distances".into()));
    }
    if distances.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::InvalidConfig("distances must be finite and nonnegative".into()));
    }
    let l = distances.len();
    let raw: Vec<f64> = match kind {
        EnergyKind::Exp => return Ok((WeightVector(softmax(distances)), false)),
        EnergyKind::Identity => distances.to_vec(),
        EnergyKind::Poly => distances.iter().map(|d| d * d).collect(),
        other => return Err(Error::InvalidConfig(format!("'{}' is a parametric energy", other.name()))),
    };
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        Ok((WeightVector(raw.into_iter().map(|v| v / total).collect()), false))
    } else {
        Ok((WeightVector::uniform(l), true))
    }
}

/// One named parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub value: Matrix,
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Trainable parameters of a weighting network for a fixed `(L, n + m)` input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub version: u32,
    pub kind: EnergyKind,
    pub directions: usize,
    pub input_width: usize,
    pub tensors: Vec<Tensor>,
}

fn init_matrix(rows: usize, cols: usize, fan_in: usize, init: NetInit, stream: u64) -> Matrix {
    match init {
        NetInit::Zero => Matrix::zeros(rows, cols),
        NetInit::Uniform { seed } => {
            let mut rng = rng_from_seed(crate::rng::derive_seed(seed, stream));
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect())
        }
    }
}

impl NetworkParams {
    /// Fresh parameters for `directions` rows of `input_width` coordinates.
    pub fn init(spec: &EnergySpec, directions: usize, input_width: usize) -> Result<Self> {
        spec.validate()?;
        if directions == 0 || input_width == 0 {
            return Err(Error::ShapeMismatch("network input must be nonempty".into()));
        }
        let (l, w) = (directions, input_width);
        let t = |name: &str, rows, cols, fan_in, stream| Tensor { name: name.to_string(), value: init_matrix(rows, cols, fan_in, spec.init, stream) };
        let tensors = match spec.kind {
            EnergyKind::Linear => vec![t("w", w, 1, w, 0), t("b", 1, 1, w, 1)],
            EnergyKind::Nonlinear => {
                let h = spec.hidden;
                vec![t("w", w, 1, w, 0), t("b", 1, 1, w, 1), t("w1", 1, h, 1, 2), t("b1", 1, h, 1, 3), t("w2", h, 1, h, 4), t("b2", 1, 1, h, 5)]
            }
            EnergyKind::Attention => {
                let a = spec.attention_width;
                vec![t("wq", l, a, l, 0), t("bq", 1, a, l, 1), t("wk", l, a, l, 2), t("bk", 1, a, l, 3), t("wv", l, l, l, 4), t("bv", 1, l, l, 5)]
            }
            other => return Err(Error::InvalidConfig(format!("'{}' has no network", other.name()))),
        };
        Ok(Self { version: CHECKPOINT_VERSION, kind: spec.kind, directions, input_width, tensors })
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(|t| t.value.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.value.data.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, projections: &Matrix) -> Result<()> {
        if projections.rows != self.directions || projections.cols != self.input_width {
            return Err(Error::ShapeMismatch(format!(
                "network expects {}x{} input, got {}x{}",
                self.directions, self.input_width, projections.rows, projections.cols
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let net: NetworkParams = serde_json::from_str(s).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if net.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", net.version)));
        }
        for t in &net.tensors {
            if t.value.data.len() != t.value.rows * t.value.cols {
                return Err(Error::Checkpoint(format!("tensor '{}' payload does not match its shape", t.name)));
            }
        }
        if !net.is_finite() {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(net)
    }
}

/// Record the score graph; returns the parameter leaves and the `1 x L` scores.
fn build_scores(tape: &mut Tape, net: &NetworkParams, projections: &Matrix) -> (Vec<Var>, Var) {
    let params: Vec<Var> = net.tensors.iter().map(|t| tape.leaf(t.value.clone())).collect();
    let scores = match net.kind {
        EnergyKind::Linear | EnergyKind::Nonlinear => {
            let a = tape.leaf(projections.clone());
            let s = tape.matmul(a, params[0]);
            let mut s = tape.add_row_bias(s, params[1]);
            if net.kind == EnergyKind::Nonlinear {
                let h = tape.matmul(s, params[2]);
                let h = tape.add_row_bias(h, params[3]);
                let h = tape.sigmoid(h);
                let o = tape.matmul(h, params[4]);
                s = tape.add_row_bias(o, params[5]);
            }
            tape.transpose(s)
        }
        EnergyKind::Attention => {
            // samples attend over samples; each sample is described by its
            // coordinates across all L directions
            let at = tape.leaf(projections.transpose());
            let width = net.tensors[0].value.cols as f64;
            let q = tape.matmul(at, params[0]);
            let q = tape.add_row_bias(q, params[1]);
            let k = tape.matmul(at, params[2]);
            let k = tape.add_row_bias(k, params[3]);
            let v = tape.matmul(at, params[4]);
            let v = tape.add_row_bias(v, params[5]);
            let s = tape.matmul_transb(q, k);
            let s = tape.scale(s, 1.0 / width.sqrt());
            let p = tape.softmax_rows(s);
            let o = tape.matmul(p, v);
            tape.mean_rows(o)
        }
        _ => unreachable!("non-parametric kinds have no network"),
    };
    (params, scores)
}

/// Per-direction scores `h_psi` for an `L x (n + m)` coordinate matrix.
pub fn network_forward(net: &NetworkParams, projections: &Matrix) -> Result<Vec<f64>> {
    net.check_input(projections)?;
    let mut tape = Tape::new();
    let (_, scores) = build_scores(&mut tape, net, projections);
    let out = tape.value(scores).data.clone();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss(0));
    }
    Ok(out)
}

/// Softmax of the network scores.
pub fn parametric_weights(net: &NetworkParams, projections: &Matrix) -> Result<WeightVector> {
    Ok(WeightVector(softmax(&network_forward(net, projections)?)))
}

/// Loss `sum_l softmax(h)_l * W_l` and its gradient for every tensor.
fn loss_and_grad(net: &NetworkParams, projections: &Matrix, distances: &[f64]) -> (f64, Vec<Matrix>) {
    let mut tape = Tape::new();
    let (params, scores) = build_scores(&mut tape, net, projections);
    let w = tape.softmax_rows(scores);
    let d = tape.leaf(Matrix::row_vector(distances.to_vec()));
    let weighted = tape.mul(w, d);
    let loss = tape.sum(weighted);
    let grads = tape.backward(loss);
    let value = tape.value(loss).data[0];
    (value, params.iter().map(|p| grads_at(&grads, *p)).collect())
}

fn grads_at(grads: &[Matrix], v: Var) -> Matrix {
    grads[v.index()].clone()
}

fn loss_only(net: &NetworkParams, projections: &Matrix, distances: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let (_, scores) = build_scores(&mut tape, net, projections);
    let w = softmax(&tape.value(scores).data);
    w.iter().zip(distances).map(|(a, b)| a * b).sum()
}

/// A trained network together with its per-epoch loss trace.
#[derive(Debug, Clone)]
pub struct Training {
    pub net: NetworkParams,
    /// Loss evaluated before each update.
    pub losses: Vec<f64>,
}

/// Full-batch gradient descent (ascent if `maximize`) on
/// `sum_l softmax(h_psi)_l * W_l` for `epochs` steps.
pub fn train_network(net: &NetworkParams, projections: &Matrix, distances: &[f64], epochs: usize, learning_rate: f64, maximize: bool) -> Result<Training> {
    net.check_input(projections)?;
    if distances.len() != net.directions {
        return Err(Error::ShapeMismatch(format!("{} distances for {} directions", distances.len(), net.directions)));
    }
    let mut net = net.clone();
    let mut losses = Vec::with_capacity(epochs);
    let sign = if maximize { 1.0 } else { -1.0 };
    for epoch in 0..epochs {
        let (loss, grads) = loss_and_grad(&net, projections, distances);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(epoch));
        }
        losses.push(loss);
        for (t, g) in net.tensors.iter_mut().zip(&grads) {
            t.value.data.iter_mut().zip(&g.data).for_each(|(p, d)| *p += sign * learning_rate * d);
        }
        if !net.is_finite() {
            return Err(Error::NonFiniteLoss(epoch));
        }
    }
    Ok(Training { net, losses })
}

/// Largest relative disagreement between reverse-mode gradients and central
/// finite differences (step `1e-5`) over every parameter.
pub fn grad_check(net: &NetworkParams, projections: &Matrix, distances: &[f64]) -> Result<f64> {
    net.check_input(projections)?;
    if distances.len() != net.directions {
        return Err(Error::ShapeMismatch(format!("{} distances for {} directions", distances.len(), net.directions)));
    }
    let (_, grads) = loss_and_grad(net, projections, distances);
    let h = 1e-5;
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (ti, g) in grads.iter().enumerate() {
        for k in 0..g.data.len() {
            let orig = probe.tensors[ti].value.data[k];
            probe.tensors[ti].value.data[k] = orig + h;
            let up = loss_only(&probe, projections, distances);
            probe.tensors[ti].value.data[k] = orig - h;
            let down = loss_only(&probe, projections, distances);
            probe.tensors[ti].value.data[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = g.data[k];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
