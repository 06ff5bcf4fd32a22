//! Forward computation for MNL, ResLogit and MLP choice models.
//!
//! All three families share the linear utility `V = ASC + Σ β x`. MNL feeds
//! `V` straight into a softmax. ResLogit corrects it through `M` residual
//! layers
//!
//! ```text
//! h(0) = V
//! h(m) = h(m-1) - softplus(θ(m) h(m-1))
//! ```
//!
//! so that the final utility is `V + g` with `g = h(M) - V ≤ 0`. The MLP
//! baseline replaces the skip path by `h(m) = sigmoid(W(m) h(m-1))`.

use nalgebra::DMatrix;

use crate::data::{Dataset, DesignIndex, ModelKind, Parameters, Slot};
use crate::error::{Error, Result};
use crate::math::{self, sigmoid, softplus};
use crate::par;

/// Everything computed on the way from `V` to the choice probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    /// Linear utilities.
    pub v: Vec<f64>,
    /// Hidden states `h(0..=M)`; `h[0] == v`.
    pub h: Vec<Vec<f64>>,
    /// Residual correction `h(M) - V`. Empty for the MLP.
    pub g: Vec<f64>,
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
}

/// Hidden weights of the MLP baseline, each `J×J`, sigmoid activations.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub weights: Vec<DMatrix<f64>>,
}

/// Reusable buffers for one observation's forward pass.
///
/// `z` holds the layer pre-activations and `act` their activation: the
/// softplus for ResLogit, the sigmoid for the MLP.
#[derive(Clone, Debug)]
pub(crate) struct Tape {
    pub j: usize,
    pub m: usize,
    pub h: Vec<f64>,
    pub z: Vec<f64>,
    pub act: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl Tape {
    pub fn new(j: usize, m: usize) -> Self {
        Self {
            j,
            m,
            h: vec![0.0; (m + 1) * j],
            z: vec![0.0; m * j],
            act: vec![0.0; m * j],
            log_probs: vec![0.0; j],
        }
    }

    pub fn h(&self, m: usize) -> &[f64] {
        &self.h[m * self.j..(m + 1) * self.j]
    }

    pub fn z(&self, m: usize) -> &[f64] {
        &self.z[(m - 1) * self.j..m * self.j]
    }

    pub fn act(&self, m: usize) -> &[f64] {
        &self.act[(m - 1) * self.j..m * self.j]
    }

    /// Runs the layers on `h(0)`, which the caller has already filled.
    pub fn run_layers(&mut self, layers: &[DMatrix<f64>], kind: ModelKind) -> Result<()> {
        let j = self.j;
        for (idx, theta) in layers.iter().enumerate() {
            let m = idx + 1;
            let (prev, next) = self.h.split_at_mut(m * j);
            let prev = &prev[(m - 1) * j..];
            let next = &mut next[..j];
            let z = &mut self.z[idx * j..m * j];
            let act = &mut self.act[idx * j..m * j];
            mat_vec(theta, prev, z);
            match kind {
                ModelKind::Mlp(_) => {
                    for r in 0..j {
                        act[r] = sigmoid(z[r]);
                        next[r] = act[r];
                    }
                }
                _ => {
                    for r in 0..j {
                        act[r] = softplus(z[r]);
                        next[r] = prev[r] - act[r];
                    }
                }
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: "hidden state",
                    layer: Some(m),
                });
            }
        }
        math::log_softmax_into(&self.h[self.m * j..], &mut self.log_probs);
        Ok(())
    }

    /// Full forward pass for one attribute row.
    pub fn run(
        &mut self,
        params: &Parameters,
        x: &[f64],
        design: &DesignIndex,
        kind: ModelKind,
    ) -> Result<()> {
        linear_utility_into(&params.beta, x, design, &mut self.h[..self.j]);
        if self.h[..self.j].iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "linear utility",
                layer: None,
            });
        }
        self.run_layers(&params.thetas, kind)
    }

    fn into_trace(self, kind: ModelKind) -> ForwardTrace {
        let h: Vec<Vec<f64>> = self.h.chunks(self.j).map(|c| c.to_vec()).collect();
        let v = h[0].clone();
        let g = match kind {
            ModelKind::Mlp(_) => Vec::new(),
            _ => h[self.m].iter().zip(&v).map(|(a, b)| a - b).collect(),
        };
        let probs = self.log_probs.iter().map(|l| l.exp()).collect();
        ForwardTrace {
            v,
            h,
            g,
            probs,
            log_probs: self.log_probs,
        }
    }
}

/// `out = a · x` for a square column-major matrix.
#[inline]
pub(crate) fn mat_vec(a: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let n = x.len();
    let s = a.as_slice();
    out.fill(0.0);
    for (c, &xc) in x.iter().enumerate() {
        let col = &s[c * n..(c + 1) * n];
        for (o, &a_rc) in out.iter_mut().zip(col) {
            *o += a_rc * xc;
        }
    }
}

/// `out = aᵀ · x` for a square column-major matrix.
#[inline]
pub(crate) fn mat_t_vec(a: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let n = x.len();
    let s = a.as_slice();
    for (c, o) in out.iter_mut().enumerate() {
        let col = &s[c * n..(c + 1) * n];
        *o = col.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

pub(crate) fn linear_utility_into(beta: &[f64], x: &[f64], design: &DesignIndex, out: &mut [f64]) {
    out.fill(0.0);
    let per = design.n_alts() - 1;
    let ref_alt = design.reference_alt();
    let mut offset = 0;
    if design.include_asc() {
        for (rank, &b) in beta[..per].iter().enumerate() {
            out[if rank < ref_alt { rank } else { rank + 1 }] += b;
        }
        offset = per;
    }
    for (v, &col) in design.columns().iter().enumerate() {
        let xv = x[col];
        let block = &beta[offset + v * per..offset + (v + 1) * per];
        for (rank, &b) in block.iter().enumerate() {
            out[if rank < ref_alt { rank } else { rank + 1 }] += b * xv;
        }
    }
}

/// Linear utilities `V_j = ASC_j + Σ_k β_kj x_k` for one attribute row.
pub fn linear_utility(params: &Parameters, x: &[f64], design: &DesignIndex) -> Result<Vec<f64>> {
    if params.beta.len() != design.beta_len() {
        return Err(Error::DimensionMismatch {
            what: "beta",
            expected: design.beta_len(),
            found: params.beta.len(),
        });
    }
    if let Some(&max_col) = design.columns().iter().max() {
        if max_col >= x.len() {
            return Err(Error::DimensionMismatch {
                what: "attribute row",
                expected: max_col + 1,
                found: x.len(),
            });
        }
    }
    let mut out = vec![0.0; design.n_alts()];
    linear_utility_into(&params.beta, x, design, &mut out);
    Ok(out)
}

fn check_square(layers: &[DMatrix<f64>], j: usize) -> Result<()> {
    for t in layers {
        if t.nrows() != j || t.ncols() != j {
            return Err(Error::DimensionMismatch {
                what: "layer matrix",
                expected: j,
                found: if t.nrows() != j { t.nrows() } else { t.ncols() },
            });
        }
    }
    Ok(())
}

/// Runs the residual layers on `v`.
pub fn residual_forward(thetas: &[DMatrix<f64>], v: &[f64]) -> Result<ForwardTrace> {
    check_square(thetas, v.len())?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "linear utility",
            layer: None,
        });
    }
    let kind = ModelKind::ResLogit(thetas.len());
    let mut tape = Tape::new(v.len(), thetas.len());
    tape.h[..v.len()].copy_from_slice(v);
    tape.run_layers(thetas, kind)?;
    Ok(tape.into_trace(kind))
}

/// `P_i = exp(V_i + g_i) / Σ_j exp(V_j + g_j)`.
pub fn choice_probabilities(v: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    if v.len() != g.len() {
        return Err(Error::DimensionMismatch {
            what: "residual vector",
            expected: v.len(),
            found: g.len(),
        });
    }
    let u: Vec<f64> = v.iter().zip(g).map(|(a, b)| a + b).collect();
    if u.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "utility",
            layer: None,
        });
    }
    Ok(math::softmax(&u))
}

/// Probabilities written as `∏_m Q_i(m) exp(V_i)` normalized, with
/// `Q(m) = 1 / (1 + exp(θ(m) h(m-1)))` taken from `trace`.
///
/// Algebraically identical to [`choice_probabilities`] on the same trace.
/// Each alternative's weight is kept as a mantissa in `[0.5, 1)` and a
/// separate binary exponent so deep stacks do not underflow.
pub fn q_form_probabilities(v: &[f64], thetas: &[DMatrix<f64>], trace: &ForwardTrace) -> Vec<f64> {
    let j = v.len();
    let mut mantissa = vec![1.0f64; j];
    let mut exponent = vec![0i64; j];
    let mut z = vec![0.0; j];
    for (m, theta) in thetas.iter().enumerate() {
        mat_vec(theta, &trace.h[m], &mut z);
        for i in 0..j {
            // 1/(1+e^z) = sigmoid(-z)
            let q = sigmoid(-z[i]);
            let (qm, qe) = if q > 0.0 {
                frexp(q)
            } else {
                // exp(-z) underflows; fall back to the exponent directly
                let log2q = -softplus(z[i]) / std::f64::consts::LN_2;
                let e = log2q.floor();
                (2f64.powf(log2q - e) * 0.5, e as i64 + 1)
            };
            let (nm, ne) = frexp(mantissa[i] * qm);
            mantissa[i] = nm;
            exponent[i] += qe + ne;
        }
    }
    // weight_i = mantissa_i · 2^exponent_i · exp(V_i)
    let log_w: Vec<f64> = (0..j)
        .map(|i| mantissa[i].ln() + exponent[i] as f64 * std::f64::consts::LN_2 + v[i])
        .collect();
    math::softmax(&log_w)
}

/// Splits a positive finite `x` into `(m, e)` with `x = m·2^e`, `m ∈ [0.5, 1)`.
fn frexp(x: f64) -> (f64, i64) {
    if x == 0.0 || !x.is_finite() {
        return (x, 0);
    }
    let bits = x.to_bits();
    let raw_exp = ((bits >> 52) & 0x7ff) as i64;
    if raw_exp == 0 {
        // subnormal
        let (m, e) = frexp(x * 2f64.powi(64));
        return (m, e - 64);
    }
    let e = raw_exp - 1022;
    let m = f64::from_bits((bits & !(0x7ff << 52)) | (1022 << 52));
    (m, e)
}

/// MLP baseline: `h(m) = sigmoid(W(m) h(m-1))`, then softmax of `h(M)`.
pub fn mlp_forward(params: &MlpParams, v: &[f64]) -> Result<Vec<f64>> {
    check_square(&params.weights, v.len())?;
    let kind = ModelKind::Mlp(params.weights.len());
    let mut tape = Tape::new(v.len(), params.weights.len());
    tape.h[..v.len()].copy_from_slice(v);
    tape.run_layers(&params.weights, kind)?;
    Ok(tape.log_probs.iter().map(|l| l.exp()).collect())
}

/// Forward pass of any model family for one attribute row.
pub fn forward(
    params: &Parameters,
    x: &[f64],
    design: &DesignIndex,
    kind: ModelKind,
) -> Result<ForwardTrace> {
    params.validate(design, kind)?;
    let mut tape = Tape::new(design.n_alts(), kind.depth());
    tape.run(params, x, design, kind)?;
    Ok(tape.into_trace(kind))
}

/// `Σ_n ln P(i_n | x_n)`, computed through log-softmax.
pub fn log_likelihood(
    params: &Parameters,
    data: &Dataset,
    design: &DesignIndex,
    kind: ModelKind,
) -> Result<f64> {
    Ok(per_observation_loglik(params, data, design, kind)?.iter().sum())
}

/// `ln P(i_n | x_n)` for every observation.
pub fn per_observation_loglik(
    params: &Parameters,
    data: &Dataset,
    design: &DesignIndex,
    kind: ModelKind,
) -> Result<Vec<f64>> {
    params.validate(design, kind)?;
    let chunks = par::map_chunks(data.n_obs(), |range| {
        let mut tape = Tape::new(design.n_alts(), kind.depth());
        range
            .map(|n| {
                tape.run(params, data.row(n), design, kind)?;
                let lp = tape.log_probs[data.choice(n)];
                if lp == f64::NEG_INFINITY {
                    return Err(Error::ProbabilityUnderflow {
                        observation: n,
                        alternative: data.choice(n),
                    });
                }
                Ok(lp)
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    Ok(chunks.concat())
}

/// Choice probabilities for every observation.
pub fn predict(
    params: &Parameters,
    data: &Dataset,
    design: &DesignIndex,
    kind: ModelKind,
) -> Result<Vec<Vec<f64>>> {
    params.validate(design, kind)?;
    let chunks = par::map_chunks(data.n_obs(), |range| {
        let mut tape = Tape::new(design.n_alts(), kind.depth());
        range
            .map(|n| {
                tape.run(params, data.row(n), design, kind)?;
                Ok(tape.log_probs.iter().map(|l| l.exp()).collect())
            })
            .collect::<Result<Vec<Vec<f64>>>>()
    })?;
    Ok(chunks.concat())
}

/// Beta coefficient of `(slot, alt)`; zero for the reference alternative.
pub fn coefficient(params: &Parameters, design: &DesignIndex, slot: Slot, alt: usize) -> f64 {
    design.index(slot, alt).map_or(0.0, |b| params.beta[b])
}
