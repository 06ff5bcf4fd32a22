//! Reverse-mode gradients of the log-likelihood, derived by hand.
//!
//! For a residual layer `h(m) = h(m-1) - softplus(θ h(m-1))` the Jacobian is
//! `I - diag(σ(z)) θ` with `z = θ h(m-1)`, so the adjoint update is
//! `a(m-1) = a(m) - θᵀ (σ(z) ⊙ a(m))`. The identity term carries `a(m)`
//! past every layer unchanged, which is what keeps the beta gradient alive
//! in deep stacks. The MLP layer `h(m) = σ(W h(m-1))` has no such term:
//! `a(m-1) = Wᵀ (σ'(z) ⊙ a(m))`.

use nalgebra::DMatrix;

use crate::data::{Dataset, DesignIndex, ModelKind, Parameters};
use crate::error::{Error, Result};
use crate::model::{mat_t_vec, MlpParams, Tape};
use crate::par;

/// Gradient with the same layout as [`Parameters`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub d_beta: Vec<f64>,
    pub d_thetas: Vec<DMatrix<f64>>,
}

impl Gradient {
    pub fn zeros_like(params: &Parameters) -> Self {
        Self {
            d_beta: vec![0.0; params.beta.len()],
            d_thetas: params
                .thetas
                .iter()
                .map(|t| DMatrix::zeros(t.nrows(), t.ncols()))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradient) {
        for (a, b) in self.d_beta.iter_mut().zip(&other.d_beta) {
            *a += b;
        }
        for (a, b) in self.d_thetas.iter_mut().zip(&other.d_thetas) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.d_beta {
            *a *= s;
        }
        for t in &mut self.d_thetas {
            *t *= s;
        }
    }

    /// Flattened in the same order as [`Parameters::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.d_beta.clone();
        for t in &self.d_thetas {
            out.extend(t.iter());
        }
        out
    }

    pub fn beta_norm(&self) -> f64 {
        self.d_beta.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Propagates an adjoint on the output utilities back to `V`.
///
/// `adjoint` enters as `∂L/∂h(M)` and leaves as `∂L/∂V`. When `acc` is
/// given, layer gradients are accumulated into it.
pub(crate) fn backprop_layers(
    tape: &Tape,
    layers: &[DMatrix<f64>],
    kind: ModelKind,
    adjoint: &mut [f64],
    mut acc: Option<&mut [DMatrix<f64>]>,
) -> Result<()> {
    let j = tape.j;
    let mut s = vec![0.0; j];
    let mut back = vec![0.0; j];
    for m in (1..=layers.len()).rev() {
        let theta = &layers[m - 1];
        let act = tape.act(m);
        let z = tape.z(m);
        let prev = tape.h(m - 1);
        match kind {
            ModelKind::Mlp(_) => {
                for r in 0..j {
                    s[r] = adjoint[r] * act[r] * (1.0 - act[r]);
                }
            }
            _ => {
                for r in 0..j {
                    // σ(z) = exp(z - softplus(z)); act holds softplus(z)
                    s[r] = adjoint[r] * (z[r] - act[r]).exp();
                }
            }
        }
        if let Some(acc) = acc.as_deref_mut() {
            let sign = if matches!(kind, ModelKind::Mlp(_)) { 1.0 } else { -1.0 };
            let d = acc[m - 1].as_mut_slice();
            for (c, &pc) in prev.iter().enumerate() {
                for r in 0..j {
                    d[c * j + r] += sign * s[r] * pc;
                }
            }
        }
        mat_t_vec(theta, &s, &mut back);
        match kind {
            ModelKind::Mlp(_) => adjoint.copy_from_slice(&back),
            _ => {
                for r in 0..j {
                    adjoint[r] -= back[r];
                }
            }
        }
        if adjoint.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "gradient",
                layer: Some(m),
            });
        }
    }
    Ok(())
}

/// Adds `∂V/∂β`-weighted adjoint into `d_beta`.
pub(crate) fn accumulate_beta(adjoint_v: &[f64], x: &[f64], design: &DesignIndex, d_beta: &mut [f64]) {
    let per = design.n_alts() - 1;
    let ref_alt = design.reference_alt();
    let alt = |rank: usize| if rank < ref_alt { rank } else { rank + 1 };
    let mut offset = 0;
    if design.include_asc() {
        for rank in 0..per {
            d_beta[rank] += adjoint_v[alt(rank)];
        }
        offset = per;
    }
    for (v, &col) in design.columns().iter().enumerate() {
        let xv = x[col];
        for rank in 0..per {
            d_beta[offset + v * per + rank] += adjoint_v[alt(rank)] * xv;
        }
    }
}

/// One observation: forward, then reverse. Returns `ln P(chosen)`.
#[allow(clippy::too_many_arguments)]
fn observation_gradient(
    tape: &mut Tape,
    adjoint: &mut [f64],
    params: &Parameters,
    x: &[f64],
    chosen: usize,
    design: &DesignIndex,
    kind: ModelKind,
    grad: &mut Gradient,
) -> Result<f64> {
    tape.run(params, x, design, kind)?;
    for (a, lp) in adjoint.iter_mut().zip(&tape.log_probs) {
        *a = -lp.exp();
    }
    adjoint[chosen] += 1.0;
    backprop_layers(tape, &params.thetas, kind, adjoint, Some(&mut grad.d_thetas))?;
    accumulate_beta(adjoint, x, design, &mut grad.d_beta);
    Ok(tape.log_probs[chosen])
}

/// Log-likelihood of `batch` and its exact gradient.
///
/// The result is a sum over observations, not a mean.
pub fn grad_loglik(
    params: &Parameters,
    batch: &Dataset,
    design: &DesignIndex,
    kind: ModelKind,
) -> Result<(f64, Gradient)> {
    if batch.n_obs() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    params.validate(design, kind)?;
    let parts = par::map_chunks(batch.n_obs(), |range| {
        let mut tape = Tape::new(design.n_alts(), kind.depth());
        let mut adjoint = vec![0.0; design.n_alts()];
        let mut grad = Gradient::zeros_like(params);
        let mut ll = 0.0;
        for n in range {
            ll += observation_gradient(
                &mut tape,
                &mut adjoint,
                params,
                batch.row(n),
                batch.choice(n),
                design,
                kind,
                &mut grad,
            )?;
        }
        Ok((ll, grad))
    })?;
    let mut ll = 0.0;
    let mut grad = Gradient::zeros_like(params);
    for (l, g) in parts {
        ll += l;
        grad.add_assign(&g);
    }
    Ok((ll, grad))
}

/// Gradient for a subset of rows of `data`, without copying them.
pub(crate) fn grad_loglik_rows(
    params: &Parameters,
    data: &Dataset,
    rows: &[usize],
    design: &DesignIndex,
    kind: ModelKind,
    tape: &mut Tape,
    grad: &mut Gradient,
) -> Result<f64> {
    let mut adjoint = vec![0.0; design.n_alts()];
    let mut ll = 0.0;
    for &n in rows {
        ll += observation_gradient(
            tape,
            &mut adjoint,
            params,
            data.row(n),
            data.choice(n),
            design,
            kind,
            grad,
        )?;
    }
    Ok(ll)
}

/// Per-observation beta scores `∂ ln P(i_n)/∂β`, one row per observation.
pub fn beta_scores(
    params: &Parameters,
    data: &Dataset,
    design: &DesignIndex,
    kind: ModelKind,
) -> Result<Vec<Vec<f64>>> {
    params.validate(design, kind)?;
    let parts = par::map_chunks(data.n_obs(), |range| {
        let mut tape = Tape::new(design.n_alts(), kind.depth());
        let mut adjoint = vec![0.0; design.n_alts()];
        range
            .map(|n| {
                tape.run(params, data.row(n), design, kind)?;
                for (a, lp) in adjoint.iter_mut().zip(&tape.log_probs) {
                    *a = -lp.exp();
                }
                adjoint[data.choice(n)] += 1.0;
                backprop_layers(&tape, &params.thetas, kind, &mut adjoint, None)?;
                let mut score = vec![0.0; params.beta.len()];
                accumulate_beta(&adjoint, data.row(n), design, &mut score);
                Ok(score)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(parts.concat())
}

/// Chain-rule gradient of the MLP baseline.
pub fn mlp_grad(
    params: &MlpParams,
    beta: &[f64],
    batch: &Dataset,
    design: &DesignIndex,
) -> Result<(f64, Gradient)> {
    let full = Parameters {
        beta: beta.to_vec(),
        thetas: params.weights.clone(),
    };
    grad_loglik(&full, batch, design, ModelKind::Mlp(params.weights.len()))
}

/// Central finite-difference gradient of the log-likelihood.
///
/// Uses the fourth-order stencil
/// `(-f(+2h) + 8f(+h) - 8f(-h) + f(-2h)) / 12h` on every coordinate and
/// differences observation by observation before summing, so cancellation
/// happens at the scale of one observation's log-probability.
pub fn finite_diff_grad(
    params: &Parameters,
    batch: &Dataset,
    design: &DesignIndex,
    kind: ModelKind,
    step: f64,
) -> Result<Gradient> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {step}")));
    }
    params.validate(design, kind)?;
    let base = params.to_flat();
    let mut work = params.clone();
    let mut eval = |flat: &[f64]| -> Result<Vec<f64>> {
        work.set_flat(flat);
        crate::model::per_observation_loglik(&work, batch, design, kind)
    };
    let mut out = Vec::with_capacity(base.len());
    let mut x = base.clone();
    for i in 0..base.len() {
        let mut at = |offset: f64| {
            x[i] = base[i] + offset;
            let r = eval(&x);
            x[i] = base[i];
            r
        };
        let p2 = at(2.0 * step)?;
        let p1 = at(step)?;
        let m1 = at(-step)?;
        let m2 = at(-2.0 * step)?;
        let d: f64 = (0..p1.len())
            .map(|n| (8.0 * (p1[n] - m1[n]) - (p2[n] - m2[n])) / (12.0 * step))
            .sum();
        out.push(d);
    }
    let mut grad = Gradient::zeros_like(params);
    let (b, mut rest) = out.split_at(params.beta.len());
    grad.d_beta.copy_from_slice(b);
    for t in &mut grad.d_thetas {
        let (head, tail) = rest.split_at(t.len());
        t.as_mut_slice().copy_from_slice(head);
        rest = tail;
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_design, UtilitySpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_case(
        rng: &mut ChaCha8Rng,
        n: usize,
        j: usize,
        k: usize,
        kind: ModelKind,
    ) -> (Parameters, Dataset, DesignIndex) {
        let names: Vec<String> = (0..k).map(|i| format!("x{i}")).collect();
        let attrs = (0..n * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let choices = (0..n).map(|_| rng.random_range(0..j)).collect();
        let alts = (0..j).map(|i| format!("a{i}")).collect();
        let data = Dataset::new(names.clone(), attrs, choices, alts).unwrap();
        let design = build_design(&data, &UtilitySpec::new(names, 0, true)).unwrap();
        let beta = (0..design.beta_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let thetas = (0..kind.depth())
            .map(|_| DMatrix::from_fn(j, j, |_, _| rng.random_range(-1.0..1.0)))
            .collect();
        (Parameters::new(beta, thetas).unwrap(), data, design)
    }

    fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| {
                if y.abs() < 1e-8 {
                    (x - y).abs() / 1e-8 * 1e-6
                } else {
                    (x - y).abs() / x.abs().max(y.abs())
                }
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn mnl_gradient_is_the_closed_form_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (p, data, design) = random_case(&mut rng, 40, 3, 2, ModelKind::Mnl);
        let (_, g) = grad_loglik(&p, &data, &design, ModelKind::Mnl).unwrap();
        // Σ_n (1{j = i_n} - P_nj) z_nj with z the design entry of each coefficient
        let mut expected = vec![0.0; design.beta_len()];
        for n in 0..data.n_obs() {
            let v = crate::model::linear_utility(&p, data.row(n), &design).unwrap();
            let probs = crate::math::softmax(&v);
            for (b, e) in expected.iter_mut().enumerate() {
                let (slot, alt) = design.pair(b).unwrap();
                let z = match slot {
                    crate::data::Slot::Asc => 1.0,
                    crate::data::Slot::Variable(v) => data.row(n)[design.columns()[v]],
                };
                let y = if data.choice(n) == alt { 1.0 } else { 0.0 };
                *e += (y - probs[alt]) * z;
            }
        }
        for (a, b) in g.d_beta.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn reslogit_gradient_matches_fd_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let kind = ModelKind::ResLogit(3);
        let (p, data, design) = random_case(&mut rng, 32, 4, 3, kind);
        let (_, g) = grad_loglik(&p, &data, &design, kind).unwrap();
        let fd = finite_diff_grad(&p, &data, &design, kind, 1e-3).unwrap();
        let err = max_rel_err(&g.to_flat(), &fd.to_flat());
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn zero_theta_layer_gradient_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let kind = ModelKind::ResLogit(2);
        let (mut p, data, design) = random_case(&mut rng, 20, 3, 2, kind);
        for t in &mut p.thetas {
            t.fill(0.0);
        }
        let (_, g) = grad_loglik(&p, &data, &design, kind).unwrap();
        let fd = finite_diff_grad(&p, &data, &design, kind, 1e-5).unwrap();
        let err = max_rel_err(&g.to_flat(), &fd.to_flat());
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn mlp_gradient_matches_fd_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let kind = ModelKind::Mlp(3);
        let (p, data, design) = random_case(&mut rng, 24, 3, 2, kind);
        let mlp = MlpParams {
            weights: p.thetas.clone(),
        };
        let (_, g) = mlp_grad(&mlp, &p.beta, &data, &design).unwrap();
        let fd = finite_diff_grad(&p, &data, &design, kind, 1e-3).unwrap();
        let err = max_rel_err(&g.to_flat(), &fd.to_flat());
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn mlp_depth_zero_is_mnl_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (p, data, design) = random_case(&mut rng, 30, 4, 2, ModelKind::Mnl);
        let (_, mnl) = grad_loglik(&p, &data, &design, ModelKind::Mnl).unwrap();
        let (_, mlp) = mlp_grad(&MlpParams { weights: vec![] }, &p.beta, &data, &design).unwrap();
        assert_eq!(mnl.d_beta, mlp.d_beta);
    }

    #[test]
    fn saturated_mlp_starves_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (p, data, design) = random_case(&mut rng, 32, 3, 2, ModelKind::Mnl);
        let (_, base) = grad_loglik(&p, &data, &design, ModelKind::Mnl).unwrap();
        // large weights with a shared positive bias push every unit to saturation
        let w = DMatrix::from_fn(3, 3, |r, c| if r == c { 60.0 } else { 20.0 });
        let deep = MlpParams {
            weights: vec![w; 4],
        };
        let (_, g) = mlp_grad(&deep, &p.beta, &data, &design).unwrap();
        assert!(g.beta_norm() < 1e-6 * base.beta_norm(), "{} vs {}", g.beta_norm(), base.beta_norm());
    }

    #[test]
    fn skip_connections_keep_beta_gradient_alive_at_depth() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let (p, data, design) = random_case(&mut rng, 32, 4, 3, ModelKind::Mnl);
            let (_, base) = grad_loglik(&p, &data, &design, ModelKind::Mnl).unwrap();
            let deep = Parameters::new(p.beta.clone(), vec![DMatrix::identity(4, 4); 16]).unwrap();
            let (_, rl) = grad_loglik(&deep, &data, &design, ModelKind::ResLogit(16)).unwrap();
            assert!(rl.beta_norm() > 1e-3 * base.beta_norm());
            // positive weights keep every pre-activation past the first layer far from zero
            let weights = (0..16)
                .map(|_| DMatrix::from_fn(4, 4, |_, _| rng.random_range(5.0..10.0)))
                .collect();
            let mlp = MlpParams { weights };
            let (_, g) = mlp_grad(&mlp, &p.beta, &data, &design).unwrap();
            assert!(g.beta_norm() < 1e-3 * base.beta_norm(), "{} vs {}", g.beta_norm(), base.beta_norm());
        }
    }

    #[test]
    fn zero_score_when_shares_match_probabilities() {
        // one observation per alternative, all utilities equal: empirical shares = P = 1/3
        let data = Dataset::new(
            vec![],
            vec![],
            vec![0, 1, 2],
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let design = build_design(&data, &UtilitySpec::new(vec![], 0, true)).unwrap();
        let p = Parameters::zeros(2, 0, 3);
        let (_, g) = grad_loglik(&p, &data, &design, ModelKind::Mnl).unwrap();
        assert!(g.d_beta.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn batch_gradient_is_sum_of_observation_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let kind = ModelKind::ResLogit(2);
        let (p, data, design) = random_case(&mut rng, 10, 3, 2, kind);
        let (ll, g) = grad_loglik(&p, &data, &design, kind).unwrap();
        let mut sum = Gradient::zeros_like(&p);
        let mut ll_sum = 0.0;
        for n in 0..data.n_obs() {
            let (l, gn) = grad_loglik(&p, &data.subset(&[n]), &design, kind).unwrap();
            ll_sum += l;
            sum.add_assign(&gn);
        }
        assert!((ll - ll_sum).abs() < 1e-12);
        for (a, b) in g.to_flat().iter().zip(sum.to_flat()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn central_difference_is_antisymmetric_for_linear_coordinate() {
        let data = Dataset::new(vec![], vec![], vec![1], vec!["a".into(), "b".into()]).unwrap();
        let design = build_design(&data, &UtilitySpec::new(vec![], 0, true)).unwrap();
        let ll = |b: f64| {
            let p = Parameters::new(vec![b], vec![]).unwrap();
            crate::model::log_likelihood(&p, &data, &design, ModelKind::Mnl).unwrap()
        };
        let slope = 1.0 - crate::math::sigmoid(0.3);
        let f0 = ll(0.3);
        for delta in [1e-1, 1e-2, 1e-3] {
            let up = ll(0.3 + delta) - f0;
            let down = ll(0.3 - delta) - f0;
            // odd part is slope·δ up to O(δ³)
            let odd = 0.5 * (up - down);
            assert!((odd - slope * delta).abs() < delta.powi(3), "δ={delta}");
        }
    }

    #[test]
    fn step_sweep_plateau() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let kind = ModelKind::ResLogit(2);
        let (p, data, design) = random_case(&mut rng, 16, 3, 2, kind);
        let (_, g) = grad_loglik(&p, &data, &design, kind).unwrap();
        for step in [1e-4, 1e-5, 1e-6] {
            let fd = finite_diff_grad(&p, &data, &design, kind, step).unwrap();
            let err = max_rel_err(&g.to_flat(), &fd.to_flat());
            assert!(err < 1e-6, "step {step}: {err}");
        }
        assert!(finite_diff_grad(&p, &data, &design, kind, 0.0).is_err());
    }
}
