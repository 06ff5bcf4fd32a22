//! Synthetic choice data drawn from a known model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{build_design, Dataset, ModelKind, Parameters, UtilitySpec};
use crate::error::Result;
use crate::model;

/// Shape of a synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_obs: usize,
    pub n_alts: usize,
    pub n_vars: usize,
    pub include_asc: bool,
    pub reference_alt: usize,
}

impl SynthSpec {
    pub fn variable_names(&self) -> Vec<String> {
        (0..self.n_vars).map(|k| format!("x{k}")).collect()
    }

    pub fn alt_names(&self) -> Vec<String> {
        (0..self.n_alts).map(|j| format!("alt{j}")).collect()
    }

    pub fn utility_spec(&self) -> UtilitySpec {
        UtilitySpec::new(self.variable_names(), self.reference_alt, self.include_asc)
    }
}

/// Draws standard-normal attributes `x0, x1, …` and samples each choice
/// from the probabilities of `params` under `kind`.
pub fn generate(spec: &SynthSpec, params: &Parameters, kind: ModelKind, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let attrs: Vec<f64> = (0..spec.n_obs * spec.n_vars)
        .map(|_| rng.sample(StandardNormal))
        .collect();
    let placeholder = Dataset::new(
        spec.variable_names(),
        attrs.clone(),
        vec![0; spec.n_obs],
        spec.alt_names(),
    )?;
    let design = build_design(&placeholder, &spec.utility_spec())?;
    let probs = model::predict(params, &placeholder, &design, kind)?;
    let choices = probs
        .iter()
        .map(|p| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (j, &pj) in p.iter().enumerate() {
                acc += pj;
                if u < acc {
                    return j;
                }
            }
            p.len() - 1
        })
        .collect();
    Dataset::new(spec.variable_names(), attrs, choices, spec.alt_names())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize) -> SynthSpec {
        SynthSpec {
            n_obs: n,
            n_alts: 3,
            n_vars: 2,
            include_asc: true,
            reference_alt: 0,
        }
    }

    #[test]
    fn deterministic_and_shaped() {
        let p = Parameters::new(vec![0.2, -0.1, 1.0, -1.0, 0.5, 0.3], vec![]).unwrap();
        let a = generate(&spec(50), &p, ModelKind::Mnl, 4).unwrap();
        let b = generate(&spec(50), &p, ModelKind::Mnl, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.n_obs(), a.n_vars(), a.n_alts()), (50, 2, 3));
        assert_ne!(a, generate(&spec(50), &p, ModelKind::Mnl, 5).unwrap());
    }

    #[test]
    fn shares_follow_probabilities() {
        // ASC-only: P = softmax(0, 1, -1)
        let s = SynthSpec {
            n_vars: 0,
            ..spec(20_000)
        };
        let p = Parameters::new(vec![1.0, -1.0], vec![]).unwrap();
        let d = generate(&s, &p, ModelKind::Mnl, 1).unwrap();
        let expected = crate::math::softmax(&[0.0, 1.0, -1.0]);
        for (j, e) in expected.iter().enumerate() {
            let share = d.choices().iter().filter(|&&c| c == j).count() as f64 / 20_000.0;
            // four binomial standard deviations
            assert!((share - e).abs() < 4.0 * (e * (1.0 - e) / 20_000.0).sqrt());
        }
    }
}
