//! Gated bimodal fusion of two equal-dimension embeddings.
//!
//! Both inputs pass through a tanh transform; a sigmoid gate over their
//! concatenation mixes the transformed vectors elementwise:
//!
//! ```text
//! first  = tanh(first_weight · e1 + first_bias)
//! second = tanh(second_weight · e2 + second_bias)
//! gate   = sigmoid(gate_weight · (e1 ‖ e2) + gate_bias)
//! fused  = gate ⊙ first + (1 − gate) ⊙ second
//! ```
//!
//! Each gate element is the probability that the fused element follows
//! modality one; the complement `1 − gate` measures modality two.

use rand::Rng;

use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, PartialEq)]
pub struct GbuParams {
    /// `[dim × 2·dim]`, applied to the concatenation of both inputs.
    pub gate_weight: Tensor,
    pub gate_bias: Tensor,
    /// `[dim × dim]` transform of modality one.
    pub first_weight: Tensor,
    pub first_bias: Tensor,
    /// `[dim × dim]` transform of modality two.
    pub second_weight: Tensor,
    pub second_bias: Tensor,
}

pub struct GbuVars {
    pub gate_weight: Var,
    pub gate_bias: Var,
    pub first_weight: Var,
    pub first_bias: Var,
    pub second_weight: Var,
    pub second_bias: Var,
}

/// On-tape result of one fusion: the fused vector plus everything a
/// contribution analysis needs.
pub struct GbuOutputVars {
    pub fused: Var,
    pub gate: Var,
    pub first: Var,
    pub second: Var,
}

/// Plain-value fusion result.
#[derive(Debug, Clone)]
pub struct GbuOutput {
    pub fused: Vec<f64>,
    pub gate: Vec<f64>,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl GbuParams {
    pub fn seeded<R: Rng>(dim: usize, rng: &mut R) -> Self {
        Self {
            gate_weight: Tensor::uniform_init(vec![dim, 2 * dim], 2 * dim, rng).trainable(),
            gate_bias: Tensor::zeros(vec![dim]).trainable(),
            first_weight: Tensor::uniform_init(vec![dim, dim], dim, rng).trainable(),
            first_bias: Tensor::zeros(vec![dim]).trainable(),
            second_weight: Tensor::uniform_init(vec![dim, dim], dim, rng).trainable(),
            second_bias: Tensor::zeros(vec![dim]).trainable(),
        }
    }

    pub fn dim(&self) -> usize {
        self.gate_weight.shape()[0]
    }

    pub fn on_tape(&self, tape: &Tape) -> GbuVars {
        GbuVars {
            gate_weight: tape.leaf(&self.gate_weight),
            gate_bias: tape.leaf(&self.gate_bias),
            first_weight: tape.leaf(&self.first_weight),
            first_bias: tape.leaf(&self.first_bias),
            second_weight: tape.leaf(&self.second_weight),
            second_bias: tape.leaf(&self.second_bias),
        }
    }
}

pub fn gbu_forward(
    tape: &Tape,
    p: &GbuVars,
    first_input: Var,
    second_input: Var,
) -> Result<GbuOutputVars, TensorError> {
    let (s1, s2) = (tape.shape(first_input), tape.shape(second_input));
    let dim = tape.shape(p.gate_bias)[0];
    if s1 != [dim] || s2 != [dim] {
        return Err(TensorError::ShapeMismatch {
            op: "gbu_forward",
            lhs: s1,
            rhs: s2,
        });
    }

    let transform = |w: Var, b: Var, x: Var| -> Result<Var, TensorError> {
        let wx = tape.matvec(w, x)?;
        Ok(tape.tanh(tape.add(wx, b)?))
    };
    let first = transform(p.first_weight, p.first_bias, first_input)?;
    let second = transform(p.second_weight, p.second_bias, second_input)?;

    let joined = tape.concat(first_input, second_input, 0)?;
    let gate_pre = tape.add(tape.matvec(p.gate_weight, joined)?, p.gate_bias)?;
    let gate = tape.sigmoid(gate_pre);

    let ones = tape.constant(vec![dim], vec![1.0; dim])?;
    let complement = tape.sub(ones, gate)?;
    let from_first = tape.hadamard(gate, first)?;
    let from_second = tape.hadamard(complement, second)?;
    let fused = tape.add(from_first, from_second)?;

    Ok(GbuOutputVars {
        fused,
        gate,
        first,
        second,
    })
}

/// Convenience wrapper: run one fusion on a private tape and return values.
pub fn gbu_eval(p: &GbuParams, e1: &[f64], e2: &[f64]) -> Result<GbuOutput, TensorError> {
    let tape = Tape::new();
    let vars = p.on_tape(&tape);
    let a = tape.constant(vec![e1.len()], e1.to_vec())?;
    let b = tape.constant(vec![e2.len()], e2.to_vec())?;
    let out = gbu_forward(&tape, &vars, a, b)?;
    Ok(GbuOutput {
        fused: tape.value(out.fused),
        gate: tape.value(out.gate),
        first: tape.value(out.first),
        second: tape.value(out.second),
    })
}

/// Exchange the modality roles: swaps the per-modality transforms, swaps the
/// two column blocks of the gate weight, and negates the whole gate so the
/// swapped unit computes the complementary mixture. Applying twice restores
/// the original parameters, and
/// `gbu(swap(p), e2, e1).fused == gbu(p, e1, e2).fused`.
pub fn swap_params(p: &GbuParams) -> GbuParams {
    let dim = p.dim();
    let w = p.gate_weight.data();
    let mut swapped = vec![0.0; w.len()];
    for r in 0..dim {
        for c in 0..dim {
            swapped[r * 2 * dim + c] = -w[r * 2 * dim + dim + c];
            swapped[r * 2 * dim + dim + c] = -w[r * 2 * dim + c];
        }
    }
    let mut gate_weight = Tensor::new(vec![dim, 2 * dim], swapped).expect("same shape");
    gate_weight.requires_grad = p.gate_weight.requires_grad;
    let mut gate_bias = Tensor::from_vec(p.gate_bias.data().iter().map(|b| -b).collect());
    gate_bias.requires_grad = p.gate_bias.requires_grad;
    GbuParams {
        gate_weight,
        gate_bias,
        first_weight: p.second_weight.clone(),
        first_bias: p.second_bias.clone(),
        second_weight: p.first_weight.clone(),
        second_bias: p.first_bias.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_difference_check, DEFAULT_STEP, DEFAULT_TOL};
    use crate::tape::sigmoid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn rand_vec(n: usize, rng: &mut ChaCha20Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()
    }

    fn random_params(dim: usize, rng: &mut ChaCha20Rng) -> GbuParams {
        let mut p = GbuParams::seeded(dim, rng);
        p.gate_bias = Tensor::from_vec(rand_vec(dim, rng)).trainable();
        p.first_bias = Tensor::from_vec(rand_vec(dim, rng)).trainable();
        p.second_bias = Tensor::from_vec(rand_vec(dim, rng)).trainable();
        p
    }

    #[test]
    fn zero_gate_parameters_average_the_transforms() {
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        let dim = 4;
        let mut p = random_params(dim, &mut rng);
        p.gate_weight = Tensor::zeros(vec![dim, 2 * dim]);
        p.gate_bias = Tensor::zeros(vec![dim]);
        let out = gbu_eval(&p, &rand_vec(dim, &mut rng), &rand_vec(dim, &mut rng)).unwrap();
        for i in 0..dim {
            assert_eq!(out.gate[i], 0.5);
            let mean = (out.first[i] + out.second[i]) / 2.0;
            assert!((out.fused[i] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_gate_selects_modality_one() {
        let mut rng = ChaCha20Rng::seed_from_u64(32);
        let dim = 4;
        let mut p = random_params(dim, &mut rng);
        p.gate_bias = Tensor::from_vec(vec![50.0; dim]);
        let out = gbu_eval(&p, &rand_vec(dim, &mut rng), &rand_vec(dim, &mut rng)).unwrap();
        for i in 0..dim {
            assert!(out.gate[i] > 1.0 - 1e-9);
            assert!((out.fused[i] - out.first[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_matches_step_by_step_equation_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(33);
        let dim = 4;
        let p = random_params(dim, &mut rng);
        let e1 = rand_vec(dim, &mut rng);
        let e2 = rand_vec(dim, &mut rng);
        let out = gbu_eval(&p, &e1, &e2).unwrap();

        // Oracle: evaluate the three equations with plain loops.
        for i in 0..dim {
            let mut h1 = p.first_bias.data()[i];
            let mut h2 = p.second_bias.data()[i];
            for j in 0..dim {
                h1 += p.first_weight.data()[i * dim + j] * e1[j];
                h2 += p.second_weight.data()[i * dim + j] * e2[j];
            }
            let h1 = h1.tanh();
            let h2 = h2.tanh();
            let mut pre = p.gate_bias.data()[i];
            for j in 0..dim {
                pre += p.gate_weight.data()[i * 2 * dim + j] * e1[j];
                pre += p.gate_weight.data()[i * 2 * dim + dim + j] * e2[j];
            }
            let g = sigmoid(pre);
            let z = g * h1 + (1.0 - g) * h2;
            assert!((out.fused[i] - z).abs() < 1e-12);
            assert!((out.gate[i] - g).abs() < 1e-12);
        }
    }

    #[test]
    fn fused_is_convex_combination_and_gate_strictly_inside_unit_interval() {
        let mut rng = ChaCha20Rng::seed_from_u64(34);
        for _ in 0..50 {
            let dim = rng.gen_range(1..6);
            let p = random_params(dim, &mut rng);
            let out = gbu_eval(&p, &rand_vec(dim, &mut rng), &rand_vec(dim, &mut rng)).unwrap();
            for i in 0..dim {
                assert!(out.gate[i] > 0.0 && out.gate[i] < 1.0);
                let lo = out.first[i].min(out.second[i]);
                let hi = out.first[i].max(out.second[i]);
                assert!(out.fused[i] >= lo - 1e-12 && out.fused[i] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn swap_params_is_an_involution() {
        let mut rng = ChaCha20Rng::seed_from_u64(35);
        let p = random_params(3, &mut rng);
        let twice = swap_params(&swap_params(&p));
        assert_eq!(p, twice);
    }

    #[test]
    fn modality_swap_preserves_fusion_and_complements_gate() {
        let mut rng = ChaCha20Rng::seed_from_u64(36);
        for _ in 0..20 {
            let dim = rng.gen_range(1..6);
            let p = random_params(dim, &mut rng);
            let e1 = rand_vec(dim, &mut rng);
            let e2 = rand_vec(dim, &mut rng);
            let original = gbu_eval(&p, &e1, &e2).unwrap();
            let swapped = gbu_eval(&swap_params(&p), &e2, &e1).unwrap();
            for i in 0..dim {
                assert!((original.fused[i] - swapped.fused[i]).abs() < 1e-12);
                assert!((swapped.gate[i] - (1.0 - original.gate[i])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(37);
        let p = random_params(3, &mut rng);
        let err = gbu_eval(&p, &[1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { .. }));
    }

    #[test]
    fn full_unit_passes_finite_difference_for_every_parameter_and_input() {
        let mut rng = ChaCha20Rng::seed_from_u64(38);
        let dim = 3;
        let p = random_params(dim, &mut rng);
        let e1 = rand_vec(dim, &mut rng);
        let e2 = rand_vec(dim, &mut rng);

        // Loss: sum of squares of the fused vector, checked against every
        // parameter tensor and both inputs in turn.
        let run = |which: usize| {
            let target = match which {
                0 => p.gate_weight.clone(),
                1 => p.gate_bias.clone(),
                2 => p.first_weight.clone(),
                3 => p.first_bias.clone(),
                4 => p.second_weight.clone(),
                5 => p.second_bias.clone(),
                6 => Tensor::from_vec(e1.clone()),
                _ => Tensor::from_vec(e2.clone()),
            };
            finite_difference_check(
                |t, v| {
                    let pick = |own: &Tensor, idx: usize| {
                        if idx == which {
                            v
                        } else {
                            t.leaf(own)
                        }
                    };
                    let vars = GbuVars {
                        gate_weight: pick(&p.gate_weight, 0),
                        gate_bias: pick(&p.gate_bias, 1),
                        first_weight: pick(&p.first_weight, 2),
                        first_bias: pick(&p.first_bias, 3),
                        second_weight: pick(&p.second_weight, 4),
                        second_bias: pick(&p.second_bias, 5),
                    };
                    let a = if which == 6 {
                        v
                    } else {
                        t.constant(vec![dim], e1.clone())?
                    };
                    let b = if which == 7 {
                        v
                    } else {
                        t.constant(vec![dim], e2.clone())?
                    };
                    let out = gbu_forward(t, &vars, a, b)?;
                    let sq = t.hadamard(out.fused, out.fused)?;
                    Ok(t.sum(sq))
                },
                &target,
                DEFAULT_STEP,
                DEFAULT_TOL,
            )
            .unwrap()
        };
        for which in 0..8 {
            let report = run(which);
            assert!(report.passed(), "target {which}: {report}");
        }
    }
}
