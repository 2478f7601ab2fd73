//! Parameterized layers: linear projection, single-layer LSTM, single-head
//! scaled dot-product self-attention, and two-class softmax cross-entropy.

use rand::Rng;

use crate::tape::{Tape, Var};
use crate::tensor::{Tensor, TensorError};

// ── Linear ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    /// `[out × in]`, applied along the last input dimension.
    pub weight: Tensor,
    pub bias: Tensor,
}

pub struct LinearVars {
    pub weight: Var,
    pub bias: Var,
}

impl LinearParams {
    pub fn seeded<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            weight: Tensor::uniform_init(vec![out_dim, in_dim], in_dim, rng).trainable(),
            bias: Tensor::zeros(vec![out_dim]).trainable(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn on_tape(&self, tape: &Tape) -> LinearVars {
        LinearVars {
            weight: tape.leaf(&self.weight),
            bias: tape.leaf(&self.bias),
        }
    }
}

/// `W·x + b` along the last dimension; accepts rank-1 or rank-2 input.
pub fn linear_forward(tape: &Tape, p: &LinearVars, x: Var) -> Result<Var, TensorError> {
    match tape.shape(x).len() {
        1 => {
            let wx = tape.matvec(p.weight, x)?;
            tape.add(wx, p.bias)
        }
        2 => {
            let wt = tape.transpose(p.weight)?;
            let xw = tape.matmul(x, wt)?;
            tape.add_bias(xw, p.bias)
        }
        _ => Err(TensorError::InvalidShape {
            op: "linear_forward",
            shape: tape.shape(x),
            reason: "expected rank-1 or rank-2 input".into(),
        }),
    }
}

// ── LSTM ─────────────────────────────────────────────────────────────

/// Single-layer LSTM. Each gate weight is `[hidden × (input + hidden)]` and
/// multiplies the concatenation `[x_t ‖ h_{t-1}]`; initial states are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub input_weight: Tensor,
    pub input_bias: Tensor,
    pub forget_weight: Tensor,
    pub forget_bias: Tensor,
    pub output_weight: Tensor,
    pub output_bias: Tensor,
    pub cell_weight: Tensor,
    pub cell_bias: Tensor,
}

pub struct LstmVars {
    pub input_weight: Var,
    pub input_bias: Var,
    pub forget_weight: Var,
    pub forget_bias: Var,
    pub output_weight: Var,
    pub output_bias: Var,
    pub cell_weight: Var,
    pub cell_bias: Var,
}

impl LstmParams {
    pub fn seeded<R: Rng>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let fan_in = input_dim + hidden_dim;
        let gate = |rng: &mut R| {
            Tensor::uniform_init(vec![hidden_dim, fan_in], fan_in, rng).trainable()
        };
        Self {
            input_weight: gate(rng),
            input_bias: Tensor::zeros(vec![hidden_dim]).trainable(),
            forget_weight: gate(rng),
            forget_bias: Tensor::zeros(vec![hidden_dim]).trainable(),
            output_weight: gate(rng),
            output_bias: Tensor::zeros(vec![hidden_dim]).trainable(),
            cell_weight: gate(rng),
            cell_bias: Tensor::zeros(vec![hidden_dim]).trainable(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.input_weight.shape()[0]
    }

    pub fn input_dim(&self) -> usize {
        self.input_weight.shape()[1] - self.hidden_dim()
    }

    pub fn on_tape(&self, tape: &Tape) -> LstmVars {
        LstmVars {
            input_weight: tape.leaf(&self.input_weight),
            input_bias: tape.leaf(&self.input_bias),
            forget_weight: tape.leaf(&self.forget_weight),
            forget_bias: tape.leaf(&self.forget_bias),
            output_weight: tape.leaf(&self.output_weight),
            output_bias: tape.leaf(&self.output_bias),
            cell_weight: tape.leaf(&self.cell_weight),
            cell_bias: tape.leaf(&self.cell_bias),
        }
    }
}

/// Run the recurrence over a `[T × input]` sequence; returns `[T × hidden]`
/// with the hidden state at every step.
pub fn lstm_forward(tape: &Tape, p: &LstmVars, seq: Var) -> Result<Var, TensorError> {
    let shape = tape.shape(seq);
    if shape.len() != 2 || shape[0] == 0 {
        return Err(TensorError::InvalidShape {
            op: "lstm_forward",
            shape,
            reason: "expected a nonempty [T × input] sequence".into(),
        });
    }
    let steps = shape[0];
    let hidden_dim = tape.shape(p.input_bias)[0];

    let mut hidden = tape.constant(vec![hidden_dim], vec![0.0; hidden_dim])?;
    let mut cell = tape.constant(vec![hidden_dim], vec![0.0; hidden_dim])?;
    let mut outputs = Vec::with_capacity(steps);
    for t in 0..steps {
        let x = tape.row(seq, t)?;
        let joined = tape.concat(x, hidden, 0)?;
        let gate = |w: Var, b: Var| -> Result<Var, TensorError> {
            let wx = tape.matvec(w, joined)?;
            tape.add(wx, b)
        };
        let input_gate = tape.sigmoid(gate(p.input_weight, p.input_bias)?);
        let forget_gate = tape.sigmoid(gate(p.forget_weight, p.forget_bias)?);
        let output_gate = tape.sigmoid(gate(p.output_weight, p.output_bias)?);
        let candidate = tape.tanh(gate(p.cell_weight, p.cell_bias)?);

        let kept = tape.hadamard(forget_gate, cell)?;
        let written = tape.hadamard(input_gate, candidate)?;
        cell = tape.add(kept, written)?;
        let squashed = tape.tanh(cell);
        hidden = tape.hadamard(output_gate, squashed)?;
        outputs.push(hidden);
    }
    tape.stack_rows(&outputs)
}

// ── Self-attention ───────────────────────────────────────────────────

/// Single-head scaled dot-product self-attention with an output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// `[key_dim × in_dim]` each.
    pub query_weight: Tensor,
    pub key_weight: Tensor,
    pub value_weight: Tensor,
    /// `[in_dim × key_dim]`, restoring the token dimension.
    pub out_weight: Tensor,
}

pub struct AttentionVars {
    pub query_weight: Var,
    pub key_weight: Var,
    pub value_weight: Var,
    pub out_weight: Var,
}

impl AttentionParams {
    pub fn seeded<R: Rng>(in_dim: usize, key_dim: usize, rng: &mut R) -> Self {
        Self {
            query_weight: Tensor::uniform_init(vec![key_dim, in_dim], in_dim, rng).trainable(),
            key_weight: Tensor::uniform_init(vec![key_dim, in_dim], in_dim, rng).trainable(),
            value_weight: Tensor::uniform_init(vec![key_dim, in_dim], in_dim, rng).trainable(),
            out_weight: Tensor::uniform_init(vec![in_dim, key_dim], key_dim, rng).trainable(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.query_weight.shape()[1]
    }

    pub fn key_dim(&self) -> usize {
        self.query_weight.shape()[0]
    }

    pub fn on_tape(&self, tape: &Tape) -> AttentionVars {
        AttentionVars {
            query_weight: tape.leaf(&self.query_weight),
            key_weight: tape.leaf(&self.key_weight),
            value_weight: tape.leaf(&self.value_weight),
            out_weight: tape.leaf(&self.out_weight),
        }
    }
}

/// Refine `[N × in_dim]` tokens: `out = softmax(QKᵀ/√key_dim)·V` projected
/// back to the token dimension. Each query's attention weights form a
/// probability vector over the N tokens.
pub fn attention_forward(tape: &Tape, p: &AttentionVars, tokens: Var) -> Result<Var, TensorError> {
    let shape = tape.shape(tokens);
    if shape.len() != 2 || shape[0] == 0 {
        return Err(TensorError::InvalidShape {
            op: "attention_forward",
            shape,
            reason: "expected nonempty [N × in_dim] tokens".into(),
        });
    }
    let key_dim = tape.shape(p.query_weight)[0];

    let queries = tape.matmul(tokens, tape.transpose(p.query_weight)?)?;
    let keys = tape.matmul(tokens, tape.transpose(p.key_weight)?)?;
    let values = tape.matmul(tokens, tape.transpose(p.value_weight)?)?;

    let scores = tape.matmul(queries, tape.transpose(keys)?)?;
    let scaled = tape.scale(scores, 1.0 / (key_dim as f64).sqrt());
    let weights = tape.softmax(scaled, 1)?;
    let mixed = tape.matmul(weights, values)?;
    tape.matmul(mixed, tape.transpose(p.out_weight)?)
}

/// Attention weight matrix alone, for inspection in tests.
pub fn attention_weights(tape: &Tape, p: &AttentionVars, tokens: Var) -> Result<Var, TensorError> {
    let key_dim = tape.shape(p.query_weight)[0];
    let queries = tape.matmul(tokens, tape.transpose(p.query_weight)?)?;
    let keys = tape.matmul(tokens, tape.transpose(p.key_weight)?)?;
    let scores = tape.matmul(queries, tape.transpose(keys)?)?;
    let scaled = tape.scale(scores, 1.0 / (key_dim as f64).sqrt());
    tape.softmax(scaled, 1)
}

// ── Loss ─────────────────────────────────────────────────────────────

/// Two-class softmax cross-entropy; logit order is `[positive, negative]`.
pub fn softmax_cross_entropy(tape: &Tape, logits: Var, label: u8) -> Result<Var, TensorError> {
    if label > 1 {
        return Err(TensorError::Contract(format!(
            "label must be 0 or 1, got {label}"
        )));
    }
    tape.cross_entropy_logits(logits, label == 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_difference_check, DEFAULT_STEP, DEFAULT_TOL};
    use crate::tape::sigmoid;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn rand_vec(n: usize, rng: &mut ChaCha20Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn linear_identity_passes_input_through() {
        let p = LinearParams {
            weight: Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
            bias: Tensor::zeros(vec![2]),
        };
        let t = Tape::new();
        let vars = p.on_tape(&t);
        let x = t.constant(vec![2], vec![3.0, -4.0]).unwrap();
        let y = linear_forward(&t, &vars, x).unwrap();
        assert_eq!(t.value(y), vec![3.0, -4.0]);
    }

    #[test]
    fn linear_zero_weight_outputs_bias() {
        let p = LinearParams {
            weight: Tensor::zeros(vec![3, 2]),
            bias: Tensor::from_vec(vec![7.0, 8.0, 9.0]),
        };
        let t = Tape::new();
        let vars = p.on_tape(&t);
        let x = t.constant(vec![2], vec![1.0, 2.0]).unwrap();
        let y = linear_forward(&t, &vars, x).unwrap();
        assert_eq!(t.value(y), vec![7.0, 8.0, 9.0]);
    }

    #[test]
    fn linear_matches_loop_oracle_on_matrix_input() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let (rows, in_dim, out_dim) = (4, 5, 3);
        let p = LinearParams {
            weight: Tensor::new(vec![out_dim, in_dim], rand_vec(out_dim * in_dim, &mut rng)).unwrap(),
            bias: Tensor::from_vec(rand_vec(out_dim, &mut rng)),
        };
        let xd = rand_vec(rows * in_dim, &mut rng);
        let t = Tape::new();
        let vars = p.on_tape(&t);
        let x = t.constant(vec![rows, in_dim], xd.clone()).unwrap();
        let y = linear_forward(&t, &vars, x).unwrap();
        let got = t.value(y);
        // Explicit loop oracle.
        for r in 0..rows {
            for o in 0..out_dim {
                let mut expect = p.bias.data()[o];
                for i in 0..in_dim {
                    expect += p.weight.data()[o * in_dim + i] * xd[r * in_dim + i];
                }
                assert!((got[r * out_dim + o] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lstm_all_zero_weights_and_inputs_stay_zero() {
        let p = LstmParams {
            input_weight: Tensor::zeros(vec![3, 5]),
            input_bias: Tensor::zeros(vec![3]),
            forget_weight: Tensor::zeros(vec![3, 5]),
            forget_bias: Tensor::zeros(vec![3]),
            output_weight: Tensor::zeros(vec![3, 5]),
            output_bias: Tensor::zeros(vec![3]),
            cell_weight: Tensor::zeros(vec![3, 5]),
            cell_bias: Tensor::zeros(vec![3]),
        };
        let t = Tape::new();
        let vars = p.on_tape(&t);
        let seq = t.constant(vec![4, 2], vec![0.0; 8]).unwrap();
        let out = lstm_forward(&t, &vars, seq).unwrap();
        assert_eq!(t.value(out), vec![0.0; 12]);
    }

    #[test]
    fn lstm_single_step_matches_hand_computed_cell() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let (input_dim, hidden_dim) = (3, 2);
        let p = LstmParams::seeded(input_dim, hidden_dim, &mut rng);
        let xd = rand_vec(input_dim, &mut rng);

        let t = Tape::new();
        let vars = p.on_tape(&t);
        let seq = t.constant(vec![1, input_dim], xd.clone()).unwrap();
        let out = lstm_forward(&t, &vars, seq).unwrap();
        let got = t.value(out);

        // Hand-computed single cell step with zero initial state: the joined
        // vector is [x ‖ 0], so only the first input_dim columns matter.
        let dot = |w: &Tensor, b: &Tensor, u: usize| -> f64 {
            let cols = input_dim + hidden_dim;
            let mut s = b.data()[u];
            for i in 0..input_dim {
                s += w.data()[u * cols + i] * xd[i];
            }
            s
        };
        for u in 0..hidden_dim {
            let i_g = sigmoid(dot(&p.input_weight, &p.input_bias, u));
            let o_g = sigmoid(dot(&p.output_weight, &p.output_bias, u));
            let cand = dot(&p.cell_weight, &p.cell_bias, u).tanh();
            let cell = i_g * cand;
            let expect = o_g * cell.tanh();
            assert!((got[u] - expect).abs() < 1e-12, "unit {u}");
        }
    }

    #[test]
    fn lstm_hidden_outputs_bounded_by_one() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let p = LstmParams::seeded(4, 3, &mut rng);
        let t = Tape::new();
        let vars = p.on_tape(&t);
        let seq = t
            .constant(vec![6, 4], (0..24).map(|_| rng.gen_range(-5.0..5.0)).collect())
            .unwrap();
        let out = lstm_forward(&t, &vars, seq).unwrap();
        assert!(t.value(out).iter().all(|h| h.abs() < 1.0));
    }

    #[test]
    fn lstm_gradients_pass_finite_difference_over_three_steps() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let (input_dim, hidden_dim) = (3, 2);
        let p = LstmParams::seeded(input_dim, hidden_dim, &mut rng);
        let seq = rand_vec(3 * input_dim, &mut rng);

        // Check gradient w.r.t. one gate weight with everything else fixed.
        let report = finite_difference_check(
            |t, v| {
                let vars = LstmVars {
                    input_weight: v,
                    input_bias: t.leaf(&p.input_bias),
                    forget_weight: t.leaf(&p.forget_weight),
                    forget_bias: t.leaf(&p.forget_bias),
                    output_weight: t.leaf(&p.output_weight),
                    output_bias: t.leaf(&p.output_bias),
                    cell_weight: t.leaf(&p.cell_weight),
                    cell_bias: t.leaf(&p.cell_bias),
                };
                let s = t.constant(vec![3, input_dim], seq.clone())?;
                let out = lstm_forward(t, &vars, s)?;
                let squared = t.hadamard(out, out)?;
                Ok(t.sum(squared))
            },
            &p.input_weight,
            DEFAULT_STEP,
            DEFAULT_TOL,
        )
        .unwrap();
        assert!(report.passed(), "{report}");

        // And w.r.t. the input sequence itself.
        let seq_tensor = Tensor::new(vec![3, input_dim], seq).unwrap();
        let report = finite_difference_check(
            |t, v| {
                let vars = p.on_tape(t);
                let out = lstm_forward(t, &vars, v)?;
                let squared = t.hadamard(out, out)?;
                Ok(t.sum(squared))
            },
            &seq_tensor,
            DEFAULT_STEP,
            DEFAULT_TOL,
        )
        .unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn attention_identical_tokens_give_identical_rows() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let p = AttentionParams::seeded(4, 3, &mut rng);
        let token = rand_vec(4, &mut rng);
        let mut data = Vec::new();
        for _ in 0..5 {
            data.extend_from_slice(&token);
        }
        let t = Tape::new();
        let vars = p.on_tape(&t);
        let tokens = t.constant(vec![5, 4], data).unwrap();
        let out = t.value(attention_forward(&t, &vars, tokens).unwrap());
        for r in 1..5 {
            for c in 0..4 {
                assert!((out[r * 4 + c] - out[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_single_token_attends_fully_to_itself() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let p = AttentionParams::seeded(4, 3, &mut rng);
        let t = Tape::new();
        let vars = p.on_tape(&t);
        let tokens = t.constant(vec![1, 4], rand_vec(4, &mut rng)).unwrap();
        let w = attention_weights(&t, &vars, tokens).unwrap();
        assert_eq!(t.value(w), vec![1.0]);
    }

    #[test]
    fn attention_matches_step_by_step_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let (n, d_in, d_k) = (3, 4, 2);
        let p = AttentionParams::seeded(d_in, d_k, &mut rng);
        let xd = rand_vec(n * d_in, &mut rng);

        let t = Tape::new();
        let vars = p.on_tape(&t);
        let tokens = t.constant(vec![n, d_in], xd.clone()).unwrap();
        let got = t.value(attention_forward(&t, &vars, tokens).unwrap());

        // Step-by-step oracle: explicit Q, K, V, explicit softmax, loops only.
        let proj = |w: &Tensor, row: &[f64]| -> Vec<f64> {
            let (o, i_dim) = (w.shape()[0], w.shape()[1]);
            (0..o)
                .map(|u| (0..i_dim).map(|i| w.data()[u * i_dim + i] * row[i]).sum())
                .collect()
        };
        let rows: Vec<&[f64]> = xd.chunks(d_in).collect();
        let q: Vec<Vec<f64>> = rows.iter().map(|r| proj(&p.query_weight, r)).collect();
        let k: Vec<Vec<f64>> = rows.iter().map(|r| proj(&p.key_weight, r)).collect();
        let v: Vec<Vec<f64>> = rows.iter().map(|r| proj(&p.value_weight, r)).collect();
        for i in 0..n {
            let scores: Vec<f64> = (0..n)
                .map(|j| {
                    q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>()
                        / (d_k as f64).sqrt()
                })
                .collect();
            let exps: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
            let total: f64 = exps.iter().sum();
            let mut mixed = vec![0.0; d_k];
            for j in 0..n {
                for u in 0..d_k {
                    mixed[u] += exps[j] / total * v[j][u];
                }
            }
            let out_row = proj(&p.out_weight, &mixed);
            for c in 0..d_in {
                assert!((got[i * d_in + c] - out_row[c]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn attention_weights_rows_are_probability_vectors() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let p = AttentionParams::seeded(5, 3, &mut rng);
        let t = Tape::new();
        let vars = p.on_tape(&t);
        let tokens = t.constant(vec![4, 5], rand_vec(20, &mut rng)).unwrap();
        let w = t.value(attention_weights(&t, &vars, tokens).unwrap());
        for r in 0..4 {
            let row = &w[r * 4..(r + 1) * 4];
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|p| *p > 0.0));
        }
    }

    #[test]
    fn cross_entropy_known_values_and_limits() {
        let t = Tape::new();
        let even = t.constant(vec![2], vec![0.0, 0.0]).unwrap();
        let loss = softmax_cross_entropy(&t, even, 1).unwrap();
        assert!((t.scalar_value(loss).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);

        let confident = t.constant(vec![2], vec![30.0, -30.0]).unwrap();
        let loss = softmax_cross_entropy(&t, confident, 1).unwrap();
        assert!(t.scalar_value(loss).unwrap() < 1e-12);

        let l = t.constant(vec![2], vec![1.0, -1.0]).unwrap();
        let loss = softmax_cross_entropy(&t, l, 1).unwrap();
        let expect = (1.0 + (-2.0f64).exp()).ln(); // -ln(sigmoid(2))
        assert!((t.scalar_value(loss).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.1269).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let t = Tape::new();
        let l = t.constant(vec![2], vec![0.0, 0.0]).unwrap();
        assert!(matches!(
            softmax_cross_entropy(&t, l, 2),
            Err(TensorError::Contract(_))
        ));
    }

    #[test]
    fn cross_entropy_nonnegative_on_random_logits() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        for _ in 0..100 {
            let t = Tape::new();
            let l = t
                .constant(vec![2], vec![rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0)])
                .unwrap();
            let label = u8::from(rng.gen_bool(0.5));
            let loss = softmax_cross_entropy(&t, l, label).unwrap();
            assert!(t.scalar_value(loss).unwrap() >= 0.0);
        }
    }

    #[test]
    fn layer_gradients_pass_finite_difference_on_random_instances() {
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        // Linear, through weight.
        let p = LinearParams::seeded(4, 3, &mut rng);
        let x = rand_vec(4, &mut rng);
        let report = finite_difference_check(
            |t, v| {
                let vars = LinearVars {
                    weight: v,
                    bias: t.leaf(&p.bias),
                };
                let xv = t.constant(vec![4], x.clone())?;
                let y = linear_forward(t, &vars, xv)?;
                let sq = t.hadamard(y, y)?;
                Ok(t.sum(sq))
            },
            &p.weight,
            DEFAULT_STEP,
            DEFAULT_TOL,
        )
        .unwrap();
        assert!(report.passed(), "{report}");

        // Attention, through the query projection.
        let ap = AttentionParams::seeded(3, 2, &mut rng);
        let tokens = rand_vec(4 * 3, &mut rng);
        let report = finite_difference_check(
            |t, v| {
                let vars = AttentionVars {
                    query_weight: v,
                    key_weight: t.leaf(&ap.key_weight),
                    value_weight: t.leaf(&ap.value_weight),
                    out_weight: t.leaf(&ap.out_weight),
                };
                let tok = t.constant(vec![4, 3], tokens.clone())?;
                let out = attention_forward(t, &vars, tok)?;
                let sq = t.hadamard(out, out)?;
                Ok(t.sum(sq))
            },
            &ap.query_weight,
            DEFAULT_STEP,
            DEFAULT_TOL,
        )
        .unwrap();
        assert!(report.passed(), "{report}");

        // Cross-entropy, through the logits.
        let logits = Tensor::from_vec(vec![0.3, -0.7]);
        let report = finite_difference_check(
            |t, v| softmax_cross_entropy(t, v, 1),
            &logits,
            DEFAULT_STEP,
            DEFAULT_TOL,
        )
        .unwrap();
        assert!(report.passed(), "{report}");
    }
}
