//! Text and image encoders producing the `d`-dimensional `H_T` and `H_I`.
//!
//! Text goes through learned word embeddings and a single-layer
//! bidirectional LSTM with zero initial states; the final backward-direction
//! state (after reading the first token) and the final forward-direction
//! state (after reading the last token) are concatenated and projected.
//! Image features get the complete-modality flag appended before the
//! projection, unless the flag is ablated.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

pub(crate) fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for x in t.data_mut() {
        *x = rng.random_range(-bound..bound);
    }
    t
}

/// Weights of one LSTM direction. Gate rows are stacked as
/// `[input; forget; cell; output]`, each `hidden` rows tall, acting on
/// `[x; h_prev]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl LstmParams {
    pub fn init(rng: &mut impl Rng, input: usize, hidden: usize) -> Self {
        let bound = 1.0 / ((input + hidden) as f64).sqrt();
        let mut b = Tensor::zeros(&[4 * hidden]);
        // forget gate starts open
        b.data_mut()[hidden..2 * hidden].fill(1.0);
        Self {
            w: uniform(rng, &[4 * hidden, input + hidden], bound),
            b,
        }
    }

    pub fn hidden(&self) -> usize {
        self.b.len() / 4
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoderParams {
    /// `vocab × d_w`
    pub embedding: Tensor,
    pub forward: LstmParams,
    pub backward: LstmParams,
    /// `d × 2d₀`
    pub w_t: Tensor,
    pub b_t: Tensor,
}

impl TextEncoderParams {
    pub fn init(rng: &mut impl Rng, vocab: usize, d_w: usize, d0: usize, d: usize) -> Self {
        Self {
            embedding: uniform(rng, &[vocab, d_w], 1.0),
            forward: LstmParams::init(rng, d_w, d0),
            backward: LstmParams::init(rng, d_w, d0),
            w_t: uniform(rng, &[d, 2 * d0], 1.0 / ((2 * d0) as f64).sqrt()),
            b_t: Tensor::zeros(&[d]),
        }
    }

    pub fn vocab(&self) -> usize {
        self.embedding.rows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageEncoderParams {
    /// `d × (d_I + 1)` with the flag column last, or `d × d_I` without it.
    pub w_i: Tensor,
    pub b_i: Tensor,
}

impl ImageEncoderParams {
    pub fn init(rng: &mut impl Rng, d_i: usize, d: usize, with_cmt: bool) -> Self {
        let cols = d_i + usize::from(with_cmt);
        Self {
            w_i: uniform(rng, &[d, cols], 1.0 / (cols as f64).sqrt()),
            b_i: Tensor::zeros(&[d]),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w: Var,
    pub b: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct TextEncoderVars {
    pub embedding: Var,
    pub forward: LstmVars,
    pub backward: LstmVars,
    pub w_t: Var,
    pub b_t: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct ImageEncoderVars {
    pub w_i: Var,
    pub b_i: Var,
}

impl LstmParams {
    pub fn bind(&self, tape: &mut Tape, grad: bool) -> LstmVars {
        LstmVars {
            w: tape.leaf(self.w.clone(), grad),
            b: tape.leaf(self.b.clone(), grad),
        }
    }
}

impl TextEncoderParams {
    pub fn bind(&self, tape: &mut Tape, grad: bool) -> TextEncoderVars {
        TextEncoderVars {
            embedding: tape.leaf(self.embedding.clone(), grad),
            forward: self.forward.bind(tape, grad),
            backward: self.backward.bind(tape, grad),
            w_t: tape.leaf(self.w_t.clone(), grad),
            b_t: tape.leaf(self.b_t.clone(), grad),
        }
    }
}

impl ImageEncoderParams {
    pub fn bind(&self, tape: &mut Tape, grad: bool) -> ImageEncoderVars {
        ImageEncoderVars {
            w_i: tape.leaf(self.w_i.clone(), grad),
            b_i: tape.leaf(self.b_i.clone(), grad),
        }
    }
}

/// One LSTM step; returns `(h, c)`.
fn lstm_step(tape: &mut Tape, p: LstmVars, hidden: usize, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let xh = tape.concat(&[x, h], 0)?;
    let z = tape.matmul(p.w, xh)?;
    let z = tape.add(z, p.b)?;
    let zi = tape.slice(z, 0, hidden)?;
    let zf = tape.slice(z, hidden, hidden)?;
    let zg = tape.slice(z, 2 * hidden, hidden)?;
    let zo = tape.slice(z, 3 * hidden, hidden)?;
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);
    let fc = tape.hadamard(f, c)?;
    let ig = tape.hadamard(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next);
    let h_next = tape.hadamard(o, tc)?;
    Ok((h_next, c_next))
}

/// Runs one direction over `order` and returns the last hidden state.
fn run_direction(
    tape: &mut Tape,
    p: LstmVars,
    hidden: usize,
    embedding: Var,
    tokens: &[usize],
    order: impl Iterator<Item = usize>,
) -> Result<Var> {
    let mut h = tape.constant(Tensor::zeros(&[hidden]));
    let mut c = tape.constant(Tensor::zeros(&[hidden]));
    for pos in order {
        let x = tape.row(embedding, tokens[pos])?;
        (h, c) = lstm_step(tape, p, hidden, x, h, c)?;
    }
    Ok(h)
}

/// `H_T = ReLU(w_T · [h_bwd; h_fwd] + b_T)`.
pub fn encode_text(tape: &mut Tape, tokens: &[usize], vars: &TextEncoderVars) -> Result<Var> {
    let pre = text_preactivation(tape, tokens, vars)?;
    Ok(tape.relu(pre))
}

/// `w_T · [h_bwd; h_fwd] + b_T`, the input of the text ReLU.
pub fn text_preactivation(tape: &mut Tape, tokens: &[usize], vars: &TextEncoderVars) -> Result<Var> {
    let vocab = tape.value(vars.embedding).rows();
    if tokens.is_empty() {
        return Err(Error::Dimension {
            what: "token sequence length",
            expected: 1,
            got: 0,
        });
    }
    if let Some(&token) = tokens.iter().find(|&&t| t >= vocab) {
        return Err(Error::OutOfVocab { token, vocab });
    }
    let hidden = tape.value(vars.forward.b).len() / 4;
    let fwd = run_direction(tape, vars.forward, hidden, vars.embedding, tokens, 0..tokens.len())?;
    let bwd = run_direction(
        tape,
        vars.backward,
        hidden,
        vars.embedding,
        tokens,
        (0..tokens.len()).rev(),
    )?;
    let h = tape.concat(&[bwd, fwd], 0)?;
    let proj = tape.matmul(vars.w_t, h)?;
    Ok(tape.add(proj, vars.b_t)?)
}

/// `H_I = ReLU(w_I · [features; cmt] + b_I)`, or without the flag slot when
/// `w_I` has exactly `|features|` columns.
pub fn encode_image(tape: &mut Tape, features: &[f64], cmt: bool, vars: &ImageEncoderVars) -> Result<Var> {
    let pre = image_preactivation(tape, features, cmt, vars)?;
    Ok(tape.relu(pre))
}

pub fn image_preactivation(tape: &mut Tape, features: &[f64], cmt: bool, vars: &ImageEncoderVars) -> Result<Var> {
    let cols = tape.value(vars.w_i).cols();
    let input = if cols == features.len() + 1 {
        let mut x = Vec::with_capacity(cols);
        x.extend_from_slice(features);
        x.push(if cmt { 1.0 } else { 0.0 });
        x
    } else if cols == features.len() {
        features.to_vec()
    } else {
        return Err(Error::Dimension {
            what: "image feature length",
            expected: cols.saturating_sub(1),
            got: features.len(),
        });
    };
    let x = tape.constant(Tensor::vector(input));
    let proj = tape.matmul(vars.w_i, x)?;
    Ok(tape.add(proj, vars.b_i)?)
}
