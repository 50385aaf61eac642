//! Neural building blocks recorded on a [`Tape`].

use rand::{Rng, RngCore};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

/// `W x (+ b)`.
pub fn dense(tape: &mut Tape, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = tape.matvec(w, x)?;
    match b {
        Some(b) => tape.add(y, b),
        None => Ok(y),
    }
}

/// Affine layer parameters: `weight: [out, in]`, `bias: [out]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight =
            store.insert_uniform(format!("{name}.weight"), &[output, input], input, rng)?;
        let bias = if bias {
            Some(store.insert_uniform(format!("{name}.bias"), &[output], input, rng)?)
        } else {
            None
        };
        Ok(Linear { weight, bias })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|b| tape.param(store, b));
        dense(tape, x, w, b)
    }
}

/// One recurrent layer: four gates, each with weight `[hidden, input + hidden]`
/// acting on `concat(x_t, h_prev)` and a bias `[hidden]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub input_gate: Linear,
    pub forget_gate: Linear,
    pub output_gate: Linear,
    pub candidate: Linear,
}

impl LstmParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let z = input_dim + hidden_dim;
        let mut gate =
            |g: &str| Linear::register(store, &format!("{name}.{g}"), z, hidden_dim, true, rng);
        Ok(LstmParams {
            input_dim,
            hidden_dim,
            input_gate: gate("input")?,
            forget_gate: gate("forget")?,
            output_gate: gate("output")?,
            candidate: gate("candidate")?,
        })
    }

    pub fn gates(&self) -> [Linear; 4] {
        [
            self.input_gate,
            self.forget_gate,
            self.output_gate,
            self.candidate,
        ]
    }
}

/// Standard LSTM step. Returns `(h_t, m_t)`.
///
/// `m_t = f ⊙ m_prev + i ⊙ g`, `h_t = o ⊙ tanh(m_t)` with sigmoid gates
/// `i, f, o` and tanh candidate `g`.
pub fn lstm_cell(
    tape: &mut Tape,
    store: &ParamStore,
    p: &LstmParams,
    x: Var,
    h_prev: Var,
    m_prev: Var,
) -> Result<(Var, Var)> {
    let xs = tape.value(x).shape().to_vec();
    if xs != [p.input_dim] {
        return Err(Error::dim("lstm_cell input", &xs, &[p.input_dim]));
    }
    for s in [h_prev, m_prev] {
        let hs = tape.value(s).shape().to_vec();
        if hs != [p.hidden_dim] {
            return Err(Error::dim("lstm_cell state", &hs, &[p.hidden_dim]));
        }
    }
    let z = tape.concat(&[x, h_prev])?;
    let i = p.input_gate.forward(tape, store, z)?;
    let i = tape.sigmoid(i);
    let f = p.forget_gate.forward(tape, store, z)?;
    let f = tape.sigmoid(f);
    let o = p.output_gate.forward(tape, store, z)?;
    let o = tape.sigmoid(o);
    let g = p.candidate.forward(tape, store, z)?;
    let g = tape.tanh(g);

    let keep = tape.mul(f, m_prev)?;
    let write = tape.mul(i, g)?;
    let m = tape.add(keep, write)?;
    let squashed = tape.tanh(m);
    let h = tape.mul(o, squashed)?;
    Ok((h, m))
}

/// Runs the cell over `inputs` from `(h0, m0)`; returns every hidden state and
/// the final memory.
pub fn lstm_sequence(
    tape: &mut Tape,
    store: &ParamStore,
    p: &LstmParams,
    inputs: &[Var],
    h0: Var,
    m0: Var,
) -> Result<(Vec<Var>, Var)> {
    let mut hs = Vec::with_capacity(inputs.len());
    let (mut h, mut m) = (h0, m0);
    for &x in inputs {
        (h, m) = lstm_cell(tape, store, p, x, h, m)?;
        hs.push(h);
    }
    Ok((hs, m))
}

/// Inverted dropout. `rng = None` means evaluation mode, where this is the
/// identity for every `p`.
pub fn dropout(
    tape: &mut Tape,
    x: Var,
    p: f64,
    rng: Option<&mut (dyn RngCore + '_)>,
) -> Result<Var> {
    check_dropout_rate(p)?;
    let Some(rng) = rng else { return Ok(x) };
    if p == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - p);
    let mask = (0..tape.value(x).len())
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    tape.mask(x, mask)
}

pub fn check_dropout_rate(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
    }
    Ok(())
}
