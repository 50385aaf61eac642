//! Additive attention over a set of vectors, and the two-way attention that
//! mixes an attended context with the retrieved-target vector.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Linear;
use crate::params::{ParamId, ParamStore};

/// `a_i = w_aᵀ tanh(W_v v_i + W_h h)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdditiveAttnParams {
    pub feat_dim: usize,
    pub hidden_dim: usize,
    pub attn_dim: usize,
    pub w_v: Linear,
    pub w_h: Linear,
    pub w_a: ParamId,
}

impl AdditiveAttnParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        feat_dim: usize,
        hidden_dim: usize,
        attn_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(AdditiveAttnParams {
            feat_dim,
            hidden_dim,
            attn_dim,
            w_v: Linear::register(
                store,
                &format!("{name}.w_v"),
                feat_dim,
                attn_dim,
                false,
                rng,
            )?,
            w_h: Linear::register(
                store,
                &format!("{name}.w_h"),
                hidden_dim,
                attn_dim,
                false,
                rng,
            )?,
            w_a: store.insert_uniform(format!("{name}.w_a"), &[attn_dim], attn_dim, rng)?,
        })
    }
}

/// Attention keys for a fixed set of values: the values `[K, D]` and their
/// projections `W_v V` `[K, A]`, which do not depend on the query.
#[derive(Clone, Copy, Debug)]
pub struct AttnKeys {
    pub values: Var,
    pub keys: Var,
}

pub fn precompute_keys(
    tape: &mut Tape,
    store: &ParamStore,
    p: &AdditiveAttnParams,
    values: Var,
) -> Result<AttnKeys> {
    let shape = tape.value(values).shape().to_vec();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(Error::Empty("attention regions"));
    }
    if shape[1] != p.feat_dim {
        return Err(Error::dim(
            "additive_attention values",
            &shape,
            &[p.feat_dim],
        ));
    }
    let w_v = tape.param(store, p.w_v.weight);
    let keys = tape.matmul_bt(values, w_v)?;
    Ok(AttnKeys { values, keys })
}

/// Context `c = Σ α_i v_i` and weights `α = softmax(a)` for query `h_prev`.
pub fn attend(
    tape: &mut Tape,
    store: &ParamStore,
    p: &AdditiveAttnParams,
    keys: &AttnKeys,
    h_prev: Var,
) -> Result<(Var, Var)> {
    let q = p.w_h.forward(tape, store, h_prev)?;
    let pre = tape.add_rows(keys.keys, q)?;
    let act = tape.tanh(pre);
    let w_a = tape.param(store, p.w_a);
    let scores = tape.matvec(act, w_a)?;
    let alpha = tape.softmax(scores)?;
    let context = tape.vecmat(alpha, keys.values)?;
    Ok((context, alpha))
}

/// Additive attention over the rows of `values: [K, D]`.
pub fn additive_attention(
    tape: &mut Tape,
    store: &ParamStore,
    p: &AdditiveAttnParams,
    values: Var,
    h_prev: Var,
) -> Result<(Var, Var)> {
    let keys = precompute_keys(tape, store, p, values)?;
    attend(tape, store, p, &keys, h_prev)
}

/// `â = w_â tanh(W_m [c; r] + W_h h)` with `w_â: [2, A]`, so the softmax has
/// one logit per attended item.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MultiLevelAttnParams {
    pub dim: usize,
    pub hidden_dim: usize,
    pub attn_dim: usize,
    pub w_m: Linear,
    pub w_h: Linear,
    pub w_hat: Linear,
}

impl MultiLevelAttnParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        hidden_dim: usize,
        attn_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(MultiLevelAttnParams {
            dim,
            hidden_dim,
            attn_dim,
            w_m: Linear::register(store, &format!("{name}.w_m"), 2 * dim, attn_dim, false, rng)?,
            w_h: Linear::register(
                store,
                &format!("{name}.w_h"),
                hidden_dim,
                attn_dim,
                false,
                rng,
            )?,
            w_hat: Linear::register(store, &format!("{name}.w_hat"), attn_dim, 2, false, rng)?,
        })
    }
}

/// Returns `(ĉ, α̂)` with `ĉ = α̂₁ c + α̂₂ r` and `α̂ = softmax(â)` of length 2.
pub fn multi_level_attention(
    tape: &mut Tape,
    store: &ParamStore,
    p: &MultiLevelAttnParams,
    context: Var,
    retrieved: Var,
    h_prev: Var,
) -> Result<(Var, Var)> {
    let (cs, rs) = (
        tape.value(context).shape().to_vec(),
        tape.value(retrieved).shape().to_vec(),
    );
    if cs != rs || cs != [p.dim] {
        return Err(Error::dim("multi_level_attention", &cs, &rs));
    }
    let both = tape.concat(&[context, retrieved])?;
    let m = p.w_m.forward(tape, store, both)?;
    let q = p.w_h.forward(tape, store, h_prev)?;
    let pre = tape.add(m, q)?;
    let act = tape.tanh(pre);
    let logits = p.w_hat.forward(tape, store, act)?;
    let alpha = tape.softmax(logits)?;
    let items = tape.stack_rows(&[context, retrieved])?;
    let mixed = tape.vecmat(alpha, items)?;
    Ok((mixed, alpha))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SentimentAttnParams {
    pub inner: AdditiveAttnParams,
    pub outer: MultiLevelAttnParams,
}

/// Attention over all hidden states `H: [T, D]` with the last state as query,
/// followed by the two-way mix with the retrieved vector.
///
/// Returns `(ĉ, α over T, α̂)`.
pub fn sentiment_attention(
    tape: &mut Tape,
    store: &ParamStore,
    p: &SentimentAttnParams,
    hidden: Var,
    last: Var,
    retrieved: Var,
) -> Result<(Var, Var, Var)> {
    let (c, alpha) = additive_attention(tape, store, &p.inner, hidden, last)?;
    let (mixed, alpha_hat) = multi_level_attention(tape, store, &p.outer, c, retrieved, last)?;
    Ok((mixed, alpha, alpha_hat))
}

/// One decoding step (or one classified sentence) of attention weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttnStep {
    pub token: String,
    pub alpha_regions: Vec<f64>,
    pub alpha_image: f64,
    pub alpha_retrieved: f64,
}

/// Attention weights for a whole example; serializes as a JSON array of steps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AttnTrace {
    pub steps: Vec<AttnStep>,
}

impl AttnTrace {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(
        d: usize,
        h: usize,
        a: usize,
    ) -> (ParamStore, AdditiveAttnParams, MultiLevelAttnParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let add = AdditiveAttnParams::register(&mut store, "att", d, h, a, &mut rng).unwrap();
        let multi = MultiLevelAttnParams::register(&mut store, "ml", d, h, a, &mut rng).unwrap();
        (store, add, multi)
    }

    #[test]
    fn single_region_gets_all_weight() {
        let (store, p, _) = setup(3, 2, 4);
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::matrix(1, 3, vec![0.3, -1.0, 2.0]).unwrap());
        let h = tape.constant(Tensor::vector(vec![0.5, 0.1]));
        let (c, alpha) = additive_attention(&mut tape, &store, &p, v, h).unwrap();
        assert_eq!(tape.value(alpha).data(), &[1.0]);
        assert_eq!(tape.value(c).data(), &[0.3, -1.0, 2.0]);
    }

    #[test]
    fn identical_regions_yield_that_region() {
        let (store, p, _) = setup(2, 2, 3);
        let mut tape = Tape::new();
        let v =
            tape.constant(Tensor::matrix(3, 2, vec![0.25, -0.5, 0.25, -0.5, 0.25, -0.5]).unwrap());
        let h = tape.constant(Tensor::vector(vec![1.5, -0.7]));
        let (c, _) = additive_attention(&mut tape, &store, &p, v, h).unwrap();
        let got = tape.value(c).data();
        assert!((got[0] - 0.25).abs() < 1e-15 && (got[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_regions_rejected() {
        let (store, p, _) = setup(2, 2, 3);
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::zeros(&[0, 2]));
        let h = tape.constant(Tensor::zeros(&[2]));
        assert!(additive_attention(&mut tape, &store, &p, v, h).is_err());
    }

    #[test]
    fn symmetric_params_split_evenly() {
        let (mut store, _, p) = setup(2, 2, 3);
        // identical rows in w_hat give equal logits
        store
            .set(
                p.w_hat.weight,
                Tensor::matrix(2, 3, vec![0.2, -0.4, 0.9, 0.2, -0.4, 0.9]).unwrap(),
            )
            .unwrap();
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::vector(vec![1.0, 3.0]));
        let r = tape.constant(Tensor::vector(vec![-1.0, 5.0]));
        let h = tape.constant(Tensor::vector(vec![0.3, 0.3]));
        let (mixed, alpha) = multi_level_attention(&mut tape, &store, &p, c, r, h).unwrap();
        assert_eq!(tape.value(alpha).data(), &[0.5, 0.5]);
        assert_eq!(tape.value(mixed).data(), &[0.0, 4.0]);
    }

    #[test]
    fn equal_items_return_item() {
        let (store, _, p) = setup(3, 2, 3);
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::vector(vec![0.1, 0.2, 0.3]));
        let h = tape.constant(Tensor::vector(vec![1.0, -2.0]));
        let (mixed, alpha) = multi_level_attention(&mut tape, &store, &p, c, c, h).unwrap();
        let a = tape.value(alpha).data();
        assert!((a[1] - (1.0 - a[0])).abs() < 1e-9);
        assert!(tape.value(mixed).max_abs_diff(tape.value(c)) < 1e-15);
    }

    #[test]
    fn mismatched_items_rejected() {
        let (store, _, p) = setup(3, 2, 3);
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::vector(vec![0.1, 0.2, 0.3]));
        let r = tape.constant(Tensor::vector(vec![0.1, 0.2]));
        let h = tape.constant(Tensor::vector(vec![1.0, -2.0]));
        assert!(multi_level_attention(&mut tape, &store, &p, c, r, h).is_err());
    }

    #[test]
    fn trace_json_shape() {
        let trace = AttnTrace {
            steps: vec![AttnStep {
                token: "dog".into(),
                alpha_regions: vec![1.0],
                alpha_image: 0.25,
                alpha_retrieved: 0.75,
            }],
        };
        assert_eq!(
            trace.to_json(),
            r#"[{"token":"dog","alpha_regions":[1.0],"alpha_image":0.25,"alpha_retrieved":0.75}]"#
        );
    }
}
