//! Model forward passes against plain-arithmetic oracles, plus metric
//! invariants.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rarnn::bleu::bleu;
use rarnn::metrics::{accuracy, f_score};
use rarnn::models::{
    special, CaptionModel, CaptionModelConfig, RetrievalMode, SentimentModel, SentimentModelConfig,
};
use rarnn::target::{norm_weighted_avg, EmbeddingTable, EncoderMode};
use rarnn::{ParamStore, Tape, Tensor};

const TOL: f64 = 1e-12;

struct Oracle<'a>(&'a ParamStore);

impl Oracle<'_> {
    fn t(&self, name: &str) -> &Tensor {
        self.0
            .by_name(name)
            .unwrap_or_else(|| panic!("no parameter {name}"))
    }

    fn linear(&self, name: &str, x: &[f64]) -> Vec<f64> {
        let w = self.t(&format!("{name}.weight"));
        let mut y: Vec<f64> = (0..w.rows())
            .map(|i| w.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect();
        if let Some(b) = self.0.by_name(&format!("{name}.bias")) {
            y.iter_mut().zip(b.data()).for_each(|(y, b)| *y += b);
        }
        y
    }

    fn additive(&self, name: &str, values: &[Vec<f64>], h: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let q = self.linear(&format!("{name}.w_h"), h);
        let w_a = self.t(&format!("{name}.w_a")).data();
        let scores: Vec<f64> = values
            .iter()
            .map(|v| {
                let k = self.linear(&format!("{name}.w_v"), v);
                k.iter()
                    .zip(&q)
                    .zip(w_a)
                    .map(|((k, q), w)| w * (k + q).tanh())
                    .sum()
            })
            .collect();
        let alpha = softmax(&scores);
        let mut c = vec![0.0; values[0].len()];
        for (v, a) in values.iter().zip(&alpha) {
            c.iter_mut().zip(v).for_each(|(c, v)| *c += a * v);
        }
        (c, alpha)
    }

    fn multi(&self, c: &[f64], r: &[f64], h: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let both: Vec<f64> = c.iter().chain(r).copied().collect();
        let m = self.linear("multi_level.w_m", &both);
        let q = self.linear("multi_level.w_h", h);
        let act: Vec<f64> = m.iter().zip(&q).map(|(m, q)| (m + q).tanh()).collect();
        let hat = softmax(&self.linear("multi_level.w_hat", &act));
        let mixed = c
            .iter()
            .zip(r)
            .map(|(c, r)| hat[0] * c + hat[1] * r)
            .collect();
        (mixed, hat)
    }

    fn lstm(&self, x: &[f64], h: &[f64], m: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let z: Vec<f64> = x.iter().chain(h).copied().collect();
        let i = self.linear("lstm.input", &z);
        let f = self.linear("lstm.forget", &z);
        let o = self.linear("lstm.output", &z);
        let g = self.linear("lstm.candidate", &z);
        let mut m2 = vec![0.0; h.len()];
        let mut h2 = vec![0.0; h.len()];
        for j in 0..h.len() {
            m2[j] = sig(f[j]) * m[j] + sig(i[j]) * g[j].tanh();
            h2[j] = sig(o[j]) * m2[j].tanh();
        }
        (h2, m2)
    }

    fn embedding(&self, token: u32) -> Vec<f64> {
        self.t("embeddings").row(token as usize).to_vec()
    }
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn caption_model(mode: RetrievalMode, seed: u64) -> CaptionModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = CaptionModelConfig {
        vocab_size: 10,
        embed_dim: 4,
        hidden_dim: 6,
        feat_dim: 5,
        regions: 3,
        attn_dim: 4,
        retrieval: mode,
        encoder: EncoderMode::Weighted,
        encode_dim: 4,
        dropout: 0.5,
        fine_tune_embeddings: false,
    };
    let emb = Tensor::matrix(10, 4, random(&mut rng, 40)).unwrap();
    CaptionModel::new(cfg, emb, &mut rng).unwrap()
}

fn sentiment_model(mode: RetrievalMode, seed: u64) -> SentimentModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SentimentModelConfig {
        vocab_size: 10,
        embed_dim: 4,
        hidden_dim: 6,
        attn_dim: 5,
        retrieval: mode,
        encoder: EncoderMode::ClassAvg,
        encode_dim: 4,
        dropout: 0.5,
        fine_tune_embeddings: false,
    };
    let emb = Tensor::matrix(10, 4, random(&mut rng, 40)).unwrap();
    SentimentModel::new(cfg, emb, &mut rng).unwrap()
}

#[test]
fn combined_caption_steps_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..20 {
        let model = caption_model(RetrievalMode::Combined, seed);
        let o = Oracle(&model.params);
        let features = Tensor::matrix(3, 5, random(&mut rng, 15)).unwrap();
        let r = random(&mut rng, 4);
        let tokens = [special::BOS, 5, 7, 4];

        let regions: Vec<Vec<f64>> = (0..3)
            .map(|i| o.linear("feature_proj", features.row(i)))
            .collect();
        let v_bar: Vec<f64> = (0..5)
            .map(|j| (0..3).map(|i| features.row(i)[j]).sum::<f64>() / 3.0)
            .collect();
        let r_proj = o.linear("target_proj", &r);
        let (mut h, mut m) = (o.linear("init_h", &v_bar), r_proj.clone());
        let mut want = Vec::new();
        for &tok in &tokens {
            let (c, alpha) = o.additive("attention", &regions, &h);
            let (mixed, hat) = o.multi(&c, &r_proj, &h);
            let x: Vec<f64> = o.embedding(tok).into_iter().chain(mixed).collect();
            (h, m) = o.lstm(&x, &h, &m);
            want.push((o.linear("output", &h), alpha, hat));
        }

        let mut tape = Tape::new();
        let ctx = model.image_context(&mut tape, &features, Some(&r)).unwrap();
        let mut state = model.init_states(&mut tape, &features, &ctx).unwrap();
        for (&tok, (logits, alpha, hat)) in tokens.iter().zip(&want) {
            let (got, next, attn) = model.step(&mut tape, &ctx, &state, tok, None).unwrap();
            assert!(max_diff(tape.value(got).data(), logits) < TOL);
            assert!(max_diff(&attn.regions, alpha) < TOL);
            assert!(max_diff(&[attn.image, attn.retrieved], hat) < TOL);
            state = next;
        }
    }
}

#[test]
fn sentiment_forward_matches_oracle_in_every_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for mode in RetrievalMode::ALL {
        for seed in 0..10 {
            let model = sentiment_model(mode, seed);
            let o = Oracle(&model.params);
            let tokens: Vec<u32> = (0..rng.random_range(1..9))
                .map(|_| rng.random_range(0..10))
                .collect();
            let r = random(&mut rng, 4);
            let retrieved = mode.uses_retrieval().then_some(r.as_slice());

            let r_proj = mode.uses_retrieval().then(|| o.linear("target_proj", &r));
            let mut h = vec![0.0; 6];
            let mut m = match (&r_proj, mode.injects_memory()) {
                (Some(p), true) => p.clone(),
                _ => vec![0.0; 6],
            };
            let mut hs = Vec::new();
            for &t in &tokens {
                (h, m) = o.lstm(&o.embedding(t), &h, &m);
                hs.push(h.clone());
            }
            let (c, _) = o.additive("attention", &hs, &h);
            let c = match (&r_proj, mode.uses_multi_level()) {
                (Some(p), true) => o.multi(&c, p, &h).0,
                _ => c,
            };
            let want = sig(o.linear("output", &c)[0]);
            let got = model.predict(&tokens, retrieved).unwrap();
            assert!((got - want).abs() < TOL, "{mode}: {got} vs {want}");
        }
    }
}

#[test]
fn memory_injection_starts_from_projected_weighted_average() {
    let mut table = EmbeddingTable::new(4);
    table.insert("red", vec![1.0, 0.0, 2.0, -1.0]).unwrap();
    table.insert("dog", vec![0.0, 3.0, 0.0, 4.0]).unwrap();
    let caption = ["red", "unknown", "dog"];
    let r = norm_weighted_avg(&caption, &table).unwrap();
    // weights are the norms √6 and 5
    let (a, b) = (6f64.sqrt(), 5.0);
    let expected: Vec<f64> = (0..4)
        .map(|j| (a * table.get("red").unwrap()[j] + b * table.get("dog").unwrap()[j]) / (a + b))
        .collect();
    assert!(max_diff(&r, &expected) < TOL);

    let model = caption_model(RetrievalMode::M0Init, 9);
    let o = Oracle(&model.params);
    let features = Tensor::matrix(3, 5, vec![0.25; 15]).unwrap();
    let mut tape = Tape::new();
    let ctx = model.image_context(&mut tape, &features, Some(&r)).unwrap();
    let state = model.init_states(&mut tape, &features, &ctx).unwrap();
    assert!(max_diff(tape.value(state.m).data(), &o.linear("target_proj", &r)) < TOL);
}

#[test]
fn zeroed_mixing_weights_split_attention_evenly() {
    let mut model = caption_model(RetrievalMode::MultiAttn, 4);
    let id = model.params.id("multi_level.w_hat.weight").unwrap();
    let shape = model.params.get(id).shape().to_vec();
    assert_eq!(shape, [2, 4]);
    model.params.set(id, Tensor::zeros(&shape)).unwrap();
    let features = Tensor::matrix(3, 5, (0..15).map(|i| i as f64 / 10.0).collect()).unwrap();
    let (_, trace) = model
        .greedy_decode(&features, Some(&[0.1, 0.2, 0.3, 0.4]), 4)
        .unwrap();
    assert!(!trace.is_empty());
    for step in trace {
        assert_eq!((step.image, step.retrieved), (0.5, 0.5));
    }
}

#[test]
fn retrieval_modes_demand_a_retrieved_vector() {
    let features = Tensor::matrix(3, 5, vec![0.0; 15]).unwrap();
    for mode in [
        RetrievalMode::M0Init,
        RetrievalMode::MultiAttn,
        RetrievalMode::Combined,
    ] {
        assert!(caption_model(mode, 1)
            .greedy_decode(&features, None, 3)
            .is_err());
        assert!(sentiment_model(mode, 1).predict(&[4], None).is_err());
    }
    assert!(caption_model(RetrievalMode::Off, 1)
        .greedy_decode(&features, Some(&[0.0; 4]), 3)
        .is_err());
}

fn sentence() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0u8..6, 1..8)
}

proptest! {
    #[test]
    fn bleu_in_unit_interval(cands in prop::collection::vec(sentence(), 1..5), refs in prop::collection::vec(sentence(), 1..3)) {
        let refs: Vec<Vec<Vec<u8>>> = cands.iter().map(|_| refs.clone()).collect();
        for s in bleu(&cands, &refs, 4).unwrap() {
            prop_assert!((0.0..=1.0).contains(&s));
        }
    }

    #[test]
    fn duplicate_references_change_nothing(cand in sentence(), refs in prop::collection::vec(sentence(), 1..3)) {
        let mut doubled = refs.clone();
        doubled.extend(refs.iter().cloned());
        let a = bleu(std::slice::from_ref(&cand), &[refs], 4).unwrap();
        let b = bleu(&[cand], &[doubled], 4).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn self_reference_scores_one(cand in prop::collection::vec(0u8..6, 4..8)) {
        prop_assert_eq!(bleu(std::slice::from_ref(&cand), &[vec![cand.clone()]], 4).unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn classification_metrics_ignore_order_and_class_names(
        pairs in prop::collection::vec((0u8..2, 0u8..2), 1..40),
        seed in any::<u64>(),
    ) {
        let (preds, labels): (Vec<u8>, Vec<u8>) = pairs.iter().copied().unzip();
        let mut shuffled = pairs.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (sp, sl): (Vec<u8>, Vec<u8>) = shuffled.into_iter().unzip();
        prop_assert_eq!(accuracy(&preds, &labels).unwrap(), accuracy(&sp, &sl).unwrap());
        prop_assert!((f_score(&preds, &labels).unwrap() - f_score(&sp, &sl).unwrap()).abs() < 1e-15);
        let fp: Vec<u8> = preds.iter().map(|p| 1 - p).collect();
        let fl: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        prop_assert!((f_score(&preds, &labels).unwrap() - f_score(&fp, &fl).unwrap()).abs() < 1e-15);
        let f = f_score(&preds, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
    }
}
