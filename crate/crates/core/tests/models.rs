mod common;

use common::*;
use medcode::models::{
    adamw_update, forward, forward_masked, lr_schedule, predict_sequences, AdamW, Decoder, DecoderParams, Encoder,
    EncoderParams, ModelConfig, Parameters, TrainedModel, Vocabulary,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(encoder: Encoder, decoder: Decoder, d_e: usize) -> ModelConfig {
    ModelConfig {
        vocab_size: 30,
        d_e,
        encoder,
        decoder,
        n_labels: 3,
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Label-wise attention readout computed with explicit loops.
fn attend(h: &[Vec<f64>], scores: &[Vec<f64>], out_w: &[Vec<f64>], out_b: &[f64]) -> Vec<f64> {
    let (d_h, n) = (h.len(), h[0].len());
    (0..scores.len())
        .map(|l| {
            let max = scores[l].iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = scores[l].iter().map(|s| (s - max).exp()).collect();
            let z: f64 = e.iter().sum();
            let v: Vec<f64> = (0..d_h).map(|i| (0..n).map(|t| h[i][t] * e[t] / z).sum()).collect();
            (0..d_h).map(|i| out_w[l][i] * v[i]).sum::<f64>() + out_b[l]
        })
        .collect()
}

fn mat(a: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[test]
fn conv_caml_logits_match_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let cfg = config(Encoder::Conv { window: 3, d_h: 4 }, Decoder::LaCaml, 5);
    let p = Parameters::init(&cfg, &mut rng).unwrap();
    let tokens: Vec<usize> = (0..8).map(|_| rng.gen_range(0..30)).collect();
    let emb = mat(&p.embedding);
    let (EncoderParams::Conv { weight, bias }, DecoderParams::LaCaml { queries }) = (&p.encoder, &p.decoder) else {
        unreachable!()
    };
    let (w, q) = (mat(weight), mat(queries));
    let n = tokens.len();
    let h: Vec<Vec<f64>> = (0..4)
        .map(|i| {
            (0..n)
                .map(|t| {
                    let mut a = bias[i];
                    for j in 0..3 {
                        let src = t as isize + j as isize - 1;
                        if src >= 0 && (src as usize) < n {
                            for e in 0..5 {
                                a += w[i][j * 5 + e] * emb[tokens[src as usize]][e];
                            }
                        }
                    }
                    a.tanh()
                })
                .collect()
        })
        .collect();
    let scores: Vec<Vec<f64>> = (0..3)
        .map(|l| (0..n).map(|t| (0..4).map(|i| q[l][i] * h[i][t]).sum()).collect())
        .collect();
    let want = attend(&h, &scores, &mat(&p.out_weight), p.out_bias.as_slice().unwrap());
    let trace = forward(&p, &cfg, &tokens).unwrap();
    for l in 0..3 {
        assert!((trace.logits[l] - want[l]).abs() < 1e-9);
        assert!((trace.probabilities[l] - sigmoid(want[l])).abs() < 1e-9);
    }
}

#[test]
fn bag_laat_logits_match_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let cfg = config(Encoder::Bag, Decoder::LaLaat { d_p: 3 }, 4);
    let p = Parameters::init(&cfg, &mut rng).unwrap();
    let tokens: Vec<usize> = (0..8).map(|_| rng.gen_range(0..30)).collect();
    let emb = mat(&p.embedding);
    let DecoderParams::LaLaat { projection, queries } = &p.decoder else { unreachable!() };
    let (pr, u) = (mat(projection), mat(queries));
    let n = tokens.len();
    let h: Vec<Vec<f64>> = (0..4).map(|i| tokens.iter().map(|&tok| emb[tok][i]).collect()).collect();
    let z: Vec<Vec<f64>> = (0..3)
        .map(|k| (0..n).map(|t| (0..4).map(|i| pr[k][i] * h[i][t]).sum::<f64>().tanh()).collect())
        .collect();
    let scores: Vec<Vec<f64>> = (0..3)
        .map(|l| (0..n).map(|t| (0..3).map(|k| u[l][k] * z[k][t]).sum()).collect())
        .collect();
    let want = attend(&h, &scores, &mat(&p.out_weight), p.out_bias.as_slice().unwrap());
    let trace = forward(&p, &cfg, &tokens).unwrap();
    for l in 0..3 {
        assert!((trace.logits[l] - want[l]).abs() < 1e-9);
    }
    assert_eq!(trace.z.unwrap().dim(), (3, 8));
}

#[test]
fn shapes_hold_across_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for (encoder, d_h) in [(Encoder::Bag, 6), (Encoder::Conv { window: 2, d_h: 5 }, 5), (Encoder::BiRnn { d_h: 4 }, 4)] {
        for decoder in [Decoder::MaxPool, Decoder::LaCaml, Decoder::LaLaat { d_p: 2 }] {
            let cfg = ModelConfig { n_labels: 4, ..config(encoder, decoder, 6) };
            let p = Parameters::init(&cfg, &mut rng).unwrap();
            for n in [1, 2, 7] {
                let tokens: Vec<usize> = (0..n).map(|_| rng.gen_range(0..30)).collect();
                let t = forward(&p, &cfg, &tokens).unwrap();
                assert_eq!(t.h.dim(), (d_h, n));
                assert_eq!(t.v.dim(), (d_h, 4));
                assert_eq!(t.logits.len(), 4);
                if let Some(a) = &t.attention {
                    assert_eq!(a.dim(), (4, n));
                }
                assert!(t.probabilities.iter().all(|&x| x > 0.0 && x < 1.0));
                let mut longer = tokens.clone();
                longer.push(tokens[0]);
                let t2 = forward(&p, &cfg, &longer).unwrap();
                assert_eq!(t2.h.dim(), (d_h, n + 1));
                assert_eq!(t2.logits.len(), 4);
            }
        }
    }
}

#[test]
fn attention_is_normalized_with_padding() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for decoder in [Decoder::LaCaml, Decoder::LaLaat { d_p: 3 }] {
        let cfg = config(Encoder::BiRnn { d_h: 4 }, decoder, 5);
        let p = Parameters::init(&cfg, &mut rng).unwrap();
        let tokens: Vec<usize> = (0..9).map(|_| rng.gen_range(0..30)).collect();
        let mask: Vec<bool> = (0..9).map(|t| t < 6).collect();
        let a = forward_masked(&p, &cfg, &tokens, &mask, None).unwrap().attention.unwrap();
        for row in a.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().skip(6).all(|&x| x == 0.0));
        }
    }
}

#[test]
fn adamw_follows_scalar_reference() {
    let want = adamw_scalar_trace(0.5, 0.1, 0.01, 10);
    let (mut p, mut m, mut v) = ([0.5], [0.0], [0.0]);
    for (t, w) in want.iter().enumerate() {
        let g = 2.0 * (p[0] - 3.0);
        adamw_update(&mut p, &[g], &mut m, &mut v, t as u64 + 1, 0.1, 0.01);
        assert!((p[0] - w).abs() < 1e-12);
    }
}

#[test]
fn optimizer_rejects_non_finite_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let cfg = config(Encoder::Bag, Decoder::MaxPool, 4);
    let mut p = Parameters::init(&cfg, &mut rng).unwrap();
    let before = p.clone();
    let mut g = p.zeros_like();
    g.out_bias[1] = f64::NAN;
    let mut opt = AdamW::new(&p);
    assert!(opt.step(&mut p, &g, 0.1, 0.0).unwrap_err().is_numeric());
    assert_eq!(p, before);
    let g = p.zeros_like();
    opt.step(&mut p, &g, 0.1, 0.0).unwrap();
    assert_eq!(p, before);
}

#[test]
fn schedule_peaks_and_decays() {
    assert_eq!(lr_schedule(0, 50, 5, 0.3).unwrap(), 0.0);
    assert_eq!(lr_schedule(5, 50, 5, 0.3).unwrap(), 0.3);
    assert_eq!(lr_schedule(50, 50, 5, 0.3).unwrap(), 0.0);
    assert_eq!(lr_schedule(3, 50, 0, 0.3).unwrap(), 0.3 * 47.0 / 50.0);
    assert!(lr_schedule(0, 5, 5, 0.3).is_err());
}

#[test]
fn saved_models_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    let cfg = config(Encoder::BiRnn { d_h: 4 }, Decoder::LaLaat { d_p: 2 }, 3);
    let model = TrainedModel {
        config: cfg,
        vocab: Vocabulary::from_tokens((0..30).map(|i| format!("w{i}")).collect()),
        codes: vec!["A".into(), "B".into(), "C".into()],
        max_words: 100,
        boundary: 0.37,
        params: Parameters::init(&cfg, &mut rng).unwrap(),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    model.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], b"MDCPARAM");
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
    let loaded = TrainedModel::load(&path).unwrap();
    assert_eq!(loaded, model);
    assert_eq!(loaded.vocab.get("w7"), Some(7));

    std::fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
    assert!(TrainedModel::load(&path).is_err());
    std::fs::write(&path, b"not a model").unwrap();
    assert!(TrainedModel::load(&path).is_err());
}

#[test]
fn batch_size_does_not_change_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let cfg = config(Encoder::Conv { window: 3, d_h: 4 }, Decoder::LaCaml, 5);
    let p = Parameters::init(&cfg, &mut rng).unwrap();
    let seqs: Vec<Vec<usize>> = (0..11)
        .map(|_| (0..rng.gen_range(1..15)).map(|_| rng.gen_range(0..30)).collect())
        .collect();
    let one = predict_sequences(&p, &cfg, &seqs, 1).unwrap();
    for b in [2, 4, 11, 50] {
        assert_eq!(predict_sequences(&p, &cfg, &seqs, b).unwrap(), one);
    }
}
