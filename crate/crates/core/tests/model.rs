mod common;

use common::*;
use hitter_core::batch::Perturbation;
use hitter_core::model::{expected_param_count, Hitter, HitterConfig};
use hitter_tensor::{Mode, Tape, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

fn zero_model(cfg: HitterConfig) -> Hitter<f64> {
    let mut m = Hitter::<f64>::new(cfg, 4, 4, 0).unwrap();
    let ids: Vec<_> = m.store().iter().map(|(id, _)| id).collect();
    for id in ids {
        let p = m.store_mut().get_mut(id);
        let shape = p.value().shape().to_vec();
        *p.value_mut() = Tensor::zeros(&shape);
    }
    m
}

fn row(t: &Tensor<f64>, i: usize) -> Vec<f64> {
    t.row(i).to_vec()
}

fn param(m: &Hitter<f64>, name: &str) -> Tensor<f64> {
    m.store().get(m.store().find(name).unwrap()).value().clone()
}

#[test]
fn masked_and_plain_sources_pick_the_right_rows() {
    let m = Hitter::<f64>::new(tiny_config(), 5, 4, 3).unwrap();
    let tape = Tape::new();
    let x = m.embed_pairs(&tape, &[(2, 1), (m.mask_token(), 3)], Mode::Eval, &mut rng()).unwrap();
    let x = x.value();
    let ent = param(&m, "entity_embeddings");
    let mask = param(&m, "token.mask");
    let cls = param(&m, "token.cls");
    let rel = param(&m, "relation_embeddings");
    let ty = param(&m, "type.entity_block");
    let add = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<_>>();
    assert_eq!(row(&x, 0), add(cls.row(0), ty.row(0)));
    assert_eq!(row(&x, 1), add(ent.row(2), ty.row(1)));
    assert_eq!(row(&x, 2), add(rel.row(1), ty.row(2)));
    assert_eq!(row(&x, 4), add(mask.row(0), ty.row(1)));
    assert_eq!(row(&x, 5), add(rel.row(3), ty.row(2)));

    let z = zero_model(tiny_config());
    let tape = Tape::new();
    let x = z.embed_pairs(&tape, &[(1, 1)], Mode::Train, &mut rng()).unwrap();
    assert!(x.value().data().iter().all(|&v| v == 0.0));
    assert!(m.embed_pairs(&tape, &[(9, 0)], Mode::Eval, &mut rng()).is_err());
}

#[test]
fn pair_outputs_do_not_depend_on_batch_position() {
    let m = Hitter::<f64>::new(tiny_config(), 6, 4, 1).unwrap();
    let tape = Tape::new();
    let x = m
        .embed_pairs(&tape, &[(3, 1), (0, 0), (5, 2), (3, 1)], Mode::Eval, &mut rng())
        .unwrap();
    let out = m.entity_block_forward(&tape, x, Mode::Eval, &mut rng()).unwrap().value();
    assert_eq!(row(&out, 0), row(&out, 3));
    assert_ne!(row(&out, 0), row(&out, 1));
}

// plain fp64 reference of one pre-norm layer over a single pair
fn reference_pair(m: &Hitter<f64>, e: usize, r: usize) -> Vec<f64> {
    let cfg = m.config();
    let d = cfg.d_model;
    let p = |n: &str| param(m, n);
    let ln = |x: &[Vec<f64>], g: &Tensor<f64>, b: &Tensor<f64>| -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| {
                let mean = row.iter().sum::<f64>() / d as f64;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
                row.iter()
                    .enumerate()
                    .map(|(j, v)| (v - mean) / (var + cfg.layer_norm_eps).sqrt() * g.data()[j] + b.data()[j])
                    .collect()
            })
            .collect()
    };
    let dense = |x: &[Vec<f64>], name: &str| -> Vec<Vec<f64>> {
        let w = p(&format!("{name}.weight"));
        let b = p(&format!("{name}.bias"));
        let (i, o) = (w.shape()[0], w.shape()[1]);
        x.iter()
            .map(|row| (0..o).map(|c| b.data()[c] + (0..i).map(|k| row[k] * w.data()[k * o + c]).sum::<f64>()).collect())
            .collect()
    };
    let ty = p("type.entity_block");
    let tokens = [p("token.cls").row(0).to_vec(), p("entity_embeddings").row(e).to_vec(), p("relation_embeddings").row(r).to_vec()];
    let mut x: Vec<Vec<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(s, t)| t.iter().zip(ty.row(s)).map(|(a, b)| a + b).collect())
        .collect();
    let pre = "entity_encoder.layer0";
    let h = ln(&x, &p(&format!("{pre}.attn_norm.gain")), &p(&format!("{pre}.attn_norm.bias")));
    let (q, k, v) = (dense(&h, &format!("{pre}.attn.query")), dense(&h, &format!("{pre}.attn.key")), dense(&h, &format!("{pre}.attn.value")));
    let dh = d / cfg.heads;
    let mut att = vec![vec![0.0; d]; 3];
    for head in 0..cfg.heads {
        let cols = head * dh..(head + 1) * dh;
        for i in 0..3 {
            let s: Vec<f64> = (0..3)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let mx = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                att[i][c] = (0..3).map(|j| e[j] / z * v[j][c]).sum();
            }
        }
    }
    let o = dense(&att, &format!("{pre}.attn.out"));
    for i in 0..3 {
        for c in 0..d {
            x[i][c] += o[i][c];
        }
    }
    let h = ln(&x, &p(&format!("{pre}.ffn_norm.gain")), &p(&format!("{pre}.ffn_norm.bias")));
    let f = dense(&h, &format!("{pre}.ffn.in"));
    let gelu = |v: f64| 0.5 * v * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (v + 0.044715 * v.powi(3))).tanh());
    let f: Vec<Vec<f64>> = f.iter().map(|r| r.iter().map(|&v| gelu(v)).collect()).collect();
    let f = dense(&f, &format!("{pre}.ffn.out"));
    for i in 0..3 {
        for c in 0..d {
            x[i][c] += f[i][c];
        }
    }
    let out = ln(&x, &p("entity_encoder.final_norm.gain"), &p("entity_encoder.final_norm.bias"));
    out[0].clone()
}

#[test]
fn pair_encoder_matches_a_straight_line_reference() {
    let mut m = Hitter::<f64>::new(tiny_config(), 5, 4, 8).unwrap();
    // identity projections on top of random embeddings
    for name in ["query", "key", "value", "out"] {
        let id = m.store().find(&format!("entity_encoder.layer0.attn.{name}.weight")).unwrap();
        *m.store_mut().get_mut(id).value_mut() = Tensor::from_fn(&[8, 8], |i| if i % 9 == 0 { 1.0 } else { 0.0 });
    }
    let tape = Tape::new();
    let x = m.embed_pairs(&tape, &[(2, 3)], Mode::Eval, &mut rng()).unwrap();
    let got = m.entity_block_forward(&tape, x, Mode::Eval, &mut rng()).unwrap().value();
    let want = reference_pair(&m, 2, 3);
    for (g, w) in got.data().iter().zip(&want) {
        assert!((g - w).abs() < 1e-10, "{g} vs {w}");
    }
    // and with random projections
    let m = Hitter::<f64>::new(tiny_config(), 5, 4, 9).unwrap();
    let tape = Tape::new();
    let x = m.embed_pairs(&tape, &[(4, 0)], Mode::Eval, &mut rng()).unwrap();
    let got = m.entity_block_forward(&tape, x, Mode::Eval, &mut rng()).unwrap().value();
    for (g, w) in got.data().iter().zip(&reference_pair(&m, 4, 0)) {
        assert!((g - w).abs() < 1e-10);
    }
}

#[test]
fn no_neighbors_and_fully_padded_neighbors_agree() {
    let m = Hitter::<f64>::new(tiny_config(), 9, 6, 4).unwrap();
    let lone = example(0, 1, 2, &[], Perturbation::NotSelected);
    let busy = example(3, 0, 4, &[(2, 5), (1, 6), (0, 7)], Perturbation::NotSelected);
    let alone = eval_logits(&m, &batch_of(&m, std::slice::from_ref(&lone), 0));
    let padded = eval_logits(&m, &batch_of(&m, &[lone, busy], 5));
    for j in 0..9 {
        assert!((alone.row(0)[j] - padded.row(0)[j]).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn neighbor_order_and_padding_do_not_matter(seed in 0u64..1000) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let m = Hitter::<f64>::new(tiny_config(), 9, 6, seed).unwrap();
        let n = r.random_range(0..6);
        let neighbors: Vec<(usize, usize)> = (0..n).map(|_| (r.random_range(0..6), r.random_range(0..9))).collect();
        let mut shuffled = neighbors.clone();
        shuffled.shuffle(&mut r);
        let a = eval_logits(&m, &batch_of(&m, &[example(1, 2, 3, &neighbors, Perturbation::NotSelected)], n));
        let b = eval_logits(&m, &batch_of(&m, &[example(1, 2, 3, &shuffled, Perturbation::NotSelected)], n + 4));
        prop_assert!(a.max_abs_diff(&b) < 1e-10);
    }
}

#[test]
fn scores_are_dot_products_with_the_entity_table() {
    let m = Hitter::<f64>::new(tiny_config(), 7, 4, 2).unwrap();
    let tape = Tape::new();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let h = Tensor::<f64>::from_fn(&[3, 8], |_| r.random_range(-1.0..1.0));
    let logits = m.score_entities(&tape, &tape.constant(h.clone())).unwrap().value();
    let table = m.entity_table();
    for i in 0..3 {
        for e in 0..7 {
            let want: f64 = (0..8).map(|c| h.row(i)[c] * table.row(e)[c]).sum();
            assert!((logits.row(i)[e] - want).abs() < 1e-12);
        }
    }
    let zero = m.score_entities(&tape, &tape.constant(Tensor::zeros(&[1, 8]))).unwrap().value();
    assert!(zero.data().iter().all(|&v| v == 0.0));

    // orthonormal table: querying with row k selects k
    let mut o = Hitter::<f64>::new(tiny_config(), 8, 4, 2).unwrap();
    let id = o.entity_param();
    *o.store_mut().get_mut(id).value_mut() = Tensor::from_fn(&[8, 8], |i| if i % 9 == 0 { 1.0 } else { 0.0 });
    let q = Tensor::from_fn(&[1, 8], |i| if i == 5 { 1.0 } else { 0.0 });
    let tape = Tape::new();
    let l = o.score_entities(&tape, &tape.constant(q)).unwrap().value();
    let argmax = (0..8).max_by(|&a, &b| l.data()[a].total_cmp(&l.data()[b])).unwrap();
    assert_eq!(argmax, 5);
}

#[test]
fn link_prediction_loss_reference_values() {
    let cfg = HitterConfig {
        label_smoothing: 0.0,
        ..tiny_config()
    };
    let m = Hitter::<f64>::new(cfg, 4, 4, 0).unwrap();
    let tape = Tape::new();
    let uniform = tape.constant(Tensor::zeros(&[1, 14_541]));
    let l = m.lp_loss(&uniform, &[7]).unwrap().value().data()[0];
    assert!((l - 14_541f64.ln()).abs() < 1e-9);
    assert!((l - 9.585).abs() < 1e-3);
    let sharp = tape.constant(Tensor::from_fn(&[1, 5], |i| if i == 2 { 60.0 } else { 0.0 }));
    assert!(m.lp_loss(&sharp, &[2]).unwrap().value().data()[0] < 1e-20);
}

#[test]
fn recovery_loss_is_selected_rows_only() {
    let m = Hitter::<f64>::new(tiny_config(), 6, 4, 5).unwrap();
    let tape = Tape::new();
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let t_src = Tensor::<f64>::from_fn(&[3, 8], |_| r.random_range(-1.0..1.0));
    let v = tape.constant(t_src.clone());
    assert!(m.mep_loss(&tape, &v, &[0, 1, 2], &[false; 3]).unwrap().is_none());

    let got = m.mep_loss(&tape, &v, &[0, 4, 2], &[false, true, false]).unwrap().unwrap();
    let got = got.value().data()[0];
    let table = m.entity_table();
    let logits: Vec<f64> = (0..6).map(|e| (0..8).map(|c| t_src.row(1)[c] * table.row(e)[c]).sum()).collect();
    let lse = logits.iter().map(|z| z.exp()).sum::<f64>().ln();
    let eps = m.config().label_smoothing;
    let want: f64 = (0..6)
        .map(|e| {
            let q = eps / 6.0 + if e == 4 { 1.0 - eps } else { 0.0 };
            -q * (logits[e] - lse)
        })
        .sum();
    assert!((got - want).abs() < 1e-12, "{got} vs {want}");

    let off = Hitter::<f64>::new(
        HitterConfig {
            mep_aux_enabled: false,
            ..tiny_config()
        },
        6,
        4,
        5,
    )
    .unwrap();
    assert!(off.mep_loss(&tape, &v, &[0, 4, 2], &[true; 3]).unwrap().is_none());
}

#[test]
fn entity_table_is_one_tensor_for_lookup_and_both_heads() {
    let mut m = Hitter::<f64>::new(tiny_config(), 6, 4, 7).unwrap();
    let b = batch_of(&m, &[example(1, 0, 2, &[(3, 4)], Perturbation::Keep)], 1);
    let before = eval_logits(&m, &b);
    let loss_before = total_loss(&m, &b);
    let id = m.entity_param();
    // change only an entity that appears nowhere in the input
    m.store_mut().get_mut(id).value_mut().data_mut()[5 * 8] += 1.0;
    let after = eval_logits(&m, &b);
    assert_ne!(before.row(0)[5], after.row(0)[5]);
    assert_eq!(before.row(0)[0], after.row(0)[0]);
    assert_ne!(loss_before, total_loss(&m, &b));

    // and one that is only an input
    let mut m2 = Hitter::<f64>::new(tiny_config(), 6, 4, 7).unwrap();
    m2.store_mut().get_mut(id).value_mut().data_mut()[4 * 8] += 1.0;
    assert_ne!(eval_logits(&m2, &b).row(0)[0], before.row(0)[0]);
}

#[test]
fn output_width_is_the_entity_count() {
    let m = Hitter::<f64>::new(HitterConfig { context_enabled: false, ..tiny_config() }, 11, 4, 0).unwrap();
    let xs: Vec<_> = (0..5).map(|i| example(i, 1, 0, &[(0, 3)], Perturbation::NotSelected)).collect();
    let l = eval_logits(&m, &batch_of(&m, &xs, 1));
    assert_eq!(l.shape(), &[5, 11]);
}

#[test]
fn benchmark_sized_configs_land_near_published_sizes() {
    let cfg = HitterConfig::default();
    let fb = expected_param_count(&cfg, 14_541, 2 * 237);
    let wn = expected_param_count(&cfg, 40_943, 2 * 11);
    assert!((fb as f64 / 16e6 - 1.0).abs() <= 0.2, "{fb}");
    assert!((wn as f64 / 24e6 - 1.0).abs() <= 0.2, "{wn}");
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let g = toy_graph();
    let cfg = HitterConfig {
        mep_transform: true,
        ..tiny_config()
    };
    let m = Hitter::<f64>::new(cfg, g.vocab().num_entities(), g.vocab().num_relations(), 13).unwrap();
    let b = perturbed_toy_batch(&g, &m);
    for (name, err) in gradient_errors(&m, &b) {
        println!("{name}: {err:.2e}");
        assert!(err < 1e-3, "{name}: relative error {err}");
    }
}

#[test]
fn baseline_is_the_full_model_minus_the_context_block() {
    let full = Hitter::<f64>::new(tiny_config(), 6, 4, 0).unwrap();
    let base = Hitter::<f64>::new(HitterConfig { context_enabled: false, ..tiny_config() }, 6, 4, 0).unwrap();
    let names = |m: &Hitter<f64>| m.store().iter().map(|(_, p)| p.name.clone()).collect::<Vec<_>>();
    let (f, b) = (names(&full), names(&base));
    assert_eq!(&f[..b.len()], &b[..]);
    assert!(f[b.len()..].iter().all(|n| n.starts_with("context_encoder") || n == "token.gcls" || n == "type.context_block"));
    // same seed, same shared weights
    for (x, y) in full.store().values().iter().zip(base.store().values()) {
        assert_eq!(x.data(), y.data());
    }
}
