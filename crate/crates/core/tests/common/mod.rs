#![allow(dead_code)]

use hitter_core::batch::{collate, Batch, Perturbation, QueryExample};
use hitter_core::kg::KnowledgeGraph;
use hitter_core::model::{Hitter, HitterConfig};
use hitter_tensor::{Mode, Scalar, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn named(v: &[(&str, &str, &str)]) -> Vec<(String, String, String)> {
    v.iter()
        .map(|(a, b, c)| (a.to_string(), b.to_string(), c.to_string()))
        .collect()
}

pub fn tiny_config() -> HitterConfig {
    HitterConfig {
        d_model: 8,
        ffn_dim: 16,
        heads: 2,
        entity_layers: 1,
        context_layers: 1,
        dropout: 0.0,
        embedding_dropout: 0.0,
        label_smoothing: 0.1,
        init_std: 0.5,
        ..HitterConfig::default()
    }
}

/// Nine entities, three relations, a few cycles.
pub fn toy_graph() -> KnowledgeGraph {
    let train = named(&[
        ("a", "r", "b"),
        ("b", "s", "c"),
        ("a", "t", "c"),
        ("c", "r", "d"),
        ("d", "s", "e"),
        ("e", "r", "f"),
        ("f", "t", "g"),
        ("g", "s", "h"),
        ("h", "r", "a"),
        ("i", "t", "b"),
        ("i", "r", "e"),
    ]);
    let valid = named(&[("b", "r", "d"), ("h", "s", "i")]);
    let test = named(&[("c", "t", "e")]);
    KnowledgeGraph::from_named(&train, &valid, &test).unwrap()
}

pub fn example(src: usize, predicate: usize, target: usize, neighbors: &[(usize, usize)], p: Perturbation) -> QueryExample {
    QueryExample {
        src,
        predicate,
        target,
        neighbors: neighbors.to_vec(),
        perturbation: p,
    }
}

pub fn eval_logits<T: Scalar>(model: &Hitter<T>, batch: &Batch) -> Tensor<T> {
    model.score_batch(batch).unwrap()
}

pub fn batch_of(model: &Hitter<f64>, xs: &[QueryExample], cap: usize) -> Batch {
    collate(xs, cap, model.mask_token()).unwrap()
}

pub fn total_loss(model: &Hitter<f64>, batch: &Batch) -> f64 {
    let tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model.loss(&tape, batch, Mode::Eval, &mut rng).unwrap();
    out.total.value().data()[0]
}

/// Sort-and-scan rank: position of the gold score's tie group among the
/// surviving candidates, averaged over the group.
pub fn rank_by_sorting(scores: &[f64], gold: usize, keep: &[bool]) -> f64 {
    let mut survivors: Vec<f64> = (0..scores.len()).filter(|&i| keep[i]).map(|i| scores[i]).collect();
    survivors.sort_by(|a, b| b.total_cmp(a));
    let g = scores[gold];
    let first = survivors.iter().position(|&s| s == g).unwrap() + 1;
    let last = survivors.iter().rposition(|&s| s == g).unwrap() + 1;
    (first + last) as f64 / 2.0
}

/// Random scores drawn from a small grid so ties are common.
pub fn random_case(rng: &mut impl Rng) -> (Vec<f64>, usize, Vec<bool>) {
    let n = rng.random_range(1..40);
    let levels = rng.random_range(1..8);
    let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.5).collect();
    let gold = rng.random_range(0..n);
    let mut keep: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
    keep[gold] = true;
    (scores, gold, keep)
}

/// Plain BFS over an undirected edge list.
pub fn bfs_hops(n: usize, edges: &[(usize, usize)], src: usize) -> Vec<Option<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut dist = vec![None; n];
    dist[src] = Some(0);
    let mut queue = std::collections::VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        let d = dist[u].unwrap();
        for &v in &adj[u] {
            if dist[v].is_none() {
                dist[v] = Some(d + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Finite differences on every scalar of every parameter, central, h = 1e-4.
pub fn gradient_errors(model: &Hitter<f64>, batch: &Batch) -> Vec<(String, f64)> {
    let analytic = {
        let tape = Tape::new();
        let out = model.loss(&tape, batch, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        tape.backward(out.total).unwrap().for_store(model.store())
    };
    let mut work = model.clone();
    let h = 1e-4;
    let mut errs = Vec::new();
    for (id, p) in model.store().iter() {
        let mut fd = vec![0.0; p.value().len()];
        for (j, slot) in fd.iter_mut().enumerate() {
            let orig = p.value().data()[j];
            work.store_mut().get_mut(id).value_mut().data_mut()[j] = orig + h;
            let up = total_loss(&work, batch);
            work.store_mut().get_mut(id).value_mut().data_mut()[j] = orig - h;
            let down = total_loss(&work, batch);
            work.store_mut().get_mut(id).value_mut().data_mut()[j] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        let a = analytic[id.0].data();
        let diff = a.iter().zip(&fd).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt() + fd.iter().map(|x| x * x).sum::<f64>().sqrt();
        // shift-invariant params (key biases) have exactly zero gradient
        errs.push((p.name.clone(), if scale < 1e-8 { diff } else { diff / scale }));
    }
    errs
}


/// Four queries over the toy graph covering every perturbation kind.
pub fn perturbed_toy_batch(g: &KnowledgeGraph, model: &Hitter<f64>) -> Batch {
    let n = |e| g.neighbors_of(e).unwrap().to_vec();
    let xs = vec![
        example(0, 0, 1, &n(0), Perturbation::Mask),
        example(1, 1, 2, &n(1), Perturbation::RandomReplace(6)),
        example(2, 2, 3, &n(2), Perturbation::Keep),
        example(4, 0, 5, &n(4)[..1], Perturbation::NotSelected),
    ];
    collate(&xs, 4, model.mask_token()).unwrap()
}
