#![allow(dead_code)]

use otesgn::ingest::{Example, Label, Sentence, Span};
use otesgn::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random tree: each node of a shuffled order hangs off an earlier one.
pub fn random_heads(rng: &mut ChaCha8Rng, n: usize) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let mut heads = vec![None; n];
    for k in 1..n {
        heads[order[k]] = Some(order[rng.gen_range(0..k)]);
    }
    heads
}

pub fn example(
    heads: Vec<Option<usize>>,
    aspect: (usize, usize),
    label: Label,
    dim: usize,
    rng: &mut ChaCha8Rng,
) -> Example {
    let n = heads.len();
    let tokens = (0..n).map(|i| format!("t{i}")).collect();
    let sentence = Sentence::new(
        tokens,
        heads,
        Span::new(aspect.0, aspect.1, n).unwrap(),
        label,
    )
    .unwrap();
    Example {
        sentence,
        embedding: Tensor::from_fn(n, dim, |_, _| rng.gen_range(-1.0..1.0)),
    }
}

/// Two 4-token sentences sharing a label.
pub fn four_token_pair(dim: usize, rng: &mut ChaCha8Rng) -> Vec<Example> {
    vec![
        example(
            vec![Some(1), None, Some(1), Some(2)],
            (1, 2),
            Label::Positive,
            dim,
            rng,
        ),
        example(
            vec![None, Some(0), Some(3), Some(0)],
            (2, 4),
            Label::Positive,
            dim,
            rng,
        ),
    ]
}
