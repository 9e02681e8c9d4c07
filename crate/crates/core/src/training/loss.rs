use log::warn;

use crate::error::{Error, Result};
use crate::ingest::Label;
use crate::tensor::{Tensor, Var, LOG_FLOOR, MASK_SENTINEL};

/// `-ln p(gold)`, with `p(gold)` floored at [`LOG_FLOOR`].
pub fn cross_entropy(probs: &[f64], gold: Label) -> f64 {
    -probs[gold.index()].max(LOG_FLOOR).ln()
}

/// `-log softmax(logits)[gold]` on the tape.
pub fn cross_entropy_from_logits<'t>(logits: Var<'t>, gold: Label) -> Result<Var<'t>> {
    let (_, c) = logits.shape();
    let pick = Tensor::from_fn(1, c, |_, j| if j == gold.index() { -1.0 } else { 0.0 });
    Ok(logits
        .log_softmax_rows(None)?
        .mul(logits.tape().constant(pick))?
        .sum())
}

/// Supervised contrastive loss over `K×d` pooled vectors.
///
/// For every anchor with at least one same-label partner, averages
/// `-log(exp(sim(i,p)/τ) / Σ_{j≠i} exp(sim(i,j)/τ))` over its partners `p`;
/// the result is the mean over such anchors. Similarity is cosine.
pub fn contrastive_loss<'t>(pools: Var<'t>, labels: &[Label], temperature: f64) -> Result<Var<'t>> {
    let (k, _) = pools.shape();
    if k != labels.len() {
        return Err(Error::Contract(format!(
            "{k} pooled vectors for {} labels",
            labels.len()
        )));
    }
    if k < 2 {
        return Err(Error::Contract(
            "contrastive loss needs a batch of at least 2".into(),
        ));
    }
    if !(temperature > 0.0) {
        return Err(Error::Contract("temperature must be positive".into()));
    }
    let tape = pools.tape();
    let positives: Vec<Vec<usize>> = (0..k)
        .map(|i| {
            (0..k)
                .filter(|&j| j != i && labels[j] == labels[i])
                .collect()
        })
        .collect();
    let anchors = positives.iter().filter(|p| !p.is_empty()).count();
    if anchors == 0 {
        warn!("contrastive loss: batch of {k} has no anchor with a positive; returning 0");
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let mut weights = Tensor::zeros(k, k);
    for (i, pos) in positives.iter().enumerate() {
        for &p in pos {
            weights[(i, p)] = -1.0 / (pos.len() * anchors) as f64;
        }
    }
    let self_mask = Tensor::from_fn(k, k, |i, j| if i == j { MASK_SENTINEL } else { 0.0 });
    let unit = pools.normalize_rows()?;
    let logits = unit.matmul(unit.transpose())?.scale(1.0 / temperature);
    Ok(logits
        .log_softmax_rows(Some(&self_mask))?
        .mul(tape.constant(weights))?
        .sum())
}

/// `ce + λ·cl`.
pub fn total_loss<'t>(ce: Var<'t>, cl: Var<'t>, lambda: f64) -> Result<Var<'t>> {
    if !(lambda >= 0.0) {
        return Err(Error::Contract("lambda must be non-negative".into()));
    }
    ce.add(cl.scale(lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Tape};
    use proptest::prelude::*;
    use Label::*;

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[1.0, 0.0, 0.0], Positive), 0.0);
        let third = 1.0 / 3.0;
        assert!((cross_entropy(&[third; 3], Neutral) - 3f64.ln()).abs() < 1e-15);
        assert!((cross_entropy(&[0.25, 0.5, 0.25], Negative) - 2f64.ln()).abs() < 1e-15);
        assert!((cross_entropy(&[1.0, 0.0, 0.0], Neutral) - 300.0 * 10f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn logits_route_matches_probability_route() {
        let tape = Tape::new();
        let logits = tape.constant(Tensor::row(&[0.2, -1.3, 2.1]));
        let probs = logits.softmax_rows(None).unwrap().value();
        for gold in Label::ALL {
            let a = cross_entropy_from_logits(logits, gold).unwrap().item();
            assert!((a - cross_entropy(probs.data(), gold)).abs() < 1e-14);
        }
    }

    #[test]
    fn contrastive_pair_examples() {
        let tape = Tape::new();
        let same = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap());
        let v = contrastive_loss(same, &[Positive, Positive], 0.1)
            .unwrap()
            .item();
        assert!(v.abs() < 1e-12);
        let v = contrastive_loss(same, &[Positive, Negative], 0.1)
            .unwrap()
            .item();
        assert_eq!(v, 0.0);
        let one = tape.constant(Tensor::row(&[1.0, 0.0]));
        assert!(contrastive_loss(one, &[Positive], 0.1).is_err());
    }

    /// Direct evaluation of the loss definition.
    fn oracle(vectors: &[Vec<f64>], labels: &[Label], tau: f64) -> f64 {
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let k = vectors.len();
        let mut total = 0.0;
        let mut anchors = 0;
        for i in 0..k {
            let pos: Vec<usize> = (0..k)
                .filter(|&j| j != i && labels[j] == labels[i])
                .collect();
            if pos.is_empty() {
                continue;
            }
            anchors += 1;
            let denom: f64 = (0..k)
                .filter(|&j| j != i)
                .map(|j| (cos(&vectors[i], &vectors[j]) / tau).exp())
                .sum();
            let term: f64 = pos
                .iter()
                .map(|&p| -((cos(&vectors[i], &vectors[p]) / tau).exp() / denom).ln())
                .sum::<f64>()
                / pos.len() as f64;
            total += term;
        }
        if anchors == 0 {
            0.0
        } else {
            total / anchors as f64
        }
    }

    #[test]
    fn three_sample_example_matches_direct_formula() {
        let vectors = vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![0.0, 3.0]];
        let labels = [Positive, Positive, Negative];
        let anchor_term = -(10f64.exp() / (10f64.exp() + 1.0)).ln();
        assert!((anchor_term - 4.54e-5).abs() < 1e-7);
        // Both A-labelled anchors contribute the same term; the B anchor has no positive.
        let expected = oracle(&vectors, &labels, 0.1);
        assert!((expected - anchor_term).abs() < 1e-15);

        let tape = Tape::new();
        let pools = tape.constant(Tensor::from_rows(&vectors).unwrap());
        let got = contrastive_loss(pools, &labels, 0.1).unwrap().item();
        assert!((got - expected).abs() < 1e-15, "{got} vs {expected}");
    }

    #[test]
    fn zero_when_classes_collapse_and_oppose() {
        let tape = Tape::new();
        let pools = tape.constant(
            Tensor::from_rows(&[
                vec![1.0, 1.0],
                vec![2.0, 2.0],
                vec![-1.0, -1.0],
                vec![-3.0, -3.0],
            ])
            .unwrap(),
        );
        let v = contrastive_loss(pools, &[Positive, Positive, Negative, Negative], 0.1)
            .unwrap()
            .item();
        // Each anchor keeps the residue ln(1 + 2e^-20) from its two opposite negatives.
        let residue = (2.0 * (-20f64).exp()).ln_1p();
        assert!((v - residue).abs() < 1e-15, "{v}");
        assert!(v < 1e-8);
    }

    #[test]
    fn total_loss_examples() {
        let tape = Tape::new();
        let ce = tape.constant(Tensor::scalar(1.0));
        let cl = tape.constant(Tensor::scalar(2.0));
        assert!((total_loss(ce, cl, 0.1).unwrap().item() - 1.2).abs() < 1e-15);
        assert_eq!(total_loss(ce, cl, 0.0).unwrap().item(), 1.0);
        assert!(total_loss(ce, cl, -0.1).is_err());
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        let pools = Tensor::from_fn(5, 3, |i, j| ((i * 3 + j * 7) % 11) as f64 * 0.2 - 0.9);
        let labels = [Positive, Negative, Positive, Neutral, Negative];
        let err = grad_check(|_, v| contrastive_loss(v[0], &labels, 0.5), &[pools], 1e-6).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    proptest! {
        #[test]
        fn contrastive_matches_oracle_and_is_nonnegative(
            vals in proptest::collection::vec(-2.0f64..2.0, 6 * 3),
            labs in proptest::collection::vec(0usize..3, 6),
            tau in 0.05f64..1.0,
        ) {
            let vectors: Vec<Vec<f64>> = vals.chunks(3).map(|c| c.to_vec()).collect();
            prop_assume!(vectors.iter().all(|v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6));
            let labels: Vec<Label> = labs.iter().map(|&l| Label::from_index(l).unwrap()).collect();
            let tape = Tape::new();
            let pools = tape.constant(Tensor::from_rows(&vectors).unwrap());
            let got = contrastive_loss(pools, &labels, tau).unwrap().item();
            let want = oracle(&vectors, &labels, tau);
            prop_assert!(got >= 0.0);
            prop_assert!((got - want).abs() < 1e-9 * want.abs().max(1.0));
        }
    }
}
