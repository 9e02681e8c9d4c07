//! Channel fusion, residual propagation over the fused graph, aspect pooling
//! and the polarity classifier.

use crate::dropout::Dropout;
use crate::error::{Error, Result};
use crate::ingest::Span;
use crate::tensor::{mean_of, Axis, Tensor, Var};

pub const NUM_CLASSES: usize = 3;

/// Replicates an `n×1` column across `n` columns.
pub fn broadcast_ot(a_ot: Var<'_>) -> Result<Var<'_>> {
    let (n, c) = a_ot.shape();
    if c != 1 {
        return Err(Error::Dimension {
            op: "broadcast_ot",
            left: (n, c),
            right: (n, 1),
        });
    }
    a_ot.matmul(a_ot.tape().constant(Tensor::ones(1, n)))
}

/// `β·A_SG + (1-β)·A_OT` for each head; `beta` is `1×1`.
pub fn fuse_heads<'t>(
    a_sg: &[Var<'t>],
    a_ot_mat: &[Var<'t>],
    beta: Var<'t>,
) -> Result<Vec<Var<'t>>> {
    if a_sg.len() != a_ot_mat.len() {
        return Err(Error::Contract(format!(
            "{} syntactic heads but {} transport heads",
            a_sg.len(),
            a_ot_mat.len()
        )));
    }
    let complement = beta.affine(-1.0, 1.0);
    a_sg.iter()
        .zip(a_ot_mat)
        .map(|(sg, ot)| sg.mul(beta)?.add(ot.mul(complement)?))
        .collect()
}

pub fn average_heads<'t>(heads: &[Var<'t>]) -> Result<Var<'t>> {
    mean_of(heads)
}

/// Divides each row by its sum.
pub fn row_normalize(a: Var<'_>) -> Result<Var<'_>> {
    a.div(a.sum_axis(Axis::Cols))
}

/// `h^l = h^{l-1} + drop(relu(A h^{l-1} + b^l))` for each bias in `biases`.
pub fn propagate<'t>(
    a: Var<'t>,
    h0: Var<'t>,
    biases: &[Var<'t>],
    mut dropout: Option<&mut Dropout>,
) -> Result<Var<'t>> {
    if biases.is_empty() {
        return Err(Error::Contract("at least one layer is required".into()));
    }
    let tape = a.tape();
    let mut h = h0;
    for &b in biases {
        let mut branch = a.matmul(h)?.add(b)?.relu();
        if let Some(drop) = dropout.as_deref_mut() {
            if drop.rate > 0.0 {
                let (r, c) = branch.shape();
                branch = branch.mul(tape.constant(drop.scaled_mask(r, c)))?;
            }
        }
        h = h.add(branch)?;
    }
    Ok(h)
}

/// Mean of the aspect rows of the final hidden states.
pub fn aspect_pool(h: Var<'_>, span: Span) -> Result<Var<'_>> {
    h.mean_rows(span.start, span.end)
}

pub fn classifier_logits<'t>(pool: Var<'t>, w_p: Var<'t>, b_p: Var<'t>) -> Result<Var<'t>> {
    pool.matmul(w_p)?.add(b_p)
}

/// Polarity distribution `softmax(pool W_p + b_p)`.
pub fn classify<'t>(pool: Var<'t>, w_p: Var<'t>, b_p: Var<'t>) -> Result<Var<'t>> {
    classifier_logits(pool, w_p, b_p)?.softmax_rows(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Tape};
    use proptest::prelude::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn broadcast_examples() {
        let tape = Tape::new();
        let b = broadcast_ot(tape.constant(Tensor::column(&[0.2, 0.8])))
            .unwrap()
            .value();
        assert_eq!(b, t(&[vec![0.2, 0.2], vec![0.8, 0.8]]));
        let u = broadcast_ot(tape.constant(Tensor::full(4, 1, 0.25)))
            .unwrap()
            .value();
        assert_eq!(u, Tensor::full(4, 4, 0.25));
        for i in 0..2 {
            assert!((b.row_slice(i).iter().sum::<f64>() - 2.0 * [0.2, 0.8][i]).abs() < 1e-15);
        }
    }

    #[test]
    fn fuse_examples() {
        let tape = Tape::new();
        let sg = tape.constant(Tensor::identity(2));
        let ot = tape.constant(t(&[vec![0.2, 0.2], vec![0.8, 0.8]]));
        let at = |beta: f64| {
            fuse_heads(&[sg], &[ot], tape.constant(Tensor::scalar(beta))).unwrap()[0].value()
        };
        assert_eq!(at(1.0), Tensor::identity(2));
        assert_eq!(at(0.0), ot.value());
        let half = at(0.5);
        assert!(half.max_abs_diff(&t(&[vec![0.6, 0.1], vec![0.4, 0.9]])) < 1e-15);
    }

    #[test]
    fn average_examples() {
        let tape = Tape::new();
        let x = tape.constant(t(&[vec![0.3, 0.7], vec![0.1, 0.9]]));
        assert_eq!(average_heads(&[x]).unwrap().value(), x.value());
        let eye = tape.constant(Tensor::identity(2));
        let zero = tape.constant(Tensor::zeros(2, 2));
        let avg = average_heads(&[eye, zero]).unwrap().value();
        assert_eq!(avg, t(&[vec![0.5, 0.0], vec![0.0, 0.5]]));
    }

    #[test]
    fn averaging_commutes_with_shared_beta_fusion() {
        let tape = Tape::new();
        let sg: Vec<_> = (0..3)
            .map(|k| tape.constant(Tensor::from_fn(3, 3, |i, j| ((i + j + k) % 4) as f64 * 0.1)))
            .collect();
        let ot: Vec<_> = (0..3)
            .map(|k| tape.constant(Tensor::from_fn(3, 3, |i, _| (i * k) as f64 * 0.05)))
            .collect();
        let beta = tape.constant(Tensor::scalar(0.37));
        let lhs = average_heads(&fuse_heads(&sg, &ot, beta).unwrap())
            .unwrap()
            .value();
        let rhs = fuse_heads(
            &[average_heads(&sg).unwrap()],
            &[average_heads(&ot).unwrap()],
            beta,
        )
        .unwrap()[0]
            .value();
        assert!(lhs.max_abs_diff(&rhs) < 1e-15);
    }

    #[test]
    fn propagate_examples() {
        let tape = Tape::new();
        let h0 = tape.constant(Tensor::from_fn(3, 2, |i, j| (i + j) as f64 * 0.5));
        let zero_b: Vec<_> = (0..4).map(|_| tape.constant(Tensor::zeros(1, 2))).collect();
        let a0 = tape.constant(Tensor::zeros(3, 3));
        assert_eq!(
            propagate(a0, h0, &zero_b, None).unwrap().value(),
            h0.value()
        );

        let eye = tape.constant(Tensor::identity(3));
        let h1 = propagate(eye, h0, &zero_b[..1], None).unwrap().value();
        assert_eq!(h1, h0.value().map(|v| 2.0 * v));
    }

    #[test]
    fn propagate_grad_check_six_layers() {
        let a = Tensor::from_fn(4, 4, |i, j| if (i + j) % 3 == 0 { 0.4 } else { 0.15 });
        let h0 = Tensor::from_fn(4, 3, |i, j| ((i * 3 + j) % 5) as f64 * 0.3 - 0.55);
        let mut params = vec![a, h0];
        for l in 0..6 {
            params.push(Tensor::from_fn(1, 3, |_, j| {
                0.05 * (l as f64) - 0.1 * j as f64 + 0.02
            }));
        }
        let err = grad_check(
            |tape, v| {
                let h = propagate(v[0], v[1], &v[2..], None)?;
                let w = tape.constant(Tensor::from_fn(4, 3, |i, j| (i as f64) - 0.7 * j as f64));
                Ok(h.mul(w)?.sum())
            },
            &params,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn pool_examples() {
        let tape = Tape::new();
        let h = tape.constant(t(&[vec![2.0, 0.0], vec![0.0, 2.0], vec![0.0, 2.0]]));
        let pool = |s, e| aspect_pool(h, Span { start: s, end: e }).unwrap().value();
        assert_eq!(pool(0, 1).data(), &[2.0, 0.0]);
        assert_eq!(pool(1, 3).data(), &[0.0, 2.0]);
        assert_eq!(pool(0, 2).data(), &[1.0, 1.0]);
    }

    #[test]
    fn classify_examples() {
        let tape = Tape::new();
        let pool = tape.constant(Tensor::row(&[0.3, -1.0]));
        let w0 = tape.constant(Tensor::zeros(2, 3));
        let p = classify(pool, w0, tape.constant(Tensor::zeros(1, 3)))
            .unwrap()
            .value();
        assert!(p.data().iter().all(|&x| (x - 1.0 / 3.0).abs() < 1e-15));
        let p = classify(pool, w0, tape.constant(Tensor::row(&[1e9, 0.0, 0.0])))
            .unwrap()
            .value();
        assert!((p.data()[0] - 1.0).abs() < 1e-12);
        let p = classify(pool, w0, tape.constant(Tensor::row(&[1.0, 2.0, 3.0])))
            .unwrap()
            .value();
        for (got, want) in p.data().iter().zip([0.0900, 0.2447, 0.6652]) {
            assert!((got - want).abs() < 5e-5);
        }
    }

    proptest! {
        #[test]
        fn fused_nonnegative_and_endpoints_exact(
            sg in proptest::collection::vec(0.0f64..1.0, 9),
            ot in proptest::collection::vec(0.0f64..1.0, 3),
            beta in 0.0f64..=1.0,
        ) {
            let tape = Tape::new();
            let a_sg = tape.constant(Tensor::new(3, 3, sg).unwrap());
            let a_ot = broadcast_ot(tape.constant(Tensor::column(&ot))).unwrap();
            let fused = fuse_heads(&[a_sg], &[a_ot], tape.constant(Tensor::scalar(beta))).unwrap();
            prop_assert!(fused[0].value().data().iter().all(|&x| x >= 0.0));
            let one = fuse_heads(&[a_sg], &[a_ot], tape.constant(Tensor::scalar(1.0))).unwrap();
            prop_assert_eq!(one[0].value(), a_sg.value());
            let zero = fuse_heads(&[a_sg], &[a_ot], tape.constant(Tensor::scalar(0.0))).unwrap();
            prop_assert_eq!(zero[0].value(), a_ot.value());
        }

        #[test]
        fn classify_is_a_distribution(vals in proptest::collection::vec(-20.0f64..20.0, 4 + 12 + 3)) {
            let tape = Tape::new();
            let pool = tape.constant(Tensor::row(&vals[..4]));
            let w = tape.constant(Tensor::new(4, 3, vals[4..16].to_vec()).unwrap());
            let b = tape.constant(Tensor::row(&vals[16..]));
            let p = classify(pool, w, b).unwrap().value();
            prop_assert!((p.sum() - 1.0).abs() < 1e-12);
            prop_assert!(p.data().iter().all(|&x| x >= 0.0));
        }
    }
}
