//! Semantic optimal-transport attention.
//!
//! Context tokens form the source distribution `μ`, the pooled aspect the
//! target `ν`, and the transport cost is cosine distance to the aspect center.
//! The entropic plan is computed by Sinkhorn scaling, unrolled on the tape so
//! gradients reach `μ` through every iteration.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ingest::Span;
use crate::tensor::{cosine_to_vector, Axis, Tape, Tensor, Var};

/// Smallest admissible entry of `K v` or `Kᵀ u`.
pub const UNDERFLOW_GUARD: f64 = 1e-300;

pub const DEFAULT_MAX_ITERS: usize = 50;
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OtMode {
    /// The converged Sinkhorn plan.
    Strict,
    /// `μ ⊙ exp(-cost/ε)`, renormalized: one scaling half-step.
    #[default]
    CostAware,
}

impl OtMode {
    pub fn as_str(self) -> &'static str {
        match self {
            OtMode::Strict => "strict",
            OtMode::CostAware => "cost_aware",
        }
    }
}

impl fmt::Display for OtMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OtMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(OtMode::Strict),
            "cost_aware" => Ok(OtMode::CostAware),
            other => Err(Error::Config(format!("unknown ot_mode `{other}`"))),
        }
    }
}

/// Mean of the aspect rows.
pub fn aspect_center<'t>(hs: Var<'t>, span: Span) -> Result<Var<'t>> {
    if span.is_empty() {
        return Err(Error::Contract("empty aspect span".into()));
    }
    hs.mean_rows(span.start, span.end)
}

/// `1 - cos(h_i, center)` per token, as `n×1`.
pub fn cost_vector<'t>(hs: Var<'t>, center: Var<'t>) -> Result<Var<'t>> {
    Ok(cosine_to_vector(hs, center)?.affine(-1.0, 1.0))
}

/// `softmax(H F_μ)` over tokens, as `n×1`.
pub fn source_distribution<'t>(hs: Var<'t>, f_mu: Var<'t>) -> Result<Var<'t>> {
    Ok(hs.matmul(f_mu)?.transpose().softmax_rows(None)?.transpose())
}

/// Head-specific regularization, linearly spaced from `eps_min` to `eps_max`.
pub fn epsilon_schedule(p: usize, eps_min: f64, eps_max: f64) -> Result<Vec<f64>> {
    if p == 0 {
        return Err(Error::Contract("head count must be at least 1".into()));
    }
    if !(eps_min > 0.0 && eps_max > 0.0) {
        return Err(Error::Contract(format!(
            "epsilon must be positive, got [{eps_min}, {eps_max}]"
        )));
    }
    if eps_min > eps_max {
        return Err(Error::Contract(format!(
            "eps_min {eps_min} exceeds eps_max {eps_max}"
        )));
    }
    if p == 1 {
        return Ok(vec![eps_min]);
    }
    Ok((0..p)
        .map(|k| eps_min + (eps_max - eps_min) * k as f64 / (p - 1) as f64)
        .collect())
}

/// Sinkhorn output on the tape.
#[derive(Debug, Clone, Copy)]
pub struct PlanVar<'t> {
    pub plan: Var<'t>,
    pub iterations: usize,
    pub row_error: f64,
    pub col_error: f64,
}

/// Detached transport plan with convergence diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub plan: Tensor,
    pub iterations: usize,
    /// L1 distance of row sums from `μ`.
    pub row_error: f64,
    /// L1 distance of column sums from `ν`.
    pub col_error: f64,
}

fn l1(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .sum()
}

fn guard(t: &Tensor, which: &str) -> Result<()> {
    if let Some(v) = t.data().iter().find(|&&v| !(v >= UNDERFLOW_GUARD)) {
        return Err(Error::Numerical(format!(
            "Sinkhorn {which} entry {v:e} underflowed; increase epsilon"
        )));
    }
    Ok(())
}

/// Entropic OT between `μ` (`n×1`) and `ν` (`m×1`) under `cost` (`n×m`).
///
/// `u` and `v` start at ones and alternate `u ← μ/(Kv)`, `v ← ν/(Kᵀu)` until
/// both marginal L1 errors drop below `tol` or `max_iters` is reached.
pub fn sinkhorn_on_tape<'t>(
    cost: Var<'t>,
    mu: Var<'t>,
    nu: Var<'t>,
    eps: f64,
    max_iters: usize,
    tol: f64,
) -> Result<PlanVar<'t>> {
    let (n, m) = cost.shape();
    if mu.shape() != (n, 1) || nu.shape() != (m, 1) {
        return Err(Error::Dimension {
            op: "sinkhorn",
            left: cost.shape(),
            right: (mu.shape().0, nu.shape().0),
        });
    }
    if !(eps > 0.0) {
        return Err(Error::Contract(format!(
            "epsilon must be positive, got {eps}"
        )));
    }
    if max_iters == 0 {
        return Err(Error::Contract("max_iters must be at least 1".into()));
    }
    let tape = cost.tape();
    let kernel = cost.scale(-1.0 / eps).exp();
    let kernel_t = kernel.transpose();
    let mut v = tape.constant(Tensor::ones(m, 1));
    let mut u = tape.constant(Tensor::ones(n, 1));
    let (mu_val, nu_val) = (mu.value(), nu.value());
    let mut iterations = 0;
    let mut row_error = f64::INFINITY;
    let mut col_error = f64::INFINITY;

    while iterations < max_iters {
        let kv = kernel.matmul(v)?;
        guard(&kv.value(), "K v")?;
        u = mu.div(kv)?;
        let ktu = kernel_t.matmul(u)?;
        guard(&ktu.value(), "Kᵀ u")?;
        v = nu.div(ktu)?;
        iterations += 1;

        let (uv, vv, kvv) = (u.value(), v.value(), kernel.value());
        let rows = Tensor::from_fn(n, 1, |i, _| {
            uv[(i, 0)] * (0..m).map(|j| kvv[(i, j)] * vv[(j, 0)]).sum::<f64>()
        });
        let cols = Tensor::from_fn(m, 1, |j, _| {
            vv[(j, 0)] * (0..n).map(|i| kvv[(i, j)] * uv[(i, 0)]).sum::<f64>()
        });
        row_error = l1(&rows, &mu_val);
        col_error = l1(&cols, &nu_val);
        if row_error < tol && col_error < tol {
            break;
        }
    }

    let plan = kernel.mul(u)?.mul(v.transpose())?;
    Ok(PlanVar {
        plan,
        iterations,
        row_error,
        col_error,
    })
}

/// Detached Sinkhorn solve.
pub fn sinkhorn(
    cost: &Tensor,
    mu: &Tensor,
    nu: &Tensor,
    eps: f64,
    max_iters: usize,
    tol: f64,
) -> Result<TransportPlan> {
    let tape = Tape::new();
    let out = sinkhorn_on_tape(
        tape.constant(cost.clone()),
        tape.constant(as_column(mu)),
        tape.constant(as_column(nu)),
        eps,
        max_iters,
        tol,
    )?;
    Ok(TransportPlan {
        plan: out.plan.value(),
        iterations: out.iterations,
        row_error: out.row_error,
        col_error: out.col_error,
    })
}

fn as_column(t: &Tensor) -> Tensor {
    Tensor::column(t.data())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtSettings {
    pub mode: OtMode,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for OtSettings {
    fn default() -> Self {
        Self {
            mode: OtMode::CostAware,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
        }
    }
}

/// Per-token OT attention (`n×1`) for one head.
pub fn ot_attention<'t>(
    cost: Var<'t>,
    mu: Var<'t>,
    eps: f64,
    settings: &OtSettings,
) -> Result<Var<'t>> {
    match settings.mode {
        OtMode::Strict => {
            let nu = cost.tape().constant(Tensor::ones(1, 1));
            Ok(sinkhorn_on_tape(cost, mu, nu, eps, settings.max_iters, settings.tol)?.plan)
        }
        OtMode::CostAware => {
            if !(eps > 0.0) {
                return Err(Error::Contract(format!(
                    "epsilon must be positive, got {eps}"
                )));
            }
            let weighted = mu.mul(cost.scale(-1.0 / eps).exp())?;
            weighted.div(weighted.sum_axis(Axis::Rows))
        }
    }
}

/// Shannon entropy (nats) of a non-negative vector summing to one.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * x.ln())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use proptest::prelude::*;

    fn col(v: &[f64]) -> Tensor {
        Tensor::column(v)
    }

    #[test]
    fn center_examples() {
        let tape = Tape::new();
        let hs = tape.constant(
            Tensor::from_rows(&[
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![0.0, 1.0],
                vec![3.0, 3.0],
            ])
            .unwrap(),
        );
        let c = |s, e| {
            aspect_center(hs, Span { start: s, end: e })
                .unwrap()
                .value()
        };
        assert_eq!(c(3, 4).data(), &[3.0, 3.0]);
        assert_eq!(c(1, 3).data(), &[0.0, 1.0]);
        assert_eq!(c(0, 2).data(), &[0.5, 0.5]);
    }

    #[test]
    fn cost_examples() {
        let tape = Tape::new();
        let center = tape.constant(Tensor::row(&[1.0, 1.0]));
        let hs = tape.constant(
            Tensor::from_rows(&[vec![1.0, 1.0], vec![-1.0, -1.0], vec![1.0, 0.0]]).unwrap(),
        );
        let c = cost_vector(hs, center).unwrap().value();
        assert!(c.data()[0].abs() < 1e-15);
        assert!((c.data()[1] - 2.0).abs() < 1e-15);
        assert!((c.data()[2] - (1.0 - std::f64::consts::FRAC_1_SQRT_2)).abs() < 1e-15);
        assert!((c.data()[2] - 0.2929).abs() < 5e-5);
    }

    #[test]
    fn source_distribution_examples() {
        let tape = Tape::new();
        let hs = tape.constant(Tensor::from_fn(4, 3, |i, j| (i * j) as f64 + 0.5));
        let mu = source_distribution(hs, tape.constant(Tensor::zeros(3, 1)))
            .unwrap()
            .value();
        assert!(mu.data().iter().all(|&x| x == 0.25));

        let hs = tape.constant(Tensor::column(&[1.0, 2.0, 3.0]));
        let mu = source_distribution(hs, tape.constant(Tensor::scalar(1.0)))
            .unwrap()
            .value();
        let z = 1f64.exp() + 2f64.exp() + 3f64.exp();
        for (i, k) in [1.0f64, 2.0, 3.0].iter().enumerate() {
            assert!((mu.data()[i] - k.exp() / z).abs() < 1e-15);
        }

        let hs = tape.constant(Tensor::column(&[1e9, 0.0, 0.0]));
        let mu = source_distribution(hs, tape.constant(Tensor::scalar(1.0)))
            .unwrap()
            .value();
        assert!((mu.data()[0] - 1.0).abs() < 1e-12 && mu.data()[1] < 1e-12);
    }

    #[test]
    fn schedule_examples() {
        let s = epsilon_schedule(5, 0.3, 3.0).unwrap();
        for (got, want) in s.iter().zip([0.3, 0.975, 1.65, 2.325, 3.0]) {
            assert!((got - want).abs() < 1e-12, "{s:?}");
        }
        assert_eq!(epsilon_schedule(1, 0.3, 3.0).unwrap(), vec![0.3]);
        assert_eq!(epsilon_schedule(4, 1.0, 1.0).unwrap(), vec![1.0; 4]);
        assert!(epsilon_schedule(3, 0.0, 1.0).is_err());
        assert!(epsilon_schedule(3, -1.0, 1.0).is_err());
        assert!(epsilon_schedule(3, 2.0, 1.0).is_err());
    }

    #[test]
    fn single_atom_target_forces_plan_to_mu() {
        let mu = col(&[0.1, 0.6, 0.3]);
        let cost = col(&[1.7, 0.2, 0.9]);
        let p = sinkhorn(&cost, &mu, &col(&[1.0]), 0.5, 50, 1e-9).unwrap();
        assert!(p.plan.max_abs_diff(&mu) < 1e-15);
    }

    #[test]
    fn symmetric_two_by_two() {
        let cost = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let half = col(&[0.5, 0.5]);
        let p = sinkhorn(&cost, &half, &half, 1.0, 50, 1e-12).unwrap();
        let a = 0.5 / (1.0 + (-1f64).exp());
        let b = 0.5 - a;
        assert!((p.plan[(0, 0)] - a).abs() < 1e-9 && (p.plan[(1, 1)] - a).abs() < 1e-9);
        assert!((p.plan[(0, 1)] - b).abs() < 1e-9 && (p.plan[(1, 0)] - b).abs() < 1e-9);
        assert!((a - 0.3655).abs() < 5e-5 && (b - 0.1345).abs() < 5e-5);
    }

    #[test]
    fn large_epsilon_approaches_independent_coupling() {
        let cost = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let (mu, nu) = (col(&[0.3, 0.7]), col(&[0.6, 0.4]));
        // At ε = 100 the symmetric case still deviates by 1.25e-3.
        let p = sinkhorn(&cost, &mu, &nu, 1000.0, 1000, 1e-12).unwrap();
        let outer = mu.matmul(&nu.transpose()).unwrap();
        assert!(p.plan.max_abs_diff(&outer) < 1e-3);
    }

    #[test]
    fn underflow_is_reported() {
        let cost = col(&[500.0, 600.0]);
        let err = sinkhorn(&cost, &col(&[0.5, 0.5]), &col(&[1.0]), 0.5, 50, 1e-9).unwrap_err();
        assert!(
            matches!(err, Error::Numerical(ref m) if m.contains("epsilon")),
            "{err}"
        );
    }

    #[test]
    fn cost_aware_examples() {
        let tape = Tape::new();
        let settings = OtSettings::default();
        let mu = tape.constant(col(&[0.2, 0.5, 0.3]));
        let flat = tape.constant(col(&[0.7, 0.7, 0.7]));
        let a = ot_attention(flat, mu, 0.8, &settings).unwrap().value();
        assert!(a.max_abs_diff(&col(&[0.2, 0.5, 0.3])) < 1e-15);

        let mu = tape.constant(col(&[0.5, 0.5]));
        let cost = tape.constant(col(&[0.0, 2.0]));
        let a = ot_attention(cost, mu, 1.0, &settings).unwrap().value();
        let hi = 1.0 / (1.0 + (-2f64).exp());
        assert!((a.data()[0] - hi).abs() < 1e-15 && (a.data()[1] - (1.0 - hi)).abs() < 1e-15);
        assert!((hi - 0.8808).abs() < 5e-5);

        let strict = OtSettings {
            mode: OtMode::Strict,
            ..settings
        };
        let a = ot_attention(cost, mu, 1.0, &strict).unwrap().value();
        assert!(a.max_abs_diff(&col(&[0.5, 0.5])) < 1e-9);
    }

    #[test]
    fn gradients_flow_through_unrolled_iterations() {
        let cost = Tensor::from_fn(4, 3, |i, j| ((i * 3 + j * 5) % 7) as f64 / 7.0);
        let nu = col(&[0.2, 0.3, 0.5]);
        let scores = Tensor::column(&[0.3, -0.2, 0.8, 0.1]);
        let weights = Tensor::from_fn(4, 3, |i, j| (i + 2 * j) as f64 * 0.3 - 0.5);
        let err = grad_check(
            |tape, v| {
                let mu = v[0].transpose().softmax_rows(None)?.transpose();
                let out = sinkhorn_on_tape(v[1], mu, tape.constant(nu.clone()), 0.7, 50, 0.0)?;
                assert_eq!(out.iterations, 50);
                out.plan
                    .mul(tape.constant(weights.clone()))
                    .map(|x| x.sum())
            },
            &[scores, cost],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    fn attention_entropy(cost: &[f64], mu: &[f64], eps: f64) -> f64 {
        let tape = Tape::new();
        let a = ot_attention(
            tape.constant(col(cost)),
            tape.constant(col(mu)),
            eps,
            &OtSettings::default(),
        );
        entropy(a.unwrap().value().data())
    }

    #[test]
    fn skewed_source_can_sharpen_with_larger_epsilon() {
        // Small ε moves the mass onto the two cheap tokens; large ε returns it to μ.
        let mu = [0.98, 0.01, 0.01];
        let cost = [2.0, 0.0, 0.0];
        assert!(attention_entropy(&cost, &mu, 0.3) > attention_entropy(&cost, &mu, 3.0));
    }

    fn simplex(raw: &[f64]) -> Vec<f64> {
        let s: f64 = raw.iter().sum();
        raw.iter().map(|x| x / s).collect()
    }

    proptest! {
        #[test]
        fn plan_nonnegative_with_unit_mass(
            n in 1usize..8, m in 1usize..8,
            raw in proptest::collection::vec(0.05f64..1.0, 8 + 8 + 64),
            eps in 0.3f64..3.0,
        ) {
            let mu = col(&simplex(&raw[..n]));
            let nu = col(&simplex(&raw[8..8 + m]));
            let cost = Tensor::from_fn(n, m, |i, j| raw[16 + i * 8 + j] * 2.0);
            let p = sinkhorn(&cost, &mu, &nu, eps, 50, 1e-9).unwrap();
            prop_assert!(p.plan.data().iter().all(|&x| x >= 0.0));
            prop_assert!((p.plan.sum() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn cost_aware_weight_grows_as_cost_falls(
            raw in proptest::collection::vec(0.05f64..1.0, 6),
            cost in proptest::collection::vec(0.0f64..2.0, 6),
            which in 0usize..6,
            drop in 0.0f64..1.0,
            eps in 0.3f64..3.0,
        ) {
            let tape = Tape::new();
            let mu = tape.constant(col(&simplex(&raw)));
            let settings = OtSettings::default();
            let before = ot_attention(tape.constant(col(&cost)), mu, eps, &settings).unwrap().value();
            let mut lowered = cost.clone();
            lowered[which] = (lowered[which] - drop).max(0.0);
            let after = ot_attention(tape.constant(col(&lowered)), mu, eps, &settings).unwrap().value();
            prop_assert!(after.data()[which] >= before.data()[which] - 1e-15);
        }

        #[test]
        fn entropy_rises_with_epsilon_for_uniform_source(
            cost in proptest::collection::vec(0.0f64..2.0, 1..12),
            e1 in 0.1f64..5.0,
            e2 in 0.1f64..5.0,
        ) {
            let mu = vec![1.0 / cost.len() as f64; cost.len()];
            let (lo, hi) = (e1.min(e2), e1.max(e2));
            prop_assert!(attention_entropy(&cost, &mu, lo) <= attention_entropy(&cost, &mu, hi) + 1e-12);
        }
    }
}
