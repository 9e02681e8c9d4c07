//! Learnable parameters and the full forward pass for one sentence.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::loss::{contrastive_loss, cross_entropy_from_logits, total_loss};
use crate::dropout::Dropout;
use crate::error::{Error, Result};
use crate::fusion::{
    aspect_pool, average_heads, broadcast_ot, classifier_logits, fuse_heads, propagate,
    row_normalize, NUM_CLASSES,
};
use crate::ingest::{Example, Label};
use crate::ot::{aspect_center, cost_vector, epsilon_schedule, ot_attention, source_distribution};
use crate::sgaa::{attention_logits, masked_head, project_qk, SgaaParams};
use crate::syngraph::{build_masks, tree_distances, DistanceMatrix, MaskSet};
use crate::tensor::{concat_rows, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    /// `1×1`; kept in `[0, 1]`.
    pub beta: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// One `1×d` bias per propagation layer.
    pub biases: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub w_p: Tensor,
    pub b_p: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub sgaa: SgaaParams,
    /// `d×1` source-distribution scorer.
    pub f_mu: Tensor,
    pub fusion: FusionParams,
    pub layers: LayerParams,
    pub classifier: ClassifierParams,
}

impl ModelParams {
    /// Weights uniform in `±1/√d`, biases zero, `β = beta_init`.
    pub fn init(dim: usize, cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let mut uniform =
            |r: usize, c: usize| Tensor::from_fn(r, c, |_, _| rng.gen_range(-bound..bound));
        let w_q = uniform(dim, dim);
        let w_k = uniform(dim, dim);
        let f_mu = uniform(dim, 1);
        let w_p = uniform(dim, NUM_CLASSES);
        Self {
            sgaa: SgaaParams { w_q, w_k },
            f_mu,
            fusion: FusionParams {
                beta: Tensor::scalar(cfg.beta_init),
            },
            layers: LayerParams {
                biases: vec![Tensor::zeros(1, dim); cfg.layers],
            },
            classifier: ClassifierParams {
                w_p,
                b_p: Tensor::zeros(1, NUM_CLASSES),
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.f_mu.rows()
    }

    pub fn beta(&self) -> f64 {
        self.fusion.beta.item()
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["w_q", "w_k", "f_mu", "beta"].map(String::from).to_vec();
        names.extend((0..self.layers.biases.len()).map(|l| format!("bias.{l}")));
        names.push("w_p".into());
        names.push("b_p".into());
        names
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        let mut out = vec![
            self.sgaa.w_q.clone(),
            self.sgaa.w_k.clone(),
            self.f_mu.clone(),
            self.fusion.beta.clone(),
        ];
        out.extend(self.layers.biases.iter().cloned());
        out.push(self.classifier.w_p.clone());
        out.push(self.classifier.b_p.clone());
        out
    }

    /// Inverse of [`ModelParams::tensors`].
    pub fn from_tensors(mut t: Vec<Tensor>) -> Result<Self> {
        if t.len() < 7 {
            return Err(Error::Contract(format!(
                "expected at least 7 parameter blocks, got {}",
                t.len()
            )));
        }
        let b_p = t.pop().expect("len checked");
        let w_p = t.pop().expect("len checked");
        let mut it = t.into_iter();
        let w_q = it.next().expect("len checked");
        let w_k = it.next().expect("len checked");
        let f_mu = it.next().expect("len checked");
        let beta = it.next().expect("len checked");
        let biases: Vec<Tensor> = it.collect();
        let d = w_q.rows();
        let ok = w_q.shape() == (d, d)
            && w_k.shape() == (d, d)
            && f_mu.shape() == (d, 1)
            && beta.shape() == (1, 1)
            && biases.iter().all(|b| b.shape() == (1, d))
            && w_p.shape() == (d, NUM_CLASSES)
            && b_p.shape() == (1, NUM_CLASSES);
        if !ok {
            return Err(Error::Contract(
                "parameter block shapes are inconsistent".into(),
            ));
        }
        Ok(Self {
            sgaa: SgaaParams { w_q, w_k },
            f_mu,
            fusion: FusionParams { beta },
            layers: LayerParams { biases },
            classifier: ClassifierParams { w_p, b_p },
        })
    }

    pub fn clamp_beta(&mut self) {
        let b = self.fusion.beta.data_mut();
        b[0] = b[0].clamp(0.0, 1.0);
    }

    /// Registers every parameter on `tape`, trainable or constant.
    pub fn on_tape<'t>(&self, tape: &'t Tape, trainable: bool) -> ParamVars<'t> {
        let all: Vec<Var<'t>> = self
            .tensors()
            .into_iter()
            .map(|t| {
                if trainable {
                    tape.param(t)
                } else {
                    tape.constant(t)
                }
            })
            .collect();
        ParamVars::from_vars(&all)
    }
}

/// Parameters registered on a tape, in [`ModelParams::names`] order.
#[derive(Debug, Clone)]
pub struct ParamVars<'t> {
    pub w_q: Var<'t>,
    pub w_k: Var<'t>,
    pub f_mu: Var<'t>,
    pub beta: Var<'t>,
    pub biases: Vec<Var<'t>>,
    pub w_p: Var<'t>,
    pub b_p: Var<'t>,
}

impl<'t> ParamVars<'t> {
    pub fn from_vars(v: &[Var<'t>]) -> Self {
        let n = v.len();
        Self {
            w_q: v[0],
            w_k: v[1],
            f_mu: v[2],
            beta: v[3],
            biases: v[4..n - 2].to_vec(),
            w_p: v[n - 2],
            b_p: v[n - 1],
        }
    }

    pub fn all(&self) -> Vec<Var<'t>> {
        let mut out = vec![self.w_q, self.w_k, self.f_mu, self.beta];
        out.extend(&self.biases);
        out.push(self.w_p);
        out.push(self.b_p);
        out
    }
}

/// Per-sentence structures that do not depend on parameters.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub distances: DistanceMatrix,
    pub masks: MaskSet,
}

pub fn prepare(example: &Example, cfg: &ModelConfig) -> Result<Prepared> {
    let distances = tree_distances(&example.sentence.heads)?;
    let n = example.sentence.len();
    let masks = if cfg.ablations.no_sm {
        MaskSet::unrestricted(n, cfg.heads)
    } else {
        build_masks(&distances, cfg.heads, Some(&cfg.thresholds()))?
    };
    Ok(Prepared { distances, masks })
}

/// Intermediate attention maps and outputs of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward<'t> {
    /// Per-head syntactic attention (`n×n`); empty when that channel is ablated.
    pub a_sg: Vec<Var<'t>>,
    /// Per-head transport attention (`n×1`); empty when that channel is ablated.
    pub a_ot: Vec<Var<'t>>,
    /// Head-averaged fused graph used for propagation.
    pub fused: Var<'t>,
    pub pool: Var<'t>,
    pub logits: Var<'t>,
}

/// Everything a forward pass needs besides the parameters.
pub struct Model<'c> {
    pub cfg: &'c ModelConfig,
    pub eps: Vec<f64>,
}

impl<'c> Model<'c> {
    pub fn new(cfg: &'c ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let eps = epsilon_schedule(cfg.heads, cfg.eps_min, cfg.eps_max)?;
        Ok(Self { cfg, eps })
    }

    /// β actually applied after ablations.
    pub fn effective_beta(&self, params: &ModelParams) -> f64 {
        let ab = self.cfg.ablations;
        match (ab.no_ga, ab.no_ot) {
            (true, _) => 0.0,
            (false, true) => 1.0,
            (false, false) => params.beta(),
        }
    }

    pub fn forward<'t>(
        &self,
        pv: &ParamVars<'t>,
        example: &Example,
        prepared: &Prepared,
        mut dropout: Option<&mut Dropout>,
    ) -> Result<Forward<'t>> {
        let tape = pv.w_q.tape();
        let cfg = self.cfg;
        let span = example.sentence.aspect;
        let n = example.sentence.len();
        let hs = tape.constant(example.embedding.clone());

        let mut a_sg = Vec::new();
        if !cfg.ablations.no_ga {
            let (q, k) = project_qk(hs, pv.w_q, pv.w_k)?;
            let logits = attention_logits(q, k)?;
            for mask in &prepared.masks.masks {
                a_sg.push(masked_head(logits, mask, dropout.as_deref_mut())?);
            }
        }

        let mut a_ot = Vec::new();
        if !cfg.ablations.no_ot {
            let center = aspect_center(hs, span)?;
            let cost = cost_vector(hs, center)?;
            let mu = source_distribution(hs, pv.f_mu)?;
            let settings = cfg.ot_settings();
            for &eps in &self.eps {
                a_ot.push(ot_attention(cost, mu, eps, &settings)?);
            }
        }

        let heads: Vec<Var<'t>> = match (a_sg.is_empty(), a_ot.is_empty()) {
            (false, false) => {
                let mats = a_ot
                    .iter()
                    .map(|&a| broadcast_ot(a))
                    .collect::<Result<Vec<_>>>()?;
                fuse_heads(&a_sg, &mats, pv.beta)?
            }
            (false, true) => a_sg.clone(),
            (true, false) => a_ot
                .iter()
                .map(|&a| broadcast_ot(a))
                .collect::<Result<_>>()?,
            (true, true) => vec![tape.constant(Tensor::full(n, n, 1.0 / n as f64))],
        };
        let mut fused = average_heads(&heads)?;
        if cfg.row_normalize_fused {
            fused = row_normalize(fused)?;
        }

        let h = propagate(fused, hs, &pv.biases, dropout)?;
        let pool = aspect_pool(h, span)?;
        let logits = classifier_logits(pool, pv.w_p, pv.b_p)?;
        Ok(Forward {
            a_sg,
            a_ot,
            fused,
            pool,
            logits,
        })
    }

    /// `Σ CE + λ·CL` over a batch.
    pub fn batch_loss<'t>(
        &self,
        pv: &ParamVars<'t>,
        batch: &[(&Example, &Prepared)],
        mut dropout: Option<&mut Dropout>,
    ) -> Result<BatchLoss<'t>> {
        let tape = pv.w_q.tape();
        let mut ce_terms = Vec::with_capacity(batch.len());
        let mut pools = Vec::with_capacity(batch.len());
        let mut labels = Vec::with_capacity(batch.len());
        let mut predictions = Vec::with_capacity(batch.len());
        for (ex, prep) in batch {
            let out = self.forward(pv, ex, prep, dropout.as_deref_mut())?;
            predictions.push(argmax_label(out.logits.value().data()));
            ce_terms.push(cross_entropy_from_logits(out.logits, ex.sentence.label)?);
            pools.push(out.pool);
            labels.push(ex.sentence.label);
        }
        let ce = concat_rows(&ce_terms)?.sum();
        let lambda = self.cfg.effective_lambda();
        let cl = if lambda > 0.0 && batch.len() >= 2 {
            contrastive_loss(concat_rows(&pools)?, &labels, self.cfg.temperature)?
        } else {
            tape.constant(Tensor::scalar(0.0))
        };
        let loss = total_loss(ce, cl, lambda)?;
        Ok(BatchLoss {
            loss,
            ce,
            cl,
            predictions,
        })
    }

    /// Argmax prediction and class probabilities, dropout off.
    pub fn predict(
        &self,
        params: &ModelParams,
        example: &Example,
        prepared: &Prepared,
    ) -> Result<(Label, Vec<f64>)> {
        let tape = Tape::new();
        let pv = params.on_tape(&tape, false);
        let out = self.forward(&pv, example, prepared, None)?;
        let probs = out.logits.softmax_rows(None)?.value().into_data();
        Ok((argmax_label(&probs), probs))
    }
}

/// First index of the maximum; ties go to the lower class index.
pub fn argmax_label(scores: &[f64]) -> Label {
    let best = scores
        .iter()
        .enumerate()
        .fold(0, |best, (i, &p)| if p > scores[best] { i } else { best });
    Label::from_index(best).expect("three classes")
}

#[derive(Debug, Clone)]
pub struct BatchLoss<'t> {
    pub loss: Var<'t>,
    /// Summed cross-entropy.
    pub ce: Var<'t>,
    pub cl: Var<'t>,
    /// Argmax of the training-mode logits, in batch order.
    pub predictions: Vec<Label>,
}
