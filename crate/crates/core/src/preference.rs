//! Preference optimization of the design policy from CTR-labelled pairs:
//! plain DPO on summed log-likelihoods and IDPO on element-weighted,
//! normalized log-likelihoods.

use std::path::PathBuf;

use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::design::codec::{format_instruction, serialize_design, SpanTag};
use crate::design::policy::{DesignPolicy, PolicyInput};
use crate::error::{Error, Result};
use crate::feedback::PreferencePair;
use crate::nn::{self, Trainer};
use crate::replacement::Element;

/// Per-element token weights. Delimiter tokens always weigh 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElementWeights {
    pub background: f64,
    pub text: f64,
    pub layout: f64,
}

impl Default for ElementWeights {
    fn default() -> Self {
        Self { background: 1.0, text: 1.0, layout: 1.0 }
    }
}

impl ElementWeights {
    /// Uniform weights except `alpha` on `element`.
    pub fn emphasize(element: Element, alpha: f64) -> Self {
        let mut w = Self::default();
        match element {
            Element::Background => w.background = alpha,
            Element::Text => w.text = alpha,
            Element::Layout => w.layout = alpha,
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        if [self.background, self.text, self.layout].iter().all(|a| *a > 0.0 && a.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid(format!("element weights must be positive, got {self:?}")))
        }
    }

    pub fn weight(&self, tag: SpanTag) -> f64 {
        match tag {
            SpanTag::Bg => self.background,
            SpanTag::Txt => self.text,
            SpanTag::Lay => self.layout,
            SpanTag::Delim => 1.0,
        }
    }

    pub fn token_weights(&self, spans: &[SpanTag]) -> Vec<f64> {
        spans.iter().map(|t| self.weight(*t)).collect()
    }
}

/// `sum(w_i * lp_i) / sum(w_i)` over a single sequence.
pub fn weighted_logprob(logprobs: &[f64], spans: &[SpanTag], weights: &ElementWeights) -> Result<f64> {
    if logprobs.is_empty() {
        return Err(Error::invalid("empty sequence"));
    }
    if logprobs.len() != spans.len() {
        return Err(Error::invalid(format!("{} log-probabilities for {} span tags", logprobs.len(), spans.len())));
    }
    let w = weights.token_weights(spans);
    Ok(logprobs.iter().zip(&w).map(|(l, w)| l * w).sum::<f64>() / w.iter().sum::<f64>())
}

/// `-log sigmoid(beta * ((pw - rw) - (pl - rl)))` on plain numbers.
pub fn dpo_objective(policy_w: f64, policy_l: f64, ref_w: f64, ref_l: f64, beta: f64) -> f64 {
    let m = beta * ((policy_w - ref_w) - (policy_l - ref_l));
    m.min(0.0).abs() + (-m.abs()).exp().ln_1p()
}

/// Numerically stable `-log sigmoid(x)` on tensors.
pub fn neg_log_sigmoid(x: &Tensor) -> Result<Tensor> {
    let neg = x.neg()?;
    Ok((neg.relu()? + (x.abs()?.neg()?.exp()? + 1.0)?.log()?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreferenceMode {
    Dpo,
    Idpo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DpoConfig {
    pub mode: PreferenceMode,
    pub beta: f64,
    /// Weight of the replaced element's tokens under IDPO.
    pub alpha_replaced: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip: Option<f64>,
    pub seed: u64,
    /// Run the evaluation callback every this many optimizer steps (0: per epoch only).
    pub eval_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// IDPO weights used for every pair regardless of its replaced element.
    pub fixed_weights: Option<ElementWeights>,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            mode: PreferenceMode::Idpo,
            beta: 0.5,
            alpha_replaced: 5.0,
            epochs: 3,
            batch_size: 32,
            lr: 1e-3,
            clip: Some(1.0),
            seed: 0,
            eval_every: 0,
            checkpoint_dir: None,
            fixed_weights: None,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.alpha_replaced > 0.0) {
            return Err(Error::invalid(format!("alpha must be positive, got {}", self.alpha_replaced)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if let Some(w) = &self.fixed_weights {
            w.validate()?;
        }
        Ok(())
    }

    /// Element weights for a pair whose `element` was replaced.
    pub fn weights_for(&self, element: Element) -> ElementWeights {
        match self.mode {
            PreferenceMode::Dpo => ElementWeights::default(),
            PreferenceMode::Idpo => self.fixed_weights.unwrap_or_else(|| ElementWeights::emphasize(element, self.alpha_replaced)),
        }
    }
}

/// The trainable policy and its frozen reference.
pub struct PolicyPair {
    pub policy: DesignPolicy,
    pub reference: DesignPolicy,
}

impl PolicyPair {
    /// Freeze a copy of `policy` as the reference.
    pub fn new(policy: DesignPolicy) -> Result<Self> {
        let reference = policy.snapshot()?;
        Ok(Self { policy, reference })
    }
}

/// A tokenized sequence with its per-token weights and normalizer.
#[derive(Debug, Clone)]
pub struct ScoredSequence {
    pub product_id: usize,
    pub instr: Vec<u32>,
    pub design: Vec<u32>,
    pub weights: Vec<f64>,
    pub norm: f64,
}

impl ScoredSequence {
    pub fn new(pair: &PreferencePair, winner: bool, mode: PreferenceMode, weights: &ElementWeights) -> Result<Self> {
        let d = if winner { &pair.winner } else { &pair.loser };
        let s = serialize_design(d)?;
        let (weights, norm) = match mode {
            PreferenceMode::Dpo => (vec![1.0; s.len()], 1.0),
            PreferenceMode::Idpo => {
                let w = weights.token_weights(&s.span_map);
                let n = w.iter().sum();
                (w, n)
            }
        };
        Ok(Self { product_id: pair.product_id, instr: format_instruction(&pair.candidates)?.ids(), design: s.ids(), weights, norm })
    }
}

/// Sequence scores `[B]`: summed (DPO) or weighted-mean (IDPO) log-likelihoods.
pub fn sequence_scores(policy: &DesignPolicy, seqs: &[&ScoredSequence]) -> Result<Tensor> {
    let inputs: Vec<PolicyInput> =
        seqs.iter().map(|s| PolicyInput { product_id: s.product_id, instr: &s.instr, design: &s.design }).collect();
    let lp = policy.token_logprobs(&inputs)?;
    let w = lp.mask_like(&seqs.iter().map(|s| s.weights.clone()).collect::<Vec<_>>())?;
    let norms = Tensor::from_vec(seqs.iter().map(|s| s.norm).collect::<Vec<f64>>(), seqs.len(), lp.values.device())?.to_dtype(policy.dtype())?;
    Ok(((lp.values * w)?.sum(1)? / norms)?)
}

/// A pair prepared for training: both sequences plus the reference scores.
#[derive(Debug, Clone)]
pub struct PreparedPair {
    pub winner: ScoredSequence,
    pub loser: ScoredSequence,
    pub ref_winner: f64,
    pub ref_loser: f64,
}

fn scores_f64(policy: &DesignPolicy, seqs: &[&ScoredSequence]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(seqs.len());
    for chunk in seqs.chunks(64) {
        out.extend(sequence_scores(policy, chunk)?.to_dtype(DType::F64)?.to_vec1::<f64>()?);
    }
    Ok(out)
}

pub fn prepare_pairs(pairs: &[PreferencePair], reference: &DesignPolicy, cfg: &DpoConfig) -> Result<Vec<PreparedPair>> {
    let seqs: Vec<(ScoredSequence, ScoredSequence)> = pairs
        .iter()
        .map(|p| {
            let w = cfg.weights_for(p.replaced_element);
            Ok((ScoredSequence::new(p, true, cfg.mode, &w)?, ScoredSequence::new(p, false, cfg.mode, &w)?))
        })
        .collect::<Result<_>>()?;
    let flat: Vec<&ScoredSequence> = seqs.iter().flat_map(|(w, l)| [w, l]).collect();
    let refs = scores_f64(reference, &flat)?;
    Ok(seqs
        .into_iter()
        .enumerate()
        .map(|(i, (winner, loser))| PreparedPair { winner, loser, ref_winner: refs[2 * i], ref_loser: refs[2 * i + 1] })
        .collect())
}

/// Mean preference loss of `policy` over prepared pairs.
pub fn batch_loss(policy: &DesignPolicy, batch: &[&PreparedPair], beta: f64) -> Result<Tensor> {
    let seqs: Vec<&ScoredSequence> = batch.iter().flat_map(|p| [&p.winner, &p.loser]).collect();
    let scores = sequence_scores(policy, &seqs)?.reshape((batch.len(), 2))?;
    let refs: Vec<f64> = batch.iter().flat_map(|p| [p.ref_winner, p.ref_loser]).collect();
    let refs = Tensor::from_vec(refs, (batch.len(), 2), scores.device())?.to_dtype(scores.dtype())?;
    let ratio = (scores - refs)?;
    let margin = ((ratio.narrow(1, 0, 1)? - ratio.narrow(1, 1, 1)?)? * beta)?;
    Ok(neg_log_sigmoid(&margin)?.mean_all()?)
}

fn single_pair_loss(pair: &PreferencePair, policies: &PolicyPair, cfg: &DpoConfig) -> Result<Tensor> {
    let prepared = prepare_pairs(std::slice::from_ref(pair), &policies.reference, cfg)?;
    batch_loss(&policies.policy, &[&prepared[0]], cfg.beta)
}

/// DPO loss of one pair on summed sequence log-likelihoods.
pub fn dpo_loss(pair: &PreferencePair, policies: &PolicyPair, beta: f64) -> Result<Tensor> {
    single_pair_loss(pair, policies, &DpoConfig { mode: PreferenceMode::Dpo, beta, ..Default::default() })
}

/// IDPO loss of one pair: the DPO objective on element-weighted
/// log-likelihoods, with `alpha_replaced` on the pair's replaced element.
pub fn idpo_loss(pair: &PreferencePair, policies: &PolicyPair, cfg: &DpoConfig) -> Result<Tensor> {
    single_pair_loss(pair, policies, &DpoConfig { mode: PreferenceMode::Idpo, ..cfg.clone() })
}

/// `beta * (score_policy - score_reference)` for both designs of each pair,
/// with the likelihood form of `cfg.mode`.
pub fn implicit_rewards(pairs: &[PreferencePair], policies: &PolicyPair, cfg: &DpoConfig) -> Result<Vec<(f64, f64)>> {
    let prepared = prepare_pairs(pairs, &policies.reference, cfg)?;
    implicit_rewards_prepared(&prepared, &policies.policy, cfg.beta)
}

pub fn implicit_rewards_prepared(prepared: &[PreparedPair], policy: &DesignPolicy, beta: f64) -> Result<Vec<(f64, f64)>> {
    let flat: Vec<&ScoredSequence> = prepared.iter().flat_map(|p| [&p.winner, &p.loser]).collect();
    let s = scores_f64(policy, &flat)?;
    Ok(prepared
        .iter()
        .enumerate()
        .map(|(i, p)| (beta * (s[2 * i] - p.ref_winner), beta * (s[2 * i + 1] - p.ref_loser)))
        .collect())
}

/// Fraction of pairs whose winner earns the higher reward; ties count half.
pub fn accuracy_from_rewards(rewards: &[(f64, f64)]) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::invalid("reward accuracy of an empty pair list"));
    }
    let hits: f64 = rewards
        .iter()
        .map(|(w, l)| match w.partial_cmp(l) {
            Some(std::cmp::Ordering::Greater) => 1.0,
            Some(std::cmp::Ordering::Equal) => 0.5,
            _ => 0.0,
        })
        .sum();
    Ok(hits / rewards.len() as f64)
}

pub fn reward_accuracy(pairs: &[PreferencePair], policies: &PolicyPair, cfg: &DpoConfig) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("reward accuracy of an empty pair list"));
    }
    accuracy_from_rewards(&implicit_rewards(pairs, policies, cfg)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_reward_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub step_loss: Vec<f64>,
    pub epochs: Vec<EpochLog>,
    pub evals: Vec<EvalPoint>,
}

pub type EvalFn<'a> = dyn FnMut(&DesignPolicy) -> Result<f64> + 'a;

/// Fine-tune `policies.policy` on `pairs`; the reference stays frozen.
pub fn optimize(policies: &mut PolicyPair, pairs: &[PreferencePair], cfg: &DpoConfig, mut eval: Option<&mut EvalFn>) -> Result<OptimizeReport> {
    cfg.validate()?;
    let mut report = OptimizeReport::default();
    if cfg.epochs == 0 || pairs.is_empty() {
        return Ok(report);
    }
    let prepared = prepare_pairs(pairs, &policies.reference, cfg)?;
    let mut trainer = Trainer::new(policies.policy.params.vars(), cfg.lr, cfg.clip)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&PreparedPair> = chunk.iter().map(|&i| &prepared[i]).collect();
            let loss = batch_loss(&policies.policy, &batch, cfg.beta)?;
            let value = nn::scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::Diverged { step, lr: cfg.lr, message: format!("preference loss {value}") });
            }
            trainer.step(&loss).map_err(|e| match e {
                Error::Diverged { message, .. } => Error::Diverged { step, lr: cfg.lr, message },
                other => other,
            })?;
            step += 1;
            report.step_loss.push(value);
            epoch_loss.push(value);
            if cfg.eval_every > 0 && step % cfg.eval_every == 0 {
                if let Some(f) = eval.as_mut() {
                    report.evals.push(EvalPoint { step, value: f(&policies.policy)? });
                }
            }
        }
        let train_acc = accuracy_from_rewards(&implicit_rewards_prepared(&prepared, &policies.policy, cfg.beta)?)?;
        let mean_loss = epoch_loss.iter().sum::<f64>() / epoch_loss.len() as f64;
        log::info!("{:?} epoch {}: loss {:.5} train reward accuracy {:.4}", cfg.mode, epoch + 1, mean_loss, train_acc);
        report.epochs.push(EpochLog { epoch: epoch + 1, mean_loss, train_reward_accuracy: train_acc });
        if cfg.eval_every == 0 {
            if let Some(f) = eval.as_mut() {
                report.evals.push(EvalPoint { step, value: f(&policies.policy)? });
            }
        }
        if let Some(dir) = &cfg.checkpoint_dir {
            std::fs::create_dir_all(dir)?;
            policies.policy.save(&dir.join(format!("policy_epoch{:03}.ckpt", epoch + 1)))?;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_logprob_cases() {
        let lp = [-1.0, -2.0, -0.5, -3.0, -0.25, -1.5];
        let tags = [SpanTag::Delim, SpanTag::Bg, SpanTag::Bg, SpanTag::Txt, SpanTag::Lay, SpanTag::Delim];
        let uniform = weighted_logprob(&lp, &tags, &ElementWeights::default()).unwrap();
        assert!((uniform - lp.iter().sum::<f64>() / 6.0).abs() < 1e-12);
        let w = ElementWeights::emphasize(Element::Background, 5.0);
        let by_hand = (-1.0 + 5.0 * -2.0 + 5.0 * -0.5 - 3.0 - 0.25 - 1.5) / 14.0;
        assert!((weighted_logprob(&lp, &tags, &w).unwrap() - by_hand).abs() < 1e-12);
        let bg = [SpanTag::Bg; 3];
        assert!((weighted_logprob(&lp[..3], &bg, &w).unwrap() - weighted_logprob(&lp[..3], &bg, &ElementWeights::default()).unwrap()).abs() < 1e-12);
        assert!(weighted_logprob(&[], &[], &w).is_err());
    }

    #[test]
    fn objective_limits() {
        assert_eq!(dpo_objective(0.0, 0.0, 0.0, 0.0, 0.5), std::f64::consts::LN_2);
        assert!(dpo_objective(50.0, 0.0, 0.0, 0.0, 1.0) < 1e-20);
        assert!(dpo_objective(-50.0, 0.0, 0.0, 0.0, 1.0) > 24.0);
    }

    #[test]
    fn ties_count_half() {
        assert_eq!(accuracy_from_rewards(&[(1.0, 0.0), (0.0, 0.0), (0.0, 1.0)]).unwrap(), 0.5);
        assert!(accuracy_from_rewards(&[]).is_err());
    }

    #[test]
    fn tensor_and_scalar_objectives_agree() {
        let x = Tensor::new(&[-30.0f64, -1.0, 0.0, 2.5, 40.0], &candle_core::Device::Cpu).unwrap();
        let t = neg_log_sigmoid(&x).unwrap().to_vec1::<f64>().unwrap();
        for (m, v) in [-30.0f64, -1.0, 0.0, 2.5, 40.0].iter().zip(t) {
            assert!((dpo_objective(*m, 0.0, 0.0, 0.0, 1.0) - v).abs() < 1e-12);
        }
    }
}
