mod common;

use candle_core::{DType, Tensor, Var};
use common::*;
use posterkit::design::{serialize_design, PolicyInput, SpanTag};
use posterkit::feedback::PreferencePair;
use posterkit::preference::*;
use posterkit::replacement::Element;
use rand::Rng;

const LN2: f64 = std::f64::consts::LN_2;

fn loss_value(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

fn pairs(n: usize, seed: u64) -> Vec<PreferencePair> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let e = Element::ALL[r.random_range(0..3)];
            toy_pair(&mut r, e)
        })
        .collect()
}

#[test]
fn loss_is_ln2_when_policy_equals_reference() {
    let pp = PolicyPair::new(tiny_policy(1, DType::F64)).unwrap();
    let cfg = DpoConfig::default();
    for p in pairs(30, 1) {
        assert!((loss_value(&dpo_loss(&p, &pp, 0.5).unwrap()) - LN2).abs() < 1e-9);
        assert!((loss_value(&idpo_loss(&p, &pp, &cfg).unwrap()) - LN2).abs() < 1e-9);
    }
    let rewards = implicit_rewards(&pairs(30, 2), &pp, &cfg).unwrap();
    assert!(rewards.iter().all(|(w, l)| *w == 0.0 && *l == 0.0));
    assert_eq!(reward_accuracy(&pairs(30, 2), &pp, &cfg).unwrap(), 0.5);
}

#[test]
fn uniform_idpo_is_dpo_with_scaled_beta() {
    let pp = PolicyPair { policy: tiny_policy(2, DType::F64), reference: tiny_policy(1, DType::F64) };
    let mut r = rng(3);
    for _ in 0..50 {
        let p = toy_pair(&mut r, Element::Background);
        let len = serialize_design(&p.winner).unwrap().len();
        assert_eq!(len, serialize_design(&p.loser).unwrap().len());
        let beta = r.random_range(0.05..2.0);
        let idpo = loss_value(&idpo_loss(&p, &pp, &DpoConfig { beta, alpha_replaced: 1.0, ..Default::default() }).unwrap());
        let dpo = loss_value(&dpo_loss(&p, &pp, beta / len as f64).unwrap());
        assert!((idpo - dpo).abs() < 1e-9, "{idpo} vs {dpo}");
    }
}

/// Gradient of the pair loss with respect to the winner's per-token
/// log-likelihoods, restricted to the tokens tagged `tag`.
fn element_gradient_norm(pair: &PreferencePair, pp: &PolicyPair, alpha: f64, tag: SpanTag) -> f64 {
    let cfg = DpoConfig { alpha_replaced: alpha, ..Default::default() };
    let prepared = &prepare_pairs(std::slice::from_ref(pair), &pp.reference, &cfg).unwrap()[0];
    let score = |seq: &ScoredSequence, var: Option<&Var>| -> Tensor {
        let lp = pp.policy.token_logprobs(&[PolicyInput { product_id: seq.product_id, instr: &seq.instr, design: &seq.design }]).unwrap();
        let values = lp.values.get(0).unwrap().narrow(0, 0, seq.design.len()).unwrap();
        let values = match var {
            Some(v) => v.as_tensor().clone(),
            None => values,
        };
        let w = Tensor::new(seq.weights.as_slice(), values.device()).unwrap();
        ((values * w).unwrap().sum_all().unwrap() / seq.norm).unwrap()
    };
    let lp = pp.policy.token_logprobs(&[PolicyInput { product_id: 0, instr: &prepared.winner.instr, design: &prepared.winner.design }]).unwrap();
    let var = Var::from_tensor(&lp.values.get(0).unwrap().narrow(0, 0, prepared.winner.design.len()).unwrap().to_dtype(DType::F64).unwrap()).unwrap();
    let sw = score(&prepared.winner, Some(&var));
    let sl = score(&prepared.loser, None).detach();
    let margin = (((sw - prepared.ref_winner).unwrap() - (sl - prepared.ref_loser).unwrap()).unwrap() * cfg.beta).unwrap();
    let loss = neg_log_sigmoid(&margin).unwrap();
    let grads = loss.backward().unwrap();
    let g = grads.get(var.as_tensor()).unwrap().to_vec1::<f64>().unwrap();
    let spans = serialize_design(&pair.winner).unwrap().span_map;
    g.iter().zip(&spans).filter(|(_, t)| **t == tag).map(|(x, _)| x * x).sum::<f64>().sqrt()
}

#[test]
fn emphasis_increases_gradient_on_the_replaced_element() {
    let pp = PolicyPair { policy: tiny_policy(2, DType::F64), reference: tiny_policy(1, DType::F64) };
    let mut r = rng(4);
    for (element, tag) in [(Element::Background, SpanTag::Bg), (Element::Text, SpanTag::Txt), (Element::Layout, SpanTag::Lay)] {
        for _ in 0..10 {
            let p = toy_pair(&mut r, element);
            let emphasized = element_gradient_norm(&p, &pp, 5.0, tag);
            let uniform = element_gradient_norm(&p, &pp, 1.0, tag);
            assert!(emphasized > uniform, "{element}: {emphasized} <= {uniform}");
        }
    }
}

#[test]
fn reward_ranking_does_not_depend_on_beta() {
    let pp = PolicyPair { policy: tiny_policy(2, DType::F64), reference: tiny_policy(1, DType::F64) };
    let ps = pairs(40, 5);
    let rank = |beta: f64| {
        let cfg = DpoConfig { beta, ..Default::default() };
        let rewards: Vec<f64> = implicit_rewards(&ps, &pp, &cfg).unwrap().into_iter().map(|(w, l)| w - l).collect();
        let mut idx: Vec<usize> = (0..rewards.len()).collect();
        idx.sort_by(|a, b| rewards[*a].total_cmp(&rewards[*b]));
        idx
    };
    assert_eq!(rank(0.1), rank(1.0));
    let acc = |beta| reward_accuracy(&ps, &pp, &DpoConfig { beta, ..Default::default() }).unwrap();
    assert_eq!(acc(0.1), acc(2.0));
}

#[test]
fn zero_epochs_leave_the_policy_unchanged() {
    let mut pp = PolicyPair::new(tiny_policy(6, DType::F32)).unwrap();
    let ps = pairs(20, 6);
    let report = optimize(&mut pp, &ps, &DpoConfig { epochs: 0, ..Default::default() }, None).unwrap();
    assert!(report.step_loss.is_empty());
    let rewards = implicit_rewards(&ps, &pp, &DpoConfig::default()).unwrap();
    assert!(rewards.iter().all(|(w, l)| *w == 0.0 && *l == 0.0));
}

#[test]
fn training_pairs_are_memorized() {
    let mut pp = PolicyPair::new(tiny_policy(7, DType::F32)).unwrap();
    let ps = pairs(16, 7);
    for mode in [PreferenceMode::Dpo, PreferenceMode::Idpo] {
        let cfg = DpoConfig { mode, epochs: 60, batch_size: 8, lr: 1e-2, ..Default::default() };
        optimize(&mut pp, &ps, &cfg, None).unwrap();
        assert_eq!(reward_accuracy(&ps, &pp, &cfg).unwrap(), 1.0, "{mode:?}");
        pp = PolicyPair::new(tiny_policy(7, DType::F32)).unwrap();
    }
}

#[test]
fn learnable_preferences_drive_the_loss_below_ln2() {
    // Winners are the darker-indexed background of each pair.
    let mut r = rng(8);
    let ps: Vec<PreferencePair> = (0..2000)
        .map(|_| {
            let mut p = toy_pair(&mut r, Element::Background);
            if p.winner.background.index() > p.loser.background.index() {
                std::mem::swap(&mut p.winner, &mut p.loser);
            }
            p
        })
        .collect();
    for mode in [PreferenceMode::Dpo, PreferenceMode::Idpo] {
        let mut pp = PolicyPair::new(tiny_policy(8, DType::F32)).unwrap();
        let report = optimize(&mut pp, &ps, &DpoConfig { mode, epochs: 3, ..Default::default() }, None).unwrap();
        let last = report.epochs.last().unwrap().mean_loss;
        assert!(last < LN2, "{mode:?}: {last}");
    }
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(DpoConfig { beta: 0.0, ..Default::default() }.validate().is_err());
    assert!(DpoConfig { alpha_replaced: -1.0, ..Default::default() }.validate().is_err());
    assert!(DpoConfig { batch_size: 0, ..Default::default() }.validate().is_err());
    let fixed = ElementWeights { background: 5.0, text: 1.0, layout: 1.0 };
    let cfg = DpoConfig { fixed_weights: Some(fixed), ..Default::default() };
    cfg.validate().unwrap();
    assert_eq!(cfg.weights_for(Element::Text), fixed);
}
