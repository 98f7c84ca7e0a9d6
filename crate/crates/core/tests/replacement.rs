mod common;

use candle_core::DType;
use common::*;
use posterkit::design::types::{Background, Design};
use posterkit::metrics::max_iou;
use posterkit::render::{make_sprite, place_product, render_glyph_image};
use posterkit::replacement::*;
use posterkit::synth::{random_candidates, random_design};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn default_perturber_is_uniform_over_alternatives() {
    let d = random_design(&mut rng(1), &candidates(&["SALE", "GIFT"]), 64).unwrap();
    let d = Design { background: Background::new(0, 0).unwrap(), ..d };
    let mut counts = vec![0f64; Background::COUNT];
    let perturber = UniformPerturber::default();
    for s in 0..1000 {
        let r = replace_background(&d, &perturber, s).unwrap();
        assert_ne!(r.background, d.background);
        counts[r.background.index()] += 1.0;
    }
    assert_eq!(counts[0], 0.0);
    let expected = 1000.0 / 31.0;
    let chi2: f64 = counts[1..].iter().map(|c| (c - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(30.0).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2} p {p}");
}

#[test]
fn text_replacement_is_length_matched() {
    let mut r = rng(2);
    let mut replaced = 0;
    for s in 0..1000 {
        let cands = random_candidates(&mut r, 2, 8);
        let d = random_design(&mut r, &cands, 64).unwrap();
        match replace_text(&d, &cands, s) {
            Ok(v) => {
                replaced += 1;
                assert!(differs_only_in(&d, &v, Element::Text));
                v.validate(Some(cands.len())).unwrap();
                let before = d.selected_texts(&cands).unwrap();
                let after = v.selected_texts(&cands).unwrap();
                for (a, b) in before.iter().zip(&after) {
                    assert_eq!(a.len(), b.len());
                }
                assert!(v.selected.iter().all(|i| !d.selected.contains(i)));
            }
            Err(posterkit::Error::NoAlternative(_)) => {}
            Err(e) => panic!("{e}"),
        }
    }
    assert!(replaced > 100, "only {replaced} replacements");
}

#[test]
fn layout_replacement_from_a_policy_is_distinct() {
    let cfg = posterkit::design::PolicyConfig { layers: 2, width: 32, heads: 2, max_len: 160, num_products: 16, seed: 3, ..Default::default() };
    let mut policy = posterkit::design::DesignPolicy::new(cfg, DType::F32).unwrap();
    let data = posterkit::synth::design_examples(&mut rng(30), (0..400).map(|i| i % 16), 64).unwrap();
    let tc = posterkit::design::DesignTrainConfig { epochs: 4, lr: 1e-2, ..Default::default() };
    posterkit::design::train_design(&mut policy, &data, &tc).unwrap();
    let proposer = PolicyProposer { policy: &policy, temperature: 1.0, canvas: 64 };
    let cands = candidates(&["HOT", "NEW", "SALE"]);
    for s in 0..20 {
        let ex = posterkit::design::DesignExample { product_id: 1, candidates: cands.clone(), design: random_design(&mut rng(s), &cands, 64).unwrap() };
        let d = posterkit::closed_loop::generate_design(&policy, &ex, 1.0, 1000 + s).unwrap();
        let v = replace_layout(&d, &cands, &proposer, 1, 64, s, 200).unwrap();
        assert!(differs_only_in(&d, &v, Element::Layout));
        assert!(max_iou(&v.layout, &d.layout) < LAYOUT_DISTINCT_MIOU);
        assert_eq!(v.layout.num_text_boxes(), d.layout.num_text_boxes());
        render_glyph_image(&v.selected_texts(&cands).unwrap(), &v.layout, 64).unwrap();
    }
}

#[test]
fn replacement_is_deterministic_per_seed() {
    let cands = candidates(&["SALE", "GIFT", "HOT", "NEW"]);
    let d = random_design(&mut rng(4), &cands, 64).unwrap();
    assert_eq!(replace_background(&d, &UniformPerturber::default(), 9).unwrap(), replace_background(&d, &UniformPerturber::default(), 9).unwrap());
    if let Ok(a) = replace_text(&d, &cands, 9) {
        assert_eq!(a, replace_text(&d, &cands, 9).unwrap());
    }
}

#[test]
fn text_pairs_share_product_conditioning() {
    let cands = candidates(&["SALE", "GIFT", "HOT", "NEW"]);
    let perturber = UniformPerturber::default();
    let replacer = Replacer { perturber: &perturber, proposer: None, canvas: 64, max_attempts: 8 };
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    for s in 0..50 {
        let d = random_design(&mut r, &cands, 64).unwrap();
        let Ok(pair) = replacer.build_variant_pair(format!("p{s}"), 0, &cands, &d, Element::Text, PairSeeds { replace: s, render: s }) else { continue };
        let sprite = make_sprite(3, 32);
        assert_eq!(place_product(&sprite, &pair.base.layout, 64).unwrap(), place_product(&sprite, &pair.variant.layout, 64).unwrap());
        let g0 = render_glyph_image(&pair.base.selected_texts(&cands).unwrap(), &pair.base.layout, 64).unwrap();
        let g1 = render_glyph_image(&pair.variant.selected_texts(&cands).unwrap(), &pair.variant.layout, 64).unwrap();
        assert_ne!(g0, g1);
        let (a, b) = pair.render(&posterkit::render::Compositor { canvas: 64 }, &sprite).unwrap();
        assert_ne!(a, b);
        checked += 1;
    }
    assert!(checked > 10);
}

#[test]
fn background_pairs_render_differently() {
    let cands = candidates(&["SALE", "GIFT"]);
    let perturber = UniformPerturber::default();
    let replacer = Replacer { perturber: &perturber, proposer: None, canvas: 64, max_attempts: 8 };
    let d = random_design(&mut rng(6), &cands, 64).unwrap();
    let pair = replacer.build_variant_pair("b".into(), 0, &cands, &d, Element::Background, PairSeeds { replace: 1, render: 2 }).unwrap();
    let (a, b) = pair.render(&posterkit::render::Compositor { canvas: 64 }, &make_sprite(0, 32)).unwrap();
    assert_ne!(a, b);
    assert_eq!(design_diff(&pair.base, &pair.variant), vec![Element::Background]);
}

#[test]
fn layout_replacement_needs_a_proposer() {
    let cands = candidates(&["SALE", "GIFT"]);
    let perturber = UniformPerturber::default();
    let replacer = Replacer { perturber: &perturber, proposer: None, canvas: 64, max_attempts: 8 };
    let d = random_design(&mut rng(7), &cands, 64).unwrap();
    assert!(replacer.replace(&d, &cands, 0, Element::Layout, 0).is_err());
}
