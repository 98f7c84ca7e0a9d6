//! The generate, replace, display and optimize loop as reusable steps.

use serde::{Deserialize, Serialize};

use crate::design::codec::format_instruction;
use crate::design::data::DesignExample;
use crate::design::policy::DesignPolicy;
use crate::design::sample::{sample_design, DecodeConfig, DecodeMode};
use crate::design::types::Design;
use crate::error::{Error, Result};
use crate::feedback::{build_preference_pairs, displayed_posters, latent_ctr, run_display_experiment, CtrRecord, EnvParams, ExperimentConfig, PreferencePair};
use crate::replacement::{Element, PairSeeds, PolicyProposer, Replacer, UniformPerturber, VariantPair};
use crate::seeds::derive_seed;

/// Sample one design for a product.
pub fn generate_design(policy: &DesignPolicy, ex: &DesignExample, temperature: f64, seed: u64) -> Result<Design> {
    let instr = format_instruction(&ex.candidates)?;
    let mode = if temperature > 0.0 { DecodeMode::Temperature } else { DecodeMode::Greedy };
    let text_chars = ex.candidates.texts().iter().map(|t| t.chars().count()).collect();
    let cfg = DecodeConfig { mode, temperature: temperature.max(f64::MIN_POSITIVE), seed, text_chars, ..Default::default() };
    sample_design(policy, ex.product_id, &instr, ex.candidates.len(), &cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairGenConfig {
    pub elements: Vec<Element>,
    pub temperature: f64,
    pub canvas: usize,
    pub max_layout_attempts: usize,
    pub seed: u64,
}

impl Default for PairGenConfig {
    fn default() -> Self {
        Self { elements: Element::ALL.to_vec(), temperature: 1.0, canvas: 64, max_layout_attempts: 32, seed: 0 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PairGenStats {
    pub attempted: usize,
    pub skipped: usize,
}

/// Variant pairs for the products in round `round`: the policy designs a
/// base poster for each product and every configured element is replaced
/// once. Replacements that have no admissible alternative are skipped.
pub fn variant_pairs_round(policy: &DesignPolicy, products: &[DesignExample], cfg: &PairGenConfig, round: usize, stats: &mut PairGenStats) -> Result<Vec<VariantPair>> {
    let perturber = UniformPerturber::default();
    let proposer = PolicyProposer { policy, temperature: cfg.temperature, canvas: cfg.canvas };
    let replacer = Replacer { perturber: &perturber, proposer: Some(&proposer), canvas: cfg.canvas, max_attempts: cfg.max_layout_attempts };
    let mut out = Vec::new();
    for ex in products {
        let tag = format!("{round}/{}", ex.product_id);
        let base = match generate_design(policy, ex, cfg.temperature, derive_seed(cfg.seed, &format!("base/{tag}"))) {
            Ok(d) => d,
            Err(Error::GenerationFailure { .. }) => {
                stats.skipped += cfg.elements.len();
                continue;
            }
            Err(e) => return Err(e),
        };
        for &element in &cfg.elements {
            stats.attempted += 1;
            let id = format!("{tag}/{element}");
            let seeds = PairSeeds { replace: derive_seed(cfg.seed, &format!("replace/{id}")), render: derive_seed(cfg.seed, &format!("render/{id}")) };
            match replacer.build_variant_pair(id, ex.product_id, &ex.candidates, &base, element, seeds) {
                Ok(p) => out.push(p),
                Err(Error::NoAlternative(_) | Error::NoDistinctLayout(_) | Error::CannotPerturb(_)) => stats.skipped += 1,
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeedbackConfig {
    pub views: u64,
    pub min_rel_diff: f64,
    pub allow_few_views: bool,
    pub seed: u64,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        Self { views: 50, min_rel_diff: 0.01, allow_few_views: false, seed: 0 }
    }
}

impl FeedbackConfig {
    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig { views: self.views, seed: self.seed, allow_few_views: self.allow_few_views }
    }
}

/// Display both posters of each pair and keep the pairs with a clear winner.
pub fn simulate_feedback(pairs: &[VariantPair], env: &EnvParams, cfg: &FeedbackConfig) -> Result<(Vec<CtrRecord>, Vec<PreferencePair>)> {
    let posters = displayed_posters(pairs)?;
    let records = run_display_experiment(&posters, env, &cfg.experiment())?;
    let prefs = build_preference_pairs(&records, pairs, cfg.min_rel_diff)?;
    Ok((records, prefs))
}

/// Generate rounds of variant pairs until at least `target` preference
/// pairs survive filtering, then truncate to `target`.
pub fn collect_preferences(
    policy: &DesignPolicy,
    products: &[DesignExample],
    env: &EnvParams,
    target: usize,
    gen: &PairGenConfig,
    feedback: &FeedbackConfig,
) -> Result<Vec<PreferencePair>> {
    if products.is_empty() {
        return Err(Error::invalid("no products to generate pairs for"));
    }
    let mut out = Vec::new();
    let mut stats = PairGenStats::default();
    for round in 0.. {
        if out.len() >= target {
            break;
        }
        if round > 0 && round % 50 == 0 && out.is_empty() {
            return Err(Error::invalid("no preference pairs survive filtering"));
        }
        let pairs = variant_pairs_round(policy, products, gen, round, &mut stats)?;
        let fb = FeedbackConfig { seed: derive_seed(feedback.seed, &format!("round/{round}")), ..feedback.clone() };
        out.extend(simulate_feedback(&pairs, env, &fb)?.1);
    }
    log::info!("{} preference pairs from {} replacements ({} skipped)", out.len(), stats.attempted, stats.skipped);
    out.truncate(target);
    Ok(out)
}

/// Preference pairs labelled by the latent rates themselves; pairs with
/// equal latent rates are dropped.
pub fn latent_preferences(pairs: &[VariantPair], env: &EnvParams) -> Result<Vec<PreferencePair>> {
    let mut out = Vec::new();
    for p in pairs {
        p.check()?;
        let cb = latent_ctr(&p.base, &p.base.selected_texts(&p.candidates)?, env);
        let cv = latent_ctr(&p.variant, &p.variant.selected_texts(&p.candidates)?, env);
        if cb == cv {
            continue;
        }
        let (winner, loser, wc, lc) = if cb > cv { (&p.base, &p.variant, cb, cv) } else { (&p.variant, &p.base, cv, cb) };
        out.push(PreferencePair {
            product_id: p.product_id,
            candidates: p.candidates.clone(),
            winner: winner.clone(),
            loser: loser.clone(),
            replaced_element: p.replaced_element,
            winner_ctr: wc,
            loser_ctr: lc,
        });
    }
    Ok(out)
}

/// Mean latent rate of designs the policy samples for `products`, with
/// `samples` draws per product under fixed seeds.
pub fn mean_policy_ctr(policy: &DesignPolicy, products: &[DesignExample], env: &EnvParams, samples: usize, temperature: f64, seed: u64) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for ex in products {
        for k in 0..samples {
            let s = derive_seed(seed, &format!("eval/{}/{k}", ex.product_id));
            match generate_design(policy, ex, temperature, s) {
                Ok(d) => {
                    total += latent_ctr(&d, &d.selected_texts(&ex.candidates)?, env);
                    n += 1;
                }
                Err(Error::GenerationFailure { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }
    if n == 0 {
        return Err(Error::invalid("the policy produced no valid design"));
    }
    Ok(total / n as f64)
}

/// `(optimized - pretrained) / pretrained`.
pub fn relative_ctr(pretrained: f64, optimized: f64) -> f64 {
    (optimized - pretrained) / pretrained
}
