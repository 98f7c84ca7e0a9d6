//! Simulated display experiments: a latent preference model assigns each
//! design a click-through rate, binomial clicks give empirical rates, and
//! variant pairs with a clear winner become preference pairs.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::design::types::{Background, CandidateTextSet, Design, ElementKind, Layout};
use crate::error::{Error, Result};
use crate::replacement::{Element, VariantPair};
use crate::seeds::derive_seed;
use crate::synth::PHRASES;

pub const MIN_VIEWS: u64 = 50;
pub const NUM_LAYOUT_FEATURES: usize = 4;

/// Layout features the environment scores: product area, total text area,
/// fraction of text area covering the product, and product-center distance
/// from the canvas center.
pub fn layout_features(l: &Layout) -> [f64; NUM_LAYOUT_FEATURES] {
    let Some(p) = l.product_box() else { return [0.0; NUM_LAYOUT_FEATURES] };
    let [px0, py0, px1, py1] = p.coords();
    let (mut text_area, mut covered) = (0.0, 0.0);
    for t in l.boxes.iter().filter(|b| b.kind == ElementKind::Text) {
        let [x0, y0, x1, y1] = t.coords();
        text_area += t.area();
        covered += (x1.min(px1) - x0.max(px0)).max(0.0) * (y1.min(py1) - y0.max(py0)).max(0.0);
    }
    let cover = if text_area > 0.0 { covered / text_area } else { 0.0 };
    let center = (((px0 + px1) / 2.0 - 0.5).powi(2) + ((py0 + py1) / 2.0 - 0.5).powi(2)).sqrt();
    [p.area(), text_area, cover, center]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    /// One weight per background descriptor, by [`Background::index`].
    pub theta_b: Vec<f64>,
    /// Attractiveness per candidate text; unknown texts score 0.
    pub theta_t: BTreeMap<String, f64>,
    pub theta_l: [f64; NUM_LAYOUT_FEATURES],
    pub base_rate: f64,
    pub scale: f64,
    pub ctr_min: f64,
    pub ctr_max: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    /// Background, texts and layout all matter.
    Full,
    /// Only the background affects the click-through rate.
    BackgroundOnly,
}

impl EnvParams {
    /// All weights zero: every design gets the midpoint rate.
    pub fn neutral() -> Self {
        Self {
            theta_b: vec![0.0; Background::COUNT],
            theta_t: BTreeMap::new(),
            theta_l: [0.0; NUM_LAYOUT_FEATURES],
            base_rate: 0.0,
            scale: 1.0,
            ctr_min: 0.005,
            ctr_max: 0.12,
            seed: 0,
        }
    }

    pub fn sample(kind: EnvKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let theta_b = (0..Background::COUNT).map(|_| normal.sample(&mut rng)).collect();
        let mut env = Self { theta_b, base_rate: -1.0, seed, ..Self::neutral() };
        if kind == EnvKind::Full {
            env.theta_t = PHRASES.iter().map(|p| (p.to_string(), 0.7 * normal.sample(&mut rng))).collect();
            env.theta_l = [3.0, 2.0, -2.0, -1.5];
        }
        env
    }

    pub fn validate(&self) -> Result<()> {
        if self.theta_b.len() != Background::COUNT {
            return Err(Error::invalid(format!("theta_b has {} entries, expected {}", self.theta_b.len(), Background::COUNT)));
        }
        if !(0.0 <= self.ctr_min && self.ctr_min < self.ctr_max && self.ctr_max <= 1.0) {
            return Err(Error::invalid(format!("bad click-through range [{}, {}]", self.ctr_min, self.ctr_max)));
        }
        Ok(())
    }

    pub fn utility(&self, d: &Design, texts: &[&str]) -> f64 {
        let b = self.theta_b.get(d.background.index()).copied().unwrap_or(0.0);
        let t: f64 = texts.iter().map(|t| self.theta_t.get(*t).copied().unwrap_or(0.0)).sum();
        let l: f64 = self.theta_l.iter().zip(layout_features(&d.layout)).map(|(w, f)| w * f).sum();
        b + t + l
    }
}

/// `ctr_min + (ctr_max - ctr_min) * sigmoid(base_rate + scale * utility)`.
pub fn latent_ctr(d: &Design, texts: &[&str], env: &EnvParams) -> f64 {
    let z = env.base_rate + env.scale * env.utility(d, texts);
    env.ctr_min + (env.ctr_max - env.ctr_min) / (1.0 + (-z).exp())
}

/// A poster shown in the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Displayed {
    pub poster_id: String,
    pub design: Design,
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtrRecord {
    pub poster_id: String,
    pub views: u64,
    pub clicks: u64,
    pub empirical_ctr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub views: u64,
    pub seed: u64,
    /// Permit fewer than [`MIN_VIEWS`] views per poster.
    pub allow_few_views: bool,
}

/// Clicks drawn from `Binomial(views, latent_ctr)` with a per-poster seed
/// derived from the experiment seed and poster id.
pub fn run_display_experiment(posters: &[Displayed], env: &EnvParams, cfg: &ExperimentConfig) -> Result<Vec<CtrRecord>> {
    if cfg.views < MIN_VIEWS && !cfg.allow_few_views {
        return Err(Error::PolicyViolation(format!("{} views per poster, at least {MIN_VIEWS} required", cfg.views)));
    }
    env.validate()?;
    posters
        .iter()
        .map(|p| {
            let texts: Vec<&str> = p.texts.iter().map(String::as_str).collect();
            let ctr = latent_ctr(&p.design, &texts, env);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &p.poster_id));
            let clicks = Binomial::new(cfg.views, ctr).map_err(|e| Error::invalid(e.to_string()))?.sample(&mut rng);
            let empirical_ctr = if cfg.views == 0 { 0.0 } else { clicks as f64 / cfg.views as f64 };
            Ok(CtrRecord { poster_id: p.poster_id.clone(), views: cfg.views, clicks, empirical_ctr })
        })
        .collect()
}

/// Both posters of every variant pair, ready for display.
pub fn displayed_posters(pairs: &[VariantPair]) -> Result<Vec<Displayed>> {
    let mut out = Vec::with_capacity(2 * pairs.len());
    for p in pairs {
        for (id, d) in [(p.base_id(), &p.base), (p.variant_id(), &p.variant)] {
            let texts = d.selected_texts(&p.candidates)?.into_iter().map(String::from).collect();
            out.push(Displayed { poster_id: id, design: d.clone(), texts });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub product_id: usize,
    pub candidates: CandidateTextSet,
    pub winner: Design,
    pub loser: Design,
    pub replaced_element: Element,
    pub winner_ctr: f64,
    pub loser_ctr: f64,
}

/// `|c1 - c2| / min(c1, c2)`; infinite when only one rate is zero.
pub fn relative_difference(c1: f64, c2: f64) -> f64 {
    let diff = (c1 - c2).abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / c1.min(c2)
    }
}

/// Keep pairs whose empirical rates differ by at least `min_rel_diff`
/// relative to the smaller rate; the higher rate wins and ties are dropped.
pub fn build_preference_pairs(records: &[CtrRecord], pairs: &[VariantPair], min_rel_diff: f64) -> Result<Vec<PreferencePair>> {
    let by_id: HashMap<&str, &CtrRecord> = records.iter().map(|r| (r.poster_id.as_str(), r)).collect();
    let lookup = |id: String| -> Result<f64> {
        by_id.get(id.as_str()).map(|r| r.empirical_ctr).ok_or_else(|| Error::DataIntegrity(format!("no record for poster {id}")))
    };
    let mut out = Vec::new();
    for p in pairs {
        p.check()?;
        let (cb, cv) = (lookup(p.base_id())?, lookup(p.variant_id())?);
        if cb == cv || relative_difference(cb, cv) < min_rel_diff {
            continue;
        }
        let (winner, loser, winner_ctr, loser_ctr) = if cb > cv { (&p.base, &p.variant, cb, cv) } else { (&p.variant, &p.base, cv, cb) };
        out.push(PreferencePair {
            product_id: p.product_id,
            candidates: p.candidates.clone(),
            winner: winner.clone(),
            loser: loser.clone(),
            replaced_element: p.replaced_element,
            winner_ctr,
            loser_ctr,
        });
    }
    Ok(out)
}

/// Fraction of `pairs` whose winner also has the higher latent rate.
pub fn latent_agreement(pairs: &[PreferencePair], env: &EnvParams) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no pairs"));
    }
    let mut agree = 0usize;
    for p in pairs {
        let w = latent_ctr(&p.winner, &p.winner.selected_texts(&p.candidates)?, env);
        let l = latent_ctr(&p.loser, &p.loser.selected_texts(&p.candidates)?, env);
        agree += usize::from(w > l);
    }
    Ok(agree as f64 / pairs.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::types::BBox;

    fn design(bg: u8) -> Design {
        Design {
            background: Background::new(bg, 0).unwrap(),
            selected: vec![0],
            layout: Layout::new(vec![
                BBox::from_bins(ElementKind::Product, [0, 0, 30, 30]).unwrap(),
                BBox::from_bins(ElementKind::Text, [2, 40, 60, 50]).unwrap(),
            ]),
        }
    }

    #[test]
    fn neutral_env_gives_midpoint() {
        let env = EnvParams::neutral();
        let mid = (env.ctr_min + env.ctr_max) / 2.0;
        assert!((latent_ctr(&design(3), &["SALE"], &env) - mid).abs() < 1e-15);
    }

    #[test]
    fn background_weight_is_monotone() {
        let mut env = EnvParams::neutral();
        let d = design(2);
        let before = latent_ctr(&d, &["SALE"], &env);
        env.theta_b[d.background.index()] += 0.5;
        assert!(latent_ctr(&d, &["SALE"], &env) > before);
    }

    #[test]
    fn text_weights_order_rates() {
        let mut env = EnvParams::neutral();
        env.theta_t.insert("SALE".into(), 1.0);
        env.theta_t.insert("GIFT".into(), -1.0);
        let d = design(0);
        assert!(latent_ctr(&d, &["SALE"], &env) > latent_ctr(&d, &["GIFT"], &env));
    }

    #[test]
    fn view_floor_is_enforced() {
        let p = Displayed { poster_id: "a".into(), design: design(0), texts: vec!["SALE".into()] };
        let env = EnvParams::neutral();
        let cfg = ExperimentConfig { views: 10, seed: 0, allow_few_views: false };
        assert!(matches!(run_display_experiment(&[p.clone()], &env, &cfg), Err(Error::PolicyViolation(_))));
        let ok = run_display_experiment(&[p], &env, &ExperimentConfig { allow_few_views: true, ..cfg }).unwrap();
        assert_eq!(ok[0].views, 10);
    }

    #[test]
    fn zero_rate_gives_zero_clicks() {
        let env = EnvParams { ctr_min: 0.0, ctr_max: 1.0, base_rate: -1e9, ..EnvParams::neutral() };
        let p = Displayed { poster_id: "z".into(), design: design(0), texts: vec!["SALE".into()] };
        let r = run_display_experiment(&[p], &env, &ExperimentConfig { views: 1000, seed: 1, allow_few_views: false }).unwrap();
        assert_eq!(r[0].clicks, 0);
    }

    #[test]
    fn relative_difference_rules() {
        assert!(relative_difference(0.05, 0.03) >= 0.01);
        assert!(relative_difference(0.0500, 0.0501) < 0.01);
        assert_eq!(relative_difference(0.04, 0.04), 0.0);
    }
}
