//! End-to-end orchestration: dataset, training, replacement, simulated
//! display, preference optimization and evaluation, with a manifest that
//! records seeds and artifact hashes.

use std::path::{Path, PathBuf};

use candle_core::DType;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::closed_loop::{generate_design, latent_preferences, mean_policy_ctr, relative_ctr, variant_pairs_round, FeedbackConfig, PairGenConfig, PairGenStats};
use crate::design::data::{read_jsonl, write_jsonl, DesignExample};
use crate::design::policy::{DesignPolicy, PolicyConfig};
use crate::design::train::{train_design, DesignTrainConfig};
use crate::error::{Error, Result};
use crate::feedback::{build_preference_pairs, displayed_posters, run_display_experiment, CtrRecord, EnvKind, EnvParams, PreferencePair};
use crate::metrics::{evaluate, EvalRecord, MetricsReport};
use crate::preference::{optimize, reward_accuracy, DpoConfig, PolicyPair};
use crate::render::model::{RendererConfig, RendererModel};
use crate::render::train::{train_renderer, RenderExample, RenderTrainConfig};
use crate::render::{toy_ocr, Compositor, FlowRenderer, PosterRenderer, Raster};
use crate::replacement::VariantPair;
use crate::seeds::{derive_seed, sha256_hex};
use crate::synth::{design_examples, NUM_SPRITES, SPRITE_SIZE};

pub const STAGES: [&str; 6] = ["make_dataset", "train", "replace", "simulate", "optimize", "evaluate"];
const STAGE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RendererChoice {
    /// Exact composition; no renderer training.
    Compositor,
    /// The learned flow model.
    Flow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub products: usize,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub canvas: usize,
    /// Also write target, glyph and product PNGs per example.
    pub write_triples: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { products: 1000, split: [0.8, 0.1, 0.1], canvas: 64, write_triples: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub policy: PolicyConfig,
    pub design_train: DesignTrainConfig,
    pub renderer: RendererConfig,
    pub render_train: RenderTrainConfig,
    pub poster_renderer: RendererChoice,
    pub render_steps: usize,
    pub pair_rounds: usize,
    pub pair_gen: PairGenConfig,
    pub env: EnvKind,
    pub feedback: FeedbackConfig,
    pub dpo: DpoConfig,
    pub eval_samples: usize,
    pub write_posters: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetConfig::default(),
            policy: PolicyConfig::default(),
            design_train: DesignTrainConfig::default(),
            renderer: RendererConfig::default(),
            render_train: RenderTrainConfig::default(),
            poster_renderer: RendererChoice::Compositor,
            render_steps: 20,
            pair_rounds: 1,
            pair_gen: PairGenConfig::default(),
            env: EnvKind::Full,
            feedback: FeedbackConfig::default(),
            dpo: DpoConfig::default(),
            eval_samples: 2,
            write_posters: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.products < 3 {
            return Err(Error::invalid("need at least three products"));
        }
        if d.split.iter().any(|f| *f < 0.0) || (d.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split {:?} must be non-negative and sum to 1", d.split)));
        }
        if d.canvas != self.renderer.codec.canvas || d.canvas != self.pair_gen.canvas {
            return Err(Error::invalid("dataset, renderer and pair canvases differ"));
        }
        if d.products > self.policy.num_products {
            return Err(Error::invalid(format!("{} products but the policy embeds {}", d.products, self.policy.num_products)));
        }
        if self.feedback.views < crate::feedback::MIN_VIEWS && !self.feedback.allow_few_views {
            return Err(Error::PolicyViolation(format!("{} views per poster", self.feedback.views)));
        }
        if self.render_steps == 0 {
            return Err(Error::invalid("render_steps must be positive"));
        }
        self.dpo.validate()
    }

    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&serde_json::to_vec(self)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub train: Vec<DesignExample>,
    pub val: Vec<DesignExample>,
    pub test: Vec<DesignExample>,
}

impl Dataset {
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for ex in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(ex.product_id) {
                return Err(Error::DataIntegrity(format!("product {} appears in more than one split", ex.product_id)));
            }
        }
        Ok(())
    }
}

/// Synthetic designs for `products` product ids, split disjointly by product.
pub fn make_dataset(cfg: &DatasetConfig, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "designs"));
    let mut all = design_examples(&mut rng, 0..cfg.products, cfg.canvas)?;
    all.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "split")));
    let n_train = (cfg.products as f64 * cfg.split[0]).round() as usize;
    let n_val = ((cfg.products as f64 * cfg.split[1]).round() as usize).min(cfg.products - n_train);
    let test = all.split_off(n_train + n_val);
    let val = all.split_off(n_train);
    let ds = Dataset { train: all, val, test };
    ds.check_disjoint()?;
    Ok(ds)
}

pub fn sprite_for(product_id: usize) -> Raster {
    crate::render::make_sprite(product_id % NUM_SPRITES, SPRITE_SIZE)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub version: u32,
    pub seed: u64,
    pub status: StageStatus,
    pub inputs: Vec<String>,
    pub outputs: Vec<Artifact>,
    pub metrics: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub pretrained_ctr: f64,
    pub optimized_ctr: f64,
    pub relative_ctr: f64,
    pub reward_accuracy: f64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub root_seed: u64,
    pub dry_run: bool,
    pub config: PipelineConfig,
    pub stages: Vec<StageRecord>,
    pub summary: Option<Summary>,
}

impl RunManifest {
    pub fn skeleton(cfg: &PipelineConfig, dry_run: bool) -> Result<Self> {
        Ok(Self {
            config_hash: cfg.hash()?,
            root_seed: cfg.seed,
            dry_run,
            config: cfg.clone(),
            stages: STAGES
                .iter()
                .map(|s| StageRecord {
                    name: s.to_string(),
                    version: STAGE_VERSION,
                    seed: derive_seed(cfg.seed, s),
                    status: StageStatus::Pending,
                    inputs: Vec::new(),
                    outputs: Vec::new(),
                    metrics: serde_json::Value::Null,
                    error: None,
                })
                .collect(),
            summary: None,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Writes artifacts under a run directory and records their hashes.
struct Outputs<'a> {
    root: &'a Path,
    list: Vec<Artifact>,
}

impl<'a> Outputs<'a> {
    fn new(root: &'a Path) -> Self {
        Self { root, list: Vec::new() }
    }

    fn path(&self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir)?;
        }
        Ok(p)
    }

    fn record(&mut self, rel: &str) -> Result<()> {
        let bytes = std::fs::read(self.root.join(rel))?;
        self.list.push(Artifact { path: rel.to_string(), sha256: sha256_hex(&bytes) });
        Ok(())
    }

    fn jsonl<T: Serialize>(&mut self, rel: &str, items: &[T]) -> Result<()> {
        write_jsonl(&self.path(rel)?, items)?;
        self.record(rel)
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(self.path(rel)?, text)?;
        self.record(rel)
    }

    fn png(&mut self, rel: &str, r: &Raster) -> Result<()> {
        r.save_png(&self.path(rel)?)?;
        self.record(rel)
    }
}

pub fn write_dataset(ds: &Dataset, dir: &Path, cfg: &DatasetConfig, seed: u64) -> Result<Vec<Artifact>> {
    let mut out = Outputs::new(dir);
    for (name, split) in [("train", &ds.train), ("val", &ds.val), ("test", &ds.test)] {
        out.jsonl(&format!("data/{name}.jsonl"), split)?;
        if cfg.write_triples {
            for ex in split.iter() {
                let r = RenderExample::from_design_example(ex, derive_seed(seed, &format!("triple/{}", ex.product_id)))?;
                let s = r.synthesize(cfg.canvas)?;
                for (kind, raster) in [("target", &s.target), ("glyph", &s.glyph), ("product", &s.product)] {
                    out.png(&format!("data/{name}/{}_{kind}.png", ex.product_id), raster)?;
                }
                out.json(&format!("data/{name}/{}.json", ex.product_id), ex)?;
            }
        }
    }
    Ok(out.list)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let ds = Dataset {
        train: read_jsonl(&dir.join("data/train.jsonl"))?,
        val: read_jsonl(&dir.join("data/val.jsonl"))?,
        test: read_jsonl(&dir.join("data/test.jsonl"))?,
    };
    ds.check_disjoint()?;
    Ok(ds)
}

fn renderer_for<'a>(cfg: &PipelineConfig, model: &'a Option<RendererModel>) -> Box<dyn PosterRenderer + 'a> {
    match model {
        Some(m) => Box::new(FlowRenderer { model: m, steps: cfg.render_steps }),
        None => Box::new(Compositor { canvas: cfg.dataset.canvas }),
    }
}

fn load_renderer(cfg: &PipelineConfig, dir: &Path) -> Result<Option<RendererModel>> {
    match cfg.poster_renderer {
        RendererChoice::Compositor => Ok(None),
        RendererChoice::Flow => Ok(Some(RendererModel::load(&dir.join("models/renderer.ckpt"), DType::F32)?)),
    }
}

/// Artifacts written by a stage plus its summary metrics.
pub type StageOutput = (Vec<Artifact>, serde_json::Value);

/// The seed the pipeline hands to stage `name`.
pub fn stage_seed(cfg: &PipelineConfig, name: &str) -> u64 {
    derive_seed(cfg.seed, name)
}

pub fn make_dataset_stage(cfg: &PipelineConfig, dir: &Path, seed: u64) -> Result<StageOutput> {
    let ds = make_dataset(&cfg.dataset, seed)?;
    let outputs = write_dataset(&ds, dir, &cfg.dataset, seed)?;
    Ok((outputs, serde_json::json!({ "train": ds.train.len(), "val": ds.val.len(), "test": ds.test.len() })))
}

/// Trains the design policy into `models/policy.ckpt`.
pub fn train_policy_stage(cfg: &PipelineConfig, dir: &Path, seed: u64) -> Result<StageOutput> {
    let ds = load_dataset(dir)?;
    let mut out = Outputs::new(dir);
    let policy_cfg = PolicyConfig { seed: derive_seed(seed, "policy/init"), ..cfg.policy.clone() };
    let mut policy = DesignPolicy::new(policy_cfg, DType::F32)?;
    let dt = DesignTrainConfig { seed: derive_seed(seed, "policy/train"), checkpoint_dir: None, ..cfg.design_train.clone() };
    let design_report = train_design(&mut policy, &ds.train, &dt)?;
    policy.save(&out.path("models/policy.ckpt")?)?;
    out.record("models/policy.ckpt")?;
    out.json("models/policy_train.json", &design_report)?;
    Ok((out.list, serde_json::json!({ "design_heldout_loss": design_report.heldout_loss.last() })))
}

/// Trains the flow renderer into `models/renderer.ckpt`.
pub fn train_renderer_stage(cfg: &PipelineConfig, dir: &Path, seed: u64) -> Result<StageOutput> {
    let ds = load_dataset(dir)?;
    let mut out = Outputs::new(dir);
    let rc = RendererConfig { seed: derive_seed(seed, "renderer/init"), ..cfg.renderer.clone() };
    let mut model = RendererModel::new(rc, DType::F32)?;
    let data = ds
        .train
        .iter()
        .map(|ex| RenderExample::from_design_example(ex, derive_seed(seed, &format!("renderer/example/{}", ex.product_id))))
        .collect::<Result<Vec<_>>>()?;
    let tc = RenderTrainConfig { seed: derive_seed(seed, "renderer/train"), checkpoint_dir: None, ..cfg.render_train.clone() };
    let report = train_renderer(&mut model, &data, &tc)?;
    model.save(&out.path("models/renderer.ckpt")?)?;
    out.record("models/renderer.ckpt")?;
    out.json("models/renderer_train.json", &report)?;
    Ok((out.list, serde_json::json!({ "render_final_loss": report.loss.last() })))
}

fn stage_train(cfg: &PipelineConfig, dir: &Path, seed: u64) -> Result<StageOutput> {
    let (mut artifacts, mut metrics) = train_policy_stage(cfg, dir, seed)?;
    if cfg.poster_renderer == RendererChoice::Flow {
        let (a, m) = train_renderer_stage(cfg, dir, seed)?;
        artifacts.extend(a);
        metrics["render_final_loss"] = m["render_final_loss"].clone();
    }
    Ok((artifacts, metrics))
}

/// Samples one design per product of `split` with `policy_file` and renders it
/// under `generated/`.
pub fn generate_stage(cfg: &PipelineConfig, dir: &Path, seed: u64, split: &str, policy_file: &str) -> Result<StageOutput> {
    let ds = load_dataset(dir)?;
    let products = match split {
        "train" => &ds.train,
        "val" => &ds.val,
        "test" => &ds.test,
        other => return Err(Error::invalid(format!("unknown split {other:?}"))),
    };
    let policy = DesignPolicy::load(&dir.join(policy_file), DType::F32)?;
    let model = load_renderer(cfg, dir)?;
    let renderer = renderer_for(cfg, &model);
    let mut out = Outputs::new(dir);
    let mut designs = Vec::new();
    let mut skipped = 0usize;
    for ex in products {
        let d = generate_design(&policy, ex, cfg.pair_gen.temperature, derive_seed(seed, &format!("design/{}", ex.product_id)))?;
        let texts = d.selected_texts(&ex.candidates)?;
        match renderer.render(&d, &texts, &sprite_for(ex.product_id), derive_seed(seed, &format!("poster/{}", ex.product_id))) {
            Ok(r) => out.png(&format!("generated/{split}/{}.png", ex.product_id), &r)?,
            Err(Error::LayoutTooSmall(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
        designs.push(DesignExample { design: d, ..ex.clone() });
    }
    out.jsonl(&format!("generated/{split}.jsonl"), &designs)?;
    Ok((out.list, serde_json::json!({ "designs": designs.len(), "unrenderable": skipped })))
}

/// Builds single-element variant pairs from policy samples on the training products.
pub fn replace_stage(cfg: &PipelineConfig, dir: &Path, seed: u64) -> Result<StageOutput> {
    let ds = load_dataset(dir)?;
    let policy = DesignPolicy::load(&dir.join("models/policy.ckpt"), DType::F32)?;
    let model = load_renderer(cfg, dir)?;
    let renderer = renderer_for(cfg, &model);
    let gen = PairGenConfig { seed, ..cfg.pair_gen.clone() };
    let mut stats = PairGenStats::default();
    let mut pairs = Vec::new();
    for round in 0..cfg.pair_rounds {
        pairs.extend(variant_pairs_round(&policy, &ds.train, &gen, round, &mut stats)?);
    }
    let mut out = Outputs::new(dir);
    out.jsonl("pairs/variant_pairs.jsonl", &pairs)?;
    if cfg.write_posters {
        for p in &pairs {
            let (a, b) = p.render(renderer.as_ref(), &sprite_for(p.product_id))?;
            let stem = p.pair_id.replace('/', "_");
            out.png(&format!("pairs/posters/{stem}_base.png"), &a)?;
            out.png(&format!("pairs/posters/{stem}_variant.png"), &b)?;
        }
    }
    Ok((out.list, serde_json::json!({ "pairs": pairs.len(), "attempted": stats.attempted, "skipped": stats.skipped })))
}

/// Samples the environment and displays every poster of every variant pair.
pub fn simulate_ctr_stage(cfg: &PipelineConfig, dir: &Path, seed: u64) -> Result<StageOutput> {
    let pairs: Vec<VariantPair> = read_jsonl(&dir.join("pairs/variant_pairs.jsonl"))?;
    let env = EnvParams::sample(cfg.env, derive_seed(seed, "env"));
    let fb = FeedbackConfig { seed: derive_seed(seed, "display"), ..cfg.feedback.clone() };
    let records = run_display_experiment(&displayed_posters(&pairs)?, &env, &fb.experiment())?;
    let mut out = Outputs::new(dir);
    out.json("feedback/env.json", &env)?;
    out.jsonl("feedback/ctr_records.jsonl", &records)?;
    Ok((out.list, serde_json::json!({ "records": records.len() })))
}

/// Turns CTR records into winner/loser pairs, dropping near ties.
pub fn build_pairs_stage(cfg: &PipelineConfig, dir: &Path) -> Result<StageOutput> {
    let pairs: Vec<VariantPair> = read_jsonl(&dir.join("pairs/variant_pairs.jsonl"))?;
    let records: Vec<CtrRecord> = read_jsonl(&dir.join("feedback/ctr_records.jsonl"))?;
    let prefs = build_preference_pairs(&records, &pairs, cfg.feedback.min_rel_diff)?;
    let mut out = Outputs::new(dir);
    out.jsonl("feedback/preference_pairs.jsonl", &prefs)?;
    Ok((out.list, serde_json::json!({ "preference_pairs": prefs.len() })))
}

fn stage_simulate(cfg: &PipelineConfig, dir: &Path, seed: u64) -> Result<StageOutput> {
    let (mut artifacts, mut metrics) = simulate_ctr_stage(cfg, dir, seed)?;
    let (a, m) = build_pairs_stage(cfg, dir)?;
    artifacts.extend(a);
    metrics["preference_pairs"] = m["preference_pairs"].clone();
    Ok((artifacts, metrics))
}

/// Preference-optimizes the pretrained policy into `models/policy_optimized.ckpt`.
pub fn optimize_stage(cfg: &PipelineConfig, dir: &Path, seed: u64) -> Result<StageOutput> {
    let prefs: Vec<PreferencePair> = read_jsonl(&dir.join("feedback/preference_pairs.jsonl"))?;
    let policy = DesignPolicy::load(&dir.join("models/policy.ckpt"), DType::F32)?;
    let mut pp = PolicyPair::new(policy)?;
    let dc = DpoConfig { seed, checkpoint_dir: None, ..cfg.dpo.clone() };
    let report = optimize(&mut pp, &prefs, &dc, None)?;
    let mut out = Outputs::new(dir);
    pp.policy.save(&out.path("models/policy_optimized.ckpt")?)?;
    out.record("models/policy_optimized.ckpt")?;
    out.jsonl("optimize/epochs.jsonl", &report.epochs)?;
    Ok((out.list, serde_json::json!({ "final_loss": report.epochs.last().map(|e| e.mean_loss) })))
}

/// CTR of both policies on the test products, reward accuracy on latent
/// validation pairs and layout/text metrics of the optimized policy.
pub fn evaluate_stage(cfg: &PipelineConfig, dir: &Path, seed: u64) -> Result<(Vec<Artifact>, Summary)> {
    let ds = load_dataset(dir)?;
    let env: EnvParams = serde_json::from_str(&std::fs::read_to_string(dir.join("feedback/env.json"))?)?;
    let pretrained = DesignPolicy::load(&dir.join("models/policy.ckpt"), DType::F32)?;
    let optimized = DesignPolicy::load(&dir.join("models/policy_optimized.ckpt"), DType::F32)?;
    let eval_seed = derive_seed(seed, "ctr");
    let temp = cfg.pair_gen.temperature;
    let pretrained_ctr = mean_policy_ctr(&pretrained, &ds.test, &env, cfg.eval_samples, temp, eval_seed)?;
    let optimized_ctr = mean_policy_ctr(&optimized, &ds.test, &env, cfg.eval_samples, temp, eval_seed)?;

    let gen = PairGenConfig { seed: derive_seed(seed, "val_pairs"), ..cfg.pair_gen.clone() };
    let val_pairs = latent_preferences(&variant_pairs_round(&pretrained, &ds.val, &gen, 0, &mut PairGenStats::default())?, &env)?;
    let pp = PolicyPair { policy: optimized, reference: pretrained };
    let accuracy = if val_pairs.is_empty() { f64::NAN } else { reward_accuracy(&val_pairs, &pp, &cfg.dpo)? };

    let model = load_renderer(cfg, dir)?;
    let renderer = renderer_for(cfg, &model);
    let mut records = Vec::new();
    for ex in &ds.test {
        let d = generate_design(&pp.policy, ex, 0.0, derive_seed(seed, &format!("layout/{}", ex.product_id)))?;
        let texts = d.selected_texts(&ex.candidates)?;
        let (ocr, texts) = match renderer.render(&d, &texts, &sprite_for(ex.product_id), derive_seed(seed, &format!("poster/{}", ex.product_id))) {
            Ok(r) => (toy_ocr(&r, &d.layout), texts.iter().map(|t| t.to_string()).collect()),
            Err(Error::LayoutTooSmall(_)) => (Vec::new(), Vec::new()),
            Err(e) => return Err(e),
        };
        records.push(EvalRecord { layout: d.layout, reference: ex.design.layout.clone(), ocr, texts });
    }
    let metrics = evaluate(&records)?;
    let summary = Summary { pretrained_ctr, optimized_ctr, relative_ctr: relative_ctr(pretrained_ctr, optimized_ctr), reward_accuracy: accuracy, metrics };
    let mut out = Outputs::new(dir);
    out.jsonl("eval/records.jsonl", &records)?;
    out.json("eval/report.json", &summary)?;
    Ok((out.list, summary))
}

fn stage_inputs(name: &str) -> Vec<String> {
    let v: &[&str] = match name {
        "make_dataset" => &[],
        "train" => &["data/train.jsonl"],
        "replace" => &["data/train.jsonl", "models/policy.ckpt"],
        "simulate" => &["pairs/variant_pairs.jsonl"],
        "optimize" => &["feedback/preference_pairs.jsonl", "models/policy.ckpt"],
        _ => &["data/val.jsonl", "data/test.jsonl", "feedback/env.json", "models/policy.ckpt", "models/policy_optimized.ckpt"],
    };
    v.iter().map(|s| s.to_string()).collect()
}

/// Run every stage in order under `dir`, writing `manifest.json` after each
/// stage. A failing stage is marked in the manifest and its error returned.
pub fn run_pipeline(cfg: &PipelineConfig, dir: &Path, dry_run: bool) -> Result<RunManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(dir)?;
    let manifest_path = dir.join("manifest.json");
    let mut manifest = RunManifest::skeleton(cfg, dry_run)?;
    for stage in manifest.stages.iter_mut() {
        stage.inputs = stage_inputs(&stage.name);
    }
    manifest.save(&manifest_path)?;
    if dry_run {
        return Ok(manifest);
    }
    for i in 0..manifest.stages.len() {
        let (name, seed) = (manifest.stages[i].name.clone(), manifest.stages[i].seed);
        log::info!("stage {name}");
        let result = match name.as_str() {
            "make_dataset" => make_dataset_stage(cfg, dir, seed),
            "train" => stage_train(cfg, dir, seed),
            "replace" => replace_stage(cfg, dir, seed),
            "simulate" => stage_simulate(cfg, dir, seed),
            "optimize" => optimize_stage(cfg, dir, seed),
            _ => evaluate_stage(cfg, dir, seed).and_then(|(a, s)| {
                let m = serde_json::to_value(&s)?;
                manifest.summary = Some(s);
                Ok((a, m))
            }),
        };
        let stage = &mut manifest.stages[i];
        match result {
            Ok((outputs, metrics)) => {
                stage.outputs = outputs;
                stage.metrics = metrics;
                stage.status = StageStatus::Done;
                manifest.save(&manifest_path)?;
            }
            Err(e) => {
                stage.status = StageStatus::Failed;
                stage.error = Some(e.to_string());
                manifest.save(&manifest_path)?;
                return Err(Error::Stage { stage: name, source: Box::new(e) });
            }
        }
    }
    Ok(manifest)
}
