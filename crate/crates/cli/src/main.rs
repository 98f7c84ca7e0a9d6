//! `posterkit` command-line driver.
//!
//! Every subcommand accepts `--config <json>`, a full or partial pipeline
//! configuration; explicit flags override the corresponding config fields.
//! Exit codes: 0 success, 2 validation error, 3 stage failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use candle_core::DType;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use posterkit::closed_loop::generate_design;
use posterkit::design::data::{read_jsonl, write_jsonl, DesignExample};
use posterkit::design::{train_design, DesignPolicy, DesignTrainConfig, Layout, PolicyConfig};
use posterkit::feedback::{build_preference_pairs, displayed_posters, run_display_experiment, CtrRecord, EnvParams, PreferencePair};
use posterkit::metrics::{attention_flops, evaluate, flops_reduction, AttentionMode, BlockDims, EvalRecord};
use posterkit::pipeline::{make_dataset, run_pipeline, sprite_for, stage_seed, write_dataset, PipelineConfig};
use posterkit::preference::{optimize, PolicyPair, PreferenceMode};
use posterkit::render::model::RendererModel;
use posterkit::render::train::{train_renderer, RenderExample, RenderTrainConfig};
use posterkit::render::{toy_ocr, Compositor, FlowRenderer, PosterRenderer, Raster};
use posterkit::replacement::{Element, PairSeeds, PolicyProposer, Replacer, UniformPerturber, VariantPair};
use posterkit::seeds::derive_seed;
use posterkit::{Error, Result};

#[derive(Parser)]
#[command(name = "posterkit", version, about = "Poster generation with CTR-driven preference optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (JSON); missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic product dataset and its train/val/test split.
    MakeDataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the design policy with cross-entropy.
    TrainDesign {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the flow-matching renderer.
    TrainRender {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render one design, or sample and render designs for a product file.
    Generate(GenerateArgs),
    /// Build single-element variant pairs.
    Replace {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        designs: PathBuf,
        #[arg(long, value_enum, default_value_t = ElementArg::All)]
        element: ElementArg,
        #[arg(long)]
        out: PathBuf,
        /// Design policy used to propose layouts (required for layout pairs).
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Render both posters of every pair into this directory.
        #[arg(long)]
        render_dir: Option<PathBuf>,
        /// Flow renderer checkpoint; the exact compositor is used without it.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Display every poster of every pair and record clicks.
    SimulateCtr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pairs: PathBuf,
        /// Environment parameters; sampled from the config and written next to `--out` when absent.
        #[arg(long)]
        env: Option<PathBuf>,
        #[arg(long)]
        views: Option<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn CTR records into winner/loser preference pairs.
    BuildPairs {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        min_rel_diff: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Preference-optimize a pretrained policy.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        alpha_replaced: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Layout and text metrics of predictions against references.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Analytic attention-block FLOPs, full versus decomposed.
    FlopsReport {
        #[command(flatten)]
        common: Common,
        /// Block dimensions `{d, h, r, m}`; FLUX-like defaults when absent.
        #[arg(long)]
        dims: Option<PathBuf>,
    },
    /// Run every stage into a run directory and write its manifest.
    RunPipeline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Validate and write the manifest skeleton only.
        #[arg(long)]
        dry_run: bool,
    },
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    /// A single design record `{product_id, candidates, design}`.
    #[arg(long, requires = "sprite", conflicts_with_all = ["policy", "products"])]
    design: Option<PathBuf>,
    #[arg(long)]
    sprite: Option<PathBuf>,
    /// Policy checkpoint used to sample designs for `--products`.
    #[arg(long, requires = "products")]
    policy: Option<PathBuf>,
    #[arg(long)]
    products: Option<PathBuf>,
    /// Flow renderer checkpoint; the exact compositor is used without it.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output PNG for `--design`, output directory for `--policy`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ElementArg {
    Background,
    Text,
    Layout,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Dpo,
    Idpo,
}

/// One line of `evaluate --pred`.
#[derive(Debug, Serialize, Deserialize)]
struct Prediction {
    product_id: usize,
    layout: Layout,
    #[serde(default)]
    ocr: Vec<String>,
    /// Texts the poster was drawn with; empty means the reference selection.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    texts: Vec<String>,
}

/// A variant pair plus the paths of its rendered posters.
#[derive(Serialize)]
struct PairRecord<'a> {
    #[serde(flatten)]
    pair: &'a VariantPair,
    #[serde(skip_serializing_if = "Option::is_none")]
    base_raster: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    variant_raster: Option<String>,
}

#[derive(Deserialize)]
struct FlopsDims {
    d: u64,
    h: u64,
    r: u64,
    m: u64,
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    match &common.config {
        Some(p) => Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn parent_dir(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}

fn load_model(path: &Option<PathBuf>) -> Result<Option<RendererModel>> {
    path.as_ref().map(|p| RendererModel::load(p, DType::F32)).transpose()
}

fn renderer<'a>(model: &'a Option<RendererModel>, canvas: usize, steps: usize) -> Box<dyn PosterRenderer + 'a> {
    match model {
        Some(m) => Box::new(FlowRenderer { model: m, steps }),
        None => Box::new(Compositor { canvas }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::MakeDataset { common, out, seed } => {
            let cfg = load_config(&common)?;
            cfg.validate()?;
            let seed = seed.unwrap_or_else(|| stage_seed(&cfg, "make_dataset"));
            let ds = make_dataset(&cfg.dataset, seed)?;
            let artifacts = write_dataset(&ds, &out, &cfg.dataset, seed)?;
            println!("{} train, {} val, {} test; {} files", ds.train.len(), ds.val.len(), ds.test.len(), artifacts.len());
        }
        Command::TrainDesign { common, data, out, seed } => {
            let cfg = load_config(&common)?;
            let examples: Vec<DesignExample> = read_jsonl(&data)?;
            let seed = seed.unwrap_or_else(|| stage_seed(&cfg, "train"));
            let pc = PolicyConfig { seed: derive_seed(seed, "policy/init"), ..cfg.policy.clone() };
            let mut policy = DesignPolicy::new(pc, DType::F32)?;
            let tc = DesignTrainConfig { seed: derive_seed(seed, "policy/train"), ..cfg.design_train.clone() };
            let report = train_design(&mut policy, &examples, &tc)?;
            std::fs::create_dir_all(&out)?;
            policy.save(&out.join("policy.ckpt"))?;
            write_json(&out.join("policy_train.json"), &report)?;
            println!("held-out loss {:?}", report.heldout_loss.last());
        }
        Command::TrainRender { common, data, out, seed } => {
            let cfg = load_config(&common)?;
            let examples: Vec<DesignExample> = read_jsonl(&data)?;
            let seed = seed.unwrap_or_else(|| stage_seed(&cfg, "train"));
            let rc = posterkit::render::model::RendererConfig { seed: derive_seed(seed, "renderer/init"), ..cfg.renderer.clone() };
            let mut model = RendererModel::new(rc, DType::F32)?;
            let data = examples
                .iter()
                .map(|ex| RenderExample::from_design_example(ex, derive_seed(seed, &format!("renderer/example/{}", ex.product_id))))
                .collect::<Result<Vec<_>>>()?;
            let tc = RenderTrainConfig { seed: derive_seed(seed, "renderer/train"), ..cfg.render_train.clone() };
            let report = train_renderer(&mut model, &data, &tc)?;
            std::fs::create_dir_all(&out)?;
            model.save(&out.join("renderer.ckpt"))?;
            write_json(&out.join("renderer_train.json"), &report)?;
            println!("final loss {:?}", report.loss.last());
        }
        Command::Generate(args) => generate(args)?,
        Command::Replace { common, designs, element, out, policy, render_dir, model, seed } => {
            let cfg = load_config(&common)?;
            let examples: Vec<DesignExample> = read_jsonl(&designs)?;
            let elements: Vec<Element> = match element {
                ElementArg::Background => vec![Element::Background],
                ElementArg::Text => vec![Element::Text],
                ElementArg::Layout => vec![Element::Layout],
                ElementArg::All => Element::ALL.to_vec(),
            };
            let policy = policy.map(|p| DesignPolicy::load(&p, DType::F32)).transpose()?;
            if elements.contains(&Element::Layout) && policy.is_none() {
                return Err(Error::invalid("layout replacement needs --policy"));
            }
            let proposer = policy.as_ref().map(|p| PolicyProposer { policy: p, temperature: cfg.pair_gen.temperature, canvas: cfg.dataset.canvas });
            let perturber = UniformPerturber::default();
            let replacer = Replacer {
                perturber: &perturber,
                proposer: proposer.as_ref().map(|p| p as &dyn posterkit::replacement::DesignProposer),
                canvas: cfg.dataset.canvas,
                max_attempts: cfg.pair_gen.max_layout_attempts,
            };
            let model = load_model(&model)?;
            let poster_renderer = renderer(&model, cfg.dataset.canvas, cfg.render_steps);
            let mut pairs = Vec::new();
            let mut skipped = 0usize;
            for ex in &examples {
                for &el in &elements {
                    let id = format!("{}/{el}", ex.product_id);
                    let seeds = PairSeeds { replace: derive_seed(seed, &format!("replace/{id}")), render: derive_seed(seed, &format!("render/{id}")) };
                    match replacer.build_variant_pair(id, ex.product_id, &ex.candidates, &ex.design, el, seeds) {
                        Ok(p) => pairs.push(p),
                        Err(e @ (Error::NoAlternative(_) | Error::NoDistinctLayout(_) | Error::CannotPerturb(_))) => {
                            log::warn!("product {} {el}: {e}", ex.product_id);
                            skipped += 1;
                        }
                        Err(e) => return Err(e),
                    }
                }
            }
            let mut records = Vec::with_capacity(pairs.len());
            for p in &pairs {
                let (mut base_raster, mut variant_raster) = (None, None);
                if let Some(dir) = &render_dir {
                    std::fs::create_dir_all(dir)?;
                    let (a, b) = p.render(poster_renderer.as_ref(), &sprite_for(p.product_id))?;
                    let stem = p.pair_id.replace('/', "_");
                    let (pa, pb) = (dir.join(format!("{stem}_base.png")), dir.join(format!("{stem}_variant.png")));
                    a.save_png(&pa)?;
                    b.save_png(&pb)?;
                    base_raster = Some(pa.display().to_string());
                    variant_raster = Some(pb.display().to_string());
                }
                records.push(PairRecord { pair: p, base_raster, variant_raster });
            }
            parent_dir(&out)?;
            write_jsonl(&out, &records)?;
            println!("{} pairs, {skipped} skipped", pairs.len());
        }
        Command::SimulateCtr { common, pairs, env, views, seed, out } => {
            let cfg = load_config(&common)?;
            let pairs: Vec<VariantPair> = read_jsonl(&pairs)?;
            let env = match env {
                Some(p) => serde_json::from_str::<EnvParams>(&std::fs::read_to_string(p)?)?,
                None => {
                    let env = EnvParams::sample(cfg.env, derive_seed(seed, "env"));
                    write_json(&out.with_extension("env.json"), &env)?;
                    env
                }
            };
            env.validate()?;
            let fb = posterkit::closed_loop::FeedbackConfig { views: views.unwrap_or(cfg.feedback.views), seed: derive_seed(seed, "display"), ..cfg.feedback.clone() };
            let records = run_display_experiment(&displayed_posters(&pairs)?, &env, &fb.experiment())?;
            parent_dir(&out)?;
            write_jsonl(&out, &records)?;
            println!("{} records", records.len());
        }
        Command::BuildPairs { common, records, pairs, min_rel_diff, out } => {
            let cfg = load_config(&common)?;
            let records: Vec<CtrRecord> = read_jsonl(&records)?;
            let pairs: Vec<VariantPair> = read_jsonl(&pairs)?;
            let prefs = build_preference_pairs(&records, &pairs, min_rel_diff.unwrap_or(cfg.feedback.min_rel_diff))?;
            parent_dir(&out)?;
            write_jsonl(&out, &prefs)?;
            println!("{} preference pairs from {} variant pairs", prefs.len(), pairs.len());
        }
        Command::Optimize { common, pairs, policy, mode, beta, alpha_replaced, epochs, seed, out } => {
            let cfg = load_config(&common)?;
            let mut dc = cfg.dpo.clone();
            if let Some(m) = mode {
                dc.mode = match m {
                    ModeArg::Dpo => PreferenceMode::Dpo,
                    ModeArg::Idpo => PreferenceMode::Idpo,
                };
            }
            dc.beta = beta.unwrap_or(dc.beta);
            dc.alpha_replaced = alpha_replaced.unwrap_or(dc.alpha_replaced);
            dc.epochs = epochs.unwrap_or(dc.epochs);
            dc.seed = seed.unwrap_or(dc.seed);
            dc.validate()?;
            let prefs: Vec<PreferencePair> = read_jsonl(&pairs)?;
            let mut pp = PolicyPair::new(DesignPolicy::load(&policy, DType::F32)?)?;
            let report = optimize(&mut pp, &prefs, &dc, None)?;
            std::fs::create_dir_all(&out)?;
            pp.policy.save(&out.join("policy_optimized.ckpt"))?;
            write_jsonl(&out.join("epochs.jsonl"), &report.epochs)?;
            println!("final loss {:?}", report.epochs.last().map(|e| e.mean_loss));
        }
        Command::Evaluate { common, pred, gt, report } => {
            load_config(&common)?;
            let preds: Vec<Prediction> = read_jsonl(&pred)?;
            let gts: BTreeMap<usize, DesignExample> = read_jsonl::<DesignExample>(&gt)?.into_iter().map(|g| (g.product_id, g)).collect();
            let records = preds
                .into_iter()
                .map(|p| {
                    let g = gts.get(&p.product_id).ok_or_else(|| Error::DataIntegrity(format!("no reference for product {}", p.product_id)))?;
                    let texts = if p.texts.is_empty() { g.design.selected_texts(&g.candidates)?.into_iter().map(String::from).collect() } else { p.texts };
                    Ok(EvalRecord { layout: p.layout, reference: g.design.layout.clone(), ocr: p.ocr, texts })
                })
                .collect::<Result<Vec<_>>>()?;
            let metrics = evaluate(&records)?;
            write_json(&report, &metrics)?;
            println!(
                "Ali {:.4}  Ove {:.4}  MIoU {:.4}  Sen.Acc {:.4}  NED {:.4}",
                metrics.alignment, metrics.overlap, metrics.miou, metrics.sen_acc, metrics.ned
            );
        }
        Command::FlopsReport { common, dims } => {
            load_config(&common)?;
            let base = match dims {
                Some(p) => serde_json::from_str::<FlopsDims>(&std::fs::read_to_string(p)?)?,
                None => FlopsDims { d: 3072, h: 24, r: 4, m: 512 },
            };
            println!("{:>10} {:>6} {:>16} {:>16} {:>10}", "resolution", "N", "full GFLOPs", "decomposed", "reduction");
            for (res, n) in [(800, 2500), (1024, 4096)] {
                let d = BlockDims { d: base.d, h: base.h, r: base.r, m: base.m, n };
                let full = attention_flops(d, AttentionMode::Full)? as f64 / 1e9;
                let dec = attention_flops(d, AttentionMode::Decomposed)? as f64 / 1e9;
                println!("{:>10} {:>6} {:>16.1} {:>16.1} {:>9.1}%", format!("{res}x{res}"), n, full, dec, 100.0 * flops_reduction(d)?);
            }
        }
        Command::RunPipeline { common, out, dry_run } => {
            let cfg = load_config(&common)?;
            let manifest = run_pipeline(&cfg, &out, dry_run)?;
            match &manifest.summary {
                Some(s) => println!(
                    "relative CTR {:+.2}% (pretrained {:.4}, optimized {:.4}); reward accuracy {:.3}",
                    100.0 * s.relative_ctr,
                    s.pretrained_ctr,
                    s.optimized_ctr,
                    s.reward_accuracy
                ),
                None => println!("manifest written to {}", out.join("manifest.json").display()),
            }
        }
    }
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    let steps = args.steps.unwrap_or(cfg.render_steps);
    if steps == 0 {
        return Err(Error::invalid("--steps must be positive"));
    }
    let model = load_model(&args.model)?;
    let canvas = model.as_ref().map_or(cfg.dataset.canvas, |m| m.config.codec.canvas);
    let poster_renderer = renderer(&model, canvas, steps);
    if let Some(design) = &args.design {
        let ex: DesignExample = serde_json::from_str(&std::fs::read_to_string(design)?)?;
        ex.validate()?;
        let sprite = Raster::load_png(args.sprite.as_deref().ok_or_else(|| Error::invalid("--design needs --sprite"))?)?;
        let texts = ex.design.selected_texts(&ex.candidates)?;
        let r = poster_renderer.render(&ex.design, &texts, &sprite, args.seed)?;
        parent_dir(&args.out)?;
        r.save_png(&args.out)?;
        write_json(&args.out.with_extension("json"), &ex)?;
        println!("wrote {}", args.out.display());
        return Ok(());
    }
    let (Some(policy), Some(products)) = (&args.policy, &args.products) else {
        return Err(Error::invalid("pass either --design and --sprite, or --policy and --products"));
    };
    let policy = DesignPolicy::load(policy, DType::F32)?;
    let products: Vec<DesignExample> = read_jsonl(products)?;
    std::fs::create_dir_all(&args.out)?;
    let (mut designs, mut preds) = (Vec::new(), Vec::new());
    for ex in &products {
        let d = generate_design(&policy, ex, cfg.pair_gen.temperature, derive_seed(args.seed, &format!("design/{}", ex.product_id)))?;
        let texts = d.selected_texts(&ex.candidates)?;
        let ocr = match poster_renderer.render(&d, &texts, &sprite_for(ex.product_id), derive_seed(args.seed, &format!("poster/{}", ex.product_id))) {
            Ok(r) => {
                r.save_png(&args.out.join(format!("{}.png", ex.product_id)))?;
                toy_ocr(&r, &d.layout)
            }
            Err(Error::LayoutTooSmall(msg)) => {
                log::warn!("product {}: {msg}", ex.product_id);
                Vec::new()
            }
            Err(e) => return Err(e),
        };
        let texts = texts.into_iter().map(String::from).collect();
        preds.push(Prediction { product_id: ex.product_id, layout: d.layout.clone(), ocr, texts });
        designs.push(DesignExample { design: d, ..ex.clone() });
    }
    write_jsonl(&args.out.join("designs.jsonl"), &designs)?;
    write_jsonl(&args.out.join("predictions.jsonl"), &preds)?;
    println!("{} designs in {}", designs.len(), args.out.display());
    Ok(())
}
