//! Grammar-constrained decoding of designs from the policy.

use candle_core::DType;
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::codec::{parse_design, InstructionText, SerializedDesign};
use super::policy::DesignPolicy;
use super::types::{bin_to_unit, Design, MAX_TEXT_BOXES};
use crate::render::font::{ADVANCE, GLYPH_H};
use super::vocab::{Token, NUM_BINS, NUM_COLORS, NUM_TEXTURES, VOCAB_SIZE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Temperature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub mode: DecodeMode,
    pub temperature: f64,
    pub seed: u64,
    pub max_len: usize,
    pub retries: usize,
    /// Mask tokens the grammar forbids at each step.
    pub constrained: bool,
    /// Character count of each candidate text. When set, constrained
    /// decoding only admits text boxes the text fits into at scale 1.
    pub text_chars: Vec<usize>,
    /// Pixel size the fit constraint is evaluated at.
    pub canvas: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { mode: DecodeMode::Greedy, temperature: 1.0, seed: 0, max_len: 40, retries: 8, constrained: true, text_chars: Vec::new(), canvas: 64 }
    }
}

/// Tokens the design grammar admits after `prefix`, for `num_candidates`
/// candidates. Empty once `<EOS>` has been emitted.
pub fn allowed_next(prefix: &[Token], num_candidates: usize) -> Vec<Token> {
    allowed_next_fitted(prefix, num_candidates, &[], 0)
}

fn bin_px(b: u8, canvas: usize) -> usize {
    (bin_to_unit(b) * canvas as f64).round() as usize
}

/// Like [`allowed_next`], and when `text_chars` is non-empty text-box bins
/// are further limited so the selected text fits at scale 1 on a
/// `canvas`-pixel grid. If no bin fits, the grammar alone applies.
pub fn allowed_next_fitted(prefix: &[Token], num_candidates: usize, text_chars: &[usize], canvas: usize) -> Vec<Token> {
    let mut indices: Vec<u8> = Vec::new();
    let mut after_lay = false;
    let mut products = 0usize;
    let mut texts = 0usize;
    let mut box_bins: Vec<u8> = Vec::new();
    let mut in_box = false;
    let mut text_box = false;
    for &t in prefix {
        match t {
            Token::Index(k) => indices.push(k),
            Token::Lay => after_lay = true,
            Token::BoxProduct | Token::BoxText => {
                if t == Token::BoxProduct {
                    products += 1
                } else {
                    texts += 1
                }
                in_box = true;
                text_box = t == Token::BoxText;
                box_bins.clear();
            }
            Token::Bin(q) if in_box => {
                box_bins.push(q);
                if box_bins.len() == 4 {
                    in_box = false;
                }
            }
            Token::Eos => return Vec::new(),
            _ => {}
        }
    }
    match prefix.len() {
        0 => return vec![Token::Bg],
        1 => return (0..NUM_COLORS as u8).map(Token::Color).collect(),
        2 => return (0..NUM_TEXTURES as u8).map(Token::Texture).collect(),
        3 => return vec![Token::Txt],
        _ => {}
    }
    if !after_lay {
        let lo = indices.last().map_or(0, |&k| k + 1);
        let mut out: Vec<Token> = if indices.len() < MAX_TEXT_BOXES {
            (lo..num_candidates as u8).map(Token::Index).collect()
        } else {
            Vec::new()
        };
        if !indices.is_empty() {
            out.push(Token::Lay);
        }
        return out;
    }
    if in_box {
        let top = NUM_BINS as u8;
        let n = box_bins.len();
        let bins: Vec<u8> = match n {
            0 | 1 => (0..top - 1).collect(),
            _ => (box_bins[n - 2] + 1..top).collect(),
        };
        let chars = indices.get(texts.wrapping_sub(1)).and_then(|&k| text_chars.get(k as usize));
        if let (true, Some(&chars)) = (text_box, chars) {
            // Even positions are x coordinates, odd ones y.
            let need = if n % 2 == 0 { ADVANCE * chars.max(1) - 1 } else { GLYPH_H };
            let fits = |b: u8| match n {
                0 | 1 => bin_px(top - 1, canvas).saturating_sub(bin_px(b, canvas)) >= need,
                _ => bin_px(b, canvas).saturating_sub(bin_px(box_bins[n - 2], canvas)) >= need,
            };
            let fitted: Vec<Token> = bins.iter().copied().filter(|&b| fits(b)).map(Token::Bin).collect();
            if !fitted.is_empty() {
                return fitted;
            }
        }
        return bins.into_iter().map(Token::Bin).collect();
    }
    let mut out = Vec::new();
    if products == 0 {
        out.push(Token::BoxProduct);
    }
    if texts < indices.len() {
        out.push(Token::BoxText);
    }
    if out.is_empty() {
        out.push(Token::Eos);
    }
    out
}

/// Decodes one design token by token. With `constrained` the output always
/// parses; otherwise invalid sequences are resampled up to `retries` times.
pub fn sample_design(policy: &DesignPolicy, product_id: usize, instr: &InstructionText, num_candidates: usize, cfg: &DecodeConfig) -> Result<Design> {
    sample_continuation(policy, product_id, instr, num_candidates, &[], cfg)
}

/// Like [`sample_design`], but the first tokens are forced to `prefix`.
pub fn sample_continuation(
    policy: &DesignPolicy,
    product_id: usize,
    instr: &InstructionText,
    num_candidates: usize,
    prefix: &[Token],
    cfg: &DecodeConfig,
) -> Result<Design> {
    let instr_ids = instr.ids();
    let attempts = cfg.retries.max(1);
    let mut last = Vec::new();
    for attempt in 0..attempts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(attempt as u64 * 0x9E37_79B9));
        let mut tokens: Vec<Token> = prefix.to_vec();
        while tokens.len() < cfg.max_len {
            let allowed = if cfg.constrained { allowed_next_fitted(&tokens, num_candidates, &cfg.text_chars, cfg.canvas) } else { Vec::new() };
            if cfg.constrained && allowed.is_empty() {
                break;
            }
            let mut seq = instr_ids.clone();
            seq.extend(tokens.iter().map(|t| t.id()));
            let logits = policy.logits(&[product_id], &[seq])?;
            let t = logits.dim(1)? - 1;
            let row = logits.get(0)?.get(t)?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            let mut mask = vec![!cfg.constrained; VOCAB_SIZE];
            for a in &allowed {
                mask[a.id() as usize] = true;
            }
            let next = pick(&row, &mask, cfg, &mut rng)?;
            let tok = Token::from_id(next as u32)?;
            tokens.push(tok);
            if tok == Token::Eos {
                break;
            }
        }
        let s = SerializedDesign::from_tokens(tokens.clone());
        match parse_design(&s, num_candidates) {
            Ok(d) => return Ok(d),
            Err(e) => {
                log::debug!("attempt {attempt} produced an invalid design: {e}");
                last = s.ids();
            }
        }
    }
    Err(Error::GenerationFailure { attempts, tokens: last })
}

fn pick(logits: &[f64], mask: &[bool], cfg: &DecodeConfig, rng: &mut ChaCha8Rng) -> Result<usize> {
    let candidates = logits.iter().zip(mask).enumerate().filter(|(_, (_, &m))| m);
    match cfg.mode {
        DecodeMode::Greedy => candidates
            .max_by(|a, b| a.1 .0.total_cmp(b.1 .0).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .ok_or_else(|| Error::invalid("no admissible token")),
        DecodeMode::Temperature => {
            if cfg.temperature <= 0.0 {
                return Err(Error::invalid("temperature must be positive"));
            }
            let m = logits.iter().zip(mask).filter(|(_, &k)| k).map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max);
            let w: Vec<f64> = logits
                .iter()
                .zip(mask)
                .map(|(v, &k)| if k { ((v - m) / cfg.temperature).exp() } else { 0.0 })
                .collect();
            let dist = WeightedIndex::new(&w).map_err(|e| Error::invalid(e.to_string()))?;
            Ok(dist.sample(rng))
        }
    }
}
