//! Decoder-only sequence model over `[product] instruction design`.
//!
//! A learned product embedding occupies the first position; the instruction
//! tokens and the serialized design follow. Log-probabilities are returned
//! for design tokens only, each conditioned on everything before it.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use super::vocab::VOCAB_SIZE;
use crate::error::{Error, Result};
use crate::nn::{self, Init, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub max_len: usize,
    pub num_products: usize,
    /// Start with a zero output head, i.e. a uniform next-token distribution.
    pub zero_head: bool,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { layers: 2, width: 64, heads: 4, mlp_ratio: 4, max_len: 160, num_products: 2048, zero_head: true, seed: 0 }
    }
}

impl PolicyConfig {
    pub fn vocab_size(&self) -> usize {
        VOCAB_SIZE
    }
}

/// One teacher-forced example: product, instruction ids and design ids.
#[derive(Debug, Clone, Copy)]
pub struct PolicyInput<'a> {
    pub product_id: usize,
    pub instr: &'a [u32],
    pub design: &'a [u32],
}

/// Design-token log-probabilities for a batch, left-aligned and zero padded.
pub struct TokenLogprobs {
    /// `[B, L]` where `L` is the longest design in the batch.
    pub values: Tensor,
    pub lens: Vec<usize>,
}

impl TokenLogprobs {
    pub fn row(&self, i: usize) -> Result<Vec<f64>> {
        let row = self.values.get(i)?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        Ok(row[..self.lens[i]].to_vec())
    }

    /// `[B, L]` weights with zeros past each sequence end.
    pub fn mask_like(&self, weights: &[Vec<f64>]) -> Result<Tensor> {
        let l = self.values.dim(1)?;
        let mut flat = vec![0f64; weights.len() * l];
        for (i, w) in weights.iter().enumerate() {
            if w.len() != self.lens[i] {
                return Err(Error::invalid(format!("weights of length {} for a design of length {}", w.len(), self.lens[i])));
            }
            flat[i * l..i * l + w.len()].copy_from_slice(w);
        }
        Ok(Tensor::from_vec(flat, (weights.len(), l), self.values.device())?.to_dtype(self.values.dtype())?)
    }
}

pub struct DesignPolicy {
    pub config: PolicyConfig,
    pub params: ParamStore,
}

impl DesignPolicy {
    pub fn new(config: PolicyConfig, dtype: DType) -> Result<Self> {
        if config.width % config.heads != 0 {
            return Err(Error::invalid(format!("width {} not divisible by {} heads", config.width, config.heads)));
        }
        let d = config.width;
        let v = VOCAB_SIZE;
        let mut p = ParamStore::new(dtype, config.seed);
        p.add("tok_emb", &[v, d], Init::Normal(0.02))?;
        p.add("pos_emb", &[config.max_len, d], Init::Normal(0.02))?;
        p.add("prod_emb", &[config.num_products, d], Init::Normal(0.02))?;
        for l in 0..config.layers {
            let h = d * config.mlp_ratio;
            p.add(&format!("l{l}.ln1.g"), &[d], Init::Ones)?;
            p.add(&format!("l{l}.ln1.b"), &[d], Init::Zeros)?;
            p.add(&format!("l{l}.qkv.w"), &[d, 3 * d], Init::FanIn)?;
            p.add(&format!("l{l}.qkv.b"), &[3 * d], Init::Zeros)?;
            p.add(&format!("l{l}.out.w"), &[d, d], Init::Normal(0.02 / (2.0 * config.layers as f64).sqrt()))?;
            p.add(&format!("l{l}.out.b"), &[d], Init::Zeros)?;
            p.add(&format!("l{l}.ln2.g"), &[d], Init::Ones)?;
            p.add(&format!("l{l}.ln2.b"), &[d], Init::Zeros)?;
            p.add(&format!("l{l}.fc1.w"), &[d, h], Init::FanIn)?;
            p.add(&format!("l{l}.fc1.b"), &[h], Init::Zeros)?;
            p.add(&format!("l{l}.fc2.w"), &[h, d], Init::Normal(0.02 / (2.0 * config.layers as f64).sqrt()))?;
            p.add(&format!("l{l}.fc2.b"), &[d], Init::Zeros)?;
        }
        p.add("ln_f.g", &[d], Init::Ones)?;
        p.add("ln_f.b", &[d], Init::Zeros)?;
        let head = if config.zero_head { Init::Zeros } else { Init::Normal(0.02) };
        p.add("head.w", &[d, v], head)?;
        p.add("head.b", &[v], Init::Zeros)?;
        Ok(Self { config, params: p })
    }

    pub fn from_params(config: PolicyConfig, params: ParamStore) -> Self {
        Self { config, params }
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    /// Frozen deep copy, e.g. the reference policy for preference training.
    pub fn snapshot(&self) -> Result<Self> {
        Ok(Self { config: self.config.clone(), params: self.params.deep_clone()? })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.params.save(path, "design_policy", &self.config)
    }

    pub fn load(path: &std::path::Path, dtype: DType) -> Result<Self> {
        let (params, config) = ParamStore::load(path, "design_policy", dtype)?;
        Ok(Self { config, params })
    }

    fn ln(&self, x: &Tensor, prefix: &str) -> Result<Tensor> {
        let g = self.params.get(&format!("{prefix}.g"))?;
        let b = self.params.get(&format!("{prefix}.b"))?;
        Ok(nn::layer_norm(x, 1e-5)?.broadcast_mul(&g)?.broadcast_add(&b)?)
    }

    fn lin(&self, x: &Tensor, prefix: &str) -> Result<Tensor> {
        let w = self.params.get(&format!("{prefix}.w"))?;
        let b = self.params.get(&format!("{prefix}.b"))?;
        nn::linear(x, &w, Some(&b))
    }

    /// Next-token logits `[B, T, V]` for right-padded token sequences that
    /// follow the product slot; position `p` predicts the token at `p + 1`.
    pub fn logits(&self, product_ids: &[usize], seqs: &[Vec<u32>]) -> Result<Tensor> {
        let b = seqs.len();
        if b == 0 || product_ids.len() != b {
            return Err(Error::invalid("empty or mismatched policy batch"));
        }
        let tmax = seqs.iter().map(Vec::len).max().unwrap_or(0) + 1;
        if tmax > self.config.max_len {
            return Err(Error::invalid(format!("sequence length {tmax} exceeds max_len {}", self.config.max_len)));
        }
        if let Some(&p) = product_ids.iter().find(|&&p| p >= self.config.num_products) {
            return Err(Error::invalid(format!("product id {p} outside the embedding table")));
        }
        if let Some(&t) = seqs.iter().flatten().find(|&&t| t as usize >= VOCAB_SIZE) {
            return Err(Error::invalid(format!("unknown token id {t}")));
        }
        let dev = self.params.device().clone();
        let d = self.config.width;
        let mut ids = vec![0u32; b * (tmax - 1)];
        for (i, s) in seqs.iter().enumerate() {
            ids[i * (tmax - 1)..i * (tmax - 1) + s.len()].copy_from_slice(s);
        }
        let ids = Tensor::from_vec(ids, b * (tmax - 1), &dev)?;
        let tok = self.params.get("tok_emb")?.index_select(&ids, 0)?.reshape((b, tmax - 1, d))?;
        let pids = Tensor::from_vec(product_ids.iter().map(|&p| p as u32).collect::<Vec<_>>(), b, &dev)?;
        let prod = self.params.get("prod_emb")?.index_select(&pids, 0)?.reshape((b, 1, d))?;
        let x = Tensor::cat(&[&prod, &tok], 1)?;
        let pos = self.params.get("pos_emb")?.narrow(0, 0, tmax)?;
        let mut x = x.broadcast_add(&pos)?;
        let mask = nn::causal_mask(tmax, self.dtype(), &dev)?;
        for l in 0..self.config.layers {
            let h = self.ln(&x, &format!("l{l}.ln1"))?;
            let qkv = self.lin(&h, &format!("l{l}.qkv"))?;
            let q = qkv.narrow(D::Minus1, 0, d)?;
            let k = qkv.narrow(D::Minus1, d, d)?;
            let v = qkv.narrow(D::Minus1, 2 * d, d)?;
            let a = nn::attention(&q, &k, &v, self.config.heads, Some(&mask))?;
            x = (x + self.lin(&a, &format!("l{l}.out"))?)?;
            let h = self.ln(&x, &format!("l{l}.ln2"))?;
            let h = self.lin(&h, &format!("l{l}.fc1"))?.gelu_erf()?;
            x = (x + self.lin(&h, &format!("l{l}.fc2"))?)?;
        }
        let x = self.ln(&x, "ln_f")?;
        self.lin(&x, "head")
    }

    /// Teacher-forced log-probabilities of every design token in the batch.
    pub fn token_logprobs(&self, batch: &[PolicyInput]) -> Result<TokenLogprobs> {
        let seqs: Vec<Vec<u32>> = batch
            .iter()
            .map(|x| {
                let mut s = x.instr.to_vec();
                s.extend_from_slice(x.design);
                s
            })
            .collect();
        if batch.iter().any(|x| x.design.is_empty()) {
            return Err(Error::invalid("empty design sequence"));
        }
        let pids: Vec<usize> = batch.iter().map(|x| x.product_id).collect();
        let logits = self.logits(&pids, &seqs)?;
        let logp = nn::log_softmax_last(&logits)?;
        let (b, t, _) = logp.dims3()?;
        // Token at sequence index j (0-based after the product slot) is
        // predicted by position j.
        let mut targets = vec![0u32; b * t];
        for (i, s) in seqs.iter().enumerate() {
            targets[i * t..i * t + s.len()].copy_from_slice(s);
        }
        let targets = Tensor::from_vec(targets, (b, t, 1), logp.device())?;
        let gathered = logp.gather(&targets, 2)?.squeeze(2)?;
        let lens: Vec<usize> = batch.iter().map(|x| x.design.len()).collect();
        let lmax = *lens.iter().max().unwrap();
        let mut rows = Vec::with_capacity(b);
        for (i, x) in batch.iter().enumerate() {
            let row = gathered.get(i)?.narrow(0, x.instr.len(), x.design.len())?;
            let row = if x.design.len() < lmax { row.pad_with_zeros(0, 0, lmax - x.design.len())? } else { row };
            rows.push(row);
        }
        Ok(TokenLogprobs { values: Tensor::stack(&rows, 0)?, lens })
    }

    /// Per-token log-probabilities of one design.
    pub fn design_logprobs(&self, product_id: usize, instr: &[u32], design: &[u32]) -> Result<Vec<f64>> {
        self.token_logprobs(&[PolicyInput { product_id, instr, design }])?.row(0)
    }

    /// Normalized next-token log-distributions `[L, V]` at each design step.
    pub fn step_distributions(&self, product_id: usize, instr: &[u32], design: &[u32]) -> Result<Tensor> {
        let mut s = instr.to_vec();
        s.extend_from_slice(design);
        let logits = self.logits(&[product_id], &[s])?;
        let logp = nn::log_softmax_last(&logits)?.get(0)?;
        Ok(logp.narrow(0, instr.len(), design.len())?)
    }

    /// Log-likelihood of a whole design evaluated as one reduction:
    /// `sum(logit[target]) - sum(logsumexp(logits))`.
    pub fn sequence_logprob(&self, product_id: usize, instr: &[u32], design: &[u32]) -> Result<f64> {
        let mut s = instr.to_vec();
        s.extend_from_slice(design);
        let logits = self.logits(&[product_id], &[s])?.get(0)?.narrow(0, instr.len(), design.len())?;
        let logits = logits.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        let mut total = 0.0;
        for (row, &tgt) in logits.iter().zip(design) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += row[tgt as usize] - lse;
        }
        Ok(total)
    }
}
