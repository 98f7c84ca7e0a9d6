//! Instruction templating and the canonical token form of a design.

use serde::{Deserialize, Serialize};

use super::types::{BBox, Background, CandidateTextSet, Design, ElementKind, Layout, MAX_TEXT_BOXES};
use super::vocab::Token;
use crate::error::{Error, Result};

/// Element tag of one design token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpanTag {
    #[serde(rename = "BG")]
    Bg,
    #[serde(rename = "TXT")]
    Txt,
    #[serde(rename = "LAY")]
    Lay,
    #[serde(rename = "DELIM")]
    Delim,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionText {
    pub tokens: Vec<Token>,
}

impl InstructionText {
    pub fn ids(&self) -> Vec<u32> {
        self.tokens.iter().map(|t| t.id()).collect()
    }

    /// Recovers the candidate strings from the delimited spans.
    pub fn candidates(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur: Option<String> = None;
        for t in &self.tokens {
            match t {
                Token::Open(_) => cur = Some(String::new()),
                Token::Char(c) => {
                    if let Some(s) = cur.as_mut() {
                        s.push(*c as char);
                    }
                }
                Token::Close => out.extend(cur.take()),
                _ => {}
            }
        }
        out
    }

    pub fn detokenize(&self) -> String {
        self.tokens.iter().map(|t| t.to_string()).collect()
    }
}

/// `<INSTR> <C0> chars </C> <C1> chars </C> ...` over the candidates in order.
pub fn format_instruction(texts: &CandidateTextSet) -> Result<InstructionText> {
    if texts.is_empty() {
        return Err(Error::invalid("cannot format an instruction without candidates"));
    }
    let mut tokens = vec![Token::Instr];
    for (k, t) in texts.texts().iter().enumerate() {
        tokens.push(Token::Open(k as u8));
        tokens.extend(t.bytes().map(Token::Char));
        tokens.push(Token::Close);
    }
    Ok(InstructionText { tokens })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerializedDesign {
    pub tokens: Vec<Token>,
    pub span_map: Vec<SpanTag>,
}

impl SerializedDesign {
    pub fn ids(&self) -> Vec<u32> {
        self.tokens.iter().map(|t| t.id()).collect()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Rebuilds the span map for a raw token sequence.
    pub fn from_tokens(tokens: Vec<Token>) -> Self {
        let span_map = tokens.iter().map(|&t| span_tag(t)).collect();
        Self { tokens, span_map }
    }

    pub fn from_ids(ids: &[u32]) -> Result<Self> {
        let tokens = ids.iter().map(|&i| Token::from_id(i)).collect::<Result<Vec<_>>>()?;
        Ok(Self::from_tokens(tokens))
    }
}

pub fn span_tag(t: Token) -> SpanTag {
    match t {
        Token::Color(_) | Token::Texture(_) => SpanTag::Bg,
        Token::Index(_) => SpanTag::Txt,
        Token::BoxProduct | Token::BoxText | Token::Bin(_) => SpanTag::Lay,
        _ => SpanTag::Delim,
    }
}

/// `<BG> c t <TXT> i.. <LAY> (<P>|<T> x0 y0 x1 y1).. <EOS>`
pub fn serialize_design(d: &Design) -> Result<SerializedDesign> {
    d.validate(None)?;
    let mut tokens = vec![Token::Bg, Token::Color(d.background.color), Token::Texture(d.background.texture), Token::Txt];
    tokens.extend(d.selected.iter().map(|&i| Token::Index(i as u8)));
    tokens.push(Token::Lay);
    for b in &d.layout.boxes {
        tokens.push(match b.kind {
            ElementKind::Product => Token::BoxProduct,
            ElementKind::Text => Token::BoxText,
        });
        tokens.extend(b.bins.iter().map(|&q| Token::Bin(q)));
    }
    tokens.push(Token::Eos);
    Ok(SerializedDesign::from_tokens(tokens))
}

/// Inverse of [`serialize_design`]. Grammar violations report the first
/// offending position; `num_candidates` bounds the selected indices.
pub fn parse_design(s: &SerializedDesign, num_candidates: usize) -> Result<Design> {
    let design = parse_tokens(&s.tokens)?;
    design.validate(Some(num_candidates))?;
    Ok(design)
}

fn parse_tokens(tokens: &[Token]) -> Result<Design> {
    let mut pos = 0usize;
    let err = |position: usize, message: &str| Error::Parse { position, message: message.to_string() };
    let mut next = |expect: &str| -> Result<(usize, Token)> {
        let p = pos;
        let t = tokens.get(p).copied().ok_or_else(|| err(p, &format!("sequence ended, expected {expect}")))?;
        pos += 1;
        Ok((p, t))
    };

    let (p, t) = next("<BG>")?;
    if t != Token::Bg {
        return Err(err(p, "expected <BG>"));
    }
    let color = match next("color")? {
        (_, Token::Color(c)) => c,
        (p, _) => return Err(err(p, "expected color token")),
    };
    let texture = match next("texture")? {
        (_, Token::Texture(t)) => t,
        (p, _) => return Err(err(p, "expected texture token")),
    };
    let background = Background::new(color, texture)?;
    let (p, t) = next("<TXT>")?;
    if t != Token::Txt {
        return Err(err(p, "expected <TXT>"));
    }
    let mut selected = Vec::new();
    loop {
        match next("index or <LAY>")? {
            (_, Token::Index(i)) if selected.len() < MAX_TEXT_BOXES => selected.push(i as usize),
            (p, Token::Index(_)) => return Err(err(p, "too many selected texts")),
            (p, Token::Lay) if selected.is_empty() => return Err(err(p, "no selected text")),
            (_, Token::Lay) => break,
            (p, _) => return Err(err(p, "expected index or <LAY>")),
        }
    }
    let mut boxes = Vec::new();
    loop {
        let kind = match next("box or <EOS>")? {
            (_, Token::BoxProduct) => ElementKind::Product,
            (_, Token::BoxText) => ElementKind::Text,
            (p, Token::Eos) if boxes.is_empty() => return Err(err(p, "empty layout")),
            (_, Token::Eos) => break,
            (p, _) => return Err(err(p, "expected box type or <EOS>")),
        };
        let mut bins = [0u8; 4];
        for b in bins.iter_mut() {
            *b = match next("coordinate bin")? {
                (_, Token::Bin(q)) => q,
                (p, _) => return Err(err(p, "expected coordinate bin")),
            };
        }
        boxes.push(BBox::from_bins(kind, bins)?);
    }
    if pos != tokens.len() {
        return Err(err(pos, "trailing tokens after <EOS>"));
    }
    Ok(Design { background, selected, layout: Layout::new(boxes) })
}
