//! Token vocabulary shared by instructions and serialized designs.

use crate::error::{Error, Result};

/// Characters allowed in candidate texts, in token order.
pub const ALPHABET: &[u8; 37] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 ";

pub const MAX_CANDIDATES: usize = 8;
pub const NUM_COLORS: usize = 8;
pub const NUM_TEXTURES: usize = 4;
pub const NUM_BINS: usize = 64;

const INSTR: u32 = 0;
const OPEN0: u32 = 1;
const CLOSE: u32 = OPEN0 + MAX_CANDIDATES as u32;
const CHAR0: u32 = CLOSE + 1;
const BG: u32 = CHAR0 + ALPHABET.len() as u32;
const TXT: u32 = BG + 1;
const LAY: u32 = BG + 2;
const EOS: u32 = BG + 3;
const COLOR0: u32 = EOS + 1;
const TEXTURE0: u32 = COLOR0 + NUM_COLORS as u32;
const INDEX0: u32 = TEXTURE0 + NUM_TEXTURES as u32;
const BOX_PRODUCT: u32 = INDEX0 + MAX_CANDIDATES as u32;
const BOX_TEXT: u32 = BOX_PRODUCT + 1;
const BIN0: u32 = BOX_TEXT + 1;

/// Total number of token ids.
pub const VOCAB_SIZE: usize = BIN0 as usize + NUM_BINS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Instr,
    /// Opens candidate `k` inside an instruction.
    Open(u8),
    Close,
    Char(u8),
    Bg,
    Txt,
    Lay,
    Eos,
    Color(u8),
    Texture(u8),
    /// Index of a selected candidate.
    Index(u8),
    BoxProduct,
    BoxText,
    Bin(u8),
}

impl Token {
    pub fn id(self) -> u32 {
        match self {
            Token::Instr => INSTR,
            Token::Open(k) => OPEN0 + k as u32,
            Token::Close => CLOSE,
            Token::Char(c) => {
                let pos = ALPHABET.iter().position(|&a| a == c).expect("char outside alphabet");
                CHAR0 + pos as u32
            }
            Token::Bg => BG,
            Token::Txt => TXT,
            Token::Lay => LAY,
            Token::Eos => EOS,
            Token::Color(c) => COLOR0 + c as u32,
            Token::Texture(t) => TEXTURE0 + t as u32,
            Token::Index(i) => INDEX0 + i as u32,
            Token::BoxProduct => BOX_PRODUCT,
            Token::BoxText => BOX_TEXT,
            Token::Bin(b) => BIN0 + b as u32,
        }
    }

    pub fn from_id(id: u32) -> Result<Token> {
        let tok = match id {
            INSTR => Token::Instr,
            x if (OPEN0..CLOSE).contains(&x) => Token::Open((x - OPEN0) as u8),
            CLOSE => Token::Close,
            x if (CHAR0..BG).contains(&x) => Token::Char(ALPHABET[(x - CHAR0) as usize]),
            BG => Token::Bg,
            TXT => Token::Txt,
            LAY => Token::Lay,
            EOS => Token::Eos,
            x if (COLOR0..TEXTURE0).contains(&x) => Token::Color((x - COLOR0) as u8),
            x if (TEXTURE0..INDEX0).contains(&x) => Token::Texture((x - TEXTURE0) as u8),
            x if (INDEX0..BOX_PRODUCT).contains(&x) => Token::Index((x - INDEX0) as u8),
            BOX_PRODUCT => Token::BoxProduct,
            BOX_TEXT => Token::BoxText,
            x if (BIN0..BIN0 + NUM_BINS as u32).contains(&x) => Token::Bin((x - BIN0) as u8),
            _ => return Err(Error::invalid(format!("unknown token id {id}"))),
        };
        Ok(tok)
    }

    pub fn is_char(c: u8) -> bool {
        ALPHABET.contains(&c)
    }
}

impl std::fmt::Display for Token {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Token::Instr => write!(f, "<INSTR>"),
            Token::Open(k) => write!(f, "<C{k}>"),
            Token::Close => write!(f, "</C>"),
            Token::Char(c) => write!(f, "{}", *c as char),
            Token::Bg => write!(f, "<BG>"),
            Token::Txt => write!(f, "<TXT>"),
            Token::Lay => write!(f, "<LAY>"),
            Token::Eos => write!(f, "<EOS>"),
            Token::Color(c) => write!(f, "c{c}"),
            Token::Texture(t) => write!(f, "t{t}"),
            Token::Index(i) => write!(f, "i{i}"),
            Token::BoxProduct => write!(f, "<P>"),
            Token::BoxText => write!(f, "<T>"),
            Token::Bin(b) => write!(f, "q{b}"),
        }
    }
}
