//! 5x7 bitmap font covering `A-Z`, `0-9` and space.

use crate::design::vocab::ALPHABET;

pub const GLYPH_W: usize = 5;
pub const GLYPH_H: usize = 7;
/// Horizontal advance in font pixels (glyph plus one blank column).
pub const ADVANCE: usize = GLYPH_W + 1;

#[rustfmt::skip]
const ROWS: [[&str; GLYPH_H]; 37] = [
    [".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"], // A
    ["####.", "#...#", "#...#", "####.", "#...#", "#...#", "####."], // B
    [".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."], // C
    ["###..", "#..#.", "#...#", "#...#", "#...#", "#..#.", "###.."], // D
    ["#####", "#....", "#....", "####.", "#....", "#....", "#####"], // E
    ["#####", "#....", "#....", "####.", "#....", "#....", "#...."], // F
    [".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".####"], // G
    ["#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"], // H
    [".###.", "..#..", "..#..", "..#..", "..#..", "..#..", ".###."], // I
    ["..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."], // J
    ["#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"], // K
    ["#....", "#....", "#....", "#....", "#....", "#....", "#####"], // L
    ["#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"], // M
    ["#...#", "#...#", "##..#", "#.#.#", "#..##", "#...#", "#...#"], // N
    [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."], // O
    ["####.", "#...#", "#...#", "####.", "#....", "#....", "#...."], // P
    [".###.", "#...#", "#...#", "#...#", "#.#.#", "#..#.", ".##.#"], // Q
    ["####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"], // R
    [".####", "#....", "#....", ".###.", "....#", "....#", "####."], // S
    ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."], // T
    ["#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."], // U
    ["#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."], // V
    ["#...#", "#...#", "#...#", "#.#.#", "#.#.#", "#.#.#", ".#.#."], // W
    ["#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"], // X
    ["#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."], // Y
    ["#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"], // Z
    [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."], // 0
    ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."], // 1
    [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"], // 2
    ["#####", "...#.", "..#..", "...#.", "....#", "#...#", ".###."], // 3
    ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."], // 4
    ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."], // 5
    ["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###."], // 6
    ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."], // 7
    [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."], // 8
    [".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##.."], // 9
    [".....", ".....", ".....", ".....", ".....", ".....", "....."], // space
];

/// Row-major 5x7 bitmap of one character.
pub type Bitmap = [[bool; GLYPH_W]; GLYPH_H];

pub fn bitmap(c: u8) -> Option<Bitmap> {
    let idx = ALPHABET.iter().position(|&a| a == c)?;
    let mut out = [[false; GLYPH_W]; GLYPH_H];
    for (r, row) in ROWS[idx].iter().enumerate() {
        for (col, ch) in row.bytes().enumerate() {
            out[r][col] = ch == b'#';
        }
    }
    Some(out)
}

pub fn hamming(a: &Bitmap, b: &Bitmap) -> usize {
    a.iter().flatten().zip(b.iter().flatten()).filter(|(x, y)| x != y).count()
}

/// Character whose bitmap is nearest to `cell`; ties go to alphabet order.
pub fn nearest_char(cell: &Bitmap) -> u8 {
    let mut best = (usize::MAX, b' ');
    for &c in ALPHABET.iter() {
        let d = hamming(cell, &bitmap(c).unwrap());
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glyphs_are_pairwise_distinct() {
        let mut min = usize::MAX;
        for (i, &a) in ALPHABET.iter().enumerate() {
            for &b in &ALPHABET[i + 1..] {
                min = min.min(hamming(&bitmap(a).unwrap(), &bitmap(b).unwrap()));
            }
        }
        assert!(min >= 2, "closest glyph pair differs in {min} pixels");
    }

    #[test]
    fn every_glyph_decodes_to_itself() {
        for &c in ALPHABET.iter() {
            assert_eq!(nearest_char(&bitmap(c).unwrap()), c);
        }
    }
}
