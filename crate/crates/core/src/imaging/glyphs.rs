use std::collections::BTreeMap;

use super::BinaryImage;

/// One glyph cell. All glyphs of a set share `CELL_HEIGHT` rows: two
/// ascender rows, five x-height rows, two descender rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlyphBitmap {
    pub bitmap: BinaryImage,
}

impl GlyphBitmap {
    pub fn width(&self) -> usize {
        self.bitmap.width()
    }
}

pub const CELL_HEIGHT: usize = 9;

#[derive(Clone, Debug)]
pub struct GlyphSet {
    glyphs: BTreeMap<char, GlyphBitmap>,
}

impl GlyphSet {
    /// Built-in lowercase Latin + digit bitmap font.
    pub fn builtin() -> Self {
        let mut glyphs = BTreeMap::new();
        for (c, rows) in FONT {
            let bitmap = BinaryImage::from_ascii(rows);
            glyphs.insert(*c, GlyphBitmap { bitmap });
        }
        Self { glyphs }
    }

    /// Subset restricted to the given characters.
    pub fn restricted(&self, chars: &str) -> Self {
        Self {
            glyphs: self
                .glyphs
                .iter()
                .filter(|(c, _)| chars.contains(**c))
                .map(|(c, g)| (*c, g.clone()))
                .collect(),
        }
    }

    pub fn get(&self, c: char) -> Option<&GlyphBitmap> {
        self.glyphs.get(&c)
    }

    pub fn chars(&self) -> impl Iterator<Item = char> + '_ {
        self.glyphs.keys().copied()
    }

    pub fn height(&self) -> usize {
        CELL_HEIGHT
    }
}

#[rustfmt::skip]
const FONT: &[(char, &[&str])] = &[
    ('a', &[".....", ".....", ".###.", "....#", ".####", "#...#", ".####", ".....", "....."]),
    ('b', &["#....", "#....", "####.", "#...#", "#...#", "#...#", "####.", ".....", "....."]),
    ('c', &[".....", ".....", ".####", "#....", "#....", "#....", ".####", ".....", "....."]),
    ('d', &["....#", "....#", ".####", "#...#", "#...#", "#...#", ".####", ".....", "....."]),
    ('e', &[".....", ".....", ".###.", "#...#", "#####", "#....", ".####", ".....", "....."]),
    ('f', &["..##.", ".#...", "####.", ".#...", ".#...", ".#...", ".#...", ".....", "....."]),
    ('g', &[".....", ".....", ".####", "#...#", "#...#", ".####", "....#", "....#", ".###."]),
    ('h', &["#....", "#....", "####.", "#...#", "#...#", "#...#", "#...#", ".....", "....."]),
    ('i', &[".#.", "...", "##.", ".#.", ".#.", ".#.", "###", "...", "..."]),
    ('j', &["...#", "....", "..##", "...#", "...#", "...#", "...#", "#..#", ".##."]),
    ('k', &["#....", "#....", "#..#.", "#.#..", "##...", "#.#..", "#..#.", ".....", "....."]),
    ('l', &["##.", ".#.", ".#.", ".#.", ".#.", ".#.", "###", "...", "..."]),
    ('m', &[".....", ".....", "##.#.", "#.#.#", "#.#.#", "#.#.#", "#.#.#", ".....", "....."]),
    ('n', &[".....", ".....", "####.", "#...#", "#...#", "#...#", "#...#", ".....", "....."]),
    ('o', &[".....", ".....", ".###.", "#...#", "#...#", "#...#", ".###.", ".....", "....."]),
    ('p', &[".....", ".....", "####.", "#...#", "#...#", "####.", "#....", "#....", "#...."]),
    ('q', &[".....", ".....", ".####", "#...#", "#...#", ".####", "....#", "....#", "....#"]),
    ('r', &[".....", ".....", "#.##.", "##..#", "#....", "#....", "#....", ".....", "....."]),
    ('s', &[".....", ".....", ".####", "#....", ".###.", "....#", "####.", ".....", "....."]),
    ('t', &[".#...", ".#...", "####.", ".#...", ".#...", ".#..#", "..##.", ".....", "....."]),
    ('u', &[".....", ".....", "#...#", "#...#", "#...#", "#..##", ".##.#", ".....", "....."]),
    ('v', &[".....", ".....", "#...#", "#...#", "#...#", ".#.#.", "..#..", ".....", "....."]),
    ('w', &[".....", ".....", "#...#", "#...#", "#.#.#", "#.#.#", ".#.#.", ".....", "....."]),
    ('x', &[".....", ".....", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", ".....", "....."]),
    ('y', &[".....", ".....", "#...#", "#...#", "#...#", ".####", "....#", "....#", ".###."]),
    ('z', &[".....", ".....", "#####", "...#.", "..#..", ".#...", "#####", ".....", "....."]),
    ('0', &[".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###.", ".....", "....."]),
    ('1', &["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###.", ".....", "....."]),
    ('2', &[".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####", ".....", "....."]),
    ('3', &["####.", "....#", "....#", ".###.", "....#", "....#", "####.", ".....", "....."]),
    ('4', &["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#.", ".....", "....."]),
    ('5', &["#####", "#....", "####.", "....#", "....#", "#...#", ".###.", ".....", "....."]),
    ('6', &["..##.", ".#...", "#....", "####.", "#...#", "#...#", ".###.", ".....", "....."]),
    ('7', &["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#...", ".....", "....."]),
    ('8', &[".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###.", ".....", "....."]),
    ('9', &[".###.", "#...#", "#...#", ".####", "....#", "...#.", ".##..", ".....", "....."]),
];
