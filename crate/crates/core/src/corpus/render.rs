use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const IMAGE_HEIGHT: usize = 32;
pub const GLYPH_WIDTH: usize = 8;
pub const DEFAULT_GLYPH_SEED: u64 = 0x6d74_6b64_676c_7970;

/// Single-channel image, row-major `height × width × channels`, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TextImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f32>,
}

impl TextImage {
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.pixels[(row * self.width + col) * self.channels]
    }
}

/// SplitMix64 finalizer, used to derive independent seeds from tuples.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One fixed binary bitmap per alphabet character.
///
/// Each glyph is drawn from a generator seeded by `(character, seed)`, so the
/// same character always renders the same way regardless of call order.
#[derive(Debug, Clone)]
pub struct GlyphBank {
    glyph_width: usize,
    glyphs: HashMap<char, Vec<f32>>,
}

impl GlyphBank {
    pub fn new(alphabet: &str, glyph_width: usize, seed: u64) -> Result<Self> {
        if glyph_width < 3 {
            return Err(Error::InvalidArgument(format!("glyph width {glyph_width} is too small")));
        }
        let glyphs = alphabet.chars().map(|c| (c, draw_glyph(c, glyph_width, seed))).collect();
        Ok(Self { glyph_width, glyphs })
    }

    pub fn glyph_width(&self) -> usize {
        self.glyph_width
    }

    /// Horizontal concatenation of the glyphs of `text`.
    pub fn render(&self, text: &str) -> Result<TextImage> {
        if text.is_empty() {
            return Err(Error::EmptyString);
        }
        let chars: Vec<&Vec<f32>> = text
            .chars()
            .map(|c| self.glyphs.get(&c).ok_or(Error::UnknownCharacter(c)))
            .collect::<Result<_>>()?;
        let gw = self.glyph_width;
        let width = gw * chars.len();
        let mut pixels = vec![0.0; IMAGE_HEIGHT * width];
        for (k, glyph) in chars.iter().enumerate() {
            for row in 0..IMAGE_HEIGHT {
                let dst = row * width + k * gw;
                pixels[dst..dst + gw].copy_from_slice(&glyph[row * gw..(row + 1) * gw]);
            }
        }
        Ok(TextImage { height: IMAGE_HEIGHT, width, channels: 1, pixels })
    }
}

fn draw_glyph(c: char, glyph_width: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(c as u64)));
    let mut g = vec![0.0f32; IMAGE_HEIGHT * glyph_width];
    // One blank column on each side and a blank band at top and bottom.
    loop {
        let mut on = 0;
        for row in 4..IMAGE_HEIGHT - 4 {
            for col in 1..glyph_width - 1 {
                let bit = rng.gen_bool(0.5);
                g[row * glyph_width + col] = if bit { 1.0 } else { 0.0 };
                on += bit as usize;
            }
        }
        if on > 0 {
            return g;
        }
    }
}

/// Renders with a bank built over exactly the characters of `text`.
pub fn render_text_image(text: &str, glyph_width: usize, seed: u64) -> Result<TextImage> {
    let mut alphabet = String::new();
    for c in text.chars() {
        if !alphabet.contains(c) {
            alphabet.push(c);
        }
    }
    GlyphBank::new(&alphabet, glyph_width, seed)?.render(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn width_is_glyph_width_times_length() {
        let img = render_text_image("ab", 8, 1).unwrap();
        assert_eq!((img.height, img.width, img.channels), (32, 16, 1));
        assert!(img.pixels.iter().all(|&p| p == 0.0 || p == 1.0));
    }

    #[test]
    fn rendering_is_deterministic() {
        let bank = GlyphBank::new("abc", 8, 42).unwrap();
        assert_eq!(bank.render("cab").unwrap(), bank.render("cab").unwrap());
        let other = GlyphBank::new("cba", 8, 42).unwrap();
        assert_eq!(bank.render("cab").unwrap(), other.render("cab").unwrap());
    }

    #[test]
    fn swapping_characters_swaps_columns() {
        let bank = GlyphBank::new("ab", 8, 3).unwrap();
        let ab = bank.render("ab").unwrap();
        let ba = bank.render("ba").unwrap();
        assert_ne!(ab, ba);
        let mut x = ab.pixels.clone();
        let mut y = ba.pixels.clone();
        x.sort_by(f32::total_cmp);
        y.sort_by(f32::total_cmp);
        assert_eq!(x, y);
        for row in 0..32 {
            for col in 0..8 {
                assert_eq!(ab.get(row, col), ba.get(row, col + 8));
            }
        }
    }

    #[test]
    fn errors() {
        let bank = GlyphBank::new("ab", 8, 3).unwrap();
        assert!(matches!(bank.render(""), Err(Error::EmptyString)));
        assert!(matches!(bank.render("abz"), Err(Error::UnknownCharacter('z'))));
    }
}
