//! Color frames and pixel masks.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> [u8; 3] {
        let i = (v * self.width + u) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, u: usize, v: usize, rgb: [u8; 3]) {
        let i = (v * self.width + u) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Set of pixels of a `width x height` frame, stored as sorted row-major indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PixelMask {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u32>,
}

impl PixelMask {
    pub fn new(width: usize, height: usize, mut pixels: Vec<u32>) -> Self {
        pixels.sort_unstable();
        pixels.dedup();
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        self.pixels.binary_search(&((v * self.width + u) as u32)).is_ok()
    }

    pub fn coords(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pixels
            .iter()
            .map(move |&i| (i as usize % self.width, i as usize / self.width))
    }

    /// Tight `(x1, y1, x2, y2)` box with exclusive upper corner, or `None` if empty.
    pub fn bbox(&self) -> Option<[u32; 4]> {
        let mut it = self.coords();
        let (u0, v0) = it.next()?;
        let (mut x1, mut y1, mut x2, mut y2) = (u0, v0, u0, v0);
        for (u, v) in it {
            x1 = x1.min(u);
            x2 = x2.max(u);
            y1 = y1.min(v);
            y2 = y2.max(v);
        }
        Some([x1 as u32, y1 as u32, x2 as u32 + 1, y2 as u32 + 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_bbox_is_exclusive() {
        let m = PixelMask::new(10, 10, vec![3 * 10 + 4, 5 * 10 + 2, 3 * 10 + 4]);
        assert_eq!(m.len(), 2);
        assert_eq!(m.bbox(), Some([2, 3, 5, 6]));
        assert!(m.contains(2, 5));
        assert!(PixelMask::default().bbox().is_none());
    }
}
