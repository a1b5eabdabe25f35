//! Dense 2D multi-channel maps over the registration square [-1,1]^2.

use crate::error::{Error, Result};
use crate::math::Vec2;

/// What the channels of a map mean; stored in serialized map files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MapSemantics {
    Sdf = 0,
    Label = 1,
    Uv = 2,
    Occupancy = 3,
    Position = 4,
    Displacement = 5,
    Normal = 6,
    Mask = 7,
    Depth = 8,
    Feature = 9,
    /// 3 value channels + 1 validity channel (pixelwise OR of occupancies).
    Coverage = 10,
}

impl MapSemantics {
    pub fn from_tag(tag: u8) -> Result<Self> {
        Ok(match tag {
            0 => Self::Sdf,
            1 => Self::Label,
            2 => Self::Uv,
            3 => Self::Occupancy,
            4 => Self::Position,
            5 => Self::Displacement,
            6 => Self::Normal,
            7 => Self::Mask,
            8 => Self::Depth,
            9 => Self::Feature,
            10 => Self::Coverage,
            _ => return Err(Error::BadMagic("map semantics tag")),
        })
    }
}

/// Row-major H x W x C grid of f32 samples. Row 0 is v = -1, column 0 is
/// u = -1; pixel centers sit exactly on the [-1,1] endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub semantics: MapSemantics,
    pub data: Vec<f32>,
}

impl GridMap {
    pub fn zeros(height: usize, width: usize, channels: usize, semantics: MapSemantics) -> Self {
        assert!(height >= 2 && width >= 2 && channels >= 1);
        GridMap { height, width, channels, semantics, data: vec![0.0; height * width * channels] }
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, c: usize) -> usize {
        debug_assert!(i < self.height && j < self.width && c < self.channels);
        (i * self.width + j) * self.channels + c
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> f32 {
        self.data[self.idx(i, j, c)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, c: usize, value: f32) {
        let k = self.idx(i, j, c);
        self.data[k] = value;
    }

    pub fn pixel(&self, i: usize, j: usize) -> &[f32] {
        let k = (i * self.width + j) * self.channels;
        &self.data[k..k + self.channels]
    }

    pub fn pixel_mut(&mut self, i: usize, j: usize) -> &mut [f32] {
        let k = (i * self.width + j) * self.channels;
        &mut self.data[k..k + self.channels]
    }

    /// UV coordinates of the pixel center (row i, column j).
    pub fn pixel_uv(&self, i: usize, j: usize) -> Vec2 {
        [
            2.0 * j as f64 / (self.width - 1) as f64 - 1.0,
            2.0 * i as f64 / (self.height - 1) as f64 - 1.0,
        ]
    }

    /// Continuous pixel coordinates (row, column) of a UV point.
    pub fn uv_pixel(&self, uv: Vec2) -> (f64, f64) {
        (
            (uv[1] + 1.0) * 0.5 * (self.height - 1) as f64,
            (uv[0] + 1.0) * 0.5 * (self.width - 1) as f64,
        )
    }

    /// Bilinear sample of one channel; coordinates outside the square clamp
    /// to the border.
    pub fn sample(&self, uv: Vec2, c: usize) -> f64 {
        let (row, col) = self.uv_pixel(uv);
        let row = row.clamp(0.0, (self.height - 1) as f64);
        let col = col.clamp(0.0, (self.width - 1) as f64);
        let i0 = row.floor() as usize;
        let j0 = col.floor() as usize;
        let i1 = (i0 + 1).min(self.height - 1);
        let j1 = (j0 + 1).min(self.width - 1);
        let fi = row - i0 as f64;
        let fj = col - j0 as f64;
        let g = |i: usize, j: usize| self.get(i, j, c) as f64;
        (1.0 - fi) * ((1.0 - fj) * g(i0, j0) + fj * g(i0, j1))
            + fi * ((1.0 - fj) * g(i1, j0) + fj * g(i1, j1))
    }
}
