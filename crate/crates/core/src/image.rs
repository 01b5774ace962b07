//! 8-bit grayscale images.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension(format!(
                "{width}x{height} image needs {} bytes, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Binary mask rendered as 0/255.
    pub fn from_mask(width: usize, height: usize, mask: &[bool]) -> Self {
        Self { width, height, data: mask.iter().map(|&m| if m { 255 } else { 0 }).collect() }
    }

    pub fn to_mask(&self) -> Vec<bool> {
        self.data.iter().map(|&v| v >= 128).collect()
    }
}
