//! A fixed random convolutional feature extractor standing in for a
//! pretrained backbone: two stages of 3x3 convolution, ReLU and 2x2 max
//! pooling (total stride 4). Filters are zero-mean and bias-free, so flat
//! image regions map to void features.

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::instances::rng;
use crate::tensor::FeatureMap;

pub const STRIDE: usize = 4;
pub const DEPTH: usize = 32;
const HIDDEN: usize = 16;
/// Features weaker than this are treated as void.
pub const VOID_EPS: f32 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyBackbone {
    /// `HIDDEN x 9` weights over a single input channel.
    conv1: Vec<f32>,
    /// `DEPTH x HIDDEN x 9`.
    conv2: Vec<f32>,
}

fn zero_mean_filters(rng: &mut impl Rng, out: usize, inp: usize) -> Vec<f32> {
    let mut w: Vec<f32> = (0..out * inp * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
    for f in w.chunks_exact_mut(9) {
        let mean = f.iter().sum::<f32>() / 9.0;
        f.iter_mut().for_each(|x| *x -= mean);
    }
    for f in w.chunks_exact_mut(inp * 9) {
        let n = f.iter().map(|x| x * x).sum::<f32>().sqrt();
        f.iter_mut().for_each(|x| *x /= n);
    }
    w
}

/// Same-padded 3x3 convolution, ReLU, then 2x2 max pooling. `input` is
/// `h x w x c` row-major.
fn stage(input: &[f32], h: usize, w: usize, c: usize, filters: &[f32], out: usize) -> Vec<f32> {
    let mut conv = vec![0.0f32; h * w * out];
    for y in 0..h {
        for x in 0..w {
            let dst = &mut conv[(y * w + x) * out..(y * w + x + 1) * out];
            for dy in 0..3 {
                let yy = y as isize + dy as isize - 1;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for dx in 0..3 {
                    let xx = x as isize + dx as isize - 1;
                    if xx < 0 || xx >= w as isize {
                        continue;
                    }
                    let src = &input[(yy as usize * w + xx as usize) * c..][..c];
                    let tap = dy * 3 + dx;
                    for (o, d) in dst.iter_mut().enumerate() {
                        let f = &filters[o * c * 9..(o + 1) * c * 9];
                        let mut acc = 0.0;
                        for (ci, &v) in src.iter().enumerate() {
                            acc += f[ci * 9 + tap] * v;
                        }
                        *d += acc;
                    }
                }
            }
        }
    }
    let (ph, pw) = (h / 2, w / 2);
    let mut pooled = vec![0.0f32; ph * pw * out];
    for y in 0..ph {
        for x in 0..pw {
            for o in 0..out {
                let mut m = 0.0f32;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    m = m.max(conv[((2 * y + dy) * w + 2 * x + dx) * out + o]);
                }
                pooled[(y * pw + x) * out + o] = m;
            }
        }
    }
    pooled
}

impl ToyBackbone {
    pub fn new(seed: u64) -> Self {
        let mut rng = rng(seed);
        Self { conv1: zero_mean_filters(&mut rng, HIDDEN, 1), conv2: zero_mean_filters(&mut rng, DEPTH, HIDDEN) }
    }

    /// Unit-normalized feature map of `image`.
    pub fn features(&self, image: &GrayImage) -> Result<FeatureMap> {
        let (w, h) = (image.width, image.height);
        if w == 0 || h == 0 || w % STRIDE != 0 || h % STRIDE != 0 {
            return Err(Error::Dimension(format!("image {w}x{h} is not divisible by the stride {STRIDE}")));
        }
        let input: Vec<f32> = image.data.iter().map(|&v| f32::from(v) / 255.0).collect();
        let a = stage(&input, h, w, 1, &self.conv1, HIDDEN);
        let b = stage(&a, h / 2, w / 2, HIDDEN, &self.conv2, DEPTH);
        Ok(FeatureMap::new(h / STRIDE, w / STRIDE, DEPTH, b)?.normalize_rows(VOID_EPS))
    }
}

/// Features of `image` under the backbone seeded by `seed`.
pub fn toy_backbone(image: &GrayImage, seed: u64) -> Result<FeatureMap> {
    ToyBackbone::new(seed).features(image)
}
