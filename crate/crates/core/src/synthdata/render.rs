//! Procedural identity images.
//!
//! An identity is a 16-dim latent `z`. Its image is eight coloured Gaussian
//! blobs whose centres, widths and colours are fixed affine functions of `z`,
//! composited over a smooth intensity ramp. Per-sample nuisance is an integer
//! translation of up to two pixels plus additive pixel noise. The target
//! modality remaps colour channels, inverts intensity and blurs.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::image::Image;
use crate::seed::rng_for;

pub const LATENT_DIM: usize = 16;
const NUM_BLOBS: usize = 8;
const MAX_SHIFT: i64 = 2;
/// Seed of the fixed latent-to-pattern map; shared by every dataset.
const BASIS_SEED: u64 = 0x00D1_0B1A_5EED;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityLatent {
    pub id: u32,
    pub z: [f64; LATENT_DIM],
}

impl IdentityLatent {
    /// Standard-normal latent, fixed by `(dataset_seed, id)`.
    pub fn generate(dataset_seed: u64, id: u32) -> Self {
        let mut rng = rng_for(dataset_seed, &format!("latent/{id}"));
        let mut z = [0.0; LATENT_DIM];
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        Self { id, z }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Source,
    Target,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Source => "source",
            Modality::Target => "target",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityTransform {
    /// Row `c` gives output channel `c` as a mix of input channels.
    pub channel_mix: [[f64; 3]; 3],
    pub invert: bool,
    pub blur_sigma: f64,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub name: Modality,
    pub transform: ModalityTransform,
}

const IDENTITY_MIX: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Circulant, doubly stochastic channel remap (condition number about 1.8).
pub const DEFAULT_TARGET_MIX: [[f64; 3]; 3] = [[0.2, 0.7, 0.1], [0.1, 0.2, 0.7], [0.7, 0.1, 0.2]];

impl ModalitySpec {
    pub fn source() -> Self {
        Self {
            name: Modality::Source,
            transform: ModalityTransform {
                channel_mix: IDENTITY_MIX,
                invert: false,
                blur_sigma: 0.0,
                noise_sigma: 0.02,
            },
        }
    }

    pub fn default_target() -> Self {
        Self {
            name: Modality::Target,
            transform: ModalityTransform {
                channel_mix: DEFAULT_TARGET_MIX,
                invert: true,
                blur_sigma: 1.0,
                noise_sigma: 0.05,
            },
        }
    }

    pub fn is_identity_transform(&self) -> bool {
        self.transform.channel_mix == IDENTITY_MIX && !self.transform.invert && self.transform.blur_sigma == 0.0
    }
}

struct Blob {
    center: [[f64; LATENT_DIM]; 2],
    base_center: [f64; 2],
    colour: [[f64; LATENT_DIM]; 3],
    width: [f64; LATENT_DIM],
}

fn basis() -> &'static [Blob] {
    static BASIS: OnceLock<Vec<Blob>> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut rng = rng_for(BASIS_SEED, "render-basis");
        let scale = 1.0 / (LATENT_DIM as f64).sqrt();
        let mut direction = || {
            let mut v = [0.0; LATENT_DIM];
            for x in v.iter_mut() {
                let n: f64 = StandardNormal.sample(&mut rng);
                *x = n * scale;
            }
            v
        };
        (0..NUM_BLOBS)
            .map(|b| {
                let angle = std::f64::consts::TAU * b as f64 / NUM_BLOBS as f64;
                let radius = if b % 2 == 0 { 0.28 } else { 0.16 };
                Blob {
                    center: [direction(), direction()],
                    base_center: [0.5 + radius * angle.cos(), 0.5 + radius * angle.sin()],
                    colour: [direction(), direction(), direction()],
                    width: direction(),
                }
            })
            .collect()
    })
}

fn dot(a: &[f64; LATENT_DIM], b: &[f64; LATENT_DIM]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Renders one sample. Deterministic in `(latent, modality, nuisance_seed, size)`.
pub fn render(latent: &IdentityLatent, modality: &ModalitySpec, nuisance_seed: u64, size: (usize, usize)) -> Image {
    let (h, w) = size;
    let mut rng = rng_for(nuisance_seed, "nuisance");
    let shift_x = rng.gen_range(-MAX_SHIFT..=MAX_SHIFT) as f64;
    let shift_y = rng.gen_range(-MAX_SHIFT..=MAX_SHIFT) as f64;

    struct Placed {
        cx: f64,
        cy: f64,
        inv_two_var: f64,
        colour: [f64; 3],
    }
    let blobs: Vec<Placed> = basis()
        .iter()
        .map(|b| {
            let sigma = (0.07 + 0.015 * dot(&b.width, &latent.z)).max(0.03);
            Placed {
                cx: b.base_center[0] + 0.08 * dot(&b.center[0], &latent.z),
                cy: b.base_center[1] + 0.08 * dot(&b.center[1], &latent.z),
                inv_two_var: 1.0 / (2.0 * sigma * sigma),
                colour: [0, 1, 2].map(|c| 0.35 + 0.25 * dot(&b.colour[c], &latent.z)),
            }
        })
        .collect();

    let mut img = Image::zeros(h, w, 3);
    for y in 0..h {
        let v = (y as f64 + 0.5 - shift_y) / h as f64;
        for x in 0..w {
            let u = (x as f64 + 0.5 - shift_x) / w as f64;
            let background = 0.15 + 0.15 * u + 0.1 * v;
            let mut px = [background; 3];
            for b in &blobs {
                let d2 = (u - b.cx).powi(2) + (v - b.cy).powi(2);
                let g = (-d2 * b.inv_two_var).exp();
                for (p, colour) in px.iter_mut().zip(&b.colour) {
                    *p += colour * g;
                }
            }
            for (c, value) in px.into_iter().enumerate() {
                img.set(y, x, c, value as f32);
            }
        }
    }

    let t = &modality.transform;
    if t.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, t.noise_sigma).expect("noise sigma is finite");
        for v in img.data_mut() {
            *v += normal.sample(&mut rng) as f32;
        }
    }
    if t.channel_mix != IDENTITY_MIX {
        for px in img.data_mut().chunks_exact_mut(3) {
            let src = [px[0] as f64, px[1] as f64, px[2] as f64];
            for (c, row) in t.channel_mix.iter().enumerate() {
                px[c] = (row[0] * src[0] + row[1] * src[1] + row[2] * src[2]) as f32;
            }
        }
    }
    if t.invert {
        for v in img.data_mut() {
            *v = 1.0 - *v;
        }
    }
    if t.blur_sigma > 0.0 {
        gaussian_blur(&mut img, t.blur_sigma);
    }
    for v in img.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    img
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(img: &mut Image, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (h, w, ch) = (img.height() as isize, img.width() as isize, img.channels());
    let pass = |src: &Image, horizontal: bool| -> Image {
        let mut out = Image::zeros(h as usize, w as usize, ch);
        for y in 0..h {
            for x in 0..w {
                for c in 0..ch {
                    let mut acc = 0.0;
                    for (k, weight) in kernel.iter().enumerate() {
                        let off = k as isize - radius;
                        let (sy, sx) = if horizontal {
                            (y, (x + off).clamp(0, w - 1))
                        } else {
                            ((y + off).clamp(0, h - 1), x)
                        };
                        acc += weight * src.get(sy as usize, sx as usize, c) as f64;
                    }
                    out.set(y as usize, x as usize, c, acc as f32);
                }
            }
        }
        out
    };
    let horizontal = pass(img, true);
    *img = pass(&horizontal, false);
}
