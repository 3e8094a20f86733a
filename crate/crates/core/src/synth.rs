//! Procedural pedestrian dataset.
//!
//! Each identity owns a hair, skin and leg colour and a body build (head
//! size, shoulder width, arm width, waist and hip heights), all
//! cloth-irrelevant; each outfit owns an upper-clothes and pants colour.
//! Figures are stacked rectangles on a noise background with per-image
//! position jitter and additive Gaussian pixel noise. Masks carry raw LIP
//! labels so they go through the same recombination path as real data.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::ingest::{load_dataset, write_label_png, write_manifest, write_rgb_png, Dataset, LabelRecombinationTable, SampleRecord, Split};
use crate::rng::RngStream;
use crate::tensor::Image;

/// Raw labels written into synthetic masks.
mod raw {
    pub const BACKGROUND: u8 = 0;
    pub const HAIR: u8 = 2;
    pub const UPPER: u8 = 5;
    pub const PANTS: u8 = 9;
    pub const FACE: u8 = 13;
    pub const LEFT_ARM: u8 = 14;
    pub const RIGHT_ARM: u8 = 15;
    pub const LEFT_LEG: u8 = 16;
    pub const RIGHT_LEG: u8 = 17;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub identities: usize,
    pub outfits: usize,
    pub per_outfit: usize,
    pub height: usize,
    pub width: usize,
    /// Identities held out for evaluation; defaults to a third (at least one).
    pub test_identities: Option<usize>,
    pub noise_sigma: f64,
    /// Outfit colours are drawn per channel from `0.5 ± clothes_spread / 2`.
    pub clothes_spread: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            identities: 30,
            outfits: 3,
            per_outfit: 6,
            height: 32,
            width: 16,
            test_identities: None,
            noise_sigma: 0.02,
            clothes_spread: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn num_test(&self) -> usize {
        self.test_identities
            .unwrap_or((self.identities / 3).max(1))
            .min(self.identities)
    }

    fn validate(&self) -> Result<()> {
        if self.identities == 0 || self.outfits == 0 || self.per_outfit == 0 {
            return Err(Error::Config(
                "identities, outfits and per_outfit must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.clothes_spread) {
            return Err(Error::Config(format!(
                "clothes_spread {} outside [0, 1]",
                self.clothes_spread
            )));
        }
        if self.height < 8 || self.width < 4 {
            return Err(Error::Config(format!(
                "synthetic images must be at least 8x4, got {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

type Rgb = [f64; 3];

struct Identity {
    hair: Rgb,
    skin: Rgb,
    legs: Rgb,
    build: Build,
}

/// Body proportions in image units.
struct Build {
    head_bottom: f64,
    head_half_width: f64,
    shoulder: f64,
    arm: f64,
    waist: f64,
    hip: f64,
}

impl Build {
    fn draw(rng: &mut RngStream) -> Self {
        Self {
            head_bottom: rng.uniform_range(0.14, 0.24),
            head_half_width: rng.uniform_range(0.10, 0.20),
            shoulder: rng.uniform_range(0.16, 0.30),
            arm: rng.uniform_range(0.08, 0.16),
            waist: rng.uniform_range(0.48, 0.60),
            hip: rng.uniform_range(0.70, 0.84),
        }
    }

    fn regions(&self) -> [Region; 8] {
        let b = self;
        let hair_bottom = 0.03 + 0.35 * (b.head_bottom - 0.03);
        let leg_half = 0.8 * b.shoulder;
        [
            region(0.03, hair_bottom, 0.5 - b.head_half_width, 0.5 + b.head_half_width),
            region(hair_bottom, b.head_bottom, 0.5 - b.head_half_width, 0.5 + b.head_half_width),
            region(b.head_bottom, b.waist, 0.5 - b.shoulder, 0.5 + b.shoulder),
            region(b.head_bottom + 0.02, b.waist - 0.03, 0.5 - b.shoulder - b.arm, 0.5 - b.shoulder),
            region(b.head_bottom + 0.02, b.waist - 0.03, 0.5 + b.shoulder, 0.5 + b.shoulder + b.arm),
            region(b.waist, b.hip, 0.5 - 0.85 * b.shoulder, 0.5 + 0.85 * b.shoulder),
            region(b.hip, 0.97, 0.5 - leg_half, 0.47),
            region(b.hip, 0.97, 0.53, 0.5 + leg_half),
        ]
    }
}

struct Outfit {
    upper: Rgb,
    pants: Rgb,
}

fn color(rng: &mut RngStream) -> Rgb {
    [rng.uniform(), rng.uniform(), rng.uniform()]
}

fn muted(rng: &mut RngStream, spread: f64) -> Rgb {
    color(rng).map(|u| 0.5 + spread * (u - 0.5))
}

/// Fractional box `[top, bottom) x [left, right)` in image units.
struct Region {
    top: f64,
    bottom: f64,
    left: f64,
    right: f64,
}

const fn region(top: f64, bottom: f64, left: f64, right: f64) -> Region {
    Region {
        top,
        bottom,
        left,
        right,
    }
}

fn render(
    cfg: &SynthConfig,
    who: &Identity,
    outfit: &Outfit,
    rng: &mut RngStream,
) -> (Image, Vec<u8>) {
    let (h, w) = (cfg.height, cfg.width);
    let jitter = (h / 32).max(1) as i64;
    let dy = rng.below(2 * jitter as usize + 1) as i64 - jitter;
    let dx = rng.below(2 * jitter as usize + 1) as i64 - jitter;

    let mut rgb = vec![[0.0; 3]; h * w];
    let mut labels = vec![raw::BACKGROUND; h * w];
    for px in rgb.iter_mut() {
        let base = rng.uniform_range(0.25, 0.75);
        for v in px.iter_mut() {
            *v = (base + rng.uniform_range(-0.1, 0.1)).clamp(0.0, 1.0);
        }
    }

    let fills = [
        (raw::HAIR, who.hair),
        (raw::FACE, who.skin),
        (raw::UPPER, outfit.upper),
        (raw::LEFT_ARM, who.skin),
        (raw::RIGHT_ARM, who.skin),
        (raw::PANTS, outfit.pants),
        (raw::LEFT_LEG, who.legs),
        (raw::RIGHT_LEG, who.legs),
    ];
    for (reg, (label, fill)) in who.build.regions().iter().zip(fills) {
        let r0 = (reg.top * h as f64).round() as i64 + dy;
        let r1 = (reg.bottom * h as f64).round() as i64 + dy;
        let c0 = (reg.left * w as f64).round() as i64 + dx;
        let c1 = (reg.right * w as f64).round() as i64 + dx;
        for r in r0.max(0)..r1.min(h as i64) {
            for c in c0.max(0)..c1.min(w as i64) {
                let p = r as usize * w + c as usize;
                rgb[p] = fill;
                labels[p] = label;
            }
        }
    }

    let plane = h * w;
    let mut data = vec![0.0; 3 * plane];
    for (p, px) in rgb.iter().enumerate() {
        for c in 0..3 {
            data[c * plane + p] = (px[c] + cfg.noise_sigma * rng.normal()).clamp(0.0, 1.0);
        }
    }
    let img = Image::new(3, h, w, data).expect("dims match");
    (img, labels)
}

/// Writes images, masks and `manifest.csv` under `out_dir` and loads the
/// result back through the manifest reader.
///
/// The last [`SynthConfig::num_test`] identities are held out. For each of
/// them, the first outfit is split between `gallery` (first half, rounded
/// up) and `query_same`; every other outfit goes to `query_cross`, so a
/// cross-clothes query never shares a clothes id with its gallery.
pub fn generate_synthetic(cfg: &SynthConfig, rng: &mut RngStream, out_dir: &Path) -> Result<Dataset> {
    cfg.validate()?;
    for sub in ["images", "masks"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    let first_test = cfg.identities - cfg.num_test();
    let gallery_per_outfit = cfg.per_outfit.div_ceil(2);
    let mut records = Vec::new();
    for id in 0..cfg.identities {
        let mut id_rng = rng.split_index("identity", id as u64);
        let who = Identity {
            hair: color(&mut id_rng),
            skin: color(&mut id_rng),
            legs: color(&mut id_rng),
            build: Build::draw(&mut id_rng),
        };
        let identity = format!("id{id:03}");
        for o in 0..cfg.outfits {
            let outfit = Outfit {
                upper: muted(&mut id_rng, cfg.clothes_spread),
                pants: muted(&mut id_rng, cfg.clothes_spread),
            };
            for k in 0..cfg.per_outfit {
                let (img, labels) = render(cfg, &who, &outfit, &mut id_rng);
                let stem = format!("{identity}_o{o}_{k:02}.png");
                let image_path = PathBuf::from("images").join(&stem);
                let mask_path = PathBuf::from("masks").join(&stem);
                write_rgb_png(&out_dir.join(&image_path), &img)?;
                write_label_png(&out_dir.join(&mask_path), cfg.height, cfg.width, &labels)?;

                let (split, camera) = if id < first_test {
                    (Split::Train, format!("cam{}", k % 3))
                } else if o == 0 && k < gallery_per_outfit {
                    (Split::Gallery, "A".to_string())
                } else if o == 0 {
                    (Split::QuerySame, "B".to_string())
                } else {
                    (Split::QueryCross, "C".to_string())
                };
                records.push(SampleRecord {
                    image_path,
                    mask_path,
                    identity: identity.clone(),
                    camera,
                    clothes_id: format!("o{o}"),
                    split,
                });
            }
        }
    }
    let manifest = out_dir.join("manifest.csv");
    write_manifest(&manifest, &records)?;
    load_dataset(&manifest, LabelRecombinationTable::default())
}
