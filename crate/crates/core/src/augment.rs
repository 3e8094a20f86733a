//! Joint image/mask geometric augmentation, random erasing and PK sampling.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ingest::{Dataset, Split};
use crate::rng::RngStream;
use crate::tensor::{part, Image, SemanticMask};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoAugConfig {
    pub height: usize,
    pub width: usize,
    pub padding: usize,
    pub flip_prob: f64,
}

impl Default for GeoAugConfig {
    fn default() -> Self {
        Self {
            height: 256,
            width: 128,
            padding: 10,
            flip_prob: 0.5,
        }
    }
}

impl GeoAugConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config("augmentation target size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("flip probability {} outside [0, 1]", self.flip_prob)));
        }
        Ok(())
    }
}

/// One concrete draw of the geometric transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GeoTransform {
    /// Top-left corner of the crop inside the padded canvas.
    pub offset: (usize, usize),
    pub flip: bool,
}

impl GeoTransform {
    pub fn draw(cfg: &GeoAugConfig, rng: &mut RngStream) -> Self {
        let oy = rng.below(2 * cfg.padding + 1);
        let ox = rng.below(2 * cfg.padding + 1);
        let flip = rng.bernoulli(cfg.flip_prob);
        Self {
            offset: (oy, ox),
            flip,
        }
    }

    /// Crop offset that reproduces the unpadded image.
    pub fn centered(cfg: &GeoAugConfig) -> Self {
        Self {
            offset: (cfg.padding, cfg.padding),
            flip: false,
        }
    }
}

/// Bilinear resize (half-pixel centres, edge clamped).
pub fn resize_bilinear(img: &Image, height: usize, width: usize) -> Image {
    if (img.height(), img.width()) == (height, width) {
        return img.clone();
    }
    let (c, h, w) = img.dims();
    let sy = h as f64 / height as f64;
    let sx = w as f64 / width as f64;
    let mut out = Image::zeros(c, height, width);
    for r in 0..height {
        let fy = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for col in 0..width {
            let fx = ((col as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            for ch in 0..c {
                let top = img.get(ch, y0, x0) * (1.0 - tx) + img.get(ch, y0, x1) * tx;
                let bot = img.get(ch, y1, x0) * (1.0 - tx) + img.get(ch, y1, x1) * tx;
                out.set(ch, r, col, top * (1.0 - ty) + bot * ty);
            }
        }
    }
    out
}

/// Nearest-neighbour resize; never produces a label absent from the input.
pub fn resize_nearest(mask: &SemanticMask, height: usize, width: usize) -> SemanticMask {
    if (mask.height(), mask.width()) == (height, width) {
        return mask.clone();
    }
    let (h, w) = (mask.height(), mask.width());
    let mut labels = Vec::with_capacity(height * width);
    for r in 0..height {
        let sr = (((r as f64 + 0.5) * h as f64 / height as f64) as usize).min(h - 1);
        for c in 0..width {
            let sc = (((c as f64 + 0.5) * w as f64 / width as f64) as usize).min(w - 1);
            labels.push(mask.get(sr, sc));
        }
    }
    SemanticMask::new(height, width, labels).expect("labels copied from a valid mask")
}

/// Horizontal mirror of image and mask.
pub fn flip_horizontal(img: &Image, mask: &SemanticMask) -> (Image, SemanticMask) {
    let (c, h, w) = img.dims();
    let mut out = Image::zeros(c, h, w);
    for ch in 0..c {
        for r in 0..h {
            for col in 0..w {
                out.set(ch, r, col, img.get(ch, r, w - 1 - col));
            }
        }
    }
    let labels = (0..h)
        .flat_map(|r| (0..w).rev().map(move |col| (r, col)))
        .map(|(r, col)| mask.get(r, col))
        .collect();
    (out, SemanticMask::new(h, w, labels).expect("same labels"))
}

/// Resize, zero-pad by `cfg.padding`, crop at `t.offset`, optionally flip.
/// Padding is black in the image and background in the mask.
pub fn apply_geo(
    img: &Image,
    mask: &SemanticMask,
    cfg: &GeoAugConfig,
    t: GeoTransform,
) -> (Image, SemanticMask) {
    let img = resize_bilinear(img, cfg.height, cfg.width);
    let mask = resize_nearest(mask, cfg.height, cfg.width);
    let (c, h, w) = img.dims();
    let pad = cfg.padding as i64;
    let (oy, ox) = (t.offset.0 as i64, t.offset.1 as i64);

    let mut out = Image::zeros(c, h, w);
    let mut labels = vec![part::BACKGROUND; h * w];
    for r in 0..h {
        let sr = r as i64 + oy - pad;
        if sr < 0 || sr >= h as i64 {
            continue;
        }
        for col in 0..w {
            let sc = col as i64 + ox - pad;
            if sc < 0 || sc >= w as i64 {
                continue;
            }
            let (sr, sc) = (sr as usize, sc as usize);
            for ch in 0..c {
                out.set(ch, r, col, img.get(ch, sr, sc));
            }
            labels[r * w + col] = mask.get(sr, sc);
        }
    }
    let mask = SemanticMask::new(h, w, labels).expect("labels copied from a valid mask");
    if t.flip {
        flip_horizontal(&out, &mask)
    } else {
        (out, mask)
    }
}

pub fn geo_augment(
    img: &Image,
    mask: &SemanticMask,
    cfg: &GeoAugConfig,
    rng: &mut RngStream,
) -> (Image, SemanticMask) {
    let t = GeoTransform::draw(cfg, rng);
    apply_geo(img, mask, cfg, t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillMode {
    Constant(u8),
    /// Independent uniform [0, 1) value per erased pixel and channel.
    Random,
}

impl FillMode {
    fn value(self, rng: &mut RngStream) -> f64 {
        match self {
            FillMode::Constant(v) => f64::from(v) / 255.0,
            FillMode::Random => rng.uniform(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomErasingConfig {
    pub probability: f64,
    pub area_min: f64,
    pub area_max: f64,
    pub aspect_min: f64,
    pub aspect_max: f64,
    pub fill: FillMode,
    pub max_attempts: usize,
}

impl Default for RandomErasingConfig {
    fn default() -> Self {
        Self {
            probability: 0.5,
            area_min: 0.02,
            area_max: 0.4,
            aspect_min: 0.3,
            aspect_max: 3.33,
            fill: FillMode::Random,
            max_attempts: 100,
        }
    }
}

impl RandomErasingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.area_min && self.area_min <= self.area_max && self.area_max < 1.0) {
            return Err(Error::Config(format!(
                "erasing area range [{}, {}] must satisfy 0 < min <= max < 1",
                self.area_min, self.area_max
            )));
        }
        if !(0.0 < self.aspect_min && self.aspect_min <= self.aspect_max) {
            return Err(Error::Config("erasing aspect range must be positive and ordered".into()));
        }
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::Config(format!("erasing probability {} outside [0, 1]", self.probability)));
        }
        Ok(())
    }
}

/// An erased rectangle: rows `top..top + height`, cols `left..left + width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Random erasing; returns the erased rectangle when one was drawn.
///
/// A candidate is accepted only if its integer size still satisfies the
/// configured area and aspect ranges after rounding.
pub fn random_erase_rect(
    img: &Image,
    cfg: &RandomErasingConfig,
    rng: &mut RngStream,
) -> (Image, Option<Rect>) {
    if rng.uniform() >= cfg.probability {
        return (img.clone(), None);
    }
    let (c, h, w) = img.dims();
    let area = (h * w) as f64;
    for _ in 0..cfg.max_attempts {
        let target = rng.uniform_range(cfg.area_min, cfg.area_max) * area;
        let aspect = rng.uniform_range(cfg.aspect_min, cfg.aspect_max);
        let eh = (target * aspect).sqrt().round() as usize;
        let ew = (target / aspect).sqrt().round() as usize;
        if eh == 0 || ew == 0 || eh >= h || ew >= w {
            continue;
        }
        let ratio = (eh * ew) as f64 / area;
        let realized = eh as f64 / ew as f64;
        if ratio < cfg.area_min
            || ratio > cfg.area_max
            || realized < cfg.aspect_min
            || realized > cfg.aspect_max
        {
            continue;
        }
        let top = rng.below(h - eh + 1);
        let left = rng.below(w - ew + 1);
        let mut out = img.clone();
        for ch in 0..c {
            for r in top..top + eh {
                for col in left..left + ew {
                    let v = cfg.fill.value(rng);
                    out.set(ch, r, col, v);
                }
            }
        }
        let rect = Rect {
            top,
            left,
            height: eh,
            width: ew,
        };
        return (out, Some(rect));
    }
    (img.clone(), None)
}

pub fn random_erase(img: &Image, cfg: &RandomErasingConfig, rng: &mut RngStream) -> Image {
    random_erase_rect(img, cfg, rng).0
}

/// `P` identities x `K` instances per batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PkSpec {
    pub identities: usize,
    pub instances: usize,
}

impl Default for PkSpec {
    fn default() -> Self {
        Self {
            identities: 16,
            instances: 4,
        }
    }
}

impl PkSpec {
    pub fn batch_size(&self) -> usize {
        self.identities * self.instances
    }

    pub fn validate(&self, batch_size: Option<usize>) -> Result<()> {
        if self.identities == 0 || self.instances == 0 {
            return Err(Error::Config("P and K must be positive".into()));
        }
        if let Some(b) = batch_size {
            if b != self.batch_size() {
                return Err(Error::Config(format!(
                    "P*K = {} does not match batch size {b}",
                    self.batch_size()
                )));
            }
        }
        Ok(())
    }
}

/// Endless stream of identity-balanced index batches over the training split.
#[derive(Debug, Clone)]
pub struct PkSampler {
    spec: PkSpec,
    pools: Vec<(String, Vec<usize>)>,
    rng: RngStream,
}

impl PkSampler {
    pub fn num_identities(&self) -> usize {
        self.pools.len()
    }

    /// Draws one batch: identity-major, `K` consecutive slots per identity.
    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.pools.len()).collect();
        self.rng.shuffle(&mut order);
        let mut batch = Vec::with_capacity(self.spec.batch_size());
        for &id in order.iter().take(self.spec.identities) {
            let pool = &self.pools[id].1;
            if pool.len() >= self.spec.instances {
                let mut picks = pool.clone();
                self.rng.shuffle(&mut picks);
                batch.extend_from_slice(&picks[..self.spec.instances]);
            } else {
                for _ in 0..self.spec.instances {
                    batch.push(pool[self.rng.below(pool.len())]);
                }
            }
        }
        batch
    }
}

impl Iterator for PkSampler {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.next_batch())
    }
}

pub fn pk_batches(dataset: &Dataset, spec: PkSpec, rng: RngStream) -> Result<PkSampler> {
    spec.validate(None)?;
    let mut by_id: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in dataset.records().iter().enumerate() {
        if r.split == Split::Train {
            by_id.entry(r.identity.as_str()).or_default().push(i);
        }
    }
    if by_id.len() < spec.identities {
        return Err(Error::Config(format!(
            "PK sampling needs {} identities, training split has {}",
            spec.identities,
            by_id.len()
        )));
    }
    Ok(PkSampler {
        spec,
        pools: by_id.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        rng,
    })
}
