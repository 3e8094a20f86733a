//! Semantic-guided pixel sampling.
//!
//! For a swapped part class, every pixel of that class across the batch is
//! gathered into a flat bank from a shuffled view of the batch, then written
//! back one-for-one over the same class positions of the unshuffled batch.
//! Pixels only move: each swapped class keeps its batch-wide multiset of
//! values, and masks and identity labels are untouched.
//!
//! Because the bank is a flat list, an image whose clothes region is larger
//! than its donor's will continue taking pixels from the next donor in the
//! shuffled order. Counts always agree globally.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{part, Batch};

/// Order in which bank pixels are consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BankOrder {
    /// Donor images in permutation order, raster order within each image.
    #[default]
    Raster,
    /// The raster bank, additionally shuffled pixel-by-pixel.
    Shuffled,
}

impl std::str::FromStr for BankOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raster" => Ok(BankOrder::Raster),
            "shuffled" => Ok(BankOrder::Shuffled),
            other => Err(Error::Config(format!("unknown bank order {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingConfig {
    pub swap_upper: bool,
    pub swap_pants: bool,
    /// Draw a fresh permutation for the pants pass instead of reusing the
    /// upper-clothes one.
    pub independent_permutations: bool,
    pub bank_order: BankOrder,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            swap_upper: true,
            swap_pants: true,
            independent_permutations: true,
            bank_order: BankOrder::Raster,
        }
    }
}

impl SamplingConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.swap_upper && !self.swap_pants {
            return Err(Error::Config(
                "pixel sampling needs at least one of swap_upper, swap_pants".into(),
            ));
        }
        Ok(())
    }
}

/// Pixels of one part class gathered from a permuted batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelBank {
    class_id: u8,
    channels: usize,
    /// Pixel vectors packed back to back, `channels` values each.
    pixels: Vec<f64>,
    permutation: Vec<usize>,
}

impl PixelBank {
    pub fn class_id(&self) -> u8 {
        self.class_id
    }

    pub fn len(&self) -> usize {
        if self.channels == 0 {
            0
        } else {
            self.pixels.len() / self.channels
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixel(&self, j: usize) -> &[f64] {
        &self.pixels[j * self.channels..(j + 1) * self.channels]
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[f64]> {
        self.pixels.chunks_exact(self.channels.max(1))
    }

    /// Source permutation: bank segment `i` came from batch image `permutation[i]`.
    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }
}

/// Draws a uniform permutation of `0..B`. The batch itself is not reordered.
pub fn shuffle_batch(batch: &Batch, rng: &mut RngStream) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..batch.len()).collect();
    rng.shuffle(&mut perm);
    perm
}

fn check_swappable(class_id: u8) -> Result<()> {
    if class_id != part::UPPER_CLOTHES && class_id != part::PANTS {
        return Err(Error::Argument(format!(
            "only upper-clothes ({}) and pants ({}) are swappable, got {class_id}",
            part::UPPER_CLOTHES,
            part::PANTS
        )));
    }
    Ok(())
}

fn check_permutation(perm: &[usize], len: usize) -> Result<()> {
    let mut seen = vec![false; len];
    if perm.len() != len {
        return Err(Error::Argument(format!(
            "permutation has {} entries for a batch of {len}",
            perm.len()
        )));
    }
    for &i in perm {
        if i >= len || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Argument(format!("{perm:?} is not a permutation of 0..{len}")));
        }
    }
    Ok(())
}

/// Gathers the `class_id` pixels of `batch[perm[0]], batch[perm[1]], ...`.
///
/// `rng` is only consumed for [`BankOrder::Shuffled`].
pub fn build_bank(
    batch: &Batch,
    perm: &[usize],
    class_id: u8,
    order: BankOrder,
    rng: &mut RngStream,
) -> Result<PixelBank> {
    check_swappable(class_id)?;
    check_permutation(perm, batch.len())?;
    let channels = batch.images().first().map_or(0, |img| img.channels());
    let mut pixels = Vec::new();
    for &src in perm {
        let img = &batch.images()[src];
        let mask = &batch.masks()[src];
        let offsets: Vec<usize> = mask.raster_offsets(class_id).collect();
        let start = pixels.len();
        pixels.resize(start + offsets.len() * channels, 0.0);
        for c in 0..channels {
            let plane = img.plane(c);
            for (k, &p) in offsets.iter().enumerate() {
                pixels[start + k * channels + c] = plane[p];
            }
        }
    }
    if order == BankOrder::Shuffled && channels > 0 {
        let n = pixels.len() / channels;
        let mut idx: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut idx);
        let mut shuffled = Vec::with_capacity(pixels.len());
        for j in idx {
            shuffled.extend_from_slice(&pixels[j * channels..(j + 1) * channels]);
        }
        pixels = shuffled;
    }
    Ok(PixelBank {
        class_id,
        channels,
        pixels,
        permutation: perm.to_vec(),
    })
}

/// Overwrites the bank's class positions, image by image in batch order and
/// raster order within each image, with bank pixels in bank order.
pub fn apply_bank(batch: &Batch, bank: &PixelBank) -> Result<Batch> {
    let targets: usize = batch.masks().iter().map(|m| m.count(bank.class_id)).sum();
    if targets != bank.len() {
        return Err(Error::Consistency(format!(
            "bank holds {} class-{} pixels but the batch has {targets} targets",
            bank.len(),
            bank.class_id
        )));
    }
    let mut out = batch.clone();
    let channels = bank.channels;
    let mut cursor = 0;
    let masks = batch.masks();
    for (img, mask) in out.images_mut().iter_mut().zip(masks) {
        let plane_len = img.height() * img.width();
        let data = img.data_mut();
        for p in mask.raster_offsets(bank.class_id) {
            let src = &bank.pixels[cursor * channels..(cursor + 1) * channels];
            for (c, &v) in src.iter().enumerate() {
                data[c * plane_len + p] = v;
            }
            cursor += 1;
        }
    }
    Ok(out)
}

/// Produces one generated sample per input sample: upper clothes swapped
/// first (if enabled), then pants.
pub fn generate(batch: &Batch, config: &SamplingConfig, rng: &mut RngStream) -> Result<Batch> {
    config.validate()?;
    let mut current = batch.clone();
    let mut shared: Option<Vec<usize>> = None;
    let passes = [
        (config.swap_upper, part::UPPER_CLOTHES),
        (config.swap_pants, part::PANTS),
    ];
    for (enabled, class_id) in passes {
        if !enabled {
            continue;
        }
        let perm = match (&shared, config.independent_permutations) {
            (Some(p), false) => p.clone(),
            _ => shuffle_batch(&current, rng),
        };
        let bank = build_bank(&current, &perm, class_id, config.bank_order, rng)?;
        current = apply_bank(&current, &bank)?;
        shared = Some(perm);
    }
    Ok(current)
}
