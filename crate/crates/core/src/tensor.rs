//! Planar image tensors, part-label masks and mini-batches.

use crate::error::{Error, Result};

/// Number of recombined body-part classes.
pub const NUM_PARTS: u8 = 6;

/// Recombined part legend.
pub mod part {
    pub const BACKGROUND: u8 = 0;
    pub const HEAD: u8 = 1;
    pub const UPPER_CLOTHES: u8 = 2;
    pub const PANTS: u8 = 3;
    pub const ARMS: u8 = 4;
    pub const LEGS: u8 = 5;

    pub const NAMES: [&str; 6] = ["background", "head", "upper-clothes", "pants", "arms", "legs"];
}

/// A `C x H x W` image stored channel-major: `data[c * H * W + r * W + col]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Vec<f64>,
    channels: usize,
    height: usize,
    width: usize,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "image data has {} values, expected {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            data,
            channels,
            height,
            width,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Self {
            data: vec![value; channels * height * width],
            channels,
            height,
            width,
        }
    }

    /// Builds a normalized image from interleaved 8-bit RGB bytes.
    pub fn from_rgb8(height: usize, width: usize, interleaved: &[u8]) -> Result<Self> {
        if interleaved.len() != 3 * height * width {
            return Err(Error::Shape(format!(
                "rgb buffer has {} bytes, expected {}",
                interleaved.len(),
                3 * height * width
            )));
        }
        let plane = height * width;
        let mut data = vec![0.0; 3 * plane];
        for (p, px) in interleaved.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * plane + p] = f64::from(px[c]) / 255.0;
            }
        }
        Self::new(3, height, width, data)
    }

    /// Interleaved 8-bit RGB, values clamped to [0, 1] and rounded.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let plane = self.height * self.width;
        let mut out = Vec::with_capacity(3 * plane);
        for p in 0..plane {
            for c in 0..3 {
                let v = if c < self.channels { self.data[c * plane + p] } else { 0.0 };
                out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        out
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn plane(&self, channel: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[channel * n..(channel + 1) * n]
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[(channel * self.height + row) * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f64) {
        self.data[(channel * self.height + row) * self.width + col] = value;
    }

    /// The `C` channel values at `(row, col)`, in channel order.
    pub fn pixel_at(&self, row: usize, col: usize) -> Result<Vec<f64>> {
        self.check_bounds(row, col)?;
        Ok((0..self.channels).map(|c| self.get(c, row, col)).collect())
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, values: &[f64]) -> Result<()> {
        self.check_bounds(row, col)?;
        if values.len() != self.channels {
            return Err(Error::Shape(format!(
                "pixel has {} channels, image has {}",
                values.len(),
                self.channels
            )));
        }
        for (c, &v) in values.iter().enumerate() {
            self.set(c, row, col, v);
        }
        Ok(())
    }

    fn check_bounds(&self, row: usize, col: usize) -> Result<()> {
        if row >= self.height || col >= self.width {
            return Err(Error::Bounds {
                row,
                col,
                height: self.height,
                width: self.width,
            });
        }
        Ok(())
    }
}

/// An `H x W` map of recombined part labels in `0..NUM_PARTS`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticMask {
    labels: Vec<u8>,
    height: usize,
    width: usize,
}

impl SemanticMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "mask has {} labels, expected {height}x{width}",
                labels.len()
            )));
        }
        if let Some(pos) = labels.iter().position(|&l| l >= NUM_PARTS) {
            return Err(Error::Data(format!(
                "mask label {} at ({}, {}) outside 0..{NUM_PARTS}",
                labels[pos],
                pos / width,
                pos % width
            )));
        }
        Ok(Self {
            labels,
            height,
            width,
        })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Result<Self> {
        Self::new(height, width, vec![label; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    /// Positions labelled `class_id`, in row-major order.
    pub fn raster_positions(&self, class_id: u8) -> Result<Vec<(usize, usize)>> {
        check_class(class_id)?;
        Ok(self
            .raster_offsets(class_id)
            .map(|p| (p / self.width, p % self.width))
            .collect())
    }

    /// Flat offsets `row * W + col` of pixels labelled `class_id`, ascending.
    pub(crate) fn raster_offsets(&self, class_id: u8) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, &l)| l == class_id)
            .map(|(p, _)| p)
    }

    pub fn count(&self, class_id: u8) -> usize {
        self.labels.iter().filter(|&&l| l == class_id).count()
    }

    /// Per-class pixel counts.
    pub fn histogram(&self) -> [usize; NUM_PARTS as usize] {
        let mut h = [0; NUM_PARTS as usize];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }
}

pub fn raster_positions(mask: &SemanticMask, class_id: u8) -> Result<Vec<(usize, usize)>> {
    mask.raster_positions(class_id)
}

pub(crate) fn check_class(class_id: u8) -> Result<()> {
    if class_id >= NUM_PARTS {
        return Err(Error::Argument(format!(
            "class id {class_id} outside 0..{NUM_PARTS}"
        )));
    }
    Ok(())
}

/// `B` aligned (image, mask, identity) triples sharing one image geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    images: Vec<Image>,
    masks: Vec<SemanticMask>,
    identities: Vec<usize>,
}

impl Batch {
    pub fn new(images: Vec<Image>, masks: Vec<SemanticMask>, identities: Vec<usize>) -> Result<Self> {
        if images.len() != masks.len() || images.len() != identities.len() {
            return Err(Error::Shape(format!(
                "batch lists differ in length: {} images, {} masks, {} identities",
                images.len(),
                masks.len(),
                identities.len()
            )));
        }
        if let Some(first) = images.first() {
            let dims = first.dims();
            for (i, (img, mask)) in images.iter().zip(&masks).enumerate() {
                if img.dims() != dims {
                    return Err(Error::Shape(format!(
                        "image {i} is {:?}, batch geometry is {dims:?}",
                        img.dims()
                    )));
                }
                if (mask.height(), mask.width()) != (img.height(), img.width()) {
                    return Err(Error::Shape(format!(
                        "mask {i} is {}x{}, image is {}x{}",
                        mask.height(),
                        mask.width(),
                        img.height(),
                        img.width()
                    )));
                }
            }
        }
        Ok(Self {
            images,
            masks,
            identities,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn masks(&self) -> &[SemanticMask] {
        &self.masks
    }

    pub fn identities(&self) -> &[usize] {
        &self.identities
    }

    /// Total pixel count `B * H * W`.
    pub fn pixel_count(&self) -> usize {
        self.images
            .first()
            .map_or(0, |img| self.len() * img.height() * img.width())
    }

    pub(crate) fn images_mut(&mut self) -> &mut [Image] {
        &mut self.images
    }

    pub fn into_parts(self) -> (Vec<Image>, Vec<SemanticMask>, Vec<usize>) {
        (self.images, self.masks, self.identities)
    }
}

/// Dense row-major `rows x cols` matrix, used for embeddings, logits and
/// their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix data has {} values, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged matrix rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Shape(format!(
                "cannot stack {}-column and {}-column matrices",
                self.cols, other.cols
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }
}

/// Euclidean distance between two equal-length vectors.
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
