//! Manifest, human-parsing label recombination and sample loading.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv;
use crate::tensor::{Image, SemanticMask, NUM_PARTS};

pub const MANIFEST_HEADER: [&str; 6] = [
    "image_path",
    "mask_path",
    "identity",
    "camera",
    "clothes_id",
    "split",
];

/// The shipped default grouping, using the first 18 labels of the LIP
/// parsing convention. This grouping is a reconstruction; override it with
/// a table file when the parser in use groups parts differently.
pub const DEFAULT_TABLE_TEXT: &str = include_str!("../../../configs/recombination_lip18.txt");

/// Maps raw parser labels `0..K` onto the six-part legend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRecombinationTable {
    mapping: Vec<u8>,
}

impl LabelRecombinationTable {
    pub fn new(mapping: Vec<u8>) -> Result<Self> {
        if let Some((raw, &to)) = mapping.iter().enumerate().find(|(_, &to)| to >= NUM_PARTS) {
            return Err(Error::Config(format!(
                "raw label {raw} maps to {to}, outside 0..{NUM_PARTS}"
            )));
        }
        Ok(Self { mapping })
    }

    /// `{0..5} -> {0..5}` identity.
    pub fn identity() -> Self {
        Self {
            mapping: (0..NUM_PARTS).collect(),
        }
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        for e in kv::parse(text, path)? {
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: e.line,
                message,
            };
            let raw: usize = e
                .key
                .parse()
                .map_err(|_| parse_err(format!("raw label {:?} is not an integer", e.key)))?;
            let to: u8 = e
                .value
                .parse()
                .map_err(|_| parse_err(format!("recombined label {:?} is not an integer", e.value)))?;
            if to >= NUM_PARTS {
                return Err(parse_err(format!("recombined label {to} outside 0..{NUM_PARTS}")));
            }
            if pairs.insert(raw, to).is_some() {
                return Err(parse_err(format!("raw label {raw} mapped twice")));
            }
        }
        let k = pairs.len();
        if let Some((missing, _)) = (0..k).zip(pairs.keys()).find(|(i, key)| i != *key) {
            return Err(Error::Config(format!(
                "{}: table is not total, raw label {missing} has no mapping",
                path.display()
            )));
        }
        Self::new(pairs.into_values().collect())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Number of raw labels `K`.
    pub fn num_raw(&self) -> usize {
        self.mapping.len()
    }

    pub fn map(&self, raw: u8) -> Option<u8> {
        self.mapping.get(usize::from(raw)).copied()
    }

    /// Recombines a raw `H x W` label map.
    pub fn recombine(&self, height: usize, width: usize, raw: &[u8]) -> Result<SemanticMask> {
        if raw.len() != height * width {
            return Err(Error::Shape(format!(
                "raw mask has {} labels, expected {height}x{width}",
                raw.len()
            )));
        }
        let mut labels = Vec::with_capacity(raw.len());
        for (p, &v) in raw.iter().enumerate() {
            match self.map(v) {
                Some(l) => labels.push(l),
                None => {
                    return Err(Error::Data(format!(
                        "raw label {v} at ({}, {}) outside table range 0..{}",
                        p / width,
                        p % width,
                        self.num_raw()
                    )))
                }
            }
        }
        SemanticMask::new(height, width, labels)
    }
}

impl Default for LabelRecombinationTable {
    fn default() -> Self {
        Self::parse(DEFAULT_TABLE_TEXT, Path::new("<default table>"))
            .expect("shipped recombination table is valid")
    }
}

pub fn recombine_labels(
    height: usize,
    width: usize,
    raw: &[u8],
    table: &LabelRecombinationTable,
) -> Result<SemanticMask> {
    table.recombine(height, width, raw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Gallery,
    QuerySame,
    QueryCross,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Gallery => "gallery",
            Split::QuerySame => "query_same",
            Split::QueryCross => "query_cross",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "gallery" => Ok(Split::Gallery),
            "query_same" => Ok(Split::QuerySame),
            "query_cross" => Ok(Split::QueryCross),
            other => Err(format!(
                "split {other:?} is not one of train, gallery, query_same, query_cross"
            )),
        }
    }
}

/// One manifest row. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub identity: String,
    pub camera: String,
    pub clothes_id: String,
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    root: PathBuf,
    records: Vec<SampleRecord>,
    identity_index: BTreeMap<String, Vec<usize>>,
    table: LabelRecombinationTable,
}

impl Dataset {
    pub fn from_records(
        root: impl Into<PathBuf>,
        records: Vec<SampleRecord>,
        table: LabelRecombinationTable,
    ) -> Self {
        let mut identity_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            identity_index.entry(r.identity.clone()).or_default().push(i);
        }
        Self {
            root: root.into(),
            records,
            identity_index,
            table,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn identity_index(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.identity_index
    }

    pub fn table(&self) -> &LabelRecombinationTable {
        &self.table
    }

    pub fn indices_in(&self, split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].split == split)
            .collect()
    }

    /// Sorted training identities; position in this list is the class index.
    pub fn train_identities(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .records
            .iter()
            .filter(|r| r.split == Split::Train)
            .map(|r| r.identity.clone())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    pub fn image_path(&self, index: usize) -> PathBuf {
        self.root.join(&self.records[index].image_path)
    }

    pub fn mask_path(&self, index: usize) -> PathBuf {
        self.root.join(&self.records[index].mask_path)
    }

    pub fn load_image(&self, index: usize) -> Result<Image> {
        read_rgb_png(&self.image_path(index))
    }

    pub fn load_mask(&self, index: usize) -> Result<SemanticMask> {
        let path = self.mask_path(index);
        let (h, w, raw) = read_label_png(&path)?;
        self.table
            .recombine(h, w, &raw)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    pub fn load_sample(&self, index: usize) -> Result<(Image, SemanticMask)> {
        let img = self.load_image(index)?;
        let mask = self.load_mask(index)?;
        if (img.height(), img.width()) != (mask.height(), mask.width()) {
            return Err(Error::Data(format!(
                "{}: mask is {}x{} but image is {}x{}",
                self.mask_path(index).display(),
                mask.height(),
                mask.width(),
                img.height(),
                img.width()
            )));
        }
        Ok((img, mask))
    }
}

/// Reads a manifest CSV. Image and mask files must exist; pixels are decoded
/// lazily by [`Dataset::load_sample`].
pub fn load_dataset(manifest_path: &Path, table: LabelRecombinationTable) -> Result<Dataset> {
    let file = std::fs::File::open(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let root = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: manifest_path.to_path_buf(),
        line,
        message,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(file);
    let mut rows = reader.records();
    match rows.next() {
        None => return Ok(Dataset::from_records(root, Vec::new(), table)),
        Some(header) => {
            let header = header.map_err(|e| parse_err(1, e.to_string()))?;
            let fields: Vec<&str> = header.iter().collect();
            if fields != MANIFEST_HEADER {
                return Err(parse_err(
                    1,
                    format!("header must be `{}`", MANIFEST_HEADER.join(",")),
                ));
            }
        }
    }

    let mut records = Vec::new();
    for row in rows {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != MANIFEST_HEADER.len() {
            return Err(parse_err(line, format!("expected 6 fields, got {}", row.len())));
        }
        let split: Split = row[5].parse().map_err(|m| parse_err(line, m))?;
        for (name, value) in MANIFEST_HEADER.iter().zip(row.iter()).take(5) {
            if value.is_empty() {
                return Err(parse_err(line, format!("empty {name}")));
            }
        }
        let record = SampleRecord {
            image_path: PathBuf::from(&row[0]),
            mask_path: PathBuf::from(&row[1]),
            identity: row[2].to_string(),
            camera: row[3].to_string(),
            clothes_id: row[4].to_string(),
            split,
        };
        for p in [&record.image_path, &record.mask_path] {
            let full = root.join(p);
            if !full.is_file() {
                return Err(Error::io(
                    full,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file missing"),
                ));
            }
        }
        records.push(record);
    }
    Ok(Dataset::from_records(root, records, table))
}

pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(MANIFEST_HEADER).map_err(|e| csv_io(path, e))?;
    for r in records {
        w.write_record([
            r.image_path.to_string_lossy().as_ref(),
            r.mask_path.to_string_lossy().as_ref(),
            &r.identity,
            &r.camera,
            &r.clothes_id,
            r.split.as_str(),
        ])
        .map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e.to_string()))
}

fn image_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other}", path.display())),
    }
}

pub fn read_rgb_png(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    Image::from_rgb8(h as usize, w as usize, img.as_raw())
}

/// Returns `(height, width, raw labels)` of an 8-bit single-channel PNG.
pub fn read_label_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    let gray = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::Data(format!(
                "{}: mask must be 8-bit single-channel, got {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    let (w, h) = gray.dimensions();
    Ok((h as usize, w as usize, gray.into_raw()))
}

pub fn write_rgb_png(path: &Path, img: &Image) -> Result<()> {
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.to_rgb8())
        .ok_or_else(|| Error::Shape("rgb buffer size".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}

pub fn write_label_png(path: &Path, height: usize, width: usize, labels: &[u8]) -> Result<()> {
    let buf = image::GrayImage::from_raw(width as u32, height as u32, labels.to_vec())
        .ok_or_else(|| Error::Shape("label buffer size".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}
