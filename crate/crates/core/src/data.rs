//! Image and label I/O, input standardization, and the Cityscapes palette.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader, RgbImage};
use thiserror::Error;

use crate::labels::{LabelMap, IGNORE_LABEL};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: expected an 8-bit single-channel label image, found {found}")]
    NotLabelImage { path: PathBuf, found: String },
    #[error("palette line {line}: {reason}")]
    Palette { line: usize, reason: String },
    #[error("colour {rgb:?} is not in the palette")]
    Unmapped { rgb: [u8; 3] },
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Maps an 8-bit value to `[-1, 1]` as `v * 2 / 255 - 1`.
#[inline]
pub fn standardize(v: u8) -> f32 {
    (v as f64 * (2.0 / 255.0) - 1.0) as f32
}

/// Converts an RGB image into a `1 x 3 x h x w` tensor in `[-1, 1]`.
pub fn preprocess(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let shape = Shape([1, 3, h, w]);
    let raw = img.as_raw();
    let mut data = vec![0.0f32; shape.numel()];
    let plane = h * w;
    for (i, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = standardize(px[c]);
        }
    }
    Tensor::from_vec(shape.0, data).expect("length matches shape")
}

/// Uniform-colour RGB image, handy for smoke tests and benchmarks.
pub fn solid_image(width: u32, height: u32, rgb: [u8; 3]) -> RgbImage {
    RgbImage::from_pixel(width, height, image::Rgb(rgb))
}

pub fn load_image(path: &Path) -> Result<RgbImage> {
    let img = ImageReader::open(path)
        .map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .with_guessed_format()
        .map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .decode()
        .map_err(|source| DataError::Image {
            path: path.to_path_buf(),
            source,
        })?;
    Ok(img.into_rgb8())
}

pub fn save_image(path: &Path, img: &RgbImage) -> Result<()> {
    img.save(path).map_err(|source| DataError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a label map as an 8-bit grayscale PNG.
pub fn save_mask(path: &Path, labels: &LabelMap) -> Result<()> {
    let img = GrayImage::from_raw(
        labels.width() as u32,
        labels.height() as u32,
        labels.data().to_vec(),
    )
    .expect("buffer matches dimensions");
    img.save(path).map_err(|source| DataError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads an 8-bit grayscale PNG as a label map. Other colour types are
/// rejected rather than converted, since conversion would alter class ids.
pub fn load_mask(path: &Path) -> Result<LabelMap> {
    let img = ImageReader::open(path)
        .map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .with_guessed_format()
        .map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?
        .decode()
        .map_err(|source| DataError::Image {
            path: path.to_path_buf(),
            source,
        })?;
    let img = match img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(DataError::NotLabelImage {
                path: path.to_path_buf(),
                found: format!("{:?}", other.color()),
            })
        }
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    LabelMap::new(h, w, img.into_raw()).map_err(|e| DataError::NotLabelImage {
        path: path.to_path_buf(),
        found: e.to_string(),
    })
}

pub const CITYSCAPES_CLASSES: [(&str, [u8; 3]); 19] = [
    ("road", [128, 64, 128]),
    ("sidewalk", [244, 35, 232]),
    ("building", [70, 70, 70]),
    ("wall", [102, 102, 156]),
    ("fence", [190, 153, 153]),
    ("pole", [153, 153, 153]),
    ("traffic light", [250, 170, 30]),
    ("traffic sign", [220, 220, 0]),
    ("vegetation", [107, 142, 35]),
    ("terrain", [152, 251, 152]),
    ("sky", [70, 130, 180]),
    ("person", [220, 20, 60]),
    ("rider", [255, 0, 0]),
    ("car", [0, 0, 142]),
    ("truck", [0, 0, 70]),
    ("bus", [0, 60, 100]),
    ("train", [0, 80, 100]),
    ("motorcycle", [0, 0, 230]),
    ("bicycle", [119, 11, 32]),
];

/// Train-id to category index for the seven Cityscapes categories.
pub const CITYSCAPES_CATEGORIES: [(&str, &[u8]); 7] = [
    ("flat", &[0, 1]),
    ("construction", &[2, 3, 4]),
    ("object", &[5, 6, 7]),
    ("nature", &[8, 9]),
    ("sky", &[10]),
    ("human", &[11, 12]),
    ("vehicle", &[13, 14, 15, 16, 17, 18]),
];

/// Class id to colour and name, indexed by class id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Palette {
    colors: Vec<[u8; 3]>,
    names: Vec<String>,
}

impl Default for Palette {
    fn default() -> Self {
        Palette::cityscapes()
    }
}

impl Palette {
    pub fn cityscapes() -> Self {
        Palette {
            colors: CITYSCAPES_CLASSES.iter().map(|(_, c)| *c).collect(),
            names: CITYSCAPES_CLASSES
                .iter()
                .map(|(n, _)| n.to_string())
                .collect(),
        }
    }

    /// Parses `id r g b name` lines. Ids must cover `0..n` exactly once and
    /// colours must be distinct. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows: Vec<(usize, [u8; 3], String)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| DataError::Palette {
                line: i + 1,
                reason,
            };
            let mut parts = line.split_whitespace();
            let mut num = |what: &str| -> Result<usize> {
                let tok = parts.next().ok_or_else(|| err(format!("missing {what}")))?;
                tok.parse::<usize>()
                    .map_err(|_| err(format!("{what} `{tok}` is not an integer")))
            };
            let id = num("id")?;
            let mut rgb = [0u8; 3];
            for (slot, what) in rgb.iter_mut().zip(["red", "green", "blue"]) {
                let v = num(what)?;
                *slot = u8::try_from(v).map_err(|_| err(format!("{what} {v} exceeds 255")))?;
            }
            let name = parts.collect::<Vec<_>>().join(" ");
            if name.is_empty() {
                return Err(err("missing class name".into()));
            }
            if id >= IGNORE_LABEL as usize {
                return Err(err(format!("class id {id} collides with the ignore id")));
            }
            rows.push((id, rgb, name));
        }
        rows.sort_by_key(|r| r.0);
        for (expect, row) in rows.iter().enumerate() {
            if row.0 != expect {
                return Err(DataError::Palette {
                    line: 0,
                    reason: format!(
                        "class ids must be 0..{} without gaps or repeats",
                        rows.len()
                    ),
                });
            }
        }
        for (i, a) in rows.iter().enumerate() {
            if let Some(b) = rows[i + 1..].iter().find(|b| b.1 == a.1) {
                return Err(DataError::Palette {
                    line: 0,
                    reason: format!("classes {} and {} share a colour", a.0, b.0),
                });
            }
        }
        if rows.is_empty() {
            return Err(DataError::Palette {
                line: 0,
                reason: "no classes".into(),
            });
        }
        Ok(Palette {
            colors: rows.iter().map(|r| r.1).collect(),
            names: rows.into_iter().map(|r| r.2).collect(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    pub fn color(&self, class: u8) -> Option<[u8; 3]> {
        self.colors.get(class as usize).copied()
    }

    pub fn name(&self, class: u8) -> Option<&str> {
        self.names.get(class as usize).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Class whose colour is `rgb`; black maps to the ignore id.
    pub fn lookup(&self, rgb: [u8; 3]) -> Option<u8> {
        match self.colors.iter().position(|c| *c == rgb) {
            Some(i) => Some(i as u8),
            None if rgb == [0, 0, 0] => Some(IGNORE_LABEL),
            None => None,
        }
    }

    /// Renders labels in palette colours; ignore and unknown ids are black.
    pub fn colorize(&self, labels: &LabelMap) -> RgbImage {
        let mut img = RgbImage::new(labels.width() as u32, labels.height() as u32);
        for (px, &l) in img.pixels_mut().zip(labels.data()) {
            px.0 = self.color(l).unwrap_or([0, 0, 0]);
        }
        img
    }

    /// Inverse of [`Palette::colorize`] for images it produced.
    pub fn decolorize(&self, img: &RgbImage) -> Result<LabelMap> {
        let mut data = Vec::with_capacity((img.width() * img.height()) as usize);
        for px in img.pixels() {
            data.push(self.lookup(px.0).ok_or(DataError::Unmapped { rgb: px.0 })?);
        }
        Ok(
            LabelMap::new(img.height() as usize, img.width() as usize, data)
                .expect("dimensions match"),
        )
    }
}

/// Blends `overlay` over `base` with weight `alpha` for the overlay.
pub fn blend(base: &RgbImage, overlay: &RgbImage, alpha: f32) -> RgbImage {
    let a = alpha.clamp(0.0, 1.0);
    let mut out = base.clone();
    for (o, p) in out.pixels_mut().zip(overlay.pixels()) {
        for c in 0..3 {
            o.0[c] = (o.0[c] as f32 * (1.0 - a) + p.0[c] as f32 * a).round() as u8;
        }
    }
    out
}
