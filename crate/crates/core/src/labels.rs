use thiserror::Error;

/// Label value excluded from metrics and losses.
pub const IGNORE_LABEL: u8 = 255;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("label buffer of length {actual} does not match {height}x{width}")]
pub struct LabelShapeError {
    pub height: usize,
    pub width: usize,
    pub actual: usize,
}

/// Single-image plane of 8-bit class ids, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self, LabelShapeError> {
        if data.len() != height * width || height == 0 || width == 0 {
            return Err(LabelShapeError {
                height,
                width,
                actual: data.len(),
            });
        }
        Ok(LabelMap {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        LabelMap {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> u8 {
        debug_assert!(y < self.height && x < self.width);
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        debug_assert!(y < self.height && x < self.width);
        self.data[y * self.width + x] = v;
    }

    /// True if every value is a class id below `num_classes` or the ignore id.
    pub fn is_valid(&self, num_classes: usize) -> bool {
        self.data
            .iter()
            .all(|&v| (v as usize) < num_classes || v == IGNORE_LABEL)
    }
}
