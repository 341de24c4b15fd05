use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Square grayscale image with pixels in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    size: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(size: usize, pixels: Vec<f64>) -> Result<Self> {
        if size == 0 || pixels.len() != size * size {
            return Err(Error::ShapeMismatch {
                op: "image",
                lhs: vec![size, size],
                rhs: vec![pixels.len()],
            });
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Invalid(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Image { size, pixels })
    }

    /// Builds an image, clamping every pixel into `[0, 1]`.
    pub fn clamped(size: usize, mut pixels: Vec<f64>) -> Result<Self> {
        for p in &mut pixels {
            *p = if p.is_nan() { 0.0 } else { p.clamp(0.0, 1.0) };
        }
        Image::new(size, pixels)
    }

    pub fn constant(size: usize, value: f64) -> Result<Self> {
        Image::new(size, vec![value; size * size])
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.size + x]
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }
}

/// Stacks images as rows of a `[batch, size²]` tensor.
pub fn images_to_tensor(images: &[&Image]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Invalid("empty image batch".into()))?;
    let n = first.size * first.size;
    let mut data = Vec::with_capacity(images.len() * n);
    for im in images {
        if im.size != first.size {
            return Err(Error::ShapeMismatch {
                op: "image batch",
                lhs: vec![first.size, first.size],
                rhs: vec![im.size, im.size],
            });
        }
        data.extend_from_slice(&im.pixels);
    }
    Tensor::matrix(images.len(), n, data)
}

/// Splits a `[batch, size²]` tensor back into images.
pub fn tensor_to_images(t: &Tensor, size: usize) -> Result<Vec<Image>> {
    if t.cols() != size * size {
        return Err(Error::ShapeMismatch {
            op: "tensor_to_images",
            lhs: t.shape().to_vec(),
            rhs: vec![size * size],
        });
    }
    (0..t.rows())
        .map(|i| Image::clamped(size, t.row(i).to_vec()))
        .collect()
}
