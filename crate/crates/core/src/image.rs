//! Grayscale images and the patch layout that maps them onto model tokens.

use crate::error::{Error, Result};
use crate::numerics::Tensor3;

/// Row-major grayscale image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} pixels cannot fill a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Pixel at row `y`, column `x`.
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// How `P` tokens of `patch_dim` pixels tile a `height × width` image.
///
/// Patches are square (`patch_dim` must be a perfect square) and laid out
/// row-major over a `grid_rows × grid_cols` grid; pixels inside a patch are
/// row-major too.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchLayout {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub patch_side: usize,
}

impl PatchLayout {
    pub fn for_model(patches: usize, patch_dim: usize) -> Result<Self> {
        let side = integer_sqrt(patch_dim);
        if patches == 0 || side == 0 || side * side != patch_dim {
            return Err(Error::bad_config(
                "model.patch_dim",
                format!("{patch_dim} is not a positive perfect square"),
            ));
        }
        // most square grid with grid_rows <= grid_cols
        let grid_rows = (1..=integer_sqrt(patches))
            .rev()
            .find(|r| patches.is_multiple_of(*r))
            .unwrap_or(1);
        Ok(Self {
            grid_rows,
            grid_cols: patches / grid_rows,
            patch_side: side,
        })
    }

    pub fn patches(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_side * self.patch_side
    }

    pub fn height(&self) -> usize {
        self.grid_rows * self.patch_side
    }

    pub fn width(&self) -> usize {
        self.grid_cols * self.patch_side
    }

    /// Cut an image into a `1 × P × patch_dim` tensor.
    pub fn patchify(&self, image: &Image) -> Result<Tensor3> {
        if image.width() != self.width() || image.height() != self.height() {
            return Err(Error::ShapeMismatch(format!(
                "image {}x{} does not match patch grid {}x{}",
                image.width(),
                image.height(),
                self.width(),
                self.height()
            )));
        }
        let s = self.patch_side;
        Ok(Tensor3::from_fn(1, self.patches(), self.patch_dim(), |_, i, k| {
            let (pr, pc) = (i / self.grid_cols, i % self.grid_cols);
            image.get(pr * s + k / s, pc * s + k % s)
        }))
    }

    /// Reassemble batch element `b` of a `B × P × patch_dim` tensor into an image.
    pub fn unpatchify(&self, t: &Tensor3, b: usize) -> Result<Image> {
        if t.patches() != self.patches() || t.channels() != self.patch_dim() || b >= t.batch() {
            return Err(Error::ShapeMismatch(format!(
                "tensor {:?} (batch {b}) does not match patch layout {self:?}",
                t.dims()
            )));
        }
        let s = self.patch_side;
        Ok(Image::from_fn(self.width(), self.height(), |y, x| {
            let i = (y / s) * self.grid_cols + x / s;
            let k = (y % s) * s + x % s;
            t.get(b, i, k)
        }))
    }

    /// Every batch element as an image.
    pub fn images(&self, t: &Tensor3) -> Result<Vec<Image>> {
        (0..t.batch()).map(|b| self.unpatchify(t, b)).collect()
    }
}

fn integer_sqrt(n: usize) -> usize {
    let mut r = (n as f64).sqrt() as usize;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_is_four_by_four() {
        let l = PatchLayout::for_model(16, 16).unwrap();
        assert_eq!((l.grid_rows, l.grid_cols, l.patch_side), (4, 4, 4));
        assert_eq!((l.width(), l.height()), (16, 16));
    }

    #[test]
    fn non_square_patch_rejected() {
        assert!(PatchLayout::for_model(16, 8).is_err());
        let l = PatchLayout::for_model(8, 4).unwrap();
        assert_eq!((l.grid_rows, l.grid_cols), (2, 4));
    }

    #[test]
    fn patchify_round_trip() {
        let l = PatchLayout::for_model(6, 9).unwrap();
        let img = Image::from_fn(l.width(), l.height(), |y, x| (y * 100 + x) as f64);
        let t = l.patchify(&img).unwrap();
        assert_eq!(t.dims(), (1, 6, 9));
        // second pixel of the first patch is one column to the right
        assert_eq!(t.get(0, 0, 1), 1.0);
        // first pixel of the second patch starts at column patch_side
        assert_eq!(t.get(0, 1, 0), 3.0);
        assert_eq!(l.unpatchify(&t, 0).unwrap(), img);
    }
}
