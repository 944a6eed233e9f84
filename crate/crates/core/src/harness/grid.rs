//! Lossless sample grids.

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};
use ndarray::Array2;

use crate::data::ImageShape;
use crate::error::{Error, Result};

fn to_byte(v: f32) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

/// Tiles `images` (rows in `[-1, 1]`, channel-planar) into a grid with
/// `cols` columns and a one-pixel gap.
pub fn image_grid(images: &Array2<f32>, shape: ImageShape, cols: usize) -> Result<DynamicImage> {
    if images.ncols() != shape.len() {
        return Err(Error::contract(format!("rows have {} values, shape {:?} needs {}", images.ncols(), shape, shape.len())));
    }
    if shape.channels != 1 && shape.channels != 3 {
        return Err(Error::contract(format!("cannot draw {} channels", shape.channels)));
    }
    let n = images.nrows();
    let cols = cols.clamp(1, n.max(1));
    let rows = n.div_ceil(cols).max(1);
    let (h, w) = (shape.height, shape.width);
    let (gw, gh) = ((cols * (w + 1) + 1) as u32, (rows * (h + 1) + 1) as u32);
    let plane = h * w;
    let origin = |k: usize| ((k % cols) * (w + 1) + 1, (k / cols) * (h + 1) + 1);
    if shape.channels == 1 {
        let mut img = GrayImage::new(gw, gh);
        for (k, row) in images.rows().into_iter().enumerate() {
            let (x0, y0) = origin(k);
            for y in 0..h {
                for x in 0..w {
                    img.put_pixel((x0 + x) as u32, (y0 + y) as u32, image::Luma([to_byte(row[y * w + x])]));
                }
            }
        }
        Ok(DynamicImage::ImageLuma8(img))
    } else {
        let mut img = RgbImage::new(gw, gh);
        for (k, row) in images.rows().into_iter().enumerate() {
            let (x0, y0) = origin(k);
            for y in 0..h {
                for x in 0..w {
                    let px = [0, 1, 2].map(|c| to_byte(row[c * plane + y * w + x]));
                    img.put_pixel((x0 + x) as u32, (y0 + y) as u32, image::Rgb(px));
                }
            }
        }
        Ok(DynamicImage::ImageRgb8(img))
    }
}

pub fn save_grid(images: &Array2<f32>, shape: ImageShape, cols: usize, path: &Path) -> Result<()> {
    image_grid(images, shape, cols)?.save_with_format(path, image::ImageFormat::Png).map_err(|e| Error::Io(std::io::Error::other(e)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixels_land_in_their_tiles() {
        let shape = ImageShape::new(2, 3, 1);
        let images = Array2::from_shape_fn((3, 6), |(i, j)| if i == 1 && j == 4 { 1.0 } else { -1.0 });
        let DynamicImage::ImageLuma8(g) = image_grid(&images, shape, 2).unwrap() else { panic!() };
        assert_eq!(g.dimensions(), (9, 7));
        // tile 1 starts at x = 5; value 4 is row 1, col 1
        assert_eq!(g.get_pixel(6, 2).0, [255]);
        assert_eq!(g.get_pixel(2, 2).0, [0]);
    }

    #[test]
    fn rgb_planes_become_channels() {
        let shape = ImageShape::new(1, 1, 3);
        let images = Array2::from_shape_vec((1, 3), vec![1.0, -1.0, 0.0]).unwrap();
        let DynamicImage::ImageRgb8(g) = image_grid(&images, shape, 4).unwrap() else { panic!() };
        assert_eq!(g.get_pixel(1, 1).0, [255, 0, 128]);
    }
}
