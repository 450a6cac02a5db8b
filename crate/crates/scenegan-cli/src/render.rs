//! PNG emission: tensors to tiles, tiles to grids.

use std::path::Path;

use anyhow::Result;
use autograd::Tensor;

const GAP: usize = 2;

/// A paste-up of equally sized RGB tiles with a thin separator.
pub struct Grid {
    rows: usize,
    cols: usize,
    side: usize,
    buf: image::RgbImage,
}

impl Grid {
    pub fn new(rows: usize, cols: usize, side: usize) -> Grid {
        let w = (cols * (side + GAP) - GAP) as u32;
        let h = (rows * (side + GAP) - GAP) as u32;
        Grid {
            rows,
            cols,
            side,
            buf: image::RgbImage::from_pixel(w, h, image::Rgb([24, 24, 24])),
        }
    }

    /// Place one `[-1, 1]` RGB tile (or `[0, 1]` single-channel mask) taken
    /// from instance `index` of a batch tensor.
    pub fn place(&mut self, row: usize, col: usize, batch: &Tensor<f32>, index: usize) {
        assert!(row < self.rows && col < self.cols);
        let shape = batch.shape();
        let (c, h, w) = (shape[1], shape[2], shape[3]);
        assert_eq!(h, self.side);
        assert_eq!(w, self.side);
        let plane = h * w;
        let base = index * c * plane;
        let (x0, y0) = (col * (self.side + GAP), row * (self.side + GAP));
        for y in 0..h {
            for x in 0..w {
                let px = if c == 3 {
                    [
                        unit_to_byte(batch.data()[base + y * w + x]),
                        unit_to_byte(batch.data()[base + plane + y * w + x]),
                        unit_to_byte(batch.data()[base + 2 * plane + y * w + x]),
                    ]
                } else {
                    let v = (batch.data()[base + y * w + x].clamp(0.0, 1.0) * 255.0) as u8;
                    [v, v, v]
                };
                self.buf
                    .put_pixel((x0 + x) as u32, (y0 + y) as u32, image::Rgb(px));
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.buf.save(path)?;
        Ok(())
    }
}

fn unit_to_byte(v: f32) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) / 2.0) * 255.0).round() as u8
}

/// Write a single tensor instance as one PNG.
pub fn save_tile(path: &Path, batch: &Tensor<f32>, index: usize) -> Result<()> {
    let side = batch.shape()[2];
    let mut g = Grid::new(1, 1, side);
    g.place(0, 0, batch, index);
    g.save(path)
}
