//! Dense RGB images, row-major and channel-last. Rendered and photographed
//! images lie in `[0, 1]`; noised diffusion states are unbounded.

use crate::geometry::ImageSize;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    size: ImageSize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(size: ImageSize, data: Vec<f64>) -> Option<Self> {
        (data.len() == size.pixels() * 3).then_some(Self { size, data })
    }

    pub fn filled(size: ImageSize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(size.pixels() * 3);
        for _ in 0..size.pixels() {
            data.extend_from_slice(&rgb);
        }
        Self { size, data }
    }

    pub fn zeros(size: ImageSize) -> Self {
        Self::filled(size, [0.0; 3])
    }

    pub fn size(&self) -> ImageSize {
        self.size
    }

    pub fn height(&self) -> usize {
        self.size.height
    }

    pub fn width(&self) -> usize {
        self.size.width
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

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.size.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = (row * self.size.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert_eq!(self.size, other.size);
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}
