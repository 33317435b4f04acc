use crate::error::{Error, Result};

/// RGB image, row-major, channels interleaved, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dim(format!("image must be non-empty, got {height}x{width}")));
        }
        if data.len() != height * width * 3 {
            return Err(Error::dim(format!(
                "{height}x{width} RGB image needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Range(format!("pixel value {} at index {i} outside [0,1]", data[i])));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data).expect("valid fill")
    }

    /// Builds an image from a per-pixel function; values are clamped to `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for r in 0..height {
            for c in 0..width {
                data.extend(f(r, c).map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self::new(height, width, data).expect("clamped values")
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f32; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb.map(|v| v.clamp(0.0, 1.0)));
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v * 255.0).round() as u8).collect()
    }

    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Image> {
        if row + height > self.height || col + width > self.width {
            return Err(Error::dim(format!(
                "crop {height}x{width}@({row},{col}) outside {}x{}",
                self.height, self.width
            )));
        }
        Ok(Image::from_fn(height, width, |r, c| self.pixel(row + r, col + c)))
    }

    /// Bilinear resize with half-pixel centres.
    pub fn resize(&self, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 {
            return Err(Error::dim("resize target must be non-empty"));
        }
        if (height, width) == self.dims() {
            return Ok(self.clone());
        }
        let sy = self.height as f32 / height as f32;
        let sx = self.width as f32 / width as f32;
        let sample = |pos: f32, len: usize| {
            let p = (pos.max(0.0)).min((len - 1) as f32);
            let i0 = p.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, p - i0 as f32)
        };
        Ok(Image::from_fn(height, width, |r, c| {
            let (y0, y1, fy) = sample((r as f32 + 0.5) * sy - 0.5, self.height);
            let (x0, x1, fx) = sample((c as f32 + 0.5) * sx - 0.5, self.width);
            let (a, b, cc, d) = (
                self.pixel(y0, x0),
                self.pixel(y0, x1),
                self.pixel(y1, x0),
                self.pixel(y1, x1),
            );
            std::array::from_fn(|k| {
                let top = a[k] + (b[k] - a[k]) * fx;
                let bot = cc[k] + (d[k] - cc[k]) * fx;
                top + (bot - top) * fy
            })
        }))
    }
}

/// `alpha·a + (1−alpha)·b`, clamped to `[0, 1]`.
pub fn blend_styles(a: &Image, b: &Image, alpha: f32) -> Result<Image> {
    if a.dims() != b.dims() {
        return Err(Error::shape(
            "blend_styles",
            &[a.height, a.width],
            &[b.height, b.width],
        ));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Range(format!("blend alpha {alpha} outside [0,1]")));
    }
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (alpha * x + (1.0 - alpha) * y).clamp(0.0, 1.0))
        .collect();
    Image::new(a.height, a.width, data)
}
