//! Tiny anti-aliased grayscale rasterizer.
//!
//! Coverage is approximated from the distance between a pixel center and
//! the shape boundary, `clamp(r + 0.5 - d, 0, 1)`. Coordinates are in
//! pixels relative to the canvas center, with y growing downwards. Pixel
//! centers sit at exact half-integers, so negating every x coordinate of a
//! scene yields the exact mirror image.

/// Square single-channel image.
#[derive(Clone, Debug, PartialEq)]
pub struct Canvas {
    size: usize,
    pixels: Vec<u8>,
}

impl Canvas {
    pub fn new(size: usize, background: u8) -> Self {
        Canvas {
            size,
            pixels: vec![background; size * size],
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    fn blend(&mut self, x: usize, y: usize, coverage: f64, value: u8) {
        if coverage <= 0.0 {
            return;
        }
        let c = coverage.min(1.0);
        let p = &mut self.pixels[y * self.size + x];
        let mixed = *p as f64 + c * (value as f64 - *p as f64);
        *p = mixed.round().clamp(0.0, 255.0) as u8;
    }

    /// Paints every pixel whose center lies within `radius + 0.5` of the
    /// shape described by `dist`, restricted to a bounding box.
    fn paint(&mut self, bbox: [f64; 4], radius: f64, value: u8, dist: impl Fn(f64, f64) -> f64) {
        let size = self.size;
        let half = size as f64 / 2.0;
        let lo = |v: f64| (v + half - radius - 1.0).floor().max(0.0) as usize;
        let hi = |v: f64| ((v + half + radius + 1.0).ceil().max(0.0) as usize).min(size);
        for y in lo(bbox[1])..hi(bbox[3]) {
            for x in lo(bbox[0])..hi(bbox[2]) {
                let d = dist(x as f64 + 0.5 - half, y as f64 + 0.5 - half);
                self.blend(x, y, radius + 0.5 - d, value);
            }
        }
    }

    /// Thick segment with round caps.
    pub fn segment(&mut self, a: (f64, f64), b: (f64, f64), half_width: f64, value: u8) {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        let bbox = [a.0.min(b.0), a.1.min(b.1), a.0.max(b.0), a.1.max(b.1)];
        self.paint(bbox, half_width, value, |px, py| {
            let (ex, ey) = (px - a.0, py - a.1);
            let t = if len2 > 0.0 { ((ex * dx + ey * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let (rx, ry) = (ex - t * dx, ey - t * dy);
            (rx * rx + ry * ry).sqrt()
        });
    }

    pub fn disc(&mut self, c: (f64, f64), radius: f64, value: u8) {
        self.paint([c.0, c.1, c.0, c.1], radius, value, |px, py| {
            ((px - c.0).powi(2) + (py - c.1).powi(2)).sqrt()
        });
    }

    /// Circle outline of the given radius and line half-width.
    pub fn ring(&mut self, c: (f64, f64), radius: f64, half_width: f64, value: u8) {
        self.paint([c.0 - radius, c.1 - radius, c.0 + radius, c.1 + radius], half_width, value, |px, py| {
            (((px - c.0).powi(2) + (py - c.1).powi(2)).sqrt() - radius).abs()
        });
    }
}
