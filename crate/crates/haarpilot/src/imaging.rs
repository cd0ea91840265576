//! Image containers, grayscale conversion, integral images, and normalized
//! rectangle arithmetic underpinning all feature evaluation.

use crate::error::{Error, Result};

/// Row-major 8-bit grayscale image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Input(format!("image dimensions {width}x{height} must be nonzero")));
        }
        let expected = width as usize * height as usize;
        if data.len() != expected {
            return Err(Error::BufferMismatch { context: "gray image", width, height, actual: data.len() });
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn filled(width: u32, height: u32, value: u8) -> Self {
        GrayImage {
            width,
            height,
            data: vec![value; width as usize * height as usize],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Pixel accessor; panics on out-of-bounds coordinates.
    pub fn get(&self, x: u32, y: u32) -> u8 {
        assert!(x < self.width && y < self.height, "pixel ({x},{y}) out of bounds");
        self.data[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: u8) {
        assert!(x < self.width && y < self.height, "pixel ({x},{y}) out of bounds");
        self.data[y as usize * self.width as usize + x as usize] = value;
    }

    pub fn contains(&self, r: Rect) -> bool {
        r.x as u64 + r.w as u64 <= self.width as u64 && r.y as u64 + r.h as u64 <= self.height as u64
    }
}

/// Axis-aligned pixel rectangle: offset plus extent, extents at least 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Rect { x, y, w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Intersection-over-union in [0, 1].
    pub fn iou(&self, other: &Rect) -> f64 {
        let x0 = self.x.max(other.x) as u64;
        let y0 = self.y.max(other.y) as u64;
        let x1 = (self.x as u64 + self.w as u64).min(other.x as u64 + other.w as u64);
        let y1 = (self.y as u64 + self.h as u64).min(other.y as u64 + other.h as u64);
        if x1 <= x0 || y1 <= y0 {
            return 0.0;
        }
        let inter = (x1 - x0) * (y1 - y0);
        let union = self.area() + other.area() - inter;
        inter as f64 / union as f64
    }
}

/// Summed-area tables (plain and squared) with a zero top row and left column,
/// so rectangle sums need no boundary branches. Entry (x, y) holds the sum of
/// all pixels strictly above and left of (x, y). Exact for images up to
/// 4096x4096 of 8-bit pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntegralImage {
    width: u32,
    height: u32,
    sum: Vec<u64>,
    sq_sum: Vec<u64>,
}

/// Build both summed-area tables in one pass.
pub fn integral(img: &GrayImage) -> IntegralImage {
    let w = img.width() as usize;
    let h = img.height() as usize;
    let stride = w + 1;
    let mut sum = vec![0u64; stride * (h + 1)];
    let mut sq_sum = vec![0u64; stride * (h + 1)];
    for y in 0..h {
        let mut row = 0u64;
        let mut row_sq = 0u64;
        for x in 0..w {
            let v = img.data()[y * w + x] as u64;
            row += v;
            row_sq += v * v;
            let out = (y + 1) * stride + x + 1;
            sum[out] = sum[out - stride] + row;
            sq_sum[out] = sq_sum[out - stride] + row_sq;
        }
    }
    IntegralImage { width: img.width(), height: img.height(), sum, sq_sum }
}

impl IntegralImage {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Raw table entry, for oracle comparisons. (x, y) range over 0..=width/height.
    pub fn sum_at(&self, x: u32, y: u32) -> u64 {
        self.sum[y as usize * (self.width as usize + 1) + x as usize]
    }

    pub fn sq_sum_at(&self, x: u32, y: u32) -> u64 {
        self.sq_sum[y as usize * (self.width as usize + 1) + x as usize]
    }

    fn check(&self, r: Rect) -> Result<()> {
        if r.w == 0
            || r.h == 0
            || r.x as u64 + r.w as u64 > self.width as u64
            || r.y as u64 + r.h as u64 > self.height as u64
        {
            return Err(Error::RectOutOfBounds { rect: r, width: self.width, height: self.height });
        }
        Ok(())
    }

    #[inline]
    fn corners(table: &[u64], stride: usize, r: Rect) -> u64 {
        let x0 = r.x as usize;
        let y0 = r.y as usize;
        let x1 = x0 + r.w as usize;
        let y1 = y0 + r.h as usize;
        table[y1 * stride + x1] + table[y0 * stride + x0]
            - table[y0 * stride + x1]
            - table[y1 * stride + x0]
    }

    /// Sum of pixels inside `r`, from exactly four table lookups.
    pub fn rect_sum(&self, r: Rect) -> Result<u64> {
        self.check(r)?;
        Ok(self.rect_sum_unchecked(r))
    }

    #[inline]
    pub(crate) fn rect_sum_unchecked(&self, r: Rect) -> u64 {
        debug_assert!(self.check(r).is_ok());
        Self::corners(&self.sum, self.width as usize + 1, r)
    }

    /// Sum of squared pixels inside `r`.
    pub fn rect_sq_sum(&self, r: Rect) -> Result<u64> {
        self.check(r)?;
        Ok(Self::corners(&self.sq_sum, self.width as usize + 1, r))
    }

    /// Mean and standard deviation of the window, with variance floored at 0
    /// and the reported stddev floored at 1 to guard degenerate windows.
    pub fn window_stats(&self, r: Rect) -> Result<(f64, f64)> {
        self.check(r)?;
        let area = r.area() as f64;
        let mean = self.rect_sum_unchecked(r) as f64 / area;
        let sq_mean = Self::corners(&self.sq_sum, self.width as usize + 1, r) as f64 / area;
        let variance = (sq_mean - mean * mean).max(0.0);
        let stddev = variance.sqrt();
        Ok((mean, if stddev < 1.0 { 1.0 } else { stddev }))
    }
}

/// Per-pixel broadcast luma: gray = round(0.299 R + 0.587 G + 0.114 B).
pub fn to_grayscale(rgb: &[u8], width: u32, height: u32) -> Result<GrayImage> {
    let pixels = width as usize * height as usize;
    if rgb.len() != pixels * 3 {
        return Err(Error::BufferMismatch { context: "rgb frame", width, height, actual: rgb.len() });
    }
    let mut data = Vec::with_capacity(pixels);
    for px in rgb.chunks_exact(3) {
        let y = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
        data.push((y + 0.5).floor().clamp(0.0, 255.0) as u8);
    }
    GrayImage::new(width, height, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, w: u32, h: u32) -> GrayImage {
        let data = (0..w as usize * h as usize).map(|_| rng.gen()).collect();
        GrayImage::new(w, h, data).unwrap()
    }

    fn brute_sum(img: &GrayImage, r: Rect) -> u64 {
        let mut total = 0u64;
        for y in r.y..r.y + r.h {
            for x in r.x..r.x + r.w {
                total += img.get(x, y) as u64;
            }
        }
        total
    }

    #[test]
    fn grayscale_extremes_and_red() {
        let black = to_grayscale(&[0, 0, 0], 1, 1).unwrap();
        assert_eq!(black.data(), &[0]);
        let white = to_grayscale(&[255, 255, 255], 1, 1).unwrap();
        assert_eq!(white.data(), &[255]);
        let red = to_grayscale(&[255, 0, 0], 1, 1).unwrap();
        assert_eq!(red.data(), &[76], "0.299 * 255 = 76.245 rounds to 76");
    }

    #[test]
    fn grayscale_rejects_short_buffer() {
        let err = to_grayscale(&[1, 2, 3, 4], 2, 1).unwrap_err();
        assert!(matches!(err, Error::BufferMismatch { actual: 4, .. }));
    }

    #[test]
    fn integral_one_pixel() {
        let img = GrayImage::new(1, 1, vec![7]).unwrap();
        let ii = integral(&img);
        assert_eq!(ii.sum_at(1, 1), 7);
        assert_eq!(ii.sq_sum_at(1, 1), 49);
        assert_eq!(ii.sum_at(0, 0), 0);
        assert_eq!(ii.sum_at(1, 0), 0);
        assert_eq!(ii.sum_at(0, 1), 0);
    }

    #[test]
    fn integral_two_by_two_ones() {
        let img = GrayImage::filled(2, 2, 1);
        let ii = integral(&img);
        assert_eq!(
            [[ii.sum_at(1, 1), ii.sum_at(2, 1)], [ii.sum_at(1, 2), ii.sum_at(2, 2)]],
            [[1, 2], [2, 4]]
        );
    }

    #[test]
    fn integral_matches_brute_force_tables() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let img = random_image(&mut rng, 8, 8);
        let ii = integral(&img);
        for y in 0..=8u32 {
            for x in 0..=8u32 {
                let mut s = 0u64;
                let mut sq = 0u64;
                for py in 0..y {
                    for px in 0..x {
                        let v = img.get(px, py) as u64;
                        s += v;
                        sq += v * v;
                    }
                }
                assert_eq!(ii.sum_at(x, y), s, "plain entry ({x},{y})");
                assert_eq!(ii.sq_sum_at(x, y), sq, "squared entry ({x},{y})");
            }
        }
    }

    #[test]
    fn integral_entries_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let img = random_image(&mut rng, 16, 9);
        let ii = integral(&img);
        for y in 0..=9u32 {
            for x in 1..=16u32 {
                assert!(ii.sum_at(x, y) >= ii.sum_at(x - 1, y));
            }
        }
        for x in 0..=16u32 {
            for y in 1..=9u32 {
                assert!(ii.sum_at(x, y) >= ii.sum_at(x, y - 1));
            }
        }
    }

    #[test]
    fn rect_sum_fixtures() {
        let img = GrayImage::filled(3, 3, 5);
        let ii = integral(&img);
        assert_eq!(ii.rect_sum(Rect::new(0, 0, 2, 2)).unwrap(), 20);
        assert_eq!(ii.rect_sum(Rect::new(0, 0, 3, 3)).unwrap(), 45);
        assert_eq!(ii.rect_sum(Rect::new(0, 0, 3, 3)).unwrap(), ii.sum_at(3, 3));
    }

    #[test]
    fn rect_sum_random_rects_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let img = random_image(&mut rng, 32, 32);
        let ii = integral(&img);
        for _ in 0..100 {
            let w = rng.gen_range(1..=32u32);
            let h = rng.gen_range(1..=32u32);
            let x = rng.gen_range(0..=32 - w);
            let y = rng.gen_range(0..=32 - h);
            let r = Rect::new(x, y, w, h);
            assert_eq!(ii.rect_sum(r).unwrap(), brute_sum(&img, r));
        }
    }

    #[test]
    fn rect_sum_out_of_bounds() {
        let ii = integral(&GrayImage::filled(4, 4, 1));
        let err = ii.rect_sum(Rect::new(2, 2, 3, 1)).unwrap_err();
        assert!(matches!(err, Error::RectOutOfBounds { .. }));
        assert!(ii.rect_sum(Rect::new(0, 0, 1, 0)).is_err());
    }

    #[test]
    fn window_stats_fixtures() {
        let flat = integral(&GrayImage::filled(5, 5, 42));
        let (mean, stddev) = flat.window_stats(Rect::new(0, 0, 5, 5)).unwrap();
        assert_eq!(mean, 42.0);
        assert_eq!(stddev, 1.0, "flat window reports the floor");

        let img = GrayImage::new(2, 2, vec![0, 2, 0, 2]).unwrap();
        let (mean, stddev) = integral(&img).window_stats(Rect::new(0, 0, 2, 2)).unwrap();
        assert_eq!(mean, 1.0);
        assert_eq!(stddev, 1.0);
    }

    #[test]
    fn window_stats_matches_two_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let img = random_image(&mut rng, 24, 24);
        let ii = integral(&img);
        for _ in 0..50 {
            let w = rng.gen_range(2..=24u32);
            let h = rng.gen_range(2..=24u32);
            let r = Rect::new(rng.gen_range(0..=24 - w), rng.gen_range(0..=24 - h), w, h);
            let (mean, stddev) = ii.window_stats(r).unwrap();
            let n = r.area() as f64;
            let vals: Vec<f64> = (r.y..r.y + r.h)
                .flat_map(|y| (r.x..r.x + r.w).map(move |x| (x, y)))
                .map(|(x, y)| img.get(x, y) as f64)
                .collect();
            let bf_mean = vals.iter().sum::<f64>() / n;
            let bf_var = vals.iter().map(|v| (v - bf_mean).powi(2)).sum::<f64>() / n;
            let bf_stddev = bf_var.sqrt().max(1.0);
            assert!((mean - bf_mean).abs() <= 1e-9 * bf_mean.abs().max(1.0));
            assert!((stddev - bf_stddev).abs() <= 1e-9 * bf_stddev.max(1.0));
        }
    }

    proptest! {
        #[test]
        fn split_rects_sum_to_whole(
            seed in 0u64..1000,
            w in 2u32..20,
            h in 2u32..20,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = random_image(&mut rng, w, h);
            let ii = integral(&img);
            let whole = Rect::new(0, 0, w, h);
            let cut = rng.gen_range(1..w);
            let left = Rect::new(0, 0, cut, h);
            let right = Rect::new(cut, 0, w - cut, h);
            prop_assert_eq!(
                ii.rect_sum(whole).unwrap(),
                ii.rect_sum(left).unwrap() + ii.rect_sum(right).unwrap()
            );
        }

        #[test]
        fn window_stats_finite_and_nonnegative(pixels in proptest::collection::vec(any::<u8>(), 16)) {
            let img = GrayImage::new(4, 4, pixels).unwrap();
            let (mean, stddev) = integral(&img).window_stats(Rect::new(0, 0, 4, 4)).unwrap();
            prop_assert!(mean.is_finite() && stddev.is_finite());
            prop_assert!(stddev >= 1.0);
            prop_assert!((0.0..=255.0).contains(&mean));
        }
    }
}
