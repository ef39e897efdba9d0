use crate::raster::GrayImage;

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Mirror index into `0..n` without repeating the edge sample (…2 1 | 0 1 2…).
#[inline]
fn reflect(mut i: i64, n: i64) -> usize {
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Separable Gaussian smoothing with reflected borders. Both passes run in
/// floating point; the result is rounded once.
pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> GrayImage {
    assert!(sigma > 0.0, "sigma must be positive");
    let (w, h) = (img.width, img.height);
    if w == 0 || h == 0 {
        return img.clone();
    }
    let taps = gaussian_kernel(sigma);
    let r = (taps.len() / 2) as i64;

    let mut horizontal = vec![0.0f64; w * h];
    for y in 0..h {
        let row = &img.data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * row[reflect(x as i64 + k as i64 - r, w as i64)] as f64;
            }
            horizontal[y * w + x] = acc;
        }
    }
    let mut out = GrayImage::new(w, h);
    let mut column = vec![0.0f64; h];
    for x in 0..w {
        for y in 0..h {
            column[y] = horizontal[y * w + x];
        }
        for y in 0..h {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                acc += t * column[reflect(y as i64 + k as i64 - r, h as i64)];
            }
            out.data[y * w + x] = acc.round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}
