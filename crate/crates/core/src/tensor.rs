//! Dense CHW float tensors fed to inference backends, and the bilinear
//! resampler that produces them.

use crate::frame::RgbImage;

/// A single image as a `channels × height × width` float tensor. The batch
/// dimension of the model input is implicitly 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 3],
    data: Vec<f32>,
}

impl Tensor {
    pub fn filled(shape: [usize; 3], value: f32) -> Self {
        Self {
            shape,
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 3], data: Vec<f32>) -> Option<Self> {
        (data.len() == shape.iter().product::<usize>()).then_some(Self { shape, data })
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(c, y, x)]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.shape[1] * self.shape[2];
        &self.data[c * n..(c + 1) * n]
    }

    fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.shape[1] + y) * self.shape[2] + x
    }
}

/// Source taps for one output coordinate: two indices and the weight of the
/// second.
#[derive(Clone, Copy)]
struct Taps {
    lo: usize,
    hi: usize,
    frac: f32,
}

fn taps(src_len: u32, dst_len: usize) -> Vec<Taps> {
    let scale = src_len as f64 / dst_len as f64;
    let max = src_len as usize - 1;
    (0..dst_len)
        .map(|d| {
            // half-pixel centers, edge-clamped
            let s = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (s.floor() as usize).min(max);
            let frac = (s - lo as f64).min(1.0) as f32;
            // an exact hit needs no second tap; sharing `lo` keeps reads in cache
            let hi = if frac == 0.0 { lo } else { (lo + 1).min(max) };
            Taps { lo, hi, frac }
        })
        .collect()
}

/// Resize into a fresh CHW tensor, mapping each channel value through
/// `normalize(channel, value_0_255)`.
pub fn resize_to_tensor(
    img: &RgbImage,
    out_w: usize,
    out_h: usize,
    normalize: impl Fn(usize, f32) -> f32,
) -> Tensor {
    resize_padded(img, [out_w, out_h], [0, 0], [out_w, out_h], 0.0, normalize)
}

/// Bilinear resample of `img` to `size` (width, height), placed at `offset`
/// on a `canvas` (width, height) whose remaining cells hold `fill`.
/// Interpolated values lie in `0.0..=255.0` before `normalize` is applied;
/// `fill` is stored as is.
///
/// # Panics
/// If the placed image does not fit on the canvas.
pub fn resize_padded(
    img: &RgbImage,
    canvas: [usize; 2],
    offset: [usize; 2],
    size: [usize; 2],
    fill: f32,
    normalize: impl Fn(usize, f32) -> f32,
) -> Tensor {
    let ([cw, ch], [left, top], [out_w, out_h]) = (canvas, offset, size);
    assert!(left + out_w <= cw && top + out_h <= ch, "image outside canvas");
    let xs = taps(img.width(), out_w);
    let ys = taps(img.height(), out_h);
    // integer downscales sample source pixels directly
    let exact_cols = xs.iter().all(|t| t.frac == 0.0);
    let px = img.pixels();
    let stride = img.width() as usize * 3;
    let n = cw * ch;
    let mut data = Vec::with_capacity(3 * n);
    let cells = &mut data.spare_capacity_mut()[..3 * n];
    let (r, rest) = cells.split_at_mut(n);
    let (g, b) = rest.split_at_mut(n);
    for (y, ((r, g), b)) in r.chunks_exact_mut(cw).zip(g.chunks_exact_mut(cw)).zip(b.chunks_exact_mut(cw)).enumerate() {
        let Some(ty) = y.checked_sub(top).and_then(|i| ys.get(i)) else {
            for cell in r.iter_mut().chain(g.iter_mut()).chain(b.iter_mut()) {
                cell.write(fill);
            }
            continue;
        };
        let row0 = &px[ty.lo * stride..][..stride];
        let row1 = &px[ty.hi * stride..][..stride];
        for row in [&mut *r, &mut *g, &mut *b] {
            let (pad, rest) = row.split_at_mut(left);
            for cell in pad.iter_mut().chain(&mut rest[out_w..]) {
                cell.write(fill);
            }
        }
        let (r, g, b) = (&mut r[left..left + out_w], &mut g[left..left + out_w], &mut b[left..left + out_w]);
        let spans = xs.iter().zip(r).zip(g).zip(b);
        if exact_cols && ty.frac == 0.0 {
            for (((tx, r), g), b) in spans {
                let p = &row0[tx.lo * 3..][..3];
                r.write(normalize(0, p[0] as f32));
                g.write(normalize(1, p[1] as f32));
                b.write(normalize(2, p[2] as f32));
            }
            continue;
        }
        for (((tx, r), g), b) in spans {
            let (l, h) = (tx.lo * 3, tx.hi * 3);
            let (a0, b0, a1, b1) = (&row0[l..l + 3], &row0[h..h + 3], &row1[l..l + 3], &row1[h..h + 3]);
            let lerp = |c: usize| {
                let upper = a0[c] as f32 + (b0[c] as f32 - a0[c] as f32) * tx.frac;
                let lower = a1[c] as f32 + (b1[c] as f32 - a1[c] as f32) * tx.frac;
                upper + (lower - upper) * ty.frac
            };
            r.write(normalize(0, lerp(0)));
            g.write(normalize(1, lerp(1)));
            b.write(normalize(2, lerp(2)));
        }
    }
    // SAFETY: every one of the 3·n cells was written in the loops above.
    unsafe { data.set_len(3 * n) };
    Tensor {
        shape: [3, ch, cw],
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_resize_is_exact() {
        let img = RgbImage::from_fn(5, 4, |x, y| [x as u8 * 10, y as u8 * 20, 7]).unwrap();
        let t = resize_to_tensor(&img, 5, 4, |_, v| v);
        for y in 0..4 {
            for x in 0..5 {
                let p = img.pixel(x as u32, y as u32);
                for (c, v) in p.into_iter().enumerate() {
                    assert_eq!(t.get(c, y, x), v as f32);
                }
            }
        }
    }

    #[test]
    fn halving_averages_blocks() {
        let img = RgbImage::from_fn(4, 4, |x, y| [(x + 4 * y) as u8 * 10, 0, 0]).unwrap();
        let t = resize_to_tensor(&img, 2, 2, |_, v| v);
        // top-left block: 0, 10, 40, 50
        assert_eq!(t.get(0, 0, 0), 25.0);
        // bottom-right block: 100, 110, 140, 150
        assert_eq!(t.get(0, 1, 1), 125.0);
    }

    #[test]
    fn upscale_stays_in_range() {
        let img = RgbImage::from_fn(2, 2, |x, _| if x == 0 { [0; 3] } else { [255; 3] }).unwrap();
        let t = resize_to_tensor(&img, 7, 3, |_, v| v);
        assert!(t.data().iter().all(|&v| (0.0..=255.0).contains(&v)));
        assert_eq!(t.get(0, 0, 0), 0.0);
        assert_eq!(t.get(0, 0, 6), 255.0);
    }
}
