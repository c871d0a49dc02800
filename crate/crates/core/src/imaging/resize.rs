use super::image::Image;
use crate::environment::Window;
use crate::error::{Error, Result};

/// Crops the normalized window `w` out of `img` and resamples it bilinearly to
/// `out_w × out_h`.
///
/// Weights: the window spans source pixels `[x1·W, x2·W)`; its left/right
/// edges are aligned with the outer edges of the output row, so output pixel
/// `i` samples the source at `sx = x1·W + (i + ½)·(x2 − x1)·W / out_w − ½`
/// (pixel centers at integer coordinates). `sx` is clamped to `[0, W − 1]` and
/// interpolated between `floor(sx)` and `floor(sx) + 1` with weight
/// `frac(sx)`. Rows are handled identically. Results round half up.
pub fn crop_resize(img: &Image, w: &Window, out_w: usize, out_h: usize) -> Result<Image> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidImage(format!("output size {out_w}×{out_h}")));
    }
    let (src_w, src_h) = (img.width() as f64, img.height() as f64);
    let (px1, px2) = (w.x1() * src_w, w.x2() * src_w);
    let (py1, py2) = (w.y1() * src_h, w.y2() * src_h);
    if px2.round() - px1.round() < 1.0 || py2.round() - py1.round() < 1.0 {
        return Err(Error::DegenerateWindow(format!(
            "{:?} covers no whole pixel of a {}×{} image",
            w.coords(),
            img.width(),
            img.height()
        )));
    }

    let xs = taps(px1, px2, out_w, img.width());
    let ys = taps(py1, py2, out_h, img.height());
    let src = img.data();
    let stride = img.width() * 3;
    let row_len = out_w * 3;
    // Horizontal pass over every source row the vertical taps touch; the
    // taps are monotone so the rows form one contiguous band.
    let first = ys[0].0;
    let last = ys[ys.len() - 1].1;
    let mut band = vec![0f32; (last - first + 1) * row_len];
    for (y, dst) in (first..=last).zip(band.chunks_exact_mut(row_len)) {
        let row = &src[y * stride..(y + 1) * stride];
        for (&(x0, x1, fx), d) in xs.iter().zip(dst.chunks_exact_mut(3)) {
            let (l, r) = (&row[x0 * 3..x0 * 3 + 3], &row[x1 * 3..x1 * 3 + 3]);
            for c in 0..3 {
                d[c] = l[c] as f32 * (1.0 - fx) + r[c] as f32 * fx;
            }
        }
    }
    let mut data = vec![0u8; out_w * out_h * 3];
    for (&(y0, y1, fy), out_row) in ys.iter().zip(data.chunks_exact_mut(row_len)) {
        let top = &band[(y0 - first) * row_len..(y0 - first + 1) * row_len];
        let bot = &band[(y1 - first) * row_len..(y1 - first + 1) * row_len];
        for ((o, &t), &b) in out_row.iter_mut().zip(top).zip(bot) {
            // a convex combination of bytes: truncation is floor and the
            // saturating cast is the clamp
            *o = (t * (1.0 - fy) + b * fy + 0.5) as u8;
        }
    }
    Image::new(out_w, out_h, data)
}

/// Source taps `(lo, hi, weight_of_hi)` for each output coordinate.
fn taps(start: f64, end: f64, out: usize, size: usize) -> Vec<(usize, usize, f32)> {
    let scale = (end - start) / out as f64;
    let max = (size - 1) as f64;
    (0..out)
        .map(|i| {
            let s = (start + (i as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let lo = s.floor();
            let hi = (lo + 1.0).min(max);
            (lo as usize, hi as usize, (s - lo) as f32)
        })
        .collect()
}
