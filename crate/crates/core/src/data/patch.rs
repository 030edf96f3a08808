use super::SceneImage;
use crate::error::{Error, Result};

/// A square window of an image, centered on the pixel whose label it
/// carries. Values are row-major with interleaved channels (`side`×`side`×3).
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub side: usize,
    pub center: (usize, usize),
    pub values: Vec<f64>,
}

impl Patch {
    pub fn at(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.values[(row * self.side + col) * 3 + channel]
    }

    /// Channel-major copy (3×`side`×`side`), the layout the network consumes.
    pub fn to_chw(&self) -> Vec<f64> {
        let s = self.side;
        let mut out = vec![0.0; 3 * s * s];
        for r in 0..s {
            for c in 0..s {
                for ch in 0..3 {
                    out[(ch * s + r) * s + c] = self.values[(r * s + c) * 3 + ch];
                }
            }
        }
        out
    }
}

/// Reflects an arbitrary (possibly negative) coordinate into `0..len`
/// without repeating the edge sample: -1 maps to 1, `len` maps to `len - 2`.
pub fn mirror_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m >= len as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

fn check_window(image: &SceneImage, center: (usize, usize), side: usize) -> Result<()> {
    if side.is_multiple_of(2) {
        return Err(Error::Argument(format!("patch side must be odd, got {side}")));
    }
    if center.0 >= image.height() || center.1 >= image.width() {
        return Err(Error::Argument(format!(
            "patch center {center:?} lies outside the {}x{} image",
            image.height(),
            image.width()
        )));
    }
    Ok(())
}

/// Crops the `side`×`side` window centered at `center`, mirror-reflecting
/// coordinates that fall outside the image.
pub fn extract_patch(image: &SceneImage, center: (usize, usize), side: usize) -> Result<Patch> {
    check_window(image, center, side)?;
    let half = (side / 2) as isize;
    let mut values = Vec::with_capacity(side * side * 3);
    for dr in -half..=half {
        let r = mirror_index(center.0 as isize + dr, image.height());
        for dc in -half..=half {
            let c = mirror_index(center.1 as isize + dc, image.width());
            values.extend_from_slice(image.pixel(r, c));
        }
    }
    Ok(Patch { side, center, values })
}

/// Same window as [`extract_patch`], written channel-major into `out`.
pub(crate) fn extract_patch_chw(
    image: &SceneImage,
    center: (usize, usize),
    side: usize,
    out: &mut [f64],
) -> Result<()> {
    check_window(image, center, side)?;
    debug_assert_eq!(out.len(), 3 * side * side);
    let half = (side / 2) as isize;
    let plane = side * side;
    for (pr, dr) in (-half..=half).enumerate() {
        let r = mirror_index(center.0 as isize + dr, image.height());
        for (pc, dc) in (-half..=half).enumerate() {
            let c = mirror_index(center.1 as isize + dc, image.width());
            let px = image.pixel(r, c);
            let o = pr * side + pc;
            out[o] = px[0];
            out[plane + o] = px[1];
            out[2 * plane + o] = px[2];
        }
    }
    Ok(())
}
