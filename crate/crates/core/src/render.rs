//! Deformed-grid pictures and summary statistics of transformations.

use serde::{Deserialize, Serialize};

use crate::error::{MorphoError, Result};
use crate::field::{curl2d, curl3d, jacobian_det, GridSpec, Image, Transformation};

/// Output pixels per grid cell in [`render_grid`].
pub const PIXELS_PER_CELL: usize = 4;

/// Draws the images of every `stride`-th grid line under `t` (plus the
/// boundary lines) as black anti-aliased lines on white.
///
/// The picture has `PIXELS_PER_CELL` pixels per grid cell; row 0 of the
/// output is `y = 0`.
pub fn render_grid(t: &Transformation, stride: usize) -> Result<Image> {
    let grid = *t.grid();
    grid.ensure_dim("render_grid", 2)?;
    if stride == 0 {
        return Err(MorphoError::InvalidArgument("stride must be at least 1".into()));
    }
    let (nx, ny) = (grid.nx(), grid.ny());
    let px = PIXELS_PER_CELL as f64 / grid.spacing();
    let out = GridSpec::new_2d(
        (nx - 1) * PIXELS_PER_CELL + 1,
        (ny - 1) * PIXELS_PER_CELL + 1,
        grid.spacing() / PIXELS_PER_CELL as f64,
    )?;
    let (w, h) = (out.nx(), out.ny());
    let mut ink = vec![0.0f64; out.len()];
    let point = |i: usize, j: usize| {
        let p = t.map_node(grid.index(i, j, 0));
        (p[0] * px, p[1] * px)
    };
    let picks = |n: usize| -> Vec<usize> {
        let mut v: Vec<usize> = (0..n).step_by(stride).collect();
        if v.last() != Some(&(n - 1)) {
            v.push(n - 1);
        }
        v
    };
    let mut segments = Vec::new();
    for j in picks(ny) {
        for i in 0..nx - 1 {
            segments.push((point(i, j), point(i + 1, j)));
        }
    }
    for i in picks(nx) {
        for j in 0..ny - 1 {
            segments.push((point(i, j), point(i, j + 1)));
        }
    }
    for (a, b) in segments {
        stroke(&mut ink, w, h, a, b);
    }
    Ok(Image::from_clipped(out, ink.iter().map(|c| 1.0 - c).collect()))
}

/// Coverage of a one-pixel-wide segment, merged into `ink` by maximum.
fn stroke(ink: &mut [f64], w: usize, h: usize, a: (f64, f64), b: (f64, f64)) {
    const HALF_WIDTH: f64 = 0.5;
    let lo_x = (a.0.min(b.0) - 1.0).floor().max(0.0) as usize;
    let hi_x = ((a.0.max(b.0) + 1.0).ceil().max(0.0) as usize).min(w - 1);
    let lo_y = (a.1.min(b.1) - 1.0).floor().max(0.0) as usize;
    let hi_y = ((a.1.max(b.1) + 1.0).ceil().max(0.0) as usize).min(h - 1);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    for y in lo_y..=hi_y {
        for x in lo_x..=hi_x {
            let (qx, qy) = (x as f64 - a.0, y as f64 - a.1);
            let s = if len2 > 0.0 { ((qx * dx + qy * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let dist = (qx - s * dx).hypot(qy - s * dy);
            let cover = (HALF_WIDTH + 0.5 - dist).clamp(0.0, 1.0);
            let cell = &mut ink[y * w + x];
            if cover > *cell {
                *cell = cover;
            }
        }
    }
}

/// Extremes and means of the Jacobian determinant and curl of a map. In 3D
/// the curl entries describe the pointwise Euclidean norm of the curl vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub dim: usize,
    pub min_j: f64,
    pub max_j: f64,
    pub mean_j: f64,
    pub min_curl: f64,
    pub max_curl: f64,
    pub mean_curl: f64,
    /// Largest node displacement `|T(x) − x|`.
    pub max_displacement: f64,
}

/// Statistics over every grid node of `t`.
pub fn stats_report(t: &Transformation) -> Result<StatsReport> {
    let j = jacobian_det(t);
    let curl: Vec<f64> = if t.dim() == 2 {
        curl2d(t)?.into_values()
    } else {
        let c = curl3d(t)?;
        (0..t.grid().len())
            .map(|i| {
                let s: f64 = c.components().iter().map(|v| v[i] * v[i]).sum();
                s.sqrt()
            })
            .collect()
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(StatsReport {
        dim: t.dim(),
        min_j: j.min(),
        max_j: j.max(),
        mean_j: mean(j.values()),
        min_curl: curl.iter().copied().fold(f64::INFINITY, f64::min),
        max_curl: curl.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean_curl: mean(&curl),
        max_displacement: t.max_displacement(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_renders_a_regular_grid() {
        let g = GridSpec::square(9).unwrap();
        let img = render_grid(&Transformation::identity(g), 4).unwrap();
        let n = img.grid().nx();
        assert_eq!(n, 8 * PIXELS_PER_CELL + 1);
        // column of pixels on grid line i = 4 is black, halfway between lines is white
        let on = 4 * PIXELS_PER_CELL;
        let off = 2 * PIXELS_PER_CELL;
        assert!(img.values()[10 * n + on] < 1e-12);
        assert!((img.values()[off * n + off + 1] - 1.0).abs() < 1e-12);
        assert!(render_grid(&Transformation::identity(g), 0).is_err());
    }

    #[test]
    fn identity_stats() {
        let g = GridSpec::square(7).unwrap();
        let s = stats_report(&Transformation::identity(g)).unwrap();
        assert_eq!((s.min_j, s.max_j, s.mean_j), (1.0, 1.0, 1.0));
        assert_eq!((s.min_curl, s.max_curl, s.max_displacement), (0.0, 0.0, 0.0));
        let back: StatsReport = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
