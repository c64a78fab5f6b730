//! Deterministic generators for synthetic ground truth: counter-rotating
//! deformation pairs, a six-member family whose Jacobians average to one and
//! whose curls average to zero, textured test images and a twisted volume.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MorphoError, Result};
use crate::field::{
    jacobian_det, resample, GridSpec, Image, Transformation, VectorField,
};

/// Default peak rotation rate of [`make_rotational_pair`]. At this rate the
/// discrete Jacobian of both members stays inside `[0.996, 1.003]` (the
/// maximum is `≈ 1 + max_angle²` at the centre).
pub const DEFAULT_MAX_ANGLE: f64 = 0.054;

/// `3t² − 2t³`, clamped to `[0, 1]`.
pub fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Rounds to a multiple of 2⁻⁴⁰ so that `x ± u` and the stencil differences
/// of both signs round identically on dyadic grids.
fn quantize(u: f64) -> f64 {
    const Q: f64 = (1u64 << 40) as f64;
    (u * Q).round() / Q
}

/// Weight falling smoothly from 1 at the centre to 0 at `radius`.
fn taper(r: f64, radius: f64) -> f64 {
    1.0 - smoothstep(r / radius)
}

/// A local rotation whose angle tapers to zero at `radius`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationalSpec {
    pub center: (f64, f64),
    /// Signed peak angle in radians, reached at the centre.
    pub max_angle: f64,
    /// Support radius; the deformation is the identity beyond it.
    pub radius: f64,
}

impl RotationalSpec {
    /// Centred on the domain, support reaching the nearest edge, default angle.
    pub fn default_for(grid: &GridSpec) -> Self {
        let cx = 0.5 * grid.extent(0);
        let cy = 0.5 * grid.extent(1);
        RotationalSpec {
            center: (cx, cy),
            max_angle: DEFAULT_MAX_ANGLE,
            radius: cx.min(cy),
        }
    }

    pub fn with_angle(mut self, max_angle: f64) -> Self {
        self.max_angle = max_angle;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(MorphoError::SpecOutOfRange(format!(
                "radius must be positive, got {}",
                self.radius
            )));
        }
        if !self.max_angle.is_finite() {
            return Err(MorphoError::SpecOutOfRange("angle must be finite".into()));
        }
        Ok(())
    }
}

/// Two deformations built from opposite local rotations.
///
/// `D₁ = x + u` and `D₂ = x − u` with `u = ω(r)·(−(y−c_y), x−c_x)` and
/// `ω(r) = max_angle·(1 − smoothstep(r/R))`. The field `u` is divergence free,
/// so both members have Jacobian `1 + ω² + rωω'` up to discretization, and
/// `curl(D₁) + curl(D₂)` vanishes node by node.
pub fn make_rotational_pair(
    grid: &GridSpec,
    spec: &RotationalSpec,
) -> Result<(Transformation, Transformation)> {
    grid.ensure_dim("make_rotational_pair", 2)?;
    spec.validate()?;
    let (cx, cy) = spec.center;
    let mut ux = vec![0.0; grid.len()];
    let mut uy = vec![0.0; grid.len()];
    for idx in 0..grid.len() {
        let p = grid.position(idx);
        let (dx, dy) = (p[0] - cx, p[1] - cy);
        let r = dx.hypot(dy);
        let w = spec.max_angle * taper(r, spec.radius);
        ux[idx] = quantize(-w * dy);
        uy[idx] = quantize(w * dx);
    }
    let plus = VectorField::new(*grid, vec![ux.clone(), uy.clone()])?;
    let minus = VectorField::new(
        *grid,
        vec![
            ux.iter().map(|v| -v).collect(),
            uy.iter().map(|v| -v).collect(),
        ],
    )?;
    let d1 = Transformation::from_displacement(&plus)?;
    let d2 = Transformation::from_displacement(&minus)?;
    let d1 = certify(d1, "rotational pair D1")?;
    let d2 = certify(d2, "rotational pair D2")?;
    Ok((d1, d2))
}

/// Flags a generated map as diffeomorphic after checking its Jacobian.
fn certify(t: Transformation, what: &str) -> Result<Transformation> {
    let min_j = jacobian_det(&t).min();
    if min_j <= 0.0 {
        return Err(MorphoError::SpecOutOfRange(format!(
            "{what} folds (min J = {min_j:.4})"
        )));
    }
    Ok(t.with_diffeomorphic(true))
}

/// Relative sizes of the three deformation pairs in [`make_family6`].
const FAMILY_SCALES: [f64; 3] = [1.0, 0.8, 0.6];

/// Size controls for [`make_family6_with`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    /// Peak displacement of the largest pair, as a fraction of the shorter
    /// domain side (never below 3.5 grid cells).
    pub amplitude: f64,
    /// Cap on the directional derivative of each displacement; every member
    /// then has `J ≥ 1 − max_strain`.
    pub max_strain: f64,
}

impl Default for FamilySpec {
    fn default() -> Self {
        FamilySpec {
            amplitude: 0.1,
            max_strain: 0.45,
        }
    }
}

/// Six deformations `x ± u_k` (k = 1..3), ordered `+u₁, −u₁, +u₂, −u₂, +u₃, −u₃`.
///
/// Each `u_k = v_k·φ_k(x)` points along a fixed unit direction `v_k`, so its
/// gradient has rank one and `J(x ± u_k) = 1 ± v_k·∇φ_k` exactly; pairing each
/// member with its negation makes the Jacobians average to one and the curls
/// to zero. `φ_k` is a seeded sum of Gaussian bumps tapered to zero on the
/// boundary.
pub fn make_family6(grid: &GridSpec, seed: u64) -> Result<Vec<Transformation>> {
    make_family6_with(grid, seed, &FamilySpec::default())
}

/// [`make_family6`] with explicit sizes.
pub fn make_family6_with(grid: &GridSpec, seed: u64, spec: &FamilySpec) -> Result<Vec<Transformation>> {
    grid.ensure_dim("make_family6", 2)?;
    if !(spec.amplitude > 0.0) || !(spec.max_strain > 0.0 && spec.max_strain < 0.5) {
        return Err(MorphoError::SpecOutOfRange(format!(
            "family amplitude must be positive and max_strain in (0, 0.5), got {} and {}",
            spec.amplitude, spec.max_strain
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lx = grid.extent(0);
    let ly = grid.extent(1);
    let l = lx.min(ly);
    let h = grid.spacing();
    let target = (3.5 * h).max(spec.amplitude * l);
    let base_angle: f64 = rng.gen_range(0.0..PI);
    let mut out = Vec::with_capacity(6);
    for (k, scale) in FAMILY_SCALES.iter().enumerate() {
        let angle = base_angle + k as f64 * PI / 3.0;
        let dir = (angle.cos(), angle.sin());
        let bumps: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                let x = rng.gen_range(0.3..0.7) * lx;
                let y = rng.gen_range(0.3..0.7) * ly;
                let sigma = rng.gen_range(0.12..0.22) * l;
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                let amp = sign * rng.gen_range(0.5..1.0);
                (x, y, sigma, amp)
            })
            .collect();
        let phi: Vec<f64> = (0..grid.len())
            .map(|idx| {
                let p = grid.position(idx);
                let edge = (PI * p[0] / lx).sin() * (PI * p[1] / ly).sin();
                let sum: f64 = bumps
                    .iter()
                    .map(|&(bx, by, s, a)| {
                        let d2 = (p[0] - bx).powi(2) + (p[1] - by).powi(2);
                        a * (-d2 / (2.0 * s * s)).exp()
                    })
                    .sum();
                edge * sum
            })
            .collect();
        let peak = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let dphi = [
            crate::field::partial(&phi, grid, 0),
            crate::field::partial(&phi, grid, 1),
        ];
        let strain = (0..grid.len())
            .map(|i| (dir.0 * dphi[0][i] + dir.1 * dphi[1][i]).abs())
            .fold(0.0f64, f64::max);
        let mut amp = scale * target / peak;
        if amp * strain > spec.max_strain {
            amp = spec.max_strain / strain;
        }
        let ux: Vec<f64> = phi.iter().map(|v| quantize(amp * dir.0 * v)).collect();
        let uy: Vec<f64> = phi.iter().map(|v| quantize(amp * dir.1 * v)).collect();
        let plus = VectorField::new(*grid, vec![ux.clone(), uy.clone()])?;
        let minus = VectorField::new(
            *grid,
            vec![
                ux.iter().map(|v| -v).collect(),
                uy.iter().map(|v| -v).collect(),
            ],
        )?;
        out.push(certify(
            Transformation::from_displacement(&plus)?,
            "family member",
        )?);
        out.push(certify(
            Transformation::from_displacement(&minus)?,
            "family member",
        )?);
    }
    Ok(out)
}

/// Texture families for [`make_test_image`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageKind {
    /// Concentric cosine rings about the domain centre.
    Rings,
    /// Seeded Gaussian blobs over a gentle background ramp.
    Blobs,
    /// Smoothed checkerboard.
    Checker,
}

impl std::str::FromStr for ImageKind {
    type Err = MorphoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rings" => Ok(ImageKind::Rings),
            "blobs" => Ok(ImageKind::Blobs),
            "checker" => Ok(ImageKind::Checker),
            other => Err(MorphoError::InvalidArgument(format!(
                "unknown image kind `{other}` (expected rings, blobs or checker)"
            ))),
        }
    }
}

/// A smooth, textured image with values in `[0, 1]`.
pub fn make_test_image(grid: &GridSpec, kind: ImageKind, seed: u64) -> Result<Image> {
    grid.ensure_dim("make_test_image", 2)?;
    let lx = grid.extent(0);
    let ly = grid.extent(1);
    let l = lx.min(ly);
    let (cx, cy) = (0.5 * lx, 0.5 * ly);
    let values: Vec<f64> = match kind {
        ImageKind::Rings => {
            let wavelength = l / 6.0;
            (0..grid.len())
                .map(|idx| {
                    let p = grid.position(idx);
                    let r = (p[0] - cx).hypot(p[1] - cy);
                    0.5 + 0.4 * (2.0 * PI * r / wavelength).cos()
                })
                .collect()
        }
        ImageKind::Checker => {
            let wavelength = l / 4.0;
            (0..grid.len())
                .map(|idx| {
                    let p = grid.position(idx);
                    let s = (2.0 * PI * p[0] / wavelength).sin() * (2.0 * PI * p[1] / wavelength).sin();
                    0.5 + 0.45 * (3.0 * s).tanh() / 3f64.tanh()
                })
                .collect()
        }
        ImageKind::Blobs => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let blobs: Vec<(f64, f64, f64, f64)> = (0..18)
                .map(|_| {
                    (
                        rng.gen_range(0.1..0.9) * lx,
                        rng.gen_range(0.1..0.9) * ly,
                        rng.gen_range(0.05..0.11) * l,
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect();
            let tilt: f64 = rng.gen_range(0.0..2.0 * PI);
            let raw: Vec<f64> = (0..grid.len())
                .map(|idx| {
                    let p = grid.position(idx);
                    let ramp = 0.3 * ((p[0] - cx) * tilt.cos() + (p[1] - cy) * tilt.sin()) / l;
                    let ripple = 0.15
                        * (2.0 * PI * p[0] / (0.23 * l)).sin()
                        * (2.0 * PI * p[1] / (0.31 * l)).cos();
                    let sum: f64 = blobs
                        .iter()
                        .map(|&(bx, by, s, a)| {
                            let d2 = (p[0] - bx).powi(2) + (p[1] - by).powi(2);
                            a * (-d2 / (2.0 * s * s)).exp()
                        })
                        .sum();
                    sum + ramp + ripple
                })
                .collect();
            let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            raw.iter()
                .map(|v| 0.05 + 0.9 * (v - lo) / (hi - lo))
                .collect()
        }
    };
    Image::new(*grid, values)
}

/// True twist about `center`: each point rotates by `angle·(1 − smoothstep(r/R))`.
///
/// Radii are preserved, so the inverse is the same twist with `−angle`.
pub fn tapered_rotation(
    grid: &GridSpec,
    center: (f64, f64),
    angle: f64,
    radius: f64,
) -> Result<Transformation> {
    grid.ensure_dim("tapered_rotation", 2)?;
    let (cx, cy) = center;
    let mut tx = vec![0.0; grid.len()];
    let mut ty = vec![0.0; grid.len()];
    for idx in 0..grid.len() {
        let p = grid.position(idx);
        let (dx, dy) = (p[0] - cx, p[1] - cy);
        let theta = angle * taper(dx.hypot(dy), radius);
        let (s, c) = theta.sin_cos();
        tx[idx] = cx + c * dx - s * dy;
        ty[idx] = cy + s * dx + c * dy;
    }
    let t = Transformation::from_components_unchecked(*grid, vec![tx, ty]);
    certify(t, "tapered rotation")
}

/// Output of [`make_twisted_volume`].
#[derive(Clone, Debug)]
pub struct TwistedVolume {
    /// The rotating object, one snapshot per z-slice.
    pub reference: Image,
    /// Every slice of `reference` pushed forward by its twist.
    pub twisted: Image,
    /// Ground-truth twist of each slice; registering `twisted` onto
    /// `reference` should recover these.
    pub slice_maps: Vec<Transformation>,
}

/// Ellipsoidal part of the teapot stand-in, in units of the domain length:
/// centre (x right, y down, z towards the camera), radii and brightness.
struct Part {
    centre: [f64; 3],
    radii: [f64; 3],
    tone: f64,
    /// Number of painted horizontal bands across the part.
    bands: f64,
}

/// Edge width of the parts, in grid steps; sharper edges do not survive
/// resampling at small sizes.
const EDGE: f64 = 1.05;

fn teapot_parts() -> Vec<Part> {
    let part = |centre, radii, tone| Part { centre, radii, tone, bands: 0.0 };
    let mut parts = vec![
        Part { bands: 1.5, ..part([0.0, 0.02, 0.0], [0.24, 0.17, 0.24], 0.55) },
        part([0.27, 0.04, 0.0], [0.1, 0.04, 0.04], 0.85),
        part([0.34, -0.03, 0.0], [0.05, 0.035, 0.035], 0.9),
        part([0.01, -0.17, 0.0], [0.13, 0.03, 0.13], 0.7),
        part([0.02, -0.22, 0.0], [0.04, 0.04, 0.04], 1.0),
        // a dark badge on one side only, so the front and back views differ
        part([0.0, 0.03, 0.2], [0.07, 0.06, 0.05], 0.25),
    ];
    // handle: beads along a half ring on the left
    for b in 0..6 {
        let t = -0.5 * PI + PI * b as f64 / 5.0;
        parts.push(part([-0.26 - 0.09 * t.cos(), 0.09 * t.sin(), 0.0], [0.035, 0.035, 0.035], 0.7));
    }
    parts
}

/// View of the teapot turned by `spin` about its vertical axis, at the point
/// `(x, y)` relative to the image centre. Parts are projected orthographically
/// and painted back to front, brighter when nearer the camera.
fn teapot_view(parts: &[Part], spin: f64, x: f64, y: f64, l: f64, h: f64, background: f64) -> f64 {
    let (s, c) = spin.sin_cos();
    let mut placed: Vec<(f64, f64, f64)> = parts
        .iter()
        .map(|p| {
            let [px, py, pz] = p.centre;
            let sx = px * c + pz * s;
            let depth = -px * s + pz * c;
            let rx = ((p.radii[0] * c).powi(2) + (p.radii[2] * s).powi(2)).sqrt();
            let ry = p.radii[1];
            let (ex, ey) = ((x / l - sx) / rx, (y / l - py) / ry);
            let r = ex.hypot(ey);
            let alpha = 1.0 / (1.0 + ((r - 1.0) * rx.min(ry) * l / (EDGE * h)).exp());
            // lit from the upper left
            let light = 1.0 - 0.3 * (0.6 * ex + 0.8 * ey) / r.max(1.0);
            let paint = 1.0 + 0.3 * (PI * p.bands * ey).sin();
            let tone = (p.tone * light * paint * (0.8 + 0.6 * depth)).clamp(0.0, 1.0);
            (depth, alpha, tone)
        })
        .collect();
    placed.sort_by(|a, b| a.0.total_cmp(&b.0));
    placed
        .iter()
        .fold(background, |v, &(_, alpha, tone)| v * (1.0 - alpha) + alpha * tone)
}

/// An `n³` volume of a turning object and its slice-wise twisted copy.
///
/// Slice `k` shows the object turned by `360°·k/n` about its vertical axis; it is then deformed by a
/// tapered twist of angle `twist_max·sin(πk/(n−1))`, which vanishes on the
/// first and last slices.
pub fn make_twisted_volume(n: usize, twist_max: f64) -> Result<TwistedVolume> {
    if n < 16 {
        return Err(MorphoError::SpecOutOfRange(format!(
            "twisted volume needs n ≥ 16, got {n}"
        )));
    }
    if !twist_max.is_finite() {
        return Err(MorphoError::SpecOutOfRange("twist must be finite".into()));
    }
    let plane = GridSpec::square(n)?;
    let l = plane.extent(0);
    let c = 0.5 * l;
    let radius = c;
    let parts = teapot_parts();
    let mut refs = Vec::with_capacity(n);
    let mut twisted = Vec::with_capacity(n);
    let mut maps = Vec::with_capacity(n);
    for k in 0..n {
        let spin = 2.0 * PI * k as f64 / n as f64;
        let values: Vec<f64> = (0..plane.len())
            .map(|idx| {
                let p = plane.position(idx);
                let background = 0.12
                    + 0.06 * (2.0 * PI * p[0] / (1.1 * l)).sin() * (2.0 * PI * p[1] / (0.9 * l)).cos()
                    + 0.04 * p[1] / l;
                teapot_view(&parts, spin, p[0] - c, p[1] - c, l, plane.spacing(), background)
            })
            .collect();
        let slice = Image::new(plane, values)?;
        let angle = twist_max * (PI * k as f64 / (n - 1) as f64).sin();
        let forward = tapered_rotation(&plane, (c, c), angle, radius)?;
        let inverse = crate::field::invert(&forward)?;
        twisted.push(resample(&slice, &inverse)?);
        refs.push(slice);
        maps.push(forward);
    }
    Ok(TwistedVolume {
        reference: Image::stack(&refs)?,
        twisted: Image::stack(&twisted)?,
        slice_maps: maps,
    })
}

/// Lifts per-slice 2D maps to a 3D map that leaves `z` unchanged.
pub fn stack_slice_maps(maps: &[Transformation]) -> Result<Transformation> {
    let first = maps.first().ok_or(MorphoError::EmptyInput("slice maps"))?;
    let g = *first.grid();
    g.ensure_dim("stack_slice_maps", 2)?;
    let grid = GridSpec::new_3d(g.nx(), g.ny(), maps.len(), g.spacing())?;
    let mut comps = vec![Vec::with_capacity(grid.len()); 3];
    for (k, m) in maps.iter().enumerate() {
        m.grid().ensure_same(&g)?;
        comps[0].extend_from_slice(m.component(0));
        comps[1].extend_from_slice(m.component(1));
        comps[2].extend(std::iter::repeat(k as f64 * g.spacing()).take(g.len()));
    }
    Ok(Transformation::from_components_unchecked(grid, comps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{curl2d, ssd};

    #[test]
    fn zero_angle_pair_is_identity() {
        let g = GridSpec::square(32).unwrap();
        let spec = RotationalSpec::default_for(&g).with_angle(0.0);
        let (d1, d2) = make_rotational_pair(&g, &spec).unwrap();
        let id = Transformation::identity(g);
        assert_eq!(d1.components(), id.components());
        assert_eq!(d2.components(), id.components());
    }

    #[test]
    fn pair_curls_cancel_exactly() {
        let g = GridSpec::square(48).unwrap();
        let (d1, d2) = make_rotational_pair(&g, &RotationalSpec::default_for(&g).with_angle(0.2)).unwrap();
        let c1 = curl2d(&d1).unwrap();
        let c2 = curl2d(&d2).unwrap();
        for (a, b) in c1.values().iter().zip(c2.values()) {
            assert_eq!(a + b, 0.0);
        }
        assert!(c1.max() > 0.1);
    }

    #[test]
    fn folding_spec_is_rejected() {
        let g = GridSpec::square(32).unwrap();
        let spec = RotationalSpec::default_for(&g).with_angle(3.0);
        assert!(matches!(
            make_rotational_pair(&g, &spec),
            Err(MorphoError::SpecOutOfRange(_))
        ));
        let bad = RotationalSpec {
            radius: 0.0,
            ..RotationalSpec::default_for(&g)
        };
        assert!(make_rotational_pair(&g, &bad).is_err());
    }

    #[test]
    fn family_is_nondegenerate() {
        let g = GridSpec::square(64).unwrap();
        let fam = make_family6(&g, 11).unwrap();
        assert_eq!(fam.len(), 6);
        for d in &fam {
            assert!(d.max_displacement() >= 2.0);
            assert!(d.is_identity_on_boundary());
            assert!(jacobian_det(d).min() > 0.5);
        }
        assert_eq!(make_family6(&g, 11).unwrap(), fam);
    }

    #[test]
    fn images_are_deterministic_and_in_range() {
        let g = GridSpec::square(40).unwrap();
        for kind in [ImageKind::Rings, ImageKind::Blobs, ImageKind::Checker] {
            let a = make_test_image(&g, kind, 5).unwrap();
            assert_eq!(a, make_test_image(&g, kind, 5).unwrap());
            assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let a = make_test_image(&g, ImageKind::Blobs, 5).unwrap();
        let b = make_test_image(&g, ImageKind::Blobs, 6).unwrap();
        assert!(ssd(&a, &b).unwrap() > 0.0);
        assert!("bogus".parse::<ImageKind>().is_err());
    }

    #[test]
    fn rotation_inverse_is_negated_angle() {
        let g = GridSpec::square(33).unwrap();
        let c = (16.0, 16.0);
        let f = tapered_rotation(&g, c, 0.4, 16.0).unwrap();
        let b = tapered_rotation(&g, c, -0.4, 16.0).unwrap();
        let round = crate::field::compose(&b, &f).unwrap();
        // interpolation error only
        assert!(round.max_displacement() < 0.05);
    }
}
