//! Uniform-grid fields, differential operators, interpolation and composition.

pub mod diff;
pub mod grid;
pub mod interp;
pub mod noise;

pub use diff::{
    curl2d, curl2d_of, curl3d, curl3d_of, divergence, divergence_of, jacobian_det,
    jacobian_det_of, laplacian, partial,
};
pub use grid::{GridSpec, Image, ScalarField, Transformation, VectorField};
pub use interp::{compose, invert, resample, sample, sample_with_gradient, ssd};
pub use noise::{add_noise, add_noise_with_passes};
