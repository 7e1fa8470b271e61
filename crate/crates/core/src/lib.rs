//! Numerical core for viewset diffusion on voxel radiance fields.
//!
//! * [`geometry`]: cameras, pixel rays, projection and pose encoding.
//! * [`field`]: pre-activation voxel grids with trilinear sampling.
//! * [`renderer`]: differentiable emission-absorption ray casting.
//! * [`diffusion`]: cosine schedule, viewset noising, Min-SNR weights and DDIM sampling.
//! * [`aggregate`]: feature unprojection and cross-view attention.
//! * [`normalize`]: up-direction estimation and sequence normalization.
//! * [`minens`]: procedural articulated block-character viewsets.
//! * [`fit`]: Adam fitting of grids to viewsets.
//! * [`metrics`]: PSNR and SSIM.
//! * [`io`]: file formats and dataset layout.

pub mod aggregate;
pub mod diffusion;
pub mod field;
pub mod fit;
pub mod geometry;
pub mod imaging;
pub mod io;
pub mod metrics;
pub mod minens;
pub mod normalize;
pub mod renderer;
pub mod rng;
