//! Everything upstream of the network: image I/O, bicubic resampling,
//! Sobel/Laplacian gradients, normalised coordinate grids, training patch
//! sampling and the synthetic dataset generator.

mod dataset;
mod gradient;
mod grid;
mod image;
mod patch;
mod resample;
mod synth;

pub use self::image::{load_image, save_image, ImageGray};
pub use dataset::{list_images, load_dir, write_dataset, Dataset};
pub use gradient::{gradients, GradientStack};
pub use grid::{cell_center, make_coord_grid, CoordGrid};
pub use patch::{crop_size, sample_patch_pair, PatchPair};
pub use resample::{bicubic_kernel, bicubic_sample, bicubic_resample, bicubic_resample_unclipped, BICUBIC_A};
pub use synth::synth_dataset;
