//! Image and disparity file formats, plus padding to the /16 grid.

mod pad;
mod pfm;
mod png;

pub use pad::{crop, pad_to_16, CropRecord};
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm, PfmImage};
pub use png::{read_kitti_disp_png, read_rgb_png, write_kitti_disp_png, KittiDisparity};
