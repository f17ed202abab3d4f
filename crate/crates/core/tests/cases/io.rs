//! Bit-exact file formats: PFM round trips and KITTI 16-bit disparity PNGs
//! written by an independent encoder.

use std::path::Path;

use anystereo::io::{read_kitti_disp_png, read_pfm, write_pfm, PfmImage};
use image::{ImageBuffer, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = (&'static str, fn(&Path) -> Result<(), String>);

pub const CHECKS: &[Check] = &[
    ("pfm_round_trip_grey", pfm_grey),
    ("pfm_round_trip_colour", pfm_colour),
    ("pfm_special_values", pfm_special),
    ("kitti_png_fixture", kitti_fixture),
];

fn round_trip(dir: &Path, name: &str, img: &PfmImage) -> Result<(), String> {
    let path = dir.join(name);
    write_pfm(&path, img).map_err(|e| e.to_string())?;
    let back = read_pfm(&path).map_err(|e| e.to_string())?;
    if (back.width, back.height, back.channels) != (img.width, img.height, img.channels) {
        return Err(format!("{name}: header changed"));
    }
    let same = back.data.iter().zip(&img.data).all(|(a, b)| a.to_bits() == b.to_bits());
    if !same || back.data.len() != img.data.len() {
        return Err(format!("{name}: payload is not bit-identical"));
    }
    Ok(())
}

fn random_bits(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| loop {
            // Any finite pattern, including subnormals and negative zero.
            let v = f32::from_bits(rng.gen());
            if v.is_finite() {
                break v;
            }
        })
        .collect()
}

pub fn pfm_grey(dir: &Path) -> Result<(), String> {
    let img = PfmImage::new(37, 11, 1, random_bits(37 * 11, 1)).map_err(|e| e.to_string())?;
    round_trip(dir, "grey.pfm", &img)
}

pub fn pfm_colour(dir: &Path) -> Result<(), String> {
    let img = PfmImage::new(8, 5, 3, random_bits(8 * 5 * 3, 2)).map_err(|e| e.to_string())?;
    round_trip(dir, "colour.pfm", &img)
}

pub fn pfm_special(dir: &Path) -> Result<(), String> {
    let data = vec![f32::INFINITY, f32::NEG_INFINITY, -0.0, f32::MIN_POSITIVE, f32::MAX, 1e-45];
    let img = PfmImage::new(3, 2, 1, data).map_err(|e| e.to_string())?;
    round_trip(dir, "special.pfm", &img)
}

pub fn kitti_fixture(dir: &Path) -> Result<(), String> {
    let (w, h) = (19u32, 7u32);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut raw: Vec<u16> = (0..w * h).map(|_| rng.gen()).collect();
    raw[0] = 0;
    raw[1] = 256;
    raw[2] = u16::MAX;
    raw[3] = 1;
    let path = dir.join("disp.png");
    ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw.clone())
        .ok_or("fixture buffer")?
        .save(&path)
        .map_err(|e| e.to_string())?;
    let k = read_kitti_disp_png(&path).map_err(|e| e.to_string())?;
    if k.disparity.shape() != [1, 1, h as usize, w as usize] {
        return Err(format!("decoded shape {:?}", k.disparity.shape()));
    }
    for (i, &v) in raw.iter().enumerate() {
        let (d, m) = (k.disparity.data()[i], k.mask.data()[i]);
        if d != v as f32 / 256.0 {
            return Err(format!("pixel {i}: stored {v} decoded as {d}"));
        }
        if (m > 0.0) != (v > 0) {
            return Err(format!("pixel {i}: stored {v} has mask {m}"));
        }
    }
    if k.disparity.data()[1] != 1.0 {
        return Err("stored 256 must decode to 1.0".into());
    }
    Ok(())
}
