//! Query images: grayscale patches around pixels and tinted two-region
//! overlays for boundaries, as base64 PNG.

use std::io::Cursor;

use activeseg::{RasterVolume, SegmentationMap};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{DynamicImage, GrayImage, ImageFormat, Rgb, RgbImage};

pub const PATCH_RADIUS: usize = 16;
pub const OVERLAY_RADIUS: usize = 24;

fn encode(img: DynamicImage) -> String {
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png).expect("png encoding to memory");
    STANDARD.encode(bytes)
}

/// In-plane window around `(x, y)`, edges replicated. Yields
/// `(patch x, patch y, voxel)`.
fn window(volume: &RasterVolume, x: usize, y: usize, z: usize, radius: usize) -> Vec<(u32, u32, usize)> {
    let d = volume.dims();
    let side = 2 * radius + 1;
    let clamp = |c: usize, off: usize, n: usize| (c as i64 + off as i64 - radius as i64).clamp(0, n as i64 - 1) as usize;
    let mut out = Vec::with_capacity(side * side);
    for py in 0..side {
        for px in 0..side {
            out.push((px as u32, py as u32, d.index(clamp(x, px, d.x), clamp(y, py, d.y), z)));
        }
    }
    out
}

/// Patch centered on `voxel`; the crosshair sits at `(radius, radius)`.
pub fn pixel_patch(volume: &RasterVolume, voxel: usize) -> String {
    let (x, y, z) = volume.dims().coords(voxel);
    let side = (2 * PATCH_RADIUS + 1) as u32;
    let mut img = GrayImage::new(side, side);
    for (px, py, v) in window(volume, x, y, z, PATCH_RADIUS) {
        img.put_pixel(px, py, image::Luma([volume.voxels()[v]]));
    }
    encode(DynamicImage::ImageLuma8(img))
}

/// Overlay centered on the middle voxel of the boundary: region `a` tinted
/// red, region `b` blue, boundary voxels yellow.
pub fn boundary_overlay(
    volume: &RasterVolume,
    seg: &SegmentationMap,
    regions: (u32, u32),
    boundary_voxels: &[usize],
) -> String {
    let center = boundary_voxels.get(boundary_voxels.len() / 2).copied().unwrap_or(0);
    let (x, y, z) = volume.dims().coords(center);
    let side = (2 * OVERLAY_RADIUS + 1) as u32;
    let mut img = RgbImage::new(side, side);
    let tint = |g: u8, c: [u8; 3]| -> Rgb<u8> {
        Rgb([0, 1, 2].map(|i| ((g as u16 + c[i] as u16) / 2) as u8))
    };
    for (px, py, v) in window(volume, x, y, z, OVERLAY_RADIUS) {
        let g = volume.voxels()[v];
        let id = seg.ids()[v];
        let color = if boundary_voxels.binary_search(&v).is_ok() {
            Rgb([255, 230, 0])
        } else if id == regions.0 {
            tint(g, [255, 0, 0])
        } else if id == regions.1 {
            tint(g, [0, 80, 255])
        } else {
            Rgb([g, g, g])
        };
        img.put_pixel(px, py, color);
    }
    encode(DynamicImage::ImageRgb8(img))
}

#[cfg(test)]
mod tests {
    use super::*;
    use activeseg::Dims;

    fn decode(b64: &str) -> DynamicImage {
        image::load_from_memory(&STANDARD.decode(b64).unwrap()).unwrap()
    }

    #[test]
    fn patch_is_centered_and_replicates_edges() {
        let dims = Dims::planar(5, 4).unwrap();
        let vol = RasterVolume::new(dims, (0..20).map(|i| i as u8 * 10).collect()).unwrap();
        let img = decode(&pixel_patch(&vol, dims.index(0, 0, 0))).to_luma8();
        assert_eq!(img.width(), 2 * PATCH_RADIUS as u32 + 1);
        let r = PATCH_RADIUS as u32;
        assert_eq!(img.get_pixel(r, r).0[0], 0);
        assert_eq!(img.get_pixel(r + 1, r).0[0], 10);
        assert_eq!(img.get_pixel(0, 0).0[0], 0);
        assert_eq!(img.get_pixel(r, r + 1).0[0], 50);
    }

    #[test]
    fn overlay_marks_boundary_voxels() {
        let dims = Dims::planar(4, 1).unwrap();
        let vol = RasterVolume::new(dims, vec![100; 4]).unwrap();
        let seg = SegmentationMap::new(dims, vec![0, 0, 1, 1]).unwrap();
        let img = decode(&boundary_overlay(&vol, &seg, (0, 1), &[1, 2])).to_rgb8();
        let r = OVERLAY_RADIUS as u32;
        // centered on voxel 2
        assert_eq!(img.get_pixel(r, r).0, [255, 230, 0]);
        assert_eq!(img.get_pixel(r + 1, r).0, [50, 90, 177]);
        assert_eq!(img.get_pixel(r - 2, r).0, [177, 50, 50]);
    }
}
