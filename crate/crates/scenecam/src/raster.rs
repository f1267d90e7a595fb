//! 8-bit RGB PNG output for spectrogram pictures and overlays.

use std::path::Path;

use scenecam_core::cam::OverlayImage;

use crate::atomic::write_atomic;
use crate::error::{Error, Result};

pub fn encode_png(img: &OverlayImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::format("<png>", e.to_string()))?;
        writer
            .write_image_data(&img.rgb)
            .map_err(|e| Error::format("<png>", e.to_string()))?;
    }
    Ok(out)
}

pub fn write_png(path: &Path, img: &OverlayImage) -> Result<()> {
    write_atomic(path, &encode_png(img)?)
}
