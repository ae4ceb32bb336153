//! 8-bit grayscale rendering of B-mode images.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::atomic_write;
use crate::metrics::BModeImage;

/// Maps `[-dynamic_range, 0]` dB linearly onto `0..=255`, rounding halves up.
pub fn gray_levels(img: &BModeImage) -> Vec<u8> {
    let dr = img.dynamic_range;
    img.data
        .iter()
        .map(|&db| {
            let v = (db as f64 + dr) / dr * 255.0;
            (v + 0.5).floor().clamp(0.0, 255.0) as u8
        })
        .collect()
}

pub fn encode_png(img: &BModeImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = ::png::Encoder::new(&mut out, img.w as u32, img.h as u32);
        enc.set_color(::png::ColorType::Grayscale);
        enc.set_depth(::png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::arg(format!("png header: {e}")))?;
        writer
            .write_image_data(&gray_levels(img))
            .map_err(|e| Error::arg(format!("png data: {e}")))?;
    }
    Ok(out)
}

pub fn write_bmode_png(img: &BModeImage, path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), &encode_png(img)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(data: Vec<f32>) -> BModeImage {
        BModeImage {
            h: 1,
            w: data.len(),
            data,
            dynamic_range: 60.0,
        }
    }

    #[test]
    fn level_mapping() {
        assert_eq!(gray_levels(&img(vec![0.0, -60.0, -30.0, -90.0])), vec![255, 0, 128, 0]);
    }

    #[test]
    fn deterministic_bytes_and_decodable() {
        let i = img(vec![0.0, -10.0, -20.0, -59.0]);
        let a = encode_png(&i).unwrap();
        assert_eq!(a, encode_png(&i).unwrap());
        let dec = ::png::Decoder::new(std::io::Cursor::new(a));
        let mut r = dec.read_info().unwrap();
        let mut buf = vec![0; r.output_buffer_size().unwrap()];
        let info = r.next_frame(&mut buf).unwrap();
        assert_eq!(&buf[..info.buffer_size()], &gray_levels(&i)[..]);
    }
}
