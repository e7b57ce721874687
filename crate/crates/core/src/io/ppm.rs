//! Binary PPM (`P6`, maxval 255) images scaled to `[0, 1]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

use super::header::HeaderReader;

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<Image> {
    let mut hdr = HeaderReader::new(bytes, path);
    let magic = hdr.token()?;
    if magic != "P6" {
        return Err(hdr.error(format!("expected P6, found {magic:?}")));
    }
    let width: usize = hdr.number()?;
    let height: usize = hdr.number()?;
    let maxval: u32 = hdr.number()?;
    if maxval != 255 {
        return Err(Error::Unsupported {
            path: path.to_path_buf(),
            reason: format!("maxval {maxval}; only 255 is supported"),
        });
    }
    let start = hdr.end_of_header()?;
    let need = width * height * 3;
    let payload = &bytes[start..];
    if payload.len() != need {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: start,
            reason: format!(
                "{width}x{height} header needs {need} payload bytes, found {}",
                payload.len()
            ),
        });
    }
    let data = payload.iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(height, width, 3, data)
}

/// Quantises to 8 bits with rounding; out-of-range values are clamped.
pub fn encode_ppm(image: &Image) -> Result<Vec<u8>> {
    if image.channels != 3 {
        return Err(Error::InvalidArgument(format!(
            "PPM needs 3 channels, image has {}",
            image.channels
        )));
    }
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes, path)
}

pub fn write_ppm(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ppm(image)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_quantises_to_128() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.ppm");
        write_ppm(&path, &Image::filled(3, 5, 3, 0.5)).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!((back.height, back.width, back.channels), (3, 5, 3));
        assert!(back.data.iter().all(|&v| v == 128.0 / 255.0));
    }

    #[test]
    fn round_trip_within_quantisation() {
        let img = Image::new(1, 2, 3, vec![0.0, 0.1, 0.2, 0.6, 0.99, 1.0]).unwrap();
        let back = decode_ppm(&encode_ppm(&img).unwrap(), Path::new("m")).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn payload_length_mismatch() {
        let mut bytes = encode_ppm(&Image::filled(2, 2, 3, 0.1)).unwrap();
        bytes.pop();
        assert!(matches!(decode_ppm(&bytes, Path::new("x")), Err(Error::Format { .. })));
    }

    #[test]
    fn maxval_other_than_255_is_unsupported() {
        let bytes = b"P6\n1 1\n65535\n\0\0\0\0\0\0";
        assert!(matches!(decode_ppm(bytes, Path::new("x")), Err(Error::Unsupported { .. })));
    }

    #[test]
    fn comments_are_skipped() {
        let bytes = b"P6\n# made by hand\n1 1\n255\n\xff\x00\x80";
        let img = decode_ppm(bytes, Path::new("x")).unwrap();
        assert_eq!(img.data, vec![1.0, 0.0, 128.0 / 255.0]);
    }
}
