use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use super::{quantize_8bit, Image, ImageError};

fn io_err(path: &Path, source: std::io::Error) -> ImageError {
    ImageError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Read an 8- or 16-bit RGB PNG, scaling samples to `[0, 1]`.
pub fn load_png(path: &Path) -> Result<Image, ImageError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| ImageError::Decode(e.to_string()))?;
    let (color, depth) = reader.output_color_type();
    if color != png::ColorType::Rgb {
        return Err(ImageError::UnsupportedColorType(format!(
            "{color:?} ({depth:?})"
        )));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageError::Decode("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| ImageError::Decode(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let n = w * h;
    let mut data = vec![0f32; 3 * n];
    match depth {
        png::BitDepth::Eight => {
            for y in 0..h {
                let row = &buf[y * info.line_size..];
                for x in 0..w {
                    for c in 0..3 {
                        data[c * n + y * w + x] = row[3 * x + c] as f32 / 255.0;
                    }
                }
            }
        }
        png::BitDepth::Sixteen => {
            for y in 0..h {
                let row = &buf[y * info.line_size..];
                for x in 0..w {
                    for c in 0..3 {
                        let i = 2 * (3 * x + c);
                        let v = u16::from_be_bytes([row[i], row[i + 1]]);
                        data[c * n + y * w + x] = v as f32 / 65535.0;
                    }
                }
            }
        }
        other => {
            return Err(ImageError::UnsupportedColorType(format!("Rgb ({other:?})")));
        }
    }
    Image::new(w, h, data)
}

/// Write an 8-bit RGB PNG; values are clamped to `[0, 1]` and rounded half
/// away from zero.
pub fn save_png(img: &Image, path: &Path) -> Result<(), ImageError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let (w, h) = img.dims();
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder
        .write_header()
        .map_err(|e| ImageError::Encode(e.to_string()))?;
    let mut bytes = Vec::with_capacity(3 * w * h);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                bytes.push(quantize_8bit(img.get(c, y, x)));
            }
        }
    }
    writer
        .write_image_data(&bytes)
        .map_err(|e| ImageError::Encode(e.to_string()))?;
    writer
        .finish()
        .map_err(|e| ImageError::Encode(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_raw(
        path: &Path,
        w: u32,
        h: u32,
        color: png::ColorType,
        depth: png::BitDepth,
        data: &[u8],
    ) {
        let file = File::create(path).unwrap();
        let mut enc = png::Encoder::new(BufWriter::new(file), w, h);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut wr = enc.write_header().unwrap();
        wr.write_image_data(data).unwrap();
    }

    #[test]
    fn half_grey_is_a_fixed_point() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        save_png(&Image::filled(3, 2, [0.5; 3]), &path).unwrap();
        let back = load_png(&path).unwrap();
        assert!(back.data().iter().all(|&v| v == 128.0 / 255.0));
    }

    #[test]
    fn sixteen_bit_rgb_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgb16.png");
        let raw: Vec<u8> = [0u16, 65535, 32768]
            .iter()
            .flat_map(|v| v.to_be_bytes())
            .collect();
        write_raw(
            &path,
            1,
            1,
            png::ColorType::Rgb,
            png::BitDepth::Sixteen,
            &raw,
        );
        let img = load_png(&path).unwrap();
        assert_eq!(img.get(0, 0, 0), 0.0);
        assert_eq!(img.get(1, 0, 0), 1.0);
        assert!((img.get(2, 0, 0) - 32768.0 / 65535.0).abs() < 1e-7);
    }

    #[test]
    fn grayscale_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grey16.png");
        write_raw(
            &path,
            2,
            1,
            png::ColorType::Grayscale,
            png::BitDepth::Sixteen,
            &[0, 1, 2, 3],
        );
        let err = load_png(&path).unwrap_err();
        assert!(err.to_string().contains("unsupported color type"), "{err}");
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_png(Path::new("/nonexistent/x.png")),
            Err(ImageError::Io { .. })
        ));
    }
}
