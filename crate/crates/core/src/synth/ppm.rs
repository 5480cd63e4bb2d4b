//! Binary PPM (P6, maxval 255) image I/O.
//!
//! Rendered images live exactly on the 256-level grid, so the PPM
//! round trip is lossless for them.

use super::render::{dequantize, quantize, IMG_CHANNELS};
use crate::error::{Error, Result};
use crate::{Image, Tensor};
use std::io::{BufRead, Write};
use std::path::Path;

pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    let shape = image.shape();
    if shape.len() != 3 || shape[2] != IMG_CHANNELS {
        return Err(Error::shapes("write_ppm", format!("image shape {shape:?}")));
    }
    let (h, w) = (shape[0], shape[1]);
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(file, "P6\n{w} {h}\n255\n")?;
    let bytes: Vec<u8> = image.data().iter().map(|&v| quantize(v)).collect();
    file.write_all(&bytes)?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let mut reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut header = Vec::new();
    // Three whitespace-separated header tokens after the magic.
    let mut tokens = Vec::new();
    let mut magic = [0u8; 2];
    std::io::Read::read_exact(&mut reader, &mut magic)?;
    if &magic != b"P6" {
        return Err(Error::BadFormat(format!(
            "{}: not a P6 PPM",
            path.display()
        )));
    }
    while tokens.len() < 3 {
        let mut byte = [0u8; 1];
        std::io::Read::read_exact(&mut reader, &mut byte)?;
        let b = byte[0];
        if b == b'#' {
            reader.read_until(b'\n', &mut header)?;
            header.clear();
        } else if b.is_ascii_whitespace() {
            if !header.is_empty() {
                tokens.push(String::from_utf8_lossy(&header).to_string());
                header.clear();
            }
        } else {
            header.push(b);
        }
    }
    let parse = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::BadFormat(format!("bad PPM header token {s:?}")))
    };
    let w = parse(&tokens[0])?;
    let h = parse(&tokens[1])?;
    let maxval = parse(&tokens[2])?;
    if maxval != 255 {
        return Err(Error::BadFormat(format!("unsupported maxval {maxval}")));
    }
    let mut bytes = vec![0u8; w * h * IMG_CHANNELS];
    std::io::Read::read_exact(&mut reader, &mut bytes)?;
    let data: Vec<f64> = bytes.iter().map(|&b| dequantize(b)).collect();
    Ok(Tensor::new(vec![h, w, IMG_CHANNELS], data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{render, Color, Scene, Shape};

    #[test]
    fn ppm_roundtrip_is_lossless_for_rendered_images() {
        let img = render(&Scene::single(Shape::Square, Color::Green, 7)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.ppm");
        write_ppm(&path, &img).unwrap();
        let back = read_ppm(&path).unwrap();
        assert_eq!(img, back);
    }

    #[test]
    fn non_ppm_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.ppm");
        std::fs::write(&path, b"JUNKDATA").unwrap();
        assert!(read_ppm(&path).is_err());
    }
}
