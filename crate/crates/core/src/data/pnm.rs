//! Binary PGM (P5) and PPM (P6) image files with maxval 255.
//!
//! Header is exactly `P5\n<w> <h>\n255\n` (or `P6`), then raw bytes.
//! Pixels in [0,1] quantize to a byte; a save/load round trip deviates by at
//! most 1/255 per pixel.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CekdError, Result};
use crate::numerics::Tensor;

/// Write a `[C,H,W]` image (C = 1 or 3) atomically.
pub fn save_pnm(path: &Path, image: &Tensor) -> Result<()> {
    if image.shape().len() != 3 {
        return Err(CekdError::invalid("expected [C,H,W] image"));
    }
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let magic = match c {
        1 => "P5",
        3 => "P6",
        other => return Err(CekdError::invalid(format!("unsupported channel count {other}"))),
    };
    let tmp = path.with_extension("tmp");
    {
        let mut out = BufWriter::new(File::create(&tmp)?);
        write!(out, "{magic}\n{w} {h}\n255\n")?;
        // interleaved channel order per pixel
        let mut payload = Vec::with_capacity(c * h * w);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let v = image.at3(ch, y, x).clamp(0.0, 1.0);
                    payload.push((v * 255.0).round() as u8);
                }
            }
        }
        out.write_all(&payload)?;
        out.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Read a P5/P6 file back into a `[C,H,W]` tensor with values in [0,1].
pub fn load_pnm(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    parse_pnm(&bytes)
}

fn parse_pnm(bytes: &[u8]) -> Result<Tensor> {
    let err = |offset: usize, message: &str| CekdError::Parse {
        offset,
        message: message.into(),
    };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(err(0, "expected P5 or P6 magic")),
    };
    let mut pos = 2;
    let read_token = |pos: &mut usize| -> Result<usize> {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        let start = *pos;
        while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
            *pos += 1;
        }
        if start == *pos {
            return Err(err(start, "expected decimal integer"));
        }
        std::str::from_utf8(&bytes[start..*pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(start, "malformed integer"))
    };
    let w = read_token(&mut pos)?;
    let h = read_token(&mut pos)?;
    let maxval = read_token(&mut pos)?;
    if maxval != 255 {
        return Err(err(pos, "only maxval 255 is supported"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(err(pos, "expected single whitespace after maxval"));
    }
    pos += 1;
    if w == 0 || h == 0 {
        return Err(err(pos, "zero image dimension"));
    }
    let expected = channels * w * h;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(err(
            pos + payload.len(),
            "truncated payload",
        ));
    }
    let mut image = Tensor::zeros(&[channels, h, w]);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..channels {
                let b = payload[(y * w + x) * channels + ch];
                let idx = image.idx3(ch, y, x);
                image.data_mut()[idx] = b as f64 / 255.0;
            }
        }
    }
    Ok(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    #[test]
    fn zero_image_payload_is_zero_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zero.pgm");
        save_pnm(&path, &Tensor::zeros(&[1, 3, 4])).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..11], b"P5\n4 3\n255\n");
        assert_eq!(&bytes[11..], &[0u8; 12]);
    }

    #[test]
    fn round_trip_within_quantization() {
        let mut rng = RngStream::new(1);
        for channels in [1usize, 3] {
            let shape = [channels, 5, 7];
            let data: Vec<f64> = (0..shape.iter().product()).map(|_| rng.next_f64()).collect();
            let image = Tensor::from_vec(&shape, data).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("img.pnm");
            save_pnm(&path, &image).unwrap();
            let back = load_pnm(&path).unwrap();
            for (a, b) in image.data().iter().zip(back.data()) {
                assert!((a - b).abs() <= 1.0 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn hand_constructed_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fix.pgm");
        std::fs::write(&path, [b"P5\n2 2\n255\n".as_ref(), &[0, 85, 170, 255]].concat()).unwrap();
        let img = load_pnm(&path).unwrap();
        let expect = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (a, e) in img.data().iter().zip(expect) {
            assert!((a - e).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn malformed_inputs_report_offsets() {
        let cases: &[&[u8]] = &[
            b"P4\n2 2\n255\n",
            b"P5\n2 x\n255\n",
            b"P5\n2 2\n255\n\x00\x00",
            b"P5\n2 2\n100\n\x00\x00\x00\x00",
        ];
        for case in cases {
            match parse_pnm(case) {
                Err(CekdError::Parse { .. }) => {}
                other => panic!("expected parse error for {case:?}, got {other:?}"),
            }
        }
    }
}
