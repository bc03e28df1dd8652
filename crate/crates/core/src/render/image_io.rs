use std::io::Write;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb};

use crate::{Error, Result};

pub const LABEL_BACKGROUND: u8 = 0;
pub const LABEL_HAND: u8 = 1;
pub const LABEL_OBJECT: u8 = 2;

/// Per-pixel segmentation labels, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskImage {
    pub width: usize,
    pub height: usize,
    labels: Vec<u8>,
}

impl MaskImage {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::Dimension {
                what: "mask labels",
                expected: width * height,
                got: labels.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l > LABEL_OBJECT) {
            return Err(Error::Image(format!("mask label {bad} not in {{0, 1, 2}}")));
        }
        Ok(MaskImage { width, height, labels })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        MaskImage {
            width,
            height,
            labels: vec![LABEL_BACKGROUND; width * height],
        }
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    fn binary(&self, label: u8) -> Vec<f64> {
        self.labels.iter().map(|&l| if l == label { 1.0 } else { 0.0 }).collect()
    }

    pub fn hand(&self) -> Vec<f64> {
        self.binary(LABEL_HAND)
    }

    pub fn object(&self) -> Vec<f64> {
        self.binary(LABEL_OBJECT)
    }

    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image(e.to_string()))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let labels = match img {
            image::DynamicImage::ImageLuma16(g) => g.pixels().map(|p| p.0[0].min(255) as u8).collect(),
            other => other.into_luma8().into_raw(),
        };
        MaskImage::new(w, h, labels)
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let img = GrayImage::from_raw(self.width as u32, self.height as u32, self.labels.clone())
            .expect("buffer size matches");
        img.save(path).map_err(|e| Error::Image(e.to_string()))
    }

    /// ASCII PGM (P2) with maxval 2.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "P2\n{} {}\n2", self.width, self.height)?;
        for row in self.labels.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|l| l.to_string()).collect();
            writeln!(f, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let (w, h, maxval, values) = read_netpbm(&std::fs::read_to_string(path)?, "P2")?;
        if maxval > 255 {
            return Err(Error::Image("label PGM maxval above 255".into()));
        }
        MaskImage::new(w, h, values.into_iter().map(|v| v as u8).collect())
    }
}

/// Linear RGB in [0, 1], row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension {
                what: "rgb pixels",
                expected: width * height,
                got: data.len(),
            });
        }
        Ok(RgbImage { width, height, data })
    }

    pub fn black(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![[0.0; 3]; width * height],
        }
    }

    /// Reads 8- or 16-bit PNG.
    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::Image(e.to_string()))?.into_rgb16();
        let (w, h) = img.dimensions();
        let data = img.pixels().map(|p| p.0.map(|c| c as f64 / 65535.0)).collect();
        RgbImage::new(w as usize, h as usize, data)
    }

    /// Writes 16-bit PNG.
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let raw: Vec<u16> = self
            .data
            .iter()
            .flat_map(|c| c.map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16))
            .collect();
        let img: ImageBuffer<Rgb<u16>, Vec<u16>> =
            ImageBuffer::from_raw(self.width as u32, self.height as u32, raw).expect("buffer size matches");
        img.save(path).map_err(|e| Error::Image(e.to_string()))
    }

    /// ASCII PPM (P3) with maxval 255.
    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "P3\n{} {}\n255", self.width, self.height)?;
        for row in self.data.chunks(self.width) {
            let line: Vec<String> = row
                .iter()
                .flat_map(|c| c.map(|v| ((v.clamp(0.0, 1.0) * 255.0).round() as u8).to_string()))
                .collect();
            writeln!(f, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let (w, h, maxval, values) = read_netpbm(&std::fs::read_to_string(path)?, "P3")?;
        let data = values
            .chunks(3)
            .map(|c| [c[0], c[1], c[2]].map(|v| v as f64 / maxval as f64))
            .collect();
        RgbImage::new(w, h, data)
    }
}

fn read_netpbm(text: &str, magic: &str) -> Result<(usize, usize, u32, Vec<u32>)> {
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split_whitespace());
    let bad = |m: &str| Error::Image(format!("netpbm: {m}"));
    if tokens.next() != Some(magic) {
        return Err(bad(&format!("expected magic {magic}")));
    }
    let mut num = || -> Result<u32> {
        tokens
            .next()
            .ok_or_else(|| bad("truncated"))?
            .parse()
            .map_err(|_| bad("bad integer"))
    };
    let w = num()? as usize;
    let h = num()? as usize;
    let maxval = num()?;
    let channels = if magic == "P3" { 3 } else { 1 };
    let values = (0..w * h * channels).map(|_| num()).collect::<Result<Vec<_>>>()?;
    Ok((w, h, maxval.max(1), values))
}

/// Writes 8-bit grayscale PNG of a [0,1] map.
pub fn write_gray_png(values: &[f64], width: usize, height: usize, path: impl AsRef<Path>) -> Result<()> {
    let raw: Vec<u8> = values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let img: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(width as u32, height as u32, raw).ok_or_else(|| Error::Image("size mismatch".into()))?;
    img.save(path).map_err(|e| Error::Image(e.to_string()))
}

/// Raw little-endian f32 dump, row-major.
pub fn write_f32_le(values: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect();
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_f32_le(path: impl AsRef<Path>) -> Result<Vec<f32>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Image("f32 dump length is not a multiple of 4".into()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}
