//! UV-space textures: projection of a photograph through the fitted camera,
//! visibility, and gradient-domain blending with a background texture.

mod poisson;
mod project;
mod raster;

use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ImageBuffer, Luma};

use crate::dr::DrFeature;
use crate::error::{Error, Result};

pub use poisson::{fill_boundary_ring, poisson_blend, poisson_residual, BLEND_TOLERANCE};
pub use project::{project_texture, ProjectionContext, TexelHit};
pub use raster::{rasterize_depth, rasterize_uv, ray_triangle, DepthBuffer, UvCoverage};

/// Per-texel provenance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TexelState {
    #[default]
    Background,
    Projected,
    /// Outside the projected region but adjacent to it.
    Boundary,
}

impl TexelState {
    fn gray(self) -> u8 {
        match self {
            TexelState::Background => 0,
            TexelState::Boundary => 128,
            TexelState::Projected => 255,
        }
    }

    fn from_gray(v: u8) -> Self {
        match v {
            0..=63 => TexelState::Background,
            64..=191 => TexelState::Boundary,
            _ => TexelState::Projected,
        }
    }
}

/// RGB image with channel values in `[0, 1]` and a per-texel mask. Row 0 is
/// the top row (`v = 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct UvTexture {
    width: usize,
    height: usize,
    pub pixels: Vec<[f64; 3]>,
    pub mask: Vec<TexelState>,
    /// 8 or 16.
    pub bit_depth: u8,
}

impl UvTexture {
    pub fn new(width: usize, height: usize) -> Self {
        UvTexture {
            width,
            height,
            pixels: vec![[0.0; 3]; width * height],
            mask: vec![TexelState::Background; width * height],
            bit_depth: 8,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut t = UvTexture::new(width, height);
        for y in 0..height {
            for x in 0..width {
                t.pixels[y * width + x] = f(x, y);
            }
        }
        t
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[self.index(x, y)]
    }

    pub fn state(&self, x: usize, y: usize) -> TexelState {
        self.mask[self.index(x, y)]
    }

    pub fn same_size(&self, other: &UvTexture) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::InvalidArgument(format!(
                "texture sizes differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Bilinear lookup at continuous pixel coordinates (pixel centers at
    /// `+0.5`), clamped to the edges.
    pub fn bilinear(&self, u: f64, v: f64) -> [f64; 3] {
        let x = (u - 0.5).clamp(0.0, (self.width - 1) as f64);
        let y = (v - 0.5).clamp(0.0, (self.height - 1) as f64);
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        std::array::from_fn(|k| (a[k] * (1.0 - fx) + b[k] * fx) * (1.0 - fy) + (c[k] * (1.0 - fx) + d[k] * fx) * fy)
    }

    /// Loads a binary PPM (8- or 16-bit). All texels are marked projected.
    pub fn load_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?
            .decode()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let sixteen = matches!(
            img.color(),
            image::ColorType::Rgb16 | image::ColorType::L16 | image::ColorType::La16 | image::ColorType::Rgba16
        );
        let rgb = img.to_rgb16();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let mut t = UvTexture::new(w, h);
        for (p, px) in t.pixels.iter_mut().zip(rgb.pixels()) {
            *p = std::array::from_fn(|k| px.0[k] as f64 / 65535.0);
        }
        t.mask.fill(TexelState::Projected);
        t.bit_depth = if sixteen { 16 } else { 8 };
        Ok(t)
    }

    /// Writes a binary P6; 16-bit samples are big-endian.
    pub fn save_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let max = if self.bit_depth == 16 { 65535u32 } else { 255 };
        let mut out = format!("P6\n{} {}\n{}\n", self.width, self.height, max).into_bytes();
        for p in &self.pixels {
            for c in p {
                let q = quantize(*c, max as f64) as u16;
                if max > 255 {
                    out.extend_from_slice(&q.to_be_bytes());
                } else {
                    out.push(q as u8);
                }
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn save_mask(&self, path: impl AsRef<Path>) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        let img = DynamicImage::ImageLuma8(ImageBuffer::<Luma<u8>, Vec<u8>>::from_fn(w, h, |x, y| {
            Luma([self.state(x as usize, y as usize).gray()])
        }));
        write_pnm(path.as_ref(), &img, PnmSubtype::Graymap(SampleEncoding::Binary))
    }

    /// Replaces the mask with one read from a PGM of the same size.
    pub fn load_mask(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let img = image::ImageReader::open(path)
            .map_err(|e| Error::io(path, e))?
            .with_guessed_format()
            .map_err(|e| Error::io(path, e))?
            .decode()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
            .to_luma8();
        if (img.width() as usize, img.height() as usize) != (self.width, self.height) {
            return Err(Error::InvalidArgument(format!(
                "mask is {}x{}, texture is {}x{}",
                img.width(),
                img.height(),
                self.width,
                self.height
            )));
        }
        for (m, p) in self.mask.iter_mut().zip(img.pixels()) {
            *m = TexelState::from_gray(p.0[0]);
        }
        Ok(())
    }
}

fn quantize(c: f64, max: f64) -> f64 {
    (c.clamp(0.0, 1.0) * max).round()
}

fn write_pnm(path: &Path, img: &DynamicImage, subtype: PnmSubtype) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    img.write_with_encoder(PnmEncoder::new(&mut w).with_subtype(subtype))
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))
}

/// A background texture candidate.
#[derive(Debug, Clone)]
pub struct LibraryEntry<T> {
    pub id: String,
    pub feature: DrFeature,
    pub texture: T,
}

pub enum BackgroundQuery<'a> {
    Id(&'a str),
    Feature(&'a DrFeature),
}

/// Explicit id, or the entry nearest to the query feature in L1.
pub fn choose_background_texture<'a, T>(
    library: &'a [LibraryEntry<T>],
    query: BackgroundQuery<'_>,
) -> Result<&'a LibraryEntry<T>> {
    if library.is_empty() {
        return Err(Error::Empty("background texture library is empty".into()));
    }
    match query {
        BackgroundQuery::Id(id) => library
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| Error::Missing(format!("no background texture with id {id:?}"))),
        BackgroundQuery::Feature(f) => {
            let mut best = &library[0];
            let mut best_d = f64::INFINITY;
            for e in library {
                crate::error::check_len("DR feature length", f.as_slice().len(), e.feature.as_slice().len())?;
                let d = e.feature.l1_distance(f);
                if d < best_d {
                    best = e;
                    best_d = d;
                }
            }
            Ok(best)
        }
    }
}
