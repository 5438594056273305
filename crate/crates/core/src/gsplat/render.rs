use std::io::Write;

use rayon::prelude::*;

use super::{Camera, GaussianScene};
use crate::error::{Error, Result};
use crate::mathcore::Vec3;

/// Added to the diagonal of every projected 2D covariance (px²).
pub const LOW_PASS: f64 = 0.3;
/// Per-pixel blending stops once transmittance falls below this.
pub const TRANSMITTANCE_CUTOFF: f64 = 1e-4;
/// Contributions with a smaller alpha are skipped.
const MIN_ALPHA: f64 = 1.0 / 255.0;
/// Footprint half-width in standard deviations.
const EXTENT_SIGMAS: f64 = 3.0;

/// Linear RGB image, row-major, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl Image {
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        Image {
            width,
            height,
            pixels: vec![rgb; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f64; 3]) {
        self.pixels[y * self.width + x] = rgb;
    }

    /// 8-bit RGB bytes, row-major.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .flat_map(|p| p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect()
    }

    pub fn write_png<W: Write>(&self, w: W) -> Result<()> {
        let mut enc = png::Encoder::new(w, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::format("png", e.to_string()))?;
        writer
            .write_image_data(&self.to_rgb8())
            .map_err(|e| Error::format("png", e.to_string()))?;
        writer
            .finish()
            .map_err(|e| Error::format("png", e.to_string()))
    }

    /// Decodes an 8-bit RGB or RGBA PNG (alpha is dropped).
    pub fn read_png<R: std::io::Read>(r: R) -> Result<Image> {
        let mut dec = png::Decoder::new(r);
        dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = dec
            .read_info()
            .map_err(|e| Error::format("png", e.to_string()))?;
        let mut buf = vec![0; reader.output_buffer_size()];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::format("png", e.to_string()))?;
        let channels = match info.color_type {
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            png::ColorType::Grayscale => 1,
            png::ColorType::GrayscaleAlpha => 2,
            other => return Err(Error::format("png", format!("unsupported color type {other:?}"))),
        };
        let (w, h) = (info.width as usize, info.height as usize);
        let pixels = buf[..w * h * channels]
            .chunks_exact(channels)
            .map(|px| {
                let c = |i: usize| px[i] as f64 / 255.0;
                if channels >= 3 {
                    [c(0), c(1), c(2)]
                } else {
                    [c(0); 3]
                }
            })
            .collect();
        Ok(Image {
            width: w,
            height: h,
            pixels,
        })
    }
}

/// Mean per-pixel L1 difference across channels.
pub fn photometric_loss(rendered: &Image, target: &Image) -> Result<f64> {
    if rendered.width != target.width || rendered.height != target.height {
        return Err(Error::DimensionMismatch(format!(
            "images are {}x{} and {}x{}",
            rendered.width, rendered.height, target.width, target.height
        )));
    }
    if rendered.pixels.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = rendered
        .pixels
        .iter()
        .zip(&target.pixels)
        .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).abs()).sum::<f64>())
        .sum();
    Ok(total / (3 * rendered.pixels.len()) as f64)
}

/// A primitive projected to the image plane.
#[derive(Clone, Copy, Debug)]
struct Splat {
    center: [f64; 2],
    /// Inverse of the 2D covariance `[a, b, c]` for `[[a, b], [b, c]]`.
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    y_range: (usize, usize),
    x_range: (usize, usize),
}

/// Render plus per-pixel blending diagnostics.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub image: Image,
    /// Transmittance left after blending.
    pub transmittance: Vec<f64>,
    /// `Σ α'_i Π_{j<i}(1 − α'_j)` over contributing primitives.
    pub opacity_mass: Vec<f64>,
}

fn project_all(scene: &GaussianScene, cam: &Camera) -> Vec<Splat> {
    let eye = cam.center();
    let w = cam.rotation;
    let mut projected: Vec<(f64, usize, Splat)> = scene
        .primitives
        .iter()
        .enumerate()
        .filter_map(|(i, g)| {
            let c = cam.to_camera(g.mean);
            let ([u, v], z) = cam.project(g.mean)?;
            // rows of the projection Jacobian times the view rotation
            let j0 = Vec3::new(cam.fx / z, 0.0, -cam.fx * c[0] / (z * z));
            let j1 = Vec3::new(0.0, cam.fy / z, -cam.fy * c[1] / (z * z));
            let wt = w.transpose();
            let t0 = wt * j0;
            let t1 = wt * j1;
            let sigma = g.covariance();
            let a = t0.dot(&(sigma * t0)) + LOW_PASS;
            let b = t0.dot(&(sigma * t1));
            let cc = t1.dot(&(sigma * t1)) + LOW_PASS;
            let det = a * cc - b * b;
            if !(det > 0.0) {
                return None;
            }
            let mid = 0.5 * (a + cc);
            let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
            let radius = EXTENT_SIGMAS * lambda_max.sqrt();
            let range = |center: f64, size: usize| -> Option<(usize, usize)> {
                let lo = (center - radius - 0.5).ceil().max(0.0);
                let hi = (center + radius - 0.5).floor().min(size as f64 - 1.0);
                (lo <= hi).then_some((lo as usize, hi as usize))
            };
            let x_range = range(u, cam.width)?;
            let y_range = range(v, cam.height)?;
            let color = g.color((g.mean - eye).normalized());
            Some((
                z,
                i,
                Splat {
                    center: [u, v],
                    conic: [cc / det, -b / det, a / det],
                    opacity: g.opacity,
                    color,
                    y_range,
                    x_range,
                },
            ))
        })
        .collect();
    // Front to back; equal depths fall back to the world position so that
    // insertion order never matters.
    projected.sort_by(|(za, ia, _), (zb, ib, _)| {
        let (ma, mb) = (scene.primitives[*ia].mean, scene.primitives[*ib].mean);
        za.total_cmp(zb)
            .then(ma[0].total_cmp(&mb[0]))
            .then(ma[1].total_cmp(&mb[1]))
            .then(ma[2].total_cmp(&mb[2]))
            .then(ia.cmp(ib))
    });
    projected.into_iter().map(|(_, _, s)| s).collect()
}

/// Front-to-back alpha blending of all primitives at pixel centers
/// `(x + 0.5, y + 0.5)`.
pub fn render_detailed(scene: &GaussianScene, cam: &Camera) -> Result<RenderOutput> {
    cam.validate()?;
    let splats = project_all(scene, cam);
    let (width, height) = (cam.width, cam.height);
    let bg = scene.background;

    let rows: Vec<Vec<([f64; 3], f64, f64)>> = (0..height)
        .into_par_iter()
        .map(|y| {
            let py = y as f64 + 0.5;
            let active: Vec<&Splat> = splats
                .iter()
                .filter(|s| s.y_range.0 <= y && y <= s.y_range.1)
                .collect();
            (0..width)
                .map(|x| {
                    let px = x as f64 + 0.5;
                    let mut rgb = [0.0; 3];
                    let mut t = 1.0;
                    let mut mass = 0.0;
                    for s in &active {
                        if x < s.x_range.0 || x > s.x_range.1 {
                            continue;
                        }
                        let dx = px - s.center[0];
                        let dy = py - s.center[1];
                        let power =
                            -0.5 * (s.conic[0] * dx * dx + s.conic[2] * dy * dy)
                                - s.conic[1] * dx * dy;
                        let alpha = (s.opacity * power.exp()).min(1.0);
                        if alpha < MIN_ALPHA {
                            continue;
                        }
                        let w = alpha * t;
                        for ch in 0..3 {
                            rgb[ch] += s.color[ch] * w;
                        }
                        mass += w;
                        t *= 1.0 - alpha;
                        if t < TRANSMITTANCE_CUTOFF {
                            break;
                        }
                    }
                    for ch in 0..3 {
                        rgb[ch] = (rgb[ch] + t * bg[ch]).clamp(0.0, 1.0);
                    }
                    (rgb, t, mass)
                })
                .collect()
        })
        .collect();

    let mut image = Image::filled(width, height, bg);
    let mut transmittance = Vec::with_capacity(width * height);
    let mut opacity_mass = Vec::with_capacity(width * height);
    for (i, (rgb, t, m)) in rows.into_iter().flatten().enumerate() {
        image.pixels[i] = rgb;
        transmittance.push(t);
        opacity_mass.push(m);
    }
    Ok(RenderOutput {
        image,
        transmittance,
        opacity_mass,
    })
}

pub fn render(scene: &GaussianScene, cam: &Camera) -> Result<Image> {
    Ok(render_detailed(scene, cam)?.image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gsplat::GaussianPrimitive;
    use crate::mathcore::Mat3;

    /// Identity-extrinsics camera: world = camera space.
    fn cam(w: usize, h: usize) -> Camera {
        Camera {
            width: w,
            height: h,
            fx: 100.0,
            fy: 100.0,
            cx: w as f64 / 2.0,
            cy: h as f64 / 2.0,
            rotation: Mat3::IDENTITY,
            translation: Vec3::ZERO,
        }
    }

    /// Primitive whose mean projects onto the center of pixel `(x, y)`.
    fn at_pixel(c: &Camera, x: usize, y: usize, depth: f64, opacity: f64, rgb: [f64; 3]) -> GaussianPrimitive {
        let u = x as f64 + 0.5 - c.cx;
        let v = y as f64 + 0.5 - c.cy;
        let mean = Vec3::new(u * depth / c.fx, v * depth / c.fy, depth);
        GaussianPrimitive::new(mean, Vec3::splat(0.02), opacity, rgb)
    }

    #[test]
    fn empty_scene_is_background() {
        let scene = GaussianScene::new(vec![], [0.2, 0.4, 0.6]);
        let img = render(&scene, &cam(8, 6)).unwrap();
        assert!(img.pixels.iter().all(|p| *p == [0.2, 0.4, 0.6]));
    }

    #[test]
    fn opaque_primitive_at_pixel_center() {
        let c = cam(16, 16);
        let g = at_pixel(&c, 5, 9, 2.0, 1.0, [0.3, 0.7, 0.1]);
        let img = render(&GaussianScene::new(vec![g], [1.0; 3]), &c).unwrap();
        let p = img.get(5, 9);
        for ch in 0..3 {
            assert!((p[ch] - [0.3, 0.7, 0.1][ch]).abs() < 1e-12);
        }
    }

    #[test]
    fn two_primitive_blend() {
        let c = cam(16, 16);
        let front = at_pixel(&c, 8, 8, 1.0, 0.5, [1.0, 0.0, 0.0]);
        let back = at_pixel(&c, 8, 8, 3.0, 1.0, [0.0, 0.0, 1.0]);
        for prims in [vec![front.clone(), back.clone()], vec![back, front]] {
            let out = render_detailed(&GaussianScene::new(prims, [0.0; 3]), &c).unwrap();
            let p = out.image.get(8, 8);
            assert!((p[0] - 0.5).abs() < 1e-12 && p[1].abs() < 1e-12 && (p[2] - 0.5).abs() < 1e-12);
            assert!(out.transmittance[8 * 16 + 8] < 1e-12);
        }
    }

    #[test]
    fn energy_is_conserved() {
        let c = cam(24, 24);
        let prims: Vec<_> = (0..6)
            .map(|i| {
                let mut g = at_pixel(&c, 6 + 2 * i, 12 - i, 1.0 + 0.3 * i as f64, 0.3 + 0.1 * i as f64, [0.5; 3]);
                g.scale = Vec3::new(0.03, 0.05, 0.02);
                g
            })
            .collect();
        let out = render_detailed(&GaussianScene::new(prims, [0.0; 3]), &c).unwrap();
        for (t, m) in out.transmittance.iter().zip(&out.opacity_mass) {
            assert!((t + m - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn photometric_loss_examples() {
        let a = Image::filled(4, 2, [0.0; 3]);
        assert_eq!(photometric_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(photometric_loss(&a, &Image::filled(4, 2, [1.0; 3])).unwrap(), 1.0);
        let mut half = a.clone();
        for x in 0..4 {
            half.set(x, 0, [0.5; 3]);
        }
        assert!((photometric_loss(&a, &half).unwrap() - 0.25).abs() < 1e-15);
        assert!(photometric_loss(&a, &Image::filled(2, 4, [0.0; 3])).is_err());
    }

    #[test]
    fn png_encoding() {
        let mut buf = Vec::new();
        let img = Image::filled(3, 2, [1.0, 0.4, 0.0]);
        img.write_png(&mut buf).unwrap();
        assert_eq!(&buf[1..4], b"PNG");
        let back = Image::read_png(&buf[..]).unwrap();
        assert_eq!(back.width, 3);
        assert!(photometric_loss(&img, &back).unwrap() < 1.0 / 255.0);
    }
}
