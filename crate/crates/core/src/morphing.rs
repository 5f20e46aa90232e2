//! Interpolation between two latents along geodesics of the torus.
//!
//! Radii move linearly; angles follow `(1 − t)·phi1 + t·(phi2 + 2πk)` for an
//! integer wrap offset `k` per dimension. `k = 0` is the direct segment, the
//! other offsets take the path across the periodic boundary.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::model::{TaeModel, IMAGE_SIDE};
use crate::nn::Tensor;
use crate::polar::{to_cartesian, wrap_angle, LatentBatch};

/// Frames per path unless asked otherwise.
pub const DEFAULT_FRAMES: usize = 12;

/// Which wrap offsets to enumerate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathMode {
    /// Per dimension, the shortest offset and the one going the other way
    /// round: `2^d` paths.
    TwoPerDim,
    /// Every `k ∈ {-1, 0, 1}^d`: `3^d` paths.
    Full,
}

impl FromStr for PathMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_per_dim" => Ok(Self::TwoPerDim),
            "full" => Ok(Self::Full),
            other => Err(Error::UnknownMode(other.to_string())),
        }
    }
}

/// One endpoint of a morph in polar form, with `radius = sqrt(rho)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub radius: Vec<f64>,
    pub phi: Vec<f64>,
}

impl PolarPoint {
    pub fn from_cartesian(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(shape_err("morph endpoint", format!("{} x vs {} y", x.len(), y.len())));
        }
        let radius = x.iter().zip(&y).map(|(a, b)| (a * a + b * b).sqrt()).collect();
        let phi = x.iter().zip(&y).map(|(a, b)| b.atan2(*a)).collect();
        Ok(Self { x, y, radius, phi })
    }

    /// Row `i` of an encoded batch.
    pub fn from_batch(batch: &LatentBatch, i: usize) -> Result<Self> {
        if i >= batch.batch_size() {
            return Err(shape_err("morph endpoint", format!("row {i} of {}", batch.batch_size())));
        }
        Self::from_cartesian(batch.x.row(i).to_vec(), batch.y.row(i).to_vec())
    }

    pub fn dims(&self) -> usize {
        self.phi.len()
    }
}

/// Offset minimising `|phi1 − phi2 − 2πk|` per dimension. At an exact tie
/// the smaller `|k|` wins, then the smaller `k`.
pub fn shortest_k(phi1: &[f64], phi2: &[f64]) -> Vec<i64> {
    phi1.iter()
        .zip(phi2)
        .map(|(&a, &b)| {
            let centre = ((a - b) / TAU).round() as i64;
            let cost = |k: i64| (a - b - TAU * k as f64).abs();
            (centre - 1..=centre + 1)
                .min_by(|&k1, &k2| {
                    cost(k1).total_cmp(&cost(k2)).then(k1.abs().cmp(&k2.abs())).then(k1.cmp(&k2))
                })
                .unwrap()
        })
        .collect()
}

/// Wrap offsets to render, in a fixed order. The first entry of the
/// `TwoPerDim` set is always the all-shortest path.
pub fn path_set(phi1: &[f64], phi2: &[f64], mode: PathMode) -> Vec<Vec<i64>> {
    let choices: Vec<Vec<i64>> = match mode {
        PathMode::TwoPerDim => {
            let k_star = shortest_k(phi1, phi2);
            phi1.iter()
                .zip(phi2)
                .zip(&k_star)
                .map(|((&a, &b), &k)| {
                    // Going the other way round the circle: a direct step of
                    // `phi2 + 2πk − phi1 = −delta` is replaced by `2π − |delta|`
                    // in the opposite direction.
                    let delta = a - b - TAU * k as f64;
                    let other = if delta < 0.0 { -1 } else { 1 };
                    vec![k, k + other]
                })
                .collect()
        }
        PathMode::Full => vec![vec![-1, 0, 1]; phi1.len()],
    };
    cartesian_product(&choices)
}

fn cartesian_product(choices: &[Vec<i64>]) -> Vec<Vec<i64>> {
    choices.iter().fold(vec![Vec::new()], |acc, options| {
        acc.iter()
            .flat_map(|prefix| {
                options.iter().map(move |&o| {
                    let mut p = prefix.clone();
                    p.push(o);
                    p
                })
            })
            .collect()
    })
}

/// Latent frames of one path: interpolated radius, unwrapped angle and the
/// Cartesian decoder input, each `T × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct MorphPath {
    pub k: Vec<i64>,
    pub t: Vec<f64>,
    pub radius: Tensor,
    pub phi: Tensor,
    pub x: Tensor,
    pub y: Tensor,
}

impl MorphPath {
    pub fn new(from: &PolarPoint, to: &PolarPoint, k: &[i64], frames: usize) -> Result<Self> {
        let d = from.dims();
        if to.dims() != d || k.len() != d {
            return Err(shape_err("morph", format!("dims {d}, {}, k {}", to.dims(), k.len())));
        }
        if frames < 2 {
            return Err(Error::Config(format!("a morph needs at least 2 frames, got {frames}")));
        }
        let t: Vec<f64> = (0..frames).map(|s| s as f64 / (frames - 1) as f64).collect();
        let mut radius = Vec::with_capacity(frames * d);
        let mut phi = Vec::with_capacity(frames * d);
        for &ti in &t {
            for (i, &ki) in k.iter().enumerate() {
                let target = to.phi[i] + TAU * ki as f64;
                radius.push(from.radius[i] + ti * (to.radius[i] - from.radius[i]));
                phi.push(from.phi[i] + ti * (target - from.phi[i]));
            }
        }
        let rho: Vec<f64> = radius.iter().map(|r| r * r).collect();
        let (mut x, mut y) = to_cartesian(&rho, &phi)?;
        // Wherever a frame sits exactly on the first endpoint (always frame
        // 0, every frame of a stationary dimension) reuse its Cartesian
        // coordinates instead of a polar round trip.
        for f in 0..frames {
            for i in 0..d {
                let j = f * d + i;
                if radius[j] == from.radius[i] && phi[j] == from.phi[i] {
                    x[j] = from.x[i];
                    y[j] = from.y[i];
                }
            }
        }
        Ok(Self {
            k: k.to_vec(),
            t,
            radius: Tensor::new(&[frames, d], radius)?,
            phi: Tensor::new(&[frames, d], phi)?,
            x: Tensor::new(&[frames, d], x)?,
            y: Tensor::new(&[frames, d], y)?,
        })
    }

    pub fn frames(&self) -> usize {
        self.t.len()
    }

    /// Decoded images, `T × 1 × 28 × 28`.
    pub fn decode(&self, model: &TaeModel) -> Result<Tensor> {
        model.decode(&self.x, &self.y)
    }
}

/// Decodes `frames` images between two endpoints for offset `k`.
pub fn interpolate(model: &TaeModel, from: &PolarPoint, to: &PolarPoint, k: &[i64], frames: usize) -> Result<Tensor> {
    MorphPath::new(from, to, k, frames)?.decode(model)
}

/// CSV of path latents: `path,t,r1..rd,phi1..phid` with wrapped angles.
pub fn latents_csv(paths: &[MorphPath]) -> String {
    let d = paths.first().map_or(0, |p| p.k.len());
    let mut out = String::from("path,t");
    for i in 1..=d {
        let _ = write!(out, ",r{i}");
    }
    for i in 1..=d {
        let _ = write!(out, ",phi{i}");
    }
    out.push('\n');
    for (p, path) in paths.iter().enumerate() {
        for (f, t) in path.t.iter().enumerate() {
            let _ = write!(out, "{p},{t}");
            for r in path.radius.row(f) {
                let _ = write!(out, ",{r}");
            }
            for phi in path.phi.row(f) {
                let _ = write!(out, ",{}", wrap_angle(*phi));
            }
            out.push('\n');
        }
    }
    out
}

/// 8-bit grayscale raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Pgm,
    Png,
}

impl FromStr for ImageFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgm" => Ok(Self::Pgm),
            "png" => Ok(Self::Png),
            other => Err(Error::UnknownMode(other.to_string())),
        }
    }
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Pgm => "pgm",
            Self::Png => "png",
        }
    }
}

/// `[0, 1]` intensity to a byte, rounding halves up.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

impl GrayImage {
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn write(&self, path: &Path, format: ImageFormat) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        match format {
            ImageFormat::Pgm => w.write_all(&self.to_pgm())?,
            ImageFormat::Png => {
                let mut enc = png::Encoder::new(&mut w, self.width as u32, self.height as u32);
                enc.set_color(png::ColorType::Grayscale);
                enc.set_depth(png::BitDepth::Eight);
                let mut writer = enc.write_header().map_err(std::io::Error::other)?;
                writer.write_image_data(&self.pixels).map_err(std::io::Error::other)?;
                writer.finish().map_err(std::io::Error::other)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Lays out one row per path and one column per frame, separated by
/// 1-pixel white lines. Each entry of `rows` is `T × 1 × 28 × 28`.
pub fn render_grid(rows: &[Tensor]) -> Result<GrayImage> {
    let Some(first) = rows.first() else {
        return Err(shape_err("render_grid", "no rows"));
    };
    let cols = first.shape()[0];
    for r in rows {
        if r.shape() != [cols, 1, IMAGE_SIDE, IMAGE_SIDE] {
            return Err(shape_err("render_grid", format!("row shape {:?}", r.shape())));
        }
    }
    let cell = IMAGE_SIDE;
    let width = cols * cell + cols - 1;
    let height = rows.len() * cell + rows.len() - 1;
    let mut pixels = vec![255u8; width * height];
    for (ri, row) in rows.iter().enumerate() {
        for c in 0..cols {
            let frame = &row.values()[c * cell * cell..(c + 1) * cell * cell];
            for py in 0..cell {
                let dst = (ri * (cell + 1) + py) * width + c * (cell + 1);
                for px in 0..cell {
                    pixels[dst + px] = quantize(frame[py * cell + px]);
                }
            }
        }
    }
    Ok(GrayImage { width, height, pixels })
}
