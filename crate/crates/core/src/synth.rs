//! Random-dot stereograms with fronto-parallel layers, exact ground truth
//! and rendered fog, plus their on-disk layout.
//!
//! Every layer carries its own texture indexed in left-view coordinates;
//! the right view samples layer `k` at `x + d_k` and keeps the nearest
//! (largest-disparity) layer, so `right(y, x - d) == left(y, x)` holds
//! exactly wherever the left pixel is visible in the right view.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::fog::{disparity_to_depth, render_fog, CameraRig, FogParams};
use crate::image::{DisparityMap, Image};
use crate::io::{read_pfm, read_ppm, write_pfm, write_ppm};
use crate::parallel::{map_range, Execution};

/// Generator settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub height: usize,
    pub width: usize,
    pub disp_min: f64,
    pub disp_max: f64,
    pub layers_min: usize,
    pub layers_max: usize,
    pub beta_range: (f64, f64),
    pub airlight_range: (f64, f64),
    pub rig: CameraRig,
}

impl SynthParams {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(SynthParams {
            height: cfg.height,
            width: cfg.width,
            disp_min: cfg.disp_min,
            disp_max: cfg.disp_max,
            layers_min: cfg.layers_min,
            layers_max: cfg.layers_max,
            beta_range: (cfg.beta_min, cfg.beta_max),
            airlight_range: (cfg.airlight_min, cfg.airlight_max),
            rig: cfg.rig()?,
        })
    }

    fn integer_disparities(&self) -> Result<(usize, usize)> {
        let lo = self.disp_min.ceil() as usize;
        let hi = self.disp_max.floor() as usize;
        if self.disp_max >= self.width as f64 / 4.0 {
            return Err(Error::InvalidArgument(format!(
                "disparity range up to {} exceeds a quarter of the width {}",
                self.disp_max, self.width
            )));
        }
        if lo == 0 || lo > hi || hi - lo + 1 < self.layers_max {
            return Err(Error::InvalidArgument(format!(
                "disparity range [{}, {}] holds too few integers for {} layers",
                self.disp_min, self.disp_max, self.layers_max
            )));
        }
        Ok((lo, hi))
    }
}

/// One fronto-parallel layer: a rectangle in left-view coordinates with an
/// integer disparity and a texture `height x tex_width x 3`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub disparity: usize,
    /// `(y0, y1, x0, x1)`, half-open, left-view coordinates.
    pub rect: (usize, usize, usize, usize),
    pub tex_width: usize,
    pub texture: Vec<f64>,
}

impl Layer {
    fn covers(&self, y: usize, u: usize) -> bool {
        let (y0, y1, x0, x1) = self.rect;
        (y0..y1).contains(&y) && (x0..x1).contains(&u)
    }

    fn texel(&self, y: usize, u: usize) -> &[f64] {
        &self.texture[(y * self.tex_width + u) * 3..][..3]
    }
}

/// A generated stereo scene with clean and foggy views.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub clean_left: Image,
    pub clean_right: Image,
    pub fog_left: Image,
    pub fog_right: Image,
    pub disp_left: DisparityMap,
    pub disp_right: DisparityMap,
    pub fog: FogParams,
    pub rig: CameraRig,
}

impl Scene {
    /// Left pixels whose correspondence is hidden or outside the right view.
    pub fn occlusion_mask(&self) -> Vec<bool> {
        occlusion_mask(&self.disp_left, &self.disp_right)
    }
}

/// Paths of one scene on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub clean_left: PathBuf,
    pub clean_right: PathBuf,
    pub fog_left: PathBuf,
    pub fog_right: PathBuf,
    pub disp_left: PathBuf,
    pub disp_right: PathBuf,
    pub meta: PathBuf,
    pub rig: CameraRig,
    pub fog: FogParams,
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Renders left/right views and disparities from layers ordered far to near.
pub fn render_layers(height: usize, width: usize, layers: &[Layer]) -> (Image, Image, DisparityMap, DisparityMap) {
    let mut left = Image::filled(height, width, 3, 0.0);
    let mut right = Image::filled(height, width, 3, 0.0);
    let mut dl = DisparityMap::filled(height, width, 0.0);
    let mut dr = DisparityMap::filled(height, width, 0.0);
    for y in 0..height {
        for x in 0..width {
            if let Some(l) = layers.iter().rev().find(|l| l.covers(y, x)) {
                left.pixel_mut(y, x).copy_from_slice(l.texel(y, x));
                dl.data[y * width + x] = l.disparity as f64;
            }
            if let Some(l) = layers.iter().rev().find(|l| l.covers(y, x + l.disparity)) {
                right.pixel_mut(y, x).copy_from_slice(l.texel(y, x + l.disparity));
                dr.data[y * width + x] = l.disparity as f64;
            }
        }
    }
    (left, right, dl, dr)
}

/// Left pixels with `x - d < 0` or whose match lands on a different surface.
pub fn occlusion_mask(disp_left: &DisparityMap, disp_right: &DisparityMap) -> Vec<bool> {
    let w = disp_left.width;
    (0..disp_left.data.len())
        .map(|i| {
            let (y, x) = (i / w, i % w);
            let d = disp_left.data[i];
            let xr = x as f64 - d;
            if xr < 0.0 {
                return true;
            }
            let xr = xr.round() as usize;
            (disp_right.at(y, xr) - d).abs() > 1e-6
        })
        .collect()
}

fn random_layers(p: &SynthParams, rng: &mut impl Rng) -> Result<Vec<Layer>> {
    let (lo, hi) = p.integer_disparities()?;
    let n = rng.random_range(p.layers_min..=p.layers_max);
    let mut pool: Vec<usize> = (lo..=hi).collect();
    let mut disps = Vec::with_capacity(n);
    for _ in 0..n {
        disps.push(pool.swap_remove(rng.random_range(0..pool.len())));
    }
    disps.sort_unstable();
    let tex_width = p.width + hi + 1;
    let (h, w) = (p.height, p.width);
    Ok(disps
        .into_iter()
        .enumerate()
        .map(|(i, d)| {
            let rect = if i == 0 {
                (0, h, 0, tex_width)
            } else {
                let rh = rng.random_range(h / 4..=(3 * h / 4).max(h / 4));
                let rw = rng.random_range(w / 6..=(w / 2).max(w / 6));
                let y0 = rng.random_range(0..=h - rh);
                let x0 = rng.random_range(0..=w - rw);
                (y0, y0 + rh, x0, x0 + rw)
            };
            let texture = value_noise(h, tex_width, rng);
            Layer {
                disparity: d,
                rect,
                tex_width,
                texture,
            }
        })
        .collect())
}

/// Spacing of the coarse noise lattice, in pixels.
pub const TEXTURE_CELL: usize = 4;
const FINE_NOISE: f64 = 0.2;

/// Bilinearly interpolated lattice noise plus a little per-pixel noise,
/// quantised to 8 bits.
fn value_noise(h: usize, w: usize, rng: &mut impl Rng) -> Vec<f64> {
    let (gh, gw) = (h / TEXTURE_CELL + 2, w / TEXTURE_CELL + 2);
    let grid: Vec<f64> = (0..gh * gw * 3).map(|_| rng.random()).collect();
    let mut out = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        let fy = y as f64 / TEXTURE_CELL as f64;
        let (y0, ty) = (fy.floor() as usize, fy.fract());
        for x in 0..w {
            let fx = x as f64 / TEXTURE_CELL as f64;
            let (x0, tx) = (fx.floor() as usize, fx.fract());
            for c in 0..3 {
                let g = |yy: usize, xx: usize| grid[(yy * gw + xx) * 3 + c];
                let top = g(y0, x0) * (1.0 - tx) + g(y0, x0 + 1) * tx;
                let bottom = g(y0 + 1, x0) * (1.0 - tx) + g(y0 + 1, x0 + 1) * tx;
                let smooth = top * (1.0 - ty) + bottom * ty;
                let fine = (rng.random::<f64>() - 0.5) * FINE_NOISE;
                out.push(quantize(smooth + fine));
            }
        }
    }
    out
}

fn quantize_image(mut img: Image) -> Image {
    img.data.iter_mut().for_each(|v| *v = quantize(*v));
    img
}

/// One scene from its own RNG stream.
pub fn generate_scene(p: &SynthParams, rng: &mut impl Rng) -> Result<Scene> {
    let layers = random_layers(p, rng)?;
    scene_from_layers(p, &layers, rng)
}

/// A single textured plane at one integer disparity covering the frame.
pub fn constant_disparity_scene(p: &SynthParams, disparity: usize, rng: &mut impl Rng) -> Result<Scene> {
    if disparity == 0 || disparity >= p.width {
        return Err(Error::InvalidArgument(format!(
            "disparity {disparity} outside 1..{}",
            p.width
        )));
    }
    let tex_width = p.width + disparity;
    let layer = Layer {
        disparity,
        rect: (0, p.height, 0, tex_width),
        tex_width,
        texture: value_noise(p.height, tex_width, rng),
    };
    scene_from_layers(p, &[layer], rng)
}

fn scene_from_layers(p: &SynthParams, layers: &[Layer], rng: &mut impl Rng) -> Result<Scene> {
    let (clean_left, clean_right, disp_left, disp_right) = render_layers(p.height, p.width, layers);
    let beta = rng.random_range(p.beta_range.0..=p.beta_range.1);
    let airlight = rng.random_range(p.airlight_range.0..=p.airlight_range.1);
    let fog = FogParams::gray(beta, airlight);
    let fog_left = render_fog(&clean_left, &disparity_to_depth(&disp_left, &p.rig)?, &fog)?;
    let fog_right = render_fog(&clean_right, &disparity_to_depth(&disp_right, &p.rig)?, &fog)?;
    Ok(Scene {
        clean_left,
        clean_right,
        fog_left: quantize_image(fog_left),
        fog_right: quantize_image(fog_right),
        disp_left,
        disp_right,
        fog,
        rig: p.rig,
    })
}

/// RNG for scene `index` of dataset `seed`; independent of generation order.
pub fn scene_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

pub fn generate_synthetic_dataset(seed: u64, n_scenes: usize, p: &SynthParams, exec: Execution) -> Result<Vec<Scene>> {
    p.integer_disparities()?;
    map_range(exec, n_scenes, |i| generate_scene(p, &mut scene_rng(seed, i)))
        .into_iter()
        .collect()
}

/// Training and evaluation splits drawn from disjoint RNG streams.
pub fn dataset_splits(cfg: &ExperimentConfig, exec: Execution) -> Result<(Vec<Scene>, Vec<Scene>)> {
    if let Some(dir) = &cfg.dataset_dir {
        let all = read_dataset(dir)?;
        if all.len() < cfg.n_train + cfg.n_eval {
            return Err(Error::Config(format!(
                "{} holds {} scenes, need n_train + n_eval = {}",
                dir.display(),
                all.len(),
                cfg.n_train + cfg.n_eval
            )));
        }
        let mut it = all.into_iter();
        let train = it.by_ref().take(cfg.n_train).collect();
        let eval = it.take(cfg.n_eval).collect();
        return Ok((train, eval));
    }
    let p = SynthParams::from_config(cfg)?;
    let all = generate_synthetic_dataset(cfg.seed, cfg.n_train + cfg.n_eval, &p, exec)?;
    let mut it = all.into_iter();
    let train = it.by_ref().take(cfg.n_train).collect();
    Ok((train, it.collect()))
}

fn scene_dir(root: &Path, i: usize) -> PathBuf {
    root.join(format!("scene_{i:04}"))
}

fn record_for(dir: &Path, rig: CameraRig, fog: FogParams) -> SampleRecord {
    SampleRecord {
        clean_left: dir.join("left.ppm"),
        clean_right: dir.join("right.ppm"),
        fog_left: dir.join("fog_left.ppm"),
        fog_right: dir.join("fog_right.ppm"),
        disp_left: dir.join("disp_left.pfm"),
        disp_right: dir.join("disp_right.pfm"),
        meta: dir.join("meta.txt"),
        rig,
        fog,
    }
}

/// Writes scenes as `scene_NNNN/{left,right,fog_left,fog_right}.ppm`,
/// `disp_{left,right}.pfm` and `meta.txt`.
pub fn write_dataset(root: &Path, scenes: &[Scene]) -> Result<Vec<SampleRecord>> {
    let mut records = Vec::with_capacity(scenes.len());
    for (i, s) in scenes.iter().enumerate() {
        let dir = scene_dir(root, i);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let rec = record_for(&dir, s.rig, s.fog.clone());
        write_ppm(&rec.clean_left, &s.clean_left)?;
        write_ppm(&rec.clean_right, &s.clean_right)?;
        write_ppm(&rec.fog_left, &s.fog_left)?;
        write_ppm(&rec.fog_right, &s.fog_right)?;
        write_pfm(&rec.disp_left, &s.disp_left)?;
        write_pfm(&rec.disp_right, &s.disp_right)?;
        let mut meta = String::new();
        let _ = writeln!(meta, "focal_px = {}", s.rig.focal_px);
        let _ = writeln!(meta, "baseline_m = {}", s.rig.baseline_m);
        let _ = writeln!(meta, "beta = {}", s.fog.beta);
        let airlight: Vec<String> = s.fog.airlight.iter().map(|a| a.to_string()).collect();
        let _ = writeln!(meta, "airlight = {}", airlight.join(" "));
        std::fs::write(&rec.meta, meta).map_err(|e| Error::io(&rec.meta, e))?;
        records.push(rec);
    }
    Ok(records)
}

fn read_meta(path: &Path) -> Result<(CameraRig, FogParams)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (mut f, mut b, mut beta, mut air) = (None, None, None, None);
    for line in text.lines() {
        let Some((k, v)) = line.split_once('=') else { continue };
        let v = v.trim();
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("{}: bad number {s:?}", path.display())))
        };
        match k.trim() {
            "focal_px" => f = Some(num(v)?),
            "baseline_m" => b = Some(num(v)?),
            "beta" => beta = Some(num(v)?),
            "airlight" => air = Some(v.split_whitespace().map(num).collect::<Result<Vec<_>>>()?),
            _ => {}
        }
    }
    let missing = || Error::Config(format!("{}: incomplete scene metadata", path.display()));
    let rig = CameraRig::new(f.ok_or_else(missing)?, b.ok_or_else(missing)?)?;
    let fog = FogParams {
        beta: beta.ok_or_else(missing)?,
        airlight: air.ok_or_else(missing)?,
    };
    fog.validate()?;
    Ok((rig, fog))
}

/// Scene records under `root`, in directory-name order.
pub fn list_dataset(root: &Path) -> Result<Vec<SampleRecord>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("scene_")))
        .collect();
    dirs.sort();
    dirs.iter()
        .map(|d| {
            let (rig, fog) = read_meta(&d.join("meta.txt"))?;
            Ok(record_for(d, rig, fog))
        })
        .collect()
}

pub fn load_scene(rec: &SampleRecord) -> Result<Scene> {
    let scene = Scene {
        clean_left: read_ppm(&rec.clean_left)?,
        clean_right: read_ppm(&rec.clean_right)?,
        fog_left: read_ppm(&rec.fog_left)?,
        fog_right: read_ppm(&rec.fog_right)?,
        disp_left: read_pfm(&rec.disp_left)?,
        disp_right: read_pfm(&rec.disp_right)?,
        fog: rec.fog.clone(),
        rig: rec.rig,
    };
    let imgs = [&scene.clean_right, &scene.fog_left, &scene.fog_right];
    let (h, w) = (scene.clean_left.height, scene.clean_left.width);
    if imgs.iter().any(|i| !i.same_size(&scene.clean_left))
        || (scene.disp_left.height, scene.disp_left.width) != (h, w)
        || (scene.disp_right.height, scene.disp_right.width) != (h, w)
    {
        return Err(Error::shape(
            "load_scene",
            format!("{}: images and disparities differ in size", rec.meta.display()),
        ));
    }
    Ok(scene)
}

pub fn read_dataset(root: &Path) -> Result<Vec<Scene>> {
    list_dataset(root)?.iter().map(load_scene).collect()
}
