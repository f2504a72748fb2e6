//! Training data: ingestion of pre-cropped labeled chips, projection to the
//! canonical capture distance, stratified splitting, per-epoch batching, and
//! a procedural two-domain benchmark for desk-scale verification.
//!
//! The synthetic benchmark renders per-class geometric silhouettes (class
//! identity = shape family + ornament count) on domain-specific backgrounds.
//! The class->shape mapping is identical across domains, so labels transfer
//! across the shift by construction; poses and positions are drawn
//! independently per domain, so the two sides are unpaired.

use std::path::{Path, PathBuf};

use ndarray::{Array3, Array4, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Real;
use crate::rng::SeedStreams;
use crate::types::{Domain, ImageChip, TensorBatch};

/// One dataset row: where the chip lives plus its metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChipRecord {
    pub path: PathBuf,
    pub label: usize,
    pub domain: Domain,
    pub capture_distance_m: f64,
}

/// Train/val/test partition, as indices into the record list.
#[derive(Debug, Clone, Default)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stratified 70:15:15 split, deterministic under `seed`. Classes with
/// fewer than 3 records go wholly to train.
pub fn split_dataset(labels: &[usize], num_classes: usize, seed: u64) -> Result<DatasetSplit> {
    if labels.is_empty() {
        return Err(Error::DataEmpty {
            what: "no records to split".into(),
        });
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: l,
                num_classes,
            });
        }
        by_class[l].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::EmptyClass { class: c });
        }
    }
    let streams = SeedStreams::new(seed);
    let mut split = DatasetSplit::default();
    for (c, members) in by_class.iter().enumerate() {
        let mut order = members.clone();
        shuffle(&mut order, &mut streams.stream(&format!("split/class-{c}")));
        let n = order.len();
        if n < 3 {
            split.train.extend_from_slice(&order);
            continue;
        }
        let n_val = ((n as f64) * 0.15).round() as usize;
        let n_test = ((n as f64) * 0.15).round() as usize;
        let n_train = n - n_val - n_test;
        split.train.extend_from_slice(&order[..n_train]);
        split.val.extend_from_slice(&order[n_train..n_train + n_val]);
        split.test.extend_from_slice(&order[n_train + n_val..]);
    }
    Ok(split)
}

/// Fisher-Yates with draws from the given stream.
pub fn shuffle(items: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

/// Reproducible per-epoch order: identity when `shuffle_on` is off.
pub fn epoch_order(
    n: usize,
    streams: &SeedStreams,
    name: &str,
    epoch: usize,
    shuffle_on: bool,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle_on {
        shuffle(&mut order, &mut streams.epoch_stream(name, epoch));
    }
    order
}

/// Lazily yields every chip exactly once per epoch; the final partial batch
/// is kept.
pub struct BatchStream<'a, F: Real> {
    chips: &'a [ImageChip],
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    with_labels: bool,
    domain: Domain,
    _marker: std::marker::PhantomData<F>,
}

impl<'a, F: Real> BatchStream<'a, F> {
    pub fn new(
        chips: &'a [ImageChip],
        order: Vec<usize>,
        batch_size: usize,
        with_labels: bool,
        domain: Domain,
    ) -> Self {
        assert!(batch_size >= 1);
        assert_eq!(chips.len(), order.len());
        BatchStream {
            chips,
            order,
            pos: 0,
            batch_size,
            with_labels,
            domain,
            _marker: std::marker::PhantomData,
        }
    }

    pub fn num_batches(&self) -> usize {
        (self.order.len() + self.batch_size - 1) / self.batch_size
    }
}

impl<F: Real> Iterator for BatchStream<'_, F> {
    type Item = TensorBatch<F>;

    fn next(&mut self) -> Option<TensorBatch<F>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let refs: Vec<&ImageChip> = self.order[self.pos..end]
            .iter()
            .map(|&i| &self.chips[i])
            .collect();
        self.pos = end;
        Some(
            TensorBatch::from_chips(&refs, self.with_labels, self.domain)
                .expect("homogeneous chips"),
        )
    }
}

// ---------------------------------------------------------------------------
// Canonical-distance projection
// ---------------------------------------------------------------------------

/// Catmull-Rom cubic kernel (a = -0.5).
fn cubic_weight(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Bicubic resample of a (C, H, W) image to (C, out_h, out_w), clamping
/// source coordinates at the border.
fn bicubic_resize(src: &Array3<f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let (c, h, w) = (src.shape()[0], src.shape()[1], src.shape()[2]);
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let mut out = Array3::<f32>::zeros((c, out_h, out_w));
    for oy in 0..out_h {
        let fy = (oy as f64 + 0.5) * sy - 0.5;
        let y0 = fy.floor() as isize;
        let wy: Vec<f64> = (-1..=2).map(|k| cubic_weight(fy - (y0 + k) as f64)).collect();
        for ox in 0..out_w {
            let fx = (ox as f64 + 0.5) * sx - 0.5;
            let x0 = fx.floor() as isize;
            let wx: Vec<f64> = (-1..=2).map(|k| cubic_weight(fx - (x0 + k) as f64)).collect();
            for ci in 0..c {
                let mut acc = 0.0f64;
                for (ky, &wyv) in wy.iter().enumerate() {
                    let yy = (y0 + ky as isize - 1).clamp(0, h as isize - 1) as usize;
                    for (kx, &wxv) in wx.iter().enumerate() {
                        let xx = (x0 + kx as isize - 1).clamp(0, w as isize - 1) as usize;
                        acc += wyv * wxv * src[[ci, yy, xx]] as f64;
                    }
                }
                out[[ci, oy, ox]] = acc as f32;
            }
        }
    }
    out
}

/// Mean of the one-pixel border ring, per channel; the pad fill value.
fn border_mean(img: &Array3<f32>) -> Vec<f32> {
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let mut out = Vec::with_capacity(c);
    for ci in 0..c {
        let mut acc = 0.0f64;
        let mut n = 0usize;
        for y in 0..h {
            for x in 0..w {
                if y == 0 || y + 1 == h || x == 0 || x + 1 == w {
                    acc += img[[ci, y, x]] as f64;
                    n += 1;
                }
            }
        }
        out.push((acc / n as f64) as f32);
    }
    out
}

/// Rescale a chip so its apparent target size matches the canonical capture
/// distance (apparent size scales with 1/distance, so the resize factor is
/// capture/canonical), then center-crop or pad back to the original frame.
/// Padding uses the border-mean value rather than zero so no artificial box
/// edge is introduced.
pub fn project_to_canonical(chip: &ImageChip, canonical_distance_m: f64) -> Result<ImageChip> {
    let d = chip.capture_distance_m.ok_or(Error::MissingDistance)?;
    if !(d > 0.0) {
        return Err(Error::NonpositiveDistance { value: d });
    }
    if !(canonical_distance_m > 0.0) {
        return Err(Error::NonpositiveDistance {
            value: canonical_distance_m,
        });
    }
    let scale = d / canonical_distance_m;
    let (c, h, w) = (chip.channels(), chip.height(), chip.width());
    if (scale - 1.0).abs() < 1e-12 {
        let mut out = chip.clone();
        out.capture_distance_m = Some(canonical_distance_m);
        return Ok(out);
    }
    let new_h = ((h as f64 * scale).round() as usize).max(1);
    let new_w = ((w as f64 * scale).round() as usize).max(1);
    let resized = bicubic_resize(&chip.pixels, new_h, new_w);
    let mut out = Array3::<f32>::zeros((c, h, w));
    if new_h >= h && new_w >= w {
        let oy = (new_h - h) / 2;
        let ox = (new_w - w) / 2;
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out[[ci, y, x]] = resized[[ci, oy + y, ox + x]];
                }
            }
        }
    } else {
        let fill = border_mean(&resized);
        for ci in 0..c {
            out.index_axis_mut(Axis(0), ci).fill(fill[ci]);
        }
        let copy_h = new_h.min(h);
        let copy_w = new_w.min(w);
        let oy = (h - copy_h) / 2;
        let ox = (w - copy_w) / 2;
        let sy = (new_h - copy_h) / 2;
        let sx = (new_w - copy_w) / 2;
        for ci in 0..c {
            for y in 0..copy_h {
                for x in 0..copy_w {
                    out[[ci, oy + y, ox + x]] = resized[[ci, sy + y, sx + x]];
                }
            }
        }
    }
    // Cubic interpolation can overshoot the pixel range.
    out.mapv_inplace(|v| v.clamp(-1.0, 1.0));
    ImageChip::new(out, chip.domain, chip.label, Some(canonical_distance_m))
}

// ---------------------------------------------------------------------------
// Synthetic two-domain benchmark
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundKind {
    Flat,
    Stripes,
    Checks,
    Speckle,
}

/// Parameters of the procedural benchmark. Shift parameters apply to the
/// target side only; with everything zero and equal background kinds the two
/// domains are identically distributed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub chip_size: usize,
    /// 0 = target palette equals source palette, 1 = fully shifted
    /// (inverted brightness, cool foreground on light background).
    pub palette_shift: f64,
    /// Gaussian blur sigma (pixels) applied to target chips.
    pub blur_width: f64,
    /// Additive Gaussian noise sigma (in [-1,1] units) on target chips.
    pub noise_level: f64,
    pub background_source: BackgroundKind,
    pub background_target: BackgroundKind,
    /// Capture distances assigned round-robin; chips are rendered at the
    /// matching apparent size and projected back by the data pipeline.
    pub distances_m: Vec<f64>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_classes: 10,
            samples_per_class: 200,
            chip_size: 68,
            palette_shift: 1.0,
            blur_width: 1.0,
            noise_level: 0.06,
            background_source: BackgroundKind::Stripes,
            background_target: BackgroundKind::Checks,
            distances_m: vec![2000.0],
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| Error::InvalidSpec {
            reason: reason.into(),
        };
        if self.num_classes == 0 || self.num_classes > 10 {
            return Err(bad(
                "num_classes must be in 1..=10 (5 shape families x 2 ornament sets)",
            ));
        }
        if self.samples_per_class == 0 {
            return Err(bad("samples_per_class must be >= 1"));
        }
        if self.chip_size < 16 {
            return Err(bad("chip_size must be >= 16"));
        }
        if !(self.blur_width >= 0.0) {
            return Err(bad("blur_width must be >= 0"));
        }
        if !(self.noise_level >= 0.0) {
            return Err(bad("noise_level must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.palette_shift) {
            return Err(bad("palette_shift must be in [0, 1]"));
        }
        if self.distances_m.is_empty() || self.distances_m.iter().any(|&d| !(d > 0.0)) {
            return Err(bad("distances_m must be non-empty and positive"));
        }
        Ok(())
    }
}

const CANONICAL_RENDER_DISTANCE: f64 = 2000.0;

struct Palette {
    fg: [f64; 3],
    bg: [f64; 3],
}

fn source_palette() -> Palette {
    Palette {
        fg: [0.80, 0.68, 0.45],
        bg: [-0.55, -0.60, -0.65],
    }
}

/// Fully shifted target look: light background, dark cool foreground.
fn shifted_palette() -> Palette {
    Palette {
        fg: [-0.80, -0.62, -0.30],
        bg: [0.52, 0.56, 0.62],
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn domain_palette(domain: Domain, shift: f64) -> Palette {
    match domain {
        Domain::Source => source_palette(),
        Domain::Target => {
            let s = source_palette();
            let t = shifted_palette();
            Palette {
                fg: [
                    lerp(s.fg[0], t.fg[0], shift),
                    lerp(s.fg[1], t.fg[1], shift),
                    lerp(s.fg[2], t.fg[2], shift),
                ],
                bg: [
                    lerp(s.bg[0], t.bg[0], shift),
                    lerp(s.bg[1], t.bg[1], shift),
                    lerp(s.bg[2], t.bg[2], shift),
                ],
            }
        }
    }
}

/// Signed distance to the class shape, negative inside. `p` is relative to
/// the shape center, already un-rotated.
fn shape_sdf(family: usize, p: (f64, f64), radius: f64) -> f64 {
    let (x, y) = p;
    let r = radius;
    match family {
        // Disk.
        0 => (x * x + y * y).sqrt() - r,
        // Square.
        1 => x.abs().max(y.abs()) - 0.88 * r,
        // Equilateral triangle.
        2 => {
            let k = 3.0f64.sqrt();
            let mut px = x.abs();
            let mut py = y + r * 0.5;
            if px + k * py > 0.0 {
                let (nx, ny) = ((px - k * py) / 2.0, (-k * px - py) / 2.0);
                px = nx;
                py = ny;
            }
            px -= px.clamp(-r, 0.0);
            -(px * px + py * py).sqrt() * py.signum()
        }
        // Plus sign: union of two boxes.
        3 => {
            let band = 0.34 * r;
            let b1 = (x.abs() - r).max(y.abs() - band);
            let b2 = (x.abs() - band).max(y.abs() - r);
            b1.min(b2)
        }
        // Ring.
        4 => ((x * x + y * y).sqrt() - 0.78 * r).abs() - 0.22 * r,
        _ => unreachable!("family index"),
    }
}

fn background_value(kind: BackgroundKind, x: f64, y: f64, params: &[f64]) -> f64 {
    match kind {
        BackgroundKind::Flat => 0.0,
        BackgroundKind::Stripes => {
            (2.0 * std::f64::consts::PI * (params[0] * y + params[1])).sin()
        }
        BackgroundKind::Checks => {
            (2.0 * std::f64::consts::PI * (params[0] * (x + y) + params[1])).sin()
                * (2.0 * std::f64::consts::PI * (params[2] * (x - y) + params[3])).sin()
        }
        BackgroundKind::Speckle => {
            ((params[0] * x * 97.0 + params[1] * 7.1).sin()
                + (params[2] * y * 83.0 + params[3] * 4.3).sin())
                * 0.5
        }
    }
}

fn gaussian_blur(img: &mut Array3<f32>, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut sum = 0.0f64;
    for k in -radius..=radius {
        let v = (-(k as f64 * k as f64) / (2.0 * sigma * sigma)).exp();
        kernel.push(v);
        sum += v;
    }
    for v in kernel.iter_mut() {
        *v /= sum;
    }
    let (c, h, w) = (img.shape()[0], img.shape()[1], img.shape()[2]);
    let mut tmp = vec![0.0f64; h * w];
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (ki, &kv) in kernel.iter().enumerate() {
                    let sx = (x as isize + ki as isize - radius).clamp(0, w as isize - 1) as usize;
                    acc += kv * img[[ci, y, sx]] as f64;
                }
                tmp[y * w + x] = acc;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (ki, &kv) in kernel.iter().enumerate() {
                    let sy = (y as isize + ki as isize - radius).clamp(0, h as isize - 1) as usize;
                    acc += kv * tmp[sy * w + x];
                }
                img[[ci, y, x]] = acc as f32;
            }
        }
    }
}

/// Render one chip. All stochastic choices come from `rng`.
fn render_chip(
    class: usize,
    domain: Domain,
    spec: &SyntheticSpec,
    distance_m: f64,
    rng: &mut ChaCha8Rng,
) -> ImageChip {
    let s = spec.chip_size;
    let sf = s as f64;
    let shift = if domain == Domain::Target {
        spec.palette_shift
    } else {
        0.0
    };
    let palette = domain_palette(domain, shift);

    let family = class % 5;
    let ornaments = if class >= 5 { 3 } else { 0 };

    // Pose and jitter.
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let base_radius = sf * rng.gen_range(0.17..0.23);
    let radius = base_radius * (CANONICAL_RENDER_DISTANCE / distance_m);
    let cx = sf * 0.5 + sf * rng.gen_range(-0.08..0.08);
    let cy = sf * 0.5 + sf * rng.gen_range(-0.08..0.08);
    let fg_jit: [f64; 3] = [
        rng.gen_range(-0.08..0.08),
        rng.gen_range(-0.08..0.08),
        rng.gen_range(-0.08..0.08),
    ];
    let bg_jit: f64 = rng.gen_range(-0.06..0.06);
    let contrast = 0.10;
    let bg_params: [f64; 4] = [
        rng.gen_range(1.5..3.5),
        rng.gen_range(0.0..1.0),
        rng.gen_range(1.5..3.5),
        rng.gen_range(0.0..1.0),
    ];
    let orn_phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);

    let kind = match domain {
        Domain::Source => spec.background_source,
        Domain::Target => spec.background_target,
    };

    let aa = 1.2;
    let (sin_t, cos_t) = theta.sin_cos();
    let mut img = Array3::<f32>::zeros((3, s, s));
    for y in 0..s {
        for x in 0..s {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            // Rotate into shape frame.
            let rx = cos_t * dx + sin_t * dy;
            let ry = -sin_t * dx + cos_t * dy;
            let sdf = shape_sdf(family, (rx, ry), radius);
            let mut cov = (0.5 - sdf / aa).clamp(0.0, 1.0);
            // Ornament dots around the silhouette.
            for k in 0..ornaments {
                let ang = orn_phase + std::f64::consts::TAU * k as f64 / 3.0;
                let ox = 1.45 * radius * ang.cos();
                let oy = 1.45 * radius * ang.sin();
                let dot_r = (0.16 * radius).max(1.8);
                let dd = ((rx - ox).powi(2) + (ry - oy).powi(2)).sqrt() - dot_r;
                cov = cov.max((0.5 - dd / aa).clamp(0.0, 1.0));
            }
            let pattern = background_value(kind, x as f64 / sf, y as f64 / sf, &bg_params);
            for ci in 0..3 {
                let bg = palette.bg[ci] + bg_jit + pattern * contrast * (1.0 - 0.05 * ci as f64);
                let fg = palette.fg[ci] + fg_jit[ci];
                img[[ci, y, x]] = (bg + (fg - bg) * cov) as f32;
            }
        }
    }

    if domain == Domain::Target {
        gaussian_blur(&mut img, spec.blur_width);
        if spec.noise_level > 0.0 {
            let normal = Normal::new(0.0f64, spec.noise_level).unwrap();
            for v in img.iter_mut() {
                *v += normal.sample(rng) as f32;
            }
        }
    }
    img.mapv_inplace(|v| v.clamp(-1.0, 1.0));
    ImageChip::new(img, domain, Some(class), Some(distance_m)).expect("rendered chip valid")
}

/// Generate the unpaired two-domain benchmark: `samples_per_class` chips per
/// class per domain. Labels exist on both sides; the trainer withholds the
/// target-side ones.
pub fn make_synthetic_domains(spec: &SyntheticSpec) -> Result<(Vec<ImageChip>, Vec<ImageChip>)> {
    spec.validate()?;
    let streams = SeedStreams::new(spec.seed);
    let mut out = Vec::with_capacity(2);
    for domain in [Domain::Source, Domain::Target] {
        let mut chips = Vec::with_capacity(spec.num_classes * spec.samples_per_class);
        for class in 0..spec.num_classes {
            let mut rng = streams.stream(&format!("synthetic/{}/class-{class}", domain.as_str()));
            for idx in 0..spec.samples_per_class {
                let distance = spec.distances_m[idx % spec.distances_m.len()];
                chips.push(render_chip(class, domain, spec, distance, &mut rng));
            }
        }
        out.push(chips);
    }
    let target = out.pop().unwrap();
    let source = out.pop().unwrap();
    Ok((source, target))
}

// ---------------------------------------------------------------------------
// Disk format: PNG chips plus manifest CSV
// ---------------------------------------------------------------------------

fn chip_to_rgb8(chip: &ImageChip) -> image::RgbImage {
    let (h, w) = (chip.height(), chip.width());
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = |c: usize| {
                let v = chip.pixels[[c, y, x]];
                (((v + 1.0) * 0.5 * 255.0).round()).clamp(0.0, 255.0) as u8
            };
            img.put_pixel(x as u32, y as u32, image::Rgb([px(0), px(1), px(2)]));
        }
    }
    img
}

fn rgb8_to_pixels(img: &image::RgbImage) -> Array3<f32> {
    let (w, h) = img.dimensions();
    let mut out = Array3::<f32>::zeros((3, h as usize, w as usize));
    for y in 0..h {
        for x in 0..w {
            let p = img.get_pixel(x, y);
            for c in 0..3 {
                out[[c, y as usize, x as usize]] = p.0[c] as f32 / 255.0 * 2.0 - 1.0;
            }
        }
    }
    out
}

/// Write chips as PNGs plus a manifest CSV (`path,label,domain,distance_m`).
/// Returns the manifest path.
pub fn write_dataset(chips: &[ImageChip], dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest_path = dir.join("manifest.csv");
    let io_err = |e: csv::Error| Error::io(&manifest_path, std::io::Error::other(e));
    let mut writer = csv::Writer::from_path(&manifest_path).map_err(io_err)?;
    writer
        .write_record(["path", "label", "domain", "distance_m"])
        .map_err(io_err)?;
    let mut counters = std::collections::HashMap::<(Domain, usize), usize>::new();
    for chip in chips {
        let label = chip.label.ok_or_else(|| Error::DataEmpty {
            what: "chip without label cannot enter a labeled manifest".into(),
        })?;
        let count = counters.entry((chip.domain, label)).or_insert(0);
        let rel = format!("{}/{:02}/{:05}.png", chip.domain.as_str(), label, count);
        *count += 1;
        let path = dir.join(&rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        chip_to_rgb8(chip)
            .save(&path)
            .map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
        let distance = chip.capture_distance_m.unwrap_or(0.0);
        writer
            .write_record([
                rel.as_str(),
                &label.to_string(),
                chip.domain.as_str(),
                &format!("{distance:?}"),
            ])
            .map_err(io_err)?;
    }
    writer.flush().map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

/// Read a manifest CSV; paths are interpreted relative to its directory.
pub fn read_manifest(manifest: &Path) -> Result<Vec<ChipRecord>> {
    let io_err = |e: csv::Error| Error::io(manifest, std::io::Error::other(e));
    let mut reader = csv::Reader::from_path(manifest).map_err(io_err)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(io_err)?;
        if row.len() != 4 {
            return Err(Error::InvalidValue {
                key: "manifest".into(),
                reason: format!("expected 4 columns, got {}", row.len()),
            });
        }
        let label: usize = row[1].parse().map_err(|_| Error::InvalidValue {
            key: "manifest.label".into(),
            reason: format!("bad label `{}`", &row[1]),
        })?;
        let domain = Domain::parse(&row[2]).ok_or_else(|| Error::InvalidValue {
            key: "manifest.domain".into(),
            reason: format!("bad domain `{}`", &row[2]),
        })?;
        let distance: f64 = row[3].parse().map_err(|_| Error::InvalidValue {
            key: "manifest.distance_m".into(),
            reason: format!("bad distance `{}`", &row[3]),
        })?;
        records.push(ChipRecord {
            path: base.join(&row[0]),
            label,
            domain,
            capture_distance_m: distance,
        });
    }
    Ok(records)
}

/// Load chips for the given records, projecting each to the canonical
/// distance.
pub fn load_chips(records: &[ChipRecord], canonical_distance_m: f64) -> Result<Vec<ImageChip>> {
    let mut chips = Vec::with_capacity(records.len());
    for rec in records {
        let img = image::open(&rec.path)
            .map_err(|e| Error::io(&rec.path, std::io::Error::other(e)))?
            .to_rgb8();
        let chip = ImageChip::new(
            rgb8_to_pixels(&img),
            rec.domain,
            Some(rec.label),
            Some(rec.capture_distance_m),
        )?;
        chips.push(project_to_canonical(&chip, canonical_distance_m)?);
    }
    Ok(chips)
}

/// Images of a batch, for metric code that only needs pixels.
pub fn batch_images<F: Real>(batch: &TensorBatch<F>) -> &Array4<F> {
    &batch.images
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_chip(size: usize, value: f32, distance: f64) -> ImageChip {
        let px = Array3::from_elem((3, size, size), value);
        ImageChip::new(px, Domain::Source, Some(0), Some(distance)).unwrap()
    }

    /// Chip with a centered bright disk of the given diameter.
    fn disk_chip(size: usize, diameter: f64, distance: f64) -> ImageChip {
        let r = diameter / 2.0;
        let c = (size as f64 - 1.0) / 2.0;
        let px = Array3::from_shape_fn((3, size, size), |(_, y, x)| {
            let d = ((y as f64 - c).powi(2) + (x as f64 - c).powi(2)).sqrt();
            if d <= r {
                0.9
            } else {
                -0.9
            }
        });
        ImageChip::new(px, Domain::Source, Some(0), Some(distance)).unwrap()
    }

    fn disk_diameter(chip: &ImageChip) -> f64 {
        // Longest horizontal run of bright pixels in any row.
        let (h, w) = (chip.height(), chip.width());
        let mut best = 0usize;
        for y in 0..h {
            let mut run = 0usize;
            for x in 0..w {
                if chip.pixels[[0, y, x]] > 0.0 {
                    run += 1;
                    best = best.max(run);
                } else {
                    run = 0;
                }
            }
        }
        best as f64
    }

    #[test]
    fn projection_identity_at_canonical_distance() {
        let chip = flat_chip(32, 0.25, 2000.0);
        let out = project_to_canonical(&chip, 2000.0).unwrap();
        assert_eq!(out.pixels, chip.pixels);
        assert_eq!(out.capture_distance_m, Some(2000.0));
    }

    #[test]
    fn projection_scale_follows_pinhole_model() {
        // Captured at 1000 m the object appears 2x larger than at 2000 m,
        // so projection must shrink the image by 0.5; at 4000 m, grow by 2.
        let near = disk_chip(68, 30.0, 1000.0);
        let out = project_to_canonical(&near, 2000.0).unwrap();
        assert_eq!(out.height(), 68);
        let d = disk_diameter(&out);
        assert!((d - 15.0).abs() <= 2.0, "got {d}");

        let far = disk_chip(68, 12.0, 4000.0);
        let out = project_to_canonical(&far, 2000.0).unwrap();
        let d = disk_diameter(&out);
        assert!((d - 24.0).abs() <= 2.0, "got {d}");
    }

    #[test]
    fn projection_is_idempotent() {
        let chip = disk_chip(68, 20.0, 3500.0);
        let once = project_to_canonical(&chip, 2000.0).unwrap();
        let twice = project_to_canonical(&once, 2000.0).unwrap();
        assert_eq!(once.pixels, twice.pixels);
    }

    #[test]
    fn projection_requires_distance() {
        let mut chip = flat_chip(16, 0.0, 1000.0);
        chip.capture_distance_m = None;
        assert_eq!(
            project_to_canonical(&chip, 2000.0).unwrap_err().code(),
            "MISSING_DISTANCE"
        );
    }

    #[test]
    fn split_is_stratified_70_15_15() {
        let labels: Vec<usize> = (0..10).flat_map(|c| std::iter::repeat(c).take(100)).collect();
        let split = split_dataset(&labels, 10, 7).unwrap();
        assert_eq!(split.train.len(), 700);
        assert_eq!(split.val.len(), 150);
        assert_eq!(split.test.len(), 150);
        let mut all: Vec<usize> = split
            .train
            .iter()
            .chain(&split.val)
            .chain(&split.test)
            .copied()
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn split_deterministic_and_seed_sensitive() {
        let labels: Vec<usize> = (0..4).flat_map(|c| std::iter::repeat(c).take(25)).collect();
        let a = split_dataset(&labels, 4, 3).unwrap();
        let b = split_dataset(&labels, 4, 3).unwrap();
        let c = split_dataset(&labels, 4, 4).unwrap();
        assert_eq!(a.train, b.train);
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn degenerate_class_goes_to_train() {
        let mut labels: Vec<usize> = (0..3).flat_map(|c| std::iter::repeat(c).take(30)).collect();
        labels.push(3); // single record in class 3
        let split = split_dataset(&labels, 4, 0).unwrap();
        assert!(split.train.contains(&90));
    }

    #[test]
    fn missing_class_is_an_error() {
        let labels = vec![0usize, 0, 1, 1];
        assert_eq!(
            split_dataset(&labels, 3, 0).unwrap_err().code(),
            "EMPTY_CLASS"
        );
    }

    #[test]
    fn batch_sizes_follow_arithmetic() {
        let spec = SyntheticSpec {
            num_classes: 2,
            samples_per_class: 25,
            chip_size: 16,
            ..SyntheticSpec::default()
        };
        let (source, _) = make_synthetic_domains(&spec).unwrap();
        assert_eq!(source.len(), 50);
        let order: Vec<usize> = (0..source.len()).collect();
        let stream = BatchStream::<f32>::new(&source, order, 16, true, Domain::Source);
        let sizes: Vec<usize> = stream.map(|b| b.len()).collect();
        assert_eq!(sizes, vec![16, 16, 16, 2]);
    }

    #[test]
    fn unshuffled_order_is_input_order() {
        let streams = SeedStreams::new(5);
        let order = epoch_order(6, &streams, "x", 0, false);
        assert_eq!(order, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn epoch_orders_differ_but_reproduce() {
        let streams = SeedStreams::new(5);
        let e0 = epoch_order(50, &streams, "shuffle/train", 0, true);
        let e1 = epoch_order(50, &streams, "shuffle/train", 1, true);
        assert_ne!(e0, e1);
        let again = epoch_order(50, &streams, "shuffle/train", 0, true);
        assert_eq!(e0, again);
    }

    #[test]
    fn synthetic_counts_and_determinism() {
        let spec = SyntheticSpec {
            num_classes: 10,
            samples_per_class: 5,
            chip_size: 20,
            ..SyntheticSpec::default()
        };
        let (s1, t1) = make_synthetic_domains(&spec).unwrap();
        assert_eq!(s1.len(), 50);
        assert_eq!(t1.len(), 50);
        for c in 0..10 {
            assert_eq!(s1.iter().filter(|ch| ch.label == Some(c)).count(), 5);
            assert_eq!(t1.iter().filter(|ch| ch.label == Some(c)).count(), 5);
        }
        let (s2, t2) = make_synthetic_domains(&spec).unwrap();
        assert_eq!(s1[7].pixels, s2[7].pixels);
        assert_eq!(t1[33].pixels, t2[33].pixels);
    }

    #[test]
    fn invalid_spec_rejected() {
        let spec = SyntheticSpec {
            num_classes: 11,
            ..SyntheticSpec::default()
        };
        assert_eq!(
            make_synthetic_domains(&spec).unwrap_err().code(),
            "INVALID_SPEC"
        );
    }

    #[test]
    fn dataset_round_trips_through_disk() {
        let spec = SyntheticSpec {
            num_classes: 3,
            samples_per_class: 2,
            chip_size: 16,
            ..SyntheticSpec::default()
        };
        let (source, target) = make_synthetic_domains(&spec).unwrap();
        let all: Vec<ImageChip> = source.into_iter().chain(target).collect();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_dataset(&all, dir.path()).unwrap();
        let records = read_manifest(&manifest).unwrap();
        assert_eq!(records.len(), 12);
        let chips = load_chips(&records, 2000.0).unwrap();
        assert_eq!(chips.len(), 12);
        // 8-bit quantization: round trip within half a step.
        for (a, b) in all.iter().zip(chips.iter()) {
            let max_err = a
                .pixels
                .iter()
                .zip(b.pixels.iter())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f32, f32::max);
            assert!(max_err <= 1.0 / 255.0 + 1e-6, "max_err {max_err}");
            assert_eq!(a.label, b.label);
            assert_eq!(a.domain, b.domain);
        }
    }
}
