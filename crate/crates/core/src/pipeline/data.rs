//! Synthetic phantoms and the on-disk dataset layout.
//!
//! ```text
//! DIR/manifest.json   {"h","w","num_classes","class_names","spacing_mm":[r,c],
//!                      "samples":[{"id","image","mask","split"}]}
//! DIR/images/<id>.f32 raw little-endian f32, H*W values, row-major
//! DIR/masks/<id>.u8   raw u8 class ids, H*W values
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::LabelMask;
use crate::tensor::Tensor;

/// Phantom family: class 1 is an ellipse, classes `2..K-1` are ellipses
/// nested inside the previous one, and class `K` (when `K >= 2`) is a tube
/// along a quadratic curve, clipped to the outer ellipse. Later classes
/// overwrite earlier ones, so neighbouring structures share boundaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub n_samples: usize,
    pub h: usize,
    pub w: usize,
    /// Background plus structures.
    pub num_classes: usize,
    pub class_names: Vec<String>,
    /// Per foreground class, in pixels: semi-axis range for ellipses,
    /// half-thickness range for the tube.
    pub radius_ranges: Vec<[f64; 2]>,
    /// Per class including background, drawn once per sample.
    pub intensity_ranges: Vec<[f64; 2]>,
    pub noise_sigma: f64,
    pub spacing_mm: [f64; 2],
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            n_samples: 200,
            h: 64,
            w: 64,
            num_classes: 3,
            class_names: vec!["background".into(), "tissue".into(), "airway".into()],
            radius_ranges: vec![[14.0, 22.0], [3.0, 5.0]],
            intensity_ranges: vec![[0.05, 0.2], [0.4, 0.6], [0.8, 0.95]],
            noise_sigma: 0.05,
            spacing_mm: [1.0, 1.0],
            seed: 0,
        }
    }
}

/// Placement of one ellipse.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub cy: f64,
    pub cx: f64,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
}

impl Ellipse {
    pub fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.theta.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Quadratic Bezier centre line with a constant half-thickness.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tube {
    pub p0: (f64, f64),
    pub p1: (f64, f64),
    pub p2: (f64, f64),
    pub radius: f64,
}

const TUBE_SEGMENTS: usize = 64;

impl Tube {
    fn point(&self, t: f64) -> (f64, f64) {
        let u = 1.0 - t;
        (
            u * u * self.p0.0 + 2.0 * u * t * self.p1.0 + t * t * self.p2.0,
            u * u * self.p0.1 + 2.0 * u * t * self.p1.1 + t * t * self.p2.1,
        )
    }

    /// Distance to the centre line, approximated by a 64-segment polyline.
    pub fn distance(&self, y: f64, x: f64) -> f64 {
        let mut best = f64::INFINITY;
        let mut prev = self.point(0.0);
        for i in 1..=TUBE_SEGMENTS {
            let cur = self.point(i as f64 / TUBE_SEGMENTS as f64);
            let (vy, vx) = (cur.0 - prev.0, cur.1 - prev.1);
            let len2 = vy * vy + vx * vx;
            let t = if len2 > 0.0 { (((y - prev.0) * vy + (x - prev.1) * vx) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let (py, px) = (prev.0 + t * vy, prev.1 + t * vx);
            best = best.min(((y - py).powi(2) + (x - px).powi(2)).sqrt());
            prev = cur;
        }
        best
    }
}

/// Shapes of one phantom, class 1 first.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub ellipses: Vec<Ellipse>,
    pub tube: Option<Tube>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSample {
    pub image: Vec<f32>,
    pub mask: Vec<u8>,
    pub geometry: Geometry,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_samples == 0 || self.h < 8 || self.w < 8 {
            return bad(format!("need n_samples >= 1 and images of at least 8x8, got {} of {}x{}", self.n_samples, self.h, self.w));
        }
        if !(2..=255).contains(&self.num_classes) {
            return bad(format!("num_classes must be in 2..=255, got {}", self.num_classes));
        }
        let k = self.num_classes - 1;
        if self.radius_ranges.len() != k {
            return bad(format!("radius_ranges needs {k} entries, got {}", self.radius_ranges.len()));
        }
        if self.intensity_ranges.len() != self.num_classes {
            return bad(format!("intensity_ranges needs {} entries, got {}", self.num_classes, self.intensity_ranges.len()));
        }
        if !self.class_names.is_empty() && self.class_names.len() != self.num_classes {
            return bad(format!("class_names needs {} entries", self.num_classes));
        }
        let limit = 0.35 * self.h.min(self.w) as f64;
        for (i, &[lo, hi]) in self.radius_ranges.iter().enumerate() {
            let is_tube = k >= 2 && i == k - 1;
            // radius >= 1 (ellipse) or >= 0.75 (tube) guarantees a covered pixel centre
            let min = if is_tube { 0.75 } else { 1.0 };
            if !(lo >= min && hi >= lo && hi <= limit) {
                return bad(format!("radius range {i} [{lo}, {hi}] must satisfy {min} <= lo <= hi <= {limit}"));
            }
        }
        for &[lo, hi] in &self.intensity_ranges {
            if !(0.0..=1.0).contains(&lo) || !(lo..=1.0).contains(&hi) {
                return bad(format!("intensity range [{lo}, {hi}] must lie in [0, 1]"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be non-negative".into());
        }
        if !(self.spacing_mm[0] > 0.0 && self.spacing_mm[1] > 0.0) {
            return bad("spacing_mm must be positive".into());
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<String> {
        if self.class_names.is_empty() {
            (0..self.num_classes).map(|c| if c == 0 { "background".into() } else { format!("class{c}") }).collect()
        } else {
            self.class_names.clone()
        }
    }

    fn sample_rng(&self, index: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64 + 1);
        rng
    }

    fn geometry(&self, rng: &mut ChaCha8Rng) -> Geometry {
        let (h, w) = (self.h as f64, self.w as f64);
        let k = self.num_classes - 1;
        let n_ellipses = if k >= 2 { k - 1 } else { k };
        let mut ellipses: Vec<Ellipse> = Vec::with_capacity(n_ellipses);
        for i in 0..n_ellipses {
            let [lo, hi] = self.radius_ranges[i];
            let e = match ellipses.last() {
                None => Ellipse {
                    cy: h * rng.gen_range(0.35..=0.65),
                    cx: w * rng.gen_range(0.35..=0.65),
                    a: rng.gen_range(lo..=hi),
                    b: rng.gen_range(lo..=hi),
                    theta: rng.gen_range(0.0..std::f64::consts::PI),
                },
                Some(p) => {
                    let cap = 0.8 * p.a.min(p.b);
                    let a = rng.gen_range(lo..=hi).min(cap).max(lo.min(cap));
                    let b = rng.gen_range(lo..=hi).min(cap).max(lo.min(cap));
                    let room = (p.a.min(p.b) - a.max(b)).max(0.0) * 0.5;
                    Ellipse {
                        cy: p.cy + rng.gen_range(-room..=room),
                        cx: p.cx + rng.gen_range(-room..=room),
                        a,
                        b,
                        theta: rng.gen_range(0.0..std::f64::consts::PI),
                    }
                }
            };
            ellipses.push(e);
        }
        let tube = (k >= 2).then(|| {
            let [lo, hi] = self.radius_ranges[k - 1];
            let outer = ellipses[0];
            let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let reach = 0.9 * outer.a.max(outer.b);
            let p0 = (outer.cy + reach * phi.sin(), outer.cx + reach * phi.cos());
            let p2 = (outer.cy - reach * phi.sin(), outer.cx - reach * phi.cos());
            let bend = 0.5 * outer.a.min(outer.b);
            let p1 = (outer.cy + rng.gen_range(-bend..=bend), outer.cx + rng.gen_range(-bend..=bend));
            Tube { p0, p1, p2, radius: rng.gen_range(lo..=hi) }
        });
        Geometry { ellipses, tube }
    }

    /// Rasterises sample `index` by testing pixel centres.
    pub fn sample(&self, index: usize) -> PhantomSample {
        let mut rng = self.sample_rng(index);
        let geometry = self.geometry(&mut rng);
        let (h, w) = (self.h, self.w);
        let mut mask = vec![0u8; h * w];
        for y in 0..h {
            for x in 0..w {
                let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                let mut label = 0u8;
                for (i, e) in geometry.ellipses.iter().enumerate() {
                    if e.contains(py, px) {
                        label = i as u8 + 1;
                    }
                }
                if let Some(t) = &geometry.tube {
                    if geometry.ellipses[0].contains(py, px) && t.distance(py, px) <= t.radius {
                        label = (self.num_classes - 1) as u8;
                    }
                }
                mask[y * w + x] = label;
            }
        }
        let levels: Vec<f64> = self.intensity_ranges.iter().map(|&[lo, hi]| if hi > lo { rng.gen_range(lo..=hi) } else { lo }).collect();
        let image = mask
            .iter()
            .map(|&c| {
                let z: f64 = rng.sample(StandardNormal);
                (levels[c as usize] + self.noise_sigma * z).clamp(0.0, 1.0) as f32
            })
            .collect();
        PhantomSample { image, mask, geometry }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub image: String,
    pub mask: String,
    pub split: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub h: usize,
    pub w: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub spacing_mm: [f64; 2],
    pub samples: Vec<SampleEntry>,
}

/// Split sizes for `n` samples: 70 / 15 / 15 rounded, remainder to test.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (n * 70 + 50) / 100;
    let val = ((n * 15 + 50) / 100).min(n - train);
    (train, val, n - train - val)
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes the dataset for `spec` into `out_dir` and returns its manifest.
pub fn gen_phantoms(spec: &PhantomSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    spec.validate()?;
    let out = out_dir.as_ref();
    for sub in ["images", "masks"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut order: Vec<usize> = (0..spec.n_samples).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let (n_train, n_val, _) = split_sizes(spec.n_samples);
    let mut split = vec![""; spec.n_samples];
    for (rank, &i) in order.iter().enumerate() {
        split[i] = if rank < n_train {
            "train"
        } else if rank < n_train + n_val {
            "val"
        } else {
            "test"
        };
    }
    let mut samples = Vec::with_capacity(spec.n_samples);
    for (i, s) in split.iter().enumerate() {
        let id = format!("case{i:04}");
        let p = spec.sample(i);
        let image = format!("images/{id}.f32");
        let mask = format!("masks/{id}.u8");
        let bytes: Vec<u8> = p.image.iter().flat_map(|v| v.to_le_bytes()).collect();
        write(&out.join(&image), &bytes)?;
        write(&out.join(&mask), &p.mask)?;
        samples.push(SampleEntry { id, image, mask, split: s.to_string() });
    }
    let manifest = Manifest {
        h: spec.h,
        w: spec.w,
        num_classes: spec.num_classes,
        class_names: spec.class_names(),
        spacing_mm: spec.spacing_mm,
        samples,
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write(&out.join("manifest.json"), &json)?;
    Ok(manifest)
}

/// A loaded case.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    /// `[1, H, W]`
    pub image: Tensor<f32>,
    pub mask: LabelMask,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join("manifest.json");
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if manifest.h == 0 || manifest.w == 0 || !(2..=255).contains(&manifest.num_classes) {
            return Err(Error::Data(format!("manifest declares {}x{} with {} classes", manifest.h, manifest.w, manifest.num_classes)));
        }
        Ok(Dataset { root, manifest })
    }

    pub fn split(&self, split: &str) -> Vec<&SampleEntry> {
        self.manifest.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn load(&self, entry: &SampleEntry) -> Result<Sample> {
        let (h, w) = (self.manifest.h, self.manifest.w);
        let ip = self.root.join(&entry.image);
        let raw = fs::read(&ip).map_err(|e| Error::io(&ip, e))?;
        if raw.len() != 4 * h * w {
            return Err(Error::Data(format!("{}: {} bytes, expected {}", ip.display(), raw.len(), 4 * h * w)));
        }
        let pixels: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("{}: non-finite pixel", ip.display())));
        }
        let mp = self.root.join(&entry.mask);
        let classes = fs::read(&mp).map_err(|e| Error::io(&mp, e))?;
        if classes.len() != h * w {
            return Err(Error::Data(format!("{}: {} bytes, expected {}", mp.display(), classes.len(), h * w)));
        }
        let [sr, sc] = self.manifest.spacing_mm;
        let mask = LabelMask::with_spacing(h, w, classes, (sr, sc))?;
        mask.check_classes(self.manifest.num_classes).map_err(|e| Error::Data(format!("{}: {e}", mp.display())))?;
        Ok(Sample { id: entry.id.clone(), image: Tensor::new(&[1, h, w], pixels)?, mask })
    }

    pub fn load_split(&self, split: &str) -> Result<Vec<Sample>> {
        self.split(split).into_iter().map(|e| self.load(e)).collect()
    }
}
