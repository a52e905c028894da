//! Dataset plumbing: depth-map discretization, scene splitting, synthetic
//! scene generation, and patch/label pair production for training.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::formats;
use crate::grid::Grid;
use crate::learner::PatchSource;
use crate::optics::{depth_to_blur_size, CameraConfig};
use crate::sim::BlurSizeMap;

/// An all-focus image with either metric depth or an already-discretized
/// blur-size map.
#[derive(Clone, Debug)]
pub struct Scene {
    pub id: String,
    pub image: Grid,
    pub depth: DepthInfo,
}

#[derive(Clone, Debug)]
pub enum DepthInfo {
    /// Per-pixel depth in meters.
    Meters(Grid),
    Sizes(BlurSizeMap),
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        let (dh, dw) = match &self.depth {
            DepthInfo::Meters(g) => (g.h(), g.w()),
            DepthInfo::Sizes(m) => (m.h(), m.w()),
        };
        if (self.image.h(), self.image.w()) != (dh, dw) {
            return Err(Error::InvalidArgument(format!(
                "scene {}: image {}x{} and depth {dh}x{dw} differ",
                self.id,
                self.image.h(),
                self.image.w()
            )));
        }
        Ok(())
    }

    /// The blur-size map, discretizing metric depth on demand.
    pub fn size_map(&self, cam: &CameraConfig) -> Result<BlurSizeMap> {
        match &self.depth {
            DepthInfo::Meters(g) => discretize_depth(g, cam),
            DepthInfo::Sizes(m) => {
                m.validate_against(cam)?;
                Ok(m.clone())
            }
        }
    }
}

/// Elementwise thin-lens discretization of a metric depth map.
pub fn discretize_depth(depth: &Grid, cam: &CameraConfig) -> Result<BlurSizeMap> {
    let mut sizes = Vec::with_capacity(depth.len());
    for r in 0..depth.h() {
        for c in 0..depth.w() {
            let s = depth_to_blur_size(depth[(r, c)], cam).map_err(|e| {
                Error::InvalidArgument(format!("depth at pixel ({r}, {c}): {e}"))
            })?;
            sizes.push(s as u8);
        }
    }
    BlurSizeMap::new(depth.h(), depth.w(), sizes)
}

/// Depth (meters) whose blur disc discretizes to exactly size `s`.
///
/// Inverts the thin-lens mapping for a target blur radius of `(s - 1) / 2`
/// pixels; `far_side` picks the branch beyond the focal plane.
pub fn depth_for_size(s: usize, cam: &CameraConfig, far_side: bool) -> Result<f64> {
    cam.validate()?;
    if s % 2 == 0 || s == 0 || s > cam.max_kernel_size {
        return Err(Error::InvalidArgument(format!(
            "size {s} not in the odd range [1, {}]",
            cam.max_kernel_size
        )));
    }
    if s == 1 {
        return Ok(cam.focus_distance_m);
    }
    let f = cam.focal_length_m();
    let a = cam.aperture_diameter_m();
    let target_diameter = (s - 1) as f64 * cam.pixel_pitch_m();
    let numerator = a * f * cam.focus_distance_m;
    let lever = target_diameter * (cam.focus_distance_m - f);
    let depth = if far_side {
        if lever >= a * f {
            return Err(Error::InvalidArgument(format!(
                "size {s} is unreachable beyond the focal plane for this camera"
            )));
        }
        numerator / (a * f - lever)
    } else {
        numerator / (a * f + lever)
    };
    Ok(depth)
}

/// Seeded 60/20/20-style split fractions.
#[derive(Clone, Copy, Debug)]
pub struct SplitSpec {
    pub fractions: (f64, f64, f64),
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self> {
        let spec = SplitSpec {
            fractions: (train, val, test),
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b, c) = self.fractions;
        for v in [a, b, c] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "split fraction {v} outside [0, 1]"
                )));
            }
        }
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "split fractions sum to {}, expected 1",
                a + b + c
            )));
        }
        Ok(())
    }
}

/// Seeded shuffle followed by contiguous partition at rounded boundaries.
/// The three parts are disjoint and exhaustive.
pub fn split(mut scenes: Vec<Scene>, spec: &SplitSpec) -> Result<(Vec<Scene>, Vec<Scene>, Vec<Scene>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = scenes.len();
    // Fisher-Yates
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        scenes.swap(i, j);
    }
    let (f_train, f_val, _) = spec.fractions;
    let b1 = ((n as f64) * f_train).round() as usize;
    let b2 = ((n as f64) * (f_train + f_val)).round() as usize;
    let b1 = b1.min(n);
    let b2 = b2.clamp(b1, n);
    let test = scenes.split_off(b2);
    let val = scenes.split_off(b1);
    Ok((scenes, val, test))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// Vertical bands, one per depth.
    Planes,
    /// Per-row depth ramp from the first to the last depth.
    Slant,
    /// Horizontal bands, one per depth.
    Steps,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Texture {
    Noise,
    Stripes,
    Checker,
    Flat,
}

#[derive(Clone, Debug)]
pub struct SceneSpec {
    pub layout: Layout,
    pub depths: Vec<f64>,
    pub texture: Texture,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
}

impl SceneSpec {
    pub fn new(layout: Layout, depths: Vec<f64>, texture: Texture, seed: u64) -> Self {
        SceneSpec {
            layout,
            depths,
            texture,
            seed,
            height: 160,
            width: 160,
        }
    }
}

/// Deterministic synthetic scene: piecewise-constant (or ramped) depth
/// regions under the requested texture.
pub fn make_synthetic_scene(spec: &SceneSpec) -> Result<Scene> {
    if spec.depths.is_empty() {
        return Err(Error::InvalidArgument("depth list is empty".into()));
    }
    if spec.height == 0 || spec.width == 0 {
        return Err(Error::InvalidArgument("scene dimensions must be positive".into()));
    }
    let (h, w) = (spec.height, spec.width);
    let bands = spec.depths.len();
    let depth = match spec.layout {
        Layout::Planes => Grid::from_fn(h, w, |_, c| {
            spec.depths[(c * bands / w).min(bands - 1)]
        }),
        Layout::Steps => Grid::from_fn(h, w, |r, _| {
            spec.depths[(r * bands / h).min(bands - 1)]
        }),
        Layout::Slant => {
            let first = spec.depths[0];
            let last = *spec.depths.last().unwrap();
            Grid::from_fn(h, w, |r, _| {
                let t = if h > 1 { r as f64 / (h - 1) as f64 } else { 0.0 };
                first + (last - first) * t
            })
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let image = match spec.texture {
        Texture::Noise => natural_noise(h, w, &mut rng),
        Texture::Flat => Grid::filled(h, w, 0.5),
        Texture::Stripes => {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
            let period: f64 = rng.random_range(5.0..11.0);
            let phase: f64 = rng.random_range(0.0..period);
            let (dx, dy) = (angle.cos(), angle.sin());
            Grid::from_fn(h, w, |r, c| {
                let u = (r as f64 * dy + c as f64 * dx + phase) / period;
                if u.rem_euclid(1.0) < 0.5 {
                    0.2
                } else {
                    0.8
                }
            })
        }
        Texture::Checker => {
            let cell: usize = rng.random_range(3..8);
            let (or, oc): (usize, usize) = (rng.random_range(0..cell), rng.random_range(0..cell));
            Grid::from_fn(h, w, |r, c| {
                if ((r + or) / cell + (c + oc) / cell) % 2 == 0 {
                    0.2
                } else {
                    0.8
                }
            })
        }
    };

    Ok(Scene {
        id: format!(
            "{:?}-{:?}-{}",
            spec.layout, spec.texture, spec.seed
        )
        .to_lowercase(),
        image,
        depth: DepthInfo::Meters(depth),
    })
}

/// Noise with a natural-image-like `1/f` amplitude spectrum, rescaled to
/// [0, 1]. White noise is spectrally flat and makes blur-size cues equally
/// visible at every frequency, which real photographs are not.
fn natural_noise(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Grid {
    let white = Grid::from_fn(h, w, |_, _| rng.random_range(-1.0..1.0));
    let mut spec = crate::fft2::dft2(&white);
    for u in 0..h {
        for v in 0..w {
            let su = (std::f64::consts::PI * u as f64 / h as f64).sin();
            let sv = (std::f64::consts::PI * v as f64 / w as f64).sin();
            // |first difference| = 2 sin(pi f); 0.05 keeps DC finite
            let mag = (4.0 * su * su + 4.0 * sv * sv).sqrt();
            spec[u * w + v] *= 1.0 / (mag + 0.05);
        }
    }
    let g = crate::fft2::idft2_real(&spec, h, w);
    let (lo, hi) = (g.min(), g.max());
    g.map(|v| (v - lo) / (hi - lo))
}

// ---------------------------------------------------------------------------
// patch pools
// ---------------------------------------------------------------------------

struct PoolScene {
    image: Grid,
    sizes: BlurSizeMap,
    /// Anchors whose patch window has a single constant blur size.
    anchors: Vec<(u32, u32)>,
}

/// Pre-indexed set of scenes for uniform patch/label sampling. Patches that
/// straddle depth discontinuities are excluded (the blur size must be
/// constant over the window); scenes with no valid window are skipped with
/// a warning on stderr.
pub struct PatchPool {
    patch: usize,
    scenes: Vec<PoolScene>,
}

/// Per-row then per-column sliding min/max over a `k`-wide window.
fn window_extrema(values: &[u8], h: usize, w: usize, k: usize) -> (Vec<u8>, Vec<u8>) {
    fn pass_1d(src: &[u8], n: usize, k: usize, out_min: &mut [u8], out_max: &mut [u8]) {
        let mut min_q: std::collections::VecDeque<usize> = Default::default();
        let mut max_q: std::collections::VecDeque<usize> = Default::default();
        for i in 0..n {
            while let Some(&b) = min_q.back() {
                if src[b] >= src[i] {
                    min_q.pop_back();
                } else {
                    break;
                }
            }
            min_q.push_back(i);
            while let Some(&b) = max_q.back() {
                if src[b] <= src[i] {
                    max_q.pop_back();
                } else {
                    break;
                }
            }
            max_q.push_back(i);
            if i + 1 >= k {
                let start = i + 1 - k;
                while *min_q.front().unwrap() < start {
                    min_q.pop_front();
                }
                while *max_q.front().unwrap() < start {
                    max_q.pop_front();
                }
                out_min[start] = src[*min_q.front().unwrap()];
                out_max[start] = src[*max_q.front().unwrap()];
            }
        }
    }

    let out_w = w + 1 - k;
    let out_h = h + 1 - k;
    // horizontal pass
    let mut row_min = vec![0u8; h * out_w];
    let mut row_max = vec![0u8; h * out_w];
    let mut buf_min = vec![0u8; w];
    let mut buf_max = vec![0u8; w];
    for r in 0..h {
        pass_1d(&values[r * w..(r + 1) * w], w, k, &mut buf_min, &mut buf_max);
        row_min[r * out_w..(r + 1) * out_w].copy_from_slice(&buf_min[..out_w]);
        row_max[r * out_w..(r + 1) * out_w].copy_from_slice(&buf_max[..out_w]);
    }
    // vertical pass
    let mut out_min = vec![0u8; out_h * out_w];
    let mut out_max = vec![0u8; out_h * out_w];
    let mut col_src = vec![0u8; h];
    let mut col_min = vec![0u8; h];
    let mut col_max = vec![0u8; h];
    for c in 0..out_w {
        for r in 0..h {
            col_src[r] = row_min[r * out_w + c];
        }
        pass_1d(&col_src, h, k, &mut col_min, &mut col_max);
        for r in 0..out_h {
            out_min[r * out_w + c] = col_min[r];
        }
        for r in 0..h {
            col_src[r] = row_max[r * out_w + c];
        }
        pass_1d(&col_src, h, k, &mut col_min, &mut col_max);
        for r in 0..out_h {
            out_max[r * out_w + c] = col_max[r];
        }
    }
    (out_min, out_max)
}

impl PatchPool {
    pub fn build(scenes: &[Scene], cam: &CameraConfig, patch: usize) -> Result<Self> {
        let mut pool = Vec::new();
        for scene in scenes {
            scene.validate()?;
            let sizes = scene.size_map(cam)?;
            if scene.image.h() < patch || scene.image.w() < patch {
                eprintln!(
                    "warning: scene {} ({}x{}) smaller than patch {patch}, skipped",
                    scene.id,
                    scene.image.h(),
                    scene.image.w()
                );
                continue;
            }
            let (mins, maxs) =
                window_extrema(sizes.sizes(), sizes.h(), sizes.w(), patch);
            let out_w = sizes.w() + 1 - patch;
            let anchors: Vec<(u32, u32)> = mins
                .iter()
                .zip(&maxs)
                .enumerate()
                .filter(|(_, (lo, hi))| lo == hi)
                .map(|(i, _)| ((i / out_w) as u32, (i % out_w) as u32))
                .collect();
            if anchors.is_empty() {
                eprintln!(
                    "warning: scene {} has no constant-blur {patch}x{patch} window, skipped",
                    scene.id
                );
                continue;
            }
            pool.push(PoolScene {
                image: scene.image.clone(),
                sizes,
                anchors,
            });
        }
        if pool.is_empty() {
            return Err(Error::InvalidArgument(
                "no scene offers a constant-blur patch window".into(),
            ));
        }
        Ok(PatchPool {
            patch,
            scenes: pool,
        })
    }

    pub fn scene_count(&self) -> usize {
        self.scenes.len()
    }

    pub fn patch_side(&self) -> usize {
        self.patch
    }
}

impl PatchSource for PatchPool {
    fn draw(&self, rng: &mut ChaCha8Rng) -> (Grid, usize) {
        let scene = &self.scenes[rng.random_range(0..self.scenes.len())];
        let (r, c) = scene.anchors[rng.random_range(0..scene.anchors.len())];
        let (r, c) = (r as usize, c as usize);
        let window = scene.image.window(r, c, self.patch, self.patch);
        let label = scene.sizes.get(r + self.patch / 2, c + self.patch / 2);
        (window, label)
    }
}

/// Seeded iterator of (all-focus patch, blur-size label) pairs.
pub struct PatchStream {
    pool: PatchPool,
    rng: ChaCha8Rng,
}

impl Iterator for PatchStream {
    type Item = (Grid, usize);
    fn next(&mut self) -> Option<Self::Item> {
        Some(self.pool.draw(&mut self.rng))
    }
}

/// Uniformly samples a scene, then a constant-blur anchor within it.
pub fn patch_label_stream(
    scenes: &[Scene],
    cam: &CameraConfig,
    patch: usize,
    seed: u64,
) -> Result<PatchStream> {
    Ok(PatchStream {
        pool: PatchPool::build(scenes, cam, patch)?,
        rng: ChaCha8Rng::seed_from_u64(seed),
    })
}

// ---------------------------------------------------------------------------
// scene directories
// ---------------------------------------------------------------------------

/// Writes `<id>_image.pgm` plus `<id>_depth.txt` into `dir`.
pub fn save_scene(dir: &Path, scene: &Scene) -> Result<()> {
    scene.validate()?;
    formats::write_pgm(&dir.join(format!("{}_image.pgm", scene.id)), &scene.image)?;
    match &scene.depth {
        DepthInfo::Meters(g) => {
            formats::write_depth_text(&dir.join(format!("{}_depth.txt", scene.id)), g)?
        }
        DepthInfo::Sizes(m) => {
            formats::write_size_map(&dir.join(format!("{}_sizes.txt", scene.id)), m)?
        }
    }
    Ok(())
}

/// Loads every `<id>_image.pgm`/`<id>_image.png` with its paired
/// `<id>_depth.txt` or `<id>_sizes.txt`, ordered by id.
pub fn load_scene_dir(dir: &Path) -> Result<Vec<Scene>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        for ext in ["pgm", "png"] {
            if let Some(id) = name.strip_suffix(&format!("_image.{ext}")) {
                ids.push((id.to_string(), ext));
            }
        }
    }
    ids.sort();
    let mut scenes = Vec::with_capacity(ids.len());
    for (id, ext) in ids {
        let image = formats::read_gray_auto(&dir.join(format!("{id}_image.{ext}")))?;
        let depth_path = dir.join(format!("{id}_depth.txt"));
        let sizes_path = dir.join(format!("{id}_sizes.txt"));
        let depth = if depth_path.exists() {
            DepthInfo::Meters(formats::read_depth_text(&depth_path)?)
        } else if sizes_path.exists() {
            DepthInfo::Sizes(formats::read_size_map(&sizes_path)?)
        } else {
            return Err(Error::InvalidArgument(format!(
                "scene {id}: no depth or size file next to the image"
            )));
        };
        let scene = Scene { id, image, depth };
        scene.validate()?;
        scenes.push(scene);
    }
    Ok(scenes)
}

/// One scene id per line.
pub fn save_id_list(path: &Path, scenes: &[Scene]) -> Result<()> {
    let text: String = scenes.iter().map(|s| format!("{}\n", s.id)).collect();
    std::fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn two_plane_spec(seed: u64) -> SceneSpec {
        SceneSpec {
            layout: Layout::Planes,
            depths: vec![1.0, 1.3],
            texture: Texture::Noise,
            seed,
            height: 96,
            width: 96,
        }
    }

    #[test]
    fn focus_plane_discretizes_to_one() {
        let cam = CameraConfig::default();
        let depth = Grid::filled(8, 8, cam.focus_distance_m);
        let map = discretize_depth(&depth, &cam).unwrap();
        assert!(map.sizes().iter().all(|&s| s == 1));
    }

    #[test]
    fn mixed_depths_match_per_pixel_oracle() {
        let cam = CameraConfig::default();
        let depth = Grid::from_fn(6, 7, |r, c| 0.5 + 0.13 * (r * 7 + c) as f64);
        let map = discretize_depth(&depth, &cam).unwrap();
        for r in 0..6 {
            for c in 0..7 {
                assert_eq!(
                    map.get(r, c),
                    depth_to_blur_size(depth[(r, c)], &cam).unwrap()
                );
            }
        }
    }

    #[test]
    fn invalid_depth_error_names_the_pixel() {
        let cam = CameraConfig::default();
        let mut depth = Grid::filled(4, 4, 1.0);
        depth[(2, 3)] = 0.01;
        match discretize_depth(&depth, &cam) {
            Err(Error::InvalidArgument(msg)) => assert!(msg.contains("(2, 3)"), "{msg}"),
            other => panic!("expected error, got {other:?}"),
        }
    }

    #[test]
    fn depth_for_size_inverts_the_thin_lens() {
        let cam = CameraConfig::default();
        for s in [1usize, 3, 5, 7, 9, 11, 13] {
            for far in [true, false] {
                let d = depth_for_size(s, &cam, far).unwrap();
                assert_eq!(depth_to_blur_size(d, &cam).unwrap(), s, "s={s} far={far}");
            }
        }
    }

    #[test]
    fn split_sizes_and_determinism() {
        let scenes: Vec<Scene> = (0..10)
            .map(|i| make_synthetic_scene(&two_plane_spec(i)).unwrap())
            .collect();
        let spec = SplitSpec::new(0.6, 0.2, 0.2, 7).unwrap();
        let (train, val, test) = split(scenes.clone(), &spec).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (6, 2, 2));

        // disjoint and exhaustive
        let mut ids: Vec<&str> = train
            .iter()
            .chain(&val)
            .chain(&test)
            .map(|s| s.id.as_str())
            .collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 10);

        let (train2, val2, test2) = split(scenes.clone(), &spec).unwrap();
        assert_eq!(
            train.iter().map(|s| &s.id).collect::<Vec<_>>(),
            train2.iter().map(|s| &s.id).collect::<Vec<_>>()
        );
        assert_eq!(val.len(), val2.len());
        assert_eq!(test.len(), test2.len());

        let all = SplitSpec::new(1.0, 0.0, 0.0, 3).unwrap();
        let (train, val, test) = split(scenes, &all).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (10, 0, 0));
    }

    #[test]
    fn flat_scene_at_focus_is_all_ones_after_discretization() {
        let cam = CameraConfig::default();
        let spec = SceneSpec {
            layout: Layout::Planes,
            depths: vec![cam.focus_distance_m],
            texture: Texture::Flat,
            seed: 1,
            height: 64,
            width: 64,
        };
        let scene = make_synthetic_scene(&spec).unwrap();
        let map = scene.size_map(&cam).unwrap();
        assert!(map.sizes().iter().all(|&s| s == 1));
    }

    #[test]
    fn two_plane_scene_has_two_sizes() {
        let cam = CameraConfig::default();
        let scene = make_synthetic_scene(&two_plane_spec(5)).unwrap();
        let map = scene.size_map(&cam).unwrap();
        let mut distinct: Vec<u8> = map.sizes().to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        assert_eq!(distinct.len(), 2);
    }

    #[test]
    fn synthetic_scenes_are_seed_deterministic() {
        let a = make_synthetic_scene(&two_plane_spec(9)).unwrap();
        let b = make_synthetic_scene(&two_plane_spec(9)).unwrap();
        assert_eq!(a.image, b.image);
        let c = make_synthetic_scene(&two_plane_spec(10)).unwrap();
        assert!(a.image.max_abs_diff(&c.image) > 0.0);
    }

    #[test]
    fn empty_depth_list_is_rejected() {
        let spec = SceneSpec {
            depths: vec![],
            ..two_plane_spec(0)
        };
        assert!(make_synthetic_scene(&spec).is_err());
    }

    #[test]
    fn stream_labels_on_constant_scene() {
        let cam = CameraConfig::default();
        let spec = SceneSpec {
            layout: Layout::Planes,
            depths: vec![1.3],
            texture: Texture::Noise,
            seed: 3,
            height: 64,
            width: 64,
        };
        let scene = make_synthetic_scene(&spec).unwrap();
        let expect = depth_to_blur_size(1.3, &cam).unwrap();
        let stream = patch_label_stream(&[scene], &cam, 32, 4).unwrap();
        for (patch, label) in stream.take(50) {
            assert_eq!(label, expect);
            assert_eq!((patch.h(), patch.w()), (32, 32));
        }
    }

    #[test]
    fn stream_is_seed_deterministic() {
        let cam = CameraConfig::default();
        let scenes: Vec<Scene> = (0..3)
            .map(|i| make_synthetic_scene(&two_plane_spec(20 + i)).unwrap())
            .collect();
        let a: Vec<(Grid, usize)> =
            patch_label_stream(&scenes, &cam, 32, 5).unwrap().take(20).collect();
        let b: Vec<(Grid, usize)> =
            patch_label_stream(&scenes, &cam, 32, 5).unwrap().take(20).collect();
        for ((pa, la), (pb, lb)) in a.iter().zip(&b) {
            assert_eq!(la, lb);
            assert_eq!(pa, pb);
        }
    }

    #[test]
    fn labels_match_discretized_center() {
        let cam = CameraConfig::default();
        let scenes: Vec<Scene> = (0..2)
            .map(|i| make_synthetic_scene(&two_plane_spec(30 + i)).unwrap())
            .collect();
        let maps: Vec<BlurSizeMap> =
            scenes.iter().map(|s| s.size_map(&cam).unwrap()).collect();
        let pool = PatchPool::build(&scenes, &cam, 32).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let (patch, label) = pool.draw(&mut rng);
            // find which scene the patch came from by matching the window
            let found = scenes.iter().zip(&maps).any(|(scene, map)| {
                for r in 0..scene.image.h() - 31 {
                    for c in 0..scene.image.w() - 31 {
                        if scene.image.window(r, c, 32, 32) == patch {
                            return map.get(r + 16, c + 16) == label;
                        }
                    }
                }
                false
            });
            assert!(found);
        }
    }

    #[test]
    fn balanced_two_plane_histogram() {
        let cam = CameraConfig::default();
        // equal-width bands, label histogram within 5% of 50/50
        let scene = make_synthetic_scene(&two_plane_spec(40)).unwrap();
        let stream = patch_label_stream(&[scene], &cam, 32, 7).unwrap();
        let labels: Vec<usize> = stream.take(10_000).map(|(_, l)| l).collect();
        let mut distinct: Vec<usize> = labels.clone();
        distinct.sort_unstable();
        distinct.dedup();
        assert_eq!(distinct.len(), 2);
        let first = labels.iter().filter(|&&l| l == distinct[0]).count() as f64 / 10_000.0;
        assert!((first - 0.5).abs() < 0.05, "fraction {first}");
    }

    #[test]
    fn flat_scene_with_no_window_is_skipped() {
        let cam = CameraConfig::default();
        // slanted depth sweeping all size classes in ~9-row bands: every
        // 32x32 window spans several sizes, so no anchor survives
        let spec = SceneSpec {
            layout: Layout::Slant,
            depths: vec![0.83, 1.0],
            texture: Texture::Noise,
            seed: 50,
            height: 64,
            width: 64,
        };
        let steep = make_synthetic_scene(&spec).unwrap();
        let ok = make_synthetic_scene(&two_plane_spec(51)).unwrap();
        let pool = PatchPool::build(&[steep, ok], &cam, 32).unwrap();
        assert_eq!(pool.scene_count(), 1);
    }

    #[test]
    fn scene_directory_round_trip() {
        let cam = CameraConfig::default();
        let dir = tempdir().unwrap();
        let scenes: Vec<Scene> = (0..3)
            .map(|i| make_synthetic_scene(&two_plane_spec(60 + i)).unwrap())
            .collect();
        for scene in &scenes {
            save_scene(dir.path(), scene).unwrap();
        }
        let back = load_scene_dir(dir.path()).unwrap();
        assert_eq!(back.len(), 3);
        for scene in &back {
            // depth text is lossless, image quantized to 8 bits
            let original = scenes.iter().find(|s| s.id == scene.id).unwrap();
            assert!(scene.image.max_abs_diff(&original.image) <= 0.5 / 255.0 + 1e-12);
            assert_eq!(
                scene.size_map(&cam).unwrap(),
                original.size_map(&cam).unwrap()
            );
        }
    }
}
