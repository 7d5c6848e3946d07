//! Camera rays, two-pass sampling and emission-absorption rendering of a
//! canonical field seen through the head/torso warp.

mod quadrature;
mod sampling;

pub use quadrature::{integrate, render_weights, sample_weights, transpose, weighted_sum};
pub use sampling::{bin_edges, deltas, importance_samples, merge_sorted, stratified_samples};

use std::io::{Read, Write};
use std::path::Path;

use diffcore::{DiffError, Graph, ParamStore, Result, Tensor, Var};
use faceproxy::Camera;
use motionwarp::{blend_weight, sample_volume, warp_point, warp_to_canonical, Warp, WeightField, BOX_HI, BOX_LO};
use radiancefield::RadianceField;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FMAP_MAGIC: &[u8; 5] = b"FMAP1";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    /// Unit length.
    pub dir: [f64; 3],
    pub t_near: f64,
    pub t_far: f64,
    /// False when the ray misses the render bounds; it then shows background.
    pub hit: bool,
}

impl Ray {
    pub fn at(&self, t: f64) -> [f64; 3] {
        std::array::from_fn(|k| self.origin[k] + t * self.dir[k])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RayBounds {
    /// Clip each ray to the axis-aligned cube `[lo, hi]^3`.
    Box { lo: f64, hi: f64 },
    /// The same `[near, far]` for every ray.
    Fixed { near: f64, far: f64 },
}

impl Default for RayBounds {
    fn default() -> Self {
        Self::Box { lo: BOX_LO, hi: BOX_HI }
    }
}

fn clip_to_box(o: [f64; 3], d: [f64; 3], lo: f64, hi: f64) -> Option<(f64, f64)> {
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for k in 0..3 {
        if d[k].abs() < 1e-15 {
            if o[k] < lo || o[k] > hi {
                return None;
            }
            continue;
        }
        let (a, b) = ((lo - o[k]) / d[k], (hi - o[k]) / d[k]);
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    (t1 > t0).then_some((t0, t1))
}

/// One ray per pixel center, row-major (`id = row * width + col`).
pub fn gen_rays(camera: &Camera, bounds: RayBounds) -> Vec<Ray> {
    let c = camera.center();
    let origin = [c.x, c.y, c.z];
    let mut rays = Vec::with_capacity(camera.width * camera.height);
    for j in 0..camera.height {
        for i in 0..camera.width {
            let d = camera.direction(i as f64 + 0.5, j as f64 + 0.5);
            let dir = [d.x, d.y, d.z];
            let span = match bounds {
                RayBounds::Box { lo, hi } => clip_to_box(origin, dir, lo, hi),
                RayBounds::Fixed { near, far } => Some((near, far)),
            };
            rays.push(match span {
                Some((t_near, t_far)) => Ray {
                    origin,
                    dir,
                    t_near,
                    t_far,
                    hit: true,
                },
                None => Ray {
                    origin,
                    dir,
                    t_near: 0.0,
                    t_far: 1.0,
                    hit: false,
                },
            });
        }
    }
    rays
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplerConfig {
    pub n_coarse: usize,
    pub n_fine: usize,
    pub jitter: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_coarse: 32,
            n_fine: 8,
            jitter: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderConfig {
    pub sampler: SamplerConfig,
    pub bounds: RayBounds,
    /// Constant RGB background behind the rendered color.
    pub background: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            bounds: RayBounds::default(),
            background: 0.0,
        }
    }
}

/// Per-point outputs: `sigma [n]`, `feature [n, C]`, `rgb [n, 3]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FieldOutput {
    pub sigma: Var,
    pub feature: Var,
    pub rgb: Var,
}

/// A field over canonical space that the renderer can query.
pub trait CanonicalField {
    fn feature_dim(&self) -> usize;

    /// Differentiable query at `x_c: [n, 3]`.
    fn query(&self, g: &mut Graph, x_c: Var) -> Result<FieldOutput>;

    /// Density values only, used by the coarse pass.
    fn density(&self, g: &Graph, x_c: &[[f64; 3]]) -> Result<Vec<f64>>;
}

/// A [`RadianceField`] bound to one frame's planes and decoder inputs.
pub struct NeuralField<'a> {
    pub field: &'a RadianceField,
    pub store: &'a ParamStore,
    pub planes: Option<(Var, Var)>,
    pub extra: Option<Var>,
}

impl CanonicalField for NeuralField<'_> {
    fn feature_dim(&self) -> usize {
        self.field.cfg.color_channels
    }

    fn query(&self, g: &mut Graph, x_c: Var) -> Result<FieldOutput> {
        let out = self.field.query(g, self.store, self.planes, self.extra, x_c)?;
        let rgb = self.field.feature_to_rgb(g, self.store, out.color)?;
        Ok(FieldOutput {
            sigma: out.sigma,
            feature: out.color,
            rgb,
        })
    }

    fn density(&self, g: &Graph, x_c: &[[f64; 3]]) -> Result<Vec<f64>> {
        let mut scratch = Graph::new();
        let planes = self.planes.map(|(f, s)| {
            let f = scratch.constant(g.value(f).clone());
            let s = scratch.constant(g.value(s).clone());
            (f, s)
        });
        let extra = self.extra.map(|e| scratch.constant(g.value(e).clone()));
        let flat: Vec<f64> = x_c.iter().flatten().copied().collect();
        let x = scratch.constant(Tensor::new(&[x_c.len(), 3], flat)?);
        let out = self.field.query(&mut scratch, self.store, planes, extra, x)?;
        Ok(scratch.value(out.sigma).data().to_vec())
    }
}

/// How observed points reach canonical space for one frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scene {
    pub weights: WeightField,
    pub warp: Warp,
}

impl Scene {
    /// Canonical space is the observed space.
    pub fn unposed() -> Self {
        Self {
            weights: WeightField::Constant(0.0),
            warp: Warp::default(),
        }
    }
}

/// Per-ray results for a batch of `B` rays.
#[derive(Clone, Debug, PartialEq)]
pub struct RayBatch {
    /// `[B, C]`, composited over zero.
    pub feature: Var,
    /// `[B, 3]`, composited over the configured background.
    pub rgb: Var,
    /// `[B]` accumulated opacity.
    pub alpha: Var,
    /// Final (fine pass) sample positions per ray.
    pub t: Vec<Vec<f64>>,
}

/// The per-ray generator; seeded by the sampler seed and the ray id so a
/// ray's samples do not depend on how rays are batched.
pub fn ray_rng(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Render `rays` (with stable `ids`) through `scene` into `field`.
pub fn render_rays(
    g: &mut Graph,
    field: &dyn CanonicalField,
    scene: &Scene,
    rays: &[Ray],
    ids: &[u64],
    cfg: &RenderConfig,
) -> Result<RayBatch> {
    if rays.len() != ids.len() {
        return Err(DiffError::Contract(format!("{} rays but {} ids", rays.len(), ids.len())));
    }
    let sc = cfg.sampler;
    if sc.n_coarse == 0 {
        return Err(DiffError::Contract("need at least one coarse sample".into()));
    }
    let mut rngs: Vec<ChaCha8Rng> = ids.iter().map(|&id| ray_rng(sc.seed, id)).collect();
    let coarse: Vec<Vec<f64>> = rays
        .iter()
        .zip(&mut rngs)
        .map(|(r, rng)| stratified_samples(r.t_near, r.t_far, sc.n_coarse, sc.jitter.then_some(rng)))
        .collect();

    let w_values = match scene.weights {
        WeightField::Volume(v) => Some(g.value(v).clone()),
        WeightField::Constant(_) => None,
    };
    let to_canonical = |p: [f64; 3]| match (&w_values, scene.weights) {
        (Some(vol), _) => warp_point(p, |q| sample_volume(vol, q), &scene.warp),
        (None, WeightField::Constant(c)) => warp_point(p, |_| c, &scene.warp),
        (None, WeightField::Volume(_)) => unreachable!(),
    };

    let t: Vec<Vec<f64>> = if sc.n_fine == 0 {
        coarse
    } else {
        let pts: Vec<[f64; 3]> = rays
            .iter()
            .zip(&coarse)
            .flat_map(|(r, ts)| ts.iter().map(|&t| to_canonical(r.at(t))))
            .collect();
        let sigma = field.density(g, &pts)?;
        rays.iter()
            .zip(&coarse)
            .zip(sigma.chunks(sc.n_coarse))
            .zip(&mut rngs)
            .map(|(((r, ts), sig), rng)| {
                let w = if r.hit {
                    sample_weights(sig, &deltas(ts, r.t_far))
                } else {
                    vec![0.0; ts.len()]
                };
                // sample i carries the segment [t_i, t_{i+1}] in the quadrature
                let mut edges = ts.clone();
                edges.push(r.t_far.max(ts[ts.len() - 1]));
                merge_sorted(ts, &importance_samples(&edges, &w, sc.n_fine, rng))
            })
            .collect()
    };

    let s = sc.n_coarse + sc.n_fine;
    let b = rays.len();
    let mut pts = Vec::with_capacity(b * s);
    let mut delta = Vec::with_capacity(b * s);
    for (r, ts) in rays.iter().zip(&t) {
        pts.extend(ts.iter().map(|&tv| r.at(tv)));
        if r.hit {
            delta.extend(deltas(ts, r.t_far));
        } else {
            delta.extend(std::iter::repeat_n(0.0, s));
        }
    }
    let w_p = blend_weight(g, scene.weights, &pts, &scene.warp)?;
    let x_c = warp_to_canonical(g, &pts, w_p, &scene.warp)?;
    let out = field.query(g, x_c)?;
    let sigma = g.reshape(out.sigma, &[b, s])?;
    let weights = render_weights(g, sigma, Tensor::new(&[b, s], delta)?)?;
    let alpha = g.sum_last_axis(weights)?;
    let feature = weighted_sum(g, weights, out.feature)?;
    let rgb = weighted_sum(g, weights, out.rgb)?;
    let rgb = if cfg.background != 0.0 {
        let a = g.reshape(alpha, &[b, 1])?;
        let bg = g.constant(Tensor::full(&[1, 3], -cfg.background));
        let shade = g.matmul(a, bg)?;
        let shade = g.offset(shade, cfg.background);
        g.add(rgb, shade)?
    } else {
        rgb
    };
    Ok(RayBatch { feature, rgb, alpha, t })
}

/// Full-frame maps: `feature [C, H, W]`, `rgb [3, H, W]`, `mask [1, H, W]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RenderOutput {
    pub feature: Var,
    pub rgb: Var,
    pub mask: Var,
}

impl RenderOutput {
    pub fn values(&self, g: &Graph) -> (Tensor, Tensor, Tensor) {
        (
            g.value(self.feature).clone(),
            g.value(self.rgb).clone(),
            g.value(self.mask).clone(),
        )
    }
}

fn to_map(g: &mut Graph, x: Var, h: usize, w: usize) -> Result<Var> {
    let c = g.shape(x)[1];
    let t = transpose(g, x)?;
    g.reshape(t, &[c, h, w])
}

/// Render every pixel of `camera`.
pub fn render_frame(
    g: &mut Graph,
    field: &dyn CanonicalField,
    scene: &Scene,
    camera: &Camera,
    cfg: &RenderConfig,
) -> Result<RenderOutput> {
    let rays = gen_rays(camera, cfg.bounds);
    let ids: Vec<u64> = (0..rays.len() as u64).collect();
    let out = render_rays(g, field, scene, &rays, &ids, cfg)?;
    let (h, w) = (camera.height, camera.width);
    let feature = to_map(g, out.feature, h, w)?;
    let rgb = to_map(g, out.rgb, h, w)?;
    let mask = g.reshape(out.alpha, &[1, h, w])?;
    Ok(RenderOutput { feature, rgb, mask })
}

/// Raw feature map: `FMAP1`, three little-endian u32 dims, little-endian f64 data.
pub fn write_feature_map(path: &Path, map: &Tensor) -> std::io::Result<()> {
    if map.rank() != 3 {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidInput, "feature map must be [C, H, W]"));
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(FMAP_MAGIC)?;
    for &d in map.shape() {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in map.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()
}

pub fn read_feature_map(path: &Path) -> std::io::Result<Tensor> {
    let bad = |msg: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {msg}", path.display()));
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 17 || &bytes[..5] != FMAP_MAGIC {
        return Err(bad("not an FMAP1 file"));
    }
    let dims: Vec<usize> = bytes[5..17]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let body = &bytes[17..];
    if body.len() != dims.iter().product::<usize>() * 8 {
        return Err(bad("truncated feature map"));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(&dims, data).map_err(|e| bad(&e.to_string()))
}
