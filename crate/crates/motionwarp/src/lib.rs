//! Separating head motion from torso motion. A weight volume over the
//! canonical box marks what belongs to the head; observed points are pulled
//! back to canonical space by blending the inverse head transform with the
//! (normally static) torso transform.

use std::io::{Read, Write};
use std::path::Path;

use diffcore::nn::Conv3d;
use diffcore::{trilinear_sample, DiffError, Graph, ParamStore, Result, Tensor, Var};
use faceproxy::HeadPose;
use nalgebra::{Matrix3, Vector3};
use rand::Rng;

/// Guard in the blend-weight denominator.
pub const BLEND_EPS: f64 = 1e-6;
/// The canonical box is `[BOX_LO, BOX_HI]^3`.
pub const BOX_LO: f64 = -1.0;
pub const BOX_HI: f64 = 1.0;

const WVOL_MAGIC: &[u8; 5] = b"WVOL1";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rigid {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Torso motion; identity unless configured.
pub type TorsoTransform = Rigid;

impl Default for Rigid {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rigid {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Observed-to-canonical map of a head posed by `pose`.
    pub fn head_inverse(pose: &HeadPose) -> Self {
        let (rotation, translation) = pose.inverse();
        Self { rotation, translation }
    }

    pub fn apply(&self, x: [f64; 3]) -> [f64; 3] {
        let y = self.rotation * Vector3::from(x) + self.translation;
        [y.x, y.y, y.z]
    }
}

/// Head and torso transforms applied to observed points.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Warp {
    pub head: Rigid,
    pub torso: TorsoTransform,
}

impl Warp {
    pub fn new(pose: &HeadPose, torso: TorsoTransform) -> Self {
        Self {
            head: Rigid::head_inverse(pose),
            torso,
        }
    }
}

/// Decodes a constant random seed grid into the `D^3` weight volume.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightVolumeGenerator {
    pub seed: Tensor,
    pub blocks: Vec<Conv3d>,
    pub head: Conv3d,
}

const SEED_CHANNELS: usize = 8;
const BLOCK_CHANNELS: [usize; 3] = [8, 8, 8];

impl WeightVolumeGenerator {
    /// Three upsample-and-convolve blocks from a `2^3` seed give `D = 16`.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        let seed = Tensor::randn(&[SEED_CHANNELS, 2, 2, 2], 1.0, rng);
        let mut blocks = Vec::new();
        let mut cin = SEED_CHANNELS;
        for (i, &cout) in BLOCK_CHANNELS.iter().enumerate() {
            blocks.push(Conv3d::new(store, &format!("weightvol.block{i}"), (cin, cout), 3, rng)?);
            cin = cout;
        }
        let head = Conv3d::new(store, "weightvol.head", (cin, 1), 3, rng)?;
        Ok(Self { seed, blocks, head })
    }

    pub fn resolution(&self) -> usize {
        2 << self.blocks.len()
    }

    /// Weight volume `[D, D, D]`, axes ordered x, y, z.
    pub fn generate(&self, g: &mut Graph, store: &ParamStore) -> Result<Var> {
        let mut x = g.constant(self.seed.clone());
        for b in &self.blocks {
            let up = g.upsample(x, 2)?;
            let y = b.forward(g, store, up)?;
            x = g.leaky_relu(y, 0.2);
        }
        let logits = self.head.forward(g, store, x)?;
        let d = self.resolution();
        let logits = g.reshape(logits, &[d, d, d])?;
        Ok(g.sigmoid(logits))
    }
}

/// Where `w_c` comes from for one forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightField {
    /// Sampled volume over the canonical box, zero outside.
    Volume(Var),
    /// The same value everywhere, inside the box or not.
    Constant(f64),
}

fn blend(a: f64, b: f64) -> f64 {
    a / (a + (1.0 - b) + BLEND_EPS)
}

/// `w_p = a / (a + (1 - b) + eps)`, `a = w_c(head(x))`, `b = w_c(x)`.
pub fn blend_weight(g: &mut Graph, w_c: WeightField, points: &[[f64; 3]], warp: &Warp) -> Result<Var> {
    match w_c {
        WeightField::Constant(c) => Ok(g.constant(Tensor::full(&[points.len()], blend(c, c)))),
        WeightField::Volume(vol) => {
            let warped: Vec<[f64; 3]> = points.iter().map(|&p| warp.head.apply(p)).collect();
            let a = g.trilinear(vol, &warped, BOX_LO, BOX_HI)?;
            let b = g.trilinear(vol, points, BOX_LO, BOX_HI)?;
            let d = g.sub(a, b)?;
            let denom = g.offset(d, 1.0 + BLEND_EPS);
            g.div(a, denom)
        }
    }
}

/// `x_c = w_p (R_h x + t_h) + (1 - w_p) (R_t x + t_t)` for `points` `[n, 3]`.
pub fn warp_to_canonical(g: &mut Graph, points: &[[f64; 3]], w_p: Var, warp: &Warp) -> Result<Var> {
    let n = points.len();
    if g.shape(w_p) != [n] {
        return Err(diffcore::shape_err("warp_to_canonical", format!("w_p [{n}]"), g.shape(w_p)));
    }
    let mut torso = Vec::with_capacity(3 * n);
    let mut diff = Vec::with_capacity(3 * n);
    for &p in points {
        let (h, t) = (warp.head.apply(p), warp.torso.apply(p));
        torso.extend(t);
        diff.extend((0..3).map(|k| h[k] - t[k]));
    }
    let w = g.reshape(w_p, &[n, 1])?;
    let ones = g.constant(Tensor::ones(&[1, 3]));
    let w3 = g.matmul(w, ones)?;
    let moved = g.mul_const(w3, Tensor::new(&[n, 3], diff)?)?;
    let base = g.constant(Tensor::new(&[n, 3], torso)?);
    g.add(base, moved)
}

/// Value-only warp of one point given a `w_c` lookup.
pub fn warp_point(x: [f64; 3], w_c: impl Fn([f64; 3]) -> f64, warp: &Warp) -> [f64; 3] {
    let h = warp.head.apply(x);
    let t = warp.torso.apply(x);
    let w = blend(w_c(h), w_c(x));
    std::array::from_fn(|k| w * h[k] + (1.0 - w) * t[k])
}

/// Observed field `H(x) = H_C(T(x))`.
pub fn warp_field<T>(
    h_c: impl Fn([f64; 3]) -> T,
    w_c: impl Fn([f64; 3]) -> f64,
    warp: Warp,
) -> impl Fn([f64; 3]) -> T {
    move |x| h_c(warp_point(x, &w_c, &warp))
}

/// Value lookup into a `[D, D, D]` volume over the canonical box.
pub fn sample_volume(volume: &Tensor, x: [f64; 3]) -> f64 {
    trilinear_sample(volume, x, BOX_LO, BOX_HI)
}

/// Raw dump: `WVOL1`, `D` as little-endian u32, then `D^3` little-endian f64.
pub fn write_volume(path: &Path, volume: &Tensor) -> std::io::Result<()> {
    let d = volume.shape()[0];
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(WVOL_MAGIC)?;
    out.write_all(&(d as u32).to_le_bytes())?;
    for v in volume.data() {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()
}

pub fn read_volume(path: &Path) -> std::io::Result<Tensor> {
    let bad = |msg: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {msg}", path.display()));
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 9 || &bytes[..5] != WVOL_MAGIC {
        return Err(bad("not a WVOL1 file"));
    }
    let d = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let body = &bytes[9..];
    if body.len() != d * d * d * 8 {
        return Err(bad("truncated volume"));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::new(&[d, d, d], data).map_err(|e: DiffError| bad(&e.to_string()))
}
