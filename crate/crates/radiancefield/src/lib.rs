//! Canonical appearance field: two orthogonal feature planes sampled at a
//! point, concatenated with its positional encoding and decoded to density
//! and a color feature. Also isosurface extraction from density grids.

mod mcubes;
mod posenc;

pub use mcubes::{extract_mesh, extract_mesh_from_grid, TriMesh};
pub use posenc::{posenc, posenc_op, PosEncConfig};

use diffcore::nn::{Linear, Mlp};
use diffcore::{DiffError, Graph, ParamStore, Result, Tensor, Var};
use rand::Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct FieldConfig {
    /// Channels per plane; 0 drops the planes entirely.
    pub plane_channels: usize,
    /// Extra per-frame decoder inputs (embedding and/or expression).
    pub extra_dim: usize,
    pub hidden: Vec<usize>,
    pub color_channels: usize,
    pub posenc: PosEncConfig,
    /// `sigma = density_scale * softplus(raw)`.
    pub density_scale: f64,
    /// Initial offset of the raw density, so training starts semi-transparent.
    pub density_bias: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            plane_channels: 16,
            extra_dim: 0,
            hidden: vec![64, 64],
            color_channels: 8,
            posenc: PosEncConfig::default(),
            density_scale: 10.0,
            density_bias: -2.0,
        }
    }
}

impl FieldConfig {
    pub fn input_dim(&self) -> usize {
        2 * self.plane_channels + self.posenc.dim() + self.extra_dim
    }
}

/// Per-point decoder outputs: `sigma` is `[n]`, `color` is `[n, C_c]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FieldSample {
    pub sigma: Var,
    pub color: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RadianceField {
    pub cfg: FieldConfig,
    pub decoder: Mlp,
    pub rgb_head: Linear,
}

/// Constant affine maps from canonical `x_c` to plane coordinates: the front
/// plane reads `(x, y)`, the side plane `(z, y)`, with `u` left to right and
/// `v` top (y = 1) to bottom.
fn plane_uv(g: &mut Graph, x: Var, axis: usize) -> Result<Var> {
    let mut m = vec![0.0; 6];
    m[axis * 2] = 0.5;
    m[2 + 1] = -0.5;
    let mv = g.constant(Tensor::new(&[3, 2], m)?);
    let b = g.constant(Tensor::vector(vec![0.5, 0.5]));
    let uv = g.matmul(x, mv)?;
    g.add_row_bias(uv, b)
}

impl RadianceField {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, cfg: &FieldConfig, rng: &mut R) -> Result<Self> {
        let mut dims = vec![cfg.input_dim()];
        dims.extend(&cfg.hidden);
        dims.push(1 + cfg.color_channels);
        let decoder = Mlp::new(store, "field", &dims, 0.2, rng)?;
        let last = decoder.layers.last().expect("at least one layer");
        store.get_mut(last.bias).data_mut()[0] = cfg.density_bias;
        let rgb_head = Linear::new(store, "rgb_head", cfg.color_channels, 3, rng)?;
        Ok(Self {
            cfg: cfg.clone(),
            decoder,
            rgb_head,
        })
    }

    /// Query `x_c: [n, 3]`. `planes` is `(front, side)`, each `[C_p, R, R]`;
    /// `extra` is a `[extra_dim]` vector shared by all points.
    pub fn query(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        planes: Option<(Var, Var)>,
        extra: Option<Var>,
        x_c: Var,
    ) -> Result<FieldSample> {
        let n = match g.shape(x_c) {
            &[n, 3] => n,
            s => return Err(diffcore::shape_err("query", "[n, 3]", s)),
        };
        let mut parts = Vec::with_capacity(4);
        match (planes, self.cfg.plane_channels) {
            (Some((front, side)), c) if c > 0 => {
                let uf = plane_uv(g, x_c, 0)?;
                let us = plane_uv(g, x_c, 2)?;
                parts.push(g.bilinear(front, uf)?);
                parts.push(g.bilinear(side, us)?);
            }
            (None, 0) => {}
            _ => return Err(DiffError::Contract("plane inputs do not match field config".into())),
        }
        parts.push(posenc_op(g, x_c, &self.cfg.posenc));
        match (extra, self.cfg.extra_dim) {
            (Some(e), d) if d > 0 && g.shape(e) == [d] => parts.push(g.repeat_rows(e, n)?),
            (None, 0) => {}
            _ => return Err(DiffError::Contract("extra decoder input does not match field config".into())),
        }
        let f = g.concat(&parts, 1)?;
        let out = self.decoder.forward(g, store, f)?;
        let raw = g.slice(out, 1, 0, 1)?;
        let raw = g.reshape(raw, &[n])?;
        let sp = g.softplus(raw);
        let sigma = g.scale(sp, self.cfg.density_scale);
        let color = g.slice(out, 1, 1, self.cfg.color_channels)?;
        Ok(FieldSample { sigma, color })
    }

    /// Linear layer plus sigmoid on `[n, C_c]` features.
    pub fn feature_to_rgb(&self, g: &mut Graph, store: &ParamStore, color: Var) -> Result<Var> {
        let pre = self.rgb_head.forward(g, store, color)?;
        Ok(g.sigmoid(pre))
    }
}
