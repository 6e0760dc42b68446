//! Trainable density/color fields backed by dense trilinear lattices.
//!
//! Three roles share one storage scheme: the static field (time independent),
//! the dynamic field (one lattice slice per time step, linearly blended in
//! normalized time) and the scalar shadow field. Raw lattice values are
//! interpolated first and activated afterwards, so density edges can be
//! sharper than one lattice cell.
//!
//! Parameter layout is `[slice][node][channel]` with nodes ordered x-fastest.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Vec3;

/// Offset subtracted before the density softplus, so zero raw values are nearly empty.
pub const DENSITY_OFFSET: f64 = 3.0;
/// Offset subtracted before the shadow sigmoid; zero raw values give ρ ≈ 0.047.
pub const SHADOW_OFFSET: f64 = 3.0;

const BASE_CHANNELS: usize = 4;
const VIEW_CHANNELS: usize = 9;

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn density_activation(raw: f64) -> f64 {
    softplus(raw - DENSITY_OFFSET)
}

#[inline]
pub fn shadow_activation(raw: f64) -> f64 {
    sigmoid(raw - SHADOW_OFFSET)
}

/// Axis-aligned box in world units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Aabb { min, max }
    }

    pub fn cube(half: f64) -> Self {
        Aabb::new(Vec3::repeat(-half), Vec3::repeat(half))
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        (0..3).all(|a| x[a] >= self.min[a] && x[a] <= self.max[a])
    }

    /// Slab test. Returns the parametric interval of `o + t d` inside the box,
    /// clipped to `t >= 0`.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, f64)> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            if dir[a].abs() < 1e-15 {
                if origin[a] < self.min[a] || origin[a] > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[a];
            let mut ta = (self.min[a] - origin[a]) * inv;
            let mut tb = (self.max[a] - origin[a]) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
        (t1 > t0).then_some((t0, t1))
    }
}

/// Regular grid of nodes spanning a box, corners included.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lattice {
    pub bbox: Aabb,
    pub res: [usize; 3],
}

/// The eight lattice nodes around a point and their trilinear weights.
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    pub nodes: [usize; 8],
    pub weights: [f64; 8],
}

impl Lattice {
    pub fn new(bbox: Aabb, res: [usize; 3]) -> Self {
        assert!(res.iter().all(|&n| n >= 2), "lattice needs at least 2 nodes per axis");
        Lattice { bbox, res }
    }

    pub fn node_count(&self) -> usize {
        self.res[0] * self.res[1] * self.res[2]
    }

    pub fn node_index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.res[1] + j) * self.res[0] + i
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let ext = self.bbox.extent();
        let idx = [i, j, k];
        Vec3::from_fn(|a, _| self.bbox.min[a] + ext[a] * idx[a] as f64 / (self.res[a] - 1) as f64)
    }

    /// Spacing between adjacent nodes along each axis.
    pub fn spacing(&self) -> Vec3 {
        let ext = self.bbox.extent();
        Vec3::from_fn(|a, _| ext[a] / (self.res[a] - 1) as f64)
    }

    /// `None` outside the box.
    #[inline]
    pub fn stencil(&self, x: &Vec3) -> Option<Stencil> {
        if !self.bbox.contains(x) {
            return None;
        }
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let cells = (self.res[a] - 1) as f64;
            let u = ((x[a] - self.bbox.min[a]) / (self.bbox.max[a] - self.bbox.min[a]) * cells)
                .clamp(0.0, cells);
            let i0 = (u.floor() as usize).min(self.res[a] - 2);
            base[a] = i0;
            frac[a] = u - i0 as f64;
        }
        let mut nodes = [0usize; 8];
        let mut weights = [0.0f64; 8];
        for c in 0..8 {
            let (di, dj, dk) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
            nodes[c] = self.node_index(base[0] + di, base[1] + dj, base[2] + dk);
            let wx = if di == 1 { frac[0] } else { 1.0 - frac[0] };
            let wy = if dj == 1 { frac[1] } else { 1.0 - frac[1] };
            let wz = if dk == 1 { frac[2] } else { 1.0 - frac[2] };
            weights[c] = wx * wy * wz;
        }
        Some(Stencil { nodes, weights })
    }
}

/// Blend of two adjacent time slices at normalized time `tau`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeBlend {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
    pub clamped: bool,
}

pub fn time_blend(slices: usize, tau: f64) -> TimeBlend {
    let clamped = !(0.0..=1.0).contains(&tau) || tau.is_nan();
    let tau = if tau.is_nan() { 0.0 } else { tau.clamp(0.0, 1.0) };
    if slices <= 1 {
        return TimeBlend { lo: 0, hi: 0, frac: 0.0, clamped };
    }
    let u = tau * (slices - 1) as f64;
    let lo = (u.floor() as usize).min(slices - 2);
    TimeBlend { lo, hi: lo + 1, frac: u - lo as f64, clamped }
}

/// Flat parameter (or gradient) storage with a length fixed at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
}

pub type GradientVector = ParameterVector;

impl ParameterVector {
    pub fn zeros(len: usize) -> Self {
        ParameterVector { values: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.values.iter_mut().for_each(|x| *x = v);
    }
}

/// Density and color at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldOutput {
    pub sigma: f64,
    pub color: Vec3,
}

impl FieldOutput {
    pub const EMPTY: FieldOutput = FieldOutput {
        sigma: 0.0,
        color: Vec3::new(0.0, 0.0, 0.0),
    };
}

/// Upstream gradient of a scalar loss with respect to a [`FieldOutput`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FieldOutputGrad {
    pub sigma: f64,
    pub color: Vec3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldRole {
    Static = 0,
    Dynamic = 1,
    Shadow = 2,
}

impl FieldRole {
    fn from_tag(tag: u32) -> Option<Self> {
        match tag {
            0 => Some(FieldRole::Static),
            1 => Some(FieldRole::Dynamic),
            2 => Some(FieldRole::Shadow),
            _ => None,
        }
    }
}

/// Shared lattice storage for every field role.
#[derive(Clone, Debug, PartialEq)]
struct Grid {
    lattice: Lattice,
    slices: usize,
    channels: usize,
    view_dependent: bool,
    params: ParameterVector,
}

impl Grid {
    fn new(bbox: Aabb, res: [usize; 3], slices: usize, channels: usize, view_dependent: bool) -> Self {
        assert!(slices >= 1);
        let lattice = Lattice::new(bbox, res);
        let len = slices * lattice.node_count() * channels;
        Grid {
            lattice,
            slices,
            channels,
            view_dependent,
            params: ParameterVector::zeros(len),
        }
    }

    #[inline]
    fn index(&self, slice: usize, node: usize, channel: usize) -> usize {
        (slice * self.lattice.node_count() + node) * self.channels + channel
    }

    /// Interpolated raw channels; `None` outside the box.
    #[inline]
    fn raw(&self, x: &Vec3, blend: &TimeBlend, out: &mut [f64]) -> Option<Stencil> {
        let st = self.lattice.stencil(x)?;
        out.iter_mut().for_each(|v| *v = 0.0);
        let p = self.params.as_slice();
        let mut gather = |slice: usize, scale: f64| {
            for c in 0..8 {
                let w = st.weights[c] * scale;
                if w == 0.0 {
                    continue;
                }
                let base = self.index(slice, st.nodes[c], 0);
                for (ch, o) in out.iter_mut().enumerate() {
                    *o += w * p[base + ch];
                }
            }
        };
        gather(blend.lo, 1.0 - blend.frac);
        if blend.hi != blend.lo && blend.frac != 0.0 {
            gather(blend.hi, blend.frac);
        }
        Some(st)
    }

    #[inline]
    fn scatter(&self, st: &Stencil, blend: &TimeBlend, d_raw: &[f64], grad: &mut ParameterVector) {
        let g = grad.as_mut_slice();
        let mut put = |slice: usize, scale: f64| {
            for c in 0..8 {
                let w = st.weights[c] * scale;
                if w == 0.0 {
                    continue;
                }
                let base = self.index(slice, st.nodes[c], 0);
                for (ch, d) in d_raw.iter().enumerate() {
                    g[base + ch] += w * d;
                }
            }
        };
        put(blend.lo, 1.0 - blend.frac);
        if blend.hi != blend.lo && blend.frac != 0.0 {
            put(blend.hi, blend.frac);
        }
    }

    /// Activated density and color from raw channels.
    #[inline]
    fn activate_radiance(&self, raw: &[f64], dir: Option<&Vec3>) -> FieldOutput {
        let mut logits = Vec3::new(raw[1], raw[2], raw[3]);
        if self.view_dependent {
            if let Some(d) = dir {
                for c in 0..3 {
                    logits[c] += raw[4 + 3 * c] * d.x + raw[5 + 3 * c] * d.y + raw[6 + 3 * c] * d.z;
                }
            }
        }
        FieldOutput {
            sigma: density_activation(raw[0]),
            color: logits.map(sigmoid),
        }
    }

    fn radiance_raw_grad(
        &self,
        raw: &[f64],
        dir: Option<&Vec3>,
        upstream: &FieldOutputGrad,
        d_raw: &mut [f64],
    ) {
        let out = self.activate_radiance(raw, dir);
        d_raw[0] = upstream.sigma * sigmoid(raw[0] - DENSITY_OFFSET);
        for c in 0..3 {
            let g = upstream.color[c] * out.color[c] * (1.0 - out.color[c]);
            d_raw[1 + c] = g;
            if self.view_dependent {
                let d = dir.copied().unwrap_or_else(Vec3::zeros);
                d_raw[4 + 3 * c] = g * d.x;
                d_raw[5 + 3 * c] = g * d.y;
                d_raw[6 + 3 * c] = g * d.z;
            }
        }
    }

    fn write_record(&self, role: FieldRole, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(role as u32).to_le_bytes())?;
        for v in self.lattice.bbox.min.iter().chain(self.lattice.bbox.max.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
        for n in self.lattice.res.iter().chain(std::iter::once(&self.slices)) {
            w.write_all(&(*n as u32).to_le_bytes())?;
        }
        w.write_all(&(self.channels as u32).to_le_bytes())?;
        w.write_all(&(self.view_dependent as u32).to_le_bytes())?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())?;
        for v in self.params.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"D2VF";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Time-independent density and color.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticField {
    grid: Grid,
}

impl StaticField {
    pub fn new(bbox: Aabb, res: [usize; 3], view_dependent: bool) -> Self {
        let ch = BASE_CHANNELS + if view_dependent { VIEW_CHANNELS } else { 0 };
        StaticField {
            grid: Grid::new(bbox, res, 1, ch, view_dependent),
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.grid.lattice
    }

    pub fn channels(&self) -> usize {
        self.grid.channels
    }

    pub fn view_dependent(&self) -> bool {
        self.grid.view_dependent
    }

    pub fn params(&self) -> &ParameterVector {
        &self.grid.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterVector {
        &mut self.grid.params
    }

    pub fn param_index(&self, node: usize, channel: usize) -> usize {
        self.grid.index(0, node, channel)
    }

    /// Points outside the box are empty and black.
    #[inline]
    pub fn eval(&self, x: &Vec3, dir: Option<&Vec3>) -> FieldOutput {
        let mut raw = [0.0f64; BASE_CHANNELS + VIEW_CHANNELS];
        let raw = &mut raw[..self.grid.channels];
        let blend = time_blend(1, 0.0);
        match self.grid.raw(x, &blend, raw) {
            Some(_) => self.grid.activate_radiance(raw, dir),
            None => FieldOutput::EMPTY,
        }
    }

    pub fn accumulate_gradient(
        &self,
        x: &Vec3,
        dir: Option<&Vec3>,
        upstream: &FieldOutputGrad,
        grad: &mut GradientVector,
    ) {
        debug_assert_eq!(grad.len(), self.grid.params.len());
        if upstream.sigma == 0.0 && upstream.color == Vec3::zeros() {
            return;
        }
        let mut raw = [0.0f64; BASE_CHANNELS + VIEW_CHANNELS];
        let raw = &mut raw[..self.grid.channels];
        let blend = time_blend(1, 0.0);
        if let Some(st) = self.grid.raw(x, &blend, raw) {
            let mut d_raw = [0.0f64; BASE_CHANNELS + VIEW_CHANNELS];
            let d_raw = &mut d_raw[..self.grid.channels];
            self.grid.radiance_raw_grad(raw, dir, upstream, d_raw);
            self.grid.scatter(&st, &blend, d_raw, grad);
        }
    }
}

/// Time-conditioned density and color: one lattice slice per time step,
/// linearly blended in normalized time `tau ∈ [0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DynamicField {
    grid: Grid,
}

impl DynamicField {
    pub fn new(bbox: Aabb, res: [usize; 3], time_slices: usize, view_dependent: bool) -> Self {
        let ch = BASE_CHANNELS + if view_dependent { VIEW_CHANNELS } else { 0 };
        DynamicField {
            grid: Grid::new(bbox, res, time_slices, ch, view_dependent),
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.grid.lattice
    }

    pub fn time_slices(&self) -> usize {
        self.grid.slices
    }

    pub fn channels(&self) -> usize {
        self.grid.channels
    }

    pub fn params(&self) -> &ParameterVector {
        &self.grid.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterVector {
        &mut self.grid.params
    }

    pub fn param_index(&self, slice: usize, node: usize, channel: usize) -> usize {
        self.grid.index(slice, node, channel)
    }

    /// Sets the raw density channel of every node in every slice.
    pub fn fill_density(&mut self, raw: f64) {
        let ch = self.grid.channels;
        for d in self.grid.params.as_mut_slice().iter_mut().step_by(ch) {
            *d = raw;
        }
    }

    fn blend(&self, tau: f64) -> TimeBlend {
        let b = time_blend(self.grid.slices, tau);
        if b.clamped {
            log::warn!("dynamic field queried at tau = {tau}, clamped to [0, 1]");
        }
        b
    }

    #[inline]
    pub fn eval(&self, x: &Vec3, dir: Option<&Vec3>, tau: f64) -> FieldOutput {
        let mut raw = [0.0f64; BASE_CHANNELS + VIEW_CHANNELS];
        let raw = &mut raw[..self.grid.channels];
        let blend = self.blend(tau);
        match self.grid.raw(x, &blend, raw) {
            Some(_) => self.grid.activate_radiance(raw, dir),
            None => FieldOutput::EMPTY,
        }
    }

    pub fn accumulate_gradient(
        &self,
        x: &Vec3,
        dir: Option<&Vec3>,
        tau: f64,
        upstream: &FieldOutputGrad,
        grad: &mut GradientVector,
    ) {
        debug_assert_eq!(grad.len(), self.grid.params.len());
        if upstream.sigma == 0.0 && upstream.color == Vec3::zeros() {
            return;
        }
        let mut raw = [0.0f64; BASE_CHANNELS + VIEW_CHANNELS];
        let raw = &mut raw[..self.grid.channels];
        let blend = self.blend(tau);
        if let Some(st) = self.grid.raw(x, &blend, raw) {
            let mut d_raw = [0.0f64; BASE_CHANNELS + VIEW_CHANNELS];
            let d_raw = &mut d_raw[..self.grid.channels];
            self.grid.radiance_raw_grad(raw, dir, upstream, d_raw);
            self.grid.scatter(&st, &blend, d_raw, grad);
        }
    }
}

/// Time-conditioned scalar shadow ratio ρ ∈ [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowField {
    grid: Grid,
}

impl ShadowField {
    pub fn new(bbox: Aabb, res: [usize; 3], time_slices: usize) -> Self {
        ShadowField {
            grid: Grid::new(bbox, res, time_slices, 1, false),
        }
    }

    pub fn lattice(&self) -> &Lattice {
        &self.grid.lattice
    }

    pub fn time_slices(&self) -> usize {
        self.grid.slices
    }

    pub fn params(&self) -> &ParameterVector {
        &self.grid.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterVector {
        &mut self.grid.params
    }

    pub fn param_index(&self, slice: usize, node: usize) -> usize {
        self.grid.index(slice, node, 0)
    }

    /// Zero outside the box.
    #[inline]
    pub fn eval(&self, x: &Vec3, tau: f64) -> f64 {
        let mut raw = [0.0f64; 1];
        let blend = time_blend(self.grid.slices, tau);
        match self.grid.raw(x, &blend, &mut raw) {
            Some(_) => shadow_activation(raw[0]),
            None => 0.0,
        }
    }

    pub fn accumulate_gradient(&self, x: &Vec3, tau: f64, upstream: f64, grad: &mut GradientVector) {
        debug_assert_eq!(grad.len(), self.grid.params.len());
        if upstream == 0.0 {
            return;
        }
        let mut raw = [0.0f64; 1];
        let blend = time_blend(self.grid.slices, tau);
        if let Some(st) = self.grid.raw(x, &blend, &mut raw) {
            let rho = shadow_activation(raw[0]);
            self.grid.scatter(&st, &blend, &[upstream * rho * (1.0 - rho)], grad);
        }
    }
}

/// Any of the three field roles, as stored in a checkpoint record.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyField {
    Static(StaticField),
    Dynamic(DynamicField),
    Shadow(ShadowField),
}

impl AnyField {
    pub fn role(&self) -> FieldRole {
        match self {
            AnyField::Static(_) => FieldRole::Static,
            AnyField::Dynamic(_) => FieldRole::Dynamic,
            AnyField::Shadow(_) => FieldRole::Shadow,
        }
    }

    fn grid(&self) -> &Grid {
        match self {
            AnyField::Static(f) => &f.grid,
            AnyField::Dynamic(f) => &f.grid,
            AnyField::Shadow(f) => &f.grid,
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        self.grid().write_record(self.role(), w)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    /// Reads one record. `Ok(None)` on a clean end of stream.
    pub fn read_from(r: &mut impl Read) -> Result<Option<AnyField>> {
        let mut magic = [0u8; 4];
        match read_exact_or_eof(r, &mut magic)? {
            false => return Ok(None),
            true if &magic != CHECKPOINT_MAGIC => {
                return Err(Error::Checkpoint(format!("bad magic bytes {magic:?}")))
            }
            true => {}
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let role = FieldRole::from_tag(read_u32(r)?)
            .ok_or_else(|| Error::Checkpoint("unknown field role".into()))?;
        let mut b = [0.0f64; 6];
        for v in b.iter_mut() {
            *v = read_f64(r)?;
        }
        let bbox = Aabb::new(Vec3::new(b[0], b[1], b[2]), Vec3::new(b[3], b[4], b[5]));
        let res = [read_u32(r)? as usize, read_u32(r)? as usize, read_u32(r)? as usize];
        let slices = read_u32(r)? as usize;
        let channels = read_u32(r)? as usize;
        let view_dependent = read_u32(r)? != 0;
        let count = read_u64(r)? as usize;
        if res.iter().any(|&n| n < 2) || slices == 0 {
            return Err(Error::Checkpoint(format!("bad resolution {res:?} x {slices}")));
        }
        let mut field = match role {
            FieldRole::Static => AnyField::Static(StaticField::new(bbox, res, view_dependent)),
            FieldRole::Dynamic => {
                AnyField::Dynamic(DynamicField::new(bbox, res, slices, view_dependent))
            }
            FieldRole::Shadow => AnyField::Shadow(ShadowField::new(bbox, res, slices)),
        };
        let grid = match &mut field {
            AnyField::Static(f) => &mut f.grid,
            AnyField::Dynamic(f) => &mut f.grid,
            AnyField::Shadow(f) => &mut f.grid,
        };
        if grid.channels != channels || grid.params.len() != count || grid.slices != slices {
            return Err(Error::Checkpoint(format!(
                "header inconsistent: {channels} channels, {count} parameters"
            )));
        }
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::Checkpoint(format!("truncated parameter block: {e}")))?;
        for (dst, chunk) in grid.params.as_mut_slice().iter_mut().zip(bytes.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(Some(field))
    }
}

fn read_exact_or_eof(r: &mut impl Read, buf: &mut [u8]) -> Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(Error::Checkpoint("truncated record header".into())),
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(Error::Checkpoint(e.to_string())),
        }
    }
    Ok(true)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(f64::from_le_bytes(b))
}
