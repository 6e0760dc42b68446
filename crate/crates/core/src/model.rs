//! The composite model: static + dynamic fields and an optional shadow field.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Aabb, AnyField, DynamicField, FieldOutputGrad, GradientVector, ParameterVector, ShadowField, StaticField};
use crate::render::{PointSample, RadianceSource, SampleGrad};
use crate::Vec3;

/// Lattice sizes and optional components of a [`Model`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub static_res: usize,
    pub dynamic_res: usize,
    pub shadow_res: usize,
    /// Time slices for the dynamic field, capped at the frame count; `None`
    /// means one per training frame.
    pub time_slices: Option<usize>,
    /// Time slices for the shadow field, same convention. A shadow moves
    /// with its caster but can only darken, so it gets the full rate.
    #[serde(default)]
    pub shadow_time_slices: Option<usize>,
    pub shadow_field: bool,
    pub view_dependent: bool,
    /// Initial raw density of the dynamic field. Below zero the dynamic
    /// field starts emptier than the static one.
    #[serde(default = "default_dynamic_density_init")]
    pub dynamic_density_init: f64,
}

fn default_dynamic_density_init() -> f64 {
    -3.0
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            static_res: 32,
            dynamic_res: 16,
            shadow_res: 16,
            time_slices: Some(10),
            shadow_time_slices: None,
            shadow_field: false,
            view_dependent: false,
            dynamic_density_init: default_dynamic_density_init(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub static_field: StaticField,
    pub dynamic_field: DynamicField,
    pub shadow_field: Option<ShadowField>,
}

impl Model {
    pub fn new(bbox: Aabb, spec: &ModelSpec, frame_count: usize) -> Self {
        let slices = |t: Option<usize>| t.map_or(frame_count, |t| t.min(frame_count)).max(1);
        let mut dynamic_field = DynamicField::new(bbox, [spec.dynamic_res; 3], slices(spec.time_slices), spec.view_dependent);
        dynamic_field.fill_density(spec.dynamic_density_init);
        Model {
            static_field: StaticField::new(bbox, [spec.static_res; 3], spec.view_dependent),
            dynamic_field,
            shadow_field: spec
                .shadow_field
                .then(|| ShadowField::new(bbox, [spec.shadow_res; 3], slices(spec.shadow_time_slices))),
        }
    }

    pub fn bbox(&self) -> Aabb {
        self.static_field.lattice().bbox
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|(_, p)| p.len()).sum()
    }

    /// Named parameter blocks in a fixed order.
    pub fn blocks(&self) -> Vec<(&'static str, &ParameterVector)> {
        let mut v = vec![
            ("static", self.static_field.params()),
            ("dynamic", self.dynamic_field.params()),
        ];
        if let Some(s) = &self.shadow_field {
            v.push(("shadow", s.params()));
        }
        v
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut ParameterVector)> {
        let mut v = vec![
            ("static", self.static_field.params_mut()),
            ("dynamic", self.dynamic_field.params_mut()),
        ];
        if let Some(s) = &mut self.shadow_field {
            v.push(("shadow", s.params_mut()));
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, p)| p.is_finite())
    }

    /// Chains one sample's gradient into the field parameters.
    pub fn accumulate(&self, x: &Vec3, dir: &Vec3, tau: f64, g: &SampleGrad, grad: &mut ModelGradient) {
        let up_s = FieldOutputGrad { sigma: g.sigma_s, color: g.color_s };
        self.static_field.accumulate_gradient(x, Some(dir), &up_s, &mut grad.static_grad);
        let up_d = FieldOutputGrad { sigma: g.sigma_d, color: g.color_d };
        self.dynamic_field.accumulate_gradient(x, Some(dir), tau, &up_d, &mut grad.dynamic_grad);
        if let (Some(field), Some(sg)) = (&self.shadow_field, grad.shadow_grad.as_mut()) {
            field.accumulate_gradient(x, tau, g.rho, sg);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        for f in self.records() {
            f.write_to(&mut buf).expect("writing to a Vec cannot fail");
        }
        buf
    }

    fn records(&self) -> Vec<AnyField> {
        let mut v = vec![
            AnyField::Static(self.static_field.clone()),
            AnyField::Dynamic(self.dynamic_field.clone()),
        ];
        if let Some(s) = &self.shadow_field {
            v.push(AnyField::Shadow(s.clone()));
        }
        v
    }

    /// Writes the fields as consecutive checkpoint records.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for f in self.records() {
            f.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Model> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(&mut BufReader::new(file))
    }

    pub fn from_reader(r: &mut impl std::io::Read) -> Result<Model> {
        let mut static_field = None;
        let mut dynamic_field = None;
        let mut shadow_field = None;
        while let Some(rec) = AnyField::read_from(r)? {
            match rec {
                AnyField::Static(f) => static_field = Some(f),
                AnyField::Dynamic(f) => dynamic_field = Some(f),
                AnyField::Shadow(f) => shadow_field = Some(f),
            }
        }
        match (static_field, dynamic_field) {
            (Some(static_field), Some(dynamic_field)) => Ok(Model {
                static_field,
                dynamic_field,
                shadow_field,
            }),
            _ => Err(Error::Checkpoint(
                "model checkpoint needs a static and a dynamic record".into(),
            )),
        }
    }
}

impl RadianceSource for Model {
    #[inline]
    fn sample(&self, x: &Vec3, dir: &Vec3, tau: f64) -> PointSample {
        let s = self.static_field.eval(x, Some(dir));
        let d = self.dynamic_field.eval(x, Some(dir), tau);
        PointSample {
            sigma_s: s.sigma,
            color_s: s.color,
            sigma_d: d.sigma,
            color_d: d.color,
            rho: self.shadow_field.as_ref().map_or(0.0, |f| f.eval(x, tau)),
        }
    }
}

/// Gradient buffers aligned with a model's parameter blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGradient {
    pub static_grad: GradientVector,
    pub dynamic_grad: GradientVector,
    pub shadow_grad: Option<GradientVector>,
}

impl ModelGradient {
    pub fn zeros_like(model: &Model) -> Self {
        ModelGradient {
            static_grad: GradientVector::zeros(model.static_field.params().len()),
            dynamic_grad: GradientVector::zeros(model.dynamic_field.params().len()),
            shadow_grad: model
                .shadow_field
                .as_ref()
                .map(|s| GradientVector::zeros(s.params().len())),
        }
    }

    pub fn blocks(&self) -> Vec<(&'static str, &GradientVector)> {
        let mut v = vec![("static", &self.static_grad), ("dynamic", &self.dynamic_grad)];
        if let Some(s) = &self.shadow_grad {
            v.push(("shadow", s));
        }
        v
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut GradientVector)> {
        let mut v = vec![
            ("static", &mut self.static_grad),
            ("dynamic", &mut self.dynamic_grad),
        ];
        if let Some(s) = &mut self.shadow_grad {
            v.push(("shadow", s));
        }
        v
    }

    pub fn clear(&mut self) {
        for (_, g) in self.blocks_mut() {
            g.fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn model_checkpoint_round_trip() {
        let spec = ModelSpec {
            static_res: 4,
            dynamic_res: 3,
            shadow_res: 3,
            time_slices: Some(2),
            shadow_time_slices: Some(4),
            shadow_field: true,
            view_dependent: false,
            dynamic_density_init: 0.0,
        };
        let mut m = Model::new(Aabb::cube(1.0), &spec, 10);
        m.static_field.params_mut().as_mut_slice()[5] = 1.25;
        m.shadow_field.as_mut().unwrap().params_mut().as_mut_slice()[3] = -7.5;
        let bytes = m.to_bytes();
        let back = Model::from_reader(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.dynamic_field.time_slices(), 2);
        assert_eq!(back.shadow_field.unwrap().time_slices(), 4);
    }

    #[test]
    fn dynamic_field_starts_emptier_than_static() {
        let spec = ModelSpec {
            shadow_field: true,
            ..ModelSpec::default()
        };
        let m = Model::new(Aabb::cube(1.0), &spec, 30);
        assert_eq!(m.dynamic_field.time_slices(), 10);
        assert_eq!(m.shadow_field.as_ref().unwrap().time_slices(), 30);
        let x = Vec3::new(0.1, -0.2, 0.3);
        let s = m.static_field.eval(&x, None).sigma;
        let d = m.dynamic_field.eval(&x, None, 0.4).sigma;
        assert!((d - crate::field::softplus(-6.0)).abs() < 1e-12, "{d}");
        assert!(d < s / 10.0);
        let few = Model::new(Aabb::cube(1.0), &ModelSpec::default(), 3);
        assert_eq!(few.dynamic_field.time_slices(), 3);
    }

    #[test]
    fn missing_records_are_an_error() {
        let only_static = AnyField::Static(StaticField::new(Aabb::cube(1.0), [2, 2, 2], false)).to_bytes();
        assert!(Model::from_reader(&mut only_static.as_slice()).is_err());
    }
}
