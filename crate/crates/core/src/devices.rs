//! The two reference devices: a cantilevered flexible strip with a sensor over
//! part of its length, and a planar pneumatic finger with a chamber cut into
//! the body and an inextensible layer along its bottom face.

use serde::{Deserialize, Serialize};

use crate::constraints::{ConstraintSet, EffectorKind, ForceConstraint, LengthConstraint, PoseEffector, PressureConstraint};
use crate::error::{Error, Result};
use crate::fem::{ElasticBody, Material};
use crate::geometry::{barycentric_coords, sample_centerline, Centerline, Point2, TriMesh};
use crate::model::SoftBody;
use crate::sensor::{curvature_profile, CurvatureProfile, SensorLayout, ShapeMode};

pub const KPA_TO_N_PER_MM2: f64 = 1e-3;
pub const MPA_TO_PA: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    pub young_modulus_mpa: f64,
    pub poisson_ratio: f64,
    /// Out-of-plane thickness.
    pub thickness_mm: f64,
}

impl MaterialSpec {
    pub fn material(&self) -> Result<Material> {
        Material::new(self.young_modulus_mpa * MPA_TO_PA, self.poisson_ratio, self.thickness_mm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StripSpec {
    pub length_mm: f64,
    pub height_mm: f64,
    pub columns: usize,
    pub rows: usize,
    pub material: MaterialSpec,
    /// Sensor covers `[0, sensor_span_mm]` of the centerline.
    pub sensor_span_mm: f64,
    pub sensor_segments: usize,
    pub nominal_points: usize,
    pub markers: usize,
    /// Candidate force sites along the centerline; all push in `force_direction`.
    pub force_sites_mm: Vec<f64>,
    pub force_direction: [f64; 2],
}

impl Default for StripSpec {
    fn default() -> Self {
        Self {
            length_mm: 120.0,
            height_mm: 6.0,
            columns: 24,
            rows: 2,
            material: MaterialSpec { young_modulus_mpa: 20.0, poisson_ratio: 0.45, thickness_mm: 20.0 },
            sensor_span_mm: 80.0,
            sensor_segments: 8,
            nominal_points: 8,
            markers: 11,
            force_sites_mm: vec![20.0, 40.0, 60.0, 80.0, 100.0, 120.0],
            force_direction: [0.0, 1.0],
        }
    }
}

/// Chambers of a bellows-style actuator: `chambers` hollow teeth rising from a
/// shared channel, each enclosed by side walls, with gaps open to the top face
/// between neighbouring teeth. Grid cells are classified by their centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChamberSpec {
    pub start_mm: f64,
    pub chambers: usize,
    pub pitch_mm: f64,
    pub wall_mm: f64,
    pub chamber_width_mm: f64,
    pub channel_bottom_mm: f64,
    pub channel_top_mm: f64,
    pub chamber_top_mm: f64,
    /// Gaps between teeth run from here up through the top face.
    pub gap_bottom_mm: f64,
}

impl ChamberSpec {
    fn cavity(&self, x: f64, y: f64) -> bool {
        let (w, c) = (self.wall_mm, self.chamber_width_mm);
        let first = self.start_mm + w;
        let last = self.start_mm + (self.chambers.saturating_sub(1)) as f64 * self.pitch_mm + w + c;
        if self.chambers == 0 || x < first || x > last {
            return false;
        }
        let channel = y > self.channel_bottom_mm && y < self.channel_top_mm;
        let offset = (x - self.start_mm).rem_euclid(self.pitch_mm);
        let chamber = y >= self.channel_top_mm && y < self.chamber_top_mm && offset > w && offset < w + c;
        channel || chamber
    }

    fn gap(&self, x: f64, y: f64) -> bool {
        let k = ((x - self.start_mm) / self.pitch_mm).floor();
        let offset = x - self.start_mm - k * self.pitch_mm;
        k >= 0.0 && (k as usize) + 1 < self.chambers && y > self.gap_bottom_mm && offset > 2.0 * self.wall_mm + self.chamber_width_mm
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FingerSpec {
    pub length_mm: f64,
    pub height_mm: f64,
    pub columns: usize,
    pub rows: usize,
    pub material: MaterialSpec,
    pub chamber: ChamberSpec,
    /// Anchors of the inextensible layer along the bottom face.
    pub layer_segments: usize,
    /// Height of the line carrying the sensor, nominal points and markers.
    pub sensor_height_mm: f64,
    pub sensor_segments: usize,
    pub nominal_points: usize,
    pub markers: usize,
    /// Force sites on the top face.
    pub force_sites_mm: Vec<f64>,
    pub force_direction: [f64; 2],
}

impl Default for FingerSpec {
    fn default() -> Self {
        Self {
            length_mm: 85.0,
            height_mm: 30.0,
            columns: 34,
            rows: 12,
            material: MaterialSpec { young_modulus_mpa: 1.37, poisson_ratio: 0.45, thickness_mm: 50.0 },
            chamber: ChamberSpec {
                start_mm: 5.0,
                chambers: 8,
                pitch_mm: 10.0,
                wall_mm: 2.5,
                chamber_width_mm: 2.5,
                channel_bottom_mm: 10.0,
                channel_top_mm: 12.5,
                chamber_top_mm: 27.5,
                gap_bottom_mm: 17.5,
            },
            layer_segments: 17,
            sensor_height_mm: 2.5,
            sensor_segments: 6,
            nominal_points: 6,
            markers: 11,
            force_sites_mm: vec![80.0],
            force_direction: [0.0, -1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DeviceSpec {
    Strip(StripSpec),
    Finger(FingerSpec),
}

impl DeviceSpec {
    pub fn build(&self) -> Result<Device> {
        match self {
            DeviceSpec::Strip(s) => s.build(),
            DeviceSpec::Finger(f) => f.build(),
        }
    }

    pub fn mode(&self) -> ShapeMode {
        match self {
            DeviceSpec::Strip(_) => ShapeMode::Orientation,
            DeviceSpec::Finger(_) => ShapeMode::Position,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeviceKind {
    Strip,
    Finger,
}

#[derive(Debug, Clone)]
pub struct Device {
    pub kind: DeviceKind,
    pub model: SoftBody,
    pub mode: ShapeMode,
    /// Locations of the shape vector entries (one effector each).
    pub nominal: Centerline,
    pub markers: Centerline,
    /// Dense samples over the sensorized span, used for curvature.
    pub sensor: Centerline,
    pub layout: SensorLayout,
    /// Fixed point at the base that marker errors are normalized against.
    pub base_reference: Point2,
    pub characteristic_length: f64,
    rest_shape: Vec<f64>,
}

fn direction(d: [f64; 2]) -> Result<Point2> {
    let p = Point2::new(d[0], d[1]);
    let n = p.norm();
    if !(n > 0.0 && n.is_finite()) {
        return Err(Error::InvalidInput("force direction must be non-zero".into()));
    }
    Ok(p * (1.0 / n))
}

fn line(x0: f64, x1: f64, y: f64) -> [Point2; 2] {
    [Point2::new(x0, y), Point2::new(x1, y)]
}

fn effectors(nominal: &Centerline, mode: ShapeMode) -> Vec<PoseEffector> {
    let kind = match mode {
        ShapeMode::Orientation => EffectorKind::Orientation,
        ShapeMode::Position => EffectorKind::Position,
    };
    nominal.anchors.iter().map(|&anchor| PoseEffector { anchor, kind }).collect()
}

fn check_counts(sensor_segments: usize, nominal: usize, markers: usize) -> Result<()> {
    if sensor_segments == 0 || nominal < 2 || markers < 2 {
        return Err(Error::InvalidInput("device needs a sensor segment, 2 nominal points and 2 markers".into()));
    }
    Ok(())
}

impl StripSpec {
    pub fn build(&self) -> Result<Device> {
        check_counts(self.sensor_segments, self.nominal_points, self.markers)?;
        if !(self.sensor_span_mm > 0.0 && self.sensor_span_mm <= self.length_mm) {
            return Err(Error::InvalidInput("sensor span must lie within the strip".into()));
        }
        let mesh = TriMesh::grid(self.length_mm, self.height_mm, self.columns, self.rows, |_, _| true)?;
        let body = ElasticBody::new(mesh.clone(), self.material.material()?)?;
        let mid = 0.5 * self.height_mm;
        let dir = direction(self.force_direction)?;
        let forces = self
            .force_sites_mm
            .iter()
            .map(|&x| ForceConstraint::new(barycentric_coords(&mesh, Point2::new(x, mid))?, dir))
            .collect::<Result<Vec<_>>>()?;
        let constraints = ConstraintSet::new(&mesh, None, forces, None);
        let nominal = sample_centerline(&mesh, &line(0.0, self.sensor_span_mm, mid), self.nominal_points)?;
        let markers = sample_centerline(&mesh, &line(0.0, self.length_mm, mid), self.markers)?;
        let sensor = sample_centerline(&mesh, &line(0.0, self.sensor_span_mm, mid), 4 * self.sensor_segments + 1)?;
        let mode = ShapeMode::Orientation;
        let mut model = SoftBody::new(body, constraints, effectors(&nominal, mode))?;
        model.set_orientation_scale(self.length_mm)?;
        Device::assemble(
            DeviceKind::Strip,
            model,
            mode,
            nominal,
            markers,
            sensor,
            self.sensor_span_mm,
            self.sensor_segments,
            Point2::new(0.0, mid),
            self.length_mm,
        )
    }
}

impl FingerSpec {
    pub fn build(&self) -> Result<Device> {
        check_counts(self.sensor_segments, self.nominal_points, self.markers)?;
        let (dx, dy) = (self.length_mm / self.columns as f64, self.height_mm / self.rows as f64);
        let ch = self.chamber;
        let inside = |c: usize, r: usize| {
            let (x, y) = ((c as f64 + 0.5) * dx, (r as f64 + 0.5) * dy);
            ch.cavity(x, y) || ch.gap(x, y)
        };
        let mesh = TriMesh::grid(self.length_mm, self.height_mm, self.columns, self.rows, |c, r| !inside(c, r))?;
        let holes = mesh.boundary_loops()?.into_iter().filter(|lp| loop_area(&mesh, lp) < 0.0).count();
        if holes > 1 {
            return Err(Error::InvalidInput(format!("chamber cuts {holes} separate cavities")));
        }
        let cavity = mesh
            .boundary_loops()?
            .into_iter()
            .find(|lp| loop_area(&mesh, lp) < 0.0)
            .ok_or_else(|| Error::InvalidInput("chamber box does not cut a cavity into the finger".into()))?;
        let thickness = self.material.thickness_mm;
        let pressure = PressureConstraint::from_cavity_loop(&mesh, &cavity, thickness)?;
        let dir = direction(self.force_direction)?;
        let forces = self
            .force_sites_mm
            .iter()
            .map(|&x| ForceConstraint::new(barycentric_coords(&mesh, Point2::new(x, self.height_mm))?, dir))
            .collect::<Result<Vec<_>>>()?;
        if self.layer_segments == 0 {
            return Err(Error::InvalidInput("inextensible layer needs at least one segment".into()));
        }
        let layer_anchors = (0..=self.layer_segments)
            .map(|k| barycentric_coords(&mesh, Point2::new(self.length_mm * k as f64 / self.layer_segments as f64, 0.0)))
            .collect::<Result<Vec<_>>>()?;
        let length = LengthConstraint::from_rest(&mesh, layer_anchors)?;
        let body = ElasticBody::new(mesh.clone(), self.material.material()?)?;
        let constraints = ConstraintSet::new(&mesh, Some(pressure), forces, Some(length));
        let path = line(0.0, self.length_mm, self.sensor_height_mm);
        let nominal = sample_centerline(&mesh, &path, self.nominal_points)?;
        let markers = sample_centerline(&mesh, &path, self.markers)?;
        let sensor = sample_centerline(&mesh, &path, 4 * self.sensor_segments + 1)?;
        let mode = ShapeMode::Position;
        let model = SoftBody::new(body, constraints, effectors(&nominal, mode))?;
        Device::assemble(
            DeviceKind::Finger,
            model,
            mode,
            nominal,
            markers,
            sensor,
            self.length_mm,
            self.sensor_segments,
            Point2::new(0.0, self.sensor_height_mm),
            self.length_mm,
        )
    }
}

fn loop_area(mesh: &TriMesh, lp: &[[usize; 2]]) -> f64 {
    let v = mesh.vertices();
    0.5 * lp.iter().map(|e| v[e[0]].cross(v[e[1]])).sum::<f64>()
}

impl Device {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        kind: DeviceKind,
        model: SoftBody,
        mode: ShapeMode,
        nominal: Centerline,
        markers: Centerline,
        sensor: Centerline,
        sensor_span: f64,
        sensor_segments: usize,
        base_reference: Point2,
        characteristic_length: f64,
    ) -> Result<Self> {
        let rest_shape = model.effector_values()?;
        Ok(Self {
            kind,
            model,
            mode,
            nominal,
            markers,
            sensor,
            layout: SensorLayout::uniform(sensor_span, sensor_segments),
            base_reference,
            characteristic_length,
            rest_shape,
        })
    }

    /// Shape vector relative to the rest configuration.
    pub fn shape(&self) -> Result<Vec<f64>> {
        Ok(self.model.effector_values()?.iter().zip(&self.rest_shape).map(|(v, r)| v - r).collect())
    }

    pub fn marker_positions(&self) -> Vec<Point2> {
        self.model.positions(&self.markers)
    }

    pub fn curvature(&self) -> Result<CurvatureProfile> {
        curvature_profile(self.model.body().mesh(), &self.model.state().q, &self.sensor)
    }

    pub fn pressure_rows(&self) -> usize {
        self.model.constraints().pressure_count()
    }

    pub fn force_rows(&self) -> usize {
        self.model.constraints().forces.len()
    }

    /// Applied efforts vector from a pressure (kPa, ignored without a chamber)
    /// and per-site forces (N).
    pub fn efforts(&self, pressure_kpa: f64, forces_n: &[f64]) -> Result<Vec<f64>> {
        if forces_n.len() != self.force_rows() {
            return Err(Error::ShapeMismatch { expected: self.force_rows(), got: forces_n.len() });
        }
        let mut v = Vec::with_capacity(self.pressure_rows() + forces_n.len());
        if self.pressure_rows() == 1 {
            v.push(pressure_kpa * KPA_TO_N_PER_MM2);
        } else if pressure_kpa != 0.0 {
            return Err(Error::InvalidInput("pressure given for a device without a chamber".into()));
        }
        v.extend_from_slice(forces_n);
        Ok(v)
    }

    /// Same device with another material, at rest.
    pub fn with_material(&self, material: Material) -> Result<Self> {
        let mut d = self.clone();
        d.model = self.model.with_material(material)?;
        Ok(d)
    }

    pub fn reset(&mut self) {
        self.model.reset();
    }
}
