use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Centerline, Point2, TriMesh};

/// Signed curvature samples along a centerline.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureProfile {
    /// Arc positions at rest (mm).
    pub arcs: Vec<f64>,
    /// Curvature (1/mm); positive for counter-clockwise turning.
    pub kappa: Vec<f64>,
}

/// Curvature of the circle through three points.
pub fn circumscribed_curvature(a: Point2, b: Point2, c: Point2) -> Option<f64> {
    let (ab, bc, ca) = (a.distance(b), b.distance(c), c.distance(a));
    let floor = 1e-12 * (1.0 + ab.max(bc));
    if ab <= floor || bc <= floor || ca <= floor {
        return None;
    }
    Some(2.0 * (b - a).cross(c - b) / (ab * bc * ca))
}

pub fn curvature_of_points(points: &[Point2], arcs: &[f64]) -> Result<CurvatureProfile> {
    if points.len() < 3 || arcs.len() != points.len() {
        return Err(Error::InvalidInput("curvature needs at least 3 points with matching arcs".into()));
    }
    let n = points.len();
    let mut kappa = vec![0.0; n];
    for i in 1..n - 1 {
        kappa[i] = circumscribed_curvature(points[i - 1], points[i], points[i + 1])
            .ok_or(Error::DegenerateSegment { index: i, length: points[i].distance(points[i + 1]) })?;
    }
    kappa[0] = kappa[1];
    kappa[n - 1] = kappa[n - 2];
    Ok(CurvatureProfile { arcs: arcs.to_vec(), kappa })
}

pub fn curvature_profile(mesh: &TriMesh, q: &[f64], centerline: &Centerline) -> Result<CurvatureProfile> {
    curvature_of_points(&centerline.positions(mesh, q), &centerline.arc_positions)
}

impl CurvatureProfile {
    /// `∫|κ| ds` over `[s0, s1]`, trapezoidal on the piecewise-linear profile.
    pub fn integrate_abs(&self, s0: f64, s1: f64) -> f64 {
        let at = |s: f64| -> f64 {
            let i = self.arcs.partition_point(|&a| a <= s).clamp(1, self.arcs.len() - 1);
            let (a0, a1) = (self.arcs[i - 1], self.arcs[i]);
            let t = ((s - a0) / (a1 - a0)).clamp(0.0, 1.0);
            self.kappa[i - 1] * (1.0 - t) + self.kappa[i] * t
        };
        let mut knots = vec![s0];
        knots.extend(self.arcs.iter().copied().filter(|&a| a > s0 && a < s1));
        knots.push(s1);
        knots
            .windows(2)
            .map(|w| {
                let (ka, kb) = (at(w[0]), at(w[1]));
                let h = w[1] - w[0];
                if ka * kb >= 0.0 {
                    0.5 * h * (ka.abs() + kb.abs())
                } else {
                    // the linear piece crosses zero inside the interval
                    0.5 * h * (ka * ka + kb * kb) / (ka.abs() + kb.abs())
                }
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorLayout {
    /// Tap positions along the sensor (mm); segment j spans taps j and j+1.
    pub tap_arcs_mm: Vec<f64>,
    pub base_resistance_ohm: Vec<f64>,
    /// Ω per rad of integrated |curvature|.
    pub curvature_gain_ohm: f64,
    pub coupling: f64,
    pub noise_std_ohm: f64,
}

pub const DEFAULT_BASE_OHM: f64 = 10_000.0;
pub const DEFAULT_GAIN_OHM: f64 = 5_000.0;
pub const DEFAULT_COUPLING: f64 = 0.15;
pub const DEFAULT_NOISE_OHM: f64 = 20.0;

impl SensorLayout {
    /// `segments` equal segments over `[0, span]` with default electrical parameters.
    pub fn uniform(span: f64, segments: usize) -> Self {
        Self {
            tap_arcs_mm: (0..=segments).map(|i| span * i as f64 / segments as f64).collect(),
            base_resistance_ohm: vec![DEFAULT_BASE_OHM; segments],
            curvature_gain_ohm: DEFAULT_GAIN_OHM,
            coupling: DEFAULT_COUPLING,
            noise_std_ohm: DEFAULT_NOISE_OHM,
        }
    }

    pub fn segment_count(&self) -> usize {
        self.base_resistance_ohm.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tap_arcs_mm.len() < 2 || self.tap_arcs_mm.len() != self.base_resistance_ohm.len() + 1 {
            return Err(Error::InvalidInput("sensor needs one more tap than segments".into()));
        }
        if self.tap_arcs_mm.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("tap positions must be strictly increasing".into()));
        }
        if self.base_resistance_ohm.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidInput("base resistance must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.coupling) {
            return Err(Error::InvalidInput("coupling must lie in [0, 1)".into()));
        }
        if !(self.curvature_gain_ohm >= 0.0) || !(self.noise_std_ohm >= 0.0) {
            return Err(Error::InvalidInput("gain and noise must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResistanceVector {
    pub r: Vec<f64>,
    pub timestamp: usize,
}

/// `r_j = base_j + g_j + coupling · mean_{k≠j} g_k + noise`, `g_j = gain · ∫_j |κ| ds`.
pub fn simulate_resistance<R: Rng + ?Sized>(
    layout: &SensorLayout,
    profile: &CurvatureProfile,
    timestamp: usize,
    rng: &mut R,
) -> Result<ResistanceVector> {
    layout.validate()?;
    let (first, last) = (layout.tap_arcs_mm[0], *layout.tap_arcs_mm.last().unwrap());
    let (lo, hi) = (profile.arcs[0], *profile.arcs.last().unwrap());
    if first < lo - 1e-9 || last > hi + 1e-9 {
        return Err(Error::InvalidInput(format!("curvature profile [{lo}, {hi}] does not cover sensor [{first}, {last}]")));
    }
    let m = layout.segment_count();
    let gains: Vec<f64> = layout.tap_arcs_mm.windows(2).map(|w| layout.curvature_gain_ohm * profile.integrate_abs(w[0], w[1])).collect();
    let total: f64 = gains.iter().sum();
    let noise = Normal::new(0.0, layout.noise_std_ohm).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let r = (0..m)
        .map(|j| {
            let others = if m > 1 { (total - gains[j]) / (m - 1) as f64 } else { 0.0 };
            let n = if layout.noise_std_ohm > 0.0 { noise.sample(rng) } else { 0.0 };
            (layout.base_resistance_ohm[j] + gains[j] + layout.coupling * others + n).max(f64::MIN_POSITIVE)
        })
        .collect();
    Ok(ResistanceVector { r, timestamp })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arc_points(radius: f64, n: usize, length: f64) -> (Vec<Point2>, Vec<f64>) {
        let arcs: Vec<f64> = (0..n).map(|i| length * i as f64 / (n - 1) as f64).collect();
        let pts = arcs.iter().map(|&s| {
            let t = s / radius;
            Point2::new(radius * t.sin(), radius * (1.0 - t.cos()))
        });
        (pts.collect(), arcs)
    }

    #[test]
    fn straight_line_has_zero_curvature() {
        let pts: Vec<Point2> = (0..6).map(|i| Point2::new(i as f64 * 3.0, 1.0)).collect();
        let arcs: Vec<f64> = (0..6).map(|i| i as f64 * 3.0).collect();
        assert!(curvature_of_points(&pts, &arcs).unwrap().kappa.iter().all(|&k| k == 0.0));
    }

    #[test]
    fn circle_curvature() {
        let (pts, arcs) = arc_points(50.0, 9, 80.0);
        for k in curvature_of_points(&pts, &arcs).unwrap().kappa {
            assert!((k - 0.02).abs() < 1e-6, "{k}");
        }
    }

    #[test]
    fn s_curve_changes_sign() {
        // counter-clockwise arc then a clockwise arc of the same radius
        let r = 20.0;
        let mut pts = Vec::new();
        for i in 0..=8 {
            let t = i as f64 * 0.1;
            pts.push(Point2::new(r * t.sin(), r * (1.0 - t.cos())));
        }
        let (t0, c) = (0.8_f64, Point2::new(2.0 * r * 0.8_f64.sin(), 2.0 * r * (1.0 - 0.8_f64.cos()) - r));
        for i in 1..=8 {
            let t = t0 - i as f64 * 0.1;
            pts.push(Point2::new(c.x - r * t.sin(), c.y + r * t.cos()));
        }
        let arcs: Vec<f64> = (0..pts.len()).map(|i| i as f64 * 2.0).collect();
        let k = curvature_of_points(&pts, &arcs).unwrap().kappa;
        assert!(k[1..7].iter().all(|&v| v > 0.0));
        assert!(k[10..15].iter().all(|&v| v < 0.0));
    }

    #[test]
    fn coincident_points_are_rejected() {
        let pts = vec![Point2::new(0.0, 0.0), Point2::new(0.0, 0.0), Point2::new(1.0, 0.0)];
        assert!(matches!(curvature_of_points(&pts, &[0.0, 1.0, 2.0]), Err(Error::DegenerateSegment { .. })));
    }

    fn quiet(coupling: f64) -> SensorLayout {
        SensorLayout { coupling, noise_std_ohm: 0.0, ..SensorLayout::uniform(40.0, 4) }
    }

    fn bump(segment: usize) -> CurvatureProfile {
        let arcs: Vec<f64> = (0..=40).map(|i| i as f64).collect();
        let kappa = arcs.iter().map(|&s| if s > segment as f64 * 10.0 + 1.0 && s < segment as f64 * 10.0 + 9.0 { 0.01 } else { 0.0 }).collect();
        CurvatureProfile { arcs, kappa }
    }

    #[test]
    fn flat_sensor_reads_base() {
        let flat = CurvatureProfile { arcs: vec![0.0, 40.0], kappa: vec![0.0, 0.0] };
        let r = simulate_resistance(&quiet(0.15), &flat, 0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(r.r, vec![DEFAULT_BASE_OHM; 4]);
    }

    #[test]
    fn locality_without_coupling() {
        let r = simulate_resistance(&quiet(0.0), &bump(2), 0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(r.r[2] > DEFAULT_BASE_OHM);
        for j in [0, 1, 3] {
            assert_eq!(r.r[j], DEFAULT_BASE_OHM);
        }
    }

    #[test]
    fn coupling_leaks_a_fixed_share() {
        let r = simulate_resistance(&quiet(0.2), &bump(1), 0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        // integral of the bump: 0.01 over 6 mm plus two 1 mm ramps
        let g = DEFAULT_GAIN_OHM * 0.07;
        assert!((r.r[1] - DEFAULT_BASE_OHM - g).abs() < 1e-9);
        for j in [0, 2, 3] {
            assert!((r.r[j] - DEFAULT_BASE_OHM - 0.2 * g / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn noise_is_seeded() {
        let layout = SensorLayout::uniform(40.0, 4);
        let a = simulate_resistance(&layout, &bump(0), 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = simulate_resistance(&layout, &bump(0), 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sign_crossing_integral() {
        let p = CurvatureProfile { arcs: vec![0.0, 2.0], kappa: vec![-1.0, 1.0] };
        assert!((p.integrate_abs(0.0, 2.0) - 1.0).abs() < 1e-12);
        assert!((p.integrate_abs(0.5, 1.0) - 0.125).abs() < 1e-12);
        assert!((p.integrate_abs(0.5, 1.5) - 0.25).abs() < 1e-12);
    }
}
