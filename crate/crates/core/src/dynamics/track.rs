use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::DynamicsError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackSegment {
    /// Arc length in meters.
    pub length: f64,
    /// Signed curvature in 1/m; zero for straights.
    pub curvature: f64,
}

/// Closed circuit made of straights and constant-curvature arcs. At each
/// junction the curvature blends smoothly over a quarter of the shortest
/// segment, so the width scales with the track.
///
/// Serialized as `{"segments": [{"length", "curvature"}], "half_width"}` in SI units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TrackFile", into = "TrackFile")]
pub struct Track {
    segments: Vec<TrackSegment>,
    half_width: f64,
    /// Cumulative arc length at the end of each segment.
    ends: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TrackFile {
    segments: Vec<TrackSegment>,
    half_width: f64,
}

impl TryFrom<TrackFile> for Track {
    type Error = DynamicsError;
    fn try_from(f: TrackFile) -> Result<Self, Self::Error> {
        Track::new(f.segments, f.half_width)
    }
}

impl From<Track> for TrackFile {
    fn from(t: Track) -> Self {
        TrackFile { segments: t.segments, half_width: t.half_width }
    }
}

/// Tolerance on the total heading change of a closed track.
const CLOSURE_TOLERANCE: f64 = 1e-9;

/// Blend width as a fraction of the shortest segment.
const BLEND_FRACTION: f64 = 0.25;

/// Quintic smoothstep on `[0, 1]` and its derivative.
fn smoothstep(t: f64) -> (f64, f64) {
    let t = t.clamp(0.0, 1.0);
    (t * t * t * (10.0 + t * (6.0 * t - 15.0)), 30.0 * t * t * (1.0 - t) * (1.0 - t))
}

impl Track {
    pub fn new(segments: Vec<TrackSegment>, half_width: f64) -> Result<Self, DynamicsError> {
        if segments.is_empty() {
            return Err(DynamicsError::Track("track has no segments".into()));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(DynamicsError::Track("half width must be positive".into()));
        }
        if segments.iter().any(|s| !(s.length > 0.0 && s.length.is_finite() && s.curvature.is_finite())) {
            return Err(DynamicsError::Track("segment lengths must be positive and finite".into()));
        }
        let heading: f64 = segments.iter().map(|s| s.length * s.curvature).sum();
        if ((heading.abs() - 2.0 * PI) / (2.0 * PI)).abs() > CLOSURE_TOLERANCE {
            return Err(DynamicsError::Track(format!(
                "heading change {heading:.6} rad does not close the loop"
            )));
        }
        let mut acc = 0.0;
        let ends = segments
            .iter()
            .map(|s| {
                acc += s.length;
                acc
            })
            .collect();
        Ok(Self { segments, half_width, ends })
    }

    /// Oval of two straights and two half circles, all sized in car lengths:
    /// straights of 20 l, arcs of radius 6 l and a half width of 1.5 l.
    pub fn desk(car_length: f64) -> Self {
        let radius = 6.0 * car_length;
        let straight = TrackSegment { length: 20.0 * car_length, curvature: 0.0 };
        let arc = TrackSegment { length: PI * radius, curvature: 1.0 / radius };
        Self::new(vec![straight, arc, straight, arc], 1.5 * car_length).expect("desk track is closed")
    }

    pub fn segments(&self) -> &[TrackSegment] {
        &self.segments
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn total_length(&self) -> f64 {
        *self.ends.last().expect("non-empty")
    }

    /// Curvature at arc length `s`, wrapping around the lap.
    pub fn curvature(&self, s: f64) -> f64 {
        self.curvature_with_slope(s).0
    }

    fn blend_width(&self) -> f64 {
        BLEND_FRACTION * self.segments.iter().map(|s| s.length).fold(f64::INFINITY, f64::min)
    }

    /// Curvature and its derivative along the centerline at `s`.
    pub fn curvature_with_slope(&self, s: f64) -> (f64, f64) {
        let total = self.total_length();
        let s = s.rem_euclid(total);
        let count = self.segments.len();
        let idx = self.ends.partition_point(|&end| end <= s).min(count - 1);
        let end = self.ends[idx];
        let start = end - self.segments[idx].length;
        let w = self.blend_width();
        let here = self.segments[idx].curvature;
        let (other, t) = if s - start < 0.5 * w {
            (self.segments[(idx + count - 1) % count].curvature, (s - start) / w + 0.5)
        } else if end - s < 0.5 * w {
            (self.segments[(idx + 1) % count].curvature, (s - end) / w + 0.5)
        } else {
            return (here, 0.0);
        };
        // blend runs from the earlier segment to the later one
        let (before, after) = if s - start < 0.5 * w { (other, here) } else { (here, other) };
        let (h, dh) = smoothstep(t);
        (before + (after - before) * h, (after - before) * dh / w)
    }

    /// Geometrically similar track: lengths multiplied by `factor`,
    /// curvatures divided by it.
    pub fn scaled(&self, factor: f64) -> Self {
        let segments = self
            .segments
            .iter()
            .map(|s| TrackSegment { length: s.length * factor, curvature: s.curvature / factor })
            .collect();
        Self::new(segments, self.half_width * factor).expect("scaling preserves closure")
    }

    /// Centerline points `(x, y, heading)` sampled every `ds` meters, for plotting.
    pub fn centerline(&self, ds: f64) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        let (mut x, mut y, mut psi) = (0.0f64, 0.0f64, 0.0f64);
        let total = self.total_length();
        let steps = (total / ds).ceil().max(1.0) as usize;
        let h = total / steps as f64;
        for i in 0..steps {
            out.push((x, y, psi));
            let s = i as f64 * h;
            let k0 = self.curvature(s);
            let km = self.curvature(s + 0.5 * h);
            let k1 = self.curvature(s + h);
            let mid = psi + h * (5.0 * k0 + 8.0 * km - k1) / 24.0;
            x += h * mid.cos();
            y += h * mid.sin();
            psi += h * (k0 + 4.0 * km + k1) / 6.0;
        }
        out.push((x, y, psi));
        out
    }
}
