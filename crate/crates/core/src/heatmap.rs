//! Temporal overlap heatmap: a per-cell count of how many consecutive frames
//! each BEV location has been in view, kept by warp-and-increment.

use crate::error::Result;
use crate::grid::{GridSpec, Pose2};
use crate::tensorops::{warp, FeatureMap};

#[derive(Clone, Debug, PartialEq)]
pub struct OverlapHeatmap {
    map: FeatureMap<f32>,
    spec: GridSpec,
}

impl OverlapHeatmap {
    /// Every cell starts at 1: nothing has been seen before the first frame.
    pub fn init(spec: &GridSpec) -> Self {
        OverlapHeatmap { map: FeatureMap::filled(1, spec.h_cells, spec.w_cells, 1.0), spec: *spec }
    }

    /// Carries the counts into the next ego frame; cells entering view read 0.
    pub fn propagate(&self, rel: &Pose2) -> Result<Self> {
        let mut map = warp(&self.map, rel, &self.spec)?;
        // Bilinear weights sum to at most 1, so no count can grow; the clamp
        // only removes f32 rounding overshoot.
        let ceiling = self.map.values.iter().copied().fold(0.0f32, f32::max);
        map.values.iter_mut().for_each(|v| *v = v.min(ceiling));
        Ok(OverlapHeatmap { map, spec: self.spec })
    }

    pub fn increment(&self) -> Self {
        let mut map = self.map.clone();
        map.values.iter_mut().for_each(|v| *v += 1.0);
        OverlapHeatmap { map, spec: self.spec }
    }

    pub fn step(&self, rel: &Pose2) -> Result<Self> {
        Ok(self.propagate(rel)?.increment())
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn map(&self) -> &FeatureMap<f32> {
        &self.map
    }

    pub fn values(&self) -> &[f32] {
        &self.map.values
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        self.map.get(0, i, j)
    }

    /// 8-bit grayscale rendering, `v -> round(255 * v / (t + 1))` at frame `t`.
    pub fn to_gray8(&self, frame_index: usize) -> Vec<u8> {
        let denom = (frame_index + 1) as f32;
        self.map
            .values
            .iter()
            .map(|&v| (255.0 * v / denom).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    /// Heatmap after following `poses` from the first one, one step per frame.
    pub fn along(spec: &GridSpec, poses: &[Pose2]) -> Result<Self> {
        let mut h = Self::init(spec);
        for w in poses.windows(2) {
            h = h.step(&crate::grid::relative_transform(&w[0], &w[1]))?;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use super::*;
    use crate::grid::relative_transform;

    fn forward(d: f64) -> Pose2 {
        relative_transform(&Pose2::IDENTITY, &Pose2::new(d, 0.0, 0.0))
    }

    #[test]
    fn init_is_all_ones() {
        let h = OverlapHeatmap::init(&GridSpec::default());
        assert_eq!(h.map().shape(), [1, 50, 100]);
        assert!(h.values().iter().all(|&v| v == 1.0));
        assert_eq!(h.values().iter().sum::<f32>(), 5000.0);
        let one = OverlapHeatmap::init(&GridSpec::new(1, 1, 1.0).unwrap());
        assert_eq!(one.values(), &[1.0]);
    }

    #[test]
    fn propagate_identity_is_bit_exact() {
        let spec = GridSpec::new(6, 9, 1.0).unwrap();
        let h = OverlapHeatmap::init(&spec).step(&forward(2.0)).unwrap();
        assert_eq!(h.propagate(&Pose2::IDENTITY).unwrap(), h);
    }

    #[test]
    fn propagate_integer_forward_shifts_counts() {
        let spec = GridSpec::new(4, 10, 1.0).unwrap();
        let mut h = OverlapHeatmap::init(&spec);
        // Make a column ramp so shifts are visible.
        for i in 0..4 {
            for j in 0..10 {
                h.map.set(0, i, j, j as f32 + 1.0);
            }
        }
        let d = 3;
        let p = h.propagate(&forward(d as f64)).unwrap();
        for i in 0..4 {
            for j in 0..10 {
                let expect = if j + d < 10 { (j + d) as f32 + 1.0 } else { 0.0 };
                assert_eq!(p.get(i, j), expect);
            }
        }
    }

    #[test]
    fn propagate_quarter_turn_rotates_square_block() {
        let spec = GridSpec::new(5, 9, 1.0).unwrap();
        let mut h = OverlapHeatmap::init(&spec);
        for i in 0..5 {
            for j in 0..9 {
                h.map.set(0, i, j, (i * 9 + j) as f32);
            }
        }
        let rel = relative_transform(&Pose2::IDENTITY, &Pose2::new(0.0, 0.0, FRAC_PI_2));
        let p = h.propagate(&rel).unwrap();
        // Exact point map: ego q -> R(+pi/2) q in the previous frame.
        for i in 0..5 {
            for j in 0..9 {
                let (x, y) = (j as f64 - 4.0, i as f64 - 2.0);
                let (sx, sy) = (-y, x);
                let (si, sj) = (sy + 2.0, sx + 4.0);
                let inside = si >= 0.0 && si <= 4.0 && sj >= 0.0 && sj <= 8.0;
                let expect = if inside { (si as usize * 9 + sj as usize) as f32 } else { 0.0 };
                assert_eq!(p.get(i, j), expect, "cell ({i},{j})");
            }
        }
    }

    #[test]
    fn increment_and_step() {
        let spec = GridSpec::new(3, 4, 1.0).unwrap();
        let zeros = OverlapHeatmap { map: FeatureMap::zeros(1, 3, 4), spec };
        assert!(zeros.increment().values().iter().all(|&v| v == 1.0));
        let mut h = OverlapHeatmap::init(&spec);
        for k in 1..=6 {
            h = h.step(&Pose2::IDENTITY).unwrap();
            assert!(h.values().iter().all(|&v| v == (k + 1) as f32));
        }
    }

    #[test]
    fn forward_motion_leaves_leading_band_at_one() {
        let spec = GridSpec::default();
        let mut h = OverlapHeatmap::init(&spec);
        for _ in 0..5 {
            h = h.step(&forward(4.0)).unwrap();
        }
        for i in 0..spec.h_cells {
            for j in 96..100 {
                assert_eq!(h.get(i, j), 1.0);
            }
            assert_eq!(h.get(i, 95), 2.0);
            assert_eq!(h.get(i, 0), 6.0);
        }
    }

    #[test]
    fn faster_ego_leaves_more_new_area() {
        let spec = GridSpec::default();
        let ones = |speed: f64| {
            let mut h = OverlapHeatmap::init(&spec);
            for _ in 0..6 {
                h = h.step(&forward(speed * 0.5)).unwrap();
            }
            h.values().iter().filter(|&&v| v == 1.0).count()
        };
        assert!(ones(14.0) > ones(6.0));
    }

    #[test]
    fn gray_export_scales_by_frame() {
        let spec = GridSpec::new(2, 2, 1.0).unwrap();
        let h = OverlapHeatmap::init(&spec).step(&Pose2::IDENTITY).unwrap();
        assert_eq!(h.to_gray8(1), vec![255; 4]);
        assert_eq!(h.to_gray8(3), vec![128; 4]);
    }
}
