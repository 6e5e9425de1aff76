//! Fixed-lag working memory of post-fusion BEV features.

use std::collections::VecDeque;
use std::sync::Arc;

use crate::error::{shape_err, Error, Result};
use crate::grid::{GridSpec, Pose2};
use crate::heatmap::OverlapHeatmap;
use crate::tensorops::{FeatureMap, WarpPlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    /// Holds repeats of the first frame's encoder output.
    Seeded,
    /// `replace_initial` has run; only `advance` is allowed.
    Replaced,
    Streaming,
}

/// Sliding window of the last `capacity` fused features, kept aligned with
/// the current ego frame, together with the overlap heatmap.
///
/// Entries are plain values: nothing stored here is connected to any
/// differentiation record.
#[derive(Clone, Debug)]
pub struct WorkingMemory {
    entries: VecDeque<FeatureMap<f32>>,
    capacity: usize,
    heatmap: OverlapHeatmap,
    spec: GridSpec,
    phase: Phase,
}

impl WorkingMemory {
    /// Seeds the buffer with `capacity` copies of the first frame's features.
    pub fn init(f_bev_t0: &FeatureMap<f32>, capacity: usize, spec: &GridSpec) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("working memory capacity must be at least 1".into()));
        }
        if f_bev_t0.height != spec.h_cells || f_bev_t0.width != spec.w_cells {
            return Err(shape_err!(
                "feature map is {}x{}, grid is {}x{}",
                f_bev_t0.height,
                f_bev_t0.width,
                spec.h_cells,
                spec.w_cells
            ));
        }
        Ok(WorkingMemory {
            entries: std::iter::repeat_n(f_bev_t0.clone(), capacity).collect(),
            capacity,
            heatmap: OverlapHeatmap::init(spec),
            spec: *spec,
            phase: Phase::Seeded,
        })
    }

    /// Swaps the seeded encoder features for the first fused output.
    pub fn replace_initial(&mut self, fused_t0: &FeatureMap<f32>) -> Result<()> {
        if self.phase != Phase::Seeded {
            return Err(Error::State("replace_initial is only valid right after the first fusion".into()));
        }
        self.check_shape(fused_t0)?;
        for e in self.entries.iter_mut() {
            e.clone_from(fused_t0);
        }
        self.phase = Phase::Replaced;
        Ok(())
    }

    /// Pushes `fused_t`, evicts the oldest entry, then moves everything into
    /// the next ego frame and bumps the heatmap.
    pub fn advance(&mut self, fused_t: &FeatureMap<f32>, rel_next: &Pose2) -> Result<()> {
        self.check_shape(fused_t)?;
        self.entries.pop_front();
        self.entries.push_back(fused_t.clone());
        if !rel_next.is_identity() {
            let plan = Arc::new(WarpPlan::new(&self.spec, rel_next));
            for e in self.entries.iter_mut() {
                *e = plan.apply(e);
            }
        }
        self.heatmap = self.heatmap.step(rel_next)?;
        self.phase = Phase::Streaming;
        Ok(())
    }

    fn check_shape(&self, f: &FeatureMap<f32>) -> Result<()> {
        let expect = self.entries[0].shape();
        if f.shape() != expect {
            return Err(shape_err!("memory entries are {:?}, got {:?}", expect, f.shape()));
        }
        Ok(())
    }

    /// True until the first fused output has replaced the seed entries.
    pub fn is_seeded(&self) -> bool {
        self.phase == Phase::Seeded
    }

    /// Entries concatenated along channels, oldest first.
    pub fn stacked(&self) -> FeatureMap<f32> {
        let first = &self.entries[0];
        let mut values = Vec::with_capacity(first.len() * self.capacity);
        for e in &self.entries {
            values.extend_from_slice(&e.values);
        }
        FeatureMap {
            channels: first.channels * self.capacity,
            height: first.height,
            width: first.width,
            values,
        }
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = &FeatureMap<f32>> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn channels(&self) -> usize {
        self.entries[0].channels
    }

    pub fn heatmap(&self) -> &OverlapHeatmap {
        &self.heatmap
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::relative_transform;

    fn tagged(tag: f32, c: usize, spec: &GridSpec) -> FeatureMap<f32> {
        FeatureMap::filled(c, spec.h_cells, spec.w_cells, tag)
    }

    fn tags(wm: &WorkingMemory) -> Vec<f32> {
        wm.entries().map(|e| e.values[0]).collect()
    }

    #[test]
    fn init_repeats_first_frame() {
        let spec = GridSpec::new(4, 6, 1.0).unwrap();
        let f = tagged(7.0, 3, &spec);
        let wm = WorkingMemory::init(&f, 4, &spec).unwrap();
        assert_eq!(wm.len(), 4);
        assert!(wm.entries().all(|e| *e == f));
        assert_eq!(wm.heatmap(), &OverlapHeatmap::init(&spec));

        let single = WorkingMemory::init(&f, 1, &spec).unwrap();
        assert_eq!(single.stacked(), f);
        assert!(WorkingMemory::init(&f, 0, &spec).is_err());
    }

    #[test]
    fn stacked_channel_count() {
        let spec = GridSpec::new(2, 3, 1.0).unwrap();
        let wm = WorkingMemory::init(&tagged(1.0, 256, &spec), 4, &spec).unwrap();
        assert_eq!(wm.stacked().channels, 1024);
    }

    #[test]
    fn stacked_blocks_follow_entry_order() {
        let spec = GridSpec::new(2, 3, 1.0).unwrap();
        let mut wm = WorkingMemory::init(&tagged(0.0, 2, &spec), 3, &spec).unwrap();
        for t in 1..=3 {
            wm.advance(&tagged(t as f32, 2, &spec), &Pose2::IDENTITY).unwrap();
        }
        let s = wm.stacked();
        for (block, e) in wm.entries().enumerate() {
            assert_eq!(&s.slice_channels(block * 2, 2).unwrap(), e);
            assert_eq!(e.values[0], block as f32 + 1.0);
        }
    }

    #[test]
    fn replace_initial_only_once() {
        let spec = GridSpec::new(3, 3, 1.0).unwrap();
        let mut wm = WorkingMemory::init(&tagged(1.0, 2, &spec), 4, &spec).unwrap();
        let fused = tagged(9.0, 2, &spec);
        wm.replace_initial(&fused).unwrap();
        assert!(wm.entries().all(|e| *e == fused));
        assert_eq!(wm.len(), 4);
        assert!(wm.replace_initial(&fused).is_err());
        wm.advance(&fused, &Pose2::IDENTITY).unwrap();
        assert!(wm.replace_initial(&fused).is_err());
    }

    #[test]
    fn advance_rejects_shape_mismatch() {
        let spec = GridSpec::new(3, 3, 1.0).unwrap();
        let mut wm = WorkingMemory::init(&tagged(1.0, 2, &spec), 2, &spec).unwrap();
        assert!(wm.advance(&tagged(1.0, 3, &spec), &Pose2::IDENTITY).is_err());
        assert!(wm.replace_initial(&tagged(1.0, 3, &spec)).is_err());
    }

    #[test]
    fn initial_content_evicted_after_capacity_advances() {
        let spec = GridSpec::new(3, 3, 1.0).unwrap();
        let mut wm = WorkingMemory::init(&tagged(-1.0, 1, &spec), 4, &spec).unwrap();
        for t in 0..4 {
            assert!(tags(&wm).contains(&-1.0));
            wm.advance(&tagged(t as f32, 1, &spec), &Pose2::IDENTITY).unwrap();
        }
        assert_eq!(tags(&wm), vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn heatmap_follows_step() {
        let spec = GridSpec::new(8, 12, 1.0).unwrap();
        let mut wm = WorkingMemory::init(&tagged(0.0, 1, &spec), 2, &spec).unwrap();
        let rel = relative_transform(&Pose2::IDENTITY, &Pose2::new(1.3, 0.4, 0.1));
        let expect = wm.heatmap().step(&rel).unwrap();
        wm.advance(&tagged(0.0, 1, &spec), &rel).unwrap();
        assert_eq!(wm.heatmap(), &expect);
    }
}
