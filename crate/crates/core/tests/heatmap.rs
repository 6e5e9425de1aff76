use bevmem_core::grid::{backward_flow, relative_transform, GridSpec, Pose2};
use bevmem_core::heatmap::OverlapHeatmap;
use bevmem_core::synth::{gen_trajectory, TrajectoryKind};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Recursive visit count by exact point mapping and nearest-cell lookup:
/// `v(x, t) = 1 + v(map(x), t - 1)` when the mapped point has a cell, else 1.
fn counting_oracle(spec: &GridSpec, poses: &[Pose2]) -> Vec<f64> {
    let (h, w, s) = (spec.h_cells, spec.w_cells, spec.cell_size_m);
    let (ci, cj) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut prev = vec![1.0; h * w];
    for t in 1..poses.len() {
        let (a, b) = (&poses[t], &poses[t - 1]);
        let (sa, ca) = a.yaw.sin_cos();
        let (sb, cb) = b.yaw.sin_cos();
        let mut cur = vec![1.0; h * w];
        for i in 0..h {
            for j in 0..w {
                let (ex, ey) = ((j as f64 - cj) * s, (i as f64 - ci) * s);
                let (wx, wy) = (a.x + ca * ex - sa * ey, a.y + sa * ex + ca * ey);
                let (dx, dy) = (wx - b.x, wy - b.y);
                let (px, py) = (cb * dx + sb * dy, -sb * dx + cb * dy);
                let (gi, gj) = ((py / s + ci).round(), (px / s + cj).round());
                if gi >= 0.0 && gj >= 0.0 && gi < h as f64 && gj < w as f64 {
                    cur[i * w + j] = 1.0 + prev[gi as usize * w + gj as usize];
                }
            }
        }
        prev = cur;
    }
    prev
}

fn integer_trajectory(seed: u64, frames: usize) -> Vec<Pose2> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Pose2::new(rng.gen_range(-20..20) as f64, rng.gen_range(-20..20) as f64, 0.0);
    let mut out = vec![p];
    for _ in 1..frames {
        p = Pose2::new(p.x + rng.gen_range(-1..=4) as f64, p.y + rng.gen_range(-2..=2) as f64, 0.0);
        out.push(p);
    }
    out
}

#[test]
fn integer_translations_match_the_counting_oracle_exactly() {
    let spec = GridSpec::default();
    for seed in 0..10 {
        let poses = integer_trajectory(seed, 40);
        let h = OverlapHeatmap::along(&spec, &poses).unwrap();
        let oracle = counting_oracle(&spec, &poses);
        for (k, (&v, &o)) in h.values().iter().zip(&oracle).enumerate() {
            assert_eq!(v as f64, o, "seed {seed}, cell {k}");
        }
    }
}

#[test]
fn identity_steps_give_uniform_counts() {
    let spec = GridSpec::new(5, 8, 1.0).unwrap();
    let h = OverlapHeatmap::along(&spec, &[Pose2::new(3.0, -1.0, 0.4); 7]).unwrap();
    assert!(h.values().iter().all(|&v| v == 7.0));
}

#[test]
fn turn_leaves_a_wedge_with_two_edges() {
    // After a quarter turn in place, the old field of view covers a rotated
    // rectangle: fresh cells on both sides of it, old counts inside.
    let spec = GridSpec::new(21, 41, 1.0).unwrap();
    let poses = [Pose2::IDENTITY, Pose2::new(0.0, 0.0, std::f64::consts::FRAC_PI_2)];
    let h = OverlapHeatmap::along(&spec, &poses).unwrap();
    let row = |i: usize| (0..41).map(|j| h.get(i, j)).collect::<Vec<_>>();
    let mid = row(10);
    assert_eq!(mid[20], 2.0);
    assert_eq!(mid[0], 1.0);
    assert_eq!(mid[40], 1.0);
    let edges = mid.windows(2).filter(|p| p[0] != p[1]).count();
    assert!(edges >= 2, "{mid:?}");
}

fn general_trajectory(seed: u64, frames: usize) -> Vec<Pose2> {
    let kind = [TrajectoryKind::Straight, TrajectoryKind::Turn, TrajectoryKind::VariedSpeed][seed as usize % 3];
    gen_trajectory(seed, kind, frames).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn counts_stay_between_one_and_frame_count(seed in 0u64..10_000, frames in 2usize..25) {
        let spec = GridSpec::new(20, 40, 1.0).unwrap();
        let poses = general_trajectory(seed, frames);
        let mut h = OverlapHeatmap::init(&spec);
        for (t, w) in poses.windows(2).enumerate() {
            h = h.step(&relative_transform(&w[0], &w[1])).unwrap();
            let (lo, hi) = h.values().iter().fold((f32::MAX, f32::MIN), |(a, b), &v| (a.min(v), b.max(v)));
            prop_assert!(lo >= 1.0 && hi <= (t + 2) as f32, "t={} range [{lo}, {hi}]", t + 1);
        }
    }

    #[test]
    fn cells_without_any_source_tap_read_exactly_one(seed in 0u64..10_000) {
        let spec = GridSpec::new(20, 40, 1.0).unwrap();
        let poses = general_trajectory(seed, 6);
        let h0 = OverlapHeatmap::along(&spec, &poses[..5]).unwrap();
        let rel = relative_transform(&poses[4], &poses[5]);
        let h1 = h0.step(&rel).unwrap();
        let flow = backward_flow(&spec, &rel);
        for i in 0..20 {
            for j in 0..40 {
                let (si, sj) = flow.source(i, j);
                if si <= -1.0 || sj <= -1.0 || si >= 20.0 || sj >= 40.0 {
                    prop_assert_eq!(h1.get(i, j), 1.0);
                }
            }
        }
    }
}

#[test]
fn faster_straight_motion_opens_a_wider_fresh_band() {
    let spec = GridSpec::default();
    let fresh = |speed: f64| {
        let poses: Vec<_> = (0..8).map(|t| Pose2::new(speed * 0.5 * t as f64, 0.0, 0.0)).collect();
        let h = OverlapHeatmap::along(&spec, &poses).unwrap();
        (0..100).filter(|&j| h.get(25, j) == 1.0).count()
    };
    assert_eq!(fresh(4.0), 2);
    assert_eq!(fresh(12.0), 6);
}
