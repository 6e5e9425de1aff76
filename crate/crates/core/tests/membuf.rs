use bevmem_core::grid::{relative_transform, GridSpec, Pose2};
use bevmem_core::membuf::WorkingMemory;
use bevmem_core::tensorops::FeatureMap;
use bevmem_core::OverlapHeatmap;

fn tagged(tag: f32, spec: &GridSpec) -> FeatureMap<f32> {
    FeatureMap::filled(2, spec.h_cells, spec.w_cells, tag)
}

fn tags(wm: &WorkingMemory) -> Vec<f32> {
    wm.entries().map(|e| {
        assert!(e.values.iter().all(|&v| v == e.values[0]), "sentinel smeared");
        e.values[0]
    }).collect()
}

#[test]
fn fifo_is_a_sliding_window_over_sentinel_streams() {
    let spec = GridSpec::new(3, 5, 1.0).unwrap();
    for cap in [1, 2, 4, 6, 8] {
        let mut wm = WorkingMemory::init(&tagged(-1.0, &spec), cap, &spec).unwrap();
        assert_eq!(tags(&wm), vec![-1.0; cap]);
        wm.replace_initial(&tagged(0.0, &spec)).unwrap();
        // Replay oracle: the stream seen so far, with the seed repeated in front.
        let mut stream = vec![0.0f32; cap];
        for t in 1..=100 {
            wm.advance(&tagged(t as f32, &spec), &Pose2::IDENTITY).unwrap();
            stream.push(t as f32);
            assert_eq!(wm.len(), cap);
            assert_eq!(tags(&wm), stream[stream.len() - cap..].to_vec(), "cap {cap}, t {t}");
        }
    }
}

#[test]
fn seed_content_is_gone_after_capacity_advances() {
    let spec = GridSpec::new(2, 2, 1.0).unwrap();
    let mut wm = WorkingMemory::init(&tagged(7.0, &spec), 4, &spec).unwrap();
    for t in 0..4 {
        assert!(tags(&wm).contains(&7.0));
        wm.advance(&tagged(100.0 + t as f32, &spec), &Pose2::IDENTITY).unwrap();
    }
    assert_eq!(tags(&wm), vec![100.0, 101.0, 102.0, 103.0]);
}

#[test]
fn world_fixed_impulse_stays_put_under_integer_motion() {
    let spec = GridSpec::new(15, 31, 1.0).unwrap();
    let world = [4.0, -2.0];
    let poses: Vec<Pose2> = (0..=10).map(|t| Pose2::new(-(t as f64), (t % 3) as f64 - 1.0, 0.0)).collect();
    let cell_of = |p: &Pose2| {
        let q = p.inverse().apply(world);
        let (i, j) = spec.ego_to_grid(q);
        (i.round() as usize, j.round() as usize)
    };
    let mut f = FeatureMap::<f32>::zeros(1, 15, 31);
    let (i0, j0) = cell_of(&poses[0]);
    f.set(0, i0, j0, 1.0);
    let mut wm = WorkingMemory::init(&f, 2, &spec).unwrap();
    let mut carried = f.clone();
    for t in 1..poses.len() {
        wm.advance(&carried, &relative_transform(&poses[t - 1], &poses[t])).unwrap();
        carried = wm.entries().last().unwrap().clone();
        let (i, j) = cell_of(&poses[t]);
        assert!((carried.get(0, i, j) - 1.0).abs() < 1e-3, "t={t}");
        assert!((carried.sum() - 1.0).abs() < 1e-3);
    }
}

#[test]
fn heatmap_advances_by_one_step() {
    let spec = GridSpec::new(6, 10, 1.0).unwrap();
    let mut wm = WorkingMemory::init(&tagged(0.0, &spec), 3, &spec).unwrap();
    let mut expect = OverlapHeatmap::init(&spec);
    for t in 0..5 {
        let rel = relative_transform(&Pose2::new(0.7 * t as f64, 0.0, 0.1 * t as f64), &Pose2::new(0.7 * (t + 1) as f64, 0.0, 0.1 * (t + 1) as f64));
        wm.advance(&tagged(1.0, &spec), &rel).unwrap();
        expect = expect.step(&rel).unwrap();
        assert_eq!(wm.heatmap(), &expect);
    }
}

#[test]
fn stacked_blocks_follow_entry_order() {
    let spec = GridSpec::new(2, 3, 1.0).unwrap();
    let mut wm = WorkingMemory::init(&tagged(0.0, &spec), 4, &spec).unwrap();
    for t in 1..=4 {
        wm.advance(&tagged(t as f32, &spec), &Pose2::IDENTITY).unwrap();
    }
    let s = wm.stacked();
    assert_eq!(s.channels, 8);
    for c in 0..8 {
        assert!(s.channel(c).iter().all(|&v| v == (c / 2 + 1) as f32), "channel {c}");
    }
    let one = WorkingMemory::init(&tagged(3.0, &spec), 1, &spec).unwrap();
    assert_eq!(one.stacked(), tagged(3.0, &spec));
}

#[test]
fn misuse_is_rejected() {
    let spec = GridSpec::new(2, 3, 1.0).unwrap();
    assert!(WorkingMemory::init(&tagged(0.0, &spec), 0, &spec).is_err());
    let mut wm = WorkingMemory::init(&tagged(0.0, &spec), 2, &spec).unwrap();
    assert!(wm.advance(&FeatureMap::zeros(3, 2, 3), &Pose2::IDENTITY).is_err());
    wm.replace_initial(&tagged(1.0, &spec)).unwrap();
    assert!(wm.replace_initial(&tagged(1.0, &spec)).is_err(), "second replacement");
    let mut wm = WorkingMemory::init(&tagged(0.0, &spec), 2, &spec).unwrap();
    wm.advance(&tagged(1.0, &spec), &Pose2::IDENTITY).unwrap();
    assert!(wm.replace_initial(&tagged(1.0, &spec)).is_err(), "mid-sequence replacement");
}
