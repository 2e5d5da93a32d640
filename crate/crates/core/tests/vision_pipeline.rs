//! Episode ingestion and the frame selection / preprocessing chain.

use fino_core::audio::AudioSignal;
use fino_core::rng::RngState;
use fino_core::synth::{generate_episode, SynthSpec};
use fino_core::tensor::Tensor;
use fino_core::vision::*;
use fino_core::FinoError;
use proptest::prelude::*;

/// Flat table at 1.5 m; `near(t)` gives the fraction of columns (from the
/// left) covered by something at 0.2 m in frame `t`.
fn episode(n: usize, w: usize, h: usize, near: impl Fn(usize) -> f64) -> Episode {
    let mut rgb = Vec::new();
    let mut depth = Vec::new();
    for t in 0..n {
        let cols = (near(t) * w as f64).round() as usize;
        let d: Vec<f32> = (0..w * h).map(|i| if i % w < cols { 0.2 } else { 1.5 }).collect();
        let c: Vec<u8> = (0..w * h * 3).map(|i| ((i * 7 + t * 13) % 256) as u8).collect();
        rgb.push(RgbFrame { width: w, height: h, data: c });
        depth.push(DepthFrame { width: w, height: h, data: d });
    }
    Episode {
        id: "e".into(),
        label: Label::Success,
        manipulation: "test".into(),
        rgb,
        depth,
        timestamps: (0..n).map(|i| i as f64 * 0.1).collect(),
        audio: AudioSignal::new(vec![0.0; (n as f64 * 0.1 * 16000.0) as usize], 16000).unwrap(),
        phases: None,
        crop_rect: None,
    }
}

#[test]
fn occlusion_rule_examples() {
    let f = OcclusionFilter::default();
    let all_near = DepthFrame { width: 4, height: 4, data: vec![0.1; 16] };
    let all_far = DepthFrame { width: 4, height: 4, data: vec![1.5; 16] };
    assert!(f.is_occluded(&all_near));
    assert!(!f.is_occluded(&all_far));
    // Exactly at the limit is kept: the rule is a strict inequality.
    let mut edge = vec![1.5f32; 20];
    edge[..4].fill(0.1);
    assert!(!f.is_occluded(&DepthFrame { width: 5, height: 4, data: edge }));
}

#[test]
fn arm_sweep_frames_are_exactly_removed() {
    // Arm covers 40% of the view in frames 8..12, a sliver elsewhere.
    let ep = episode(20, 10, 6, |t| if (8..12).contains(&t) { 0.4 } else { 0.1 });
    let kept = filter_occluded(&ep, &OcclusionFilter::default()).unwrap();
    let expected: Vec<usize> = (0..20).filter(|t| !(8..12).contains(t)).collect();
    assert_eq!(kept, expected);
}

#[test]
fn too_few_survivors_make_the_episode_unusable() {
    let ep = episode(12, 10, 6, |t| if t < 5 { 0.9 } else { 0.0 });
    assert!(matches!(
        filter_occluded(&ep, &OcclusionFilter::default()),
        Err(FinoError::EpisodeUnusable { .. })
    ));
}

#[test]
fn phase_examples() {
    let frames: Vec<usize> = (0..30).collect();
    let p = segment_phases("e", &frames, None).unwrap();
    assert_eq!(p.approach, (0..10).collect::<Vec<_>>());
    assert_eq!(p.manipulate, (10..20).collect::<Vec<_>>());
    assert_eq!(p.retreat, (20..30).collect::<Vec<_>>());
    let a = PhaseAnnotations { approach_end: 12, manipulate_end: 20 };
    let p = segment_phases("e", &frames, Some(a)).unwrap();
    assert_eq!((p.approach.len(), p.manipulate.len(), p.retreat.len()), (12, 8, 10));
    let frames: Vec<usize> = (0..31).collect();
    let p = segment_phases("e", &frames, None).unwrap();
    assert_eq!((p.approach.len(), p.manipulate.len(), p.retreat.len()), (11, 10, 10));
    assert!(matches!(segment_phases("e", &[0, 1], None), Err(FinoError::EpisodeUnusable { .. })));
}

#[test]
fn per_frame_selection_is_uniform() {
    let phases = Phases {
        approach: (0..20).collect(),
        manipulate: vec![],
        retreat: (20..24).collect(),
    };
    let draws = 10_000;
    let mut counts = [0usize; 20];
    let mut rng = RngState::new(42).stream();
    for _ in 0..draws {
        for i in sample_frames("e", &phases, &mut rng).unwrap() {
            if i < 20 {
                counts[i] += 1;
            }
        }
    }
    // Each draw includes a given frame with probability 4/20.
    let p = 4.0 / 20.0;
    let mean = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for (i, &c) in counts.iter().enumerate() {
        assert!((c as f64 - mean).abs() <= 3.0 * sigma, "frame {i}: {c} vs {mean} +- {sigma}");
    }
}

#[test]
fn sampling_is_seeded() {
    let phases = segment_phases("e", &(0..24).collect::<Vec<_>>(), None).unwrap();
    let draw = |seed| sample_frames("e", &phases, &mut RngState::new(seed).stream()).unwrap();
    assert_eq!(draw(3), draw(3));
    assert!((0..10).any(|s| draw(s) != draw(3)));
}

#[test]
fn crop_examples() {
    let (w, h) = (640, 480);
    let board: Vec<u8> = (0..w * h).map(|i| (((i % w) / 8 + (i / w) / 8) % 2 * 255) as u8).collect();
    let rect = CropRect { x: 200, y: 120, width: 224, height: 224 };
    let out = crop_plane(&board, w, h, 1, rect).unwrap();
    assert_eq!(out.len(), 224 * 224);
    for y in 0..224 {
        for x in 0..224 {
            assert_eq!(out[y * 224 + x], board[(y + 120) * w + x + 200]);
        }
    }
    let bad = CropRect { x: 500, y: 300, width: 224, height: 224 };
    assert!(matches!(crop_plane(&board, w, h, 1, bad), Err(FinoError::Config(_))));
}

#[test]
fn stacking_normalizes_depth() {
    let rgb = vec![vec![255u8; 2 * 2 * 3]];
    let depth = vec![vec![2.0f32, 3.5, 0.0, 1.0]];
    let t = stack_rgbd(&rgb, &depth, 2, 2, 2.0).unwrap();
    assert_eq!(t.shape(), &[1, 4, 2, 2]);
    assert_eq!(&t.data()[12..16], &[1.0, 1.0, 0.0, 0.5]);
    assert!(t.data()[..12].iter().all(|&v| v == 1.0));

    let mut r = RngState::new(5).stream();
    let rgb: Vec<Vec<u8>> = (0..3).map(|_| (0..48).map(|_| r.below(256) as u8).collect()).collect();
    let depth: Vec<Vec<f32>> = (0..3).map(|_| (0..16).map(|_| r.uniform_in(-0.5, 3.0) as f32).collect()).collect();
    let t = stack_rgbd(&rgb, &depth, 4, 4, 2.0).unwrap();
    for f in 0..3 {
        for p in 0..16 {
            let want = (depth[f][p] as f64).clamp(0.0, 2.0) / 2.0;
            assert_eq!(t.data()[(f * 4 + 3) * 16 + p], want);
            for c in 0..3 {
                assert_eq!(t.data()[(f * 4 + c) * 16 + p], rgb[f][p * 3 + c] as f64 / 255.0);
            }
        }
    }
    assert!(stack_rgbd(&rgb, &depth[..2], 4, 4, 2.0).is_err());
}

fn uniform_sample(seed: u64) -> VisualSample {
    VisualSample {
        frames: Tensor::uniform(&[8, 4, 6, 6], 0.0, 1.0, &mut RngState::new(seed).stream()).unwrap(),
        source_indices: (0..8).collect(),
    }
}

#[test]
fn augmentation_identity_and_involution() {
    let s = uniform_sample(1);
    let off = AugmentConfig { jitter_p: 0.0, flip_p: 0.0, ..AugmentConfig::default() };
    let (out, rec) = augment_sequence(&s, &off, &mut RngState::new(0).stream());
    assert_eq!(out, s);
    assert_eq!(rec, AugmentRecord { jitter: None, flip: None });
    let flip = AugmentRecord { jitter: None, flip: Some(FlipAxis::Vertical) };
    assert_eq!(flip.apply(&flip.apply(&s)), s);
}

#[test]
fn jitter_is_shared_by_all_frames() {
    // Identical frames stay identical after jitter: every frame gets the
    // same transform.
    let base = uniform_sample(2);
    let plane = 4 * 36;
    let mut data = base.frames.data().to_vec();
    let first = data[..plane].to_vec();
    data[7 * plane..].copy_from_slice(&first);
    let s = VisualSample { frames: Tensor::new(&[8, 4, 6, 6], data).unwrap(), source_indices: (0..8).collect() };
    let forced = AugmentConfig { jitter_p: 1.0, flip_p: 0.0, ..AugmentConfig::default() };
    let (out, rec) = augment_sequence(&s, &forced, &mut RngState::new(9).stream());
    let j = rec.jitter.expect("jitter forced on");
    assert!((0.8..=1.2).contains(&j.brightness) && j.hue.abs() <= 0.05);
    let d = out.frames.data();
    assert_eq!(&d[..plane], &d[7 * plane..]);
    assert_ne!(&d[..3 * 36], &s.frames.data()[..3 * 36]);
    // Depth is not color jittered.
    assert_eq!(&d[3 * 36..plane], &s.frames.data()[3 * 36..plane]);
}

#[test]
fn eval_pipeline_is_deterministic_and_skips_manipulation() {
    let spec = SynthSpec { image_hw: (32, 32), ..SynthSpec::default() };
    let ep = generate_episode(&spec, Label::Fail, 3).unwrap();
    let pipe = VisionPipeline { input_hw: (32, 32), ..VisionPipeline::default() };
    let a = pipe.prepare(&ep, 1.0, &mut RngState::new(1).stream()).unwrap();
    let b = pipe.prepare(&ep, 1.0, &mut RngState::new(1).stream()).unwrap();
    assert_eq!(a, b);
    let p = spec.phase_bounds();
    assert!(a.source_indices.iter().all(|&i| i < p.approach_end || i >= p.manipulate_end));
    // Occluded frames are gone from the candidate set.
    let kept = filter_occluded(&ep, &pipe.occlusion).unwrap();
    for t in spec.occluded_frames() {
        assert!(!kept.contains(&t));
    }
    assert!(kept.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn episode_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { image_hw: (20, 24), n_frames: 12, audio_seconds: 1.0, ..SynthSpec::default() };
    let ep = generate_episode(&spec, Label::Fail, 0).unwrap();
    let path = write_episode(dir.path(), &ep).unwrap();
    assert_eq!(list_episode_dirs(dir.path()).unwrap(), vec![path.clone()]);
    let back = load_episode(&path).unwrap();
    assert_eq!(back.rgb, ep.rgb);
    assert_eq!(back.depth, ep.depth);
    assert_eq!(back.audio, ep.audio);
    assert_eq!(back.timestamps, ep.timestamps);
    assert_eq!(back, ep);
}

#[test]
fn metadata_rules() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec { image_hw: (16, 16), n_frames: 12, audio_seconds: 1.0, ..SynthSpec::default() };
    let ep = generate_episode(&spec, Label::Success, 1).unwrap();
    let path = write_episode(dir.path(), &ep).unwrap();
    let meta = path.join("meta.json");

    std::fs::write(&meta, r#"{"label": "fail", "manipulation": "push", "operator": "x"}"#).unwrap();
    let back = load_episode(&path).unwrap();
    assert_eq!((back.label, back.phases, back.crop_rect), (Label::Fail, None, None));

    std::fs::write(&meta, r#"{"manipulation": "push"}"#).unwrap();
    match load_episode(&path) {
        Err(FinoError::Ingestion { reason, .. }) => assert!(reason.contains("label"), "{reason}"),
        other => panic!("expected ingestion error, got {other:?}"),
    }
    std::fs::write(&meta, r#"{"label": "fail", "manipulation": "push", "approach_end": 3}"#).unwrap();
    match load_episode(&path) {
        Err(FinoError::Ingestion { reason, .. }) => assert!(reason.contains("manipulate_end"), "{reason}"),
        other => panic!("expected ingestion error, got {other:?}"),
    }
    std::fs::write(&meta, r#"{"label": "maybe", "manipulation": "push"}"#).unwrap();
    assert!(matches!(load_episode(&path), Err(FinoError::Ingestion { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pipeline_output_is_well_formed(index in 0usize..1000, seed in 0u64..1000, fail in any::<bool>(),
                                      fraction in 0.2f64..=1.0) {
        let spec = SynthSpec { image_hw: (24, 24), n_frames: 18, audio_seconds: 1.5, ..SynthSpec::default() };
        let label = if fail { Label::Fail } else { Label::Success };
        let ep = generate_episode(&spec, label, index).unwrap();
        let pipe = VisionPipeline { input_hw: (16, 16), ..VisionPipeline::default() };
        let s = pipe.prepare(&ep, fraction, &mut RngState::new(seed).stream()).unwrap();
        prop_assert_eq!(s.frames.shape(), &[8, 4, 16, 16]);
        prop_assert!(s.frames.data().iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(s.source_indices.len(), 8);
        prop_assert!(s.source_indices.windows(2).all(|w| w[0] <= w[1]));
        let horizon = fraction * ep.duration();
        prop_assert!(s.source_indices.iter().all(|&i| ep.timestamps[i] <= horizon));
    }

    #[test]
    fn manipulation_frames_never_sampled(n in 12usize..60, a in 0.2f64..0.45, m in 0.55f64..0.8, seed in 0u64..500) {
        let frames: Vec<usize> = (0..n).collect();
        let ann = PhaseAnnotations { approach_end: (a * n as f64) as usize, manipulate_end: (m * n as f64) as usize };
        let p = segment_phases("e", &frames, Some(ann)).unwrap();
        prop_assume!(!p.approach.is_empty() && !p.retreat.is_empty());
        let picked = sample_frames("e", &p, &mut RngState::new(seed).stream()).unwrap();
        prop_assert!(picked.iter().all(|i| !p.manipulate.contains(i)));
        let unannotated = segment_phases("e", &frames, None).unwrap();
        let total = unannotated.approach.len() + unannotated.manipulate.len() + unannotated.retreat.len();
        prop_assert_eq!(total, n);
    }
}
