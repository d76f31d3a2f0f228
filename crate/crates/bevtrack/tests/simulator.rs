use bevtrack::formats::{write_scene, CalibrationDoc, FrameDoc};
use bevtrack::simulator::{corrupt, generate, visible_from, SceneConfig};
use bevtrack_core::detect::DEFAULT_THETA;

#[test]
fn misses_follow_binomial_statistics() {
    let cfg = SceneConfig {
        seed: 9,
        num_frames: 1000,
        miss_rate: 0.3,
        ..SceneConfig::default()
    };
    let truth = generate(&cfg).unwrap();
    let frames = corrupt(&truth, &cfg).unwrap();
    let n: usize = truth.frames.iter().map(|f| f.detections.len()).sum();
    let kept: usize = frames.iter().map(|f| f.detections.len()).sum();
    let mean = (1.0 - cfg.miss_rate) * n as f64;
    let sigma = (n as f64 * cfg.miss_rate * (1.0 - cfg.miss_rate)).sqrt();
    assert!((kept as f64 - mean).abs() < 3.0 * sigma, "{kept} vs {mean} ± {sigma}");
}

#[test]
fn clutter_rate_matches_poisson_mean() {
    let cfg = SceneConfig {
        seed: 4,
        num_frames: 1000,
        false_positive_rate: 1.0,
        ..SceneConfig::default()
    };
    let truth = generate(&cfg).unwrap();
    let frames = corrupt(&truth, &cfg).unwrap();
    let clutter: usize = frames
        .iter()
        .map(|f| f.detections.iter().filter(|d| d.identity.is_none()).count())
        .sum();
    // Poisson(1) per frame over 1000 frames: σ = √1000.
    assert!((clutter as f64 - 1000.0).abs() < 3.0 * 1000f64.sqrt(), "{clutter}");
}

#[test]
fn zero_rates_leave_frames_untouched() {
    let cfg = SceneConfig { seed: 5, ..SceneConfig::default() };
    let truth = generate(&cfg).unwrap();
    assert_eq!(corrupt(&truth, &cfg).unwrap(), truth.frames);
}

#[test]
fn labeled_tokens_sit_in_their_trajectory_cell() {
    let cfg = SceneConfig { seed: 2, num_frames: 80, entry_exit_rate: 0.05, ..SceneConfig::default() };
    let truth = generate(&cfg).unwrap();
    for frame in &truth.frames {
        for d in &frame.detections {
            let id = d.identity.expect("clean frames carry identities");
            let traj = truth.trajectories.iter().find(|t| t.identity == id).unwrap();
            let &(_, x, y) = traj.samples.iter().find(|s| s.0 == frame.frame_index).unwrap();
            assert_eq!(truth.grid.world_to_grid(x, y), Some(d.detection.cell));
            assert!(visible_from(&truth.calibrations, x, y) >= 1);
        }
    }
}

#[test]
fn written_frames_read_back_to_the_same_input() {
    let cfg = SceneConfig {
        seed: 6,
        num_frames: 5,
        miss_rate: 0.1,
        false_positive_rate: 1.0,
        feature_noise_sigma: 0.1,
        ..SceneConfig::default()
    };
    let truth = generate(&cfg).unwrap();
    let frames = corrupt(&truth, &cfg).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    write_scene(tmp.path(), &truth, &frames, false).unwrap();
    let calib = CalibrationDoc::read(&tmp.path().join("calibration.json")).unwrap();
    assert_eq!(calib.calibrations().unwrap(), truth.calibrations);
    for f in &frames {
        let path = tmp.path().join(format!("frames/frame_{:06}.json", f.frame_index));
        let doc = FrameDoc::read(&path).unwrap();
        assert_eq!(doc.to_input(DEFAULT_THETA).unwrap(), f.to_input());
    }
}
