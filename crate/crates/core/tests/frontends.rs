mod common;

use vgs::frontends::{compute_logmel, frame_count, MelConfig, Waveform, Window};

#[test]
fn logmel_matches_brute_force_dft() {
    for (i, window) in [Window::Hamming, Window::Hann].into_iter().enumerate() {
        let cfg = MelConfig {
            window,
            target_frames: 64,
            ..MelConfig::default()
        };
        for s in 0..5u64 {
            let len = 300 + (s as usize * 1777) % 6000;
            let samples = common::random_clip(len, 10 * i as u64 + s);
            let spec = compute_logmel(
                &Waveform {
                    samples: samples.clone(),
                    sample_rate: 16000,
                },
                &cfg,
            )
            .unwrap();
            let oracle = common::brute_force_logmel(&samples, &cfg);
            assert_eq!(spec.valid_frames, oracle.len());
            for (t, row) in oracle.iter().enumerate() {
                for (m, &v) in row.iter().enumerate() {
                    let got = spec.row(t)[m] as f64;
                    assert!((got - v).abs() < 1e-4, "clip {s} frame {t} bin {m}: {got} vs {v}");
                }
            }
        }
    }
}

#[test]
fn frame_counts_follow_formula() {
    let cfg = MelConfig {
        target_frames: 10_000,
        ..MelConfig::default()
    };
    for len in [1usize, 399, 400, 401, 559, 560, 16000, 16001, 31999] {
        let expected = if len < 400 { 1 } else { 1 + (len - 400) / 160 };
        assert_eq!(frame_count(len, 400, 160), expected);
        let w = Waveform {
            samples: vec![0.1; len],
            sample_rate: 16000,
        };
        assert_eq!(compute_logmel(&w, &cfg).unwrap().valid_frames, expected);
    }
}
