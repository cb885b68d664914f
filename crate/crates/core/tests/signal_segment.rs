mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use vit_hgr::segment::{slide_windows, PatchGeometry, PatchLayout, WindowingSpec};
use vit_hgr::signal::{butterworth_lowpass, mu_law, preprocess, EmgRecording, FilterSpec};

fn recording(samples: Vec<f64>, channels: usize, rate: f64) -> EmgRecording {
    EmgRecording::new(samples, channels, rate, 2, 5, 1).unwrap()
}

#[test]
fn impulse_response_matches_closed_form() {
    for (fc, fs) in [(1.0, 2048.0), (50.0, 1000.0), (300.0, 2048.0), (0.5, 100.0)] {
        let k = (std::f64::consts::PI * fc / fs).tan();
        let (b, a) = (k / (1.0 + k), (k - 1.0) / (k + 1.0));
        let mut x = vec![0.0; 200];
        x[0] = 1.0;
        let y = butterworth_lowpass(&recording(x, 1, fs), &FilterSpec::new(fc)).unwrap();
        for (n, &v) in y.samples().iter().enumerate() {
            let want = if n == 0 { b } else { (b - a * b) * (-a).powi(n as i32 - 1) };
            assert!((v - want).abs() <= 1e-12, "fc {fc} n {n}: {v} vs {want}");
        }
    }
}

fn steady_gain(fc: f64, fs: f64, f: f64) -> f64 {
    let n = (fs * 30.0) as usize;
    let x: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / fs).sin()).collect();
    let y = butterworth_lowpass(&recording(x, 1, fs), &FilterSpec::new(fc)).unwrap();
    let tail = &y.samples()[n - (fs * 4.0) as usize..];
    tail.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

#[test]
fn cutoff_is_three_decibels_down() {
    for (fc, fs) in [(1.0, 2048.0), (10.0, 1000.0)] {
        let g = steady_gain(fc, fs, fc);
        assert!((g - std::f64::consts::FRAC_1_SQRT_2).abs() <= 0.02 * std::f64::consts::FRAC_1_SQRT_2, "gain {g}");
        let db = 20.0 * g.log10();
        assert!((db + 3.0103).abs() < 0.2);
    }
}

#[test]
fn passband_and_stopband_behave() {
    let dc = butterworth_lowpass(&recording(vec![2.5; 40_000], 1, 2048.0), &FilterSpec::default()).unwrap();
    assert!((dc.samples().last().unwrap() - 2.5).abs() < 2.5e-6);
    assert!(steady_gain(1.0, 2048.0, 20.0) < 0.06);
}

#[test]
fn mu_law_fixed_points() {
    for mu in [1.0, 255.0, 1e4] {
        assert_eq!(mu_law(0.0, mu), 0.0);
        assert!((mu_law(1.0, mu) - 1.0).abs() <= 1e-12);
        assert!((mu_law(-1.0, mu) + 1.0).abs() <= 1e-12);
    }
    assert!((mu_law(0.5, 255.0) - 0.875_703_068_6).abs() < 1e-9);
}

#[test]
fn preprocessing_commutes_with_channel_permutation() {
    let mut r = rng(51);
    let (n, c) = (300, 5);
    let samples = normal_vec(&mut r, n * c, 1.0);
    let perm = [3usize, 0, 4, 1, 2];
    let permuted: Vec<f64> = (0..n).flat_map(|i| perm.iter().map(move |&p| (i, p))).map(|(i, p)| samples[i * c + p]).collect();
    let a = preprocess(&recording(samples, c, 2048.0), &FilterSpec::default(), 255.0).unwrap();
    let b = preprocess(&recording(permuted, c, 2048.0), &FilterSpec::default(), 255.0).unwrap();
    for i in 0..n {
        for (k, &p) in perm.iter().enumerate() {
            assert_eq!(b.sample(i, k).to_bits(), a.sample(i, p).to_bits());
        }
    }
}

#[test]
fn preprocessing_is_deterministic_and_keeps_labels() {
    let samples = normal_vec(&mut rng(52), 256 * 3, 1.0);
    let rec = recording(samples, 3, 2048.0);
    let a = preprocess(&rec, &FilterSpec::default(), 255.0).unwrap();
    let b = preprocess(&rec, &FilterSpec::default(), 255.0).unwrap();
    assert_eq!(a, b);
    assert_eq!((a.subject_id, a.gesture_id, a.repetition_id), (2, 5, 1));
    let peak = a.samples().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!((peak - 1.0).abs() < 1e-12);
}

fn brute_force_count(t: usize, window: usize, skip: usize) -> usize {
    let mut count = 0;
    let mut start = 0;
    while start + window <= t {
        count += 1;
        start += skip;
    }
    count
}

#[test]
fn window_count_matches_enumeration() {
    let mut r = rng(53);
    for _ in 0..1000 {
        let window = r.random_range(1..=200);
        let skip = r.random_range(1..=window);
        let t = r.random_range(0..2500);
        let spec = WindowingSpec {
            window_size: window,
            skip_step: skip,
        };
        assert_eq!(spec.count(t), brute_force_count(t, window, skip), "T {t} window {window} skip {skip}");
    }
    let default = WindowingSpec::default();
    for t in [64, 95, 96, 128, 512, 2048] {
        assert_eq!(default.count(t), (t - 64) / 32 + 1);
    }
    assert_eq!(default.count(63), 0);
}

#[test]
fn windows_are_the_recording_slices() {
    let (n, c) = (200, 4);
    let samples: Vec<f64> = (0..n * c).map(|i| i as f64).collect();
    let rec = recording(samples.clone(), c, 2048.0);
    let spec = WindowingSpec {
        window_size: 16,
        skip_step: 7,
    };
    let windows = slide_windows(&rec, 2, 2, &spec).unwrap();
    assert_eq!(windows.len(), brute_force_count(n, 16, 7));
    for (k, w) in windows.iter().enumerate() {
        assert_eq!(w.data(), &samples[k * 7 * c..(k * 7 + 16) * c]);
        assert_eq!((w.gesture_id, w.subject_id, w.repetition_id), (5, 2, 1));
        assert_eq!(w.at(3, 1, 0), rec.sample(k * 7 + 3, 2));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn patchify_round_trip_is_exact(
        side in 1usize..4,
        t_blocks in 1usize..5,
        r_blocks in 1usize..4,
        c_blocks in 1usize..4,
        grid_depth in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let layout = if grid_depth { PatchLayout::GridDepth } else { PatchLayout::TimeByChannels };
        // TimeByChannels cuts a (T, rows·cols) plane; GridDepth cuts (rows, cols)
        let shape = match layout {
            PatchLayout::TimeByChannels => (t_blocks * side, r_blocks, c_blocks * side),
            PatchLayout::GridDepth => (t_blocks, r_blocks * side, c_blocks * side),
        };
        let values = normal_vec(&mut rng(seed), shape.0 * shape.1 * shape.2, 1.0);
        let w = vit_hgr::segment::WindowTensor::new(values, shape.0, shape.1, shape.2, 3, 1, 4).unwrap();
        let g = PatchGeometry::new(layout, side);
        let seq = g.patchify(&w).unwrap();
        let (n, d) = g.dims(shape).unwrap();
        prop_assert_eq!((seq.num_patches(), seq.patch_dim()), (n, d));
        prop_assert_eq!(n * d, w.data().len());
        let back = g.unpatchify(&seq, shape, (3, 1, 4)).unwrap();
        prop_assert_eq!(&back, &w);
        let mut a: Vec<u64> = seq.data().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u64> = w.data().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn filtered_envelope_is_bounded_by_input(seed in any::<u64>(), cutoff in 0.5f64..200.0) {
        let x: Vec<f64> = normal_vec(&mut rng(seed), 500, 1.0).into_iter().map(f64::abs).collect();
        let peak = x.iter().cloned().fold(0.0, f64::max);
        let y = butterworth_lowpass(&recording(x, 1, 2048.0), &FilterSpec::new(cutoff)).unwrap();
        // first-order low-pass of a non-negative signal has a non-negative impulse response
        prop_assert!(y.samples().iter().all(|&v| (-1e-15..=peak + 1e-12).contains(&v)));
    }
}

#[test]
fn default_geometry_gives_256_patches_of_16() {
    let g = PatchGeometry::new(PatchLayout::TimeByChannels, 4);
    assert_eq!(g.dims((64, 8, 8)).unwrap(), (256, 16));
    let g = PatchGeometry::new(PatchLayout::GridDepth, 4);
    assert_eq!(g.dims((64, 8, 8)).unwrap(), (4, 1024));
    assert!(PatchGeometry::new(PatchLayout::TimeByChannels, 3).dims((64, 8, 8)).is_err());
}
