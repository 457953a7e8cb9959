use proptest::prelude::*;
use sen2sharp::baselines::{sharpen_bicubic, sharpen_gihs, sharpen_hpf, synth_pan, DEFAULT_BOX};
use sen2sharp::compare::baseline_products;
use sen2sharp::fusion::{build_input_stack, forward_sr, sharpen_scene};
use sen2sharp::metrics::ergas;
use sen2sharp::net::{AblationFlags, Architecture, FusionModel};
use sen2sharp::raster::{Grid, RasterStack, BANDS_10M};
use sen2sharp::resample::{degrade, mtf_gaussian_kernel};
use sen2sharp::synth::{synth_scene, SynthConfig, SyntheticScene};
use sen2sharp::wald::hpf_kernel;

fn scene(size: usize, seed: u64) -> SyntheticScene {
    synth_scene(&SynthConfig {
        width: size,
        height: size,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn max_abs_diff(a: &RasterStack, b: &RasterStack) -> f64 {
    a.grids()
        .iter()
        .zip(b.grids())
        .flat_map(|(x, y)| x.data().iter().zip(y.data()).map(|(p, q)| (p - q).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max)
}

fn flags_strategy() -> impl Strategy<Value = AblationFlags> {
    (any::<bool>(), any::<bool>()).prop_map(|(use_z, use_hpf)| AblationFlags { use_z, use_hpf })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn degrade_commutes_with_offset(seed in 0u64..1000, c in -2.0f64..2.0, gain in 0.15f64..0.6) {
        let band = scene(32, seed).truth.grid(0);
        let k = mtf_gaussian_kernel(gain, 2).unwrap();
        let shifted = degrade(&band.map(|v| v + c), &k, 2).unwrap();
        let expect = degrade(&band, &k, 2).unwrap().map(|v| v + c);
        for (a, b) in shifted.data().iter().zip(expect.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn baselines_keep_shape(seed in 0u64..1000) {
        let s = scene(32, seed);
        for (method, out) in baseline_products(&s.scene.z, &s.scene.x).unwrap() {
            prop_assert_eq!(out.band_count(), 6, "{}", method);
            prop_assert_eq!((out.width(), out.height()), (32, 32));
            prop_assert_eq!(out.band_names(), s.scene.x.band_names());
        }
    }

    #[test]
    fn constant_pans_inject_nothing(seed in 0u64..1000, level in 0.05f64..0.8) {
        let s = scene(32, seed);
        let up = sharpen_bicubic(&s.scene.x).unwrap();
        let flat = Grid::filled(32, 32, level);
        let hpf = sharpen_hpf(&up, &vec![flat.clone(); 6], DEFAULT_BOX).unwrap();
        prop_assert!(max_abs_diff(&hpf, &up) < 1e-12);
        let gihs = sharpen_gihs(&up, &flat).unwrap();
        prop_assert!(max_abs_diff(&gihs, &up) < 1e-12);
    }

    #[test]
    fn pan_assignment_ignores_affine_rescaling(seed in 0u64..1000, band in 0usize..4, a in 0.1f64..10.0, c in -1.0f64..1.0) {
        let s = scene(32, seed);
        let up = sharpen_bicubic(&s.scene.x).unwrap();
        let mut grids = s.scene.z.grids();
        grids[band] = grids[band].map(|v| a * v + c);
        let z2 = RasterStack::from_grids(&BANDS_10M, &grids, s.scene.z.resolution_m()).unwrap();
        let pick = |z: &RasterStack| -> Vec<String> {
            synth_pan(z, &up).unwrap().1.mapping.into_iter().map(|m| m.pan).collect()
        };
        prop_assert_eq!(pick(&s.scene.z), pick(&z2));
    }

    #[test]
    fn ergas_grows_away_from_unit_gain(seed in 0u64..1000, d1 in 0.001f64..0.05, extra in 0.001f64..0.05, up in any::<bool>()) {
        let r = scene(16, seed).truth;
        let scaled = |k: f64| {
            let g: Vec<Grid> = r.grids().iter().map(|g| g.map(|v| k * v)).collect();
            RasterStack::from_grids(&r.band_names(), &g, r.resolution_m()).unwrap()
        };
        let sign = if up { 1.0 } else { -1.0 };
        let near = ergas(&scaled(1.0 + sign * d1), &r, 0.5).unwrap();
        let far = ergas(&scaled(1.0 + sign * (d1 + extra)), &r, 0.5).unwrap();
        prop_assert!(near < far);
    }

    #[test]
    fn channel_count_follows_flags(flags in flags_strategy(), seed in 0u64..1000) {
        let s = scene(16, seed);
        let z = flags.use_z.then_some(&s.scene.z);
        let t = build_input_stack(z, &s.scene.x, flags, &hpf_kernel(0.3).unwrap()).unwrap();
        prop_assert_eq!(t.channels(), if flags.use_z { 10 } else { 6 });
        prop_assert_eq!(t.channels(), flags.input_channels());
    }

    #[test]
    fn zero_network_is_bicubic(flags in flags_strategy(), seed in 0u64..1000) {
        let s = scene(32, seed);
        let mut m = FusionModel::initialized(flags, Architecture { hidden: [4, 4], kernel: 3 }, seed).unwrap();
        m.zero_convs();
        let z = flags.use_z.then_some(&s.scene.z);
        let out = forward_sr(&m, z, &s.scene.x, &hpf_kernel(0.3).unwrap()).unwrap();
        prop_assert_eq!(out, sharpen_bicubic(&s.scene.x).unwrap());
    }

    #[test]
    fn tiling_does_not_change_output(seed in 0u64..1000, tile in 20usize..70, overlap in 3usize..9) {
        prop_assume!(tile > 2 * overlap);
        let s = scene(48, seed);
        let m = FusionModel::initialized(AblationFlags::default(), Architecture { hidden: [4, 4], kernel: 3 }, seed).unwrap();
        let k = hpf_kernel(0.3).unwrap();
        let full = forward_sr(&m, Some(&s.scene.z), &s.scene.x, &k).unwrap();
        let tiled = sharpen_scene(&m, &s.scene, tile, overlap, &k).unwrap();
        prop_assert!(max_abs_diff(&full, &tiled) < 1e-9);
    }
}
