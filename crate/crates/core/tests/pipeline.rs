use sen2sharp::compare::{compare_methods, find, rows_to_csv};
use sen2sharp::fusion::{sharpen_scene, train, TrainConfig};
use sen2sharp::metrics::{evaluate, MetricsConfig};
use sen2sharp::net::{decode_checkpoint, encode_checkpoint, AblationFlags, Architecture};
use sen2sharp::raster::{decode_raster, encode_raster, BANDS_20M};
use sen2sharp::synth::{synth_scene, SynthConfig};
use sen2sharp::wald::make_reduced_scene;
use sen2sharp::Error;

fn small_config(flags: AblationFlags) -> TrainConfig {
    TrainConfig {
        epochs: 4,
        batch_size: 4,
        learning_rate: 0.02,
        patch: 16,
        stride: 8,
        flags,
        arch: Architecture {
            hidden: [6, 6],
            kernel: 3,
        },
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn train_sharpen_evaluate_compare() {
    let s = synth_scene(&SynthConfig {
        width: 96,
        height: 96,
        seed: 4,
        ..SynthConfig::default()
    })
    .unwrap();
    let full = small_config(AblationFlags::default());
    let ds = full.dataset(&s.scene).unwrap();
    assert_eq!(ds.input_channels(), Some(10));
    assert_eq!(ds.train.len() + ds.validation.len(), ds.len());
    let (model, history) = train(&ds, &full).unwrap();
    assert_eq!(history.epochs.len(), 4);
    assert!(history.epochs.iter().all(|e| e.train_loss.is_finite()));
    assert!(history.to_csv().starts_with("epoch,train_loss,val_loss,seconds\n"));

    let (back, _) = decode_checkpoint(&encode_checkpoint(&model, None).unwrap()).unwrap();
    assert_eq!(back, model);

    let fused = sharpen_scene(&back, &s.scene, 64, 16, &full.hpf_kernel().unwrap()).unwrap();
    assert_eq!((fused.width(), fused.height()), (96, 96));
    assert_eq!(fused.band_names(), BANDS_20M.map(String::from).to_vec());
    assert_eq!(fused.resolution_m(), s.scene.z.resolution_m());
    assert_eq!(decode_raster(&encode_raster(&fused).unwrap()).unwrap().band_count(), 6);

    let metrics = MetricsConfig {
        q_window: 16,
        ..MetricsConfig::default()
    };
    let report = evaluate(&fused, &s.truth, &metrics).unwrap();
    assert!(report.q_mean > 0.5 && report.q_mean <= 1.0);
    assert!(report.ergas > 0.0);

    let unguided = small_config(AblationFlags {
        use_z: false,
        use_hpf: true,
    });
    let (m2, _) = train(&unguided.dataset(&s.scene).unwrap(), &unguided).unwrap();
    let rs = make_reduced_scene(&s.scene, &full.nyquist_gains).unwrap();
    let models = vec![
        (AblationFlags::default().label().to_string(), model),
        (unguided.flags.label().to_string(), m2),
    ];
    let rows = compare_methods(&rs.z_down, &rs.x_down, &rs.reference, &models, &full.hpf_kernel().unwrap(), &metrics)
        .unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(names, ["PCA", "IHS", "HPF", "bicubic", "proposed", "proposed (without z)"]);
    assert!(find(&rows, "HPF").unwrap().ergas < find(&rows, "bicubic").unwrap().ergas);
    let csv = rows_to_csv(&rows);
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.lines().nth(3).unwrap().starts_with("HPF,"));
}

#[test]
fn mismatched_dataset_is_rejected() {
    let s = synth_scene(&SynthConfig {
        width: 64,
        height: 64,
        seed: 2,
        ..SynthConfig::default()
    })
    .unwrap();
    let ds = small_config(AblationFlags::default()).dataset(&s.scene).unwrap();
    let wrong = small_config(AblationFlags {
        use_z: false,
        use_hpf: true,
    });
    assert!(matches!(train(&ds, &wrong), Err(Error::ChannelMismatch { .. })));
}
