use focalholo::container::{load_checkpoint, load_kernel, load_tensors, save_checkpoint, save_kernel, save_tensors, si_kernel_tensor};
use focalholo::dataset_gen::{generate_dataset, load_dataset, synthetic_scene, DatasetConfig, RgbdSample};
use focalholo::focal_model::{model_forward, ModelConfig, ModelParams};
use focalholo::imageio::{load_pfm, save_pfm, save_png};
use focalholo::sac_ops::SIKernel;
use focalholo::wave_optics::{build_asm_kernel, OpticalConfig};
use focalholo::Error;

#[test]
fn checkpoint_files_reproduce_model_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ModelConfig {
        height: 16,
        width: 16,
        base_channels: 2,
        k: 3,
    };
    let p = ModelParams::init(cfg, 2).unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &p).unwrap();
    let back = load_checkpoint(&path).unwrap();
    save_checkpoint(dir.path().join("again.ckpt"), &back).unwrap();
    assert_eq!(back, load_checkpoint(dir.path().join("again.ckpt")).unwrap());

    let data = focalholo::dataset_gen::quantize_depth(&synthetic_scene(16, 16, 1).depth, 6).unwrap();
    let surface = focalholo::dataset_gen::generate_focal_surface(&data, 0).unwrap();
    let h = focalholo::holo_opt::init_phase(&OpticalConfig { width: 16, height: 16, ..OpticalConfig::default() }, 0);
    let a = model_forward(&h, &surface, &p).unwrap();
    let b = model_forward(&h, &surface, &back).unwrap();
    assert!(focalholo::tensor::relative_l2(b.as_slice(), a.as_slice()) < 1e-5);

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(dir.path().join("cut.ckpt"), &bytes[..bytes.len() / 2]).unwrap();
    let err = load_checkpoint(dir.path().join("cut.ckpt")).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }), "{err}");
}

#[test]
fn kernel_and_tensor_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = OpticalConfig {
        width: 16,
        height: 16,
        ..OpticalConfig::default()
    };
    let k = build_asm_kernel(&cfg, 1, 4.0).unwrap();
    save_kernel(dir.path().join("k.bin"), &k).unwrap();
    let back = load_kernel(dir.path().join("k.bin")).unwrap();
    assert_eq!(back.band_mask(), k.band_mask());
    assert_eq!(back.wavelength_nm(), 520.0);

    let w = SIKernel::identity(2, 3).unwrap();
    save_tensors(dir.path().join("w.bin"), &[si_kernel_tensor("w", &w)]).unwrap();
    assert_eq!(load_tensors(dir.path().join("w.bin")).unwrap()[0].to_si_kernel().unwrap(), w);
}

#[test]
fn missing_files_report_their_path() {
    let err = load_pfm("/nonexistent/x.pfm").unwrap_err().to_string();
    assert!(err.contains("/nonexistent/x.pfm"), "{err}");
}

#[test]
fn dataset_round_trips_from_rgbd_files() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in");
    let scenes: Vec<RgbdSample> = (0..2).map(|i| synthetic_scene(16, 16, i)).collect();
    for (i, s) in scenes.iter().enumerate() {
        save_png(input.join(format!("img{i}.png")), &s.rgb).unwrap();
        save_pfm(input.join(format!("img{i}.pfm")), &s.depth).unwrap();
    }
    let samples = focalholo::dataset_gen::load_rgbd_dir(&input).unwrap();
    assert_eq!(samples.len(), 2);
    let cfg = DatasetConfig {
        optical: OpticalConfig {
            width: 16,
            height: 16,
            ..OpticalConfig::default()
        },
        surfaces_per_image: 3,
        full_iterations: 10,
        ..DatasetConfig::default()
    };
    let out = dir.path().join("ds");
    let records = generate_dataset(&samples, &cfg, &out).unwrap();
    assert_eq!(records.len(), 2 * 2 * 3);
    assert_eq!(load_dataset(&out, None).unwrap().len(), 12);
    let far = load_dataset(&out, Some(10.0)).unwrap();
    assert_eq!(far.len(), 6);
    assert!(far.iter().all(|r| r.base_distance_mm == 10.0));
}
