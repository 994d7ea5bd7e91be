use proptest::prelude::*;

use focalholo::dataset_gen::{generate_focal_surface, in_focus_restoration, quantize_depth};
use focalholo::imageio::{decode_pfm, encode_pfm};
use focalholo::metrics::{psnr, ssim};
use focalholo::sac_ops::{sac_forward, sv_conv, SIKernel, SVKernel};
use focalholo::Tensor3;

fn tensor(c: usize, h: usize, w: usize, lo: f64, hi: f64) -> impl Strategy<Value = Tensor3> {
    prop::collection::vec(lo..hi, c * h * w).prop_map(move |d| Tensor3::from_vec(c, h, w, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantized_masks_partition(depth in tensor(1, 7, 5, 0.0, 1.0), n in 1usize..9) {
        let masks = quantize_depth(&depth, n).unwrap();
        prop_assert_eq!(masks.len(), n);
        for p in 0..35 {
            let s: f64 = masks.iter().map(|m| m.as_slice()[p]).sum();
            prop_assert_eq!(s, 1.0);
        }
    }

    #[test]
    fn restoration_mask_marks_matching_levels(depth in tensor(1, 6, 6, 0.0, 1.0), seed in any::<u64>()) {
        let masks = quantize_depth(&depth, 6).unwrap();
        let surface = generate_focal_surface(&masks, seed).unwrap();
        let planes: Vec<Tensor3> = (0..6).map(|j| Tensor3::filled(3, 6, 6, j as f64)).collect();
        let (r, m) = in_focus_restoration(&planes, &surface, &masks).unwrap();
        for p in 0..36 {
            let level = surface.levels()[p];
            prop_assert_eq!(r.as_slice()[p], level as f64);
            let scene = masks.iter().position(|mk| mk.as_slice()[p] == 1.0).unwrap();
            prop_assert_eq!(m.as_slice()[p] == 1.0, level == scene);
        }
    }

    #[test]
    fn pfm_round_trip(img in tensor(3, 4, 6, -1e3, 1e3)) {
        let f32_img = img.map(|v| v as f32 as f64);
        prop_assert_eq!(decode_pfm(&encode_pfm(&f32_img).unwrap()).unwrap(), f32_img);
    }

    #[test]
    fn sac_is_linear_in_the_input(
        a in tensor(2, 5, 4, -1.0, 1.0),
        b in tensor(2, 5, 4, -1.0, 1.0),
        vd in prop::collection::vec(-1.0..1.0f64, 5 * 4 * 2 * 9),
        wd in prop::collection::vec(-1.0..1.0f64, 3 * 2 * 9),
        s in -2.0..2.0f64,
    ) {
        let v = SVKernel::new(5, 4, 2, 3, vd).unwrap();
        let w = SIKernel::new(3, 2, 3, wd).unwrap();
        let mut comb = a.clone();
        comb.as_mut_slice().iter_mut().zip(b.as_slice()).for_each(|(x, y)| *x += s * y);
        let lhs = sac_forward(&comb, &v, &w).unwrap();
        let (fa, fb) = (sac_forward(&a, &v, &w).unwrap(), sac_forward(&b, &v, &w).unwrap());
        for ((l, x), y) in lhs.as_slice().iter().zip(fa.as_slice()).zip(fb.as_slice()) {
            prop_assert!((l - (x + s * y)).abs() < 1e-12);
        }
        let ones = SIKernel::filled(1, 2, 3, 1.0).unwrap();
        prop_assert_eq!(sac_forward(&a, &v, &ones).unwrap(), sv_conv(&a, &v).unwrap());
    }

    #[test]
    fn metrics_are_symmetric_and_bounded(a in tensor(3, 12, 12, 0.0, 1.0), b in tensor(3, 12, 12, 0.0, 1.0)) {
        prop_assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        let s = ssim(&a, &b, 1.0).unwrap();
        prop_assert_eq!(s, ssim(&b, &a, 1.0).unwrap());
        prop_assert!(s <= 1.0 && s >= -1.0);
        prop_assert!(psnr(&a, &b, 1.0).unwrap() >= 0.0);
    }

    #[test]
    fn psnr_decreases_with_error(a in tensor(1, 8, 8, 0.0, 1.0), e1 in 0.001..0.2f64, e2 in 0.001..0.2f64) {
        prop_assume!(e1 < e2);
        let p1 = psnr(&a, &a.map(|v| v + e1), 1.0).unwrap();
        let p2 = psnr(&a, &a.map(|v| v + e2), 1.0).unwrap();
        prop_assert!(p1 > p2);
    }
}
