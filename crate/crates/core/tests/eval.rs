use gsmr_core::eval::{
    cnr, cnr_from_stats, diaphragm_profile, evaluate, extract_slice, masked_stats, nrmse, pearson, render_slice, snr,
    snr_from_stats, EvalOptions, MetricDomain, MetricsReport, Plane, RoiSet, StateSet, VoxelColumn,
};
use gsmr_core::phantom::{render_phantom, PhantomScene};
use gsmr_core::{ComplexVolume, Dims, Error, RealVolume, C64};
use proptest::prelude::*;

/// Image whose first half is the ROI at `mu` and second half noise
/// alternating `mu_n ± sigma` (population std exactly `sigma`).
fn two_region(mu: f64, mu_n: f64, sigma: f64) -> (RealVolume, RealVolume, RealVolume) {
    let d = Dims::new(4, 4, 4);
    let roi = RealVolume::from_fn(d, |x, _, _| if x < 2 { 1.0 } else { 0.0 });
    let noise = RealVolume::from_fn(d, |x, _, _| if x >= 2 { 1.0 } else { 0.0 });
    let img = RealVolume::from_fn(d, |x, y, z| {
        if x < 2 {
            mu
        } else if (x + y + z) % 2 == 0 {
            mu_n + sigma
        } else {
            mu_n - sigma
        }
    });
    (img, roi, noise)
}

#[test]
fn snr_examples() {
    assert!((snr_from_stats(10.0, 1.0).unwrap() - 20.0).abs() < 1e-12);
    assert!(snr_from_stats(1.0, 1.0).unwrap().abs() < 1e-12);
    assert!((snr_from_stats(5.0, 2.0).unwrap() - 7.958_800_173_440_752).abs() < 1e-9);
    let (img, roi, noise) = two_region(10.0, 0.0, 1.0);
    assert!((snr(&img, &roi, &noise).unwrap() - 20.0).abs() < 1e-9);
}

#[test]
fn cnr_examples() {
    assert!((cnr_from_stats(11.0, 1.0, 1.0).unwrap() - 20.0).abs() < 1e-12);
    assert!(cnr_from_stats(2.0, 1.0, 1.0).unwrap().abs() < 1e-12);
    assert!(cnr_from_stats(1.0, 3.0, 2.0).unwrap().abs() < 1e-12);
    let (img, roi, noise) = two_region(11.0, 1.0, 1.0);
    assert!((cnr(&img, &roi, &noise).unwrap() - 20.0).abs() < 1e-9);
}

#[test]
fn equal_means_give_a_negative_infinite_cnr() {
    assert_eq!(cnr_from_stats(1.0, 1.0, 1.0).unwrap(), f64::NEG_INFINITY);
}

#[test]
fn flat_noise_region_is_degenerate() {
    let (img, roi, noise) = two_region(10.0, 3.0, 0.0);
    assert!(matches!(snr(&img, &roi, &noise), Err(Error::DegenerateNoise)));
    assert!(matches!(cnr(&img, &roi, &noise), Err(Error::DegenerateNoise)));
}

#[test]
fn population_std_is_used() {
    let d = Dims::new(2, 2, 2);
    let img = RealVolume::from_data(d, vec![0.0, 2.0, 0.0, 2.0, 0.0, 2.0, 0.0, 2.0]).unwrap();
    let (mu, sd) = masked_stats(&img, &RealVolume::filled(d, 1.0)).unwrap();
    assert_eq!((mu, sd), (1.0, 1.0));
}

fn random_volume(d: Dims, seed: u64) -> ComplexVolume {
    let mut s = seed;
    let mut next = move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    ComplexVolume::from_fn(d, |_, _, _| C64::new(next(), next()))
}

#[test]
fn nrmse_examples() {
    let t = random_volume(Dims::cube(6), 3);
    assert_eq!(nrmse(&t, &t).unwrap(), 0.0);
    assert!((nrmse(&ComplexVolume::zeros(t.dims), &t).unwrap() - 1.0).abs() < 1e-12);
    assert!((nrmse(&t.scaled(C64::new(1.1, 0.0)), &t).unwrap() - 0.1).abs() < 1e-12);
    assert!(nrmse(&t, &ComplexVolume::zeros(t.dims)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn nrmse_ignores_global_phase(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let d = Dims::cube(4);
        let (r, t) = (random_volume(d, seed), random_volume(d, seed + 1));
        let base = nrmse(&r, &t).unwrap();
        let e = nrmse(&r.scaled(C64::from_polar(1.0, a)), &t.scaled(C64::from_polar(1.0, b))).unwrap();
        prop_assert!((base - e).abs() < 1e-12);
    }

    #[test]
    fn snr_and_cnr_ignore_positive_scaling(mu in 0.5f64..20.0, mu_n in 0.0f64..5.0, sigma in 0.1f64..3.0, k in 0.01f64..100.0) {
        let (img, roi, noise) = two_region(mu, mu_n, sigma);
        let scaled = RealVolume::from_data(img.dims, img.data.iter().map(|v| v * k).collect()).unwrap();
        prop_assert!((snr(&img, &roi, &noise).unwrap() - snr(&scaled, &roi, &noise).unwrap()).abs() < 1e-10);
        prop_assert!((cnr(&img, &roi, &noise).unwrap() - cnr(&scaled, &roi, &noise).unwrap()).abs() < 1e-10);
    }
}

#[test]
fn pearson_of_affine_series_is_one() {
    let a = [0.0, 1.0, 2.5, 4.0];
    let b: Vec<f64> = a.iter().map(|v| 3.0 * v - 1.0).collect();
    assert!((pearson(&a, &b).unwrap().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(pearson(&a, &[1.0; 4]).unwrap(), None);
}

fn phantom_states(d: Dims, amps: &[f64]) -> (PhantomScene, Vec<ComplexVolume>) {
    let scene = PhantomScene::breathing_torso(d, 4.0, 0.25);
    let vols = amps.iter().map(|&a| render_phantom(&scene, a, d).unwrap().volume).collect();
    (scene, vols)
}

#[test]
fn static_states_have_a_constant_edge() {
    let d = Dims::cube(32);
    let (scene, vols) = phantom_states(d, &[0.5; 4]);
    let col = VoxelColumn::through_diaphragm(&scene, d).unwrap();
    let p = diaphragm_profile(&vols, col).unwrap();
    assert_eq!(p.n_states, 4);
    assert_eq!(p.image.len(), col.len() * 4);
    let e0 = p.edges[0].unwrap();
    assert!(p.edges.iter().all(|e| *e == Some(e0)));
}

#[test]
fn phantom_diaphragm_edge_tracks_the_translation() {
    let d = Dims::cube(32);
    let amps = [0.0, 0.25, 0.5, 0.75, 1.0];
    let (scene, vols) = phantom_states(d, &amps);
    let col = VoxelColumn::through_diaphragm(&scene, d).unwrap();
    let p = diaphragm_profile(&vols, col).unwrap();
    let disp: Vec<f64> = p.displacements().into_iter().map(Option::unwrap).collect();
    for (a, u) in amps.iter().zip(&disp) {
        assert!((u - 4.0 * a).abs() <= 1.0, "amplitude {a}: edge moved {u}");
    }
    let truth: Vec<f64> = amps.iter().map(|a| 4.0 * a).collect();
    assert!(pearson(&disp, &truth).unwrap().unwrap() > 0.99);
}

#[test]
fn column_without_an_edge_is_flagged() {
    let d = Dims::cube(16);
    let vols = vec![ComplexVolume::zeros(d); 2];
    let col = VoxelColumn { x: 3, y: 3, z_start: 0, z_end: 16 };
    let p = diaphragm_profile(&vols, col).unwrap();
    assert_eq!(p.edges, vec![None, None]);
    let bad = VoxelColumn { x: 16, ..col };
    assert!(diaphragm_profile(&vols, bad).is_err());
}

#[test]
fn zero_volume_renders_black() {
    let png = render_slice(&ComplexVolume::zeros(Dims::new(8, 6, 5)), Plane::Coronal, 2).unwrap();
    let img = image::load_from_memory(&png).unwrap().to_luma8();
    assert_eq!(img.dimensions(), (8, 5));
    assert!(img.pixels().all(|p| p.0[0] == 0));
}

#[test]
fn slice_dims_are_the_other_two_axes() {
    let v = random_volume(Dims::new(8, 6, 5), 1);
    let s = |p| {
        let s = extract_slice(&v, p, 1).unwrap();
        (s.width, s.height)
    };
    assert_eq!(s(Plane::Coronal), (8, 5));
    assert_eq!(s(Plane::Sagittal), (6, 5));
    assert_eq!(s(Plane::Axial), (8, 6));
    assert!(extract_slice(&v, Plane::Axial, 5).is_err());
}

#[test]
fn rendering_is_byte_identical() {
    let v = random_volume(Dims::cube(12), 9);
    let a = render_slice(&v, Plane::Sagittal, 4).unwrap();
    let b = render_slice(&v.clone(), Plane::Sagittal, 4).unwrap();
    assert_eq!(a, b);
    let img = image::load_from_memory(&a).unwrap().to_luma8();
    assert_eq!(img.pixels().map(|p| p.0[0]).max(), Some(255));
}

#[test]
fn phantom_rois_are_valid_and_round_trip() {
    let d = Dims::cube(32);
    let scene = PhantomScene::breathing_torso(d, 4.0, 0.25);
    let rois = RoiSet::from_scene(&scene, 0.0, d).unwrap();
    let names: Vec<&str> = rois.masks.keys().map(String::as_str).collect();
    assert_eq!(names, ["liver", "lung", "noise", "spine"]);
    let coronal = rois.restrict(Plane::Coronal, 16).unwrap();
    assert!(coronal.noise().unwrap().count_nonzero() > 0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rois.json");
    rois.save(&path).unwrap();
    assert_eq!(RoiSet::load(&path).unwrap(), rois);
}

#[test]
fn organs_thinner_than_the_erosion_are_left_out() {
    // at 16³ the spine is under a voxel in radius
    let d = Dims::cube(16);
    let scene = PhantomScene::breathing_torso(d, 2.0, 0.25);
    let rois = RoiSet::from_scene(&scene, 0.5, d).unwrap();
    let names: Vec<&str> = rois.masks.keys().map(String::as_str).collect();
    assert_eq!(names, ["liver", "lung", "noise"]);
}

#[test]
fn overlapping_noise_mask_is_rejected() {
    let d = Dims::cube(4);
    let mut rois = RoiSet {
        dims: d,
        masks: Default::default(),
    };
    rois.masks.insert("noise".into(), RealVolume::filled(d, 1.0));
    rois.masks.insert("liver".into(), RealVolume::from_fn(d, |x, _, _| (x == 0) as u8 as f64));
    assert!(rois.validate().is_err());
}

#[test]
fn evaluate_reports_every_metric() {
    let d = Dims::cube(32);
    let amps = [0.0, 0.5, 1.0];
    let (scene, truth) = phantom_states(d, &amps);
    let rois = RoiSet::from_scene(&scene, 0.0, d).unwrap();
    // Truth plus a checkerboard so the noise region has spread.
    let recon: Vec<ComplexVolume> = truth
        .iter()
        .map(|t| {
            let mut v = t.clone();
            for (i, x) in v.data.iter_mut().enumerate() {
                *x += C64::new(if i % 2 == 0 { 0.01 } else { -0.01 }, 0.0);
            }
            v
        })
        .collect();
    let dvfs: Vec<_> = amps.iter().map(|&a| scene.analytic_dvf(0.0, a, d)).collect();
    let opts = EvalOptions {
        domain: MetricDomain::default_for(d),
        column: Some(VoxelColumn::through_diaphragm(&scene, d).unwrap()),
        reference_displacement: Some(amps.iter().map(|a| 4.0 * a).collect()),
        motion_mask: None,
    };
    let r = evaluate(
        &StateSet { volumes: recon, dvfs: Some(dvfs.clone()) },
        &StateSet { volumes: truth, dvfs: Some(dvfs) },
        &rois,
        &opts,
    )
    .unwrap();
    assert!(r.get("snr_db", "liver", Some(1)).unwrap() > 30.0);
    assert!(r.get("cnr_db", "lung", Some(0)).is_some());
    // The central coronal slice misses the spine.
    assert!(r.get("snr_db", "spine", Some(0)).is_none());
    assert!(r.get("nrmse", "", Some(2)).unwrap() < 0.05);
    assert_eq!(r.get("dvf_epe_max", "", Some(2)), Some(0.0));
    assert!(r.get("diaphragm_pearson", "", None).unwrap() > 0.99);
    assert_eq!(r.flagged().count(), 0);
    let csv = r.to_csv();
    assert!(csv.starts_with("metric,roi,state,value\n"));
    assert!(csv.contains("\nnrmse,,0,"));
}

#[test]
fn report_keeps_the_negative_infinity_sentinel() {
    let mut r = MetricsReport::default();
    r.push("cnr_db", "liver", Some(0), f64::NEG_INFINITY);
    assert_eq!(r.flagged().count(), 1);
    assert!(r.to_csv().contains("cnr_db,liver,0,-inf"));
}
