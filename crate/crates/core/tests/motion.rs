use gsmr_core::motion::{
    compose_dvf, state_dvf, upsample_dvf, upsample_dvf_backward, warp, warp_backward, BasisGenerator, ConvDecoder,
    MotionBases, MotionModel, StateCoefficients,
};
use gsmr_core::phantom::{render_phantom, PhantomScene};
use gsmr_core::{ComplexVolume, Dims, Dvf, RealVolume, C64};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_volume(rng: &mut ChaCha8Rng, dims: Dims) -> ComplexVolume {
    ComplexVolume::from_fn(dims, |_, _, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
}

fn random_dvf(rng: &mut ChaCha8Rng, dims: Dims, amp: f64) -> Dvf {
    Dvf {
        components: std::array::from_fn(|_| RealVolume::from_fn(dims, |_, _, _| rng.random_range(-amp..amp))),
    }
}

fn dvf_dot(a: &Dvf, b: &Dvf) -> f64 {
    (0..3)
        .map(|c| {
            a.components[c]
                .data
                .iter()
                .zip(&b.components[c].data)
                .map(|(x, y)| x * y)
                .sum::<f64>()
        })
        .sum()
}

fn check(analytic: f64, fd: f64, what: &str) {
    let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6);
    assert!(rel < 1e-4, "{what}: analytic {analytic:e}, fd {fd:e}, rel {rel:e}");
}

#[test]
fn zero_field_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let v = random_volume(&mut rng, Dims::new(6, 7, 8));
    let out = warp(&v, &Dvf::zeros(v.dims)).unwrap();
    assert_eq!(out.data, v.data);
}

#[test]
fn integer_shift_of_ramp_is_exact() {
    let dims = Dims::cube(8);
    let v = ComplexVolume::from_fn(dims, |x, y, z| C64::new(x as f64 + 0.5 * y as f64, z as f64 - 2.0 * x as f64));
    let out = warp(&v, &Dvf::constant(dims, [1.0, 0.0, 0.0])).unwrap();
    for x in 0..7 {
        for y in 0..8 {
            for z in 0..8 {
                assert_eq!(out.get(x, y, z), v.get(x + 1, y, z));
            }
        }
    }
}

#[test]
fn warp_rejects_mismatched_field() {
    let v = ComplexVolume::zeros(Dims::cube(8));
    assert!(warp(&v, &Dvf::zeros(Dims::cube(4))).is_err());
}

#[test]
fn upsample_constant_and_zero() {
    let c = Dvf::constant(Dims::new(2, 3, 4), [0.5, -1.0, 2.0]);
    let f = upsample_dvf(&c, Dims::new(8, 12, 16)).unwrap();
    for (ch, want) in [2.0, -4.0, 8.0].iter().enumerate() {
        assert!(f.components[ch].data.iter().all(|v| (v - want).abs() < 1e-12));
    }
    let z = upsample_dvf(&Dvf::zeros(Dims::cube(3)), Dims::cube(12)).unwrap();
    assert!(z.is_zero());
    assert!(upsample_dvf(&c, Dims::new(8, 12, 15)).is_err());
}

#[test]
fn upsample_preserves_linear_ramp_in_interior() {
    let cd = Dims::cube(4);
    let (a, b) = (0.3, -0.7);
    let mut c = Dvf::zeros(cd);
    c.components[0] = RealVolume::from_fn(cd, |x, _, _| a * x as f64 + b);
    let f = upsample_dvf(&c, Dims::cube(16)).unwrap();
    for x in 0..16 {
        // fine voxel x sits at coarse coordinate (x + 0.5) / 4 - 0.5
        let cx = (x as f64 + 0.5) / 4.0 - 0.5;
        if !(0.0..=3.0).contains(&cx) {
            continue;
        }
        for y in 0..16 {
            for z in 0..16 {
                let got = f.components[0].get(x, y, z);
                assert!((got - 4.0 * (a * cx + b)).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn upsample_backward_is_the_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cd = Dims::new(3, 2, 4);
    let fd = Dims::new(12, 8, 16);
    let a = random_dvf(&mut rng, cd, 1.0);
    let b = random_dvf(&mut rng, fd, 1.0);
    let lhs = dvf_dot(&upsample_dvf(&a, fd).unwrap(), &b);
    let rhs = dvf_dot(&a, &upsample_dvf_backward(&b, cd).unwrap());
    assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
}

/// `L = ½‖warp(v, u) − t‖²`.
fn warp_loss(v: &ComplexVolume, u: &Dvf, t: &ComplexVolume) -> f64 {
    let w = warp(v, u).unwrap();
    0.5 * w.data.iter().zip(&t.data).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>()
}

#[test]
fn warp_gradients_match_finite_differences() {
    let dims = Dims::cube(8);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let v = random_volume(&mut rng, dims);
    let t = random_volume(&mut rng, dims);
    // fractional parts kept away from grid nodes so the interpolant is smooth
    let u = Dvf {
        components: std::array::from_fn(|_| {
            RealVolume::from_fn(dims, |_, _, _| {
                let m = rng.random_range(0.2..0.8);
                if rng.random_bool(0.5) { m } else { -m }
            })
        }),
    };
    let w = warp(&v, &u).unwrap();
    let mut up = w.clone();
    for (a, b) in up.data.iter_mut().zip(&t.data) {
        *a -= b;
    }
    let (gv, gu) = warp_backward(&v, &u, &up).unwrap();
    let h = 1e-6;
    for _ in 0..40 {
        let idx = rng.random_range(0..dims.len());
        let ch = rng.random_range(0..3);
        let mut p = u.clone();
        p.components[ch].data[idx] += h;
        let mut m = u.clone();
        m.components[ch].data[idx] -= h;
        let fd = (warp_loss(&v, &p, &t) - warp_loss(&v, &m, &t)) / (2.0 * h);
        check(gu.components[ch].data[idx], fd, &format!("u[{ch}][{idx}]"));

        let mut p = v.clone();
        p.data[idx].re += h;
        let mut m = v.clone();
        m.data[idx].re -= h;
        let fd_re = (warp_loss(&p, &u, &t) - warp_loss(&m, &u, &t)) / (2.0 * h);
        let mut p = v.clone();
        p.data[idx].im += h;
        let mut m = v.clone();
        m.data[idx].im -= h;
        let fd_im = (warp_loss(&p, &u, &t) - warp_loss(&m, &u, &t)) / (2.0 * h);
        if gv.data[idx].norm() > 1e-9 || fd_re.abs() > 1e-9 {
            check(gv.data[idx].re, fd_re, &format!("Re v[{idx}]"));
            check(gv.data[idx].im, fd_im, &format!("Im v[{idx}]"));
        }
    }
}

#[test]
fn compose_examples() {
    let cd = Dims::cube(4);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let bases = MotionBases {
        coarse_dims: cd,
        bases: vec![random_dvf(&mut rng, cd, 1.0), random_dvf(&mut rng, cd, 1.0)],
    };
    let mut coeff = StateCoefficients {
        alpha: vec![0.0, 0.5],
        learned: vec![vec![0.0], vec![0.0]],
    };
    assert!(compose_dvf(&bases, &coeff, 0).unwrap().is_zero());
    assert_eq!(compose_dvf(&bases, &coeff, 1).unwrap(), bases.bases[0].scaled(0.5));
    coeff.learned[1][0] = -0.25;
    let one = compose_dvf(&bases, &coeff, 1).unwrap();
    let doubled = StateCoefficients {
        alpha: coeff.alpha.iter().map(|a| 2.0 * a).collect(),
        learned: coeff.learned.iter().map(|r| r.iter().map(|b| 2.0 * b).collect()).collect(),
    };
    let two = compose_dvf(&bases, &doubled, 1).unwrap();
    for c in 0..3 {
        for (a, b) in one.components[c].data.iter().zip(&two.components[c].data) {
            assert!((2.0 * a - b).abs() < 1e-15);
        }
    }
    assert!(compose_dvf(&bases, &coeff, 2).is_err());
}

#[test]
fn reference_state_is_never_deformed() {
    let cd = Dims::cube(4);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let bases = MotionBases {
        coarse_dims: cd,
        bases: vec![random_dvf(&mut rng, cd, 1.0), random_dvf(&mut rng, cd, 1.0)],
    };
    let mut coeff = StateCoefficients::from_medians(&[-3.0, -1.0, 0.5, 2.0], 2).unwrap();
    assert_eq!(coeff.alpha, vec![-1.0, -1.0 / 3.0, 0.5 / 3.0, 2.0 / 3.0]);
    coeff.learned = vec![vec![0.3], vec![-0.2], vec![0.1], vec![0.7]];
    assert!(state_dvf(&bases, &coeff, 0).unwrap().is_zero());
    assert!(!state_dvf(&bases, &coeff, 3).unwrap().is_zero());
}

#[test]
fn direct_grid_starts_at_zero() {
    let g = BasisGenerator::direct_grid(Dims::cube(4), 2);
    let (b, tape) = g.generate().unwrap();
    assert!(tape.is_none());
    assert!(b.bases.iter().all(Dvf::is_zero));
}

#[test]
fn decoder_channel_count_must_match_bases() {
    let d = ConvDecoder::table1(Dims::cube(8), 6, 2.0, 1).unwrap();
    assert!(BasisGenerator::conv_decoder(d.clone(), 2).is_ok());
    assert!(BasisGenerator::conv_decoder(d, 4).is_err());
}

#[test]
fn decoder_output_is_bounded() {
    let mut d = ConvDecoder::table1(Dims::cube(8), 6, 1.5, 3).unwrap();
    // inflate the weights so tanh saturates
    for t in &mut d.theta {
        *t *= 1e4;
    }
    let (out, _) = d.forward();
    assert!(out.iter().all(|v| v.abs() <= 1.5));
    assert!(out.iter().any(|v| v.abs() > 1.4));
}

#[test]
fn full_depth_decoder_reaches_64_cubed() {
    let d = ConvDecoder::table1(Dims::cube(64), 6, 8.0, 4).unwrap();
    assert_eq!(d.latent_dims, Dims::cube(8));
    assert_eq!(d.latent.len(), 16 * 512);
    assert!(d.latent.iter().all(|v| (0.0..1.0).contains(v)));
    let (out, _) = d.forward();
    assert_eq!(out.len(), 6 * 64 * 64 * 64);
}

/// `L = Σ a·y + ½ Σ y²` over the decoder output.
fn decoder_loss(d: &ConvDecoder, a: &[f64]) -> (f64, Vec<f64>) {
    let (y, _) = d.forward();
    let loss = y.iter().zip(a).map(|(y, a)| a * y + 0.5 * y * y).sum();
    let up = y.iter().zip(a).map(|(y, a)| a + y).collect();
    (loss, up)
}

fn decoder_fd_check(d: &ConvDecoder, samples: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_out = d.out_channels() * d.output_dims().len();
    let a: Vec<f64> = (0..n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, up) = decoder_loss(d, &a);
    let (_, tape) = d.forward();
    let g = d.backward(&tape, &up).unwrap();
    assert_eq!(g.len(), d.n_params());
    for _ in 0..samples {
        let k = rng.random_range(0..d.n_params());
        // A step can straddle a LeakyReLU kink somewhere in the network, so
        // take the best of a few step sizes.
        let rel = [1e-5, 1e-6, 1e-7]
            .iter()
            .map(|&h| {
                let mut p = d.clone();
                p.theta[k] += h;
                let mut m = d.clone();
                m.theta[k] -= h;
                let fd = (decoder_loss(&p, &a).0 - decoder_loss(&m, &a).0) / (2.0 * h);
                (g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1e-6)
            })
            .fold(f64::INFINITY, f64::min);
        assert!(rel < 1e-4, "theta[{k}]: analytic {:e}, rel {rel:e}", g[k]);
    }
}

#[test]
fn single_conv_gradient_is_input_correlation() {
    let d = ConvDecoder::single_conv(Dims::new(5, 6, 4), 3, 3, 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let up: Vec<f64> = (0..3 * 120).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (_, tape) = d.forward();
    let g = d.backward(&tape, &up).unwrap();
    // direct correlation oracle for a few weights
    let dims = d.latent_dims;
    let vox = dims.len();
    for (o, i, t) in [(0, 0, 13), (2, 15, 0), (1, 7, 26), (2, 3, 5)] {
        let (tx, ty, tz) = (t / 9, (t / 3) % 3, t % 3);
        let mut want = 0.0;
        for idx in 0..vox {
            let [x, y, z] = dims.coords(idx);
            let src = [x as i64 + tx as i64 - 1, y as i64 + ty as i64 - 1, z as i64 + tz as i64 - 1];
            let n = dims.as_array();
            if (0..3).all(|a| src[a] >= 0 && (src[a] as usize) < n[a]) {
                let s = dims.index(src[0] as usize, src[1] as usize, src[2] as usize);
                want += up[o * vox + idx] * d.latent[i * vox + s];
            }
        }
        let got = g[(o * 16 + i) * 27 + t];
        assert!((got - want).abs() < 1e-12 * want.abs().max(1.0));
    }
    // bias gradient is the summed upstream per channel
    let nw = 3 * 16 * 27;
    for o in 0..3 {
        let want: f64 = up[o * vox..(o + 1) * vox].iter().sum();
        assert!((g[nw + o] - want).abs() < 1e-12);
    }
    decoder_fd_check(&d, 30, 12);
}

#[test]
fn table_decoder_gradients_match_finite_differences() {
    let mut d = ConvDecoder::table1(Dims::cube(16), 6, 2.0, 21).unwrap();
    // undo the small final-layer init so every layer carries signal
    let n = d.n_params();
    for t in &mut d.theta[n - 6 * 8 - 6..] {
        *t *= 300.0;
    }
    decoder_fd_check(&d, 40, 22);
}

#[test]
fn zero_upstream_gives_zero_decoder_gradient() {
    let d = ConvDecoder::table1(Dims::cube(8), 6, 2.0, 5).unwrap();
    let (out, tape) = d.forward();
    let g = d.backward(&tape, &vec![0.0; out.len()]).unwrap();
    assert!(g.iter().all(|v| *v == 0.0));
}

#[test]
fn model_gradients_match_finite_differences() {
    let image = Dims::cube(16);
    let coeff = {
        let mut c = StateCoefficients::from_medians(&[-1.0, -0.2, 0.4, 1.0], 2).unwrap();
        c.learned = vec![vec![0.1], vec![-0.3], vec![0.2], vec![0.5]];
        c
    };
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let decoder = {
        let mut d = ConvDecoder::table1(Dims::cube(4), 6, 1.0, 30).unwrap();
        let n = d.n_params();
        for t in &mut d.theta[n - 6 * 8 - 6..] {
            *t *= 300.0;
        }
        d
    };
    let mut grid = BasisGenerator::direct_grid(Dims::cube(4), 2);
    let p: Vec<f64> = (0..grid.params().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    grid.set_params(&p).unwrap();
    for generator in [grid, BasisGenerator::conv_decoder(decoder, 2).unwrap()] {
        let model = MotionModel::new(image, generator, coeff.clone()).unwrap();
        let targets: Vec<Dvf> = (0..4).map(|_| random_dvf(&mut rng, Dims::cube(4), 1.0)).collect();
        // L = Σ_i <a_i, u_i>
        let loss = |m: &MotionModel| {
            let f = m.forward().unwrap();
            f.coarse.iter().zip(&targets).map(|(u, a)| dvf_dot(u, a)).sum::<f64>()
        };
        let fwd = model.forward().unwrap();
        let g = model.backward(&fwd, &targets).unwrap();
        let h = 1e-6;
        let params = model.generator.params();
        for _ in 0..15 {
            let k = rng.random_range(0..params.len());
            let fd = {
                let mut a = model.clone();
                let mut q = params.clone();
                q[k] += h;
                a.generator.set_params(&q).unwrap();
                let mut b = model.clone();
                q[k] -= 2.0 * h;
                b.generator.set_params(&q).unwrap();
                (loss(&a) - loss(&b)) / (2.0 * h)
            };
            check(g.generator[k], fd, &format!("generator[{k}]"));
        }
        let learned = model.coeff.learned_flat();
        for k in 0..learned.len() {
            let mut a = model.clone();
            let mut q = learned.clone();
            q[k] += h;
            a.coeff.set_learned_flat(&q).unwrap();
            let mut b = model.clone();
            q[k] -= 2.0 * h;
            b.coeff.set_learned_flat(&q).unwrap();
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            check(g.learned[k], fd, &format!("learned[{k}]"));
        }
    }
}

#[test]
fn phantom_reference_warped_by_truth_matches_moved_state() {
    let dims = Dims::cube(48);
    let scene = PhantomScene::breathing_torso(dims, 4.0, 0.25);
    let rest = render_phantom(&scene, 0.0, dims).unwrap();
    let moved = render_phantom(&scene, 1.0, dims).unwrap();
    let dvf = scene.analytic_dvf(0.0, 1.0, dims);
    let warped = warp(&rest.volume, &dvf).unwrap();
    let mask = scene.moving_interior_mask(1.0, 1.5, dims);
    let (mut num, mut den) = (0.0, 0.0);
    for ((m, a), b) in mask.data.iter().zip(&warped.data).zip(&moved.volume.data) {
        if *m > 0.0 {
            num += (a - b).norm_sqr();
            den += b.norm_sqr();
        }
    }
    let nrmse = (num / den).sqrt();
    assert!(nrmse < 0.05, "nrmse {nrmse}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn warp_preserves_global_phase(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = Dims::cube(6);
        let v = random_volume(&mut rng, dims);
        let u = random_dvf(&mut rng, dims, 2.0);
        let ph = C64::from_polar(1.0, 1.1);
        let a = warp(&v.scaled(ph), &u).unwrap();
        let b = warp(&v, &u).unwrap().scaled(ph);
        for (x, y) in a.data.iter().zip(&b.data) {
            prop_assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn warp_is_linear_in_the_volume(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = Dims::cube(6);
        let v = random_volume(&mut rng, dims);
        let w = random_volume(&mut rng, dims);
        let u = random_dvf(&mut rng, dims, 2.0);
        let mut sum = v.clone();
        sum.add_assign(&w.scaled(C64::new(0.5, -2.0))).unwrap();
        let lhs = warp(&sum, &u).unwrap();
        let mut rhs = warp(&v, &u).unwrap();
        rhs.add_assign(&warp(&w, &u).unwrap().scaled(C64::new(0.5, -2.0))).unwrap();
        for (x, y) in lhs.data.iter().zip(&rhs.data) {
            prop_assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn upsample_commutes_with_scaling(seed in any::<u64>(), a in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_dvf(&mut rng, Dims::cube(3), 1.0);
        let lhs = upsample_dvf(&c.scaled(a), Dims::cube(12)).unwrap();
        let rhs = upsample_dvf(&c, Dims::cube(12)).unwrap().scaled(a);
        for ch in 0..3 {
            for (x, y) in lhs.components[ch].data.iter().zip(&rhs.components[ch].data) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn direct_grid_model_is_linear(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let image = Dims::cube(8);
        let cd = Dims::cube(2);
        let alpha = vec![-1.0, 0.1, 0.6];
        let n_params = 2 * 3 * cd.len();
        let make = |p: &[f64], beta: &[f64]| {
            let mut g = BasisGenerator::direct_grid(cd, 2);
            g.set_params(p).unwrap();
            let coeff = StateCoefficients { alpha: alpha.clone(), learned: beta.iter().map(|b| vec![*b]).collect() };
            MotionModel::new(image, g, coeff).unwrap().forward().unwrap().fine
        };
        // the basis-β product is bilinear, so superpose over the bases with β fixed
        let beta: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p: Vec<f64> = (0..n_params).map(|_| rng.random_range(-1.0..1.0)).collect();
        let q: Vec<f64> = (0..n_params).map(|_| rng.random_range(-1.0..1.0)).collect();
        let pq: Vec<f64> = p.iter().zip(&q).map(|(a, b)| a + b).collect();
        let (fp, fq, fpq) = (make(&p, &beta), make(&q, &beta), make(&pq, &beta));
        for s in 0..3 {
            for ch in 0..3 {
                for i in 0..image.len() {
                    let lhs = fpq[s].components[ch].data[i];
                    let rhs = fp[s].components[ch].data[i] + fq[s].components[ch].data[i];
                    prop_assert!((lhs - rhs).abs() < 1e-10);
                }
            }
        }
    }
}
