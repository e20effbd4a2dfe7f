use approx::assert_relative_eq;
use nalgebra::{Matrix3, Vector3};
use ndarray::Array3;
use proptest::prelude::*;

use mh3d_core::analyze::{background_mask, fwhm, snr_std};
use mh3d_core::forward::{
    apply_adjoint, apply_forward, build_forward_model, crop_image, pad_image, ForwardModel, ForwardOptions,
};
use mh3d_core::mhad::{mhad_multi, synthesize_stack, MhadConfig};
use mh3d_core::physics::{langevin, langevin_derivative, psf_tensor_with, ScannerConfig, Sensitivity};
use mh3d_core::portrait::{snap_sign, wrap_phase, RealStack};
use mh3d_core::psfgen::{analytic_psf_stack, harmonic_coefficient, PsfOptions};
use mh3d_core::Mesh;

fn gradient(g0: f64) -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(g0 / 2.0, g0 / 2.0, g0))
}

/// Mean moment direction times magnitude, `L(β|Gx|) Gx/|Gx|`.
fn magnetization(x: &Vector3<f64>, g: &Matrix3<f64>, beta: f64) -> Vector3<f64> {
    let u = g * x;
    let n = u.norm();
    u * (langevin(beta * n) / n)
}

fn small_model(n: usize) -> ForwardModel {
    let fov = Mesh::centered([n; 3], [1e-3; 3]).unwrap();
    let mut cfg = ScannerConfig::default();
    cfg.z_slab_positions = (0..n).step_by(2).map(|i| fov.coord(2, i)).collect();
    let psfs = analytic_psf_stack(
        &cfg,
        &[2, 3],
        &Mesh::centered([5, 5, 5], [1e-3; 3]).unwrap(),
        &PsfOptions::raw(),
    )
    .unwrap();
    build_forward_model(&psfs, &Sensitivity::default(), &cfg, &fov, &ForwardOptions::default()).unwrap()
}

fn image(dim: (usize, usize, usize), values: &[f64]) -> Array3<f64> {
    Array3::from_shape_fn(dim, |(z, y, x)| values[(z * 31 + y * 7 + x) % values.len()])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tensor_is_jacobian_of_magnetization(
        x in -4e-3f64..4e-3, y in -4e-3f64..4e-3, z in -4e-3f64..4e-3,
    ) {
        prop_assume!(x.abs() + y.abs() + z.abs() > 2e-4);
        let beta = 2000.0;
        let g = gradient(0.554);
        let ga = [[0.277, 0.0, 0.0], [0.0, 0.277, 0.0], [0.0, 0.0, 0.554]];
        let h = psf_tensor_with(&[x, y, z], &ga, beta);
        let p = Vector3::new(x, y, z);
        let step = 1e-8;
        for b in 0..3 {
            let mut e = Vector3::zeros();
            e[b] = step;
            let col = (magnetization(&(p + e), &g, beta) - magnetization(&(p - e), &g, beta)) / (2.0 * step);
            for a in 0..3 {
                assert_relative_eq!(h[a][b], col[a], epsilon = 1e-5 * beta, max_relative = 1e-5);
            }
        }
        // even in x, and J = h G⁻¹ symmetric
        let hm = psf_tensor_with(&[-x, -y, -z], &ga, beta);
        let j = Matrix3::from_fn(|a, b| h[a][b]) * g.try_inverse().unwrap();
        for a in 0..3 {
            for b in 0..3 {
                prop_assert!((h[a][b] - hm[a][b]).abs() <= 1e-12 * beta);
                prop_assert!((j[(a, b)] - j[(b, a)]).abs() <= 1e-9 * beta);
            }
        }
    }

    #[test]
    fn langevin_parity(x in 0.01f64..20.0, k in 1usize..6) {
        let a = langevin_derivative(x, k).unwrap();
        let b = langevin_derivative(-x, k).unwrap();
        // L is odd, so L^(k) has parity (-1)^(k+1)
        let sign = if k % 2 == 0 { -1.0 } else { 1.0 };
        prop_assert!((b - sign * a).abs() <= 1e-12 * a.abs().max(1e-12));
        prop_assert!((langevin(-x) + langevin(x)).abs() < 1e-15);
    }

    #[test]
    fn coefficient_recurrence(ga in 0.01f64..5.0, k in 2usize..8) {
        let r = harmonic_coefficient(ga, k + 1) / harmonic_coefficient(ga, k);
        prop_assert!((r - ga / k as f64).abs() <= 1e-12 * r);
    }

    #[test]
    fn phase_wrapping(t in -50.0f64..50.0, r in -3.0f64..3.0) {
        let w = wrap_phase(t);
        prop_assert!(w > -std::f64::consts::PI - 1e-12 && w <= std::f64::consts::PI);
        prop_assert!((t.sin() - w.sin()).abs() < 1e-9 && (t.cos() - w.cos()).abs() < 1e-9);
        let s = snap_sign(t, r);
        prop_assert!(wrap_phase(s - r).abs() <= std::f64::consts::PI / 2.0 + 1e-12);
        prop_assert!(wrap_phase(s - t).abs() < 1e-9 || (wrap_phase(s - t).abs() - std::f64::consts::PI).abs() < 1e-9);
    }

    #[test]
    fn pad_crop_roundtrip(
        values in prop::collection::vec(-5.0f64..5.0, 1..40),
        dz in 1usize..5, dy in 1usize..5, dx in 1usize..5, pad in 0usize..4,
    ) {
        let a = image((dz, dy, dx), &values);
        let p = pad_image(&a.view(), pad);
        prop_assert_eq!(p.dim(), (dz + 2 * pad, dy + 2 * pad, dx + 2 * pad));
        prop_assert!((p.sum() - a.sum()).abs() < 1e-9);
        prop_assert_eq!(crop_image(&p.view(), pad).unwrap(), a);
    }

    #[test]
    fn synthesized_stacks_invert(
        values in prop::collection::vec(-1.0f64..1.0, 3..50),
        nz in 5usize..16, ga in 0.5f64..3.0,
    ) {
        let rho = image((nz, 2, 2), &values);
        let mcfg = MhadConfig::new(vec![2, 3, 4], ga, 0.0);
        let data = synthesize_stack(&rho.view(), &mcfg).unwrap();
        let stack = RealStack::from_real(
            vec![2, 3, 4],
            data,
            Mesh::centered([2, 2, nz], [1e-3; 3]).unwrap(),
        )
        .unwrap();
        let back = mhad_multi(&stack, &mcfg).unwrap();
        // recovered up to the per-column mean (and, for even nz, the Nyquist mode)
        let again = synthesize_stack(&back.view(), &mcfg).unwrap();
        let truth = synthesize_stack(&rho.view(), &mcfg).unwrap();
        for (a, b) in again.iter().zip(&truth) {
            for (u, v) in a.iter().zip(b) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn metrics_scale_invariant(s in 0.01f64..100.0, w in 1.0f64..3.0) {
        let mesh = Mesh::centered([15, 15, 15], [1e-3; 3]).unwrap();
        let img = Array3::from_shape_fn((15, 15, 15), |(z, y, x)| {
            let r2 = [z, y, x].iter().map(|&i| (i as f64 - 7.0).powi(2)).sum::<f64>();
            (-r2 / (2.0 * w * w)).exp() + 0.01 * (((x * 13 + y * 7 + z * 3) % 11) as f64 - 5.0) / 5.0
        });
        let scaled = img.mapv(|v| v * s);
        let peak = [[7, 7, 7]];
        let bg = background_mask(img.dim(), &peak, 4);
        for axis in 0..3 {
            let a = fwhm(&img.view(), &mesh, axis, peak[0]).unwrap();
            let b = fwhm(&scaled.view(), &mesh, axis, peak[0]).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
        let a = snr_std(&img.view(), &peak, &bg).unwrap();
        let b = snr_std(&scaled.view(), &peak, &bg).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn forward_is_linear_and_adjoint(
        u in prop::collection::vec(-1.0f64..1.0, 5..60),
        v in prop::collection::vec(-1.0f64..1.0, 5..60),
        a in -3.0f64..3.0,
    ) {
        let model = small_model(6);
        let x = image(model.padded_dim(), &u);
        let y = image(model.padded_dim(), &v);
        let ax = apply_forward(&model, &x.view()).unwrap();
        let ay = apply_forward(&model, &y.view()).unwrap();
        let combo = &x * a + &y;
        let ac = apply_forward(&model, &combo.view()).unwrap();
        let scale = ax.iter().chain(&ay).flat_map(|d| d.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        for ((c, p), q) in ac.iter().zip(&ax).zip(&ay) {
            for ((c, p), q) in c.iter().zip(p).zip(q) {
                prop_assert!((c - (a * p + q)).abs() <= 1e-12 * scale * (1.0 + a.abs()));
            }
        }
        // <A x, A y> = <x, Aᵀ A y>
        let lhs: f64 = ax.iter().zip(&ay).map(|(p, q)| (p * q).sum()).sum();
        let aty = apply_adjoint(&model, &ay).unwrap();
        let rhs = (&x * &aty).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1e-300));
    }
}
