mod common;

use common::{brute_force, camera, orbit_camera, random_gaussians};
use gvgs_core::render::{render_gaussians, RenderConfig};
use gvgs_core::scene::{CameraView, Gaussian3D, Intrinsics};
use gvgs_core::synth::{make_synthetic_scene, SceneDescriptor, SceneKind};
use gvgs_core::visibility::{covis_mask, gaussian_visibility, selective_opacity, DEFAULT_COVIS_THRESHOLD, DEFAULT_TAU};
use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use proptest::prelude::*;

#[test]
fn four_half_opaque_pixels_weigh_two() {
    // the center sits between four pixel centers; with σ² = 0.4 px² they get
    // power 1.25 and the next ring (power 6.25) falls outside a 2σ cutoff
    let k = Intrinsics {
        fx: 100.0,
        fy: 100.0,
        cx: 10.5,
        cy: 10.5,
    };
    let cam = CameraView::new(0, 21, 21, k, Matrix3::identity(), Vector3::zeros()).unwrap();
    let r = 0.4f64.sqrt() / 100.0;
    let opacity = 0.5 * (0.625f64).exp();
    let g = Gaussian3D::new(Vector3::new(0.0, 0.0, 1.0), Vector3::repeat(r), UnitQuaternion::identity(), opacity, Vector3::repeat(0.5))
        .unwrap();
    let cfg = RenderConfig {
        cov2d_eps: 0.0,
        cutoff_sigma: 2.0,
        ..RenderConfig::default()
    };
    let b = render_gaussians(std::slice::from_ref(&g), &cam, &cfg, true);
    let covered: Vec<f64> = b.acc_alpha.as_slice().iter().copied().filter(|a| *a > 0.0).collect();
    assert_eq!(covered.len(), 4);
    assert!(covered.iter().all(|a| (a - 0.5).abs() < 1e-12));
    let rec = gaussian_visibility(&[g], &cam, DEFAULT_TAU, &cfg);
    assert!((rec.weights[0] - 2.0).abs() < 1e-12);
    assert!(rec.indicators[0]);
}

#[test]
fn far_plane_gaussians_hidden_in_the_neighbor_are_invisible() {
    let s = make_synthetic_scene(&SceneDescriptor::new(SceneKind::TwoPlanesOccluder, 7)).unwrap();
    let nb = &s.scene.views[1];
    let rec = gaussian_visibility(&s.scene.gaussians, nb, DEFAULT_TAU, &RenderConfig::default());
    let mut hidden = 0;
    for (i, g) in s.scene.gaussians.iter().enumerate() {
        if g.center.z.abs() > 1e-9 {
            continue; // occluder
        }
        // the ±3σ in-plane footprint, sampled on a grid
        let r = g.rotation_matrix();
        let fully_hidden = (-3..=3).all(|a| {
            (-3..=3).all(|b| {
                let p = g.center + r * Vector3::new(a as f64 * g.scale.x, b as f64 * g.scale.y, 0.0);
                let pc = nb.world_to_camera(&p);
                let (u, v) = nb.project_camera(&pc);
                let inside = u >= 0.0 && v >= 0.0 && u <= (nb.width - 1) as f64 && v <= (nb.height - 1) as f64;
                inside && !s.visible_from(&p, nb)
            })
        });
        if fully_hidden {
            hidden += 1;
            assert!(rec.weights[i] < DEFAULT_TAU, "gaussian {i} weight {}", rec.weights[i]);
            assert!(!rec.indicators[i]);
        }
    }
    assert!(hidden > 20, "only {hidden} hidden far-plane gaussians");
}

#[test]
fn covisibility_mask_agrees_with_ray_casting() {
    let s = make_synthetic_scene(&SceneDescriptor::new(SceneKind::TwoPlanesOccluder, 7)).unwrap();
    let (r, n) = (&s.scene.views[0], &s.scene.views[1]);
    let cfg = RenderConfig::default();
    let rec = gaussian_visibility(&s.scene.gaussians, n, DEFAULT_TAU, &cfg);
    let mask = covis_mask(&selective_opacity(&s.scene.gaussians, r, &rec, &cfg).unwrap(), DEFAULT_COVIS_THRESHOLD);
    let oracle = s.covisibility(r, n);
    let fg = s.depth_map(r);
    let (mut agree, mut total) = (0, 0);
    for i in 0..fg.len() {
        if fg.as_slice()[i] > 0.0 {
            total += 1;
            agree += usize::from(mask.as_slice()[i] == oracle.as_slice()[i]);
        }
    }
    assert!(total > 1000);
    assert!(agree as f64 / total as f64 >= 0.95, "{agree}/{total}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn weights_sum_to_neighbor_opacity_mass(seed in any::<u64>()) {
        let gs = random_gaussians(seed, 80);
        let nb = orbit_camera(1, 32, 32, 0.3);
        let cfg = RenderConfig::default();
        let rec = gaussian_visibility(&gs, &nb, DEFAULT_TAU, &cfg);
        let mass: f64 = render_gaussians(&gs, &nb, &cfg, false).acc_alpha.as_slice().iter().sum();
        let total: f64 = rec.weights.iter().sum();
        prop_assert!((total - mass).abs() <= 1e-4 * mass.max(1e-12));
    }

    #[test]
    fn gated_opacity_matches_brute_force(seed in any::<u64>(), gate_seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let gs = random_gaussians(seed, 40);
        let cam = camera(24, 24);
        let cfg = RenderConfig::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(gate_seed);
        let gates: Vec<bool> = (0..gs.len()).map(|_| rng.gen()).collect();
        let rec = gvgs_core::visibility::VisibilityRecord {
            neighbor_view: 1,
            weights: vec![0.0; gs.len()],
            indicators: gates.clone(),
            tau: DEFAULT_TAU,
        };
        let o = selective_opacity(&gs, &cam, &rec, &cfg).unwrap();
        let oracle = brute_force(&gs, &cam, &cfg, Some(&gates));
        for (a, b) in o.values.as_slice().iter().zip(oracle.acc_alpha.as_slice()) {
            prop_assert!((a - b).abs() < 1e-8);
        }
    }
}
