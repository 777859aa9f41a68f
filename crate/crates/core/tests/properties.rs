use std::collections::BTreeSet;

use monoinstance_core::cluster::{build_instance_graph, cluster_graph, extract_view_instances, uniform_background, cluster_views, GraphConfig, chamfer_distance};
use monoinstance_core::depth::{alignment_residual, fit_scale_shift};
use monoinstance_core::render::grid::SdfGrid;
use monoinstance_core::render::loss::{
    adaptive_depth_loss, mask_constraint_loss, total_loss, LossComponents, LossWeights, MaskTarget, PriorWeighting,
};
use monoinstance_core::render::sampling::RaySampler;
use monoinstance_core::render::volume::{ray_box, render_ray, RaySamples};
use monoinstance_core::synth::presets;
use monoinstance_core::synth::raster::{render_ground_truth, render_view};
use monoinstance_core::synth::scene::{SceneSpec, Shape};
use monoinstance_core::uncertainty::{estimate_uncertainty, point_density, DownsampledCloud, UncertaintyConfig};
use monoinstance_core::{Camera, DepthMap, Intrinsics, LabelMap, Pose, UncertaintyMap, Vec3, View};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn camera_from(seed: u64) -> Camera {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rng.random_range(8..200);
    let h = rng.random_range(8..200);
    let k = Intrinsics::new(
        rng.random_range(20.0..400.0),
        rng.random_range(20.0..400.0),
        rng.random_range(0.0..w as f64),
        rng.random_range(0.0..h as f64),
        w,
        h,
    )
    .unwrap();
    let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let mut pose = Pose::rotation_about(axis, rng.random_range(-3.0..3.0));
    pose.translation = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    Camera::new(0, k, pose).unwrap()
}

proptest! {
    #[test]
    fn rigid_motion_moves_back_projections(seed in 0u64..10_000, angle in -3.0f64..3.0, tx in -1.0f64..1.0, d in 0.1f64..20.0) {
        let cam = camera_from(seed);
        let motion = Pose::rotation_about(Vec3::new(0.3, -0.5, 0.8), angle);
        let motion = Pose::new(motion.rotation, Vec3::new(tx, -tx, 0.5 * tx)).unwrap();
        let moved = Camera::new(0, cam.intrinsics, cam.pose.then(&motion)).unwrap();
        let (u, v) = (cam.width() / 2, cam.height() / 3);
        let p = cam.back_project(u, v, d).unwrap();
        let q = moved.back_project(u, v, d).unwrap();
        prop_assert!((motion.transform_point(&p) - q).norm() < 1e-6);
    }

    #[test]
    fn ray_directions_are_unit(seed in 0u64..10_000) {
        let cam = camera_from(seed);
        for (u, v) in [(0, 0), (cam.width() - 1, 0), (0, cam.height() - 1), (cam.width() / 2, cam.height() / 2)] {
            let r = cam.generate_ray(u, v).unwrap();
            prop_assert!((r.direction.norm() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn fitted_alignment_is_a_minimum(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 64;
        let mono: Vec<f32> = (0..n).map(|_| rng.random_range(0.5..4.0)).collect();
        let reference: Vec<f32> = mono.iter().map(|m| 1.7 * m + 0.3 + rng.random_range(-0.2..0.2)).collect();
        let mono = DepthMap::from_values(8, 8, mono).unwrap();
        let reference = DepthMap::from_values(8, 8, reference).unwrap();
        let fit = fit_scale_shift(&mono, &reference, None, 0.0).unwrap();
        prop_assert!(fit.scale > 0.0);
        let best = alignment_residual(&mono, &reference, fit);
        for (ds, dt) in [(1e-3, 0.0), (-1e-3, 0.0), (0.0, 1e-3), (0.0, -1e-3)] {
            let mut p = fit;
            p.scale += ds;
            p.shift += dt;
            prop_assert!(alignment_residual(&mono, &reference, p) >= best);
        }
    }

    #[test]
    fn alignment_is_affine_equivariant(seed in 0u64..10_000, a in 0.2f64..5.0, b in -0.09f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mono: Vec<f64> = (0..64).map(|_| rng.random_range(0.5..4.0)).collect();
        let reference: Vec<f32> = mono.iter().map(|m| (0.8 * m + 0.1 + rng.random_range(-0.3..0.3)) as f32).collect();
        let reference = DepthMap::from_values(8, 8, reference).unwrap();
        let plain = DepthMap::from_values(8, 8, mono.iter().map(|&m| m as f32).collect()).unwrap();
        let moved = DepthMap::from_values(8, 8, mono.iter().map(|&m| (a * (m as f32) as f64 + b) as f32).collect()).unwrap();
        let f = fit_scale_shift(&plain, &reference, None, 0.0).unwrap();
        let g = fit_scale_shift(&moved, &reference, None, 0.0).unwrap();
        // The moved map is stored in f32, so compare at that precision.
        prop_assert!((g.scale - f.scale / a).abs() < 1e-5 * (1.0 + f.scale.abs()));
        prop_assert!((g.shift - (f.shift - f.scale * b / a)).abs() < 1e-5 * (1.0 + f.shift.abs()));
    }

    #[test]
    fn transmittance_never_increases(seed in 0u64..10_000, beta in 0.005f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut grid = SdfGrid::sphere(Vec3::new(-1.0, -1.0, -1.0), 2.0, 8, 0.5, false).unwrap();
        for s in grid.sdf.iter_mut() {
            *s += rng.random_range(-0.3..0.3);
        }
        grid.beta = beta;
        let origin = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), -3.0);
        let dir = Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 1.0).normalize();
        let (t0, t1) = ray_box(&origin, &dir, &grid.min, &grid.max()).unwrap();
        let samples = RaySamples::stratified(t0, t1, 48, Some(&mut rng));
        prop_assert!(samples.t.windows(2).all(|w| w[1] > w[0]));
        let out = render_ray(&grid, &origin, &dir, &samples, false);
        prop_assert!(out.samples.windows(2).all(|w| w[1].transmittance <= w[0].transmittance));
        for s in &out.samples {
            prop_assert!((0.0..=1.0).contains(&s.alpha) && (0.0..=1.0).contains(&s.transmittance));
        }
        prop_assert!(out.weights().sum::<f64>() <= 1.0 + 1e-6);
    }

    #[test]
    fn losses_are_non_negative_and_linear(c in prop::array::uniform5(0.0f64..10.0), w in prop::array::uniform4(0.0f64..2.0), k in 0usize..4, extra in 0.0f64..3.0) {
        let comps = LossComponents { color: c[0], eikonal: c[1], mask: c[2], depth: c[3], normal: c[4] };
        let weights = LossWeights { eikonal: w[0], mask: w[1], depth: w[2], normal: w[3] };
        let base = total_loss(&comps, &weights).unwrap();
        prop_assert!(base >= 0.0);
        let mut bumped = weights;
        match k {
            0 => bumped.eikonal += extra,
            1 => bumped.mask += extra,
            2 => bumped.depth += extra,
            _ => bumped.normal += extra,
        }
        let expected = base + extra * c[k + 1];
        prop_assert!((total_loss(&comps, &bumped).unwrap() - expected).abs() < 1e-9 * (1.0 + expected));
    }

    #[test]
    fn zero_uncertainty_is_the_uniform_depth_loss(seed in 0u64..10_000, n in 1usize..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
        let m: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
        let zeros: Vec<f64> = (0..n).map(|_| 1.0 - PriorWeighting::Linear.weight(0.0)).collect();
        let uniform = r.iter().zip(&m).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
        prop_assert_eq!(adaptive_depth_loss(&r, &m, &zeros).to_bits(), uniform.to_bits());
        let u: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        prop_assert!(adaptive_depth_loss(&r, &m, &u) >= 0.0);
    }

    #[test]
    fn sampler_covers_every_instance(seed in 0u64..10_000, batch in 1usize..400) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (16u32, 10u32);
        let labels: Vec<u16> = (0..w * h).map(|_| rng.random_range(0..4)).collect();
        let mask = LabelMap::new(w, h, labels.clone()).unwrap();
        let map = UncertaintyMap::from_values(w, h, (0..w * h).map(|_| rng.random::<f32>()).collect()).unwrap();
        let sampler = RaySampler::guided(&[map], &[mask], batch, false).unwrap();
        let quotas = sampler.quotas();
        prop_assert_eq!(quotas.iter().map(|q| q.2).sum::<usize>(), batch);
        let draw = sampler.draw(&mut rng);
        prop_assert_eq!(draw.len(), batch);
        for p in &draw {
            prop_assert!(labels[(p.v * w + p.u) as usize] != 0);
        }
        let drawn: BTreeSet<u16> = draw.iter().map(|p| labels[(p.v * w + p.u) as usize]).collect();
        for (_, label, quota) in quotas {
            if quota > 0 {
                prop_assert!(drawn.contains(&label));
            }
        }
    }

    #[test]
    fn extra_points_never_lower_density(seed in 0u64..10_000, radius in 0.02f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<Vec3> = (0..200).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let queries: Vec<Vec3> = points.iter().take(50).copied().collect();
        let before = point_density(&queries, &DownsampledCloud { points: points.clone() }, radius).unwrap();
        let mut more = points.clone();
        more.extend(points.iter().take(60).copied());
        let after = point_density(&queries, &DownsampledCloud { points: more }, radius).unwrap();
        prop_assert!(before.iter().zip(&after).all(|(b, a)| a >= b));
    }
}

#[test]
fn guided_sampling_ratio_follows_uncertainty() {
    let (w, h) = (10u32, 10u32);
    let mask = LabelMap::new(w, h, vec![1; 100]).unwrap();
    let values: Vec<f32> = (0..100).map(|i| if i < 50 { 0.95 } else { 0.0 }).collect();
    let map = UncertaintyMap::from_values(w, h, values).unwrap();
    let sampler = RaySampler::guided(&[map], &[mask], 100, false).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut high, mut low) = (0u64, 0u64);
    for _ in 0..10_000 {
        for p in sampler.draw(&mut rng) {
            if p.v * w + p.u < 50 {
                high += 1;
            } else {
                low += 1;
            }
        }
    }
    let ratio = high as f64 / low as f64;
    assert!((ratio - 20.0).abs() < 2.0, "{ratio}");
}

#[test]
fn quotas_split_by_area() {
    let labels: Vec<u16> = (0..80).map(|i| if i < 60 { 1 } else { 2 }).collect();
    let mask = LabelMap::new(10, 8, labels).unwrap();
    let sampler = RaySampler::guided(&[UncertaintyMap::zeros(10, 8)], &[mask], 100, false).unwrap();
    let q: Vec<usize> = sampler.quotas().iter().map(|q| q.2).collect();
    assert_eq!(q, [75, 25]);
}

fn three_object_views() -> (Vec<View>, Vec<DepthMap>, SceneSpec) {
    let spec = presets::by_name("three-objects").unwrap();
    let truth = render_ground_truth(&spec).unwrap();
    let views = truth
        .iter()
        .map(|t| View::new(t.camera, t.depth.clone(), t.mask.clone(), t.rgb.clone()).unwrap())
        .collect();
    (views, truth.into_iter().map(|t| t.depth).collect(), spec)
}

fn partition(clusters: &[monoinstance_core::InstanceCluster]) -> BTreeSet<Vec<monoinstance_core::cluster::InstanceKey>> {
    clusters.iter().map(|c| c.members.clone()).collect()
}

#[test]
fn clustering_ignores_instance_order() {
    let (views, depths, _) = three_object_views();
    let config = GraphConfig::default();
    let instances = extract_view_instances(&views, &depths);
    let reference = cluster_graph(&build_instance_graph(&instances, &config), &instances);
    let all: Vec<_> = reference.iter().flat_map(|c| c.members.iter().copied()).collect();
    assert_eq!(all.len(), instances.len());
    assert_eq!(all.iter().collect::<BTreeSet<_>>().len(), instances.len());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..3 {
        let mut shuffled = instances.clone();
        shuffled.shuffle(&mut rng);
        let again = cluster_graph(&build_instance_graph(&shuffled, &config), &shuffled);
        assert_eq!(again, reference);
    }
}

#[test]
fn smaller_threshold_only_splits() {
    let (views, depths, _) = three_object_views();
    let instances = extract_view_instances(&views, &depths);
    let mut coarser: Option<Vec<monoinstance_core::InstanceCluster>> = None;
    for threshold in [0.5, 0.2, 0.05, 0.01, 0.002] {
        let config = GraphConfig { threshold, ..GraphConfig::default() };
        let clusters = cluster_graph(&build_instance_graph(&instances, &config), &instances);
        if let Some(prev) = &coarser {
            for c in &clusters {
                assert!(prev.iter().any(|p| c.members.iter().all(|m| p.contains(m))), "threshold {threshold}");
            }
            assert!(partition(&clusters).len() >= partition(prev).len());
        }
        coarser = Some(clusters);
    }
}

#[test]
fn chamfer_is_zero_for_reordered_copies() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a: Vec<Vec3> = (0..300).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
    let mut b = a.clone();
    b.shuffle(&mut rng);
    assert_eq!(chamfer_distance(&a, &b).unwrap(), 0.0);
    let c: Vec<Vec3> = a.iter().map(|p| p + Vec3::new(0.01, 0.0, 0.0)).collect();
    assert!(chamfer_distance(&a, &c).unwrap() > 0.0);
}

#[test]
fn uncertainty_maps_are_bounded_and_repeatable() {
    let (views, depths, spec) = three_object_views();
    let background = uniform_background(views.iter().map(|v| v.id()), &spec.background_labels());
    let graph = cluster_views(&views, &depths, &GraphConfig::default(), &background);
    let config = UncertaintyConfig::default();
    let first = estimate_uncertainty(&views, &depths, &graph.clusters, &config).unwrap();
    let second = estimate_uncertainty(&views, &depths, &graph.clusters, &config).unwrap();
    assert_eq!(first.maps, second.maps);
    for (map, view) in first.maps.iter().zip(&views) {
        for (i, &u) in map.values.iter().enumerate() {
            assert!((0.0..=1.0).contains(&u));
            if view.mask.labels[i] == 0 {
                assert_eq!(u, 0.0);
            }
        }
    }
}

#[test]
fn mask_indicator_beats_plain_warping_under_occlusion() {
    let mut spec = SceneSpec::parse(
        "sphere id=1 center=0,0,0 radius=0.3 color=0.9,0.2,0.1
         ring count=2 radius=2 elevation=0.2 target=0,0,0 width=64 height=48 fov=40 start=0 span=70",
    )
    .unwrap();
    let cams = spec.cameras().unwrap();
    // A second sphere between view 1 and the first sphere, off to one side.
    let toward = cams[1].pose.center().normalize();
    let mut blocker = spec.primitives[0];
    blocker.id = 2;
    blocker.color = [0.1, 0.3, 0.9];
    blocker.shape = Shape::Sphere { center: toward * 0.8 + Vec3::new(0.0, 0.0, 0.12), radius: 0.15 };
    spec.primitives.push(blocker);
    let (a, b) = (render_view(&spec, &cams[0]), render_view(&spec, &cams[1]));
    let mut grid = SdfGrid::sphere(Vec3::new(-1.0, -1.0, -1.0), 2.0, 64, 0.3, false).unwrap();
    for i in 0..grid.vertex_count() {
        let p = grid.vertex_position(i);
        grid.sdf[i] = spec.primitives.iter().map(|q| q.shape.signed_distance(&p)).fold(f64::INFINITY, f64::min);
    }
    grid.beta = 0.005;
    let target = MaskTarget { camera: &cams[1], mask: &b.mask, rgb: &b.rgb, labels: &[1] };
    let everything: Vec<u16> = (0..=2).collect();
    let plain = MaskTarget { labels: &everything, ..target };
    let mut rays = Vec::new();
    for v in 0..a.mask.height {
        for u in 0..a.mask.width {
            if a.mask.get(u, v) != 1 {
                continue;
            }
            let p = cams[0].back_project(u, v, a.depth.get(u, v).unwrap()).unwrap();
            let hidden = cams[1].pixel_of(&p).is_some_and(|(x, y, _)| b.mask.get(x, y) == 2);
            if !hidden {
                continue;
            }
            let ray = cams[0].generate_ray(u, v).unwrap();
            let Some((t0, t1)) = ray_box(&ray.origin, &ray.direction, &grid.min, &grid.max()) else { continue };
            let samples = RaySamples::stratified::<ChaCha8Rng>(t0, t1, 256, None);
            let out = render_ray(&grid, &ray.origin, &ray.direction, &samples, false);
            rays.push((out, a.rgb.get(u, v)));
        }
    }
    assert!(rays.len() > 10, "only {} occluded rays", rays.len());
    let (with, _) = mask_constraint_loss(rays.iter().map(|(o, c)| (o, target, *c)));
    let (without, _) = mask_constraint_loss(rays.iter().map(|(o, c)| (o, plain, *c)));
    assert!(with < without, "{with} vs {without}");
}
