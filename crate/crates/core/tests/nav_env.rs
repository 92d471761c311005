use mfrs::env::*;
use mfrs::geometry::Vec3;
use mfrs::magnet::Magnet;
use mfrs::reward::GoalLayout;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Points on a sphere surface, used to test contact with arbitrary bodies.
fn shell(center: Vec3, r: f64) -> impl Iterator<Item = Vec3> {
    (0..24).flat_map(move |i| {
        (0..12).map(move |j| {
            let phi = i as f64 * std::f64::consts::TAU / 24.0;
            let theta = (j as f64 + 0.5) * std::f64::consts::PI / 12.0;
            center + Vec3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos()) * r
        })
    })
}

fn radius(m: &Magnet) -> Option<f64> {
    match m {
        Magnet::Sphere(s) => Some(s.radius),
        Magnet::Cuboid(_) => None,
    }
}

fn check_layout(cfg: &EnvConfig, l: &GoalLayout) {
    let start = cfg.start();
    let only = |i: usize| GoalLayout { target: l.target, obstacles: vec![l.obstacles[i]] };
    for (i, o) in l.obstacles.iter().enumerate() {
        assert!(!collides(start, &only(i)), "start inside obstacle {i}");
        assert!(!collides(l.target.position, &only(i)), "target center inside obstacle {i}");
        // target sphere surface clear of the obstacle
        assert!(shell(l.target.position, cfg.target_radius).all(|p| !collides(p, &only(i))));
        for (j, p) in l.obstacles.iter().enumerate().skip(i + 1) {
            match (radius(&o.magnet), radius(&p.magnet)) {
                (Some(a), Some(b)) => assert!(o.position.distance(p.position) > a + b, "obstacles {i} and {j} intersect"),
                _ => unreachable!("one rotator per layout"),
            }
        }
        if let Some(r) = radius(&o.magnet) {
            assert!(o.position.distance(l.target.position) > r + cfg.target_radius);
        }
    }
}

#[test]
fn sampled_layouts_never_intersect() {
    for task in [TaskVariant::I, TaskVariant::II, TaskVariant::III, TaskVariant::IV] {
        let cfg = EnvConfig::for_task(task);
        let mut env = NavEnv::new(cfg.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(task as u64);
        for _ in 0..10_000 {
            env.reset(&mut rng).unwrap();
            check_layout(&cfg, env.layout());
        }
    }
}

#[test]
fn rotator_angles_cover_the_configured_range() {
    let cfg = EnvConfig::for_task(TaskVariant::II);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut env = NavEnv::new(cfg.clone()).unwrap();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..2000 {
        env.reset(&mut rng).unwrap();
        let c = env.layout().obstacles[0].position - Vec3::from(cfg.pivot);
        let angle = (-c.x).atan2(c.y);
        lo = lo.min(angle);
        hi = hi.max(angle);
    }
    assert!(lo >= -cfg.max_angle - 1e-12 && hi <= cfg.max_angle + 1e-12);
    assert!(lo < -0.9 * cfg.max_angle && hi > 0.9 * cfg.max_angle);
}

#[test]
fn rewards_are_from_the_fixed_set() {
    let mut env = NavEnv::new(EnvConfig::for_task(TaskVariant::IV)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut k = 0u64;
    for _ in 0..50 {
        env.reset(&mut rng).unwrap();
        loop {
            k += 1;
            let a = [((k * 7919) % 13) as f64 / 6.0 - 1.0, ((k * 104_729) % 11) as f64 / 5.0 - 1.0];
            let info = env.step(&a).unwrap();
            assert!([SUCCESS_REWARD, COLLISION_REWARD, STEP_REWARD].contains(&info.reward));
            if info.success {
                assert!(info.done);
            }
            if info.done {
                assert!(info.success || env.state().t == env.config().horizon);
                break;
            }
        }
    }
}

#[test]
fn three_dimensional_variant() {
    let cfg = EnvConfig { dims: 3, ..EnvConfig::for_task(TaskVariant::IV) };
    let mut env = NavEnv::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let s = env.reset(&mut rng).unwrap();
    assert_eq!(s.len(), 6);
    assert_eq!(env.goal_vector().len(), 12);
    env.step(&[0.0, 0.0, 1.0]).unwrap();
    assert!((env.agent().z - 0.02).abs() < 1e-12);
}
