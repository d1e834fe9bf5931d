use crowdnav_core::math::Vec2;
use crowdnav_core::orca::{self, OrcaAgent, OrcaParams};
use crowdnav_core::sim::{generate_scenario, Env, SimConfig};
use crowdnav_core::state::{min_separation, Action, SweptDisc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Best velocity found by dense sampling inside the speed disc and every
/// half-plane, as distance to the preferred velocity.
fn sampled_best(lines: &[orca::Line], max_speed: f64, pref: Vec2, rng: &mut ChaCha8Rng) -> Option<f64> {
    let mut best: Option<f64> = None;
    for _ in 0..100_000 {
        let r = max_speed * rng.random::<f64>().sqrt();
        let a = rng.random::<f64>() * std::f64::consts::TAU;
        let v = Vec2::from_polar(r, a);
        if lines.iter().all(|l| l.violation(v) <= 0.0) {
            let d = v.distance(pref);
            best = Some(best.map_or(d, |b: f64| b.min(d)));
        }
    }
    best
}

#[test]
fn orca_matches_sampling_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = OrcaParams::default();
    let mut checked = 0;
    for _ in 0..20 {
        let agents: Vec<OrcaAgent> = (0..3)
            .map(|_| {
                let position = Vec2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
                let velocity = Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                let goal = Vec2::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
                OrcaAgent {
                    position,
                    velocity,
                    radius: 0.3,
                    max_speed: 1.0,
                    pref_velocity: orca::preferred_velocity(position, goal, 1.0, 0.25),
                }
            })
            .collect();
        let overlapping = (0..3).any(|i| (0..i).any(|j| agents[i].position.distance(agents[j].position) < 0.62 + 0.02));
        if overlapping {
            continue;
        }
        let sols = orca::orca_velocities(&agents, &params, 0.25);
        for (agent, sol) in agents.iter().zip(&sols) {
            if !sol.feasible {
                continue;
            }
            for l in &sol.lines {
                assert!(l.violation(sol.velocity) <= 1e-9);
            }
            assert!(sol.velocity.norm() <= agent.max_speed + 1e-9);
            let chosen = sol.velocity.distance(agent.pref_velocity);
            let best = sampled_best(&sol.lines, agent.max_speed, agent.pref_velocity, &mut rng).expect("feasible region");
            assert!(chosen <= best + 1e-6, "chosen {chosen} sampled {best}");
            checked += 1;
        }
    }
    assert!(checked >= 20);
}

#[test]
fn scenarios_respect_geometry_over_many_seeds() {
    let cfg = SimConfig::default();
    let sigma = cfg.position_std;
    for seed in 0..1000 {
        let s = generate_scenario(5, seed, &cfg).unwrap();
        for (i, p) in s.pedestrians.iter().enumerate() {
            let r = p.start.norm();
            assert!((r - 4.0).abs() <= 3.0 * sigma + 1e-12, "seed {seed}");
            for q in &s.pedestrians[..i] {
                assert!(p.start.distance(q.start) > p.radius + q.radius);
            }
            assert!(p.start.distance(s.vehicle.start) > p.radius + s.vehicle.radius);
        }
    }
}

#[test]
fn invisible_vehicle_does_not_affect_pedestrians() {
    let cfg = SimConfig::default();
    for seed in 0..5 {
        let mut a = Env::from_seed(5, seed, &cfg).unwrap();
        let mut b = Env::from_seed(5, seed, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..30 {
            let ra = Action::new(rng.random_range(0.0..1.0), rng.random_range(-3.0..3.0));
            let ta = a.step(&ra).unwrap();
            let tb = b.step(&Action::stop(0.0)).unwrap();
            for (p, q) in ta.state.pedestrians.iter().zip(&tb.state.pedestrians) {
                assert_eq!(p.position, q.position);
                assert_eq!(p.velocity, q.velocity);
            }
            if ta.is_terminal() || tb.is_terminal() {
                break;
            }
        }
    }
}

#[test]
fn visible_vehicle_changes_pedestrians() {
    let cfg = SimConfig { vehicle_visible: true, ..SimConfig::default() };
    let mut a = Env::from_seed(5, 3, &cfg).unwrap();
    let mut b = Env::from_seed(5, 3, &cfg).unwrap();
    let mut differ = false;
    for _ in 0..40 {
        let ta = a.step(&Action::new(1.0, std::f64::consts::FRAC_PI_2)).unwrap();
        let tb = b.step(&Action::stop(0.0)).unwrap();
        differ |= ta.state.pedestrians.iter().zip(&tb.state.pedestrians).any(|(p, q)| p.position != q.position);
        if ta.is_terminal() || tb.is_terminal() {
            break;
        }
    }
    assert!(differ);
}

#[test]
fn reported_d_min_is_the_minimum_separation() {
    let cfg = SimConfig::default();
    let mut env = Env::from_seed(5, 11, &cfg).unwrap();
    let dt = cfg.dt;
    let radii: Vec<f64> = env.scenario().pedestrians.iter().map(|p| p.radius).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    while !env.is_terminated() {
        let before = env.observe();
        let action = Action::new(rng.random_range(0.0..1.0), rng.random_range(-3.0..3.0));
        let tr = env.step(&action).unwrap();
        let v_from = before.vehicle.position;
        let v_to = v_from + action.velocity() * dt;
        let vs = SweptDisc::new(v_from, v_to, before.vehicle.radius);
        let expected = before
            .pedestrians
            .iter()
            .zip(&tr.state.pedestrians)
            .zip(&radii)
            .map(|((p, q), r)| min_separation(&vs, &SweptDisc::new(p.position, q.position, *r)))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(tr.d_min, expected);
        assert_eq!(tr.collided, tr.d_min < 0.0);
        assert!(!(tr.collided && tr.reached_goal));
        for sol in env.last_orca() {
            if sol.feasible {
                assert!(sol.lines.iter().all(|l| l.violation(sol.velocity) <= 1e-9));
            }
        }
    }
}

#[test]
fn same_actions_same_transitions() {
    let cfg = SimConfig::default();
    let run = || {
        let mut env = Env::from_seed(5, 99, &cfg).unwrap();
        let mut out = Vec::new();
        for k in 0..60 {
            let tr = env.step(&Action::new(0.8, 0.1 * k as f64)).unwrap();
            let terminal = tr.is_terminal();
            out.push(format!("{tr:?}"));
            if terminal {
                break;
            }
        }
        out
    };
    assert_eq!(run(), run());
}
