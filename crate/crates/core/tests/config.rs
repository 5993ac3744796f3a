use calli_core::config::{Config, CONFIG_ENV};
use calli_core::planner::{read_trajectory, write_trajectory};
use calli_core::sim::{read_log, write_log};
use calli_core::strokes::{demo_letter, Stroke, StrokePoint};
use calli_core::{pipeline, Error};

#[test]
fn defaults_carry_the_experiment_numbers() {
    let cfg = Config::default();
    cfg.validate().unwrap();
    assert_eq!(cfg.planner.v_max, 0.2);
    assert_eq!(cfg.planner.a_max, 0.2);
    assert_eq!(cfg.planner.force_rate_max, 2.0);
    assert_eq!(cfg.planner.h_max, 0.1);
    assert_eq!((cfg.contact.mu_y, cfg.contact.mu_z), (0.4, 0.4));
    assert_eq!(cfg.plant.seed, 42);
    assert_eq!(cfg.service.max_jobs, 2);
}

#[test]
fn toml_round_trips_and_rejects_unknown_keys() {
    let cfg = Config::default();
    let text = cfg.to_toml();
    assert_eq!(Config::from_toml(&text).unwrap(), cfg);
    for bad in [
        "[plant]\nk_pen_typo = 1.0\n",
        "[nonsense]\n",
        "[controller.motion]\nk_z = [1]\n",
    ] {
        assert!(matches!(Config::from_toml(bad), Err(Error::Config(_))), "{bad}");
    }
    let partial = Config::from_toml("[plant]\nseed = 7\n[controller]\nno_contact_compensation = true\n").unwrap();
    assert_eq!(partial.plant.seed, 7);
    assert_eq!(partial.plant.k_pen, 2000.0);
    assert!(partial.controller.no_contact_compensation);
    assert!(Config::from_toml("[plant]\nk_pen = -1.0\n").is_err());
}

#[test]
fn path_and_environment_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.toml");
    let b = dir.path().join("b.toml");
    std::fs::write(&a, "[plant]\nseed = 1\n").unwrap();
    std::fs::write(&b, "[plant]\nseed = 2\n").unwrap();
    // The only test in this binary touching the variable.
    std::env::set_var(CONFIG_ENV, &b);
    assert_eq!(Config::resolve(None).unwrap().plant.seed, 2);
    assert_eq!(Config::resolve(Some(&a)).unwrap().plant.seed, 1);
    std::env::remove_var(CONFIG_ENV);
    assert_eq!(Config::resolve(None).unwrap(), Config::default());
    assert!(Config::resolve(Some(&dir.path().join("missing.toml"))).is_err());
}

#[test]
fn max_speed_retimes_uniformly() {
    let cfg = Config::default().with_max_speed(0.4).unwrap();
    assert_eq!(cfg.planner.v_max, 0.4);
    assert!((cfg.planner.a_max - 0.8).abs() < 1e-12);
    assert_eq!(cfg.planner.force_rate_max, 2.0);
    assert!(Config::default().with_max_speed(0.0).is_err());
}

/// A single 4 cm stroke keeps the end-to-end checks fast.
fn tick() -> calli_core::strokes::StrokeSet {
    let mut set = demo_letter("I").unwrap();
    set.strokes = vec![Stroke {
        points: vec![
            StrokePoint {
                x: 150.0,
                y: 130.0,
                w: 0.008,
            },
            StrokePoint {
                x: 150.0,
                y: 170.0,
                w: 0.008,
            },
        ],
    }];
    set
}

#[test]
fn pipeline_is_deterministic_and_serializable() {
    let mut cfg = Config::default();
    cfg.plant.settle_time = 1.0;
    let set = tick();
    let a = pipeline::plan_strokes(&set, &cfg).unwrap();
    let b = pipeline::plan_strokes(&set, &cfg).unwrap();
    let text = write_trajectory(&a.trajectory);
    assert_eq!(text, write_trajectory(&b.trajectory));
    let traj = read_trajectory(&text).unwrap();
    let log = pipeline::simulate(&traj, &cfg).unwrap();
    assert_eq!(write_log(&log), write_log(&pipeline::simulate(&traj, &cfg).unwrap()));
    let back = read_log(&write_log(&log)).unwrap();
    let ev = pipeline::evaluate(&set, &back, &cfg).unwrap();
    assert!(ev.report.iou > 0.7, "{:?}", ev.report);
    assert!(ev.report.ee_pos_rmse < 0.01);
    assert_eq!(ev.target.width(), 600);
}

#[test]
fn baseline_planning_is_selected_by_the_ablation_flag() {
    let mut cfg = Config::default();
    cfg.ablation.baseline_planning = true;
    let p = pipeline::plan_strokes(&tick(), &cfg).unwrap();
    assert!(p.raw.is_none());
    let peak = p
        .trajectory
        .samples
        .iter()
        .map(|s| s.state.ee.v_lin.norm())
        .fold(0.0, f64::max);
    assert!((peak - cfg.planner.v_max).abs() < 1e-9, "{peak}");
}
