use approx::assert_relative_eq;
use calli_core::contact::{contact_frame, PenModel, Surface};
use calli_core::metrics::{iou, render, render_target, rmse, Raster, Report, RmseMode};
use calli_core::model::{EeState, State, UamParams};
use calli_core::planner::Sample;
use calli_core::se3::{Frame, Rotation, Wrench};
use calli_core::sim::{SimLog, SimRecord};
use calli_core::strokes::{fit_stroke, FitLimits, ImageToWall, StrokeSet};
use calli_core::Error;
use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;

fn record(t: f64, p: Vector3<f64>, force: f64, rp: Vector3<f64>, rf: f64) -> SimRecord {
    let state = |p, force| State {
        ee: EeState::at_rest(p, Rotation::identity()),
        force,
    };
    SimRecord {
        t,
        reference: Sample {
            t,
            state: state(rp, rf),
            tau_a: Wrench::zero(Frame::B),
            tau_c: Wrench::zero(Frame::C),
        },
        measured: state(p, force),
        f_hat: force,
        tau_a: Wrench::zero(Frame::B),
        contact: Wrench::zero(Frame::C),
        linewidth: PenModel::default().linewidth(force),
    }
}

fn log(records: Vec<SimRecord>) -> SimLog {
    SimLog { dt: 0.01, records }
}

/// Wall at x = 1; a 0.25 m image centred at (1, 0, 1), so image coordinates
/// are `(0.125 - y, 1.125 - z)` and every dyadic position maps exactly.
fn wall() -> (ImageToWall, Vector2<f64>) {
    let surface = Surface::new(Vector3::new(1.0, 0.0, 0.0), Vector3::x()).unwrap();
    let frame = contact_frame(&surface, &Vector3::new(0.0, 0.0, -1.0)).unwrap();
    let set = StrokeSet {
        width_px: 256.0,
        height_px: 256.0,
        scale: 0.25 / 256.0,
        anchor: Some(Vector3::new(1.0, 0.0, 1.0)),
        strokes: vec![],
    };
    (
        ImageToWall::new(&set, &surface, &frame, &Vector3::zeros()),
        set.size_m(),
    )
}

fn square(side: usize, x0: usize, y0: usize) -> Raster {
    let mut r = Raster::new(40, 40, 1000.0).unwrap();
    for j in y0..y0 + side {
        for i in x0..x0 + side {
            r.set(i, j, true);
        }
    }
    r
}

#[test]
fn overlap_examples() {
    let a = square(10, 5, 5);
    let same = iou(&a, &a).unwrap();
    assert_eq!((same.iou, same.intersection_ratio, same.union_ratio), (1.0, 1.0, 1.0));

    let far = iou(&square(10, 25, 25), &a).unwrap();
    assert_eq!((far.iou, far.intersection_ratio, far.union_ratio), (0.0, 0.0, 2.0));

    let shifted = iou(&square(10, 10, 5), &a).unwrap();
    assert_relative_eq!(shifted.iou, 1.0 / 3.0, epsilon = 1e-15);
    assert_eq!(shifted.intersection_ratio, 0.5);
    assert_eq!(shifted.union_ratio, 1.5);
}

#[test]
fn overlap_rejects_bad_inputs() {
    let empty = Raster::new(40, 40, 1000.0).unwrap();
    assert!(matches!(iou(&square(3, 0, 0), &empty), Err(Error::Empty(_))));
    let other = Raster::new(40, 41, 1000.0).unwrap();
    assert!(matches!(iou(&other, &square(3, 0, 0)), Err(Error::RasterMismatch(..))));
    assert!(Raster::new(4, 4, 0.0).is_err());
}

fn any_raster() -> impl Strategy<Value = Raster> {
    prop::collection::vec(any::<bool>(), 24 * 24).prop_map(|bits| {
        let mut r = Raster::new(24, 24, 500.0).unwrap();
        for (k, b) in bits.into_iter().enumerate() {
            r.set(k % 24, k / 24, b);
        }
        r
    })
}

proptest! {
    #[test]
    fn overlap_is_symmetric_and_consistent(w in any_raster(), t in any_raster()) {
        prop_assume!(w.count() > 0 && t.count() > 0);
        let (a, b) = (iou(&w, &t).unwrap(), iou(&t, &w).unwrap());
        prop_assert_eq!(a.iou, b.iou);
        let identity = a.intersection_ratio / a.union_ratio;
        prop_assert!((identity - a.iou).abs() <= f64::EPSILON * a.iou);
        prop_assert!(a.iou <= a.intersection_ratio && a.union_ratio >= 1.0);
    }

    #[test]
    fn render_is_translation_equivariant(
        y in -0.05f64..0.05, z in 0.95f64..1.05, di in -20i32..20, dj in -20i32..20, f in 0.5f64..4.0,
    ) {
        // Positions on a 1/1024 m grid so the metre-to-pixel map is exact.
        let q = |v: f64| (v * 1024.0).round() / 1024.0;
        let (map, size) = wall();
        let pen = PenModel::default();
        let path = |oy: f64, oz: f64| log((0..5).map(|k| {
            let p = Vector3::new(1.0, q(y) - 2.0 * k as f64 / 1024.0 + oy, q(z) + oz);
            record(k as f64 * 0.01, p, f, p, f)
        }).collect());
        let base = render(&path(0.0, 0.0), &pen, &map, &size, 1024.0).unwrap();
        let moved = render(&path(-di as f64 / 1024.0, -dj as f64 / 1024.0), &pen, &map, &size, 1024.0).unwrap();
        for j in 0..base.height() {
            for i in 0..base.width() {
                let (si, sj) = (i as i64 - di as i64, j as i64 - dj as i64);
                if si >= 0 && sj >= 0 && (si as usize) < base.width() && (sj as usize) < base.height() {
                    prop_assert_eq!(moved.get(i, j), base.get(si as usize, sj as usize));
                }
            }
        }
    }

    #[test]
    fn rmse_ignores_record_order(errs in prop::collection::vec(-0.05f64..0.05, 1..30), seed in any::<u64>()) {
        let records: Vec<_> = errs.iter().enumerate().map(|(k, e)| {
            let rp = Vector3::new(1.0, 0.0, 1.0);
            record(k as f64 * 0.01, rp + Vector3::new(0.0, *e, 0.0), 2.0 + e, rp, 2.0)
        }).collect();
        let mut shuffled = records.clone();
        let n = shuffled.len();
        for k in 0..n {
            shuffled.swap(k, (seed as usize).wrapping_mul(k + 7) % n);
        }
        let p = UamParams::default();
        for mode in [RmseMode::EePos, RmseMode::BasePos, RmseMode::Force] {
            let a = rmse(&log(records.clone()), mode, &p).unwrap();
            let b = rmse(&log(shuffled.clone()), mode, &p).unwrap();
            prop_assert!((a - b).abs() <= 1e-15);
        }
    }
}

#[test]
fn no_contact_renders_nothing() {
    let (map, size) = wall();
    let p = Vector3::new(0.99, 0.0, 1.0);
    let r = render(
        &log(vec![record(0.0, p, 0.0, p, 0.0)]),
        &PenModel::default(),
        &map,
        &size,
        2000.0,
    )
    .unwrap();
    assert_eq!(r.count(), 0);
    assert!(matches!(
        render(&log(vec![]), &PenModel::default(), &map, &size, 2000.0),
        Err(Error::Empty(_))
    ));
}

#[test]
fn stationary_tick_stamps_a_sixteen_pixel_disk() {
    let (map, size) = wall();
    let p = Vector3::new(1.0, 0.0, 1.0);
    let r = render(
        &log(vec![record(0.0, p, 2.0, p, 2.0)]),
        &PenModel::default(),
        &map,
        &size,
        2000.0,
    )
    .unwrap();
    assert_eq!((r.width(), r.height()), (500, 500));
    let (mut cols, mut rows) = (vec![], vec![]);
    for j in 0..r.height() {
        for i in 0..r.width() {
            if r.get(i, j) {
                cols.push(i);
                rows.push(j);
            }
        }
    }
    let extent = |v: &[usize]| v.iter().max().unwrap() - v.iter().min().unwrap() + 1;
    assert_eq!((extent(&cols), extent(&rows)), (16, 16));
    // Pixel centres within a radius-8 disk around a grid corner.
    let inside = (0..16i64)
        .flat_map(|a| (0..16i64).map(move |b| (a, b)))
        .filter(|(a, b)| ((a - 8) * 2 + 1).pow(2) + ((b - 8) * 2 + 1).pow(2) <= 256)
        .count();
    assert_eq!(r.count(), inside);
}

#[test]
fn constant_force_slide_draws_a_uniform_band() {
    let (map, size) = wall();
    let records = (0..100)
        .map(|k| {
            let p = Vector3::new(1.0, 0.1 - 0.002 * k as f64, 1.0);
            record(k as f64 * 0.01, p, 2.0, p, 2.0)
        })
        .collect();
    let r = render(&log(records), &PenModel::default(), &map, &size, 2000.0).unwrap();
    // Tip path spans image x in [0.025, 0.223] m, pixels 50..446.
    for i in 80..420 {
        let n = (0..r.height()).filter(|&j| r.get(i, j)).count();
        assert!((15..=17).contains(&n), "column {i} has {n} pixels");
    }
}

#[test]
fn rmse_examples() {
    let p = UamParams::default();
    let rp = Vector3::new(1.0, 0.0, 1.0);
    let perfect = log(vec![record(0.0, rp, 2.0, rp, 2.0), record(0.01, rp, 2.0, rp, 2.0)]);
    for mode in [RmseMode::EePos, RmseMode::BasePos, RmseMode::Force] {
        assert_eq!(rmse(&perfect, mode, &p).unwrap(), 0.0);
    }
    let offset = log((0..10)
        .map(|k| record(k as f64, rp + Vector3::new(0.0, 0.01, 0.0), 2.0, rp, 2.0))
        .collect());
    assert_relative_eq!(rmse(&offset, RmseMode::EePos, &p).unwrap(), 0.01, epsilon = 1e-15);
    assert_relative_eq!(rmse(&offset, RmseMode::BasePos, &p).unwrap(), 0.01, epsilon = 1e-15);
    let pair = log(vec![
        record(0.0, rp + Vector3::new(0.03, 0.0, 0.0), 0.0, rp, 0.0),
        record(0.01, rp + Vector3::new(0.0, 0.0, 0.04), 2.5, rp, 2.0),
    ]);
    assert_relative_eq!(
        rmse(&pair, RmseMode::EePos, &p).unwrap(),
        12.5f64.sqrt() / 100.0,
        epsilon = 1e-15
    );
    // Only the tick with a positive reference force counts.
    assert_relative_eq!(rmse(&pair, RmseMode::Force, &p).unwrap(), 0.5, epsilon = 1e-15);
}

#[test]
fn base_error_includes_the_arm() {
    let p = UamParams::default();
    let rp = Vector3::new(1.0, 0.0, 1.0);
    let mut r = record(0.0, rp, 0.0, rp, 0.0);
    r.measured.ee.rotation = calli_core::se3::exp_so3(&Vector3::new(0.0, 0.0, 0.1));
    let l = log(vec![r]);
    let expected = (r.measured.ee.rotation * p.t_b_e - p.t_b_e).norm();
    assert_eq!(rmse(&l, RmseMode::EePos, &p).unwrap(), 0.0);
    assert_relative_eq!(rmse(&l, RmseMode::BasePos, &p).unwrap(), expected, epsilon = 1e-15);
}

#[test]
fn written_target_matches_its_own_rendering() {
    let (map, size) = wall();
    let limits = FitLimits {
        max_curvature: 100.0,
        w_min: 0.004,
        w_max: 0.014,
    };
    let pts = [Vector2::new(0.05, 0.1), Vector2::new(0.2, 0.1)];
    let fit = fit_stroke(&pts, &[0.008, 0.008], 0.0005, &limits).unwrap();
    let target = render_target(std::slice::from_ref(&fit), &size, 2000.0).unwrap();
    let records = fit
        .points
        .iter()
        .enumerate()
        .map(|(k, q)| {
            let p = map.to_wall(q);
            record(k as f64 * 0.01, p, 2.0, p, 2.0)
        })
        .collect();
    let written = render(&log(records), &PenModel::default(), &map, &size, 2000.0).unwrap();
    let o = iou(&written, &target).unwrap();
    assert!(o.iou > 0.99, "{o:?}");
}

#[test]
fn images_round_trip_through_png_and_pgm() {
    let mut r = square(10, 5, 5);
    r.stamp_px(30.0, 30.0, 7.0);
    let back = Raster::from_image_bytes(&r.to_png().unwrap(), 1000.0, 0.5).unwrap();
    assert_eq!(back, r);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.pgm");
    r.save(&path).unwrap();
    assert_eq!(Raster::load(&path, 1000.0, 0.5).unwrap(), r);
}

#[test]
fn report_serializes_every_metric() {
    let rp = Vector3::new(1.0, 0.0, 1.0);
    let l = log(vec![record(0.0, rp, 2.0, rp, 2.0), record(0.5, rp, 2.0, rp, 2.0)]);
    let a = square(10, 5, 5);
    let rep = Report::new(&l, &a, &a, &UamParams::default()).unwrap();
    assert_eq!(rep.duration, 0.5);
    let json = rep.to_json();
    for key in [
        "iou",
        "intersection_ratio",
        "union_ratio",
        "ee_pos_rmse",
        "base_pos_rmse",
        "force_rmse",
    ] {
        assert!(json.contains(&format!("\"{key}\"")), "{json}");
    }
    assert_eq!(serde_json::from_str::<Report>(&json).unwrap(), rep);
}
