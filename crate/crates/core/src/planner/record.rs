//! Line-oriented text format for trajectories.
//!
//! ```text
//! calli-trajectory 1
//! dt <seconds>
//! <t> <p:3> <R:9 row-major> <v:6> <F> <tau_a:6> <tau_c:6>
//! ```
//!
//! Numbers use the shortest representation that parses back to the same
//! `f64`, so a write/read cycle is bit-exact.

use std::fmt::Write as _;

use nalgebra::{Vector3, Vector6};

use super::{Sample, Trajectory};
use crate::error::{Error, Result};
use crate::model::{EeState, State};
use crate::se3::{Frame, Rotation, Wrench};

const MAGIC: &str = "calli-trajectory 1";
const COLS: usize = 32;

pub(crate) fn push_all(out: &mut String, vals: impl IntoIterator<Item = f64>) {
    for v in vals {
        let _ = write!(out, " {v}");
    }
}

pub(crate) fn parse_row(line: &str, lineno: usize, expect: usize) -> Result<Vec<f64>> {
    let vals: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
    let vals = vals.map_err(|e| Error::Format {
        line: lineno,
        reason: e.to_string(),
    })?;
    if vals.len() != expect {
        return Err(Error::Format {
            line: lineno,
            reason: format!("expected {expect} numbers, found {}", vals.len()),
        });
    }
    Ok(vals)
}

pub(crate) fn rotation_at(v: &[f64], lineno: usize) -> Result<Rotation> {
    let mut r = [0.0; 9];
    r.copy_from_slice(&v[..9]);
    Rotation::from_row_major(&r).map_err(|e| Error::Format {
        line: lineno,
        reason: e.to_string(),
    })
}

pub fn write_trajectory(traj: &Trajectory) -> String {
    let mut out = String::with_capacity(64 + traj.samples.len() * 600);
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "dt {}", traj.dt);
    for s in &traj.samples {
        let _ = write!(out, "{}", s.t);
        let e = &s.state.ee;
        push_all(&mut out, e.p.iter().copied());
        push_all(&mut out, e.rotation.to_row_major());
        push_all(&mut out, e.v_lin.iter().chain(e.omega.iter()).copied());
        push_all(&mut out, [s.state.force]);
        push_all(&mut out, s.tau_a.to_vector().iter().copied());
        push_all(&mut out, s.tau_c.to_vector().iter().copied());
        out.push('\n');
    }
    out
}

pub fn read_trajectory(text: &str) -> Result<Trajectory> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        Some((i, _)) => {
            return Err(Error::Format {
                line: i + 1,
                reason: format!("expected header `{MAGIC}`"),
            })
        }
        None => return Err(Error::Empty("trajectory file")),
    }
    let dt = match lines.next() {
        Some((i, l)) => {
            let rest = l.trim().strip_prefix("dt ").ok_or(Error::Format {
                line: i + 1,
                reason: "expected `dt <seconds>`".into(),
            })?;
            rest.trim().parse::<f64>().map_err(|e| Error::Format {
                line: i + 1,
                reason: e.to_string(),
            })?
        }
        None => {
            return Err(Error::Format {
                line: 2,
                reason: "missing dt line".into(),
            })
        }
    };
    let mut samples = Vec::new();
    for (i, l) in lines {
        let v = parse_row(l, i + 1, COLS)?;
        let rotation = rotation_at(&v[4..13], i + 1)?;
        let f = v[19];
        if f < 0.0 {
            return Err(Error::Format {
                line: i + 1,
                reason: "negative force".into(),
            });
        }
        samples.push(Sample {
            t: v[0],
            state: State {
                ee: EeState {
                    p: Vector3::new(v[1], v[2], v[3]),
                    rotation,
                    v_lin: Vector3::new(v[13], v[14], v[15]),
                    omega: Vector3::new(v[16], v[17], v[18]),
                },
                force: f,
            },
            tau_a: Wrench::from_vector(&Vector6::from_column_slice(&v[20..26]), Frame::B),
            tau_c: Wrench::from_vector(&Vector6::from_column_slice(&v[26..32]), Frame::C),
        });
    }
    Ok(Trajectory { dt, samples })
}
