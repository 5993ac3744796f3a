//! Line-oriented text format for simulation logs.
//!
//! ```text
//! calli-simlog 1
//! dt <seconds>
//! <t> <reference:31> <measured:19> <F_hat> <tau_a:6> <contact:6> <linewidth>
//! ```
//!
//! `reference` uses the trajectory row layout without its time column
//! (`p:3 R:9 v:6 F tau_a:6 tau_c:6`); `measured` is `p:3 R:9 v:6 F` with the
//! true normal force. Round trips are bit-exact.

use std::fmt::Write as _;

use nalgebra::{Vector3, Vector6};

use super::{SimLog, SimRecord};
use crate::error::{Error, Result};
use crate::model::{EeState, State};
use crate::planner::record::{parse_row, push_all, rotation_at};
use crate::planner::Sample;
use crate::se3::{Frame, Wrench};

const MAGIC: &str = "calli-simlog 1";
const COLS: usize = 65;

fn push_state(out: &mut String, s: &State) {
    let e = &s.ee;
    push_all(out, e.p.iter().copied());
    push_all(out, e.rotation.to_row_major());
    push_all(out, e.v_lin.iter().chain(e.omega.iter()).copied());
    push_all(out, [s.force]);
}

fn state_at(v: &[f64], line: usize) -> Result<State> {
    Ok(State {
        ee: EeState {
            p: Vector3::new(v[0], v[1], v[2]),
            rotation: rotation_at(&v[3..12], line)?,
            v_lin: Vector3::new(v[12], v[13], v[14]),
            omega: Vector3::new(v[15], v[16], v[17]),
        },
        force: v[18],
    })
}

fn wrench_at(v: &[f64], frame: Frame) -> Wrench {
    Wrench::from_vector(&Vector6::from_column_slice(&v[..6]), frame)
}

pub fn write_log(log: &SimLog) -> String {
    let mut out = String::with_capacity(64 + log.records.len() * 1200);
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "dt {}", log.dt);
    for r in &log.records {
        let _ = write!(out, "{}", r.t);
        push_state(&mut out, &r.reference.state);
        push_all(&mut out, r.reference.tau_a.to_vector().iter().copied());
        push_all(&mut out, r.reference.tau_c.to_vector().iter().copied());
        push_state(&mut out, &r.measured);
        push_all(&mut out, [r.f_hat]);
        push_all(&mut out, r.tau_a.to_vector().iter().copied());
        push_all(&mut out, r.contact.to_vector().iter().copied());
        push_all(&mut out, [r.linewidth]);
        out.push('\n');
    }
    out
}

pub fn read_log(text: &str) -> Result<SimLog> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        Some((i, _)) => {
            return Err(Error::Format {
                line: i + 1,
                reason: format!("expected header `{MAGIC}`"),
            })
        }
        None => return Err(Error::Empty("simulation log")),
    }
    let (i, l) = lines.next().ok_or(Error::Format {
        line: 2,
        reason: "missing dt line".into(),
    })?;
    let dt = l
        .trim()
        .strip_prefix("dt ")
        .and_then(|x| x.trim().parse::<f64>().ok())
        .ok_or(Error::Format {
            line: i + 1,
            reason: "expected `dt <seconds>`".into(),
        })?;
    let mut records = Vec::new();
    for (i, l) in lines {
        let line = i + 1;
        let v = parse_row(l, line, COLS)?;
        let reference = Sample {
            t: v[0],
            state: state_at(&v[1..20], line)?,
            tau_a: wrench_at(&v[20..26], Frame::B),
            tau_c: wrench_at(&v[26..32], Frame::C),
        };
        records.push(SimRecord {
            t: v[0],
            reference,
            measured: state_at(&v[32..51], line)?,
            f_hat: v[51],
            tau_a: wrench_at(&v[52..58], Frame::B),
            contact: wrench_at(&v[58..64], Frame::C),
            linewidth: v[64],
        });
    }
    Ok(SimLog { dt, records })
}
