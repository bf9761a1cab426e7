//! CSV serialization of plans and simulation logs. The first line of every
//! file is a `#` comment naming the schema and its version; the second is the
//! column header. Floats use the shortest representation that round-trips.

use std::io::{self, Write};

use crate::ddp::Trajectory;
use crate::sim::SimRecord;

pub const PLAN_SCHEMA: &str = "wiphwbc-plan/1";
pub const SIM_SCHEMA: &str = "wiphwbc-sim-log/1";

pub const PLAN_COLUMNS: [&str; 6] = ["t", "theta_ref", "thetadot_ref", "x_ref", "xdot_ref", "u_ref"];

pub fn sim_columns(n: usize) -> Vec<String> {
    let mut cols: Vec<String> = vec!["t".into(), "x".into(), "xdot".into()];
    cols.extend((1..=n).map(|i| format!("q{i}")));
    cols.extend((1..=n).map(|i| format!("qd{i}")));
    cols.extend(["theta", "thetadot", "theta_traj", "x_traj", "u"].map(String::from));
    cols.extend((1..=n).map(|i| format!("tau{i}")));
    cols.extend(["ee_x", "ee_z", "ee_phi", "E_kin", "E_pot", "qp_status", "mpc_iters"].map(String::from));
    cols
}

/// One row per planner knot; the last knot has no control and reports zero.
pub fn write_plan_csv<W: Write>(mut w: W, traj: &Trajectory) -> io::Result<()> {
    writeln!(w, "# schema: {PLAN_SCHEMA} dt={}", traj.dt)?;
    writeln!(w, "{}", PLAN_COLUMNS.join(","))?;
    for (i, s) in traj.states.iter().enumerate() {
        let t = i as f64 * traj.dt;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            t,
            s.theta,
            s.thetadot,
            s.x,
            s.xdot,
            traj.control_at(i)
        )?;
    }
    Ok(())
}

pub fn write_sim_csv<W: Write>(mut w: W, n: usize, records: &[SimRecord]) -> io::Result<()> {
    writeln!(w, "# schema: {SIM_SCHEMA} n={n}")?;
    writeln!(w, "{}", sim_columns(n).join(","))?;
    let mut line = String::new();
    for r in records {
        line.clear();
        let s = &r.state;
        let mut push = |v: f64| {
            line.push_str(&v.to_string());
            line.push(',');
        };
        push(r.t);
        push(s.x);
        push(s.xdot);
        s.q.iter().for_each(|&v| push(v));
        s.qdot.iter().for_each(|&v| push(v));
        push(r.wipm.theta);
        push(r.wipm.thetadot);
        push(r.traj.theta);
        push(r.traj.x);
        push(r.u);
        r.torques.iter().for_each(|&v| push(v));
        r.ee.iter().for_each(|&v| push(v));
        push(r.energy.kinetic);
        push(r.energy.potential);
        line.push_str(r.qp_status.as_str());
        line.push(',');
        line.push_str(&r.mpc_iters.to_string());
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddp::{solve, CostSpec, DdpOptions};
    use crate::model::RobotDescription;
    use crate::wipm::{WipmParams, WipmState};

    #[test]
    fn sim_columns_for_two_links() {
        let c = sim_columns(2);
        assert_eq!(c.len(), 3 + 2 * 2 + 5 + 2 + 7);
        assert_eq!(&c[3..7], ["q1", "q2", "qd1", "qd2"]);
        assert_eq!(c.last().unwrap(), "mpc_iters");
    }

    #[test]
    fn plan_rows() {
        let d = RobotDescription::desk_scale(1).unwrap();
        let p = WipmParams::new(2.0, 0.3, 0.24, &d).unwrap();
        let t = solve(&p, WipmState::default(), &CostSpec::planner(WipmState::at(0.1)), 20, 0.01, &DdpOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_plan_csv(&mut buf, &t).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# schema: wiphwbc-plan/1"));
        assert_eq!(lines[1], "t,theta_ref,thetadot_ref,x_ref,xdot_ref,u_ref");
        assert_eq!(lines.len(), 2 + 21);
        let row: Vec<f64> = lines[7].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row[3], t.states[5].x);
        assert_eq!(row[5], t.controls[5]);
    }
}
