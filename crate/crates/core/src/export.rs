//! CSV exports and the 9-significant-digit number format used by every
//! machine-readable output.

use std::io::Write;

use crate::allocation::FrontierPoint;
use crate::analysis::SweepRow;
use crate::simulator::TrajectoryRecord;

/// Rounds to 9 significant digits. Non-finite values pass through.
pub fn round_sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

/// Shortest decimal text of `round_sig9(x)`.
pub fn fmt9(x: f64) -> String {
    round_sig9(x).to_string()
}

fn numbered(prefix: &str, count: usize) -> impl Iterator<Item = String> + '_ {
    (1..=count).map(move |i| format!("{prefix}_{i}"))
}

/// `step,x_1..x_n,u_1..u_m,v_1..v_m,stage_cost`. The final row holds the
/// terminal state with empty input fields and zero stage cost.
pub fn write_trajectory_csv<W: Write>(rec: &TrajectoryRecord, out: W) -> csv::Result<()> {
    let n = rec.states.first().map_or(0, |x| x.len());
    let m = rec.inputs.first().map_or(0, |u| u.len());
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = std::iter::once("step".to_string())
        .chain(numbered("x", n))
        .chain(numbered("u", m))
        .chain(numbered("v", m))
        .chain(std::iter::once("stage_cost".to_string()))
        .collect();
    w.write_record(&header)?;
    for (k, x) in rec.states.iter().enumerate() {
        let mut row = vec![k.to_string()];
        row.extend(x.iter().map(|&v| fmt9(v)));
        match (rec.inputs.get(k), rec.transmissions.get(k)) {
            (Some(u), Some(v)) => {
                row.extend(u.iter().map(|&e| fmt9(e)));
                row.extend(v.iter().map(|&e| fmt9(e)));
                row.push(fmt9(rec.stage_costs[k]));
            }
            _ => {
                row.extend(std::iter::repeat_n(String::new(), 2 * m));
                row.push("0".into());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `mu_1[,mu_2,...],j_tcp,j_udp,gap`
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow<f64>], out: W) -> csv::Result<()> {
    let m = rows.first().map_or(1, |r| r.mu.len());
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = numbered("mu", m)
        .chain(["j_tcp", "j_udp", "gap"].map(String::from))
        .collect();
    w.write_record(&header)?;
    for r in rows {
        let row: Vec<String> =
            r.mu.iter()
                .chain([r.report.j_tcp, r.report.j_udp, r.report.gap].iter())
                .map(|&v| fmt9(v))
                .collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `mu_1..mu_m,control_cost,comm_cost,feasible`
pub fn write_frontier_csv<W: Write>(points: &[FrontierPoint], out: W) -> csv::Result<()> {
    let m = points.first().map_or(1, |p| p.mu.len());
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<String> = numbered("mu", m)
        .chain(["control_cost", "comm_cost", "feasible"].map(String::from))
        .collect();
    w.write_record(&header)?;
    for p in points {
        let mut row: Vec<String> = p.mu.iter().map(|&v| fmt9(v)).collect();
        row.push(fmt9(p.control_cost));
        row.push(fmt9(p.comm_cost));
        row.push(p.feasible.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
