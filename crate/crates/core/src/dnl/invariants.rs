use crate::network::Network;
use crate::VehicleClass;

use super::{free_flow_steps, CurveKind, DnlOutput, Step, Traversal};

/// Checks the ordering and conservation properties of one loader run and
/// returns the first violation found.
pub fn check_invariants(net: &Network, out: &DnlOutput) -> std::result::Result<(), String> {
    let curves = &out.curves;
    for l in 0..net.num_links() {
        for c in VehicleClass::ALL {
            let cell = curves.cell(l, c);
            for tr in cell.through.iter().chain(&cell.parking) {
                if tr.exit < tr.enter || tr.exit == Step::MAX {
                    return Err(format!("link {l}: departure before arrival"));
                }
            }
            // FIFO for through traffic
            let mut by_enter: Vec<&Traversal> = cell.through.iter().collect();
            by_enter.sort_by_key(|t| t.enter);
            for w in by_enter.windows(2) {
                if w[0].enter < w[1].enter && w[0].exit > w[1].exit {
                    return Err(format!("link {l} {c}: FIFO violated"));
                }
            }
            let fft = free_flow_steps(net, l, c, curves.sim_step_s()) as f64 * curves.sim_step_s() as f64;
            for t in 0..curves.horizon_intervals() {
                let h = out.states.travel_time[c.index()][l * curves.horizon_intervals() + t];
                if h < fft {
                    return Err(format!("link {l}: h {h} below free flow {fft}"));
                }
            }
            let mut last = [0.0; 4];
            let end = curves.horizon_steps() + 1;
            let probe = (0..=end).step_by(7).chain(std::iter::once(end));
            for s in probe {
                let v: Vec<f64> = CurveKind::ALL.iter().map(|&k| curves.cumulative(l, c, k, s)).collect();
                for i in 0..4 {
                    if v[i] + 1e-9 < last[i] {
                        return Err(format!("link {l}: curve {i} decreasing"));
                    }
                }
                if v[2] > v[0] + 1e-9 || v[3] > v[1] + 1e-9 {
                    return Err(format!("link {l}: D above A at step {s}"));
                }
                last.copy_from_slice(&v);
            }
            if out.cleared {
                let h = curves.horizon_steps();
                for (a, d) in [(CurveKind::ArrivalMoving, CurveKind::DepartureMoving), (CurveKind::ArrivalParking, CurveKind::DeparturePark)] {
                    if (curves.cumulative(l, c, a, h) - curves.cumulative(l, c, d, h)).abs() > 1e-9 {
                        return Err(format!("link {l}: not cleared at horizon"));
                    }
                }
            }
        }
    }
    if (out.arrived - out.departed).abs() > 1e-9 * out.departed.max(1.0) {
        return Err(format!("conservation: departed {} arrived {}", out.departed, out.arrived));
    }
    Ok(())
}
