use super::{free_flow_steps, CumulativeCurveSet, DnlConfig, LinkStateTensor};
use crate::network::Network;
use crate::{VehicleClass, NUM_CLASSES};

/// Mean travel time of vehicles arriving uniformly over one interval at a
/// point-queue link.
///
/// `queue0` is the PCE backlog waiting at the server when the interval
/// starts, `inflow` the PCE volume arriving during the interval and
/// `capacity` the discharge rate in PCE/s.
pub fn link_travel_time_response(
    free_flow_s: f64,
    capacity: f64,
    interval_s: f64,
    queue0: f64,
    inflow: f64,
) -> f64 {
    let lambda = inflow / interval_s;
    let mu = capacity;
    let wait = if lambda >= mu {
        (queue0 + 0.5 * (lambda - mu) * interval_s) / mu
    } else {
        let drain = queue0 / (mu - lambda);
        if drain >= interval_s {
            (queue0 - 0.5 * (mu - lambda) * interval_s) / mu
        } else {
            queue0 * drain / (2.0 * mu * interval_s)
        }
    };
    free_flow_s + wait.max(0.0)
}

/// `dh/dx` per class, link and interval: central difference of
/// [`link_travel_time_response`] with respect to the class's own inflow,
/// evaluated at the loaded state.
pub fn travel_time_sensitivity(
    net: &Network,
    curves: &CumulativeCurveSet,
    states: &LinkStateTensor,
    cfg: &DnlConfig,
) -> [Vec<f64>; NUM_CLASSES] {
    let t_n = states.intervals;
    let spi = curves.steps_per_interval();
    let interval_s = cfg.interval_s as f64;
    let mut out: [Vec<f64>; NUM_CLASSES] = std::array::from_fn(|_| vec![0.0; states.num_links * t_n]);
    for link in 0..states.num_links {
        let cap = net.link(link).capacity[0] / 3600.0;
        let mut queue0 = vec![0.0; t_n];
        let mut inflow = vec![0.0; t_n];
        for class in VehicleClass::ALL {
            let pce = cfg.pce(class);
            for tr in &curves.cell(link, class).through {
                let ta = curves.interval_of(tr.enter);
                if ta < t_n {
                    inflow[ta] += pce * tr.size;
                }
                // intervals whose start falls in [ready, exit)
                let first = tr.ready.div_ceil(spi) as usize;
                let last = (tr.exit.saturating_sub(1) / spi) as usize;
                if tr.exit > tr.ready {
                    for q in queue0.iter_mut().take(last.min(t_n - 1) + 1).skip(first) {
                        *q += pce * tr.size;
                    }
                }
            }
        }
        for class in VehicleClass::ALL {
            let pce = cfg.pce(class);
            let fft = free_flow_steps(net, link, class, cfg.sim_step_s) as f64 * cfg.sim_step_s as f64;
            for t in 0..t_n {
                let x = inflow[t];
                let eps = 0.5 * pce;
                let lo = (x - eps).max(0.0);
                let hi = x + eps;
                let h_hi = link_travel_time_response(fft, cap, interval_s, queue0[t], hi);
                let h_lo = link_travel_time_response(fft, cap, interval_s, queue0[t], lo);
                out[class.index()][link * t_n + t] = (h_hi - h_lo) / ((hi - lo) / pce);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uncongested_is_free_flow() {
        assert_eq!(link_travel_time_response(72.0, 1.0, 900.0, 0.0, 100.0), 72.0);
    }

    #[test]
    fn oversaturated_grows_with_inflow() {
        let a = link_travel_time_response(36.0, 2000.0 / 3600.0, 900.0, 0.0, 600.0);
        let b = link_travel_time_response(36.0, 2000.0 / 3600.0, 900.0, 0.0, 700.0);
        assert!(a > 36.0 && b > a);
        // d(mean wait)/d(inflow) = 1 / (2 mu) above capacity
        assert!(((b - a) / 100.0 - 0.5 * 3600.0 / 2000.0).abs() < 1e-9);
    }

    #[test]
    fn continuous_at_capacity_and_drain_boundary() {
        let mu = 0.5;
        let at = link_travel_time_response(10.0, mu, 900.0, 50.0, mu * 900.0);
        let below = link_travel_time_response(10.0, mu, 900.0, 50.0, mu * 900.0 - 1e-6);
        assert!((at - below).abs() < 1e-6);
        // queue drains exactly at the interval end
        let q0 = 0.2 * 900.0;
        let a = link_travel_time_response(0.0, mu, 900.0, q0, 0.3 * 900.0);
        let b = link_travel_time_response(0.0, mu, 900.0, q0 - 1e-9, 0.3 * 900.0);
        assert!((a - b).abs() < 1e-6);
    }
}
