//! EV-charging scenario: companies route fleets to charging stations whose
//! queues get costlier as they fill up.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{FollowerSpec, LeaderObjective, PricingGame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Station {
    /// Vehicles the station serves before queueing, `M_j`.
    pub capacity: f64,
    /// Queue cost per vehicle², `q_j > 0`.
    pub queue_weight: f64,
    pub price_min: f64,
    pub price_max: f64,
}

/// Extra linear restriction `coeffs·x ≤ bound` on a company's split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reachability {
    pub coeffs: Vec<f64>,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Company {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Fleet size `N_i`.
    pub fleet: f64,
    /// Expected charging demand per vehicle at each station (kWh).
    pub demand: Vec<f64>,
    /// Cost per vehicle of reaching each station.
    pub travel_cost: Vec<f64>,
    /// Expected profit per vehicle in each station's region.
    pub expected_profit: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reachability: Vec<Reachability>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChargingScenario {
    pub stations: Vec<Station>,
    pub companies: Vec<Company>,
    /// Desired number of vehicles at each station.
    pub target: Vec<f64>,
}

impl ChargingScenario {
    fn check(&self) -> Result<()> {
        let m = self.stations.len();
        if m == 0 || self.companies.is_empty() {
            return Err(Error::Scenario("need at least one station and one company".into()));
        }
        for (j, s) in self.stations.iter().enumerate() {
            if !(s.queue_weight > 0.0) {
                return Err(Error::Scenario(format!(
                    "stations[{j}].queue_weight must be positive, got {}",
                    s.queue_weight
                )));
            }
            if !(s.price_min <= s.price_max) {
                return Err(Error::InvalidBox { index: j, lo: s.price_min, hi: s.price_max });
            }
        }
        if self.target.len() != m {
            return Err(Error::dim(None, "target", m, self.target.len()));
        }
        for (i, c) in self.companies.iter().enumerate() {
            if !(c.fleet > 0.0) {
                return Err(Error::Scenario(format!("companies[{i}].fleet must be positive, got {}", c.fleet)));
            }
            for (field, len) in [
                ("demand", c.demand.len()),
                ("travel_cost", c.travel_cost.len()),
                ("expected_profit", c.expected_profit.len()),
            ] {
                if len != m {
                    return Err(Error::Scenario(format!("companies[{i}].{field} has {len} entries, expected {m}")));
                }
            }
            if let Some(k) = c.reachability.iter().position(|r| r.coeffs.len() != m) {
                return Err(Error::Scenario(format!(
                    "companies[{i}].reachability[{k}] has {} coefficients, expected {m}",
                    c.reachability[k].coeffs.len()
                )));
            }
        }
        Ok(())
    }

    fn queue_weights(&self) -> DVector<f64> {
        DVector::from_iterator(self.stations.len(), self.stations.iter().map(|s| s.queue_weight))
    }

    fn capacities(&self) -> DVector<f64> {
        DVector::from_iterator(self.stations.len(), self.stations.iter().map(|s| s.capacity))
    }

    /// Queueing plus net travel cost of company `i`:
    /// `xᵀQ(x + σ_others − M) + (e_arr − e_pro)ᵀx`.
    pub fn queue_and_route_cost(&self, i: usize, x: &DVector<f64>, sigma_others: &DVector<f64>) -> f64 {
        let q = self.queue_weights();
        let load = x + sigma_others - self.capacities();
        let c = &self.companies[i];
        let net: f64 = (0..x.len()).map(|j| (c.travel_cost[j] - c.expected_profit[j]) * x[j]).sum();
        x.component_mul(&q).dot(&load) + net
    }
}

/// Maps a scenario onto the quadratic game:
/// `P = 2Dg(q)`, `Q = Dg(q)`, `r_i = −Dg(q)M + e_arr − e_pro`, `S_i = Dg(demand_i)`,
/// `1ᵀx = N_i`, `x ≥ 0` plus the reachability rows.
pub fn build_game_from_scenario(s: &ChargingScenario) -> Result<PricingGame> {
    s.check()?;
    let m = s.stations.len();
    let q = s.queue_weights();
    let qm = q.component_mul(&s.capacities());
    let mut followers = Vec::with_capacity(s.companies.len());
    for (i, c) in s.companies.iter().enumerate() {
        let r = DVector::from_fn(m, |j, _| -qm[j] + c.travel_cost[j] - c.expected_profit[j]);
        let k = c.reachability.len();
        let mut g = DMatrix::zeros(m + k, m);
        let mut h = DVector::zeros(m + k);
        for j in 0..m {
            g[(j, j)] = -1.0;
        }
        for (row, reach) in c.reachability.iter().enumerate() {
            for j in 0..m {
                g[(m + row, j)] = reach.coeffs[j];
            }
            h[m + row] = reach.bound;
        }
        let f = FollowerSpec {
            p: DMatrix::from_diagonal(&(&q * 2.0)),
            q: DMatrix::from_diagonal(&q),
            r,
            s: DMatrix::from_diagonal(&DVector::from_column_slice(&c.demand)),
            a: DMatrix::from_element(1, m, 1.0),
            b: DVector::from_element(1, c.fleet),
            g,
            h,
        };
        if let Err(Error::Infeasible(msg)) = f.polyhedron().slater_point() {
            return Err(Error::Infeasible(format!(
                "companies[{i}]: fleet of {} cannot be split over its reachable stations ({msg})",
                c.fleet
            )));
        }
        followers.push(f);
    }
    let lo = DVector::from_iterator(m, s.stations.iter().map(|st| st.price_min));
    let hi = DVector::from_iterator(m, s.stations.iter().map(|st| st.price_max));
    let target = DVector::from_column_slice(&s.target);
    PricingGame::new(followers, lo, hi, LeaderObjective::Tracking { target })
}
