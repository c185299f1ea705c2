//! Lossless quadratic-cost economic dispatch by λ-bisection.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::netmodel::{BusId, CostCurve, TransmissionCase, Units};

/// Generator as seen by the dispatcher, in MW.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispatchUnit {
    pub bus: BusId,
    pub p_min: f64,
    pub p_max: f64,
    pub cost: CostCurve,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchResult {
    /// MW per unit, in input order.
    pub p_set: Vec<f64>,
    pub buses: Vec<BusId>,
    /// System marginal cost ($/MWh).
    pub lambda: f64,
    /// Indices of units sitting at a limit.
    pub binding: BTreeSet<usize>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DispatchError {
    #[error("no generators to dispatch")]
    NoUnits,
    #[error("demand {demand} MW is outside the feasible range [{min}, {max}] MW")]
    Infeasible { demand: f64, min: f64, max: f64 },
    #[error("unit {0}: quadratic coefficient must be non-negative and limits ordered")]
    BadUnit(usize),
}

const BISECTIONS: usize = 200;

/// Dispatch units from a case's generators, converting limits to MW.
pub fn units_from_case(case: &TransmissionCase) -> Vec<DispatchUnit> {
    let k = match case.units {
        Units::PerUnit => case.base_mva,
        Units::Physical => 1.0,
    };
    case.generators
        .iter()
        .map(|g| DispatchUnit {
            bus: g.bus,
            p_min: g.p_min * k,
            p_max: g.p_max * k,
            cost: g.cost,
        })
        .collect()
}

fn output_at(u: &DispatchUnit, lambda: f64) -> f64 {
    if u.cost.a > 0.0 {
        ((lambda - u.cost.b) / (2.0 * u.cost.a)).clamp(u.p_min, u.p_max)
    } else if lambda >= u.cost.b {
        u.p_max
    } else {
        u.p_min
    }
}

/// Equal-incremental-cost dispatch meeting `demand` MW exactly.
pub fn dispatch(units: &[DispatchUnit], demand: f64) -> Result<DispatchResult, DispatchError> {
    if units.is_empty() {
        return Err(DispatchError::NoUnits);
    }
    for (i, u) in units.iter().enumerate() {
        if !(u.cost.a >= 0.0) || !(u.p_min <= u.p_max) {
            return Err(DispatchError::BadUnit(i));
        }
    }
    let min: f64 = units.iter().map(|u| u.p_min).sum();
    let max: f64 = units.iter().map(|u| u.p_max).sum();
    if !(demand >= min - 1e-9 && demand <= max + 1e-9) {
        return Err(DispatchError::Infeasible { demand, min, max });
    }

    let mut lo = units.iter().map(|u| u.cost.b).fold(f64::INFINITY, f64::min);
    let mut hi = units
        .iter()
        .map(|u| u.cost.b + 2.0 * u.cost.a * u.p_max)
        .fold(f64::NEG_INFINITY, f64::max);
    let total = |l: f64| units.iter().map(|u| output_at(u, l)).sum::<f64>();
    // Σp(λ) is monotone; widen the bracket if limits keep it short
    if total(lo) > demand {
        lo -= 1.0;
    }
    for _ in 0..BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if total(mid) < demand {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = if total(lo) >= demand { lo } else { hi };
    let mut p: Vec<f64> = units.iter().map(|u| output_at(u, lambda)).collect();

    // Linear-cost units at λ = b and float rounding leave a small residual;
    // hand it to units that still have room, marginal ones first.
    let mut residual = demand - p.iter().sum::<f64>();
    let mut order: Vec<usize> = (0..units.len()).collect();
    order.sort_by(|&i, &j| {
        let d = |k: usize| (units[k].cost.marginal(p[k]) - lambda).abs();
        d(i).total_cmp(&d(j)).then(i.cmp(&j))
    });
    for &i in &order {
        if residual.abs() == 0.0 {
            break;
        }
        let u = &units[i];
        let next = (p[i] + residual).clamp(u.p_min, u.p_max);
        residual -= next - p[i];
        p[i] = next;
    }
    for (i, u) in units.iter().enumerate() {
        p[i] = p[i].clamp(u.p_min, u.p_max);
    }

    let tol = 1e-9;
    let binding = units
        .iter()
        .enumerate()
        .filter(|(i, u)| (p[*i] - u.p_min).abs() <= tol || (p[*i] - u.p_max).abs() <= tol)
        .map(|(i, _)| i)
        .collect();
    Ok(DispatchResult {
        p_set: p,
        buses: units.iter().map(|u| u.bus).collect(),
        lambda,
        binding,
    })
}
