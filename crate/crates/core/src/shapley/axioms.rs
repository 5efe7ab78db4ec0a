//! Checks an attribution against the efficiency, symmetry and null-player
//! axioms on a complete value table.

use serde::{Deserialize, Serialize};

use super::{Attribution, Method};
use crate::ValueTable;

pub const EFFICIENCY_REL_TOL: f64 = 1e-9;
pub const SYMMETRY_TOL: f64 = 1e-9;
pub const NULL_PLAYER_TOL: f64 = 1e-12;
/// Tolerance used to decide that two table values are equal when detecting
/// symmetric pairs and null players.
pub const DETECTION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub axiom: String,
    pub players: Vec<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    /// `Σphi - (V(grand) - V(∅))`.
    pub efficiency_gap: f64,
    pub efficiency_tolerance: f64,
    pub symmetric_pairs: Vec<[usize; 2]>,
    pub null_players: Vec<usize>,
    pub violations: Vec<Violation>,
}

impl AxiomReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Efficiency is relative to the larger of `|V(grand) - V(∅)|` and the
/// largest absolute table value. Symmetric pairs must receive equal values
/// (within 1e-9, or three combined standard errors for Monte-Carlo
/// estimates); null players must receive zero within 1e-12.
///
/// An incomplete table or a player-count mismatch is itself reported as a
/// violation.
pub fn axiom_report(table: &ValueTable, attribution: &Attribution) -> AxiomReport {
    let n = table.n_players();
    let mut violations = Vec::new();
    let values = match table.dense_values() {
        Some(v) if attribution.phi.len() == n => v,
        _ => {
            violations.push(Violation {
                axiom: "precondition".into(),
                players: Vec::new(),
                detail: format!(
                    "need a complete table over {} players; table has {} of {} entries over {n}",
                    attribution.phi.len(),
                    table.len(),
                    1u64.checked_shl(n as u32).unwrap_or(0)
                ),
            });
            return AxiomReport {
                efficiency_gap: f64::NAN,
                efficiency_tolerance: 0.0,
                symmetric_pairs: Vec::new(),
                null_players: Vec::new(),
                violations,
            };
        }
    };

    let target = values[values.len() - 1] - values[0];
    let scale = values.iter().fold(target.abs(), |m, v| m.max(v.abs()));
    let efficiency_tolerance = EFFICIENCY_REL_TOL * scale.max(f64::MIN_POSITIVE);
    let efficiency_gap = attribution.total() - target;
    if efficiency_gap.abs() > efficiency_tolerance {
        violations.push(Violation {
            axiom: "efficiency".into(),
            players: (0..n).collect(),
            detail: format!(
                "sum of phi {} differs from V(grand) - V(empty) = {target} by {efficiency_gap:e}",
                attribution.total()
            ),
        });
    }

    let stderr = attribution
        .stderr
        .as_deref()
        .filter(|_| attribution.method == Method::MonteCarlo);

    let mut symmetric_pairs = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if !is_symmetric_pair(values, n, a, b) {
                continue;
            }
            symmetric_pairs.push([a, b]);
            let diff = (attribution.phi[a] - attribution.phi[b]).abs();
            let tol = match stderr {
                Some(se) => 3.0 * (se[a].powi(2) + se[b].powi(2)).sqrt() + SYMMETRY_TOL,
                None => SYMMETRY_TOL,
            };
            if diff > tol {
                violations.push(Violation {
                    axiom: "symmetry".into(),
                    players: vec![a, b],
                    detail: format!(
                        "interchangeable players received {} and {}",
                        attribution.phi[a], attribution.phi[b]
                    ),
                });
            }
        }
    }

    let mut null_players = Vec::new();
    for p in 0..n {
        let bit = 1usize << p;
        let is_null = (0..values.len())
            .filter(|m| m & bit == 0)
            .all(|m| (values[m | bit] - values[m]).abs() <= DETECTION_TOL);
        if !is_null {
            continue;
        }
        null_players.push(p);
        if attribution.phi[p].abs() > NULL_PLAYER_TOL {
            violations.push(Violation {
                axiom: "null_player".into(),
                players: vec![p],
                detail: format!("null player received {}", attribution.phi[p]),
            });
        }
    }

    AxiomReport {
        efficiency_gap,
        efficiency_tolerance,
        symmetric_pairs,
        null_players,
        violations,
    }
}

fn is_symmetric_pair(values: &[f64], n: usize, a: usize, b: usize) -> bool {
    let (ba, bb) = (1usize << a, 1usize << b);
    (0..1usize << n)
        .filter(|m| m & (ba | bb) == 0)
        .all(|m| (values[m | ba] - values[m | bb]).abs() <= DETECTION_TOL)
}
