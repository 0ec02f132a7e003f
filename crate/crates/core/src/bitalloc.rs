//! Feedback-bit allocation: interference weights, water-filling with
//! integer rounding, an exhaustive oracle, and DoF-preserving budgets.

use serde::{Deserialize, Serialize};

use crate::channel::NetworkConfig;
use crate::error::{Error, Result};
use crate::quantize::gamma_bar;
use crate::topology::TopologyKind;

/// Per-precoder bit counts and the budget they were drawn from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitAllocation {
    pub bits: Vec<u32>,
    pub total: u32,
}

impl BitAllocation {
    /// Splits `total` as evenly as possible; remainders go to the lowest
    /// indices.
    pub fn equal(k: usize, total: u32) -> Self {
        let base = total / k as u32;
        let extra = (total % k as u32) as usize;
        let bits = (0..k).map(|i| base + u32::from(i < extra)).collect();
        Self { bits, total }
    }

    pub fn uniform(k: usize, per_user: u32) -> Self {
        Self {
            bits: vec![per_user; k],
            total: per_user * k as u32,
        }
    }

    pub fn from_bits(bits: Vec<u32>) -> Self {
        let total = bits.iter().sum();
        Self { bits, total }
    }

    pub fn sum(&self) -> u32 {
        self.bits.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Space-separated bit counts, for tables.
    pub fn label(&self) -> String {
        self.bits.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
    }
}

/// Interference weights `a_k` of the allocation objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub a: Vec<f64>,
    pub kind: TopologyKind,
}

/// `a_k`: the expected interference power that one unit of `2^{−B_k/(M−1)}`
/// causes at the receivers whose alignment depends on precoder `k`.
pub fn weights(config: &NetworkConfig, kind: TopologyKind) -> Result<WeightVector> {
    let k = config.k();
    let m = config.m();
    let scale = gamma_bar(m) * config.power() * (m * m) as f64;
    let g = |rx: usize, tx: usize| config.path_gain(rx, tx);
    let a: Vec<f64> = match kind {
        TopologyKind::FullFeedback => {
            return Err(Error::Unsupported("no weights for full feedback".into()));
        }
        TopologyKind::CentralizedReceiver | TopologyKind::Star => (0..k)
            .map(|t| scale * (g((t + k - 2) % k, t) + g((t + k - 1) % k, t)))
            .collect(),
        TopologyKind::CsiExchange => {
            if k < 4 {
                return Err(Error::InvalidConfig("CSI exchange needs K >= 4".into()));
            }
            (0..k)
                .map(|t| match t {
                    0 | 1 => scale * (g(k - 1, t) + g(k - 2, t)),
                    _ => scale * g(t - 2, t),
                })
                .collect()
        }
    };
    Ok(WeightVector { a, kind })
}

/// `Σ a_k 2^{−B_k/(M−1)}`.
pub fn objective(a: &[f64], bits: &[f64], m: usize) -> f64 {
    let m1 = (m - 1) as f64;
    a.iter().zip(bits).map(|(a, b)| a * (-b / m1).exp2()).sum()
}

fn objective_int(a: &[f64], bits: &[u32], m: usize) -> f64 {
    let m1 = (m - 1) as f64;
    a.iter().zip(bits).map(|(a, &b)| a * (-(b as f64) / m1).exp2()).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaterfillSolution {
    pub weights: Vec<f64>,
    pub continuous: Vec<f64>,
    pub water_level: f64,
    /// Users with a positive share, ascending.
    pub active_set: Vec<usize>,
    pub integer: BitAllocation,
}

fn check_weights(a: &[f64], m: usize) -> Result<()> {
    if a.is_empty() {
        return Err(Error::InvalidConfig("empty weight vector".into()));
    }
    if m < 2 {
        return Err(Error::InvalidConfig(format!("M = {m} < 2")));
    }
    if let Some(bad) = a.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::InvalidConfig(format!("weight {bad} is not positive and finite")));
    }
    Ok(())
}

/// Minimizes `Σ a_k 2^{−B_k/(M−1)}` subject to `Σ B_k = total`, `B_k ≥ 0`,
/// then rounds to integers that still sum to `total`.
pub fn waterfill(a: &[f64], total: u32, m: usize) -> Result<WaterfillSolution> {
    check_weights(a, m)?;
    let k = a.len();
    let m1 = (m - 1) as f64;
    let offset: Vec<f64> = a.iter().map(|&ak| m1 * (m1 / ak).log2()).collect();
    let mut active: Vec<usize> = (0..k).collect();
    let (gamma, continuous) = loop {
        let gamma = total as f64 + active.iter().map(|&i| offset[i]).sum::<f64>();
        let share = gamma / active.len() as f64;
        let mut cont = vec![0.0; k];
        for &i in &active {
            cont[i] = share - offset[i];
        }
        if active.len() == 1 || active.iter().all(|&i| cont[i] >= 0.0) {
            break (gamma, cont);
        }
        // drop the weakest user (smallest a, lowest index on ties)
        let pos = (0..active.len())
            .min_by(|&x, &y| a[active[x]].total_cmp(&a[active[y]]).then(active[x].cmp(&active[y])))
            .expect("active set nonempty");
        active.remove(pos);
    };
    let continuous: Vec<f64> = continuous.into_iter().map(|x| x.max(0.0)).collect();
    let integer = round_allocation(a, &continuous, total, m);
    Ok(WaterfillSolution {
        weights: a.to_vec(),
        continuous,
        water_level: gamma,
        active_set: active,
        integer,
    })
}

/// Floors each share, then hands leftover bits one at a time to the user
/// whose next bit lowers the objective most.
pub fn round_allocation(a: &[f64], continuous: &[f64], total: u32, m: usize) -> BitAllocation {
    let m1 = (m - 1) as f64;
    let mut bits: Vec<u32> = continuous.iter().map(|&x| (x + 1e-9).floor().max(0.0) as u32).collect();
    let mut assigned: u32 = bits.iter().sum();
    while assigned > total {
        // only reachable through the floor tolerance; take from the largest
        let i = (0..bits.len())
            .max_by_key(|&i| (bits[i], std::cmp::Reverse(i)))
            .expect("nonempty");
        bits[i] -= 1;
        assigned -= 1;
    }
    for _ in assigned..total {
        let gain = |i: usize| {
            let b = bits[i] as f64;
            a[i] * ((-b / m1).exp2() - (-(b + 1.0) / m1).exp2())
        };
        let mut best = 0;
        for i in 1..bits.len() {
            if gain(i) > gain(best) {
                best = i;
            }
        }
        bits[best] += 1;
    }
    BitAllocation { bits, total }
}

/// Exhaustive integer minimizer; ties go to the lexicographically smallest
/// allocation.
pub fn brute_force_allocation(a: &[f64], total: u32, m: usize) -> Result<BitAllocation> {
    check_weights(a, m)?;
    if a.len() > 6 || total > 24 {
        return Err(Error::TooLarge(format!(
            "brute force over K = {}, B_T = {total}",
            a.len()
        )));
    }
    let k = a.len();
    let mut cur = vec![0u32; k];
    let mut best = cur.clone();
    let mut best_val = f64::INFINITY;
    fn rec(i: usize, left: u32, cur: &mut Vec<u32>, a: &[f64], m: usize, best: &mut Vec<u32>, best_val: &mut f64) {
        if i + 1 == cur.len() {
            cur[i] = left;
            let v = objective_int(a, cur, m);
            if v < *best_val {
                *best_val = v;
                best.clone_from(cur);
            }
            return;
        }
        for b in 0..=left {
            cur[i] = b;
            rec(i + 1, left - b, cur, a, m, best, best_val);
        }
    }
    rec(0, total, &mut cur, a, m, &mut best, &mut best_val);
    Ok(BitAllocation { bits: best, total })
}

/// Objective value of an integer allocation.
pub fn allocation_objective(a: &[f64], alloc: &BitAllocation, m: usize) -> f64 {
    objective_int(a, &alloc.bits, m)
}

/// Unrounded total budget keeping `Σ a_k 2^{−B_k/(M−1)}` at `2^C`:
/// `K(M−1)log₂P + (M−1)(Σ log₂(a_k/P) − C)`.
pub fn total_bits_for_dof_raw(a: &[f64], c: f64, p: f64, m: usize, k: usize) -> f64 {
    let m1 = (m - 1) as f64;
    let sum_log: f64 = a.iter().map(|&ak| (ak / p).log2()).sum();
    k as f64 * m1 * p.log2() + m1 * (sum_log - c)
}

/// Nearest-integer total budget, clamped at zero.
pub fn total_bits_for_dof(a: &[f64], c: f64, p: f64, m: usize, k: usize) -> u32 {
    total_bits_for_dof_raw(a, c, p, m, k).round().max(0.0) as u32
}

/// Per-user budgets `nint((M−1)(log₂ a_k − C/K))`, each clamped at zero.
pub fn distributed_bits(a: &[f64], c: f64, k: usize, m: usize) -> BitAllocation {
    let m1 = (m - 1) as f64;
    let bits = a
        .iter()
        .map(|&ak| (m1 * (ak.log2() - c / k as f64)).round().max(0.0) as u32)
        .collect();
    BitAllocation::from_bits(bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_split() {
        assert_eq!(BitAllocation::equal(4, 16).bits, vec![4, 4, 4, 4]);
        assert_eq!(BitAllocation::equal(4, 18).bits, vec![5, 5, 4, 4]);
        assert_eq!(BitAllocation::equal(4, 18).sum(), 18);
    }

    #[test]
    fn hand_cases() {
        let s = waterfill(&[1.0; 4], 16, 3).unwrap();
        assert_eq!(s.integer.bits, vec![4, 4, 4, 4]);
        let s = waterfill(&[4.0, 1.0, 1.0, 1.0], 16, 3).unwrap();
        for (x, want) in s.continuous.iter().zip([7.0, 3.0, 3.0, 3.0]) {
            assert!((x - want).abs() < 1e-12);
        }
        assert!((s.water_level - 20.0).abs() < 1e-12);
        assert_eq!(s.integer.bits, vec![7, 3, 3, 3]);
        let big = [2f64.powi(20), 1.0, 1.0, 1.0];
        let s = waterfill(&big, 4, 3).unwrap();
        assert_eq!(s.integer.bits, vec![4, 0, 0, 0]);
        assert_eq!(s.active_set, vec![0]);
        assert_eq!(brute_force_allocation(&big, 4, 3).unwrap().bits, vec![4, 0, 0, 0]);
        assert_eq!(brute_force_allocation(&[1.0; 4], 16, 3).unwrap().bits, vec![4, 4, 4, 4]);
        assert_eq!(brute_force_allocation(&[1.0; 4], 0, 3).unwrap().bits, vec![0; 4]);
        assert_eq!(waterfill(&[3.0, 1.0], 0, 3).unwrap().integer.bits, vec![0, 0]);
    }

    #[test]
    fn brute_force_limits() {
        assert!(brute_force_allocation(&[1.0; 7], 4, 3).is_err());
        assert!(brute_force_allocation(&[1.0; 4], 25, 3).is_err());
        assert!(waterfill(&[1.0, 0.0], 4, 3).is_err());
    }

    #[test]
    fn weights_symmetric_and_exchange() {
        let cfg = NetworkConfig::with_fixed_ratio(4, 1, 3.5, 100.0, 2.0).unwrap();
        let w = weights(&cfg, TopologyKind::Star).unwrap();
        let want = 2.0 * gamma_bar(3) * 100.0 * 2f64.powf(-3.5) * 9.0;
        assert!(w.a.iter().all(|a| (a - want).abs() < 1e-12 * want));
        let w = weights(&cfg, TopologyKind::CsiExchange).unwrap();
        assert!((w.a[2] - want / 2.0).abs() < 1e-12 * want);
        assert!((w.a[0] - want).abs() < 1e-12 * want);
        assert!(weights(&cfg, TopologyKind::FullFeedback).is_err());
    }

    #[test]
    fn dof_budgets() {
        let a = [3.0, 5.0, 7.0, 11.0];
        let r1 = total_bits_for_dof_raw(&a, 2.0, 100.0, 3, 4);
        let a2: Vec<f64> = a.iter().map(|x| x * 2.0).collect();
        let r2 = total_bits_for_dof_raw(&a2, 2.0, 200.0, 3, 4);
        assert!((r2 - r1 - 8.0).abs() < 1e-12);
        // â with Σ log₂ â = C
        let p = 1000.0;
        let ahat = [2f64.sqrt(); 4];
        let a: Vec<f64> = ahat.iter().map(|x| x * p).collect();
        assert!((total_bits_for_dof_raw(&a, 2.0, p, 3, 4) - 8.0 * p.log2()).abs() < 1e-9);
        let thr = [2f64.powf(0.5); 4];
        assert_eq!(distributed_bits(&thr, 2.0, 4, 3).bits, vec![0; 4]);
        assert_eq!(total_bits_for_dof(&[1e-9; 4], 2.0, 1.0, 3, 4), 0);
    }
}
