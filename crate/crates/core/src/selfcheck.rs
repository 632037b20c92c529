//! Built-in Shapley axiom suite run by `adage selfcheck`.
//!
//! Every check compares the engine against facts that hold for any correct
//! Shapley implementation: efficiency, symmetry, dummy, and agreement with
//! the permutation definition on small group counts.

use std::collections::HashMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{Background, ConvBackend, ConvParams, LinearBackend, LinearParams, PredictionBackend};
use crate::groups::{ChannelGroup, ChannelGroupSet};
use crate::raster::TensorChw;
use crate::shapley::{explain_with_fault, impute, shapley_weight, ClassSelection, Coalition, WeightFault};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SelfcheckOptions {
    /// Corrupt the engine's weights to prove the checks can fail.
    pub fault: Option<WeightFault>,
    pub seed: u64,
}

const CHANNELS: usize = 6;
const SIDE: usize = 64;

fn groups_k(k: usize) -> ChannelGroupSet {
    // 6 channels split into k contiguous groups
    let bounds: &[usize] = match k {
        1 => &[0, 6],
        2 => &[0, 3, 6],
        3 => &[0, 2, 5, 6],
        _ => &[0, 2, 3, 5, 6],
    };
    let groups = bounds
        .windows(2)
        .enumerate()
        .map(|(i, w)| ChannelGroup::new(format!("g{i}"), w[0]..w[1]))
        .collect();
    ChannelGroupSet::new(CHANNELS, groups).expect("valid partition")
}

fn random_tensor(rng: &mut ChaCha8Rng, c: usize, side: usize) -> TensorChw {
    let data = (0..c * side * side).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    TensorChw::new(c, side, side, data).expect("finite")
}

fn random_linear(rng: &mut ChaCha8Rng, n_class: usize) -> LinearParams {
    LinearParams {
        weights: (0..n_class)
            .map(|_| (0..CHANNELS).map(|_| rng.gen_range(-2.0f32..2.0)).collect())
            .collect(),
        bias: (0..n_class).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
    }
}

fn random_conv(rng: &mut ChaCha8Rng, n_class: usize) -> ConvParams {
    let mut kernel = || {
        let mut k = [[0.0f32; 3]; 3];
        for row in &mut k {
            for v in row {
                *v = rng.gen_range(-1.0f32..1.0);
            }
        }
        k
    };
    ConvParams {
        kernels: (0..n_class)
            .map(|_| (0..CHANNELS).map(|_| kernel()).collect())
            .collect(),
        bias: vec![0.25; n_class],
    }
}

fn random_background(rng: &mut ChaCha8Rng) -> Background {
    Background::user_supplied((0..CHANNELS).map(|_| rng.gen_range(-0.5f32..0.5)).collect()).expect("finite")
}

/// Permutation definition: the average over all `K!` group orderings of the
/// marginal contribution of each group when it joins.
fn permutation_oracle(
    backend: &mut dyn PredictionBackend,
    x: &TensorChw,
    groups: &ChannelGroupSet,
    bg: &Background,
) -> Vec<f64> {
    let k = groups.len();
    let n = backend.n_class() * x.pixels();
    let mut cache: HashMap<u32, Vec<f64>> = HashMap::new();
    let mut value = |s: Coalition| -> Vec<f64> {
        cache
            .entry(s.0)
            .or_insert_with(|| {
                let z = impute(x, s, groups, bg).expect("consistent dims");
                backend.predict_wide(&z).expect("builtin backend")
            })
            .clone()
    };
    let mut phi = vec![0.0; k * n];
    let mut order: Vec<usize> = (0..k).collect();
    let mut count = 0u64;
    loop {
        let mut s = Coalition::EMPTY;
        let mut before = value(s);
        for &g in &order {
            s = s.with(g);
            let after = value(s);
            for (i, (a, b)) in after.iter().zip(&before).enumerate() {
                phi[g * n + i] += a - b;
            }
            before = after;
        }
        count += 1;
        if !next_permutation(&mut order) {
            break;
        }
    }
    phi.iter().map(|v| v / count as f64).collect()
}

fn next_permutation(v: &mut [usize]) -> bool {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else {
        return false;
    };
    let j = (i..v.len()).rev().find(|&j| v[j] > v[i - 1]).expect("pivot exists");
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Engine values laid out like the oracle: `[group][class][pixel]`.
fn engine_values(a: &crate::shapley::AttributionMap) -> Vec<f64> {
    let mut out = Vec::new();
    for g in 0..a.groups() {
        for slot in 0..a.classes().len() {
            out.extend_from_slice(a.plane(g, slot));
        }
    }
    out
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

pub fn run_selfcheck(opts: &SelfcheckOptions) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let fault = opts.fault;
    let mut results = Vec::new();

    let mut total = 0.0f64;
    for k in 1..=crate::shapley::MAX_GROUPS.min(10) {
        let sum: f64 = (0..k)
            .map(|s| {
                let ways = (0..s).fold(1.0, |acc, i| acc * (k - 1 - i) as f64 / (i + 1) as f64);
                shapley_weight(s, k).expect("valid size") * ways
            })
            .sum();
        total = total.max((sum - 1.0).abs());
    }
    results.push(check(
        "weight normalization",
        total < 1e-12,
        format!("max |sum_S w(|S|) - 1| = {total:.2e} for K <= 10"),
    ));

    // efficiency on 64x64 inputs, every K from 1 to 4, both backend kinds
    let mut worst = 0.0f64;
    for k in 1..=4 {
        let g = groups_k(k);
        let x = random_tensor(&mut rng, CHANNELS, SIDE);
        let bg = random_background(&mut rng);
        let mut lin = LinearBackend::new(&random_linear(&mut rng, 2)).expect("valid");
        let mut conv = ConvBackend::new(&random_conv(&mut rng, 2)).expect("valid");
        for b in [&mut lin as &mut dyn PredictionBackend, &mut conv] {
            let a = explain_with_fault(b, &x, &g, &bg, &ClassSelection::All, fault).expect("explain");
            worst = worst.max(a.max_efficiency_residual());
        }
    }
    results.push(check(
        "efficiency",
        worst < 1e-6,
        format!("max relative residual {worst:.2e} (limit 1e-6), 64x64, K=1..4"),
    ));

    // symmetry: channels 2 and 3 are copies with equal weights, each its own group
    let sym_groups = ChannelGroupSet::new(
        CHANNELS,
        vec![
            ChannelGroup::new("a", [0, 1]),
            ChannelGroup::new("twin1", [2]),
            ChannelGroup::new("twin2", [3]),
            ChannelGroup::new("b", [4, 5]),
        ],
    )
    .expect("valid partition");
    let mut x = random_tensor(&mut rng, CHANNELS, SIDE);
    let copy = x.channel(2).to_vec();
    x.channel_mut(3).copy_from_slice(&copy);
    let mut p = random_linear(&mut rng, 2);
    for row in &mut p.weights {
        row[3] = row[2];
    }
    let mut bgv = vec![0.1f32; CHANNELS];
    bgv[3] = bgv[2];
    let bg = Background::user_supplied(bgv).expect("finite");
    let a = explain_with_fault(
        &mut LinearBackend::new(&p).expect("valid"),
        &x,
        &sym_groups,
        &bg,
        &ClassSelection::All,
        fault,
    )
    .expect("explain");
    let sym = (0..2)
        .map(|slot| max_abs_diff(a.plane(1, slot), a.plane(2, slot)))
        .fold(0.0, f64::max);
    results.push(check(
        "symmetry",
        sym < 1e-9,
        format!("max |phi_twin1 - phi_twin2| = {sym:.2e} (limit 1e-9)"),
    ));

    // dummy: the conv model ignores group b entirely
    let mut cp = random_conv(&mut rng, 2);
    for class in &mut cp.kernels {
        class[4] = [[0.0; 3]; 3];
        class[5] = [[0.0; 3]; 3];
    }
    let x = random_tensor(&mut rng, CHANNELS, SIDE);
    let bg = random_background(&mut rng);
    let a = explain_with_fault(
        &mut ConvBackend::new(&cp).expect("valid"),
        &x,
        &sym_groups,
        &bg,
        &ClassSelection::All,
        fault,
    )
    .expect("explain");
    let dummy = (0..2)
        .flat_map(|slot| a.plane(3, slot).iter().map(|v| v.abs()))
        .fold(0.0, f64::max);
    results.push(check(
        "dummy",
        dummy < 1e-9,
        format!("max |phi_ignored| = {dummy:.2e} (limit 1e-9)"),
    ));

    // permutation oracle on 8x8 inputs
    let mut worst = 0.0f64;
    for k in 2..=4 {
        let g = groups_k(k);
        let x = random_tensor(&mut rng, CHANNELS, 8);
        let bg = random_background(&mut rng);
        let mut lin = LinearBackend::new(&random_linear(&mut rng, 2)).expect("valid");
        let mut conv = ConvBackend::new(&random_conv(&mut rng, 2)).expect("valid");
        for b in [&mut lin as &mut dyn PredictionBackend, &mut conv] {
            let a = explain_with_fault(b, &x, &g, &bg, &ClassSelection::All, fault).expect("explain");
            let oracle = permutation_oracle(b, &x, &g, &bg);
            worst = worst.max(max_abs_diff(&engine_values(&a), &oracle));
        }
    }
    results.push(check(
        "permutation oracle",
        worst < 1e-9,
        format!("max |phi - phi_perm| = {worst:.2e} (limit 1e-9), 8x8, K=2..4"),
    ));

    results
}

/// Runs the suite and reports the elapsed wall time in seconds.
pub fn run_timed(opts: &SelfcheckOptions) -> (Vec<CheckResult>, f64) {
    let start = Instant::now();
    let r = run_selfcheck(opts);
    (r, start.elapsed().as_secs_f64())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pristine_engine_passes() {
        let r = run_selfcheck(&SelfcheckOptions::default());
        assert!(r.iter().all(|c| c.passed), "{r:#?}");
    }

    #[test]
    fn corrupted_weight_fails_efficiency() {
        let r = run_selfcheck(&SelfcheckOptions {
            fault: Some(WeightFault { size: 1, factor: 1.01 }),
            seed: 0,
        });
        let eff = r.iter().find(|c| c.name == "efficiency").unwrap();
        assert!(!eff.passed, "{eff}");
    }

    #[test]
    fn permutations_enumerated() {
        let mut v = vec![0, 1, 2];
        let mut n = 1;
        while next_permutation(&mut v) {
            n += 1;
        }
        assert_eq!(n, 6);
        assert_eq!(v, vec![2, 1, 0]);
    }
}
