//! Load algebra, closed-form bottleneck bounds, MSE metrics, and a
//! brute-force oracle for small scheduling instances.
//!
//! The load matrices are generic over the scalar so the uniform-allocation
//! symmetry check can run in exact integer arithmetic (allocation entries of
//! 1 standing for `P*N`, division by `N` deferred to reporting).

use thiserror::Error;

use crate::num::{to_f64, Scalar};
use crate::scheduling::{self, AllocationMatrix, AtomicFlow, LoadState};
use crate::workload::DomainTrafficMatrix;
use crate::{Bytes, Rate, Seconds};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("dimension mismatch: matrix has M={m} domains, allocation has M={pm}, N={pn}")]
    DimensionMismatch { m: usize, pm: usize, pn: usize },
    #[error("empty load vector")]
    EmptyLoads,
    #[error("instance too large: {rails}^{flows} assignments exceed the enumeration budget")]
    InstanceTooLarge { flows: usize, rails: usize },
}

/// Per-(domain, rail) sending and receiving loads under an allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadMatrices<T = Bytes> {
    pub m: usize,
    pub n: usize,
    /// `s[k * n + rail]`: bytes domain `k` sends on `rail`.
    pub s: Vec<T>,
    /// `r[f * n + rail]`: bytes domain `f` receives on `rail`.
    pub r: Vec<T>,
}

fn check_dims<T: Scalar, U: Scalar>(
    d2: &DomainTrafficMatrix<T>,
    p: &AllocationMatrix<U>,
) -> Result<(), AnalysisError> {
    if d2.domains() != p.domains() || p.rails() == 0 {
        return Err(AnalysisError::DimensionMismatch {
            m: d2.domains(),
            pm: p.domains(),
            pn: p.rails(),
        });
    }
    Ok(())
}

/// `S[k, rail] = sum_f d2[k, f] * p[k, f, rail]`.
pub fn sending_load_matrix<T: Scalar>(
    d2: &DomainTrafficMatrix<T>,
    p: &AllocationMatrix<T>,
) -> Result<Vec<T>, AnalysisError> {
    check_dims(d2, p)?;
    let (m, n) = (d2.domains(), p.rails());
    let mut s = vec![T::zero(); m * n];
    for k in 0..m {
        for f in 0..m {
            if k == f {
                continue;
            }
            let v = d2.get(k, f);
            for rail in 0..n {
                s[k * n + rail] += v * p.get(k, f, rail);
            }
        }
    }
    Ok(s)
}

/// `R[f, rail] = sum_k d2[k, f] * p[k, f, rail]`.
pub fn receiving_load_matrix<T: Scalar>(
    d2: &DomainTrafficMatrix<T>,
    p: &AllocationMatrix<T>,
) -> Result<Vec<T>, AnalysisError> {
    check_dims(d2, p)?;
    let (m, n) = (d2.domains(), p.rails());
    let mut r = vec![T::zero(); m * n];
    for k in 0..m {
        for f in 0..m {
            if k == f {
                continue;
            }
            let v = d2.get(k, f);
            for rail in 0..n {
                r[f * n + rail] += v * p.get(k, f, rail);
            }
        }
    }
    Ok(r)
}

pub fn load_matrices<T: Scalar>(
    d2: &DomainTrafficMatrix<T>,
    p: &AllocationMatrix<T>,
) -> Result<LoadMatrices<T>, AnalysisError> {
    Ok(LoadMatrices {
        m: d2.domains(),
        n: p.rails(),
        s: sending_load_matrix(d2, p)?,
        r: receiving_load_matrix(d2, p)?,
    })
}

/// Closed-form optimum of the min-max rail-load problem: the bottleneck is
/// the larger of the worst row sum and worst column sum spread over `N`
/// rails, and the even spread attains it. Returns `(bottleneck bytes,
/// completion seconds at inter-domain rate r2)`.
pub fn lp_lower_bound(d2: &DomainTrafficMatrix<Bytes>, n: usize, r2: Rate) -> (f64, Seconds) {
    assert!(n >= 1 && r2 > 0.0);
    let m = d2.domains();
    let mut worst: Bytes = 0;
    for k in 0..m {
        worst = worst.max(d2.row_sum(k)).max(d2.col_sum(k));
    }
    let bottleneck = worst as f64 / n as f64;
    (bottleneck, bottleneck / r2)
}

/// Mean squared error of `loads` against a uniform target.
pub fn mse_scalar<T: Scalar>(loads: &[T], target: f64) -> Result<f64, AnalysisError> {
    if loads.is_empty() {
        return Err(AnalysisError::EmptyLoads);
    }
    Ok(loads
        .iter()
        .map(|&l| (to_f64(l) - target).powi(2))
        .sum::<f64>()
        / loads.len() as f64)
}

/// Mean squared error against per-entry targets.
pub fn mse<T: Scalar>(loads: &[T], targets: &[f64]) -> Result<f64, AnalysisError> {
    if loads.is_empty() || loads.len() != targets.len() {
        return Err(AnalysisError::EmptyLoads);
    }
    Ok(loads
        .iter()
        .zip(targets)
        .map(|(&l, &t)| (to_f64(l) - t).powi(2))
        .sum::<f64>()
        / loads.len() as f64)
}

/// Scale-free imbalance on a 0-1 scale: loads are normalized to fractions
/// of their total and compared against the even split `1/N`. All-zero loads
/// count as perfectly balanced.
pub fn normalized_mse<T: Scalar>(loads: &[T]) -> f64 {
    if loads.is_empty() {
        return 0.0;
    }
    let total: f64 = loads.iter().map(|&l| to_f64(l)).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let n = loads.len() as f64;
    loads
        .iter()
        .map(|&l| (to_f64(l) / total - 1.0 / n).powi(2))
        .sum::<f64>()
        / n
}

/// Exhaustive minimum over all rail assignments; reports the best makespan
/// and the best MSE independently, plus one makespan-optimal assignment
/// (rail index per flow, in input order).
pub fn brute_force_optimal(
    flows: &[AtomicFlow],
    rails: usize,
) -> Result<(Bytes, f64, Vec<usize>), AnalysisError> {
    assert!(rails >= 1);
    let f = flows.len();
    let combos = (rails as f64).powi(f as i32);
    if combos > 1e7 {
        return Err(AnalysisError::InstanceTooLarge { flows: f, rails });
    }
    if f == 0 {
        return Ok((0, 0.0, Vec::new()));
    }
    let total: Bytes = flows.iter().map(|x| x.bytes).sum();
    let mean = total as f64 / rails as f64;

    let mut best_makespan = Bytes::MAX;
    let mut best_mse = f64::INFINITY;
    let mut best_assign = vec![0usize; f];
    let mut assign = vec![0usize; f];
    let mut loads = vec![0 as Bytes; rails];
    loads[0] = total; // all flows start on rail 0
    loop {
        let makespan = loads.iter().copied().max().unwrap();
        if makespan < best_makespan {
            best_makespan = makespan;
            best_assign.copy_from_slice(&assign);
        }
        let m = loads
            .iter()
            .map(|&l| (l as f64 - mean).powi(2))
            .sum::<f64>()
            / rails as f64;
        if m < best_mse {
            best_mse = m;
        }
        // odometer increment over rails^f
        let mut i = 0;
        while i < f {
            loads[assign[i]] -= flows[i].bytes;
            assign[i] += 1;
            if assign[i] < rails {
                loads[assign[i]] += flows[i].bytes;
                break;
            }
            assign[i] = 0;
            loads[0] += flows[i].bytes;
            i += 1;
        }
        if i == f {
            break;
        }
    }
    Ok((best_makespan, best_mse, best_assign))
}

/// Result of checking the greedy scheduler against its analytic guarantees.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub loads: LoadState,
    pub achieved_mse: f64,
    pub w_max: Bytes,
    pub mean_load: f64,
    pub bound_satisfied: bool,
}

/// Runs the greedy scheduler and verifies both guarantees: the per-rail MSE
/// against the mean load stays below `w_max^2`, and the max-min load spread
/// stays below `w_max`.
pub fn lpt_bound_check(flows: &[AtomicFlow], rails: usize) -> BoundReport {
    let (_, state) = scheduling::lpt_schedule(flows, rails);
    let w_max = flows.iter().map(|f| f.bytes).max().unwrap_or(0);
    let mean = state.total() as f64 / rails as f64;
    let achieved = state.mse();
    let spread_ok = state.max() - state.min() <= w_max;
    let mse_ok = achieved <= (w_max as f64).powi(2) * (1.0 + 1e-12);
    BoundReport {
        loads: state,
        achieved_mse: achieved,
        w_max,
        mean_load: mean,
        bound_satisfied: spread_ok && mse_ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scheduling::uniform_allocation_times_n;
    use crate::topology::GpuId;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn flow(id: u64, bytes: Bytes) -> AtomicFlow {
        AtomicFlow {
            id,
            src: GpuId::new(0, 0),
            dst: GpuId::new(1, 0),
            bytes,
        }
    }

    fn random_d2(rng: &mut ChaCha8Rng, m: usize) -> DomainTrafficMatrix<Bytes> {
        let mut d2 = DomainTrafficMatrix::zeros(m);
        for k in 0..m {
            for f in 0..m {
                if k != f {
                    d2.set(k, f, rng.gen_range(0..1_000_000));
                }
            }
        }
        d2
    }

    #[test]
    fn sending_loads_uniform_and_concentrated() {
        let d2 = DomainTrafficMatrix::from_entries(2, vec![0, 12, 4, 0]);
        // integer route: entries of 1 stand for N*P, so S*N = rowsum on each rail
        let s = sending_load_matrix(&d2, &uniform_allocation_times_n(2, 2)).unwrap();
        assert_eq!(s, [12, 12, 4, 4]);

        let mut conc = AllocationMatrix::<u64>::zeros(2, 2);
        conc.set(0, 1, 0, 1);
        conc.set(1, 0, 0, 1);
        let s = sending_load_matrix(&d2, &conc).unwrap();
        assert_eq!(s, [12, 0, 4, 0]);

        let zero = DomainTrafficMatrix::zeros(2);
        let s = sending_load_matrix(&zero, &uniform_allocation_times_n(2, 2)).unwrap();
        assert!(s.iter().all(|&x| x == 0u64));
    }

    #[test]
    fn receiving_loads_examples() {
        let mut d2 = DomainTrafficMatrix::zeros(3);
        d2.set(1, 2, 10);
        let mut p = AllocationMatrix::<u64>::zeros(3, 2);
        p.set(1, 2, 0, 1);
        let r = receiving_load_matrix(&d2, &p).unwrap();
        assert_eq!(r[2 * 2], 10);
        assert_eq!(r[2 * 2 + 1], 0);
    }

    #[test]
    fn conservation_rows_and_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d2 = random_d2(&mut rng, 5);
        let n = 4;
        let lm = load_matrices(&d2, &uniform_allocation_times_n(5, n)).unwrap();
        for k in 0..5 {
            let s_sum: u64 = (0..n).map(|j| lm.s[k * n + j]).sum();
            assert_eq!(s_sum, d2.row_sum(k) * n as u64);
            let r_sum: u64 = (0..n).map(|j| lm.r[k * n + j]).sum();
            assert_eq!(r_sum, d2.col_sum(k) * n as u64);
        }
    }

    #[test]
    fn uniform_symmetry_exact() {
        // send-uniform implies receive-uniform: with the even allocation all
        // rails of a domain carry identical loads, exactly
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let m = rng.gen_range(2..=16);
            let n = rng.gen_range(1..=16);
            let d2 = random_d2(&mut rng, m);
            let lm = load_matrices(&d2, &uniform_allocation_times_n(m, n)).unwrap();
            for k in 0..m {
                for j in 0..n {
                    assert_eq!(lm.s[k * n + j], d2.row_sum(k));
                    assert_eq!(lm.r[k * n + j], d2.col_sum(k));
                }
            }
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let d2 = DomainTrafficMatrix::<u64>::zeros(3);
        let p = uniform_allocation_times_n(2, 2);
        assert!(matches!(
            sending_load_matrix(&d2, &p),
            Err(AnalysisError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn lower_bound_closed_form() {
        let d2 = DomainTrafficMatrix::from_entries(2, vec![0, 12, 4, 0]);
        let (bottleneck, t) = lp_lower_bound(&d2, 2, 1.0);
        assert_eq!(bottleneck, 6.0);
        assert_eq!(t, 6.0);

        let d2 = DomainTrafficMatrix::from_entries(2, vec![0, 10, 10, 0]);
        let (_, t) = lp_lower_bound(&d2, 2, 1.0);
        assert_eq!(t, 5.0);
    }

    #[test]
    fn lower_bound_dominates_every_allocation() {
        // no feasible allocation gets below the closed form
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let m = rng.gen_range(2..=4);
            let n = rng.gen_range(1..=4);
            let d2 = random_d2(&mut rng, m);
            let (bottleneck, _) = lp_lower_bound(&d2, n, 1.0);
            // random allocation on the simplex
            let mut p = AllocationMatrix::<f64>::zeros(m, n);
            for k in 0..m {
                for f in 0..m {
                    if k == f {
                        continue;
                    }
                    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
                    let sum: f64 = raw.iter().sum();
                    for (j, v) in raw.iter().enumerate() {
                        p.set(k, f, j, v / sum);
                    }
                }
            }
            let d2f = {
                let mut x = DomainTrafficMatrix::<f64>::zeros(m);
                for k in 0..m {
                    for f in 0..m {
                        x.set(k, f, d2.get(k, f) as f64);
                    }
                }
                x
            };
            let s = sending_load_matrix(&d2f, &p).unwrap();
            let r = receiving_load_matrix(&d2f, &p).unwrap();
            let worst = s
                .iter()
                .chain(&r)
                .fold(0.0f64, |acc, &v| acc.max(v));
            assert!(worst >= bottleneck - 1e-6);
        }
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_scalar(&[8.0f64, 9.0], 8.5).unwrap(), 0.25);
        assert_eq!(mse_scalar(&[3.0f64, 3.0, 3.0], 3.0).unwrap(), 0.0);
        assert_eq!(mse_scalar(&[7.0f64], 0.0).unwrap(), 49.0);
        assert!(mse_scalar::<f64>(&[], 0.0).is_err());
        assert_eq!(mse(&[1.0f64, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn mse_translation_covariant() {
        let loads = [3.0f64, 9.0, 1.0, 4.0];
        let shifted: Vec<f64> = loads.iter().map(|x| x + 17.5).collect();
        let a = mse_scalar(&loads, 4.0).unwrap();
        let b = mse_scalar(&shifted, 4.0 + 17.5).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn normalized_mse_examples() {
        assert_eq!(normalized_mse(&[1u64, 1, 1, 1]), 0.0);
        assert_eq!(normalized_mse(&[1u64, 0]), 0.25);
        assert_eq!(normalized_mse(&[0u64, 0]), 0.0);
        // monotone in jitter magnitude
        let small = normalized_mse(&[100u64, 101, 99, 100]);
        let big = normalized_mse(&[100u64, 110, 90, 100]);
        assert!(small < big && small > 0.0);
    }

    #[test]
    fn brute_force_examples() {
        let flows: Vec<AtomicFlow> = [5u64, 4, 3, 3, 2]
            .iter()
            .enumerate()
            .map(|(i, &w)| flow(i as u64, w))
            .collect();
        let (makespan, _, assign) = brute_force_optimal(&flows, 2).unwrap();
        assert_eq!(makespan, 9);
        let mut loads = [0u64; 2];
        for (f, &r) in flows.iter().zip(&assign) {
            loads[r] += f.bytes;
        }
        assert_eq!(*loads.iter().max().unwrap(), 9);

        let (makespan, _, _) = brute_force_optimal(&[flow(0, 42)], 3).unwrap();
        assert_eq!(makespan, 42);

        let equal: Vec<AtomicFlow> = (0..6).map(|i| flow(i, 5)).collect();
        let (makespan, mse_opt, _) = brute_force_optimal(&equal, 3).unwrap();
        assert_eq!(makespan, 10);
        assert_eq!(mse_opt, 0.0);

        let many: Vec<AtomicFlow> = (0..30).map(|i| flow(i, 1)).collect();
        assert!(matches!(
            brute_force_optimal(&many, 3),
            Err(AnalysisError::InstanceTooLarge { .. })
        ));
    }

    #[test]
    fn lpt_within_ratio_of_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let n = rng.gen_range(2..=3usize);
            let f = rng.gen_range(1..=9usize);
            let flows: Vec<AtomicFlow> =
                (0..f).map(|i| flow(i as u64, rng.gen_range(1..100))).collect();
            let (opt, _, _) = brute_force_optimal(&flows, n).unwrap();
            let report = lpt_bound_check(&flows, n);
            let achieved = report.loads.max();
            assert!(achieved >= opt);
            let ratio = 4.0 / 3.0 - 1.0 / (3.0 * n as f64);
            assert!((achieved as f64) <= ratio * opt as f64 + 1e-9);
            assert!(report.bound_satisfied);
        }
    }

    #[test]
    fn bound_check_random_campaign() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=8usize);
            let f = rng.gen_range(0..=40usize);
            let flows: Vec<AtomicFlow> = (0..f)
                .map(|i| flow(i as u64, rng.gen_range(1..100_000)))
                .collect();
            assert!(lpt_bound_check(&flows, n).bound_satisfied);
        }
    }
}
