//! Exhaustive split solver. Enumerates every (example, test) selection and
//! applies the phase ordering exactly: maximize coverage, then minimize the
//! frequency-weighted example surplus, then maximize the rarity-weighted
//! test boxes. Intended as a desk-scale correctness oracle; it deliberately
//! recomputes all tallies from raw counts instead of reusing the heuristic
//! solver's incremental state.

use crate::error::{Error, Result};

use super::{Role, SplitConstraints, SplitInstance};

#[derive(Debug, Clone)]
pub struct ExactOptimum {
    pub coverage: u64,
    pub surplus_scaled: u64,
    pub reward: f64,
    pub roles: Vec<Role>,
}

const MAX_STATES: u128 = 20_000_000;

fn n_choose(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i + 1) as u128;
    }
    acc
}

fn for_each_combination(pool: &[usize], k: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(
        pool: &[usize],
        k: usize,
        start: usize,
        picked: &mut Vec<usize>,
        f: &mut impl FnMut(&[usize]),
    ) {
        if picked.len() == k {
            f(picked);
            return;
        }
        let remaining = k - picked.len();
        for i in start..=pool.len().saturating_sub(remaining) {
            picked.push(pool[i]);
            rec(pool, k, i + 1, picked, f);
            picked.pop();
        }
    }
    let mut picked = Vec::with_capacity(k);
    rec(pool, k, 0, &mut picked, f);
}

/// Enumerate all feasible splits and return the lexicographic optimum, or
/// `None` when no selection satisfies the constraints.
pub fn solve_exact(
    inst: &SplitInstance,
    cons: &SplitConstraints,
) -> Result<Option<ExactOptimum>> {
    cons.validate(inst)?;
    let n = inst.images.len();
    let states =
        n_choose(n, cons.n_exp).saturating_mul(n_choose(n - cons.n_exp, cons.n_test));
    if states > MAX_STATES {
        return Err(Error::Validation(format!(
            "{states} candidate splits exceed the exhaustive solver budget of {MAX_STATES}"
        )));
    }

    let n_classes = inst.classes.len();
    let mut class_tot = vec![0u64; n_classes];
    for img in &inst.images {
        for (c, cnt) in img.counts.iter().enumerate() {
            class_tot[c] += cnt;
        }
    }

    let all: Vec<usize> = (0..n).collect();
    let mut best: Option<ExactOptimum> = None;

    for_each_combination(&all, cons.n_exp, &mut |ex| {
        let mut in_ex = vec![false; n];
        for &i in ex {
            in_ex[i] = true;
        }
        let rest: Vec<usize> = (0..n).filter(|i| !in_ex[*i]).collect();

        let mut ex_counts = vec![0u64; n_classes];
        let mut coverage = 0u64;
        for &i in ex {
            for (c, cnt) in inst.images[i].counts.iter().enumerate() {
                ex_counts[c] += cnt;
                if *cnt > 0 {
                    coverage += 1;
                }
            }
        }
        if ex_counts.iter().any(|&c| c < cons.m_exp) {
            // no test completion can repair an example-side deficit
            return;
        }
        let surplus: u64 = (0..n_classes)
            .map(|c| class_tot[c] * (ex_counts[c] - cons.m_exp))
            .sum();

        for_each_combination(&rest, cons.n_test, &mut |te| {
            let mut te_counts = vec![0u64; n_classes];
            for &i in te {
                for (c, cnt) in inst.images[i].counts.iter().enumerate() {
                    te_counts[c] += cnt;
                }
            }
            if te_counts.iter().any(|&c| c < cons.m_test) {
                return;
            }
            let reward: f64 = (0..n_classes)
                .map(|c| te_counts[c] as f64 / class_tot[c] as f64)
                .sum();
            let better = match &best {
                None => true,
                Some(b) => {
                    (coverage, std::cmp::Reverse(surplus))
                        > (b.coverage, std::cmp::Reverse(b.surplus_scaled))
                        || (coverage == b.coverage
                            && surplus == b.surplus_scaled
                            && reward > b.reward)
                }
            };
            if better {
                let mut roles = vec![Role::Unused; n];
                for &i in ex {
                    roles[i] = Role::Example;
                }
                for &i in te {
                    roles[i] = Role::Test;
                }
                best = Some(ExactOptimum {
                    coverage,
                    surplus_scaled: surplus,
                    reward,
                    roles,
                });
            }
        });
    });

    Ok(best)
}
