//! Sample-splitting plans.
//!
//! A plan lists, per group, the indices the estimate is averaged over
//! (`eval_idx`), the indices `γ̂` is trained on (`gamma_idx`) and, for doubly
//! cross-fit plans, the indices `α̃` is trained on (`alpha_idx`). Indices are
//! 0-based.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    /// Single group using every observation for both roles (no splitting).
    NoSplit,
    /// `γ̂_ℓ` trained on the complement of the evaluation fold.
    Plugin,
    /// Like `Plugin`, with `α̃_ℓ` trained on the same indices as `γ̂_ℓ`.
    SingleCfDr,
    /// Evaluation, `γ̂` and `α̃` sets mutually disjoint.
    Dcdr,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSplit {
    pub eval_idx: Vec<usize>,
    pub gamma_idx: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_idx: Option<Vec<usize>>,
}

impl GroupSplit {
    /// Training indices for `α̃`; falls back to the `γ̂` set.
    pub fn alpha_train(&self) -> &[usize] {
        self.alpha_idx.as_deref().unwrap_or(&self.gamma_idx)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub n: usize,
    pub kind: PlanKind,
    pub groups: Vec<GroupSplit>,
    /// Externally supplied; coverage is not required.
    #[serde(default)]
    pub custom: bool,
}

impl SplitPlan {
    /// Accepts an explicit plan. Only index bounds and role presence are
    /// checked; use [`validate_plan`] for the structural diagnostics.
    pub fn custom(n: usize, kind: PlanKind, groups: Vec<GroupSplit>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::InvalidPlan("plan has no groups".into()));
        }
        for (g, grp) in groups.iter().enumerate() {
            if grp.eval_idx.is_empty() {
                return Err(Error::InvalidPlan(format!("group {g} has an empty evaluation set")));
            }
            if grp.gamma_idx.is_empty() {
                return Err(Error::InvalidPlan(format!("group {g} has an empty gamma training set")));
            }
            if kind == PlanKind::Dcdr && grp.alpha_idx.as_ref().map_or(true, |a| a.is_empty()) {
                return Err(Error::InvalidPlan(format!("group {g} of a dcdr plan needs alpha indices")));
            }
            let all = grp
                .eval_idx
                .iter()
                .chain(&grp.gamma_idx)
                .chain(grp.alpha_idx.iter().flatten());
            if let Some(&bad) = all.clone().find(|&&i| i >= n) {
                return Err(Error::InvalidPlan(format!("group {g} references index {bad} >= n = {n}")));
            }
        }
        Ok(SplitPlan {
            n,
            kind,
            groups,
            custom: true,
        })
    }

    /// One group; every observation is evaluated and used for training.
    pub fn no_split(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidPlan("n must be positive".into()));
        }
        let all: Vec<usize> = (0..n).collect();
        Ok(SplitPlan {
            n,
            kind: PlanKind::NoSplit,
            groups: vec![GroupSplit {
                eval_idx: all.clone(),
                gamma_idx: all,
                alpha_idx: None,
            }],
            custom: false,
        })
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Total number of evaluated observations, the estimator's denominator.
    pub fn n_eval(&self) -> usize {
        self.groups.iter().map(|g| g.eval_idx.len()).sum()
    }
}

fn shuffled(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    order
}

/// Contiguous near-equal folds of `order`; the first `n % l` folds get one
/// extra element.
fn folds(order: &[usize], l: usize) -> Vec<Vec<usize>> {
    let n = order.len();
    let (base, extra) = (n / l, n % l);
    let mut out = Vec::with_capacity(l);
    let mut start = 0;
    for f in 0..l {
        let len = base + usize::from(f < extra);
        out.push(order[start..start + len].to_vec());
        start += len;
    }
    out
}

fn check_folds(n: usize, l: usize, min_l: usize) -> Result<()> {
    if l < min_l {
        return Err(Error::InvalidPlan(format!("need at least {min_l} folds, got {l}")));
    }
    if l > n {
        return Err(Error::InvalidPlan(format!("{l} folds exceed n = {n}")));
    }
    Ok(())
}

fn complement_plan(order: &[usize], l: usize, kind: PlanKind) -> Result<SplitPlan> {
    let n = order.len();
    check_folds(n, l, 2)?;
    let fs = folds(order, l);
    let groups = (0..l)
        .map(|g| {
            let mut gamma: Vec<usize> = (0..l).filter(|&f| f != g).flat_map(|f| fs[f].iter().copied()).collect();
            gamma.sort_unstable();
            let mut eval = fs[g].clone();
            eval.sort_unstable();
            GroupSplit {
                eval_idx: eval,
                alpha_idx: (kind == PlanKind::SingleCfDr).then(|| gamma.clone()),
                gamma_idx: gamma,
            }
        })
        .collect();
    Ok(SplitPlan {
        n,
        kind,
        groups,
        custom: false,
    })
}

/// Plug-in plan from a given observation order.
pub fn make_plugin_plan_from_order(order: &[usize], l: usize) -> Result<SplitPlan> {
    complement_plan(order, l, PlanKind::Plugin)
}

/// Seeded `L`-fold plug-in plan: evaluation fold plus its complement.
pub fn make_plugin_plan(n: usize, l: usize, seed: u64) -> Result<SplitPlan> {
    check_folds(n, l, 2)?;
    make_plugin_plan_from_order(&shuffled(n, seed), l)
}

/// Seeded single cross-fit plan: `α̃` shares the `γ̂` training set.
pub fn make_single_cf_dr_plan(n: usize, l: usize, seed: u64) -> Result<SplitPlan> {
    check_folds(n, l, 2)?;
    complement_plan(&shuffled(n, seed), l, PlanKind::SingleCfDr)
}

/// Doubly cross-fit plan from a given observation order.
///
/// Group `g` evaluates fold `g`; the remaining folds, taken cyclically from
/// `g + 1`, are split into a leading run for `γ̂` (`⌈(L-1)/2⌉` folds) and a
/// trailing run for `α̃`.
pub fn make_dcdr_plan_from_order(order: &[usize], l: usize) -> Result<SplitPlan> {
    let n = order.len();
    check_folds(n, l, 3)?;
    let fs = folds(order, l);
    let n_gamma = l / 2;
    let groups = (0..l)
        .map(|g| {
            let rest: Vec<usize> = (1..l).map(|s| (g + s) % l).collect();
            let collect = |fold_ids: &[usize]| {
                let mut v: Vec<usize> = fold_ids.iter().flat_map(|&f| fs[f].iter().copied()).collect();
                v.sort_unstable();
                v
            };
            let mut eval = fs[g].clone();
            eval.sort_unstable();
            GroupSplit {
                eval_idx: eval,
                gamma_idx: collect(&rest[..n_gamma]),
                alpha_idx: Some(collect(&rest[n_gamma..])),
            }
        })
        .collect();
    Ok(SplitPlan {
        n,
        kind: PlanKind::Dcdr,
        groups,
        custom: false,
    })
}

/// Seeded doubly cross-fit plan with `L ≥ 3` folds.
pub fn make_dcdr_plan(n: usize, l: usize, seed: u64) -> Result<SplitPlan> {
    check_folds(n, l, 3)?;
    make_dcdr_plan_from_order(&shuffled(n, seed), l)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanDiagnostics {
    /// Evaluation sets pairwise disjoint and each role set disjoint from the
    /// others in its group as required by the plan kind.
    pub disjoint: bool,
    /// Evaluation sets cover `0..n` (and, per group, the roles cover `0..n`).
    pub coverage: bool,
    /// Every role set has at least `size_floor` members.
    pub size_bounds: bool,
    pub min_role_size: usize,
    pub size_floor: usize,
}

fn disjoint_sets(a: &[usize], b: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n];
    a.iter().for_each(|&i| seen[i] = true);
    b.iter().all(|&i| !seen[i])
}

/// Structural report on a plan; never fails.
pub fn validate_plan(plan: &SplitPlan) -> PlanDiagnostics {
    let n = plan.n;
    let l = plan.groups.len().max(1);
    let size_floor = n / (2 * l).max(2);
    let in_range = |v: &[usize]| v.iter().all(|&i| i < n);

    let mut disjoint = plan.groups.iter().all(|g| {
        in_range(&g.eval_idx) && in_range(&g.gamma_idx) && g.alpha_idx.as_deref().map_or(true, in_range)
    });
    let mut counts = vec![0usize; n];
    let mut coverage = disjoint;
    let mut min_role_size = usize::MAX;

    if disjoint {
        for g in &plan.groups {
            for &i in &g.eval_idx {
                counts[i] += 1;
            }
            let mut sizes = vec![g.eval_idx.len(), g.gamma_idx.len()];
            match plan.kind {
                PlanKind::NoSplit => {}
                PlanKind::Plugin => {
                    disjoint &= disjoint_sets(&g.eval_idx, &g.gamma_idx, n);
                    coverage &= g.eval_idx.len() + g.gamma_idx.len() == n;
                }
                PlanKind::SingleCfDr => {
                    disjoint &= disjoint_sets(&g.eval_idx, &g.gamma_idx, n);
                    disjoint &= g.alpha_idx.as_ref().map_or(true, |a| a == &g.gamma_idx);
                    coverage &= g.eval_idx.len() + g.gamma_idx.len() == n;
                }
                PlanKind::Dcdr => {
                    let alpha = g.alpha_idx.as_deref().unwrap_or(&[]);
                    disjoint &= disjoint_sets(&g.eval_idx, &g.gamma_idx, n)
                        && disjoint_sets(&g.eval_idx, alpha, n)
                        && disjoint_sets(&g.gamma_idx, alpha, n);
                    coverage &= g.eval_idx.len() + g.gamma_idx.len() + alpha.len() == n;
                    sizes.push(alpha.len());
                }
            }
            min_role_size = min_role_size.min(sizes.into_iter().min().unwrap_or(0));
        }
        if plan.kind != PlanKind::NoSplit {
            disjoint &= counts.iter().all(|&c| c <= 1);
        }
        coverage &= counts.iter().all(|&c| c == 1);
    }
    if min_role_size == usize::MAX {
        min_role_size = 0;
    }
    PlanDiagnostics {
        disjoint,
        coverage,
        size_bounds: min_role_size >= size_floor && min_role_size > 0,
        min_role_size,
        size_floor,
    }
}
