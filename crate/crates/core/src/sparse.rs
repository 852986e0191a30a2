//! Principal cubes, sparse families, the dyadic maximal function and the
//! Carleson embedding / Stein inequality checkers.

use std::collections::HashMap;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DyadError, Result};
use crate::lattice::{CubeId, DyadicLattice};
use crate::measure::{cube_integrals, l2_aggregate_norm, same_lattice, Measure, StepFunction};

/// A cube family with designated sets `E(Q)`, stored as sorted leaf ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseFamily {
    pub lattice: DyadicLattice,
    pub gamma: f64,
    pub cubes: Vec<CubeId>,
    pub designated: Vec<Vec<Range<usize>>>,
    /// Position of the stopping parent within `cubes`, when built by stopping.
    pub parents: Vec<Option<usize>>,
}

impl SparseFamily {
    /// Disjoint cubes with `E(Q) = Q`.
    pub fn disjoint(lattice: DyadicLattice, cubes: Vec<CubeId>, gamma: f64) -> Self {
        let designated = cubes.iter().map(|q| vec![lattice.leaf_range(*q)]).collect();
        let parents = vec![None; cubes.len()];
        Self { lattice, gamma, cubes, designated, parents }
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    /// `pi_S Q`: the smallest member containing `q`.
    pub fn container(&self, q: CubeId) -> Option<CubeId> {
        let index: HashMap<CubeId, usize> = self.cubes.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        let mut cur = Some(q);
        while let Some(c) = cur {
            if index.contains_key(&c) {
                return Some(c);
            }
            cur = self.lattice.parent(c);
        }
        None
    }
}

fn abs_averages(f: &StepFunction, sigma: &Measure) -> Vec<Vec<f64>> {
    let ints = cube_integrals(&f.abs(), sigma);
    let lat = sigma.lattice();
    ints.iter()
        .enumerate()
        .map(|(d, row)| {
            let level = lat.min_level() + d as i32;
            row.iter()
                .enumerate()
                .map(|(i, v)| {
                    let m = sigma.mass_of(CubeId { level, index: i as u64 });
                    if m == 0.0 {
                        0.0
                    } else {
                        v / m
                    }
                })
                .collect()
        })
        .collect()
}

fn slot(lat: &DyadicLattice, q: CubeId) -> (usize, usize) {
    ((q.level - lat.min_level()) as usize, q.index as usize)
}

/// Stopping cubes where the `sigma`-average of `|f|` more than doubles,
/// starting from `q0`. The family is `1/2`-sparse with `E(S) = S` minus its
/// stopping children.
pub fn principal_cubes(f: &StepFunction, sigma: &Measure, q0: CubeId) -> Result<SparseFamily> {
    same_lattice(f.lattice(), sigma.lattice())?;
    let lat = *sigma.lattice();
    lat.check(q0)?;
    if sigma.mass_of(q0) == 0.0 {
        return Err(DyadError::InvalidMeasure(format!("sigma({q0:?}) = 0")));
    }
    let avg = abs_averages(f, sigma);
    let at = |q: CubeId| {
        let (d, i) = slot(&lat, q);
        avg[d][i]
    };
    let mut cubes = vec![q0];
    let mut parents = vec![None];
    let mut designated = Vec::new();
    let mut next = 0;
    while next < cubes.len() {
        let s = cubes[next];
        let threshold = 2.0 * at(s);
        let mut stack: Vec<CubeId> = if lat.is_leaf(s) { Vec::new() } else { lat.children(s).collect() };
        let mut kids = Vec::new();
        while let Some(q) = stack.pop() {
            if at(q) > threshold {
                kids.push(q);
            } else if !lat.is_leaf(q) {
                stack.extend(lat.children(q));
            }
        }
        kids.sort_by_key(|k| lat.leaf_range(*k).start);
        let mut e = Vec::new();
        let mut cursor = lat.leaf_range(s).start;
        for k in &kids {
            let r = lat.leaf_range(*k);
            if r.start > cursor {
                e.push(cursor..r.start);
            }
            cursor = r.end;
        }
        if cursor < lat.leaf_range(s).end {
            e.push(cursor..lat.leaf_range(s).end);
        }
        designated.push(e);
        for k in kids {
            cubes.push(k);
            parents.push(Some(next));
        }
        next += 1;
    }
    Ok(SparseFamily { lattice: lat, gamma: 0.5, cubes, designated, parents })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparseCheck {
    pub disjoint: bool,
    pub contained: bool,
    /// Smallest `sigma(E(Q)) / sigma(Q)` over members with positive mass.
    pub worst_ratio: f64,
    pub passes: bool,
}

pub fn verify_sparse(family: &SparseFamily, sigma: &Measure) -> Result<SparseCheck> {
    same_lattice(&family.lattice, sigma.lattice())?;
    let lat = &family.lattice;
    let masses = sigma.leaf_masses();
    let mut all: Vec<Range<usize>> = Vec::new();
    let mut contained = true;
    let mut worst = 1.0f64;
    for (q, e) in family.cubes.iter().zip(&family.designated) {
        lat.check(*q)?;
        let qr = lat.leaf_range(*q);
        let mut em = 0.0;
        for r in e {
            if r.start < qr.start || r.end > qr.end || r.start > r.end {
                contained = false;
            }
            em += masses[r.clone()].iter().sum::<f64>();
            all.push(r.clone());
        }
        let qm = sigma.mass_of(*q);
        if qm > 0.0 {
            worst = worst.min(em / qm);
        }
    }
    all.sort_by_key(|r| (r.start, r.end));
    let disjoint = all.windows(2).all(|w| w[0].end <= w[1].start || w[0].is_empty() || w[1].is_empty());
    let passes = disjoint && contained && worst >= family.gamma;
    Ok(SparseCheck { disjoint, contained, worst_ratio: worst, passes })
}

/// `M^d_sigma f = sup_Q 1_Q <|f|>^sigma_Q`.
pub fn dyadic_maximal(f: &StepFunction, sigma: &Measure) -> Result<StepFunction> {
    same_lattice(f.lattice(), sigma.lattice())?;
    let lat = *sigma.lattice();
    let avg = abs_averages(f, sigma);
    let mut running = avg[0].clone();
    for row in avg.iter().skip(1) {
        let fan = lat.children_per_cube();
        running = row.iter().enumerate().map(|(i, a)| a.max(running[i / fan])).collect();
    }
    StepFunction::from_values(lat, running)
}

/// Both sides of the vector Carleson embedding:
/// `|| (sum_k sum_{S in S_k} <f_k>_S^2 1_S)^{1/2} ||_{L^p(sigma)}` and
/// `|| (sum_k f_k^2)^{1/2} ||_{L^p(sigma)}`. Every family must verify as sparse.
pub fn carleson_check(fs: &[StepFunction], families: &[SparseFamily], sigma: &Measure, p: f64) -> Result<(f64, f64)> {
    if fs.len() != families.len() {
        return Err(DyadError::InvalidArgument("one sparse family per function required".into()));
    }
    let lat = *sigma.lattice();
    for fam in families {
        let check = verify_sparse(fam, sigma)?;
        if !check.passes {
            return Err(DyadError::NotSparse(format!("worst ratio {} below gamma {}", check.worst_ratio, fam.gamma)));
        }
    }
    let parts: Vec<Vec<f64>> = fs
        .par_iter()
        .zip(families)
        .map(|(f, fam)| {
            let ints = cube_integrals(f, sigma);
            let mut diff = vec![0.0; lat.leaf_count() + 1];
            for s in &fam.cubes {
                let m = sigma.mass_of(*s);
                if m == 0.0 {
                    continue;
                }
                let (d, i) = slot(&lat, *s);
                let a = ints[d][i] / m;
                let r = lat.leaf_range(*s);
                diff[r.start] += a * a;
                diff[r.end] -= a * a;
            }
            let mut acc = 0.0;
            diff[..lat.leaf_count()]
                .iter()
                .map(|d| {
                    acc += d;
                    acc.max(0.0)
                })
                .collect()
        })
        .collect();
    let mut sq = vec![0.0; lat.leaf_count()];
    for part in &parts {
        for (s, v) in sq.iter_mut().zip(part) {
            *s += v;
        }
    }
    let lhs = l2_aggregate_norm(&sq, sigma.leaf_masses(), p);
    let rhs = crate::measure::lp_l2_norm(fs, sigma, p)?;
    Ok((lhs, rhs))
}

/// Both sides of the two-weight Stein inequality:
/// `|| (sum_Q (int_Q f_Q dsigma / |Q|)^2 1_Q)^{1/2} ||_{L^q(w)}` and
/// `|| (sum_Q f_Q^2 1_Q)^{1/2} ||_{L^p(sigma)}`.
pub fn stein_check(
    assignments: &[(CubeId, StepFunction)],
    sigma: &Measure,
    w: &Measure,
    p: f64,
    q: f64,
) -> Result<(f64, f64)> {
    same_lattice(sigma.lattice(), w.lattice())?;
    let lat = *sigma.lattice();
    let mut lhs_sq = vec![0.0; lat.leaf_count() + 1];
    let mut rhs_sq = vec![0.0; lat.leaf_count()];
    for (cube, f) in assignments {
        same_lattice(f.lattice(), &lat)?;
        lat.check(*cube)?;
        let r = lat.leaf_range(*cube);
        let int: f64 = f.values()[r.clone()].iter().zip(&sigma.leaf_masses()[r.clone()]).map(|(v, m)| v * m).sum();
        let a = int / lat.volume(*cube);
        lhs_sq[r.start] += a * a;
        lhs_sq[r.end] -= a * a;
        for i in r {
            rhs_sq[i] += f.values()[i] * f.values()[i];
        }
    }
    let mut acc = 0.0;
    let lhs_leaf: Vec<f64> = lhs_sq[..lat.leaf_count()]
        .iter()
        .map(|d| {
            acc += d;
            acc.max(0.0)
        })
        .collect();
    Ok((l2_aggregate_norm(&lhs_leaf, w.leaf_masses(), q), l2_aggregate_norm(&rhs_sq, sigma.leaf_masses(), p)))
}
