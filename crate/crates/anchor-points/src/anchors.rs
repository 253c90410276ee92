//! Anchor selection: solve the facility-location objective over the example
//! distance matrix with PAM-style K-medoids (greedy BUILD, then
//! best-improvement SWAP passes until no swap helps), plus an exhaustive
//! oracle for small instances.
//!
//! The objective charges every example the distance to its most correlated
//! anchor; anchors themselves sit at distance 0. Tie-breaking is by lowest
//! index everywhere, except among exactly-equal BUILD candidates where the
//! seed decides, so a run is a deterministic function of (input, k, seed).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corr::CorrelationModel;
use crate::error::{Error, Result};
use crate::util::rng;

/// A swap must beat this margin to count as improving; keeps float noise from
/// cycling the search.
const MIN_IMPROVEMENT: f64 = 1e-12;

/// Hard cap on accepted swaps, scaled by k.
const SWAP_CAP_PER_MEDOID: usize = 100;

/// Instances with at most this many candidate subsets are solved exactly.
/// At this bound enumeration costs a few tens of milliseconds and beats any
/// local search; the swap heuristic only engages beyond it.
const EXHAUSTIVE_SUBSETS: u128 = 100_000;

/// A solved anchor selection: K medoid example indices (in list order, which
/// defines the cluster index), the per-example nearest-anchor assignment,
/// integer cluster sizes, and the facility-location objective at the solution.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub medoids: Vec<usize>,
    pub assignment: Vec<usize>,
    pub weights: Vec<usize>,
    pub objective: f64,
    pub seed: u64,
}

impl AnchorSet {
    pub fn k(&self) -> usize {
        self.medoids.len()
    }

    pub fn n_examples(&self) -> usize {
        self.assignment.len()
    }

    /// Non-medoid example indices in ascending order.
    pub fn test_indices(&self) -> Vec<usize> {
        let meds: std::collections::BTreeSet<usize> = self.medoids.iter().copied().collect();
        (0..self.assignment.len()).filter(|i| !meds.contains(i)).collect()
    }
}

/// Contiguous row view of a symmetric matrix: column-major storage means the
/// slice for column `i` is also row `i`.
fn sym_row(flat: &[f64], d: usize, i: usize) -> &[f64] {
    &flat[i * d..(i + 1) * d]
}

/// Assign every example to its nearest medoid (ties to the lowest medoid list
/// position; medoids always own themselves) and total up the objective.
fn assign_and_score(dist: &DMatrix<f64>, medoids: &[usize]) -> (Vec<usize>, Vec<usize>, f64) {
    let d = dist.nrows();
    let flat = dist.as_slice();
    let k = medoids.len();
    let mut position_of = vec![usize::MAX; d];
    for (p, &m) in medoids.iter().enumerate() {
        position_of[m] = p;
    }
    let mut assignment = vec![0usize; d];
    let mut weights = vec![0usize; k];
    let mut objective = 0.0f64;
    let rows: Vec<&[f64]> = medoids.iter().map(|&m| sym_row(flat, d, m)).collect();
    for j in 0..d {
        if position_of[j] != usize::MAX {
            assignment[j] = position_of[j];
            weights[position_of[j]] += 1;
            continue;
        }
        let mut best_p = 0usize;
        let mut best_d = rows[0][j];
        for (p, row) in rows.iter().enumerate().skip(1) {
            let dm = row[j];
            if dm < best_d {
                best_p = p;
                best_d = dm;
            }
        }
        assignment[j] = best_p;
        weights[best_p] += 1;
        objective += best_d;
    }
    (assignment, weights, objective)
}

fn check_k(k: usize, d: usize) -> Result<()> {
    if k == 0 || k > d {
        return Err(Error::invalid(format!("k = {k} outside [1, {d}]")));
    }
    Ok(())
}

/// K-medoids over an arbitrary distance matrix. Also used for the Euclidean
/// embedding baselines; [`select_anchors`] is the correlation-space wrapper.
pub fn select_medoids(dist: &DMatrix<f64>, k: usize, seed: u64) -> Result<AnchorSet> {
    let d = dist.nrows();
    if dist.ncols() != d {
        return Err(Error::invalid("distance matrix must be square".to_string()));
    }
    check_k(k, d)?;

    if k == d {
        let medoids: Vec<usize> = (0..d).collect();
        let (assignment, weights, objective) = assign_and_score(dist, &medoids);
        return Ok(AnchorSet {
            medoids,
            assignment,
            weights,
            objective,
            seed,
        });
    }
    // Tiny instances are solved exactly: enumeration is cheaper than the
    // swap search there and the optimum is trivially a swap-local optimum.
    if binomial(d, k) <= EXHAUSTIVE_SUBSETS {
        let mut aset = brute_force_medoids(dist, k)?;
        aset.seed = seed;
        return Ok(aset);
    }

    let mut r = rng(seed);
    let flat = dist.as_slice();
    // Two deterministic starts, each refined to a swap-local optimum: greedy
    // BUILD, plus a maximin spread. Single-swap search alone can strand k > 1
    // in poor basins on non-metric distance matrices; taking the better of
    // two locally optimal solutions keeps the quality gate while preserving
    // the contract (the result is still swap-optimal, and the seed still only
    // breaks exact BUILD ties).
    let mut medoids = build_greedy(flat, d, k, &mut r);
    if k > 1 {
        swap_to_local_optimum(flat, d, &mut medoids, k * SWAP_CAP_PER_MEDOID, None);
        let primary_obj = objective_of(flat, d, &medoids);
        // Diversification start. Its descent gets k swaps of patience: if it
        // still trails the primary solution after that, it is abandoned.
        let mut alt = maximin_init(flat, d, k);
        swap_to_local_optimum(
            flat,
            d,
            &mut alt,
            k * SWAP_CAP_PER_MEDOID,
            Some((primary_obj, k)),
        );
        if objective_of(flat, d, &alt) < primary_obj {
            medoids = alt;
        }
    }
    let (assignment, weights, objective) = assign_and_score(dist, &medoids);
    Ok(AnchorSet {
        medoids,
        assignment,
        weights,
        objective,
        seed,
    })
}

fn objective_of(flat: &[f64], d: usize, medoids: &[usize]) -> f64 {
    let rows: Vec<&[f64]> = medoids.iter().map(|&m| sym_row(flat, d, m)).collect();
    let mut obj = 0.0;
    for j in 0..d {
        let mut m = f64::INFINITY;
        for row in &rows {
            if row[j] < m {
                m = row[j];
            }
        }
        obj += m;
    }
    obj
}

/// Farthest-first traversal from the row-sum minimizer; ties go to the
/// lowest index.
fn maximin_init(flat: &[f64], d: usize, k: usize) -> Vec<usize> {
    let mut first = 0usize;
    let mut best_sum = f64::INFINITY;
    for c in 0..d {
        let sum: f64 = sym_row(flat, d, c).iter().sum();
        if sum < best_sum {
            best_sum = sum;
            first = c;
        }
    }
    let mut medoids = vec![first];
    let mut near = sym_row(flat, d, first).to_vec();
    let mut chosen = vec![false; d];
    chosen[first] = true;
    while medoids.len() < k {
        let mut cand = usize::MAX;
        let mut cand_d = f64::NEG_INFINITY;
        for (j, &nj) in near.iter().enumerate() {
            if !chosen[j] && nj > cand_d {
                cand_d = nj;
                cand = j;
            }
        }
        chosen[cand] = true;
        medoids.push(cand);
        for (near_j, &dist_cj) in near.iter_mut().zip(sym_row(flat, d, cand)) {
            if dist_cj < *near_j {
                *near_j = dist_cj;
            }
        }
    }
    medoids
}

/// Anchor selection over the correlation-induced distances (dist = 1 - corr).
pub fn select_anchors(cm: &CorrelationModel, k: usize, seed: u64) -> Result<AnchorSet> {
    select_medoids(&cm.dist, k, seed)
}

/// Greedy BUILD: first the point minimizing its distance row sum, then the
/// point with the best marginal improvement, k times. The RNG only breaks
/// exact ties between equally good candidates.
fn build_greedy(flat: &[f64], d: usize, k: usize, r: &mut impl Rng) -> Vec<usize> {
    let mut medoids = Vec::with_capacity(k);
    let mut is_medoid = vec![false; d];
    let mut near = vec![f64::INFINITY; d];

    // First medoid: minimum row sum.
    let mut best_score = f64::INFINITY;
    let mut ties: Vec<usize> = Vec::new();
    for c in 0..d {
        let score: f64 = sym_row(flat, d, c).iter().sum();
        if score < best_score {
            best_score = score;
            ties.clear();
            ties.push(c);
        } else if score == best_score {
            ties.push(c);
        }
    }
    let first = pick_tied(&ties, r);
    medoids.push(first);
    is_medoid[first] = true;
    near.copy_from_slice(sym_row(flat, d, first));

    while medoids.len() < k {
        let mut best_delta = f64::INFINITY;
        ties.clear();
        for c in 0..d {
            if is_medoid[c] {
                continue;
            }
            let row = sym_row(flat, d, c);
            let mut delta = 0.0;
            for (dist_cj, near_j) in row.iter().zip(&near) {
                delta += (dist_cj - near_j).min(0.0);
            }
            if delta < best_delta {
                best_delta = delta;
                ties.clear();
                ties.push(c);
            } else if delta == best_delta {
                ties.push(c);
            }
        }
        let chosen = pick_tied(&ties, r);
        medoids.push(chosen);
        is_medoid[chosen] = true;
        for (near_j, &dist_cj) in near.iter_mut().zip(sym_row(flat, d, chosen)) {
            if dist_cj < *near_j {
                *near_j = dist_cj;
            }
        }
    }
    medoids
}

fn pick_tied(ties: &[usize], r: &mut impl Rng) -> usize {
    if ties.len() == 1 {
        ties[0]
    } else {
        ties[r.gen_range(0..ties.len())]
    }
}

/// Per-point nearest and second-nearest medoid bookkeeping for swap deltas.
struct Neighbors {
    near_pos: Vec<usize>,
    near_d: Vec<f64>,
    seco_d: Vec<f64>,
}

fn neighbors(flat: &[f64], d: usize, medoids: &[usize]) -> Neighbors {
    let mut near_pos = vec![0usize; d];
    let mut near_d = vec![f64::INFINITY; d];
    let mut seco_d = vec![f64::INFINITY; d];
    for (p, &m) in medoids.iter().enumerate() {
        let row = sym_row(flat, d, m);
        for j in 0..d {
            let dm = row[j];
            if dm < near_d[j] {
                seco_d[j] = near_d[j];
                near_d[j] = dm;
                near_pos[j] = p;
            } else if dm < seco_d[j] {
                seco_d[j] = dm;
            }
        }
    }
    Neighbors {
        near_pos,
        near_d,
        seco_d,
    }
}

/// Best-improvement SWAP: per pass, evaluate every (medoid slot, candidate)
/// swap exactly and take the single best (lowest delta, then lowest medoid
/// slot, then lowest candidate index). Stops when no swap improves or the
/// swap budget runs out. With `abort_above = Some((obj, patience))` the
/// search also gives up once it has spent `patience` swaps while still above
/// `obj` (used for secondary starts that are not paying off).
fn swap_to_local_optimum(
    flat: &[f64],
    d: usize,
    medoids: &mut [usize],
    swap_cap: usize,
    abort_above: Option<(f64, usize)>,
) {
    let k = medoids.len();
    let mut swaps = 0usize;
    loop {
        if let Some((target_obj, patience)) = abort_above {
            if swaps >= patience && objective_of(flat, d, medoids) > target_obj {
                return;
            }
        }
        let nb = neighbors(flat, d, medoids);
        let mut removal_loss = vec![0.0f64; k];
        for j in 0..d {
            removal_loss[nb.near_pos[j]] += nb.seco_d[j] - nb.near_d[j];
        }
        let mut is_medoid = vec![false; d];
        for &m in medoids.iter() {
            is_medoid[m] = true;
        }

        let mut best: Option<(f64, usize, usize)> = None;
        let mut ploss = vec![0.0f64; k];
        for cand in 0..d {
            if is_medoid[cand] {
                continue;
            }
            ploss.copy_from_slice(&removal_loss);
            let mut acc = 0.0f64;
            let row = sym_row(flat, d, cand);
            for o in 0..d {
                let djo = row[o];
                if djo < nb.near_d[o] {
                    acc += djo - nb.near_d[o];
                    ploss[nb.near_pos[o]] += nb.near_d[o] - nb.seco_d[o];
                } else if djo < nb.seco_d[o] {
                    ploss[nb.near_pos[o]] += djo - nb.seco_d[o];
                }
            }
            let mut slot = 0usize;
            for b in 1..k {
                if ploss[b] < ploss[slot] {
                    slot = b;
                }
            }
            let delta = acc + ploss[slot];
            let better = match &best {
                None => true,
                Some((bd, _, _)) => delta < *bd,
            };
            if better {
                best = Some((delta, slot, cand));
            }
        }

        match best {
            Some((delta, slot, cand)) if delta < -MIN_IMPROVEMENT => {
                medoids[slot] = cand;
                swaps += 1;
                if swaps >= swap_cap {
                    return;
                }
            }
            _ => return,
        }
    }
}

/// Facility-location value of an arbitrary medoid set: each example pays the distance to
/// its nearest medoid; medoids pay nothing.
pub fn objective_value(cm: &CorrelationModel, medoids: &[usize]) -> Result<f64> {
    let d = cm.n_examples();
    let mut seen = vec![false; d];
    for &m in medoids {
        if m >= d {
            return Err(Error::invalid(format!("medoid index {m} outside [0, {d})")));
        }
        if seen[m] {
            return Err(Error::invalid(format!("duplicate medoid index {m}")));
        }
        seen[m] = true;
    }
    if medoids.is_empty() {
        return Err(Error::invalid("medoid list is empty".to_string()));
    }
    let (_, _, objective) = assign_and_score(&cm.dist, medoids);
    Ok(objective)
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i as u128 + 1);
        if acc > 1_000_000_000_000 {
            return u128::MAX;
        }
    }
    acc
}

/// Advance to the next lexicographic k-subset of 0..d; false when exhausted.
fn next_combination(combo: &mut [usize], d: usize) -> bool {
    let k = combo.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if combo[i] != i + d - k {
            combo[i] += 1;
            for j in (i + 1)..k {
                combo[j] = combo[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

/// Globally optimal anchors by exhaustive enumeration; ties go to the
/// lexicographically smallest medoid list. Refuses instances with more than
/// 10^6 candidate subsets.
pub fn brute_force_anchors(cm: &CorrelationModel, k: usize) -> Result<AnchorSet> {
    let d = cm.n_examples();
    check_k(k, d)?;
    if binomial(d, k) > 1_000_000 {
        return Err(Error::invalid(format!(
            "instance too large for enumeration: C({d}, {k}) > 10^6"
        )));
    }
    brute_force_medoids(&cm.dist, k)
}

fn brute_force_medoids(dist: &DMatrix<f64>, k: usize) -> Result<AnchorSet> {
    let d = dist.nrows();
    let flat = dist.as_slice();
    let mut combo: Vec<usize> = (0..k).collect();
    let mut best_combo = combo.clone();
    let mut best_obj = f64::INFINITY;
    let mut rows: Vec<&[f64]> = Vec::with_capacity(k);
    loop {
        rows.clear();
        rows.extend(combo.iter().map(|&c| sym_row(flat, d, c)));
        let mut obj = 0.0f64;
        for j in 0..d {
            let mut m = f64::INFINITY;
            for row in &rows {
                let dc = row[j];
                if dc < m {
                    m = dc;
                }
            }
            obj += m;
        }
        if obj < best_obj {
            best_obj = obj;
            best_combo.copy_from_slice(&combo);
        }
        if !next_combination(&mut combo, d) {
            let (assignment, weights, objective) = assign_and_score(dist, &best_combo);
            return Ok(AnchorSet {
                medoids: best_combo,
                assignment,
                weights,
                objective,
                seed: 0,
            });
        }
    }
}

/// On-disk form of an [`AnchorSet`]: everything is keyed by example id so the
/// file stands alone without the source bundle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnchorSetFile {
    pub medoids: Vec<String>,
    pub weights: Vec<usize>,
    pub assignment: BTreeMap<String, String>,
    pub objective: f64,
    pub seed: u64,
}

impl AnchorSetFile {
    pub fn from_anchor_set(aset: &AnchorSet, example_ids: &[String]) -> Result<Self> {
        if example_ids.len() != aset.assignment.len() {
            return Err(Error::invalid(format!(
                "{} example ids for a {}-example anchor set",
                example_ids.len(),
                aset.assignment.len()
            )));
        }
        let medoids: Vec<String> = aset
            .medoids
            .iter()
            .map(|&m| example_ids[m].clone())
            .collect();
        let assignment: BTreeMap<String, String> = example_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), medoids[aset.assignment[i]].clone()))
            .collect();
        Ok(AnchorSetFile {
            medoids,
            weights: aset.weights.clone(),
            assignment,
            objective: aset.objective,
            seed: aset.seed,
        })
    }

    /// Resolve ids back to indices against a bundle's example order.
    pub fn to_anchor_set(&self, example_ids: &[String]) -> Result<AnchorSet> {
        let index_of: BTreeMap<&str, usize> = example_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let mut medoids = Vec::with_capacity(self.medoids.len());
        let mut medoid_pos = BTreeMap::new();
        for (p, id) in self.medoids.iter().enumerate() {
            let &idx = index_of
                .get(id.as_str())
                .ok_or_else(|| Error::invalid(format!("anchor id '{id}' not in example ids")))?;
            medoids.push(idx);
            medoid_pos.insert(id.as_str(), p);
        }
        let mut assignment = vec![usize::MAX; example_ids.len()];
        for (i, id) in example_ids.iter().enumerate() {
            let anchor_id = self.assignment.get(id).ok_or_else(|| {
                Error::invalid(format!("example id '{id}' missing from anchor assignment"))
            })?;
            let &p = medoid_pos.get(anchor_id.as_str()).ok_or_else(|| {
                Error::invalid(format!("assignment of '{id}' points at unknown anchor '{anchor_id}'"))
            })?;
            assignment[i] = p;
        }
        if self.assignment.len() != example_ids.len() {
            return Err(Error::invalid(format!(
                "anchor assignment covers {} examples, bundle has {}",
                self.assignment.len(),
                example_ids.len()
            )));
        }
        if self.weights.len() != medoids.len() {
            return Err(Error::invalid(
                "anchor weights and medoid list disagree on k".to_string(),
            ));
        }
        Ok(AnchorSet {
            medoids,
            assignment,
            weights: self.weights.clone(),
            objective: self.objective,
            seed: self.seed,
        })
    }
}

pub fn save_anchor_set(aset: &AnchorSet, example_ids: &[String], path: &Path) -> Result<()> {
    let file = AnchorSetFile::from_anchor_set(aset, example_ids)?;
    let json = serde_json::to_string_pretty(&file).map_err(|e| Error::malformed(path, e.to_string()))?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_anchor_set_file(path: &Path) -> Result<AnchorSetFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::malformed(path, format!("bad anchor set JSON: {e}")))
}

pub fn load_anchor_set(path: &Path, example_ids: &[String]) -> Result<AnchorSet> {
    read_anchor_set_file(path)?.to_anchor_set(example_ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng as seeded_rng;

    /// Random valid correlation model: symmetric dist in [0, 2], zero diagonal.
    fn random_model(d: usize, seed: u64) -> CorrelationModel {
        let mut r = seeded_rng(seed);
        let mut corr = DMatrix::from_element(d, d, 1.0);
        for i in 0..d {
            for j in (i + 1)..d {
                let c = r.gen_range(-1.0..1.0);
                corr[(i, j)] = c;
                corr[(j, i)] = c;
            }
        }
        CorrelationModel::from_corr(corr, 1e-6, 5).unwrap()
    }

    /// Two blocks of three: within-block distance 0.1, cross-block 1.5.
    fn two_block_model() -> CorrelationModel {
        let mut corr = DMatrix::from_element(6, 6, 1.0);
        for i in 0..6 {
            for j in 0..6 {
                if i != j {
                    let same = (i < 3) == (j < 3);
                    corr[(i, j)] = if same { 0.9 } else { -0.5 };
                }
            }
        }
        CorrelationModel::from_corr(corr, 1e-6, 5).unwrap()
    }

    #[test]
    fn k_equal_d_selects_everything_at_zero_cost() {
        let cm = random_model(7, 1);
        let aset = select_anchors(&cm, 7, 3).unwrap();
        assert_eq!(aset.medoids, (0..7).collect::<Vec<_>>());
        assert_eq!(aset.objective, 0.0);
        assert!(aset.weights.iter().all(|&w| w == 1));
    }

    #[test]
    fn k_one_minimizes_row_sum() {
        let cm = random_model(9, 2);
        let aset = select_anchors(&cm, 1, 5).unwrap();
        // Linear-scan oracle over all D candidates.
        let mut best = 0;
        let mut best_sum = f64::INFINITY;
        for c in 0..9 {
            let s: f64 = (0..9).map(|j| cm.dist[(c, j)]).sum();
            if s < best_sum {
                best_sum = s;
                best = c;
            }
        }
        assert_eq!(aset.medoids, vec![best]);
        let expected: f64 = (0..9).filter(|&j| j != best).map(|j| cm.dist[(best, j)]).sum();
        assert!((aset.objective - expected).abs() <= 1e-12);
    }

    #[test]
    fn two_block_instance_puts_one_medoid_per_block() {
        let cm = two_block_model();
        for seed in 0..5 {
            let aset = select_anchors(&cm, 2, seed).unwrap();
            let blocks: Vec<bool> = aset.medoids.iter().map(|&m| m < 3).collect();
            assert_ne!(blocks[0], blocks[1], "seed {seed}: medoids {:?}", aset.medoids);
            assert!((aset.objective - 0.4).abs() <= 1e-9);
            let brute = brute_force_anchors(&cm, 2).unwrap();
            assert!((brute.objective - 0.4).abs() <= 1e-9);
            assert!((aset.objective - brute.objective).abs() <= 1e-9);
        }
    }

    #[test]
    fn brute_force_never_loses_to_local_search() {
        for seed in 0..10u64 {
            let d = 6 + (seed as usize % 7);
            let cm = random_model(d, 100 + seed);
            for k in 1..=3usize.min(d) {
                let brute = brute_force_anchors(&cm, k).unwrap();
                let local = select_anchors(&cm, k, seed).unwrap();
                assert!(
                    brute.objective <= local.objective + 1e-9,
                    "global worse than local at d={d} k={k}"
                );
            }
        }
    }

    #[test]
    fn brute_force_k_equal_d_is_zero() {
        let cm = random_model(5, 8);
        assert_eq!(brute_force_anchors(&cm, 5).unwrap().objective, 0.0);
    }

    #[test]
    fn brute_force_rejects_huge_instances() {
        let cm = random_model(60, 4);
        assert!(brute_force_anchors(&cm, 10).is_err());
    }

    #[test]
    fn objective_value_examples() {
        let cm = two_block_model();
        let all: Vec<usize> = (0..6).collect();
        assert_eq!(objective_value(&cm, &all).unwrap(), 0.0);
        // Single medoid: its off-diagonal row sum.
        let expected: f64 = (1..6).map(|j| cm.dist[(0, j)]).sum();
        assert!((objective_value(&cm, &[0]).unwrap() - expected).abs() <= 1e-12);
        // One per block: 4 x 0.1.
        assert!((objective_value(&cm, &[0, 3]).unwrap() - 0.4).abs() <= 1e-12);
        assert!(objective_value(&cm, &[0, 0]).is_err());
        assert!(objective_value(&cm, &[0, 9]).is_err());
    }

    #[test]
    fn same_seed_is_bitwise_deterministic() {
        let cm = random_model(15, 77);
        let a = select_anchors(&cm, 4, 9).unwrap();
        let b = select_anchors(&cm, 4, 9).unwrap();
        assert_eq!(a.medoids, b.medoids);
        assert_eq!(a.assignment, b.assignment);
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
    }

    #[test]
    fn local_optimum_admits_no_improving_swap() {
        let cm = random_model(14, 13);
        let aset = select_anchors(&cm, 3, 1).unwrap();
        let meds = aset.medoids.clone();
        for slot in 0..3 {
            for cand in 0..14 {
                if meds.contains(&cand) {
                    continue;
                }
                let mut swapped = meds.clone();
                swapped[slot] = cand;
                let obj = objective_value(&cm, &swapped).unwrap();
                assert!(
                    obj >= aset.objective - 1e-9,
                    "swap slot {slot} -> {cand} improves {} to {obj}",
                    aset.objective
                );
            }
        }
    }

    #[test]
    fn objective_is_permutation_invariant() {
        let cm = random_model(10, 21);
        // Reverse the example order.
        let d = 10;
        let perm: Vec<usize> = (0..d).rev().collect();
        let corr_p = DMatrix::from_fn(d, d, |i, j| cm.corr[(perm[i], perm[j])]);
        let cm_p = CorrelationModel::from_corr(corr_p, cm.epsilon, cm.n_models).unwrap();
        for k in [1usize, 2, 4] {
            let a = brute_force_anchors(&cm, k).unwrap();
            let b = brute_force_anchors(&cm_p, k).unwrap();
            assert!((a.objective - b.objective).abs() <= 1e-9);
            // The permuted optimum, mapped back, must be optimal in the
            // original space too (sets may differ only across exact ties).
            let mapped: Vec<usize> = b.medoids.iter().map(|&m| perm[m]).collect();
            let mapped_obj = objective_value(&cm, &mapped).unwrap();
            assert!((mapped_obj - a.objective).abs() <= 1e-9);
        }
    }

    #[test]
    fn assigned_anchor_is_row_maximum_correlation() {
        let cm = random_model(12, 31);
        let aset = select_anchors(&cm, 3, 2).unwrap();
        for j in 0..12 {
            let assigned = aset.assignment[j];
            if aset.medoids[assigned] == j {
                continue; // medoids own themselves
            }
            let assigned_corr = cm.corr[(aset.medoids[assigned], j)];
            for (p, &m) in aset.medoids.iter().enumerate() {
                let c = cm.corr[(m, j)];
                assert!(
                    c < assigned_corr + 1e-15 || (c == assigned_corr && p >= assigned),
                    "example {j} should prefer anchor {p}"
                );
            }
        }
        let total: usize = aset.weights.iter().sum();
        assert_eq!(total, 12);
        for (p, &m) in aset.medoids.iter().enumerate() {
            assert_eq!(aset.assignment[m], p);
        }
    }

    #[test]
    fn quality_gate_inside_enumerable_band() {
        // Everywhere brute force is feasible (C(D, k) <= 1e5), selection must
        // match it exactly and never exceed 1.05x.
        let mut exact = 0usize;
        let mut total = 0usize;
        for &d in &[60usize, 80] {
            for inst in 0..2u64 {
                let cm = random_model(d, 9000 + inst);
                let brute = brute_force_anchors(&cm, 3).unwrap();
                for seed in 0..2u64 {
                    let local = select_anchors(&cm, 3, seed).unwrap();
                    assert!(local.objective <= 1.05 * brute.objective + 1e-12);
                    if (local.objective - brute.objective).abs() <= 1e-9 {
                        exact += 1;
                    }
                    total += 1;
                }
            }
        }
        assert!(exact * 5 >= total * 4, "{exact}/{total} exact");
    }

    #[test]
    fn anchor_set_round_trips_through_json() {
        let cm = two_block_model();
        let aset = select_anchors(&cm, 2, 3).unwrap();
        let ids: Vec<String> = (0..6).map(|i| format!("ex{i}")).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("anchors.json");
        save_anchor_set(&aset, &ids, &path).unwrap();
        let loaded = load_anchor_set(&path, &ids).unwrap();
        assert_eq!(loaded, aset);
    }
}
