//! Skew-aware one-round algorithms: the two-relation join that splits
//! heavy hitters into classes, and the general bin-combination
//! algorithm with its processed hitter sets C'(B), per-combination
//! exponent LPs, overweight detection, and per-hitter server blocks.
//!
//! Servers here are virtual: every class or combination gets a fresh
//! block, and reports carry both that view and a physical view folding
//! all virtual servers onto p real ones round-robin.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigUint;
use num_traits::{Signed, ToPrimitive, Zero};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::query::{Query, VarSet};
use crate::ratio::{dyadic_log, dyadic_log_ceil, rat_int, rat_to_f64, rat_to_string, Rat};
use crate::shares::{mu_vector, round_shares, solve_exponent_lp_core};
use crate::shuffle::{hc_route, local_join, mix64, HashFamily, LoadReport, ServerGrid, ServerLoad};
use crate::stats::{
    compute_simple_stats, detect_heavy_hitters, enumerate_bin_combinations, BinCombination,
    BinContext, HeavyThreshold, Instance, PowerOfTwoPolicy, SimpleStats,
};

/// Column layout of the two-relation join q(x,y,z) = S1(x,z), S2(y,z):
/// two binary atoms sharing exactly one variable.
#[derive(Clone, Debug)]
pub struct JoinShape {
    /// The shared variable id.
    pub z: usize,
    /// The private variable id of each atom.
    pub private: [usize; 2],
    /// Column of z within each atom.
    pub z_col: [usize; 2],
    /// Column of the private variable within each atom.
    pub private_col: [usize; 2],
}

/// Recognizes the join shape or reports why the query does not fit.
pub fn join_shape(q: &Query) -> Result<JoinShape> {
    let fail = |reason: &str| Error::AlgorithmShape {
        algo: "skew-join".into(),
        reason: reason.into(),
    };
    if q.num_atoms() != 2 {
        return Err(fail("needs exactly two atoms"));
    }
    if q.atoms.iter().any(|a| a.arity() != 2) {
        return Err(fail("both atoms must be binary"));
    }
    let shared = q.atoms[0].var_set().intersect(q.atoms[1].var_set());
    if shared.len() != 1 {
        return Err(fail("atoms must share exactly one variable"));
    }
    let z = shared.iter().next().unwrap();
    let mut private = [0usize; 2];
    let mut z_col = [0usize; 2];
    let mut private_col = [0usize; 2];
    for j in 0..2 {
        let atom = &q.atoms[j];
        z_col[j] = atom.vars.iter().position(|&v| v == z).unwrap();
        private_col[j] = 1 - z_col[j];
        private[j] = atom.vars[private_col[j]];
    }
    Ok(JoinShape {
        z,
        private,
        z_col,
        private_col,
    })
}

/// One heavy hitter's server block.
#[derive(Clone, Debug)]
pub struct HitterAlloc {
    pub h: u64,
    /// Servers allocated to this value.
    pub p_h: u64,
    /// Grid inside the block: [p1, p2] rectangle for both-heavy values,
    /// [p_h] hash side for one-sided ones.
    pub sub_shares: Vec<u64>,
    /// First server id of the block in the run's global layout.
    pub offset: u64,
}

/// Allocation for one class of heavy hitters.
#[derive(Clone, Debug)]
pub struct HeavyAllocation {
    /// "H12", "H1" or "H2".
    pub class: String,
    pub hitters: Vec<HitterAlloc>,
    /// Total servers in the class, sum of p_h.
    pub servers: u64,
    /// The class load term: sqrt(sum of K over the class / p).
    pub l_class: f64,
}

/// The five quantities whose maximum bounds the ideal per-server load
/// of the two-relation algorithm, in tuples.
#[derive(Clone, Debug)]
pub struct JoinLoadTerms {
    pub m1_over_p: f64,
    pub m2_over_p: f64,
    pub l1: f64,
    pub l2: f64,
    pub l12: f64,
    /// max of the five.
    pub l: f64,
}

/// Result of the two-relation skew join simulation.
#[derive(Clone, Debug)]
pub struct SkewJoinRun {
    pub shape: JoinShape,
    /// H12, H1, H2 allocations in that order.
    pub allocations: Vec<HeavyAllocation>,
    pub terms: JoinLoadTerms,
    /// Light stage p plus all heavy blocks.
    pub total_servers: u64,
    /// Loads over the whole virtual layout; shares holds the single
    /// dimension total_servers.
    pub report: LoadReport,
    /// Sorted distinct answers when outputs were requested.
    pub outputs: Option<Vec<Vec<u64>>>,
}

const TAG_LIGHT: u64 = 0x736b_6c74;
const TAG_H12: u64 = 0x736b_3132;
const TAG_H1: u64 = 0x736b_4831;
const TAG_H2: u64 = 0x736b_4832;

fn class_seed(seed: u64, tag: u64, h: u64) -> u64 {
    mix64(seed ^ mix64(tag) ^ mix64(h))
}

/// ceil(p * k / total) without overflow.
fn proportional_servers(p: u64, k: u128, total: u128) -> u64 {
    ((p as u128 * k + total - 1) / total) as u64
}

/// The two-relation algorithm: light hitters by a hash join on z over
/// the first p servers; values heavy on both sides by a p1 x p2
/// rectangle; values heavy on one side by hash-partitioning the large
/// side and broadcasting the small one within the value's block.
pub fn skew_join(
    q: &Query,
    inst: &Instance,
    p: u64,
    seed: u64,
    threshold: HeavyThreshold,
    compute_outputs: bool,
) -> Result<SkewJoinRun> {
    let shape = join_shape(q)?;
    if p == 0 {
        return Err(Error::InvalidArgument("p must be positive".into()));
    }
    let stats = compute_simple_stats(q, inst)?;
    let (m1, m2) = (stats.m[0], stats.m[1]);

    let heavy: [BTreeMap<u64, u64>; 2] = [0, 1].map(|j| {
        detect_heavy_hitters(inst.relation(j), &[shape.z_col[j]], p, threshold)
            .map(|v| v.into_iter().map(|(key, c)| (key[0], c)).collect())
            .unwrap_or_default()
    });
    // Class membership per z-value, in sorted order.
    let mut h12: Vec<(u64, u64, u64)> = Vec::new();
    let mut h1: Vec<(u64, u64)> = Vec::new();
    let mut h2: Vec<(u64, u64)> = Vec::new();
    for (&h, &c1) in &heavy[0] {
        if heavy[1].contains_key(&h) {
            h12.push((h, c1, heavy[1][&h]));
        } else {
            h1.push((h, c1));
        }
    }
    for (&h, &c2) in &heavy[1] {
        if !heavy[0].contains_key(&h) {
            h2.push((h, c2));
        }
    }

    let k12_total: u128 = h12.iter().map(|&(_, a, b)| a as u128 * b as u128).sum();
    let k1_total: u128 = h1.iter().map(|&(_, a)| a as u128).sum();
    let k2_total: u128 = h2.iter().map(|&(_, a)| a as u128).sum();

    let mut next_server = p;
    let mut alloc12 = HeavyAllocation {
        class: "H12".into(),
        hitters: Vec::new(),
        servers: 0,
        l_class: (k12_total as f64 / p as f64).sqrt(),
    };
    for &(h, c1, c2) in &h12 {
        let p_h = proportional_servers(p, c1 as u128 * c2 as u128, k12_total);
        // Rectangle sides: p1 near sqrt(p_h * m1(h)/m2(h)) so that both
        // sides ship about sqrt(m1(h) m2(h)/p_h) tuples; clamped so the
        // rectangle never exceeds the block.
        let p1 = ((p_h as f64 * c1 as f64 / c2 as f64).sqrt().round() as u64).clamp(1, p_h);
        let p2 = p_h / p1;
        alloc12.hitters.push(HitterAlloc {
            h,
            p_h,
            sub_shares: vec![p1, p2],
            offset: next_server,
        });
        alloc12.servers += p_h;
        next_server += p_h;
    }
    let mut side_alloc = |name: &str, list: &[(u64, u64)], total: u128| {
        let mut alloc = HeavyAllocation {
            class: name.into(),
            hitters: Vec::new(),
            servers: 0,
            l_class: (total as f64 / p as f64).sqrt(),
        };
        for &(h, c) in list {
            let p_h = proportional_servers(p, c as u128, total);
            alloc.hitters.push(HitterAlloc {
                h,
                p_h,
                sub_shares: vec![p_h],
                offset: next_server,
            });
            alloc.servers += p_h;
            next_server += p_h;
        }
        alloc
    };
    let alloc1 = side_alloc("H1", &h1, k1_total);
    let alloc2 = side_alloc("H2", &h2, k2_total);
    let total_servers = next_server;

    // Index: z-value -> (class tag, hitter index in its class).
    let mut zmap: BTreeMap<u64, (u8, usize)> = BTreeMap::new();
    for (i, a) in alloc12.hitters.iter().enumerate() {
        zmap.insert(a.h, (0, i));
    }
    for (i, a) in alloc1.hitters.iter().enumerate() {
        zmap.insert(a.h, (1, i));
    }
    for (i, a) in alloc2.hitters.iter().enumerate() {
        zmap.insert(a.h, (2, i));
    }

    let light_hash = HashFamily::new(class_seed(seed, TAG_LIGHT, 0), vec![p]);
    let rect_hashes: Vec<HashFamily> = alloc12
        .hitters
        .iter()
        .map(|a| HashFamily::new(class_seed(seed, TAG_H12, a.h), a.sub_shares.clone()))
        .collect();
    let side_hashes: [Vec<HashFamily>; 2] = [
        alloc1
            .hitters
            .iter()
            .map(|a| HashFamily::new(class_seed(seed, TAG_H1, a.h), a.sub_shares.clone()))
            .collect(),
        alloc2
            .hitters
            .iter()
            .map(|a| HashFamily::new(class_seed(seed, TAG_H2, a.h), a.sub_shares.clone()))
            .collect(),
    ];

    let mut counts: Vec<Vec<u64>> = vec![vec![0; 2]; total_servers as usize];
    let mut fragments: Vec<[Vec<Vec<u64>>; 2]> = if compute_outputs {
        vec![[Vec::new(), Vec::new()]; total_servers as usize]
    } else {
        Vec::new()
    };
    let mut deliver = |server: u64, j: usize, t: &[u64]| {
        counts[server as usize][j] += 1;
        if compute_outputs {
            fragments[server as usize][j].push(t.to_vec());
        }
    };

    for j in 0..2usize {
        for t in inst.relation(j).tuples() {
            let zval = t[shape.z_col[j]];
            let private = t[shape.private_col[j]];
            match zmap.get(&zval) {
                None => deliver(light_hash.hash(0, zval), j, t),
                Some(&(0, i)) => {
                    // Rectangle: S1 fixes the row, S2 the column.
                    let a = &alloc12.hitters[i];
                    let (rows, cols) = (a.sub_shares[0], a.sub_shares[1]);
                    if j == 0 {
                        let row = rect_hashes[i].hash(0, private);
                        for c in 0..cols {
                            deliver(a.offset + row * cols + c, j, t);
                        }
                    } else {
                        let col = rect_hashes[i].hash(1, private);
                        for r in 0..rows {
                            deliver(a.offset + r * cols + col, j, t);
                        }
                    }
                }
                Some(&(tag, i)) => {
                    // One-sided: the heavy side hash-partitions on its
                    // private variable, the light side broadcasts.
                    let (alloc, hashes) = if tag == 1 {
                        (&alloc1, &side_hashes[0])
                    } else {
                        (&alloc2, &side_hashes[1])
                    };
                    let a = &alloc.hitters[i];
                    let heavy_side = if tag == 1 { 0 } else { 1 };
                    if j == heavy_side {
                        deliver(a.offset + hashes[i].hash(0, private), j, t);
                    } else {
                        for s in 0..a.p_h {
                            deliver(a.offset + s, j, t);
                        }
                    }
                }
            }
        }
    }

    let mut outputs_per_server: Vec<u64> = vec![0; total_servers as usize];
    let mut answers: Option<Vec<Vec<u64>>> = None;
    if compute_outputs {
        let mut set: BTreeSet<Vec<u64>> = BTreeSet::new();
        for (s, frags) in fragments.iter().enumerate() {
            let rows = local_join(q, &[frags[0].clone(), frags[1].clone()]);
            outputs_per_server[s] = rows.len() as u64;
            set.extend(rows);
        }
        answers = Some(set.into_iter().collect());
    }

    let report = LoadReport::from_counts(
        &[total_servers],
        stats.bits.clone(),
        counts,
        outputs_per_server,
        &stats.m,
    );
    let terms = JoinLoadTerms {
        m1_over_p: m1 as f64 / p as f64,
        m2_over_p: m2 as f64 / p as f64,
        l1: alloc1.l_class,
        l2: alloc2.l_class,
        l12: alloc12.l_class,
        l: [
            m1 as f64 / p as f64,
            m2 as f64 / p as f64,
            alloc1.l_class,
            alloc2.l_class,
            alloc12.l_class,
        ]
        .into_iter()
        .fold(0.0, f64::max),
    };
    Ok(SkewJoinRun {
        shape,
        allocations: vec![alloc12, alloc1, alloc2],
        terms,
        total_servers,
        report,
        outputs: answers,
    })
}

/// Exponent LP for one bin combination, solved in both size units. The
/// bit program drives routing; the tuple program is the quantity the
/// lower bounds speak about.
#[derive(Clone, Debug)]
pub struct BinLpSolution {
    pub x: VarSet,
    pub bins: Vec<u32>,
    pub alpha: Rat,
    /// Routing exponents, zero on x.
    pub e_bits: Vec<Rat>,
    pub lambda_bits: Rat,
    /// Same program over tuple counts, zero on x.
    pub e_tuples: Vec<Rat>,
    pub lambda_tuples: Rat,
}

/// Solves min lambda subject to, per atom, lambda + sum of e_i over
/// vars(S_j) - x_j >= mu_j - beta_j, with sum of e over V - x at most
/// 1 - alpha. The empty combination with alpha = 0 is exactly the share
/// exponent program.
pub fn solve_bin_lp(
    q: &Query,
    combo: &BinCombination,
    stats: &SimpleStats,
    p: u64,
    alpha: Rat,
) -> Result<BinLpSolution> {
    if alpha.is_negative() || alpha > rat_int(1) {
        return Err(Error::InvalidArgument(format!(
            "alpha = {} outside [0, 1]",
            rat_to_string(&alpha)
        )));
    }
    let budget = rat_int(1) - &alpha;
    let mu_bits = mu_vector(&stats.bits, p)?;
    let mu_tuples: Vec<Rat> = stats
        .m
        .iter()
        .map(|&m| dyadic_log(m as f64, p))
        .collect::<Result<_>>()?;
    let solve = |mu: &[Rat]| -> Result<(Vec<Rat>, Rat)> {
        let rhs: Vec<Rat> = mu
            .iter()
            .zip(&combo.beta)
            .map(|(m, b)| m - b)
            .collect();
        solve_exponent_lp_core(q, &rhs, budget.clone(), combo.x)
    };
    let (e_bits, lambda_bits) = solve(&mu_bits)?;
    let (e_tuples, lambda_tuples) = solve(&mu_tuples)?;
    Ok(BinLpSolution {
        x: combo.x,
        bins: combo.bins.clone(),
        alpha,
        e_bits,
        lambda_bits,
        e_tuples,
        lambda_tuples,
    })
}

/// Is a hitter with `count` matching tuples in S_j overweight for the
/// processed combination `b_prime`? The threshold is
/// n_bc * m_j / p^(beta'_j + sum of e_i over x_j - x'), strictly
/// exceeded; exact arithmetic whenever the exponent's denominator is
/// small, f64 otherwise (the dyadic snap makes ties beyond 2^-48
/// meaningless anyway).
pub fn detect_overweight(
    count: u64,
    j: usize,
    x_j: VarSet,
    b_prime: &BinCombination,
    lp: &BinLpSolution,
    m_j: u64,
    n_bc: u64,
    p: u64,
) -> bool {
    let mut exp = b_prime.beta[j].clone();
    for i in x_j.minus(b_prime.x).iter() {
        exp += &lp.e_bits[i];
    }
    debug_assert!(!exp.is_negative());
    let rhs = n_bc as u128 * m_j as u128;
    if exp.is_zero() {
        return count as u128 > rhs;
    }
    if let (Some(num), Some(den)) = (exp.numer().to_u64(), exp.denom().to_u64()) {
        if den <= 64 && num <= 256 {
            // count * p^(num/den) > rhs  iff  count^den * p^num > rhs^den.
            let lhs = BigUint::from(count).pow(den as u32) * BigUint::from(p).pow(num as u32);
            return lhs > BigUint::from(rhs).pow(den as u32);
        }
    }
    count as f64 * (p as f64).powf(rat_to_f64(&exp)) > rhs as f64
}

/// Processed hitter sets and LP solutions, aligned with ctx.combos.
#[derive(Clone, Debug)]
pub struct ProcessedSets {
    /// C'(B) per combination: assignments to B.x in ascending variable
    /// order, sorted. The empty combination holds the empty assignment.
    pub c_prime: Vec<Vec<Vec<u64>>>,
    pub lps: Vec<BinLpSolution>,
}

/// Projection of an assignment on `x` onto the subset `sub`, both in
/// ascending variable order.
fn project_assignment(x: VarSet, h: &[u64], sub: VarSet) -> Vec<u64> {
    x.iter()
        .zip(h)
        .filter(|&(v, _)| sub.contains(v))
        .map(|(_, &val)| val)
        .collect()
}

/// Builds every C'(B) by induction on |x|, solving each combination's
/// LP as soon as its processed set is final. An assignment joins C'(B)
/// when it extends some processed h' of a smaller combination B' by
/// new variables of a single atom whose extended projection is
/// overweight for B'.
pub fn build_c_prime(q: &Query, inst: &Instance, ctx: &BinContext) -> Result<ProcessedSets> {
    let stats = compute_simple_stats(q, inst)?;
    let n_bc = ctx.n_bc();
    let ell = q.num_atoms();
    let mut order: Vec<usize> = (0..ctx.combos.len()).collect();
    order.sort_by_key(|&bi| (ctx.combos[bi].x.len(), bi));

    let mut pending: Vec<BTreeSet<Vec<u64>>> = vec![BTreeSet::new(); ctx.combos.len()];
    let mut lps: Vec<Option<BinLpSolution>> = vec![None; ctx.combos.len()];
    for bi in order {
        let combo = &ctx.combos[bi];
        if combo.x.is_empty() {
            pending[bi].insert(Vec::new());
        }
        let members: Vec<Vec<u64>> = pending[bi].iter().cloned().collect();
        if members.len() > ctx.p as usize {
            return Err(Error::ProcessedSetOverflow {
                size: members.len(),
                p: ctx.p,
            });
        }
        let alpha = dyadic_log_ceil(members.len().max(1) as f64, ctx.p)?;
        let lp = solve_bin_lp(q, combo, &stats, ctx.p, alpha)?;

        for h in &members {
            for (j, atom) in q.atoms.iter().enumerate() {
                let vs = atom.var_set();
                for w in vs.minus(combo.x).subsets() {
                    if w.is_empty() {
                        continue;
                    }
                    let x_new = combo.x.union(w);
                    let x_j_new = x_new.intersect(vs);
                    let Some(ba) = ctx.bins_of(j, x_j_new) else {
                        continue;
                    };
                    let h_at_xj = project_assignment(combo.x, h, x_j_new);
                    for (g, &(_, count)) in &ba.heavy {
                        if project_assignment(x_j_new, g, combo.x) != h_at_xj {
                            continue;
                        }
                        if !detect_overweight(count, j, x_j_new, combo, &lp, stats.m[j], n_bc, ctx.p)
                        {
                            continue;
                        }
                        // Assemble the extension on x_new and file it
                        // under its realized bin combination.
                        let mut values: BTreeMap<usize, u64> = combo.x.iter().zip(h.iter().copied()).collect();
                        values.extend(x_j_new.iter().zip(g.iter().copied()));
                        let h_new: Vec<u64> = x_new.iter().map(|v| values[&v]).collect();
                        let mut bins = vec![0u32; ell];
                        for (jj, ajj) in q.atoms.iter().enumerate() {
                            let xjj = x_new.intersect(ajj.var_set());
                            if !xjj.is_empty() {
                                let key = project_assignment(x_new, &h_new, xjj);
                                bins[jj] = ctx.bins_of(jj, xjj).unwrap().bin_of(&key);
                            }
                        }
                        let target = ctx.find(x_new, &bins).ok_or_else(|| {
                            Error::InvalidArgument(
                                "internal: realized bin combination missing from enumeration"
                                    .into(),
                            )
                        })?;
                        pending[target].insert(h_new);
                    }
                }
            }
        }
        lps[bi] = Some(lp);
    }
    Ok(ProcessedSets {
        c_prime: pending
            .into_iter()
            .map(|s| s.into_iter().collect())
            .collect(),
        lps: lps.into_iter().map(Option::unwrap).collect(),
    })
}

/// Residual subinstances of one combination: which tuples each hitter's
/// servers receive from each relation.
#[derive(Clone, Debug)]
pub struct ResidualSubinstance {
    pub combo_index: usize,
    /// Atoms with nonempty x_j.
    pub a_b: Vec<usize>,
    /// per_hitter[j][hi]: full tuples of S_j for hitter hi; empty at
    /// untouched atoms.
    pub per_hitter: Vec<Vec<Vec<Vec<u64>>>>,
    /// shared[j]: full tuples of S_j for untouched atoms, shared by all
    /// hitters; empty at touched atoms.
    pub shared: Vec<Vec<Vec<u64>>>,
}

impl ResidualSubinstance {
    pub fn tuples_for(&self, j: usize, hitter: usize) -> &[Vec<u64>] {
        if self.per_hitter[j].is_empty() {
            &self.shared[j]
        } else {
            &self.per_hitter[j][hitter]
        }
    }

    /// Total tuples routed for relation j across hitters (untouched
    /// atoms count once per hitter because each block receives them).
    pub fn routed_tuples(&self, j: usize, hitters: usize) -> u64 {
        if self.per_hitter[j].is_empty() {
            self.shared[j].len() as u64 * hitters as u64
        } else {
            self.per_hitter[j].iter().map(|v| v.len() as u64).sum()
        }
    }
}

/// For each touched atom, tuples containing the hitter's projection and
/// no overweight proper extension of it; for untouched atoms, tuples
/// containing no overweight hitter at all.
pub fn build_subinstances(
    q: &Query,
    inst: &Instance,
    ctx: &BinContext,
    sets: &ProcessedSets,
    combo_index: usize,
) -> Result<ResidualSubinstance> {
    let combo = &ctx.combos[combo_index];
    let lp = &sets.lps[combo_index];
    let members = &sets.c_prime[combo_index];
    let stats = compute_simple_stats(q, inst)?;
    let n_bc = ctx.n_bc();

    let mut a_b = Vec::new();
    let mut per_hitter: Vec<Vec<Vec<Vec<u64>>>> = vec![Vec::new(); q.num_atoms()];
    let mut shared: Vec<Vec<Vec<u64>>> = vec![Vec::new(); q.num_atoms()];

    for (j, atom) in q.atoms.iter().enumerate() {
        let vs = atom.var_set();
        let x_j = combo.x.intersect(vs);
        let touched = !x_j.is_empty();
        if touched {
            a_b.push(j);
            per_hitter[j] = vec![Vec::new(); members.len()];
        }

        // Overweight projections, per proper superset of x_j.
        let mut overweight: Vec<(Vec<usize>, BTreeSet<Vec<u64>>)> = Vec::new();
        for x_ext in vs.subsets() {
            if x_ext == x_j || !x_ext.intersect(x_j).eq(&x_j) || x_ext.is_empty() {
                continue;
            }
            let Some(ba) = ctx.bins_of(j, x_ext) else {
                continue;
            };
            let keys: BTreeSet<Vec<u64>> = ba
                .heavy
                .iter()
                .filter(|(_, &(_, count))| {
                    detect_overweight(count, j, x_ext, combo, lp, stats.m[j], n_bc, ctx.p)
                })
                .map(|(g, _)| g.clone())
                .collect();
            if !keys.is_empty() {
                overweight.push((atom.positions_of(x_ext), keys));
            }
        }

        // Hitter lookup by the atom's projection of the combination's x.
        let cols_j = atom.positions_of(x_j);
        let mut by_projection: BTreeMap<Vec<u64>, Vec<usize>> = BTreeMap::new();
        for (hi, h) in members.iter().enumerate() {
            by_projection
                .entry(project_assignment(combo.x, h, x_j))
                .or_default()
                .push(hi);
        }

        for t in inst.relation(j).tuples() {
            let dropped = overweight.iter().any(|(cols, keys)| {
                let key: Vec<u64> = cols.iter().map(|&c| t[c]).collect();
                keys.contains(&key)
            });
            if dropped {
                continue;
            }
            if touched {
                let key: Vec<u64> = cols_j.iter().map(|&c| t[c]).collect();
                if let Some(his) = by_projection.get(&key) {
                    for &hi in his {
                        per_hitter[j][hi].push(t.clone());
                    }
                }
            } else {
                shared[j].push(t.clone());
            }
        }
    }
    Ok(ResidualSubinstance {
        combo_index,
        a_b,
        per_hitter,
        shared,
    })
}

/// Outcome of one combination's pipeline.
#[derive(Clone, Debug)]
pub struct ComboOutcome {
    pub combo_index: usize,
    pub label: String,
    pub lp: BinLpSolution,
    pub c_prime_size: usize,
    /// Virtual servers per hitter.
    pub p_h: u64,
    /// Residual grid dimensions inside a hitter's block.
    pub sub_shares: Vec<u64>,
    pub virtual_servers: u64,
    /// Loads over this combination's virtual servers; bits use residual
    /// tuple widths.
    pub report: LoadReport,
}

/// Result of the general bin-combination algorithm.
#[derive(Clone, Debug)]
pub struct BinComboRun {
    /// Effective p, a power of two.
    pub p: u64,
    pub t: u32,
    pub n_bc: u64,
    pub seed: u64,
    /// Combinations with nonempty C'(B), in enumeration order.
    pub combos: Vec<ComboOutcome>,
    pub virtual_total: u64,
    pub max_virtual_load_bits: f64,
    pub max_virtual_load_tuples: u64,
    /// All virtual servers folded onto p physical ones round-robin.
    pub physical: LoadReport,
    /// Sorted distinct answers when outputs were requested.
    pub outputs: Option<Vec<Vec<u64>>>,
}

impl BinComboRun {
    /// `{label: {x, beta, alpha, lambda, exponents, C_prime_size,
    /// max_load_bits}}` per active combination.
    pub fn diagnostics(&self, q: &Query) -> Value {
        let mut map = serde_json::Map::new();
        for c in &self.combos {
            let x_names: Vec<&str> = c.lp.x.iter().map(|i| q.var_name(i)).collect();
            let beta: Vec<String> = self
                .combo_beta(c)
                .iter()
                .map(rat_to_string)
                .collect();
            let mut exps = serde_json::Map::new();
            for i in 0..q.num_vars() {
                if !c.lp.x.contains(i) {
                    exps.insert(
                        q.var_name(i).to_string(),
                        Value::String(rat_to_string(&c.lp.e_bits[i])),
                    );
                }
            }
            map.insert(
                c.label.clone(),
                json!({
                    "x": x_names,
                    "beta": beta,
                    "alpha": rat_to_string(&c.lp.alpha),
                    "lambda": rat_to_string(&c.lp.lambda_bits),
                    "exponents": Value::Object(exps),
                    "C_prime_size": c.c_prime_size,
                    "max_load_bits": c.report.l_max_bits,
                }),
            );
        }
        Value::Object(map)
    }

    fn combo_beta<'a>(&self, c: &'a ComboOutcome) -> Vec<Rat> {
        c.lp.bins.iter().map(|&b| combo_bin_beta(b, self.t)).collect()
    }
}

fn combo_bin_beta(bin: u32, t: u32) -> Rat {
    if bin == 0 {
        rat_int(0)
    } else {
        crate::ratio::rat((bin - 1) as i64, t as i64)
    }
}

/// Decrement the largest share until the grid fits in `cap` servers.
fn clamp_grid(shares: &mut [u64], cap: u64) {
    loop {
        let product: u64 = shares.iter().product();
        if product <= cap {
            return;
        }
        let i = (0..shares.len())
            .filter(|&i| shares[i] > 1)
            .max_by_key(|&i| (shares[i], std::cmp::Reverse(i)))
            .expect("grid of all-ones cannot exceed a positive cap");
        shares[i] -= 1;
    }
}

fn derived_seed(seed: u64, combo_index: usize, hitter: usize) -> u64 {
    // The empty combination reuses the caller's seed verbatim, so a
    // skew-free run routes bit-identically to the plain pass.
    if combo_index == 0 {
        seed
    } else {
        mix64(mix64(seed ^ (0x62_u64 << 32) ^ combo_index as u64) ^ hitter as u64)
    }
}

fn assemble_report(
    shares: Vec<u64>,
    bits_per_tuple: Vec<f64>,
    per_server: Vec<ServerLoad>,
    input_bits: f64,
) -> LoadReport {
    let servers = per_server.len() as u64;
    let l_max_bits = per_server.iter().map(|s| s.bits).fold(0.0, f64::max);
    let l_max_tuples = per_server
        .iter()
        .map(|s| s.tuples.iter().sum::<u64>())
        .max()
        .unwrap_or(0);
    let total_bits: f64 = per_server.iter().map(|s| s.bits).sum();
    LoadReport {
        servers,
        shares,
        bits_per_tuple,
        l_max_bits,
        l_max_tuples,
        l_mean_bits: if servers > 0 {
            total_bits / servers as f64
        } else {
            0.0
        },
        replication_rate: if input_bits > 0.0 {
            total_bits / input_bits
        } else {
            0.0
        },
        per_server,
    }
}

/// Runs the bin-combination algorithm: every combination with a
/// nonempty processed set gets its hitters' blocks of p^(1-alpha)
/// virtual servers each, the residual query is hash-routed inside each
/// block with the combination's rounded exponent shares, and outputs
/// are the deduplicated union.
pub fn run_bin_combination(
    q: &Query,
    inst: &Instance,
    p: u64,
    seed: u64,
    policy: PowerOfTwoPolicy,
    compute_outputs: bool,
) -> Result<BinComboRun> {
    let ctx = enumerate_bin_combinations(q, inst, p, policy)?;
    if inst.relations().iter().any(|r| r.cardinality() == 0) {
        // Empty input: nothing to route, nothing to answer.
        return Ok(BinComboRun {
            p: ctx.p,
            t: ctx.t,
            n_bc: ctx.n_bc(),
            seed,
            combos: Vec::new(),
            virtual_total: 0,
            max_virtual_load_bits: 0.0,
            max_virtual_load_tuples: 0,
            physical: assemble_report(
                vec![ctx.p],
                vec![0.0; q.num_atoms()],
                vec![
                    ServerLoad {
                        tuples: vec![0; q.num_atoms()],
                        bits: 0.0,
                        outputs: 0
                    };
                    ctx.p as usize
                ],
                0.0,
            ),
            outputs: compute_outputs.then(Vec::new),
        });
    }
    let sets = build_c_prime(q, inst, &ctx)?;
    let stats = compute_simple_stats(q, inst)?;
    let log_n = (inst.n as f64).log2();

    let mut outcomes: Vec<ComboOutcome> = Vec::new();
    let mut physical_loads: Vec<ServerLoad> = vec![
        ServerLoad {
            tuples: vec![0; q.num_atoms()],
            bits: 0.0,
            outputs: 0,
        };
        ctx.p as usize
    ];
    let mut virtual_total: u64 = 0;
    let mut max_virtual_bits: f64 = 0.0;
    let mut max_virtual_tuples: u64 = 0;
    let mut answers: BTreeSet<Vec<u64>> = BTreeSet::new();

    for bi in 0..ctx.combos.len() {
        let members = &sets.c_prime[bi];
        if members.is_empty() {
            continue;
        }
        let combo = &ctx.combos[bi];
        let lp = &sets.lps[bi];
        let sub = build_subinstances(q, inst, &ctx, &sets, bi)?;
        let (rq, back) = q.residual(combo.x);
        let res_bits: Vec<f64> = rq.atoms.iter().map(|a| a.arity() as f64 * log_n).collect();

        let e_sub: Vec<Rat> = back.iter().map(|&orig| lp.e_bits[orig].clone()).collect();
        let p_h = (ctx.p / members.len() as u64).max(1);
        let mut sub_shares = round_shares(&e_sub, ctx.p)?;
        clamp_grid(&mut sub_shares, p_h);
        let grid = ServerGrid::new(&sub_shares)?;
        let block = grid.total;
        let combo_servers = block * members.len() as u64;

        let mut loads: Vec<ServerLoad> = vec![
            ServerLoad {
                tuples: vec![0; q.num_atoms()],
                bits: 0.0,
                outputs: 0,
            };
            combo_servers as usize
        ];
        let mut frags: Vec<Vec<Vec<Vec<u64>>>> = if compute_outputs {
            vec![vec![Vec::new(); q.num_atoms()]; combo_servers as usize]
        } else {
            Vec::new()
        };
        let res_cols: Vec<Vec<usize>> = q
            .atoms
            .iter()
            .map(|a| {
                (0..a.arity())
                    .filter(|&c| !combo.x.contains(a.vars[c]))
                    .collect()
            })
            .collect();

        for hi in 0..members.len() {
            let hashes = HashFamily::new(derived_seed(seed, bi, hi), sub_shares.clone());
            for j in 0..q.num_atoms() {
                for t in sub.tuples_for(j, hi) {
                    let rt: Vec<u64> = res_cols[j].iter().map(|&c| t[c]).collect();
                    for d in hc_route(&rq.atoms[j], &rt, &hashes, &grid) {
                        let vid = hi as u64 * block + d;
                        loads[vid as usize].tuples[j] += 1;
                        loads[vid as usize].bits += res_bits[j];
                        if compute_outputs {
                            frags[vid as usize][j].push(rt.clone());
                        }
                    }
                }
            }
        }

        if compute_outputs {
            for (vid, f) in frags.iter().enumerate() {
                let rows = local_join(&rq, f);
                loads[vid].outputs = rows.len() as u64;
                let hi = vid as u64 / block;
                let h = &members[hi as usize];
                for row in rows {
                    let mut full = vec![0u64; q.num_vars()];
                    for (ri, &orig) in back.iter().enumerate() {
                        full[orig] = row[ri];
                    }
                    for (var, &val) in combo.x.iter().zip(h) {
                        full[var] = val;
                    }
                    answers.insert(full);
                }
            }
        }

        for (vid, l) in loads.iter().enumerate() {
            let phys = &mut physical_loads[((virtual_total + vid as u64) % ctx.p) as usize];
            for j in 0..q.num_atoms() {
                phys.tuples[j] += l.tuples[j];
            }
            phys.bits += l.bits;
            phys.outputs += l.outputs;
            max_virtual_bits = max_virtual_bits.max(l.bits);
            max_virtual_tuples = max_virtual_tuples.max(l.tuples.iter().sum());
        }

        let input_bits: f64 = (0..q.num_atoms())
            .map(|j| sub.routed_tuples(j, members.len()) as f64 * res_bits[j])
            .sum();
        let report = assemble_report(sub_shares.clone(), res_bits, loads, input_bits);
        virtual_total += combo_servers;
        outcomes.push(ComboOutcome {
            combo_index: bi,
            label: combo.label(q),
            lp: lp.clone(),
            c_prime_size: members.len(),
            p_h,
            sub_shares,
            virtual_servers: combo_servers,
            report,
        });
    }

    let total_input_bits: f64 = stats
        .m
        .iter()
        .zip(&stats.bits)
        .map(|(&m, &b)| m as f64 * b)
        .sum();
    let physical = assemble_report(
        vec![ctx.p],
        stats.bits.clone(),
        physical_loads,
        total_input_bits,
    );
    Ok(BinComboRun {
        p: ctx.p,
        t: ctx.t,
        n_bc: ctx.n_bc(),
        seed,
        combos: outcomes,
        virtual_total,
        max_virtual_load_bits: max_virtual_bits,
        max_virtual_load_tuples: max_virtual_tuples,
        physical,
        outputs: compute_outputs.then(|| answers.into_iter().collect()),
    })
}
