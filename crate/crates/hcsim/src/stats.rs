//! Database statistics: cardinalities, frequencies, heavy hitters,
//! frequency bins, and bin combinations.
//!
//! Conventions used throughout:
//!
//! - domain values are dense integers `1..=n`;
//! - a frequency is the exact count of tuples agreeing with a partial
//!   assignment (no sampling, no sketches);
//! - a partial assignment h_j to a variable subset x_j is keyed by the
//!   values in ascending *variable id* order, matching
//!   [`Atom::positions_of`](crate::query::Atom::positions_of);
//! - heavy hitters are values with frequency above m_j/p, strict by
//!   default ([`HeavyThreshold::Strict`]); the inclusive variant is
//!   flag-gated because the two-relation skew join is sometimes stated
//!   with `>=`;
//! - for p = 2^t, heavy frequencies fall into bins b = 1..=t, where bin b
//!   holds the h with m_j/2^(b-1) >= m_j(h) > m_j/2^b and has bin exponent
//!   beta_b = (b-1)/t = log_p 2^(b-1); everything lighter (including
//!   values absent from the relation) is in the light bin b = t+1 with
//!   beta = 1.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::query::{Query, VarSet};
use crate::ratio::{rat, rat_int, Rat};

/// A named relation: a duplicate-free set of `arity`-tuples.
/// Tuples are kept sorted, so iteration order is canonical.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Relation {
    pub name: String,
    pub arity: usize,
    tuples: Vec<Vec<u64>>,
}

impl Relation {
    pub fn new(name: impl Into<String>, arity: usize, mut tuples: Vec<Vec<u64>>) -> Result<Self> {
        let name = name.into();
        for t in &tuples {
            if t.len() != arity {
                return Err(Error::ArityMismatch {
                    relation: name,
                    expected: arity,
                    got: t.len(),
                });
            }
            if let Some(&v) = t.iter().find(|&&v| v == 0) {
                return Err(Error::DomainViolation { value: v, n: 0 });
            }
        }
        tuples.sort_unstable();
        tuples.dedup();
        Ok(Relation {
            name,
            arity,
            tuples,
        })
    }

    pub fn cardinality(&self) -> u64 {
        self.tuples.len() as u64
    }

    pub fn tuples(&self) -> &[Vec<u64>] {
        &self.tuples
    }

    pub fn max_value(&self) -> u64 {
        self.tuples
            .iter()
            .flat_map(|t| t.iter().copied())
            .max()
            .unwrap_or(1)
    }

    /// Projection counts onto the given columns, keyed by projected tuple.
    pub fn freq_map(&self, cols: &[usize]) -> BTreeMap<Vec<u64>, u64> {
        let mut map = BTreeMap::new();
        for t in &self.tuples {
            let key: Vec<u64> = cols.iter().map(|&c| t[c]).collect();
            *map.entry(key).or_insert(0) += 1;
        }
        map
    }

    /// Exact selection count: how many tuples have `h` on `cols`.
    /// `cols = []` selects everything, so the count is the cardinality.
    pub fn frequency(&self, cols: &[usize], h: &[u64]) -> Result<u64> {
        if h.len() != cols.len() || cols.iter().any(|&c| c >= self.arity) {
            return Err(Error::ArityMismatch {
                relation: self.name.clone(),
                expected: cols.len().min(self.arity),
                got: h.len(),
            });
        }
        Ok(self
            .tuples
            .iter()
            .filter(|t| cols.iter().zip(h).all(|(&c, &v)| t[c] == v))
            .count() as u64)
    }
}

/// A database instance for a query: shared domain `[1..=n]` plus one
/// relation per atom, in atom order.
#[derive(Clone, Debug)]
pub struct Instance {
    pub n: u64,
    relations: Vec<Relation>,
}

impl Instance {
    /// Builds an instance, reordering `relations` to match the query's
    /// atoms by name and validating arity and domain.
    pub fn new(q: &Query, n: u64, mut relations: Vec<Relation>) -> Result<Self> {
        let mut ordered = Vec::with_capacity(q.num_atoms());
        for atom in &q.atoms {
            let idx = relations
                .iter()
                .position(|r| r.name == atom.relation)
                .ok_or_else(|| Error::UnknownRelation(atom.relation.clone()))?;
            let rel = relations.swap_remove(idx);
            if rel.arity != atom.arity() {
                return Err(Error::ArityMismatch {
                    relation: rel.name,
                    expected: atom.arity(),
                    got: rel.arity,
                });
            }
            if let Some(v) = rel
                .tuples
                .iter()
                .flat_map(|t| t.iter().copied())
                .find(|&v| v > n)
            {
                return Err(Error::DomainViolation { value: v, n });
            }
            ordered.push(rel);
        }
        if let Some(extra) = relations.first() {
            return Err(Error::UnknownRelation(extra.name.clone()));
        }
        Ok(Instance {
            n,
            relations: ordered,
        })
    }

    pub fn relation(&self, j: usize) -> &Relation {
        &self.relations[j]
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }
}

/// Cardinalities m_j and bit sizes M_j = a_j * m_j * log2(n).
#[derive(Clone, Debug, PartialEq)]
pub struct SimpleStats {
    pub n: u64,
    pub m: Vec<u64>,
    pub bits: Vec<f64>,
}

impl SimpleStats {
    pub fn total_bits(&self) -> f64 {
        self.bits.iter().sum()
    }

    pub fn to_json(&self, q: &Query) -> Value {
        let mut per_atom = serde_json::Map::new();
        for (j, atom) in q.atoms.iter().enumerate() {
            per_atom.insert(
                atom.relation.clone(),
                json!({"m": self.m[j], "M_bits": self.bits[j]}),
            );
        }
        json!({"n": self.n, "relations": Value::Object(per_atom)})
    }
}

pub fn compute_simple_stats(q: &Query, inst: &Instance) -> Result<SimpleStats> {
    if inst.n < 2 {
        return Err(Error::InvalidArgument(format!(
            "domain size {} is degenerate (log2 n <= 0)",
            inst.n
        )));
    }
    let logn = (inst.n as f64).log2();
    let m: Vec<u64> = inst.relations.iter().map(|r| r.cardinality()).collect();
    let bits = q
        .atoms
        .iter()
        .zip(&m)
        .map(|(a, &mj)| a.arity() as f64 * mj as f64 * logn)
        .collect();
    Ok(SimpleStats {
        n: inst.n,
        m,
        bits,
    })
}

/// Per-atom frequency statistics for a variable set x: for each atom j,
/// the exact counts m_j(h_j) over the projections h_j onto x_j = x
/// intersected with vars(S_j). For x_j = empty the map is `{() -> m_j}`.
#[derive(Clone, Debug)]
pub struct XStats {
    pub x: VarSet,
    /// positions[j]: column positions of x_j inside atom j.
    pub positions: Vec<Vec<usize>>,
    pub freq: Vec<BTreeMap<Vec<u64>, u64>>,
}

impl XStats {
    pub fn frequency(&self, j: usize, h: &[u64]) -> u64 {
        self.freq[j].get(h).copied().unwrap_or(0)
    }
}

pub fn compute_x_stats(q: &Query, inst: &Instance, x: VarSet) -> XStats {
    let mut positions = Vec::with_capacity(q.num_atoms());
    let mut freq = Vec::with_capacity(q.num_atoms());
    for (j, atom) in q.atoms.iter().enumerate() {
        let cols = atom.positions_of(x);
        let map = if cols.is_empty() {
            BTreeMap::from([(Vec::new(), inst.relation(j).cardinality())])
        } else {
            inst.relation(j).freq_map(&cols)
        };
        positions.push(cols);
        freq.push(map);
    }
    XStats { x, positions, freq }
}

/// Heavy-hitter threshold convention. The bin machinery always uses the
/// strict form; the inclusive form only changes how the two-relation skew
/// join classifies borderline values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum HeavyThreshold {
    /// m_j(h) > m_j / p
    #[default]
    Strict,
    /// m_j(h) >= m_j / p
    Inclusive,
}

impl HeavyThreshold {
    pub fn is_heavy(&self, count: u64, m: u64, p: u64) -> bool {
        match self {
            // Exact integer comparisons; count > m/p iff count*p > m.
            HeavyThreshold::Strict => (count as u128) * (p as u128) > m as u128,
            HeavyThreshold::Inclusive => (count as u128) * (p as u128) >= m as u128,
        }
    }
}

/// Values of the given columns with frequency above m/p, sorted by value.
pub fn detect_heavy_hitters(
    rel: &Relation,
    cols: &[usize],
    p: u64,
    thr: HeavyThreshold,
) -> Result<Vec<(Vec<u64>, u64)>> {
    if cols.iter().any(|&c| c >= rel.arity) {
        return Err(Error::ArityMismatch {
            relation: rel.name.clone(),
            expected: rel.arity,
            got: cols.len(),
        });
    }
    let m = rel.cardinality();
    let map = if cols.is_empty() {
        BTreeMap::from([(Vec::new(), m)])
    } else {
        rel.freq_map(cols)
    };
    Ok(map
        .into_iter()
        .filter(|&(_, c)| thr.is_heavy(c, m, p))
        .collect())
}

/// What to do when p is not a power of two (the bin construction needs
/// one).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PowerOfTwoPolicy {
    #[default]
    Reject,
    RoundDown,
}

pub fn effective_power_of_two(p: u64, policy: PowerOfTwoPolicy) -> Result<(u64, u32)> {
    if p < 2 {
        return Err(Error::InvalidArgument(format!(
            "bin construction needs p >= 2, got {p}"
        )));
    }
    if p.is_power_of_two() {
        return Ok((p, p.trailing_zeros()));
    }
    match policy {
        PowerOfTwoPolicy::Reject => Err(Error::InvalidArgument(format!(
            "p = {p} is not a power of two (use the round-down policy to allow it)"
        ))),
        PowerOfTwoPolicy::RoundDown => {
            let t = 63 - p.leading_zeros();
            Ok((1u64 << t, t))
        }
    }
}

/// Frequency bins of one relation's projections onto one column set,
/// for p = 2^t servers.
#[derive(Clone, Debug)]
pub struct BinAssignment {
    pub p: u64,
    pub t: u32,
    pub m: u64,
    /// heavy hitter -> (bin index in 1..=t, frequency).
    pub heavy: BTreeMap<Vec<u64>, (u32, u64)>,
    /// Distinct projections present in the data (heavy + realized light).
    pub distinct: u64,
}

/// Smallest b >= 1 with count > m / 2^b; the light bin t+1 when that
/// exceeds t. Exact integer arithmetic.
pub fn bin_index_for_count(count: u64, m: u64, t: u32) -> u32 {
    debug_assert!(count >= 1);
    for b in 1..=t {
        if (count as u128) << b > m as u128 {
            return b;
        }
    }
    t + 1
}

impl BinAssignment {
    /// Bin index of an arbitrary projection (absent values are light).
    pub fn bin_of(&self, h: &[u64]) -> u32 {
        self.heavy.get(h).map(|&(b, _)| b).unwrap_or(self.t + 1)
    }

    pub fn frequency_of(&self, h: &[u64]) -> Option<u64> {
        self.heavy.get(h).map(|&(_, c)| c)
    }

    /// Bin exponent beta_b = log_p 2^(b-1); exactly (b-1)/t since p = 2^t.
    /// The light bin t+1 has beta = 1.
    pub fn beta(&self, b: u32) -> Rat {
        debug_assert!(b >= 1 && b <= self.t + 1);
        rat((b - 1) as i64, self.t as i64)
    }

    /// Heavy hitters of bin b, sorted by value.
    pub fn bin_members(&self, b: u32) -> Vec<(&Vec<u64>, u64)> {
        self.heavy
            .iter()
            .filter(|(_, &(bb, _))| bb == b)
            .map(|(h, &(_, c))| (h, c))
            .collect()
    }

    pub fn heavy_count(&self) -> u64 {
        self.heavy.len() as u64
    }
}

/// Assigns the projections of `rel` onto `cols` to frequency bins.
pub fn assign_bins(
    rel: &Relation,
    cols: &[usize],
    p: u64,
    policy: PowerOfTwoPolicy,
) -> Result<BinAssignment> {
    let (p_eff, t) = effective_power_of_two(p, policy)?;
    let m = rel.cardinality();
    let map = if cols.is_empty() {
        if m == 0 {
            BTreeMap::new()
        } else {
            BTreeMap::from([(Vec::new(), m)])
        }
    } else {
        rel.freq_map(cols)
    };
    let distinct = map.len() as u64;
    let heavy = map
        .into_iter()
        .filter_map(|(h, c)| {
            let b = bin_index_for_count(c, m, t);
            (b <= t).then_some((h, (b, c)))
        })
        .collect();
    Ok(BinAssignment {
        p: p_eff,
        t,
        m,
        heavy,
        distinct,
    })
}

/// One bin combination B = (x, beta): a bin index per atom (0 for atoms
/// untouched by x, 1..=t for heavy bins, t+1 for the light bin) such that
/// some assignment to x lands in exactly those bins.
#[derive(Clone, Debug)]
pub struct BinCombination {
    pub x: VarSet,
    /// Per-atom bin index; 0 where x_j is empty.
    pub bins: Vec<u32>,
    /// Per-atom bin exponents beta_j; 0 where x_j is empty.
    pub beta: Vec<Rat>,
    pub members: CMembers,
}

/// C(B). All-heavy combinations are materialized exactly. Combinations
/// with a light-bin atom whose variables are not covered by heavy atoms
/// admit up to ~n^d members (any fresh value is light), so only a witness
/// is kept; the algorithm downstream never needs more than membership
/// and nonemptiness for those.
#[derive(Clone, Debug)]
pub enum CMembers {
    Exact(Vec<Vec<u64>>),
    Witness(Vec<u64>),
}

impl CMembers {
    pub fn len(&self) -> Option<usize> {
        match self {
            CMembers::Exact(v) => Some(v.len()),
            CMembers::Witness(_) => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, CMembers::Exact(v) if v.is_empty())
    }
}

impl BinCombination {
    pub fn is_empty_combination(&self) -> bool {
        self.x.is_empty()
    }

    /// Atoms touched by x (A_B in the load analysis).
    pub fn touched(&self) -> Vec<usize> {
        self.bins
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0)
            .map(|(j, _)| j)
            .collect()
    }

    pub fn label(&self, q: &Query) -> String {
        let vars: Vec<&str> = self.x.iter().map(|i| q.var_name(i)).collect();
        let beta: Vec<String> = self.beta.iter().map(crate::ratio::rat_to_string).collect();
        format!("x={{{}}};beta=[{}]", vars.join(","), beta.join(","))
    }
}

/// Bin structure of a whole instance: per-atom bins for every subset of
/// the atom's variables, plus every realized bin combination.
#[derive(Clone, Debug)]
pub struct BinContext {
    pub p: u64,
    pub t: u32,
    /// per_atom[j][x_j] for every nonempty x_j subset of vars(S_j).
    pub per_atom: Vec<BTreeMap<VarSet, BinAssignment>>,
    pub combos: Vec<BinCombination>,
}

impl BinContext {
    pub fn n_bc(&self) -> u64 {
        self.combos.len() as u64
    }

    pub fn beta(&self, b: u32) -> Rat {
        if b == 0 {
            rat_int(0)
        } else {
            rat((b - 1) as i64, self.t as i64)
        }
    }

    pub fn bins_of(&self, j: usize, x_j: VarSet) -> Option<&BinAssignment> {
        self.per_atom[j].get(&x_j)
    }

    /// Index of the combination with the given x and per-atom bins.
    pub fn find(&self, x: VarSet, bins: &[u32]) -> Option<usize> {
        self.combos
            .iter()
            .position(|c| c.x == x && c.bins == bins)
    }
}

const WITNESS_NODE_CAP: u64 = 1_000_000;
const MATERIALIZE_CAP: usize = 1_000_000;

struct ComboSearch<'a> {
    q: &'a Query,
    inst: &'a Instance,
    ctx_per_atom: &'a [BTreeMap<VarSet, BinAssignment>],
    t: u32,
}

impl<'a> ComboSearch<'a> {
    /// Does `h` (values for x in ascending variable order) land in bin
    /// `bins[j]` for every touched atom?
    fn matches(&self, x: VarSet, bins: &[u32], h: &[u64]) -> bool {
        let xs: Vec<usize> = x.iter().collect();
        self.q.atoms.iter().enumerate().all(|(j, atom)| {
            let x_j = x.intersect(atom.var_set());
            if x_j.is_empty() {
                return bins[j] == 0;
            }
            let h_j: Vec<u64> = xs
                .iter()
                .zip(h)
                .filter(|(&v, _)| x_j.contains(v))
                .map(|(_, &val)| val)
                .collect();
            self.ctx_per_atom[j][&x_j].bin_of(&h_j) == bins[j]
        })
    }

    /// Backtracking join over the heavy-bin member lists of `heavy_atoms`,
    /// invoking `emit` with each consistent assignment to the covered
    /// variables. Returns false if `emit` ever says stop.
    fn heavy_dfs(
        &self,
        x: VarSet,
        bins: &[u32],
        heavy_atoms: &[usize],
        assignment: &mut Vec<Option<u64>>,
        depth: usize,
        emit: &mut dyn FnMut(&[Option<u64>]) -> bool,
    ) -> bool {
        if depth == heavy_atoms.len() {
            return emit(assignment);
        }
        let j = heavy_atoms[depth];
        let atom = &self.q.atoms[j];
        let x_j = x.intersect(atom.var_set());
        let ba = &self.ctx_per_atom[j][&x_j];
        let vars: Vec<usize> = x_j.iter().collect();
        'member: for (h_j, &(b, _)) in &ba.heavy {
            if b != bins[j] {
                continue;
            }
            let mut newly = Vec::new();
            for (&var, &val) in vars.iter().zip(h_j) {
                match assignment[var] {
                    Some(existing) if existing != val => {
                        for &v in &newly {
                            assignment[v] = None;
                        }
                        continue 'member;
                    }
                    Some(_) => {}
                    None => {
                        assignment[var] = Some(val);
                        newly.push(var);
                    }
                }
            }
            if !self.heavy_dfs(x, bins, heavy_atoms, assignment, depth + 1, emit) {
                for &v in &newly {
                    assignment[v] = None;
                }
                return false;
            }
            for &v in &newly {
                assignment[v] = None;
            }
        }
        true
    }

    /// Finds the members of C(B), or a witness when the member set is not
    /// exactly materializable (some variable occurs only in light-bin
    /// atoms, where any fresh domain value qualifies).
    fn solve(&self, x: VarSet, bins: &[u32]) -> Result<Option<CMembers>> {
        let touched: Vec<usize> = bins
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0)
            .map(|(j, _)| j)
            .collect();
        let heavy_atoms: Vec<usize> = touched
            .iter()
            .copied()
            .filter(|&j| bins[j] <= self.t)
            .collect();
        let covered = heavy_atoms.iter().fold(VarSet::EMPTY, |s, &j| {
            s.union(x.intersect(self.q.atoms[j].var_set()))
        });
        let xs: Vec<usize> = x.iter().collect();
        let mut assignment: Vec<Option<u64>> = vec![None; self.q.num_vars()];

        if covered == x {
            // Fully determined by heavy member lists: materialize.
            let mut members: Vec<Vec<u64>> = Vec::new();
            let mut overflow = false;
            self.heavy_dfs(x, bins, &heavy_atoms, &mut assignment, 0, &mut |a| {
                let h: Vec<u64> = xs.iter().map(|&v| a[v].unwrap()).collect();
                if self.matches(x, bins, &h) {
                    members.push(h);
                    if members.len() > MATERIALIZE_CAP {
                        overflow = true;
                        return false;
                    }
                }
                true
            });
            if overflow {
                return Err(Error::EnumerationTooLarge {
                    context: "bin combination materialization".into(),
                    count: MATERIALIZE_CAP as u128 + 1,
                    limit: MATERIALIZE_CAP as u128,
                });
            }
            members.sort_unstable();
            members.dedup();
            if members.is_empty() {
                return Ok(None);
            }
            return Ok(Some(CMembers::Exact(members)));
        }

        // Some variables are only constrained by light bins. A single
        // completion value v for all of them works unless v collides with
        // a heavy projection; each touched atom rules out at most p
        // candidate values, so a pool of l*p + 1 values suffices whenever
        // n is that large. For smaller n, exhaust the domain.
        let n = self.inst.n;
        let pool_needed = (self.q.num_atoms() as u64) * (1u64 << self.t) + 2;
        let remaining: Vec<usize> = xs
            .iter()
            .copied()
            .filter(|&v| !covered.contains(v))
            .collect();
        let mut witness: Option<Vec<u64>> = None;
        let mut nodes: u64 = 0;
        if n >= pool_needed {
            self.heavy_dfs(x, bins, &heavy_atoms, &mut assignment, 0, &mut |a| {
                for v in 1..=pool_needed {
                    let h: Vec<u64> = xs
                        .iter()
                        .map(|&var| a[var].unwrap_or(v))
                        .collect();
                    if self.matches(x, bins, &h) {
                        witness = Some(h);
                        return false;
                    }
                }
                nodes += 1;
                nodes < WITNESS_NODE_CAP
            });
        } else {
            // Tiny domain: exhaustive completion with early exit.
            self.heavy_dfs(x, bins, &heavy_atoms, &mut assignment, 0, &mut |a| {
                let base: Vec<Option<u64>> = a.to_vec();
                let mut stack = vec![(base, 0usize)];
                while let Some((cur, idx)) = stack.pop() {
                    nodes += 1;
                    if nodes >= WITNESS_NODE_CAP {
                        return false;
                    }
                    if idx == remaining.len() {
                        let h: Vec<u64> = xs.iter().map(|&var| cur[var].unwrap()).collect();
                        if self.matches(x, bins, &h) {
                            witness = Some(h);
                            return false;
                        }
                        continue;
                    }
                    for v in 1..=n {
                        let mut next = cur.clone();
                        next[remaining[idx]] = Some(v);
                        stack.push((next, idx + 1));
                    }
                }
                true
            });
        }
        if nodes >= WITNESS_NODE_CAP {
            return Err(Error::EnumerationTooLarge {
                context: "bin combination witness search".into(),
                count: nodes as u128,
                limit: WITNESS_NODE_CAP as u128,
            });
        }
        Ok(witness.map(CMembers::Witness))
    }
}

/// Enumerates every realized bin combination of the instance: all
/// x subsets of vars(q), all per-atom bin vectors with nonempty C(B).
/// The empty combination B_empty is always first. N_bc is the length of
/// the returned list.
pub fn enumerate_bin_combinations(
    q: &Query,
    inst: &Instance,
    p: u64,
    policy: PowerOfTwoPolicy,
) -> Result<BinContext> {
    if q.num_vars() > 20 {
        return Err(Error::EnumerationTooLarge {
            context: "bin combination enumeration over variable subsets".into(),
            count: 1u128 << q.num_vars(),
            limit: 1 << 20,
        });
    }
    let (p_eff, t) = effective_power_of_two(p, policy)?;

    let mut per_atom: Vec<BTreeMap<VarSet, BinAssignment>> = Vec::with_capacity(q.num_atoms());
    for (j, atom) in q.atoms.iter().enumerate() {
        let mut by_subset = BTreeMap::new();
        for x_j in atom.var_set().subsets() {
            if x_j.is_empty() {
                continue;
            }
            let cols = atom.positions_of(x_j);
            by_subset.insert(
                x_j,
                assign_bins(inst.relation(j), &cols, p_eff, PowerOfTwoPolicy::Reject)?,
            );
        }
        per_atom.push(by_subset);
    }

    let search = ComboSearch {
        q,
        inst,
        ctx_per_atom: &per_atom,
        t,
    };

    let mut combos = Vec::new();
    for x in q.all_vars().subsets() {
        if x.is_empty() {
            combos.push(BinCombination {
                x,
                bins: vec![0; q.num_atoms()],
                beta: vec![rat_int(0); q.num_atoms()],
                members: CMembers::Exact(vec![Vec::new()]),
            });
            continue;
        }
        // Candidate bins per atom: realized heavy bins plus the light bin
        // (the light bin is unavailable only when every value of [n]^d_j
        // is heavy, which requires n^d_j <= p).
        let mut options: Vec<Vec<u32>> = Vec::with_capacity(q.num_atoms());
        for (j, atom) in q.atoms.iter().enumerate() {
            let x_j = x.intersect(atom.var_set());
            if x_j.is_empty() {
                options.push(vec![0]);
                continue;
            }
            let ba = &per_atom[j][&x_j];
            let mut opts: Vec<u32> = {
                let mut bins_present: Vec<u32> =
                    ba.heavy.values().map(|&(b, _)| b).collect();
                bins_present.sort_unstable();
                bins_present.dedup();
                bins_present
            };
            let domain_size: u128 = (inst.n as u128).saturating_pow(x_j.len() as u32);
            if domain_size > ba.heavy.len() as u128 {
                opts.push(t + 1);
            }
            options.push(opts);
        }
        // Odometer over the per-atom bin options.
        let mut idx = vec![0usize; q.num_atoms()];
        'outer: loop {
            let bins: Vec<u32> = idx.iter().zip(&options).map(|(&i, o)| o[i]).collect();
            if let Some(members) = search.solve(x, &bins)? {
                let beta = bins.iter().map(|&b| search_beta(b, t)).collect();
                combos.push(BinCombination {
                    x,
                    bins,
                    beta,
                    members,
                });
            }
            let mut d = q.num_atoms();
            loop {
                if d == 0 {
                    break 'outer;
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < options[d].len() {
                    break;
                }
                idx[d] = 0;
            }
        }
    }
    Ok(BinContext {
        p: p_eff,
        t,
        per_atom,
        combos,
    })
}

fn search_beta(b: u32, t: u32) -> Rat {
    if b == 0 {
        rat_int(0)
    } else {
        rat((b - 1) as i64, t as i64)
    }
}
