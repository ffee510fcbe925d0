//! One-round shuffle simulation: seeded per-variable hash functions,
//! subcube routing over the share grid, broadcast routing, per-server
//! load accounting, the skew-freeness predicate, and the local join each
//! server runs on its fragments.
//!
//! Everything is deterministic given (instance, shares, seed): the hash
//! family is a fixed 64-bit mixer keyed by seed and variable id, and all
//! reductions iterate in server-id order.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::query::{Atom, Query, VarSet};
use crate::stats::{Instance, Relation};

#[inline]
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// One independent hash function per variable, h_i: values -> [0, p_i).
#[derive(Clone, Debug)]
pub struct HashFamily {
    seed: u64,
    shares: Vec<u64>,
    keys: Vec<u64>,
}

impl HashFamily {
    pub fn new(seed: u64, shares: Vec<u64>) -> HashFamily {
        let keys = (0..shares.len())
            .map(|i| mix64(seed ^ mix64(i as u64 + 1)))
            .collect();
        HashFamily { seed, shares, keys }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn shares(&self) -> &[u64] {
        &self.shares
    }

    /// Bucket of `value` under variable i's function: a 64-bit mix
    /// reduced to [0, p_i) by multiply-shift.
    pub fn hash(&self, var: usize, value: u64) -> u64 {
        let h = mix64(self.keys[var] ^ value.wrapping_mul(0xd1b54a32d192ed03));
        ((h as u128 * self.shares[var] as u128) >> 64) as u64
    }
}

/// The server grid [0,p_1) x ... x [0,p_k), addressed in mixed radix
/// with the last variable varying fastest.
#[derive(Clone, Debug)]
pub struct ServerGrid {
    pub shares: Vec<u64>,
    strides: Vec<u64>,
    pub total: u64,
}

impl ServerGrid {
    pub fn new(shares: &[u64]) -> Result<ServerGrid> {
        if shares.iter().any(|&s| s == 0) {
            return Err(Error::InvalidArgument("shares must be positive".into()));
        }
        let total = shares
            .iter()
            .try_fold(1u64, |acc, &s| acc.checked_mul(s))
            .ok_or_else(|| Error::InvalidArgument("share grid overflows u64".into()))?;
        let mut strides = vec![1u64; shares.len()];
        for i in (0..shares.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * shares[i + 1];
        }
        Ok(ServerGrid {
            shares: shares.to_vec(),
            strides,
            total,
        })
    }

    pub fn id_of(&self, coords: &[u64]) -> u64 {
        coords
            .iter()
            .zip(&self.strides)
            .map(|(&c, &s)| c * s)
            .sum()
    }

    pub fn coords_of(&self, mut id: u64) -> Vec<u64> {
        let mut coords = vec![0u64; self.shares.len()];
        for i in 0..self.shares.len() {
            coords[i] = id / self.strides[i];
            id %= self.strides[i];
        }
        coords
    }
}

/// Servers receiving one tuple of `atom`: the subcube fixing the
/// coordinates of the atom's variables at their hashed values. Returned
/// in odometer order over the free coordinates.
pub fn hc_route(atom: &Atom, tuple: &[u64], hashes: &HashFamily, grid: &ServerGrid) -> Vec<u64> {
    let k = grid.shares.len();
    let mut fixed: Vec<Option<u64>> = vec![None; k];
    for (pos, &v) in atom.vars.iter().enumerate() {
        fixed[v] = Some(hashes.hash(v, tuple[pos]));
    }
    let free: Vec<usize> = (0..k).filter(|&i| fixed[i].is_none()).collect();
    let count: u64 = free.iter().map(|&i| grid.shares[i]).product();
    let mut out = Vec::with_capacity(count as usize);
    let mut coords: Vec<u64> = fixed.iter().map(|c| c.unwrap_or(0)).collect();
    loop {
        out.push(grid.id_of(&coords));
        let mut d = free.len();
        loop {
            if d == 0 {
                return out;
            }
            d -= 1;
            let i = free[d];
            coords[i] += 1;
            if coords[i] < grid.shares[i] {
                break;
            }
            coords[i] = 0;
        }
    }
}

/// Broadcast routing: every server.
pub fn broadcast_route(total_servers: u64) -> impl Iterator<Item = u64> {
    0..total_servers
}

/// Per-server load measurements for one run.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ServerLoad {
    /// Tuples received, per relation in atom order.
    pub tuples: Vec<u64>,
    pub bits: f64,
    pub outputs: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct LoadReport {
    /// Servers actually used: the full share grid.
    pub servers: u64,
    pub shares: Vec<u64>,
    /// Bits per tuple of each relation: a_j log2 n.
    pub bits_per_tuple: Vec<f64>,
    pub per_server: Vec<ServerLoad>,
    pub l_max_bits: f64,
    pub l_max_tuples: u64,
    pub l_mean_bits: f64,
    /// sum of per-server bits / sum of relation sizes in bits.
    pub replication_rate: f64,
}

impl LoadReport {
    pub fn from_counts(
        shares: &[u64],
        bits_per_tuple: Vec<f64>,
        tuples: Vec<Vec<u64>>,
        outputs: Vec<u64>,
        m: &[u64],
    ) -> LoadReport {
        let per_server: Vec<ServerLoad> = tuples
            .into_iter()
            .zip(outputs)
            .map(|(t, o)| {
                let bits: f64 = t
                    .iter()
                    .zip(&bits_per_tuple)
                    .map(|(&c, &b)| c as f64 * b)
                    .sum();
                ServerLoad {
                    tuples: t,
                    bits,
                    outputs: o,
                }
            })
            .collect();
        let servers = per_server.len() as u64;
        let l_max_bits = per_server.iter().map(|s| s.bits).fold(0.0, f64::max);
        let l_max_tuples = per_server
            .iter()
            .map(|s| s.tuples.iter().sum::<u64>())
            .max()
            .unwrap_or(0);
        let total_bits: f64 = per_server.iter().map(|s| s.bits).sum();
        let input_bits: f64 = m
            .iter()
            .zip(&bits_per_tuple)
            .map(|(&mj, &b)| mj as f64 * b)
            .sum();
        LoadReport {
            servers,
            shares: shares.to_vec(),
            bits_per_tuple,
            l_max_bits,
            l_max_tuples,
            l_mean_bits: total_bits / servers as f64,
            replication_rate: if input_bits > 0.0 {
                total_bits / input_bits
            } else {
                0.0
            },
            per_server,
        }
    }

    /// Max tuples received from relation j at any server.
    pub fn max_tuples_of(&self, j: usize) -> u64 {
        self.per_server
            .iter()
            .map(|s| s.tuples[j])
            .max()
            .unwrap_or(0)
    }

    pub fn total_outputs(&self) -> u64 {
        self.per_server.iter().map(|s| s.outputs).sum()
    }

    /// `server,tuples_S1,...,bits,outputs` rows for plotting.
    pub fn to_csv(&self, q: &Query) -> String {
        let mut s = String::from("server");
        for atom in &q.atoms {
            s.push_str(&format!(",tuples_{}", atom.relation));
        }
        s.push_str(",bits,outputs\n");
        for (i, sl) in self.per_server.iter().enumerate() {
            s.push_str(&i.to_string());
            for t in &sl.tuples {
                s.push_str(&format!(",{t}"));
            }
            s.push_str(&format!(",{},{}\n", sl.bits, sl.outputs));
        }
        s
    }
}

/// Result of one simulated round.
#[derive(Clone, Debug)]
pub struct HcRun {
    pub report: LoadReport,
    /// Per-server output tuples (full assignments in head order), only
    /// when outputs were requested.
    pub outputs: Option<Vec<Vec<Vec<u64>>>>,
}

impl HcRun {
    /// Sorted, deduplicated union of all server outputs.
    pub fn output_union(&self) -> Option<Vec<Vec<u64>>> {
        self.outputs.as_ref().map(|per| {
            let mut all: Vec<Vec<u64>> = per.iter().flatten().cloned().collect();
            all.sort_unstable();
            all.dedup();
            all
        })
    }
}

/// Runs the one-round algorithm: routes every tuple to its subcube (or
/// everywhere, for broadcast-marked atoms), measures loads, and if
/// `compute_outputs` joins each server's fragments locally.
pub fn run_hc(
    q: &Query,
    inst: &Instance,
    shares: &[u64],
    seed: u64,
    broadcast: &[bool],
    compute_outputs: bool,
) -> Result<HcRun> {
    if shares.len() != q.num_vars() {
        return Err(Error::InvalidArgument(format!(
            "{} shares for {} variables",
            shares.len(),
            q.num_vars()
        )));
    }
    if broadcast.len() != q.num_atoms() {
        return Err(Error::InvalidArgument(format!(
            "{} broadcast flags for {} atoms",
            broadcast.len(),
            q.num_atoms()
        )));
    }
    let grid = ServerGrid::new(shares)?;
    let hashes = HashFamily::new(seed, shares.to_vec());
    let servers = grid.total as usize;
    let logn = (inst.n as f64).log2();
    let bits_per_tuple: Vec<f64> = q.atoms.iter().map(|a| a.arity() as f64 * logn).collect();

    let mut counts: Vec<Vec<u64>> = vec![vec![0; q.num_atoms()]; servers];
    let mut fragments: Vec<Vec<Vec<Vec<u64>>>> = if compute_outputs {
        vec![vec![Vec::new(); q.num_atoms()]; servers]
    } else {
        Vec::new()
    };

    for (j, atom) in q.atoms.iter().enumerate() {
        let rel = inst.relation(j);
        for tuple in rel.tuples() {
            if broadcast[j] {
                for sid in broadcast_route(grid.total) {
                    counts[sid as usize][j] += 1;
                    if compute_outputs {
                        fragments[sid as usize][j].push(tuple.clone());
                    }
                }
            } else {
                for sid in hc_route(atom, tuple, &hashes, &grid) {
                    counts[sid as usize][j] += 1;
                    if compute_outputs {
                        fragments[sid as usize][j].push(tuple.clone());
                    }
                }
            }
        }
    }

    let mut outputs_per_server: Vec<u64> = vec![0; servers];
    let outputs = if compute_outputs {
        let mut all = Vec::with_capacity(servers);
        for (sid, frags) in fragments.into_iter().enumerate() {
            let rows = local_join(q, &frags);
            outputs_per_server[sid] = rows.len() as u64;
            all.push(rows);
        }
        Some(all)
    } else {
        None
    };

    let m: Vec<u64> = (0..q.num_atoms())
        .map(|j| inst.relation(j).cardinality())
        .collect();
    let report = LoadReport::from_counts(shares, bits_per_tuple, counts, outputs_per_server, &m);
    Ok(HcRun { report, outputs })
}

/// Equal-exponent variant: shares from rounding e_i = 1/k.
pub fn run_hc_equal_shares(
    q: &Query,
    inst: &Instance,
    p: u64,
    seed: u64,
    compute_outputs: bool,
) -> Result<HcRun> {
    let k = q.num_vars().max(1);
    let e = vec![crate::ratio::rat(1, k as i64); q.num_vars()];
    let shares = crate::shares::round_shares(&e, p)?;
    run_hc(
        q,
        inst,
        &shares,
        seed,
        &vec![false; q.num_atoms()],
        compute_outputs,
    )
}

/// Hash-join each server's fragments: fold atoms left to right, probing
/// a hash map on the shared variables. Rows are full assignments in
/// head (= variable id) order.
pub fn local_join(q: &Query, fragments: &[Vec<Vec<u64>>]) -> Vec<Vec<u64>> {
    // Accumulator rows hold values for acc_vars in ascending var order.
    let first = &q.atoms[0];
    let mut acc_vars = first.var_set();
    let mut acc: Vec<Vec<u64>> = fragments[0]
        .iter()
        .map(|t| project_sorted(first, t))
        .collect();
    acc.sort_unstable();
    acc.dedup();

    for (j, atom) in q.atoms.iter().enumerate().skip(1) {
        let vars_j = atom.var_set();
        let shared = acc_vars.intersect(vars_j);
        let new_vars = vars_j.minus(acc_vars);
        // Probe-side index: shared values -> new-variable values.
        let mut index: HashMap<Vec<u64>, Vec<Vec<u64>>> = HashMap::new();
        let shared_cols = atom.positions_of(shared);
        let new_cols = atom.positions_of(new_vars);
        let mut seen: Vec<Vec<u64>> = fragments[j].clone();
        seen.sort_unstable();
        seen.dedup();
        for t in &seen {
            let key: Vec<u64> = shared_cols.iter().map(|&c| t[c]).collect();
            let val: Vec<u64> = new_cols.iter().map(|&c| t[c]).collect();
            index.entry(key).or_default().push(val);
        }
        for v in index.values_mut() {
            v.sort_unstable();
            v.dedup();
        }
        let shared_idx: Vec<usize> = {
            let acc_list: Vec<usize> = acc_vars.iter().collect();
            shared
                .iter()
                .map(|v| acc_list.iter().position(|&a| a == v).unwrap())
                .collect()
        };
        let merged_vars = acc_vars.union(vars_j);
        // Positions (source, old index) to build merged rows in ascending
        // var order: from acc or from the new columns.
        let acc_list: Vec<usize> = acc_vars.iter().collect();
        let new_list: Vec<usize> = new_vars.iter().collect();
        let layout: Vec<(bool, usize)> = merged_vars
            .iter()
            .map(|v| {
                if let Some(i) = acc_list.iter().position(|&a| a == v) {
                    (true, i)
                } else {
                    (false, new_list.iter().position(|&a| a == v).unwrap())
                }
            })
            .collect();
        let mut next = Vec::new();
        for row in &acc {
            let key: Vec<u64> = shared_idx.iter().map(|&i| row[i]).collect();
            if let Some(exts) = index.get(&key) {
                for ext in exts {
                    let merged: Vec<u64> = layout
                        .iter()
                        .map(|&(from_acc, i)| if from_acc { row[i] } else { ext[i] })
                        .collect();
                    next.push(merged);
                }
            }
        }
        acc = next;
        acc_vars = merged_vars;
    }
    debug_assert_eq!(acc_vars, q.all_vars());
    acc.sort_unstable();
    acc.dedup();
    acc
}

fn project_sorted(atom: &Atom, tuple: &[u64]) -> Vec<u64> {
    let cols = atom.positions_of(atom.var_set());
    cols.iter().map(|&c| tuple[c]).collect()
}

/// Is the relation skew-free w.r.t. the shares: for every nonempty
/// subset x of the atom's variables, does every value combination have
/// frequency at most m_j / prod_{i in x} p_i? Returns the first
/// offending (subset, value, frequency) otherwise.
pub fn skew_free_check(
    rel: &Relation,
    atom: &Atom,
    shares: &[u64],
) -> Result<(bool, Option<(VarSet, Vec<u64>, u64)>)> {
    let m = rel.cardinality();
    for x in atom.var_set().subsets() {
        if x.is_empty() {
            continue;
        }
        let share_prod: u128 = x.iter().map(|i| shares[i] as u128).product();
        let cols = atom.positions_of(x);
        for (value, count) in rel.freq_map(&cols) {
            if count as u128 * share_prod > m as u128 {
                return Ok((false, Some((x, value, count))));
            }
        }
    }
    Ok((true, None))
}
