//! Share exponents: the load-minimizing LP over hypercube shares, its
//! dual, rounding of fractional exponents to integer shares, and the
//! space exponent after broadcast elimination.
//!
//! Sizes enter as floating bits but are immediately rationalized:
//! mu_j = log_p M_j is snapped to the nearest multiple of 2^-48, after
//! which everything is exact rational arithmetic. The LP value is
//! 1-Lipschitz in each mu_j, so the snap perturbs the optimum by less
//! than any tolerance used downstream.

use num_bigint::BigUint;
use num_traits::{One, Signed, ToPrimitive};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::query::{Query, VarSet};
use crate::ratio::{dyadic_log, rat_int, rat_to_f64, rat_to_string, Rat};
use crate::simplex::{Cmp, Constraint, LinearProgram};

/// Optimal share exponents for one query and size vector.
#[derive(Clone, Debug)]
pub struct ShareAssignment {
    pub p: u64,
    /// Share exponent e_i per variable, in head order.
    pub e: Vec<Rat>,
    /// log_p of the optimal load bound.
    pub lambda: Rat,
    /// Rationalized mu_j = log_p M_j per atom.
    pub mu: Vec<Rat>,
    /// Rounded integer shares per variable.
    pub shares: Vec<u64>,
    /// Atoms small enough (M_j <= M_max / p) to broadcast instead of
    /// hash-partitioning.
    pub broadcast: Vec<bool>,
}

impl ShareAssignment {
    /// Ideal load p^lambda in the same unit as the input sizes.
    pub fn load_bits(&self) -> f64 {
        (self.p as f64).powf(rat_to_f64(&self.lambda))
    }

    pub fn total_share(&self) -> u64 {
        self.shares.iter().product()
    }

    /// `{variable: {exponent: "1/3", share: 4}}` in head order.
    pub fn to_json(&self, q: &Query) -> Value {
        let mut map = serde_json::Map::new();
        for i in 0..q.num_vars() {
            map.insert(
                q.var_name(i).to_string(),
                json!({
                    "exponent": rat_to_string(&self.e[i]),
                    "share": self.shares[i],
                }),
            );
        }
        Value::Object(map)
    }
}

fn validate_sizes(q: &Query, m_bits: &[f64], p: u64) -> Result<()> {
    if p < 2 {
        return Err(Error::InvalidArgument(format!("need p >= 2, got {p}")));
    }
    if m_bits.len() != q.num_atoms() {
        return Err(Error::InvalidArgument(format!(
            "{} sizes for {} atoms",
            m_bits.len(),
            q.num_atoms()
        )));
    }
    if m_bits.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
        return Err(Error::InvalidArgument(
            "relation sizes must be positive and finite".into(),
        ));
    }
    Ok(())
}

/// Rationalized mu_j = log_p M_j.
pub fn mu_vector(m_bits: &[f64], p: u64) -> Result<Vec<Rat>> {
    m_bits.iter().map(|&m| dyadic_log(m, p)).collect()
}

/// Atoms eligible for broadcast: M_j <= M_max / p. Their LP constraints
/// are implied by the budget row (lambda >= mu_max - 1 >= mu_j at any
/// optimum), so they stay in the program; the flag only changes routing.
pub fn broadcast_mask(m_bits: &[f64], p: u64) -> Vec<bool> {
    let m_max = m_bits.iter().copied().fold(0.0, f64::max);
    m_bits.iter().map(|&m| m * p as f64 <= m_max).collect()
}

/// Shared LP core: minimize lambda subject to
///   sum_{i in vars(S_j), i not fixed} e_i + lambda >= rhs_j   for each atom,
///   sum_{i not fixed} e_i <= budget,   e, lambda >= 0.
/// Fixed variables are excluded from every sum (their exponent is 0).
/// The optimum may be negative; an internal shift keeps the simplex in
/// nonnegative variables. Returns the full-length exponent vector and
/// lambda, lexicographically smallest among the optimal points.
pub(crate) fn solve_exponent_lp_core(
    q: &Query,
    rhs: &[Rat],
    budget: Rat,
    fixed: VarSet,
) -> Result<(Vec<Rat>, Rat)> {
    let free: Vec<usize> = (0..q.num_vars()).filter(|&i| !fixed.contains(i)).collect();
    let nf = free.len();
    let col_of = |i: usize| free.iter().position(|&f| f == i);

    // lambda >= rhs_j - budget always, so shifting by s keeps it >= 0.
    let max_rhs = rhs.iter().cloned().fold(rat_int(0), |a, b| a.max(b));
    let shift = (Rat::one() - &max_rhs).max(rat_int(0));

    let mut constraints = Vec::with_capacity(q.num_atoms() + 1);
    for (atom, r) in q.atoms.iter().zip(rhs) {
        let mut coeffs = vec![rat_int(0); nf + 1];
        for &v in &atom.vars {
            if let Some(c) = col_of(v) {
                coeffs[c] = rat_int(1);
            }
        }
        coeffs[nf] = rat_int(1);
        constraints.push(Constraint {
            coeffs,
            cmp: Cmp::Ge,
            rhs: r + &shift,
        });
    }
    let mut coeffs = vec![rat_int(1); nf];
    coeffs.push(rat_int(0));
    constraints.push(Constraint {
        coeffs,
        cmp: Cmp::Le,
        rhs: budget,
    });

    let mut objective = vec![rat_int(0); nf];
    objective.push(rat_int(1));
    let lp = LinearProgram {
        num_vars: nf + 1,
        objective,
        constraints,
    };
    let tie_order: Vec<usize> = (0..nf).collect();
    let sol = lp.solve_lex_min(&tie_order)?;
    let mut e = vec![rat_int(0); q.num_vars()];
    for (c, &i) in free.iter().enumerate() {
        e[i] = sol.point[c].clone();
    }
    Ok((e, sol.point[nf].clone() - shift))
}

/// Solves the share LP: minimize lambda s.t. for every atom
/// sum_{i in S_j} e_i + lambda >= mu_j and sum e_i <= 1.
pub fn solve_share_lp(q: &Query, m_bits: &[f64], p: u64) -> Result<ShareAssignment> {
    validate_sizes(q, m_bits, p)?;
    let m_max = m_bits.iter().copied().fold(0.0, f64::max);
    if m_max < p as f64 {
        return Err(Error::InvalidArgument(format!(
            "largest relation ({m_max} bits) is below the server count {p}; \
             every per-server load bound degenerates"
        )));
    }
    let mu = mu_vector(m_bits, p)?;
    let (e, lambda) = solve_exponent_lp_core(q, &mu, Rat::one(), VarSet::EMPTY)?;
    let shares = round_shares(&e, p)?;
    Ok(ShareAssignment {
        p,
        e,
        lambda,
        mu,
        shares,
        broadcast: broadcast_mask(m_bits, p),
    })
}

/// The dual program: maximize sum mu_j f_j - f subject to sum f_j <= 1
/// and, for every variable i, sum_{j: i in S_j} f_j <= f. Returns
/// (optimal value, f_j, f). The optimum equals the share LP's lambda.
pub fn solve_share_dual_lp(q: &Query, m_bits: &[f64], p: u64) -> Result<(Rat, Vec<Rat>, Rat)> {
    validate_sizes(q, m_bits, p)?;
    let mu = mu_vector(m_bits, p)?;
    let l = q.num_atoms();
    let mut constraints = Vec::with_capacity(q.num_vars() + 1);
    let mut coeffs = vec![rat_int(1); l];
    coeffs.push(rat_int(0));
    constraints.push(Constraint {
        coeffs,
        cmp: Cmp::Le,
        rhs: rat_int(1),
    });
    for i in 0..q.num_vars() {
        let mut coeffs = vec![rat_int(0); l + 1];
        for (j, atom) in q.atoms.iter().enumerate() {
            if atom.var_set().contains(i) {
                coeffs[j] = rat_int(1);
            }
        }
        coeffs[l] = rat_int(-1);
        constraints.push(Constraint {
            coeffs,
            cmp: Cmp::Le,
            rhs: rat_int(0),
        });
    }
    // Maximize sum mu_j f_j - f == minimize -(...).
    let mut objective: Vec<Rat> = mu.iter().map(|m| -m.clone()).collect();
    objective.push(rat_int(1));
    let lp = LinearProgram {
        num_vars: l + 1,
        objective,
        constraints,
    };
    let tie_order: Vec<usize> = (0..l).collect();
    let sol = lp.solve_lex_min(&tie_order)?;
    let f = sol.point[l].clone();
    let fj = sol.point[..l].to_vec();
    Ok((-sol.value, fj, f))
}

/// Closed-form optimum from the packing polytope; must agree with
/// p^lambda from the LP. Returns (load, witness vertex).
///
/// Broadcast-eligible atoms are dropped before taking the vertex
/// maximum. Their LP rows are slack at the optimum, so lambda is
/// unchanged, but left in the query they can dominate (and thereby
/// filter out) the very vertex that attains lambda: with S1(x), S2(y)
/// and M = (p^3, p), the optimum p^2 sits at u = (1, 0), which loses
/// the domination filter to (1, 1) worth only p^1.5. The witness is
/// padded with zeros on the dropped atoms.
pub fn closed_form_load(q: &Query, m_bits: &[f64], p: u64) -> Result<(f64, Vec<Rat>)> {
    validate_sizes(q, m_bits, p)?;
    let mask = broadcast_mask(m_bits, p);
    if mask.iter().all(|&b| !b) {
        return crate::bounds::l_lower_simple(q, m_bits, p);
    }
    let (sub, kept) = subquery_without_broadcast(q, &mask)?;
    let sub_bits: Vec<f64> = kept.iter().map(|&j| m_bits[j]).collect();
    let (load, sub_witness) = crate::bounds::l_lower_simple(&sub, &sub_bits, p)?;
    let mut witness = vec![rat_int(0); q.num_atoms()];
    for (w, &j) in sub_witness.iter().zip(&kept) {
        witness[j] = w.clone();
    }
    Ok((load, witness))
}

/// Both routes to the optimal load: (p^lambda from the LP, vertex max).
/// Tests assert their logs agree to 1e-9.
pub fn lp_vs_closed_form(q: &Query, m_bits: &[f64], p: u64) -> Result<(f64, f64)> {
    let lp = solve_share_lp(q, m_bits, p)?;
    let (vertex, _) = closed_form_load(q, m_bits, p)?;
    Ok((lp.load_bits(), vertex))
}

/// Rounds fractional share exponents to integer shares:
/// p_i = max(1, floor(p^{e_i})), then decrement the largest share while
/// the product exceeds p. Exponents with denominator <= 64 use exact
/// integer root extraction; the float fallback snaps to within 1e-9 of
/// an integer before flooring.
pub fn round_shares(e: &[Rat], p: u64) -> Result<Vec<u64>> {
    let total: Rat = e.iter().sum();
    if total > Rat::one() || e.iter().any(|x| x.is_negative()) {
        return Err(Error::InvalidArgument(
            "share exponents must be nonnegative and sum to at most 1".into(),
        ));
    }
    let mut shares: Vec<u64> = e
        .iter()
        .map(|x| {
            let num = x.numer();
            let den = x.denom();
            let val = if let (Some(a), Some(b)) = (num.to_u32(), den.to_u64()) {
                if b <= 64 {
                    let root = BigUint::from(p).pow(a).nth_root(b as u32);
                    root.to_u64()
                } else {
                    None
                }
            } else {
                None
            };
            val.unwrap_or_else(|| {
                let v = (p as f64).powf(rat_to_f64(x));
                let snapped = v.round();
                let w = if (v - snapped).abs() <= 1e-9 * snapped.max(1.0) {
                    snapped
                } else {
                    v.floor()
                };
                w as u64
            })
            .max(1)
        })
        .collect();
    loop {
        let prod: u128 = shares.iter().map(|&s| s as u128).product();
        if prod <= p as u128 {
            break;
        }
        let idx = (0..shares.len())
            .filter(|&i| shares[i] > 1)
            .max_by_key(|&i| (shares[i], std::cmp::Reverse(i)))
            .expect("product > p >= 2 implies some share > 1");
        shares[idx] -= 1;
    }
    Ok(shares)
}

/// The query restricted to its non-broadcast atoms, with variables
/// renumbered densely. Returns (subquery, kept atom indices, variable
/// back-map old -> new).
fn subquery_without_broadcast(q: &Query, mask: &[bool]) -> Result<(Query, Vec<usize>)> {
    let kept: Vec<usize> = (0..q.num_atoms()).filter(|&j| !mask[j]).collect();
    if kept.is_empty() {
        return Err(Error::InvalidArgument(
            "every relation is broadcast-eligible; no residual query remains".into(),
        ));
    }
    let mut var_map = vec![usize::MAX; q.num_vars()];
    let mut names = Vec::new();
    for &j in &kept {
        for &v in &q.atoms[j].vars {
            if var_map[v] == usize::MAX {
                var_map[v] = names.len();
                names.push(q.var_name(v).to_string());
            }
        }
    }
    let atoms = kept
        .iter()
        .map(|&j| crate::query::Atom {
            relation: q.atoms[j].relation.clone(),
            vars: q.atoms[j].vars.iter().map(|&v| var_map[v]).collect(),
        })
        .collect();
    let sub = Query {
        name: q.name.clone(),
        head: names,
        atoms,
    };
    sub.validate()?;
    Ok((sub, kept))
}

/// Space exponent: after broadcast elimination, write every remaining
/// M_j = M_max / p^{nu_j} and return 1 - v* for
/// v* = min over pk of (sum_j nu_j u_j + 1) / sum_j u_j,
/// together with the broadcast mask.
///
/// v* is log_p(M_max / L(u)) at the minimizing vertex, so the result
/// equals 1 + lambda - mu_max and lies in [0, 1).
pub fn space_exponent(q: &Query, m_bits: &[f64], p: u64) -> Result<(f64, Vec<bool>)> {
    validate_sizes(q, m_bits, p)?;
    let mask = broadcast_mask(m_bits, p);
    let (sub, kept) = subquery_without_broadcast(q, &mask)?;
    let m_max = m_bits.iter().copied().fold(0.0, f64::max);
    let nu: Vec<Rat> = kept
        .iter()
        .map(|&j| dyadic_log(m_max / m_bits[j], p))
        .collect::<Result<_>>()?;
    let mut best: Option<f64> = None;
    for u in crate::packing::enumerate_packing_vertices(&sub)? {
        let usum = rat_to_f64(&crate::packing::weighting_value(&u));
        if usum <= 0.0 {
            continue;
        }
        let weighted: f64 = nu
            .iter()
            .zip(&u)
            .map(|(n, uj)| rat_to_f64(n) * rat_to_f64(uj))
            .sum();
        let term = (weighted + 1.0) / usum;
        if best.map_or(true, |b| term < b) {
            best = Some(term);
        }
    }
    let v = best.ok_or_else(|| Error::InvalidQuery("no nonzero packing vertex".into()))?;
    Ok((1.0 - v, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::parse;
    use crate::ratio::rat;

    fn join() -> Query {
        parse("q(x, y, z) :- S1(x, z), S2(y, z)").unwrap()
    }

    fn c3() -> Query {
        parse("q(x1, x2, x3) :- S1(x1, x2), S2(x2, x3), S3(x3, x1)").unwrap()
    }

    #[test]
    fn share_lp_on_the_join() {
        // Equal sizes M = p^2: hash-join on z, load M/p.
        let p = 16u64;
        let m = (p * p) as f64;
        let s = solve_share_lp(&join(), &[m, m], p).unwrap();
        assert_eq!(s.e, vec![rat_int(0), rat_int(0), rat_int(1)]);
        assert_eq!(s.lambda, rat_int(1));
        assert_eq!(s.shares, vec![1, 1, 16]);
        assert!((s.load_bits() - m / p as f64).abs() < 1e-9);
        assert_eq!(s.broadcast, vec![false, false]);
    }

    #[test]
    fn share_lp_on_the_triangle() {
        let p = 64u64;
        let m = (p * p) as f64;
        let s = solve_share_lp(&c3(), &[m, m, m], p).unwrap();
        assert_eq!(s.e, vec![rat(1, 3), rat(1, 3), rat(1, 3)]);
        assert_eq!(s.lambda, rat_int(2) - rat(2, 3));
        assert_eq!(s.shares, vec![4, 4, 4]);
        // Load M / p^(2/3).
        assert!((s.load_bits() - m / (p as f64).powf(2.0 / 3.0)).abs() < 1e-6);
    }

    #[test]
    fn share_lp_on_a_single_atom() {
        let q = parse("q(x) :- S(x)").unwrap();
        let p = 8u64;
        let s = solve_share_lp(&q, &[64.0], p).unwrap();
        assert_eq!(s.e, vec![rat_int(1)]);
        assert_eq!(s.lambda, rat_int(1));
        assert_eq!(s.shares, vec![8]);
    }

    #[test]
    fn lp_constraints_hold_exactly() {
        let q = c3();
        let p = 32u64;
        let m = [4096.0, 1024.0, 65536.0];
        let s = solve_share_lp(&q, &m, p).unwrap();
        let total: Rat = s.e.iter().sum();
        assert!(total <= Rat::one());
        for (j, atom) in q.atoms.iter().enumerate() {
            let sum: Rat = atom.vars.iter().map(|&v| s.e[v].clone()).sum();
            assert!(
                sum + &s.lambda >= s.mu[j],
                "constraint {j} violated"
            );
        }
    }

    #[test]
    fn duality_and_closed_form_agree() {
        let cases: Vec<(Query, Vec<f64>, u64)> = vec![
            (join(), vec![256.0, 4096.0], 16),
            (c3(), vec![4096.0, 4096.0, 4096.0], 64),
            (c3(), vec![1024.0, 8192.0, 65536.0], 16),
            (
                parse("q(x0, x1, x2, x3) :- S1(x0, x1), S2(x1, x2), S3(x2, x3)").unwrap(),
                vec![2048.0, 256.0, 2048.0],
                16,
            ),
            (
                parse("q(x, y, z, w) :- S1(x, y), S2(x, z), S3(x, w)").unwrap(),
                vec![512.0, 512.0, 512.0],
                8,
            ),
        ];
        for (q, m, p) in cases {
            let s = solve_share_lp(&q, &m, p).unwrap();
            let (dual, fj, f) = solve_share_dual_lp(&q, &m, p).unwrap();
            // Primal and dual optima are exactly equal rationals.
            assert_eq!(s.lambda, dual, "strong duality on {q}");
            // Dual feasibility.
            let sum: Rat = fj.iter().sum();
            assert!(sum <= Rat::one());
            for i in 0..q.num_vars() {
                let incident: Rat = q
                    .atoms
                    .iter()
                    .enumerate()
                    .filter(|(_, a)| a.var_set().contains(i))
                    .map(|(j, _)| fj[j].clone())
                    .sum();
                assert!(incident <= f);
            }
            // LP load equals the packing-vertex maximum.
            let (lp_load, vertex_load) = lp_vs_closed_form(&q, &m, p).unwrap();
            let diff = (lp_load.ln() - vertex_load.ln()).abs() / (p as f64).ln();
            assert!(diff < 1e-9, "log_p gap {diff} on {q}");
        }
    }

    #[test]
    fn rounding_examples() {
        assert_eq!(
            round_shares(&[rat(1, 3), rat(1, 3), rat(1, 3)], 64).unwrap(),
            vec![4, 4, 4]
        );
        assert_eq!(
            round_shares(&[rat_int(0), rat_int(0), rat_int(1)], 10).unwrap(),
            vec![1, 1, 10]
        );
        assert_eq!(round_shares(&[rat(1, 2), rat(1, 2)], 10).unwrap(), vec![3, 3]);
        // Budget always respected.
        for (e, p) in [
            (vec![rat(2, 5), rat(3, 5)], 7u64),
            (vec![rat(1, 6); 6], 9),
            (vec![rat(1, 2), rat(1, 4), rat(1, 4)], 100),
        ] {
            let s = round_shares(&e, p).unwrap();
            let prod: u128 = s.iter().map(|&x| x as u128).product();
            assert!(prod <= p as u128);
            assert!(s.iter().all(|&x| x >= 1));
        }
        assert!(round_shares(&[rat(2, 3), rat(2, 3)], 4).is_err());
    }

    #[test]
    fn broadcast_marking() {
        let p = 64u64;
        // S2 is tiny: M2 <= M1/p.
        let m = [1_000_000.0, 10.0];
        let s = solve_share_lp(&join(), &m, p).unwrap();
        assert_eq!(s.broadcast, vec![false, true]);
        // The optimum is still the full-LP optimum: load M1/p.
        assert!((s.load_bits() - m[0] / p as f64).abs() / (m[0] / p as f64) < 1e-9);
        let (lp_load, vertex_load) = lp_vs_closed_form(&join(), &m, p).unwrap();
        assert!((lp_load.ln() - vertex_load.ln()).abs() / (p as f64).ln() < 1e-9);
    }

    #[test]
    fn closed_form_survives_domination_filtering() {
        // Disjoint atoms, M = (p^3, p): the optimum p^2 is attained at
        // u = (1, 0), a dominated vertex. Dropping the broadcastable S2
        // keeps the closed form equal to lambda.
        let q = parse("q(x, y) :- S1(x), S2(y)").unwrap();
        let p = 16u64;
        let m = [(p as f64).powi(3), p as f64];
        let s = solve_share_lp(&q, &m, p).unwrap();
        assert_eq!(s.lambda, rat_int(2));
        assert_eq!(s.broadcast, vec![false, true]);
        let (load, witness) = closed_form_load(&q, &m, p).unwrap();
        assert!((load - (p as f64).powi(2)).abs() < 1e-6);
        assert_eq!(witness, vec![rat_int(1), rat_int(0)]);
        // The raw vertex maximum without elimination undershoots.
        let (raw, _) = crate::bounds::l_lower_simple(&q, &m, p).unwrap();
        assert!((raw - (p as f64).powf(1.5)).abs() < 1e-6);
    }

    #[test]
    fn space_exponents() {
        let p = 64u64;
        let m = (p * p) as f64;
        // Equal sizes: 1 - 1/tau* = 1/3 for the triangle.
        let (v, mask) = space_exponent(&c3(), &[m, m, m], p).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-9);
        assert_eq!(mask, vec![false, false, false]);
        // One relation at M/p is broadcast-eliminated; the leftover
        // two-atom path has tau* = 1, so the space exponent drops to 0.
        let (v, mask) = space_exponent(&c3(), &[m, m, m / p as f64], p).unwrap();
        assert_eq!(mask, vec![false, false, true]);
        assert!(v.abs() < 1e-9);
    }

    #[test]
    fn space_exponent_matches_lambda_under_skew() {
        // nu = (0, 1/4, 1/4) at p = 16: the minimizing vertex is
        // (1/2, 1/2, 1/2) with v = (1/4 + 1)/(3/2) = 5/6, so the
        // exponent is 1/6 = 1 + lambda - mu_max with lambda = 7/6.
        let p = 16u64;
        let m = [256.0, 128.0, 128.0];
        let (v, mask) = space_exponent(&c3(), &m, p).unwrap();
        assert_eq!(mask, vec![false, false, false]);
        assert!((v - 1.0 / 6.0).abs() < 1e-9);
        let s = solve_share_lp(&c3(), &m, p).unwrap();
        assert_eq!(s.lambda, rat(7, 6));
        let mu_max = s.mu.iter().cloned().fold(rat_int(0), Rat::max);
        assert!((v - rat_to_f64(&(Rat::one() + s.lambda - mu_max))).abs() < 1e-9);
    }

    #[test]
    fn share_plan_serializes() {
        let p = 16u64;
        let m = (p * p) as f64;
        let s = solve_share_lp(&join(), &[m, m], p).unwrap();
        let j = s.to_json(&join());
        assert_eq!(
            serde_json::to_string(&j).unwrap(),
            r#"{"x":{"exponent":"0","share":1},"y":{"exponent":"0","share":1},"z":{"exponent":"1","share":16}}"#
        );
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(solve_share_lp(&join(), &[100.0, 100.0], 1).is_err());
        assert!(solve_share_lp(&join(), &[100.0], 16).is_err());
        assert!(solve_share_lp(&join(), &[0.0, 100.0], 16).is_err());
        // Largest relation below p.
        assert!(solve_share_lp(&join(), &[4.0, 4.0], 64).is_err());
    }
}
