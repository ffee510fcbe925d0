//! Fractional edge packings and covers, and the vertex set pk(q).
//!
//! A weighting assigns a nonnegative rational u_j to every atom. It is an
//! edge packing when every variable's incident weights sum to at most 1,
//! tight when they all equal 1, and an edge cover when they sum to at
//! least 1. pk(q) is the set of non-dominated vertices of the packing
//! polytope; the closed-form load bounds maximize over exactly this set,
//! so it is enumerated exactly: every basic solution of the constraint
//! system is computed over the rationals, infeasible and duplicate ones
//! are discarded, and dominated vertices are filtered out.
//!
//! Everything here is exact; floating point enters only when the bounds
//! layer evaluates loads.

use num_traits::{One, Zero};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::linalg::solve_square;
use crate::query::{Query, VarSet};
use crate::ratio::{dominated_by, lex_cmp, rat_to_string, Rat};

/// A packing extended with per-variable slack, u'_i = 1 - sum of the
/// weights incident to variable i. The pair (u, u') is a tight packing
/// (and cover) of the query extended with one unary atom per variable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtendedWeighting {
    pub u: Vec<Rat>,
    pub slack: Vec<Rat>,
}

fn check_dim(q: &Query, u: &[Rat]) -> Result<()> {
    if u.len() != q.num_atoms() {
        return Err(Error::InvalidWeighting(format!(
            "weighting has {} entries for {} atoms",
            u.len(),
            q.num_atoms()
        )));
    }
    Ok(())
}

/// Sum of incident weights for variable `i`.
fn var_sum(q: &Query, u: &[Rat], i: usize) -> Rat {
    q.atoms
        .iter()
        .zip(u)
        .filter(|(a, _)| a.var_set().contains(i))
        .fold(Rat::zero(), |s, (_, w)| s + w)
}

pub fn weighting_value(u: &[Rat]) -> Rat {
    u.iter().fold(Rat::zero(), |s, w| s + w)
}

pub fn is_edge_packing(q: &Query, u: &[Rat]) -> Result<bool> {
    check_dim(q, u)?;
    if u.iter().any(|w| w < &Rat::zero()) {
        return Ok(false);
    }
    Ok((0..q.num_vars()).all(|i| var_sum(q, u, i) <= Rat::one()))
}

pub fn is_tight_packing(q: &Query, u: &[Rat]) -> Result<bool> {
    check_dim(q, u)?;
    if u.iter().any(|w| w < &Rat::zero()) {
        return Ok(false);
    }
    Ok((0..q.num_vars()).all(|i| var_sum(q, u, i) == Rat::one()))
}

pub fn is_edge_cover(q: &Query, u: &[Rat]) -> Result<bool> {
    check_dim(q, u)?;
    if u.iter().any(|w| w < &Rat::zero()) {
        return Ok(false);
    }
    Ok((0..q.num_vars()).all(|i| var_sum(q, u, i) >= Rat::one()))
}

fn binomial(n: u64, k: u64) -> u128 {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

const BASIC_SOLUTION_LIMIT: u128 = 10_000_000;

/// All vertices of the packing polytope `{u >= 0, per-variable sums <= 1}`,
/// deduplicated and sorted lexicographically.
///
/// Enumerates basic solutions: every choice of `ell` constraints (out of
/// the k per-variable rows and ell nonnegativity rows) set to equality
/// yields a square rational system; feasible unique solutions are vertices.
/// Zero-arity atoms occur in no variable row, so every vertex assigns them
/// weight 0 (the polytope is unbounded in those coordinates).
pub fn enumerate_polytope_vertices(q: &Query) -> Result<Vec<Vec<Rat>>> {
    let k = q.num_vars();
    let l = q.num_atoms();
    let total = binomial((k + l) as u64, l as u64);
    if total > BASIC_SOLUTION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            context: "basic-solution enumeration".into(),
            count: total,
            limit: BASIC_SOLUTION_LIMIT,
        });
    }

    // Constraint rows: 0..k are variable rows (sum of incident u_j = 1),
    // k..k+l are nonnegativity rows (u_j = 0).
    let row = |c: usize| -> (Vec<Rat>, Rat) {
        if c < k {
            let coeffs = q
                .atoms
                .iter()
                .map(|a| {
                    if a.var_set().contains(c) {
                        Rat::one()
                    } else {
                        Rat::zero()
                    }
                })
                .collect();
            (coeffs, Rat::one())
        } else {
            let mut coeffs = vec![Rat::zero(); l];
            coeffs[c - k] = Rat::one();
            (coeffs, Rat::zero())
        }
    };

    let mut vertices: Vec<Vec<Rat>> = Vec::new();
    let mut choice: Vec<usize> = (0..l).collect();
    loop {
        let mut a = Vec::with_capacity(l);
        let mut b = Vec::with_capacity(l);
        for &c in &choice {
            let (coeffs, rhs) = row(c);
            a.push(coeffs);
            b.push(rhs);
        }
        if let Some(u) = solve_square(a, b) {
            let feasible = u.iter().all(|w| w >= &Rat::zero())
                && (0..k).all(|i| var_sum(q, &u, i) <= Rat::one());
            if feasible && !vertices.contains(&u) {
                vertices.push(u);
            }
        }
        // Next l-combination of {0, ..., k+l-1} in lexicographic order.
        let mut i = l;
        loop {
            if i == 0 {
                choice.clear();
                break;
            }
            i -= 1;
            if choice[i] < k + l - (l - i) {
                choice[i] += 1;
                for j in i + 1..l {
                    choice[j] = choice[j - 1] + 1;
                }
                break;
            }
        }
        if choice.is_empty() {
            break;
        }
    }
    vertices.sort_by(|a, b| lex_cmp(a, b));
    Ok(vertices)
}

/// pk(q): the non-dominated vertices of the packing polytope, sorted
/// lexicographically.
pub fn enumerate_packing_vertices(q: &Query) -> Result<Vec<Vec<Rat>>> {
    let all = enumerate_polytope_vertices(q)?;
    let kept: Vec<Vec<Rat>> = all
        .iter()
        .filter(|u| !all.iter().any(|v| dominated_by(u, v)))
        .cloned()
        .collect();
    Ok(kept)
}

/// tau*: the maximum total weight of a fractional edge packing.
pub fn max_packing_value(q: &Query) -> Result<Rat> {
    if let Some(a) = q.atoms.iter().find(|a| a.arity() == 0) {
        return Err(Error::InvalidArgument(format!(
            "packing value is unbounded: atom {} has no variables",
            a.relation
        )));
    }
    let pk = enumerate_packing_vertices(q)?;
    pk.iter()
        .map(|u| weighting_value(u))
        .max()
        .ok_or_else(|| Error::InvalidQuery("query has no atoms".into()))
}

/// Does the packing `u` of the residual query q_x saturate every variable
/// of `x`? Saturation counts incidence in the *original* query: for each
/// x_i in x, the weights of all original atoms containing x_i must sum to
/// at least 1.
pub fn saturates(q_x: &Query, u: &[Rat], x: VarSet, q: &Query) -> Result<bool> {
    check_dim(q_x, u)?;
    if !is_edge_packing(q_x, u)? {
        return Err(Error::InvalidWeighting(
            "weighting is not a packing of the residual query".into(),
        ));
    }
    Ok(x.iter().all(|i| var_sum(q, u, i) >= Rat::one()))
}

/// Extends a packing with its per-variable slack. Errors when `u` is not a
/// packing (some slack would be negative).
pub fn extend_to_tight(q: &Query, u: &[Rat]) -> Result<ExtendedWeighting> {
    check_dim(q, u)?;
    let mut slack = Vec::with_capacity(q.num_vars());
    for i in 0..q.num_vars() {
        let s = Rat::one() - var_sum(q, u, i);
        if s < Rat::zero() {
            return Err(Error::InvalidWeighting(format!(
                "not a packing: variable {} is oversubscribed",
                q.var_name(i)
            )));
        }
        slack.push(s);
    }
    if u.iter().any(|w| w < &Rat::zero()) {
        return Err(Error::InvalidWeighting("negative atom weight".into()));
    }
    Ok(ExtendedWeighting {
        u: u.to_vec(),
        slack,
    })
}

/// JSON form used by reports: an array of exact fraction strings.
pub fn weighting_to_json(u: &[Rat]) -> Value {
    Value::Array(u.iter().map(|w| Value::String(rat_to_string(w))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::parse;
    use crate::ratio::{rat, rat_int};

    fn c3() -> Query {
        parse("c3(x, y, z) :- S1(x, y), S2(y, z), S3(z, x)").unwrap()
    }

    fn l3() -> Query {
        parse("l3(x1, x2, x3, x4) :- S1(x1, x2), S2(x2, x3), S3(x3, x4)").unwrap()
    }

    fn join() -> Query {
        parse("q(x, y, z) :- S1(x, z), S2(y, z)").unwrap()
    }

    fn w(vals: &[(i64, i64)]) -> Vec<Rat> {
        vals.iter().map(|&(n, d)| rat(n, d)).collect()
    }

    #[test]
    fn packing_predicates() {
        assert!(is_edge_packing(&l3(), &w(&[(1, 1), (0, 1), (1, 1)])).unwrap());
        assert!(!is_edge_packing(&l3(), &w(&[(1, 1), (1, 1), (0, 1)])).unwrap());
        assert!(is_edge_packing(&c3(), &w(&[(0, 1), (0, 1), (0, 1)])).unwrap());
        assert!(is_tight_packing(&c3(), &w(&[(1, 2), (1, 2), (1, 2)])).unwrap());
        assert!(is_edge_cover(&c3(), &w(&[(1, 2), (1, 2), (1, 2)])).unwrap());
        assert!(is_tight_packing(&l3(), &w(&[(1, 1), (0, 1), (1, 1)])).unwrap());
        assert!(is_edge_cover(&c3(), &w(&[(1, 1), (1, 1), (1, 1)])).unwrap());
        assert!(!is_edge_packing(&c3(), &w(&[(1, 1), (1, 1), (1, 1)])).unwrap());
        assert!(!is_edge_packing(&c3(), &w(&[(-1, 2), (1, 2), (1, 2)])).unwrap());
        assert!(is_edge_packing(&c3(), &w(&[(1, 2)])).is_err());
    }

    #[test]
    fn pk_of_c3_is_the_four_vertices() {
        let pk = enumerate_packing_vertices(&c3()).unwrap();
        let expected = vec![
            w(&[(0, 1), (0, 1), (1, 1)]),
            w(&[(0, 1), (1, 1), (0, 1)]),
            w(&[(1, 2), (1, 2), (1, 2)]),
            w(&[(1, 1), (0, 1), (0, 1)]),
        ];
        assert_eq!(pk, expected);
    }

    #[test]
    fn pk_of_l3_and_disjoint_pair() {
        let pk = enumerate_packing_vertices(&l3()).unwrap();
        let expected = vec![
            w(&[(0, 1), (1, 1), (0, 1)]),
            w(&[(1, 1), (0, 1), (1, 1)]),
        ];
        assert_eq!(pk, expected);

        let q = parse("q(x, y) :- S1(x), S2(y)").unwrap();
        assert_eq!(
            enumerate_packing_vertices(&q).unwrap(),
            vec![w(&[(1, 1), (1, 1)])]
        );
    }

    #[test]
    fn polytope_vertices_include_dominated_ones() {
        let q = parse("q(x) :- S(x)").unwrap();
        let all = enumerate_polytope_vertices(&q).unwrap();
        assert_eq!(all, vec![w(&[(0, 1)]), w(&[(1, 1)])]);
        assert_eq!(enumerate_packing_vertices(&q).unwrap(), vec![w(&[(1, 1)])]);
    }

    #[test]
    fn tau_star_values() {
        assert_eq!(max_packing_value(&c3()).unwrap(), rat(3, 2));
        assert_eq!(max_packing_value(&l3()).unwrap(), rat_int(2));
        let single = parse("q(x) :- S(x)").unwrap();
        assert_eq!(max_packing_value(&single).unwrap(), rat_int(1));
    }

    #[test]
    fn saturation_examples() {
        let q = join();
        let z = VarSet::singleton(2);
        let (qx, _) = q.residual(z);
        assert!(saturates(&qx, &w(&[(1, 1), (1, 1)]), z, &q).unwrap());
        // x = empty set: vacuously saturating.
        let (q0, _) = q.residual(VarSet::EMPTY);
        assert!(saturates(&q0, &w(&[(1, 1), (0, 1)]), VarSet::EMPTY, &q).unwrap());

        let c3 = c3();
        let x1 = VarSet::singleton(0);
        let (c3x, _) = c3.residual(x1);
        assert!(saturates(&c3x, &w(&[(1, 1), (0, 1), (1, 1)]), x1, &c3).unwrap());
        assert!(!saturates(&c3x, &w(&[(0, 1), (1, 1), (0, 1)]), x1, &c3).unwrap());
        // Not a packing of the residual query: error, not false.
        assert!(saturates(&c3x, &w(&[(1, 1), (1, 1), (1, 1)]), x1, &c3).is_err());
    }

    #[test]
    fn extend_to_tight_slack_arithmetic() {
        let ext = extend_to_tight(&c3(), &w(&[(1, 2), (1, 2), (1, 2)])).unwrap();
        assert_eq!(ext.slack, w(&[(0, 1), (0, 1), (0, 1)]));

        let ext = extend_to_tight(&l3(), &w(&[(1, 1), (0, 1), (0, 1)])).unwrap();
        assert_eq!(ext.slack, w(&[(0, 1), (0, 1), (1, 1), (1, 1)]));

        let ext = extend_to_tight(&join(), &w(&[(1, 1), (0, 1)])).unwrap();
        assert_eq!(ext.slack, w(&[(0, 1), (1, 1), (0, 1)]));

        assert!(extend_to_tight(&c3(), &w(&[(1, 1), (1, 1), (0, 1)])).is_err());
    }

    #[test]
    fn extension_identity_sums_to_k() {
        // sum_j a_j u_j + sum_i slack_i = k.
        for (q, u) in [
            (c3(), w(&[(1, 2), (1, 2), (1, 2)])),
            (c3(), w(&[(1, 4), (1, 3), (1, 5)])),
            (l3(), w(&[(1, 1), (0, 1), (0, 1)])),
            (join(), w(&[(1, 1), (0, 1)])),
        ] {
            let ext = extend_to_tight(&q, &u).unwrap();
            let total = q
                .atoms
                .iter()
                .zip(&ext.u)
                .fold(Rat::zero(), |s, (a, w)| s + rat_int(a.arity() as i64) * w)
                + ext.slack.iter().fold(Rat::zero(), |s, v| s + v);
            assert_eq!(total, rat_int(q.num_vars() as i64));
        }
    }

    #[test]
    fn pk_members_are_packings_and_non_dominated() {
        for q in [c3(), l3(), join()] {
            let pk = enumerate_packing_vertices(&q).unwrap();
            for u in &pk {
                assert!(is_edge_packing(&q, u).unwrap());
                assert!(!pk.iter().any(|v| dominated_by(u, v)));
            }
        }
    }

    #[test]
    fn residual_polytope_zeroes_empty_atoms() {
        // Residual of the join on {x, z}: S1 is zero-arity; every vertex
        // must give it weight 0.
        let q = join();
        let (qx, _) = q.residual(VarSet::from_iter([0, 2]));
        let vs = enumerate_polytope_vertices(&qx).unwrap();
        assert!(!vs.is_empty());
        for v in &vs {
            assert_eq!(v[0], Rat::zero());
        }
        assert!(max_packing_value(&qx).is_err());
    }
}
