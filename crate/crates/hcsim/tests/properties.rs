//! Randomized invariants over queries, packings, share LPs, statistics,
//! and shuffles. Each property restates a contract the unit tests pin
//! only pointwise; all tolerances are exact rational comparisons except
//! where a value is produced in floating point, where 1e-9 relative is
//! used.

use hcsim::bounds::{l_lower_simple, l_lower_simple_report, l_lower_skew, l_simple, Units};
use hcsim::harness::{gen_uniform_instance, gen_uniform_relation, oracle_join};
use hcsim::packing::{
    enumerate_packing_vertices, enumerate_polytope_vertices, extend_to_tight, is_edge_packing,
    max_packing_value, saturates, weighting_value,
};
use hcsim::query::{parse, Query, VarSet};
use hcsim::ratio::{
    dominated_by, dyadic_log, dyadic_log_ceil, parse_rat, rat, rat_int, rat_is_nonneg, rat_to_f64,
    rat_to_string, Rat,
};
use hcsim::shares::{
    lp_vs_closed_form, solve_share_dual_lp, solve_share_lp, space_exponent,
};
use hcsim::shuffle::{local_join, run_hc_equal_shares, ServerGrid};
use hcsim::simplex::{Cmp, Constraint, LinearProgram};
use hcsim::stats::{assign_bins, PowerOfTwoPolicy};
use num_traits::One;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random full query with k <= 5 variables and l <= 4 atoms.
fn random_query(rng: &mut ChaCha8Rng) -> Query {
    loop {
        let k = rng.gen_range(1..=5usize);
        let l = rng.gen_range(1..=4usize);
        let mut atoms: Vec<Vec<usize>> = Vec::with_capacity(l);
        for _ in 0..l {
            let mut vars: Vec<usize> = (0..k).filter(|_| rng.gen_bool(0.5)).collect();
            if vars.is_empty() {
                vars.push(rng.gen_range(0..k));
            }
            atoms.push(vars);
        }
        for v in 0..k {
            if !atoms.iter().any(|a| a.contains(&v)) {
                let j = rng.gen_range(0..l);
                atoms[j].push(v);
                atoms[j].sort_unstable();
            }
        }
        let head: Vec<String> = (0..k).map(|v| format!("x{v}")).collect();
        let body: Vec<String> = atoms
            .iter()
            .enumerate()
            .map(|(j, vars)| {
                let vs: Vec<String> = vars.iter().map(|v| format!("x{v}")).collect();
                format!("S{}({})", j + 1, vs.join(","))
            })
            .collect();
        let text = format!("Q({}) :- {}", head.join(","), body.join(", "));
        if let Ok(q) = parse(&text) {
            return q;
        }
    }
}

fn arb_query() -> impl Strategy<Value = Query> {
    any::<u64>().prop_map(|seed| random_query(&mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Per-atom cardinalities that fit the distinct-tuple space n^arity.
fn feasible_cardinalities(q: &Query, n: u64, lo: u64, hi: u64, rng: &mut ChaCha8Rng) -> Vec<u64> {
    q.atoms
        .iter()
        .map(|a| {
            let space = n.saturating_pow(a.arity() as u32);
            rng.gen_range(lo..=hi).min(space)
        })
        .collect()
}

proptest! {
    #[test]
    fn display_parse_roundtrip(q in arb_query()) {
        let text = q.to_string();
        let back = parse(&text).unwrap();
        prop_assert_eq!(&back, &q);
        prop_assert_eq!(back.to_string(), text);
    }

    #[test]
    fn residual_identities(q in arb_query(), bits in any::<u64>()) {
        let (same, back) = q.residual(VarSet(0));
        prop_assert_eq!(&same, &q);
        prop_assert_eq!(back, (0..q.num_vars()).collect::<Vec<_>>());

        let x = VarSet(bits & ((1u64 << q.num_vars()) - 1));
        let (qx, back) = q.residual(x);
        qx.validate().unwrap();
        prop_assert_eq!(qx.num_atoms(), q.num_atoms());
        prop_assert_eq!(qx.num_vars(), q.num_vars() - x.len());
        // Each atom drops exactly its positions on x; zero-arity atoms stay.
        let mut drops = 0;
        for (aj, bj) in q.atoms.iter().zip(&qx.atoms) {
            let d = aj.vars.iter().filter(|v| x.contains(**v)).count();
            prop_assert_eq!(bj.arity(), aj.arity() - d);
            prop_assert_eq!(&bj.relation, &aj.relation);
            drops += d;
        }
        prop_assert_eq!(qx.total_arity(), q.total_arity() - drops);
        // The back-map enumerates the surviving original ids in order.
        prop_assert!(back.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(back.iter().all(|&i| !x.contains(i)));
        for (new, &old) in back.iter().enumerate() {
            prop_assert_eq!(qx.var_name(new), q.var_name(old));
        }
    }

    #[test]
    fn rat_string_roundtrip(a in -10_000i64..10_000, b in 1i64..500) {
        let r = rat(a, b);
        prop_assert_eq!(parse_rat(&rat_to_string(&r)).unwrap(), r);
    }

    #[test]
    fn dyadic_log_brackets_the_float_log(v in 1.0f64..1e12, base in 2u64..512) {
        let d = dyadic_log(v, base).unwrap();
        let c = dyadic_log_ceil(v, base).unwrap();
        let exact = v.ln() / (base as f64).ln();
        prop_assert!((rat_to_f64(&d) - exact).abs() < 1e-9);
        prop_assert!(c >= d);
        prop_assert!(rat_to_f64(&c) >= exact - 1e-12);
    }

    #[test]
    fn grid_ids_roundtrip(shares in prop::collection::vec(1u64..=5, 1..=4)) {
        let grid = ServerGrid::new(&shares).unwrap();
        let total: u64 = shares.iter().product();
        for id in 0..total {
            let coords = grid.coords_of(id);
            prop_assert!(coords.iter().zip(&shares).all(|(&c, &s)| c < s));
            prop_assert_eq!(grid.id_of(&coords), id);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn packing_vertices_invariants(q in arb_query()) {
        let vs = enumerate_packing_vertices(&q).unwrap();
        prop_assert!(!vs.is_empty());
        for u in &vs {
            prop_assert!(is_edge_packing(&q, u).unwrap());
        }
        for (i, a) in vs.iter().enumerate() {
            for (j, b) in vs.iter().enumerate() {
                if i != j {
                    prop_assert!(!dominated_by(a, b));
                }
            }
        }
        // tau* is attained on the vertex set and is at least 1: putting
        // weight 1 on any single atom is always feasible.
        let tau = max_packing_value(&q).unwrap();
        let best = vs.iter().map(|u| weighting_value(u)).max().unwrap();
        prop_assert_eq!(tau, best);
        prop_assert!(max_packing_value(&q).unwrap() >= Rat::one());
    }

    #[test]
    fn tight_extension_accounting(q in arb_query(), pick in any::<prop::sample::Index>()) {
        let vs = enumerate_packing_vertices(&q).unwrap();
        let u = &vs[pick.index(vs.len())];
        let ext = extend_to_tight(&q, u).unwrap();
        prop_assert_eq!(&ext.u, u);
        // Slack makes every variable exactly tight, and stays nonnegative.
        for i in 0..q.num_vars() {
            let var_sum: Rat = q
                .atoms_of_var(i)
                .iter()
                .map(|&j| u[j].clone())
                .sum();
            prop_assert!(rat_is_nonneg(&ext.slack[i]));
            prop_assert_eq!(var_sum + &ext.slack[i], Rat::one());
        }
        // sum_j a_j u_j + sum_i u'_i = k.
        let lhs: Rat = q
            .atoms
            .iter()
            .zip(u)
            .map(|(a, uj)| rat_int(a.arity() as i64) * uj)
            .sum::<Rat>()
            + ext.slack.iter().sum::<Rat>();
        prop_assert_eq!(lhs, rat_int(q.num_vars() as i64));
    }

    #[test]
    fn simple_bound_scale_covariance(q in arb_query(), seed in any::<u64>(), t in 1.25f64..16.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = 16u64;
        let m: Vec<f64> = (0..q.num_atoms())
            .map(|_| (p as f64).powf(rng.gen_range(1.0..=3.0)))
            .collect();
        let (l1, w1) = l_lower_simple(&q, &m, p).unwrap();
        // The witness is a feasible vertex achieving the bound.
        prop_assert!(is_edge_packing(&q, &w1).unwrap());
        prop_assert!((l_simple(&w1, &m, p).unwrap() - l1).abs() <= 1e-9 * l1);
        // Scaling every size by t scales the bound by t: each vertex value
        // is (prod (t M_j)^{u_j} / p)^{1/u} = t * (prod M_j^{u_j} / p)^{1/u}.
        let tm: Vec<f64> = m.iter().map(|x| x * t).collect();
        let (l2, _) = l_lower_simple(&q, &tm, p).unwrap();
        prop_assert!((l2 / l1 - t).abs() <= 1e-9 * t);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn feasible_packings_are_convex_combinations(
        q in arb_query().prop_filter("three atoms", |q| q.num_atoms() <= 3),
        raw in prop::collection::vec(0i64..=8, 4),
    ) {
        // A rejection-free feasible point: scale a random nonnegative
        // vector down by its worst per-variable oversubscription.
        let mut u: Vec<Rat> = (0..q.num_atoms()).map(|j| rat(raw[j], 8)).collect();
        let worst = (0..q.num_vars())
            .map(|i| q.atoms_of_var(i).iter().map(|&j| u[j].clone()).sum::<Rat>())
            .max()
            .unwrap_or_else(|| rat_int(0));
        if worst > Rat::one() {
            for x in &mut u {
                *x /= worst.clone();
            }
        }
        prop_assert!(is_edge_packing(&q, &u).unwrap());

        // Solve for convex-combination weights over all polytope vertices:
        // theta >= 0, sum theta = 1, sum theta * v = u. Exact rationals.
        let vs = enumerate_polytope_vertices(&q).unwrap();
        let nv = vs.len();
        let mut constraints = Vec::with_capacity(q.num_atoms() + 1);
        for j in 0..q.num_atoms() {
            let coeffs: Vec<Rat> = vs.iter().map(|v| v[j].clone()).collect();
            constraints.push(Constraint::new(coeffs, Cmp::Eq, u[j].clone()));
        }
        constraints.push(Constraint::new(vec![Rat::one(); nv], Cmp::Eq, Rat::one()));
        let lp = LinearProgram {
            num_vars: nv,
            objective: vec![rat_int(0); nv],
            constraints,
        };
        prop_assert!(lp.is_feasible());
    }

    #[test]
    fn frequency_partition_and_bins(seed in any::<u64>(), arity in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 20u64;
        let space = n.pow(arity as u32);
        let m = rng.gen_range(1..=150u64).min(space);
        let rel = gen_uniform_relation("R", n, arity, m, seed).unwrap();
        let p = 16u64;

        let cols: Vec<usize> = (0..arity).filter(|_| rng.gen_bool(0.5)).collect();
        let cols = if cols.is_empty() { vec![0] } else { cols };

        // Frequencies partition the relation and are monotone under
        // projecting to fewer columns.
        let map = rel.freq_map(&cols);
        prop_assert_eq!(map.values().sum::<u64>(), m);
        prop_assert!(map.values().all(|&c| c > 0));
        for (h, &c) in &map {
            for drop in 0..cols.len() {
                let sub: Vec<usize> = cols
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != drop)
                    .map(|(_, &c)| c)
                    .collect();
                if sub.is_empty() {
                    continue;
                }
                let hsub: Vec<u64> = h
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != drop)
                    .map(|(_, &v)| v)
                    .collect();
                prop_assert!(rel.frequency(&sub, &hsub).unwrap() >= c);
            }
        }

        // Bins: stored entries are exactly the heavy hitters (count > m/p),
        // each in the bin given by its count, at most 2 p^beta_b per bin,
        // and fewer than p in total.
        let ba = assign_bins(&rel, &cols, p, PowerOfTwoPolicy::Reject).unwrap();
        let t = ba.t;
        prop_assert_eq!(ba.p, p);
        prop_assert_eq!(1u64 << t, p);
        prop_assert_eq!(ba.distinct, map.len() as u64);
        let mut per_bin = vec![0u64; t as usize + 1];
        let mut heavy_seen = 0u64;
        for (h, &c) in &map {
            let heavy = (c as u128) * (p as u128) > m as u128;
            let stored = ba.frequency_of(h);
            prop_assert_eq!(stored.is_some(), heavy);
            if let Some(fc) = stored {
                prop_assert_eq!(fc, c);
                let b = ba.bin_of(h);
                prop_assert!((1..=t).contains(&b));
                // m / 2^{b-1} >= c > m / 2^b, as exact integers.
                prop_assert!((c as u128) << (b - 1) <= m as u128);
                prop_assert!((c as u128) << b > m as u128);
                per_bin[b as usize] += 1;
                heavy_seen += 1;
            } else {
                prop_assert_eq!(ba.bin_of(h), t + 1);
            }
        }
        prop_assert_eq!(ba.heavy_count(), heavy_seen);
        prop_assert!(heavy_seen < p);
        for b in 1..=t {
            let cap = 2.0 * (p as f64).powf(rat_to_f64(&ba.beta(b)));
            prop_assert!(per_bin[b as usize] as f64 <= cap + 1e-9);
        }
    }

    #[test]
    fn oracle_matches_local_join(q in arb_query(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
        let n = 12u64;
        let m = feasible_cardinalities(&q, n, 1, 60, &mut rng);
        let inst = gen_uniform_instance(&q, n, &m, seed, None).unwrap();
        let oracle = oracle_join(&q, &inst).unwrap();
        let frags: Vec<Vec<Vec<u64>>> =
            inst.relations().iter().map(|r| r.tuples().to_vec()).collect();
        let mut local = local_join(&q, &frags);
        local.sort();
        local.dedup();
        prop_assert_eq!(oracle, local);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn share_lp_feasibility_duality_closed_form(
        q in arb_query(),
        seed in any::<u64>(),
        p in prop::sample::select(vec![16u64, 64, 256]),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m: Vec<f64> = (0..q.num_atoms())
            .map(|_| (p as f64).powf(rng.gen_range(1.0..=3.0)))
            .collect();
        let s = solve_share_lp(&q, &m, p).unwrap();

        // Primal feasibility, exactly.
        let total: Rat = s.e.iter().sum();
        prop_assert!(total <= Rat::one());
        prop_assert!(s.e.iter().all(rat_is_nonneg));
        for (j, atom) in q.atoms.iter().enumerate() {
            let sum: Rat = atom.vars.iter().map(|&v| s.e[v].clone()).sum();
            prop_assert!(sum + &s.lambda >= s.mu[j]);
        }

        // Rounded shares stay within budget and lose less than 2 per
        // variable: prod p_i <= p and 2^k prod p_i > p^{sum e_i}.
        prop_assert!(s.shares.iter().all(|&x| x >= 1));
        let prod: u128 = s.shares.iter().map(|&x| x as u128).product();
        prop_assert!(prod <= p as u128);
        let budget_used = (p as f64).powf(rat_to_f64(&total));
        let doubled = (prod as f64) * 2f64.powi(q.num_vars() as i32);
        prop_assert!(doubled > budget_used * (1.0 - 1e-9));

        // Broadcast marking is the factor-p cutoff against the largest.
        let m_max = m.iter().copied().fold(0.0, f64::max);
        for (j, &b) in s.broadcast.iter().enumerate() {
            prop_assert_eq!(b, m[j] * p as f64 <= m_max);
        }

        // Strong duality holds exactly; the dual point is feasible.
        let (dual, fj, f) = solve_share_dual_lp(&q, &m, p).unwrap();
        prop_assert_eq!(&s.lambda, &dual);
        prop_assert!(fj.iter().sum::<Rat>() <= Rat::one());
        prop_assert!(fj.iter().all(rat_is_nonneg));
        for i in 0..q.num_vars() {
            let incident: Rat = q
                .atoms
                .iter()
                .zip(&fj)
                .filter(|(a, _)| a.var_set().contains(i))
                .map(|(_, x)| x.clone())
                .sum();
            prop_assert!(incident <= f);
        }

        // The packing-vertex closed form agrees with p^lambda.
        let (lp_load, vertex_load) = lp_vs_closed_form(&q, &m, p).unwrap();
        let gap = (lp_load.ln() - vertex_load.ln()).abs() / (p as f64).ln();
        prop_assert!(gap <= 1e-9, "log_p gap {} on {}", gap, q);

        // The space exponent is 1 + lambda - mu_max, inside [0, 1).
        let (eps, _) = space_exponent(&q, &m, p).unwrap();
        let mu_max = s.mu.iter().cloned().fold(rat_int(0), Rat::max);
        let expect = 1.0 + rat_to_f64(&(s.lambda.clone() - mu_max));
        prop_assert!((eps - expect).abs() <= 1e-9);
        prop_assert!(eps >= -1e-9 && eps < 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn skew_bound_dominates_simple(q in arb_query(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51ca);
        let n = 25u64;
        let m = feasible_cardinalities(&q, n, 10, 120, &mut rng);
        let inst = gen_uniform_instance(&q, n, &m, seed, None).unwrap();
        let p = 16u64;

        let sizes: Vec<f64> = m.iter().map(|&x| x as f64).collect();
        let simple = l_lower_simple_report(&q, &sizes, p, Units::Tuples).unwrap();
        let skew = l_lower_skew(&q, &inst, p, Units::Tuples).unwrap();
        // x = empty set with the same vertex set is always a candidate.
        prop_assert!(skew.value >= simple.value * (1.0 - 1e-9));

        // The witness is a packing of the residual query that saturates x.
        let (qx, _) = q.residual(skew.witness_x);
        prop_assert!(is_edge_packing(&qx, &skew.witness_packing).unwrap());
        prop_assert!(saturates(&qx, &skew.witness_packing, skew.witness_x, &q).unwrap());
    }

    #[test]
    fn shuffle_accounting_and_completeness(q in arb_query(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
        let n = 14u64;
        let m = feasible_cardinalities(&q, n, 1, 80, &mut rng);
        let inst = gen_uniform_instance(&q, n, &m, seed, None).unwrap();
        let p = 16u64;

        let run = run_hc_equal_shares(&q, &inst, p, seed, true).unwrap();
        let report = &run.report;

        // Every tuple lands on exactly grid/prod(shares on its atom's
        // variables) servers, so per-relation receipts sum to m_j times
        // that replication factor.
        prop_assert_eq!(report.servers, report.shares.iter().product::<u64>());
        for (j, atom) in q.atoms.iter().enumerate() {
            let on_atom: u64 = atom.vars.iter().map(|&i| report.shares[i]).product();
            let replication = report.servers / on_atom;
            let received: u64 = report.per_server.iter().map(|s| s.tuples[j]).sum();
            prop_assert_eq!(received, m[j] * replication);
        }
        prop_assert!(report.l_max_bits >= report.l_mean_bits - 1e-9);

        // One round computes exactly the join.
        let mut expected = oracle_join(&q, &inst).unwrap();
        expected.sort();
        let got = run.output_union().unwrap();
        prop_assert_eq!(got, expected);
    }
}
