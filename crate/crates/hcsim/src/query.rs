//! Conjunctive query model.
//!
//! A query is a full conjunctive query without self-joins,
//!
//! ```text
//! Answer(x, y, z) :- S1(x, z), S2(y, z)
//! ```
//!
//! where every variable occurring in the body also occurs in the head and
//! vice versa, and relation symbols are pairwise distinct. Variable ids are
//! assigned by head position, so the head fixes the global variable order
//! used by every other module (share vectors, packings, server coordinates).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Set of variable ids as a bitmask. Queries are capped far below 64
/// variables by the exponential-enumeration guards, so a single word
/// suffices and subset iteration is cheap.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VarSet(pub u64);

impl VarSet {
    pub const EMPTY: VarSet = VarSet(0);

    pub fn singleton(i: usize) -> VarSet {
        VarSet(1u64 << i)
    }

    pub fn from_iter(it: impl IntoIterator<Item = usize>) -> VarSet {
        let mut s = VarSet::EMPTY;
        for i in it {
            s.insert(i);
        }
        s
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    pub fn insert(&mut self, i: usize) {
        self.0 |= 1u64 << i;
    }

    pub fn remove(&mut self, i: usize) {
        self.0 &= !(1u64 << i);
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn union(&self, other: VarSet) -> VarSet {
        VarSet(self.0 | other.0)
    }

    pub fn intersect(&self, other: VarSet) -> VarSet {
        VarSet(self.0 & other.0)
    }

    pub fn minus(&self, other: VarSet) -> VarSet {
        VarSet(self.0 & !other.0)
    }

    pub fn is_subset_of(&self, other: VarSet) -> bool {
        self.0 & !other.0 == 0
    }

    /// Ascending variable ids.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..64).filter(move |i| self.contains(*i))
    }

    /// All subsets of `self`, the empty set first, `self` last.
    pub fn subsets(&self) -> impl Iterator<Item = VarSet> {
        let full = self.0;
        let mut next = Some(0u64);
        std::iter::from_fn(move || {
            let cur = next?;
            next = if cur == full {
                None
            } else {
                // Standard submask enumeration in increasing order.
                Some((cur.wrapping_sub(full)) & full)
            };
            Some(VarSet(cur))
        })
    }
}

impl fmt::Debug for VarSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, i) in self.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

/// One body atom: relation symbol plus its variable list in column order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atom {
    pub relation: String,
    /// Variable ids in the order the columns were written. Repeats are
    /// rejected at construction, so `vars.len()` is the arity.
    pub vars: Vec<usize>,
}

impl Atom {
    pub fn arity(&self) -> usize {
        self.vars.len()
    }

    pub fn var_set(&self) -> VarSet {
        VarSet::from_iter(self.vars.iter().copied())
    }

    /// Column positions (in this atom) of the variables in `x`, ascending
    /// by variable id.
    pub fn positions_of(&self, x: VarSet) -> Vec<usize> {
        x.iter()
            .filter_map(|v| self.vars.iter().position(|&w| w == v))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub name: String,
    /// Head variable names; position in this list is the variable id.
    pub head: Vec<String>,
    pub atoms: Vec<Atom>,
}

impl Query {
    /// Number of variables, `k`.
    pub fn num_vars(&self) -> usize {
        self.head.len()
    }

    /// Number of atoms, `ell`.
    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn all_vars(&self) -> VarSet {
        VarSet((1u64 << self.head.len()) - 1)
    }

    pub fn var_name(&self, i: usize) -> &str {
        &self.head[i]
    }

    pub fn atom_index(&self, relation: &str) -> Result<usize> {
        self.atoms
            .iter()
            .position(|a| a.relation == relation)
            .ok_or_else(|| Error::UnknownRelation(relation.to_string()))
    }

    /// Atom indices covering variable `i`.
    pub fn atoms_of_var(&self, i: usize) -> Vec<usize> {
        self.atoms
            .iter()
            .enumerate()
            .filter(|(_, a)| a.var_set().contains(i))
            .map(|(j, _)| j)
            .collect()
    }

    /// Hypergraph incidence matrix: `incidence[i][j]` is true iff variable
    /// `i` occurs in atom `j`.
    pub fn incidence(&self) -> Vec<Vec<bool>> {
        (0..self.num_vars())
            .map(|i| self.atoms.iter().map(|a| a.var_set().contains(i)).collect())
            .collect()
    }

    /// Sum of atom arities, `a`.
    pub fn total_arity(&self) -> usize {
        self.atoms.iter().map(|a| a.arity()).sum()
    }

    /// The residual query q_x: drops the variables in `x` from the head and
    /// from every atom. Atoms whose variables are all in `x` remain as
    /// zero-arity atoms; packings over the residual query may still assign
    /// them weight, and the skew machinery keys subinstances by them.
    ///
    /// Variable ids are renumbered to be dense in the residual head; the
    /// returned map sends residual ids back to original ids.
    pub fn residual(&self, x: VarSet) -> (Query, Vec<usize>) {
        let mut back = Vec::new();
        let mut fwd = vec![usize::MAX; self.num_vars()];
        let mut head = Vec::new();
        for i in 0..self.num_vars() {
            if !x.contains(i) {
                fwd[i] = back.len();
                back.push(i);
                head.push(self.head[i].clone());
            }
        }
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom {
                relation: a.relation.clone(),
                vars: a
                    .vars
                    .iter()
                    .filter(|v| !x.contains(**v))
                    .map(|v| fwd[*v])
                    .collect(),
            })
            .collect();
        (
            Query {
                name: self.name.clone(),
                head,
                atoms,
            },
            back,
        )
    }

    /// Structural validation used by both the parser and programmatic
    /// construction: distinct relation symbols, distinct head names,
    /// no repeated variable inside an atom, and fullness (head variables
    /// and body variables coincide). Zero-arity atoms are legal so that
    /// residual queries round-trip.
    pub fn validate(&self) -> Result<()> {
        for (i, a) in self.atoms.iter().enumerate() {
            for b in &self.atoms[i + 1..] {
                if a.relation == b.relation {
                    return Err(Error::InvalidQuery(format!(
                        "relation {} appears twice (self-joins are not supported)",
                        a.relation
                    )));
                }
            }
            let mut seen = VarSet::EMPTY;
            for &v in &a.vars {
                if v >= self.head.len() {
                    return Err(Error::InvalidQuery(format!(
                        "atom {} references variable id {v} outside the head",
                        a.relation
                    )));
                }
                if seen.contains(v) {
                    return Err(Error::InvalidQuery(format!(
                        "variable {} repeats inside atom {}",
                        self.head[v], a.relation
                    )));
                }
                seen.insert(v);
            }
        }
        for i in 0..self.head.len() {
            for j in i + 1..self.head.len() {
                if self.head[i] == self.head[j] {
                    return Err(Error::InvalidQuery(format!(
                        "head variable {} repeats",
                        self.head[i]
                    )));
                }
            }
        }
        let body: VarSet = self
            .atoms
            .iter()
            .fold(VarSet::EMPTY, |s, a| s.union(a.var_set()));
        if self.num_vars() > 64 {
            return Err(Error::InvalidQuery(
                "more than 64 variables are not supported".into(),
            ));
        }
        if body != self.all_vars() {
            let missing: Vec<&str> = (0..self.num_vars())
                .filter(|i| !body.contains(*i))
                .map(|i| self.head[i].as_str())
                .collect();
            return Err(Error::InvalidQuery(format!(
                "query is not full: head variable(s) {} appear in no atom",
                missing.join(", ")
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({})", self.name, self.head.join(", "))?;
        write!(f, " :- ")?;
        for (j, a) in self.atoms.iter().enumerate() {
            if j > 0 {
                write!(f, ", ")?;
            }
            let names: Vec<&str> = a.vars.iter().map(|&v| self.head[v].as_str()).collect();
            write!(f, "{}({})", a.relation, names.join(", "))?;
        }
        Ok(())
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn eat(&mut self, token: &str) -> Result<()> {
        self.skip_ws();
        if self.rest().starts_with(token) {
            self.pos += token.len();
            Ok(())
        } else {
            Err(self.err(format!("expected {token:?}")))
        }
    }

    fn ident(&mut self) -> Result<&'a str> {
        self.skip_ws();
        let rest = self.rest();
        let mut end = 0;
        for (i, c) in rest.char_indices() {
            let ok = if i == 0 {
                c.is_ascii_alphabetic() || c == '_'
            } else {
                c.is_ascii_alphanumeric() || c == '_'
            };
            if !ok {
                break;
            }
            end = i + c.len_utf8();
        }
        if end == 0 {
            return Err(self.err("expected identifier"));
        }
        self.pos += end;
        Ok(&rest[..end])
    }

    /// `( ident, ident, ... )` possibly empty.
    fn name_list(&mut self) -> Result<Vec<&'a str>> {
        self.eat("(")?;
        let mut names = Vec::new();
        self.skip_ws();
        if self.rest().starts_with(')') {
            self.pos += 1;
            return Ok(names);
        }
        loop {
            names.push(self.ident()?);
            self.skip_ws();
            if self.rest().starts_with(',') {
                self.pos += 1;
            } else {
                self.eat(")")?;
                return Ok(names);
            }
        }
    }
}

/// Parses `Name(v1, ..., vk) :- S1(...), S2(...), ...`.
pub fn parse(text: &str) -> Result<Query> {
    let mut p = Parser { src: text, pos: 0 };
    let name = p.ident()?.to_string();
    let head_names = p.name_list()?;
    p.eat(":-")?;
    let var_id = |names: &[&str], v: &str, where_: &Parser| -> Result<usize> {
        names
            .iter()
            .position(|h| *h == v)
            .ok_or_else(|| where_.err(format!("body variable {v} does not appear in the head")))
    };
    let mut atoms = Vec::new();
    loop {
        let rel = p.ident()?.to_string();
        let vars = p
            .name_list()?
            .iter()
            .map(|v| var_id(&head_names, v, &p))
            .collect::<Result<Vec<_>>>()?;
        atoms.push(Atom {
            relation: rel,
            vars,
        });
        p.skip_ws();
        if p.rest().starts_with(',') {
            p.pos += 1;
        } else {
            break;
        }
    }
    p.skip_ws();
    if !p.rest().is_empty() {
        return Err(p.err("trailing input after query"));
    }
    let q = Query {
        name,
        head: head_names.into_iter().map(str::to_string).collect(),
        atoms,
    };
    q.validate()?;
    Ok(q)
}
