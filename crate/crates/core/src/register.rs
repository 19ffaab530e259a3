//! Sparse pure states over labelled qudit wires.
//!
//! A [`PureState`] stores `d^{-s/2} · c^{-1/2} · Σ α_t |t⟩` where `s` is the
//! scale exponent, `c` an optional rational renormalisation (one for every
//! state the protocol produces) and `α_t` amplitudes of the chosen backend.

use std::collections::BTreeMap;
use std::fmt;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, RngCore};
use serde::ser::{Serialize, SerializeStruct, Serializer};

use crate::error::{Error, Result};
use crate::ring::{rational_string, Amplitude, ComplexF, Probability, Rational, FLOAT_TOL};

/// Display order of the protocol's wires: Alice, Bob, key qudit, Eve.
pub const WIRE_ORDER: [&str; 4] = ["a", "b", "k", "e"];

/// Dit values of one basis state, ordered like the owning state's wires.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BasisTuple(pub Vec<u32>);

impl BasisTuple {
    pub fn values(&self) -> &[u32] {
        &self.0
    }
}

impl From<Vec<u32>> for BasisTuple {
    fn from(v: Vec<u32>) -> Self {
        BasisTuple(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShiftDirection {
    /// `target ← target + control (mod d)`
    Right,
    /// `target ← target − control (mod d)`
    Left,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompareMode {
    Exact,
    UpToGlobalPhase,
}

/// Source of measurement outcomes: a random stream, or a scripted branch
/// selector when enumerating every branch.
pub trait OutcomeSource {
    /// Picks the index of one branch given their probabilities.
    fn choose(&mut self, probabilities: &[Probability]) -> usize;
}

impl<R: RngCore> OutcomeSource for R {
    fn choose(&mut self, probabilities: &[Probability]) -> usize {
        sample_index(self, probabilities)
    }
}

/// Draws an index with the given probabilities. Exact probabilities whose
/// common denominator fits in 64 bits are sampled without rounding.
fn sample_index<R: RngCore + ?Sized>(rng: &mut R, probabilities: &[Probability]) -> usize {
    let exact: Option<Vec<&Rational>> = probabilities.iter().map(Probability::exact).collect();
    if let Some(exact) = exact {
        let denom = exact
            .iter()
            .fold(BigInt::one(), |acc, p| acc.lcm(p.denom()));
        let numers: Vec<BigInt> = exact
            .iter()
            .map(|p| p.numer() * (&denom / p.denom()))
            .collect();
        let total: BigInt = numers.iter().sum();
        if let Some(total) = total.to_u64().filter(|&t| t > 0) {
            let mut draw = BigInt::from(rng.gen_range(0..total));
            for (i, n) in numers.iter().enumerate() {
                if &draw < n {
                    return i;
                }
                draw -= n;
            }
        }
    }
    let total: f64 = probabilities.iter().map(Probability::to_f64).sum();
    let mut draw = rng.gen::<f64>() * total;
    for (i, p) in probabilities.iter().enumerate() {
        let p = p.to_f64();
        if draw < p {
            return i;
        }
        draw -= p;
    }
    probabilities
        .iter()
        .rposition(|p| !p.is_zero())
        .unwrap_or(0)
}

/// Result of a computational-basis measurement.
#[derive(Clone, Debug)]
pub struct Measurement<A> {
    pub outcome: u32,
    pub probability: Probability,
    pub collapsed: PureState<A>,
}

/// One-qudit reduced density matrix.
#[derive(Clone, Debug)]
pub struct DensityMatrixSlice<A> {
    dim: u32,
    entries: Vec<Vec<A>>,
}

impl<A: Amplitude> DensityMatrixSlice<A> {
    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn entry(&self, row: u32, col: u32) -> &A {
        &self.entries[row as usize][col as usize]
    }

    pub fn trace(&self) -> Probability {
        let sum = (0..self.dim as usize).fold(A::zero(self.dim), |acc, i| acc.add(&self.entries[i][i]));
        to_probability(&sum)
    }

    pub fn is_hermitian(&self) -> bool {
        let d = self.dim as usize;
        (0..d).all(|i| (0..d).all(|j| self.entries[i][j].same_as(&self.entries[j][i].conj())))
    }

    /// Whether the matrix equals `I/d`.
    pub fn is_maximally_mixed(&self) -> bool {
        let d = self.dim;
        let diag = A::from_rational(d, &Rational::new(BigInt::one(), BigInt::from(d)));
        let zero = A::zero(d);
        (0..d as usize).all(|i| {
            (0..d as usize).all(|j| {
                let expected = if i == j { &diag } else { &zero };
                self.entries[i][j].same_as(expected)
            })
        })
    }

    /// Whether the matrix is the projector `|v⟩⟨v|`.
    pub fn is_projector_onto(&self, value: u32) -> bool {
        let d = self.dim;
        let one = A::from_rational(d, &Rational::one());
        let zero = A::zero(d);
        (0..d).all(|i| {
            (0..d).all(|j| {
                let expected = if i == value && j == value { &one } else { &zero };
                self.entry(i, j).same_as(expected)
            })
        })
    }
}

fn to_probability<A: Amplitude>(value: &A) -> Probability {
    match value.as_rational() {
        Some(r) if A::EXACT => Probability::Exact(r),
        _ => Probability::Approx(value.to_complex().re),
    }
}

/// Σ |α|² over the given amplitudes, exact when the sum is rational.
fn weight<'a, A: Amplitude>(dim: u32, amps: impl Iterator<Item = &'a A>) -> Probability {
    let sum = amps.fold(A::zero(dim), |acc, a| acc.add(&a.mul(&a.conj())));
    to_probability(&sum)
}

/// Sparse pure state on named qudit wires.
#[derive(Clone, Debug)]
pub struct PureState<A> {
    dim: u32,
    wires: Vec<String>,
    scale_exp: u32,
    renorm: Rational,
    terms: BTreeMap<BasisTuple, A>,
}

fn check_dim(dim: u32) -> Result<()> {
    if dim < 2 {
        Err(Error::InvalidDimension(dim))
    } else {
        Ok(())
    }
}

fn check_dit(value: u32, dim: u32) -> Result<()> {
    if value >= dim {
        Err(Error::InvalidDit { value, dim })
    } else {
        Ok(())
    }
}

/// `(1/√d) Σ_j |j,j⟩` on wires `a`, `b`.
pub fn bell_state<A: Amplitude>(dim: u32) -> Result<PureState<A>> {
    check_dim(dim)?;
    let one = A::from_rational(dim, &Rational::one());
    let terms = (0..dim)
        .map(|j| (BasisTuple(vec![j, j]), one.clone()))
        .collect();
    Ok(PureState {
        dim,
        wires: vec!["a".into(), "b".into()],
        scale_exp: 1,
        renorm: Rational::one(),
        terms,
    })
}

/// Product of computational basis states, one per listed wire.
pub fn basis_state<A: Amplitude>(dim: u32, wire_values: &[(&str, u32)]) -> Result<PureState<A>> {
    check_dim(dim)?;
    let mut wires = Vec::with_capacity(wire_values.len());
    let mut values = Vec::with_capacity(wire_values.len());
    for &(label, value) in wire_values {
        if wires.iter().any(|w| w == label) {
            return Err(Error::DuplicateWire(label.into()));
        }
        check_dit(value, dim)?;
        wires.push(label.to_string());
        values.push(value);
    }
    let mut terms = BTreeMap::new();
    terms.insert(BasisTuple(values), A::from_rational(dim, &Rational::one()));
    Ok(PureState {
        dim,
        wires,
        scale_exp: 0,
        renorm: Rational::one(),
        terms,
    })
}

/// Random normalised state with at most `max_terms` basis terms, each with an
/// amplitude `r·ζ^e` for small rationals `r`. Used by property checks.
pub fn random_state<A: Amplitude, R: Rng + ?Sized>(
    dim: u32,
    wires: &[&str],
    max_terms: usize,
    rng: &mut R,
) -> Result<PureState<A>> {
    check_dim(dim)?;
    let n_terms = rng.gen_range(1..=max_terms.max(1));
    let mut terms = BTreeMap::new();
    for _ in 0..n_terms {
        let tuple: Vec<u32> = wires.iter().map(|_| rng.gen_range(0..dim)).collect();
        let mag = Rational::new(
            BigInt::from(rng.gen_range(1..=5i64)),
            BigInt::from(rng.gen_range(1..=3i64)),
        );
        let amp = A::root_of_unity(dim, rng.gen_range(0..dim as i64)).scale(&mag);
        terms.insert(BasisTuple(tuple), amp);
    }
    let labels = wires.iter().map(|w| w.to_string()).collect();
    let mut state = PureState::from_terms(dim, labels, 0, terms)?;
    match state.norm_squared() {
        Probability::Exact(norm) => {
            state.renorm = norm;
            state.normalize_renorm();
        }
        Probability::Approx(norm) => {
            let s = 1.0 / norm.sqrt();
            let s = Rational::from_float(s).expect("finite norm");
            state.terms = state.terms.into_iter().map(|(k, a)| (k, a.scale(&s))).collect();
        }
    }
    Ok(state)
}

impl<A: Amplitude> PureState<A> {
    /// Builds a state from explicit terms; the global factor is `d^{-s/2}`.
    /// Zero amplitudes are dropped. Normalisation is not checked.
    pub fn from_terms(
        dim: u32,
        wires: Vec<String>,
        scale_exp: u32,
        terms: BTreeMap<BasisTuple, A>,
    ) -> Result<Self> {
        check_dim(dim)?;
        for (i, w) in wires.iter().enumerate() {
            if wires[..i].contains(w) {
                return Err(Error::DuplicateWire(w.clone()));
            }
        }
        for tuple in terms.keys() {
            if tuple.0.len() != wires.len() {
                return Err(Error::InvalidConfig(format!(
                    "basis tuple {:?} does not match {} wires",
                    tuple.0,
                    wires.len()
                )));
            }
            for &v in &tuple.0 {
                check_dit(v, dim)?;
            }
        }
        let terms = terms.into_iter().filter(|(_, a)| !a.is_zero()).collect();
        Ok(Self {
            dim,
            wires,
            scale_exp,
            renorm: Rational::one(),
            terms,
        })
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn wires(&self) -> &[String] {
        &self.wires
    }

    pub fn scale_exp(&self) -> u32 {
        self.scale_exp
    }

    /// Extra rational renormalisation `c` of the global factor `c^{-1/2}`.
    pub fn renorm(&self) -> &Rational {
        &self.renorm
    }

    pub fn terms(&self) -> &BTreeMap<BasisTuple, A> {
        &self.terms
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn has_wire(&self, label: &str) -> bool {
        self.wires.iter().any(|w| w == label)
    }

    fn wire_index(&self, label: &str) -> Result<usize> {
        self.wires
            .iter()
            .position(|w| w == label)
            .ok_or_else(|| Error::MissingWire(label.into()))
    }

    /// `d^{-s} / c`, the factor multiplying every `|α|²`.
    fn weight_factor(&self) -> Rational {
        let ds = num_traits::pow(BigInt::from(self.dim), self.scale_exp as usize);
        Rational::new(BigInt::one(), ds) / &self.renorm
    }

    /// Amplitude of a basis tuple as a complex number, global factor included.
    pub fn complex_amplitude(&self, tuple: &BasisTuple) -> ComplexF {
        self.terms
            .get(tuple)
            .map(|a| a.to_complex() * crate::ring::rational_to_f64(&self.weight_factor()).sqrt())
            .unwrap_or_default()
    }

    pub fn norm_squared(&self) -> Probability {
        weight(self.dim, self.terms.values()).scale(&self.weight_factor())
    }

    /// Appends the wires of `other`; scale exponents add.
    pub fn tensor(&self, other: &PureState<A>) -> Result<PureState<A>> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        if let Some(w) = other.wires.iter().find(|w| self.has_wire(w)) {
            return Err(Error::DuplicateWire(w.clone()));
        }
        let mut terms = BTreeMap::new();
        for (ta, aa) in &self.terms {
            for (tb, ab) in &other.terms {
                let mut values = ta.0.clone();
                values.extend_from_slice(&tb.0);
                terms.insert(BasisTuple(values), aa.mul(ab));
            }
        }
        let mut wires = self.wires.clone();
        wires.extend(other.wires.iter().cloned());
        let mut out = PureState {
            dim: self.dim,
            wires,
            scale_exp: self.scale_exp + other.scale_exp,
            renorm: &self.renorm * &other.renorm,
            terms,
        };
        out.normalize_scale();
        Ok(out)
    }

    /// Adjoins a fresh wire in a basis state, placed by [`WIRE_ORDER`].
    pub fn adjoin(&self, label: &str, value: u32) -> Result<PureState<A>> {
        let fresh = basis_state::<A>(self.dim, &[(label, value)])?;
        let joined = self.tensor(&fresh)?;
        let mut order: Vec<String> = joined.wires.clone();
        order.sort_by_key(|w| {
            WIRE_ORDER
                .iter()
                .position(|o| o == w)
                .unwrap_or(WIRE_ORDER.len())
        });
        joined.reorder(&order.iter().map(String::as_str).collect::<Vec<_>>())
    }

    /// Permutes the wire order.
    pub fn reorder(&self, order: &[&str]) -> Result<PureState<A>> {
        if order.len() != self.wires.len() {
            return Err(Error::IncompatibleWires {
                left: self.wires.clone(),
                right: order.iter().map(|s| s.to_string()).collect(),
            });
        }
        let perm = order
            .iter()
            .map(|w| self.wire_index(w))
            .collect::<Result<Vec<_>>>()?;
        let terms = self
            .terms
            .iter()
            .map(|(t, a)| (BasisTuple(perm.iter().map(|&i| t.0[i]).collect()), a.clone()))
            .collect();
        Ok(PureState {
            dim: self.dim,
            wires: order.iter().map(|s| s.to_string()).collect(),
            scale_exp: self.scale_exp,
            renorm: self.renorm.clone(),
            terms,
        })
    }

    /// Removes a wire that holds the same dit in every term, returning it.
    pub fn remove_definite_wire(&self, label: &str) -> Result<(PureState<A>, u32)> {
        let idx = self.wire_index(label)?;
        let value = self
            .deterministic_outcome(label)?
            .ok_or_else(|| Error::IndefiniteWire(label.into()))?;
        let terms = self
            .terms
            .iter()
            .map(|(t, a)| {
                let mut v = t.0.clone();
                v.remove(idx);
                (BasisTuple(v), a.clone())
            })
            .collect();
        let mut wires = self.wires.clone();
        wires.remove(idx);
        Ok((
            PureState {
                dim: self.dim,
                wires,
                scale_exp: self.scale_exp,
                renorm: self.renorm.clone(),
                terms,
            },
            value,
        ))
    }

    pub fn controlled_shift(
        &self,
        control: &str,
        target: &str,
        direction: ShiftDirection,
    ) -> Result<PureState<A>> {
        let c = self.wire_index(control)?;
        let t = self.wire_index(target)?;
        if c == t {
            return Err(Error::SameWire(control.into()));
        }
        let d = self.dim;
        let terms = self
            .terms
            .iter()
            .map(|(tuple, a)| {
                let mut v = tuple.0.clone();
                v[t] = match direction {
                    ShiftDirection::Right => (v[t] + v[c]) % d,
                    ShiftDirection::Left => (v[t] + d - v[c]) % d,
                };
                (BasisTuple(v), a.clone())
            })
            .collect();
        Ok(PureState {
            terms,
            ..self.clone_header()
        })
    }

    /// Generalised Hadamard `H|j⟩ = d^{-1/2} Σ_t ζ^{jt} |t⟩` on one wire, or
    /// its entrywise conjugate `H*` (phases `ζ^{-jt}`).
    pub fn hadamard(&self, wire: &str, conjugate: bool) -> Result<PureState<A>> {
        let w = self.wire_index(wire)?;
        let d = self.dim;
        let sign: i64 = if conjugate { -1 } else { 1 };
        let mut acc: BTreeMap<BasisTuple, A> = BTreeMap::new();
        for (tuple, amp) in &self.terms {
            let j = tuple.0[w] as i64;
            for t in 0..d {
                let mut v = tuple.0.clone();
                v[w] = t;
                let phase = amp.mul_root(d, sign * j * t as i64);
                acc.entry(BasisTuple(v))
                    .and_modify(|a| *a = a.add(&phase))
                    .or_insert(phase);
            }
        }
        acc.retain(|_, a| !a.is_zero());
        let mut out = PureState {
            terms: acc,
            scale_exp: self.scale_exp + 1,
            ..self.clone_header()
        };
        out.normalize_scale();
        Ok(out)
    }

    /// Applies `H ⊗ H* ⊗ …`: the listed wires in order, each with its flag.
    pub fn hadamard_layer(&self, ops: &[(&str, bool)]) -> Result<PureState<A>> {
        ops.iter()
            .try_fold(self.clone(), |st, (w, conj)| st.hadamard(w, *conj))
    }

    fn clone_header(&self) -> PureState<A> {
        PureState {
            dim: self.dim,
            wires: self.wires.clone(),
            scale_exp: self.scale_exp,
            renorm: self.renorm.clone(),
            terms: BTreeMap::new(),
        }
    }

    /// Pulls common factors of `d` out of the amplitudes into the scale
    /// exponent, two at a time.
    fn normalize_scale(&mut self) {
        while self.scale_exp >= 2
            && !self.terms.is_empty()
            && self.terms.values().all(|a| a.divisible_by(self.dim))
        {
            let inv = Rational::new(BigInt::one(), BigInt::from(self.dim));
            for a in self.terms.values_mut() {
                *a = a.scale(&inv);
            }
            self.scale_exp -= 2;
        }
    }

    /// Moves powers of `d` and square factors of the renormalisation into
    /// the scale exponent and the amplitudes.
    fn normalize_renorm(&mut self) {
        let d = BigInt::from(self.dim);
        let (mut numer, mut denom) = (self.renorm.numer().clone(), self.renorm.denom().clone());
        let mut shift: i64 = 0;
        while numer.is_multiple_of(&d) && !numer.is_zero() {
            numer /= &d;
            shift += 1;
        }
        while denom.is_multiple_of(&d) {
            denom /= &d;
            shift -= 1;
        }
        let (rn, rd) = (numer.sqrt(), denom.sqrt());
        if &rn * &rn == numer && &rd * &rd == denom {
            // c' = r² is a perfect square: divide amplitudes by r
            let inv_root = Rational::new(rd, rn);
            for a in self.terms.values_mut() {
                *a = a.scale(&inv_root);
            }
            self.renorm = Rational::one();
        } else {
            self.renorm = Rational::new(numer, denom);
        }
        let mut s = self.scale_exp as i64 + shift;
        if s < 0 {
            let lift = (((-s) + 1) / 2) as usize;
            let factor = Rational::from_integer(num_traits::pow(d, lift));
            for a in self.terms.values_mut() {
                *a = a.scale(&factor);
            }
            s += 2 * lift as i64;
        }
        self.scale_exp = s as u32;
        self.normalize_scale();
    }

    /// Every outcome with non-zero probability, its exact probability and
    /// the collapsed, renormalised state, in ascending outcome order.
    pub fn measurement_branches(&self, wire: &str) -> Result<Vec<Measurement<A>>> {
        let w = self.wire_index(wire)?;
        let mut grouped: BTreeMap<u32, BTreeMap<BasisTuple, A>> = BTreeMap::new();
        for (t, a) in &self.terms {
            grouped
                .entry(t.0[w])
                .or_default()
                .insert(t.clone(), a.clone());
        }
        let factor = self.weight_factor();
        let raw: Vec<(u32, Probability, BTreeMap<BasisTuple, A>)> = grouped
            .into_iter()
            .map(|(v, terms)| {
                let p = weight(self.dim, terms.values()).scale(&factor);
                (v, p, terms)
            })
            .collect();
        let total = raw
            .iter()
            .fold(Probability::zero(), |acc, (_, p, _)| &acc + p);
        Ok(raw
            .into_iter()
            .filter(|(_, p, _)| !p.is_zero())
            .map(|(outcome, p, terms)| {
                let probability = p.div(&total);
                let collapsed = self.collapse(terms, &probability);
                Measurement {
                    outcome,
                    probability,
                    collapsed,
                }
            })
            .collect())
    }

    fn collapse(&self, terms: BTreeMap<BasisTuple, A>, probability: &Probability) -> PureState<A> {
        let mut out = PureState {
            terms,
            ..self.clone_header()
        };
        let q = match probability {
            Probability::Exact(q) => q.clone(),
            Probability::Approx(q) if !A::EXACT => {
                let s = 1.0 / q.sqrt();
                for a in out.terms.values_mut() {
                    *a = a.scale(&Rational::from_float(s).expect("finite probability"));
                }
                return out;
            }
            Probability::Approx(q) => {
                log::warn!("inexact branch probability {q}; renormalising with a rational approximation");
                approximate_rational(*q)
            }
        };
        out.renorm = &out.renorm * q;
        out.normalize_renorm();
        out
    }

    /// Computational-basis measurement with Born-rule outcome selection.
    pub fn measure<S: OutcomeSource + ?Sized>(
        &self,
        wire: &str,
        source: &mut S,
    ) -> Result<Measurement<A>> {
        let mut branches = self.measurement_branches(wire)?;
        if branches.is_empty() {
            return Err(Error::InvariantViolation("measuring an empty state".into()));
        }
        let probs: Vec<Probability> = branches.iter().map(|b| b.probability.clone()).collect();
        let idx = source.choose(&probs).min(branches.len() - 1);
        Ok(branches.swap_remove(idx))
    }

    /// The dit held by `wire` when it is the same in every term.
    pub fn deterministic_outcome(&self, wire: &str) -> Result<Option<u32>> {
        let w = self.wire_index(wire)?;
        let mut values = self.terms.keys().map(|t| t.0[w]);
        let Some(first) = values.next() else {
            return Ok(None);
        };
        Ok(values.all(|v| v == first).then_some(first))
    }

    /// Partial trace over every wire except `wire`.
    pub fn reduced_density(&self, wire: &str) -> Result<DensityMatrixSlice<A>> {
        let w = self.wire_index(wire)?;
        let d = self.dim as usize;
        let mut by_rest: BTreeMap<Vec<u32>, Vec<(u32, &A)>> = BTreeMap::new();
        for (t, a) in &self.terms {
            let mut rest = t.0.clone();
            let v = rest.remove(w);
            by_rest.entry(rest).or_default().push((v, a));
        }
        let mut entries = vec![vec![A::zero(self.dim); d]; d];
        for group in by_rest.values() {
            for (i, ai) in group {
                for (j, aj) in group {
                    let e = &mut entries[*i as usize][*j as usize];
                    *e = e.add(&ai.mul(&aj.conj()));
                }
            }
        }
        let factor = self.weight_factor();
        for row in &mut entries {
            for e in row.iter_mut() {
                *e = e.scale(&factor);
            }
        }
        Ok(DensityMatrixSlice {
            dim: self.dim,
            entries,
        })
    }

    /// Compares two states; wire order is normalised by label.
    pub fn state_equals(&self, other: &PureState<A>, mode: CompareMode) -> Result<bool> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        let mut mine = self.wires.clone();
        let mut theirs = other.wires.clone();
        mine.sort();
        theirs.sort();
        if mine != theirs {
            return Err(Error::IncompatibleWires {
                left: self.wires.clone(),
                right: other.wires.clone(),
            });
        }
        let order: Vec<&str> = self.wires.iter().map(String::as_str).collect();
        let other = other.reorder(&order)?;
        Ok(match mode {
            CompareMode::Exact if A::EXACT => self.exact_equals(&other),
            CompareMode::Exact => self.float_equals(&other, false),
            CompareMode::UpToGlobalPhase => self.float_equals(&other, true),
        })
    }

    /// Exact comparison of `√F_a · α` and `√F_b · β` without leaving the
    /// coefficient ring. When `F_a/F_b` is a rational square `σ²` this is a
    /// term-wise check `σα = β`; otherwise squares are compared and the sign
    /// is fixed by requiring `Re(α β̄) > 0`.
    fn exact_equals(&self, other: &PureState<A>) -> bool {
        if self.terms.len() != other.terms.len()
            || self.terms.keys().zip(other.terms.keys()).any(|(a, b)| a != b)
        {
            return false;
        }
        let ratio = self.weight_factor() / other.weight_factor();
        match rational_sqrt(&ratio) {
            Some(sigma) => self
                .terms
                .values()
                .zip(other.terms.values())
                .all(|(a, b)| a.scale(&sigma).same_as(b)),
            None => self.terms.values().zip(other.terms.values()).all(|(a, b)| {
                a.mul(a).scale(&ratio).same_as(&b.mul(b))
                    && (a.to_complex() * b.to_complex().conj()).re > 0.0
            }),
        }
    }

    fn float_equals(&self, other: &PureState<A>, up_to_phase: bool) -> bool {
        let keys: std::collections::BTreeSet<&BasisTuple> =
            self.terms.keys().chain(other.terms.keys()).collect();
        let amps: Vec<(ComplexF, ComplexF)> = keys
            .iter()
            .map(|k| (self.complex_amplitude(k), other.complex_amplitude(k)))
            .collect();
        let phase = if up_to_phase {
            match amps.iter().find(|(a, _)| a.norm() > FLOAT_TOL) {
                Some((a, b)) => {
                    let r = b / a;
                    if (r.norm() - 1.0).abs() > 1e-9 {
                        return false;
                    }
                    r
                }
                None => ComplexF::new(1.0, 0.0),
            }
        } else {
            ComplexF::new(1.0, 0.0)
        };
        amps.iter().all(|(a, b)| (a * phase - b).norm() < FLOAT_TOL)
    }

    /// Amplitude-wise distance to another state, global factors included.
    pub fn max_amplitude_distance(&self, other: &PureState<A>) -> Result<f64> {
        let order: Vec<&str> = self.wires.iter().map(String::as_str).collect();
        let other = other.reorder(&order)?;
        let keys: std::collections::BTreeSet<&BasisTuple> =
            self.terms.keys().chain(other.terms.keys()).collect();
        Ok(keys
            .iter()
            .map(|k| (self.complex_amplitude(k) - other.complex_amplitude(k)).norm())
            .fold(0.0, f64::max))
    }

    /// Converts to the floating backend, folding global factors into the
    /// amplitudes.
    pub fn to_float(&self) -> PureState<ComplexF> {
        let terms = self
            .terms
            .keys()
            .map(|k| (k.clone(), self.complex_amplitude(k)))
            .collect();
        PureState {
            dim: self.dim,
            wires: self.wires.clone(),
            scale_exp: 0,
            renorm: Rational::one(),
            terms,
        }
    }
}

fn rational_sqrt(r: &Rational) -> Option<Rational> {
    if r.is_negative() {
        return None;
    }
    let (n, d) = (r.numer().sqrt(), r.denom().sqrt());
    (&n * &n == *r.numer() && &d * &d == *r.denom()).then(|| Rational::new(n, d))
}

fn approximate_rational(x: f64) -> Rational {
    num_rational::Ratio::<i64>::approximate_float(x)
        .map(|r| Rational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom())))
        .or_else(|| Rational::from_float(x))
        .expect("finite probability")
}

impl<A: Amplitude> fmt::Display for PureState<A> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d^(-{}/2)", self.scale_exp)?;
        if !self.renorm.is_one() {
            write!(f, "·({})^(-1/2)", self.renorm)?;
        }
        write!(f, " [")?;
        for (i, (t, a)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            let vals: Vec<String> = t.0.iter().map(u32::to_string).collect();
            write!(f, "{:?}|{}⟩", a.to_json(), vals.join(","))?;
        }
        write!(f, "]_{{{}}}", self.wires.join(","))
    }
}

impl<A: Amplitude> Serialize for PureState<A> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(serde::Serialize)]
        struct Term<'a> {
            basis: &'a [u32],
            coeffs: serde_json::Value,
        }
        let terms: Vec<Term> = self
            .terms
            .iter()
            .map(|(t, a)| Term {
                basis: &t.0,
                coeffs: a.to_json(),
            })
            .collect();
        let fields = if self.renorm.is_one() { 5 } else { 6 };
        let mut s = serializer.serialize_struct("PureState", fields)?;
        s.serialize_field("mode", A::MODE)?;
        s.serialize_field("dim", &self.dim)?;
        s.serialize_field("wires", &self.wires)?;
        s.serialize_field("scale_exp", &self.scale_exp)?;
        if !self.renorm.is_one() {
            s.serialize_field("renorm", &rational_string(&self.renorm))?;
        }
        s.serialize_field("terms", &terms)?;
        s.end()
    }
}
