//! Finite-horizon checks of the symmetry properties a predictive rule
//! claims: exchangeability, conditional identity in distribution, their
//! partial (multi-sequence) analogues, Markov exchangeability, and the
//! axioms of an exchangeable partition probability function.
//!
//! Every check enumerates all sequences (or arrays, or count rows, or
//! partitions) up to a caller-chosen horizon and verifies the defining
//! identities exactly. Passing is a necessary condition only: a rule that
//! breaks the property beyond the horizon will still pass. Failing is
//! conclusive and comes with a witness that can be re-evaluated
//! independently.

use std::collections::BTreeMap;

use crate::engine::PredictiveRule;
use crate::error::{Error, Result};
use crate::exchangeable::{EppfSpec, PartitionCounts};
use crate::point::Point;
use crate::structured::{markov_swap_scan, MultiSequenceRule, SWAP_TOL};

/// Deviation tolerance for identities evaluated in plain arithmetic.
pub const DIAG_TOL_EXACT: f64 = 1e-12;
/// Deviation tolerance for identities routed through log space.
pub const DIAG_TOL_LOG: f64 = 1e-10;
/// Enumeration budget; checks whose predicted cost exceeds this refuse to
/// run rather than hang.
pub const MAX_EVALUATIONS: u64 = 10_000_000;

/// A concrete point at which a checked identity fails, with the two numbers
/// that should have agreed. Witnesses carry enough data to recompute both
/// sides from scratch.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Witness {
    /// `p(original) != p(permuted)` though the sequences are rearrangements
    /// of each other.
    PermutedSequence {
        original: Vec<Point>,
        permuted: Vec<Point>,
        p_original: f64,
        p_permuted: f64,
    },
    /// The one-step predictive average over the next observation moved the
    /// probability of `target`.
    BrokenMartingale {
        prefix: Vec<Point>,
        target: Point,
        predicted: f64,
        averaged: f64,
    },
    /// Arrays (stored as rows) with identical per-column multisets but
    /// different probabilities.
    PermutedArray {
        original: Vec<Vec<Point>>,
        permuted: Vec<Vec<Point>>,
        p_original: f64,
        p_permuted: f64,
    },
    /// A column whose predictive is not a martingale under the row law.
    ColumnMartingale {
        column: usize,
        prefix_rows: Vec<Vec<Point>>,
        target: Point,
        predicted: f64,
        averaged: f64,
    },
    /// The transition swap identity `p(y|x,t) p(z|x,t+e_y) =
    /// p(z|x,t) p(y|x,t+e_z)` fails at this count row.
    SwapIdentity {
        x: Point,
        y: Point,
        z: Point,
        row: Vec<(Point, usize)>,
        lhs: f64,
        rhs: f64,
    },
    /// A partition-function axiom fails at these block sizes.
    PartitionAxiom {
        relation: String,
        sizes: Vec<usize>,
        lhs: f64,
        rhs: f64,
    },
}

/// Outcome of one diagnostic: the worst deviation found across every
/// identity instance up to the horizon, against the check's tolerance.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct DiagnosticReport {
    pub check: String,
    pub pass: bool,
    /// Largest absolute deviation encountered.
    pub worst: f64,
    pub tolerance: f64,
    /// Where the worst deviation happened, when it exceeds the tolerance.
    pub witness: Option<Witness>,
    /// Number of probability evaluations performed.
    pub evaluations: u64,
    /// Horizon the enumeration ran to.
    pub n_max: usize,
    pub notes: String,
}

impl DiagnosticReport {
    fn finish(
        check: &str,
        worst: f64,
        tolerance: f64,
        witness: Option<Witness>,
        evaluations: u64,
        n_max: usize,
    ) -> Self {
        let pass = worst <= tolerance;
        DiagnosticReport {
            check: check.to_string(),
            pass,
            worst,
            tolerance,
            witness: if pass { None } else { witness },
            evaluations,
            n_max,
            notes: format!(
                "necessary-condition filter: identities verified exhaustively up to \
                 horizon {n_max} only; a pass does not certify behaviour beyond it"
            ),
        }
    }

    /// One-line rendering for console tables.
    pub fn summary_line(&self) -> String {
        format!(
            "{:<22} {}  worst {:9.3e} vs tol {:7.1e}  ({} evaluations, horizon {})",
            self.check,
            if self.pass { "PASS" } else { "FAIL" },
            self.worst,
            self.tolerance,
            self.evaluations,
            self.n_max
        )
    }
}

fn require_alphabet<R: PredictiveRule + ?Sized>(rule: &R) -> Result<Vec<Point>> {
    rule.space().points().ok_or_else(|| {
        Error::Unsupported(format!(
            "check requires a finite observation space, got {}",
            rule.space().describe()
        ))
    })
}

fn budget_check(check: &str, estimate: u64) -> Result<()> {
    if estimate > MAX_EVALUATIONS {
        return Err(Error::Config(format!(
            "{check}: enumeration needs about {estimate} evaluations, over the \
             {MAX_EVALUATIONS} budget; lower the horizon"
        )));
    }
    Ok(())
}

/// Geometric series `sum_{m=1..n} k^m`, saturating.
fn geometric(k: u64, n: usize) -> u64 {
    let mut total = 0u64;
    let mut term = 1u64;
    for _ in 0..n {
        term = term.saturating_mul(k);
        total = total.saturating_add(term);
    }
    total
}

struct Tracker {
    worst: f64,
    witness: Option<Witness>,
}

impl Tracker {
    fn new() -> Self {
        Tracker { worst: 0.0, witness: None }
    }

    fn observe(&mut self, gap: f64, witness: impl FnOnce() -> Witness) {
        if gap > self.worst {
            self.worst = gap;
            self.witness = Some(witness());
        }
    }
}

// ---------------------------------------------------------------------------
// Exchangeability
// ---------------------------------------------------------------------------

/// Verify that the joint law induced by the rule's predictives is invariant
/// under permutations, for every sequence of length at most `n_max` over the
/// rule's (finite) observation space. Also verifies each length's total
/// mass is 1, which joint invariance alone would not catch.
pub fn check_exchangeable<R: PredictiveRule + ?Sized>(
    rule: &R,
    n_max: usize,
) -> Result<DiagnosticReport> {
    let alphabet = require_alphabet(rule)?;
    if n_max == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let k = alphabet.len() as u64;
    budget_check("exchangeable", geometric(k, n_max))?;

    let mut evaluations = 0u64;
    let mut by_length: Vec<BTreeMap<Vec<Point>, f64>> = vec![BTreeMap::new(); n_max + 1];
    let mut stack: Vec<Point> = Vec::new();
    descend_probs(
        rule,
        &rule.initial_summary(),
        1.0,
        &alphabet,
        n_max,
        &mut stack,
        &mut by_length,
        &mut evaluations,
    )?;

    let mut tracker = Tracker::new();
    for probs in by_length.iter().skip(1) {
        let mut mass = 0.0;
        for (seq, &p) in probs {
            mass += p;
            let mut sorted = seq.clone();
            sorted.sort();
            if sorted != *seq {
                let q = probs[&sorted];
                tracker.observe((p - q).abs(), || Witness::PermutedSequence {
                    original: seq.clone(),
                    permuted: sorted.clone(),
                    p_original: p,
                    p_permuted: q,
                });
            }
        }
        let n = probs.keys().next().map(|s| s.len()).unwrap_or(0);
        tracker.observe((mass - 1.0).abs(), || Witness::PartitionAxiom {
            relation: format!("total mass at length {n}"),
            sizes: vec![n],
            lhs: mass,
            rhs: 1.0,
        });
    }
    Ok(DiagnosticReport::finish(
        "exchangeable",
        tracker.worst,
        DIAG_TOL_EXACT,
        tracker.witness,
        evaluations,
        n_max,
    ))
}

#[allow(clippy::too_many_arguments)]
fn descend_probs<R: PredictiveRule + ?Sized>(
    rule: &R,
    summary: &R::Summary,
    prob: f64,
    alphabet: &[Point],
    remaining: usize,
    stack: &mut Vec<Point>,
    by_length: &mut [BTreeMap<Vec<Point>, f64>],
    evaluations: &mut u64,
) -> Result<()> {
    if remaining == 0 {
        return Ok(());
    }
    let predictive = rule.predict(summary)?;
    for x in alphabet {
        let p = predictive.finite_point_mass(x)?;
        *evaluations += 1;
        stack.push(x.clone());
        let joint = prob * p;
        by_length[stack.len()].insert(stack.clone(), joint);
        if remaining > 1 && joint > 0.0 {
            let next = rule.update(summary, x)?;
            descend_probs(rule, &next, joint, alphabet, remaining - 1, stack, by_length, evaluations)?;
        } else if remaining > 1 {
            // Zero-probability branch: all extensions inherit probability 0.
            fill_zero(alphabet, remaining - 1, stack, by_length);
        }
        stack.pop();
    }
    Ok(())
}

fn fill_zero(
    alphabet: &[Point],
    remaining: usize,
    stack: &mut Vec<Point>,
    by_length: &mut [BTreeMap<Vec<Point>, f64>],
) {
    if remaining == 0 {
        return;
    }
    for x in alphabet {
        stack.push(x.clone());
        by_length[stack.len()].insert(stack.clone(), 0.0);
        fill_zero(alphabet, remaining - 1, stack, by_length);
        stack.pop();
    }
}

// ---------------------------------------------------------------------------
// Conditional identity in distribution
// ---------------------------------------------------------------------------

/// Verify the predictive-martingale identity
/// `sum_x P_n({x}) P_{n+1}({a} | x) = P_n({a})` for every target `a` and
/// every conditioning sequence of length below `n_max`. This is the
/// defining property of conditionally identically distributed sequences on
/// a finite space.
pub fn check_cid<R: PredictiveRule + ?Sized>(rule: &R, n_max: usize) -> Result<DiagnosticReport> {
    let alphabet = require_alphabet(rule)?;
    if n_max == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let k = alphabet.len() as u64;
    budget_check("cid", geometric(k, n_max).saturating_mul(k + 1))?;

    let mut evaluations = 0u64;
    let mut tracker = Tracker::new();
    let mut prefix: Vec<Point> = Vec::new();
    descend_cid(
        rule,
        &rule.initial_summary(),
        &alphabet,
        n_max,
        &mut prefix,
        &mut tracker,
        &mut evaluations,
    )?;
    Ok(DiagnosticReport::finish(
        "cid",
        tracker.worst,
        DIAG_TOL_EXACT,
        tracker.witness,
        evaluations,
        n_max,
    ))
}

fn descend_cid<R: PredictiveRule + ?Sized>(
    rule: &R,
    summary: &R::Summary,
    alphabet: &[Point],
    levels_left: usize,
    prefix: &mut Vec<Point>,
    tracker: &mut Tracker,
    evaluations: &mut u64,
) -> Result<()> {
    let predictive = rule.predict(summary)?;
    let current: Vec<f64> = alphabet
        .iter()
        .map(|x| predictive.finite_point_mass(x))
        .collect::<Result<_>>()?;
    *evaluations += alphabet.len() as u64;

    // One-step-ahead predictives after each possible next observation.
    let mut averaged = vec![0.0; alphabet.len()];
    let mut nexts = Vec::with_capacity(alphabet.len());
    for (i, x) in alphabet.iter().enumerate() {
        let next = rule.update(summary, x)?;
        let next_pred = rule.predict(&next)?;
        for (a, avg) in averaged.iter_mut().enumerate() {
            *avg += current[i] * next_pred.finite_point_mass(&alphabet[a])?;
        }
        *evaluations += alphabet.len() as u64;
        nexts.push(next);
    }
    for (a, target) in alphabet.iter().enumerate() {
        tracker.observe((averaged[a] - current[a]).abs(), || Witness::BrokenMartingale {
            prefix: prefix.clone(),
            target: target.clone(),
            predicted: current[a],
            averaged: averaged[a],
        });
    }

    if levels_left > 1 {
        for (i, x) in alphabet.iter().enumerate() {
            if current[i] == 0.0 {
                continue; // unreachable prefix
            }
            prefix.push(x.clone());
            descend_cid(rule, &nexts[i], alphabet, levels_left - 1, prefix, tracker, evaluations)?;
            prefix.pop();
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Partial exchangeability and partial cid for arrays
// ---------------------------------------------------------------------------

fn column_alphabets<M: MultiSequenceRule + ?Sized>(rule: &M) -> Result<Vec<Vec<Point>>> {
    (0..rule.columns())
        .map(|j| {
            rule.space(j).points().ok_or_else(|| {
                Error::Unsupported(format!(
                    "column {j} needs a finite space, got {}",
                    rule.space(j).describe()
                ))
            })
        })
        .collect()
}

fn rows_of(alphabets: &[Vec<Point>]) -> Vec<Vec<Point>> {
    let mut rows: Vec<Vec<Point>> = vec![Vec::new()];
    for alphabet in alphabets {
        let mut grown = Vec::with_capacity(rows.len() * alphabet.len());
        for row in &rows {
            for x in alphabet {
                let mut r = row.clone();
                r.push(x.clone());
                grown.push(r);
            }
        }
        rows = grown;
    }
    rows
}

fn row_mass<M: MultiSequenceRule + ?Sized>(
    rule: &M,
    summary: &M::Summary,
    row: &[Point],
) -> Result<f64> {
    let preds = rule.row_predictives(summary)?;
    let mut p = 1.0;
    for (pred, x) in preds.iter().zip(row.iter()) {
        p *= pred.finite_point_mass(x)?;
    }
    Ok(p)
}

/// Sort each column independently: the canonical representative of the
/// orbit of an array under separate within-column permutations.
fn canonical_array(rows: &[Vec<Point>], columns: usize) -> Vec<Vec<Point>> {
    let mut cols: Vec<Vec<Point>> = vec![Vec::with_capacity(rows.len()); columns];
    for row in rows {
        for (j, x) in row.iter().enumerate() {
            cols[j].push(x.clone());
        }
    }
    for col in cols.iter_mut() {
        col.sort();
    }
    (0..rows.len())
        .map(|i| cols.iter().map(|c| c[i].clone()).collect())
        .collect()
}

/// Verify that the array law is invariant under permuting each column
/// separately, for all arrays with at most `n_max` rows over the per-column
/// finite spaces.
pub fn check_partial_exchangeable<M: MultiSequenceRule + ?Sized>(
    rule: &M,
    n_max: usize,
) -> Result<DiagnosticReport> {
    let alphabets = column_alphabets(rule)?;
    if n_max == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let per_row: u64 = alphabets.iter().map(|a| a.len() as u64).product();
    budget_check("partial-exchangeable", geometric(per_row, n_max))?;
    let rows = rows_of(&alphabets);

    // Joint probability of every array, by row count.
    let mut by_length: Vec<BTreeMap<Vec<Vec<Point>>, f64>> = vec![BTreeMap::new(); n_max + 1];
    let mut evaluations = 0u64;
    let mut stack: Vec<Vec<Point>> = Vec::new();
    descend_arrays(
        rule,
        &rule.initial_summary(),
        1.0,
        &rows,
        n_max,
        &mut stack,
        &mut by_length,
        &mut evaluations,
    )?;

    let columns = rule.columns();
    let mut tracker = Tracker::new();
    for maps in by_length.iter().skip(1) {
        let mut mass = 0.0;
        for (array, &p) in maps {
            mass += p;
            let canon = canonical_array(array, columns);
            if canon != *array {
                let q = maps[&canon];
                tracker.observe((p - q).abs(), || Witness::PermutedArray {
                    original: array.clone(),
                    permuted: canon.clone(),
                    p_original: p,
                    p_permuted: q,
                });
            }
        }
        let n = maps.keys().next().map(|a| a.len()).unwrap_or(0);
        tracker.observe((mass - 1.0).abs(), || Witness::PartitionAxiom {
            relation: format!("total array mass at {n} rows"),
            sizes: vec![n],
            lhs: mass,
            rhs: 1.0,
        });
    }
    Ok(DiagnosticReport::finish(
        "partial-exchangeable",
        tracker.worst,
        DIAG_TOL_EXACT,
        tracker.witness,
        evaluations,
        n_max,
    ))
}

#[allow(clippy::too_many_arguments)]
fn descend_arrays<M: MultiSequenceRule + ?Sized>(
    rule: &M,
    summary: &M::Summary,
    prob: f64,
    rows: &[Vec<Point>],
    remaining: usize,
    stack: &mut Vec<Vec<Point>>,
    by_length: &mut [BTreeMap<Vec<Vec<Point>>, f64>],
    evaluations: &mut u64,
) -> Result<()> {
    if remaining == 0 {
        return Ok(());
    }
    for row in rows {
        let p = row_mass(rule, summary, row)?;
        *evaluations += row.len() as u64;
        stack.push(row.clone());
        let joint = prob * p;
        by_length[stack.len()].insert(stack.clone(), joint);
        if remaining > 1 {
            if joint > 0.0 {
                let next = rule.update_row(summary, row)?;
                descend_arrays(rule, &next, joint, rows, remaining - 1, stack, by_length, evaluations)?;
            } else {
                fill_zero_arrays(rows, remaining - 1, stack, by_length);
            }
        }
        stack.pop();
    }
    Ok(())
}

fn fill_zero_arrays(
    rows: &[Vec<Point>],
    remaining: usize,
    stack: &mut Vec<Vec<Point>>,
    by_length: &mut [BTreeMap<Vec<Vec<Point>>, f64>],
) {
    if remaining == 0 {
        return;
    }
    for row in rows {
        stack.push(row.clone());
        by_length[stack.len()].insert(stack.clone(), 0.0);
        fill_zero_arrays(rows, remaining - 1, stack, by_length);
        stack.pop();
    }
}

/// Verify the per-column martingale identity for an array rule: averaging
/// the next row over its law must leave every column's predictive
/// unchanged,
/// `sum_row P(row) P_j({a} | row) = P_j({a})`.
/// This is the defining property of partially conditionally identically
/// distributed arrays, and holds even when the columns are coupled through
/// observation weights, as long as no column's weight depends on that
/// column's own coordinate.
pub fn check_partial_cid<M: MultiSequenceRule + ?Sized>(
    rule: &M,
    n_max: usize,
) -> Result<DiagnosticReport> {
    let alphabets = column_alphabets(rule)?;
    if n_max == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let per_row: u64 = alphabets.iter().map(|a| a.len() as u64).product();
    budget_check("partial-cid", geometric(per_row, n_max).saturating_mul(per_row))?;
    let rows = rows_of(&alphabets);

    let mut evaluations = 0u64;
    let mut tracker = Tracker::new();
    let mut prefix: Vec<Vec<Point>> = Vec::new();
    descend_partial_cid(
        rule,
        &rule.initial_summary(),
        &alphabets,
        &rows,
        n_max,
        &mut prefix,
        &mut tracker,
        &mut evaluations,
    )?;
    Ok(DiagnosticReport::finish(
        "partial-cid",
        tracker.worst,
        DIAG_TOL_EXACT,
        tracker.witness,
        evaluations,
        n_max,
    ))
}

#[allow(clippy::too_many_arguments)]
fn descend_partial_cid<M: MultiSequenceRule + ?Sized>(
    rule: &M,
    summary: &M::Summary,
    alphabets: &[Vec<Point>],
    rows: &[Vec<Point>],
    levels_left: usize,
    prefix: &mut Vec<Vec<Point>>,
    tracker: &mut Tracker,
    evaluations: &mut u64,
) -> Result<()> {
    let preds = rule.row_predictives(summary)?;
    let current: Vec<Vec<f64>> = preds
        .iter()
        .zip(alphabets.iter())
        .map(|(pred, alphabet)| {
            alphabet
                .iter()
                .map(|x| pred.finite_point_mass(x))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let mut averaged: Vec<Vec<f64>> =
        alphabets.iter().map(|a| vec![0.0; a.len()]).collect();
    let mut row_probs = Vec::with_capacity(rows.len());
    let mut nexts = Vec::with_capacity(rows.len());
    for row in rows {
        let mut p_row = 1.0;
        for (pred, x) in preds.iter().zip(row.iter()) {
            p_row *= pred.finite_point_mass(x)?;
        }
        let next = rule.update_row(summary, row)?;
        let next_preds = rule.row_predictives(&next)?;
        for (j, (pred, alphabet)) in next_preds.iter().zip(alphabets.iter()).enumerate() {
            for (a, target) in alphabet.iter().enumerate() {
                averaged[j][a] += p_row * pred.finite_point_mass(target)?;
                *evaluations += 1;
            }
        }
        row_probs.push(p_row);
        nexts.push(next);
    }
    for (j, alphabet) in alphabets.iter().enumerate() {
        for (a, target) in alphabet.iter().enumerate() {
            tracker.observe((averaged[j][a] - current[j][a]).abs(), || {
                Witness::ColumnMartingale {
                    column: j,
                    prefix_rows: prefix.clone(),
                    target: target.clone(),
                    predicted: current[j][a],
                    averaged: averaged[j][a],
                }
            });
        }
    }

    if levels_left > 1 {
        for (i, row) in rows.iter().enumerate() {
            if row_probs[i] == 0.0 {
                continue;
            }
            prefix.push(row.clone());
            descend_partial_cid(
                rule,
                &nexts[i],
                alphabets,
                rows,
                levels_left - 1,
                prefix,
                tracker,
                evaluations,
            )?;
            prefix.pop();
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Markov exchangeability
// ---------------------------------------------------------------------------

/// Wrap the transition swap-identity scan as a diagnostic:
/// `pred(y, x, row)` is the probability of moving to `y` from `x` when the
/// outgoing counts at `x` are `row`, and the identity is scanned over every
/// count row with total at most `depth`.
pub fn check_markov_exchangeable<F>(
    pred: F,
    states: &[Point],
    depth: usize,
) -> Result<DiagnosticReport>
where
    F: Fn(&Point, &Point, &[(Point, usize)]) -> Result<f64>,
{
    let scan = markov_swap_scan(pred, states, depth)?;
    let witness = scan.violations.first().map(|v| Witness::SwapIdentity {
        x: v.x.clone(),
        y: v.y.clone(),
        z: v.z.clone(),
        row: v.row.clone(),
        lhs: v.lhs,
        rhs: v.rhs,
    });
    Ok(DiagnosticReport::finish(
        "markov-exchangeable",
        scan.worst,
        SWAP_TOL,
        witness,
        scan.evaluations,
        depth,
    ))
}

// ---------------------------------------------------------------------------
// EPPF axioms
// ---------------------------------------------------------------------------

/// Number of set partitions of an n-element set, for the enumeration budget.
fn bell_number(n: usize) -> u64 {
    // Bell triangle, saturating for large n.
    let mut row = vec![1u64];
    for _ in 1..=n {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(*row.last().expect("nonempty"));
        for &v in &row {
            let last = *next.last().expect("nonempty");
            next.push(last.saturating_add(v));
        }
        row = next;
    }
    row[0]
}

/// All set partitions of `{0, .., n-1}` as restricted growth strings,
/// mapped to their block-size vectors.
fn set_partition_sizes(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut assignment = vec![0usize; n];
    fn grow(i: usize, max_used: usize, assignment: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let n = assignment.len();
        if i == n {
            let blocks = max_used + 1;
            let mut sizes = vec![0usize; blocks];
            for &b in assignment.iter() {
                sizes[b] += 1;
            }
            out.push(sizes);
            return;
        }
        for b in 0..=max_used + 1 {
            assignment[i] = b;
            grow(i + 1, max_used.max(b), assignment, out);
        }
    }
    if n == 0 {
        return out;
    }
    // First element always opens block 0.
    grow(1, 0, &mut assignment, &mut out);
    out
}

/// Verify the partition-function axioms for an EPPF up to partitions of
/// `n_max` items: the singleton value is 1, the one-more-item expansion is
/// additive, the function is symmetric in block sizes, and the total mass
/// over all set partitions of each `n` is 1.
pub fn check_eppf(eppf: &EppfSpec, n_max: usize) -> Result<DiagnosticReport> {
    if n_max == 0 {
        return Err(Error::Config("horizon must be at least 1".into()));
    }
    let mut budget = 0u64;
    for n in 1..=n_max {
        budget = budget.saturating_add(bell_number(n).saturating_mul(n as u64 + 2));
    }
    budget_check("eppf", budget)?;

    let mut evaluations = 0u64;
    let mut tracker = Tracker::new();
    let mut eval = |sizes: &[usize]| -> Result<f64> {
        evaluations += 1;
        eppf.eval(&PartitionCounts::from_sizes(sizes.to_vec())?)
    };

    // Axiom: one item in one block has probability 1.
    let p1 = eval(&[1])?;
    tracker.observe((p1 - 1.0).abs(), || Witness::PartitionAxiom {
        relation: "singleton partition has probability 1".into(),
        sizes: vec![1],
        lhs: p1,
        rhs: 1.0,
    });

    for n in 1..=n_max {
        let partitions = set_partition_sizes(n);
        let mut mass = 0.0;
        for sizes in &partitions {
            let p = eval(sizes)?;
            mass += p;

            // Symmetry: reversing the size vector must not change the value.
            let mut reversed = sizes.clone();
            reversed.reverse();
            if reversed != *sizes {
                let q = eval(&reversed)?;
                tracker.observe((p - q).abs(), || Witness::PartitionAxiom {
                    relation: "symmetry in block sizes".into(),
                    sizes: sizes.clone(),
                    lhs: p,
                    rhs: q,
                });
            }

            // Additivity: the next item lands somewhere.
            if n < n_max {
                let counts = PartitionCounts::from_sizes(sizes.clone())?;
                let mut total = 0.0;
                for j in 0..=counts.k() {
                    total += eval(counts.incremented(j)?.sizes())?;
                }
                tracker.observe((total - p).abs(), || Witness::PartitionAxiom {
                    relation: "one-more-item additivity".into(),
                    sizes: sizes.clone(),
                    lhs: total,
                    rhs: p,
                });
            }
        }
        // Each set partition of n items appears exactly once, so the EPPF
        // values weighted by partition multiplicity must sum to 1.
        tracker.observe((mass - 1.0).abs(), || Witness::PartitionAxiom {
            relation: format!("total mass over set partitions of {n} items"),
            sizes: vec![n],
            lhs: mass,
            rhs: 1.0,
        });
    }
    Ok(DiagnosticReport::finish(
        "eppf",
        tracker.worst,
        DIAG_TOL_LOG,
        tracker.witness,
        evaluations,
        n_max,
    ))
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{condition, IidRule};
    use crate::exchangeable::PolyaRule;
    use crate::measure::{BaseMeasure, DiscreteDistribution, Predictive};
    use crate::newton::{MixKernel, MixingGrid, NewtonRule};
    use crate::point::{Point, SpaceKind};
    use crate::structured::{
        pcid_predict, CoupledWeightColumns, IndependentColumns, PcidState, UrnParams,
    };

    fn lab(i: u32) -> Point {
        Point::Label(i)
    }

    fn binary_base() -> BaseMeasure {
        BaseMeasure::Categorical(DiscreteDistribution::binary(0.5).unwrap())
    }

    fn ternary_base() -> BaseMeasure {
        BaseMeasure::Categorical(
            DiscreteDistribution::new(
                vec![lab(0), lab(1), lab(2)],
                vec![0.5, 0.3, 0.2],
            )
            .unwrap(),
        )
    }

    // A predictive rule that weighs later observations more:
    // conditionally identically distributed (the weights are predictable)
    // but not exchangeable.
    struct PositionWeightedRule {
        alpha0: f64,
        base: BaseMeasure,
    }

    impl PredictiveRule for PositionWeightedRule {
        type Summary = PcidState;

        fn name(&self) -> String {
            "position-weighted".into()
        }

        fn space(&self) -> SpaceKind {
            SpaceKind::Categorical { size: 2 }
        }

        fn initial_summary(&self) -> Self::Summary {
            PcidState::new(self.alpha0, self.base.clone()).unwrap()
        }

        fn update(&self, summary: &Self::Summary, x: &Point) -> crate::error::Result<Self::Summary> {
            let mut next = summary.clone();
            next.observe(x, (summary.n() + 1) as f64)?;
            Ok(next)
        }

        fn predict(&self, summary: &Self::Summary) -> crate::error::Result<Predictive> {
            Ok(Predictive::Mixture(pcid_predict(summary)?))
        }
    }

    // A predictive rule proportional to squared counts: neither
    // exchangeable nor conditionally identically distributed.
    struct SquaredFrequencyRule;

    impl PredictiveRule for SquaredFrequencyRule {
        type Summary = Vec<usize>;

        fn name(&self) -> String {
            "squared-frequency".into()
        }

        fn space(&self) -> SpaceKind {
            SpaceKind::Categorical { size: 2 }
        }

        fn initial_summary(&self) -> Self::Summary {
            vec![0, 0]
        }

        fn update(&self, summary: &Self::Summary, x: &Point) -> crate::error::Result<Self::Summary> {
            let mut next = summary.clone();
            match x {
                Point::Label(i) if (*i as usize) < 2 => next[*i as usize] += 1,
                other => {
                    return Err(crate::error::Error::Domain(format!(
                        "unexpected point {}",
                        other.describe()
                    )))
                }
            }
            Ok(next)
        }

        fn predict(&self, summary: &Self::Summary) -> crate::error::Result<Predictive> {
            let raw: Vec<f64> = summary.iter().map(|&c| 0.5 + (c * c) as f64).collect();
            let total: f64 = raw.iter().sum();
            Ok(Predictive::Finite(DiscreteDistribution::new(
                vec![lab(0), lab(1)],
                raw.iter().map(|r| r / total).collect(),
            )?))
        }
    }

    // ---------- exchangeability ----------

    #[test]
    fn polya_sequences_pass_the_exchangeability_check() {
        let rule = PolyaRule::new(1.5, ternary_base()).unwrap();
        let report = check_exchangeable(&rule, 4).unwrap();
        assert!(report.pass, "{}", report.summary_line());
        assert!(report.worst <= 1e-13);
        assert!(report.witness.is_none());
        assert!(report.notes.contains("necessary-condition"));
    }

    #[test]
    fn iid_sequences_pass_the_exchangeability_check() {
        let rule = IidRule::new(
            Predictive::Finite(DiscreteDistribution::binary(0.3).unwrap()),
            SpaceKind::Categorical { size: 2 },
        )
        .unwrap();
        let report = check_exchangeable(&rule, 5).unwrap();
        assert!(report.pass);
    }

    #[test]
    fn position_weights_fail_exchangeability_with_a_checkable_witness() {
        let rule = PositionWeightedRule { alpha0: 1.0, base: binary_base() };
        let report = check_exchangeable(&rule, 3).unwrap();
        assert!(!report.pass);
        // Length-2 laws of weighted urns are always symmetric; the witness
        // must be a length-3 sequence.
        match report.witness.as_ref().expect("witness on failure") {
            Witness::PermutedSequence { original, permuted, p_original, p_permuted } => {
                assert_eq!(original.len(), 3);
                let re_orig = crate::engine::joint_prob(&rule, original).unwrap();
                let re_perm = crate::engine::joint_prob(&rule, permuted).unwrap();
                assert!((re_orig - p_original).abs() <= 1e-12);
                assert!((re_perm - p_permuted).abs() <= 1e-12);
                assert!((re_orig - re_perm).abs() > 1e-3);
            }
            other => panic!("unexpected witness {other:?}"),
        }
    }

    #[test]
    fn witnesses_survive_json_round_trips() {
        let rule = PositionWeightedRule { alpha0: 1.0, base: binary_base() };
        let report = check_exchangeable(&rule, 3).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: DiagnosticReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.pass, report.pass);
        assert_eq!(back.worst, report.worst);
        assert!(matches!(back.witness, Some(Witness::PermutedSequence { .. })));
    }

    #[test]
    fn oversized_horizons_are_refused() {
        let rule = IidRule::new(
            Predictive::Finite(DiscreteDistribution::uniform(
                (0..4).map(lab).collect(),
            ).unwrap()),
            SpaceKind::Categorical { size: 4 },
        )
        .unwrap();
        let err = check_exchangeable(&rule, 15).unwrap_err();
        assert!(err.to_string().contains("budget"), "{err}");
    }

    #[test]
    fn continuous_spaces_are_unsupported() {
        let rule = PolyaRule::new(1.0, BaseMeasure::Uniform { lo: 0.0, hi: 1.0 }).unwrap();
        assert!(matches!(
            check_exchangeable(&rule, 3),
            Err(crate::error::Error::Unsupported(_))
        ));
    }

    // ---------- cid ----------

    #[test]
    fn polya_sequences_pass_the_cid_check() {
        let rule = PolyaRule::new(0.8, ternary_base()).unwrap();
        let report = check_cid(&rule, 4).unwrap();
        assert!(report.pass, "{}", report.summary_line());
    }

    #[test]
    fn newton_recursions_pass_the_cid_check() {
        let grid = MixingGrid::new(
            vec![0.3, 0.9],
            vec![0.7, 0.3],
            MixKernel::Bernoulli,
            1.0,
        )
        .unwrap();
        let rule = NewtonRule::new(grid);
        let report = check_cid(&rule, 5).unwrap();
        assert!(report.pass, "{}", report.summary_line());
        // And the same rule is NOT exchangeable: the checks separate the
        // two properties.
        let exch = check_exchangeable(&rule, 3).unwrap();
        assert!(!exch.pass);
    }

    #[test]
    fn position_weights_remain_cid() {
        let rule = PositionWeightedRule { alpha0: 1.0, base: binary_base() };
        let report = check_cid(&rule, 4).unwrap();
        assert!(report.pass, "{}", report.summary_line());
    }

    #[test]
    fn squared_frequencies_break_the_martingale_with_a_witness() {
        let report = check_cid(&SquaredFrequencyRule, 3).unwrap();
        assert!(!report.pass);
        match report.witness.as_ref().unwrap() {
            Witness::BrokenMartingale { prefix, target, predicted, averaged } => {
                // Re-evaluate: condition on the prefix, average the
                // one-step-ahead mass at the target by hand.
                let state = condition(&SquaredFrequencyRule, prefix).unwrap();
                let pred = SquaredFrequencyRule.predict(&state.summary).unwrap();
                let mut avg = 0.0;
                for x in [lab(0), lab(1)] {
                    let px = pred.finite_point_mass(&x).unwrap();
                    let next = SquaredFrequencyRule.update(&state.summary, &x).unwrap();
                    let next_pred = SquaredFrequencyRule.predict(&next).unwrap();
                    avg += px * next_pred.finite_point_mass(target).unwrap();
                }
                assert!((avg - averaged).abs() <= 1e-12);
                assert!((pred.finite_point_mass(target).unwrap() - predicted).abs() <= 1e-12);
                assert!((avg - predicted).abs() > 1e-3);
            }
            other => panic!("unexpected witness {other:?}"),
        }
    }

    // ---------- partial exchangeability / partial cid ----------

    #[test]
    fn independent_polya_columns_are_partially_exchangeable() {
        let rule = IndependentColumns::new(vec![
            PolyaRule::new(1.0, binary_base()).unwrap(),
            PolyaRule::new(2.0, binary_base()).unwrap(),
        ])
        .unwrap();
        let report = check_partial_exchangeable(&rule, 3).unwrap();
        assert!(report.pass, "{}", report.summary_line());
        let cid = check_partial_cid(&rule, 3).unwrap();
        assert!(cid.pass, "{}", cid.summary_line());
    }

    #[test]
    fn unit_weight_coupled_columns_are_partially_exchangeable() {
        let rule = CoupledWeightColumns::unit_weights(
            vec![1.0, 1.0],
            vec![binary_base(), binary_base()],
        )
        .unwrap();
        let report = check_partial_exchangeable(&rule, 3).unwrap();
        assert!(report.pass, "{}", report.summary_line());
    }

    #[test]
    fn cross_column_weights_break_partial_exchangeability_but_keep_the_martingale() {
        // Column j's observation weight depends on the OTHER column's value
        // in the same row: the array is partially conditionally identically
        // distributed but not partially exchangeable.
        let rule = CoupledWeightColumns::new(
            vec![1.0, 1.0],
            vec![binary_base(), binary_base()],
            |j, row| if row[1 - j] == Point::Label(1) { 3.0 } else { 1.0 },
        )
        .unwrap();
        let exch = check_partial_exchangeable(&rule, 3).unwrap();
        assert!(!exch.pass);
        assert!(matches!(exch.witness, Some(Witness::PermutedArray { .. })));
        if let Some(Witness::PermutedArray { p_original, p_permuted, .. }) = &exch.witness {
            assert!((p_original - p_permuted).abs() > 1e-6);
        }
        let cid = check_partial_cid(&rule, 3).unwrap();
        assert!(cid.pass, "{}", cid.summary_line());
    }

    #[test]
    fn own_value_weights_break_the_column_martingale() {
        let rule = CoupledWeightColumns::new(
            vec![1.0, 1.0],
            vec![binary_base(), binary_base()],
            |j, row| if row[j] == Point::Label(1) { 3.0 } else { 1.0 },
        )
        .unwrap();
        let report = check_partial_cid(&rule, 1).unwrap();
        assert!(!report.pass);
        match report.witness.as_ref().unwrap() {
            Witness::ColumnMartingale { predicted, averaged, .. } => {
                // Worked by hand at the empty prefix: weight 1 for label 0,
                // 3 for label 1, uniform base, alpha0 = 1 moves the mass of
                // either label by 0.0625 from its predicted 0.5.
                assert!((predicted - 0.5).abs() <= 1e-12);
                assert!(((averaged - predicted).abs() - 0.0625).abs() <= 1e-12);
            }
            other => panic!("unexpected witness {other:?}"),
        }
    }

    // ---------- markov exchangeability ----------

    #[test]
    fn reinforced_urns_pass_the_swap_diagnostic() {
        let states = vec![lab(0), lab(1)];
        let q = DiscreteDistribution::binary(0.25).unwrap();
        let params = UrnParams::homogeneous(states.clone(), 1.5, q).unwrap();
        let report = check_markov_exchangeable(
            |y, x, row| params.row_predict(y, x, row),
            &states,
            4,
        )
        .unwrap();
        assert!(report.pass, "{}", report.summary_line());
        assert!(report.evaluations > 0);
    }

    #[test]
    fn squared_count_transitions_fail_the_swap_diagnostic() {
        let states = vec![lab(0), lab(1)];
        let report = check_markov_exchangeable(
            |y, x, row| {
                let _ = x;
                let t_y = row.iter().find(|(p, _)| p == y).map(|(_, c)| *c).unwrap_or(0);
                let norm: f64 = row.iter().map(|(_, c)| (c * c) as f64 + 0.5).sum();
                Ok(((t_y * t_y) as f64 + 0.5) / norm)
            },
            &states,
            4,
        )
        .unwrap();
        assert!(!report.pass);
        match report.witness.as_ref().unwrap() {
            Witness::SwapIdentity { lhs, rhs, .. } => assert!((lhs - rhs).abs() > SWAP_TOL),
            other => panic!("unexpected witness {other:?}"),
        }
    }

    // ---------- eppf ----------

    #[test]
    fn crp_passes_the_partition_axioms() {
        let eppf = EppfSpec::crp(1.7).unwrap();
        let report = check_eppf(&eppf, 6).unwrap();
        assert!(report.pass, "{}", report.summary_line());
    }

    #[test]
    fn pitman_yor_passes_the_partition_axioms() {
        let eppf = EppfSpec::pitman_yor(0.5, 0.3).unwrap();
        let report = check_eppf(&eppf, 6).unwrap();
        assert!(report.pass, "{}", report.summary_line());
    }

    #[test]
    fn finite_dirichlet_passes_the_partition_axioms() {
        let eppf = EppfSpec::finite_dirichlet(2.0, 3).unwrap();
        let report = check_eppf(&eppf, 6).unwrap();
        assert!(report.pass, "{}", report.summary_line());
    }

    #[test]
    fn an_inflated_eppf_fails_with_located_counts() {
        // Correct CRP on singleton partitions, inflated by 3% elsewhere:
        // breaks additivity and total mass.
        let bad = EppfSpec::new("inflated", move |counts: &PartitionCounts| {
            let p = crate::exchangeable::eppf_crp(counts, 1.0)?;
            Ok(if counts.n() == 1 { p } else { p * 1.03 })
        });
        let report = check_eppf(&bad, 4).unwrap();
        assert!(!report.pass);
        match report.witness.as_ref().unwrap() {
            Witness::PartitionAxiom { lhs, rhs, .. } => {
                assert!((lhs - rhs).abs() > DIAG_TOL_LOG);
            }
            other => panic!("unexpected witness {other:?}"),
        }
    }

    #[test]
    fn set_partition_enumeration_counts_match_bell_numbers() {
        let bell = [1u64, 1, 2, 5, 15, 52, 203, 877];
        for (n, &b) in bell.iter().enumerate().skip(1) {
            assert_eq!(set_partition_sizes(n).len() as u64, b, "n = {n}");
            assert_eq!(bell_number(n), b, "bell({n})");
        }
    }
}
