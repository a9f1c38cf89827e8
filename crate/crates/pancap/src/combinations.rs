//! The sixteen efficiency patterns, their reduced linear systems and extreme points.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::model::{period_objective, Allocation, PeriodParams, StationaryState};

/// Default tolerance for feasibility checks and efficiency boundaries.
pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CombinationError {
    #[error("combination id {0} is outside 1..=16")]
    UnknownId(u8),
    #[error("state does not match any combination: {0}")]
    Unclassifiable(String),
    #[error("combination {0} is not reduced to a linear system")]
    NotReduced(CombinationId),
    #[error("combination {0}: singular system")]
    SingularSystem(CombinationId),
    #[error("combination {0}: fixed-allocation solve did not converge")]
    NoConvergence(CombinationId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Level {
    Zero,
    Partial,
    Full,
}

use Level::{Full as F, Partial as P, Zero as Z};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct CombinationId(u8);

impl CombinationId {
    pub fn new(id: u8) -> Result<Self, CombinationError> {
        if (1..=16).contains(&id) {
            Ok(CombinationId(id))
        } else {
            Err(CombinationError::UnknownId(id))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn combination(self) -> &'static Combination {
        &CATALOG[self.0 as usize - 1]
    }
}

impl fmt::Display for CombinationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Efficiency pattern over (a_e1, a_e2, a_e3, a_c, a_n).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Combination {
    pub id: CombinationId,
    pub pattern: [Level; 5],
}

const fn comb(id: u8, pattern: [Level; 5]) -> Combination {
    Combination {
        id: CombinationId(id),
        pattern,
    }
}

pub const CATALOG: [Combination; 16] = [
    comb(1, [F, F, F, F, F]),
    comb(2, [F, F, F, P, F]),
    comb(3, [F, F, F, F, P]),
    comb(4, [F, F, F, P, P]),
    comb(5, [F, P, F, F, F]),
    comb(6, [F, P, F, P, F]),
    comb(7, [F, P, F, F, P]),
    comb(8, [F, P, F, P, P]),
    comb(9, [F, Z, P, F, F]),
    comb(10, [F, Z, P, P, F]),
    comb(11, [F, Z, P, F, P]),
    comb(12, [F, Z, P, P, P]),
    comb(13, [P, Z, Z, F, F]),
    comb(14, [P, Z, Z, P, F]),
    comb(15, [P, Z, Z, F, P]),
    comb(16, [P, Z, Z, P, P]),
];

/// Service slots whose rate can absorb leftover capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Slot {
    E1,
    E23,
    C,
    N,
}

impl Combination {
    pub fn full_count(&self) -> usize {
        self.pattern.iter().filter(|l| **l == F).count()
    }

    fn clinic_full(&self) -> (bool, bool) {
        (self.pattern[3] == F, self.pattern[4] == F)
    }

    /// Slots left free by the balance equations, in labelling order.
    pub fn free_slots(&self) -> Vec<Slot> {
        match self.id.0 {
            1..=8 => vec![],
            _ => {
                let mut slots = Vec::with_capacity(3);
                if self.pattern[0] == P {
                    slots.push(Slot::E1);
                } else {
                    slots.push(Slot::E23);
                }
                if self.pattern[3] == P {
                    slots.push(Slot::C);
                }
                if self.pattern[4] == P {
                    slots.push(Slot::N);
                }
                slots
            }
        }
    }

    pub fn extreme_point_count(&self) -> usize {
        match self.id.0 {
            1..=8 => 1,
            _ => self.free_slots().len(),
        }
    }
}

fn level(a: f64, tol: f64) -> Level {
    if a >= 1.0 - tol {
        F
    } else if a <= tol {
        Z
    } else {
        P
    }
}

/// Map a stationary state to its combination. Slots whose catalog level is
/// "Partial" accept any efficiency below one.
pub fn classify(state: &StationaryState, tol: f64) -> Result<&'static Combination, CombinationError> {
    let [a1, a2, a3, ac, an] = state.efficiencies().map(|a| level(a, tol));
    let base = if a1 != F {
        if a2 != Z || a3 != Z {
            return Err(CombinationError::Unclassifiable(
                "a_e1 < 1 with LPED efficiency above zero".into(),
            ));
        }
        13
    } else if a3 != F {
        if a2 != Z {
            return Err(CombinationError::Unclassifiable("a_e2 > 0 with a_e3 < 1".into()));
        }
        9
    } else if a2 != F {
        5
    } else {
        1
    };
    let offset = match (ac == F, an == F) {
        (true, true) => 0,
        (false, true) => 1,
        (true, false) => 2,
        (false, false) => 3,
    };
    Ok(&CATALOG[base + offset - 1])
}

/// Unknowns of a reduced system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Unknown {
    MuE1,
    MuE23,
    MuC,
    MuN,
    H1,
    H2c,
    H2n,
    H3,
    /// s2 flow served by the LPED on the Covid / non-Covid track.
    WC,
    WN,
}

const ALL_UNKNOWNS: [Unknown; 10] = [
    Unknown::MuE1,
    Unknown::MuE23,
    Unknown::MuC,
    Unknown::MuN,
    Unknown::H1,
    Unknown::H2c,
    Unknown::H2n,
    Unknown::H3,
    Unknown::WC,
    Unknown::WN,
];

/// Equality constraints `matrix · x = rhs` of one combination, plus the capacity row.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub combination: CombinationId,
    pub unknowns: Vec<Unknown>,
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub free_slots: Vec<Slot>,
}

impl LinearSystem {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    fn column(&self, u: Unknown) -> Option<usize> {
        self.unknowns.iter().position(|x| *x == u)
    }

    /// Square system for the extreme point where `receiver` takes the slack.
    fn pin(&self, receiver: Slot) -> (DMatrix<f64>, DVector<f64>) {
        let pinned: Vec<usize> = self
            .free_slots
            .iter()
            .filter(|s| **s != receiver)
            .filter_map(|s| self.column(slot_unknown(*s)))
            .collect();
        let n = self.rows() + pinned.len();
        let mut m = DMatrix::zeros(n, self.cols());
        m.rows_mut(0, self.rows()).copy_from(&self.matrix);
        let mut b = DVector::zeros(n);
        b.rows_mut(0, self.rows()).copy_from(&self.rhs);
        for (k, col) in pinned.into_iter().enumerate() {
            m[(self.rows() + k, col)] = 1.0;
        }
        (m, b)
    }
}

fn slot_unknown(s: Slot) -> Unknown {
    match s {
        Slot::E1 => Unknown::MuE1,
        Slot::E23 => Unknown::MuE23,
        Slot::C => Unknown::MuC,
        Slot::N => Unknown::MuN,
    }
}

/// Row builder over the ten-unknown space.
#[derive(Clone, Copy)]
struct Row([f64; 10], f64);

impl Row {
    fn new() -> Self {
        Row([0.0; 10], 0.0)
    }

    fn set(mut self, u: Unknown, v: f64) -> Self {
        self.0[u as usize] += v;
        self
    }

    fn rhs(mut self, v: f64) -> Self {
        self.1 = v;
        self
    }
}

/// Affine expression in the unknowns: `coef · x + constant`.
#[derive(Clone, Copy)]
struct Expr([f64; 10], f64);

impl Expr {
    fn constant(c: f64) -> Self {
        Expr([0.0; 10], c)
    }

    fn term(mut self, u: Unknown, v: f64) -> Self {
        self.0[u as usize] += v;
        self
    }

    /// Row for `self + extra = 0`, with the constant moved to the right-hand side.
    fn into_row(self) -> Row {
        Row(self.0, -self.1)
    }
}

pub fn assemble_system(comb: &Combination, params: &PeriodParams) -> Result<LinearSystem, CombinationError> {
    use Unknown::*;
    let prm = params;
    let id = comb.id.0;
    if id <= 5 {
        return Err(CombinationError::NotReduced(comb.id));
    }
    let (c_full, n_full) = comb.clinic_full();
    let pc = prm.p_covid;
    let lc = pc * prm.lambda2;
    let ln = (1.0 - pc) * prm.lambda2;
    let mut rows: Vec<Row> = Vec::with_capacity(10);
    let unknowns: Vec<Unknown>;

    if id <= 8 {
        // LPED serves s2 partially; the dominated clinics are closed.
        rows.push(Row::new().set(MuE1, 1.0).set(H1, -prm.beta1).rhs(prm.lambda1));
        rows.push(
            Row::new()
                .set(MuE23, 1.0)
                .set(WC, -1.0)
                .set(WN, -1.0)
                .set(H3, -prm.beta3)
                .rhs(prm.lambda3),
        );
        rows.push(if c_full {
            Row::new().set(MuC, 1.0).set(WC, 1.0).set(H2c, -prm.beta2).rhs(lc)
        } else {
            Row::new().set(MuC, 1.0)
        });
        rows.push(if n_full {
            Row::new().set(MuN, 1.0).set(WN, 1.0).set(H2n, -prm.beta2).rhs(ln)
        } else {
            Row::new().set(MuN, 1.0)
        });
        rows.push(
            Expr::constant(0.0)
                .term(H2c, prm.delta21)
                .term(H2n, prm.delta21)
                .term(H1, -prm.k1())
                .into_row(),
        );
        let spill_c = if c_full {
            Expr::constant(0.0)
        } else {
            Expr::constant(lc).term(H2c, prm.beta2).term(WC, -1.0)
        };
        rows.push(
            spill_c
                .term(H3, pc * prm.delta32)
                .term(H1, pc * prm.delta12)
                .term(H2c, -prm.k2())
                .into_row(),
        );
        let spill_n = if n_full {
            Expr::constant(0.0)
        } else {
            Expr::constant(ln).term(H2n, prm.beta2).term(WN, -1.0)
        };
        rows.push(
            spill_n
                .term(H3, (1.0 - pc) * prm.delta32)
                .term(H1, (1.0 - pc) * prm.delta12)
                .term(H2n, -prm.k2())
                .into_row(),
        );
        rows.push(
            Expr::constant(0.0)
                .term(H2c, prm.delta23)
                .term(H2n, prm.delta23)
                .term(H3, -prm.k3())
                .into_row(),
        );
        unknowns = ALL_UNKNOWNS.to_vec();
    } else {
        let e1_full = comb.pattern[0] == F;
        let mut q_clinics = Expr::constant(0.0);
        if !c_full {
            q_clinics = q_clinics.term(MuC, prm.tau.c);
        }
        if !n_full {
            q_clinics = q_clinics.term(MuN, prm.tau.n);
        }
        let mut i1 = Expr::constant(prm.lambda1).term(H1, prm.beta1);
        for k in 0..10 {
            i1.0[k] += prm.delta21 * q_clinics.0[k];
        }
        let spill1 = if e1_full {
            rows.push(Row(i1.0, -i1.1).set(MuE1, -1.0));
            Expr::constant(0.0)
        } else {
            i1.term(MuE1, -1.0)
        };
        let i3 = Expr::constant(prm.lambda3).term(H3, prm.beta3);
        let spill3 = if e1_full { i3.term(MuE23, -1.0) } else { i3 };
        let spill_c = if c_full {
            rows.push(Row::new().set(MuC, 1.0).set(H2c, -prm.beta2).rhs(lc));
            Expr::constant(0.0)
        } else {
            Expr::constant(lc).term(H2c, prm.beta2).term(MuC, -1.0)
        };
        let spill_n = if n_full {
            rows.push(Row::new().set(MuN, 1.0).set(H2n, -prm.beta2).rhs(ln));
            Expr::constant(0.0)
        } else {
            Expr::constant(ln).term(H2n, prm.beta2).term(MuN, -1.0)
        };
        rows.push(
            spill1
                .term(H2c, prm.delta21)
                .term(H2n, prm.delta21)
                .term(H1, -prm.k1())
                .into_row(),
        );
        rows.push(
            spill_c
                .term(H3, pc * prm.delta32)
                .term(H1, pc * prm.delta12)
                .term(H2c, -prm.k2())
                .into_row(),
        );
        rows.push(
            spill_n
                .term(H3, (1.0 - pc) * prm.delta32)
                .term(H1, (1.0 - pc) * prm.delta12)
                .term(H2n, -prm.k2())
                .into_row(),
        );
        rows.push(
            spill3
                .term(H2c, prm.delta23)
                .term(H2n, prm.delta23)
                .term(H3, -prm.k3())
                .into_row(),
        );
        unknowns = ALL_UNKNOWNS[..8]
            .iter()
            .copied()
            .filter(|u| e1_full || *u != MuE23)
            .collect();
    }
    rows.push(
        Row::new()
            .set(MuE1, 1.0)
            .set(MuE23, 1.0)
            .set(MuC, 1.0)
            .set(MuN, 1.0)
            .rhs(prm.gamma),
    );

    let matrix = DMatrix::from_fn(rows.len(), unknowns.len(), |i, j| rows[i].0[unknowns[j] as usize]);
    let rhs = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    Ok(LinearSystem {
        combination: comb.id,
        unknowns,
        matrix,
        rhs,
        free_slots: comb.free_slots(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Label {
    A,
    B,
    C,
}

impl Label {
    fn from_index(i: usize) -> Self {
        [Label::A, Label::B, Label::C][i]
    }

    pub fn letter(self) -> char {
        match self {
            Label::A => 'a',
            Label::B => 'b',
            Label::C => 'c',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Status {
    Feasible,
    BoundaryReassigned(CombinationId),
    Infeasible(String),
}

/// One extreme point of one combination.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub combination: CombinationId,
    pub label: Label,
    pub alloc: Allocation,
    pub state: StationaryState,
    pub objective: f64,
    pub status: Status,
}

impl Candidate {
    /// Feasible, possibly after boundary reassignment.
    pub fn is_admissible(&self) -> bool {
        !matches!(self.status, Status::Infeasible(_))
    }

    /// The combination this point counts towards after reassignment.
    pub fn effective_id(&self) -> CombinationId {
        match self.status {
            Status::BoundaryReassigned(to) => to,
            _ => self.combination,
        }
    }

    /// Point name such as `15_a`; single-point combinations carry no suffix.
    pub fn display_label(&self) -> String {
        if self.combination.combination().extreme_point_count() > 1 {
            format!("{}_{}", self.combination, self.label.letter())
        } else {
            self.combination.to_string()
        }
    }
}

/// Efficiencies and queues implied by a 9..16 solution.
fn linear_candidate(
    comb: &Combination,
    params: &PeriodParams,
    label: Label,
    x: &[f64; 10],
    tol: f64,
) -> Candidate {
    let (c_full, n_full) = comb.clinic_full();
    let e1_full = comb.pattern[0] == F;
    let alloc = Allocation::new(x[0], x[1], x[2], x[3]);
    let (h1, h2c, h2n, h3) = (x[4], x[5], x[6], x[7]);
    let q_c = if c_full { 0.0 } else { params.tau.c * alloc.mu_c };
    let q_n = if n_full { 0.0 } else { params.tau.n * alloc.mu_n };
    let i1 = params.lambda1 + params.beta1 * h1 + params.delta21 * (q_c + q_n);
    let i3 = params.lambda3 + params.beta3 * h3;
    let a_c_in = params.p_covid * params.lambda2 + params.beta2 * h2c;
    let a_n_in = (1.0 - params.p_covid) * params.lambda2 + params.beta2 * h2n;
    let ratio = |mu: f64, d: f64| if d > 0.0 { mu / d } else { 0.0 };
    let state = StationaryState {
        q_e1: if e1_full { 0.0 } else { params.tau.e1 * alloc.mu_e1 },
        q_e23: if e1_full { params.tau.e3 * alloc.mu_e23 } else { 0.0 },
        q_c,
        q_n,
        h1,
        h2c,
        h2n,
        h3,
        a_e1: if e1_full { 1.0 } else { ratio(alloc.mu_e1, i1) },
        a_e2: 0.0,
        a_e3: if e1_full { ratio(alloc.mu_e23, i3) } else { 0.0 },
        a_c: if c_full { 1.0 } else { ratio(alloc.mu_c, a_c_in) },
        a_n: if n_full { 1.0 } else { ratio(alloc.mu_n, a_n_in) },
    };
    finish(comb, params, label, alloc, state, &[], tol)
}

fn finish(
    comb: &Combination,
    params: &PeriodParams,
    label: Label,
    alloc: Allocation,
    state: StationaryState,
    extra: &[(&str, f64)],
    tol: f64,
) -> Candidate {
    let mut problems = Vec::new();
    let checks = [
        ("mu_e1", alloc.mu_e1),
        ("mu_e23", alloc.mu_e23),
        ("mu_c", alloc.mu_c),
        ("mu_n", alloc.mu_n),
        ("h1", state.h1),
        ("h2c", state.h2c),
        ("h2n", state.h2n),
        ("h3", state.h3),
    ];
    for (name, v) in checks.iter().chain(extra) {
        if v.is_nan() || *v < -tol {
            problems.push(format!("{name} < 0"));
        }
    }
    for (name, a) in ["a_e1", "a_e2", "a_e3", "a_c", "a_n"].iter().zip(state.efficiencies()) {
        if !(a >= -tol && a <= 1.0 + tol) {
            problems.push(format!("{name} outside [0,1]"));
        }
    }
    let status = if problems.is_empty() {
        Status::Feasible
    } else {
        Status::Infeasible(problems.join(", "))
    };
    let cand = Candidate {
        combination: comb.id,
        label,
        alloc,
        objective: period_objective(&state, params),
        state,
        status,
    };
    if cand.status == Status::Feasible {
        reassign_boundary(cand, params, tol)
    } else {
        cand
    }
}

fn solve_square(m: DMatrix<f64>, b: DVector<f64>, id: CombinationId) -> Result<DVector<f64>, CombinationError> {
    let x = m.lu().solve(&b).ok_or(CombinationError::SingularSystem(id))?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(CombinationError::SingularSystem(id))
    }
}

fn expand(sys: &LinearSystem, x: &DVector<f64>) -> [f64; 10] {
    let mut full = [0.0; 10];
    for (u, v) in sys.unknowns.iter().zip(x.iter()) {
        full[*u as usize] = *v;
    }
    full
}

fn zero_candidate(comb: &Combination) -> Candidate {
    let a = comb.pattern.map(|l| if l == F { 1.0 } else { 0.0 });
    Candidate {
        combination: comb.id,
        label: Label::A,
        alloc: Allocation::default(),
        state: StationaryState {
            a_e1: a[0],
            a_e2: a[1],
            a_e3: a[2],
            a_c: a[3],
            a_n: a[4],
            ..Default::default()
        },
        objective: 0.0,
        status: Status::Feasible,
    }
}

pub fn enumerate_extreme_points(
    comb: &Combination,
    params: &PeriodParams,
    tol: f64,
) -> Result<Vec<Candidate>, CombinationError> {
    let sys = assemble_system(comb, params)?;
    if params.lambda() == 0.0 {
        return Ok(vec![zero_candidate(comb)]);
    }
    if comb.id.0 <= 8 {
        return dominated_point(comb, params, &sys, tol).map(|c| vec![c]);
    }
    sys.free_slots
        .iter()
        .enumerate()
        .map(|(i, slot)| {
            let (m, b) = sys.pin(*slot);
            let x = solve_square(m, b, comb.id)?;
            Ok(linear_candidate(comb, params, Label::from_index(i), &expand(&sys, &x), tol))
        })
        .collect()
}

/// Combinations 6..8: the LPED admits a common fraction `u` of both s2
/// tracks. Along the one-dimensional solution line of the linear balances,
/// `w_c · k_n · A_n = w_n · k_c · A_c` is a quadratic.
fn dominated_point(
    comb: &Combination,
    params: &PeriodParams,
    sys: &LinearSystem,
    tol: f64,
) -> Result<Candidate, CombinationError> {
    use Unknown::*;
    let (c_full, n_full) = comb.clinic_full();
    let k_c = if c_full { 1.0 - params.p } else { 1.0 };
    let k_n = if n_full { 1.0 - params.p } else { 1.0 };

    let line = [WC, WN].iter().find_map(|fixed| {
        let n = sys.rows();
        let mut m = DMatrix::zeros(n + 1, sys.cols());
        m.rows_mut(0, n).copy_from(&sys.matrix);
        m[(n, *fixed as usize)] = 1.0;
        let lu = m.lu();
        let mut b = DVector::zeros(n + 1);
        b.rows_mut(0, n).copy_from(&sys.rhs);
        let z0 = lu.solve(&b)?;
        b[n] = 1.0;
        let z1 = lu.solve(&b)?;
        let ok = z0.iter().chain(z1.iter()).all(|v| v.is_finite());
        ok.then(|| (z0.clone(), z1 - z0))
    });
    let Some((z0, dz)) = line else {
        return Err(CombinationError::SingularSystem(comb.id));
    };

    let at = |u: Unknown| (z0[u as usize], dz[u as usize]);
    let lin_a = |u: Unknown, base: f64| {
        let (v0, v1) = at(u);
        (base + params.beta2 * v0, params.beta2 * v1)
    };
    let (wc0, wc1) = at(WC);
    let (wn0, wn1) = at(WN);
    let (ac0, ac1) = lin_a(H2c, params.p_covid * params.lambda2);
    let (an0, an1) = lin_a(H2n, (1.0 - params.p_covid) * params.lambda2);
    // f(t) = k_n (wc0 + wc1 t)(an0 + an1 t) - k_c (wn0 + wn1 t)(ac0 + ac1 t)
    let qa = k_n * wc1 * an1 - k_c * wn1 * ac1;
    let qb = k_n * (wc0 * an1 + wc1 * an0) - k_c * (wn0 * ac1 + wn1 * ac0);
    let qc = k_n * wc0 * an0 - k_c * wn0 * ac0;
    let roots = quadratic_roots(qa, qb, qc);

    let mut best: Option<Candidate> = None;
    for t in roots {
        let z: Vec<f64> = z0.iter().zip(dz.iter()).map(|(a, b)| a + b * t).collect();
        let alloc = Allocation::new(z[0], z[1], z[2], z[3]);
        let a_c_in = ac0 + ac1 * t;
        let a_n_in = an0 + an1 * t;
        let u = if k_c * a_c_in > 0.0 {
            z[WC as usize] / (k_c * a_c_in)
        } else if k_n * a_n_in > 0.0 {
            z[WN as usize] / (k_n * a_n_in)
        } else {
            0.0
        };
        let state = StationaryState {
            q_e1: 0.0,
            q_e23: params.tau.e2 * alloc.mu_e23,
            q_c: 0.0,
            q_n: 0.0,
            h1: z[4],
            h2c: z[5],
            h2n: z[6],
            h3: z[7],
            a_e1: 1.0,
            a_e2: u,
            a_e3: 1.0,
            a_c: if c_full { 1.0 } else { 0.0 },
            a_n: if n_full { 1.0 } else { 0.0 },
        };
        let extra = [("w_c", z[WC as usize]), ("w_n", z[WN as usize])];
        let cand = finish(comb, params, Label::A, alloc, state, &extra, tol);
        best = match best {
            None => Some(cand),
            Some(prev) => Some(match (prev.is_admissible(), cand.is_admissible()) {
                (false, true) => cand,
                (true, true) if cand.objective < prev.objective => cand,
                _ => prev,
            }),
        };
    }
    Ok(best.unwrap_or_else(|| Candidate {
        combination: comb.id,
        label: Label::A,
        alloc: Allocation::default(),
        state: StationaryState::default(),
        objective: f64::NAN,
        status: Status::Infeasible("no real solution of the LPED coupling".into()),
    }))
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    let scale = a.abs().max(b.abs()).max(c.abs());
    if scale == 0.0 {
        return vec![];
    }
    if a.abs() <= 1e-13 * scale {
        return if b != 0.0 { vec![-c / b] } else { vec![] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        if disc > -1e-14 * b * b {
            return vec![-b / (2.0 * a)];
        }
        return vec![];
    }
    // Numerically stable form.
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    if q == 0.0 {
        return vec![0.0];
    }
    vec![q / a, c / q]
}

/// Relabel a point whose "Partial" efficiency sits at one.
///
/// HPED and s2 queues are dropped when their slot turns full; a saturated s3
/// slot leaves s2 at the LPED congested, so its queue moves to the s2
/// threshold. Clinic queues are kept because they feed the HPED.
pub fn reassign_boundary(mut cand: Candidate, params: &PeriodParams, tol: f64) -> Candidate {
    let comb = cand.combination.combination();
    let s = &mut cand.state;
    let mut changed = false;
    if comb.pattern[0] == P && s.a_e1 >= 1.0 - tol {
        s.a_e1 = 1.0;
        s.q_e1 = 0.0;
        changed = true;
    }
    if comb.pattern[2] == P && s.a_e3 >= 1.0 - tol {
        s.a_e3 = 1.0;
        s.q_e23 = params.tau.e2 * cand.alloc.mu_e23;
        changed = true;
    }
    if comb.pattern[1] == P && s.a_e2 >= 1.0 - tol {
        s.a_e2 = 1.0;
        s.q_e23 = 0.0;
        changed = true;
    }
    if comb.pattern[3] == P && s.a_c >= 1.0 - tol {
        s.a_c = 1.0;
        changed = true;
    }
    if comb.pattern[4] == P && s.a_n >= 1.0 - tol {
        s.a_n = 1.0;
        changed = true;
    }
    if !changed {
        return cand;
    }
    cand.status = match classify(&cand.state, tol) {
        Ok(to) if to.id != cand.combination => Status::BoundaryReassigned(to.id),
        Ok(_) => Status::Feasible,
        Err(e) => Status::Infeasible(e.to_string()),
    };
    cand
}

/// Stationary state of `comb` with the allocation held fixed.
///
/// Used to cross-check equilibria found elsewhere: a state classified as
/// `comb` must be reproduced by this solve.
pub fn resolve_fixed(
    comb: &Combination,
    params: &PeriodParams,
    alloc: &Allocation,
) -> Result<StationaryState, CombinationError> {
    let h = match comb.id.0 {
        5..=8 => fixed_point_h(comb, params, alloc)?,
        _ => {
            let (m, b) = fixed_h_system(comb, params, alloc, None);
            let x = solve_square(m, b, comb.id)?;
            [x[0], x[1], x[2], x[3]]
        }
    };
    Ok(fixed_state(comb, params, alloc, h).0)
}

/// Efficiencies for `comb` given H, with the allocation fixed. Returns the
/// state and the s2 admission fraction at the LPED.
fn fixed_state(
    comb: &Combination,
    params: &PeriodParams,
    alloc: &Allocation,
    h: [f64; 4],
) -> (StationaryState, f64) {
    let (c_full, n_full) = comb.clinic_full();
    let e1_full = comb.pattern[0] == F;
    let q_c = if c_full { 0.0 } else { params.tau.c * alloc.mu_c };
    let q_n = if n_full { 0.0 } else { params.tau.n * alloc.mu_n };
    let i1 = params.lambda1 + params.beta1 * h[0] + params.delta21 * (q_c + q_n);
    let d3 = params.lambda3 + params.beta3 * h[3];
    let ac = params.p_covid * params.lambda2 + params.beta2 * h[1];
    let an = (1.0 - params.p_covid) * params.lambda2 + params.beta2 * h[2];
    let ratio = |mu: f64, d: f64| if d > 0.0 { (mu / d).min(1.0) } else { 1.0 };
    let p = params.p;

    let (a2, a3, q23) = match comb.id.0 {
        1..=4 => (1.0, 1.0, 0.0),
        5..=8 => {
            let a2 = lped_s2_fraction(params, alloc, c_full, n_full, ac, an, d3);
            (a2, 1.0, params.tau.e2 * alloc.mu_e23)
        }
        9..=12 => (0.0, ratio(alloc.mu_e23, d3), params.tau.e3 * alloc.mu_e23),
        _ => (0.0, 0.0, 0.0),
    };
    let clinic = |full: bool, mu: f64, a: f64| {
        if full {
            1.0
        } else {
            ratio(mu, a * (p + (1.0 - p) * (1.0 - a2)))
        }
    };
    let state = StationaryState {
        q_e1: if e1_full { 0.0 } else { params.tau.e1 * alloc.mu_e1 },
        q_e23: q23,
        q_c,
        q_n,
        h1: h[0],
        h2c: h[1],
        h2n: h[2],
        h3: h[3],
        a_e1: if e1_full { 1.0 } else { ratio(alloc.mu_e1, i1) },
        a_e2: a2,
        a_e3: a3,
        a_c: clinic(c_full, alloc.mu_c, ac),
        a_n: clinic(n_full, alloc.mu_n, an),
    };
    (state, a2)
}

/// Solve `admitted_s2(a2) = mu_e23 - d3` for the common LPED fraction by bisection.
fn lped_s2_fraction(
    params: &PeriodParams,
    alloc: &Allocation,
    c_full: bool,
    n_full: bool,
    ac: f64,
    an: f64,
    d3: f64,
) -> f64 {
    let p = params.p;
    let target = alloc.mu_e23 - d3;
    let admitted = |a2: f64| {
        let track = |full: bool, mu: f64, a: f64| {
            let a_clinic = if full {
                1.0
            } else {
                let d = a * (p + (1.0 - p) * (1.0 - a2));
                if d > 0.0 {
                    (mu / d).min(1.0)
                } else {
                    1.0
                }
            };
            a2 * ((1.0 - p) * a + p * a * (1.0 - a_clinic))
        };
        track(c_full, alloc.mu_c, ac) + track(n_full, alloc.mu_n, an)
    };
    if target <= 0.0 {
        return 0.0;
    }
    if admitted(1.0) <= target {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if admitted(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// H balances with efficiencies frozen at the pattern's levels (linear in H).
fn fixed_h_system(
    comb: &Combination,
    params: &PeriodParams,
    alloc: &Allocation,
    frozen: Option<&StationaryState>,
) -> (DMatrix<f64>, DVector<f64>) {
    let (c_full, n_full) = comb.clinic_full();
    let e1_full = comb.pattern[0] == F;
    let pc = params.p_covid;
    let q_c = if c_full { 0.0 } else { params.tau.c * alloc.mu_c };
    let q_n = if n_full { 0.0 } else { params.tau.n * alloc.mu_n };
    let mut m = DMatrix::zeros(4, 4);
    let mut b = DVector::zeros(4);

    // H1: spill1 + d21 (H2c + H2n) - K1 H1 = 0
    m[(0, 0)] = -params.k1();
    m[(0, 1)] = params.delta21;
    m[(0, 2)] = params.delta21;
    if !e1_full {
        m[(0, 0)] += params.beta1;
        b[0] = -(params.lambda1 + params.delta21 * (q_c + q_n) - alloc.mu_e1);
    }
    // s2 tracks: spill = A (1 - a2)(1 - a_clinic)
    for (row, full, mu, share) in [(1, c_full, alloc.mu_c, pc), (2, n_full, alloc.mu_n, 1.0 - pc)] {
        m[(row, row)] = -params.k2();
        m[(row, 0)] = share * params.delta12;
        m[(row, 3)] = share * params.delta32;
        match frozen {
            Some(s) => {
                let a_clinic = if row == 1 { s.a_c } else { s.a_n };
                let f = (1.0 - s.a_e2) * (1.0 - a_clinic);
                m[(row, row)] += params.beta2 * f;
                b[row] = -share * params.lambda2 * f;
            }
            None => {
                let a2 = if comb.id.0 <= 4 { 1.0 } else { 0.0 };
                if !full && a2 == 0.0 {
                    m[(row, row)] += params.beta2;
                    b[row] = -(share * params.lambda2 - mu);
                }
            }
        }
    }
    // H3
    m[(3, 3)] = -params.k3();
    m[(3, 1)] = params.delta23;
    m[(3, 2)] = params.delta23;
    match comb.id.0 {
        9..=12 => {
            m[(3, 3)] += params.beta3;
            b[3] = -(params.lambda3 - alloc.mu_e23);
        }
        13..=16 => {
            m[(3, 3)] += params.beta3;
            b[3] = -params.lambda3;
        }
        _ => {}
    }
    (m, b)
}

fn fixed_point_h(comb: &Combination, params: &PeriodParams, alloc: &Allocation) -> Result<[f64; 4], CombinationError> {
    // Fixed-point on H with the s2 fractions recomputed each sweep.
    let mut h = [0.0; 4];
    for _ in 0..10_000 {
        let (state, _) = fixed_state(comb, params, alloc, h);
        let (m, b) = fixed_h_system(comb, params, alloc, Some(&state));
        let x = solve_square(m, b, comb.id)?;
        let next = [x[0], x[1], x[2], x[3]];
        let diff = next.iter().zip(h).fold(0.0f64, |d, (a, b)| d.max((a - b).abs()));
        h = next;
        if diff < 1e-14 {
            return Ok(h);
        }
    }
    Err(CombinationError::NoConvergence(comb.id))
}
