//! Effective spin Hamiltonian of one Kramers doublet (S = 1/2) coupled to an
//! I = 1/2 nucleus in an axial (uniaxial about c) site.
//!
//! All matrix elements are frequencies (E/h) in GHz and fields are in tesla.
//! The product basis is fixed as `|↑⇑⟩, |↑⇓⟩, |↓⇑⟩, |↓⇓⟩`, i.e. the electron
//! index is the slow one: `index = 2 * electron + nucleus` with `↑ = 0`.

use std::fmt;
use std::ops::{Add, Neg};

use nalgebra::{Matrix2, Matrix4, Vector4};
use num_complex::Complex64;

use crate::constants::PhysicalConstants;
use crate::error::{Error, Result};

pub type Operator = Matrix4<Complex64>;
pub type StateVector = Vector4<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Kronecker product `a ⊗ b` of two 2x2 operators (electron ⊗ nucleus).
pub fn kron(a: &Matrix2<Complex64>, b: &Matrix2<Complex64>) -> Operator {
    let mut out = Operator::zeros();
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    out[(2 * i + k, 2 * j + l)] = a[(i, j)] * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Spin-1/2 operators on the four-dimensional product space.
#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub sx: Operator,
    pub sy: Operator,
    pub sz: Operator,
    pub ix: Operator,
    pub iy: Operator,
    pub iz: Operator,
}

impl SpinOperators {
    pub fn electron(&self) -> [&Operator; 3] {
        [&self.sx, &self.sy, &self.sz]
    }

    pub fn nuclear(&self) -> [&Operator; 3] {
        [&self.ix, &self.iy, &self.iz]
    }
}

/// Builds `S = (σ/2) ⊗ 1` and `I = 1 ⊗ (σ/2)` in the fixed basis order.
pub fn spin_operators() -> SpinOperators {
    let half_x = Matrix2::new(ZERO, c(0.5, 0.0), c(0.5, 0.0), ZERO);
    let half_y = Matrix2::new(ZERO, c(0.0, -0.5), c(0.0, 0.5), ZERO);
    let half_z = Matrix2::new(c(0.5, 0.0), ZERO, ZERO, c(-0.5, 0.0));
    let one = Matrix2::identity();
    SpinOperators {
        sx: kron(&half_x, &one),
        sy: kron(&half_y, &one),
        sz: kron(&half_z, &one),
        ix: kron(&one, &half_x),
        iy: kron(&one, &half_y),
        iz: kron(&one, &half_z),
    }
}

/// The four product states, in basis order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProductState {
    UpUp,
    UpDown,
    DownUp,
    DownDown,
}

impl ProductState {
    pub const ALL: [ProductState; 4] = [
        ProductState::UpUp,
        ProductState::UpDown,
        ProductState::DownUp,
        ProductState::DownDown,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Electron projection m_S.
    pub fn electron_m(self) -> f64 {
        match self {
            ProductState::UpUp | ProductState::UpDown => 0.5,
            _ => -0.5,
        }
    }

    /// Nuclear projection m_I.
    pub fn nuclear_m(self) -> f64 {
        match self {
            ProductState::UpUp | ProductState::DownUp => 0.5,
            _ => -0.5,
        }
    }

    pub fn vector(self) -> StateVector {
        let mut v = StateVector::zeros();
        v[self.index()] = c(1.0, 0.0);
        v
    }

    pub fn ket(self) -> &'static str {
        match self {
            ProductState::UpUp => "|↑⇑⟩",
            ProductState::UpDown => "|↑⇓⟩",
            ProductState::DownUp => "|↓⇑⟩",
            ProductState::DownDown => "|↓⇓⟩",
        }
    }
}

/// Principal values of an axial tensor (parallel to and perpendicular to c).
///
/// Used both for g (unitless) and A (GHz). Signs are significant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxialTensor {
    pub parallel: f64,
    pub perpendicular: f64,
}

impl AxialTensor {
    pub const fn new(parallel: f64, perpendicular: f64) -> Self {
        Self {
            parallel,
            perpendicular,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.parallel.is_finite() && self.perpendicular.is_finite()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(self.parallel * k, self.perpendicular * k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Manifold {
    Ground,
    Excited,
}

impl Manifold {
    pub fn suffix(self) -> &'static str {
        match self {
            Manifold::Ground => "g",
            Manifold::Excited => "e",
        }
    }
}

impl fmt::Display for Manifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Manifold::Ground => "ground",
            Manifold::Excited => "excited",
        })
    }
}

/// Spin-Hamiltonian parameters of one Kramers doublet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldParams {
    pub manifold: Manifold,
    /// Electronic Zeeman tensor.
    pub g: AxialTensor,
    /// Hyperfine tensor A/h in GHz.
    pub a: AxialTensor,
    /// Nuclear g-factor.
    pub gn: f64,
    /// Optical frequency of the manifold centroid in GHz (absolute or relative).
    pub optical_offset: f64,
}

impl ManifoldParams {
    pub fn validate(&self) -> Result<()> {
        if !self.g.is_finite() || !self.a.is_finite() || !self.optical_offset.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "{} manifold parameters must be finite",
                self.manifold
            )));
        }
        if !self.gn.is_finite() || self.gn.abs() >= 10.0 {
            return Err(Error::InvalidParameter(format!(
                "nuclear g-factor {} out of range (|gn| < 10)",
                self.gn
            )));
        }
        Ok(())
    }

    /// ²F₇/₂(0) doublet of ¹⁷¹Yb³⁺:YVO₄. A from absorption/EPR data, g from EPR (Ranon 1968).
    pub fn yb171_yvo4_ground() -> Self {
        Self {
            manifold: Manifold::Ground,
            g: AxialTensor::new(-6.08, 0.85),
            a: AxialTensor::new(-4.82, 0.675),
            gn: 0.987,
            optical_offset: 0.0,
        }
    }

    /// ²F₅/₂(0) doublet of ¹⁷¹Yb³⁺:YVO₄ as determined from optical spectroscopy.
    pub fn yb171_yvo4_excited() -> Self {
        Self {
            manifold: Manifold::Excited,
            g: AxialTensor::new(2.51, 1.7),
            a: AxialTensor::new(4.86, 3.37),
            gn: 0.987,
            optical_offset: 0.0,
        }
    }
}

/// Applied magnetic field in tesla; z is the crystal c-axis.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FieldVector {
    pub bx: f64,
    pub by: f64,
    pub bz: f64,
}

impl FieldVector {
    pub const fn new(bx: f64, by: f64, bz: f64) -> Self {
        Self { bx, by, bz }
    }

    pub const fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub const fn along_c(b: f64) -> Self {
        Self::new(0.0, 0.0, b)
    }

    /// Field from magnitude, polar angle from c and azimuth (radians).
    pub fn from_polar(magnitude: f64, theta: f64, phi: f64) -> Self {
        Self::new(
            magnitude * theta.sin() * phi.cos(),
            magnitude * theta.sin() * phi.sin(),
            magnitude * theta.cos(),
        )
    }

    pub fn components(&self) -> [f64; 3] {
        [self.bx, self.by, self.bz]
    }

    pub fn from_components(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn magnitude(&self) -> f64 {
        (self.bx * self.bx + self.by * self.by + self.bz * self.bz).sqrt()
    }

    pub fn transverse(&self) -> f64 {
        self.bx.hypot(self.by)
    }

    pub fn polar_angle(&self) -> f64 {
        self.transverse().atan2(self.bz)
    }

    pub fn azimuth(&self) -> f64 {
        self.by.atan2(self.bx)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(self.bx * k, self.by * k, self.bz * k)
    }

    pub fn is_finite(&self) -> bool {
        self.bx.is_finite() && self.by.is_finite() && self.bz.is_finite()
    }

    /// Unit vector along this field; `None` for the zero field.
    pub fn unit(&self) -> Option<Self> {
        let m = self.magnitude();
        (m > 0.0).then(|| self.scaled(1.0 / m))
    }
}

impl Neg for FieldVector {
    type Output = FieldVector;
    fn neg(self) -> FieldVector {
        self.scaled(-1.0)
    }
}

impl Add for FieldVector {
    type Output = FieldVector;
    fn add(self, o: FieldVector) -> FieldVector {
        FieldVector::new(self.bx + o.bx, self.by + o.by, self.bz + o.bz)
    }
}

/// How the nuclear Zeeman term enters the Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NuclearZeeman {
    /// Absorbed into the (effective) electronic Zeeman tensor: no separate term.
    #[default]
    Folded,
    /// Explicit `-mu_N gn B·I` term.
    Explicit,
}

/// `H/h = mu_B/h B·g·S + I·A·S - mu_N/h gn B·I` for an axial site.
pub fn build_hamiltonian(
    p: &ManifoldParams,
    b: &FieldVector,
    consts: &PhysicalConstants,
    nuclear: NuclearZeeman,
) -> Operator {
    let ops = spin_operators();
    let mu_b = consts.bohr_magneton_over_h;
    let r = |x: f64| c(x, 0.0);

    let zeeman = (ops.sx * r(b.bx) + ops.sy * r(b.by)) * r(mu_b * p.g.perpendicular)
        + ops.sz * r(mu_b * p.g.parallel * b.bz);
    let hyperfine = (ops.ix * ops.sx + ops.iy * ops.sy) * r(p.a.perpendicular)
        + ops.iz * ops.sz * r(p.a.parallel);
    let mut h = zeeman + hyperfine;
    if nuclear == NuclearZeeman::Explicit {
        let mu_n = consts.nuclear_magneton_over_h * p.gn;
        h -= (ops.ix * r(b.bx) + ops.iy * r(b.by) + ops.iz * r(b.bz)) * r(mu_n);
    }
    h
}

/// Largest element-wise deviation `|H - H†|`.
pub fn hermiticity_deviation(h: &Operator) -> f64 {
    (h - h.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Context carried into a [`LevelSet`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelMeta {
    pub manifold: Manifold,
    pub field: FieldVector,
    pub optical_offset: f64,
}

/// Eigenvalues (ascending, GHz) and eigenstates of one manifold at one field.
#[derive(Debug, Clone)]
pub struct LevelSet {
    pub manifold: Manifold,
    pub field: FieldVector,
    pub optical_offset: f64,
    pub energies: [f64; 4],
    pub states: [StateVector; 4],
    pub labels: [String; 4],
}

impl LevelSet {
    /// Number of levels (including `index` itself) within `tol` GHz of level `index`.
    pub fn degeneracy(&self, index: usize, tol: f64) -> usize {
        let e = self.energies[index];
        self.energies.iter().filter(|x| (*x - e).abs() <= tol).count()
    }

    /// Weights `|⟨product|ψ_index⟩|²` in basis order.
    pub fn product_weights(&self, index: usize) -> [f64; 4] {
        let v = &self.states[index];
        [v[0].norm_sqr(), v[1].norm_sqr(), v[2].norm_sqr(), v[3].norm_sqr()]
    }

    /// Energy including the manifold optical offset.
    pub fn absolute_energy(&self, index: usize) -> f64 {
        self.energies[index] + self.optical_offset
    }
}

fn fix_gauge(v: &mut StateVector) {
    let max = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if max == 0.0 {
        return;
    }
    // First component within rounding of the maximum, so equal-weight
    // superpositions get a deterministic choice.
    let k = v
        .iter()
        .position(|z| z.norm() >= max * (1.0 - 1e-12))
        .unwrap_or(0);
    let phase = v[k].conj() / v[k].norm();
    *v *= phase;
    v[k] = c(v[k].re, 0.0);
}

/// Diagonalizes a Hermitian 4x4 Hamiltonian.
///
/// Energies come back ascending. Within a degenerate subspace any orthonormal
/// basis may be returned. Each eigenvector's largest component is made real
/// and positive.
pub fn eigensolve(h: &Operator, meta: LevelMeta) -> Result<LevelSet> {
    if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::InvalidParameter("Hamiltonian has non-finite entries".into()));
    }
    let scale = h.iter().map(|z| z.norm()).fold(1.0, f64::max);
    let deviation = hermiticity_deviation(h);
    if deviation > 1e-10 * scale {
        return Err(Error::NonHermitian { deviation });
    }
    let hs = (h + h.adjoint()) * c(0.5, 0.0);
    let eig = hs.symmetric_eigen();

    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));

    let energies = order.map(|i| eig.eigenvalues[i]);
    let states = order.map(|i| {
        let mut v: StateVector = eig.eigenvectors.column(i).into_owned();
        let n = v.norm();
        v /= c(n, 0.0);
        fix_gauge(&mut v);
        v
    });
    let suffix = meta.manifold.suffix();
    let labels = [1, 2, 3, 4].map(|n| format!("{n}{suffix}"));

    Ok(LevelSet {
        manifold: meta.manifold,
        field: meta.field,
        optical_offset: meta.optical_offset,
        energies,
        states,
        labels,
    })
}

/// Builds and diagonalizes the Hamiltonian of `p` at field `b`.
pub fn levels(
    p: &ManifoldParams,
    b: &FieldVector,
    consts: &PhysicalConstants,
    nuclear: NuclearZeeman,
) -> Result<LevelSet> {
    if !b.is_finite() {
        return Err(Error::InvalidParameter("field must be finite".into()));
    }
    let h = build_hamiltonian(p, b, consts, nuclear);
    eigensolve(
        &h,
        LevelMeta {
            manifold: p.manifold,
            field: *b,
            optical_offset: p.optical_offset,
        },
    )
}

/// Closed-form zero-field eigenvalues, ascending:
/// `{A∥/4, A∥/4, (-A∥ + 2A⊥)/4, (-A∥ - 2A⊥)/4}`.
pub fn zero_field_levels(a: &AxialTensor) -> [f64; 4] {
    let mut e = [
        a.parallel / 4.0,
        a.parallel / 4.0,
        (-a.parallel + 2.0 * a.perpendicular) / 4.0,
        (-a.parallel - 2.0 * a.perpendicular) / 4.0,
    ];
    e.sort_by(f64::total_cmp);
    e
}

#[derive(Debug, Clone)]
pub struct LabeledState {
    pub label: String,
    pub energy: f64,
    pub state: StateVector,
}

/// Zero-field eigenstates numbered from lowest to highest energy.
///
/// Two orderings are supported: `A∥ < -A⊥ < 0` (the ¹⁷¹Yb ground doublet,
/// pure product states lowest) and `0 < A⊥ < A∥` (the excited doublet,
/// antisymmetric combination lowest).
pub fn zero_field_states(manifold: Manifold, a: &AxialTensor) -> Result<[LabeledState; 4]> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let up_up = ProductState::UpUp.vector();
    let down_down = ProductState::DownDown.vector();
    let anti = (ProductState::UpDown.vector() - ProductState::DownUp.vector()) * c(s, 0.0);
    let sym = (ProductState::UpDown.vector() + ProductState::DownUp.vector()) * c(s, 0.0);

    let pair = a.parallel / 4.0;
    let e_anti = (-a.parallel - 2.0 * a.perpendicular) / 4.0;
    let e_sym = (-a.parallel + 2.0 * a.perpendicular) / 4.0;

    let ordered: [(f64, StateVector); 4] =
        if a.perpendicular > 0.0 && a.parallel < -a.perpendicular {
            [(pair, up_up), (pair, down_down), (e_anti, anti), (e_sym, sym)]
        } else if a.perpendicular > 0.0 && a.parallel > a.perpendicular {
            [(e_anti, anti), (e_sym, sym), (pair, up_up), (pair, down_down)]
        } else {
            return Err(Error::UnsupportedLabeling(format!(
                "no level assignment for A∥ = {}, A⊥ = {}",
                a.parallel, a.perpendicular
            )));
        };
    let suffix = manifold.suffix();
    let mut n = 0;
    Ok(ordered.map(|(energy, state)| {
        n += 1;
        LabeledState {
            label: format!("|{n}⟩{suffix}"),
            energy,
            state,
        }
    }))
}

/// High-field (linear Zeeman) label of one eigenstate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HighFieldLabel {
    /// 1-based position from lowest to highest energy.
    pub prime_index: usize,
    pub product: ProductState,
    /// `|⟨product|ψ⟩|²`.
    pub weight: f64,
}

impl HighFieldLabel {
    pub fn label(&self, manifold: Manifold) -> String {
        format!("|{}'⟩{}", self.prime_index, manifold.suffix())
    }
}

/// Minimum product-state weight accepted by [`high_field_labels`].
pub const HIGH_FIELD_MIN_WEIGHT: f64 = 0.8;
/// Electronic Zeeman energy must exceed this multiple of the largest hyperfine component.
pub const HIGH_FIELD_DOMINANCE: f64 = 5.0;

/// Labels each eigenstate with its dominant product state for a field along c
/// in the linear Zeeman regime.
///
/// The expected order follows from the signs of g∥ and A∥ (g∥ < 0 puts `|↑⟩`
/// lowest in the ground doublet, g∥ > 0 puts `|↓⟩` lowest in the excited one);
/// a diagonalization that disagrees with it is rejected.
pub fn high_field_labels(
    levels: &LevelSet,
    p: &ManifoldParams,
    consts: &PhysicalConstants,
) -> Result<[HighFieldLabel; 4]> {
    let b = levels.field;
    let mag = b.magnitude();
    if mag == 0.0 || b.transverse() > 1e-9 * mag {
        return Err(Error::Precondition(
            "high-field labels need a nonzero field along c".into(),
        ));
    }
    let zeeman = (p.g.parallel * consts.bohr_magneton_over_h * b.bz).abs();
    let hyperfine = p.a.parallel.abs().max(p.a.perpendicular.abs());
    if zeeman <= HIGH_FIELD_DOMINANCE * hyperfine {
        return Err(Error::Precondition(format!(
            "Zeeman energy {zeeman:.3} GHz does not dominate hyperfine {hyperfine:.3} GHz"
        )));
    }

    // Diagonal energies in the product basis predict the ordering.
    let mut expected = ProductState::ALL;
    let diag = |s: ProductState| {
        p.g.parallel * consts.bohr_magneton_over_h * b.bz * s.electron_m()
            + p.a.parallel * s.electron_m() * s.nuclear_m()
    };
    expected.sort_by(|x, y| diag(*x).total_cmp(&diag(*y)));

    let mut out = [HighFieldLabel {
        prime_index: 0,
        product: ProductState::UpUp,
        weight: 0.0,
    }; 4];
    for (i, slot) in out.iter_mut().enumerate() {
        let w = levels.product_weights(i);
        let (k, weight) = w
            .iter()
            .copied()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("four weights");
        if weight < HIGH_FIELD_MIN_WEIGHT {
            return Err(Error::AmbiguousLabeling {
                level: i + 1,
                weight,
            });
        }
        let product = ProductState::ALL[k];
        if product != expected[i] {
            return Err(Error::UnsupportedLabeling(format!(
                "level {} is dominated by {} but the Zeeman ordering predicts {}",
                i + 1,
                product.ket(),
                expected[i].ket()
            )));
        }
        *slot = HighFieldLabel {
            prime_index: i + 1,
            product,
            weight,
        };
    }
    Ok(out)
}

/// Scales a hyperfine tensor by a nuclear magnetic moment ratio (e.g. μ(¹⁷³Yb)/μ(¹⁷¹Yb)).
///
/// This only estimates hyperfine splittings of another isotope; no I ≠ 1/2
/// Hamiltonian is built.
pub fn scale_hyperfine_isotope(a: &AxialTensor, moment_ratio: f64) -> Result<AxialTensor> {
    if !moment_ratio.is_finite() || moment_ratio == 0.0 {
        return Err(Error::InvalidParameter(format!(
            "moment ratio must be finite and nonzero, got {moment_ratio}"
        )));
    }
    Ok(a.scaled(moment_ratio))
}

/// Ground and excited doublets plus the shared conventions used to solve them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinSystem {
    pub ground: ManifoldParams,
    pub excited: ManifoldParams,
    pub constants: PhysicalConstants,
    pub nuclear_zeeman: NuclearZeeman,
}

impl SpinSystem {
    pub fn yb171_yvo4() -> Self {
        Self {
            ground: ManifoldParams::yb171_yvo4_ground(),
            excited: ManifoldParams::yb171_yvo4_excited(),
            constants: PhysicalConstants::default(),
            nuclear_zeeman: NuclearZeeman::Folded,
        }
    }

    pub fn params(&self, manifold: Manifold) -> &ManifoldParams {
        match manifold {
            Manifold::Ground => &self.ground,
            Manifold::Excited => &self.excited,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.constants.validate()?;
        self.ground.validate()?;
        self.excited.validate()
    }

    pub fn levels(&self, manifold: Manifold, b: &FieldVector) -> Result<LevelSet> {
        levels(self.params(manifold), b, &self.constants, self.nuclear_zeeman)
    }
}
