//! Closed-form model systems: steady and unsteady Euler flows (density one),
//! a Hamiltonian oscillator, and constructed higher-degree systems on R^4
//! and R^5.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::field::VectorField;
use crate::flow::FlowMap;
use crate::form::{exterior_derivative, spatial_exterior_derivative, time_derivative, DifferentialForm};
use crate::kernel::{trace_vortex_line, Direction, TraceOptions};
use crate::space::{Domain, Space, SphericalShell};
use crate::tensor::{combination_index, AltTensor, Vector};

/// Seed for load-time self-checks.
const SELF_CHECK_SEED: u64 = 0x00c0_ffee;
const SELF_CHECK_POINTS: usize = 50;

/// `(v, alpha, beta)` with `i_v d alpha = d beta`, together with the
/// extended-space objects `sigma = alpha_hat + dt ^ beta_hat` and
/// `xi = d/dt + v`.
#[derive(Clone, Debug)]
pub struct InvariantSystem {
    pub alpha: DifferentialForm,
    pub beta: DifferentialForm,
    pub v: VectorField,
    pub dalpha: DifferentialForm,
    pub alpha_hat: DifferentialForm,
    pub beta_hat: DifferentialForm,
    pub v_hat: VectorField,
    pub sigma: DifferentialForm,
    pub dsigma: DifferentialForm,
    pub xi: VectorField,
    /// `alpha`, `beta` and `v` already live on the extended space.
    pub time_dependent: bool,
}

/// `alpha_hat + dt ^ beta_hat` for spatial forms on `M x R`.
pub fn build_sigma(alpha_hat: &DifferentialForm, beta_hat: &DifferentialForm) -> Result<DifferentialForm> {
    if !alpha_hat.is_extended() || !beta_hat.is_extended() {
        return Err(Error::NotExtended);
    }
    if beta_hat.degree() + 1 != alpha_hat.degree() {
        return Err(Error::InvalidDegree(format!(
            "sigma needs degrees k and k-1, got {} and {}",
            alpha_hat.degree(),
            beta_hat.degree()
        )));
    }
    let dt = DifferentialForm::dt(alpha_hat.space())?;
    Ok(alpha_hat.add(&dt.wedge(beta_hat)?)?.with_label(&format!("{} + dt ^ {}", alpha_hat.label(), beta_hat.label())))
}

impl InvariantSystem {
    /// Steady system on `M`; the extended objects use an unbounded time axis.
    pub fn steady(alpha: DifferentialForm, beta: DifferentialForm, v: VectorField) -> Result<Self> {
        if alpha.is_extended() || beta.is_extended() || v.is_extended() {
            return Err(Error::InvalidArgument("steady systems live on M, not M x R".into()));
        }
        if beta.degree() + 1 != alpha.degree() {
            return Err(Error::InvalidDegree(format!(
                "alpha of degree {} with beta of degree {}",
                alpha.degree(),
                beta.degree()
            )));
        }
        let ext = alpha.space().to_extended(f64::NEG_INFINITY, f64::INFINITY)?;
        let alpha_hat = alpha.lift(&ext)?;
        let beta_hat = beta.lift(&ext)?;
        let v_hat = v.lift(&ext)?;
        Self::assemble(alpha, beta, v, alpha_hat, beta_hat, v_hat, false)
    }

    /// System given directly by spatial forms and a spatial field on `M x R`.
    pub fn time_dependent(alpha_hat: DifferentialForm, beta_hat: DifferentialForm, v_hat: VectorField) -> Result<Self> {
        if !alpha_hat.is_extended() || !beta_hat.is_extended() || !v_hat.is_extended() {
            return Err(Error::NotExtended);
        }
        Self::assemble(alpha_hat.clone(), beta_hat.clone(), v_hat.clone(), alpha_hat, beta_hat, v_hat, true)
    }

    fn assemble(
        alpha: DifferentialForm,
        beta: DifferentialForm,
        v: VectorField,
        alpha_hat: DifferentialForm,
        beta_hat: DifferentialForm,
        v_hat: VectorField,
        time_dependent: bool,
    ) -> Result<Self> {
        let sigma = build_sigma(&alpha_hat, &beta_hat)?;
        let dsigma = exterior_derivative(&sigma)?;
        let xi = VectorField::xi(&v_hat)?;
        let dalpha = if time_dependent { spatial_exterior_derivative(&alpha)? } else { exterior_derivative(&alpha)? };
        Ok(Self { alpha, beta, v, dalpha, alpha_hat, beta_hat, v_hat, sigma, dsigma, xi, time_dependent })
    }

    pub fn degree(&self) -> usize {
        self.alpha.degree()
    }

    /// Extended space `M x R`.
    pub fn extended_space(&self) -> &Space {
        self.sigma.space()
    }

    /// `i_v d alpha - d beta` at a point of `M` (steady systems).
    pub fn transport_residual(&self, x: &[f64]) -> Result<AltTensor> {
        if self.time_dependent {
            return self.decomposed_residual(x);
        }
        let lhs = self.dalpha.interior(&self.v)?.eval(x)?;
        let rhs = exterior_derivative(&self.beta)?.eval(x)?;
        lhs.sub(&rhs)
    }

    /// `L_{d/dt} alpha_hat + i_v d_hat alpha_hat - d_hat beta_hat` at a
    /// point of `M x R`.
    pub fn decomposed_residual(&self, x: &[f64]) -> Result<AltTensor> {
        self.decomposed_form()?.eval(x)
    }

    pub fn decomposed_form(&self) -> Result<DifferentialForm> {
        let dt_part = time_derivative(&self.alpha_hat)?;
        let transport = spatial_exterior_derivative(&self.alpha_hat)?.interior(&self.v_hat)?;
        let source = spatial_exterior_derivative(&self.beta_hat)?;
        DifferentialForm::sum(&[(1.0, dt_part), (1.0, transport), (-1.0, source)])
    }

    /// `i_xi d sigma`.
    pub fn cartan_form(&self) -> Result<DifferentialForm> {
        self.dsigma.interior(&self.xi)
    }

    /// Both sides of the Cartan equivalence at an extended point.
    pub fn equivalence_sample(&self, x: &[f64]) -> Result<EquivalenceSample> {
        let cartan = self.cartan_form()?.eval(x)?;
        let decomposed = self.decomposed_residual(x)?;
        let t_axis = x.len() - 1;
        let spatial: Vec<f64> = crate::tensor::combinations(x.len(), cartan.degree())
            .iter()
            .zip(cartan.comps())
            .filter(|(c, _)| !c.contains(&t_axis))
            .map(|(_, v)| *v)
            .collect();
        Ok(EquivalenceSample {
            point: x.to_vec(),
            cartan_norm: cartan.norm(),
            decomposed_norm: decomposed.norm(),
            spatial_cartan_norm: crate::tensor::norm(&spatial),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquivalenceSample {
    pub point: Vec<f64>,
    /// `|i_xi d sigma|`
    pub cartan_norm: f64,
    /// `|L_{d/dt} alpha_hat + i_v d_hat alpha_hat - d_hat beta_hat|`
    pub decomposed_norm: f64,
    /// Norm of the `dt`-free part of `i_xi d sigma`, which equals the
    /// decomposed residual identically.
    pub spatial_cartan_norm: f64,
}

impl EquivalenceSample {
    /// Both below `tol`, or both above with a ratio in `[0.5, 2]`.
    pub fn vanish_together(&self, tol: f64) -> bool {
        let (a, b) = (self.cartan_norm, self.decomposed_norm);
        match (a < tol, b < tol) {
            (true, true) => true,
            (false, false) => {
                let r = a / b;
                (0.5..=2.0).contains(&r)
            }
            _ => false,
        }
    }
}

/// Barotropic fluid with density one: velocity, pressure (= enthalpy),
/// external potential and Bernoulli function `E = v^2/2 + P + Phi`.
#[derive(Clone, Debug)]
pub struct FluidScenario {
    pub v: VectorField,
    pub pressure: DifferentialForm,
    pub potential: DifferentialForm,
    pub enthalpy: DifferentialForm,
    pub bernoulli: DifferentialForm,
    pub steady: bool,
    /// `E` is constant throughout the fluid (irrotational or Beltrami).
    pub uniform_bernoulli: bool,
}

impl FluidScenario {
    /// `v` steady on `M` or spatial on `M x R`; potential defaults to zero.
    pub fn new(v: VectorField, pressure: DifferentialForm, potential: Option<DifferentialForm>) -> Result<Self> {
        let space = v.space().clone();
        if pressure.degree() != 0 {
            return Err(Error::InvalidDegree("pressure must be a 0-form".into()));
        }
        let potential = match potential {
            Some(p) => p,
            None => DifferentialForm::zero(&space, 0)?.with_label("0"),
        };
        let vc = v.clone();
        let n = space.spatial_dim();
        let kinetic =
            DifferentialForm::native(&space, 0, "v^2/2", move |x| match vc.eval(x).map(|w| w.into_comps()) {
                Ok(w) => vec![0.5 * w[..n].iter().map(|c| c * c).sum::<f64>()],
                Err(_) => vec![f64::NAN],
            })?;
        let bernoulli = DifferentialForm::sum(&[(1.0, kinetic), (1.0, pressure.clone()), (1.0, potential.clone())])?
            .with_label("E");
        Ok(Self {
            steady: !v.is_extended(),
            enthalpy: pressure.clone(),
            v,
            pressure,
            potential,
            bernoulli,
            uniform_bernoulli: false,
        })
    }

    /// `(v, alpha = v_flat, beta = -E)`.
    pub fn system(&self) -> Result<InvariantSystem> {
        let alpha = DifferentialForm::flat(&self.v).with_label("v_flat");
        let beta = self.bernoulli.scale(-1.0).with_label("-E");
        if self.steady {
            InvariantSystem::steady(alpha, beta, self.v.clone())
        } else {
            InvariantSystem::time_dependent(alpha, beta, self.v.clone())
        }
    }

    /// Vorticity 2-form `d v_flat` (spatial derivative for unsteady flows).
    pub fn vorticity(&self) -> Result<DifferentialForm> {
        let a = DifferentialForm::flat(&self.v);
        if self.steady {
            exterior_derivative(&a)
        } else {
            spatial_exterior_derivative(&a)
        }
    }
}

/// `i_v d v_flat + dE` at `x`; zero exactly where stationary Euler holds.
pub fn stationary_euler_residual(s: &FluidScenario, x: &[f64]) -> Result<AltTensor> {
    if !s.steady {
        return Err(Error::InvalidArgument("stationary residual of an unsteady flow".into()));
    }
    let lhs = s.vorticity()?.interior(&s.v)?.eval(x)?;
    let de = exterior_derivative(&s.bernoulli)?.eval(x)?;
    lhs.add(&de)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UnsteadyResidual {
    pub decomposed_norm: f64,
    pub cartan_norm: f64,
    pub spatial_cartan_norm: f64,
}

/// Evaluates `L_{d/dt} v_hat + i_v d_hat v_hat + d_hat E` and, separately,
/// `i_xi d sigma` with `sigma = v_hat - E dt`.
pub fn unsteady_euler_residual(s: &FluidScenario, x: &[f64]) -> Result<UnsteadyResidual> {
    let e = s.system()?.equivalence_sample(x)?;
    Ok(UnsteadyResidual {
        decomposed_norm: e.decomposed_norm,
        cartan_norm: e.cartan_norm,
        spatial_cartan_norm: e.spatial_cartan_norm,
    })
}

/// Finite-difference curl of a 3D field arranged as the 2-form
/// `w_x dy^dz + w_y dz^dx + w_z dx^dy`, compared with `d v_flat`. Returns
/// the largest component difference.
pub fn vorticity_correspondence(s: &FluidScenario, x: &[f64]) -> Result<f64> {
    if s.v.space().spatial_dim() != 3 {
        return Err(Error::DimensionMismatch { expected: 3, found: s.v.space().spatial_dim() });
    }
    let mut jac = [[0.0; 3]; 3];
    let mut probe = x.to_vec();
    for c in 0..3 {
        let h = crate::form::fd_step(1, x[c]);
        probe[c] = x[c] + h;
        let plus = s.v.eval(&probe)?.into_comps();
        probe[c] = x[c] - h;
        let minus = s.v.eval(&probe)?.into_comps();
        probe[c] = x[c];
        let span = (x[c] + h) - (x[c] - h);
        for r in 0..3 {
            jac[r][c] = (plus[r] - minus[r]) / span;
        }
    }
    let curl = [jac[2][1] - jac[1][2], jac[0][2] - jac[2][0], jac[1][0] - jac[0][1]];
    let dv = s.vorticity()?.eval(x)?;
    let expected = [dv.get(&[1, 2]), -dv.get(&[0, 2]), dv.get(&[0, 1])];
    Ok(curl.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BernoulliReport {
    /// Largest `|v . grad E|` at nodes along streamlines.
    pub streamline_max: f64,
    /// Largest `|gamma' . grad E|` along traced vortex lines.
    pub vortex_line_max: Option<f64>,
    /// `max E - min E` over sample points, for flows with uniform `E`.
    pub global_variation: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct BernoulliOptions {
    pub seeds: usize,
    pub streamline_time: f64,
    pub line_length: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub exec: Exec,
}

impl Default for BernoulliOptions {
    fn default() -> Self {
        Self { seeds: 6, streamline_time: 1.0, line_length: 0.5, tolerance: 1e-5, seed: 7, exec: Exec::default() }
    }
}

/// Bernoulli: `E` constant along streamlines and vortex lines of a steady
/// solution, and throughout the fluid when it is irrotational or Beltrami.
pub fn bernoulli_checks(s: &Scenario, opts: &BernoulliOptions) -> Result<BernoulliReport> {
    let fluid =
        s.fluid.as_ref().ok_or_else(|| Error::InvalidArgument(format!("{} is not a fluid scenario", s.name)))?;
    if !fluid.steady {
        return Err(Error::InvalidArgument(format!("{} is unsteady", s.name)));
    }
    let grad_e = exterior_derivative(&fluid.bernoulli)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let seeds: Vec<Vec<f64>> = (0..opts.seeds).map(|_| s.sample_box.sample(&mut rng, 0.05)).collect::<Result<_>>()?;
    let along = |x: &[f64], w: &[f64]| -> Result<f64> {
        let g = grad_e.eval(x)?;
        Ok(g.comps().iter().zip(w).map(|(a, b)| a * b).sum::<f64>().abs())
    };
    let flow = FlowMap::new(&fluid.v, opts.streamline_time);
    let stream = opts.exec.try_map(&seeds, |x| {
        let traj = flow.trajectory(x)?;
        let mut worst = 0.0f64;
        for (_, p) in traj.samples.iter().step_by(10) {
            worst = worst.max(along(p, fluid.v.eval(p)?.comps())?);
        }
        Ok(worst)
    })?;
    let streamline_max = stream.into_iter().fold(0.0, f64::max);

    let dv = fluid.vorticity()?;
    let lines = if dv.degree() < dv.dim() {
        let per_seed = opts.exec.map(&seeds, |x| -> Result<Option<f64>> {
            let line = match trace_vortex_line(&dv, x, opts.line_length, Direction::Forward, &TraceOptions::default()) {
                Ok(l) => l,
                // no vortex line through points of vanishing vorticity
                Err(Error::DegenerateForm { .. }) | Err(Error::KernelDimension { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            let mut worst = 0.0f64;
            for (p, t) in line.points.iter().zip(&line.tangents) {
                worst = worst.max(along(p, t)?);
            }
            Ok(Some(worst))
        });
        let mut worst: Option<f64> = None;
        for r in per_seed {
            if let Some(w) = r? {
                worst = Some(worst.map_or(w, |m: f64| m.max(w)));
            }
        }
        worst
    } else {
        None
    };

    let global_variation = if fluid.uniform_bernoulli {
        let pts: Vec<Vec<f64>> =
            (0..SELF_CHECK_POINTS).map(|_| s.sample_box.sample(&mut rng, 0.0)).collect::<Result<_>>()?;
        let values = opts.exec.try_map(&pts, |x| Ok(fluid.bernoulli.eval(x)?.comps()[0]))?;
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(hi - lo)
    } else {
        None
    };
    let pass = streamline_max < opts.tolerance
        && lines.is_none_or(|w| w < opts.tolerance)
        && global_variation.is_none_or(|g| g < opts.tolerance);
    Ok(BernoulliReport { streamline_max, vortex_line_max: lines, global_variation, tolerance: opts.tolerance, pass })
}

/// A named, self-checked model system.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    /// Constructed abstract example rather than a physical flow.
    pub constructed: bool,
    pub system: InvariantSystem,
    pub fluid: Option<FluidScenario>,
    /// Sampling box on the system's base space (`M`, or `M x R` for
    /// time-dependent systems).
    pub sample_box: Domain,
    /// Time window for extended sample points of steady systems.
    pub time_range: (f64, f64),
    /// Threshold used by the load-time residual self-checks.
    pub residual_tol: f64,
    pub params: BTreeMap<String, f64>,
    /// Base-space point away from stagnation points and excluded shells,
    /// used as the default seed for chains, lines and surfaces.
    pub anchor: Vec<f64>,
    /// `d alpha` has the same rank throughout the sampling box.
    pub constant_rank: bool,
    /// Coordinate plane for default circulation circles.
    pub circulation_plane: (usize, usize),
}

impl Scenario {
    pub fn is_time_dependent(&self) -> bool {
        self.system.time_dependent
    }

    /// Random point of the base space, at least `margin` away from box faces
    /// and excluded shells.
    pub fn sample_base<R: Rng>(&self, rng: &mut R, margin: f64) -> Result<Vec<f64>> {
        self.sample_box.sample(rng, margin)
    }

    /// Random point of `M x R`.
    pub fn sample_extended<R: Rng>(&self, rng: &mut R, margin: f64) -> Result<Vec<f64>> {
        if self.is_time_dependent() {
            return self.sample_box.sample(rng, margin);
        }
        let mut x = self.sample_box.sample(rng, margin)?;
        x.push(rng.gen_range(self.time_range.0..=self.time_range.1));
        Ok(x)
    }

    /// Load-time checks: the transport identity (or its time-dependent form)
    /// and, for steady fluids, the stationary Euler residual and any
    /// declared Beltrami property.
    pub fn self_check(&self) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(SELF_CHECK_SEED);
        let pts: Vec<Vec<f64>> =
            (0..SELF_CHECK_POINTS).map(|_| self.sample_base(&mut rng, 1e-3)).collect::<Result<_>>()?;
        let fail = |detail: String| Error::SelfCheck { scenario: self.name.clone(), detail };
        for x in &pts {
            let r = self.system.transport_residual(x)?.norm();
            if !(r < self.residual_tol) {
                return Err(fail(format!("transport residual {r:e} at {x:?}")));
            }
        }
        if let Some(f) = &self.fluid {
            if f.steady {
                for x in &pts {
                    let r = stationary_euler_residual(f, x)?.norm();
                    if !(r < 1e-5) {
                        return Err(fail(format!("stationary Euler residual {r:e} at {x:?}")));
                    }
                }
            }
            if self.params.contains_key("beltrami") {
                for x in &pts {
                    let dv = f.vorticity()?.eval(x)?;
                    let w = f.v.eval(x)?;
                    let curl = [dv.get(&[1, 2]), -dv.get(&[0, 2]), dv.get(&[0, 1])];
                    let gap = curl.iter().zip(w.comps()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    if !(gap < 1e-6) {
                        return Err(fail(format!("curl v differs from v by {gap:e} at {x:?}")));
                    }
                }
            }
        }
        Ok(())
    }
}

type Builder = fn(&Params) -> Result<Scenario>;

struct Entry {
    name: &'static str,
    summary: &'static str,
    keys: &'static [(&'static str, f64)],
    anchor: &'static [f64],
    build: Builder,
}

const ENTRIES: &[Entry] = &[
    Entry {
        name: "rigid_rotation",
        summary: "3D solid-body rotation about z with p = omega^2 (x^2 + y^2)/2",
        keys: &[("omega", 1.0)],
        anchor: &[0.3, 0.2, 0.1],
        build: rigid_rotation,
    },
    Entry {
        name: "rigid_rotation_gravity",
        summary: "solid-body rotation in a gravity potential Phi = g z",
        keys: &[("omega", 1.0), ("g", 9.81)],
        anchor: &[0.3, 0.2, 0.1],
        build: rigid_rotation_gravity,
    },
    Entry {
        name: "taylor_green",
        summary: "steady Taylor-Green cell (sin x cos y, -cos x sin y, 0) embedded in 3D",
        keys: &[],
        anchor: &[0.7, 0.4, 0.2],
        build: taylor_green,
    },
    Entry {
        name: "abc",
        summary: "Arnold-Beltrami-Childress flow, curl v = v",
        keys: &[("a", 1.0), ("b", 1.0), ("c", 1.0)],
        anchor: &[0.3, 0.2, 0.1],
        build: abc,
    },
    Entry {
        name: "hill",
        summary: "Hill's spherical vortex translating along z (lab frame, unsteady)",
        keys: &[("u", 1.0), ("radius", 1.0), ("shell", 1e-3)],
        anchor: &[0.4, 0.1, 0.2, 0.1],
        build: hill,
    },
    Entry {
        name: "oscillator",
        summary: "harmonic oscillator: alpha = p dq, beta = -H on the (q, p) plane",
        keys: &[("omega", 1.0)],
        anchor: &[0.5, 0.2],
        build: oscillator,
    },
    Entry {
        name: "r5_decomposable",
        summary: "constructed: alpha = x1 dx2^dx3 on R^5, v = d/dx4, beta = 0",
        keys: &[],
        anchor: &[0.2, 0.1, 0.3, 0.1, 0.2],
        build: r5_decomposable,
    },
    Entry {
        name: "curved_graph",
        summary: "constructed: alpha = (x3 + x1 x2) dx4 on R^4, kernel tangent to x3 = -x1 x2",
        keys: &[],
        anchor: &[0.2, 0.1, 0.3, 0.1],
        build: curved_graph,
    },
    Entry {
        name: "r5_rotating",
        summary: "constructed, time-dependent: alpha = (x1 cos t + x4 sin t) dx2^dx3, v = (-x4, 0, 0, x1, 0)",
        keys: &[],
        anchor: &[0.2, 0.1, 0.3, 0.1, 0.2, 0.1],
        build: r5_rotating,
    },
];

/// Names and one-line summaries of the shipped scenarios.
pub fn catalog() -> Vec<(&'static str, &'static str)> {
    ENTRIES.iter().map(|e| (e.name, e.summary)).collect()
}

/// Parameter names and defaults of a scenario.
pub fn parameters(name: &str) -> Result<Vec<(&'static str, f64)>> {
    Ok(entry(name)?.keys.to_vec())
}

fn entry(name: &str) -> Result<&'static Entry> {
    ENTRIES.iter().find(|e| e.name == name).ok_or_else(|| Error::UnknownScenario {
        name: name.to_string(),
        available: ENTRIES.iter().map(|e| e.name.to_string()).collect(),
    })
}

/// Builds a scenario with default parameters and runs its self-checks.
pub fn lookup(name: &str) -> Result<Scenario> {
    build(name, &BTreeMap::new())
}

/// Builds a scenario with parameter overrides and runs its self-checks.
pub fn build(name: &str, overrides: &BTreeMap<String, f64>) -> Result<Scenario> {
    let e = entry(name)?;
    let mut values: BTreeMap<String, f64> = e.keys.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    for (k, v) in overrides {
        if !values.contains_key(k) {
            return Err(Error::Config(format!(
                "scenario {name} has no parameter {k:?} (known: {})",
                e.keys.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(", ")
            )));
        }
        if !v.is_finite() {
            return Err(Error::Config(format!("parameter {k} must be finite")));
        }
        values.insert(k.clone(), *v);
    }
    let mut scenario = (e.build)(&Params(values))?;
    scenario.anchor = e.anchor.to_vec();
    scenario.self_check()?;
    Ok(scenario)
}

struct Params(BTreeMap<String, f64>);

impl Params {
    fn get(&self, k: &str) -> f64 {
        self.0[k]
    }
}

fn cube(n: usize, half: f64) -> Domain {
    Domain::cube(n, half)
}

fn fluid_scenario(
    name: &str,
    p: &Params,
    fluid: FluidScenario,
    sample_box: Domain,
    description: &str,
    extra: &[(&str, f64)],
) -> Result<Scenario> {
    let system = fluid.system()?;
    let mut params = p.0.clone();
    for (k, v) in extra {
        params.insert(k.to_string(), *v);
    }
    Ok(Scenario {
        name: name.into(),
        description: description.into(),
        constructed: false,
        system,
        fluid: Some(fluid),
        sample_box,
        time_range: (0.0, 1.0),
        residual_tol: 1e-6,
        params,
        anchor: Vec::new(),
        constant_rank: true,
        circulation_plane: (0, 1),
    })
}

fn num(x: f64) -> String {
    format!("({x:?})")
}

fn rigid_rotation(p: &Params) -> Result<Scenario> {
    let s = Space::euclidean(3);
    let w = num(p.get("omega"));
    let v = VectorField::analytic(&s, &[&format!("-{w}*y"), &format!("{w}*x"), "0"])?;
    let pressure = DifferentialForm::scalar(&s, &format!("{w}^2*(x^2 + y^2)/2"))?;
    let fluid = FluidScenario::new(v, pressure, None)?;
    fluid_scenario("rigid_rotation", p, fluid, cube(3, 1.5), "solid-body rotation, vorticity 2 omega along z", &[])
}

fn rigid_rotation_gravity(p: &Params) -> Result<Scenario> {
    let s = Space::euclidean(3);
    let w = num(p.get("omega"));
    let g = num(p.get("g"));
    let v = VectorField::analytic(&s, &[&format!("-{w}*y"), &format!("{w}*x"), "0"])?;
    let pressure = DifferentialForm::scalar(&s, &format!("{w}^2*(x^2 + y^2)/2 - {g}*z"))?;
    let potential = DifferentialForm::scalar(&s, &format!("{g}*z"))?;
    let fluid = FluidScenario::new(v, pressure, Some(potential))?;
    fluid_scenario(
        "rigid_rotation_gravity",
        p,
        fluid,
        cube(3, 1.5),
        "solid-body rotation with hydrostatic pressure in a uniform gravity potential",
        &[],
    )
}

fn taylor_green(p: &Params) -> Result<Scenario> {
    let s = Space::euclidean(3);
    let v = VectorField::analytic(&s, &["sin(x)*cos(y)", "-cos(x)*sin(y)", "0"])?;
    let pressure = DifferentialForm::scalar(&s, "(cos(2*x) + cos(2*y))/4")?;
    let fluid = FluidScenario::new(v, pressure, None)?;
    let pi = std::f64::consts::PI;
    let sample_box = Domain::new(vec![-pi, -pi, -1.0], vec![pi, pi, 1.0])?;
    fluid_scenario(
        "taylor_green",
        p,
        fluid,
        sample_box,
        "steady Taylor-Green vortex cell, E = 1/2 - sin^2 x sin^2 y",
        &[],
    )
}

fn abc(p: &Params) -> Result<Scenario> {
    let s = Space::euclidean(3);
    let (a, b, c) = (num(p.get("a")), num(p.get("b")), num(p.get("c")));
    let comps =
        [format!("{a}*sin(z) + {c}*cos(y)"), format!("{b}*sin(x) + {a}*cos(z)"), format!("{c}*sin(y) + {b}*cos(x)")];
    let refs: Vec<&str> = comps.iter().map(String::as_str).collect();
    let v = VectorField::analytic(&s, &refs)?;
    let v2 = comps.iter().map(|c| format!("({c})^2")).collect::<Vec<_>>().join(" + ");
    let pressure = DifferentialForm::scalar(&s, &format!("-({v2})/2"))?;
    let mut fluid = FluidScenario::new(v, pressure, None)?;
    fluid.uniform_bernoulli = true;
    let pi = std::f64::consts::PI;
    fluid_scenario("abc", p, fluid, cube(3, pi), "Beltrami flow with p = -v^2/2 so that E = 0", &[("beltrami", 1.0)])
}

/// Hill's vortex in the frame moving with it: velocity and pressure at a
/// co-moving position `r`, with the stream at infinity `-U z`.
fn hill_comoving(u: f64, a: f64, r: [f64; 3]) -> ([f64; 3], f64) {
    let [x, y, z] = r;
    let w2 = x * x + y * y;
    let r2 = w2 + z * z;
    let e0 = 0.5 * u * u;
    let c = 1.5 * u / (a * a);
    let (v, e) = if r2 < a * a {
        let v = [c * x * z, c * y * z, c * (a * a - 2.0 * w2 - z * z)];
        (v, e0 + 2.5 * c * c * w2 * (r2 - a * a))
    } else {
        let rr = r2.sqrt();
        let r5 = rr.powi(5);
        let k = 1.5 * u * a.powi(3) / r5;
        let v = [k * x * z, k * y * z, -u + 0.5 * u * a.powi(3) * (2.0 / rr.powi(3) - 3.0 * w2 / r5)];
        (v, e0)
    };
    let speed2 = v.iter().map(|c| c * c).sum::<f64>();
    (v, e - 0.5 * speed2)
}

fn hill(p: &Params) -> Result<Scenario> {
    let (u, a, shell) = (p.get("u"), p.get("radius"), p.get("shell"));
    if !(a > 0.0 && shell > 0.0) {
        return Err(Error::Config("hill needs radius > 0 and shell > 0".into()));
    }
    let half = 2.0 * a;
    let t_hi = 0.5 * a / u.abs().max(1e-12);
    let domain = cube(3, half).with_time(0.0, t_hi).with_shell(SphericalShell {
        center: vec![0.0; 3],
        velocity: vec![0.0, 0.0, u],
        radius: a,
        half_width: shell,
    });
    let s = Space::extended(3).with_domain(domain.clone())?;
    let v = VectorField::native(&s, "hill v", move |x| {
        let (w, _) = hill_comoving(u, a, [x[0], x[1], x[2] - u * x[3]]);
        vec![w[0], w[1], w[2] + u, 0.0]
    });
    let pressure =
        DifferentialForm::native(&s, 0, "hill p", move |x| vec![hill_comoving(u, a, [x[0], x[1], x[2] - u * x[3]]).1])?;
    let fluid = FluidScenario::new(v, pressure, None)?;
    let system = fluid.system()?;
    Ok(Scenario {
        name: "hill".into(),
        description: "Hill's spherical vortex translating with speed u; the shell |r - u t z| = radius is excluded"
            .into(),
        constructed: false,
        system,
        fluid: Some(fluid),
        sample_box: domain,
        time_range: (0.0, t_hi),
        residual_tol: 1e-4,
        params: p.0.clone(),
        anchor: Vec::new(),
        // irrotational outside the vortex, rank 2 inside
        constant_rank: false,
        // horizontal circulation vanishes identically
        circulation_plane: (0, 2),
    })
}

fn system_scenario(name: &str, description: &str, p: &Params, system: InvariantSystem, sample_box: Domain) -> Scenario {
    Scenario {
        name: name.into(),
        description: description.into(),
        constructed: true,
        system,
        fluid: None,
        sample_box,
        time_range: (0.0, 1.0),
        residual_tol: 1e-6,
        params: p.0.clone(),
        anchor: Vec::new(),
        constant_rank: true,
        circulation_plane: (0, 1),
    }
}

fn oscillator(p: &Params) -> Result<Scenario> {
    let s = Space::euclidean(2).with_vars(&["q", "p"])?;
    let w = num(p.get("omega"));
    let v = VectorField::analytic(&s, &["p", &format!("-{w}^2*q")])?;
    let alpha = DifferentialForm::one_form(&s, &["p", "0"])?.with_label("p dq");
    let beta = DifferentialForm::scalar(&s, &format!("-(p^2 + {w}^2*q^2)/2"))?.with_label("-H");
    let system = InvariantSystem::steady(alpha, beta, v)?;
    let mut sc = system_scenario(
        "oscillator",
        "Hamiltonian H = (p^2 + omega^2 q^2)/2; sigma = p dq - H dt",
        p,
        system,
        cube(2, 1.5),
    );
    sc.constructed = false;
    Ok(sc)
}

fn r5_decomposable(p: &Params) -> Result<Scenario> {
    let s = Space::euclidean(5);
    let mut comps = vec!["0"; 10];
    comps[combination_index(5, &[1, 2])] = "x1";
    let alpha = DifferentialForm::analytic(&s, 2, &comps)?.with_label("x1 dx2^dx3");
    let beta = DifferentialForm::zero(&s, 1)?;
    let v = VectorField::coordinate(&s, 3)?;
    let system = InvariantSystem::steady(alpha, beta, v)?;
    Ok(system_scenario(
        "r5_decomposable",
        "constructed example: d alpha = dx1^dx2^dx3 has a two-dimensional kernel span(d/dx4, d/dx5)",
        p,
        system,
        cube(5, 1.0),
    ))
}

fn curved_graph(p: &Params) -> Result<Scenario> {
    let s = Space::euclidean(4);
    let alpha = DifferentialForm::one_form(&s, &["0", "0", "0", "x3 + x1*x2"])?.with_label("(x3 + x1 x2) dx4");
    let beta = DifferentialForm::scalar(&s, "-(x3 + x1*x2)")?;
    let v = VectorField::coordinate(&s, 3)?;
    let system = InvariantSystem::steady(alpha, beta, v)?;
    Ok(system_scenario(
        "curved_graph",
        "constructed example: the kernel of d alpha is tangent to the level sets of x3 + x1 x2 inside x4 = const",
        p,
        system,
        cube(4, 1.0),
    ))
}

fn r5_rotating(p: &Params) -> Result<Scenario> {
    let domain = cube(5, 1.0).with_time(0.0, 1.0);
    let s = Space::extended(5).with_domain(domain.clone())?;
    let mut comps = vec!["0"; 15];
    comps[combination_index(6, &[1, 2])] = "x1*cos(t) + x4*sin(t)";
    let alpha = DifferentialForm::analytic(&s, 2, &comps)?.with_label("(x1 cos t + x4 sin t) dx2^dx3");
    let beta = DifferentialForm::zero(&s, 1)?;
    let v = VectorField::analytic(&s, &["-x4", "0", "0", "x1", "0", "0"])?;
    let system = InvariantSystem::time_dependent(alpha, beta, v)?;
    let mut sc = system_scenario(
        "r5_rotating",
        "constructed time-dependent example: the kernel span(-sin t d/dx1 + cos t d/dx4, d/dx5) rotates with the flow",
        p,
        system,
        domain,
    );
    sc.time_range = (0.0, 1.0);
    Ok(sc)
}

/// Non-solution used to exercise failure paths: `v = (x, -y, x)` with zero
/// pressure on `[-0.5, 0.5]^3`. Its vorticity `(0, -1, 0)` is not carried by
/// the flow.
pub fn strain_shear() -> Result<FluidScenario> {
    let s = Space::euclidean(3).with_domain(cube(3, 0.5))?;
    let v = VectorField::analytic(&s, &["x", "-y", "x"])?;
    FluidScenario::new(v, DifferentialForm::zero(&s, 0)?, None)
}

/// Uniform flow, irrotational with constant `E`.
pub fn uniform_flow(velocity: [f64; 3]) -> Result<FluidScenario> {
    let s = Space::euclidean(3);
    let v = VectorField::constant(&s, velocity.to_vec())?;
    let mut f = FluidScenario::new(v, DifferentialForm::zero(&s, 0)?, None)?;
    f.uniform_bernoulli = true;
    Ok(f)
}

/// Unit vector along a field at a point, or `None` where it vanishes.
pub fn unit(v: &VectorField, x: &[f64]) -> Result<Option<Vector>> {
    let w = v.eval(x)?;
    let n = w.norm();
    Ok((n > 0.0).then(|| Vector::from(w.comps().iter().map(|c| c / n).collect::<Vec<_>>())))
}

/// Shared handle for scenarios built once per process.
pub type SharedScenario = Arc<Scenario>;
