//! Surrogate virtual patient for closed-loop insulin dosing.
//!
//! A minimal glucose-insulin model, not a reproduction of any commercial
//! simulator: Bergman-style remote insulin action, two subcutaneous insulin
//! depots, one gut compartment and a multiplicative exercise factor on
//! insulin sensitivity. Time is in minutes, glucose in mg/dL, insulin in U
//! (depots) and mU/L (plasma).
//!
//! ```text
//! dG/dt     = −(S_G + X)·G + EGP + Ra/V_G
//! dX/dt     = p₂·(S_I·E·I_p − X)
//! dI_sc1/dt = u − k_a1·I_sc1
//! dI_sc2/dt = k_a1·I_sc1 − k_a2·I_sc2
//! dI_p/dt   = 1000·k_a2·I_sc2/V_I − k_e·I_p + σ·(G − 80)⁺
//! dQ_gut/dt = 1000·meal − k_abs·Q_gut,      Ra = f·k_abs·Q_gut
//! ```
//!
//! u is the pump's basal rate plus the controller dose spread over the tick.
//! EGP is fixed so that the basal state at G_b is an equilibrium.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lambda_pi::{CostSpec, GammaMode, LearnConfig, Objective, RobustnessConfig};
use crate::linalg::RankPolicy;
use crate::rng::{stream, streams, Rng};
use crate::system::{
    ActionBounds, ActionVector, DomainBox, NoiseSpec, Plant, Policy, ReferenceState, SystemState, UncertaintySpec,
};

pub const TICK_MINUTES: usize = 5;
pub const DAY_MINUTES: f64 = 1440.0;
const SUBSTEP: f64 = 1.0;
const SECRETION_THRESHOLD: f64 = 80.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cohort {
    T1ADU,
    T1ADO,
    T1CHIL,
    T2ADU,
}

impl Cohort {
    pub const ALL: [Cohort; 4] = [Cohort::T1ADU, Cohort::T1ADO, Cohort::T1CHIL, Cohort::T2ADU];

    fn index(self) -> u64 {
        match self {
            Cohort::T1ADU => 0,
            Cohort::T1ADO => 1,
            Cohort::T1CHIL => 2,
            Cohort::T2ADU => 3,
        }
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Cohort::T1ADU => "T1ADU",
            Cohort::T1ADO => "T1ADO",
            Cohort::T1CHIL => "T1CHIL",
            Cohort::T2ADU => "T2ADU",
        };
        f.write_str(s)
    }
}

impl FromStr for Cohort {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "T1ADU" => Ok(Cohort::T1ADU),
            "T1ADO" => Ok(Cohort::T1ADO),
            "T1CHIL" => Ok(Cohort::T1CHIL),
            "T2ADU" => Ok(Cohort::T2ADU),
            _ => Err(Error::config(format!("unknown cohort {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientParams {
    pub cohort: Cohort,
    /// kg
    pub body_mass: f64,
    /// S_I, L/mU/min
    pub insulin_sensitivity: f64,
    /// S_G, 1/min
    pub glucose_effectiveness: f64,
    /// p₂, 1/min
    pub insulin_action_rate: f64,
    /// k_a1, 1/min
    pub absorption_fast: f64,
    /// k_a2, 1/min
    pub absorption_slow: f64,
    /// k_e, 1/min
    pub insulin_clearance: f64,
    /// V_I, L/kg
    pub insulin_volume: f64,
    /// V_G, dL/kg
    pub glucose_volume: f64,
    /// k_abs, 1/min
    pub cho_absorption: f64,
    /// f
    pub bioavailability: f64,
    /// G_b, mg/dL
    pub basal_glucose: f64,
    /// Scales (multiplier − 1) of every exercise intensity.
    pub exercise_sensitivity: f64,
    /// σ, mU/L/min per mg/dL above 80; zero for type 1.
    pub secretion_gain: f64,
    /// Pump basal, U/min.
    pub basal_rate: f64,
}

/// Uniform ranges per cohort, in field order of [`PatientParams`] (after
/// `cohort`).
const RANGES: [[(f64, f64); 15]; 4] = [
    // T1ADU
    [
        (60.0, 95.0),
        (8.0e-4, 1.4e-3),
        (0.008, 0.014),
        (0.02, 0.04),
        (0.015, 0.025),
        (0.012, 0.02),
        (0.12, 0.18),
        (0.12, 0.15),
        (1.6, 1.9),
        (0.018, 0.03),
        (0.85, 0.95),
        (110.0, 140.0),
        (0.8, 1.2),
        (0.0, 0.0),
        (0.012, 0.018),
    ],
    // T1ADO
    [
        (45.0, 70.0),
        (9.0e-4, 1.6e-3),
        (0.008, 0.014),
        (0.02, 0.04),
        (0.015, 0.025),
        (0.012, 0.02),
        (0.12, 0.18),
        (0.12, 0.15),
        (1.6, 1.9),
        (0.018, 0.03),
        (0.85, 0.95),
        (110.0, 150.0),
        (0.8, 1.3),
        (0.0, 0.0),
        (0.010, 0.015),
    ],
    // T1CHIL
    [
        (25.0, 45.0),
        (1.2e-3, 2.0e-3),
        (0.009, 0.015),
        (0.02, 0.04),
        (0.016, 0.028),
        (0.013, 0.022),
        (0.12, 0.18),
        (0.12, 0.15),
        (1.6, 1.9),
        (0.02, 0.032),
        (0.85, 0.95),
        (115.0, 155.0),
        (0.9, 1.3),
        (0.0, 0.0),
        (0.005, 0.008),
    ],
    // T2ADU
    [
        (75.0, 110.0),
        (4.0e-4, 8.0e-4),
        (0.007, 0.012),
        (0.02, 0.04),
        (0.015, 0.025),
        (0.012, 0.02),
        (0.12, 0.18),
        (0.12, 0.15),
        (1.6, 1.9),
        (0.018, 0.03),
        (0.85, 0.95),
        (120.0, 160.0),
        (0.6, 1.0),
        (0.02, 0.05),
        (0.008, 0.014),
    ],
];

impl PatientParams {
    fn from_row(cohort: Cohort, v: [f64; 15]) -> Self {
        Self {
            cohort,
            body_mass: v[0],
            insulin_sensitivity: v[1],
            glucose_effectiveness: v[2],
            insulin_action_rate: v[3],
            absorption_fast: v[4],
            absorption_slow: v[5],
            insulin_clearance: v[6],
            insulin_volume: v[7],
            glucose_volume: v[8],
            cho_absorption: v[9],
            bioavailability: v[10],
            basal_glucose: v[11],
            exercise_sensitivity: v[12],
            secretion_gain: v[13],
            basal_rate: v[14],
        }
    }

    /// Midpoint of every cohort range.
    pub fn nominal(cohort: Cohort) -> Self {
        let ranges = &RANGES[cohort.index() as usize];
        Self::from_row(cohort, std::array::from_fn(|k| 0.5 * (ranges[k].0 + ranges[k].1)))
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            self.body_mass,
            self.insulin_sensitivity,
            self.glucose_effectiveness,
            self.insulin_action_rate,
            self.absorption_fast,
            self.absorption_slow,
            self.insulin_clearance,
            self.insulin_volume,
            self.glucose_volume,
            self.cho_absorption,
            self.bioavailability,
            self.exercise_sensitivity,
        ];
        if rates.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::config("patient rates must be positive"));
        }
        if !(90.0..=160.0).contains(&self.basal_glucose) {
            return Err(Error::config(format!("basal glucose {} outside [90, 160]", self.basal_glucose)));
        }
        if self.basal_rate < 0.0 || self.secretion_gain < 0.0 {
            return Err(Error::config("basal rate and secretion gain must be nonnegative"));
        }
        if self.cohort != Cohort::T2ADU && self.secretion_gain != 0.0 {
            return Err(Error::config("type 1 cohorts have no endogenous secretion"));
        }
        Ok(())
    }

    fn vi(&self) -> f64 {
        self.insulin_volume * self.body_mass
    }

    fn vg(&self) -> f64 {
        self.glucose_volume * self.body_mass
    }

    fn secretion(&self, g: f64) -> f64 {
        self.secretion_gain * (g - SECRETION_THRESHOLD).max(0.0)
    }

    /// Plasma insulin at the basal equilibrium, mU/L.
    pub fn basal_plasma_insulin(&self) -> f64 {
        (1000.0 * self.basal_rate / self.vi() + self.secretion(self.basal_glucose)) / self.insulin_clearance
    }

    /// EGP, mg/dL/min.
    pub fn endogenous_production(&self) -> f64 {
        self.basal_glucose * (self.glucose_effectiveness + self.insulin_sensitivity * self.basal_plasma_insulin())
    }

    /// Basal equilibrium with the glucose replaced by `g`.
    pub fn equilibrium(&self, g: f64) -> PatientState {
        let ip = self.basal_plasma_insulin();
        PatientState {
            g,
            x: self.insulin_sensitivity * ip,
            i_sc1: self.basal_rate / self.absorption_fast,
            i_sc2: self.basal_rate / self.absorption_slow,
            i_p: ip,
            q_gut: 0.0,
            e: 1.0,
            absorbed: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientState {
    /// Plasma glucose, mg/dL.
    pub g: f64,
    /// Remote insulin action, 1/min.
    pub x: f64,
    /// Depots, U.
    pub i_sc1: f64,
    pub i_sc2: f64,
    /// Plasma insulin, mU/L.
    pub i_p: f64,
    /// Gut glucose, mg.
    pub q_gut: f64,
    /// Exercise multiplier on insulin sensitivity.
    pub e: f64,
    /// Cumulative insulin moved from the depots to plasma, U.
    pub absorbed: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intensity {
    Light,
    Moderate,
    Intense,
}

impl Intensity {
    pub const ALL: [Intensity; 3] = [Intensity::Light, Intensity::Moderate, Intensity::Intense];

    pub fn multiplier(self) -> f64 {
        match self {
            Intensity::Light => 1.2,
            Intensity::Moderate => 1.5,
            Intensity::Intense => 1.9,
        }
    }
}

/// Minutes over which the exercise effect decays after a session.
pub const EXERCISE_WASHOUT: f64 = 60.0;

/// Inputs held constant over one integration sub-step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Inputs {
    /// Total insulin rate including basal, U/min.
    pub insulin: f64,
    /// Carbohydrate intake, g/min.
    pub meal: f64,
    /// Target sensitivity multiplier while exercising.
    pub exercise: Option<f64>,
}

fn derivative(p: &PatientParams, s: &[f64; 8], u: &Inputs, egp: f64) -> [f64; 8] {
    let [g, x, i1, i2, ip, q, e, _] = *s;
    let ra = p.bioavailability * p.cho_absorption * q;
    let de = match u.exercise {
        Some(_) => 0.0,
        None => -(e - 1.0) / EXERCISE_WASHOUT,
    };
    [
        -(p.glucose_effectiveness + x) * g + egp + ra / p.vg(),
        p.insulin_action_rate * (p.insulin_sensitivity * e * ip - x),
        u.insulin - p.absorption_fast * i1,
        p.absorption_fast * i1 - p.absorption_slow * i2,
        1000.0 * p.absorption_slow * i2 / p.vi() - p.insulin_clearance * ip + p.secretion(g),
        1000.0 * u.meal - p.cho_absorption * q,
        de,
        p.absorption_slow * i2,
    ]
}

fn rk4(p: &PatientParams, s: &PatientState, u: &Inputs, egp: f64, h: f64) -> PatientState {
    let mut y = [s.g, s.x, s.i_sc1, s.i_sc2, s.i_p, s.q_gut, s.e, s.absorbed];
    if let Some(m) = u.exercise {
        y[6] = y[6].max(m);
    }
    let add = |a: &[f64; 8], k: &[f64; 8], c: f64| -> [f64; 8] { std::array::from_fn(|i| a[i] + c * k[i]) };
    let k1 = derivative(p, &y, u, egp);
    let k2 = derivative(p, &add(&y, &k1, h / 2.0), u, egp);
    let k3 = derivative(p, &add(&y, &k2, h / 2.0), u, egp);
    let k4 = derivative(p, &add(&y, &k3, h), u, egp);
    let n: [f64; 8] = std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    PatientState { g: n[0], x: n[1], i_sc1: n[2], i_sc2: n[3], i_p: n[4], q_gut: n[5], e: n[6], absorbed: n[7] }
}

/// Advance one 5-minute tick with one input set per 1-minute sub-step.
/// `start_minute` only labels a death error.
pub fn patient_substeps(params: &PatientParams, state: &PatientState, inputs: &[Inputs; TICK_MINUTES], start_minute: f64) -> Result<PatientState> {
    let egp = params.endogenous_production();
    let mut s = state.clone();
    for (k, u) in inputs.iter().enumerate() {
        s = rk4(params, &s, u, egp, SUBSTEP);
        if !(s.g > 0.0) {
            return Err(Error::PatientDeath { glucose: s.g, minute: start_minute + (k + 1) as f64 });
        }
    }
    Ok(s)
}

/// One tick with `insulin` (U per tick, on top of the pump basal) and a
/// constant meal rate.
pub fn patient_step(params: &PatientParams, state: &PatientState, insulin: f64, meal_rate: f64, exercise: Option<Intensity>) -> Result<PatientState> {
    let u = Inputs {
        insulin: params.basal_rate + insulin / TICK_MINUTES as f64,
        meal: meal_rate,
        exercise: exercise.map(|i| 1.0 + (i.multiplier() - 1.0) * params.exercise_sensitivity),
    };
    patient_substeps(params, state, &[u; TICK_MINUTES], 0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meal {
    /// Minutes after midnight.
    pub start: f64,
    /// g
    pub cho: f64,
    /// min
    pub duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExerciseSession {
    pub start: f64,
    pub intensity: Intensity,
    pub duration: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DailyScenario {
    pub meals: Vec<Meal>,
    pub exercise: Vec<ExerciseSession>,
    /// Meals moved to avoid overlapping the previous meal.
    #[serde(default)]
    pub shifted_meals: usize,
}

impl DailyScenario {
    /// Six meals at 07:00, 10:00, 13:00, 15:00, 18:00, 23:00 with
    /// 70, 30, 90, 30, 90, 25 g over 30, 15, 45, 15, 45, 20 min, and a
    /// 30-minute moderate session at 16:00.
    pub fn nominal() -> Self {
        let starts = [7.0, 10.0, 13.0, 15.0, 18.0, 23.0];
        let cho = [70.0, 30.0, 90.0, 30.0, 90.0, 25.0];
        let dur = [30.0, 15.0, 45.0, 15.0, 45.0, 20.0];
        Self {
            meals: (0..6).map(|k| Meal { start: starts[k] * 60.0, cho: cho[k], duration: dur[k] }).collect(),
            exercise: vec![ExerciseSession { start: 16.0 * 60.0, intensity: Intensity::Moderate, duration: 30.0 }],
            shifted_meals: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for m in &self.meals {
            if !(0.0..DAY_MINUTES).contains(&m.start) || !(m.cho > 0.0) || !(m.duration > 0.0) {
                return Err(Error::config(format!("invalid meal {m:?}")));
            }
        }
        for e in &self.exercise {
            if !(0.0..DAY_MINUTES).contains(&e.start) || !(e.duration > 0.0) {
                return Err(Error::config(format!("invalid exercise {e:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariabilityProfile {
    /// ±15 min meal start, ±15% CHO and duration, ±15 min exercise start,
    /// ±20% exercise duration.
    Learning,
    /// ±60 min, ±50%, ±50%, ±60 min, ±50%.
    Evaluation,
    /// Nominal day every day.
    None,
}

struct Ranges {
    meal_shift: f64,
    cho: f64,
    meal_duration: f64,
    exercise_shift: f64,
    exercise_duration: f64,
}

impl VariabilityProfile {
    fn ranges(self) -> Ranges {
        match self {
            VariabilityProfile::Learning => Ranges { meal_shift: 15.0, cho: 0.15, meal_duration: 0.15, exercise_shift: 15.0, exercise_duration: 0.2 },
            VariabilityProfile::Evaluation => Ranges { meal_shift: 60.0, cho: 0.5, meal_duration: 0.5, exercise_shift: 60.0, exercise_duration: 0.5 },
            VariabilityProfile::None => Ranges { meal_shift: 0.0, cho: 0.0, meal_duration: 0.0, exercise_shift: 0.0, exercise_duration: 0.0 },
        }
    }
}

fn jitter(rng: &mut Rng, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.gen_range(-half_width..=half_width)
    } else {
        0.0
    }
}

fn clamp_start(t: f64) -> f64 {
    t.clamp(0.0, DAY_MINUTES - 1e-9)
}

/// Perturb every meal and exercise occurrence independently.
pub fn scenario_generate(nominal: &DailyScenario, profile: VariabilityProfile, rng: &mut Rng) -> DailyScenario {
    let r = profile.ranges();
    let mut meals: Vec<Meal> = nominal
        .meals
        .iter()
        .map(|m| Meal {
            start: clamp_start(m.start + jitter(rng, r.meal_shift)),
            cho: m.cho * (1.0 + jitter(rng, r.cho)),
            duration: m.duration * (1.0 + jitter(rng, r.meal_duration)),
        })
        .collect();
    let exercise = nominal
        .exercise
        .iter()
        .map(|e| {
            let start = clamp_start(e.start + jitter(rng, r.exercise_shift));
            let intensity = match profile {
                VariabilityProfile::None => e.intensity,
                _ => Intensity::ALL[rng.gen_range(0..3)],
            };
            ExerciseSession { start, intensity, duration: e.duration * (1.0 + jitter(rng, r.exercise_duration)) }
        })
        .collect();
    meals.sort_by(|a, b| a.start.total_cmp(&b.start));
    let mut shifted = 0;
    for k in 1..meals.len() {
        let end = meals[k - 1].start + meals[k - 1].duration;
        if meals[k].start < end {
            meals[k].start = clamp_start(end);
            shifted += 1;
        }
    }
    DailyScenario { meals, exercise, shifted_meals: shifted }
}

/// Sample `count` patients from the cohort's uniform ranges.
pub fn make_cohort(cohort: Cohort, count: usize, seed: u64) -> Vec<PatientParams> {
    let mut rng = stream(seed.wrapping_add(cohort.index()), streams::COHORT);
    let ranges = &RANGES[cohort.index() as usize];
    (0..count)
        .map(|_| {
            let row = std::array::from_fn(|k| {
                let (lo, hi) = ranges[k];
                if lo < hi {
                    rng.gen_range(lo..=hi)
                } else {
                    lo
                }
            });
            PatientParams::from_row(cohort, row)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CgmNoise {
    /// Stationary standard deviation, mg/dL.
    pub amplitude: f64,
    /// AR(1) coefficient.
    pub ar: f64,
}

impl Default for CgmNoise {
    fn default() -> Self {
        Self { amplitude: 0.0, ar: 0.7 }
    }
}

pub const CGM_MIN: f64 = 40.0;
pub const CGM_MAX: f64 = 400.0;

/// AR(1) sensor error, bounded at three stationary deviations.
#[derive(Clone, Debug)]
pub struct CgmSensor {
    pub noise: CgmNoise,
    error: f64,
}

impl CgmSensor {
    pub fn new(noise: CgmNoise) -> Self {
        Self { noise, error: 0.0 }
    }

    pub fn read(&mut self, g: f64, rng: &mut Rng) -> f64 {
        if self.noise.amplitude > 0.0 {
            let z: f64 = rng.sample(StandardNormal);
            let phi = self.noise.ar;
            let bound = 3.0 * self.noise.amplitude;
            self.error = (phi * self.error + self.noise.amplitude * (1.0 - phi * phi).sqrt() * z).clamp(-bound, bound);
        }
        (g + self.error).clamp(CGM_MIN, CGM_MAX)
    }
}

/// Single reading with a fresh sensor.
pub fn cgm_read(state: &PatientState, noise: CgmNoise, rng: &mut Rng) -> f64 {
    CgmSensor::new(noise).read(state.g, rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerObservation {
    pub x1: f64,
    pub x2: f64,
}

/// x₁ is the latest sample and x₂ = (x₁,k − x₁,k−6)/30, with a missing
/// x₁,k−6 taken as 0.
pub fn observation(history: &[f64]) -> Result<ControllerObservation> {
    let n = history.len();
    let x1 = *history.last().ok_or(Error::Empty("CGM history"))?;
    let lag = if n >= 7 { history[n - 7] } else { 0.0 };
    Ok(ControllerObservation { x1, x2: (x1 - lag) / 30.0 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearningWindow {
    /// The trial runs on; each buffer continues where the last one ended.
    Continuous,
    /// Every episode restarts from the same snapshot (state, day, draws).
    Replay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlucoseConfig {
    /// mg/dL
    pub target: f64,
    /// U per 5 min
    pub bounds: ActionBounds,
    /// Pump increment in U; 0 delivers the commanded dose exactly.
    pub pump_quantum: f64,
    pub cgm: CgmNoise,
    pub profile: VariabilityProfile,
    pub nominal: DailyScenario,
    /// Initial CGM value range, mg/dL.
    pub init_glucose: (f64, f64),
    pub window: LearningWindow,
    /// Ticks per episode in replay mode.
    pub window_steps: usize,
}

impl Default for GlucoseConfig {
    fn default() -> Self {
        Self {
            target: 120.0,
            bounds: ActionBounds::new(vec![0.0], vec![5.0]).expect("valid bounds"),
            pump_quantum: 0.0,
            cgm: CgmNoise::default(),
            profile: VariabilityProfile::Learning,
            nominal: DailyScenario::nominal(),
            init_glucose: (70.0, 180.0),
            window: LearningWindow::Continuous,
            window_steps: 144,
        }
    }
}

impl GlucoseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target > 0.0) {
            return Err(Error::config("target must be positive"));
        }
        if self.bounds.dim() != 1 || self.bounds.lo[0] < 0.0 {
            return Err(Error::config("insulin bounds must be one-dimensional and nonnegative"));
        }
        if self.pump_quantum < 0.0 || !(self.init_glucose.0 > 0.0 && self.init_glucose.0 <= self.init_glucose.1) {
            return Err(Error::config("invalid pump quantum or initial glucose range"));
        }
        if self.window_steps == 0 {
            return Err(Error::config("window must have at least one tick"));
        }
        self.nominal.validate()
    }
}

/// Learning and evaluation settings for the virtual patients.
///
/// Defaults are the published harness constants: S = 1 on x₁, R = 300,
/// γ = 0.95, Δ(x)² = 90·xᵀx, exploration noise U[3·10⁻⁴, 6·10⁻⁴], B = 144
/// and C = 576. Learning replays one 12-hour window so that the iteration
/// sees the same data whenever the policy is unchanged.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnessSetup {
    pub glucose: GlucoseConfig,
    pub cost: CostSpec,
    pub delta_weight: f64,
    pub gamma_mode: GammaMode,
    pub noise: NoiseSpec,
    pub rank_policy: RankPolicy,
    pub robustness: Option<RobustnessConfig>,
    /// CGM noise used in evaluation trials.
    pub trial_cgm: CgmNoise,
}

impl Default for HarnessSetup {
    fn default() -> Self {
        Self {
            glucose: GlucoseConfig { window: LearningWindow::Replay, ..GlucoseConfig::default() },
            cost: CostSpec::harness(),
            delta_weight: 90.0,
            gamma_mode: GammaMode::Full,
            noise: NoiseSpec::default(),
            // r is constant, so r-features duplicate lower-order ones
            rank_policy: RankPolicy::MinimumNorm { rcond: 1e-12 },
            robustness: Some(RobustnessConfig::default()),
            trial_cgm: CgmNoise { amplitude: 4.0, ar: 0.7 },
        }
    }
}

impl HarnessSetup {
    pub fn objective(&self) -> Objective {
        Objective {
            cost: self.cost.clone(),
            uncertainty: UncertaintySpec::quadratic(self.delta_weight),
            gamma_mode: self.gamma_mode,
        }
    }

    pub fn learn_config(&self, seed: u64) -> LearnConfig {
        LearnConfig {
            buffer_size: self.glucose.window_steps,
            noise: self.noise,
            rank_policy: self.rank_policy,
            robustness: self.robustness.clone(),
            replay_noise: self.glucose.window == LearningWindow::Replay,
            seed,
            ..LearnConfig::default()
        }
    }

    /// Continuous trial under the evaluation variability profile.
    pub fn evaluation_config(&self) -> GlucoseConfig {
        GlucoseConfig {
            profile: VariabilityProfile::Evaluation,
            window: LearningWindow::Continuous,
            cgm: self.trial_cgm,
            ..self.glucose.clone()
        }
    }
}

/// One row of a closed-loop trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// Minutes since the trial start at the end of the tick.
    pub minute: f64,
    pub glucose: f64,
    pub cgm: f64,
    pub x1: f64,
    pub x2: f64,
    /// Insulin delivered this tick including basal, U.
    pub insulin: f64,
    /// Mean meal rate over the tick, g/min.
    pub meal_rate: f64,
    pub exercise: bool,
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut w: W) -> Result<()> {
    writeln!(w, "minute,glucose,cgm,x1,x2,insulin,meal_rate,exercise")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
            r.minute, r.glucose, r.cgm, r.x1, r.x2, r.insulin, r.meal_rate, r.exercise as u8
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
struct PlantCore {
    state: PatientState,
    minute: f64,
    days: Vec<DailyScenario>,
    history: VecDeque<f64>,
    sensor: CgmSensor,
    scenario_rng: Rng,
    cgm_rng: Rng,
    ticks_in_window: usize,
}

/// Closed-loop glucose plant seen through CGM observations x = [x₁, x₂] and
/// a constant reference r = target.
#[derive(Clone, Debug)]
pub struct GlucosePlant {
    pub params: PatientParams,
    pub cfg: GlucoseConfig,
    core: PlantCore,
    snapshot: PlantCore,
    trace: Option<Vec<TraceRow>>,
    infused: f64,
}

impl GlucosePlant {
    pub fn new(params: PatientParams, cfg: GlucoseConfig, seed: u64) -> Result<Self> {
        params.validate()?;
        cfg.validate()?;
        let mut init_rng = stream(seed, streams::INITIAL_STATE);
        let (lo, hi) = cfg.init_glucose;
        let g0 = if lo < hi { init_rng.gen_range(lo..=hi) } else { lo };
        let mut core = PlantCore {
            state: params.equilibrium(g0),
            minute: 0.0,
            days: Vec::new(),
            history: VecDeque::with_capacity(8),
            sensor: CgmSensor::new(cfg.cgm),
            scenario_rng: stream(seed, streams::SCENARIO),
            cgm_rng: stream(seed, streams::CGM_NOISE),
            ticks_in_window: 0,
        };
        let first = core.sensor.read(core.state.g, &mut core.cgm_rng);
        core.history.push_back(first);
        Ok(Self { params, cfg, snapshot: core.clone(), core, trace: None, infused: 0.0 })
    }

    pub fn record_trace(&mut self, on: bool) {
        self.trace = if on { Some(Vec::new()) } else { None };
    }

    pub fn take_trace(&mut self) -> Vec<TraceRow> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn state(&self) -> &PatientState {
        &self.core.state
    }

    pub fn minute(&self) -> f64 {
        self.core.minute
    }

    /// Total insulin delivered so far including basal, U.
    pub fn infused(&self) -> f64 {
        self.infused
    }

    pub fn observation(&self) -> ControllerObservation {
        let h: Vec<f64> = self.core.history.iter().copied().collect();
        observation(&h).expect("history is never empty")
    }

    fn ensure_day(&mut self, day: usize) {
        while self.core.days.len() <= day {
            let s = scenario_generate(&self.cfg.nominal, self.cfg.profile, &mut self.core.scenario_rng);
            self.core.days.push(s);
        }
    }

    /// Mean meal rate over [t, t + 1) and the exercise multiplier at t.
    fn inputs_at(&mut self, t: f64) -> (f64, Option<f64>) {
        let day = (t / DAY_MINUTES).floor() as usize;
        self.ensure_day(day);
        let mut meal = 0.0;
        let mut exercise = None;
        for d in day.saturating_sub(1)..=day {
            let offset = d as f64 * DAY_MINUTES;
            for m in &self.core.days[d].meals {
                let (a, b) = (offset + m.start, offset + m.start + m.duration);
                let overlap = (b.min(t + 1.0) - a.max(t)).max(0.0);
                meal += overlap * m.cho / m.duration;
            }
            for e in &self.core.days[d].exercise {
                let (a, b) = (offset + e.start, offset + e.start + e.duration);
                if t >= a && t < b {
                    let m = 1.0 + (e.intensity.multiplier() - 1.0) * self.params.exercise_sensitivity;
                    exercise = Some(exercise.map_or(m, |prev: f64| prev.max(m)));
                }
            }
        }
        (meal, exercise)
    }

    /// Deliver `dose` U (already clamped and quantized) over the next tick.
    fn tick(&mut self, dose: f64) -> Result<()> {
        let t0 = self.core.minute;
        let mut inputs = [Inputs::default(); TICK_MINUTES];
        let mut meal_total = 0.0;
        let mut exercising = false;
        for (k, u) in inputs.iter_mut().enumerate() {
            let (meal, ex) = self.inputs_at(t0 + k as f64);
            *u = Inputs { insulin: self.params.basal_rate + dose / TICK_MINUTES as f64, meal, exercise: ex };
            meal_total += meal;
            exercising |= ex.is_some();
        }
        self.core.state = patient_substeps(&self.params, &self.core.state, &inputs, t0)?;
        self.core.minute = t0 + TICK_MINUTES as f64;
        self.core.ticks_in_window += 1;
        let delivered = dose + self.params.basal_rate * TICK_MINUTES as f64;
        self.infused += delivered;
        let reading = self.core.sensor.read(self.core.state.g, &mut self.core.cgm_rng);
        if self.core.history.len() == 7 {
            self.core.history.pop_front();
        }
        self.core.history.push_back(reading);
        if let Some(trace) = self.trace.as_mut() {
            let h: Vec<f64> = self.core.history.iter().copied().collect();
            let obs = observation(&h)?;
            trace.push(TraceRow {
                minute: self.core.minute,
                glucose: self.core.state.g,
                cgm: reading,
                x1: obs.x1,
                x2: obs.x2,
                insulin: delivered,
                meal_rate: meal_total / TICK_MINUTES as f64,
                exercise: exercising,
            });
        }
        Ok(())
    }

    fn deliverable(&self, a: f64) -> f64 {
        let a = a.clamp(self.cfg.bounds.lo[0], self.cfg.bounds.hi[0]);
        if self.cfg.pump_quantum > 0.0 {
            (a / self.cfg.pump_quantum + 1e-9).floor() * self.cfg.pump_quantum
        } else {
            a
        }
    }

    /// Run `policy` in closed loop for `ticks` ticks.
    pub fn run(&mut self, policy: &dyn Policy, ticks: usize) -> Result<()> {
        for _ in 0..ticks {
            let (x, r) = self.observe();
            let a = policy.action(&x, &r);
            self.advance(&a)?;
        }
        Ok(())
    }
}

impl Plant for GlucosePlant {
    fn state_dim(&self) -> usize {
        2
    }
    fn reference_dim(&self) -> usize {
        1
    }
    fn action_dim(&self) -> usize {
        1
    }
    fn bounds(&self) -> &ActionBounds {
        &self.cfg.bounds
    }
    fn observe(&self) -> (SystemState, ReferenceState) {
        let o = self.observation();
        (SystemState(vec![o.x1, o.x2]), ReferenceState(vec![self.cfg.target]))
    }
    fn advance(&mut self, a: &ActionVector) -> Result<ActionVector> {
        let dose = self.deliverable(a[0]);
        self.tick(dose)?;
        Ok(ActionVector(vec![dose]))
    }
    fn episode_done(&self) -> bool {
        self.cfg.window == LearningWindow::Replay && self.core.ticks_in_window >= self.cfg.window_steps
    }
    fn reset(&mut self) {
        match self.cfg.window {
            LearningWindow::Replay => self.core = self.snapshot.clone(),
            LearningWindow::Continuous => self.core.ticks_in_window = 0,
        }
    }
    fn domain(&self) -> DomainBox {
        DomainBox { x_lo: vec![CGM_MIN, -5.0], x_hi: vec![CGM_MAX, 5.0], r_lo: vec![self.cfg.target], r_hi: vec![self.cfg.target] }
    }
}
