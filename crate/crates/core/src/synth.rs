//! Synthetic choice-data generators for the three Monte Carlo experiments,
//! plus truncated multivariate-normal sampling and the error-rate
//! diagnostic.
//!
//! All generation is driven by one seedable generator with an independent
//! sub-stream per person, so panels are bit-identical for a given
//! (scenario, seed) and generation could be partitioned across workers
//! without changing the output.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, LogNormal, Normal};

use crate::data::{AlternativeRow, ChoicePanel, Observation, PersonRecord};
use crate::error::{Error, Result};

/// Which univariate distribution drives the travel-time coefficient in the
/// first experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Normal,
    Lognormal,
    MixtureOfNormals,
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(ExperimentKind::Normal),
            "lognormal" => Ok(ExperimentKind::Lognormal),
            "mixture" => Ok(ExperimentKind::MixtureOfNormals),
            other => Err(Error::Config(format!(
                "unknown experiment-1 kind '{other}' (normal|lognormal|mixture)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    One(ExperimentKind),
    Two,
    Three,
}

/// Generator configuration. `utility_scale` multiplies the deterministic
/// utility (1.0 reproduces the calibrated design; 0.0 makes choices pure
/// noise) and `noiseless` drops the Gumbel term entirely; both exist for
/// diagnostics only.
#[derive(Debug, Clone)]
pub struct SyntheticScenario {
    pub experiment: Experiment,
    pub n_persons: usize,
    pub t_choices: usize,
    pub seed: u64,
    pub utility_scale: f64,
    pub noiseless: bool,
}

impl SyntheticScenario {
    pub fn new(experiment: Experiment, n_persons: usize, t_choices: usize, seed: u64) -> Self {
        SyntheticScenario {
            experiment,
            n_persons,
            t_choices,
            seed,
            utility_scale: 1.0,
            noiseless: false,
        }
    }
}

/// Ground truth retained alongside a generated panel.
#[derive(Debug, Clone)]
pub struct TruthRecord {
    /// Attribute labels matching the per-person coefficient vectors.
    pub attribute_names: Vec<String>,
    /// Per-person coefficient vector over those attributes.
    pub betas: Vec<Vec<f64>>,
    /// Mixture component each person was drawn from (0 when the
    /// coefficient distribution has a single component).
    pub component: Vec<usize>,
    /// Row index of the noiseless utility argmax, per person and
    /// observation.
    pub noiseless_choice: Vec<Vec<usize>>,
    /// Stored noise draws, per person / observation / alternative row.
    pub gumbel: Vec<Vec<Vec<f64>>>,
    /// Deterministic utilities, per person / observation / alternative row.
    pub utilities: Vec<Vec<Vec<f64>>>,
}

fn person_rng(seed: u64, person: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(person as u64 + 1);
    rng
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

struct PersonDraws {
    beta: Vec<f64>,
    component: usize,
}

/// Assembles one person's observations given a closure that draws the
/// per-observation attribute rows.
#[allow(clippy::too_many_arguments)]
fn build_person(
    scenario: &SyntheticScenario,
    person: usize,
    rng: &mut ChaCha8Rng,
    draws: &PersonDraws,
    alternative_ids: &[&str],
    mut attributes_for: impl FnMut(&mut ChaCha8Rng) -> Vec<Vec<f64>>,
    truth: &mut TruthRecord,
) -> PersonRecord {
    let gumbel = Gumbel::new(0.0, 1.0).expect("valid gumbel");
    let mut observations = Vec::with_capacity(scenario.t_choices);
    let mut noiseless_per_obs = Vec::with_capacity(scenario.t_choices);
    let mut gumbel_per_obs = Vec::with_capacity(scenario.t_choices);
    let mut utils_per_obs = Vec::with_capacity(scenario.t_choices);

    for t in 0..scenario.t_choices {
        let rows_attrs = attributes_for(rng);
        let utilities: Vec<f64> = rows_attrs
            .iter()
            .map(|x| x.iter().zip(&draws.beta).map(|(xi, bi)| xi * bi).sum())
            .collect();
        let noise: Vec<f64> = (0..rows_attrs.len())
            .map(|_| gumbel.sample(rng))
            .collect();
        let noiseless = argmax(&utilities);
        let chosen = if scenario.noiseless {
            noiseless
        } else {
            let realized: Vec<f64> = utilities
                .iter()
                .zip(&noise)
                .map(|(v, e)| scenario.utility_scale * v + e)
                .collect();
            argmax(&realized)
        };

        observations.push(Observation {
            obs_id: (t + 1).to_string(),
            rows: rows_attrs
                .into_iter()
                .enumerate()
                .map(|(j, attributes)| AlternativeRow {
                    alternative_id: alternative_ids[j].to_string(),
                    available: true,
                    chosen: j == chosen,
                    attributes,
                })
                .collect(),
        });
        noiseless_per_obs.push(noiseless);
        gumbel_per_obs.push(noise);
        utils_per_obs.push(utilities);
    }

    truth.betas.push(draws.beta.clone());
    truth.component.push(draws.component);
    truth.noiseless_choice.push(noiseless_per_obs);
    truth.gumbel.push(gumbel_per_obs);
    truth.utilities.push(utils_per_obs);

    PersonRecord {
        person_id: (person + 1).to_string(),
        observations,
    }
}

const EXP1_ATTRS: [&str; 5] = ["asc_bike", "asc_car", "asc_transit", "tt_min", "cost"];
const EXP2_ATTRS: [&str; 6] = [
    "asc_bike",
    "asc_car",
    "asc_transit",
    "ivtt_hr",
    "ovtt_hr",
    "cost",
];
const EXP3_ATTRS: [&str; 5] = ["price", "op_cost", "hybrid", "electric", "premium"];
const MODES: [&str; 4] = ["walk", "bike", "car", "transit"];

fn draw_time_coefficient(kind: ExperimentKind, rng: &mut ChaCha8Rng) -> (f64, usize) {
    match kind {
        ExperimentKind::Normal => {
            let d = Normal::new(-0.9, 0.3).unwrap();
            (d.sample(rng), 0)
        }
        ExperimentKind::Lognormal => {
            let d = LogNormal::new(-0.5, 0.03f64.sqrt()).unwrap();
            (-d.sample(rng), 0)
        }
        ExperimentKind::MixtureOfNormals => {
            if rng.random::<f64>() < 0.7 {
                (Normal::new(-0.45, 0.02f64.sqrt()).unwrap().sample(rng), 0)
            } else {
                (Normal::new(-1.50, 0.3).unwrap().sample(rng), 1)
            }
        }
    }
}

fn generate_experiment1(scenario: &SyntheticScenario, kind: ExperimentKind) -> (ChoicePanel, TruthRecord) {
    let attrs: Vec<String> = EXP1_ATTRS.iter().map(|s| s.to_string()).collect();
    let mut truth = TruthRecord {
        attribute_names: attrs.clone(),
        betas: Vec::new(),
        component: Vec::new(),
        noiseless_choice: Vec::new(),
        gumbel: Vec::new(),
        utilities: Vec::new(),
    };
    let mut persons = Vec::with_capacity(scenario.n_persons);
    for p in 0..scenario.n_persons {
        let mut rng = person_rng(scenario.seed, p);
        let (beta_tt, component) = draw_time_coefficient(kind, &mut rng);
        // Coefficients over (asc_bike, asc_car, asc_transit, tt_min, cost);
        // constants (walk base): bike -3.50, car 2.50, transit 0.50.
        let draws = PersonDraws {
            beta: vec![-3.50, 2.50, 0.50, beta_tt, -1.80],
            component,
        };
        let record = build_person(
            scenario,
            p,
            &mut rng,
            &draws,
            &MODES,
            |rng| {
                let tt_car = rng.random_range(10.0..60.0);
                let tt_walk = rng.random_range(1.5 * tt_car..2.5 * tt_car);
                let tt_bike = rng.random_range(tt_car..1.5 * tt_car);
                let tt_transit = rng.random_range(tt_car..2.5 * tt_car);
                let cost_car = rng.random_range(0.0..20.0);
                let cost_transit = rng.random_range(0.0..4.0);
                vec![
                    vec![0.0, 0.0, 0.0, tt_walk, 0.0],
                    vec![1.0, 0.0, 0.0, tt_bike, 0.0],
                    vec![0.0, 1.0, 0.0, tt_car, cost_car],
                    vec![0.0, 0.0, 1.0, tt_transit, cost_transit],
                ]
            },
            &mut truth,
        );
        persons.push(record);
    }
    let panel = ChoicePanel::new(
        persons,
        attrs,
        MODES.iter().map(|s| s.to_string()).collect(),
    )
    .expect("generated panel is valid");
    (panel, truth)
}

fn generate_experiment2(scenario: &SyntheticScenario) -> (ChoicePanel, TruthRecord) {
    let attrs: Vec<String> = EXP2_ATTRS.iter().map(|s| s.to_string()).collect();
    let mut truth = TruthRecord {
        attribute_names: attrs.clone(),
        betas: Vec::new(),
        component: Vec::new(),
        noiseless_choice: Vec::new(),
        gumbel: Vec::new(),
        utilities: Vec::new(),
    };
    // Bivariate normal for (ivtt, ovtt) sensitivities in utils/hour:
    // means (-18, -54), covariance [[16.2, 6.48], [6.48, 32.4]].
    let (s1, c12) = (16.2f64.sqrt(), 6.48);
    let l21 = c12 / s1;
    let l22 = (32.4 - l21 * l21).sqrt();
    let std_normal = Normal::new(0.0, 1.0).unwrap();

    let mut persons = Vec::with_capacity(scenario.n_persons);
    for p in 0..scenario.n_persons {
        let mut rng = person_rng(scenario.seed, p);
        let z1 = std_normal.sample(&mut rng);
        let z2 = std_normal.sample(&mut rng);
        let beta_ivtt = -18.0 + s1 * z1;
        let beta_ovtt = -54.0 + l21 * z1 + l22 * z2;
        // Constants (walk base): bike -3.50, car -1.50, transit -2.00.
        let draws = PersonDraws {
            beta: vec![-3.50, -1.50, -2.00, beta_ivtt, beta_ovtt, -1.80],
            component: 0,
        };
        let record = build_person(
            scenario,
            p,
            &mut rng,
            &draws,
            &MODES,
            |rng| {
                let ivtt_car = rng.random_range(10.0..50.0);
                let ovtt_car = rng.random_range(0.0..10.0);
                let v_car = LogNormal::new(2.05, 0.63).unwrap().sample(rng);
                let s_car = v_car * ivtt_car / 60.0;
                let cost_car = rng.random_range(0.0..5.0) + 0.6 * s_car;
                let v_walk = LogNormal::new(0.28, 0.43).unwrap().sample(rng);
                let ovtt_walk = 60.0 * s_car / v_walk;
                let v_bike = LogNormal::new(1.38, 0.38).unwrap().sample(rng);
                let ovtt_bike = 60.0 * s_car / v_bike;
                let ivtt_transit = rng.random_range(0.8 * ivtt_car..1.5 * ivtt_car);
                let ovtt_transit = rng.random_range(0.0..15.0) + rng.random_range(0.0..15.0);
                let cost_transit = rng.random_range(0.0..4.0);
                // Attributes are stored in hours to match the utils/hour
                // coefficient scale.
                vec![
                    vec![0.0, 0.0, 0.0, 0.0, ovtt_walk / 60.0, 0.0],
                    vec![1.0, 0.0, 0.0, 0.0, ovtt_bike / 60.0, 0.0],
                    vec![0.0, 1.0, 0.0, ivtt_car / 60.0, ovtt_car / 60.0, cost_car],
                    vec![
                        0.0,
                        0.0,
                        1.0,
                        ivtt_transit / 60.0,
                        ovtt_transit / 60.0,
                        cost_transit,
                    ],
                ]
            },
            &mut truth,
        );
        persons.push(record);
    }
    let panel = ChoicePanel::new(
        persons,
        attrs,
        MODES.iter().map(|s| s.to_string()).collect(),
    )
    .expect("generated panel is valid");
    (panel, truth)
}

/// A multivariate normal restricted to a box, sampled by rejection.
#[derive(Debug, Clone)]
pub struct TruncatedMvn {
    pub mean: Vec<f64>,
    pub covariance: DMatrix<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl TruncatedMvn {
    pub fn new(
        mean: Vec<f64>,
        covariance: DMatrix<f64>,
        lower: Vec<f64>,
        upper: Vec<f64>,
    ) -> Result<Self> {
        let k = mean.len();
        if covariance.nrows() != k || covariance.ncols() != k || lower.len() != k || upper.len() != k
        {
            return Err(Error::Simulation(
                "truncated normal dimensions are inconsistent".into(),
            ));
        }
        if lower.iter().zip(&upper).any(|(l, u)| l >= u) {
            return Err(Error::Simulation("empty truncation box".into()));
        }
        Ok(TruncatedMvn {
            mean,
            covariance,
            lower,
            upper,
        })
    }

    fn cholesky(&self) -> Result<Cholesky<f64, nalgebra::Dyn>> {
        Cholesky::new(self.covariance.clone())
            .ok_or_else(|| Error::Simulation("covariance is not positive definite".into()))
    }

    fn in_box(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .all(|((v, l), u)| v >= l && v <= u)
    }
}

/// Minimum attempts before the rejection sampler may give up on a spec
/// with a vanishing acceptance rate.
const REJECTION_PROBE: usize = 100_000;
const MIN_ACCEPT_RATE: f64 = 1e-4;

fn sample_truncated_with_rng(
    spec: &TruncatedMvn,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<f64>>> {
    let chol = spec.cholesky()?;
    let l = chol.l();
    let k = spec.mean.len();
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let mut out = Vec::with_capacity(count);
    let mut attempts: usize = 0;
    while out.len() < count {
        attempts += 1;
        let z = DVector::from_fn(k, |_, _| std_normal.sample(rng));
        let x = &l * z;
        let draw: Vec<f64> = (0..k).map(|i| spec.mean[i] + x[i]).collect();
        if spec.in_box(&draw) {
            out.push(draw);
        } else if attempts >= REJECTION_PROBE
            && (out.len() as f64) < MIN_ACCEPT_RATE * attempts as f64
        {
            return Err(Error::Simulation(format!(
                "rejection acceptance rate below {MIN_ACCEPT_RATE} after {attempts} attempts; \
                 review the truncation box"
            )));
        }
    }
    Ok(out)
}

/// Draws `count` samples from the normal conditioned on its box.
pub fn sample_truncated_mvn(spec: &TruncatedMvn, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_truncated_with_rng(spec, count, &mut rng)
}

/// Mixture of truncated multivariate normals, sampled component-first.
#[derive(Debug, Clone)]
pub struct TruncatedMvnMixture {
    pub weights: Vec<f64>,
    pub components: Vec<TruncatedMvn>,
}

impl TruncatedMvnMixture {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, usize)> {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        let mut component = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            cum += w;
            if u < cum {
                component = i;
                break;
            }
        }
        let draw = sample_truncated_with_rng(&self.components[component], 1, rng)?
            .pop()
            .unwrap();
        Ok((draw, component))
    }
}

/// The five-dimensional three-component mixture driving the third
/// experiment's taste coefficients: weights (0.3, 0.4, 0.3), purchase
/// price and operating cost truncated to the negative half-line.
pub fn experiment3_mixture() -> TruncatedMvnMixture {
    let correlation = DMatrix::from_row_slice(
        5,
        5,
        &[
            1.0, 0.5, 0.3, 0.3, -0.5, //
            0.5, 1.0, 0.6, 0.6, -0.2, //
            0.3, 0.6, 1.0, 0.3, -0.4, //
            0.3, 0.6, 0.3, 1.0, 0.0, //
            -0.5, -0.2, -0.4, 0.0, 1.0,
        ],
    );
    let means = [
        vec![0.00, -0.14, -0.87, -1.30, 1.60],
        vec![-0.94, -1.01, 1.30, 0.07, -1.81],
        vec![-1.81, -1.74, 0.14, 1.45, 0.22],
    ];
    let scales = [
        vec![0.20, 0.25, 0.23, 0.35, 0.25],
        vec![0.15, 0.10, 0.25, 0.35, 0.30],
        vec![0.40, 0.30, 0.20, 0.30, 0.40],
    ];
    let lower = vec![
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
        f64::NEG_INFINITY,
    ];
    let upper = vec![0.0, 0.0, f64::INFINITY, f64::INFINITY, f64::INFINITY];
    let components = means
        .iter()
        .zip(&scales)
        .map(|(mean, scale)| {
            let d = DMatrix::from_diagonal(&DVector::from_row_slice(scale));
            let covariance = &d * &correlation * &d;
            TruncatedMvn::new(mean.clone(), covariance, lower.clone(), upper.clone()).unwrap()
        })
        .collect();
    TruncatedMvnMixture {
        weights: vec![0.3, 0.4, 0.3],
        components,
    }
}

fn generate_experiment3(scenario: &SyntheticScenario) -> Result<(ChoicePanel, TruthRecord)> {
    let attrs: Vec<String> = EXP3_ATTRS.iter().map(|s| s.to_string()).collect();
    let mixture = experiment3_mixture();
    let mut truth = TruthRecord {
        attribute_names: attrs.clone(),
        betas: Vec::new(),
        component: Vec::new(),
        noiseless_choice: Vec::new(),
        gumbel: Vec::new(),
        utilities: Vec::new(),
    };
    let alternative_ids = ["1", "2", "3"];
    let mut persons = Vec::with_capacity(scenario.n_persons);
    for p in 0..scenario.n_persons {
        let mut rng = person_rng(scenario.seed, p);
        let (beta, component) = mixture.sample(&mut rng)?;
        let draws = PersonDraws { beta, component };
        let record = build_person(
            scenario,
            p,
            &mut rng,
            &draws,
            &alternative_ids,
            |rng| {
                (0..3)
                    .map(|_| {
                        let price = rng.random_range(1.5..8.0);
                        let op_cost = rng.random_range(0.5..4.0);
                        let powertrain = rng.random_range(0..3u8);
                        let hybrid = if powertrain == 1 { 1.0 } else { 0.0 };
                        let electric = if powertrain == 2 { 1.0 } else { 0.0 };
                        let premium = if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 };
                        vec![price, op_cost, hybrid, electric, premium]
                    })
                    .collect()
            },
            &mut truth,
        );
        persons.push(record);
    }
    let panel = ChoicePanel::new(
        persons,
        attrs,
        alternative_ids.iter().map(|s| s.to_string()).collect(),
    )
    .expect("generated panel is valid");
    Ok((panel, truth))
}

/// Generates a panel and its ground truth for any scenario.
pub fn generate(scenario: &SyntheticScenario) -> Result<(ChoicePanel, TruthRecord)> {
    if scenario.n_persons == 0 || scenario.t_choices == 0 {
        return Err(Error::Simulation(
            "scenario needs at least one person and one observation".into(),
        ));
    }
    match scenario.experiment {
        Experiment::One(kind) => Ok(generate_experiment1(scenario, kind)),
        Experiment::Two => Ok(generate_experiment2(scenario)),
        Experiment::Three => generate_experiment3(scenario),
    }
}

/// Travel-mode panel with a univariate random travel-time coefficient.
pub fn gen_experiment1(
    kind: ExperimentKind,
    n: usize,
    t: usize,
    seed: u64,
) -> (ChoicePanel, TruthRecord) {
    generate(&SyntheticScenario::new(Experiment::One(kind), n, t, seed)).expect("valid scenario")
}

/// Travel-mode panel with bivariate normal (in-, out-of-vehicle) time
/// coefficients.
pub fn gen_experiment2(n: usize, t: usize, seed: u64) -> (ChoicePanel, TruthRecord) {
    generate(&SyntheticScenario::new(Experiment::Two, n, t, seed)).expect("valid scenario")
}

/// Stated-choice vehicle panel with a trimodal truncated-normal mixture
/// over five taste coefficients.
pub fn gen_experiment3(n: usize, t: usize, seed: u64) -> Result<(ChoicePanel, TruthRecord)> {
    generate(&SyntheticScenario::new(Experiment::Three, n, t, seed))
}

/// Fraction of observations whose realized choice differs from the
/// noiseless utility argmax.
pub fn error_rate(panel: &ChoicePanel, truth: &TruthRecord) -> f64 {
    let mut total = 0usize;
    let mut flipped = 0usize;
    for (p, person) in panel.persons.iter().enumerate() {
        for (t, obs) in person.observations.iter().enumerate() {
            total += 1;
            let chosen = obs.chosen_index().expect("validated panel");
            if chosen != truth.noiseless_choice[p][t] {
                flipped += 1;
            }
        }
    }
    flipped as f64 / total.max(1) as f64
}
