//! Finite-difference and Monte-Carlo checks of every differentiable piece.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adversarial::{
    discriminator_loss, generator_distribution, generator_surrogate, reinforce_surrogate, reward, sample_negatives,
    DiscriminatorExample, GeneratorExample, Sampling,
};
use crate::error::Result;
use crate::model::{MatchingModel, ModelConfig, ParamObjective, Pass, ScoreMode};
use crate::numerics::{gradcheck, GradcheckReport, Objective, OpKind, Tape, TapeFn, Tensor, Var, BN_EPS, DEFAULT_STEP};

/// Largest acceptable relative error for a check in [`run_suite`].
pub const SUITE_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub passed: bool,
}

impl CheckResult {
    fn new(name: impl Into<String>, report: GradcheckReport, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            max_rel_error: report.max_rel_error,
            coordinates: report.coordinates,
            passed: report.max_rel_error <= tolerance,
        }
    }
}

fn uniform(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Cuts a flat input into consecutive operands of the given shapes.
fn operands(tape: &mut Tape<'_, f64>, x: Var, shapes: &[&[usize]]) -> Result<Vec<Var>> {
    let mut offset = 0;
    shapes
        .iter()
        .map(|s| {
            let len: usize = s.iter().product();
            let part = tape.slice(x, 0, offset, len)?;
            offset += len;
            tape.reshape(part, s)
        })
        .collect()
}

/// Reduces `y` to a scalar with fixed pseudo-random weights.
fn project(tape: &mut Tape<'_, f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = uniform(tape.value(y).numel(), -1.0, 1.0, &mut rng);
    let w = tape.input(Tensor::new(tape.shape(y).to_vec(), w)?);
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

type Build = fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>;

struct PrimitiveCase {
    name: &'static str,
    shapes: &'static [&'static [usize]],
    range: (f64, f64),
    build: Build,
}

const CASES: &[PrimitiveCase] = &[
    PrimitiveCase {
        name: "gather",
        shapes: &[&[5, 3]],
        range: (-1.0, 1.0),
        build: |t, v| t.gather(v[0], &[0, 3, 3, 1, 4]),
    },
    PrimitiveCase {
        name: "matmul",
        shapes: &[&[3, 4], &[4, 2]],
        range: (-1.0, 1.0),
        build: |t, v| t.matmul(v[0], v[1]),
    },
    PrimitiveCase {
        name: "conv1d",
        shapes: &[&[2, 5], &[3, 2, 3], &[3]],
        range: (-1.0, 1.0),
        build: |t, v| t.conv1d(v[0], v[1], v[2]),
    },
    PrimitiveCase {
        name: "batchnorm",
        shapes: &[&[3, 6], &[3], &[3]],
        range: (-1.0, 1.0),
        build: |t, v| Ok(t.batchnorm_train(v[0], v[1], v[2], BN_EPS)?.0),
    },
    PrimitiveCase {
        name: "batchnorm_eval",
        shapes: &[&[3, 6], &[3], &[3]],
        range: (-1.0, 1.0),
        build: |t, v| t.batchnorm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.0, 2.0], BN_EPS),
    },
    PrimitiveCase {
        name: "relu",
        shapes: &[&[4, 5]],
        range: (-1.0, 1.0),
        build: |t, v| t.relu(v[0]),
    },
    PrimitiveCase {
        name: "sigmoid",
        shapes: &[&[3, 4]],
        range: (-3.0, 3.0),
        build: |t, v| t.sigmoid(v[0]),
    },
    PrimitiveCase {
        name: "softmax",
        shapes: &[&[3, 4]],
        range: (-2.0, 2.0),
        build: |t, v| t.softmax(v[0], 1),
    },
    PrimitiveCase {
        name: "log_softmax",
        shapes: &[&[3, 4]],
        range: (-2.0, 2.0),
        build: |t, v| t.log_softmax(v[0], 0),
    },
    PrimitiveCase {
        name: "maxpool1d",
        shapes: &[&[3, 7]],
        range: (-1.0, 1.0),
        build: |t, v| t.maxpool1d(v[0]),
    },
    PrimitiveCase {
        name: "reduce_mean",
        shapes: &[&[2, 3, 4]],
        range: (-1.0, 1.0),
        build: |t, v| t.reduce_mean(v[0], 1),
    },
    PrimitiveCase {
        name: "reduce_max",
        shapes: &[&[2, 3, 4]],
        range: (-1.0, 1.0),
        build: |t, v| t.reduce_max(v[0], 2),
    },
    PrimitiveCase {
        name: "concat",
        shapes: &[&[2, 3], &[2, 2]],
        range: (-1.0, 1.0),
        build: |t, v| t.concat(&[v[0], v[1]], 1),
    },
    PrimitiveCase {
        name: "slice",
        shapes: &[&[4, 5]],
        range: (-1.0, 1.0),
        build: |t, v| t.slice(v[0], 1, 1, 3),
    },
    PrimitiveCase {
        name: "reshape",
        shapes: &[&[2, 6]],
        range: (-1.0, 1.0),
        build: |t, v| t.reshape(v[0], &[3, 4]),
    },
    PrimitiveCase {
        name: "dropout",
        shapes: &[&[3, 4]],
        range: (-1.0, 1.0),
        build: |t, v| t.apply_mask(v[0], (0..12).map(|i| if i % 3 == 1 { 0.0 } else { 1.25 }).collect()),
    },
    PrimitiveCase {
        name: "add_bias",
        shapes: &[&[3, 4], &[3]],
        range: (-1.0, 1.0),
        build: |t, v| t.add_bias(v[0], v[1]),
    },
    PrimitiveCase {
        name: "outer_add",
        shapes: &[&[2, 3], &[2, 4]],
        range: (-1.0, 1.0),
        build: |t, v| t.outer_add(v[0], v[1]),
    },
    PrimitiveCase {
        name: "add",
        shapes: &[&[3, 3], &[3, 3]],
        range: (-1.0, 1.0),
        build: |t, v| t.add(v[0], v[1]),
    },
    PrimitiveCase {
        name: "mul",
        shapes: &[&[3, 3], &[3, 3]],
        range: (-1.0, 1.0),
        build: |t, v| t.mul(v[0], v[1]),
    },
    PrimitiveCase {
        name: "scale",
        shapes: &[&[5]],
        range: (-1.0, 1.0),
        build: |t, v| t.scale(v[0], -1.7),
    },
    PrimitiveCase {
        name: "sum",
        shapes: &[&[2, 3]],
        range: (-1.0, 1.0),
        build: |t, v| t.sum(v[0]),
    },
    PrimitiveCase {
        name: "pick",
        shapes: &[&[6]],
        range: (-1.0, 1.0),
        build: |t, v| t.pick(v[0], &[4, 0, 4, 2]),
    },
    PrimitiveCase {
        name: "ln_clamped",
        shapes: &[&[6]],
        range: (0.2, 2.0),
        build: |t, v| t.ln_clamped(v[0], 1e-12),
    },
];

/// Names of the primitives covered by [`primitive_checks`].
pub fn primitive_names() -> Vec<&'static str> {
    CASES.iter().map(|c| c.name).collect()
}

/// Gradient check of every tape primitive on a random point.
///
/// `fault` is forwarded to [`Tape::inject_fault`] so callers can confirm that a
/// corrupted backward rule is caught.
pub fn primitive_checks(seed: u64, fault: Option<OpKind>) -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CASES
        .iter()
        .enumerate()
        .map(|(i, case)| {
            let n: usize = case.shapes.iter().map(|s| s.iter().product::<usize>()).sum();
            let point = uniform(n, case.range.0, case.range.1, &mut rng);
            let proj_seed = seed.wrapping_add(1000 + i as u64);
            let mut f = TapeFn::new(&[n], |tape: &mut Tape<'_, f64>, x| {
                tape.inject_fault(fault);
                let parts = operands(tape, x, case.shapes)?;
                let y = (case.build)(tape, &parts)?;
                project(tape, y, proj_seed)
            });
            let report = gradcheck(&mut f, &point, DEFAULT_STEP)?;
            Ok(CheckResult::new(case.name, report, SUITE_TOLERANCE))
        })
        .collect()
}

/// The small model used by the model-level checks: d=8, K=1, hidden 8, all scale pairs.
pub fn check_model(seed: u64) -> Result<MatchingModel<f64>> {
    let config = ModelConfig {
        vocab_size: 12,
        embed_dim: 8,
        levels: 1,
        channels: 8,
        compare_hidden: 8,
        match_dim: 8,
        aggregate_hidden: 8,
        mode: ScoreMode::Full,
        dropout: 0.2,
    };
    MatchingModel::new(config, seed)
}

const QUESTION: &[u32] = &[1, 4, 2, 7, 3];
const ANSWERS: &[&[u32]] = &[&[5, 6, 8, 2, 9, 10, 11], &[3, 3, 9], &[11, 1, 6, 4], &[2, 8]];
const POOL_REWARDS: [f64; 4] = [-0.4, -1.3, -0.1, -0.8];

/// Value from one objective, gradient from another.
struct Paired<A, B> {
    value: A,
    gradient: B,
}

impl<A: Objective<f64>, B: Objective<f64>> Objective<f64> for Paired<A, B> {
    fn value(&mut self, x: &[f64]) -> Result<f64> {
        self.value.value(x)
    }

    fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        self.gradient.gradient(x)
    }
}

/// Gradient checks of the scorer, the discriminator loss and the generator surrogate.
///
/// Train-mode checks reseed dropout on every evaluation, so each check sees a fixed mask.
pub fn model_checks(seed: u64, fault: Option<OpKind>) -> Result<Vec<CheckResult>> {
    let model = check_model(seed)?;
    let mut out = Vec::new();

    for (name, train) in [("score (eval)", false), ("score (train)", true)] {
        let mut f = ParamObjective::new(model.clone(), move |m, tape| {
            tape.inject_fault(fault);
            let mut drop = ChaCha8Rng::seed_from_u64(seed);
            let mut pass = if train { Pass::Train(&mut drop) } else { Pass::Eval };
            let mut sentences = vec![QUESTION];
            sentences.extend_from_slice(&ANSWERS[..2]);
            let (s, _) = m.score_batch(tape, &sentences, &[(0, 1), (0, 2)], &mut pass)?;
            let a = tape.scale(s[1], 0.5)?;
            tape.add(s[0], a)
        });
        let x = f.point();
        out.push(CheckResult::new(name, gradcheck(&mut f, &x, DEFAULT_STEP)?, SUITE_TOLERANCE));
    }

    let mut f = ParamObjective::new(model.clone(), move |m, tape| {
        tape.inject_fault(fault);
        let mut drop = ChaCha8Rng::seed_from_u64(seed);
        let batch = [DiscriminatorExample {
            question: QUESTION,
            positives: vec![ANSWERS[0]],
            negatives: vec![ANSWERS[1], ANSWERS[2]],
        }];
        Ok(discriminator_loss(tape, m, &batch, 1e-3, &mut Pass::Train(&mut drop))?.0)
    });
    let x = f.point();
    out.push(CheckResult::new(
        "discriminator loss",
        gradcheck(&mut f, &x, DEFAULT_STEP)?,
        SUITE_TOLERANCE,
    ));

    let mut f = ParamObjective::new(model.clone(), move |m, tape| {
        tape.inject_fault(fault);
        let mut drop = ChaCha8Rng::seed_from_u64(seed);
        let example = GeneratorExample {
            question: QUESTION,
            pool: ANSWERS.to_vec(),
            sampled: vec![2, 0],
            rewards: vec![POOL_REWARDS[2], POOL_REWARDS[0]],
        };
        Ok(generator_surrogate(tape, m, &example, -0.6, 1e-3, &mut Pass::Train(&mut drop))?.0)
    });
    let x = f.point();
    out.push(CheckResult::new(
        "generator surrogate",
        gradcheck(&mut f, &x, DEFAULT_STEP)?,
        SUITE_TOLERANCE,
    ));

    // The surrogate over all actions weighted by p_G must differentiate E_p[r].
    let expected = ParamObjective::new(model.clone(), move |m, tape| {
        tape.inject_fault(fault);
        let scores = pool_score_node(m, tape)?;
        let p = tape.softmax(scores, 0)?;
        let r = tape.input(Tensor::vector(POOL_REWARDS.to_vec()));
        let pr = tape.mul(p, r)?;
        tape.sum(pr)
    });
    let enumerated = ParamObjective::new(model, move |m, tape| {
        tape.inject_fault(fault);
        let scores = pool_score_node(m, tape)?;
        let p = generator_distribution(tape.value(scores).data())?;
        let n = p.len() as f64;
        let adv: Vec<f64> = p.iter().zip(POOL_REWARDS).map(|(p, r)| n * p * (r + 0.6)).collect();
        reinforce_surrogate(tape, scores, &[0, 1, 2, 3], &adv)
    });
    let x = expected.point();
    let mut f = Paired {
        value: expected,
        gradient: enumerated,
    };
    out.push(CheckResult::new(
        "generator surrogate (enumerated)",
        gradcheck(&mut f, &x, DEFAULT_STEP)?,
        SUITE_TOLERANCE,
    ));
    Ok(out)
}

fn pool_score_node<'p>(m: &'p MatchingModel<f64>, tape: &mut Tape<'p, f64>) -> Result<Var> {
    let mut sentences = vec![QUESTION];
    sentences.extend_from_slice(ANSWERS);
    let pairs: Vec<(usize, usize)> = (1..sentences.len()).map(|i| (0, i)).collect();
    let (s, _) = m.score_batch(tape, &sentences, &pairs, &mut Pass::Eval)?;
    tape.concat(&s, 0)
}

/// Every primitive check followed by the model-level checks.
pub fn run_suite(seed: u64, fault: Option<OpKind>) -> Result<Vec<CheckResult>> {
    let mut all = primitive_checks(seed, fault)?;
    all.extend(model_checks(seed, fault)?);
    Ok(all)
}

/// Monte-Carlo check of the score-function estimator on a linear softmax policy.
#[derive(Debug, Clone, Serialize)]
pub struct ReinforceCheck {
    /// `Σ_i p_i ∇log p_i · r_i` from the surrogate over all actions.
    pub exact: Vec<f64>,
    /// Mean of single-draw surrogate gradients.
    pub estimate: Vec<f64>,
    pub std_error: Vec<f64>,
    /// Largest `|estimate − exact| / std_error` over components.
    pub max_z: f64,
    /// Largest change of the enumerated gradient when every reward is shifted.
    pub shift_error: f64,
    pub draws: usize,
}

/// Features `[3 × 10]` of the toy policy `p = softmax(φθ)`.
pub fn toy_features() -> Tensor<f64> {
    let rows: Vec<Vec<f64>> = (0..3)
        .map(|i| (0..10).map(|k| ((i * 10 + k) as f64 * 0.61 + 0.2).sin()).collect())
        .collect();
    Tensor::matrix(&rows)
}

pub fn toy_theta() -> Vec<f64> {
    (0..10).map(|k| 0.25 * ((k as f64) * 0.9).cos()).collect()
}

/// Rewards `ln(1 − D)` for fixed discriminator scores of the three actions.
pub fn toy_rewards() -> Vec<f64> {
    [1.2, -0.3, 0.5].into_iter().map(reward).collect()
}

/// Gradient wrt θ of the surrogate for `sampled` actions with the given advantages.
pub fn toy_surrogate_gradient(theta: &[f64], sampled: &[usize], advantages: &[f64]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let phi = tape.input(toy_features());
    let th = tape.input(Tensor::new(vec![theta.len(), 1], theta.to_vec())?);
    let s = tape.matmul(phi, th)?;
    let s = tape.reshape(s, &[3])?;
    let loss = reinforce_surrogate(&mut tape, s, sampled, advantages)?;
    Ok(tape.backward(loss)?.wrt(th).map(<[f64]>::to_vec).unwrap_or_default())
}

pub fn toy_policy(theta: &[f64]) -> Result<Vec<f64>> {
    let phi = toy_features();
    let s: Vec<f64> = (0..3).map(|i| (0..theta.len()).map(|k| phi.at(&[i, k]) * theta[k]).sum()).collect();
    generator_distribution(&s)
}

fn enumerated(theta: &[f64], rewards: &[f64]) -> Result<Vec<f64>> {
    let p = toy_policy(theta)?;
    let adv: Vec<f64> = p.iter().zip(rewards).map(|(p, r)| 3.0 * p * r).collect();
    toy_surrogate_gradient(theta, &[0, 1, 2], &adv)
}

pub fn reinforce_check(draws: usize, seed: u64) -> Result<ReinforceCheck> {
    let theta = toy_theta();
    let rewards = toy_rewards();
    let p = toy_policy(&theta)?;
    let exact = enumerated(&theta, &rewards)?;
    let mut shift_error: f64 = 0.0;
    for c in [-3.0, 0.5, 10.0] {
        let shifted: Vec<f64> = rewards.iter().map(|r| r + c).collect();
        for (a, b) in exact.iter().zip(enumerated(&theta, &shifted)?) {
            shift_error = shift_error.max((a - b).abs());
        }
    }
    // one surrogate gradient per action; each draw picks one of them
    let per_action = (0..3)
        .map(|k| toy_surrogate_gradient(&theta, &[k], &[rewards[k]]))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = theta.len();
    let (mut sum, mut sum_sq) = (vec![0.0; dim], vec![0.0; dim]);
    for _ in 0..draws {
        let k = sample_negatives(&p, 1, Sampling::Stochastic, &mut rng)?[0];
        for (d, g) in per_action[k].iter().enumerate() {
            sum[d] += g;
            sum_sq[d] += g * g;
        }
    }
    let n = draws as f64;
    let estimate: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std_error: Vec<f64> = sum_sq
        .iter()
        .zip(&estimate)
        .map(|(sq, m)| ((sq / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt())
        .collect();
    let max_z = estimate
        .iter()
        .zip(&exact)
        .zip(&std_error)
        .map(|((e, x), se)| if *se > 0.0 { (e - x).abs() / se } else { (e - x).abs() * f64::INFINITY })
        .fold(0.0, f64::max);
    Ok(ReinforceCheck {
        exact,
        estimate,
        std_error,
        max_z,
        shift_error,
        draws,
    })
}
