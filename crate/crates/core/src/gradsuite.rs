//! Finite-difference checks for every layer and loss, plus an end-to-end network check.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{center_of_mass, cheb_conv, gat_conv, Connectivity, Graph, NormalizedLaplacian};
use crate::model::{Model, ModelSpec, Variant};
use crate::nn::{bce_loss, conv2d, dice_loss, dilated_conv2d, DICE_EPS};
use crate::reprogram::{input_transform, output_map};
use crate::tensor::{grad_check, GradCheckReport, Tape, Tensor, Var};

/// Finite-difference step.
pub const STEP: f64 = 1e-6;
/// Tolerance for single layers and losses.
pub const LAYER_TOLERANCE: f64 = 1e-5;
/// Tolerance for whole-network checks.
pub const NETWORK_TOLERANCE: f64 = 1e-4;
const BIAS_LO: f64 = 0.2;
const BIAS_HI: f64 = 0.6;

type Check = Box<dyn Fn() -> Result<GradCheckReport> + Send + Sync>;

pub struct GradCase {
    pub name: String,
    pub tolerance: f64,
    check: Check,
}

impl GradCase {
    pub fn new(
        name: impl Into<String>,
        tolerance: f64,
        check: impl Fn() -> Result<GradCheckReport> + Send + Sync + 'static,
    ) -> Self {
        GradCase {
            name: name.into(),
            tolerance,
            check: Box::new(check),
        }
    }

    /// Checks the scalar `f(tape, vars)` at `inputs`.
    pub fn of<F>(name: &str, tolerance: f64, inputs: Vec<Tensor<f64>>, f: F) -> Self
    where
        F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Send + Sync + 'static,
    {
        GradCase::new(name, tolerance, move || {
            grad_check(&f, &inputs, STEP, tolerance)
        })
    }

    pub fn run(&self) -> Result<GradCheckReport> {
        (self.check)()
    }
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub name: String,
    pub tolerance: f64,
    /// `Err` carries the message of a check that could not run.
    pub outcome: std::result::Result<GradCheckReport, String>,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.outcome.as_ref().is_ok_and(GradCheckReport::passed)
    }
}

pub fn run_cases(cases: &[GradCase]) -> Vec<CaseResult> {
    cases
        .iter()
        .map(|c| CaseResult {
            name: c.name.clone(),
            tolerance: c.tolerance,
            outcome: c.run().map_err(|e| e.to_string()),
        })
        .collect()
}

/// `name  max_rel_error  tolerance  PASS|FAIL` rows.
pub fn format_table(results: &[CaseResult]) -> String {
    let mut out = format!(
        "{:<22} {:>14} {:>10}  result\n",
        "check", "max_rel_err", "tol"
    );
    for r in results {
        let err = match &r.outcome {
            Ok(rep) => format!("{:.3e}", rep.max_rel_error),
            Err(e) => format!("error: {e}"),
        };
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        out.push_str(&format!(
            "{:<22} {:>14} {:>10.0e}  {verdict}\n",
            r.name, err, r.tolerance
        ));
    }
    out
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::uniform(shape.to_vec(), lo, hi, rng)
}

/// Reduces `y` to a scalar with fixed pseudo-random weights so that every output
/// coordinate contributes an O(1) gradient.
pub fn probe(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(rand_t(&mut rng, tape.shape(y), -1.0, 1.0));
    let p = tape.mul(y, w)?;
    tape.sum(p)
}

fn binary(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n)
            .map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
            .collect(),
    )
    .expect("sized")
}

fn random_connected_graph(rng: &mut ChaCha8Rng, n: usize) -> Graph {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (rng.gen_range(0..i), i)).collect();
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(0.25) && !edges.contains(&(i, j)) {
                edges.push((i, j));
            }
        }
    }
    Graph::new(n, edges).expect("valid edges")
}

/// One case per layer and loss, all at [`LAYER_TOLERANCE`].
pub fn layer_cases() -> Vec<GradCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    let tol = LAYER_TOLERANCE;
    let mut cases = Vec::new();

    cases.push(GradCase::of(
        "conv3x3",
        tol,
        vec![
            rand_t(&mut rng, &[2, 5, 6], -1.0, 1.0),
            rand_t(&mut rng, &[3, 2, 3, 3], -1.0, 1.0),
            rand_t(&mut rng, &[3], -1.0, 1.0),
        ],
        |t, v| {
            let y = conv2d(t, v[0], v[1], Some(v[2]))?;
            probe(t, y, 1)
        },
    ));
    cases.push(GradCase::of(
        "dilated_conv3x3",
        tol,
        vec![
            rand_t(&mut rng, &[2, 7, 6], -1.0, 1.0),
            rand_t(&mut rng, &[2, 2, 3, 3], -1.0, 1.0),
            rand_t(&mut rng, &[2], -1.0, 1.0),
        ],
        |t, v| {
            let y = dilated_conv2d(t, v[0], v[1], Some(v[2]), 2)?;
            probe(t, y, 2)
        },
    ));
    cases.push(GradCase::of(
        "maxpool2",
        tol,
        vec![rand_t(&mut rng, &[2, 6, 4], -1.0, 1.0)],
        |t, v| {
            let y = t.maxpool2(v[0])?;
            probe(t, y, 3)
        },
    ));
    cases.push(GradCase::of(
        "upsample2",
        tol,
        vec![rand_t(&mut rng, &[2, 3, 2], -1.0, 1.0)],
        |t, v| {
            let y = t.upsample2(v[0])?;
            probe(t, y, 4)
        },
    ));

    let graph = random_connected_graph(&mut rng, 7);
    let nbr = Arc::new(graph.neighborhoods());
    cases.push(GradCase::of(
        "gat_conv",
        tol,
        vec![
            rand_t(&mut rng, &[7, 3], -1.0, 1.0),
            rand_t(&mut rng, &[4, 3], -1.0, 1.0),
            rand_t(&mut rng, &[8], -1.0, 1.0),
        ],
        move |t, v| {
            let y = gat_conv(t, v[0], &nbr, v[1], v[2])?.output;
            probe(t, y, 5)
        },
    ));
    let lap =
        NormalizedLaplacian::new(&random_connected_graph(&mut rng, 6)).scaled_operator::<f64>();
    cases.push(GradCase::of(
        "cheb_conv",
        tol,
        vec![
            rand_t(&mut rng, &[6, 3], -1.0, 1.0),
            rand_t(&mut rng, &[2, 3], -1.0, 1.0),
            rand_t(&mut rng, &[2, 3], -1.0, 1.0),
            rand_t(&mut rng, &[2, 3], -1.0, 1.0),
        ],
        move |t, v| {
            let y = cheb_conv(t, v[0], &lap, &v[1..])?;
            probe(t, y, 6)
        },
    ));
    cases.push(GradCase::of(
        "center_of_mass",
        tol,
        vec![rand_t(&mut rng, &[2, 4, 5], -2.0, 2.0)],
        |t, v| {
            let y = center_of_mass(t, v[0])?.augmented;
            probe(t, y, 7)
        },
    ));
    cases.push(GradCase::of(
        "input_transform",
        tol,
        vec![
            rand_t(&mut rng, &[3, 4, 4], -1.0, 1.0),
            rand_t(&mut rng, &[4, 4], -1.0, 1.0),
            rand_t(&mut rng, &[4, 4], -1.0, 1.0),
        ],
        |t, v| {
            let y = input_transform(t, v[0], v[1], v[2])?;
            probe(t, y, 8)
        },
    ));
    cases.push(GradCase::of(
        "output_map",
        tol,
        vec![
            rand_t(&mut rng, &[5, 3, 3], -1.0, 1.0),
            rand_t(&mut rng, &[1, 5, 1, 1], -1.0, 1.0),
            rand_t(&mut rng, &[1], -1.0, 1.0),
        ],
        |t, v| {
            let y = output_map(t, v[0], v[1], v[2], true)?;
            probe(t, y, 9)
        },
    ));
    let target = binary(&mut rng, &[1, 4, 4]);
    cases.push(GradCase::of(
        "bce_loss",
        tol,
        vec![rand_t(&mut rng, &[1, 4, 4], 0.05, 0.95)],
        move |t, v| {
            let y = t.constant(target.clone());
            bce_loss(t, v[0], y)
        },
    ));
    let target = binary(&mut rng, &[1, 4, 4]);
    cases.push(GradCase::of(
        "dice_loss",
        tol,
        vec![rand_t(&mut rng, &[1, 4, 4], 0.05, 0.95)],
        move |t, v| {
            let y = t.constant(target.clone());
            dice_loss(t, v[0], y, DICE_EPS)
        },
    ));
    cases
}

/// `Σ w ⊙ (y − baseline)` with fixed random weights. Subtracting the value at the
/// check point leaves the gradient unchanged but keeps the final reduction over
/// near-zero terms, so central differences see far less rounding noise.
pub fn centered_probe(
    tape: &mut Tape<f64>,
    y: Var,
    baseline: &Tensor<f64>,
    seed: u64,
) -> Result<Var> {
    let b = tape.constant(baseline.clone());
    let d = tape.sub(y, b)?;
    probe(tape, d, seed)
}

/// Value of `f` at `inputs`, all recorded as constants.
fn evaluate_at<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let y = f(&mut tape, &vars)?;
    Ok(tape.value(y).clone())
}

/// Checks a tensor-valued `f` through [`centered_probe`].
fn centered_case<F>(name: &str, tolerance: f64, inputs: Vec<Tensor<f64>>, f: F) -> GradCase
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Send + Sync + 'static,
{
    GradCase::new(name, tolerance, move || {
        let baseline = evaluate_at(&f, &inputs)?;
        let objective = |t: &mut Tape<f64>, v: &[Var]| {
            let y = f(t, v)?;
            centered_probe(t, y, &baseline, 17)
        };
        grad_check(objective, &inputs, STEP, tolerance)
    })
}

/// Full network on a 16×16 input: gradients with respect to the input and every parameter.
///
/// The source half of the attention vector shifts every logit of a neighbourhood
/// equally, so its gradient is exactly zero unless some neighbourhood has logits on
/// both sides of the LeakyReLU kink. The seed is picked so that such neighbourhoods
/// exist; otherwise those coordinates would compare zero against rounding noise.
pub fn network_case(variant: Variant) -> GradCase {
    let seed = match variant {
        Variant::GacUnet => 14,
        Variant::PlainUnet => 5,
    };
    network_case_seeded(variant, seed)
}

pub fn network_case_seeded(variant: Variant, seed: u64) -> GradCase {
    let mut spec = ModelSpec::new(variant, 16, vec![2, 3]).with_seed(seed);
    spec.connectivity = Connectivity::Eight;
    let model = Model::<f64>::build(spec).expect("valid spec");
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let mut inputs = vec![rand_t(&mut rng, &[3, 16, 16], 0.0, 1.0)];
    inputs.extend(model.params().iter().map(|p| {
        // positive biases keep most units on the unit-slope side of the LeakyReLU
        if p.name.ends_with("bias") {
            rand_t(&mut rng, p.value.shape(), BIAS_LO, BIAS_HI)
        } else {
            p.value.clone()
        }
    }));
    let name = format!("{variant}_16x16");
    centered_case(&name, NETWORK_TOLERANCE, inputs, move |t, v| {
        Ok(model.forward(t, &v[1..], v[0])?.output)
    })
}

/// Input transform and output map trained through a frozen tiny base.
pub fn reprogram_case() -> GradCase {
    reprogram_case_seeded(13)
}

pub fn reprogram_case_seeded(seed: u64) -> GradCase {
    let mut spec = ModelSpec::new(Variant::PlainUnet, 8, vec![2]).with_seed(seed);
    spec.out_channels = 3;
    let mut base = Model::<f64>::build(spec).expect("valid spec");
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
    let values = base
        .params()
        .iter()
        .map(|p| {
            if p.name.ends_with("bias") {
                rand_t(&mut rng, p.value.shape(), BIAS_LO, BIAS_HI)
            } else {
                p.value.clone()
            }
        })
        .collect();
    base.set_params(values).expect("same shapes");
    let image = rand_t(&mut rng, &[3, 8, 8], 0.0, 1.0);
    let inputs = vec![
        rand_t(&mut rng, &[8, 8], 0.5, 1.5),
        rand_t(&mut rng, &[8, 8], -0.2, 0.2),
        rand_t(&mut rng, &[1, 3, 1, 1], -1.0, 1.0),
        rand_t(&mut rng, &[1], -0.5, 0.5),
    ];
    centered_case(
        "reprogram_through_base",
        NETWORK_TOLERANCE,
        inputs,
        move |t, v| {
            let frozen = base.bind(t, |_| true);
            let x = t.constant(image.clone());
            let xt = input_transform(t, x, v[0], v[1])?;
            let inner = base.forward(t, &frozen, xt)?.output;
            output_map(t, inner, v[2], v[3], true)
        },
    )
}

/// Every layer, both losses, both network variants and the reprogramming path.
pub fn default_cases() -> Vec<GradCase> {
    let mut cases = layer_cases();
    cases.push(network_case(Variant::GacUnet));
    cases.push(network_case(Variant::PlainUnet));
    cases.push(reprogram_case());
    cases
}
