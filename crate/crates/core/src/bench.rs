//! Benchmark criteria, desk-scale run configurations and training-free
//! oracles.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{assemble_blocks, assemble_stiffness, GroupView, Layout, SpectralSystem};
use crate::dense::Matrix;
use crate::domains::DomainSpec;
use crate::error::{Error, Result};
use crate::fieldtnn::{FieldTNN, FieldTables, MaskKind, NetworkShape, SupportKind};
use crate::geig::{solve_generalized, DEFAULT_STABILIZATION};
use crate::subnet::{Activation, ClosedForm, TabulatedFactors};
use crate::training::{
    evaluate_basis, forward, loss_gradient, train, EigenReport, Model, ModelConfig, TrainConfig,
};

/// Steps used by training criteria under `--quick`.
pub const QUICK_STEPS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: usize,
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionResult {
    fn new(id: usize, name: &str, passed: bool, detail: String, t0: Instant) -> Self {
        Self {
            id,
            name: name.into(),
            passed,
            detail,
            seconds: t0.elapsed().as_secs_f64(),
        }
    }

    fn failed(id: usize, name: &str, err: &Error, t0: Instant) -> Self {
        Self::new(id, name, false, format!("error: {err}"), t0)
    }
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "criterion {:>2} [{}] {}: {} ({:.1} s)",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail,
            self.seconds
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Oracle,
    Square,
    Cube,
    Lshape2d,
    Inhomogeneous,
    Lshape3d,
    All,
}

impl Suite {
    pub const EACH: [Suite; 6] = [
        Suite::Oracle,
        Suite::Square,
        Suite::Cube,
        Suite::Lshape2d,
        Suite::Inhomogeneous,
        Suite::Lshape3d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Oracle => "oracle",
            Suite::Square => "square",
            Suite::Cube => "cube",
            Suite::Lshape2d => "lshape2d",
            Suite::Inhomogeneous => "inhomogeneous",
            Suite::Lshape3d => "lshape3d",
            Suite::All => "all",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::EACH
            .into_iter()
            .chain([Suite::All])
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown suite `{s}`")))
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SuiteOutcome {
    pub suite: Suite,
    pub criteria: Vec<CriterionResult>,
    /// Training reports by run name.
    pub reports: Vec<(String, EigenReport)>,
    pub seconds: f64,
}

impl SuiteOutcome {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }
}

/// Runs one suite, or every suite in turn for [`Suite::All`].
pub fn run_suite(suite: Suite, quick: bool) -> Vec<SuiteOutcome> {
    if suite == Suite::All {
        return Suite::EACH.into_iter().flat_map(|s| run_suite(s, quick)).collect();
    }
    let t0 = Instant::now();
    let steps = |full: usize| if quick { QUICK_STEPS.min(full) } else { full };
    let mut reports = Vec::new();
    let criteria = match suite {
        Suite::Oracle => vec![
            criterion_1(),
            criterion_2(),
            criterion_6(),
            criterion_7(),
            criterion_8(),
            criterion_9(),
        ],
        Suite::Square => {
            let (c3, c10, report) = criteria_3_and_10(steps(20_000));
            reports.extend(report.map(|r| ("square".to_string(), r)));
            vec![c3, c10]
        }
        Suite::Cube => {
            let (c4, report) = criterion_4(steps(20_000));
            reports.extend(report.map(|r| ("cube".to_string(), r)));
            vec![c4]
        }
        Suite::Lshape2d => {
            let (c5, report) = criterion_5(steps(20_000));
            reports.extend(report.map(|r| ("lshape2d".to_string(), r)));
            vec![c5]
        }
        Suite::Inhomogeneous | Suite::Lshape3d => {
            let name = suite.name();
            let cfg = if suite == Suite::Inhomogeneous {
                inhomogeneous_config(steps(5_000))
            } else {
                lshape3d_config(steps(5_000))
            };
            match DomainSpec::builtin(name).and_then(|d| train::<f64>(&d, &cfg)) {
                Ok(out) => reports.push((name.to_string(), out.report)),
                Err(e) => log::error!("{name}: {e}"),
            }
            Vec::new()
        }
        Suite::All => unreachable!(),
    };
    vec![SuiteOutcome {
        suite,
        criteria,
        reports,
        seconds: t0.elapsed().as_secs_f64(),
    }]
}

fn desk_model(rank: usize) -> ModelConfig {
    ModelConfig {
        rank,
        hidden: vec![40, 40],
        activation: Activation::Sine,
        mask: MaskKind::Sine,
        panels: 16,
        points: 8,
        support: SupportKind::Full,
    }
}

fn desk_config(rank: usize, tracked: usize, steps: usize) -> TrainConfig {
    TrainConfig {
        model: desk_model(rank),
        tracked,
        beta: 1.0,
        learning_rate: 3e-4,
        steps,
        ..TrainConfig::default()
    }
}

pub fn square_config(steps: usize) -> TrainConfig {
    desk_config(20, 4, steps)
}

pub fn cube_config(steps: usize) -> TrainConfig {
    desk_config(24, 3, steps)
}

fn tangential(mut c: TrainConfig) -> TrainConfig {
    c.model.support = SupportKind::Tangential;
    c
}

pub fn lshape2d_config(steps: usize) -> TrainConfig {
    tangential(desk_config(16, 5, steps))
}

pub fn inhomogeneous_config(steps: usize) -> TrainConfig {
    tangential(desk_config(12, 6, steps))
}

pub fn lshape3d_config(steps: usize) -> TrainConfig {
    let mut c = tangential(desk_config(12, 5, steps));
    c.model.panels = 8;
    c
}

/// Closed-form factors of `E_ij = (−j cos iπx₁ sin jπx₂, i sin iπx₁ cos jπx₂)`
/// on the unit square, as `[component][coordinate]`.
pub fn square_mode_forms(i: u32, j: u32) -> [[ClosedForm; 2]; 2] {
    let (fi, fj) = (f64::from(i), f64::from(j));
    [
        [ClosedForm::cos(-fj, fi * PI), ClosedForm::sin(1.0, fj * PI)],
        [ClosedForm::sin(fi, fi * PI), ClosedForm::cos(1.0, fj * PI)],
    ]
}

/// Factors of `∇(sin πx₁ sin πx₂)`.
pub fn square_gradient_forms() -> [[ClosedForm; 2]; 2] {
    [
        [ClosedForm::cos(PI, PI), ClosedForm::sin(1.0, PI)],
        [ClosedForm::sin(PI, PI), ClosedForm::cos(1.0, PI)],
    ]
}

/// Index pairs `(i, j) ≠ (0, 0)` with `i² + j² ≤ bound`.
pub fn square_mode_pairs(bound: u32) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for i in 0..=bound {
        for j in 0..=bound {
            if (i, j) != (0, 0) && i * i + j * j <= bound {
                out.push((i, j));
            }
        }
    }
    out
}

/// One tabulated field whose rank terms are the given factor sets.
pub fn tabulated_basis(terms: &[[[ClosedForm; 2]; 2]]) -> Result<FieldTNN<f64>> {
    let forms = (0..2)
        .map(|i| {
            (0..2)
                .map(|j| TabulatedFactors::new(terms.iter().map(|t| t[i][j]).collect()))
                .collect()
        })
        .collect();
    FieldTNN::tabulated(vec![(0.0, 1.0), (0.0, 1.0)], forms)
}

fn oracle_report(with_gradient: bool) -> Result<EigenReport> {
    let mut terms: Vec<_> = square_mode_pairs(8)
        .into_iter()
        .map(|(i, j)| square_mode_forms(i, j))
        .collect();
    if with_gradient {
        terms.push(square_gradient_forms());
    }
    let domain = DomainSpec::builtin("square")?;
    let model = Model::with_fields(&domain, 8, 8, vec![tabulated_basis(&terms)?])?;
    let config = TrainConfig {
        tracked: 1,
        ..TrainConfig::default()
    };
    Ok(evaluate_basis(&domain, &model, &config)?.0)
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs())
        .fold(0.0, f64::max)
}

/// Training-free square cavity: exact modes in, exact eigenvalues out.
pub fn criterion_1() -> CriterionResult {
    let t0 = Instant::now();
    let name = "oracle square cavity";
    let exact: Vec<f64> = [1.0, 1.0, 2.0, 4.0, 4.0, 5.0, 5.0, 8.0]
        .iter()
        .map(|m| m * PI * PI)
        .collect();
    match oracle_report(false) {
        Ok(r) => {
            let got = r.filtered_values();
            let err = if got.len() == exact.len() {
                max_rel(&got, &exact)
            } else {
                f64::INFINITY
            };
            let passed = err <= 1e-9 && t0.elapsed().as_secs_f64() < 10.0;
            let detail = format!("{} eigenvalues, max rel err {err:.2e}", got.len());
            CriterionResult::new(1, name, passed, detail, t0)
        }
        Err(e) => CriterionResult::failed(1, name, &e, t0),
    }
}

/// One injected gradient field is flagged and nothing else moves.
pub fn criterion_2() -> CriterionResult {
    let t0 = Instant::now();
    let name = "oracle spurious filter";
    match oracle_report(false).and_then(|a| Ok((a, oracle_report(true)?))) {
        Ok((clean, mixed)) => {
            let flagged = mixed.raw.iter().filter(|e| e.spurious).count();
            let (a, b) = (clean.filtered_values(), mixed.filtered_values());
            let err = if a.len() == b.len() {
                max_rel(&b, &a)
            } else {
                f64::INFINITY
            };
            let passed = flagged == 1 && err <= 1e-8 && t0.elapsed().as_secs_f64() < 10.0;
            let detail = format!("{flagged} flagged, real eigenvalues moved {err:.2e}");
            CriterionResult::new(2, name, passed, detail, t0)
        }
        Err(e) => CriterionResult::failed(2, name, &e, t0),
    }
}

fn sorted_f64(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// End-to-end square cavity and the min-max check over its logs.
pub fn criteria_3_and_10(steps: usize) -> (CriterionResult, CriterionResult, Option<EigenReport>) {
    let t0 = Instant::now();
    let (n3, n10) = ("square cavity end to end", "min-max along training");
    let run = DomainSpec::builtin("square").and_then(|d| train::<f64>(&d, &square_config(steps)));
    let report = match run {
        Ok(out) => out.report,
        Err(e) => {
            return (
                CriterionResult::failed(3, n3, &e, t0),
                CriterionResult::failed(10, n10, &e, t0),
                None,
            )
        }
    };
    let exact: Vec<f64> = [1.0, 1.0, 2.0, 4.0].iter().map(|m| m * PI * PI).collect();
    let head: Vec<_> = report.filtered.iter().take(4).collect();
    let err = if head.len() == 4 {
        max_rel(&head.iter().map(|e| e.lambda).collect::<Vec<_>>(), &exact)
    } else {
        f64::INFINITY
    };
    let div = head.iter().map(|e| e.div_seminorm).fold(0.0, f64::max);
    let c3 = CriterionResult::new(
        3,
        n3,
        head.len() == 4 && err <= 1e-2 && div < 1e-2 && report.seconds < 1800.0,
        format!("{steps} steps, max rel err {err:.2e}, max div seminorm {div:.2e}"),
        t0,
    );

    let reference = sorted_f64(
        crate::domains::box_eigenvalues(&[1.0, 1.0], 4 * report.raw.len().max(4)).clone(),
    );
    let mut worst = f64::INFINITY;
    let mut worst_step = 0;
    for log in &report.logs {
        for (k, &lam) in log.tracked.iter().enumerate() {
            let margin = lam - reference[k];
            if margin < worst {
                worst = margin;
                worst_step = log.step;
            }
        }
    }
    let c10 = CriterionResult::new(
        10,
        n10,
        worst >= -1e-8,
        format!(
            "{} logged steps, smallest margin λ_NN − λ_exact = {worst:.3e} at step {worst_step}",
            report.logs.len()
        ),
        t0,
    );
    (c3, c10, Some(report))
}

/// Cube cavity: the triple eigenvalue 2π².
pub fn criterion_4(steps: usize) -> (CriterionResult, Option<EigenReport>) {
    let t0 = Instant::now();
    let name = "cube multiplicity";
    let target = 2.0 * PI * PI;
    match DomainSpec::builtin("cube").and_then(|d| train::<f64>(&d, &cube_config(steps))) {
        Ok(out) => {
            let near = out
                .report
                .filtered
                .iter()
                .filter(|e| (e.lambda - target).abs() / target <= 2e-2)
                .count();
            let lowest: Vec<String> = out
                .report
                .filtered
                .iter()
                .take(3)
                .map(|e| format!("{:.5}", e.lambda))
                .collect();
            let passed = near >= 3 && out.report.seconds < 3600.0;
            let detail = format!(
                "{steps} steps, {near} eigenvalues within 2e-2 of 2π², lowest [{}]",
                lowest.join(", ")
            );
            (CriterionResult::new(4, name, passed, detail, t0), Some(out.report))
        }
        Err(e) => (CriterionResult::failed(4, name, &e, t0), None),
    }
}

/// Decomposed L-shape: singular first mode and the analytic pair at π².
pub fn criterion_5(steps: usize) -> (CriterionResult, Option<EigenReport>) {
    let t0 = Instant::now();
    let name = "2D L-shape decomposed";
    match DomainSpec::builtin("lshape2d").and_then(|d| train::<f64>(&d, &lshape2d_config(steps))) {
        Ok(out) => {
            let f = &out.report.filtered;
            let rel = |k: usize, r: f64| f.get(k).map_or(f64::INFINITY, |e| (e.lambda - r).abs() / r);
            let e1 = rel(0, 1.475_621_824_08);
            let e3 = rel(2, PI * PI);
            let e4 = rel(3, PI * PI);
            let passed = e1 <= 5e-2 && e3 <= 1e-2 && e4 <= 1e-2 && out.report.seconds < 3600.0;
            let detail = format!("{steps} steps, tangential support, rel err λ1 {e1:.2e}, λ3 {e3:.2e}, λ4 {e4:.2e}");
            (CriterionResult::new(5, name, passed, detail, t0), Some(out.report))
        }
        Err(e) => (CriterionResult::failed(5, name, &e, t0), None),
    }
}

fn gradient_configs() -> Vec<(&'static str, TrainConfig)> {
    let base = |rank: usize, hidden: Vec<usize>, activation, seed| TrainConfig {
        model: ModelConfig {
            rank,
            hidden,
            activation,
            mask: MaskKind::Sine,
            panels: 4,
            points: 6,
            support: SupportKind::Full,
        },
        tracked: 2,
        beta: 0.0,
        steps: 0,
        seed,
        ..TrainConfig::default()
    };
    vec![
        ("square", base(3, vec![8], Activation::Sine, 11)),
        ("square", base(4, vec![6, 5], Activation::Tanh, 12)),
        ("lshape2d", base(2, vec![5], Activation::Sine, 13)),
        ("lshape2d", tangential(base(2, vec![5], Activation::Tanh, 14))),
    ]
}

/// Largest relative mismatch between the analytic gradient and central
/// differences over `coords` random coordinates of one configuration.
pub fn gradient_check(domain: &DomainSpec, config: &TrainConfig, coords: usize, seed: u64) -> Result<f64> {
    let mut model = Model::<f64>::new(domain, &config.model, config.seed)?;
    let (st, grad) = loss_gradient(&model, config)?;
    let tracked = &st.chosen;
    for range in st.eig.clusters(1e-3) {
        if range.len() > 1 && tracked.iter().any(|k| range.contains(k)) {
            return Err(Error::ClusteredEigenvalue { index: range.start });
        }
    }
    let base = model.params();
    let scale = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..coords {
        let idx = rng.gen_range(0..base.len());
        let mut p = base.clone();
        p[idx] = base[idx] + h;
        model.set_params(&p)?;
        let up = forward(&model, config)?.loss;
        p[idx] = base[idx] - h;
        model.set_params(&p)?;
        let down = forward(&model, config)?.loss;
        let fd = (up - down) / (2.0 * h);
        let denom = fd.abs().max(grad[idx].abs()).max(1e-3 * scale);
        worst = worst.max((fd - grad[idx]).abs() / denom);
    }
    model.set_params(&base)?;
    Ok(worst)
}

/// Analytic loss gradient against central differences.
pub fn criterion_6() -> CriterionResult {
    let t0 = Instant::now();
    let name = "loss gradient vs finite differences";
    let mut worst = 0.0f64;
    let configs = gradient_configs();
    let count = configs.len();
    for (n, (domain, config)) in configs.into_iter().enumerate() {
        match DomainSpec::builtin(domain).and_then(|d| gradient_check(&d, &config, 20, 100 + n as u64)) {
            Ok(w) => worst = worst.max(w),
            Err(e) => return CriterionResult::failed(6, name, &e, t0),
        }
    }
    let passed = worst <= 1e-4 && t0.elapsed().as_secs_f64() < 300.0;
    let detail = format!("{count} configs × 20 coordinates, max rel mismatch {worst:.2e}");
    CriterionResult::new(6, name, passed, detail, t0)
}

/// Direct tensor-grid quadrature of the pointwise integrands in 2D.
pub fn brute_force_system(tables: &FieldTables<f64>) -> [Matrix<f64>; 3] {
    let p = tables.rank();
    let (w0, w1) = (tables.weights(0), tables.weights(1));
    let mut out = [Matrix::zeros(p, p), Matrix::zeros(p, p), Matrix::zeros(p, p)];
    let f = |i: usize, j: usize, k: usize, l: usize, d: bool| {
        let t = tables.table(i, j);
        if d {
            t.derivatives[(k, l)]
        } else {
            t.values[(k, l)]
        }
    };
    let mut curl = vec![0.0; p];
    let mut div = vec![0.0; p];
    let mut e0 = vec![0.0; p];
    let mut e1 = vec![0.0; p];
    for a in 0..w0.len() {
        for b in 0..w1.len() {
            let w = w0[a] * w1[b];
            for k in 0..p {
                let c = |i: usize, d0: bool, d1: bool| f(i, 0, k, a, d0) * f(i, 1, k, b, d1);
                e0[k] = c(0, false, false);
                e1[k] = c(1, false, false);
                curl[k] = c(1, true, false) - c(0, false, true);
                div[k] = c(0, true, false) + c(1, false, true);
            }
            for k in 0..p {
                for m in 0..p {
                    out[0][(k, m)] += w * curl[k] * curl[m];
                    out[1][(k, m)] += w * (e0[k] * e0[m] + e1[k] * e1[m]);
                    out[2][(k, m)] += w * div[k] * div[m];
                }
            }
        }
    }
    out
}

/// Factorized assembly against brute force on random 2D bases.
pub fn criterion_7() -> CriterionResult {
    let t0 = Instant::now();
    let name = "assembly vs brute force";
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for n in 0..50 {
        let bounds = vec![
            (rng.gen_range(-1.0..0.0), rng.gen_range(0.5..2.0)),
            (rng.gen_range(-1.0..0.0), rng.gen_range(0.5..2.0)),
        ];
        let shape = NetworkShape {
            rank: rng.gen_range(1..=4),
            hidden: vec![rng.gen_range(3..8); rng.gen_range(1..=2)],
            activation: if n % 2 == 0 { Activation::Sine } else { Activation::Tanh },
        };
        let mask = if n % 3 == 0 { MaskKind::Polynomial } else { MaskKind::Sine };
        let run = || -> Result<f64> {
            let field = if n % 4 == 3 {
                FieldTNN::compact(bounds.clone(), &shape, 500 + n)?
            } else {
                FieldTNN::masked(bounds.clone(), &shape, mask, 500 + n)?
            };
            let layout = Layout::single_box(&bounds, rng.clone().gen_range(2..5), 5)?;
            let spans = layout.spans(&bounds)?;
            let tables = field.eval_component_tables(&layout.grid(&spans)?)?;
            let (sys, _) = assemble_blocks(&layout, &[GroupView { tables: &tables, spans: &spans }])?;
            let brute = brute_force_system(&tables);
            Ok([&sys.s, &sys.m, &sys.d]
                .iter()
                .zip(&brute)
                .map(|(a, b)| {
                    let scale = b.max_abs().max(f64::MIN_POSITIVE);
                    a.as_slice()
                        .iter()
                        .zip(b.as_slice())
                        .map(|(x, y)| (x - y).abs() / scale)
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max))
        };
        match run() {
            Ok(w) => worst = worst.max(w),
            Err(e) => return CriterionResult::failed(7, name, &e, t0),
        }
    }
    let passed = worst <= 1e-11 && t0.elapsed().as_secs_f64() < 120.0;
    let detail = format!("50 bases, max rel deviation {worst:.2e}");
    CriterionResult::new(7, name, passed, detail, t0)
}

/// Best-of-`reps` wall time of `assemble_stiffness` at `nodes` per axis.
pub fn stiffness_timing(nodes: usize, rank: usize, reps: usize) -> Result<f64> {
    let points = 8;
    let bounds = vec![(0.0, 1.0), (0.0, 1.0)];
    let layout = Layout::single_box(&bounds, nodes / points, points)?;
    let spans = layout.spans(&bounds)?;
    let shape = NetworkShape {
        rank,
        hidden: vec![16],
        activation: Activation::Sine,
    };
    let field = FieldTNN::<f64>::masked(bounds, &shape, MaskKind::Sine, 3)?;
    let tables = field.eval_component_tables(&layout.grid(&spans)?)?;
    let views = [GroupView { tables: &tables, spans: &spans }];
    std::hint::black_box(assemble_stiffness(&layout, &views)?);
    let mut best = f64::INFINITY;
    for _ in 0..reps {
        let t = Instant::now();
        let s = assemble_stiffness(&layout, &views)?;
        best = best.min(t.elapsed().as_secs_f64());
        std::hint::black_box(s);
    }
    Ok(best)
}

/// Stiffness assembly time is linear in the per-axis node count.
pub fn criterion_8() -> CriterionResult {
    let t0 = Instant::now();
    let name = "assembly complexity scaling";
    let nodes = [128usize, 256, 512, 1024];
    let times: Result<Vec<f64>> = nodes.iter().map(|&n| stiffness_timing(n, 32, 25)).collect();
    let times = match times {
        Ok(t) => t,
        Err(e) => return CriterionResult::failed(8, name, &e, t0),
    };
    let ratios: Vec<f64> = times.windows(2).map(|w| w[1] / w[0]).collect();
    let (slope, intercept, r2) = linear_fit(&nodes.map(|n| n as f64), &times);
    let passed = ratios.iter().all(|&r| r < 2.5) && t0.elapsed().as_secs_f64() < 300.0;
    let detail = format!(
        "times {:?} ms, doubling ratios {:?}, fit t = {:.3e} + {:.3e}·n (R² {r2:.4})",
        times.iter().map(|t| format!("{:.2}", t * 1e3)).collect::<Vec<_>>(),
        ratios.iter().map(|r| format!("{r:.2}")).collect::<Vec<_>>(),
        intercept,
        slope
    );
    CriterionResult::new(8, name, passed, detail, t0)
}

/// Least squares `y ≈ a + b x`, returning `(b, a, R²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(xi, yi)| (yi - a - b * xi).powi(2)).sum();
    let ss_tot: f64 = y.iter().map(|yi| (yi - my).powi(2)).sum();
    (b, a, 1.0 - ss_res / ss_tot)
}

/// Random symmetric positive definite matrix `AᵀA + shift·I`.
pub fn random_spd(rng: &mut impl Rng, n: usize, shift: f64) -> Matrix<f64> {
    let a = Matrix::from_vec(n, n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let mut s = a.transpose().matmul(&a);
    for i in 0..n {
        s[(i, i)] += shift;
    }
    s
}

fn det(a: &Matrix<f64>) -> f64 {
    match a.rows() {
        1 => a[(0, 0)],
        2 => a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)],
        3 => {
            a[(0, 0)] * (a[(1, 1)] * a[(2, 2)] - a[(1, 2)] * a[(2, 1)])
                - a[(0, 1)] * (a[(1, 0)] * a[(2, 2)] - a[(1, 2)] * a[(2, 0)])
                + a[(0, 2)] * (a[(1, 0)] * a[(2, 1)] - a[(1, 1)] * a[(2, 0)])
        }
        _ => unreachable!("determinant oracle covers n ≤ 3"),
    }
}

/// Roots of `det(S − λM)` for `n ≤ 3` by sign scanning and bisection.
pub fn charpoly_roots(s: &Matrix<f64>, m: &Matrix<f64>) -> Vec<f64> {
    let n = s.rows();
    let f = |lam: f64| {
        let mut a = s.clone();
        a.axpy(-lam, m);
        det(&a)
    };
    // λ_max ≤ tr S / λ_min(M) and λ_min(M) ≥ det M / (tr M)^(n−1).
    let tr_m = m.trace();
    let lo_m = det(m) / tr_m.powi(n as i32 - 1);
    let hi = 1.01 * s.trace() / lo_m;
    let mut samples = 1usize << 12;
    loop {
        let mut roots = Vec::new();
        let grid = |k: usize| hi * (k as f64 / samples as f64).powi(3);
        let mut prev = (0.0, f(0.0));
        for k in 1..=samples {
            let x = grid(k);
            let fx = f(x);
            if fx == 0.0 {
                roots.push(x);
            } else if prev.1 != 0.0 && prev.1.signum() != fx.signum() {
                let (mut a, mut b) = (prev.0, x);
                let fa = prev.1;
                for _ in 0..200 {
                    let mid = 0.5 * (a + b);
                    if mid <= a || mid >= b {
                        break;
                    }
                    if f(mid).signum() == fa.signum() {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                roots.push(0.5 * (a + b));
            }
            prev = (x, fx);
        }
        if roots.len() >= n || samples >= 1 << 22 {
            return roots;
        }
        samples <<= 2;
    }
}

/// Eigensolver invariants over random SPD pairs.
pub fn criterion_9() -> CriterionResult {
    let t0 = Instant::now();
    let name = "generalized eigensolver properties";
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut res, mut orth, mut shift, mut poly, mut vecs) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut small = 0;
    for t in 0..200 {
        let n = 1 + t % 10;
        let s = random_spd(&mut rng, n, 0.1);
        let m = random_spd(&mut rng, n, 0.5);
        let c: f64 = rng.gen_range(-2.0..5.0);
        let mut run = || -> Result<()> {
            let r = solve_generalized(&s, &m, DEFAULT_STABILIZATION)?;
            let (ns, nm) = (s.frobenius_norm(), m.frobenius_norm());
            for (k, u) in r.vectors.iter().enumerate() {
                let su = s.matvec(u);
                let mu = m.matvec(u);
                let resid = su
                    .iter()
                    .zip(&mu)
                    .map(|(a, b)| (a - r.values[k] * b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                res = res.max(resid / (ns + r.values[k].abs() * nm));
                for (l, v) in r.vectors.iter().enumerate() {
                    let g = m.bilinear(u, v) - if k == l { 1.0 } else { 0.0 };
                    orth = orth.max(g.abs());
                }
            }
            let mut shifted = s.clone();
            shifted.axpy(c, &m);
            let rs = solve_generalized(&shifted, &m, DEFAULT_STABILIZATION)?;
            for (k, (a, b)) in r.values.iter().zip(&rs.values).enumerate() {
                shift = shift.max((b - a - c).abs());
                let d = r.vectors[k]
                    .iter()
                    .zip(&rs.vectors[k])
                    .map(|(x, y)| (x.abs() - y.abs()).abs())
                    .fold(0.0, f64::max);
                vecs = vecs.max(d);
            }
            if n <= 3 {
                small += 1;
                let roots = charpoly_roots(&s, &m);
                if roots.len() != n {
                    poly = f64::INFINITY;
                }
                for (a, b) in r.values.iter().zip(&roots) {
                    poly = poly.max((a - b).abs() / b.abs().max(1.0));
                }
            }
            Ok(())
        };
        if let Err(e) = run() {
            return CriterionResult::failed(9, name, &e, t0);
        }
    }
    let passed = res <= 1e-8
        && orth <= 1e-8
        && shift <= 1e-10
        && vecs <= 1e-8
        && poly <= 1e-10
        && t0.elapsed().as_secs_f64() < 60.0;
    let detail = format!(
        "200 pairs ({small} with p ≤ 3): residual {res:.1e}, M-orthogonality {orth:.1e}, \
         shift {shift:.1e}, shifted vectors {vecs:.1e}, charpoly {poly:.1e}"
    );
    CriterionResult::new(9, name, passed, detail, t0)
}

/// Assembled system of a fixed basis, for inspection.
pub fn assembled_system(domain: &DomainSpec, model: &Model<f64>) -> Result<SpectralSystem<f64>> {
    domain.validate()?;
    Ok(model.evaluate()?.system)
}
