//! Projected gradient refinement of pixels toward scannability.
//!
//! Two phases share one loop:
//!
//! * **guided** — `λ1·SRL + λ2·P`, with the SRL term switched on only while
//!   the module error rate is at least `τ`; the perceptual term `P` is always on.
//! * **polish** — `λ1·SRL + λ_reg·P`, gated per module only, run until no
//!   module is misread.
//!
//! Every iterate is clamped to [0, 1]. Step sizes come either from a fixed
//! rule or from a projected Armijo search evaluated with the module gates
//! frozen at the start of the iteration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::PixelImage;
use crate::perceptual::PerceptualRegularizer;
use crate::qart::{desired_pattern, transform, MatchReport};
use crate::qr::{decode, decode_matrix, CodeConfig, Decoded, EcLevel, ModuleMatrix};
use crate::srl::{Srl, SrlReport, LUMA};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StepRule {
    Fixed {
        gamma: f64,
    },
    /// Armijo search starting from a step that moves the most heavily weighted
    /// pixel channel by `delta` under the SRL term alone.
    Backtracking {
        delta: f64,
        shrink: f64,
        armijo: f64,
        trials: usize,
    },
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule::Backtracking {
            delta: 0.25,
            shrink: 0.5,
            armijo: 1e-4,
            trials: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_reg: f64,
    pub tau: f64,
    pub max_iters: usize,
    pub polish_iters: usize,
    pub step: StepRule,
    /// Plateau nudge applied to stuck modules.
    pub nudge: f64,
    /// Objective change, relative to max(|objective|, 1), below which a
    /// gate-off guided phase stops.
    pub stable_tol: f64,
    pub perceptual: PerceptualRegularizer,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            lambda1: 500.0,
            lambda2: 3.0,
            lambda_reg: 0.01,
            tau: 0.15,
            max_iters: 300,
            polish_iters: 300,
            step: StepRule::default(),
            nudge: 0.01,
            stable_tol: 1e-6,
            perceptual: PerceptualRegularizer::default(),
        }
    }
}

impl RefineConfig {
    /// Defaults with `τ` set to the level's nominal recovery fraction.
    pub fn for_level(ec: EcLevel) -> Self {
        RefineConfig {
            tau: ec.nominal_capacity(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lambda1 > 0.0 && self.lambda1.is_finite()) {
            return bad(format!("lambda1 must be positive, got {}", self.lambda1));
        }
        if !(self.lambda2 >= 0.0 && self.lambda_reg >= 0.0) {
            return bad("perceptual weights must be nonnegative".into());
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if !(self.nudge >= 0.0 && self.nudge <= 1.0) {
            return bad(format!("nudge {} outside [0, 1]", self.nudge));
        }
        match self.step {
            StepRule::Fixed { gamma } if !(gamma > 0.0) => bad(format!("step size {gamma} must be positive")),
            StepRule::Backtracking {
                delta,
                shrink,
                armijo,
                trials,
            } if !(delta > 0.0) || !(shrink > 0.0 && shrink < 1.0) || !(0.0..1.0).contains(&armijo) || trials == 0 => {
                bad("backtracking needs delta > 0, shrink in (0,1), armijo in [0,1), trials ≥ 1".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Guided,
    Polish,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Every module samples as its target.
    ErrorFree,
    /// SRL gate off and the objective no longer moves.
    GateOffStable,
    MaxIters,
    /// No admissible step changed the image.
    Stalled,
}

/// State at the start of one iteration and the step taken from it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub phase: Phase,
    pub iteration: usize,
    pub objective: f64,
    pub srl: f64,
    pub perceptual: f64,
    pub error_rate: f64,
    pub mismatch_count: usize,
    /// Whether the SRL term was active.
    pub gate: bool,
    /// Accepted step size; 0 when no gradient step was taken.
    pub step: f64,
    pub gradient_norm: f64,
    pub nudged: usize,
    /// Row-major indices of modules with φ = 1.
    pub phi_modules: Vec<u32>,
    /// (module, L1 norm) of the SRL gradient actually applied, nonzero entries only.
    pub srl_gradient_l1: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefineTrace {
    pub records: Vec<IterationRecord>,
    pub stops: Vec<(Phase, StopReason)>,
    pub final_error_rate: f64,
    /// Verified by decoding the final image, never inferred from the loss.
    pub converged: bool,
}

impl RefineTrace {
    fn new() -> Self {
        RefineTrace {
            records: Vec::new(),
            stops: Vec::new(),
            final_error_rate: 1.0,
            converged: false,
        }
    }

    pub fn iterations(&self) -> usize {
        self.records.iter().filter(|r| r.step > 0.0 || r.nudged > 0).count()
    }

    /// Gate never switched on during the guided phase.
    pub fn gate_never_fired(&self) -> bool {
        self.records.iter().all(|r| r.phase != Phase::Guided || !r.gate)
    }

    /// One JSON object per iteration.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Objective value, its parts and its gradient at the current gates.
#[derive(Debug, Clone)]
pub struct ObjectiveEval {
    pub value: f64,
    pub srl: f64,
    pub perceptual: f64,
    pub gradient: Vec<f64>,
    pub report: SrlReport,
}

/// `λ1·SRL(x, ỹ) + λ2·P(x, x_ref)` and its exact gradient.
pub fn objective(
    x: &PixelImage,
    target: &ModuleMatrix,
    x_ref: &PixelImage,
    cfg: &RefineConfig,
) -> Result<ObjectiveEval> {
    let srl = Srl::for_image(x, target)?;
    let (g_srl, report) = srl.gradient(x, target)?;
    let (p, g_p) = cfg.perceptual.value_and_gradient(x, x_ref)?;
    let gradient = g_srl
        .iter()
        .zip(&g_p)
        .map(|(a, b)| cfg.lambda1 * a + cfg.lambda2 * b)
        .collect();
    Ok(ObjectiveEval {
        value: cfg.lambda1 * report.loss + cfg.lambda2 * p,
        srl: report.loss,
        perceptual: p,
        gradient,
        report,
    })
}

struct Runner<'a> {
    srl: Srl,
    target: &'a ModuleMatrix,
    x_ref: &'a PixelImage,
    cfg: &'a RefineConfig,
    gamma0: f64,
}

impl<'a> Runner<'a> {
    fn new(x: &PixelImage, target: &'a ModuleMatrix, x_ref: &'a PixelImage, cfg: &'a RefineConfig) -> Result<Self> {
        cfg.validate()?;
        let srl = Srl::for_image(x, target)?;
        if !x.same_extent(x_ref) {
            return Err(Error::ExtentMismatch("image and reference differ in extent".into()));
        }
        let n = srl.grid().module_count() as f64;
        let c_max = if x.channels() == 1 { 1.0 } else { LUMA[1] };
        let gamma0 = match cfg.step {
            StepRule::Fixed { gamma } => gamma,
            StepRule::Backtracking { delta, .. } => delta * n / (cfg.lambda1 * srl.kernel().max_weight() * 2.0 * c_max),
        };
        Ok(Runner {
            srl,
            target,
            x_ref,
            cfg,
            gamma0,
        })
    }

    fn frozen_value(&self, z: &PixelImage, phi: &[bool], gate: bool, lam_p: f64) -> Result<f64> {
        let s = if gate {
            self.cfg.lambda1 * self.srl.loss_with_phi(z, self.target, phi)?
        } else {
            0.0
        };
        let p = if lam_p > 0.0 {
            lam_p * self.cfg.perceptual.value(z, self.x_ref)?
        } else {
            0.0
        };
        Ok(s + p)
    }

    fn nudge(&self, z: &mut PixelImage, phi: &[bool], l1: &[f64]) -> usize {
        let eps = self.cfg.nudge;
        if eps == 0.0 {
            return 0;
        }
        let grid = self.srl.grid();
        let m = grid.modules;
        let span = self.srl.filter().span();
        let ch = z.channels();
        let mut count = 0;
        for k in 0..m * m {
            if !phi[k] || l1[k] != 0.0 {
                continue;
            }
            count += 1;
            let toward = if self.target.cells()[k] { eps } else { -eps };
            let (x0, y0) = grid.module_origin(k / m, k % m);
            for i in span.clone() {
                for j in span.clone() {
                    for c in 0..ch {
                        let v = z.get(x0 + j, y0 + i, c);
                        z.set(x0 + j, y0 + i, c, (v + toward).clamp(0.0, 1.0));
                    }
                }
            }
        }
        count
    }

    fn run(&self, x: &mut PixelImage, phase: Phase, iters: usize, trace: &mut RefineTrace) -> Result<StopReason> {
        let lam_p = match phase {
            Phase::Guided => self.cfg.lambda2,
            Phase::Polish => self.cfg.lambda_reg,
        };
        let channels = x.channels();
        let mut prev_objective: Option<f64> = None;
        for iteration in 0..iters {
            let (g_srl, report) = self.srl.gradient(x, self.target)?;
            let phi = report.phi();
            let gate = report.mismatch_count > 0
                && match phase {
                    Phase::Guided => report.error_rate >= self.cfg.tau,
                    Phase::Polish => true,
                };
            let (p_val, g_p) = if lam_p > 0.0 {
                self.cfg.perceptual.value_and_gradient(x, self.x_ref)?
            } else {
                (self.cfg.perceptual.value(x, self.x_ref)?, vec![0.0; x.data().len()])
            };
            let objective = if gate { self.cfg.lambda1 * report.loss } else { 0.0 } + lam_p * p_val;
            let mut record = IterationRecord {
                phase,
                iteration,
                objective,
                srl: report.loss,
                perceptual: p_val,
                error_rate: report.error_rate,
                mismatch_count: report.mismatch_count,
                gate,
                step: 0.0,
                gradient_norm: 0.0,
                nudged: 0,
                phi_modules: phi
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p)
                    .map(|(k, _)| k as u32)
                    .collect(),
                srl_gradient_l1: Vec::new(),
            };

            if report.mismatch_count == 0 {
                trace.records.push(record);
                return Ok(StopReason::ErrorFree);
            }
            if !gate {
                let stable = prev_objective
                    .is_some_and(|prev| (prev - objective).abs() <= self.cfg.stable_tol * objective.abs().max(1.0));
                if stable || lam_p == 0.0 || g_p.iter().all(|&g| g == 0.0) {
                    trace.records.push(record);
                    return Ok(StopReason::GateOffStable);
                }
            }
            prev_objective = Some(objective);

            let srl_scale = if gate { self.cfg.lambda1 } else { 0.0 };
            let grad: Vec<f64> = g_srl.iter().zip(&g_p).map(|(a, b)| srl_scale * a + lam_p * b).collect();
            let l1 = if gate {
                self.srl.module_gradient_l1(&g_srl, channels)
            } else {
                vec![0.0; phi.len()]
            };
            record.gradient_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            record.srl_gradient_l1 = l1
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(k, &v)| (k as u32, v * srl_scale))
                .collect();

            let mut z = x.clone();
            let mut step = 0.0;
            match self.cfg.step {
                StepRule::Fixed { gamma } => {
                    project_step(x, &grad, gamma, &mut z);
                    step = gamma;
                }
                StepRule::Backtracking {
                    shrink, armijo, trials, ..
                } => {
                    let mut gamma = self.gamma0;
                    for _ in 0..trials {
                        project_step(x, &grad, gamma, &mut z);
                        let decrease: f64 = grad
                            .iter()
                            .zip(x.data().iter().zip(z.data()))
                            .map(|(g, (a, b))| g * (a - b))
                            .sum();
                        if decrease > 0.0 && self.frozen_value(&z, &phi, gate, lam_p)? <= objective - armijo * decrease
                        {
                            step = gamma;
                            break;
                        }
                        gamma *= shrink;
                    }
                    if step == 0.0 {
                        z = x.clone();
                    }
                }
            }
            if gate {
                record.nudged = self.nudge(&mut z, &phi, &l1);
            }
            record.step = step;
            debug_assert!(z.data().iter().all(|v| (0.0..=1.0).contains(v)));
            let unchanged = z.data() == x.data();
            trace.records.push(record);
            if unchanged {
                return Ok(StopReason::Stalled);
            }
            *x = z;
        }
        Ok(StopReason::MaxIters)
    }

    fn finish(&self, x: &PixelImage, trace: &mut RefineTrace) -> Result<()> {
        let report = self.srl.report(x, self.target)?;
        trace.final_error_rate = report.error_rate;
        trace.converged = report.mismatch_count == 0 && certificate(x, self.target).is_some();
        Ok(())
    }
}

fn project_step(x: &PixelImage, grad: &[f64], gamma: f64, out: &mut PixelImage) {
    for ((o, &v), &g) in out.data_mut().iter_mut().zip(x.data()).zip(grad) {
        *o = (v - gamma * g).clamp(0.0, 1.0);
    }
}

/// Decodes `x` and checks it against the payload `target` carries.
fn certificate(x: &PixelImage, target: &ModuleMatrix) -> Option<Decoded> {
    let expected = decode_matrix(target).ok()?;
    let got = decode(x, &CodeConfig::default()).ok()?;
    (got.payload == expected.payload && got.report.is_clean()).then_some(got)
}

/// Guided phase: SRL gated by `τ`, perceptual term always on.
pub fn pgd_refine(
    x0: &PixelImage,
    target: &ModuleMatrix,
    x_ref: &PixelImage,
    cfg: &RefineConfig,
) -> Result<(PixelImage, RefineTrace)> {
    let runner = Runner::new(x0, target, x_ref, cfg)?;
    let mut x = x0.clone();
    let mut trace = RefineTrace::new();
    let stop = runner.run(&mut x, Phase::Guided, cfg.max_iters, &mut trace)?;
    trace.stops.push((Phase::Guided, stop));
    runner.finish(&x, &mut trace)?;
    Ok((x, trace))
}

/// Polish phase: SRL gated per module only, with the `λ_reg` regularizer.
pub fn mpgd_polish(
    x0: &PixelImage,
    target: &ModuleMatrix,
    x_ref: &PixelImage,
    cfg: &RefineConfig,
) -> Result<(PixelImage, RefineTrace)> {
    let runner = Runner::new(x0, target, x_ref, cfg)?;
    let mut x = x0.clone();
    let mut trace = RefineTrace::new();
    let stop = runner.run(&mut x, Phase::Polish, cfg.polish_iters.max(1), &mut trace)?;
    trace.stops.push((Phase::Polish, stop));
    runner.finish(&x, &mut trace)?;
    Ok((x, trace))
}

/// Result of the full repair pipeline.
#[derive(Debug, Clone)]
pub struct Repair {
    pub image: PixelImage,
    /// The transformed target the pixels were refined toward.
    pub target: ModuleMatrix,
    pub matching: MatchReport,
    pub trace: RefineTrace,
    /// Decode of the output, present iff it yields the payload with no repairs.
    pub decoded: Option<Decoded>,
}

impl Repair {
    pub fn scannable(&self) -> bool {
        self.decoded.is_some()
    }
}

/// Puts `x0` on the configured grid, resampling if its size differs.
pub fn conform(x0: &PixelImage, code: &CodeConfig) -> Result<PixelImage> {
    let side = code.image_side();
    let img = if x0.width() == side && x0.height() == side {
        x0.clone()
    } else {
        x0.resized(side, side)
    };
    img.with_grid(code.geometry())
}

/// Transform the target toward `x0`, refine `x0` toward it, polish if any
/// module is still misread, and verify with the decoder.
pub fn repair(x0: &PixelImage, payload: &[u8], code: &CodeConfig, cfg: &RefineConfig) -> Result<Repair> {
    code.validate()?;
    let x0 = conform(x0, code)?;
    let pattern = desired_pattern(&x0, code)?;
    let (target, matching) = transform(payload, code, &pattern)?;
    let runner = Runner::new(&x0, &target, &x0, cfg)?;
    let mut x = x0.clone();
    let mut trace = RefineTrace::new();
    let stop = runner.run(&mut x, Phase::Guided, cfg.max_iters, &mut trace)?;
    trace.stops.push((Phase::Guided, stop));
    if stop != StopReason::ErrorFree {
        let stop = runner.run(&mut x, Phase::Polish, cfg.polish_iters, &mut trace)?;
        trace.stops.push((Phase::Polish, stop));
    }
    runner.finish(&x, &mut trace)?;
    let decoded = decode(&x, code)
        .ok()
        .filter(|d| d.payload == payload && d.report.is_clean());
    Ok(Repair {
        image: x,
        target,
        matching,
        trace,
        decoded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qr::{encode, rasterize};

    fn small() -> CodeConfig {
        CodeConfig {
            version: 1,
            module_px: 6,
            quiet_px: 6,
            ..CodeConfig::default()
        }
    }

    #[test]
    fn objective_vanishes_at_a_perfect_code() {
        let c = small();
        let y = encode(b"hi", &c).unwrap();
        let x = rasterize(&y, &c).to_rgb();
        let e = objective(&x, &y, &x, &RefineConfig::default()).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(e.gradient.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn lambda2_zero_is_pure_srl() {
        let c = small();
        let y = encode(b"hi", &c).unwrap();
        let x = rasterize(&y.inverted(), &c).to_rgb();
        let r = PixelImage::new(x.width(), x.height(), 3, 0.3).unwrap();
        let cfg = RefineConfig {
            lambda2: 0.0,
            ..Default::default()
        };
        let e = objective(&x, &y, &r, &cfg).unwrap();
        assert_eq!(e.value, cfg.lambda1 * e.report.loss);
    }

    #[test]
    fn already_scannable_input_is_left_alone() {
        let c = small();
        let y = encode(b"hi", &c).unwrap();
        let mut x = rasterize(&y, &c).to_rgb();
        // One wrong module: error rate well under τ.
        let (x0, y0) = c.geometry().module_origin(10, 10);
        let v = if y.is_light(10, 10) { 0.0 } else { 1.0 };
        for i in 0..6 {
            for j in 0..6 {
                for ch in 0..3 {
                    x.set(x0 + j, y0 + i, ch, v);
                }
            }
        }
        let (out, trace) = pgd_refine(&x, &y, &x, &RefineConfig::default()).unwrap();
        assert!(trace.gate_never_fired());
        assert_eq!(out, x);
    }

    #[test]
    fn inverted_code_is_driven_to_zero_error() {
        let c = small();
        let y = encode(b"hi", &c).unwrap();
        let x = rasterize(&y.inverted(), &c).to_rgb();
        let cfg = RefineConfig::default();
        let (out, trace) = pgd_refine(&x, &y, &x, &cfg).unwrap();
        let (out, polish) = if trace.final_error_rate > 0.0 {
            mpgd_polish(&out, &y, &x, &cfg).unwrap()
        } else {
            (out, trace)
        };
        assert_eq!(polish.final_error_rate, 0.0);
        assert!(polish.converged);
        assert_eq!(decode(&out, &c).unwrap().payload, b"hi");
    }

    #[test]
    fn plateau_modules_are_nudged() {
        let c = small();
        let y = encode(b"hi", &c).unwrap();
        let x = PixelImage::new(c.image_side(), c.image_side(), 3, 0.5)
            .unwrap()
            .with_grid(c.geometry())
            .unwrap();
        let cfg = RefineConfig {
            max_iters: 5,
            ..Default::default()
        };
        let (_, trace) = pgd_refine(&x, &y, &x, &cfg).unwrap();
        // Gray reads light everywhere, so exactly the dark modules are misread
        // and all sit on the hinge kink.
        let dark = y.cells().iter().filter(|&&l| !l).count();
        assert_eq!(trace.records[0].nudged, dark);
        assert!(
            trace.records.last().unwrap().error_rate < trace.records[0].error_rate || trace.final_error_rate == 0.0
        );
    }

    #[test]
    fn repair_of_a_clean_code_is_identity() {
        let c = CodeConfig::default();
        let y = encode(b"Thanks reviewer!", &c).unwrap();
        let x = rasterize(&y, &c);
        let r = repair(&x, b"Thanks reviewer!", &c, &RefineConfig::default()).unwrap();
        assert_eq!(r.image, x);
        assert_eq!(r.target, y);
        assert!(r.scannable());
        assert!(r.trace.gate_never_fired());
    }

    #[test]
    fn config_validation() {
        assert!(RefineConfig::default().validate().is_ok());
        assert!(RefineConfig {
            tau: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RefineConfig {
            lambda1: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RefineConfig {
            max_iters: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        let fixed = RefineConfig {
            step: StepRule::Fixed { gamma: -1.0 },
            ..Default::default()
        };
        assert!(fixed.validate().is_err());
        assert_eq!(RefineConfig::for_level(EcLevel::H).tau, 0.30);
    }
}
