use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{read_marginal_file, LoadedConfig};
use super::{EXIT_FAILED, EXIT_INFEASIBLE, EXIT_OK};
use crate::dualopt::{self, DualPotential};
use crate::error::{Error, Result};
use crate::instance::Instance;
use crate::lattice::{monroe_horizon, Lattice};
use crate::lp::FarkasCertificate;
use crate::martransport::{self, Side};
use crate::measures::{DiscreteMeasure, PeacockReport, PeacockVector};
use crate::multistop::{self, Coverage, SuperhedgeReport};
use crate::oracles;
use crate::payoffs::{PayoffSpec, Term};
use crate::primal::{self, GapReport, PrimalSolution, WEAK_DUALITY_TOL};
use crate::report::{sha256_hex, write_atomic};
use crate::solve::{self, DualSummary, InstanceSummary, SolveOutcome, SolveReport};
use crate::SOLVER_VERSION;

/// Largest superhedge violation accepted under exhaustive coverage.
pub const SUPERHEDGE_TOL_EXHAUSTIVE: f64 = 1e-8;
/// Same under sampled coverage.
pub const SUPERHEDGE_TOL_SAMPLED: f64 = 1e-6;
/// LP dual objective against the LP primal value, relative to `max(1, |v|)`.
const LP_DUAL_TOL: f64 = 1e-6;
/// Exit-time oracle against the primal value on the same lattice.
const HITTING_TOL: f64 = 1e-6;
/// Relative tolerance of the Azéma–Yor comparison (lattice error included).
const AZEMA_YOR_TOL: f64 = 0.05;
/// Rows listed in the report for a Farkas certificate.
const FARKAS_TOP_ROWS: usize = 10;

/// What a command did.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub code: i32,
    /// One line for the terminal.
    pub summary: String,
    pub report_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSection {
    #[serde(flatten)]
    pub summary: InstanceSummary,
    /// W1 distance moved by snapping, per marginal; empty when not snapped.
    pub snap_error: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonroeCertificate {
    pub eps: f64,
    pub first_abs_moment: f64,
    /// `C` with `P[T_n > C] ≤ eps` for the minimal embedding.
    pub horizon: f64,
    /// `steps · dt` of the lattice, for comparison.
    pub lattice_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarkasSection {
    pub bty: f64,
    pub residual: f64,
    pub valid: bool,
    /// Constraints carrying the largest multipliers, `(row, y)`.
    pub top_rows: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperhedgeSection {
    pub report: SuperhedgeReport,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeakDuality {
    pub primal: f64,
    pub dual: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpDualCheck {
    /// Dual objective at the LP marginal duals, re-evaluated by the
    /// multiple-stopping solver.
    pub value: f64,
    pub primal: f64,
    pub difference: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Certificates {
    pub peacock: Option<PeacockReport>,
    pub monroe: Option<MonroeCertificate>,
    pub farkas: Option<FarkasSection>,
    pub superhedge: Option<SuperhedgeSection>,
    pub weak_duality: Option<WeakDuality>,
    pub lp_dual: Option<LpDualCheck>,
}

/// One reference comparison. `pass` is `None` for skipped oracles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub name: String,
    pub value: Option<f64>,
    pub reference: Option<f64>,
    pub difference: Option<f64>,
    pub tolerance: Option<f64>,
    pub pass: Option<bool>,
    pub note: Option<String>,
    pub details: Option<serde_json::Value>,
}

impl OracleCheck {
    fn skipped(name: &str, why: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value: None,
            reference: None,
            difference: None,
            tolerance: None,
            pass: None,
            note: Some(why.into()),
            details: None,
        }
    }

    fn compare(name: &str, value: f64, reference: f64, tolerance: f64, relative: bool) -> Self {
        let difference = value - reference;
        let scale = if relative {
            reference.abs().max(f64::MIN_POSITIVE)
        } else {
            1.0
        };
        Self {
            name: name.into(),
            value: Some(value),
            reference: Some(reference),
            difference: Some(difference),
            tolerance: Some(tolerance),
            pass: Some(difference.abs() <= tolerance * scale),
            note: relative.then(|| "relative tolerance".to_string()),
            details: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSide {
    pub bound: Option<f64>,
    pub cap_binding: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundsSection {
    pub upper: BoundSide,
    pub lower: BoundSide,
    /// Solve of the negated payoff behind the lower bound.
    pub lower_solve: Option<SolveReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub stage: String,
    pub seconds: f64,
}

/// Contents of `report.json`. Everything except `timings` is a function of
/// the config bytes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub solver_version: String,
    pub config_hash: String,
    /// `pass`, `failed` or `infeasible`.
    pub status: String,
    pub message: Option<String>,
    pub instance: Option<InstanceSection>,
    pub primal: Option<PrimalSolution>,
    pub dual: Option<DualSummary>,
    pub gap: Option<GapReport>,
    pub oracles: Vec<OracleCheck>,
    pub certificates: Certificates,
    pub bounds: Option<BoundsSection>,
    pub timings: Vec<Timing>,
}

impl Report {
    fn new(command: &str, cfg: &LoadedConfig) -> Self {
        Self {
            command: command.into(),
            solver_version: SOLVER_VERSION.into(),
            config_hash: sha256_hex(&cfg.raw),
            status: "pass".into(),
            message: None,
            instance: None,
            primal: None,
            dual: None,
            gap: None,
            oracles: Vec::new(),
            certificates: Certificates::default(),
            bounds: None,
            timings: Vec::new(),
        }
    }

    /// Whether every computed check passed.
    pub fn all_checks_pass(&self) -> bool {
        let c = &self.certificates;
        self.gap.as_ref().is_none_or(|g| g.pass)
            && c.superhedge.as_ref().is_none_or(|s| s.pass)
            && c.weak_duality.as_ref().is_none_or(|w| w.holds)
            && c.lp_dual.as_ref().is_none_or(|l| l.pass)
            && self.oracles.iter().all(|o| o.pass != Some(false))
    }

    fn finish(mut self, dir: &Path, started: Instant) -> Result<Outcome> {
        self.timings.push(Timing {
            stage: "total".into(),
            seconds: started.elapsed().as_secs_f64(),
        });
        let code = if self.status == "infeasible" {
            EXIT_INFEASIBLE
        } else if self.all_checks_pass() {
            EXIT_OK
        } else {
            self.status = "failed".into();
            EXIT_FAILED
        };
        let path = dir.join("report.json");
        let mut bytes = serde_json::to_vec_pretty(&self)?;
        bytes.push(b'\n');
        write_atomic(&path, &bytes)?;
        let value = match (&self.primal, &self.dual) {
            (Some(p), Some(d)) => format!("primal {:.9} dual {:.9}", p.value, d.best_value),
            (Some(p), None) => format!("primal {:.9}", p.value),
            (None, Some(d)) => format!("dual {:.9}", d.best_value),
            (None, None) => String::new(),
        };
        let bounds = self.bounds.as_ref().map_or(String::new(), |b| {
            let f = |s: &BoundSide| s.bound.map_or("n/a".to_string(), |v| format!("{v:.9}"));
            format!(" bounds [{}, {}]", f(&b.lower), f(&b.upper))
        });
        Ok(Outcome {
            code,
            summary: format!(
                "{}: {}{} {value}{bounds} -> {}",
                self.command,
                self.status,
                self.message.as_ref().map_or(String::new(), |m| format!(" ({m})")),
                path.display()
            ),
            report_path: Some(path),
        })
    }
}

struct Prepared {
    lattice: Lattice,
    payoff: PayoffSpec,
    raw: Vec<DiscreteMeasure>,
    peacock: PeacockReport,
}

fn prepare(cfg: &LoadedConfig) -> Result<Prepared> {
    let raw = cfg.measures()?;
    Ok(Prepared {
        lattice: cfg.config.lattice.build()?,
        payoff: cfg.payoff()?,
        peacock: PeacockVector::report(&raw),
        raw,
    })
}

/// Validated (and optionally snapped) marginals, or the reason they admit
/// no embedding.
fn marginals(cfg: &LoadedConfig, prep: &Prepared) -> Result<std::result::Result<(PeacockVector, Vec<f64>), String>> {
    let mu = match PeacockVector::new(prep.raw.clone()) {
        Ok(mu) => mu,
        Err(e @ (Error::NotCentered { .. } | Error::NotConvexOrdered { .. })) => return Ok(Err(e.to_string())),
        Err(e) => return Err(e),
    };
    if !cfg.config.snap {
        return Ok(Ok((mu, Vec::new())));
    }
    let (snapped, errors) = mu.snap_to_grid(prep.lattice.h())?;
    match PeacockVector::new(snapped.measures().to_vec()) {
        Ok(mu) => Ok(Ok((mu, errors))),
        Err(e @ (Error::NotCentered { .. } | Error::NotConvexOrdered { .. })) => {
            Ok(Err(format!("after snapping: {e}")))
        }
        Err(e) => Err(e),
    }
}

/// Instance on the common hull of all supports, usable for marginals that
/// fail validation.
fn hull_instance(lattice: &Lattice, payoff: &PayoffSpec, measures: &[DiscreteMeasure]) -> Result<Instance> {
    let mut levels = Vec::with_capacity(measures.len());
    for (phase, m) in measures.iter().enumerate() {
        let ls = m
            .positions()
            .map(|x| {
                lattice
                    .level_of(x)
                    .ok_or(Error::UnrepresentableAtom { phase, position: x })
            })
            .collect::<Result<Vec<i64>>>()?;
        levels.push(ls);
    }
    let lo = levels.iter().flatten().copied().min().unwrap_or(0).min(0);
    let hi = levels.iter().flatten().copied().max().unwrap_or(0).max(0);
    Instance::new(
        lattice,
        payoff,
        vec![(lo, hi); measures.len()],
        levels.into_iter().map(Some).collect(),
    )
}

fn farkas_section(row_names: &[String], cert: &FarkasCertificate) -> FarkasSection {
    let mut rows: Vec<(usize, f64)> = cert.y.iter().copied().enumerate().filter(|(_, y)| *y != 0.0).collect();
    rows.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
    FarkasSection {
        bty: cert.bty,
        residual: cert.residual,
        valid: cert.is_valid(WEAK_DUALITY_TOL),
        top_rows: rows
            .into_iter()
            .take(FARKAS_TOP_ROWS)
            .map(|(i, y)| (row_names[i].clone(), y))
            .collect(),
    }
}

/// Runs the primal LP on marginals that failed validation to obtain a
/// Farkas certificate.
fn certify_infeasible(report: &mut Report, cfg: &LoadedConfig, prep: &Prepared, why: String) {
    report.status = "infeasible".into();
    let attempt = (|| -> Result<Option<FarkasSection>> {
        let inst = hull_instance(&prep.lattice, &prep.payoff, &prep.raw)?;
        let mu = PeacockVector::unchecked(prep.raw.clone())?;
        let flow = primal::build_primal_lp(&inst, &mu)?;
        match primal::solve_lp(&inst, &flow, &cfg.config.solve.simplex) {
            Err(Error::Infeasible(cert)) => Ok(Some(farkas_section(&flow.lp.row_names, &cert))),
            Err(e) => Err(e),
            Ok(_) => Ok(None),
        }
    })();
    report.message = Some(match attempt {
        Ok(Some(f)) => {
            report.certificates.farkas = Some(f);
            why
        }
        Ok(None) => format!("{why}; the lattice LP was feasible, no certificate"),
        Err(e) => format!("{why}; no certificate: {e}"),
    });
}

fn superhedge_section(r: &SuperhedgeReport) -> SuperhedgeSection {
    let tolerance = match r.coverage {
        Coverage::Exhaustive { .. } => SUPERHEDGE_TOL_EXHAUSTIVE,
        Coverage::Sampled { .. } => SUPERHEDGE_TOL_SAMPLED,
    };
    SuperhedgeSection {
        report: r.clone(),
        tolerance,
        pass: r.max_violation <= tolerance,
    }
}

/// Fills the sections that derive from one embedding solve.
fn record_solve(
    report: &mut Report,
    cfg: &LoadedConfig,
    outcome: &SolveOutcome,
    mu: &PeacockVector,
    snap: Vec<f64>,
) -> Result<()> {
    let r = &outcome.report;
    report.instance = Some(InstanceSection {
        summary: r.instance.clone(),
        snap_error: snap,
    });
    report.primal = r.primal.clone();
    report.dual = r.dual.clone();
    report.gap = r.gap;
    let c = &mut report.certificates;
    let eps = cfg.config.oracles.monroe_eps;
    c.monroe = Some(MonroeCertificate {
        eps,
        first_abs_moment: mu.last().first_abs_moment(),
        horizon: monroe_horizon(mu.last(), eps),
        lattice_time: outcome.instance.lattice.steps as f64 * outcome.instance.lattice.dt,
    });
    c.superhedge = r.superhedge.as_ref().map(superhedge_section);
    if let (Some(p), Some(d)) = (&r.primal, &r.dual) {
        c.weak_duality = Some(WeakDuality {
            primal: p.value,
            dual: d.best_value,
            holds: d.best_value >= p.value - WEAK_DUALITY_TOL,
        });
    }
    if let Some(p) = &r.primal {
        let value = primal::lp_dual_objective(&outcome.instance, p, mu)?;
        let difference = value - p.value;
        c.lp_dual = Some(LpDualCheck {
            value,
            primal: p.value,
            difference,
            pass: difference.abs() <= LP_DUAL_TOL * p.value.abs().max(1.0),
        });
    }
    report
        .timings
        .extend(outcome.timings.iter().map(|(stage, seconds)| Timing {
            stage: stage.clone(),
            seconds: *seconds,
        }));
    Ok(())
}

fn run_oracles(
    cfg: &LoadedConfig,
    prep: &Prepared,
    outcome: &SolveOutcome,
    mu: &PeacockVector,
) -> Result<Vec<OracleCheck>> {
    let oc = &cfg.config.oracles;
    let r = &outcome.report;
    let mut out = Vec::new();
    let single = prep.payoff.arity() == 1 && prep.raw.len() == 1;

    if oc.hitting_time {
        let m = &prep.raw[0];
        let atoms = m.atoms();
        out.push(match (&r.primal, single && atoms.len() == 2) {
            (None, _) => OracleCheck::skipped("hitting_time", "needs the primal solve"),
            (_, false) => OracleCheck::skipped("hitting_time", "needs one two-point marginal"),
            (Some(p), true) => {
                let (a, b) = (-atoms[0].position, atoms[1].position);
                let k = outcome.instance.lattice.level_of(a.max(b)).unwrap_or(0).max(1);
                let steps = oracles::absorption_steps(k, 1e-13);
                match oracles::hitting_time_value(&prep.payoff, a, b, prep.lattice.dt, steps) {
                    Ok(v) => OracleCheck::compare("hitting_time", p.value, v, HITTING_TOL, false),
                    Err(e) => OracleCheck::skipped("hitting_time", e.to_string()),
                }
            }
        });
    }

    if oc.azema_yor {
        let lookback = match &prep.payoff {
            PayoffSpec::Separable { terms, .. } if single && terms.len() == 1 && terms[0].weight > 0.0 => {
                match terms[0].term {
                    Term::Lookback { cap } => Some((terms[0].weight, cap)),
                    _ => None,
                }
            }
            _ => None,
        };
        out.push(match (lookback, r.value()) {
            (None, _) => OracleCheck::skipped("azema_yor", "needs a single positively weighted lookback"),
            (_, None) => OracleCheck::skipped("azema_yor", "nothing solved"),
            (Some((w, cap)), Some(_)) => match oracles::azema_yor_law_of_max(&prep.raw[0]) {
                Ok(law) => {
                    let reference = w * cap.map_or_else(|| law.mean(), |c| law.capped_mean(c));
                    let value = r
                        .dual
                        .as_ref()
                        .map_or_else(|| r.primal.as_ref().map_or(f64::NAN, |p| p.value), |d| d.best_value);
                    OracleCheck::compare("azema_yor", value, reference, AZEMA_YOR_TOL, true)
                }
                Err(e) => OracleCheck::skipped("azema_yor", e.to_string()),
            },
        });
    }

    if let Some(mc) = &oc.monte_carlo {
        out.push(match &r.primal {
            None => OracleCheck::skipped("monte_carlo", "needs the primal solve"),
            Some(p) => {
                let inst = &outcome.instance;
                let rep = oracles::mc_embedding_check(inst, &p.policy(inst), mu, mc.samples, mc.seed)?;
                let pass = rep.truncated == 0 && rep.marginals.iter().all(|m| m.within);
                let worst = rep
                    .marginals
                    .iter()
                    .map(|m| m.w1 - m.band)
                    .fold(f64::NEG_INFINITY, f64::max);
                OracleCheck {
                    name: "monte_carlo".into(),
                    value: Some(worst),
                    reference: Some(0.0),
                    difference: Some(worst),
                    tolerance: Some(0.0),
                    pass: Some(pass),
                    note: Some("value: largest W1 minus its bootstrap band".into()),
                    details: Some(serde_json::to_value(&rep)?),
                }
            }
        });
    }
    Ok(out)
}

fn write_lambda_csv(lam: &DualPotential, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["phase", "strike", "lambda"])?;
    for (k, (s, v)) in lam.strikes.iter().zip(&lam.values).enumerate() {
        for (x, y) in s.iter().zip(v) {
            w.write_record([(k + 1).to_string(), x.to_string(), y.to_string()])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    write_atomic(path, &bytes)
}

fn write_artifacts(dir: &Path, outcome: &SolveOutcome) -> Result<()> {
    let r = &outcome.report;
    if let Some(p) = &r.primal {
        primal::write_law_csv(p, dir.join("stopped_law.csv"))?;
    }
    if r.dual.is_some() {
        dualopt::write_history_csv(&outcome.history, dir.join("dual_history.csv"))?;
    }
    if let Some(lam) = &outcome.best_lambda {
        write_lambda_csv(lam, &dir.join("lambda.csv"))?;
    }
    if let Some(h) = &outcome.hedge {
        multistop::write_hedge_csv(&outcome.instance, h, dir.join("hedge.csv"))?;
    }
    if let Some(s) = &outcome.inner {
        multistop::write_grids_csv(&outcome.instance, s, dir.join("grids.csv"))?;
    }
    Ok(())
}

/// `check-peacock`: pairwise convex-order margins, exit 3 when invalid.
pub fn check_peacock(input: &Path) -> Result<Outcome> {
    let bytes = std::fs::read(input)?;
    let value: serde_json::Value =
        serde_json::from_slice(&bytes).map_err(|e| Error::ConfigInvalid(format!("{}: {e}", input.display())))?;
    let measures = if value.is_array() {
        read_marginal_file(input)?
            .into_iter()
            .map(DiscreteMeasure::new)
            .collect::<Result<Vec<_>>>()?
    } else {
        LoadedConfig::load(input)?.measures()?
    };
    let report = PeacockVector::report(&measures);
    Ok(Outcome {
        code: if report.valid { EXIT_OK } else { EXIT_INFEASIBLE },
        summary: serde_json::to_string_pretty(&report)?,
        report_path: None,
    })
}

/// `solve`: primal, dual, certificates, oracles and CSV artifacts.
pub fn solve(cfg: &LoadedConfig) -> Result<Outcome> {
    let started = Instant::now();
    let dir = cfg.output_dir();
    let mut report = Report::new("solve", cfg);
    let prep = prepare(cfg)?;
    report.certificates.peacock = Some(prep.peacock.clone());
    let (mu, snap) = match marginals(cfg, &prep)? {
        Ok(v) => v,
        Err(why) => {
            certify_infeasible(&mut report, cfg, &prep, why);
            return report.finish(&dir, started);
        }
    };
    let outcome = match solve::solve_embedding(&prep.lattice, &prep.payoff, &mu, &cfg.config.solve) {
        Ok(o) => o,
        Err(Error::Infeasible(cert)) => {
            report.status = "infeasible".into();
            report.message = Some("no embedding on this lattice".into());
            let inst = Instance::for_marginals(&prep.lattice, &prep.payoff, &mu, cfg.config.solve.stop_rule)?;
            let flow = primal::build_primal_lp(&inst, &mu)?;
            report.certificates.farkas = Some(farkas_section(&flow.lp.row_names, &cert));
            return report.finish(&dir, started);
        }
        Err(e) => return Err(e),
    };
    record_solve(&mut report, cfg, &outcome, &mu, snap)?;
    report.oracles = run_oracles(cfg, &prep, &outcome, &mu)?;
    write_artifacts(&dir, &outcome)?;
    report.finish(&dir, started)
}

/// `oracle`: the primal solve against every applicable reference value.
pub fn oracle(cfg: &LoadedConfig) -> Result<Outcome> {
    let started = Instant::now();
    let dir = cfg.output_dir();
    let mut report = Report::new("oracle", cfg);
    let prep = prepare(cfg)?;
    report.certificates.peacock = Some(prep.peacock.clone());
    let (mu, snap) = match marginals(cfg, &prep)? {
        Ok(v) => v,
        Err(why) => {
            certify_infeasible(&mut report, cfg, &prep, why);
            return report.finish(&dir, started);
        }
    };
    let mut settings = cfg.config.solve.clone();
    settings.primal = true;
    settings.dual = false;
    let outcome = solve::solve_embedding(&prep.lattice, &prep.payoff, &mu, &settings)?;
    record_solve(&mut report, cfg, &outcome, &mu, snap)?;
    report.oracles = run_oracles(cfg, &prep, &outcome, &mu)?;
    write_artifacts(&dir, &outcome)?;
    report.finish(&dir, started)
}

/// `bounds`: both sides of the price interval of a transport payoff. The
/// upper solve fills `primal`, `dual` and `gap` exactly as `solve` would.
pub fn bounds(cfg: &LoadedConfig) -> Result<Outcome> {
    let started = Instant::now();
    let dir = cfg.output_dir();
    let tp = cfg
        .config
        .transport
        .as_ref()
        .ok_or_else(|| Error::ConfigInvalid("`bounds` needs a `transport` payoff".into()))?;
    let mut report = Report::new("bounds", cfg);
    let prep = prepare(cfg)?;
    report.certificates.peacock = Some(prep.peacock.clone());
    let (mu, snap) = match marginals(cfg, &prep)? {
        Ok(v) => v,
        Err(why) => {
            certify_infeasible(&mut report, cfg, &prep, why);
            return report.finish(&dir, started);
        }
    };
    let settings = &cfg.config.solve;
    let (upper, outcome) = martransport::price_bound(tp, &mu, &prep.lattice, Side::Upper, settings)?;
    record_solve(&mut report, cfg, &outcome, &mu, snap)?;
    write_artifacts(&dir, &outcome)?;

    let (lower, lower_solve) = match martransport::price_bound(tp, &mu, &prep.lattice, Side::Lower, settings) {
        Ok((b, o)) => {
            report.timings.extend(o.timings.iter().map(|(s, t)| Timing {
                stage: format!("lower_{s}"),
                seconds: *t,
            }));
            if let Some(g) = &b.solve.gap {
                if !g.pass {
                    report.message = Some("lower-bound duality gap above tolerance".into());
                }
            }
            let side = BoundSide {
                bound: Some(b.bound),
                cap_binding: b.cap_binding,
                error: None,
            };
            (side, Some(b.solve))
        }
        Err(e @ Error::CapRequired(_)) => (
            BoundSide {
                bound: None,
                cap_binding: false,
                error: Some(e.to_string()),
            },
            None,
        ),
        Err(e) => return Err(e),
    };
    let lower_fails = lower_solve
        .as_ref()
        .and_then(|s| s.gap.as_ref())
        .is_some_and(|g| !g.pass)
        || lower_solve
            .as_ref()
            .and_then(|s| s.superhedge.as_ref())
            .is_some_and(|s| !superhedge_section(s).pass);
    report.bounds = Some(BoundsSection {
        upper: BoundSide {
            bound: Some(upper.bound),
            cap_binding: upper.cap_binding,
            error: None,
        },
        lower,
        lower_solve,
    });
    if lower_fails {
        report.oracles.push(OracleCheck {
            name: "lower_bound_certificates".into(),
            value: None,
            reference: None,
            difference: None,
            tolerance: None,
            pass: Some(false),
            note: Some("gap or superhedge check of the lower solve failed".into()),
            details: None,
        });
    }
    report.finish(&dir, started)
}

/// `export-lp`: the primal LP in CPLEX LP format.
pub fn export_lp(cfg: &LoadedConfig, output: Option<&Path>) -> Result<Outcome> {
    let prep = prepare(cfg)?;
    let (inst, mu) = match marginals(cfg, &prep)? {
        Ok((mu, _)) => (
            Instance::for_marginals(&prep.lattice, &prep.payoff, &mu, cfg.config.solve.stop_rule)?,
            mu,
        ),
        Err(why) => {
            log::warn!("{why}; exporting the LP on the hull of all supports");
            (
                hull_instance(&prep.lattice, &prep.payoff, &prep.raw)?,
                PeacockVector::unchecked(prep.raw.clone())?,
            )
        }
    };
    let flow = primal::build_primal_lp(&inst, &mu)?;
    let mut bytes = Vec::new();
    primal::export_lp(&flow, &mut bytes)?;
    let path = output.map_or_else(|| cfg.output_dir().join("problem.lp"), Path::to_path_buf);
    write_atomic(&path, &bytes)?;
    Ok(Outcome {
        code: EXIT_OK,
        summary: format!(
            "export-lp: {} rows, {} columns, {} nonzeros -> {}",
            flow.lp.num_rows(),
            flow.lp.num_columns(),
            flow.lp.nonzeros(),
            path.display()
        ),
        report_path: None,
    })
}
