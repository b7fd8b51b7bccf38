//! Scenario execution: grid expansion, per-point solving, CSV/manifest/plot
//! assembly.
//!
//! Grid points are independent and run in parallel; output rows are emitted
//! in deterministic (mode, grid, transmitter) order regardless of which task
//! finishes first, so a seeded scenario always produces byte-identical CSVs.

use anyhow::{anyhow, Result};
use rayon::prelude::*;
use serde_json::json;
use std::path::Path;
use std::time::Instant;

use rfbs_core::gne::{solve_gne, GneConfig, GneError};
use rfbs_core::model::{
    detection_probs, sg_revenue, st_payoff, JointFollowerStrategy, LeaderStrategy,
    NetworkParams, TransmissionMode,
};
use rfbs_core::stackelberg::{solve_se, SeConfig, SeResult, SeTermination};

use crate::config::{Scenario, SweepAxis};
use crate::plot;
use crate::topology::{generate_topology, RNG_ALGORITHM};

/// Full-precision float formatting for CSV cells: 17 significant digits.
pub fn fmt17(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.16e}")
    }
}

fn parse_mode(s: &str) -> Result<TransmissionMode> {
    Ok(match s {
        "hybrid" => TransmissionMode::Hybrid,
        "harvest_only" => TransmissionMode::HarvestOnly,
        "backscatter_only" => TransmissionMode::BackscatterOnly,
        other => return Err(anyhow!("unknown mode {other:?}")),
    })
}

#[derive(Debug, Clone)]
pub struct StRow {
    pub tau_h: f64,
    pub tau_t: f64,
    pub tau_b: f64,
    pub theta_k: f64,
    pub throughput: f64,
}

#[derive(Debug, Clone)]
pub struct PointResult {
    pub mode: String,
    pub value: f64,
    pub s0: Option<LeaderStrategy>,
    pub revenue: f64,
    pub rows: Vec<StRow>,
    pub iterations: usize,
    pub status: String,
    pub duration_ms: u128,
}

impl PointResult {
    fn failed(mode: &str, value: f64, k: usize, err: &str) -> PointResult {
        PointResult {
            mode: mode.into(),
            value,
            s0: None,
            revenue: f64::NAN,
            rows: vec![
                StRow {
                    tau_h: f64::NAN,
                    tau_t: f64::NAN,
                    tau_b: f64::NAN,
                    theta_k: f64::NAN,
                    throughput: f64::NAN,
                };
                k
            ],
            iterations: 0,
            status: format!("error: {}", err.replace([',', '\n'], ";")),
            duration_ms: 0,
        }
    }

    pub fn mean_payoff(&self) -> f64 {
        let n = self.rows.len().max(1) as f64;
        self.rows.iter().map(|r| r.theta_k).sum::<f64>() / n
    }

    pub fn mean_throughput(&self) -> f64 {
        let n = self.rows.len().max(1) as f64;
        self.rows.iter().map(|r| r.throughput).sum::<f64>() / n
    }
}

/// Expected bits per slot delivered by transmitter `k`: the valuation part
/// of the payoff with the interference charge added back.
fn throughput_of(
    s0: &LeaderStrategy,
    joint: &JointFollowerStrategy,
    k: usize,
    p: &NetworkParams,
) -> Result<f64> {
    let theta = st_payoff(&joint.entries[k], s0, k, p).map_err(|e| anyhow!(e))?;
    let det = detection_probs(s0.tau_s, s0.eps, p).map_err(|e| anyhow!(e))?;
    let charge = s0.alpha * p.p1 * (1.0 - det.pd) * joint.entries[k].tau_t;
    Ok((theta + charge) / p.nu_value)
}

fn rows_at(
    s0: &LeaderStrategy,
    joint: &JointFollowerStrategy,
    p: &NetworkParams,
) -> Result<Vec<StRow>> {
    (0..p.num_st())
        .map(|k| {
            Ok(StRow {
                tau_h: joint.entries[k].tau_h(s0, p),
                tau_t: joint.entries[k].tau_t,
                tau_b: joint.entries[k].tau_b,
                theta_k: st_payoff(&joint.entries[k], s0, k, p).map_err(|e| anyhow!(e))?,
                throughput: throughput_of(s0, joint, k, p)?,
            })
        })
        .collect()
}

fn termination_name(t: SeTermination) -> &'static str {
    match t {
        SeTermination::Converged => "converged",
        SeTermination::NoDescentDirection => "no_descent",
        SeTermination::MaxSteps => "max_steps",
    }
}

/// Latin-hypercube starting points over (alpha, tau_s, eps), stratified per
/// axis and shuffled with a deterministic stream.
fn multistart_points(
    sc: &Scenario,
    p: &NetworkParams,
    n: usize,
    task_tag: u64,
) -> Vec<LeaderStrategy> {
    use rand::seq::SliceRandom;
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
        sc.seed.wrapping_mul(0x9E3779B97F4A7C15) ^ task_tag,
    );
    let mut strata: Vec<Vec<usize>> = (0..3).map(|_| (0..n).collect()).collect();
    for s in &mut strata {
        s.shuffle(&mut rng);
    }
    let mut out = Vec::new();
    for i in 0..n {
        let u: Vec<f64> = (0..3)
            .map(|d| (strata[d][i] as f64 + rng.gen::<f64>()) / n as f64)
            .collect();
        let s0 = LeaderStrategy {
            alpha: u[0] * 4.0 * sc.alpha0,
            tau_s: (0.01 + 0.49 * u[1]) * p.t_slot,
            eps: p.eps_lo + u[2] * (p.eps_hi - p.eps_lo),
        };
        if s0.is_feasible(p) {
            out.push(s0);
        }
    }
    out
}

fn best_se_run(
    sc: &Scenario,
    p: &NetworkParams,
    mode: TransmissionMode,
    task_tag: u64,
) -> Result<SeResult> {
    let s0 = sc.initial_leader(p)?;
    let mut cfg = SeConfig::default_for(p, s0);
    cfg.max_steps = sc.max_steps;
    cfg.beta_max = sc.beta_max;
    cfg.chi0 = sc.chi0;
    cfg.gne.transmission = mode;
    let mut starts = vec![s0];
    starts.extend(multistart_points(sc, p, sc.multistart, task_tag));
    let mut best: Option<SeResult> = None;
    for start in starts {
        let mut c = cfg.clone();
        c.initial_s0 = start;
        c.alpha_scale = start.alpha.max(1.0);
        let run = solve_se(&c, p)?;
        let rev = *run.revenue_trace.last().unwrap_or(&f64::NEG_INFINITY);
        if best
            .as_ref()
            .map_or(true, |b| rev > *b.revenue_trace.last().unwrap())
        {
            best = Some(run);
        }
    }
    best.ok_or_else(|| anyhow!("no feasible starting point"))
}

fn solve_point(
    sc: &Scenario,
    mode_name: &str,
    value: f64,
    task_tag: u64,
) -> Result<PointResult> {
    let mode = parse_mode(mode_name)?;
    let k = if sc.axis == SweepAxis::K {
        value as usize
    } else {
        sc.k
    };
    let (h_k, h_pt_k) = match (&sc.explicit_h_k, &sc.explicit_h_pt_k) {
        (Some(h), Some(hp)) => (h.clone(), hp.clone()),
        (Some(h), None) => (h.clone(), vec![1e-3; h.len()]),
        _ => {
            let t = generate_topology(k, &sc.topology, sc.seed);
            (t.h_k, t.h_pt_k)
        }
    };
    let mut sc_point = sc.clone();
    if sc.axis == SweepAxis::P1 {
        sc_point.p1 = value;
        sc_point.p0 = 1.0 - value;
    }
    let p = sc_point.network_params(h_k, h_pt_k)?;

    if sc.axis.reoptimizes_leader() {
        let run = best_se_run(&sc_point, &p, mode, task_tag)?;
        let rows = rows_at(&run.s0_star, &run.followers_star.strategy, &p)?;
        Ok(PointResult {
            mode: mode_name.into(),
            value,
            revenue: *run.revenue_trace.last().unwrap(),
            s0: Some(run.s0_star),
            rows,
            iterations: run.steps,
            status: termination_name(run.termination).into(),
            duration_ms: 0,
        })
    } else {
        let mut s0 = sc_point.initial_leader(&p)?;
        match sc.axis {
            SweepAxis::Alpha => s0.alpha = value,
            SweepAxis::TauS => s0.tau_s = value,
            SweepAxis::Eps => s0.eps = value,
            _ => unreachable!(),
        }
        if !s0.is_feasible(&p) {
            return Ok(PointResult::failed(
                mode_name,
                value,
                p.num_st(),
                "leader point infeasible",
            ));
        }
        let mut cfg = GneConfig::default_for(&p);
        cfg.transmission = mode;
        let (joint, iters, status) = match solve_gne(&cfg, &s0, &p) {
            Ok(g) => (g.strategy, g.iterations, "converged".to_string()),
            Err(GneError::NotConverged {
                iterations, last, ..
            }) => (last, iterations, "not_converged".to_string()),
            Err(e) => return Ok(PointResult::failed(mode_name, value, p.num_st(), &e.to_string())),
        };
        let rows = rows_at(&s0, &joint, &p)?;
        Ok(PointResult {
            mode: mode_name.into(),
            value,
            revenue: sg_revenue(&s0, &joint, &p).map_err(|e| anyhow!(e))?,
            s0: Some(s0),
            rows,
            iterations: iters,
            status,
            duration_ms: 0,
        })
    }
}

#[derive(Debug)]
pub struct RunArtifacts {
    pub results_csv: String,
    pub aggregate_csv: String,
    pub manifest: serde_json::Value,
    /// (file name, svg body) pairs.
    pub plots: Vec<(String, String)>,
    pub points: Vec<PointResult>,
}

pub fn run_scenario(sc: &Scenario) -> Result<RunArtifacts> {
    let tasks: Vec<(usize, String, f64)> = sc
        .modes
        .iter()
        .enumerate()
        .flat_map(|(mi, m)| {
            sc.grid
                .iter()
                .enumerate()
                .map(move |(gi, v)| (mi * sc.grid.len() + gi, m.clone(), *v))
        })
        .collect();

    let mut points: Vec<(usize, PointResult)> = tasks
        .par_iter()
        .map(|(idx, mode, value)| {
            let started = Instant::now();
            let mut res = solve_point(sc, mode, *value, *idx as u64).unwrap_or_else(|e| {
                PointResult::failed(mode, *value, sc.k, &e.to_string())
            });
            res.duration_ms = started.elapsed().as_millis();
            (*idx, res)
        })
        .collect();
    points.sort_by_key(|(idx, _)| *idx);
    let points: Vec<PointResult> = points.into_iter().map(|(_, r)| r).collect();

    let axis = sc.axis.name();
    let mut results = String::from(
        "mode,sweep_axis,sweep_value,k,tau_h,tau_t,tau_b,theta_k,throughput,\
         alpha_star,tau_s_star,eps_star,theta_0,iterations,status\n",
    );
    for pr in &points {
        let (a, ts, eps) = pr
            .s0
            .map(|s| (s.alpha, s.tau_s, s.eps))
            .unwrap_or((f64::NAN, f64::NAN, f64::NAN));
        for (k, row) in pr.rows.iter().enumerate() {
            results.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                pr.mode,
                axis,
                fmt17(pr.value),
                k,
                fmt17(row.tau_h),
                fmt17(row.tau_t),
                fmt17(row.tau_b),
                fmt17(row.theta_k),
                fmt17(row.throughput),
                fmt17(a),
                fmt17(ts),
                fmt17(eps),
                fmt17(pr.revenue),
                pr.iterations,
                pr.status
            ));
        }
    }

    let mut aggregate = String::from(
        "mode,sweep_axis,sweep_value,mean_payoff,mean_throughput,theta_0,\
         alpha_star,tau_s_star,eps_star,status\n",
    );
    for pr in &points {
        let (a, ts, eps) = pr
            .s0
            .map(|s| (s.alpha, s.tau_s, s.eps))
            .unwrap_or((f64::NAN, f64::NAN, f64::NAN));
        aggregate.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            pr.mode,
            axis,
            fmt17(pr.value),
            fmt17(pr.mean_payoff()),
            fmt17(pr.mean_throughput()),
            fmt17(pr.revenue),
            fmt17(a),
            fmt17(ts),
            fmt17(eps),
            pr.status
        ));
    }

    let series = |f: &dyn Fn(&PointResult) -> f64| -> Vec<(String, Vec<(f64, f64)>)> {
        sc.modes
            .iter()
            .map(|m| {
                (
                    m.clone(),
                    points
                        .iter()
                        .filter(|p| &p.mode == m)
                        .map(|p| (p.value, f(p)))
                        .collect(),
                )
            })
            .collect()
    };
    let plots = vec![
        (
            "payoff.svg".to_string(),
            plot::line_plot("mean transmitter payoff", axis, &series(&|p| p.mean_payoff())),
        ),
        (
            "throughput.svg".to_string(),
            plot::line_plot("mean throughput (bit/slot)", axis, &series(&|p| {
                p.mean_throughput()
            })),
        ),
        (
            "revenue.svg".to_string(),
            plot::line_plot("gateway revenue", axis, &series(&|p| p.revenue)),
        ),
        (
            "price.svg".to_string(),
            plot::line_plot("equilibrium price", axis, &series(&|p| {
                p.s0.map(|s| s.alpha).unwrap_or(f64::NAN)
            })),
        ),
    ];

    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "rng": RNG_ALGORITHM,
        "seed": sc.seed,
        "scenario": sc,
        "not_from_paper": sc.not_from_paper,
        "runs": points.iter().map(|p| json!({
            "mode": p.mode,
            "sweep_value": p.value,
            "status": p.status,
            "iterations": p.iterations,
            "duration_ms": p.duration_ms,
        })).collect::<Vec<_>>(),
    });

    Ok(RunArtifacts {
        results_csv: results,
        aggregate_csv: aggregate,
        manifest,
        plots,
        points,
    })
}

pub fn write_artifacts(art: &RunArtifacts, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("results.csv"), &art.results_csv)?;
    std::fs::write(dir.join("aggregate.csv"), &art.aggregate_csv)?;
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&art.manifest)?,
    )?;
    for (name, body) in &art.plots {
        std::fs::write(dir.join(name), body)?;
    }
    Ok(())
}

/// Re-checks every scenario invariant and echoes resolved values.
pub fn validate_report(sc: &Scenario) -> Result<String> {
    let k = sc.k;
    let (h_k, h_pt_k) = match (&sc.explicit_h_k, &sc.explicit_h_pt_k) {
        (Some(h), Some(hp)) => (h.clone(), hp.clone()),
        (Some(h), None) => (h.clone(), vec![1e-3; h.len()]),
        _ => {
            let t = generate_topology(k, &sc.topology, sc.seed);
            (t.h_k, t.h_pt_k)
        }
    };
    let p = sc.network_params(h_k, h_pt_k)?;
    let s0 = sc.initial_leader(&p)?;
    let mut out = String::new();
    out.push_str(&format!("K                 = {}\n", p.num_st()));
    out.push_str(&format!("p0 / p1           = {} / {}\n", p.p0, p.p1));
    out.push_str(&format!("slot length       = {} s\n", p.t_slot));
    out.push_str(&format!("bandwidth         = {} Hz\n", p.w));
    out.push_str(&format!("PT power          = {} W\n", p.p_pt));
    out.push_str(&format!("noise xi^2        = {} (normalized)\n", p.xi2));
    out.push_str(&format!("SNR gamma         = {} (linear)\n", p.gamma));
    out.push_str(&format!("circuit power     = {:e} W\n", p.pc));
    out.push_str(&format!("secondary noise   = {:e} W\n", p.sigma2_k[0]));
    out.push_str(&format!("eps bounds        = [{}, {}]\n", p.eps_lo, p.eps_hi));
    out.push_str(&format!("miss cap          = {}\n", p.pbar_m));
    out.push_str(&format!("backscatter rate  = {} bit/s\n", p.rbar_b_k[0]));
    out.push_str(&format!(
        "initial leader    = (alpha {:e}, tau_s {}, eps {:e})\n",
        s0.alpha, s0.tau_s, s0.eps
    ));
    for w in &sc.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    for f in &sc.not_from_paper {
        out.push_str(&format!("defaulted without a source: {f}\n"));
    }
    out.push_str("ok\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Scenario, ScenarioFile};

    fn tiny_scenario(extra: &str) -> Scenario {
        let text = format!(
            "seed = 3\nmodes = [\"backscatter_only\"]\n[network]\nk = 1\n{extra}"
        );
        let file: ScenarioFile = toml::from_str(&text).unwrap();
        Scenario::resolve(file).unwrap()
    }

    #[test]
    fn backscatter_only_single_point_has_zero_revenue() {
        let sc = tiny_scenario("");
        let art = run_scenario(&sc).unwrap();
        assert_eq!(art.points.len(), 1);
        assert_eq!(art.points[0].rows.len(), 1);
        assert_eq!(art.points[0].revenue, 0.0);
        let lines: Vec<&str> = art.results_csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("mode,sweep_axis,sweep_value,k,"));
        assert!(lines[1].starts_with("backscatter_only,none,"));
    }

    #[test]
    fn rerun_is_byte_identical() {
        let sc = tiny_scenario("");
        let a = run_scenario(&sc).unwrap();
        let b = run_scenario(&sc).unwrap();
        assert_eq!(a.results_csv, b.results_csv);
        assert_eq!(a.aggregate_csv, b.aggregate_csv);
    }

    #[test]
    fn fmt17_has_full_roundtrip_precision() {
        for v in [1.0, -0.1, 3.0e8, 1.2345678901234567e-7, f64::MIN_POSITIVE] {
            let s = fmt17(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
        assert_eq!(fmt17(f64::NAN), "nan");
    }

    #[test]
    fn every_mode_appears_once_per_grid_point() {
        let text = "seed = 1\nmodes = [\"hybrid\", \"harvest_only\"]\n\
                    [network]\nk = 1\n\
                    [sweep]\naxis = \"alpha\"\nfrom = 0.0\nto = 2e8\nsteps = 3\n";
        let file: ScenarioFile = toml::from_str(text).unwrap();
        let sc = Scenario::resolve(file).unwrap();
        let art = run_scenario(&sc).unwrap();
        assert_eq!(art.points.len(), 6);
        for m in &sc.modes {
            for v in &sc.grid {
                assert_eq!(
                    art.points
                        .iter()
                        .filter(|p| &p.mode == m && p.value == *v)
                        .count(),
                    1
                );
            }
        }
    }

    #[test]
    fn plotted_points_match_aggregate_cells() {
        let sc = tiny_scenario("");
        let art = run_scenario(&sc).unwrap();
        let payoff_cell = art
            .aggregate_csv
            .lines()
            .nth(1)
            .unwrap()
            .split(',')
            .nth(3)
            .unwrap()
            .to_string();
        let plot = &art.plots.iter().find(|(n, _)| n == "payoff.svg").unwrap().1;
        assert!(
            plot.contains(&payoff_cell),
            "plot must embed the exact CSV value {payoff_cell}"
        );
    }
}
