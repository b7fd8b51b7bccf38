//! Scenario file ingestion: TOML parsing, unit conversion, defaulting, and
//! validation with warnings.
//!
//! Power-like quantities are accepted either in watts or, with a `_dbm`
//! suffix, in dBm; dB fields likewise. Every default not fixed by the
//! reference parameter table is labeled `not_from_paper` in the manifest so
//! a run is always auditable.

use anyhow::{anyhow, bail, Context, Result};
use rfbs_core::model::{detection_probs, LeaderStrategy, NetworkParams};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn pick_unit(name: &str, plain: Option<f64>, dbm: Option<f64>) -> Result<Option<f64>> {
    match (plain, dbm) {
        (Some(_), Some(_)) => bail!("{name} given both in watts and in dBm"),
        (Some(w), None) => Ok(Some(w)),
        (None, Some(d)) => Ok(Some(dbm_to_watts(d))),
        (None, None) => Ok(None),
    }
}

// ---------------------------------------------------------------------------
// Raw file schema
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub seed: Option<u64>,
    pub out_dir: Option<String>,
    /// Subset of {hybrid, harvest_only, backscatter_only}.
    pub modes: Option<Vec<String>>,
    pub multistart: Option<usize>,
    /// Suppresses the documented unit-ambiguity warnings.
    pub ack_unit_warnings: Option<bool>,
    pub network: Option<NetworkSection>,
    pub topology: Option<TopologySection>,
    pub leader: Option<LeaderSection>,
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub k: Option<usize>,
    pub p0: Option<f64>,
    pub p1: Option<f64>,
    pub t_slot_s: Option<f64>,
    pub bandwidth_hz: Option<f64>,
    pub p_pt_w: Option<f64>,
    pub p_pt_dbm: Option<f64>,
    /// Detector noise variance (dimensionless in the normalized model).
    pub xi2: Option<f64>,
    pub gamma: Option<f64>,
    pub gamma_db: Option<f64>,
    pub h_pt_sg: Option<f64>,
    pub delta: Option<f64>,
    pub nu: Option<f64>,
    pub pc_w: Option<f64>,
    pub pc_dbm: Option<f64>,
    pub pbar_m: Option<f64>,
    pub eps_lo: Option<f64>,
    pub eps_hi: Option<f64>,
    pub sigma2_w: Option<f64>,
    pub sigma2_dbm: Option<f64>,
    pub kappa: Option<f64>,
    /// Fixed backscatter bitrate, bit/s.
    pub rbar_b: Option<f64>,
    /// Explicit per-transmitter gains; mutually exclusive with [topology].
    pub h_k: Option<Vec<f64>>,
    pub h_pt_k: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    /// Upper end of the ST placement distance band, meters.
    pub d_max_m: Option<f64>,
    /// Path-loss exponent.
    pub pathloss_exp: Option<f64>,
    /// PT-to-ST distance band, meters.
    pub pt_dist_m: Option<[f64; 2]>,
    /// Lognormal shadowing sigma in dB; zero disables shadowing.
    pub shadowing_db: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderSection {
    pub alpha0: Option<f64>,
    pub tau_s0: Option<f64>,
    pub eps0: Option<f64>,
    pub max_steps: Option<usize>,
    pub beta_max: Option<f64>,
    pub chi0: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: Option<String>,
    pub from: Option<f64>,
    pub to: Option<f64>,
    pub steps: Option<usize>,
}

// ---------------------------------------------------------------------------
// Resolved scenario
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    None,
    K,
    P1,
    Alpha,
    TauS,
    Eps,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => SweepAxis::None,
            "K" | "k" => SweepAxis::K,
            "p1" => SweepAxis::P1,
            "alpha" => SweepAxis::Alpha,
            "tau_s" => SweepAxis::TauS,
            "eps" => SweepAxis::Eps,
            other => bail!("unknown sweep axis {other:?}"),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::None => "none",
            SweepAxis::K => "K",
            SweepAxis::P1 => "p1",
            SweepAxis::Alpha => "alpha",
            SweepAxis::TauS => "tau_s",
            SweepAxis::Eps => "eps",
        }
    }

    /// Axes rerunning the full leader search per grid point; the remaining
    /// ones pin the leader coordinate and only re-solve the followers.
    pub fn reoptimizes_leader(&self) -> bool {
        matches!(self, SweepAxis::None | SweepAxis::K | SweepAxis::P1)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TopologySpec {
    pub d_max_m: f64,
    pub pathloss_exp: f64,
    pub pt_dist_m: [f64; 2],
    pub shadowing_db: f64,
}

impl Default for TopologySpec {
    fn default() -> Self {
        TopologySpec {
            d_max_m: 30.0,
            pathloss_exp: 3.5,
            // The PT-to-ST distance band is not specified anywhere; this
            // default is recorded in the manifest as such.
            pt_dist_m: [5.0, 15.0],
            shadowing_db: 0.0,
        }
    }
}

/// Scalar (per-network) parameters plus either explicit gain arrays or a
/// topology generator spec.
#[derive(Debug, Clone, Serialize)]
pub struct Scenario {
    pub seed: u64,
    pub out_dir: String,
    pub modes: Vec<String>,
    pub multistart: usize,
    pub k: usize,
    pub p0: f64,
    pub p1: f64,
    pub t_slot: f64,
    pub w: f64,
    pub p_pt: f64,
    pub xi2: f64,
    pub gamma: f64,
    pub h_pt_sg: f64,
    pub delta: f64,
    pub nu: f64,
    pub pc: f64,
    pub pbar_m: f64,
    pub eps_lo: f64,
    pub eps_hi: f64,
    pub sigma2: f64,
    pub kappa: f64,
    pub rbar_b: f64,
    pub explicit_h_k: Option<Vec<f64>>,
    pub explicit_h_pt_k: Option<Vec<f64>>,
    pub topology: TopologySpec,
    pub alpha0: f64,
    pub tau_s0: f64,
    pub eps0: Option<f64>,
    pub max_steps: usize,
    pub beta_max: f64,
    pub chi0: f64,
    pub axis: SweepAxis,
    pub grid: Vec<f64>,
    /// Fields whose defaults have no source in the reference table.
    pub not_from_paper: Vec<String>,
    pub warnings: Vec<String>,
}

impl Scenario {
    pub fn from_file(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let file: ScenarioFile = toml::from_str(&text)
            .with_context(|| format!("parsing {}", path.display()))?;
        Scenario::resolve(file)
    }

    pub fn resolve(file: ScenarioFile) -> Result<Scenario> {
        let n = file.network.unwrap_or_default();
        let mut not_from_paper = Vec::new();
        let mut warnings = Vec::new();

        let p0 = n.p0.unwrap_or(0.6);
        let p1 = n.p1.unwrap_or(1.0 - p0);
        if (p0 + p1 - 1.0).abs() > 1e-12 {
            bail!("p0 + p1 = {} must equal 1", p0 + p1);
        }
        let gamma = match (n.gamma, n.gamma_db) {
            (Some(_), Some(_)) => bail!("gamma given both linear and in dB"),
            (Some(g), None) => g,
            (None, Some(db)) => db_to_linear(db),
            (None, None) => db_to_linear(3.0),
        };
        let p_pt = pick_unit("p_pt", n.p_pt_w, n.p_pt_dbm)?.unwrap_or(10.0);
        let pc = pick_unit("pc", n.pc_w, n.pc_dbm)?.unwrap_or(dbm_to_watts(-35.0));
        let sigma2 = pick_unit("sigma2", n.sigma2_w, n.sigma2_dbm)?.unwrap_or(dbm_to_watts(-40.0));
        let xi2 = n.xi2.unwrap_or(0.01);

        let ack = file.ack_unit_warnings.unwrap_or(false);
        if !ack {
            warnings.push(
                "xi2 and eps are treated as normalized (dimensionless) detector levels, \
                 not watts; set ack_unit_warnings = true to silence"
                    .into(),
            );
            warnings.push(
                "the rate expression uses the normalized circuit term 1 - Pc + h*P/sigma2; \
                 Pc >= 1 W would make idle-slot rates negative; set ack_unit_warnings = true \
                 to silence"
                    .into(),
            );
        }
        if 1.0 - pc <= 0.0 {
            warnings.push(format!("1 - Pc = {} <= 0: active rates are infeasible", 1.0 - pc));
        }

        let eps_lo = n.eps_lo.unwrap_or(0.5 * xi2);
        let eps_hi = n.eps_hi.unwrap_or(2.0 * (1.0 + gamma) * xi2);
        if !(eps_lo < eps_hi) {
            bail!("eps_lo = {eps_lo} must be strictly below eps_hi = {eps_hi}");
        }
        if n.eps_lo.is_none() {
            not_from_paper.push("eps_lo".into());
        }
        if n.eps_hi.is_none() {
            not_from_paper.push("eps_hi".into());
        }
        let pbar_m = n.pbar_m.unwrap_or(0.1);
        if n.pbar_m.is_none() {
            not_from_paper.push("pbar_m".into());
        }
        let rbar_b = n.rbar_b.unwrap_or(1e5);
        if n.rbar_b.is_none() {
            not_from_paper.push("rbar_b".into());
        }

        let topo = file.topology;
        let explicit = n.h_k.is_some();
        if explicit && topo.is_some() {
            bail!("give either explicit h_k arrays or a [topology] generator, not both");
        }
        if !explicit && topo.is_some() && file.seed.is_none() {
            bail!("a seed is required whenever the topology generator is used");
        }
        let topology = match &topo {
            None => TopologySpec::default(),
            Some(t) => {
                let d = TopologySpec::default();
                TopologySpec {
                    d_max_m: t.d_max_m.unwrap_or(d.d_max_m),
                    pathloss_exp: t.pathloss_exp.unwrap_or(d.pathloss_exp),
                    pt_dist_m: t.pt_dist_m.unwrap_or(d.pt_dist_m),
                    shadowing_db: t.shadowing_db.unwrap_or(d.shadowing_db),
                }
            }
        };
        if topo.as_ref().map_or(true, |t| t.pt_dist_m.is_none()) {
            not_from_paper.push("topology.pt_dist_m".into());
        }
        if topology.pt_dist_m[0] <= 0.0 || topology.pt_dist_m[0] > topology.pt_dist_m[1] {
            bail!("pt_dist_m band {:?} must be positive and ordered", topology.pt_dist_m);
        }

        let k = n.k.or(n.h_k.as_ref().map(Vec::len)).unwrap_or(1);
        if k == 0 {
            bail!("K must be at least 1");
        }
        if let Some(h) = &n.h_k {
            if h.len() != k {
                bail!("h_k has {} entries for K = {k}", h.len());
            }
        }
        if let Some(h) = &n.h_pt_k {
            if h.len() != k {
                bail!("h_pt_k has {} entries for K = {k}", h.len());
            }
            if n.h_k.is_none() {
                bail!("h_pt_k without h_k");
            }
        }

        let leader = file.leader.unwrap_or_default();
        let sweep = file.sweep.unwrap_or_default();
        let axis = SweepAxis::parse(sweep.axis.as_deref().unwrap_or("none"))?;
        let grid = build_grid(axis, &sweep)?;

        let modes = file.modes.unwrap_or_else(|| vec!["hybrid".into()]);
        for m in &modes {
            if !matches!(m.as_str(), "hybrid" | "harvest_only" | "backscatter_only") {
                bail!("unknown mode {m:?}");
            }
        }

        Ok(Scenario {
            seed: file.seed.unwrap_or(0),
            out_dir: file.out_dir.unwrap_or_else(|| "out".into()),
            modes,
            multistart: file.multistart.unwrap_or(0),
            k,
            p0,
            p1,
            t_slot: n.t_slot_s.unwrap_or(1.0),
            w: n.bandwidth_hz.unwrap_or(1e6),
            p_pt,
            xi2,
            gamma,
            // Tied to the detector SNR definition gamma = h * P_PT / xi^2.
            h_pt_sg: n.h_pt_sg.unwrap_or(gamma * xi2 / p_pt),
            delta: n.delta.unwrap_or(0.6),
            nu: n.nu.unwrap_or(1.0),
            pc,
            pbar_m,
            eps_lo,
            eps_hi,
            sigma2,
            kappa: n.kappa.unwrap_or(0.6),
            rbar_b,
            explicit_h_k: n.h_k,
            explicit_h_pt_k: n.h_pt_k,
            topology,
            alpha0: leader.alpha0.unwrap_or(1e8),
            tau_s0: leader.tau_s0.unwrap_or(0.05),
            eps0: leader.eps0,
            max_steps: leader.max_steps.unwrap_or(200),
            beta_max: leader.beta_max.unwrap_or(0.1),
            chi0: leader.chi0.unwrap_or(1e-6),
            axis,
            grid,
            not_from_paper,
            warnings,
        })
    }

    /// Network parameters for `k` transmitters with the given gain arrays.
    pub fn network_params(&self, h_k: Vec<f64>, h_pt_k: Vec<f64>) -> Result<NetworkParams> {
        let k = h_k.len();
        NetworkParams::new(NetworkParams {
            p0: self.p0,
            p1: self.p1,
            t_slot: self.t_slot,
            w: self.w,
            p_pt: self.p_pt,
            xi2: self.xi2,
            gamma: self.gamma,
            h_pt_sg: self.h_pt_sg,
            delta: self.delta,
            nu_value: self.nu,
            pc: self.pc,
            pbar_m: self.pbar_m,
            eps_lo: self.eps_lo,
            eps_hi: self.eps_hi,
            h_pt_k,
            h_k,
            sigma2_k: vec![self.sigma2; k],
            kappa_k: vec![self.kappa; k],
            rbar_b_k: vec![self.rbar_b; k],
        })
        .map_err(|e| anyhow!(e))
    }

    /// Starting leader strategy; when no threshold is configured the largest
    /// feasible one (detection probability at the miss cap, with margin) is
    /// found by bisection, since detection probability falls in `eps`.
    pub fn initial_leader(&self, p: &NetworkParams) -> Result<LeaderStrategy> {
        let eps = match self.eps0 {
            Some(e) => e,
            None => {
                let target = (1.0 - self.pbar_m) + 0.01 * self.pbar_m;
                let pd_at = |e: f64| -> Result<f64> {
                    Ok(detection_probs(self.tau_s0, e, p).map_err(|e| anyhow!(e))?.pd)
                };
                let (mut lo, mut hi) = (p.eps_lo, p.eps_hi);
                if pd_at(lo)? < target {
                    bail!(
                        "no feasible detection threshold: pd({lo}) < {target} at tau_s = {}",
                        self.tau_s0
                    );
                }
                if pd_at(hi)? >= target {
                    hi
                } else {
                    for _ in 0..200 {
                        let mid = 0.5 * (lo + hi);
                        if pd_at(mid)? >= target {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    lo
                }
            }
        };
        let s0 = LeaderStrategy {
            alpha: self.alpha0,
            tau_s: self.tau_s0,
            eps,
        };
        if !s0.is_feasible(p) {
            bail!("initial leader strategy is infeasible");
        }
        Ok(s0)
    }
}

fn build_grid(axis: SweepAxis, sweep: &SweepSection) -> Result<Vec<f64>> {
    if axis == SweepAxis::None {
        return Ok(vec![0.0]);
    }
    let from = sweep.from.ok_or_else(|| anyhow!("sweep.from missing"))?;
    let to = sweep.to.ok_or_else(|| anyhow!("sweep.to missing"))?;
    let steps = sweep.steps.ok_or_else(|| anyhow!("sweep.steps missing"))?;
    if steps < 1 || (steps > 1 && !(to > from)) {
        bail!("sweep grid must be strictly increasing");
    }
    let mut grid = Vec::with_capacity(steps);
    for i in 0..steps {
        let v = if steps == 1 {
            from
        } else {
            from + (to - from) * i as f64 / (steps - 1) as f64
        };
        grid.push(if axis == SweepAxis::K { v.round() } else { v });
    }
    if axis == SweepAxis::K {
        grid.dedup();
        if grid.iter().any(|&v| v < 1.0) {
            bail!("K grid must stay at or above 1");
        }
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_table() {
        let s = Scenario::resolve(ScenarioFile::default()).unwrap();
        assert_eq!(s.p0, 0.6);
        assert_eq!(s.p1, 0.4);
        assert!((s.gamma - db_to_linear(3.0)).abs() < 1e-12);
        assert!((s.pc - 10f64.powf(-6.5)).abs() < 1e-18);
        assert!((s.sigma2 - 1e-7).abs() < 1e-18);
        assert!((s.eps_hi - 2.0 * (1.0 + s.gamma) * s.xi2).abs() < 1e-12);
        assert!(s.not_from_paper.iter().any(|f| f == "rbar_b"));
    }

    #[test]
    fn dbm_round_trips() {
        assert!((dbm_to_watts(-35.0) - 10f64.powf(-6.5)).abs() < 1e-20);
        assert!((dbm_to_watts(30.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_probabilities_are_rejected() {
        let file: ScenarioFile = toml::from_str("[network]\np0 = 0.6\np1 = 0.6").unwrap();
        assert!(Scenario::resolve(file).is_err());
    }

    #[test]
    fn inverted_eps_bounds_are_rejected() {
        let file: ScenarioFile =
            toml::from_str("[network]\neps_lo = 0.5\neps_hi = 0.1").unwrap();
        assert!(Scenario::resolve(file).is_err());
    }

    #[test]
    fn generator_requires_seed() {
        let file: ScenarioFile = toml::from_str("[topology]\nd_max_m = 30.0").unwrap();
        assert!(Scenario::resolve(file).is_err());
    }

    #[test]
    fn unit_conflicts_are_rejected() {
        let file: ScenarioFile =
            toml::from_str("[network]\npc_w = 1e-6\npc_dbm = -35.0").unwrap();
        assert!(Scenario::resolve(file).is_err());
    }
}
