//! `unconditional` subcommand: ensemble-average dynamics of the configured
//! dot-plus-lead system from the decoupled thermal state, with a timeline
//! of occupations and currents.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use mesoleads::lead_model::fermi_dirac;
use mesoleads::ode::Tolerances;
use mesoleads::unconditional::{
    avg_energy_current, avg_measurement_energy, avg_particle_current, evolve, internal_currents,
    steady_state,
};
use mesoleads::{gaussian, linalg};
use serde::Serialize;

use crate::config::Config;
use crate::report;
use crate::steady_ft::build_system;

#[derive(Debug, Serialize)]
pub struct UnconditionalSummary {
    pub experiment: &'static str,
    pub parameters: Config,
    pub samples: usize,
    /// Max elementwise distance of the final sample from the stationary
    /// state.
    pub distance_to_steady_state: f64,
    pub final_dot_occupation: f64,
}

pub fn run(cfg: &Config, out_dir: &Path) -> anyhow::Result<UnconditionalSummary> {
    let sys = build_system(cfg)?;
    let mut occ = vec![fermi_dirac(
        cfg.system.epsilon,
        cfg.lead.temperature,
        cfg.lead.mu,
    )?];
    occ.extend((1..sys.n()).map(|k| sys.f_occ()[k]));
    let c0 = gaussian::Covariance::from_occupations(&occ).into_matrix();

    let n_samples = 200;
    let tol = Tolerances::default();
    let path = evolve(&c0, 0.0, cfg.protocol.tau, &sys, tol, n_samples)?;

    let mut file = BufWriter::new(File::create(out_dir.join("timeline.csv"))?);
    writeln!(file, "t,n_dot,I_N,I_E,I_EM,J_N,J_E")?;
    for (t, c) in &path {
        let mut i_n = 0.0;
        let mut i_e = 0.0;
        let mut j_n = 0.0;
        let mut j_e = 0.0;
        for alpha in 0..sys.n_leads() {
            i_n += avg_particle_current(c, &sys, alpha)?;
            i_e += avg_energy_current(c, &sys, alpha, *t)?;
            let (jn, je) = internal_currents(c, &sys, alpha, *t)?;
            j_n += jn;
            j_e += je;
        }
        let i_em = avg_measurement_energy(c, &sys, *t);
        writeln!(
            file,
            "{},{},{},{},{},{},{}",
            t,
            c[(0, 0)].re,
            i_n,
            i_e,
            i_em,
            j_n,
            j_e
        )?;
    }
    file.flush()?;

    let c_final = &path.last().expect("nonempty path").1;
    let distance = match steady_state(&sys, 0.0) {
        Ok(c_ss) => linalg::max_abs(&(c_final - &c_ss)),
        Err(_) => f64::NAN,
    };
    let summary = UnconditionalSummary {
        experiment: "unconditional",
        parameters: cfg.clone(),
        samples: path.len(),
        distance_to_steady_state: distance,
        final_dot_occupation: c_final[(0, 0)].re,
    };
    report::write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}
