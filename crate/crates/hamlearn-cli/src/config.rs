//! TOML configuration schema. Unknown keys are errors.

use serde::Deserialize;

use hamlearn::eth::{self, EthConfig};
use hamlearn::pauli::HamiltonianModel;
use hamlearn::sql::SqlConfig;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub model: Option<ModelSection>,
    pub learn: Option<LearnSection>,
    pub sql: Option<SqlSection>,
    pub bench: Option<BenchSection>,
    pub eth: Option<EthSection>,
    pub qfi: Option<QfiSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Inline terms in the `<coeff> <letters>` text format, one per entry.
    pub terms: Option<Vec<String>>,
    /// Path to a Hamiltonian text file.
    pub path: Option<String>,
    /// Built-in family; currently `mfi-chain`.
    pub preset: Option<String>,
    pub length: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnSection {
    pub protocol: String,
    pub epsilon: f64,
    pub confidence: Option<f64>,
    pub delta: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SqlSection {
    pub t_c: Option<f64>,
    pub d_fit: Option<usize>,
    pub n_nodes: Option<usize>,
    pub mom_constant: Option<f64>,
    pub noiseless: Option<bool>,
    pub max_condition: Option<f64>,
}

impl SqlSection {
    pub fn to_sql_config(&self) -> SqlConfig {
        let defaults = SqlConfig::default();
        SqlConfig {
            t_c: self.t_c,
            d_fit: self.d_fit.unwrap_or(defaults.d_fit),
            n_nodes: self.n_nodes,
            mom_constant: self.mom_constant.unwrap_or(defaults.mom_constant),
            noiseless: self.noiseless.unwrap_or(defaults.noiseless),
            max_condition: self.max_condition.unwrap_or(defaults.max_condition),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub protocol: String,
    pub epsilons: Vec<f64>,
    pub trials: usize,
    pub confidence: Option<f64>,
    pub delta: Option<f64>,
    pub budget: Option<f64>,
    /// Real wall-clock timings make output files non-reproducible; off by
    /// default so identical (config, seed) runs are byte-identical.
    pub wall_clock_in_output: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EthSection {
    pub t_max: Option<f64>,
    pub grid_points: Option<usize>,
    pub quad_points: Option<usize>,
    pub probe_term: Option<usize>,
    pub reflection_symmetry: Option<bool>,
    pub rank_sweep: Option<Vec<(usize, f64)>>,
}

impl EthSection {
    pub fn to_eth_config(&self) -> EthConfig {
        let mut cfg = EthConfig::default();
        if let Some(t) = self.t_max {
            cfg.t_max = t;
        }
        if let Some(g) = self.grid_points {
            cfg.grid_points = g;
        }
        if let Some(q) = self.quad_points {
            cfg.quad_points = q;
        }
        cfg.probe_term = self.probe_term;
        if let Some(r) = self.reflection_symmetry {
            cfg.use_reflection_symmetry = r;
        }
        if let Some(s) = &self.rank_sweep {
            cfg.rank_sweep = s.clone();
        }
        cfg
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QfiSection {
    pub t: f64,
    /// `ghz`, `zero`, `plus`, or `stabilizers:+Z,-X,...`.
    pub state: String,
}

pub fn build_model(section: &ModelSection, config_dir: &std::path::Path) -> Result<HamiltonianModel, String> {
    let sources = [
        section.terms.is_some(),
        section.path.is_some(),
        section.preset.is_some(),
    ];
    if sources.iter().filter(|s| **s).count() != 1 {
        return Err("model must specify exactly one of terms / path / preset".into());
    }
    if let Some(terms) = &section.terms {
        let text = terms.join("\n");
        return HamiltonianModel::from_text(&text).map_err(|e| e.to_string());
    }
    if let Some(path) = &section.path {
        let resolved = if std::path::Path::new(path).is_absolute() {
            std::path::PathBuf::from(path)
        } else {
            config_dir.join(path)
        };
        let text = std::fs::read_to_string(&resolved)
            .map_err(|e| format!("cannot read model file {}: {e}", resolved.display()))?;
        return HamiltonianModel::from_text(&text).map_err(|e| e.to_string());
    }
    let preset = section.preset.as_deref().unwrap();
    match preset {
        "mfi-chain" => {
            let length = section
                .length
                .ok_or_else(|| "preset mfi-chain requires `length`".to_string())?;
            eth::mfi_chain(length).map_err(|e| e.to_string())
        }
        other => Err(format!("unknown preset '{other}'")),
    }
}
