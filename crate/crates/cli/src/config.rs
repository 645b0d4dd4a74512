//! Run configuration: one TOML file, every field optional, flag overrides on
//! top. Representation and localizer sections override values derived from
//! the grid, so a smaller grid does not need a full parameter set.

use std::path::Path;

use bevloc_core::eval::protocol::ProtocolConfig;
use bevloc_core::repr::{BankSpec, ReprConfig};
use bevloc_core::{GridSpec, LocalizerConfig, MapConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub side_cells: Option<usize>,
    pub cell_size_m: Option<f64>,
    pub z_min_m: Option<f64>,
    pub z_max_m: Option<f64>,
    pub n_z_channels: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReprSection {
    pub n_theta: Option<usize>,
    pub n_tau: Option<usize>,
    pub n_omega: Option<usize>,
    /// Filter-bank seed; absent means the uniform bank.
    pub bank_seed: Option<u64>,
    pub antialias_sigma_cells: Option<f64>,
    pub plane_sigma_cells: Option<f64>,
    pub plane_window_cells: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizerSection {
    pub refine_window_deg: Option<f64>,
    pub refine_step_deg: Option<f64>,
    pub max_translation_cells: Option<usize>,
    pub icp: Option<bool>,
    pub icp_max_iters: Option<usize>,
    pub icp_tol_m: Option<f64>,
    pub icp_max_corr_m: Option<f64>,
    pub icp_voxel_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for the search stage; 0 uses every core.
    pub threads: usize,
    pub interval_m: f64,
    pub revisit_m: f64,
    pub max_n: usize,
    pub ground_z_m: f64,
    pub grid: GridSection,
    pub repr: ReprSection,
    pub localizer: LocalizerSection,
    /// World, route and scan model for `synth`.
    pub synth: ProtocolConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 0,
            interval_m: 20.0,
            revisit_m: 10.0,
            max_n: 10,
            ground_z_m: MapConfig::default().ground_z_m,
            grid: GridSection::default(),
            repr: ReprSection::default(),
            localizer: LocalizerSection::default(),
            synth: ProtocolConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn grid(&self) -> GridSpec {
        let d = GridSpec::default();
        let g = &self.grid;
        GridSpec {
            side_cells: g.side_cells.unwrap_or(d.side_cells),
            cell_size_m: g.cell_size_m.unwrap_or(d.cell_size_m),
            z_min_m: g.z_min_m.unwrap_or(d.z_min_m),
            z_max_m: g.z_max_m.unwrap_or(d.z_max_m),
            n_z_channels: g.n_z_channels.unwrap_or(d.n_z_channels),
        }
    }

    pub fn map_config(&self) -> MapConfig {
        let grid = self.grid();
        let d = ReprConfig::for_grid(&grid);
        let r = &self.repr;
        MapConfig {
            grid,
            repr: ReprConfig {
                n_theta: r.n_theta.unwrap_or(d.n_theta),
                n_tau: r.n_tau.unwrap_or(d.n_tau),
                n_omega: r.n_omega.unwrap_or(d.n_omega),
                bank: r.bank_seed.map_or(BankSpec::Uniform, |seed| BankSpec::Seeded { seed }),
                antialias_sigma_cells: r.antialias_sigma_cells.unwrap_or(d.antialias_sigma_cells),
                plane_sigma_cells: r.plane_sigma_cells.unwrap_or(d.plane_sigma_cells),
                plane_window_cells: r.plane_window_cells.unwrap_or(d.plane_window_cells),
            },
            ground_z_m: self.ground_z_m,
        }
    }

    /// Localizer settings for a map built under `map_cfg`.
    pub fn localizer_config(&self, map_cfg: &MapConfig) -> LocalizerConfig {
        let d = LocalizerConfig::for_map(map_cfg);
        let l = &self.localizer;
        LocalizerConfig {
            refine_window_deg: l.refine_window_deg.unwrap_or(d.refine_window_deg),
            refine_step_deg: l.refine_step_deg.unwrap_or(d.refine_step_deg),
            max_translation_cells: l.max_translation_cells.unwrap_or(d.max_translation_cells),
            icp_enabled: l.icp.unwrap_or(d.icp_enabled),
            icp_max_iters: l.icp_max_iters.unwrap_or(d.icp_max_iters),
            icp_tol_m: l.icp_tol_m.unwrap_or(d.icp_tol_m),
            icp_max_corr_m: l.icp_max_corr_m.unwrap_or(d.icp_max_corr_m),
            icp_voxel_m: l.icp_voxel_m.unwrap_or(d.icp_voxel_m),
            ..d
        }
    }

    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            seed: self.seed,
            map_interval_m: self.interval_m,
            max_n: self.max_n,
            ..self.synth.clone()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
