//! Scenario directories: `scenario_%04d.json` files plus `manifest.json`.

use std::path::Path;

use bevmem_core::synth::{gen_scenario, scenario_seed, Scenario, ScenarioParams, SequenceData};
use serde::{Deserialize, Serialize};

use crate::Failure;

pub const MANIFEST: &str = "manifest.json";
const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub count: usize,
    pub seed: u64,
    pub config_hash: String,
    /// Observation noise applied when the scenarios are rendered.
    pub noise_sigma: f64,
    pub files: Vec<String>,
}

pub fn scenario_file(index: usize) -> String {
    format!("scenario_{index:04}.json")
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Data(format!("{}: {e}", path.display()))
}

pub fn write_dataset(
    out: &Path,
    count: usize,
    seed: u64,
    params: &ScenarioParams,
    noise_sigma: f64,
    config_hash: &str,
) -> Result<Manifest, Failure> {
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut files = Vec::with_capacity(count);
    for i in 0..count {
        let sc = gen_scenario(scenario_seed(seed, i), params)?;
        let name = scenario_file(i);
        let path = out.join(&name);
        sc.save(&path).map_err(|e| io_err(&path, e))?;
        files.push(name);
    }
    let m = Manifest {
        version: MANIFEST_VERSION,
        count,
        seed,
        config_hash: config_hash.to_string(),
        noise_sigma,
        files,
    };
    let path = out.join(MANIFEST);
    let text = serde_json::to_string_pretty(&m).map_err(|e| io_err(&path, e))?;
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(m)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, Failure> {
    let path = dir.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| io_err(&path, e))?;
    if m.version != MANIFEST_VERSION {
        return Err(io_err(&path, format!("unsupported manifest version {}", m.version)));
    }
    if m.count == 0 || m.files.len() != m.count {
        return Err(io_err(&path, format!("manifest lists {} files for count {}", m.files.len(), m.count)));
    }
    Ok(m)
}

/// Loads and renders every scenario of a directory.
pub fn load_dataset(dir: &Path) -> Result<(Manifest, Vec<SequenceData>), Failure> {
    let m = read_manifest(dir)?;
    let data = m
        .files
        .iter()
        .map(|f| {
            let path = dir.join(f);
            let sc = Scenario::load(&path).map_err(|e| io_err(&path, e))?;
            sc.render(m.noise_sigma).map_err(|e| io_err(&path, e))
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    Ok((m, data))
}
