//! Dataset resolution: CSV files or the bundled synthetic generator.

use anyhow::{bail, Context, Result};
use deepifsac::data::{load_csv, DataMatrix, LoadOptions};
use deepifsac::synthetic::{generate, SyntheticSpec};
use std::path::Path;

/// Load a dataset from either a CSV path or a synthetic token of the form
/// `synthetic:ROWSxCOLS[xFACTORS][@SEED]` (factors default 3, seed 0).
pub fn load_dataset(spec: &str, drop_column: Option<&str>) -> Result<(String, DataMatrix)> {
    if let Some(rest) = spec.strip_prefix("synthetic:") {
        if drop_column.is_some() {
            bail!("--drop-column does not apply to synthetic datasets");
        }
        let (dims, seed) = match rest.split_once('@') {
            Some((dims, seed)) => (
                dims,
                seed.parse::<u64>()
                    .with_context(|| format!("bad synthetic seed '{seed}'"))?,
            ),
            None => (rest, 0),
        };
        let parts: Vec<&str> = dims.split('x').collect();
        if parts.len() < 2 || parts.len() > 3 {
            bail!("synthetic spec '{spec}' wants ROWSxCOLS or ROWSxCOLSxFACTORS");
        }
        let rows: usize = parts[0].parse().with_context(|| format!("bad rows in '{spec}'"))?;
        let cols: usize = parts[1].parse().with_context(|| format!("bad cols in '{spec}'"))?;
        let factors: usize = match parts.get(2) {
            Some(f) => f.parse().with_context(|| format!("bad factors in '{spec}'"))?,
            None => 3,
        };
        let data = generate(&SyntheticSpec { rows, cols, factors, seed, ..Default::default() });
        return Ok((spec.replace(':', "-").replace('@', "-s"), data));
    }

    let path = Path::new(spec);
    let options = LoadOptions { drop_column: drop_column.map(str::to_string) };
    let data = load_csv(path, &options).with_context(|| format!("loading {spec}"))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| spec.to_string());
    Ok((id, data))
}
