use std::fs;
use std::path::Path;

use fovea_core::attention::{distance_delta, layer_profile, parse_dump, DistanceDelta, DistanceProfile};

use crate::config::{self, ProfileConfig};
use crate::error::{CliError, CliResult};

pub const PROFILE_FILE: &str = "profile.csv";
pub const PROFILE_AFTER_FILE: &str = "profile_after.csv";
pub const DELTA_FILE: &str = "delta.csv";

fn read_profile(path: &Path) -> CliResult<DistanceProfile> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let dump = parse_dump(&text).map_err(|e| {
        let mut err = CliError::from(e);
        err.message = format!("{}: {}", path.display(), err.message);
        err
    })?;
    Ok(layer_profile(&dump)?)
}

fn write_csv(path: &Path, f: impl FnOnce(fs::File) -> fovea_core::Result<()>) -> CliResult<()> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(f(file)?)
}

pub fn run(cfg: &ProfileConfig, out: &Path) -> CliResult<(DistanceProfile, Option<DistanceDelta>)> {
    if cfg.dump.as_os_str().is_empty() {
        return Err(CliError::usage("an attention dump is required (--dump)"));
    }
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    config::echo(cfg, out)?;
    let before = read_profile(&cfg.dump)?;
    write_csv(&out.join(PROFILE_FILE), |f| before.write_csv(f))?;
    let delta = match &cfg.after {
        Some(path) => {
            let after = read_profile(path)?;
            write_csv(&out.join(PROFILE_AFTER_FILE), |f| after.write_csv(f))?;
            let delta = distance_delta(&before, &after)?;
            write_csv(&out.join(DELTA_FILE), |f| delta.write_csv(f))?;
            Some(delta)
        }
        None => None,
    };
    Ok((before, delta))
}
