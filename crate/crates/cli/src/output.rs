//! Plain CSV tables and the TOML run manifest.

use std::fs;
use std::io;
use std::path::Path;

use crate::config::ScenarioConfig;

/// Fixed scientific format with 17 significant digits, enough to round-trip.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write `header` followed by `rows` as CSV.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        w.write_record(row)?;
    }
    w.flush()
}

/// The normalized config with a `[derived]` table of run results.
pub fn write_manifest(path: &Path, config: &ScenarioConfig, derived: toml::Table) -> io::Result<()> {
    let mut cfg = config.clone();
    cfg.derived = Some(derived);
    let text = toml::to_string(&cfg).map_err(io::Error::other)?;
    fs::write(path, text)
}

pub fn ensure_dir(dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        assert_eq!(num(-2.5), "-2.5000000000000000e0");
        for x in [0.1, 1.0 / 3.0, std::f64::consts::PI * 1e-7, 6.02e23] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }
}
