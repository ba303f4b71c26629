//! Output files: deterministic names, full-precision numbers, config echo.
//!
//! Files are named `{command}-{hash}.{ext}` where `hash` is a prefix of the
//! SHA-256 of the canonical configuration. CSV numbers use 17 significant
//! digits; JSON numbers use the shortest representation that round-trips.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::domain::{GridDomain, ScalarField};
use crate::{Error, Result};

/// First 16 hex digits of the SHA-256 of `bytes`.
pub fn digest(bytes: &[u8]) -> String {
    let full = hex::encode(Sha256::digest(bytes));
    full[..16].to_string()
}

/// 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Output directory for one command run.
#[derive(Clone, Debug)]
pub struct OutputSet {
    pub dir: PathBuf,
    pub command: String,
    pub hash: String,
}

impl OutputSet {
    pub fn create(dir: &Path, command: &str, hash: &str) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(OutputSet { dir: dir.to_path_buf(), command: command.to_string(), hash: hash.to_string() })
    }

    pub fn path(&self, ext: &str) -> PathBuf {
        self.dir.join(format!("{}-{}.{ext}", self.command, self.hash))
    }

    pub fn config_path(&self) -> PathBuf {
        self.dir.join(format!("config-{}.toml", self.hash))
    }

    pub fn echo_config(&self, toml_text: &str) -> Result<PathBuf> {
        let p = self.config_path();
        std::fs::write(&p, toml_text)?;
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&self, ext: &str, value: &T) -> Result<PathBuf> {
        let p = self.path(ext);
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
        text.push('\n');
        std::fs::write(&p, text)?;
        Ok(p)
    }

    pub fn write_text(&self, ext: &str, text: &str) -> Result<PathBuf> {
        let p = self.path(ext);
        std::fs::write(&p, text)?;
        Ok(p)
    }
}

/// `x1,…,xn,u` per node.
pub fn write_solution_csv<W: Write>(dom: &GridDomain, u: &ScalarField, mut w: W) -> Result<()> {
    u.check(dom)?;
    let cols: Vec<String> = (1..=dom.dim()).map(|k| format!("x{k}")).collect();
    writeln!(w, "{},u", cols.join(","))?;
    for (i, v) in u.values().iter().enumerate() {
        let mut line: Vec<String> = dom.node(i).iter().map(|&x| fmt_f64(x)).collect();
        line.push(fmt_f64(*v));
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

/// Rows of equal-length numeric columns.
pub fn write_table<W: Write>(header: &[&str], rows: &[Vec<f64>], mut w: W) -> Result<()> {
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        writeln!(w, "{}", r.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable() {
        assert_eq!(digest(b"abc"), "ba7816bf8f01cfea");
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
    }
}
