//! CSV artifacts. Every file starts with a provenance comment and a header.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub fn config_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Run facts recorded in each CSV comment line.
#[derive(Clone, Debug)]
pub struct Provenance {
    pub config_hash: String,
    pub h: f64,
    pub tol: f64,
    pub seed: u64,
}

impl Provenance {
    pub fn comment(&self) -> String {
        format!(
            "# hybrid-sis {} config_hash={} h={} tol={} seed={}",
            env!("CARGO_PKG_VERSION"),
            self.config_hash,
            self.h,
            self.tol,
            self.seed
        )
    }
}

pub struct Csv {
    out: BufWriter<File>,
    path: PathBuf,
}

impl Csv {
    pub fn create(dir: &Path, name: &str, prov: &Provenance, header: &str) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(name);
        let mut out = BufWriter::new(File::create(&path)?);
        writeln!(out, "{}", prov.comment())?;
        writeln!(out, "{header}")?;
        Ok(Csv { out, path })
    }

    pub fn row(&mut self, fields: &[String]) -> std::io::Result<()> {
        writeln!(self.out, "{}", fields.join(","))
    }

    pub fn finish(mut self) -> std::io::Result<PathBuf> {
        self.out.flush()?;
        Ok(self.path)
    }
}

/// Shorthand for building a CSV row from displayable values.
#[macro_export]
macro_rules! fields {
    ($($x:expr),* $(,)?) => { &[$($x.to_string()),*] };
}
