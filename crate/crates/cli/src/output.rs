//! Result files. Every file carries the resolved configuration; nothing
//! time- or host-dependent is written, so equal configs give equal bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliResult;

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a RunConfig,
    result: &'a T,
}

pub struct OutputDir {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    /// Pretty JSON `{tool, version, command, config, result}`.
    pub fn json<T: Serialize>(&mut self, name: &str, command: &str, cfg: &RunConfig, result: &T) -> CliResult<PathBuf> {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        let env = Envelope {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: cfg,
            result,
        };
        serde_json::to_writer_pretty(&mut w, &env)?;
        w.write_all(b"\n")?;
        w.flush()?;
        self.written.push(path.clone());
        Ok(path)
    }

    /// A CSV file whose leading `#` lines hold the command and the config
    /// as compact JSON. `body` writes the table.
    pub fn csv<F>(&mut self, name: &str, command: &str, cfg: &RunConfig, body: F) -> CliResult<PathBuf>
    where
        F: FnOnce(&mut BufWriter<File>) -> CliResult<()>,
    {
        let path = self.dir.join(name);
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(
            w,
            "# {} {} {}",
            env!("CARGO_PKG_NAME"),
            env!("CARGO_PKG_VERSION"),
            command
        )?;
        writeln!(w, "# config: {}", serde_json::to_string(cfg)?)?;
        body(&mut w)?;
        w.flush()?;
        self.written.push(path.clone());
        Ok(path)
    }
}

/// Strips the `#` header of a CSV written by [`OutputDir::csv`].
pub fn csv_body(text: &str) -> String {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| format!("{l}\n"))
        .collect()
}
