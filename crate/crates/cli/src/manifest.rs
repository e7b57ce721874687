//! Run manifests: enough to re-run a command bit for bit.
//!
//! ```text
//! # cfdnet run manifest
//! tool_version=0.1.0
//! command=train-student
//! arg=--teacher
//! arg=runs/teacher/teacher.cfdw
//! input=<sha256> runs/teacher/teacher.cfdw
//! [config]
//! seed = 0
//! ...
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub const FILE_NAME: &str = "manifest.txt";
const MAGIC: &str = "# cfdnet run manifest";
const CONFIG_MARKER: &str = "[config]";

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub tool_version: String,
    pub command: String,
    pub args: Vec<String>,
    /// `(path, sha256 hex)` of every file the run read.
    pub inputs: Vec<(PathBuf, String)>,
    pub config: String,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Every regular file under `root`, sorted.
pub fn files_under(root: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC}\ntool_version={}\ncommand={}\n", self.tool_version, self.command);
        for a in &self.args {
            out.push_str(&format!("arg={a}\n"));
        }
        for (path, sum) in &self.inputs {
            out.push_str(&format!("input={sum} {}\n", path.display()));
        }
        out.push_str(CONFIG_MARKER);
        out.push('\n');
        out.push_str(&self.config);
        out
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some(MAGIC) {
            return Err("not a cfdnet run manifest".into());
        }
        let mut m = Manifest {
            tool_version: String::new(),
            command: String::new(),
            args: Vec::new(),
            inputs: Vec::new(),
            config: String::new(),
        };
        for line in lines.by_ref() {
            if line == CONFIG_MARKER {
                break;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| format!("bad manifest line {line:?}"))?;
            match key {
                "tool_version" => m.tool_version = value.to_string(),
                "command" => m.command = value.to_string(),
                "arg" => m.args.push(value.to_string()),
                "input" => {
                    let (sum, path) = value.split_once(' ').ok_or_else(|| format!("bad input line {line:?}"))?;
                    m.inputs.push((PathBuf::from(path), sum.to_string()));
                }
                _ => return Err(format!("unknown manifest key {key:?}")),
            }
        }
        if m.command.is_empty() {
            return Err("manifest names no command".into());
        }
        m.config = lines.map(|l| format!("{l}\n")).collect();
        Ok(m)
    }

    /// Inputs whose current contents no longer match the recorded checksum.
    pub fn changed_inputs(&self) -> Vec<PathBuf> {
        self.inputs
            .iter()
            .filter(|(p, sum)| sha256_file(p).map_or(true, |s| &s != sum))
            .map(|(p, _)| p.clone())
            .collect()
    }
}
