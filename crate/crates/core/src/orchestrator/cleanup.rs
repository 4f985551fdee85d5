use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::toolchain::process::{ProcState, ProcessRegistry};

/// Resources a run left behind.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LeakReport {
    pub processes: Vec<String>,
    pub temp_files: Vec<PathBuf>,
}

impl LeakReport {
    pub fn is_empty(&self) -> bool {
        self.processes.is_empty() && self.temp_files.is_empty()
    }
}

impl fmt::Display for LeakReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut items: Vec<String> = self.processes.clone();
        items.extend(self.temp_files.iter().map(|p| p.display().to_string()));
        f.write_str(&items.join(", "))
    }
}

#[derive(Debug, Error)]
#[error("leaked resources: {0}")]
pub struct LeakDetected(pub LeakReport);

/// No process spawned during the run may survive it, and candidates must
/// not leave anything behind in the temp root they were given.
pub fn cleanup_guard(procs: &ProcessRegistry, tmp_root: &Path) -> Result<(), LeakDetected> {
    let mut report = LeakReport::default();
    for p in procs.strays() {
        let state = match p.state {
            ProcState::Running => "running",
            ProcState::Zombie => "zombie",
        };
        report.processes.push(format!("pid {} ({}, {state})", p.pid, p.label));
    }
    collect_files(tmp_root, &mut report.temp_files);
    report.temp_files.sort();
    if report.is_empty() {
        Ok(())
    } else {
        Err(LeakDetected(report))
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return;
    };
    for e in entries.filter_map(Result::ok) {
        let path = e.path();
        if e.file_type().is_ok_and(|t| t.is_dir()) {
            collect_files(&path, out);
            out.push(path);
        } else {
            out.push(path);
        }
    }
}
