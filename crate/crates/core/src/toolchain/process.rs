//! Child processes with wall-clock limits, tracked for leak detection.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::os::unix::process::CommandExt;
use std::process::{Child, Command, ExitStatus};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

#[derive(Debug, Default)]
struct Inner {
    live: BTreeMap<u32, String>,
    groups: BTreeSet<u32>,
}

/// Every process a run spawned. Each child leads its own process group, so
/// stray grandchildren can be found (and killed) by group id.
#[derive(Debug, Clone, Default)]
pub struct ProcessRegistry(Arc<Mutex<Inner>>);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcState {
    Running,
    Zombie,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StrayProcess {
    pub pid: u32,
    pub label: String,
    pub state: ProcState,
}

impl ProcessRegistry {
    pub fn register(&self, child: &Child, label: impl Into<String>) {
        let mut g = self.0.lock().unwrap();
        g.live.insert(child.id(), label.into());
        g.groups.insert(child.id());
    }

    pub fn unregister(&self, pid: u32) {
        self.0.lock().unwrap().live.remove(&pid);
    }

    /// Registered processes that still exist, plus any process still
    /// sitting in one of the groups this registry created.
    pub fn strays(&self) -> Vec<StrayProcess> {
        let g = self.0.lock().unwrap();
        let mut out: BTreeMap<u32, StrayProcess> = BTreeMap::new();
        for (&pid, label) in &g.live {
            if let Some(stat) = read_stat(pid) {
                out.insert(
                    pid,
                    StrayProcess {
                        pid,
                        label: label.clone(),
                        state: stat.state,
                    },
                );
            }
        }
        if !g.groups.is_empty() {
            if let Ok(dir) = std::fs::read_dir("/proc") {
                for e in dir.filter_map(Result::ok) {
                    let Some(pid) = e.file_name().to_str().and_then(|s| s.parse::<u32>().ok()) else {
                        continue;
                    };
                    if out.contains_key(&pid) {
                        continue;
                    }
                    // Dead group members are left for their new parent to reap.
                    if let Some(stat) = read_stat(pid) {
                        if g.groups.contains(&stat.pgrp) && stat.state != ProcState::Zombie {
                            out.insert(
                                pid,
                                StrayProcess {
                                    pid,
                                    label: format!("member of process group {}", stat.pgrp),
                                    state: stat.state,
                                },
                            );
                        }
                    }
                }
            }
        }
        out.into_values().collect()
    }
}

struct Stat {
    state: ProcState,
    pgrp: u32,
}

fn read_stat(pid: u32) -> Option<Stat> {
    let text = std::fs::read_to_string(format!("/proc/{pid}/stat")).ok()?;
    // The command name is parenthesised and may itself contain spaces.
    let rest = &text[text.rfind(')')? + 1..];
    let mut fields = rest.split_whitespace();
    let state = fields.next()?;
    let _ppid = fields.next()?;
    let pgrp = fields.next()?.parse().ok()?;
    Some(Stat {
        state: if state == "Z" { ProcState::Zombie } else { ProcState::Running },
        pgrp,
    })
}

#[derive(Debug)]
pub enum WaitOutcome {
    Exited(ExitStatus),
    TimedOut,
}

/// Run `cmd` in a fresh process group and wait at most `limit`. On timeout
/// the whole group is killed and the child reaped before returning.
pub fn run_with_limit(
    cmd: &mut Command,
    limit: Duration,
    procs: &ProcessRegistry,
    label: &str,
) -> io::Result<WaitOutcome> {
    cmd.process_group(0);
    let mut child = cmd.spawn()?;
    procs.register(&child, label);
    let pid = child.id();
    let start = Instant::now();
    let mut pause = Duration::from_micros(200);
    let outcome = loop {
        match child.try_wait() {
            Ok(Some(status)) => break WaitOutcome::Exited(status),
            Ok(None) => {}
            Err(e) => {
                kill_group(pid);
                let _ = child.wait();
                procs.unregister(pid);
                return Err(e);
            }
        }
        if start.elapsed() >= limit {
            kill_group(pid);
            let _ = child.wait();
            break WaitOutcome::TimedOut;
        }
        std::thread::sleep(pause.min(limit.saturating_sub(start.elapsed())));
        pause = (pause * 2).min(Duration::from_millis(5));
    };
    // Anything the child left behind in its group goes too.
    kill_group(pid);
    procs.unregister(pid);
    Ok(outcome)
}

fn kill_group(pgid: u32) {
    // SAFETY: kill(2) has no memory-safety preconditions; a stale group id
    // simply yields ESRCH.
    unsafe {
        libc::kill(-(pgid as libc::pid_t), libc::SIGKILL);
    }
}

pub fn signal_name(sig: i32) -> &'static str {
    match sig {
        libc::SIGSEGV => "SIGSEGV",
        libc::SIGABRT => "SIGABRT",
        libc::SIGFPE => "SIGFPE",
        libc::SIGBUS => "SIGBUS",
        libc::SIGILL => "SIGILL",
        libc::SIGKILL => "SIGKILL",
        libc::SIGTERM => "SIGTERM",
        _ => "signal",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timeout_kills_and_reaps() {
        let procs = ProcessRegistry::default();
        let t0 = Instant::now();
        let out = run_with_limit(
            Command::new("sh").args(["-c", "sleep 30"]),
            Duration::from_millis(200),
            &procs,
            "sleeper",
        )
        .unwrap();
        assert!(matches!(out, WaitOutcome::TimedOut));
        assert!(t0.elapsed() < Duration::from_secs(5));
        assert!(procs.strays().is_empty(), "{:?}", procs.strays());
    }

    #[test]
    fn grandchildren_are_killed_with_the_group() {
        let procs = ProcessRegistry::default();
        let out = run_with_limit(
            Command::new("sh").args(["-c", "sleep 30 & exit 0"]),
            Duration::from_secs(5),
            &procs,
            "forker",
        )
        .unwrap();
        assert!(matches!(out, WaitOutcome::Exited(s) if s.success()));
        // The backgrounded sleep is reparented, so it may take a moment to die.
        let deadline = Instant::now() + Duration::from_secs(2);
        while !procs.strays().is_empty() && Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(10));
        }
        assert!(procs.strays().is_empty());
    }

    #[test]
    fn unreaped_child_is_reported_as_zombie() {
        let procs = ProcessRegistry::default();
        let mut child = Command::new("true").spawn().unwrap();
        procs.register(&child, "zombie");
        let deadline = Instant::now() + Duration::from_secs(5);
        let mut strays = procs.strays();
        while strays.first().map(|s| s.state) != Some(ProcState::Zombie) && Instant::now() < deadline {
            std::thread::sleep(Duration::from_millis(5));
            strays = procs.strays();
        }
        assert_eq!(strays.len(), 1);
        assert_eq!(strays[0].state, ProcState::Zombie);
        child.wait().unwrap();
        procs.unregister(child.id());
        assert!(procs.strays().is_empty());
    }
}
