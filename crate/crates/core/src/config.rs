//! Flat `section.key = value` configuration files.
//!
//! One entry per line, `#` starts a comment, blank lines are ignored. Every
//! key must be consumed by the reader; leftovers are reported as unknown.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file}:{line}: {message}")]
    Syntax {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{file}:{line}: duplicate key `{key}`")]
    DuplicateKey {
        file: String,
        line: usize,
        key: String,
    },
    #[error("unknown key `{key}`{}", at(.line))]
    UnknownKey { key: String, line: Option<usize> },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("invalid value for `{key}` ({value:?}): {message}")]
    Invalid {
        key: String,
        value: String,
        message: String,
    },
}

fn at(line: &Option<usize>) -> String {
    line.map(|l| format!(" at line {l}")).unwrap_or_default()
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
    line: Option<usize>,
    /// Directory relative paths are resolved against; `None` for overrides.
    base: Option<PathBuf>,
}

#[derive(Debug, Default)]
pub struct FlatConfig {
    entries: BTreeMap<String, Entry>,
    consumed: RefCell<BTreeSet<String>>,
}

/// Lexically drop `.` and `..` components.
fn normalize(p: &Path) -> PathBuf {
    use std::path::Component;
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if !out.pop() {
                    out.push(c);
                }
            }
            other => out.push(other),
        }
    }
    out
}

impl FlatConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = base.canonicalize().unwrap_or(base);
        Self::parse(&text, &path.display().to_string(), &base)
    }

    pub fn parse(text: &str, file: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = no + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax {
                    file: file.into(),
                    line,
                    message: format!("expected `section.key = value`, got {content:?}"),
                });
            };
            let key = key.trim();
            if !key.contains('.') || key.contains(char::is_whitespace) {
                return Err(ConfigError::Syntax {
                    file: file.into(),
                    line,
                    message: format!("key `{key}` is not of the form section.key"),
                });
            }
            let entry = Entry {
                value: value.trim().to_string(),
                line: Some(line),
                base: Some(base.to_path_buf()),
            };
            if entries.insert(key.to_string(), entry).is_some() {
                return Err(ConfigError::DuplicateKey {
                    file: file.into(),
                    line,
                    key: key.into(),
                });
            }
        }
        Ok(FlatConfig {
            entries,
            consumed: RefCell::new(BTreeSet::new()),
        })
    }

    /// Command-line override; relative paths stay relative to the caller.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(
            key.to_string(),
            Entry {
                value: value.into(),
                line: None,
                base: None,
            },
        );
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    fn take(&self, key: &str) -> Option<&Entry> {
        let e = self.entries.get(key)?;
        self.consumed.borrow_mut().insert(key.to_string());
        Some(e)
    }

    pub fn str(&self, key: &str) -> Option<String> {
        self.take(key).map(|e| e.value.clone())
    }

    pub fn require_str(&self, key: &str) -> Result<String, ConfigError> {
        self.str(key).ok_or_else(|| ConfigError::Missing(key.into()))
    }

    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(e) => e.value.parse().map(Some).map_err(|err: T::Err| ConfigError::Invalid {
                key: key.into(),
                value: e.value.clone(),
                message: err.to_string(),
            }),
        }
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parse_opt(key)?.unwrap_or(default))
    }

    /// Relative values resolve against the config file's directory, or the
    /// working directory for overrides. The result is always absolute since
    /// children run with a different cwd.
    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.take(key).map(|e| {
            let p = match &e.base {
                Some(base) if Path::new(&e.value).is_relative() => base.join(&e.value),
                _ => PathBuf::from(&e.value),
            };
            normalize(&std::path::absolute(&p).unwrap_or(p))
        })
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf, ConfigError> {
        self.path(key).ok_or_else(|| ConfigError::Missing(key.into()))
    }

    /// Comma-separated list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        let Some(e) = self.take(key) else {
            return Ok(None);
        };
        e.value
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|err: T::Err| ConfigError::Invalid {
                    key: key.into(),
                    value: e.value.clone(),
                    message: err.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Some)
    }

    /// Reject every key nobody asked for.
    pub fn finish(&self) -> Result<(), ConfigError> {
        let consumed = self.consumed.borrow();
        match self.entries.iter().find(|(k, _)| !consumed.contains(*k)) {
            Some((key, e)) => Err(ConfigError::UnknownKey {
                key: key.clone(),
                line: e.line,
            }),
            None => Ok(()),
        }
    }
}

pub fn invalid(key: &str, value: impl ToString, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.into(),
        value: value.to_string(),
        message: message.into(),
    }
}
