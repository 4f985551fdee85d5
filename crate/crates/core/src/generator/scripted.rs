use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{GenError, GenResult, Generator, SampleGen};
use crate::prompt::PromptBundle;
use crate::tasks::TaskSpec;

/// `sample<i>.txt` files under `fixture_dir/task_id`, sorted by `i`.
fn fixture_files(fixture_dir: &Path, task_id: &str) -> Result<Vec<PathBuf>, GenError> {
    let dir = fixture_dir.join(task_id);
    let entries = std::fs::read_dir(&dir).map_err(|_| GenError::NoFixtures(task_id.to_string()))?;
    let mut files: Vec<(usize, PathBuf)> = entries
        .filter_map(Result::ok)
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let idx = name.strip_prefix("sample")?.strip_suffix(".txt")?.parse().ok()?;
            Some((idx, e.path()))
        })
        .collect();
    if files.is_empty() {
        return Err(GenError::NoFixtures(task_id.to_string()));
    }
    files.sort();
    Ok(files.into_iter().map(|(_, p)| p).collect())
}

/// First `n` fixtures in index order, cycling when fewer exist.
pub fn scripted_generate(fixture_dir: &Path, task_id: &str, n: usize) -> Result<GenResult, GenError> {
    let files = fixture_files(fixture_dir, task_id)?;
    let mut out = GenResult::default();
    for i in 0..n {
        let path = &files[i % files.len()];
        let text = std::fs::read_to_string(path)
            .map_err(|e| GenError::Other(format!("{}: {e}", path.display())))?;
        out.raw_outputs.push(Some(text));
        out.attempts.push(1);
    }
    Ok(out)
}

pub struct ScriptedGenerator {
    dir: PathBuf,
    cache: Mutex<HashMap<String, Result<Vec<PathBuf>, GenError>>>,
}

impl ScriptedGenerator {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ScriptedGenerator {
            dir: dir.into(),
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl Generator for ScriptedGenerator {
    fn generate(&self, task: &TaskSpec, _prompt: &PromptBundle, sample_index: usize) -> SampleGen {
        let files = self
            .cache
            .lock()
            .unwrap()
            .entry(task.task_id.clone())
            .or_insert_with(|| fixture_files(&self.dir, &task.task_id))
            .clone();
        let output = files.and_then(|files| {
            let path = &files[sample_index % files.len()];
            std::fs::read_to_string(path)
                .map_err(|e| GenError::Other(format!("{}: {e}", path.display())))
        });
        SampleGen {
            output,
            attempts: 1,
            failures: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixtures(count: usize) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let task = dir.path().join("Add");
        std::fs::create_dir(&task).unwrap();
        for i in 0..count {
            std::fs::write(task.join(format!("sample{i}.txt")), format!("fixture {i}")).unwrap();
        }
        dir
    }

    fn texts(r: &GenResult) -> Vec<String> {
        r.raw_outputs.iter().map(|o| o.clone().unwrap()).collect()
    }

    #[test]
    fn cycles_when_short() {
        let dir = fixtures(2);
        let r = scripted_generate(dir.path(), "Add", 5).unwrap();
        let want: Vec<String> = [0, 1, 0, 1, 0].iter().map(|i| format!("fixture {i}")).collect();
        assert_eq!(texts(&r), want);
    }

    #[test]
    fn takes_prefix_when_long() {
        let dir = fixtures(5);
        let r = scripted_generate(dir.path(), "Add", 3).unwrap();
        assert_eq!(texts(&r), vec!["fixture 0", "fixture 1", "fixture 2"]);
    }

    #[test]
    fn numeric_not_lexicographic_order() {
        let dir = fixtures(11);
        let r = scripted_generate(dir.path(), "Add", 11).unwrap();
        assert_eq!(texts(&r)[10], "fixture 10");
    }

    #[test]
    fn missing_dir() {
        let dir = fixtures(1);
        assert_eq!(
            scripted_generate(dir.path(), "Nope", 1).unwrap_err(),
            GenError::NoFixtures("Nope".into())
        );
    }
}
