use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::orchestrator::{EvalRecord, Stage, StageStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorCategory {
    ApiSignatureOverload,
    DataTypeConversion,
    VariableScopeLifetime,
    MemoryObjectUsage,
    SyntaxStructure,
    MacroPreprocessing,
    Unclassified,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 7] = [
        ErrorCategory::ApiSignatureOverload,
        ErrorCategory::DataTypeConversion,
        ErrorCategory::VariableScopeLifetime,
        ErrorCategory::MemoryObjectUsage,
        ErrorCategory::SyntaxStructure,
        ErrorCategory::MacroPreprocessing,
        ErrorCategory::Unclassified,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::ApiSignatureOverload => "ApiSignatureOverload",
            ErrorCategory::DataTypeConversion => "DataTypeConversion",
            ErrorCategory::VariableScopeLifetime => "VariableScopeLifetime",
            ErrorCategory::MemoryObjectUsage => "MemoryObjectUsage",
            ErrorCategory::SyntaxStructure => "SyntaxStructure",
            ErrorCategory::MacroPreprocessing => "MacroPreprocessing",
            ErrorCategory::Unclassified => "Unclassified",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Ordered rule table over the lowercased log; the first match wins.
pub fn classify_error(log_text: &str) -> ErrorCategory {
    let log = log_text.to_lowercase();
    let any = |needles: &[&str]| needles.iter().any(|n| log.contains(n));
    if any(&["no matching function", "no known conversion", "candidate function"]) {
        ErrorCategory::ApiSignatureOverload
    } else if any(&["invalid conversion", "cannot convert", "unknown type name"]) {
        ErrorCategory::DataTypeConversion
    } else if any(&["not declared", "undeclared identifier", "use of undeclared"]) {
        ErrorCategory::VariableScopeLifetime
    } else if any(&["no member named", "invalid use of member"]) {
        ErrorCategory::MemoryObjectUsage
    } else if (log.contains("expected") && any(&["';'", "'}'", "')'"])) || log.contains("redefinition") {
        ErrorCategory::SyntaxStructure
    } else if any(&["macro", "#error", "preprocessor"]) {
        ErrorCategory::MacroPreprocessing
    } else {
        ErrorCategory::Unclassified
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ErrorDistribution {
    pub counts: BTreeMap<ErrorCategory, usize>,
    pub total: usize,
}

impl ErrorDistribution {
    pub fn from_logs<'a>(logs: impl IntoIterator<Item = &'a str>) -> Self {
        let mut d = ErrorDistribution::default();
        for log in logs {
            *d.counts.entry(classify_error(log)).or_insert(0) += 1;
            d.total += 1;
        }
        d
    }

    pub fn share(&self, c: ErrorCategory) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.counts.get(&c).copied().unwrap_or(0) as f64 / self.total as f64
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn render(&self) -> String {
        if self.is_empty() {
            return "no compilation failures\n".into();
        }
        let mut out = format!("{:<24}{:>7}{:>9}\n", "Category", "Count", "Share");
        for c in ErrorCategory::ALL {
            let n = self.counts.get(&c).copied().unwrap_or(0);
            out.push_str(&format!("{:<24}{n:>7}{:>8.2}%\n", c.as_str(), 100.0 * self.share(c)));
        }
        out.push_str(&format!("{:<24}{:>7}\n", "Total", self.total));
        out
    }
}

/// Classify the compile log of every compile-fail record.
pub fn error_distribution(run_dir: &Path, records: &[EvalRecord]) -> ErrorDistribution {
    let logs: Vec<String> = records
        .iter()
        .filter_map(|r| r.stage(Stage::Compile))
        .filter(|s| s.status == StageStatus::Fail)
        .map(|s| std::fs::read_to_string(run_dir.join(&s.log_path)).unwrap_or_else(|_| s.detail.clone()))
        .collect();
    ErrorDistribution::from_logs(logs.iter().map(String::as_str))
}
