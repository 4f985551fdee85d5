//! Prompt assembly and candidate extraction.

mod extract;

pub use extract::{extract_candidate, render_tagged, strip_reasoning, Candidate};

use crate::tasks::{EvalPath, TaskSpec};

/// Canonical instruction block shipped with the repository.
pub const CANONICAL_INSTRUCTIONS: &str = include_str!("../../../../fixtures/instructions.md");

#[derive(Debug, Clone, PartialEq)]
pub struct PromptBundle {
    pub instructions: String,
    pub api_description: String,
    pub host_template: String,
    pub kernel_template: String,
    pub tiling_header_template: Option<String>,
    pub eval_path: EvalPath,
    pub rendered: String,
}

impl PromptBundle {
    /// System half of the chat split: the instruction block alone.
    pub fn system_message(&self) -> &str {
        &self.instructions
    }

    /// User half of the chat split: everything after the instructions.
    pub fn user_message(&self) -> &str {
        self.rendered
            .strip_prefix(self.instructions.as_str())
            .map(|s| s.trim_start_matches('\n'))
            .unwrap_or(&self.rendered)
    }
}

pub fn assemble_prompt(t: &TaskSpec) -> PromptBundle {
    assemble_prompt_with(t, CANONICAL_INSTRUCTIONS)
}

pub fn assemble_prompt_with(t: &TaskSpec, instructions: &str) -> PromptBundle {
    let instructions = instructions.trim_end().to_string();
    let mut out = String::new();
    out.push_str(&instructions);
    out.push_str("\n\n");
    out.push_str(&format!(
        "# Task: {} ({}, {}, {} shapes, {})\n\n",
        t.task_id,
        t.level,
        t.category,
        match t.shape_mode {
            crate::tasks::ShapeMode::Static => "static",
            crate::tasks::ShapeMode::Dynamic => "dynamic",
        },
        t.eval_path.as_str()
    ));
    out.push_str("## API Description\n\n");
    out.push_str(t.api_description.trim_end());
    out.push_str("\n\n## Code Templates\n\n");

    match t.eval_path {
        EvalPath::DeviceOnly => {
            out.push_str("### Kernel code (to be completed)\n\n");
            fence(&mut out, &t.kernel_template);
            if let Some(tiling) = &t.tiling_header_template {
                out.push_str("### Tiling header (provided, do not regenerate)\n\n");
                fence(&mut out, tiling);
            }
            out.push_str("### Host code (provided, do not regenerate)\n\n");
            fence(&mut out, &t.host_template);
        }
        EvalPath::HostDevice => {
            out.push_str("### Kernel code (to be completed)\n\n");
            fence(&mut out, &t.kernel_template);
            out.push_str("### Host code (to be completed)\n\n");
            fence(&mut out, &t.host_template);
            if let Some(tiling) = &t.tiling_header_template {
                out.push_str("### Tiling header (to be completed)\n\n");
                fence(&mut out, tiling);
            }
        }
    }

    PromptBundle {
        instructions,
        api_description: t.api_description.clone(),
        host_template: t.host_template.clone(),
        kernel_template: t.kernel_template.clone(),
        tiling_header_template: t.tiling_header_template.clone(),
        eval_path: t.eval_path,
        rendered: out,
    }
}

fn fence(out: &mut String, body: &str) {
    out.push_str("```c\n");
    out.push_str(body);
    if !body.ends_with('\n') {
        out.push('\n');
    }
    out.push_str("```\n\n");
}
