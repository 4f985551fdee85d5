use serde::{Deserialize, Serialize};

use crate::tasks::{EvalPath, TaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub task_id: String,
    pub sample_index: usize,
    pub raw_output: String,
    pub think: Option<String>,
    pub host_code: Option<String>,
    pub kernel_code: Option<String>,
    pub tiling_code: Option<String>,
    pub extraction_ok: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Part {
    Host,
    Kernel,
    Tiling,
}

/// Split raw model output into reasoning, host, kernel and tiling parts.
///
/// Tagged blocks win over labeled fences, which win over a lone fence.
pub fn extract_candidate(raw: &str, t: &TaskSpec, i: usize) -> Candidate {
    let think = tag_block(raw, "think").map(|s| s.trim().to_string());
    let mut host = tag_block(raw, "host_impl").map(trim_payload);
    let mut kernel = tag_block(raw, "kernel_impl").map(trim_payload);
    let mut tiling = tag_block(raw, "tiling_impl").map(trim_payload);

    if host.is_none() && kernel.is_none() {
        let body = strip_think(raw);
        let fences = fenced_blocks(&body);
        let labeled: Vec<_> = fences.iter().filter(|f| f.0.is_some()).collect();
        if !labeled.is_empty() {
            for (label, code) in labeled {
                let slot = match label.unwrap() {
                    Part::Host => &mut host,
                    Part::Kernel => &mut kernel,
                    Part::Tiling => &mut tiling,
                };
                if slot.is_none() {
                    *slot = Some(code.clone());
                }
            }
        } else if fences.len() == 1 {
            kernel = Some(fences[0].1.clone());
        }
    }

    let nonempty = |s: &Option<String>| s.as_deref().is_some_and(|s| !s.trim().is_empty());
    let extraction_ok = match t.eval_path {
        EvalPath::DeviceOnly => nonempty(&kernel),
        EvalPath::HostDevice => nonempty(&kernel) && nonempty(&host),
    };

    Candidate {
        task_id: t.task_id.clone(),
        sample_index: i,
        raw_output: raw.to_string(),
        think,
        host_code: host,
        kernel_code: kernel,
        tiling_code: tiling,
        extraction_ok,
    }
}

/// Canonical tagged emission; `extract_candidate` recovers each payload exactly.
pub fn render_tagged(
    think: Option<&str>,
    host: Option<&str>,
    kernel: Option<&str>,
    tiling: Option<&str>,
) -> String {
    let mut out = String::new();
    for (tag, body) in [
        ("think", think),
        ("host_impl", host),
        ("kernel_impl", kernel),
        ("tiling_impl", tiling),
    ] {
        if let Some(body) = body {
            out.push_str(&format!("<{tag}>\n{body}\n</{tag}>\n"));
        }
    }
    out
}

fn tag_block<'a>(raw: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start = raw.find(&open)? + open.len();
    let end = raw[start..].find(&close)? + start;
    Some(&raw[start..end])
}

/// Drop the single newline the canonical emission adds on each side, and
/// unwrap a fence when the whole block is one.
fn trim_payload(s: &str) -> String {
    let s = s.strip_prefix('\n').unwrap_or(s);
    let s = s.strip_suffix('\n').unwrap_or(s);
    let trimmed = s.trim();
    if trimmed.starts_with("```") && trimmed.ends_with("```") && trimmed.len() > 6 {
        let blocks = fenced_blocks(trimmed);
        if blocks.len() == 1 {
            return blocks[0].1.clone();
        }
    }
    s.to_string()
}

fn strip_think(raw: &str) -> String {
    match (raw.find("<think>"), raw.find("</think>")) {
        (Some(a), Some(b)) if b > a => format!("{}{}", &raw[..a], &raw[b + "</think>".len()..]),
        _ => raw.to_string(),
    }
}

/// Remove every `<think>...</think>` block from `text`.
pub fn strip_reasoning(text: &str) -> String {
    let mut out = text.to_string();
    loop {
        let next = strip_think(&out);
        if next == out {
            return out;
        }
        out = next;
    }
}

fn heading_label(line: &str) -> Option<Part> {
    let l = line.trim();
    let is_heading = l.starts_with('#')
        || (l.starts_with("**") && l.ends_with("**") && l.len() > 4)
        || l.ends_with(':');
    if !is_heading {
        return None;
    }
    let lower = l.to_ascii_lowercase();
    [("kernel", Part::Kernel), ("host", Part::Host), ("tiling", Part::Tiling)]
        .into_iter()
        .filter_map(|(w, p)| lower.find(w).map(|pos| (pos, p)))
        .min_by_key(|(pos, _)| *pos)
        .map(|(_, p)| p)
}

/// Fenced code blocks with the label of the heading-like line that precedes
/// each one (reset after every block).
fn fenced_blocks(text: &str) -> Vec<(Option<Part>, String)> {
    let mut out = Vec::new();
    let mut label = None;
    let mut open: Option<(String, Option<Part>, Vec<&str>)> = None;
    for line in text.lines() {
        let t = line.trim_start();
        match &mut open {
            Some((marker, _, body)) => {
                if t.trim_end().starts_with(marker.as_str())
                    && t.trim_end().chars().all(|c| c == marker.chars().next().unwrap())
                {
                    let (_, l, body) = open.take().unwrap();
                    let mut code = body.join("\n");
                    if !code.is_empty() {
                        code.push('\n');
                    }
                    out.push((l, code));
                } else {
                    body.push(line);
                }
            }
            None => {
                if t.starts_with("```") || t.starts_with("~~~") {
                    let ch = t.chars().next().unwrap();
                    let marker: String = t.chars().take_while(|&c| c == ch).collect();
                    open = Some((marker, label.take(), Vec::new()));
                } else if let Some(l) = heading_label(line) {
                    label = Some(l);
                }
            }
        }
    }
    out
}
