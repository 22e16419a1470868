use std::fmt::Write as _;

use weakloc::localize::LocalizationResult;

/// `v_i / max_j v_j`, or all zeros when there is nothing to show.
pub fn intensities(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        v.iter().map(|x| x / max).collect()
    } else {
        vec![0.0; v.len()]
    }
}

/// xterm-256 grayscale index: 255 is near white, 232 near black.
pub fn ansi_shade(intensity: f64) -> u8 {
    255 - (intensity.clamp(0.0, 1.0) * 23.0).round() as u8
}

fn in_window(result: &LocalizationResult, i: usize) -> bool {
    result.window.is_some_and(|w| w.start <= i && i < w.start + w.len)
}

fn line_breaks(tokens: &[String], lines: &[usize]) -> Vec<bool> {
    (0..tokens.len()).map(|i| i > 0 && lines.get(i) != lines.get(i - 1)).collect()
}

fn header(result: &LocalizationResult) -> String {
    match result.window {
        Some(w) => format!("BUGGY (p = {:.4}), window starts at token {} ({} tokens)", result.p[1], w.start, w.len),
        None => format!("CLEAN (p = {:.4})", result.p[1]),
    }
}

pub fn ansi(tokens: &[String], lines: &[usize], result: &LocalizationResult) -> String {
    let shade = intensities(&result.token_scores);
    let breaks = line_breaks(tokens, lines);
    let mut out = header(result);
    out.push('\n');
    for (i, tok) in tokens.iter().enumerate() {
        if breaks[i] {
            out.push('\n');
        } else if i > 0 {
            out.push(' ');
        }
        let Some(&s) = shade.get(i) else {
            out.push_str(tok);
            continue;
        };
        let fg = if s > 0.5 { 255 } else { 232 };
        let mark = if in_window(result, i) { "\x1b[1;4m" } else { "" };
        let _ = write!(out, "\x1b[48;5;{};38;5;{fg}m{mark}{tok}\x1b[0m", ansi_shade(s));
    }
    out.push('\n');
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

pub fn html(tokens: &[String], lines: &[usize], result: &LocalizationResult) -> String {
    let shade = intensities(&result.token_scores);
    let breaks = line_breaks(tokens, lines);
    let mut out = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><style>\n\
         body { font-family: monospace; }\n\
         .tok { padding: 0 2px; }\n\
         .bug { outline: 2px solid #c00; }\n\
         </style></head><body>\n",
    );
    let _ = writeln!(out, "<p>{}</p>\n<pre>", escape(&header(result)));
    for (i, tok) in tokens.iter().enumerate() {
        if breaks[i] {
            out.push('\n');
        } else if i > 0 {
            out.push(' ');
        }
        let s = shade.get(i).copied().unwrap_or(0.0);
        let class = if in_window(result, i) { "tok bug" } else { "tok" };
        let color = if s > 0.5 { "#fff" } else { "#000" };
        let _ = write!(
            out,
            "<span class=\"{class}\" title=\"{:.6}\" style=\"background: rgba(0,0,0,{s:.3}); color: {color}\">{}</span>",
            result.token_scores.get(i).copied().unwrap_or(0.0),
            escape(tok)
        );
    }
    out.push_str("\n</pre></body></html>\n");
    out
}
