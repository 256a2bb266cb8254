//! Approval gates between migration phases.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

/// Decides whether phase `phase` (1-based) may be promoted.
pub trait ApprovalSource {
    fn approve(&mut self, phase: usize) -> bool;

    /// Number of prompts shown so far.
    fn prompts(&self) -> usize {
        0
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct AutoApprove;

impl ApprovalSource for AutoApprove {
    fn approve(&mut self, _phase: usize) -> bool {
        true
    }
}

/// Pre-recorded answers; running out of answers rejects.
#[derive(Clone, Debug)]
pub struct ScriptedApprovals {
    answers: VecDeque<bool>,
}

impl ScriptedApprovals {
    pub fn new(answers: Vec<bool>) -> Self {
        ScriptedApprovals {
            answers: answers.into(),
        }
    }

    /// One answer per non-empty line: `y`/`yes`/`n`/`no`, case-insensitive.
    /// `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut answers = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            answers.push(parse_answer(line).ok_or_else(|| format!("line {}: expected y or n, got `{line}`", n + 1))?);
        }
        Ok(ScriptedApprovals::new(answers))
    }

    pub fn remaining(&self) -> Vec<bool> {
        self.answers.iter().copied().collect()
    }
}

fn parse_answer(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "y" | "yes" => Some(true),
        "n" | "no" => Some(false),
        _ => None,
    }
}

impl ApprovalSource for ScriptedApprovals {
    fn approve(&mut self, _phase: usize) -> bool {
        self.answers.pop_front().unwrap_or(false)
    }
}

/// Terminal prompt. Anything but an explicit yes, including end of input,
/// rejects.
pub struct InteractiveApprovals<R, W> {
    input: R,
    output: W,
    prompts: usize,
}

impl<R: BufRead, W: Write> InteractiveApprovals<R, W> {
    pub fn new(input: R, output: W) -> Self {
        InteractiveApprovals {
            input,
            output,
            prompts: 0,
        }
    }
}

impl<R: BufRead, W: Write> ApprovalSource for InteractiveApprovals<R, W> {
    fn approve(&mut self, phase: usize) -> bool {
        self.prompts += 1;
        let _ = write!(self.output, "approve phase {phase} [y/N] ");
        let _ = self.output.flush();
        let mut line = String::new();
        match self.input.read_line(&mut line) {
            Ok(0) | Err(_) => false,
            Ok(_) => parse_answer(line.trim()) == Some(true),
        }
    }

    fn prompts(&self) -> usize {
        self.prompts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scripted_answers_in_order() {
        let mut s = ScriptedApprovals::parse("y\n# second phase\nN\n").unwrap();
        assert!(s.approve(1));
        assert!(!s.approve(2));
        assert!(!s.approve(3));
    }

    #[test]
    fn malformed_answers_file() {
        let e = ScriptedApprovals::parse("y\nmaybe\n").unwrap_err();
        assert!(e.contains("line 2"), "{e}");
    }

    #[test]
    fn interactive_eof_rejects() {
        let mut out = Vec::new();
        let mut a = InteractiveApprovals::new(&b""[..], &mut out);
        assert!(!a.approve(1));
        assert_eq!(a.prompts(), 1);
        assert_eq!(String::from_utf8(out).unwrap(), "approve phase 1 [y/N] ");
    }

    #[test]
    fn interactive_yes_and_default_no() {
        let mut out = Vec::new();
        let mut a = InteractiveApprovals::new(&b"yes\n\n"[..], &mut out);
        assert!(a.approve(1));
        assert!(!a.approve(2));
    }
}
