//! Reader for the CoNLL-U dependency format.
//!
//! Only ID (column 1), FORM (column 2) and HEAD (column 7) are consumed.
//! Multiword-token ranges (`3-4`) and empty nodes (`5.1`) are skipped, as are
//! `#` comment lines.

use std::fmt::Write as _;
use std::io::BufRead;

use crate::error::{HydraError, Result};

/// One dependency-parsed sentence. `heads[i]` is the 1-based index of the
/// governor of token `i`, or 0 for the root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParsedSentence {
    pub tokens: Vec<String>,
    pub heads: Vec<usize>,
}

impl ParsedSentence {
    pub fn new(tokens: Vec<String>, heads: Vec<usize>) -> Result<Self> {
        let s = ParsedSentence { tokens, heads };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if self.heads.len() != n {
            return Err(HydraError::Structural(format!(
                "{} tokens but {} heads",
                n,
                self.heads.len()
            )));
        }
        if n == 0 {
            return Err(HydraError::Structural("empty sentence".into()));
        }
        for (i, &h) in self.heads.iter().enumerate() {
            if h > n {
                return Err(HydraError::Structural(format!(
                    "token {} has head {h} beyond sentence length {n}",
                    i + 1
                )));
            }
            if h == i + 1 {
                return Err(HydraError::Structural(format!("token {} governs itself", i + 1)));
            }
        }
        if !self.heads.contains(&0) {
            return Err(HydraError::Structural("sentence has no root".into()));
        }
        Ok(())
    }
}

#[derive(Default)]
struct Block {
    tokens: Vec<String>,
    heads: Vec<usize>,
    start_line: usize,
}

impl Block {
    fn finish(&mut self, out: &mut Vec<ParsedSentence>) -> Result<()> {
        if self.tokens.is_empty() {
            return Ok(());
        }
        let s = ParsedSentence {
            tokens: std::mem::take(&mut self.tokens),
            heads: std::mem::take(&mut self.heads),
        };
        s.validate().map_err(|e| match e {
            HydraError::Structural(msg) => {
                HydraError::Structural(format!("sentence starting at line {}: {msg}", self.start_line))
            }
            other => other,
        })?;
        out.push(s);
        Ok(())
    }
}

pub fn parse_conllu(input: impl BufRead) -> Result<Vec<ParsedSentence>> {
    let mut out = Vec::new();
    let mut block = Block::default();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| HydraError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            block.finish(&mut out)?;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 8 {
            return Err(HydraError::Parse {
                line: line_no,
                message: format!("expected at least 8 tab-separated columns, found {}", cols.len()),
            });
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let id: usize = id.parse().map_err(|_| HydraError::Parse {
            line: line_no,
            message: format!("non-integer ID {id:?}"),
        })?;
        if block.tokens.is_empty() {
            block.start_line = line_no;
        }
        if id != block.tokens.len() + 1 {
            return Err(HydraError::Parse {
                line: line_no,
                message: format!("expected token ID {}, found {id}", block.tokens.len() + 1),
            });
        }
        let head: usize = cols[6].parse().map_err(|_| HydraError::Parse {
            line: line_no,
            message: format!("non-integer HEAD {:?}", cols[6]),
        })?;
        block.tokens.push(cols[1].to_string());
        block.heads.push(head);
    }
    block.finish(&mut out)?;
    Ok(out)
}

/// Writes sentences as CoNLL-U with only ID, FORM and HEAD populated.
pub fn write_minimal_conllu(sentences: &[ParsedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        for (i, (tok, head)) in s.tokens.iter().zip(&s.heads).enumerate() {
            let _ = writeln!(out, "{}\t{tok}\t_\t_\t_\t_\t{head}\t_\t_\t_", i + 1);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const AWFUL: &str = "# text = Awful service.\n\
1\tAwful\t_\t_\t_\t_\t2\tamod\t_\t_\n\
2\tservice\t_\t_\t_\t_\t0\troot\t_\t_\n\
3\t.\t_\t_\t_\t_\t2\tpunct\t_\t_\n\n";

    #[test]
    fn extracts_forms_and_heads() {
        let s = parse_conllu(AWFUL.as_bytes()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].tokens, ["Awful", "service", "."]);
        assert_eq!(s[0].heads, [2, 0, 2]);
    }

    #[test]
    fn empty_and_comment_only_inputs() {
        assert!(parse_conllu("".as_bytes()).unwrap().is_empty());
        assert!(parse_conllu("# a\n# b\n\n# c\n".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn skips_ranges_and_empty_nodes() {
        let text = "1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n\
1\tdo\t_\t_\t_\t_\t0\t_\t_\t_\n\
2\tn't\t_\t_\t_\t_\t1\t_\t_\t_\n\
2.1\tgo\t_\t_\t_\t_\t_\t_\t_\t_\n";
        let s = parse_conllu(text.as_bytes()).unwrap();
        assert_eq!(s[0].tokens, ["do", "n't"]);
        assert_eq!(s[0].heads, [0, 1]);
    }

    #[test]
    fn non_integer_head_reports_line() {
        let text = "# c\n1\ta\t_\t_\t_\t_\t0\t_\t_\t_\n2\tb\t_\t_\t_\t_\tx\t_\t_\t_\n";
        match parse_conllu(text.as_bytes()) {
            Err(HydraError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn head_beyond_sentence_is_structural() {
        let text = "1\ta\t_\t_\t_\t_\t0\t_\t_\t_\n2\tb\t_\t_\t_\t_\t5\t_\t_\t_\n";
        assert!(matches!(parse_conllu(text.as_bytes()), Err(HydraError::Structural(_))));
    }

    #[test]
    fn self_governance_and_missing_root_rejected() {
        assert!(ParsedSentence::new(vec!["a".into()], vec![1]).is_err());
        assert!(ParsedSentence::new(vec!["a".into(), "b".into()], vec![2, 1]).is_err());
    }

    #[test]
    fn short_line_is_parse_error() {
        assert!(matches!(
            parse_conllu("1\ta\t_\n".as_bytes()),
            Err(HydraError::Parse { line: 1, .. })
        ));
    }
}
