//! Text formats for probability and alignment matrices.
//!
//! Both formats start with a header `T=<int>,L=<int>,M=<int>` followed by
//! `M` blocks of `L` comma-separated rows. Probability rows have `T`
//! values; alignment rows have `T + 1` (the last is the no-selection
//! mass). Blank lines and lines starting with `#` are ignored on input.
//! Values are written with 17 significant digits.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockHeader {
    pub frames: usize,
    pub steps: usize,
    pub heads: usize,
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

fn parse_header(line_no: usize, line: &str) -> Result<BlockHeader> {
    let mut values = [None; 3];
    let mut column = 1;
    for field in line.split(',') {
        let (key, value) = field
            .split_once('=')
            .ok_or_else(|| parse_err(line_no, column, format!("expected key=value, got `{field}`")))?;
        let slot = match key.trim() {
            "T" => 0,
            "L" => 1,
            "M" => 2,
            other => return Err(parse_err(line_no, column, format!("unknown header key `{other}`"))),
        };
        let v: usize = value
            .trim()
            .parse()
            .map_err(|_| parse_err(line_no, column, format!("`{value}` is not an integer")))?;
        values[slot] = Some(v);
        column += field.len() + 1;
    }
    match values {
        [Some(frames), Some(steps), Some(heads)] if frames > 0 && steps > 0 && heads > 0 => {
            Ok(BlockHeader {
                frames,
                steps,
                heads,
            })
        }
        _ => Err(parse_err(line_no, 1, "header needs positive T, L and M")),
    }
}

fn parse_blocks(text: &str, extra_cols: usize) -> Result<(BlockHeader, Vec<Matrix>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (hline, htext) = lines.next().ok_or_else(|| parse_err(1, 1, "missing header"))?;
    let header = parse_header(hline, htext)?;
    let cols = header.frames + extra_cols;
    let mut blocks = Vec::with_capacity(header.heads);
    let mut last_line = hline;
    for _ in 0..header.heads {
        let mut data = Vec::with_capacity(header.steps * cols);
        for _ in 0..header.steps {
            let (n, row) = lines
                .next()
                .ok_or_else(|| parse_err(last_line + 1, 1, "unexpected end of file"))?;
            last_line = n;
            let mut column = 1;
            let mut count = 0;
            for field in row.split(',') {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(n, column, format!("`{field}` is not a number")))?;
                if !v.is_finite() {
                    return Err(parse_err(n, column, "value is not finite"));
                }
                data.push(v);
                count += 1;
                column += field.len() + 1;
            }
            if count != cols {
                return Err(parse_err(n, 1, format!("expected {cols} values, found {count}")));
            }
        }
        blocks.push(Matrix::from_vec(header.steps, cols, data)?);
    }
    if let Some((n, _)) = lines.next() {
        return Err(parse_err(n, 1, "trailing rows after the last block"));
    }
    Ok((header, blocks))
}

/// Parses a probability file into one `L × T` matrix per head. Values
/// must lie in `[0, 1]`.
pub fn parse_probabilities(text: &str) -> Result<Vec<Matrix>> {
    let (_, blocks) = parse_blocks(text, 0)?;
    for b in &blocks {
        crate::align::check_probabilities(b)?;
    }
    Ok(blocks)
}

/// Parses an alignment file into one `L × (T+1)` matrix per head.
pub fn parse_alignments(text: &str) -> Result<Vec<Matrix>> {
    parse_blocks(text, 1).map(|(_, b)| b)
}

fn write_blocks(blocks: &[Matrix], frames: usize) -> String {
    let steps = blocks.first().map_or(0, Matrix::rows);
    let mut out = format!("T={frames},L={steps},M={}\n", blocks.len());
    for b in blocks {
        for row in b.iter_rows() {
            let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
    }
    out
}

pub fn format_probabilities(heads: &[Matrix]) -> String {
    let frames = heads.first().map_or(0, Matrix::cols);
    write_blocks(heads, frames)
}

pub fn format_alignments(heads: &[Matrix]) -> String {
    let frames = heads.first().map_or(1, Matrix::cols) - 1;
    write_blocks(heads, frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_comments_and_blank_lines() {
        let text = "T=2,L=1,M=2\n# head 0\n0.5,0.25\n\n1,0\n";
        let heads = parse_probabilities(text).unwrap();
        assert_eq!(heads.len(), 2);
        assert_eq!(heads[0].as_slice(), &[0.5, 0.25]);
    }

    #[test]
    fn errors_carry_positions() {
        let err = parse_probabilities("T=2,L=1,M=1\n0.5,abc\n").unwrap_err();
        assert_eq!(
            err,
            Error::Parse {
                line: 2,
                column: 5,
                message: "`abc` is not a number".into()
            }
        );
        assert!(matches!(
            parse_probabilities("T=2,L=2,M=1\n0.5,0.5\n").unwrap_err(),
            Error::Parse { line: 3, .. }
        ));
        assert!(matches!(
            parse_probabilities("T=2,L=1,M=1\n0.5\n").unwrap_err(),
            Error::Parse { line: 2, .. }
        ));
        assert!(matches!(
            parse_probabilities("T=2,X=1\n").unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
        assert!(matches!(
            parse_probabilities("T=2,L=1,M=1\n0.5,1.5\n").unwrap_err(),
            Error::Probability { .. }
        ));
    }

    #[test]
    fn alignment_round_trip_is_exact() {
        let m = Matrix::from_rows(&[[0.1, 1.0 / 3.0, 2.0 / 3.0 - 0.1]]).unwrap();
        let text = format_alignments(std::slice::from_ref(&m));
        assert!(text.starts_with("T=2,L=1,M=1\n"));
        assert_eq!(parse_alignments(&text).unwrap(), vec![m]);
    }
}
