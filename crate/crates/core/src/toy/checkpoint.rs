//! Plain-text checkpoints:
//!
//! ```text
//! mcmma-checkpoint 1
//! task {"vocab_size":10,...}
//! train {"mode":"mcmma_delta",...}
//! epoch 57
//! accuracy 9.8e-1
//! param enc_w 16 16
//! <one line of space-separated values per row>
//! ...
//! ```

use std::io::{BufRead, Write};

use super::model::ToyModelParams;
use super::task::SyntheticTask;
use super::train::TrainConfig;
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::matrix::Matrix;

const MAGIC: &str = "mcmma-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub task: SyntheticTask,
    pub train: TrainConfig,
    pub params: ToyModelParams,
    /// Epoch the parameters were taken from; `0` means untrained.
    pub epoch: usize,
    /// Held-out teacher-forced accuracy at that epoch.
    pub accuracy: f64,
}

pub fn write_checkpoint<W: Write>(ckpt: &Checkpoint, mut out: W) -> Result<()> {
    let json = |v: serde_json::Result<String>| v.map_err(|e| Error::Io(e.to_string()));
    writeln!(out, "{MAGIC}")?;
    writeln!(out, "task {}", json(serde_json::to_string(&ckpt.task))?)?;
    writeln!(out, "train {}", json(serde_json::to_string(&ckpt.train))?)?;
    writeln!(out, "epoch {}", ckpt.epoch)?;
    writeln!(out, "accuracy {}", fmt_f64(ckpt.accuracy))?;
    for (name, block) in ckpt.params.blocks() {
        writeln!(out, "param {name} {} {}", block.rows(), block.cols())?;
        for row in block.iter_rows() {
            let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
    }
    Ok(())
}

fn parse_err(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<Checkpoint> {
    let lines: Vec<String> = input.lines().collect::<std::io::Result<_>>()?;
    let mut it = lines.iter().enumerate().map(|(i, l)| (i + 1, l.as_str()));
    let mut next = |what: &str| {
        it.next()
            .ok_or_else(|| parse_err(lines.len() + 1, 1, format!("unexpected end of file, expected {what}")))
    };

    let (n, magic) = next("header")?;
    if magic.trim() != MAGIC {
        return Err(parse_err(n, 1, "not a checkpoint file"));
    }
    let mut field = |key: &str| -> Result<(usize, String)> {
        let (n, line) = next(key)?;
        match line.split_once(' ') {
            Some((k, rest)) if k == key => Ok((n, rest.to_string())),
            _ => Err(parse_err(n, 1, format!("expected `{key}`"))),
        }
    };
    let (n, task) = field("task")?;
    let task: SyntheticTask =
        serde_json::from_str(&task).map_err(|e| parse_err(n, 6 + e.column(), e.to_string()))?;
    let (n, train) = field("train")?;
    let train: TrainConfig =
        serde_json::from_str(&train).map_err(|e| parse_err(n, 7 + e.column(), e.to_string()))?;
    let (n, epoch) = field("epoch")?;
    let epoch = epoch.trim().parse().map_err(|_| parse_err(n, 7, "bad epoch"))?;
    let (n, acc) = field("accuracy")?;
    let accuracy = acc.trim().parse().map_err(|_| parse_err(n, 10, "bad accuracy"))?;

    let mut params = ToyModelParams::init(train.model_config(&task), 0, 0.0)?;
    for (name, block) in params.blocks_mut() {
        let (n, header) = next(&format!("param {name}"))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "param" || parts[1] != name {
            return Err(parse_err(n, 1, format!("expected `param {name} <rows> <cols>`")));
        }
        let dims: Vec<usize> = parts[2..]
            .iter()
            .map(|p| p.parse().map_err(|_| parse_err(n, 1, "bad dimensions")))
            .collect::<Result<_>>()?;
        if (dims[0], dims[1]) != block.shape() {
            return Err(parse_err(
                n,
                1,
                format!("{name} is {}x{}, config implies {:?}", dims[0], dims[1], block.shape()),
            ));
        }
        let mut values = Vec::with_capacity(dims[0] * dims[1]);
        for _ in 0..dims[0] {
            let (n, row) = next(&format!("row of {name}"))?;
            let mut count = 0;
            let mut col = 1;
            for tok in row.split(' ') {
                if tok.is_empty() {
                    col += 1;
                    continue;
                }
                let v: f64 = tok.parse().map_err(|_| parse_err(n, col, format!("bad number `{tok}`")))?;
                if !v.is_finite() {
                    return Err(parse_err(n, col, "non-finite parameter"));
                }
                values.push(v);
                count += 1;
                col += tok.chars().count() + 1;
            }
            if count != dims[1] {
                return Err(parse_err(n, 1, format!("expected {} values, found {count}", dims[1])));
            }
        }
        *block = Matrix::from_vec(dims[0], dims[1], values)?;
    }
    if let Some((n, extra)) = it.find(|(_, l)| !l.trim().is_empty()) {
        return Err(parse_err(n, 1, format!("trailing content `{extra}`")));
    }
    Ok(Checkpoint {
        task,
        train,
        params,
        epoch,
        accuracy,
    })
}
