use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mcmma::align::{constrain, expected_alignment, one_hot_start, ConstraintConfig, SelectionProbabilities};
use mcmma::checks::{self, format_table, CheckRow, OracleGrid};
use mcmma::decode::{decode_sequence, DecodePolicy, DecodeTrace, MatrixModel};
use mcmma::io::{format_alignments, parse_probabilities};
use mcmma::metrics::{relative_latency, BoundarySequence};
use mcmma::plot::{Chart, Series};
use mcmma::toy::{
    evaluate, gen_synthetic, log_csv, read_checkpoint, tradeoff_csv, train as train_model, write_checkpoint,
    Checkpoint, EvalOptions, ReferenceKind, SyntheticTask, ToyDecoder,
};
use mcmma::Matrix;

use crate::config::{reference_from_arg, ModeArg, Settings};
use crate::{DecodeArgs, EvalArgs, GradArgs, OracleArgs, TrainArgs};

const DEFAULT_EPS_LIST: [usize; 5] = [1, 2, 4, 8, 32];
const CHECKPOINT_MAGIC: &str = "mcmma-checkpoint";

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// `dir/name.ext` → `dir/name<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_checkpoint(std::io::BufReader::new(file)).with_context(|| format!("in {}", path.display()))
}

pub fn align(s: &Settings) -> Result<bool> {
    let input = s.single_input("probability file")?;
    let heads = parse_probabilities(&read(input)?).with_context(|| format!("in {}", input.display()))?;
    let frames = heads[0].cols();
    let alphas = heads
        .iter()
        .enumerate()
        .map(|(m, p)| expected_alignment(&SelectionProbabilities::new(p.clone(), m)?, &one_hot_start(frames)))
        .collect::<mcmma::Result<Vec<_>>>()?;
    let mode = s.mode.unwrap_or(ModeArg::Mma);
    let out: Vec<Matrix> = match mode {
        ModeArg::Mma => alphas.into_iter().map(|a| a.into_values()).collect(),
        ModeArg::Mcmma | ModeArg::Gamma => {
            let Some(eps) = s.epsilon else {
                bail!("--epsilon is required with --mode {mode:?}");
            };
            let cfg = if mode == ModeArg::Mcmma {
                ConstraintConfig::mutual(eps, heads.len())
            } else {
                ConstraintConfig::self_constrained(eps)
            };
            constrain(&alphas, &cfg)?.into_iter().map(|a| a.into_values()).collect()
        }
    };
    write_out(s.output.as_deref(), &format_alignments(&out))?;
    Ok(true)
}

pub fn decode(s: &Settings, args: &DecodeArgs) -> Result<bool> {
    let input = s.single_input("probability file or checkpoint")?;
    let text = read(input)?;
    let epsilon = s.epsilon.unwrap_or(DecodePolicy::default().epsilon);
    let policy = s.policy(epsilon);
    let reference_kind = args.reference.map(reference_from_arg).unwrap_or(s.reference);
    let (trace, reference) = if text.starts_with(CHECKPOINT_MAGIC) {
        let ckpt = load_checkpoint(input)?;
        let task = eval_task(&ckpt.task, s, args.example + 1);
        let data = gen_synthetic(&task)?;
        let ex = &data.examples[args.example];
        let run = |p: &DecodePolicy| -> Result<DecodeTrace> {
            let mut model = ToyDecoder::new(&ckpt.params, &ex.frames)?;
            Ok(decode_sequence(&mut model, p, ckpt.task.num_steps)?)
        };
        let trace = run(&policy)?;
        let reference = match reference_kind {
            ReferenceKind::Gold => ex.gold_boundaries.clone(),
            ReferenceKind::Unsynchronized => run(&s.policy(usize::MAX))?.latest_boundaries(),
        };
        (trace, reference)
    } else {
        if reference_kind == ReferenceKind::Gold {
            bail!("--reference gold needs a checkpoint input");
        }
        let heads = parse_probabilities(&text).with_context(|| format!("in {}", input.display()))?;
        let steps = heads[0].rows();
        let run = |p: &DecodePolicy| -> Result<DecodeTrace> {
            let mut model = MatrixModel::new(heads.clone())?;
            Ok(decode_sequence(&mut model, p, steps)?)
        };
        let trace = run(&policy)?;
        let reference = run(&s.policy(usize::MAX))?.latest_boundaries();
        (trace, reference)
    };
    let latency = if trace.steps.is_empty() || reference.is_empty() {
        String::from("# no boundaries to compare\n")
    } else {
        relative_latency(
            &BoundarySequence::hypothesis(trace.latest_boundaries())?,
            &BoundarySequence::reference(reference)?,
        )?
        .to_csv()
    };
    match &s.output {
        Some(out) => {
            write_out(Some(out), &trace.to_jsonl())?;
            let lat_path = args.latency.clone().unwrap_or_else(|| sibling(out, ".latency.csv"));
            write_out(Some(&lat_path), &latency)?;
        }
        None => {
            write_out(None, &trace.to_jsonl())?;
            match &args.latency {
                Some(p) => write_out(Some(p), &latency)?,
                None => write_out(None, &latency)?,
            }
        }
    }
    Ok(true)
}

fn report(rows: &[CheckRow], output: Option<&Path>) -> Result<bool> {
    let table = format_table(rows);
    print!("{table}");
    if let Some(p) = output {
        write_out(Some(p), &table)?;
    }
    Ok(rows.iter().all(CheckRow::passed))
}

pub fn oracle_check(s: &Settings, args: &OracleArgs) -> Result<bool> {
    let seed = s.seed.unwrap_or(0);
    let grid = OracleGrid {
        max_frames: args.max_frames,
        max_steps: args.max_steps,
        max_heads: args.max_heads,
        seeds: args.seeds,
    };
    let mut rows = checks::oracle_equivalence(&grid)?;
    rows.extend(checks::normalization(args.instances, seed)?);
    rows.extend(checks::degenerate_reductions(args.instances, seed)?);
    let epsilons = s.eps_list.clone().unwrap_or_else(|| vec![1, 2, 8]);
    rows.extend(checks::hsd_invariants(&[2, 4], &epsilons, args.samples, seed)?);
    report(&rows, s.output.as_deref())
}

pub fn gradcheck(s: &Settings, args: &GradArgs) -> Result<bool> {
    let rows = checks::gradient_checks(args.seeds)?;
    report(&rows, s.output.as_deref())
}

pub fn train(s: &Settings, args: &TrainArgs) -> Result<bool> {
    let Some(out) = &s.output else {
        bail!("--output (checkpoint path) is required");
    };
    let mut cfg = s.train;
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    let outcome = train_model(&cfg, &s.task)?;
    let mut buf = Vec::new();
    write_checkpoint(&outcome.best, &mut buf)?;
    fs::write(out, buf).with_context(|| format!("writing {}", out.display()))?;
    let log_path = args.log.clone().unwrap_or_else(|| sibling(out, ".log.csv"));
    write_out(Some(&log_path), &log_csv(&outcome.log))?;
    eprintln!(
        "best epoch {} with held-out accuracy {:.4}; checkpoint {}, log {}",
        outcome.best.epoch,
        outcome.best.accuracy,
        out.display(),
        log_path.display()
    );
    Ok(true)
}

/// Held-out task used for evaluation: the checkpoint's task reseeded.
fn eval_task(task: &SyntheticTask, s: &Settings, count: usize) -> SyntheticTask {
    let seed = s.eval_seed.unwrap_or(task.seed.wrapping_add(1000));
    SyntheticTask {
        num_examples: count,
        ..task.reseeded(seed)
    }
}

fn series_label(ckpt: &Checkpoint) -> String {
    let t = &ckpt.train;
    match t.mode {
        mcmma::toy::TrainMode::Mma => format!("mma seed={}", t.seed),
        m => format!("{} eps={} seed={}", m.name(), t.epsilon_train, t.seed),
    }
}

pub fn eval(s: &Settings, args: &EvalArgs, force_plot: bool) -> Result<bool> {
    if s.input.is_empty() {
        bail!("--input (one or more checkpoints) is required");
    }
    let eps_list = s.eps_list.clone().unwrap_or_else(|| DEFAULT_EPS_LIST.to_vec());
    let opts = EvalOptions {
        policy: s.policy(0),
        reference: args.reference.map(reference_from_arg).unwrap_or(s.reference),
        ..EvalOptions::default()
    };
    let count = args.examples.unwrap_or(s.eval_examples);
    if count == 0 {
        bail!("--examples must be at least 1");
    }
    let mut labels: Vec<String> = Vec::new();
    let mut tables = Vec::new();
    let mut series = Vec::new();
    for path in &s.input {
        let ckpt = load_checkpoint(path)?;
        let data = gen_synthetic(&eval_task(&ckpt.task, s, count))?;
        let rows = evaluate(&ckpt, &data.examples, &eps_list, &opts)?;
        let mut label = series_label(&ckpt);
        if labels.contains(&label) {
            label = format!("{label} #{}", labels.len() + 1);
        }
        series.push(Series {
            label: label.clone(),
            points: rows
                .iter()
                .map(|r| (r.rel_ms, 100.0 * r.token_error, format!("ε={}", r.epsilon)))
                .collect(),
        });
        tables.push(tradeoff_csv(&rows));
        labels.push(label);
    }

    match (&s.output, tables.len()) {
        (None, _) => {
            for (label, t) in labels.iter().zip(&tables) {
                if tables.len() > 1 {
                    println!("# {label}");
                }
                print!("{t}");
            }
        }
        (Some(out), 1) => write_out(Some(out), &tables[0])?,
        (Some(out), _) => {
            for (label, t) in labels.iter().zip(&tables) {
                let slug: String = label
                    .chars()
                    .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
                    .collect();
                write_out(Some(&sibling(out, &format!(".{slug}.csv"))), t)?;
            }
        }
    }

    let plot = match (&args.plot, &s.output) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(out)) if force_plot => Some(sibling(out, ".svg")),
        (None, None) if force_plot => bail!("tradeoff needs --output or --plot for the chart"),
        _ => None,
    };
    if let Some(p) = plot {
        let chart = Chart {
            title: "Latency / quality trade-off".into(),
            x_label: "relative latency (ms)".into(),
            y_label: "token error (%)".into(),
            series,
        };
        write_out(Some(&p), &chart.to_svg())?;
    }
    Ok(true)
}
