//! Text formats: task streams, checkpoints and diagnostic CSVs.
//!
//! Floats are written with 17 significant digits (`{:.16e}`), which is
//! enough for every `f64` to parse back to the same bits.
//!
//! Stream file:
//!
//! ```text
//! #pgdr-stream C=10 d=16 T=5 q=0.3 W=90 seed=7 flip=uniform stddev=0.5
//! id<TAB>task<TAB>true_label<TAB>c1;c2;...<TAB>f1,f2,...,fd
//! ```
//!
//! Tasks are 1-based. Test points use `-` for the candidate field, with the
//! task of the class's introduction.

use std::fmt::Write as _;

use crate::data::{
    class_partition, FlipMode, LabelSet, LabeledPoint, Sample, StreamHeader, Task, TaskStream,
};
use crate::error::{Error, Result};
use crate::math::Matrix;
use crate::model::{Activation, Model, Parameters, TENSOR_NAMES};
use crate::prototypes::PrototypeBank;

const STREAM_MAGIC: &str = "#pgdr-stream";
const CHECKPOINT_MAGIC: &str = "#pgdr-checkpoint v1";

/// Upper bound on classes accepted from files; keeps a corrupt header from
/// requesting absurd allocations.
pub const MAX_CLASSES: usize = 1000;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn join_floats(values: &[f64]) -> String {
    let mut out = String::with_capacity(values.len() * 24);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v:.16e}");
    }
    out
}

fn parse_floats(line: usize, field: &str) -> Result<Vec<f64>> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(',')
        .map(|s| {
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| Error::parse(line, format!("bad number `{s}`")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::parse(line, "non-finite number"))
            }
        })
        .collect()
}

fn parse_num<T: std::str::FromStr>(line: usize, what: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::parse(line, format!("bad {what} `{raw}`")))
}

pub fn write_stream(stream: &TaskStream) -> String {
    let h = &stream.header;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{STREAM_MAGIC} C={} d={} T={} q={:?} W={} seed={} flip={} stddev={:?}",
        h.num_classes, h.feature_dim, h.tasks, h.q, h.w, h.seed, h.flip_mode, h.cluster_stddev
    );
    for task in &stream.tasks {
        for s in &task.train {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                s.id,
                s.task + 1,
                s.true_label,
                s.candidates,
                join_floats(&s.features)
            );
        }
    }
    for p in &stream.test {
        let home = stream
            .tasks
            .iter()
            .position(|t| t.new_classes.contains(p.label))
            .unwrap_or(0);
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t-\t{}",
            p.id,
            home + 1,
            p.label,
            join_floats(&p.features)
        );
    }
    out
}

fn parse_stream_header(line: &str) -> Result<StreamHeader> {
    let rest = line
        .strip_prefix(STREAM_MAGIC)
        .ok_or_else(|| Error::parse(1, format!("missing `{STREAM_MAGIC}` header")))?;
    let mut fields: [Option<&str>; 8] = [None; 8];
    const NAMES: [&str; 8] = ["C", "d", "T", "q", "W", "seed", "flip", "stddev"];
    for tok in rest.split_whitespace() {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::parse(1, format!("bad header field `{tok}`")))?;
        let slot = NAMES
            .iter()
            .position(|n| *n == k)
            .ok_or_else(|| Error::parse(1, format!("unknown header field `{k}`")))?;
        if fields[slot].replace(v).is_some() {
            return Err(Error::parse(1, format!("header field `{k}` repeated")));
        }
    }
    let get =
        |i: usize| fields[i].ok_or_else(|| Error::parse(1, format!("header lacks `{}`", NAMES[i])));
    let header = StreamHeader {
        num_classes: parse_num(1, "C", get(0)?)?,
        feature_dim: parse_num(1, "d", get(1)?)?,
        tasks: parse_num(1, "T", get(2)?)?,
        q: parse_num(1, "q", get(3)?)?,
        w: parse_num(1, "W", get(4)?)?,
        seed: parse_num(1, "seed", get(5)?)?,
        flip_mode: get(6)?
            .parse::<FlipMode>()
            .map_err(|e| Error::parse(1, e.to_string()))?,
        cluster_stddev: parse_num(1, "stddev", get(7)?)?,
    };
    if header.num_classes == 0 || header.num_classes > MAX_CLASSES {
        return Err(Error::parse(1, format!("C must be in 1..={MAX_CLASSES}")));
    }
    if header.tasks == 0 || header.tasks > header.num_classes {
        return Err(Error::parse(1, "T must be in 1..=C"));
    }
    if header.feature_dim == 0 || header.w > 100 || !(0.0..=1.0).contains(&header.q) {
        return Err(Error::parse(
            1,
            "d must be positive, W at most 100, q in [0, 1]",
        ));
    }
    if !(header.cluster_stddev >= 0.0 && header.cluster_stddev.is_finite()) {
        return Err(Error::parse(1, "stddev must be non-negative"));
    }
    Ok(header)
}

/// Parses a stream file. Task label spaces are rebuilt from `C` and `T`.
pub fn parse_stream(text: &str) -> Result<TaskStream> {
    let mut lines = text.lines();
    let header = parse_stream_header(lines.next().unwrap_or(""))?;
    let sizes = class_partition(header.num_classes, header.tasks);
    let mut tasks = Vec::with_capacity(header.tasks);
    let mut home = vec![0usize; header.num_classes];
    let mut seen = 0;
    for (t, &n) in sizes.iter().enumerate() {
        home[seen..seen + n].fill(t);
        tasks.push(Task {
            index: t,
            new_classes: LabelSet::new(seen..seen + n),
            label_space: LabelSet::new(0..seen + n),
            train: Vec::new(),
        });
        seen += n;
    }

    let mut test = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (i, raw) in lines.enumerate() {
        let line = i + 2;
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::parse(
                line,
                format!("expected 5 fields, got {}", fields.len()),
            ));
        }
        let id: u64 = parse_num(line, "id", fields[0])?;
        let task: usize = parse_num(line, "task", fields[1])?;
        let label: usize = parse_num(line, "label", fields[2])?;
        let features = parse_floats(line, fields[4])?;
        if !ids.insert(id) {
            return Err(Error::parse(line, format!("duplicate id {id}")));
        }
        if task == 0 || task > header.tasks {
            return Err(Error::parse(
                line,
                format!("task {task} outside 1..={}", header.tasks),
            ));
        }
        if label >= header.num_classes {
            return Err(Error::parse(
                line,
                format!("label {label} outside the class range"),
            ));
        }
        if features.len() != header.feature_dim {
            return Err(Error::parse(
                line,
                format!(
                    "{} features, header says {}",
                    features.len(),
                    header.feature_dim
                ),
            ));
        }
        let task = task - 1;
        if fields[3] == "-" {
            if home[label] != task {
                return Err(Error::parse(line, "test point listed under the wrong task"));
            }
            test.push(LabeledPoint {
                id,
                features,
                label,
            });
            continue;
        }
        let candidates = LabelSet::new(
            fields[3]
                .split(';')
                .map(|c| parse_num::<usize>(line, "candidate", c))
                .collect::<Result<Vec<_>>>()?,
        );
        let space = &tasks[task].label_space;
        if !candidates.is_subset(space) {
            return Err(Error::parse(
                line,
                "candidate outside the task's label space",
            ));
        }
        if !candidates.contains(label) {
            return Err(Error::parse(line, "true label missing from candidates"));
        }
        tasks[task].train.push(Sample {
            id,
            features,
            true_label: label,
            candidates,
            task,
        });
    }
    Ok(TaskStream {
        header,
        tasks,
        test,
    })
}

/// Trained state worth persisting: the model and the prototype bank.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub bank: PrototypeBank,
}

pub fn write_checkpoint(ckpt: &Checkpoint) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_MAGIC}");
    let _ = writeln!(out, "activation {}", ckpt.model.activation());
    for (prefix, params) in [
        ("param", ckpt.model.params()),
        ("velocity", ckpt.model.velocity()),
    ] {
        for (name, (rows, cols, data)) in TENSOR_NAMES.iter().zip(params.tensors()) {
            let _ = writeln!(out, "tensor {prefix}.{name} {rows} {cols}");
            let _ = writeln!(out, "{}", join_floats(data));
        }
    }
    let bank = &ckpt.bank;
    let _ = writeln!(
        out,
        "prototypes {} {} {}",
        bank.dim(),
        bank.num_slots(),
        fmt_f64(bank.gamma())
    );
    for c in 0..bank.num_slots() {
        match bank.get(c) {
            Some(p) => {
                let _ = writeln!(out, "{c} {}", join_floats(p));
            }
            None => {
                let _ = writeln!(out, "{c} -");
            }
        }
    }
    out
}

struct LineReader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> LineReader<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.lines.next() {
            Some((i, l)) => Ok((i + 1, l)),
            None => Err(Error::parse(
                0,
                format!("unexpected end of file, expected {what}"),
            )),
        }
    }
}

fn read_tensor(r: &mut LineReader<'_>, expected_name: &str) -> Result<(usize, usize, Vec<f64>)> {
    let (line, head) = r.next("tensor header")?;
    let parts: Vec<&str> = head.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "tensor" || parts[1] != expected_name {
        return Err(Error::parse(
            line,
            format!("expected `tensor {expected_name} <rows> <cols>`"),
        ));
    }
    let rows: usize = parse_num(line, "rows", parts[2])?;
    let cols: usize = parse_num(line, "cols", parts[3])?;
    let (line, body) = r.next("tensor values")?;
    let data = parse_floats(line, body)?;
    if Some(data.len()) != rows.checked_mul(cols) {
        return Err(Error::parse(
            line,
            format!("{} values for a {rows}x{cols} tensor", data.len()),
        ));
    }
    Ok((rows, cols, data))
}

fn read_parameters(r: &mut LineReader<'_>, prefix: &str) -> Result<Parameters> {
    let mut tensors = Vec::with_capacity(4);
    for name in TENSOR_NAMES {
        tensors.push(read_tensor(r, &format!("{prefix}.{name}"))?);
    }
    let mut it = tensors.into_iter();
    let (h, d, ew) = it.next().unwrap_or_default();
    let (eb_rows, eb_cols, eb) = it.next().unwrap_or_default();
    let (c, hw_cols, hw) = it.next().unwrap_or_default();
    let (hb_rows, hb_cols, hb) = it.next().unwrap_or_default();
    if eb_rows != h || eb_cols != 1 || hw_cols != h || hb_rows != c || hb_cols != 1 {
        return Err(Error::parse(
            0,
            format!("inconsistent {prefix} tensor shapes"),
        ));
    }
    Ok(Parameters {
        encoder_weight: Matrix::from_vec(h, d, ew)?,
        encoder_bias: eb,
        head_weight: Matrix::from_vec(c, h, hw)?,
        head_bias: hb,
    })
}

pub fn parse_checkpoint(text: &str) -> Result<Checkpoint> {
    let mut r = LineReader {
        lines: text.lines().enumerate(),
    };
    let (line, magic) = r.next("header")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::parse(line, "not a checkpoint file"));
    }
    let (line, act) = r.next("activation")?;
    let activation: Activation = act
        .strip_prefix("activation ")
        .ok_or_else(|| Error::parse(line, "expected `activation <name>`"))?
        .parse()
        .map_err(|e: Error| Error::parse(line, e.to_string()))?;
    let params = read_parameters(&mut r, "param")?;
    let velocity = read_parameters(&mut r, "velocity")?;
    let model = Model::from_parts(activation, params, velocity)?;

    let (line, head) = r.next("prototype header")?;
    let parts: Vec<&str> = head.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "prototypes" {
        return Err(Error::parse(
            line,
            "expected `prototypes <dim> <slots> <gamma>`",
        ));
    }
    let dim: usize = parse_num(line, "dim", parts[1])?;
    let slots: usize = parse_num(line, "slots", parts[2])?;
    let gamma: f64 = parse_num(line, "gamma", parts[3])?;
    if slots > MAX_CLASSES {
        return Err(Error::parse(line, "too many prototype slots"));
    }
    let mut bank = PrototypeBank::new(dim, gamma).map_err(|e| Error::parse(line, e.to_string()))?;
    bank.reserve_slots(slots);
    for c in 0..slots {
        let (line, row) = r.next("prototype row")?;
        let (idx, body) = row
            .split_once(' ')
            .ok_or_else(|| Error::parse(line, "expected `<class> <values>`"))?;
        if parse_num::<usize>(line, "class", idx)? != c {
            return Err(Error::parse(line, format!("expected prototype row {c}")));
        }
        if body != "-" {
            bank.set(c, parse_floats(line, body)?)
                .map_err(|e| Error::parse(line, e.to_string()))?;
        }
    }
    if let Ok((line, _)) = r.next("end") {
        return Err(Error::parse(line, "trailing content after prototypes"));
    }
    Ok(Checkpoint { model, bank })
}

/// `task,class,id,kind,proto_dist,knn_score`
pub const MEMORY_CSV_HEADER: &str = "task,class,id,kind,proto_dist,knn_score";
/// `task,id,e,w,membership,cand_size,realloc_size,true_old`
pub const SEPARATION_CSV_HEADER: &str = "task,id,e,w,membership,cand_size,realloc_size,true_old";
pub const METRICS_CSV_HEADER: &str = "task,acc_all,acc_new,acc_old,sep_acc,loss_ce,loss_kd,loss_cr";

/// Empty cell for missing values.
pub fn opt_cell(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}
