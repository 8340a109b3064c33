use std::fs;
use std::path::{Path, PathBuf};

use ncd_core::metrics::{evaluate_task_agnostic, evaluate_task_aware};
use ncd_core::model::{argmax, init_model};
use ncd_core::synth_data::generate;
use ncd_core::trainer::{discover, pretrain, run_ablation, TrainLog, Variant};
use ncd_core::{DatasetSplit, MetricsReport, ModelParams, Subset};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::{Cli, Command, ProtocolArg};

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref())?.with_seed(cli.seed);
    cfg.validate()?;
    let out = cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone());
    match &cli.command {
        Command::GenData => gen_data(&cfg, &out),
        Command::Pretrain { data } => cmd_pretrain(&cfg, data, &out),
        Command::Discover { data, checkpoint, from_scratch } => {
            cmd_discover(&cfg, data, checkpoint.as_deref(), *from_scratch, &out)
        }
        Command::Eval { data, checkpoint, protocol } => cmd_eval(&cfg, data, checkpoint, *protocol, &out),
        Command::Ablate { data } => cmd_ablate(&cfg, data, &out),
        Command::ExportEmbeddings { data, checkpoint } => cmd_export(&cfg, data, checkpoint, &out),
    }
}

fn io_err(what: &str, path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{what} {}: {e}", path.display()))
}

fn write_output(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err("cannot create", dir, e))?;
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| io_err("cannot write", &path, e))?;
    Ok(path)
}

fn read_data(path: &Path) -> Result<DatasetSplit, CliError> {
    let file = fs::File::open(path).map_err(|e| io_err("cannot open", path, e))?;
    DatasetSplit::read_csv(std::io::BufReader::new(file)).map_err(|e| io_err("cannot parse", path, e))
}

fn read_checkpoint(path: &Path) -> Result<ModelParams, CliError> {
    let file = fs::File::open(path).map_err(|e| io_err("cannot open", path, e))?;
    ModelParams::load(std::io::BufReader::new(file)).map_err(|e| io_err("cannot parse", path, e))
}

fn checkpoint_bytes(params: &ModelParams) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    params.save(&mut buf)?;
    Ok(buf)
}

/// Rejects a checkpoint whose geometry disagrees with the data or the config.
fn check_compatible(params: &ModelParams, split: &DatasetSplit, cfg: &RunConfig) -> Result<(), CliError> {
    let expected = cfg.model_dims(split);
    if params.dims != expected {
        return Err(CliError::Incompatible(format!(
            "checkpoint dimensions {:?} do not match data and config {:?}",
            params.dims, expected
        )));
    }
    Ok(())
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let split = generate(&cfg.data)?;
    let mut buf = Vec::new();
    split.write_csv(&mut buf)?;
    let path = write_output(out, "data.csv", &buf)?;
    println!(
        "wrote {}: labelled_train={} unlabelled_train={} labelled_test={} unlabelled_test={}",
        path.display(),
        split.labelled_train.len(),
        split.unlabelled_train.len(),
        split.labelled_test.len(),
        split.unlabelled_test.len()
    );
    Ok(())
}

fn write_run(out: &Path, stem: &str, params: &ModelParams, log: &TrainLog) -> Result<(), CliError> {
    let ckpt = write_output(out, &format!("{stem}.ckpt.json"), &checkpoint_bytes(params)?)?;
    let log_path = write_output(out, &format!("{stem}.log.jsonl"), log.to_jsonl().as_bytes())?;
    println!("wrote {} and {}", ckpt.display(), log_path.display());
    if let Some(last) = log.epochs.last() {
        println!("final epoch {}: ce={} total={}", last.epoch, last.losses.ce, last.losses.total);
    }
    Ok(())
}

fn cmd_pretrain(cfg: &RunConfig, data: &Path, out: &Path) -> Result<(), CliError> {
    let split = read_data(data)?;
    let train = cfg.train_config();
    let init = init_model(cfg.model_dims(&split), train.seed)?;
    let (params, log) = pretrain(&init, &split, &train)?;
    write_run(out, "pretrain", &params, &log)
}

fn cmd_discover(
    cfg: &RunConfig,
    data: &Path,
    checkpoint: Option<&Path>,
    from_scratch: bool,
    out: &Path,
) -> Result<(), CliError> {
    let split = read_data(data)?;
    let train = cfg.train_config();
    let start = match (checkpoint, from_scratch) {
        (Some(path), _) => {
            let params = read_checkpoint(path)?;
            check_compatible(&params, &split, cfg)?;
            params
        }
        (None, true) => init_model(cfg.model_dims(&split), train.seed)?,
        (None, false) => {
            return Err(CliError::Incompatible(
                "discover needs --checkpoint from a pretrain run, or --from-scratch".into(),
            ))
        }
    };
    let (params, log) = discover(&start, &split, &train)?;
    write_run(out, "discover", &params, &log)
}

fn cmd_eval(cfg: &RunConfig, data: &Path, checkpoint: &Path, protocol: ProtocolArg, out: &Path) -> Result<(), CliError> {
    let split = read_data(data)?;
    let params = read_checkpoint(checkpoint)?;
    check_compatible(&params, &split, cfg)?;
    let tau = params.dims.tau;
    let mut reports: Vec<MetricsReport> = Vec::new();
    if protocol != ProtocolArg::Agnostic {
        reports.push(evaluate_task_aware(&params, &split, tau)?);
    }
    if protocol != ProtocolArg::Aware {
        reports.extend(evaluate_task_agnostic(&params, &split, tau)?);
    }
    let mut text = String::new();
    for r in &reports {
        let line = r.to_json();
        println!("{line}");
        text.push_str(&line);
        text.push('\n');
    }
    write_output(out, "metrics.jsonl", text.as_bytes())?;
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig, data: &Path, out: &Path) -> Result<(), CliError> {
    let split = read_data(data)?;
    let train = cfg.train_config();
    let table = run_ablation(&split, &cfg.model_dims(&split), &train, &Variant::canonical(), &cfg.ablation.seeds)?;
    let csv = table.to_csv();
    print!("{csv}");
    write_output(out, "ablation.csv", csv.as_bytes())?;
    Ok(())
}

fn cmd_export(cfg: &RunConfig, data: &Path, checkpoint: &Path, out: &Path) -> Result<(), CliError> {
    let split = read_data(data)?;
    let params = read_checkpoint(checkpoint)?;
    check_compatible(&params, &split, cfg)?;
    let tau = params.dims.tau;
    let k = params.dims.num_outputs();
    let mut text = String::from("side,true_class,predicted_index");
    for i in 0..k {
        text.push_str(&format!(",l{i}"));
    }
    text.push('\n');
    let unlabelled_truth = split.unlabelled_truth(Subset::Test);
    let rows = split
        .labelled_test
        .iter()
        .map(|s| ("labelled", s.class, &s.features))
        .chain(split.unlabelled_test.iter().zip(&unlabelled_truth).map(|(s, &c)| ("unlabelled", c, &s.features)));
    let mut n = 0;
    for (side, class, x) in rows {
        let o = params.forward(x, tau)?;
        text.push_str(&format!("{side},{class},{}", argmax(&o.l)));
        for v in &o.l {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
        n += 1;
    }
    let path = write_output(out, "embeddings.csv", text.as_bytes())?;
    println!("wrote {} rows to {}", n, path.display());
    Ok(())
}
