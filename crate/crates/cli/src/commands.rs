use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use streamgcn_core::io::{
    extract_dir, extract_file, load_sequence, load_sequence_dir, load_streams, load_streams_dir,
    read_scores, save_sequence_dir, synth_generate, write_metric_log, write_scores, SynthSpec,
    SKELETON_EXT, STREAMS_EXT,
};
use streamgcn_core::model::{load_checkpoint, network_grad_check, save_checkpoint, Model};
use streamgcn_core::train::{
    accuracy, ensemble, evaluate, train, Evaluation, ScoreRow, StreamDataset,
};
use streamgcn_core::{build_stream_set, SkeletonTopology, StreamKind};

use crate::settings;
use crate::Command;

pub fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Extract { input, out } => extract(&input, &out),
        Command::Synth { out, seed, config } => {
            let mut cfg =
                settings::load(&config, "synth", &[("seed", seed.map(|s| s.to_string()))])?;
            let s = settings::synth(&mut cfg)?;
            cfg.finish()?;
            synth(&out, s)
        }
        Command::Train {
            data,
            out,
            test,
            stream,
            objective,
            epochs,
            threads,
            seed,
            verbose,
            config,
        } => {
            let flags = [
                ("stream", stream),
                ("objective", objective),
                ("epochs", epochs.map(|v| v.to_string())),
                ("threads", threads.map(|v| v.to_string())),
                ("seed", seed.map(|v| v.to_string())),
            ];
            let mut cfg = settings::load(&config, "train", &flags)?;
            let s = settings::training(&mut cfg)?;
            let (dataset, topology) = load_stream_data(&data, s.stream)?;
            let net = settings::network(&mut cfg, dataset.joints, dataset.num_classes, "desk")?;
            cfg.finish()?;
            train_command(dataset, topology, net, s, &out, test.as_deref(), verbose)
        }
        Command::Eval {
            model,
            data,
            scores,
        } => eval(&model, &data, scores.as_deref()),
        Command::Ensemble {
            inputs,
            weights,
            out,
        } => ensemble_command(&inputs, &weights, out.as_deref()),
        Command::Gradcheck { seed, config } => {
            let mut cfg = settings::load(
                &config,
                "gradcheck",
                &[("seed", seed.map(|s| s.to_string()))],
            )?;
            let s = settings::gradcheck(&mut cfg)?;
            cfg.finish()?;
            gradcheck(s)
        }
        Command::AttnDump { model, input, out } => attn_dump(&model, &input, out.as_deref()),
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn extract(input: &Path, out: &Path) -> Result<ExitCode> {
    let t0 = Instant::now();
    if input.is_dir() {
        let n = extract_dir(input, out)?;
        println!(
            "extracted {n} files into {} in {:.2}s",
            out.display(),
            t0.elapsed().as_secs_f64()
        );
    } else {
        extract_file(input, out)?;
        println!("wrote {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn synth(out: &Path, s: settings::SynthSettings) -> Result<ExitCode> {
    let train_set = synth_generate(&s.spec, s.seed)?;
    if s.test_per_class == 0 {
        save_sequence_dir(&train_set, out)?;
        println!(
            "wrote {} sequences to {}",
            train_set.items.len(),
            out.display()
        );
        return Ok(ExitCode::SUCCESS);
    }
    let test_spec = SynthSpec {
        per_class: s.test_per_class,
        ..s.spec.clone()
    };
    // A separate stream of draws keeps the test split disjoint from training.
    let mut test_set = synth_generate(&test_spec, s.seed ^ 0x9e37_79b9_7f4a_7c15)?;
    for it in &mut test_set.items {
        it.id = it.id.replacen("synth", "test", 1);
    }
    save_sequence_dir(&train_set, &out.join("train"))?;
    save_sequence_dir(&test_set, &out.join("test"))?;
    println!(
        "wrote {} training and {} test sequences to {}",
        train_set.items.len(),
        test_set.items.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn has_files(dir: &Path, ext: &str) -> Result<bool> {
    Ok(!streamgcn_core::io::list_files(dir, ext)
        .with_context(|| format!("reading {}", dir.display()))?
        .is_empty())
}

/// One stream of a directory holding either extracted `.streams` files or
/// raw `.skel` files.
fn load_stream_data(dir: &Path, stream: StreamKind) -> Result<(StreamDataset, SkeletonTopology)> {
    if has_files(dir, STREAMS_EXT)? {
        let d = load_streams_dir(dir)?;
        Ok((d.stream_dataset(stream)?, d.topology))
    } else if has_files(dir, SKELETON_EXT)? {
        let d = load_sequence_dir(dir)?;
        Ok((d.stream_dataset(stream)?, d.topology))
    } else {
        bail!(
            "{} holds no .{STREAMS_EXT} or .{SKELETON_EXT} files",
            dir.display()
        );
    }
}

fn print_evaluation(ev: &Evaluation) {
    println!("accuracy {:.4} ({} samples)", ev.accuracy, ev.scores.len());
    println!("confusion (rows true, columns predicted):");
    for row in &ev.confusion {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:5}")).collect();
        println!("  {}", cells.join(""));
    }
}

fn train_command(
    dataset: StreamDataset,
    topology: SkeletonTopology,
    net: streamgcn_core::model::NetworkConfig,
    s: settings::TrainSettings,
    out: &Path,
    test: Option<&Path>,
    verbose: bool,
) -> Result<ExitCode> {
    settings::ensure_dir(out)?;
    let t0 = Instant::now();
    println!(
        "training {} on {} samples: {} epochs, objective {}, seed {}",
        s.stream,
        dataset.len(),
        s.train.schedule.total_epochs,
        s.train.objective,
        s.train.seed
    );
    let outcome = train(&dataset, &topology, net, &s.train)?;
    if verbose {
        for l in &outcome.log {
            println!(
                "epoch {:3} lr {:.5} loss {:.4} train accuracy {:.4}",
                l.epoch, l.lr, l.total, l.train_accuracy
            );
        }
    }
    let ckpt = out.join("model.ckpt");
    save_checkpoint(&outcome.model, &ckpt)?;
    write_file(&out.join("metrics.csv"), write_metric_log(&outcome.log))?;
    if let Some(last) = outcome.log.last() {
        println!(
            "done in {:.1}s: final loss {:.4}, train accuracy {:.4}",
            t0.elapsed().as_secs_f64(),
            last.total,
            last.train_accuracy
        );
    }
    println!("wrote {} and metrics.csv", ckpt.display());
    if let Some(dir) = test {
        let (test_set, test_topology) = load_stream_data(dir, s.stream)?;
        if test_topology != topology {
            bail!(
                "{} uses a different skeleton than the training data",
                dir.display()
            );
        }
        let ev = evaluate(&outcome.model, &test_set)?;
        print_evaluation(&ev);
        write_file(&out.join("scores.csv"), write_scores(&ev.scores))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn eval(model_path: &Path, data: &Path, scores: Option<&Path>) -> Result<ExitCode> {
    let model = load_checkpoint(model_path)?;
    let (dataset, topology) = load_stream_data(data, model.stream)?;
    if topology != model.topology {
        bail!(
            "{} uses a different skeleton than the checkpoint",
            data.display()
        );
    }
    let ev = evaluate(&model, &dataset)?;
    println!("stream {}", model.stream);
    print_evaluation(&ev);
    if let Some(p) = scores {
        write_file(p, write_scores(&ev.scores))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn read_score_file(path: &Path) -> Result<Vec<ScoreRow>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    read_scores(&text).with_context(|| format!("parsing {}", path.display()))
}

fn ensemble_command(inputs: &[PathBuf], weights: &[f64], out: Option<&Path>) -> Result<ExitCode> {
    let weights = if weights.is_empty() {
        vec![1.0; inputs.len()]
    } else {
        weights.to_vec()
    };
    if weights.len() != inputs.len() {
        bail!(
            "{} weights given for {} score files",
            weights.len(),
            inputs.len()
        );
    }
    let lists = inputs
        .iter()
        .map(|p| read_score_file(p))
        .collect::<Result<Vec<_>>>()?;
    for (p, rows) in inputs.iter().zip(&lists) {
        println!("{}: accuracy {:.4}", p.display(), accuracy(rows)?);
    }
    let refs: Vec<&[ScoreRow]> = lists.iter().map(Vec::as_slice).collect();
    let fused = ensemble(&refs, &weights)?;
    println!(
        "ensemble accuracy {:.4} ({} samples)",
        fused.accuracy,
        fused.rows.len()
    );
    if let Some(p) = out {
        write_file(p, write_scores(&fused.rows))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(s: settings::GradcheckSettings) -> Result<ExitCode> {
    let t0 = Instant::now();
    let report = network_grad_check(&s.network, s.frames, s.objective, s.eps, s.seed)?;
    println!(
        "checked {} coordinates ({} blocks, {} joints, {} frames, objective {}) in {:.1}s",
        report.coords_checked,
        s.network.blocks.len(),
        s.network.num_joints,
        s.frames,
        s.objective,
        t0.elapsed().as_secs_f64()
    );
    println!(
        "max relative error {:.3e} (tolerance {:.0e})",
        report.max_rel_error, s.tolerance
    );
    if report.max_rel_error <= s.tolerance {
        println!("gradient check passed");
        Ok(ExitCode::SUCCESS)
    } else {
        let (input, coord) = report.worst;
        println!("gradient check FAILED: worst at input {input}, coordinate {coord}");
        Ok(ExitCode::FAILURE)
    }
}

fn attn_dump(model_path: &Path, input: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let model: Model = load_checkpoint(model_path)?;
    let is_streams = input.extension().is_some_and(|e| e == STREAMS_EXT);
    let (topology, series) = if is_streams {
        let f = load_streams(input)?;
        let series = f.streams.get(model.stream).clone();
        (f.topology, series)
    } else {
        let f = load_sequence(input)?;
        let set = build_stream_set(&f.sequence, &f.topology)?;
        (f.topology, set.get(model.stream).clone())
    };
    if topology != model.topology {
        bail!(
            "{} uses a different skeleton than the checkpoint",
            input.display()
        );
    }
    let pred = model.predict(&series)?;
    let mut csv = String::from("block,channel,weight\n");
    for (b, gate) in pred.attention.iter().enumerate() {
        for (c, w) in gate.iter().enumerate() {
            let _ = writeln!(csv, "{b},{c},{w}");
        }
    }
    match out {
        Some(p) => {
            write_file(p, &csv)?;
            eprintln!(
                "predicted class {} (stream {})",
                pred.argmax(),
                model.stream
            );
        }
        None => print!("{csv}"),
    }
    Ok(ExitCode::SUCCESS)
}
