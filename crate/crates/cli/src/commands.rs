use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use evmx_core::dataset::synth::write_dataset;
use evmx_core::dataset::{generate_synthetic, load_manifest, split_loocv, ClipRecord, SyntheticSpec};
use evmx_core::events::{parse_csv, parse_csv_sorted, parse_evm, write_evm, EventStream, SensorGeometry};
use evmx_core::image::{read_pgm, write_pgm, Image};
use evmx_core::metrics::report;
use evmx_core::reconstruction::{
    evaluate_cvae, load_pairs, read_cvae_checkpoint, reconstruct_dataset, train_cvae, write_cvae_checkpoint,
    Cvae, CvaeConfig, CvaeTrainConfig,
};
use evmx_core::representation::{
    build_sequence, clip_to_input, read_evf, resize_bilinear, write_evf, BoundingBox, BoxSchedule, CropSpec,
    DenseFrames, Encoding, InputClip, ReprError,
};
use evmx_core::snn::{evaluate, read_checkpoint, train, write_checkpoint, Evaluation, Network, NetworkSpec, TrainConfig};
use rayon::prelude::*;
use serde_json::json;

use crate::error::Failure;
use crate::{
    ClipArgs, Command, EvalCvaeArgs, EvalSnnArgs, FramesArgs, IngestArgs, Preset, Sensor, SynthArgs, TrainCvaeArgs,
    TrainSnnArgs,
};

pub fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Ingest(a) => ingest(a),
        Command::Frames(a) => frames(a),
        Command::TrainSnn(a) => train_snn(a),
        Command::EvalSnn(a) => eval_snn(a),
        Command::TrainCvae(a) => train_cvae_cmd(a),
        Command::EvalCvae(a) => eval_cvae(a),
        Command::Synth(a) => synth(a),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::io(path, e))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| Failure::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

/// `dir/<stem><ext>` for every input; stems must be unique.
fn outputs_for(inputs: &[PathBuf], dir: &Path, ext: &str) -> Result<Vec<PathBuf>, Failure> {
    let mut seen = BTreeSet::new();
    inputs
        .iter()
        .map(|p| {
            let stem = p
                .file_stem()
                .ok_or_else(|| Failure::validation(format!("{}: no file name", p.display())))?;
            if !seen.insert(stem.to_owned()) {
                return Err(Failure::validation(format!(
                    "{}: another input has the same file stem",
                    p.display()
                )));
            }
            let mut name = stem.to_owned();
            name.push(ext);
            Ok(dir.join(name))
        })
        .collect()
}

fn load_stream(path: &Path, geometry: &SensorGeometry, sort: bool) -> Result<(EventStream, usize), Failure> {
    let csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let result = if csv {
        let bytes = read(path)?;
        let text = std::str::from_utf8(&bytes).map_err(|e| Failure::validation(e.to_string()).at(path))?;
        if sort {
            parse_csv_sorted(text, geometry.clone())
        } else {
            parse_csv(text, geometry.clone()).map(|s| (s, 0))
        }
    } else {
        let bytes = read(path)?;
        if sort {
            evmx_core::events::parse_evm_sorted(&bytes)
        } else {
            parse_evm(&bytes).map(|s| (s, 0))
        }
    };
    result.map_err(|e| Failure::from(e).at(path))
}

fn ingest(a: IngestArgs) -> Result<(), Failure> {
    let geometry = match a.sensor {
        Sensor::Davis346 => SensorGeometry::davis346(),
        Sensor::Evk4 => SensorGeometry::evk4(),
    };
    let outputs = outputs_for(&a.inputs, &a.out_dir, ".evm")?;
    let streams: Vec<_> = a
        .inputs
        .par_iter()
        .map(|p| load_stream(p, &geometry, a.sort))
        .collect::<Result<_, _>>()?;
    create_dir(&a.out_dir)?;
    let mut total = 0;
    for ((input, output), (stream, reordered)) in a.inputs.iter().zip(&outputs).zip(&streams) {
        write(output, write_evm(stream))?;
        total += stream.len();
        println!(
            "{} -> {} events={} reordered={reordered}",
            input.display(),
            output.display(),
            stream.len()
        );
    }
    println!("ingested files={} events={total}", streams.len());
    Ok(())
}

struct FrameSummary {
    events: usize,
    slices: usize,
    counted: u64,
    in_box: usize,
}

fn frames_one(input: &Path, output: &Path, a: &FramesArgs) -> Result<FrameSummary, Failure> {
    let (stream, _) = load_stream(input, &SensorGeometry::davis346(), false)?;
    let bbox = a.bbox.unwrap_or_else(|| BoundingBox::full(stream.geometry()));
    bbox.check(stream.geometry()).map_err(|e| Failure::from(e).at(input))?;
    let seq = build_sequence(&stream, a.slice_us).map_err(|e| Failure::from(e).at(input))?;
    let spec = CropSpec::new(bbox, a.crop)?;
    let clip = clip_to_input(&stream, &BoxSchedule::Static(spec), a.slice_us, Encoding::Raw, 0)
        .map_err(|e| Failure::from(e).at(input))?;
    write(output, write_evf(&DenseFrames::from_clip(&clip)))?;
    let in_box = stream
        .events()
        .iter()
        .filter(|e| {
            let (x, y) = (e.x as u32, e.y as u32);
            x >= bbox.x0 && x < bbox.x0 + bbox.w && y >= bbox.y0 && y < bbox.y0 + bbox.h
        })
        .count();
    Ok(FrameSummary {
        events: stream.len(),
        slices: seq.len(),
        counted: seq.total(),
        in_box,
    })
}

fn frames(a: FramesArgs) -> Result<(), Failure> {
    let outputs = outputs_for(&a.inputs, &a.out_dir, ".evf")?;
    create_dir(&a.out_dir)?;
    let results: Vec<_> = a
        .inputs
        .par_iter()
        .zip(&outputs)
        .map(|(i, o)| frames_one(i, o, &a))
        .collect();
    let (mut written, mut empty, mut events, mut counted) = (0, 0, 0, 0);
    for ((input, output), r) in a.inputs.iter().zip(&outputs).zip(results) {
        match r {
            Ok(s) => {
                println!(
                    "{} -> {} events={} slices={} counted={} in_box={}",
                    input.display(),
                    output.display(),
                    s.events,
                    s.slices,
                    s.counted,
                    s.in_box
                );
                written += 1;
                events += s.events;
                counted += s.counted;
            }
            Err(e) if e.message.ends_with(&ReprError::EmptyStream.to_string()) => {
                eprintln!("{e}");
                empty += 1;
            }
            Err(e) => return Err(e),
        }
    }
    println!("frames clips={written} empty={empty} events={events} counted={counted}");
    Ok(())
}

/// Plane-wise bilinear resize of `[T][2][h][w]` frames to `side x side`.
fn resize_frames(frames: &DenseFrames, side: usize) -> Vec<f64> {
    if frames.height == side && frames.width == side {
        return frames.data.clone();
    }
    frames
        .data
        .chunks(frames.height * frames.width)
        .flat_map(|p| resize_bilinear(p, frames.width, frames.height, side))
        .collect()
}

/// Load one manifest clip as a network input. EVF1 files are taken as
/// already sliced frames; anything else is read as an EVM1 stream.
fn load_clip(record: &ClipRecord, clip: &ClipArgs) -> Result<InputClip, Failure> {
    let path = &record.clip_path;
    let label = record.label.class_index();
    let at = |e: ReprError| Failure::from(e).at(path);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("evf")) {
        let frames = read_evf(&read(path)?).map_err(at)?;
        if frames.channels != 2 {
            return Err(Failure::validation(format!("expected 2 channels, found {}", frames.channels)).at(path));
        }
        if frames.steps == 0 {
            return Err(at(ReprError::EmptyStream));
        }
        let mut data = resize_frames(&frames, clip.crop);
        clip.encoding.apply(&mut data);
        return InputClip::new(frames.steps, clip.crop, data, label).map_err(at);
    }
    let (stream, _) = load_stream(path, &SensorGeometry::davis346(), false)?;
    let bbox = record.bbox.unwrap_or_else(|| BoundingBox::full(stream.geometry()));
    bbox.check(stream.geometry()).map_err(at)?;
    let spec = CropSpec::new(bbox, clip.crop).map_err(at)?;
    clip_to_input(&stream, &BoxSchedule::Static(spec), clip.slice_us, clip.encoding, label).map_err(at)
}

/// Clips in manifest order; empty streams are reported and left out as `None`.
fn load_clips(records: &[ClipRecord], clip: &ClipArgs) -> Result<Vec<Option<InputClip>>, Failure> {
    let loaded: Vec<_> = records.par_iter().map(|r| load_clip(r, clip)).collect();
    let empty = ReprError::EmptyStream.to_string();
    loaded
        .into_iter()
        .map(|r| match r {
            Ok(c) => Ok(Some(c)),
            Err(e) if e.message.ends_with(&empty) => {
                eprintln!("{e}");
                Ok(None)
            }
            Err(e) => Err(e),
        })
        .collect()
}

fn present(clips: &[Option<InputClip>], idx: impl IntoIterator<Item = usize>) -> Vec<InputClip> {
    idx.into_iter().filter_map(|i| clips[i].clone()).collect()
}

fn truncate(clips: Vec<InputClip>, max_steps: Option<usize>) -> Vec<InputClip> {
    let Some(m) = max_steps else { return clips };
    clips
        .into_iter()
        .map(|c| {
            if c.steps() <= m {
                return c;
            }
            let data = c.data()[..m * c.frame_len()].to_vec();
            InputClip::new(m, c.side(), data, c.label).expect("prefix of a valid clip")
        })
        .collect()
}

/// Subject ids as directory names.
fn fold_dir(root: &Path, subject: &str) -> PathBuf {
    let safe: String = subject
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    root.join(format!("fold_{safe}"))
}

const FOLD_HEADER: &str = "subject,test_clips,accuracy,top3_accuracy";

struct FoldRow {
    subject: String,
    clips: usize,
    eval: Evaluation,
}

fn fold_table(rows: &[FoldRow]) -> String {
    let mut s = format!("{FOLD_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.subject, r.clips, r.eval.accuracy, r.eval.top3_accuracy));
    }
    let n = rows.len() as f64;
    let acc = rows.iter().map(|r| r.eval.accuracy).sum::<f64>() / n;
    let top3 = rows.iter().map(|r| r.eval.top3_accuracy).sum::<f64>() / n;
    let clips: usize = rows.iter().map(|r| r.clips).sum();
    s.push_str(&format!("mean,{clips},{acc},{top3}\n"));
    s
}

fn fold_json(rows: &[FoldRow]) -> serde_json::Value {
    let n = rows.len() as f64;
    json!({
        "folds": rows.iter().map(|r| json!({
            "subject": r.subject,
            "test_clips": r.clips,
            "accuracy": r.eval.accuracy,
            "top3_accuracy": r.eval.top3_accuracy,
            "confusion": r.eval.confusion,
        })).collect::<Vec<_>>(),
        "mean_accuracy": rows.iter().map(|r| r.eval.accuracy).sum::<f64>() / n,
        "mean_top3_accuracy": rows.iter().map(|r| r.eval.top3_accuracy).sum::<f64>() / n,
    })
}

fn train_one(a: &TrainSnnArgs, train_set: &[InputClip], val: Option<&[InputClip]>, dir: &Path) -> Result<Network, Failure> {
    let spec = NetworkSpec::conv_plif(2, a.clip.crop, &[32, 32], &[512, 210], 21, a.dropout)?;
    let mut net = Network::new(spec, a.seed)?;
    let config = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch,
        dropout_rate: a.dropout,
        seed: a.seed,
        max_steps: a.max_steps,
        stop_at_accuracy: a.stop_at_accuracy,
        ..TrainConfig::default()
    };
    let outcome = train(&mut net, train_set, val, &config)?;
    create_dir(dir)?;
    write(&dir.join("snn.ckpt"), write_checkpoint(&net, Some(&outcome.optimizer)))?;
    write(&dir.join("train_log.csv"), outcome.log_text())?;
    if let Some(last) = outcome.log.last() {
        println!("{} {last}", dir.display());
    }
    Ok(net)
}

fn train_snn(a: TrainSnnArgs) -> Result<(), Failure> {
    let records = load_manifest(&a.manifest).map_err(|e| Failure::from(e).at(&a.manifest))?;
    let clips = load_clips(&records, &a.clip)?;
    if !a.loocv {
        let val = match &a.val_manifest {
            Some(p) => {
                let r = load_manifest(p).map_err(|e| Failure::from(e).at(p))?;
                Some(present(&load_clips(&r, &a.clip)?, 0..r.len()))
            }
            None => None,
        };
        let train_set = present(&clips, 0..clips.len());
        println!("train clips={}", train_set.len());
        train_one(&a, &train_set, val.as_deref(), &a.out_dir)?;
        return Ok(());
    }
    let plan = split_loocv(&records)?;
    let mut rows = Vec::with_capacity(plan.folds.len());
    for fold in &plan.folds {
        let (train_idx, test_idx) = fold.partition(&records);
        let train_set = present(&clips, train_idx);
        let test_set = truncate(present(&clips, test_idx), a.max_steps);
        let net = train_one(&a, &train_set, None, &fold_dir(&a.out_dir, &fold.test_subject))?;
        let eval = evaluate(&net, &test_set).map_err(|e| Failure::from(e).at(Path::new(&fold.test_subject)))?;
        rows.push(FoldRow {
            subject: fold.test_subject.clone(),
            clips: test_set.len(),
            eval,
        });
    }
    let table = fold_table(&rows);
    write(&a.out_dir.join("loocv.csv"), &table)?;
    write(&a.out_dir.join("loocv.json"), format!("{}\n", fold_json(&rows)))?;
    print!("{table}");
    Ok(())
}

fn eval_snn(a: EvalSnnArgs) -> Result<(), Failure> {
    let records = load_manifest(&a.manifest).map_err(|e| Failure::from(e).at(&a.manifest))?;
    let load_net = |path: &Path| -> Result<Network, Failure> {
        let (net, _) = read_checkpoint(&read(path)?).map_err(|e| Failure::from(e).at(path))?;
        Ok(net)
    };
    let clip_args = |net: &Network| ClipArgs {
        slice_us: a.slice_us,
        crop: net.spec().input_side,
        encoding: a.encoding,
    };
    let json = if a.loocv {
        let plan = split_loocv(&records)?;
        let mut rows = Vec::with_capacity(plan.folds.len());
        let mut clips = None;
        for fold in &plan.folds {
            let net = load_net(&fold_dir(&a.checkpoint, &fold.test_subject).join("snn.ckpt"))?;
            if clips.is_none() {
                clips = Some(load_clips(&records, &clip_args(&net))?);
            }
            let (_, test_idx) = fold.partition(&records);
            let test_set = truncate(present(clips.as_ref().expect("loaded"), test_idx), a.max_steps);
            let eval = evaluate(&net, &test_set).map_err(|e| Failure::from(e).at(Path::new(&fold.test_subject)))?;
            rows.push(FoldRow {
                subject: fold.test_subject.clone(),
                clips: test_set.len(),
                eval,
            });
        }
        print!("{}", fold_table(&rows));
        fold_json(&rows)
    } else {
        let net = load_net(&a.checkpoint)?;
        let clips = load_clips(&records, &clip_args(&net))?;
        let set = truncate(present(&clips, 0..clips.len()), a.max_steps);
        let e = evaluate(&net, &set)?;
        println!("clips={} accuracy={} top3_accuracy={}", set.len(), e.accuracy, e.top3_accuracy);
        json!({
            "clips": set.len(),
            "accuracy": e.accuracy,
            "top3_accuracy": e.top3_accuracy,
            "confusion": e.confusion,
            "predictions": e.predictions,
        })
    };
    if let Some(p) = &a.report {
        write(p, format!("{json}\n"))?;
    }
    Ok(())
}

fn train_cvae_cmd(a: TrainCvaeArgs) -> Result<(), Failure> {
    let data = load_pairs(&a.pairs, a.crop, a.encoding)?;
    let config = CvaeConfig {
        latent_dim: a.latent,
        input_side: a.crop,
        condition_channels: data.condition_channels.max(1),
        kl_weight: a.kl_weight,
        ..CvaeConfig::default()
    };
    let mut model = Cvae::new(config, a.seed)?;
    let train_config = CvaeTrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch,
        seed: a.seed,
        ..CvaeTrainConfig::default()
    };
    println!("train pairs={}", data.len());
    let outcome = train_cvae(&mut model, &data, &train_config)?;
    create_dir(&a.out_dir)?;
    write(&a.out_dir.join("cvae.ckpt"), write_cvae_checkpoint(&model, Some(&outcome.optimizer)))?;
    write(&a.out_dir.join("cvae_log.csv"), outcome.log_text())?;
    if let Some(last) = outcome.log.last() {
        println!("{} {last}", a.out_dir.display());
    }
    Ok(())
}

fn eval_cvae(a: EvalCvaeArgs) -> Result<(), Failure> {
    let (data, outputs) = match (&a.checkpoint, &a.predictions) {
        (Some(ckpt), _) => {
            let (model, _) = read_cvae_checkpoint(&read(ckpt)?).map_err(|e| Failure::from(e).at(ckpt))?;
            let data = load_pairs(&a.pairs, model.config().input_side, a.encoding)?;
            let outputs = reconstruct_dataset(&model, &data)?;
            if data.is_empty() {
                // Surfaces the empty-dataset error.
                evaluate_cvae(&model, &data)?;
            }
            (data, outputs)
        }
        (None, Some(dir)) => {
            let data = load_pairs(&a.pairs, a.crop, a.encoding)?;
            let outputs = data
                .samples
                .iter()
                .map(|s| {
                    let p = dir.join(format!("{}.pgm", s.name));
                    read_pgm(&p).map_err(|e| Failure::from(e).at(&p))
                })
                .collect::<Result<Vec<_>, _>>()?;
            (data, outputs)
        }
        (None, None) => return Err(Failure::validation("need --checkpoint or --predictions")),
    };
    let side = data.side;
    let targets: Vec<Image> = data
        .samples
        .iter()
        .map(|s| Image::new(side, side, s.target.clone()))
        .collect::<Result<_, _>>()?;
    let rep = report(
        data.samples
            .iter()
            .zip(targets.iter().zip(&outputs))
            .map(|(s, (t, o))| (s.name.clone(), t, o)),
    )?;
    if let Some(dir) = &a.out_frames {
        create_dir(dir)?;
        for (s, o) in data.samples.iter().zip(&outputs) {
            let p = dir.join(format!("{}.pgm", s.name));
            write_pgm(&p, o).map_err(|e| Failure::from(e).at(&p))?;
        }
    }
    if let Some(p) = &a.report {
        write(p, rep.to_jsonl())?;
    }
    print!("{}", rep.to_text());
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let mut spec = match a.preset {
        Preset::FourMotion => SyntheticSpec::four_motion(a.clips, a.seed),
        Preset::AllClasses => SyntheticSpec::all_classes(a.clips, a.seed),
    };
    if let Some(w) = a.width {
        spec.width = w;
    }
    if let Some(h) = a.height {
        spec.height = h;
    }
    if let Some(d) = a.duration_us {
        spec.duration_us = d;
    }
    if let Some(r) = a.event_rate {
        spec.event_rate = r;
    }
    if let Some(r) = a.noise_rate {
        spec.noise_rate = r;
    }
    if let Some(s) = a.subjects {
        spec.subjects = s;
    }
    if a.slice_us == 0 {
        return Err(ReprError::InvalidSliceDuration.into());
    }
    let clips = generate_synthetic(&spec)?;
    let summary = write_dataset(&a.out_dir, &clips, a.slice_us, a.test_fraction)?;
    println!(
        "synth clips={} events={} train_pairs={} test_pairs={} dir={}",
        summary.clips,
        summary.events,
        summary.train_pairs,
        summary.test_pairs,
        a.out_dir.display()
    );
    Ok(())
}
