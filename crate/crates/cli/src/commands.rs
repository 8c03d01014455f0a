//! One function per subcommand.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use lipread::decode::{decode_clip, nbest_rows, NBEST_HEADER};
use lipread::eval::{
    coverage_stats, coverage_tsv, histogram_tsv, read_id_text, score_pairs, wer_histogram, words, zipf_curve,
    zipf_tsv, EvalReport, UttResult,
};
use lipread::lm::{CharNgramLm, SequenceScorer};
use lipread::manifest::{Manifest, ManifestEntry};
use lipread::nn::{prepare_input, train as train_model, Model, TrainItem};
use lipread::roi::{extract_roi, fit_norm_stats, load_landmarks, neutral_reference, RoiClip, VideoU8, ROI_SIZE};
use lipread::synth::generate_corpus;
use lipread::tokenizer::normalize_for;
use lipread::Error;

use crate::artifacts::{self, Context, DataDir, DATA_MANIFEST, DATA_STATS};
use crate::Failure;

pub fn synth_data(ctx: &Context, out: &Path) -> Result<(), Failure> {
    let manifest = generate_corpus(&ctx.cfg.synth(), &ctx.vocab, out)?;
    let header = ctx.header_text("synth-data");
    artifacts::write(&out.join("manifest.tsv"), &(header.clone() + &manifest.to_tsv()))?;
    artifacts::write(&out.join("transcripts.txt"), &(header + &manifest.transcripts()))?;
    log::info!("wrote {} synthetic utterances to {}", manifest.len(), out.display());
    Ok(())
}

fn preprocess_one(ctx: &Context, entry: &ManifestEntry, out: &Path) -> Result<(ManifestEntry, RoiClip), Error> {
    let norm = normalize_for(&ctx.vocab, &entry.text, false);
    if let Some(&(position, ch)) = norm.rejected.first() {
        return Err(Error::OutOfVocabulary { ch, position });
    }
    let video = VideoU8::load(&entry.frames)?;
    let roi = match &entry.landmarks {
        Some(path) => extract_roi(&video, &load_landmarks(path)?, &neutral_reference(), ROI_SIZE)?,
        None if video.height == ROI_SIZE && video.width == ROI_SIZE => RoiClip::from_video(&video),
        None => {
            return Err(Error::format(
                &entry.frames,
                format!("{}×{} frames without landmarks; expected a {ROI_SIZE}×{ROI_SIZE} ROI", video.height, video.width),
            ))
        }
    };
    let stored = roi.to_video();
    let name = format!("{}.lrv", entry.id);
    stored.save(&out.join(&name))?;
    Ok((
        ManifestEntry {
            id: entry.id.clone(),
            frames: name.into(),
            landmarks: None,
            text: norm.text,
        },
        RoiClip::from_video(&stored),
    ))
}

pub fn preprocess(ctx: &Context, manifest: &Path, out: &Path) -> Result<(), Failure> {
    let input = Manifest::load(manifest)?;
    if input.is_empty() {
        return Err(Failure::Data(format!("{}: manifest has no utterances", manifest.display())));
    }
    artifacts::create_dir(out)?;
    let results: Vec<_> = input.entries.par_iter().map(|e| preprocess_one(ctx, e, out)).collect();
    let mut entries = Vec::new();
    let mut clips = Vec::new();
    let mut failures = Vec::new();
    for (entry, r) in input.entries.iter().zip(results) {
        match r {
            Ok((e, c)) => {
                entries.push(e);
                clips.push(c);
            }
            Err(e) => failures.push(format!("{}: {e}", entry.id)),
        }
    }
    if !failures.is_empty() {
        for f in &failures {
            eprintln!("error: {f}");
        }
        return Err(Failure::Data(format!(
            "{} of {} utterances could not be preprocessed",
            failures.len(),
            input.len()
        )));
    }
    let stats = fit_norm_stats(clips.iter())?;
    let header = ctx.header_text("preprocess");
    artifacts::write(&out.join(DATA_STATS), &(header.clone() + &stats.to_text()))?;
    artifacts::write(&out.join(DATA_MANIFEST), &(header + &Manifest { entries }.to_tsv()))?;
    log::info!("preprocessed {} utterances; mean {:.3} variance {:.3}", clips.len(), stats.mean, stats.variance);
    Ok(())
}

fn load_clip(entry: &ManifestEntry) -> Result<RoiClip, Error> {
    Ok(RoiClip::from_video(&VideoU8::load(&entry.frames)?))
}

pub fn train(ctx: &Context, data: &Path, out: &Path) -> Result<(), Failure> {
    let data = DataDir::load(data, &ctx.vocab)?;
    let items = data
        .manifest
        .entries
        .par_iter()
        .map(|e| {
            Ok(TrainItem {
                id: e.id.clone(),
                clip: load_clip(e)?,
                labels: ctx.vocab.encode(&e.text)?.into_inner(),
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let mut model = Model::new(ctx.model_config()?, ctx.cfg.seed)?;
    let mut log_lines = String::new();
    let history = train_model(&mut model, &items, &data.stats, &ctx.cfg.train(), |s, _| {
        writeln!(log_lines, "epoch {} loss {} lr {} skipped {}", s.epoch + 1, s.mean_loss, s.lr, s.skipped).unwrap();
        true
    })?;
    let notes = ctx.header_text("train") + &log_lines;
    model.save(out, &ctx.vocab.hash(), &notes)?;
    if let Some(last) = history.last() {
        println!("trained {} epochs; final loss {:.4}", history.len(), last.mean_loss);
    }
    Ok(())
}

pub fn lm_train(ctx: &Context, text: Option<&Path>, transcripts: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let mut lines: Vec<String> = Vec::new();
    if let Some(path) = text {
        for (n, raw) in artifacts::read(path)?.lines().enumerate() {
            let norm = normalize_for(&ctx.vocab, raw, false);
            if let Some(&(position, ch)) = norm.rejected.first() {
                return Err(Failure::Data(format!(
                    "{} line {}: {}",
                    path.display(),
                    n + 1,
                    Error::OutOfVocabulary { ch, position }
                )));
            }
            if !norm.text.is_empty() {
                lines.push(norm.text);
            }
        }
    }
    match transcripts {
        Some(_) if ctx.cfg.no_lm_finetune => log::info!("no_lm_finetune: in-domain transcripts are not used"),
        Some(path) => lines.extend(read_id_text(path)?.into_iter().map(|(_, t)| t)),
        None => {}
    }
    if lines.is_empty() {
        return Err(Failure::Usage("no language-model training text (give --text and/or --transcripts)".into()));
    }
    let corpus = lines
        .iter()
        .map(|l| Ok(ctx.vocab.encode(l)?.into_inner()))
        .collect::<Result<Vec<_>, Error>>()?;
    let lm = CharNgramLm::train(&corpus, ctx.cfg.lm_order, ctx.cfg.lm_k, &ctx.vocab)?;
    let text = lm.to_text();
    let (first, body) = text.split_once('\n').unwrap_or((&text, ""));
    artifacts::write(out, &format!("{first}\n{}{body}", ctx.header_text("lm-train")))?;
    println!("trained order-{} LM on {} lines", ctx.cfg.lm_order, lines.len());
    Ok(())
}

pub fn decode(ctx: &Context, data: &Path, model: &Path, lm: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let data = DataDir::load(data, &ctx.vocab)?;
    let model = Model::load(model, &ctx.vocab.hash())?;
    let dcfg = ctx.cfg.decode();
    let lm = lm.map(|p| CharNgramLm::load(p, &ctx.vocab)).transpose()?;
    // A zero LM weight drops the scorer entirely so no LM value reaches the output.
    let scorer: Option<&dyn SequenceScorer> = match &lm {
        _ if dcfg.beta == 0.0 => None,
        Some(lm) => Some(lm),
        None => return Err(Failure::Usage("β > 0 needs --lm (or pass --no_lm)".into())),
    };
    let rows = data
        .manifest
        .entries
        .par_iter()
        .map(|e| {
            let input = prepare_input(&load_clip(e)?, &data.stats, ctx.cfg.crop, None)?;
            let mut hyps = decode_clip(&model, &input, scorer, &dcfg)?;
            hyps.truncate(dcfg.beam);
            let best = ctx.vocab.decode(&hyps[0].tokens)?;
            Ok((nbest_rows(&e.id, &hyps, &ctx.vocab)?, format!("{}\t{best}\n", e.id)))
        })
        .collect::<Result<Vec<_>, Error>>()?;
    artifacts::create_dir(out)?;
    let header = ctx.header_text("decode");
    let mut nbest = header.clone() + NBEST_HEADER + "\n";
    let mut hyp = header;
    for (n, h) in rows {
        nbest.push_str(&n);
        hyp.push_str(&h);
    }
    artifacts::write(&out.join("nbest.tsv"), &nbest)?;
    artifacts::write(&out.join("hyp.txt"), &hyp)?;
    log::info!("decoded {} utterances", data.manifest.len());
    Ok(())
}

pub fn evaluate(ctx: &Context, refs: &Path, hyps: &Path, out: &Path) -> Result<(), Failure> {
    let results = score_pairs(&read_id_text(refs)?, &read_id_text(hyps)?);
    let report = EvalReport::build(results, ctx.cfg.replicates, ctx.cfg.seed)?;
    artifacts::write(out, &report.to_tsv(&ctx.header("evaluate")))?;
    println!("{}", report.summary());
    Ok(())
}

pub fn analyze(ctx: &Context, train: &Path, test: &Path, hyps: Option<&Path>, out: &Path) -> Result<(), Failure> {
    let train_text = read_id_text(train)?;
    let test_text = read_id_text(test)?;
    let train_tokens: Vec<&str> = train_text.iter().flat_map(|(_, t)| words(t)).collect();
    let test_tokens: Vec<&str> = test_text.iter().flat_map(|(_, t)| words(t)).collect();
    artifacts::create_dir(out)?;
    let header = ctx.header_text("analyze");
    let curve = zipf_curve(train_tokens.iter().copied())?;
    artifacts::write(&out.join("zipf.tsv"), &(header.clone() + &zipf_tsv(&curve)))?;
    let coverage = coverage_stats(train_tokens.iter().copied(), test_tokens.iter().copied(), ctx.cfg.top_n)?;
    artifacts::write(&out.join("coverage.tsv"), &(header.clone() + &coverage_tsv(&coverage)))?;
    if let Some(path) = hyps {
        let results = score_pairs(&test_text, &read_id_text(path)?);
        let wers: Vec<f64> = results.iter().filter_map(UttResult::wer).collect();
        artifacts::write(&out.join("histogram.tsv"), &(header + &histogram_tsv(&wer_histogram(&wers))))?;
    }
    println!("zipf slope {:.4}; test-v∩train-v {}", curve.slope, coverage.test_v_in_train_v);
    Ok(())
}
