use std::path::{Path, PathBuf};

use serde::Serialize;
use storejourney::bpe::{self, Tokenizer};
use storejourney::codec::Codec;
use storejourney::corpus::{self, corpus_text, parse_corpus, parse_journey_text, Journey};
use storejourney::evaluator::{compare_report, zone_table_csv, ReportOptions, DEFAULT_HEATMAP_SAMPLE};
use storejourney::formats::{load_scanner, load_trajectories, write_scanner_csv, write_trajectories_csv};
use storejourney::generator::{
    generate_batch, journey_scanner_items, journey_to_trajectory, make_prompt, results_jsonl, validity_rate,
    GenerationResult, SamplingConfig, PROMPT_POINTS,
};
use storejourney::io::{read_to_string, write_atomic};
use storejourney::layout::StoreLayout;
use storejourney::nn::{AdamConfig, Checkpoint, Params, TransformerConfig};
use storejourney::purchase::dbscan::DbscanParams;
use storejourney::purchase::{annotate, PlacementRule, DEFAULT_MATCH_WINDOW};
use storejourney::synthstore::{make_layout, simulate_journeys, write_outputs, ShopperModel, StorePreset};
use storejourney::training::{self, curve_csv, default_sizes, CurveMode, Packing, SplitSpec, TrainConfig};

use crate::config::{input_file, manifest_beside, output_dir, output_file, parse_sizes, required, write_manifest};
use crate::{
    BpeArgs, CliError, CorpusArgs, CurveArgs, EvaluateArgs, FinetuneArgs, GenerateArgs, PretrainArgs, SynthArgs,
};

const CHECKPOINT_FILE: &str = "model.ckpt";
const RUN_FILE: &str = "run.json";
const MANIFEST_FILE: &str = "manifest.json";

fn write(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    Ok(write_atomic(path, bytes)?)
}

fn print_summary(value: &impl Serialize) {
    println!("{}", serde_json::to_string(value).expect("summary serializes"));
}

/// Journey lines of a corpus file, checked for well-formedness.
fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    let text = read_to_string(path)?;
    parse_corpus(&text)?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

fn load_model(checkpoint: &Path, tokenizer: &Tokenizer) -> Result<Params<f32>, CliError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    if ckpt.header.vocab_hash != tokenizer.hash() {
        return Err(CliError::Checkpoint(format!("{} was trained with a different tokenizer", checkpoint.display())));
    }
    Ok(ckpt.params)
}

fn train_config(
    epochs: Option<usize>,
    default_epochs: usize,
    batch: Option<usize>,
    lr: Option<f64>,
    packing: Option<Packing>,
    seed: u64,
) -> TrainConfig {
    TrainConfig {
        epochs: epochs.unwrap_or(default_epochs),
        batch_size: batch.unwrap_or(16),
        adam: AdamConfig { lr: lr.unwrap_or(AdamConfig::default().lr), ..AdamConfig::default() },
        seed,
        packing: packing.unwrap_or_default(),
    }
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let preset = StorePreset::by_name(&required(&a.preset, "preset")?)?;
    let n = required(&a.n, "n")?;
    let seed = required(&a.seed, "seed")?;
    let shopper = match &a.shopper {
        Some(_) => {
            let path = input_file(&a.shopper, "shopper")?;
            serde_json::from_str::<ShopperModel>(&read_to_string(&path)?)
                .map_err(|e| CliError::Args(format!("shopper {}: {e}", path.display())))?
        }
        None => ShopperModel::default(),
    };
    let out = output_dir(&a.out, "out")?;
    let store = make_layout(&preset, seed)?;
    let sim = simulate_journeys(&store, &shopper, n, seed)?;
    write_outputs(&out, &store, &sim)?;
    let files: Vec<PathBuf> =
        ["layout.json", "trajectories.csv", "scanner.csv", "truth.csv"].iter().map(|f| out.join(f)).collect();
    let outputs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    write_manifest(&out.join(MANIFEST_FILE), "synth", &(a, &shopper), &[], &outputs)?;
    print_summary(&serde_json::json!({
        "journeys": sim.trajectories.len(),
        "scanner_items": sim.scanner.len(),
        "zones": store.layout.zones.len(),
    }));
    Ok(())
}

#[derive(Serialize)]
struct LocalizationSummary {
    trajectories: usize,
    matched_quantity: u64,
    placed_quantity: u64,
    excluded_quantity: u64,
    unmatched_items: usize,
    cluster_placements: usize,
    traversal_placements: usize,
}

pub fn build_corpus(a: &CorpusArgs) -> Result<(), CliError> {
    let layout_path = input_file(&a.layout, "layout")?;
    let traj_path = input_file(&a.trajectories, "trajectories")?;
    let scanner_path = input_file(&a.scanner, "scanner")?;
    let seed = required(&a.seed, "seed")?;
    let defaults = SplitSpec::default();
    let split = SplitSpec {
        train: a.train_fraction.unwrap_or(defaults.train),
        validation: a.validation_fraction.unwrap_or(defaults.validation),
        test: a.test_fraction.unwrap_or(defaults.test),
        seed,
    };
    split.validate()?;
    let out = output_dir(&a.out, "out")?;

    let layout = StoreLayout::load(&layout_path)?;
    let trajs = load_trajectories(&traj_path)?;
    let items = load_scanner(&scanner_path)?;
    let params = DbscanParams {
        eps: a.eps.unwrap_or(DbscanParams::default().eps),
        min_pts: a.min_pts.unwrap_or(DbscanParams::default().min_pts),
    };
    let window = a.match_window.unwrap_or(DEFAULT_MATCH_WINDOW);
    let (annotated, unmatched) = annotate(&trajs, &items, &layout, params, window, seed);
    let codec = Codec::with_side(layout.store_side);
    let journeys = annotated.iter().map(|t| Journey::from_annotated(t, &codec)).collect::<Result<Vec<_>, _>>()?;

    let placements = annotated.iter().flat_map(|t| &t.localization.placements);
    let cluster = placements.clone().filter(|p| p.rule == PlacementRule::ClusterEnd).count();
    let summary = LocalizationSummary {
        trajectories: trajs.len(),
        matched_quantity: annotated
            .iter()
            .map(|t| t.localization.placed_quantity() + t.localization.excluded_quantity())
            .sum(),
        placed_quantity: annotated.iter().map(|t| t.localization.placed_quantity()).sum(),
        excluded_quantity: annotated.iter().map(|t| t.localization.excluded_quantity()).sum(),
        unmatched_items: unmatched.len(),
        cluster_placements: cluster,
        traversal_placements: placements.count() - cluster,
    };

    let parts = split.split(journeys.len())?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| journeys[i].clone()).collect::<Vec<_>>();
    let files = ["corpus.txt", "train.txt", "validation.txt", "test.txt", "localization.json"].map(|f| out.join(f));
    corpus::build_corpus(&journeys, &files[0])?;
    write(&files[1], corpus_text(&pick(&parts.train)).as_bytes())?;
    write(&files[2], corpus_text(&pick(&parts.validation)).as_bytes())?;
    write(&files[3], corpus_text(&pick(&parts.test)).as_bytes())?;
    write(&files[4], serde_json::to_string_pretty(&summary).expect("summary serializes").as_bytes())?;
    let outputs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    write_manifest(&out.join(MANIFEST_FILE), "build-corpus", a, &[&layout_path, &traj_path, &scanner_path], &outputs)?;
    print_summary(&summary);
    Ok(())
}

pub fn train_bpe(a: &BpeArgs) -> Result<(), CliError> {
    let corpus = input_file(&a.corpus, "corpus")?;
    let vocab = a.vocab_size.unwrap_or(512);
    let out = output_file(&a.out, "out")?;
    let lines = read_lines(&corpus)?;
    let tok = bpe::train_bpe(lines.iter().map(String::as_str), vocab)?;
    tok.save(&out)?;
    write_manifest(&manifest_beside(&out), "train-bpe", a, &[&corpus], &[&out])?;
    print_summary(&serde_json::json!({ "ids": tok.len(), "merges": tok.merges().len(), "hash": tok.hash() }));
    Ok(())
}

pub fn pretrain(a: &PretrainArgs) -> Result<(), CliError> {
    let tok_path = input_file(&a.tokenizer, "tokenizer")?;
    let train_path = input_file(&a.train, "train")?;
    let val_path = input_file(&a.validation, "validation")?;
    let seed = required(&a.seed, "seed")?;
    let out = output_dir(&a.out, "out")?;
    let tok = Tokenizer::load(&tok_path)?;
    let desk = TransformerConfig::desk(a.vocab_size.unwrap_or(tok.vocab_size().max(tok.len())));
    let model = TransformerConfig {
        n_layer: a.n_layer.unwrap_or(desk.n_layer),
        n_head: a.n_head.unwrap_or(desk.n_head),
        d_model: a.d_model.unwrap_or(desk.d_model),
        d_ff: a.d_ff.unwrap_or(desk.d_ff),
        ctx_len: a.ctx_len.unwrap_or(desk.ctx_len),
        dropout: a.dropout.unwrap_or(desk.dropout),
        seed,
        ..desk
    };
    model.validate().map_err(|e| CliError::Args(e.to_string()))?;
    let cfg = train_config(a.epochs, 10, a.batch_size, a.lr, a.packing, seed);
    let (train, val) = (read_lines(&train_path)?, read_lines(&val_path)?);
    let ckpt = out.join(CHECKPOINT_FILE);
    let done = training::pretrain(&tok, &train, &val, &model, &cfg, Some(&ckpt))?;
    done.run.save(&out.join(RUN_FILE))?;
    write_manifest(
        &out.join(MANIFEST_FILE),
        "pretrain",
        a,
        &[&tok_path, &train_path, &val_path],
        &[&ckpt, &out.join(RUN_FILE)],
    )?;
    print_summary(&serde_json::json!({
        "epochs": done.run.history.len(),
        "best_epoch": done.run.best_epoch + 1,
        "best_validation_loss": done.run.best_validation_loss(),
    }));
    Ok(())
}

pub fn finetune(a: &FinetuneArgs) -> Result<(), CliError> {
    let ckpt_path = input_file(&a.checkpoint, "checkpoint")?;
    let tok_path = input_file(&a.tokenizer, "tokenizer")?;
    let train_path = input_file(&a.train, "train")?;
    let val_path = input_file(&a.validation, "validation")?;
    let n = required(&a.n, "n")?;
    let seed = required(&a.seed, "seed")?;
    let out = output_dir(&a.out, "out")?;
    let tok = Tokenizer::load(&tok_path)?;
    let params = load_model(&ckpt_path, &tok)?;
    let cfg = train_config(a.epochs, 3, a.batch_size, a.lr, a.packing, seed);
    let (train, val) = (read_lines(&train_path)?, read_lines(&val_path)?);
    let ckpt = out.join(CHECKPOINT_FILE);
    let done = training::finetune(&params, &tok, &train, &val, n, &cfg, Some(&ckpt))?;
    done.run.save(&out.join(RUN_FILE))?;
    write_manifest(
        &out.join(MANIFEST_FILE),
        "finetune",
        a,
        &[&ckpt_path, &tok_path, &train_path, &val_path],
        &[&ckpt, &out.join(RUN_FILE)],
    )?;
    print_summary(&serde_json::json!({
        "samples": n,
        "best_epoch": done.run.best_epoch + 1,
        "best_validation_loss": done.run.best_validation_loss(),
    }));
    Ok(())
}

fn prompts_from(path: &Path, k: usize) -> Result<(Vec<Journey>, Vec<String>), CliError> {
    let journeys = parse_corpus(&read_to_string(path)?)?;
    let prompts: Vec<String> = journeys.iter().filter_map(|j| make_prompt(j, k).ok()).collect();
    if prompts.len() < journeys.len() {
        log::warn!("{} journeys shorter than {k} samples skipped", journeys.len() - prompts.len());
    }
    if prompts.is_empty() {
        return Err(CliError::Args(format!("{} holds no journey with {k} samples", path.display())));
    }
    Ok((journeys, prompts))
}

fn cycled(prompts: &[String], n: usize) -> Vec<String> {
    prompts.iter().cycle().take(n).cloned().collect()
}

pub fn generate(a: &GenerateArgs) -> Result<(), CliError> {
    let ckpt_path = input_file(&a.checkpoint, "checkpoint")?;
    let tok_path = input_file(&a.tokenizer, "tokenizer")?;
    let prompt_path = input_file(&a.prompts, "prompts")?;
    let seed = required(&a.seed, "seed")?;
    let out = output_file(&a.out, "out")?;
    let export = match &a.export {
        Some(_) => Some((output_dir(&a.export, "export")?, input_file(&a.layout, "layout")?)),
        None => None,
    };
    let d = SamplingConfig::default();
    let cfg = SamplingConfig {
        temperature: a.temperature.unwrap_or(d.temperature),
        top_k: a.top_k.unwrap_or(d.top_k),
        top_p: a.top_p.unwrap_or(d.top_p),
        max_new_tokens: a.max_new_tokens.unwrap_or(d.max_new_tokens),
        seed,
    };
    cfg.validate()?;
    let tok = Tokenizer::load(&tok_path)?;
    let params = load_model(&ckpt_path, &tok)?;
    let (_, prompts) = prompts_from(&prompt_path, a.k.unwrap_or(PROMPT_POINTS))?;
    let prompts = cycled(&prompts, a.n.unwrap_or(prompts.len()));
    let results = generate_batch(&params, &tok, &prompts, &cfg)?;
    write(&out, results_jsonl(&results).as_bytes())?;
    let mut outputs = vec![out.clone()];

    if let Some((dir, layout_path)) = export {
        let layout = StoreLayout::load(&layout_path)?;
        let codec = Codec::with_side(layout.store_side);
        let (mut trajs, mut items) = (Vec::new(), Vec::new());
        for r in &results {
            if let Some(j) = &r.journey {
                // One hour apart so checkout matching never mixes journeys.
                let t =
                    journey_to_trajectory(j, &codec, &format!("gen-{}", r.prompt_id), 3600.0 * r.prompt_id as f64, 5.0);
                items.extend(journey_scanner_items(j, &t, &layout));
                trajs.push(t);
            }
        }
        let (tp, sp) = (dir.join("trajectories.csv"), dir.join("scanner.csv"));
        write(&tp, &write_trajectories_csv(&trajs)?)?;
        write(&sp, &write_scanner_csv(&items)?)?;
        outputs.extend([tp, sp]);
    }
    let outputs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    write_manifest(&manifest_beside(&out), "generate", a, &[&ckpt_path, &tok_path, &prompt_path], &outputs)?;
    print_summary(&serde_json::json!({
        "generations": results.len(),
        "valid": results.iter().filter(|r| r.is_valid()).count(),
        "validity_rate": validity_rate(&results),
    }));
    Ok(())
}

/// Valid journeys from generation records, with the share that parsed.
fn read_generated(path: &Path) -> Result<(Vec<Journey>, Option<f64>), CliError> {
    let text = read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "jsonl") {
        let mut results = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let mut r: GenerationResult = serde_json::from_str(line)
                .map_err(|e| CliError::Format(format!("{} line {}: {e}", path.display(), n + 1)))?;
            r.journey = parse_journey_text(&r.text).ok();
            results.push(r);
        }
        let rate = validity_rate(&results);
        Ok((results.into_iter().filter_map(|r| r.journey).collect(), Some(rate)))
    } else {
        Ok((parse_corpus(&text)?, None))
    }
}

pub fn evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let gen_path = input_file(&a.generated, "generated")?;
    let ref_path = input_file(&a.reference, "reference")?;
    let layout_path = input_file(&a.layout, "layout")?;
    let seed = required(&a.seed, "seed")?;
    let out = output_dir(&a.out, "out")?;
    let layout = StoreLayout::load(&layout_path)?;
    let (generated, validity_rate) = read_generated(&gen_path)?;
    let reference = parse_corpus(&read_to_string(&ref_path)?)?;
    let opts =
        ReportOptions { heatmap_sample: a.heatmap_sample.unwrap_or(DEFAULT_HEATMAP_SAMPLE), seed, validity_rate };
    let report = compare_report(&generated, &reference, &layout, opts)?;

    let files = [
        "report.json",
        "zones.csv",
        "heatmap_generated.pgm",
        "heatmap_generated.txt",
        "heatmap_reference.pgm",
        "heatmap_reference.txt",
    ]
    .map(|f| out.join(f));
    write(&files[0], serde_json::to_string_pretty(&report).expect("report serializes").as_bytes())?;
    write(&files[1], zone_table_csv(&report, &layout).as_bytes())?;
    write(&files[2], &report.generated_heatmap.to_pgm())?;
    write(&files[3], report.generated_heatmap.to_matrix_text().as_bytes())?;
    write(&files[4], &report.reference_heatmap.to_pgm())?;
    write(&files[5], report.reference_heatmap.to_matrix_text().as_bytes())?;
    let outputs: Vec<&Path> = files.iter().map(PathBuf::as_path).collect();
    write_manifest(&out.join(MANIFEST_FILE), "evaluate", a, &[&gen_path, &ref_path, &layout_path], &outputs)?;
    print_summary(&serde_json::json!({
        "zone_js": report.zone_js,
        "heatmap_js": report.heatmap_js,
        "validity_rate": report.validity_rate,
        "walkable_step_fraction": report.generated_steps.walkable_fraction,
    }));
    Ok(())
}

#[derive(Serialize)]
struct ZoneRow {
    size: usize,
    generations: usize,
    validity_rate: f64,
    zone_js: f64,
}

pub fn learning_curve(a: &CurveArgs) -> Result<(), CliError> {
    let ckpt_path = input_file(&a.checkpoint, "checkpoint")?;
    let tok_path = input_file(&a.tokenizer, "tokenizer")?;
    let train_path = input_file(&a.train, "train")?;
    let val_path = input_file(&a.validation, "validation")?;
    let seed = required(&a.seed, "seed")?;
    let out = output_file(&a.out, "out")?;
    let scoring = match (&a.prompts, &a.layout) {
        (Some(_), Some(_)) => Some((input_file(&a.prompts, "prompts")?, input_file(&a.layout, "layout")?)),
        (None, None) => None,
        _ => return Err(CliError::Args("--prompts and --layout go together".into())),
    };
    let modes = a
        .modes
        .as_deref()
        .unwrap_or("finetune,scratch")
        .split(',')
        .map(|m| match m.trim() {
            "finetune" => Ok(CurveMode::Finetune),
            "scratch" => Ok(CurveMode::Scratch),
            other => Err(CliError::Args(format!("unknown mode {other:?}"))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let tok = Tokenizer::load(&tok_path)?;
    let params = load_model(&ckpt_path, &tok)?;
    let (train, val) = (read_lines(&train_path)?, read_lines(&val_path)?);
    let sizes = match &a.sizes {
        Some(s) => parse_sizes(s)?,
        None => default_sizes(train.len()),
    };
    let cfg = train_config(a.epochs, 3, a.batch_size, a.lr, a.packing, seed);

    let scoring = match scoring {
        Some((prompt_path, layout_path)) => {
            let (reference, prompts) = prompts_from(&prompt_path, PROMPT_POINTS)?;
            let prompts = cycled(&prompts, a.generations.unwrap_or(500));
            Some((reference, prompts, StoreLayout::load(&layout_path)?))
        }
        None => None,
    };
    let sampling = SamplingConfig { seed, ..SamplingConfig::default() };
    let mut zone_rows = Vec::new();
    let mut failure: Option<CliError> = None;
    let rows = training::learning_curve(&params, &tok, &train, &val, &sizes, &modes, &cfg, |row, trained| {
        let Some((reference, prompts, layout)) = &scoring else { return };
        if row.mode != CurveMode::Finetune || failure.is_some() {
            return;
        }
        let scored = generate_batch(trained, &tok, prompts, &sampling).and_then(|results| {
            let valid: Vec<Journey> = results.iter().filter_map(|r| r.journey.clone()).collect();
            let report = compare_report(&valid, reference, layout, ReportOptions { seed, ..ReportOptions::default() })?;
            Ok(ZoneRow {
                size: row.size,
                generations: results.len(),
                validity_rate: validity_rate(&results),
                zone_js: report.zone_js,
            })
        });
        match scored {
            Ok(z) => zone_rows.push(z),
            Err(e) => failure = Some(e.into()),
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    write(&out, &curve_csv(&rows)?)?;
    let mut outputs = vec![out.clone()];
    if scoring.is_some() {
        let path = out.with_extension("zone_js.csv");
        let mut text = String::from("size,generations,validity_rate,zone_js\n");
        for z in &zone_rows {
            text.push_str(&format!("{},{},{:.6},{:.6}\n", z.size, z.generations, z.validity_rate, z.zone_js));
        }
        write(&path, text.as_bytes())?;
        outputs.push(path);
    }
    let outputs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    write_manifest(
        &manifest_beside(&out),
        "learning-curve",
        a,
        &[&ckpt_path, &tok_path, &train_path, &val_path],
        &outputs,
    )?;
    print_summary(&rows);
    Ok(())
}
