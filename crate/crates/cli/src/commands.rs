use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use inflab::analyze::{
    across_languages, aggregate, disagreement_analysis, load_predictions, write_predictions, DisagreementReport,
    PredictionRow, RunResult,
};
use inflab::corpus::{
    corpus_stats, load_lexicon, load_segmented, load_supervised, sample_lexicon, sample_supervised, write_lexicon,
    write_segmented, write_supervised, Dataset, Lexicon, LexiconSampling, Pos, StatsRecord, Vocabulary,
};
use inflab::model::{load_checkpoint, save_checkpoint, Checkpoint, Model};
use inflab::noise::{NoiseSpec, Noiser};
use inflab::segment::project_segmentation;
use inflab::synth::{self, SynthConfig};
use inflab::train::{self, init_rng, predict, stream_rng, Preset, Prediction, TrainInputs, TrainReport};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::{
    AggregateArgs, AnalyzeCopyArgs, Command, EvaluateArgs, NoiseArgs, SampleDataArgs, SegmentAlignArgs, StatsArgs,
    SynthArgs, TrainArgs,
};

/// Stream id reserved for the `noise` command.
const NOISE_PREVIEW: u64 = 100;
const SAMPLE_SUPERVISED: u64 = 101;
const SAMPLE_LEXICON: u64 = 102;
const SYNTH: u64 = 103;

pub fn run(command: Command, resolved: &str) -> Result<()> {
    let artifact_dir = match command {
        Command::SampleData(a) => sample_data(a)?,
        Command::Stats(a) => stats(a)?,
        Command::SegmentAlign(a) => segment_align(a)?,
        Command::Noise(a) => noise(a)?,
        Command::Train(a) => train_cmd(a)?,
        Command::Evaluate(a) => evaluate(a)?,
        Command::AnalyzeCopy(a) => analyze_copy(a)?,
        Command::Aggregate(a) => aggregate_cmd(a)?,
        Command::Synth(a) => synth_cmd(a)?,
    };
    if let Some(dir) = artifact_dir {
        write_file(&dir.join("config.resolved"), resolved.as_bytes())?;
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut out = create(path)?;
    out.write_all(bytes)?;
    out.flush()?;
    Ok(())
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<()> {
    let mut out = create(path)?;
    f(&mut out).with_context(|| format!("writing {}", path.display()))?;
    out.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Directory that holds a file artifact.
fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn one_of(positional: Option<PathBuf>, flag: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    match (positional, flag) {
        (Some(_), Some(_)) => bail!("{what} given both as an argument and with --{what}"),
        (Some(p), None) | (None, Some(p)) => Ok(p),
        (None, None) => bail!("missing {what}"),
    }
}

fn load_words(path: &Path, separator: Option<char>, min_len: usize, web_filter: bool) -> Result<Lexicon> {
    let lexicon = match separator {
        Some(sep) => {
            let lex = load_segmented(path, sep)?;
            let web = |w: &str| w.contains('@') || w.contains("www");
            let kept: Vec<_> = lex
                .iter()
                .filter(|e| e.char_len() >= min_len && !(web_filter && web(e.word())))
                .cloned()
                .collect();
            Lexicon::new(kept)
        }
        None => load_lexicon(path, min_len, web_filter)?,
    };
    Ok(lexicon)
}

fn sample_data(a: SampleDataArgs) -> Result<Option<PathBuf>> {
    ensure!(a.sup.is_some() || a.lex.is_some(), "nothing to sample: give --sup and/or --lex");
    ensure!(a.per_pos >= 1, "--per-pos must be at least 1");
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    if let Some(path) = &a.sup {
        let full = load_supervised(path)?;
        let mut rng = stream_rng(a.seed.seed, SAMPLE_SUPERVISED, 0, 0);
        let sampled = sample_supervised(&full, a.per_pos, &mut rng);
        info!("kept {} of {} supervised examples", sampled.len(), full.len());
        write_with(&a.out.join("train.tsv"), |w| write_supervised(w, &sampled))?;
    }
    if let Some(path) = &a.lex {
        let pool = load_words(path, a.lex_sep, a.min_len, a.web_filter)?;
        let pos_filter = a
            .pos
            .as_ref()
            .map(|list| list.split(',').map(|p| Pos::parse(p.trim())).collect::<BTreeSet<Pos>>());
        let opts = LexiconSampling {
            size: a.lex_size,
            with_replacement: a.with_replacement,
            pos_filter,
            allow_short: !a.strict_size,
        };
        let mut rng = stream_rng(a.seed.seed, SAMPLE_LEXICON, 0, 0);
        let sampled = sample_lexicon(&pool, &opts, &mut rng)?;
        if sampled.len() < a.lex_size {
            warn!("pool holds only {} words, fewer than the {} requested", sampled.len(), a.lex_size);
        }
        let out = a.out.join("words.txt");
        match a.lex_sep {
            Some(sep) => write_with(&out, |w| write_segmented(w, &sampled, sep))?,
            None => write_with(&out, |w| write_lexicon(w, &sampled))?,
        }
    }
    Ok(Some(a.out))
}

#[derive(Default)]
struct Group {
    supervised: Vec<PathBuf>,
    lexicons: Vec<PathBuf>,
}

fn is_supervised(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "tsv")
}

fn group_stats(group: &Group) -> Result<StatsRecord> {
    let mut examples = Vec::new();
    for p in &group.supervised {
        examples.extend(load_supervised(p)?.examples().iter().cloned());
    }
    let mut words = Vec::new();
    for p in &group.lexicons {
        words.extend(load_lexicon(p, 0, false)?.entries().iter().cloned());
    }
    Ok(corpus_stats(&Dataset::new(examples), &Lexicon::new(words)))
}

fn stats(a: StatsArgs) -> Result<Option<PathBuf>> {
    let inputs: Vec<PathBuf> = a.input_pos.into_iter().chain(a.input).collect();
    ensure!(!inputs.is_empty(), "no input files or directories given");
    let mut groups: BTreeMap<String, Group> = BTreeMap::new();
    let mut loose = Group::default();
    let mut any_dir = false;
    for path in &inputs {
        if path.is_dir() {
            any_dir = true;
            let mut files: Vec<PathBuf> = fs::read_dir(path)
                .with_context(|| format!("listing {}", path.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<io::Result<_>>()?;
            files.retain(|f| {
                let name = f.file_name().unwrap_or_default().to_string_lossy();
                f.is_file() && !name.starts_with('.') && name != "config.resolved"
            });
            files.sort();
            for f in files {
                let name = f.file_name().unwrap().to_string_lossy().to_string();
                let language = name.split('.').next().unwrap_or(&name).to_string();
                let group = groups.entry(language).or_default();
                if is_supervised(&f) {
                    group.supervised.push(f);
                } else {
                    group.lexicons.push(f);
                }
            }
        } else if is_supervised(path) {
            loose.supervised.push(path.clone());
        } else {
            loose.lexicons.push(path.clone());
        }
    }
    let mut text = String::new();
    if any_dir {
        ensure!(
            loose.supervised.is_empty() && loose.lexicons.is_empty(),
            "mix either directories or files, not both"
        );
        text.push_str(&format!("language\t{}\n", StatsRecord::TSV_HEADER));
        for (language, group) in &groups {
            text.push_str(&format!("{language}\t{}\n", group_stats(group)?.to_tsv_row()));
        }
    } else {
        text.push_str(StatsRecord::TSV_HEADER);
        text.push('\n');
        text.push_str(&group_stats(&loose)?.to_tsv_row());
        text.push('\n');
    }
    match a.out {
        Some(out) => {
            write_file(&out, text.as_bytes())?;
            Ok(Some(parent_dir(&out)))
        }
        None => {
            print!("{text}");
            Ok(None)
        }
    }
}

fn segment_align(a: SegmentAlignArgs) -> Result<Option<PathBuf>> {
    let file = File::open(&a.canonical).with_context(|| format!("opening {}", a.canonical.display()))?;
    let mut rows = Vec::new();
    let mut lost = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let Some((word, canonical)) = line.split_once('\t') else {
            bail!("{}:{}: expected word<TAB>segmentation", a.canonical.display(), i + 1);
        };
        let canonical = canonical.split('\t').next().unwrap_or(canonical);
        let projection = project_segmentation(word, canonical, a.sep)
            .with_context(|| format!("{}:{}", a.canonical.display(), i + 1))?;
        if projection.lost_boundaries > 0 {
            info!("{word}: {} boundary(ies) of {canonical} not realised", projection.lost_boundaries);
            lost += projection.lost_boundaries;
        }
        rows.push(format!("{word}\t{}", projection.segmentation.render(a.sep)));
    }
    info!("aligned {} words, {lost} canonical boundaries lost", rows.len());
    let mut text = rows.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    write_file(&a.out, text.as_bytes())?;
    Ok(Some(parent_dir(&a.out)))
}

fn noise(a: NoiseArgs) -> Result<Option<PathBuf>> {
    let input = one_of(a.input_pos, a.input, "input")?;
    let output = one_of(a.output_pos, a.output, "output")?;
    let mut spec: NoiseSpec = a.spec.parse()?;
    spec.rate = a.rate;
    spec.tail_mass = a.tail_mass;
    spec.validate()?;
    let lexicon = load_words(&input, a.seg_sep, 0, false)?;
    let vocab = Vocabulary::build(&Dataset::default(), &lexicon, a.sentinels);
    let noiser = Noiser::new(spec, &vocab)?;
    let mut text = String::new();
    for (i, entry) in lexicon.iter().enumerate() {
        let mut rng = stream_rng(a.seed.seed, NOISE_PREVIEW, 0, i as u64);
        let pair = noiser.noise(entry, &mut rng)?;
        text.push_str(&format!("{}\t{}\n", pair.render_source(), pair.target));
    }
    write_file(&output, text.as_bytes())?;
    Ok(Some(parent_dir(&output)))
}

/// Everything `train` records about a run.
#[derive(Serialize, Deserialize)]
struct RunReport {
    language: String,
    dataset: String,
    setup: String,
    preset: String,
    seed: u64,
    parameters: usize,
    model: inflab::model::ModelConfig,
    train: train::TrainConfig,
    noise: Option<NoiseSpec>,
    dev_truncated: usize,
    test_truncated: Option<usize>,
    report: TrainReport,
}

fn prediction_rows(data: &Dataset, preds: &[Prediction]) -> Vec<PredictionRow> {
    data.iter()
        .zip(preds)
        .map(|(e, p)| PredictionRow {
            lemma: e.lemma().to_string(),
            tags: e.tag_bundle(),
            gold: e.target().to_string(),
            pred: p.text.clone(),
        })
        .collect()
}

fn train_cmd(a: TrainArgs) -> Result<Option<PathBuf>> {
    let supervised = load_supervised(&a.sup)?;
    let dev = load_supervised(&a.dev)?;
    let test = a.test.as_ref().map(load_supervised).transpose()?;
    ensure!(!dev.is_empty(), "development set {} is empty", a.dev.display());
    let noise = match &a.objective {
        None => None,
        Some(objective) => {
            let name = if objective == "ae" {
                "ae".to_string()
            } else {
                format!("{objective}-{}-{}-{}", a.strategy, a.corruption, a.granularity)
            };
            let mut spec: NoiseSpec = name.parse()?;
            spec.rate = a.rate;
            spec.tail_mass = a.tail_mass;
            spec.validate()?;
            Some(spec)
        }
    };
    let lexicon = match (&a.lex, &noise) {
        (Some(path), Some(_)) => load_words(path, a.lex_sep, 0, false)?,
        (Some(_), None) => {
            warn!("--lex given without --objective; training on supervised data only");
            Lexicon::default()
        }
        (None, Some(_)) => bail!("--objective needs an unlabeled word list (--lex)"),
        (None, None) => Lexicon::default(),
    };

    let preset: Preset = a.preset.parse()?;
    let seed = a.seed.seed;
    let vocab = Vocabulary::build(&supervised, &lexicon, a.sentinels);
    let model_config = preset.model_config(vocab.len());
    let mut config = preset.train_config(seed);
    if let Some(v) = a.max_epochs {
        config.max_epochs = v;
    }
    config.max_steps = a.max_steps.or(config.max_steps);
    if let Some(v) = a.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = a.eval_every {
        config.eval_every = v;
    }
    config.patience = a.patience.or(config.patience);
    if let Some(v) = a.lr {
        config.lr_peak = v;
    }
    if let Some(v) = a.warmup {
        config.warmup_steps = v;
    }

    let mut model: Model = Model::init(model_config.clone(), &mut init_rng(seed))?;
    info!(
        "{} parameters, {} supervised, {} unlabeled, vocabulary {}",
        model.parameter_count(),
        supervised.len(),
        lexicon.len(),
        vocab.len()
    );
    let inputs = TrainInputs {
        supervised: &supervised,
        lexicon: &lexicon,
        dev: &dev,
        test: test.as_ref(),
    };
    let report = train::train(&mut model, &vocab, inputs, noise.as_ref(), &config)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    save_checkpoint(&a.out.join("best.ckpt"), &model, &vocab)?;
    let dev_preds = predict(&model, &vocab, &dev)?;
    write_with(&a.out.join("predictions.tsv"), |w| write_predictions(w, &prediction_rows(&dev, &dev_preds)))?;
    let mut test_truncated = None;
    if let Some(test) = &test {
        let preds = predict(&model, &vocab, test)?;
        test_truncated = Some(preds.iter().filter(|p| p.truncated).count());
        write_with(&a.out.join("test_predictions.tsv"), |w| {
            write_predictions(w, &prediction_rows(test, &preds))
        })?;
    }
    let language = a.language.clone().unwrap_or_else(|| {
        let name = a.sup.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_default();
        name.split('.').next().unwrap_or_default().to_string()
    });
    let run = RunReport {
        language,
        dataset: a.dataset.clone(),
        setup: noise.map_or_else(|| "baseline".to_string(), |s| s.name()),
        preset: preset.to_string(),
        seed,
        parameters: model.parameter_count(),
        model: model_config,
        train: config,
        noise,
        dev_truncated: dev_preds.iter().filter(|p| p.truncated).count(),
        test_truncated,
        report,
    };
    info!(
        "best dev accuracy {:?}, test accuracy {:?}",
        run.report.best_dev_accuracy, run.report.test_accuracy
    );
    write_json(&a.out.join("report.json"), &run)?;
    Ok(Some(a.out))
}

#[derive(Serialize)]
struct EvalReport {
    examples: usize,
    correct: usize,
    accuracy: f64,
    truncated: usize,
}

fn evaluate(a: EvaluateArgs) -> Result<Option<PathBuf>> {
    let Checkpoint { model, vocab } = load_checkpoint::<f32>(&a.model)?;
    let data = load_supervised(&a.data)?;
    ensure!(!data.is_empty(), "{} holds no examples", a.data.display());
    let preds = predict(&model, &vocab, &data)?;
    let accuracy = train::accuracy(&preds, &data)?;
    let report = EvalReport {
        examples: data.len(),
        correct: data.iter().zip(&preds).filter(|(e, p)| p.text == e.target()).count(),
        accuracy,
        truncated: preds.iter().filter(|p| p.truncated).count(),
    };
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_with(&a.out.join("predictions.tsv"), |w| write_predictions(w, &prediction_rows(&data, &preds)))?;
    write_json(&a.out.join("eval.json"), &report)?;
    println!("{accuracy:.4}");
    Ok(Some(a.out))
}

#[derive(Serialize)]
struct LanguageCopy {
    language: String,
    preds_a: PathBuf,
    preds_b: PathBuf,
    report: DisagreementReport,
}

#[derive(Serialize)]
struct CopyReport {
    languages: Vec<LanguageCopy>,
    across: inflab::analyze::CrossLanguage,
}

fn analyze_copy(a: AnalyzeCopyArgs) -> Result<Option<PathBuf>> {
    let n = a.preds_a.len();
    ensure!(
        a.preds_b.len() == n && a.dev.len() == n && a.train.len() == n,
        "--preds-a, --preds-b, --dev and --train must be repeated the same number of times"
    );
    ensure!(
        a.language.is_empty() || a.language.len() == n,
        "give one --language per group or none"
    );
    let mut languages = Vec::with_capacity(n);
    for i in 0..n {
        let rows_a = load_predictions(&a.preds_a[i])?;
        let rows_b = load_predictions(&a.preds_b[i])?;
        let dev = load_supervised(&a.dev[i])?;
        let train = load_supervised(&a.train[i])?;
        let report = disagreement_analysis(&rows_a, &rows_b, &dev, &train)
            .with_context(|| format!("comparing {} and {}", a.preds_a[i].display(), a.preds_b[i].display()))?;
        let language = a.language.get(i).cloned().unwrap_or_else(|| i.to_string());
        info!(
            "{language}: {} disagreements, copy {:?} vs {:?}",
            report.disagreements, report.a.copy_pct, report.b.copy_pct
        );
        languages.push(LanguageCopy {
            language,
            preds_a: a.preds_a[i].clone(),
            preds_b: a.preds_b[i].clone(),
            report,
        });
    }
    let reports: Vec<DisagreementReport> = languages.iter().map(|l| l.report.clone()).collect();
    let out = CopyReport {
        across: across_languages(&reports),
        languages,
    };
    write_json(&a.out, &out)?;
    Ok(Some(parent_dir(&a.out)))
}

fn aggregate_cmd(a: AggregateArgs) -> Result<Option<PathBuf>> {
    let mut paths: Vec<PathBuf> = glob::glob(&a.glob)
        .with_context(|| format!("bad pattern {:?}", a.glob))?
        .collect::<std::result::Result<_, _>>()?;
    paths.sort();
    let mut results = Vec::new();
    for path in &paths {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let run: RunReport =
            serde_json::from_str(&text).with_context(|| format!("{} is not a run report", path.display()))?;
        let Some(accuracy) = run.report.test_accuracy.or(run.report.best_dev_accuracy) else {
            warn!("{} has no evaluations; skipped", path.display());
            continue;
        };
        results.push(RunResult {
            language: run.language,
            dataset: run.dataset,
            setup: run.setup,
            accuracy,
        });
    }
    info!("{} runs from {} reports", results.len(), paths.len());
    write_file(&a.out, aggregate(&results).to_markdown().as_bytes())?;
    Ok(Some(parent_dir(&a.out)))
}

fn synth_cmd(a: SynthArgs) -> Result<Option<PathBuf>> {
    let config = SynthConfig {
        train: a.train,
        dev: a.dev,
        test: a.test,
        unlabeled: a.unlabeled,
        stems: a.stems,
        heldout_stems: a.heldout_stems,
    };
    let lang = synth::generate(&config, &mut stream_rng(a.seed.seed, SYNTH, 0, 0))?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_with(&a.out.join("train.tsv"), |w| write_supervised(w, &lang.train))?;
    write_with(&a.out.join("dev.tsv"), |w| write_supervised(w, &lang.dev))?;
    write_with(&a.out.join("test.tsv"), |w| write_supervised(w, &lang.test))?;
    write_with(&a.out.join("words.txt"), |w| write_segmented(w, &lang.unlabeled, '-'))?;
    Ok(Some(a.out))
}
