use inflab::corpus::{Dataset, InflectionExample, Lexicon, Pos, Vocabulary};
use inflab::model::{read_checkpoint, write_checkpoint, Model, ModelConfig};
use inflab::noise::NoiseSpec;
use inflab::synth::{self, SynthConfig};
use inflab::train::{self, evaluate, init_rng, predict, StopReason, TrainConfig, TrainInputs};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn language(train: usize, seed: u64) -> synth::SynthLanguage {
    let config = SynthConfig {
        train,
        dev: 20,
        test: 20,
        unlabeled: 60,
        stems: 40,
        heldout_stems: 0,
    };
    synth::generate(&config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn inputs<'a>(lang: &'a synth::SynthLanguage, lexicon: &'a Lexicon) -> TrainInputs<'a> {
    TrainInputs {
        supervised: &lang.train,
        lexicon,
        dev: &lang.dev,
        test: Some(&lang.test),
    }
}

fn tiny_model(vocab: &Vocabulary, seed: u64) -> Model {
    Model::init(ModelConfig::tiny(vocab.len()), &mut init_rng(seed)).unwrap()
}

#[test]
fn loss_halves_within_200_steps_with_paper_optimizer() {
    let lang = language(50, 1);
    let vocab = Vocabulary::build(&lang.train, &Lexicon::default(), 50);
    let mut model = tiny_model(&vocab, 1);
    let config = TrainConfig {
        max_steps: Some(200),
        eval_every: 1000,
        // Paper Adam settings and schedule shape; a 4000-step warmup would
        // keep the rate under 5e-5 for the whole run.
        warmup_steps: 200,
        ..TrainConfig::paper()
    };
    let empty = Lexicon::default();
    let report = train::train(&mut model, &vocab, inputs(&lang, &empty), None, &config).unwrap();
    assert_eq!(report.steps, 200);
    let first = report.loss_curve.first().unwrap().loss;
    let last = report.loss_curve.last().unwrap().loss;
    assert!(last <= 0.5 * first, "loss {first} -> {last}");
}

#[test]
fn zero_epochs_keeps_initial_model() {
    let lang = language(30, 2);
    let vocab = Vocabulary::build(&lang.train, &Lexicon::default(), 50);
    let mut model = tiny_model(&vocab, 2);
    let initial = model.clone();
    let config = TrainConfig {
        max_epochs: 0,
        ..TrainConfig::tiny()
    };
    let empty = Lexicon::default();
    let report = train::train(&mut model, &vocab, inputs(&lang, &empty), None, &config).unwrap();
    assert!(report.evaluations.is_empty());
    assert_eq!(report.best, None);
    assert_eq!(report.steps, 0);
    assert_eq!(model, initial);
}

#[test]
fn identical_seeds_give_identical_runs() {
    let lang = language(40, 3);
    let vocab = Vocabulary::build(&lang.train, &lang.unlabeled, 50);
    let spec: NoiseSpec = "cmlm-suffix-mask-segment".parse().unwrap();
    let run = |seed: u64| {
        let mut model = tiny_model(&vocab, seed);
        let config = TrainConfig {
            max_steps: Some(12),
            batch_size: 32,
            eval_every: 2,
            seed,
            ..TrainConfig::tiny()
        };
        let report = train::train(&mut model, &vocab, inputs(&lang, &lang.unlabeled), Some(&spec), &config).unwrap();
        (report, write_checkpoint(&model, &vocab))
    };
    let (a, ckpt_a) = run(5);
    let (b, ckpt_b) = run(5);
    let (c, _) = run(6);
    assert_eq!(a, b);
    assert_eq!(ckpt_a, ckpt_b);
    assert_eq!(a.stop, StopReason::MaxSteps);
    assert_ne!(a.loss_curve, c.loss_curve);
}

#[test]
fn best_dev_accuracy_is_the_curve_maximum() {
    let lang = language(60, 4);
    let vocab = Vocabulary::build(&lang.train, &Lexicon::default(), 50);
    let mut model = tiny_model(&vocab, 4);
    let config = TrainConfig {
        max_steps: Some(150),
        batch_size: 20,
        eval_every: 5,
        ..TrainConfig::tiny()
    };
    let empty = Lexicon::default();
    let report = train::train(&mut model, &vocab, inputs(&lang, &empty), None, &config).unwrap();
    let max = report.evaluations.iter().map(|e| e.dev_accuracy).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(report.best_dev_accuracy, Some(max));
    let best = report.best.unwrap();
    assert_eq!(report.evaluations[best].dev_accuracy, max);
    assert!(report.evaluations[..best].iter().all(|e| e.dev_accuracy < max));
    // The model left behind is the selected one.
    assert_eq!(evaluate(&model, &vocab, &lang.dev).unwrap(), max);
}

#[test]
fn checkpoint_round_trip_reproduces_dev_accuracy() {
    let lang = language(60, 5);
    let vocab = Vocabulary::build(&lang.train, &Lexicon::default(), 50);
    let mut model = tiny_model(&vocab, 5);
    let config = TrainConfig {
        max_steps: Some(60),
        batch_size: 20,
        eval_every: 5,
        ..TrainConfig::tiny()
    };
    let empty = Lexicon::default();
    train::train(&mut model, &vocab, inputs(&lang, &empty), None, &config).unwrap();
    let bytes = write_checkpoint(&model, &vocab);
    let restored = read_checkpoint::<f32>(&bytes).unwrap();
    assert_eq!(restored.vocab, vocab);
    assert_eq!(
        evaluate(&model, &vocab, &lang.dev).unwrap().to_bits(),
        evaluate(&restored.model, &restored.vocab, &lang.dev).unwrap().to_bits()
    );
    assert_eq!(predict(&model, &vocab, &lang.dev).unwrap(), predict(&restored.model, &restored.vocab, &lang.dev).unwrap());
    assert_eq!(write_checkpoint(&restored.model, &restored.vocab), bytes);
}

#[test]
fn overfits_a_single_pair() {
    let ex = InflectionExample::new("ab", vec!["X".into()], "abz", Pos::Other).unwrap();
    let data = Dataset::new(vec![ex]);
    let vocab = Vocabulary::build(&data, &Lexicon::default(), 0);
    let mut model = tiny_model(&vocab, 6);
    let config = TrainConfig {
        max_steps: Some(150),
        warmup_steps: 20,
        eval_every: 10,
        ..TrainConfig::tiny()
    };
    let empty = Lexicon::default();
    let inputs = TrainInputs {
        supervised: &data,
        lexicon: &empty,
        dev: &data,
        test: None,
    };
    train::train(&mut model, &vocab, inputs, None, &config).unwrap();
    let preds = predict(&model, &vocab, &data).unwrap();
    assert_eq!(preds[0].text, "abz");
    assert!(!preds[0].truncated);
}

#[test]
fn auxiliary_only_training_runs() {
    let lang = language(20, 7);
    let vocab = Vocabulary::build(&lang.train, &lang.unlabeled, 50);
    let mut model = tiny_model(&vocab, 7);
    let config = TrainConfig {
        max_epochs: 2,
        batch_size: 16,
        eval_every: 1,
        ..TrainConfig::tiny()
    };
    let spec: NoiseSpec = "t5-prefix-delete-char".parse().unwrap();
    let empty = Dataset::default();
    let inputs = TrainInputs {
        supervised: &empty,
        lexicon: &lang.unlabeled,
        dev: &lang.dev,
        test: None,
    };
    let report = train::train(&mut model, &vocab, inputs, Some(&spec), &config).unwrap();
    // 60 words per epoch in batches of 16.
    assert_eq!(report.steps, 2 * 4);
    assert_eq!(report.evaluations.len(), 2);
}
