use pcgseg::dp_labeler::{heart_rate, CycleDefinition};
use pcgseg::pipeline::{segment, PipelineConfig};
use pcgseg::siamese::{classify_event, embed_exemplars, make_pairs, train, EventClass};
use pcgseg::events::{matched_events, segment_events, MATCH_TOLERANCE_S};
use pcgseg::synth::{synthetic_pcg, SynthConfig};

fn matched_fraction(cfg: &SynthConfig, pipeline: &PipelineConfig) -> (f64, f64) {
    let (sig, truth) = synthetic_pcg(cfg, "s");
    let seg = segment(&sig, pipeline).unwrap();
    assert!(seg.labeled.is_alternating());
    let rate = sig.sample_rate() as f64;
    let hits = truth
        .entries()
        .iter()
        .filter(|a| {
            let t = a.time as f64 / rate;
            seg.labeled.onsets.iter().any(|o| o.label == a.label && (o.time - t).abs() <= 0.05)
        })
        .count();
    let hr = heart_rate(&seg.labeled, CycleDefinition::S1ToS1).unwrap();
    (hits as f64 / truth.len() as f64, hr)
}

#[test]
fn synthetic_recordings_across_seeds_and_noise() {
    for seed in 1..=3 {
        for snr in [Some(5.0), Some(20.0), None] {
            let cfg = SynthConfig { duration_s: 20.0, snr_db: snr, seed, ..Default::default() };
            let (frac, hr) = matched_fraction(&cfg, &PipelineConfig::default());
            assert!(frac >= 0.95, "seed {seed} snr {snr:?}: {frac}");
            assert!((hr - 80.0).abs() <= 2.0, "seed {seed} snr {snr:?}: {hr}");
        }
    }
}

#[test]
fn other_heart_rates_with_matching_thresholds() {
    for bpm in [60.0f64, 100.0] {
        let systole = 0.3 * (80.0 / bpm).sqrt();
        let cfg = SynthConfig { duration_s: 20.0, bpm, systole_s: systole, ..Default::default() };
        let mut pipeline = PipelineConfig::default();
        pipeline.dp.tau1 = systole;
        pipeline.dp.tau2 = 60.0 / bpm - systole;
        let (frac, hr) = matched_fraction(&cfg, &pipeline);
        assert!(frac >= 0.9, "{bpm}: {frac}");
        assert!((hr - bpm).abs() <= 3.0, "{bpm}: {hr}");
    }
}

#[test]
fn native_44100_input() {
    let cfg = SynthConfig { duration_s: 10.0, sample_rate: 44100, ..Default::default() };
    let (frac, hr) = matched_fraction(&cfg, &PipelineConfig::default());
    assert!(frac >= 0.95, "{frac}");
    assert!((hr - 80.0).abs() <= 2.0, "{hr}");
}

#[test]
fn siamese_separates_segmented_events() {
    let cfg = PipelineConfig::default();
    let events = |seed| {
        let sc = SynthConfig { duration_s: 15.0, seed, ..Default::default() };
        let (sig, ann) = synthetic_pcg(&sc, &format!("r{seed}"));
        let seg = segment(&sig, &cfg).unwrap();
        let ev = matched_events(&seg, &ann, sig.sample_rate(), cfg.siamese.hyper.event_len, MATCH_TOLERANCE_S).unwrap();
        (seg, ev)
    };
    let (_, train_ev) = events(1);
    let pairs = make_pairs(&train_ev.s1, &train_ev.other).unwrap();
    let (model, _) = train(&pairs, cfg.siamese.hyper, &cfg.siamese.train_config(0)).unwrap();
    let ex = embed_exemplars(&model, &train_ev.s1).unwrap();

    let (seg, _) = events(2);
    let mut correct = 0;
    let all = segment_events(&seg, "r2", cfg.siamese.hyper.event_len).unwrap();
    for (i, ev) in &all {
        let (class, _) = classify_event(&model, ev, &ex, cfg.siamese.threshold).unwrap();
        let dp_s1 = seg.labeled.onsets[*i].label == pcgseg::signal_io::SoundLabel::S1;
        if (class == EventClass::S1) == dp_s1 {
            correct += 1;
        }
    }
    assert!(correct as f64 >= 0.9 * all.len() as f64, "{correct}/{}", all.len());
}
