//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero if any fails.
//! Pass criterion numbers as arguments to run a subset, e.g. `cargo test --test acceptance -- 3 7`.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lipread::ctc::{collapse, ctc_greedy, ctc_loss, CtcPosterior, PrefixScorer};
use lipread::decode::{beam_search, decode_clip, exhaustive_decode, DecodeConfig, Hypothesis, Scorers};
use lipread::eval::{
    bootstrap_counts, cer, coverage_stats, wer, zipf_curve, zipf_curve_from_counts, UttResult, WordCounts,
};
use lipread::lm::{CharNgramLm, SequenceScorer};
use lipread::math::log_softmax_rows;
use lipread::nn::{
    gradient_check, prepare_input, train, GroupError, Matrix, Model, ModelConfig, TrainConfig, TrainItem,
    VANISHING_NORM,
};
use lipread::roi::{extract_roi, fit_norm_stats, load_landmarks, neutral_reference, RoiClip, VideoU8, ROI_SIZE};
use lipread::synth::{generate_corpus, SynthSpec};
use lipread::tokenizer::Vocabulary;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn report(n: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let elapsed = start.elapsed();
    let outcome = match (outcome, limit) {
        (Ok(d), Some(l)) if elapsed > l => Err(format!("{d}; took {:.1}s, limit {:.0}s", elapsed.as_secs_f64(), l.as_secs_f64())),
        (o, _) => o,
    };
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!("{tag} criterion {n:>2} {name}: {detail} [{:.2}s]", elapsed.as_secs_f64());
    outcome.is_ok()
}

fn random_posterior(rng: &mut ChaCha8Rng, frames: usize, classes: usize) -> (Vec<f64>, CtcPosterior) {
    let logits: Vec<f64> = (0..frames * classes).map(|_| rng.random_range(-3.0..3.0)).collect();
    let post = CtcPosterior::from_logits(frames, classes, &logits).unwrap();
    (logits, post)
}

fn targets_up_to(labels: &[usize], max_len: usize) -> Vec<Vec<usize>> {
    let mut all = vec![vec![]];
    let mut layer: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|p| {
                labels.iter().map(move |&c| {
                    let mut q = p.clone();
                    q.push(c);
                    q
                })
            })
            .collect();
        all.extend(layer.iter().cloned());
    }
    all
}

/// Probability of every collapsed label sequence, by enumerating all frame paths.
fn brute_force(logprobs: &[f64], frames: usize, classes: usize) -> HashMap<Vec<usize>, f64> {
    let mut out = HashMap::new();
    for code in 0..classes.pow(frames as u32) {
        let mut path = Vec::with_capacity(frames);
        let mut c = code;
        let mut lp = 0.0;
        for t in 0..frames {
            let k = c % classes;
            c /= classes;
            lp += logprobs[t * classes + k];
            path.push(k);
        }
        *out.entry(collapse(&path, 0)).or_insert(0.0) += lp.exp();
    }
    out
}

fn criterion_1() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut checked, mut worst_ll, mut worst_grad) = (0, 0.0f64, 0.0f64);
    for frames in 1..=5 {
        for _ in 0..4 {
            let (logits, post) = random_posterior(&mut rng, frames, 4);
            let logprobs = log_softmax_rows(&logits, 4);
            let exact = brute_force(&logprobs, frames, 4);
            for target in targets_up_to(&[1, 2, 3], 3) {
                let loss = ctc_loss(&post, &target, 0).map_err(|e| e.to_string())?;
                let p = exact.get(&target).copied().unwrap_or(0.0);
                if p == 0.0 {
                    ensure(loss.nll == f64::INFINITY, || format!("{target:?} T={frames}: expected +inf"))?;
                    continue;
                }
                let err = (-loss.nll - p.ln()).abs();
                worst_ll = worst_ll.max(err);
                ensure(err <= 1e-9, || format!("{target:?} T={frames}: log-space error {err:e}"))?;
                // Chain the log-posterior gradient through log-softmax and compare with
                // central differences on the logits.
                let mut analytic = vec![0.0; logits.len()];
                for t in 0..frames {
                    let g = &loss.grad[t * 4..(t + 1) * 4];
                    let total: f64 = g.iter().sum();
                    for k in 0..4 {
                        analytic[t * 4 + k] = g[k] - logprobs[t * 4 + k].exp() * total;
                    }
                }
                let h = 1e-5;
                let numeric: Vec<f64> = (0..logits.len())
                    .map(|i| {
                        let eval = |d: f64| {
                            let mut z = logits.clone();
                            z[i] += d;
                            ctc_loss(&CtcPosterior::from_logits(frames, 4, &z).unwrap(), &target, 0).unwrap().nll
                        };
                        (eval(h) - eval(-h)) / (2.0 * h)
                    })
                    .collect();
                let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
                let diff = norm(&mut analytic.iter().zip(&numeric).map(|(a, b)| a - b));
                let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
                let rel = if scale < 1e-12 { 0.0 } else { diff / scale };
                worst_grad = worst_grad.max(rel);
                ensure(rel <= 1e-5, || format!("{target:?} T={frames}: gradient relative error {rel:e}"))?;
                checked += 1;
            }
        }
    }
    Ok(format!(
        "{checked} reachable (target, posterior) pairs; max log error {worst_ll:.1e}, max gradient rel. error {worst_grad:.1e}"
    ))
}

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..100 {
        let (_, post) = random_posterior(&mut rng, 4, 4);
        let scorer = PrefixScorer::new(&post, 0);
        for g in targets_up_to(&[1, 2, 3], 3) {
            let state = scorer.state_for(&g);
            let p_prefix = match g.split_last() {
                None => 1.0,
                Some((&last, head)) => scorer.extend(&scorer.state_for(head), last).0.exp(),
            };
            let mut total = scorer.full(&state).exp();
            for c in 1..4 {
                total += scorer.extend(&state, c).0.exp();
            }
            let err = (total - p_prefix).abs();
            worst = worst.max(err);
            ensure(err <= 1e-9, || format!("prefix {g:?}: |Σ − p_prefix| = {err:e}"))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} prefixes over 100 posteriors; max deviation {worst:.1e}"))
}

/// Next-token distribution drawn from a seeded hash of the prefix.
struct TableScorer {
    seed: u64,
    vocab: usize,
    sharpness: f64,
}

impl SequenceScorer for TableScorer {
    fn next_log_probs(&self, prefix: &[usize]) -> lipread::Result<Vec<f64>> {
        let mut h = self.seed;
        for &t in prefix {
            h = h.wrapping_mul(0x100000001b3).wrapping_add(t as u64 + 1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let logits: Vec<f64> = (0..self.vocab).map(|_| self.sharpness * rng.random_range(-1.0..1.0)).collect();
        Ok(log_softmax_rows(&logits, self.vocab))
    }
}

fn criterion_3() -> Check {
    let lambdas = [0.0, 0.1, 0.5, 1.0];
    let betas = [0.0, 0.4];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..100u64 {
        let frames = rng.random_range(1..=5);
        let (_, post) = random_posterior(&mut rng, frames, 4);
        let attn = TableScorer { seed: rng.random(), vocab: 4, sharpness: 2.0 };
        let lm = TableScorer { seed: rng.random(), vocab: 4, sharpness: 1.0 };
        let scorers = Scorers { ctc: &post, attention: &attn, lm: Some(&lm), blank: 0, eos: 3 };
        let cfg = DecodeConfig {
            lambda: lambdas[i as usize % 4],
            beta: betas[(i as usize / 4) % 2],
            beam: 64,
            penalty: 0.0,
            max_len: 3,
        };
        let best = beam_search(&scorers, &cfg).map_err(|e| e.to_string())?.swap_remove(0);
        let oracle = exhaustive_decode(&scorers, &cfg).map_err(|e| e.to_string())?;
        ensure(best.tokens == oracle.tokens, || {
            format!("instance {i}: beam {:?} vs exhaustive {:?}", best.tokens, oracle.tokens)
        })?;
        let err = (best.combined - oracle.combined).abs();
        ensure(err <= 1e-9 || best.combined == oracle.combined, || format!("instance {i}: score gap {err:e}"))?;
    }
    Ok("100 instances agree in string and score".into())
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn criterion_4() -> Check {
    let rows = [
        ("pena con hasta tres años de prision", "pero esta traslados de prision", 71.4, 28.6),
        ("y hasta mañana muy buenas noches", "esta mañana muy buenas noches", 33.3, 12.5),
        ("tu hermano y el mio se encontraron en el metro", "tu hermano y el vino se encontraron en el medio", 20.0, 8.7),
        ("la pelicula que vimos era una comedia", "la pelicula que vimos era una comedia", 0.0, 0.0),
        ("se le aparece en la cabeza una imagen", "aparece que dice una imagen", 75.0, 45.9),
        (
            "estan limpiando tambien el barro y evaluando los destrozos",
            "se esta inspirando tambien el perro y evaluando seis socios",
            66.7,
            32.8,
        ),
    ];
    let mut mismatches = Vec::new();
    for (r, h, w, c) in rows {
        let u = [UttResult::score("g", r, h)];
        let (gw, gc) = (round1(wer(&u).unwrap()), round1(cer(&u).unwrap()));
        if (gw, gc) != (w, c) {
            mismatches.push(format!("{r:?}: got {gw:.1}/{gc:.1}, expected {w:.1}/{c:.1}"));
        }
    }
    if mismatches.is_empty() {
        Ok(format!("{} golden pairs reproduce WER/CER to one decimal", rows.len()))
    } else {
        Err(mismatches.join("; "))
    }
}

fn criterion_5() -> Check {
    let same = vec![(2usize, 10usize); 25];
    let ci = bootstrap_counts(&same, 2000, 5).map_err(|e| e.to_string())?;
    ensure(ci.lo == ci.hi && ci.lo == 20.0 && ci.estimate == 20.0, || format!("degenerate corpus gave {ci:?}"))?;

    let (trials, utterances, p_err) = (500, 100, 0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut covered = 0;
    for k in 0..trials {
        let items: Vec<(usize, usize)> = (0..utterances)
            .map(|_| {
                let n = rng.random_range(5..=15usize);
                ((0..n).filter(|_| rng.random_bool(p_err)).count(), n)
            })
            .collect();
        let ci = bootstrap_counts(&items, 1000, k).map_err(|e| e.to_string())?;
        if ci.lo <= 100.0 * p_err && 100.0 * p_err <= ci.hi {
            covered += 1;
        }
    }
    let rate = covered as f64 / trials as f64;
    ensure((0.93..=0.97).contains(&rate), || format!("coverage {:.1}% outside [93, 97]", 100.0 * rate))?;
    Ok(format!("zero-width degenerate CI; coverage {covered}/{trials} = {:.1}%", 100.0 * rate))
}

fn gradient_setup(relative: bool) -> (Model, RoiClip, Matrix, Vec<usize>) {
    let cfg = ModelConfig {
        d_model: 8,
        heads: 2,
        ffn_dim: 16,
        encoder_layers: 1,
        decoder_layers: 1,
        frontend_channels: 4,
        spatial_channels: 4,
        vocab_size: 6,
        relative_positions: relative,
        max_relative_distance: 2,
        ..ModelConfig::default()
    };
    let mut model = Model::new(cfg, 61).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    for idx in 0..model.params.len() {
        let m = model.params.value_mut(idx);
        if m.rows == 1 {
            m.data.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
    }
    let clip = RoiClip::new(4, 16, 16, (0..4 * 256).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let probe = Matrix::from_fn(4, 8, |_, _| rng.random_range(-1.0..1.0));
    (model, clip, probe, vec![1, 2, 2])
}

fn criterion_6() -> Check {
    const EPS: f64 = 1e-4;
    const TOL: f64 = 1e-4;
    let mut reports: Vec<(&str, Vec<GroupError>)> = Vec::new();
    let run = |r: lipread::Result<Vec<GroupError>>| r.map_err(|e| e.to_string());
    let (model, clip, probe, labels) = gradient_setup(false);
    reports.push((
        "frontend",
        run(gradient_check(
            &model,
            |m, g| {
                let f = m.frontend(g, &clip)?;
                let r = g.leaf(probe.clone());
                let p = g.mul(f, r);
                Ok(g.sum(p))
            },
            |n| n.starts_with("frontend."),
            EPS,
        ))?,
    ));
    for (name, relative) in [("encoder", false), ("encoder (relative positions)", true)] {
        let (model, clip, probe, _) = gradient_setup(relative);
        reports.push((
            name,
            run(gradient_check(
                &model,
                |m, g| {
                    let e = m.encode_graph(g, &clip)?;
                    let r = g.leaf(probe.clone());
                    let p = g.mul(e, r);
                    Ok(g.sum(p))
                },
                |n| n.starts_with("enc."),
                EPS,
            ))?,
        ));
    }
    reports.push((
        "decoder",
        run(gradient_check(
            &model,
            |m, g| {
                let enc = g.leaf(probe.clone());
                let lp = m.decoder_graph(g, enc, &labels)?;
                Ok(m.attention_nll_graph(g, lp, &labels))
            },
            |n| n.starts_with("dec."),
            EPS,
        ))?,
    ));
    reports.push((
        "hybrid loss",
        run(gradient_check(&model, |m, g| Ok(m.loss_graph(g, &clip, &labels, 0.1)?.loss), |_| true, EPS))?,
    ));
    let mut worst = 0.0f64;
    let mut tensors = 0;
    for (part, report) in &reports {
        ensure(!report.is_empty(), || format!("{part}: no parameters checked"))?;
        for r in report {
            tensors += 1;
            worst = worst.max(r.relative_error);
            ensure(r.relative_error <= TOL, || format!("{part}/{}: relative error {:e}", r.name, r.relative_error))?;
            ensure(r.name.ends_with(".k.b") || r.analytic_norm > VANISHING_NORM, || {
                format!("{part}/{}: gradient vanished", r.name)
            })?;
        }
    }
    Ok(format!("{tensors} parameter tensors across 5 checks; max relative error {worst:.1e}"))
}

/// The trained system of the learnability run, reused by the ablation checks.
struct Trained {
    vocab: Vocabulary,
    model: Model,
    lm: CharNgramLm,
    inputs: Vec<(String, RoiClip)>,
}

fn load_synthetic(dir: &Path, spec: &SynthSpec, vocab: &Vocabulary) -> (Vec<TrainItem>, Vec<String>) {
    generate_corpus(spec, vocab, dir).unwrap();
    let manifest = lipread::manifest::Manifest::load(&dir.join("manifest.tsv")).unwrap();
    let mut items = Vec::new();
    let mut texts = Vec::new();
    for e in &manifest.entries {
        let video = VideoU8::load(&e.frames).unwrap();
        let lm = load_landmarks(e.landmarks.as_ref().unwrap()).unwrap();
        let roi = extract_roi(&video, &lm, &neutral_reference(), ROI_SIZE).unwrap();
        items.push(TrainItem {
            id: e.id.clone(),
            clip: RoiClip::from_video(&roi.to_video()),
            labels: vocab.encode(&e.text).unwrap().into_inner(),
        });
        texts.push(e.text.clone());
    }
    (items, texts)
}

fn criterion_7(trained: &mut Option<Trained>) -> Check {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let vocab = Vocabulary::spanish();
        let tmp = tempfile::tempdir().unwrap();
        let spec = SynthSpec { seed: 7, utterances: 20, noise_std: 0.0, ..SynthSpec::default() };
        let (items, texts) = load_synthetic(tmp.path(), &spec, &vocab);
        let stats = fit_norm_stats(items.iter().map(|i| &i.clip)).unwrap();
        let corpus: Vec<Vec<usize>> = items.iter().map(|i| i.labels.clone()).collect();
        let lm = CharNgramLm::train(&corpus, 4, 0.1, &vocab).unwrap();
        let inputs: Vec<(String, RoiClip)> = items
            .iter()
            .map(|i| (i.id.clone(), prepare_input(&i.clip, &stats, 88, None).unwrap()))
            .collect();
        let dcfg = DecodeConfig { lambda: 0.1, beta: 0.4, beam: 10, ..DecodeConfig::default() };
        let score = |m: &Model| {
            let mut joint = Vec::new();
            let mut greedy = Vec::new();
            for ((id, x), text) in inputs.iter().zip(&texts) {
                let h = decode_clip(m, x, Some(&lm), &dcfg).unwrap();
                joint.push(UttResult::score(id, text, &vocab.decode(&h[0].tokens).unwrap()));
                let enc = m.encode(x).unwrap();
                greedy.push(UttResult::score(id, text, &vocab.decode(&ctc_greedy(&enc.ctc, 0)).unwrap()));
            }
            (cer(&joint).unwrap(), wer(&joint).unwrap(), cer(&greedy).unwrap(), wer(&greedy).unwrap())
        };
        let mut model = Model::new(ModelConfig::default(), 0).unwrap();
        let tc = TrainConfig { epochs: 200, alpha: 0.1, seed: 0, ..TrainConfig::default() };
        let mut last = None;
        let history = train(&mut model, &items, &stats, &tc, |s, m| {
            if (s.epoch + 1) % 10 != 0 {
                return true;
            }
            let r = score(m);
            last = Some((s.epoch + 1, r));
            r.0 > 5.0
        })
        .map_err(|e| e.to_string())?;
        let (epochs, (jc, jw, gc, gw)) = match last {
            Some((e, r)) if e == history.len() => (e, r),
            _ => (history.len(), score(&model)),
        };
        *trained = Some(Trained { vocab: vocab.clone(), model, lm, inputs });
        let detail = format!(
            "{epochs} epochs; joint CER {jc:.1}% WER {jw:.1}%, greedy CTC CER {gc:.1}% WER {gw:.1}%"
        );
        ensure(jc <= 5.0, || format!("{detail}: training CER above 5%"))?;
        ensure(jw < gw, || format!("{detail}: joint WER not below greedy"))?;
        Ok(detail)
    })
}

fn criterion_8(trained: &Option<Trained>) -> Check {
    let t = trained.as_ref().ok_or("no trained system (criterion 7 did not run)")?;
    let other = CharNgramLm::train(
        &[t.vocab.encode("una frase sin relacion con el corpus").unwrap().into_inner()],
        2,
        0.5,
        &t.vocab,
    )
    .unwrap();
    let mut checked = 0;
    for (id, x) in t.inputs.iter().take(8) {
        let no_lm = DecodeConfig { beta: 0.0, ..DecodeConfig::default() };
        let a = decode_clip(&t.model, x, Some(&t.lm), &no_lm).map_err(|e| e.to_string())?;
        let b = decode_clip(&t.model, x, Some(&other), &no_lm).map_err(|e| e.to_string())?;
        ensure(a[0].tokens == b[0].tokens, || format!("{id}: β=0 output depends on the LM"))?;
        for lambda in [0.0, 1.0] {
            let cfg = DecodeConfig { lambda, ..DecodeConfig::default() };
            let hyps: Vec<Hypothesis> = decode_clip(&t.model, x, Some(&t.lm), &cfg).map_err(|e| e.to_string())?;
            for h in &hyps {
                let gap = (h.recombined(&cfg) - h.combined).abs();
                ensure(gap <= 1e-12 || h.recombined(&cfg) == h.combined, || {
                    format!("{id} λ={lambda}: recombination gap {gap:e}")
                })?;
                checked += 1;
            }
        }
    }
    Ok(format!("β=0 argmax LM-invariant on 8 utterances; {checked} λ∈{{0,1}} hypotheses recombine"))
}

fn criterion_9() -> Check {
    let exact: WordCounts = (1..=100u64)
        .map(|r| (format!("w{r:03}"), (1e12 / r as f64).round() as u64))
        .collect();
    let slope = zipf_curve_from_counts(&exact).map_err(|e| e.to_string())?.slope;
    ensure((slope + 1.0).abs() <= 1e-6, || format!("exact corpus slope {slope}"))?;

    let zipf = rand_distr::Zipf::new(200.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let tokens: Vec<String> = (0..100_000)
        .map(|_| format!("w{:03}", rng.sample(zipf) as usize))
        .collect();
    let sampled = zipf_curve(tokens.iter().map(String::as_str)).map_err(|e| e.to_string())?.slope;
    ensure((sampled + 1.0).abs() <= 0.1, || format!("sampled corpus slope {sampled}"))?;

    let s = coverage_stats("a a a b b c".split(' '), "a b d".split(' '), 2).map_err(|e| e.to_string())?;
    ensure((s.train_v, s.test_v, s.test_rw) == (3, 3, 3), || format!("sizes {s:?}"))?;
    for o in [s.test_v_in_train_v, s.test_v_in_top_v, s.test_rw_in_train_v, s.test_rw_in_top_v] {
        ensure(o.count == 2 && format!("{o}") == "2 (66.7%)", || format!("overlap {o}"))?;
    }
    Ok(format!("exact slope {slope:.9}; sampled slope {sampled:.4}; coverage example exact"))
}

fn run_pipeline(dir: &Path, jobs: &str) -> Result<Vec<(String, Vec<u8>)>, String> {
    let steps: [&[&str]; 6] = [
        &["synth-data", "--out", "corpus", "--set", "utterances=6"],
        &["preprocess", "--manifest", "corpus/manifest.tsv", "--out", "proc"],
        &["train", "--data", "proc", "--out", "model.lpck", "--set", "epochs=2"],
        &["lm-train", "--transcripts", "corpus/transcripts.txt", "--out", "lm.txt"],
        &["decode", "--data", "proc", "--model", "model.lpck", "--lm", "lm.txt", "--out", "dec"],
        &["evaluate", "--refs", "corpus/transcripts.txt", "--hyps", "dec/hyp.txt", "--out", "report.tsv", "--set", "replicates=1000"],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_lipread"))
            .current_dir(dir)
            .env("RUST_LOG", "warn")
            .args(["--seed", "3", "--jobs", jobs])
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(out.status.success(), || format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))?;
    }
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).map_err(|e| e.to_string())? {
            let p = e.map_err(|e| e.to_string())?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, std::fs::read(&p).map_err(|e| e.to_string())?));
            }
        }
    }
    files.sort();
    Ok(files)
}

fn criterion_10() -> Check {
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    let a = run_pipeline(dirs[0].path(), "1")?;
    let b = run_pipeline(dirs[1].path(), "1")?;
    let c = run_pipeline(dirs[2].path(), "4")?;
    for (label, other) in [("repeat run", &b), ("--jobs 4", &c)] {
        ensure(a.len() == other.len(), || format!("{label}: file sets differ"))?;
        for ((na, ba), (nb, bb)) in a.iter().zip(other.iter()) {
            ensure(na == nb && ba == bb, || format!("{label}: {na} differs"))?;
        }
    }
    Ok(format!("{} artifacts byte-identical across two runs and --jobs 1 vs 4", a.len()))
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let wanted = |n: usize| selected.is_empty() || selected.contains(&n);
    let secs = Duration::from_secs;
    let mut all = true;
    let mut trained = None;
    if wanted(1) {
        all &= report(1, "CTC exactness", Some(secs(10)), criterion_1);
    }
    if wanted(2) {
        all &= report(2, "prefix-score conservation", Some(secs(10)), criterion_2);
    }
    if wanted(3) {
        all &= report(3, "beam oracle", Some(secs(60)), criterion_3);
    }
    if wanted(4) {
        all &= report(4, "golden metrics", Some(secs(1)), criterion_4);
    }
    if wanted(5) {
        all &= report(5, "bootstrap validity", Some(secs(120)), criterion_5);
    }
    if wanted(6) {
        all &= report(6, "gradient suite", Some(secs(120)), criterion_6);
    }
    if wanted(7) || wanted(8) {
        let ok = report(7, "end-to-end learnability", Some(secs(600)), || criterion_7(&mut trained));
        if wanted(7) {
            all &= ok;
        }
    }
    if wanted(8) {
        all &= report(8, "ablation semantics", None, || criterion_8(&trained));
    }
    if wanted(9) {
        all &= report(9, "zipf analysis", None, criterion_9);
    }
    if wanted(10) {
        all &= report(10, "determinism", None, criterion_10);
    }
    if !all {
        std::process::exit(1);
    }
}
