//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p methodtag --test acceptance -- --nocapture`.

#[path = "../../core/tests/oracle/mod.rs"]
mod oracle;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use methodtag::formats::parse_curve_csv;
use methodtag::pipeline::{run_pipeline, write_synthetic_workspace, SyntheticSpec};
use methodtag_core::annotate::annotation_score2;
use methodtag_core::cluster::{linkage_dense, LinkageMethod, Metric};
use methodtag_core::metrics::{accuracy, confusion, f1, hamming_loss, precision, recall};
use methodtag_core::model::{
    attention_weights, encoder_forward_untrimmed, loss_and_gradients, scaled_dot_attention, Example,
};
use methodtag_core::tokenizer::{encode, wordpiece, DEFAULT_MAX_LEN};
use methodtag_core::train::bce_with_logits_scalar;
use methodtag_core::{seed, Annotation, FormKind, LabelMatrix, MetricReport, ModelConfig, ModelParams, Tensor2D, Vocab};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn run_suite<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> String {
    let mut r = runner(cases);
    match r.run(&strategy, test) {
        Ok(()) => format!("{cases} random cases"),
        Err(e) => panic!("{e}"),
    }
}

fn score_oracle() -> String {
    for (pref, words, want) in oracle::SCORE_TABLE {
        let a = Annotation {
            term_id: "T:1".into(),
            label_id: None,
            form_kind: if pref { FormKind::Pref } else { FormKind::Syn },
            span: (0, 1),
            surface: "x".into(),
            annotated_words: words as usize,
        };
        assert_eq!(annotation_score2(&a), want, "pref={pref} words={words}");
    }
    format!("{} (kind, words) pairs", oracle::SCORE_TABLE.len())
}

fn dense(rows: usize, cols: usize) -> impl Strategy<Value = Vec<Vec<u8>>> {
    proptest::collection::vec(proptest::collection::vec(0u8..=1, cols), rows)
}

fn as_matrix(rows: &[Vec<u8>]) -> LabelMatrix {
    LabelMatrix::from_dense((0..rows.len()).map(|i| format!("p{i}")).collect(), rows).unwrap()
}

fn metrics_oracle() -> String {
    run_suite(100, (dense(8, 8), dense(8, 8)), |(pred, gold)| {
        let (p, g) = (as_matrix(&pred), as_matrix(&gold));
        let c = confusion(&p, &g).unwrap();
        let [acc, prec, rec, f, ham] = oracle::naive_metrics(&pred, &gold);
        prop_assert_eq!(accuracy(&c).ok(), acc);
        prop_assert_eq!(precision(&c).ok(), prec);
        prop_assert_eq!(recall(&c).ok(), rec);
        prop_assert_eq!(f1(&c).ok().map(|x| x.value), f);
        prop_assert_eq!(hamming_loss(&p, &g).ok(), ham);
        let report = MetricReport::evaluate(&p, &g).unwrap();
        prop_assert_eq!([report.accuracy, report.precision, report.recall, report.f1, report.hamming_loss], [acc, prec, rec, f, ham]);
        prop_assert!((ham.unwrap() - (1.0 - acc.unwrap())).abs() <= 1e-12);
        Ok(())
    })
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 4,
        heads: 2,
        n_layers: 1,
        d_ff: 6,
        vocab_size: 7,
        max_positions: 4,
        num_labels: 3,
        dropout_rate: 0.0,
    }
}

fn gradient_check() -> String {
    let config = tiny_config();
    let mut params = ModelParams::init_with_std(&config, &mut seed::rng(17), 0.5).unwrap();
    // move biases and layer-norm terms off their 0/1 starting values
    let names: Vec<String> = params.named_tensors().into_iter().map(|(n, _)| n).collect();
    for (ti, name) in names.iter().enumerate() {
        if name.contains("bias") || name.contains("ln") {
            for (i, v) in params.tensors_mut()[ti].data_mut().iter_mut().enumerate() {
                *v += 0.4 * ((ti * 7 + i) as f64).sin();
            }
        }
    }
    let batch = [
        Example { ids: vec![2, 5], mask: vec![1, 1], targets: vec![1.0, 0.0, 1.0] },
        Example { ids: vec![4, 1], mask: vec![1, 1], targets: vec![0.0, 1.0, 0.0] },
    ];
    let (_, grads) = loss_and_gradients(&params, &config, &batch, None, None).unwrap();
    let eps = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (ti, name) in names.iter().enumerate() {
        for i in 0..params.tensors()[ti].data().len() {
            let base = params.tensors()[ti].data()[i];
            let mut plus = params.clone();
            plus.tensors_mut()[ti].data_mut()[i] = base + eps;
            let mut minus = params.clone();
            minus.tensors_mut()[ti].data_mut()[i] = base - eps;
            let lp = loss_and_gradients(&plus, &config, &batch, None, None).unwrap().0;
            let lm = loss_and_gradients(&minus, &config, &batch, None, None).unwrap().0;
            let numeric = (lp - lm) / (2.0 * eps);
            let analytic = grads.tensors()[ti].data()[i];
            let scale = analytic.abs().max(numeric.abs());
            let rel = if scale < 1e-7 { 0.0 } else { (analytic - numeric).abs() / scale };
            assert!(rel < 1e-4, "{name}[{i}]: analytic {analytic} numeric {numeric}");
            worst = worst.max(rel);
            checked += 1;
        }
    }
    format!("{checked} parameters, worst relative error {worst:.2e}")
}

fn random_matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor2D> {
    proptest::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |d| Tensor2D::from_vec(rows, cols, d).unwrap())
}

fn attention_checks() -> String {
    let q = Tensor2D::from_rows(&[&[1.0], &[0.0]]).unwrap();
    let v = Tensor2D::from_rows(&[&[2.0], &[0.0]]).unwrap();
    let out = scaled_dot_attention(&q, &q, &v, &[1, 1]).unwrap();
    assert!((out[(0, 0)] - 1.4621).abs() < 1e-4, "{}", out[(0, 0)]);
    assert!((out[(1, 0)] - 1.0).abs() < 1e-4, "{}", out[(1, 0)]);

    let stochastic = run_suite(
        64,
        (
            random_matrix(3, 4),
            random_matrix(5, 4),
            proptest::collection::vec(0u8..=1, 5).prop_filter("one visible key", |m| m.contains(&1)),
        ),
        |(q, k, mask)| {
            let w = attention_weights(&q, &k, &mask).unwrap();
            for r in 0..w.rows() {
                prop_assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
            Ok(())
        },
    );

    let mut config = tiny_config();
    config.max_positions = 10;
    let params = ModelParams::init_with_std(&config, &mut seed::rng(5), 0.5).unwrap();
    let base = encoder_forward_untrimmed(&[2, 3, 4], &[1, 1, 1], &params, &config).unwrap();
    for pads in 1..=7 {
        let mut ids = vec![2u32, 3, 4];
        ids.extend(std::iter::repeat_n(0, pads));
        let mut mask = vec![1u8; 3];
        mask.extend(std::iter::repeat_n(0, pads));
        let padded = encoder_forward_untrimmed(&ids, &mask, &params, &config).unwrap();
        for (a, b) in base.iter().zip(&padded) {
            assert!((a - b).abs() < 1e-9, "{pads} pads: {a} vs {b}");
        }
    }
    format!("hand example, softmax over {stochastic}, 1..=7 pads")
}

const SYNTHETIC_OUTPUTS: &[&str] = &["model.ckpt", "outputs/curve.csv", "outputs/metrics.json"];

struct SyntheticRun {
    dir: tempfile::TempDir,
    f1: Option<f64>,
    curve: Vec<(usize, f64, f64)>,
    elapsed: Duration,
}

fn synthetic_run() -> SyntheticRun {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let cfg = write_synthetic_workspace(dir.path(), SyntheticSpec::default()).unwrap();
    assert_eq!(cfg.train.split_ratio, 0.8);
    assert_eq!(cfg.train.epochs, 10);
    let run = run_pipeline(&cfg).unwrap_or_else(|e| panic!("{e}"));
    let elapsed = start.elapsed();
    assert_eq!(parse_curve_csv(&cfg.paths.curve()).unwrap(), run.curve);
    SyntheticRun {
        dir,
        f1: run.report.f1,
        curve: run.curve,
        elapsed,
    }
}

fn end_to_end(run: &SyntheticRun) -> String {
    let f1 = run.f1.expect("micro-F1 is defined");
    let first = run.curve.first().unwrap().1;
    let last = run.curve.last().unwrap().1;
    assert_eq!(run.curve.len(), 10);
    assert!(f1 >= 0.90, "held-out micro-F1 {f1:.4} < 0.90");
    assert!(last <= 0.5 * first, "final train loss {last:.4} > half of epoch-1 loss {first:.4}");
    assert!(run.elapsed < Duration::from_secs(600), "took {:?}", run.elapsed);
    format!(
        "micro-F1 {f1:.4}, train loss {first:.4} -> {last:.4}, {:.1}s",
        run.elapsed.as_secs_f64()
    )
}

fn determinism(a: &Path, b: &Path) -> String {
    for name in SYNTHETIC_OUTPUTS {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert!(x == y, "{name} differs between runs");
    }
    format!("{} files bitwise equal", SYNTHETIC_OUTPUTS.len())
}

const METHODS: [(LinkageMethod, Metric); 7] = [
    (LinkageMethod::Ward, Metric::Euclidean),
    (LinkageMethod::Single, Metric::Euclidean),
    (LinkageMethod::Complete, Metric::Euclidean),
    (LinkageMethod::Average, Metric::Euclidean),
    (LinkageMethod::Single, Metric::Jaccard),
    (LinkageMethod::Complete, Metric::Jaccard),
    (LinkageMethod::Average, Metric::Jaccard),
];

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn clustering_oracle() -> String {
    let rows = (2usize..=16, 1usize..=6)
        .prop_flat_map(|(n, w)| proptest::collection::vec(proptest::collection::vec(0u8..=1, w), n));
    run_suite(128, (rows, 0usize..16), |(rows, pick)| {
        for (method, metric) in METHODS {
            let d = linkage_dense(&rows, method, metric).unwrap();
            let got = sorted(d.merge_distances());
            let want = sorted(oracle::naive_linkage(&rows, method, metric).into_iter().map(|s| s.2).collect());
            prop_assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                prop_assert!((g - w).abs() < 1e-9, "{:?}/{:?}: {:?} vs {:?}", method, metric, got, want);
            }
            if method == LinkageMethod::Ward {
                let dist = d.merge_distances();
                prop_assert!(dist.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{:?}", dist);
            }
        }
        let mut dup = rows.clone();
        dup.push(rows[pick % rows.len()].clone());
        for (method, metric) in METHODS {
            prop_assert_eq!(linkage_dense(&dup, method, metric).unwrap().steps()[0].distance, 0.0);
        }
        Ok(())
    })
}

fn brute_wordpiece(word: &str, vocab: &Vocab) -> Option<Vec<u32>> {
    let mut rest = word;
    let mut first = true;
    let mut out = Vec::new();
    while !rest.is_empty() {
        let mut best: Option<(&str, u32)> = None;
        for (id, tok) in vocab.tokens().iter().enumerate() {
            if tok.starts_with('[') && tok.ends_with(']') {
                continue;
            }
            let body = match (first, tok.strip_prefix("##")) {
                (true, None) => tok.as_str(),
                (false, Some(b)) => b,
                _ => continue,
            };
            if !body.is_empty() && rest.starts_with(body) && best.is_none_or(|(b, _)| body.len() > b.len()) {
                best = Some((body, id as u32));
            }
        }
        let (body, id) = best?;
        out.push(id);
        rest = &rest[body.len()..];
        first = false;
    }
    Some(out)
}

fn tokenizer_contract() -> String {
    let raw = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/vocab.txt")).unwrap();
    let vocab = Vocab::load(&raw).unwrap();
    let lengths = run_suite(64, ("[a-z0-9 .,!?-]{0,200}", prop_oneof![Just(DEFAULT_MAX_LEN), 2usize..64]), |(text, max_len)| {
        let enc = encode(&text, &vocab, max_len);
        prop_assert_eq!(enc.ids.len(), max_len);
        prop_assert_eq!(enc.attention_mask.len(), max_len);
        let active = enc.active_len();
        prop_assert!(enc.attention_mask[..active].iter().all(|&m| m == 1));
        prop_assert!(enc.attention_mask[active..].iter().all(|&m| m == 0));
        Ok(())
    });
    assert_eq!(encode("hpv mrnas p16.", &vocab, DEFAULT_MAX_LEN).ids.len(), 512);
    let greedy = run_suite(256, "[hpvmrnas16.]{1,12}", |word| {
        prop_assert_eq!(wordpiece(&word, &vocab), brute_wordpiece(&word, &vocab), "{}", word);
        Ok(())
    });
    format!("lengths over {lengths}, greedy prefix over {greedy}")
}

fn bce_values() -> String {
    assert!((bce_with_logits_scalar(0.0, 1.0) - std::f64::consts::LN_2).abs() <= 1e-12);
    assert!((bce_with_logits_scalar(10.0, 1.0) - 4.5399e-5).abs() <= 1e-9);
    let sym = run_suite(256, -800.0f64..800.0, |x| {
        prop_assert_eq!(bce_with_logits_scalar(x, 1.0), bce_with_logits_scalar(-x, 0.0));
        Ok(())
    });
    for x in [-12.0, -1.5, 0.25, 7.0] {
        let want = oracle::naive_bce(x, 1.0);
        assert!((bce_with_logits_scalar(x, 1.0) - want).abs() <= 1e-9 * want.max(1.0));
    }
    for x in [0.0, 1e-300, 3.5, 40.0, 745.0, f64::MAX] {
        assert_eq!(bce_with_logits_scalar(x, 1.0), bce_with_logits_scalar(-x, 0.0));
    }
    format!("reference values, symmetry over {sym}")
}

fn criterion(n: usize, name: &str, f: impl FnOnce() -> String) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let secs = start.elapsed().as_secs_f64();
    match result {
        Ok(detail) => {
            println!("PASS {n} {name}: {detail} [{secs:.2}s]");
            true
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            println!("FAIL {n} {name}: {msg} [{secs:.2}s]");
            false
        }
    }
}

#[test]
fn acceptance() {
    let mut results = vec![
        criterion(1, "annotation score oracle", score_oracle),
        criterion(2, "metrics oracle", metrics_oracle),
        criterion(3, "gradient check", gradient_check),
        criterion(4, "attention correctness", attention_checks),
    ];
    let first = catch_unwind(synthetic_run);
    results.push(criterion(5, "end-to-end synthetic run", || match &first {
        Ok(run) => end_to_end(run),
        Err(_) => panic!("synthetic pipeline failed"),
    }));
    results.push(criterion(6, "determinism", || {
        let a = first.as_ref().unwrap_or_else(|_| panic!("first run failed"));
        let b = synthetic_run();
        determinism(a.dir.path(), b.dir.path())
    }));
    results.push(criterion(7, "clustering oracle", clustering_oracle));
    results.push(criterion(8, "tokenizer contract", tokenizer_contract));
    results.push(criterion(9, "bce loss values", bce_values));
    let failed: Vec<usize> = results.iter().enumerate().filter(|(_, ok)| !**ok).map(|(i, _)| i + 1).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
