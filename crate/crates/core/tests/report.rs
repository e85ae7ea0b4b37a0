mod common;

use std::sync::Arc;

use common::*;
use stackcnn::ensemble::{rank_ensembles, FoldEnsemble, SharedEnsemble};
use stackcnn::report::emit_ranking_report;
use stackcnn::text::{EncodedCorpus, EncodedExample};
use stackcnn::Rng;

fn corpus(rng: &mut Rng, n: usize) -> EncodedCorpus<f64> {
    let examples = (0..n)
        .map(|i| EncodedExample {
            id: format!("x{i}"),
            label: random_class(rng),
            matrix: tiny_input(rng),
        })
        .collect();
    EncodedCorpus::single("tiny", examples)
}

fn ensembles(rng: &mut Rng, n: usize) -> Vec<SharedEnsemble<f64>> {
    let list = (0..n)
        .map(|i| {
            let members: Vec<_> = (0..2).map(|_| tiny_model(rng, 0.5)).collect();
            Arc::new(FoldEnsemble {
                id: format!("ens-{i:04}"),
                order: i,
                hyperparams: members[0].hyperparams.clone(),
                members,
                train_score: (rng.below(5) as f64) / 5.0,
            })
        })
        .collect();
    rank_ensembles(list).unwrap()
}

#[test]
fn twenty_ensembles_three_stack_sizes() {
    let mut rng = Rng::new(1);
    let train = corpus(&mut rng, 30);
    let test = corpus(&mut rng, 25);
    let ranked = ensembles(&mut rng, 20);
    let report = emit_ranking_report(&ranked, &train, Some(&test), &[3, 10, 20]).unwrap();

    assert_eq!(report.individual.len(), 20);
    for (i, row) in report.individual.iter().enumerate() {
        assert_eq!(row.rank, i + 1);
        assert_eq!(row.id, ranked[i].id);
        assert!(row.test.is_some());
    }
    for w in report.individual.windows(2) {
        assert!(w[0].train_score >= w[1].train_score);
    }
    let ks: Vec<usize> = report.stacked.iter().map(|r| r.k).collect();
    assert_eq!(ks, [3, 10, 20]);
    for row in &report.stacked {
        assert!(row.error.is_none());
        assert_eq!(row.train.as_ref().unwrap().total, 30);
        assert_eq!(row.test.as_ref().unwrap().total, 25);
    }

    let tsv = report.to_tsv();
    assert!(tsv.lines().count() >= 23, "{tsv}");
    let text = report.to_text();
    assert!(text.contains("Top3") && text.contains("Top10") && text.contains("Top20"), "{text}");
}

#[test]
fn oversized_k_becomes_an_error_row() {
    let mut rng = Rng::new(2);
    let train = corpus(&mut rng, 10);
    let ranked = ensembles(&mut rng, 3);
    let report = emit_ranking_report(&ranked, &train, None, &[2, 5]).unwrap();
    assert_eq!(report.individual.len(), 3);
    assert!(report.stacked[0].error.is_none() && report.stacked[0].train.is_some());
    assert!(report.stacked[0].test.is_none());
    assert!(report.stacked[1].error.is_some());
    assert!(report.stacked[1].train.is_none());
}

#[test]
fn single_stack_matches_its_ensemble() {
    let mut rng = Rng::new(3);
    let train = corpus(&mut rng, 20);
    let test = corpus(&mut rng, 20);
    let ranked = ensembles(&mut rng, 1);
    let report = emit_ranking_report(&ranked, &train, Some(&test), &[1]).unwrap();
    assert_eq!(report.stacked[0].test, report.individual[0].test);
}

#[test]
fn empty_ranking_is_an_error() {
    let mut rng = Rng::new(4);
    let train = corpus(&mut rng, 5);
    assert!(emit_ranking_report::<f64>(&[], &train, None, &[1]).is_err());
}
