use proptest::prelude::*;
use varigen_core::embedding::EmbeddingVector;
use varigen_core::prompt::{
    filter_outliers, select_best_prompt, Comparator, EmbeddedCandidate, Fallback, PromptCandidate,
    SelectionMode,
};

fn candidates(rows: &[Vec<f64>]) -> Vec<EmbeddedCandidate> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| EmbeddedCandidate {
            candidate: PromptCandidate::new("widget", &format!("status{i}"), i).unwrap(),
            embedding: EmbeddingVector::raw(r.clone()).unwrap(),
        })
        .collect()
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn nonzero_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0..1.0f64, dim).prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
}

fn fixture() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (prop::collection::vec(nonzero_vec(4), 1..30), nonzero_vec(4))
}

/// Distance between unit vectors, then the comparator, written out by hand.
fn predicate_members(rows: &[Vec<f64>], image: &[f64], threshold: f64, cmp: Comparator) -> Vec<usize> {
    let u = unit(image);
    rows.iter()
        .enumerate()
        .filter(|(_, r)| {
            let t = unit(r);
            let d = u.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            match cmp {
                Comparator::Greater => d > threshold,
                Comparator::Less => d < threshold,
            }
        })
        .map(|(i, _)| i)
        .collect()
}

fn exhaustive_argmax(rows: &[Vec<f64>], members: &[usize], image: &[f64]) -> usize {
    let u = unit(image);
    let mut best = (f64::NEG_INFINITY, 0);
    for &i in members {
        let s: f64 = unit(&rows[i]).iter().zip(&u).map(|(a, b)| a * b).sum();
        if s > best.0 {
            best = (s, i);
        }
    }
    best.1
}

proptest! {
    #[test]
    fn filter_matches_predicate((rows, image) in fixture(), threshold in 0.0..2.0f64, less in any::<bool>()) {
        let cmp = if less { Comparator::Less } else { Comparator::Greater };
        let want = predicate_members(&rows, &image, threshold, cmp);
        let img = EmbeddingVector::raw(image).unwrap();
        match filter_outliers(&candidates(&rows), &img, threshold, cmp) {
            Ok(got) => prop_assert_eq!(got, want),
            Err(_) => prop_assert!(want.is_empty()),
        }
    }

    #[test]
    fn selection_is_scale_invariant((rows, image) in fixture(), scale in prop::sample::select(vec![0.01, 1.0, 100.0])) {
        let cands = candidates(&rows);
        let members: Vec<usize> = (0..rows.len()).collect();
        let img = EmbeddingVector::raw(image.clone()).unwrap();
        let base = select_best_prompt("widget", &cands, &members, &img, Fallback::Error, SelectionMode::Exhaustive).unwrap();
        let scaled = select_best_prompt("widget", &cands, &members, &img.scaled(scale), Fallback::Error, SelectionMode::Exhaustive).unwrap();
        prop_assert_eq!(base.best.as_ref().unwrap().index, scaled.best.as_ref().unwrap().index);
        let oracle = exhaustive_argmax(&rows, &members, &image);
        let got = base.best.unwrap();
        // near-ties may resolve either way under rounding
        let s_oracle: f64 = unit(&rows[oracle]).iter().zip(unit(&image)).map(|(a, b)| a * b).sum();
        prop_assert!(got.index == oracle || (got.score - s_oracle).abs() < 1e-12);
    }

    #[test]
    fn batched_scan_agrees_with_exhaustive((rows, image) in fixture(), iterations in 1usize..10) {
        let cands = candidates(&rows);
        let members: Vec<usize> = (0..rows.len()).collect();
        let img = EmbeddingVector::raw(image).unwrap();
        let a = select_best_prompt("widget", &cands, &members, &img, Fallback::Error, SelectionMode::Exhaustive).unwrap();
        let b = select_best_prompt("widget", &cands, &members, &img, Fallback::Error, SelectionMode::Batched { iterations }).unwrap();
        prop_assert_eq!(a.best, b.best);
    }
}

#[test]
fn empty_positive_set_falls_back_or_errors() {
    let cands = candidates(&[vec![1.0, 0.0]]);
    let img = EmbeddingVector::raw(vec![1.0, 0.0]).unwrap();
    assert!(select_best_prompt("widget", &cands, &[], &img, Fallback::Error, SelectionMode::Exhaustive).is_err());
    let naive = select_best_prompt("widget", &cands, &[], &img, Fallback::Naive, SelectionMode::Exhaustive).unwrap();
    assert!(naive.fallback);
    assert_eq!(naive.prompt, "a photo of a widget");
}
