use proptest::prelude::*;
use radeval_cli::commands::compare::compare;
use radeval_cli::records::{
    parse_predictions, parse_truth, write_predictions, write_truth, PredictionRecord, TruthRecord,
};

fn coord() -> impl Strategy<Value = (f64, f64)> {
    (0u32..400, 1u32..200).prop_map(|(lo, len)| (lo as f64 / 2.0, (lo + len) as f64 / 2.0))
}

fn prediction() -> impl Strategy<Value = PredictionRecord> {
    (0u8..4, 0u8..3, 0u32..=1000, coord(), coord()).prop_map(|(img, class, score, (x0, x1), (y0, y1))| {
        PredictionRecord {
            image_id: format!("img{img}"),
            class: format!("c{class}"),
            score: score as f64 / 1000.0,
            x_min: x0,
            y_min: y0,
            x_max: x1,
            y_max: y1,
        }
    })
}

proptest! {
    #[test]
    fn prediction_csv_round_trip(records in prop::collection::vec(prediction(), 0..20)) {
        let mut buf = Vec::new();
        write_predictions(&records, &mut buf).unwrap();
        prop_assert_eq!(parse_predictions(std::str::from_utf8(&buf).unwrap()).unwrap(), records);
    }

    #[test]
    fn truth_csv_round_trip(records in prop::collection::vec(prediction(), 0..20)) {
        let truth: Vec<TruthRecord> = records
            .into_iter()
            .map(|p| TruthRecord {
                image_id: p.image_id,
                class: p.class,
                x_min: p.x_min,
                y_min: p.y_min,
                x_max: p.x_max,
                y_max: p.y_max,
            })
            .collect();
        let mut buf = Vec::new();
        write_truth(&truth, &mut buf).unwrap();
        prop_assert_eq!(parse_truth(std::str::from_utf8(&buf).unwrap()).unwrap(), truth);
    }

    #[test]
    fn comparison_is_ranked_and_consistent(scores in prop::collection::vec(0u32..=1000, 1..8)) {
        let runs: Vec<(String, f64)> = scores.iter().enumerate().map(|(i, &s)| (format!("m{i}"), s as f64 / 1000.0)).collect();
        let c = compare(&runs).unwrap();
        prop_assert_eq!(c.rows.len(), runs.len());
        prop_assert!(c.rows.windows(2).all(|w| w[0].map_score >= w[1].map_score));
        prop_assert!(c.rows[0].delta_to_leader.is_none());
        for r in &c.rows[1..] {
            let d = r.delta_to_leader.unwrap();
            prop_assert!(d >= 0.0);
            prop_assert!((d - (c.rows[0].map_score - r.map_score)).abs() < 1e-9);
        }
        let n = runs.len();
        prop_assert_eq!(c.pairwise.len(), n * (n - 1) / 2);
        prop_assert!(c.pairwise.iter().all(|p| p.delta >= 0.0));
    }
}
