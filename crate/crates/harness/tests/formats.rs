use rediffuse_core::attack::{AttackParams, AttackRecord, Method};
use rediffuse_core::metrics::RocSummary;
use rediffuse_harness::ablation::{read_ablation_csv, write_ablation_csv};
use rediffuse_harness::runner::{read_scores_csv, write_scores_csv, SCORES_HEADER};
use rediffuse_harness::{plot_roc_svg, AblationRow, Axis, ExperimentConfig, HarnessError};

fn record(id: u64, member: bool, score: f64) -> AttackRecord {
    AttackRecord {
        sample_id: id,
        is_member: member,
        method: Method::RediffusePlus,
        score,
        params: AttackParams {
            n: 10,
            t: 200,
            k: 100,
            distance: "l1".into(),
        },
    }
}

#[test]
fn scores_csv_round_trips_exactly() {
    let records = vec![
        record(0, true, -0.1),
        record(7, false, -1.0 / 3.0),
        record(401, false, -f64::MIN_POSITIVE),
        record(3, true, -123456.789e-7),
    ];
    let mut buf = Vec::new();
    write_scores_csv(&mut buf, &records).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with(SCORES_HEADER));
    assert_eq!(
        text.lines().nth(1).unwrap(),
        "sample_id,is_member,method,score,n,t,k,distance"
    );
    let back = read_scores_csv(buf.as_slice()).unwrap();
    assert_eq!(back, records);
    for (a, b) in back.iter().zip(&records) {
        assert_eq!(a.score.to_bits(), b.score.to_bits());
    }
}

#[test]
fn ablation_csv_round_trips() {
    let rows = vec![
        AblationRow {
            axis: Axis::T,
            value: 50,
            auc: 0.9,
            asr: 0.85,
            tpr_at_fpr: 0.1,
        },
        AblationRow {
            axis: Axis::T,
            value: 800,
            auc: 0.51,
            asr: 0.52,
            tpr_at_fpr: 0.0,
        },
    ];
    let mut buf = Vec::new();
    write_ablation_csv(&mut buf, &rows).unwrap();
    assert!(String::from_utf8(buf.clone())
        .unwrap()
        .starts_with("axis,value,auc,asr,tpr_at_fpr\nt,50,"));
    assert_eq!(read_ablation_csv(buf.as_slice()).unwrap(), rows);
}

#[test]
fn config_json_round_trips_and_rejects_unknown_keys() {
    let cfg = ExperimentConfig::default();
    assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    assert_eq!(
        cfg.hash(),
        ExperimentConfig::from_json(&cfg.to_json()).unwrap().hash()
    );

    let partial = r#"{"seed": 4, "attack": {"n": 3, "t": 100}, "dataset": {"kind": "gmm", "n": 50, "dims": 2, "components": 3, "sigma": 0.1}}"#;
    let c = ExperimentConfig::from_json(partial).unwrap();
    assert_eq!((c.seed, c.attack.n, c.attack.resolved_k(1000)), (4, 3, 50));
    c.validate().unwrap();

    for bad in [
        r#"{"sed": 1}"#,
        r#"{"attack": {"n": 3, "colour": 1}}"#,
        r#"{"dataset": {"kind": "shapes", "n": 10, "side": 8, "extra": 0}}"#,
        r#"{"training": {"steps": 10, "momentum": 0.9}}"#,
    ] {
        let err = ExperimentConfig::from_json(bad).unwrap_err();
        assert_eq!(err.exit_code(), 2, "{bad}");
    }
}

#[test]
fn validation_names_the_bad_field() {
    let mut c = ExperimentConfig::default();
    c.attack.t = Some(1001);
    assert!(c.validate().unwrap_err().to_string().contains("attack.t = 1001"));
    let mut c = ExperimentConfig::default();
    c.attack.t = Some(100);
    c.attack.k = Some(101);
    assert!(c.validate().unwrap_err().to_string().contains("attack.k"));
    let mut c = ExperimentConfig::default();
    c.attack.p = 9;
    assert!(matches!(c.validate(), Err(HarnessError::Config(_))));
    let mut c = ExperimentConfig::default();
    c.attack.n = 0;
    assert!(c.validate().is_err());
}

fn summary(points: &[(f64, f64)], auc: f64) -> RocSummary {
    RocSummary {
        points: points
            .iter()
            .map(|&(fpr, tpr)| rediffuse_core::metrics::RocPoint { fpr, tpr })
            .collect(),
        auc,
        asr: auc,
        target_fpr: 0.01,
        tpr_at_fpr: 0.0,
        tau: None,
        accuracy_at_tau: None,
    }
}

#[test]
fn svg_perfect_curve_hits_the_corners() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("roc.svg");
    plot_roc_svg(
        &[(
            "perfect".into(),
            summary(&[(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)], 1.0),
        )],
        &path,
    )
    .unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
    // 400px plot area with a 50px margin: (0,0) -> (50,450), (0,1) -> (50,50).
    assert!(text.contains(r#"points="50,450 50,50 450,50""#), "{text}");
    assert!(text.contains("class=\"chance\""));
    assert!(text.contains("perfect (AUC 1.000)"));
}

#[test]
fn svg_two_summaries_two_curves() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("roc.svg");
    let a = summary(&[(0.0, 0.0), (0.5, 0.8), (1.0, 1.0)], 0.65);
    let b = summary(&[(0.0, 0.0), (1.0, 1.0)], 0.5);
    plot_roc_svg(&[("rediffuse".into(), a), ("loss <baseline>".into(), b)], &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.matches("<polyline").count(), 2);
    assert_eq!(text.matches("class=\"legend\"").count(), 2);
    assert!(text.contains("loss &lt;baseline&gt; (AUC 0.500)"));
}

#[test]
fn svg_empty_list_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("roc.svg");
    assert!(plot_roc_svg(&[], &path).is_err());
    assert!(!path.exists());
}

#[test]
fn svg_unwritable_path_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing").join("roc.svg");
    let err = plot_roc_svg(&[("a".into(), summary(&[(0.0, 0.0), (1.0, 1.0)], 0.5))], &path).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}
