use qoe_core::experiments::{prepare, Dataset, DatasetSource, ExperimentConfig};
use qoe_core::features::VqiConfig;
use qoe_core::models::{fit_model, load_model, save_model, ModelKind};
use qoe_core::pipeline::{run_closed_loop, LoopConfig, Scenario};
use qoe_core::session::{parse_session_log, serialize_session_log};
use qoe_core::synth::{generate_dataset, trace_library, AbrPolicy, SynthConfig};

fn small() -> ExperimentConfig {
    ExperimentConfig {
        dataset: DatasetSource::Synthetic {
            synth: SynthConfig {
                per_cell: 1,
                ..Default::default()
            },
        },
        seed: 5,
        ..Default::default()
    }
}

#[test]
fn log_round_trip_keeps_the_dataset() {
    let synth = SynthConfig {
        per_cell: 1,
        ..Default::default()
    };
    let vqi = VqiConfig::default();
    let sessions = generate_dataset(&trace_library(), &AbrPolicy::default_set(), &synth, &vqi, 5).unwrap();
    let parsed = parse_session_log(serialize_session_log(&sessions).as_bytes()).unwrap();
    assert_eq!(parsed, sessions);
    let a = Dataset::from_sessions(&sessions, &vqi).unwrap();
    let b = Dataset::from_sessions(&parsed, &vqi).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, Dataset::load(&small()).unwrap());
}

#[test]
fn saved_models_drive_the_same_closed_loop() {
    let cfg = small();
    let ds = Dataset::load(&cfg).unwrap();
    let p = prepare(&ds, &cfg).unwrap();
    let spec = cfg.spec_for(ModelKind::Gb).unwrap();
    let model = fit_model(&spec, &p.x_train, &p.y_train).unwrap();
    let loaded = load_model(&save_model(&model)).unwrap();
    assert_eq!(model.predict(&p.x_test).unwrap(), loaded.predict(&p.x_test).unwrap());

    let scaler_json = serde_json::to_string(&p.scaler).unwrap();
    let scaler = serde_json::from_str(&scaler_json).unwrap();
    let lc = LoopConfig {
        epochs: 8,
        ..Default::default()
    };
    let a = run_closed_loop(&Scenario::mixed("w", 8), &model, &p.scaler, &lc).unwrap();
    let b = run_closed_loop(&Scenario::mixed("w", 8), &loaded, &scaler, &lc).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert!(a.epochs.iter().all(|e| e.shares.iter().map(|s| s.share_kbps).sum::<f64>() <= a.capacity_kbps + 1e-9));
}
