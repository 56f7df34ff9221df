use flagp::bundle::Bundle;
use flagp_core::basis::BasisSelector;
use flagp_core::dataset::{distance_names, emulation_study};
use flagp_core::emulator::{fit, EmulatorConfig};
use flagp_core::rng::rng_for;

fn fitted(per_index_scale: bool) -> Bundle {
    let study = emulation_study(98, &mut rng_for(2, &[])).unwrap();
    let cfg = EmulatorConfig { per_index_scale, basis: BasisSelector::Count(2), ..Default::default() };
    let model = fit(&study.ensemble, &cfg, 2).unwrap();
    Bundle { model, output_names: distance_names(&study.distances) }
}

#[test]
fn save_load_predicts_bit_for_bit() {
    for per_index in [false, true] {
        let b = fitted(per_index);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.flagp");
        b.save(&path).unwrap();
        let back = Bundle::load(&path).unwrap();
        assert_eq!(back.output_names, b.output_names);
        assert_eq!(back.model.config, b.model.config);
        assert_eq!(back.model.standardization, b.model.standardization);
        for q in [[0.1, 0.9], [0.5, 0.5], [0.33, 0.07]] {
            let p1 = b.model.predict(&q, 20, 50, &mut rng_for(1, &[])).unwrap();
            let p2 = back.model.predict(&q, 20, 50, &mut rng_for(1, &[])).unwrap();
            assert_eq!(p1.mean, p2.mean);
            assert_eq!(p1.samples, p2.samples);
        }
        assert_eq!(back.to_bytes(), b.to_bytes());
    }
}

#[test]
fn rejects_damaged_bundles() {
    let bytes = fitted(false).to_bytes();
    assert!(Bundle::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    assert!(Bundle::from_bytes(&bytes[..40]).is_err());
    let mut wrong = bytes.clone();
    wrong[0] = b'X';
    assert!(Bundle::from_bytes(&wrong).is_err());
    let short = &bytes[..bytes.len() - 8 * 5];
    let err = Bundle::from_bytes(short).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}
