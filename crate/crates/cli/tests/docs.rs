use std::path::Path;

use mh3d_cli::config::RunConfig;

#[test]
fn example_config_matches_defaults() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/config.example.json");
    let mut doc = RunConfig::load(Some(&path)).unwrap();
    let def = RunConfig::default();
    for (a, b) in doc.scanner.slab_z_mm.iter().zip(&def.scanner.slab_z_mm) {
        assert!((a - b).abs() < 1e-9);
    }
    doc.scanner.slab_z_mm = def.scanner.slab_z_mm.clone();
    assert_eq!(doc, def);
}
