use demoire::config::{parse, serialize, FullConfig};
use demoire::CliError;

#[test]
fn defaults_round_trip_through_text() {
    let cfg = FullConfig::default();
    let text = serialize(&cfg);
    let back = parse(&text).unwrap();
    assert_eq!(cfg, back);
}

#[test]
fn a_sparse_file_overrides_only_what_it_names() {
    let cfg = parse("base_channels=8\n\n# comment\nlr0 = 0.01\nheads=1, 2, 4\n").unwrap();
    let d = FullConfig::default();
    assert_eq!(cfg.model.base_channels, 8);
    assert_eq!(cfg.train.lr0, 0.01);
    assert_eq!(cfg.model.heads, [1, 2, 4]);
    assert_eq!(cfg.model.freq_levels, d.model.freq_levels);
    assert_eq!(cfg.train.batch, d.train.batch);
    assert_eq!(cfg.perceptual_seed, 17);
}

#[test]
fn bad_lines_are_rejected_with_positions() {
    for (text, needle) in [
        ("zig=3", "unknown key"),
        ("base_channels", "no '='"),
        ("heads=1,2", "three comma-separated"),
        ("lr0=fast", "cannot parse"),
        ("batch=2\nbatch=3", "duplicate key"),
    ] {
        match parse(text) {
            Err(CliError::Usage(msg)) => assert!(msg.contains(needle), "{text}: {msg}"),
            other => panic!("{text}: expected a usage error, got {other:?}"),
        }
    }
}

#[test]
fn float_fields_survive_exactly() {
    // Display prints the shortest decimal that parses back to the same
    // float, so serialize -> parse is lossless even for awkward values.
    let mut cfg = FullConfig::default();
    cfg.train.lr0 = 1.0 / 3.0;
    cfg.train.eps = 1e-8;
    cfg.model.ffn_expand = 2.6600000000000001;
    let back = parse(&serialize(&cfg)).unwrap();
    assert_eq!(cfg, back);
}
