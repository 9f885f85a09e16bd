use super::*;

#[test]
fn empty_config_gives_desk_defaults() {
    let cfg = RunConfig::parse("").unwrap();
    assert_eq!(cfg.vocab_size, 10);
    assert_eq!(cfg.encoder.san.d, 64);
    assert_eq!(cfg.encoder.san.h, 2);
    assert_eq!(cfg.decoder.k, 2);
    assert_eq!(cfg.encoder.n, 2);
    assert_eq!(cfg.encoder.stages, 2);
    assert!((cfg.train.lambda - 0.2).abs() < 1e-15);
    assert!(cfg.chunk.is_none());
    let synth = cfg.synth.as_ref().unwrap();
    assert_eq!(synth.train_items, 2000);
    assert_eq!(synth.dev_items, 200);
}

#[test]
fn values_parse_with_comments_and_whitespace() {
    let cfg = RunConfig::parse(
        "# a comment\n\
         san.d = 32   # trailing comment\n\
         san.h=4\n\
         \n\
         decoder.k = 1\n\
         chunk.past = 96\n\
         chunk.current = 64\n\
         chunk.future = 32\n",
    )
    .unwrap();
    assert_eq!(cfg.encoder.san.d, 32);
    assert_eq!(cfg.decoder.san.d, 32); // san.* applies to both
    assert_eq!(cfg.encoder.san.h, 4);
    assert_eq!(cfg.decoder.k, 1);
    let c = cfg.chunk.unwrap();
    assert_eq!((c.past, c.current, c.future), (96, 64, 32));
    assert_eq!(c.latency_ms(), 320.0);
}

#[test]
fn unknown_keys_are_rejected() {
    let err = RunConfig::parse("encoder.depth = 3\n").unwrap_err();
    assert!(err.to_string().contains("encoder.depth"), "{}", err);
    assert!(RunConfig::parse("san.d = 64\nbogus = 1\n").is_err());
}

#[test]
fn malformed_lines_and_duplicates_are_rejected() {
    assert!(RunConfig::parse("just some words\n").is_err());
    assert!(RunConfig::parse("san.d = 64\nsan.d = 32\n").is_err());
    assert!(RunConfig::parse("san.d = sixty-four\n").is_err());
    // invalid derived config: d not divisible by h
    assert!(RunConfig::parse("san.d = 10\nsan.h = 4\n").is_err());
    // chunk.past without chunk.current
    assert!(RunConfig::parse("chunk.past = 32\n").is_err());
    // synth keys while synth disabled
    assert!(RunConfig::parse("synth.train_items = 0\nsynth.noise_std = 0.5\n").is_err());
}

#[test]
fn echo_roundtrips_to_an_identical_config() {
    let text = "seed = 9\nsan.d = 16\nsan.h = 2\ndecoder.embed_dim = 8\n\
                chunk.current = 64\nchunk.future = 32\n\
                synth.noise_std = 0.25\npaths.out_dir = runs/exp1\n";
    let cfg = RunConfig::parse(text).unwrap();
    let echo = cfg.echo();
    let again = RunConfig::parse(&echo).unwrap();
    assert_eq!(echo, again.echo());
    assert_eq!(again.seed, 9);
    assert_eq!(again.encoder.san.d, 16);
    assert_eq!(again.chunk.as_ref().unwrap().future, 32);
    assert_eq!(again.synth.as_ref().unwrap().task.noise_std, 0.25);
    assert_eq!(again.data.out_dir, PathBuf::from("runs/exp1"));
}

#[test]
fn vocab_and_feature_dim_propagate_into_synth() {
    let cfg = RunConfig::parse("vocab_size = 6\nencoder.feature_dim = 12\n").unwrap();
    let synth = cfg.synth.unwrap();
    assert_eq!(synth.task.vocab_size, 6);
    assert_eq!(synth.task.feature_dim, 12);
}
